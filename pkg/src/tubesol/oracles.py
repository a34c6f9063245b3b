"""Brute-force reference computations used to freeze golden fixtures.

These deliberately avoid the production code paths: the ground state uses
a cell-centred grid and a dense bordered Newton iteration on a normalized
problem, eigenvalues come from dense symmetric solves, and lattice
quantities come from plain enumeration.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.linalg import eigh

__all__ = [
    "cell_centred_ground_state",
    "cell_centred_spectrum",
    "richardson",
    "aitken",
    "radial_oracle",
    "torus_enumeration",
    "lattice_brute_force",
    "circle_resonance_count",
    "circle_morse_count",
    "excluded_length",
]


def _cell_operator(n: int, N: int, ell: int = 0):
    """Dense symmetric form of ``-(Δ_r - ℓ(ℓ+n-2)/r²)`` on cells ``r_i = (i+1/2)h``.

    Returns ``(A, w)`` with ``A`` symmetric and ``w`` the cell weights
    ``r_i^{n-1} h``; the operator is ``diag(w)^{-1} A``.  Dirichlet data at
    ``r = 1`` enter through the ghost value ``U_N = -U_{N-1}``.
    """
    h = 1.0 / N
    r = (np.arange(N) + 0.5) * h
    f = (np.arange(N + 1) * h) ** (n - 1)
    A = np.zeros((N, N))
    idx = np.arange(N)
    A[idx, idx] = (f[:-1] + f[1:]) / h
    A[idx[:-1], idx[:-1] + 1] = -f[1:-1] / h
    A[idx[1:], idx[1:] - 1] = -f[1:-1] / h
    A[N - 1, N - 1] += f[N] / h
    # the r = 0 face has zero flux for n >= 2; for n = 1 the even extension also gives zero flux
    if n == 1:
        A[0, 0] -= f[0] / h
        if ell % 2 == 1:
            A[0, 0] += 2 * f[0] / h
    w = r ** (n - 1) * h
    A[idx, idx] += ell * (ell + n - 2) * r ** (n - 3) * h if n >= 2 else 0.0
    return A, w, r


def cell_centred_ground_state(n: int, p: float, N: int, tol: float = 1e-12, max_iter: int = 40):
    """Positive solution on cells via ``Δw + λ w^p = 0``, ``w(0) = 1``, then ``U = λ^{1/(p-1)} w``.

    The unknowns are the cell values and ``λ``; the normalization row
    imposes the quadratic extrapolation of ``w`` to ``r = 0``.
    Returns ``(r, U, U0, dU1)``.
    """
    A, wgt, r = _cell_operator(n, N)
    w = np.cos(0.5 * math.pi * r)
    lam = (math.pi / 2) ** 2
    # even extrapolation to r = 0 from the first two cells: (9 w0 - w1)/8
    c = np.zeros(N)
    c[0], c[1] = 9 / 8, -1 / 8
    prev = math.inf
    for it in range(max_iter):
        F = -A @ w + lam * wgt * np.abs(w) ** p
        g = c @ w - 1.0
        J = np.zeros((N + 1, N + 1))
        J[:N, :N] = -A + np.diag(lam * p * wgt * np.abs(w) ** (p - 1))
        J[:N, N] = wgt * np.abs(w) ** p
        J[N, :N] = c
        step = np.linalg.solve(J, -np.concatenate([F, [g]]))
        w = w + step[:N]
        lam = lam + step[N]
        size = float(np.max(np.abs(step[:N])))
        # stop at the tolerance or once rounding makes the steps stagnate
        if size < tol or (size < 1e-8 and size > 0.5 * prev):
            break
        prev = size
    else:
        raise RuntimeError("oracle Newton did not converge")
    scale = lam ** (1.0 / (p - 1))
    U = scale * w
    h = 1.0 / N
    # quadratic through U(1) = 0 and the two outermost cell centres
    dU1 = (-3.0 * U[-1] + U[-2] / 3.0) / h
    return r, U, scale * (c @ w), dU1


def cell_centred_spectrum(n: int, p: float, N: int, ell: int, count: int = 2, U=None):
    """Lowest ``count`` eigenvalues of ``-(Δ_ℓ + p U^{p-1})`` by dense generalized eigh."""
    if U is None:
        _, U, _, _ = cell_centred_ground_state(n, p, N)
    A, wgt, _ = _cell_operator(n, N, ell)
    K = A - np.diag(p * wgt * U ** (p - 1))
    return eigh(K, np.diag(wgt), eigvals_only=True, subset_by_index=(0, count - 1))


def richardson(coarse: float, fine: float, order: int = 2) -> float:
    """Extrapolate two values from grids with spacing ratio 2."""
    f = 2**order
    return (f * fine - coarse) / (f - 1)


def aitken(coarse: float, mid: float, fine: float) -> float:
    """Extrapolate three values from grids with spacing ratio 2, estimating the order."""
    d1, d2 = mid - coarse, fine - mid
    if d2 == 0.0 or d1 / d2 <= 1.0:
        return fine
    return fine + d2 / (d1 / d2 - 1.0)


def radial_oracle(n: int, p: float, N: int = 4096) -> dict:
    """Extrapolated ``U(0)``, ``U'(1)``, ``μ_0`` and the first positive eigenvalue.

    ``U(0)`` and the eigenvalues converge at second order.  The boundary
    slope is only first order for ``n >= 2`` (the ghost closure at ``r = 1``),
    so it is extrapolated from three grids with the order estimated.
    """
    out = {}
    vals = {}
    for M in (N // 2, N):
        _, U, U0, dU1 = cell_centred_ground_state(n, p, M)
        mu_even = cell_centred_spectrum(n, p, M, 0, 2, U=U)
        mu_one = cell_centred_spectrum(n, p, M, 1, 1, U=U)
        positives = sorted(x for x in (mu_even[1], mu_one[0]) if x > 0)
        vals[M] = (U0, dU1, mu_even[0], positives[0])
    for k, name in enumerate(("U0", "dU1", "mu0", "mu1")):
        out[name] = richardson(vals[N // 2][k], vals[N][k])
    coarse = cell_centred_ground_state(n, p, N // 4)[3]
    out["dU1"] = aitken(coarse, vals[N // 2][1], vals[N][1])
    return out


def torus_enumeration(lengths, count: int):
    """First ``count`` eigenvalues of the flat torus by enumerating a large integer box."""
    lengths = list(lengths)
    bound = int(math.ceil(math.sqrt(count))) + 2
    vals = []
    for xi in itertools.product(range(-bound, bound + 1), repeat=len(lengths)):
        vals.append(sum((2 * math.pi * x / L) ** 2 for x, L in zip(xi, lengths)))
    return sorted(vals)[:count]


def lattice_brute_force(mus, lams, eps: float, cutoff: float):
    """All ``(value, i, j)`` with ``μ_i/ε² + λ_j < cutoff`` from an explicit double loop."""
    out = []
    for i, mu in enumerate(mus):
        for j, lam in enumerate(lams):
            v = mu / eps**2 + lam
            if v < cutoff:
                out.append((v, i, j))
    return sorted(out)


def circle_resonance_count(mu0: float, R: float, eps_min: float, eps_max: float) -> int:
    """Number of ``j >= 1`` with ``eps_min <= R sqrt(-μ0)/j <= eps_max``."""
    c = R * math.sqrt(-mu0)
    return sum(1 for j in range(1, int(c / eps_min) + 2) if eps_min <= c / j <= eps_max)


def circle_morse_count(mu0: float, R: float, eps: float) -> int:
    """Signed integers ``j`` with ``(j/R)² < -μ0/ε²`` counted one by one."""
    lim = -mu0 / eps**2
    top = int(R * math.sqrt(lim)) + 2
    return sum(1 for j in range(-top, top + 1) if (j / R) ** 2 < lim)


def excluded_length(resonances, lo: float, hi: float, radius: float) -> float:
    """Measure of ``(lo, hi) ∩ ∪ (r - radius, r + radius)`` on a fine sample grid."""
    x = np.linspace(lo, hi, 2_000_001)
    mask = np.zeros_like(x, dtype=bool)
    for r in resonances:
        mask |= np.abs(x - r) < radius
    return float(mask.mean() * (hi - lo))
