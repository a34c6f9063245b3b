"""Radial ground state of the Lane-Emden Dirichlet problem on the unit n-ball.

The profile ``U`` solves ``U'' + (n-1)/r U' + U^p = 0`` on ``(0, 1)`` with
``U'(0) = 0`` and ``U(1) = 0``.  It is found by shooting on the central
height followed by a Newton polish of the discrete equations, so that the
returned grid values satisfy the same finite-volume scheme that is later used
for the linearized spectrum and for the tube discretization.

Discretization
--------------
Vertex-centred finite volumes on the uniform grid ``r_i = i/N``.  Node ``i``
owns the cell ``[r_{i-1/2}, r_{i+1/2}] ∩ [0, 1]`` with exact volume
``V_i = (r_{i+1/2}^n - r_{i-1/2}^n)/n`` and fluxes ``r_{i±1/2}^{n-1} (U_{i±1} - U_i)/h``.
At ``r = 0`` this reduces to the ghost-node stencil ``2n (U_1 - U_0)/h^2``.

Eigenfunction normalization
---------------------------
A mode of angular degree ``ℓ`` is stored as its radial profile ``R(r)``.  The
full eigenfunction is ``R(|x|) Y(x/|x|)`` with ``Y`` a spherical harmonic
normalized to mean square one on ``S^{n-1}``, so the convention used
throughout is ``|S^{n-1}| ∫_0^1 R(r)^2 r^{n-1} dr = 1``.  For ``n = 1`` the
two "modes" are the even (ℓ=0) and odd (ℓ=1) functions on ``(-1, 1)`` and
``|S^0| = 2``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.linalg import eigh_tridiagonal, solve_banded
from scipy.optimize import brentq
from scipy.special import comb, gamma

from .errors import (
    DegenerateSpectrum,
    NonConvergence,
    OutOfTube,
    SupercriticalExponent,
)

__all__ = [
    "ProblemParams",
    "RadialProfile",
    "ModeSpectrum",
    "solve_ground_state",
    "shooting_residual",
    "evaluate_ubar",
    "linearized_spectrum",
    "merged_eigenvalues",
    "harmonic_multiplicity",
    "sphere_area",
    "radial_laplacian",
    "fv_geometry",
    "save_profile",
    "load_profile",
    "save_spectrum",
    "load_spectrum",
]


@dataclass(frozen=True)
class ProblemParams:
    """Dimensions and exponent of the tube problem.

    ``n`` is the fiber (normal) dimension, ``k`` the dimension of the base
    manifold and ``m = n + k`` the ambient dimension.
    """

    n: int
    p: float
    k: int = 1

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p!r}")

    @property
    def m(self) -> int:
        return self.n + self.k

    @property
    def critical_exponent(self) -> float:
        """(n+2)/(n-2) for n >= 3, infinity otherwise."""
        if self.n <= 2:
            return math.inf
        return (self.n + 2) / (self.n - 2)

    @property
    def subcritical(self) -> bool:
        return self.p < self.critical_exponent

    @property
    def scaling_exponent(self) -> float:
        """Exponent 2/(p-1) of the rescaling eps^{-2/(p-1)} U(dist/eps)."""
        return 2.0 / (self.p - 1.0)


def sphere_area(n: int) -> float:
    """Surface measure of S^{n-1}; equals 2 for n = 1."""
    return 2.0 * math.pi ** (n / 2) / gamma(n / 2)


def harmonic_multiplicity(n: int, ell: int) -> int:
    """Dimension of degree-ℓ spherical harmonics on S^{n-1}.

    For ``n = 1`` the sphere is two points and only ℓ ∈ {0, 1} exist.
    """
    if n == 1:
        return 1 if ell in (0, 1) else 0
    return int(comb(ell + n - 1, n - 1, exact=True) - comb(ell + n - 3, n - 1, exact=True))


def fv_geometry(n: int, N: int):
    """Grid, spacing, face areas ``r_{i+1/2}^{n-1}`` and cell volumes."""
    h = 1.0 / N
    r = np.arange(N + 1) * h
    faces = ((np.arange(N) + 0.5) * h) ** (n - 1)
    lo = np.clip(r - h / 2, 0.0, 1.0)
    hi = np.clip(r + h / 2, 0.0, 1.0)
    vol = (hi**n - lo**n) / n
    return r, h, faces, vol


def radial_laplacian(U: np.ndarray, n: int) -> np.ndarray:
    """Finite-volume radial Laplacian at nodes ``0..N-1`` (node N is Dirichlet)."""
    N = U.size - 1
    _, h, faces, vol = fv_geometry(n, N)
    flux = faces * np.diff(U) / h
    out = flux.copy()
    out[1:] -= flux[:-1]
    return out / vol[:N]


@dataclass(frozen=True)
class RadialProfile:
    """Discrete ground state ``U`` on ``r_i = i/N``."""

    grid: np.ndarray
    values: np.ndarray
    derivative_at_boundary: float
    params: ProblemParams
    shooting_height: float
    residual: float
    bracket: tuple = field(default=(math.nan, math.nan))

    @property
    def grid_size(self) -> int:
        return self.grid.size - 1

    @property
    def center_value(self) -> float:
        return float(self.values[0])

    def interpolant(self) -> PchipInterpolator:
        return PchipInterpolator(self.grid, self.values, extrapolate=False)

    def ubar(self, eps: float, dist):
        return evaluate_ubar(self, eps, dist)


@dataclass(frozen=True)
class ModeSpectrum:
    """Dirichlet eigenpairs of the radial linearization for one angular degree.

    ``eigenfunctions[j]`` is the radial profile on the profile grid (boundary
    value included), normalized as described in the module docstring.
    """

    angular_mode: int
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    multiplicity: int
    grid: np.ndarray


def shooting_residual(params: ProblemParams, s: float) -> float:
    """Signed boundary miss of the initial value problem with ``U(0) = s``.

    Returns ``U(1; s)`` when the solution stays positive on ``[0, 1]`` and
    ``-(1 - r_0)`` when it first vanishes at ``r_0 < 1``.  By the scaling
    ``U(r; s) = s W(s^{(p-1)/2} r)`` the first zero moves inward as ``s``
    grows, so this function is decreasing in ``s``.
    """
    n, p = params.n, params.p

    def rhs(r, y):
        u, du = y
        return [du, -np.abs(u) ** (p - 1) * u - (n - 1) / r * du]

    def hit_zero(r, y):
        return y[0]

    hit_zero.terminal = True
    hit_zero.direction = -1

    r0 = 1e-6
    # series start: U = s - s^p r^2/(2n) + O(r^4)
    y0 = [s - s**p * r0**2 / (2 * n), -(s**p) * r0 / n]
    sol = solve_ivp(rhs, (r0, 1.0), y0, method="DOP853", rtol=1e-13, atol=1e-14 * max(1.0, s),
                    events=hit_zero)
    if sol.t_events[0].size:
        return -(1.0 - float(sol.t_events[0][0]))
    return float(sol.y[0, -1])


def _shoot_profile(params: ProblemParams, s: float, r: np.ndarray) -> np.ndarray:
    n, p = params.n, params.p

    def rhs(t, y):
        u, du = y
        return [du, -np.abs(u) ** (p - 1) * u - (n - 1) / t * du]

    r0 = 1e-6
    y0 = [s - s**p * r0**2 / (2 * n), -(s**p) * r0 / n]
    sol = solve_ivp(rhs, (r0, 1.0), y0, method="DOP853", rtol=1e-12, atol=1e-13 * s,
                    dense_output=True)
    out = sol.sol(np.clip(r, r0, 1.0))[0]
    out[0] = s
    return out


def solve_ground_state(params: ProblemParams, tol: float = 1e-10, grid_size: int = 1024,
                       max_doublings: int = 60) -> RadialProfile:
    """Positive radial solution of ``ΔU + U^p = 0`` in ``B_1^n``, ``U = 0`` on the sphere.

    The central height is bracketed starting from ``[0.1, 0.2]`` with the
    upper end doubled until ``shooting_residual`` changes sign, refined by
    Brent's method to ``tol`` (relative), then the grid values are polished
    by Newton's method on the finite-volume equations.

    ``residual`` on the result is ``max |ΔU + U^p| / max U^p`` over the
    interior nodes; the absolute value carries an unavoidable roundoff floor
    of order ``ulp(U) / h^2``.
    """
    n, p = params.n, params.p
    if not params.subcritical:
        raise SupercriticalExponent(
            f"no positive radial Dirichlet solution for n={n}, p={p} >= {params.critical_exponent}")
    if grid_size < 64:
        raise ValueError("grid_size must be at least 64")
    if tol <= 0:
        raise ValueError("tol must be positive")

    lo, hi = 0.1, 0.2
    f_lo = shooting_residual(params, lo)
    if f_lo <= 0:
        raise NonConvergence("shooting residual is not positive at s = 0.1")
    f_hi = shooting_residual(params, hi)
    doublings = 0
    while f_hi > 0:
        lo, f_lo = hi, f_hi
        hi *= 2.0
        doublings += 1
        if doublings > max_doublings:
            raise NonConvergence(f"no shooting bracket below s = {hi:g}")
        f_hi = shooting_residual(params, hi)
    s = brentq(lambda x: shooting_residual(params, x), lo, hi, xtol=tol * hi, rtol=4 * np.finfo(float).eps,
               maxiter=500)

    N = grid_size
    r, h, faces, vol = fv_geometry(n, N)
    U = _shoot_profile(params, s, r)
    U[-1] = 0.0

    upper = faces[: N - 1] / h / vol[: N - 1]
    lower = faces[: N - 1] / h / vol[1:N]
    stiff = -(faces[:N] + np.r_[0.0, faces[: N - 1]]) / h / vol[:N]
    for _ in range(50):
        F = radial_laplacian(U, n) + np.abs(U[:-1]) ** p
        ab = np.zeros((3, N))
        ab[0, 1:] = upper
        ab[1] = stiff + p * np.abs(U[:-1]) ** (p - 1)
        ab[2, :-1] = lower
        step = solve_banded((1, 1), ab, -F)
        U[:-1] += step
        if np.max(np.abs(step)) <= 1e-15 * np.max(np.abs(U)):
            break
    else:
        raise NonConvergence("Newton polish did not stagnate within 50 steps")

    F = radial_laplacian(U, n) + np.abs(U[:-1]) ** p
    residual = float(np.max(np.abs(F)) / np.max(np.abs(U)) ** p)
    if residual > 1e-6 or np.any(U[:-1] <= 0):
        raise NonConvergence(f"Newton polish ended with relative residual {residual:.3e}")
    # second-order one-sided derivative at r = 1
    dU1 = (3 * U[-1] - 4 * U[-2] + U[-3]) / (2 * h)
    return RadialProfile(grid=r, values=U, derivative_at_boundary=float(dU1), params=params,
                         shooting_height=float(s), residual=residual, bracket=(lo, hi))


def evaluate_ubar(profile: RadialProfile, eps: float, dist):
    """``eps^{-2/(p-1)} U(dist/eps)`` by monotone cubic interpolation of the grid."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = np.asarray(dist, dtype=float)
    if np.any(d < 0):
        raise ValueError("dist must be non-negative")
    if np.any(d > eps):
        raise OutOfTube(f"distance {float(np.max(d))!r} exceeds tube radius {eps!r}")
    x = np.minimum(d / eps, 1.0)
    vals = profile.interpolant()(x)
    vals = np.where(d == eps, 0.0, vals)
    out = eps ** (-profile.params.scaling_exponent) * vals
    return float(out) if out.ndim == 0 else out


def _mode_matrices(profile: RadialProfile, ell: int):
    n, p = profile.params.n, profile.params.p
    U = profile.values
    N = profile.grid_size
    r, h, faces, vol = fv_geometry(n, N)
    diag = (faces[:N] + np.r_[0.0, faces[: N - 1]]) / h - p * np.abs(U[:N]) ** (p - 1) * vol[:N]
    off = -faces[: N - 1] / h
    mass = vol[:N].copy()
    if n > 1 and ell > 0:
        diag[1:] += ell * (ell + n - 2) / r[1:N] ** 2 * vol[1:N]
    if ell > 0:
        # regularity (n >= 2) or oddness (n = 1) forces R(0) = 0
        diag, off, mass = diag[1:], off[1:], mass[1:]
    return diag, off, mass


def linearized_spectrum(profile: RadialProfile, max_mode: int = 1, eigs_per_mode: int = 6,
                        zero_tol: float = 1e-6) -> list:
    """Eigenpairs of ``-(Δ + p U^{p-1})`` on ``B_1^n`` per angular degree ``ℓ <= max_mode``.

    Each degree gives a symmetric tridiagonal generalized problem
    ``S φ = μ V φ`` which is symmetrized with ``V^{-1/2}``.  For ``n = 1``
    the degrees are capped at 1 (even and odd functions).
    """
    n = profile.params.n
    if max_mode < 0:
        raise ValueError("max_mode must be non-negative")
    top = min(max_mode, 1) if n == 1 else max_mode
    area = sphere_area(n)
    N = profile.grid_size
    _, _, _, vol = fv_geometry(n, N)
    spectra = []
    for ell in range(top + 1):
        diag, off, mass = _mode_matrices(profile, ell)
        s = 1.0 / np.sqrt(mass)
        count = min(eigs_per_mode, diag.size)
        w, v = eigh_tridiagonal(diag * s * s, off * s[:-1] * s[1:], select="i",
                                select_range=(0, count - 1))
        phi = v * s[:, None]
        full = np.zeros((count, N + 1))
        start = 0 if ell == 0 else 1
        full[:, start:N] = phi.T
        # |S^{n-1}| * sum V_i R_i^2 = 1
        norms = np.sqrt(area * np.sum(vol[None, :N] * full[:, :N] ** 2, axis=1))
        full /= norms[:, None]
        signs = np.sign(full[:, start])
        signs[signs == 0] = 1.0
        full *= signs[:, None]
        spectra.append(ModeSpectrum(angular_mode=ell, eigenvalues=w, eigenfunctions=full,
                                    multiplicity=harmonic_multiplicity(n, ell), grid=profile.grid))
        if np.any(np.abs(w) < zero_tol):
            raise DegenerateSpectrum(f"eigenvalue {w[np.argmin(np.abs(w))]:.3e} in mode {ell} is numerically 0")
        if w.size > 1 and np.any(np.diff(w) <= 0):
            raise DegenerateSpectrum(f"eigenvalues of mode {ell} are not strictly increasing")
    merged = merged_eigenvalues(spectra)
    if not (merged[0] < 0 < merged[1]):
        raise DegenerateSpectrum(f"expected mu_0 < 0 < mu_1, got {merged[0]:.6g}, {merged[1]:.6g}")
    return spectra


def merged_eigenvalues(spectra) -> np.ndarray:
    """All computed eigenvalues over the modes, repeated by multiplicity and sorted."""
    vals = [np.repeat(s.eigenvalues, s.multiplicity) for s in spectra]
    return np.sort(np.concatenate(vals))


# -- fixture cache -----------------------------------------------------------------

def _cache_stem(params: ProblemParams, grid_size: int) -> str:
    return f"n{params.n}_p{params.p:g}_N{grid_size}"


def _data_lines(fh):
    return (line for line in fh if not line.startswith("#"))


def save_profile(profile: RadialProfile, directory, header: str | None = None) -> Path:
    path = Path(directory) / f"profile_{_cache_stem(profile.params, profile.grid_size)}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["r", "U"])
        for r, u in zip(profile.grid, profile.values):
            w.writerow([repr(float(r)), repr(float(u))])
    return path


def load_profile(params: ProblemParams, grid_size: int, directory) -> RadialProfile:
    """Rebuild a profile from the ``r,U`` cache file written by :func:`save_profile`."""
    path = Path(directory) / f"profile_{_cache_stem(params, grid_size)}.csv"
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(_data_lines(fh)))
    r = np.array([float(row["r"]) for row in rows])
    U = np.array([float(row["U"]) for row in rows])
    h = r[1] - r[0]
    F = radial_laplacian(U, params.n) + np.abs(U[:-1]) ** params.p
    return RadialProfile(grid=r, values=U, derivative_at_boundary=float((3 * U[-1] - 4 * U[-2] + U[-3]) / (2 * h)),
                         params=params, shooting_height=float(U[0]),
                         residual=float(np.max(np.abs(F)) / np.max(U) ** params.p))


def save_spectrum(spectra, params: ProblemParams, grid_size: int, directory, header: str | None = None) -> Path:
    path = Path(directory) / f"spectrum_{_cache_stem(params, grid_size)}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["mode", "index", "eigenvalue"])
        for s in spectra:
            for j, mu in enumerate(s.eigenvalues):
                w.writerow([s.angular_mode, j, repr(float(mu))])
    return path


def load_spectrum(params: ProblemParams, grid_size: int, directory) -> dict:
    """Return ``{mode: eigenvalue array}`` from a ``mode,index,eigenvalue`` cache file."""
    path = Path(directory) / f"spectrum_{_cache_stem(params, grid_size)}.csv"
    out: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(_data_lines(fh)):
            out.setdefault(int(row["mode"]), []).append((int(row["index"]), float(row["eigenvalue"])))
    return {k: np.array([v for _, v in sorted(rows)]) for k, rows in out.items()}
