"""Discrete tube solver for planar closed curves (fiber dimension one).

The tube ``{Y(t) + z e(t) : |z| <= eps}`` is discretized by a uniform
periodic t-grid and the rescaled fiber grid ``x_l = l / nz`` with
``z = eps x``, ``l = -nz..nz``.  In t the Laplacian uses the Fourier
differentiation matrix; in z it uses conservative second-order differences
with the volume factor at the cell faces.  With the ground state solved on
the same fiber grid, the ansatz is an exact discrete solution on a flat
tube.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.linalg import eigh, eigh_tridiagonal, solve_banded
from scipy.sparse.linalg import eigsh

from .errors import (
    GridMismatch,
    LeftBall,
    NoContraction,
    NonpositiveState,
    OnResonance,
    ParameterContractViolated,
    PointwiseBoundViolated,
    SingularFiberOperator,
    ThresholdExceeded,
    UnsupportedGeometry,
)
from .fermi import metric_expansion
from .manifold import EmbeddedCurve
from .radial import RadialProfile

__all__ = [
    "TubeGrid",
    "TubeField",
    "TubeProblem",
    "WeightedNorms",
    "IterationResult",
    "LinearizedOperator",
    "PicardResult",
    "Decomposition",
    "spectral_matrix",
    "weighted_norms",
    "assemble_model_inverse",
    "iterate_approximation",
    "assemble_linearized",
    "morse_index_discrete",
    "eigenfunction_decomposition",
    "lowest_eigenpair",
    "linearized_family",
    "contraction_window",
    "picard_solve",
    "write_solution_csv",
]


def spectral_matrix(nt: int, period: float) -> np.ndarray:
    """Fourier differentiation matrix on ``nt`` (odd) equispaced periodic nodes."""
    if nt % 2 == 0:
        raise GridMismatch("the t-grid needs an odd number of nodes")
    j = np.arange(nt)
    diff = j[:, None] - j[None, :]
    F = np.zeros((nt, nt))
    mask = diff != 0
    F[mask] = 0.5 * (-1.0) ** diff[mask] / np.sin(np.pi * diff[mask] / nt)
    return F * (2 * math.pi / period)


@dataclass(frozen=True)
class TubeGrid:
    """Tensor grid on the tube; ``values[t, l]`` with ``l = 0..2 nz`` for ``x = -1..1``."""

    curve: EmbeddedCurve
    eps: float
    nz: int

    def __post_init__(self):
        if self.curve.m != 2:
            raise UnsupportedGeometry("the tube solver handles planar curves only (fiber dimension 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.nz < 4:
            raise ValueError("nz must be at least 4")
        if self.curve.t.size % 2 == 0:
            raise GridMismatch("the t-grid needs an odd number of nodes")

    @property
    def nt(self) -> int:
        return self.curve.t.size

    @property
    def t(self) -> np.ndarray:
        return self.curve.t

    @property
    def x(self) -> np.ndarray:
        return np.arange(-self.nz, self.nz + 1) / self.nz

    @property
    def z(self) -> np.ndarray:
        return self.eps * self.x

    @property
    def dt(self) -> float:
        return self.curve.period / self.nt

    @property
    def dz(self) -> float:
        return self.eps / self.nz

    @property
    def shape(self):
        return (self.nt, 2 * self.nz + 1)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


@dataclass(frozen=True)
class TubeField:
    grid: TubeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise GridMismatch(f"field shape {self.values.shape} differs from grid {self.grid.shape}")

    @property
    def trace(self) -> float:
        """Largest absolute boundary value; exactly 0 for admissible states."""
        return float(max(np.max(np.abs(self.values[:, 0])), np.max(np.abs(self.values[:, -1]))))

    @property
    def interior(self) -> np.ndarray:
        return self.values[:, 1:-1]


class TubeProblem:
    """Grid, geometry, ansatz and discrete operators for one value of eps.

    The profile should be solved with ``grid_size == nz``; otherwise it is
    interpolated and the flat-tube ansatz is only exact up to interpolation.
    """

    def __init__(self, curve: EmbeddedCurve, profile: RadialProfile, eps: float, nz: int | None = None):
        nz = profile.grid_size if nz is None else nz
        self.grid = TubeGrid(curve, float(eps), int(nz))
        self.profile = profile
        self.p = profile.params.p
        g = self.grid
        self.speed = curve.speed
        self.a = metric_expansion(curve, g.z).volume_factor
        zh = 0.5 * (g.z[1:] + g.z[:-1])
        self.a_half = metric_expansion(curve, zh).volume_factor
        self.F = spectral_matrix(g.nt, curve.period)
        self.q = 1.0 / (self.speed[:, None] * self.a)
        self.q_bar = 1.0 / self.speed
        if profile.grid_size == g.nz:
            U = profile.values[np.abs(np.arange(-g.nz, g.nz + 1))]
        else:
            U = profile.interpolant()(np.abs(g.x))
            U[0] = U[-1] = 0.0
        self.U_fiber = U
        scale = g.eps ** (-2.0 / (self.p - 1))
        self.ubar = np.broadcast_to(scale * U, g.shape).copy()

    # -- discrete operators on full-grid arrays; boundary rows are returned as 0
    def lap_fiber(self, f: np.ndarray) -> np.ndarray:
        out = np.zeros_like(f)
        out[:, 1:-1] = (f[:, 2:] - 2 * f[:, 1:-1] + f[:, :-2]) / self.grid.dz**2
        return out

    def lap_base(self, f: np.ndarray) -> np.ndarray:
        qb = self.q_bar[:, None]
        out = qb * (self.F @ (qb * (self.F @ f)))
        out[:, 0] = out[:, -1] = 0.0
        return out

    def correction(self, f: np.ndarray) -> np.ndarray:
        """``D f``: full discrete Laplacian minus its product-metric part."""
        a, ah, dz = self.a, self.a_half, self.grid.dz
        fl = np.diff(f, axis=1)
        zc = ((ah[:, 1:] - a[:, 1:-1]) * fl[:, 1:] - (ah[:, :-1] - a[:, 1:-1]) * fl[:, :-1]) / (a[:, 1:-1] * dz**2)
        q, qb = self.q, self.q_bar[:, None]
        Ff = self.F @ f
        tc = q * (self.F @ (q * Ff)) - qb * (self.F @ (qb * Ff))
        out = np.zeros_like(f)
        out[:, 1:-1] = zc + tc[:, 1:-1]
        return out

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return self.lap_fiber(f) + self.lap_base(f) + self.correction(f)

    @cached_property
    def t_invariant(self) -> bool:
        s = self.speed
        return bool(np.ptp(s) <= 1e-12 * s.max() and np.max(np.ptp(self.a, axis=0)) <= 1e-12)

    @cached_property
    def residual_ansatz(self) -> np.ndarray:
        """``E = Δū + ū^p`` on the grid (0 on the boundary)."""
        return self.residual(self.ubar)

    def residual(self, u: np.ndarray) -> np.ndarray:
        out = self.laplacian(u)
        out[:, 1:-1] += np.abs(u[:, 1:-1]) ** self.p
        return out

    # -- fiber operator -(d_zz + p ū^{p-1}), identical for every t
    @cached_property
    def fiber_banded(self) -> np.ndarray:
        dz = self.grid.dz
        pot = self.p * self.ubar[0, 1:-1] ** (self.p - 1)
        m = pot.size
        ab = np.zeros((3, m))
        ab[0, 1:] = -1.0 / dz**2
        ab[1] = 2.0 / dz**2 - pot
        ab[2, :-1] = -1.0 / dz**2
        return ab

    @cached_property
    def fiber_eigen(self):
        """Eigenpairs of the fiber operator, vectors normalized in ``L²(dz)``."""
        ab = self.fiber_banded
        w, V = eigh_tridiagonal(ab[1], ab[2, :-1])
        V = V / math.sqrt(self.grid.dz)
        V = V * np.sign(V[V.shape[0] // 2])
        return w, V

    def fiber_solve(self, rhs: np.ndarray) -> np.ndarray:
        w = self.fiber_eigen[0]
        if np.min(np.abs(w)) < 1e-10 * np.max(np.abs(w)):
            raise SingularFiberOperator("fiber operator has an eigenvalue near zero")
        out = np.zeros_like(rhs)
        out[:, 1:-1] = solve_banded((1, 1), self.fiber_banded, rhs[:, 1:-1].T).T
        return out

    def ratio(self, v: np.ndarray) -> np.ndarray:
        """``v / ū`` with one-sided derivative quotients at the boundary nodes."""
        u = self.ubar
        out = np.zeros_like(v)
        out[:, 1:-1] = v[:, 1:-1] / u[:, 1:-1]
        for b, s in ((0, 1), (-1, -1)):
            i1, i2 = b + s, b + 2 * s
            dv = -3 * v[:, b] + 4 * v[:, i1] - v[:, i2]
            du = -3 * u[:, b] + 4 * u[:, i1] - u[:, i2]
            out[:, b] = dv / du
        return out

    def nonlinear_remainder(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """``K(v) = |u+v|^p - u^p - p u^{p-1} v``, Taylor form where ``|v/u| <= 1/2``."""
        p = self.p
        out = np.zeros_like(v)
        ui, vi = u[:, 1:-1], v[:, 1:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = vi / ui
        small = np.isfinite(w) & (np.abs(w) <= 0.5)
        ws = np.where(small, w, 0.0)
        taylor = ui**p * (np.expm1(p * np.log1p(ws)) - p * ws)
        direct = np.abs(ui + vi) ** p - np.abs(ui) ** p - p * np.abs(ui) ** (p - 1) * vi
        out[:, 1:-1] = np.where(small, taylor, direct)
        return out

    def fiber_derivative(self, f: np.ndarray) -> np.ndarray:
        return np.diff(f, axis=1) / self.grid.dz

    def c1_norm(self, v: np.ndarray) -> float:
        """Discrete ball norm ``sup|v| + sup|∂_z v|`` (t-derivatives excluded)."""
        return float(np.max(np.abs(v)) + np.max(np.abs(self.fiber_derivative(v))))


# -- weighted norms -----------------------------------------------------------------


@dataclass(frozen=True)
class WeightedNorms:
    sup_norm: float
    c0alpha_eps: float
    c2alpha_eps: float


def _holder(f: np.ndarray, z: np.ndarray, alpha: float) -> float:
    dz = np.abs(z[:, None] - z[None, :])
    np.fill_diagonal(dz, np.inf)
    best = 0.0
    for row in f:
        best = max(best, float(np.max(np.abs(row[:, None] - row[None, :]) / dz**alpha)))
    return best


def weighted_norms(field: TubeField, alpha: float = 0.5) -> WeightedNorms:
    """Discrete analogues of the eps-weighted Hölder norms along the fiber.

    ``c0 = sup|f| + eps^α [f]_α`` and
    ``c2 = c0 + eps sup|f_z| + eps² sup|f_zz| + eps^{2+α} [f_zz]_α``
    with Hölder quotients over pairs of fiber nodes at fixed t.
    """
    g, f = field.grid, field.values
    eps, z = g.eps, g.z
    sup = float(np.max(np.abs(f)))
    c0 = sup + eps**alpha * _holder(f, z, alpha)
    fz = np.gradient(f, g.dz, axis=1)
    fzz = (f[:, 2:] - 2 * f[:, 1:-1] + f[:, :-2]) / g.dz**2
    c2 = (c0 + eps * float(np.max(np.abs(fz))) + eps**2 * float(np.max(np.abs(fzz)))
          + eps ** (2 + alpha) * _holder(fzz, z[1:-1], alpha))
    return WeightedNorms(sup, c0, c2)


# -- iteration scheme ---------------------------------------------------------------


def assemble_model_inverse(problem: TubeProblem, rhs) -> TubeField:
    """Solve ``-(∂_zz + p ū^{p-1}) v = rhs`` for every t with ``v = 0`` at ``|z| = eps``."""
    values = rhs.values if isinstance(rhs, TubeField) else np.asarray(rhs, dtype=float)
    return TubeField(problem.grid, problem.fiber_solve(values))


@dataclass
class IterationResult:
    problem: TubeProblem
    iterates: list
    residuals: list
    ratios: list

    def u(self, i: int) -> np.ndarray:
        """``u_{eps,i} = ū + v_{eps,i}`` (``i = 0`` is the ansatz)."""
        if i == 0:
            return self.problem.ubar.copy()
        return self.problem.ubar + self.iterates[i - 1].values


def iterate_approximation(problem: TubeProblem, i_max: int, check_bound: bool = True) -> IterationResult:
    """Run ``v_{i+1} = fiber⁻¹(E + K(v_i) + (Δ - ∂_zz) v_i)`` from ``v_0 = 0``.

    ``residuals[i]`` is ``sup|Δu_i + u_i^p|`` over interior nodes and
    ``ratios[i]`` is ``sup|v_i / ū|``.
    """
    E = problem.residual_ansatz
    u0 = problem.ubar
    v = np.zeros_like(u0)
    iterates, residuals, ratios = [], [float(np.max(np.abs(E)))], [0.0]
    invariant = problem.t_invariant
    for i in range(i_max):
        rhs = E + problem.nonlinear_remainder(u0, v) + problem.lap_base(v) + problem.correction(v)
        v = problem.fiber_solve(rhs)
        if invariant:
            # exact iterates are t-independent; drop rounding noise the explicit base term would amplify
            v = np.broadcast_to(v.mean(axis=0), v.shape).copy()
        ratio = problem.ratio(v)
        if check_bound and np.any(np.abs(v[:, 1:-1]) > 0.5 * u0[:, 1:-1]):
            raise PointwiseBoundViolated(f"|v_{i + 1}| exceeds ū/2 (max ratio {np.max(np.abs(ratio)):.3g})")
        iterates.append(TubeField(problem.grid, v))
        residuals.append(float(np.max(np.abs(problem.residual(u0 + v)))))
        ratios.append(float(np.max(np.abs(ratio))))
    return IterationResult(problem, iterates, residuals, ratios)


# -- linearized operators -----------------------------------------------------------


class LinearizedOperator:
    """``L = -(Δ + p u^{p-1})`` and ``L̃ = a L`` on interior nodes.

    ``M = √G L`` (per unit ``dt dz``) is symmetric; eigenvalues of ``L̃``
    solve ``M v = ν s v`` with ``s = |Y'|`` the product-metric density.
    When all coefficients are independent of t the operator is reduced
    over real Fourier modes; otherwise it is block tridiagonal in z with
    dense t blocks.
    """

    def __init__(self, problem: TubeProblem, u: np.ndarray):
        if np.any(u[:, 1:-1] <= 0):
            raise NonpositiveState("state must be positive at interior nodes")
        self.problem = problem
        self.u = u
        self.pot = problem.p * u[:, 1:-1] ** (problem.p - 1)
        g = problem.grid
        self.nzi = 2 * g.nz - 1
        self.fourier = problem.t_invariant and bool(np.max(np.ptp(u, axis=0)) <= 1e-12 * np.max(u))

    @property
    def grid(self) -> TubeGrid:
        return self.problem.grid

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``L v`` on a full-grid array with zero boundary columns."""
        out = -self.problem.laplacian(v)
        out[:, 1:-1] -= self.pot * v[:, 1:-1]
        return out

    def apply_tilde(self, v: np.ndarray) -> np.ndarray:
        return self.problem.a * self.apply(v)

    def inner_bar(self, v: np.ndarray, w: np.ndarray) -> float:
        g = self.grid
        return float(np.sum(self.problem.speed[:, None] * v * w) * g.dt * g.dz)

    def symmetry_defect(self, rng: np.random.Generator, pairs: int = 3) -> float:
        """Relative defect of ``<v, L̃w>_ḡ = <w, L̃v>_ḡ`` on random interior fields."""
        worst = 0.0
        for _ in range(pairs):
            v, w = self.grid.zeros(), self.grid.zeros()
            v[:, 1:-1] = rng.standard_normal((self.grid.nt, self.nzi))
            w[:, 1:-1] = rng.standard_normal((self.grid.nt, self.nzi))
            a, b = self.inner_bar(v, self.apply_tilde(w)), self.inner_bar(w, self.apply_tilde(v))
            worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1e-300))
        return worst

    # -- Fourier reduction
    def mode_tridiagonal(self, j: int):
        """Tridiagonal ``(diag, off)`` of ``L̃`` restricted to t-Fourier mode ``j``."""
        pr = self.problem
        s = pr.speed[0]
        omega = 2 * math.pi / pr.grid.curve.period
        a, ah, dz = pr.a[0, 1:-1], pr.a_half[0], pr.grid.dz
        q = pr.q[0, 1:-1]
        diag = q * (omega * j) ** 2 / s + (ah[1:] + ah[:-1]) / dz**2 - a * self.pot[0]
        off = -ah[1:-1] / dz**2
        return diag, off

    @property
    def max_mode(self) -> int:
        return (self.grid.nt - 1) // 2

    def mode_eigenvalues(self, j: int, count: int | None = None):
        d, e = self.mode_tridiagonal(j)
        if count is None:
            return eigh_tridiagonal(d, e, eigvals_only=True)
        return eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, count - 1))

    # -- block tridiagonal form
    def blocks(self, shift: float = 0.0):
        """Diagonal blocks ``B_l`` and coupling diagonals ``c_l`` of ``M - shift * s``."""
        pr = self.problem
        s = pr.speed
        dz = pr.grid.dz
        F = pr.F
        B = []
        for l in range(self.nzi):
            q = pr.q[:, l + 1]
            blk = -(F * q[None, :]) @ F
            blk[np.diag_indices_from(blk)] += s * (pr.a_half[:, l] + pr.a_half[:, l + 1]) / dz**2 \
                - s * pr.a[:, l + 1] * self.pot[:, l] - shift * s
            B.append(0.5 * (blk + blk.T))
        C = [-s * pr.a_half[:, l + 1] / dz**2 for l in range(self.nzi - 1)]
        return B, C

    def factor(self, shift: float = 0.0) -> "BlockFactor":
        B, C = self.blocks(shift)
        return BlockFactor(B, C)

    def sparse_form(self):
        """Sparse symmetric ``M`` and density vector ``s`` ordered ``index = l * nt + t``."""
        B, C = self.blocks()
        nt = self.grid.nt
        rows = [sparse.csr_matrix(b) for b in B]
        M = sparse.block_diag(rows, format="lil")
        M = sparse.csr_matrix(M)
        off = np.concatenate(C)
        idx = np.arange(off.size)
        cpl = sparse.csr_matrix((off, (idx, idx + nt)), shape=M.shape)
        M = M + cpl + cpl.T
        dens = np.tile(self.problem.speed, self.nzi)
        return M, dens

    # -- spectra
    def lowest(self, count: int = 6):
        """Lowest eigenvalues of ``L̃`` with multiplicity, sorted."""
        if self.fourier:
            vals = []
            for j in range(self.max_mode + 1):
                w = self.mode_eigenvalues(j, min(count, self.nzi))
                vals.extend(np.repeat(w, 1 if j == 0 else 2))
            return np.sort(np.array(vals))[:count]
        M, dens = self.sparse_form()
        Dm = sparse.diags(dens)
        w = eigsh(M, k=count, M=Dm, sigma=self._low_shift(), which="LM", return_eigenvectors=False)
        return np.sort(w)

    def _low_shift(self) -> float:
        mu0 = self.problem.fiber_eigen[0][0]
        return 1.5 * mu0

    def morse_index(self) -> int:
        if self.fourier:
            n = 0
            for j in range(self.max_mode + 1):
                w = self.mode_eigenvalues(j)
                n += int(np.sum(w < 0)) * (1 if j == 0 else 2)
            return n
        return self.factor().inertia[0]

    def gap(self) -> float:
        """``min |ν|`` over the spectrum of ``L̃``."""
        if self.fourier:
            return float(min(np.min(np.abs(self.mode_eigenvalues(j))) for j in range(self.max_mode + 1)))
        M, dens = self.sparse_form()
        w = eigsh(M, k=1, M=sparse.diags(dens), sigma=0.0, which="LM", return_eigenvectors=False)
        return float(np.min(np.abs(w)))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve ``L v = rhs`` with zero Dirichlet data."""
        pr = self.problem
        out = np.zeros_like(rhs)
        if self.fourier:
            nt = self.grid.nt
            r = pr.a[:, 1:-1] * rhs[:, 1:-1]
            R = np.fft.rfft(r, axis=0)
            X = np.empty_like(R)
            for j in range(R.shape[0]):
                d, e = self.mode_tridiagonal(j)
                ab = np.zeros((3, d.size))
                ab[0, 1:], ab[1], ab[2, :-1] = e, d, e
                X[j] = solve_banded((1, 1), ab, R[j])
            out[:, 1:-1] = np.fft.irfft(X, n=nt, axis=0)
            return out
        fac = self._factor_cache()
        b = (pr.speed[:, None] * pr.a[:, 1:-1] * rhs[:, 1:-1]).T
        out[:, 1:-1] = fac.solve(b).T
        return out

    def _factor_cache(self) -> "BlockFactor":
        if not hasattr(self, "_fac"):
            self._fac = self.factor()
        return self._fac


class BlockFactor:
    """Block LDLᵀ of a symmetric block-tridiagonal matrix with diagonal couplings.

    The Schur complements are kept in eigen-decomposed form, which gives
    the inertia by Sylvester's law and stable solves.
    """

    def __init__(self, B, C):
        self.C = C
        self.eig = []
        S = B[0]
        for l in range(len(B)):
            if l > 0:
                w, V = self.eig[-1]
                c = C[l - 1]
                Sinv = (V / w) @ V.T
                S = B[l] - c[:, None] * Sinv * c[None, :]
            w, V = eigh(0.5 * (S + S.T))
            self.eig.append((w, V))
        allw = np.concatenate([w for w, _ in self.eig])
        tol = 1e-13 * np.max(np.abs(allw))
        self.inertia = (int(np.sum(allw < -tol)), int(np.sum(np.abs(allw) <= tol)), int(np.sum(allw > tol)))
        self.min_abs_pivot = float(np.min(np.abs(allw)))

    def _sinv(self, l, x):
        w, V = self.eig[l]
        return V @ ((V.T @ x) / (w[:, None] if x.ndim == 2 else w))

    def solve(self, b: np.ndarray) -> np.ndarray:
        n = len(self.eig)
        y = [None] * n
        y[0] = b[0]
        for l in range(1, n):
            y[l] = b[l] - self.C[l - 1] * self._sinv(l - 1, y[l - 1])
        x = np.empty_like(b)
        x[-1] = self._sinv(n - 1, y[-1])
        for l in range(n - 2, -1, -1):
            x[l] = self._sinv(l, y[l] - self.C[l] * x[l + 1])
        return x


def assemble_linearized(problem: TubeProblem, u) -> LinearizedOperator:
    values = u.values if isinstance(u, TubeField) else np.asarray(u, dtype=float)
    return LinearizedOperator(problem, values)


def morse_index_discrete(op: LinearizedOperator, tol: float | None = None) -> int:
    """Number of negative eigenvalues of ``L̃`` (equivalently of ``L``)."""
    if tol is None:
        tol = 1e-10 / op.grid.eps**2
    if op.fourier:
        if op.gap() < tol:
            raise OnResonance(f"discrete operator has an eigenvalue within {tol:.3g} of 0")
        return op.morse_index()
    fac = op.factor()
    if fac.inertia[1] > 0:
        raise OnResonance("discrete operator is singular")
    return fac.inertia[0]


# -- eigenfunction decomposition ----------------------------------------------------


@dataclass(frozen=True)
class Decomposition:
    psi: np.ndarray
    remainder: TubeField
    rho: float
    remainder_fraction: float


def _dirichlet_energy_bar(problem: TubeProblem, v: np.ndarray) -> float:
    g = problem.grid
    s = problem.speed[:, None]
    vt = problem.F @ v
    vz = problem.fiber_derivative(v)
    return float((np.sum(vt**2 / s) + np.sum(s * vz**2)) * g.dt * g.dz)


def eigenfunction_decomposition(op: LinearizedOperator, nu: float, v: np.ndarray, C0: float = 0.0) -> Decomposition:
    """Split ``v = φ_{0,eps} ψ + v̄`` with ``v̄`` ḡ-orthogonal to ``φ_{0,eps} ⊗ L²``.

    Returns ``ψ``, ``v̄`` and the ratio
    ``ρ = (∫|∇v̄|² + eps⁻² ∫v̄²) / (eps⁻¹ ∫v²)`` (product metric).
    Raises ThresholdExceeded when ``ν > C0 / eps²``.
    """
    pr = op.problem
    g = pr.grid
    if nu > C0 / g.eps**2:
        raise ThresholdExceeded(f"eigenvalue {nu:.6g} above C0/eps^2 = {C0 / g.eps**2:.6g}")
    phi = np.zeros(g.shape[1])
    phi[1:-1] = pr.fiber_eigen[1][:, 0]
    psi = (v @ phi) * g.dz
    vbar = v - psi[:, None] * phi[None, :]
    l2 = op.inner_bar(v, v)
    bar2 = op.inner_bar(vbar, vbar)
    rho = (_dirichlet_energy_bar(pr, vbar) + bar2 / g.eps**2) / (l2 / g.eps)
    return Decomposition(psi=psi, remainder=TubeField(g, vbar), rho=float(rho), remainder_fraction=float(bar2 / l2))


def lowest_eigenpair(op: LinearizedOperator):
    """Lowest eigenvalue of ``L̃`` and its eigenfunction on the full grid, ``<v,v>_ḡ = 1``."""
    g = op.grid
    v = g.zeros()
    if op.fourier:
        d, e = op.mode_tridiagonal(0)
        w, V = eigh_tridiagonal(d, e, select="i", select_range=(0, 0))
        v[:, 1:-1] = V[:, 0][None, :]
        nu = float(w[0])
    else:
        M, dens = op.sparse_form()
        w, V = eigsh(M, k=1, M=sparse.diags(dens), sigma=op._low_shift(), which="LM")
        nu = float(w[0])
        v[:, 1:-1] = V[:, 0].reshape(op.nzi, g.nt).T
    v /= math.sqrt(op.inner_bar(v, v))
    if np.sum(v) < 0:
        v = -v
    return nu, v


def linearized_family(curve: EmbeddedCurve, profile: RadialProfile, i: int = 2, nz: int | None = None,
                      count: int = 4):
    """``eps -> (values, vectors, None)``: lowest eigenpairs of ``L̃`` at ``u_{eps,i}``.

    Vectors live on the interior nodes of the rescaled grid, which does not
    depend on eps, so branches can be matched by overlap.  For t-invariant
    coefficients only Fourier mode 0 is used.
    """

    def family(eps):
        problem = TubeProblem(curve, profile, eps, nz)
        u = iterate_approximation(problem, i).u(i) if i > 0 else problem.ubar
        op = LinearizedOperator(problem, u)
        if op.fourier:
            d, e = op.mode_tridiagonal(0)
            w, V = eigh_tridiagonal(d, e, select="i", select_range=(0, count - 1))
            return w, V, None
        M, dens = op.sparse_form()
        w, V = eigsh(M, k=count, M=sparse.diags(dens), sigma=op._low_shift(), which="LM")
        order = np.argsort(w)
        return w[order], V[:, order], dens

    return family


# -- fixed point --------------------------------------------------------------------


def contraction_window(i: int, N: int, N0: int, p: float):
    """Open interval of admissible ball exponents ``M`` or None if empty.

    Needs ``i > 2(N + N0) - 3``, ``M < i + 2 - N - N0 - 2/(p-1)`` and
    ``M > N + N0 - 1 - 2/(p-1)``.
    """
    if i <= 2 * (N + N0) - 3:
        return None
    lo = N + N0 - 1 - 2.0 / (p - 1)
    hi = i + 2 - N - N0 - 2.0 / (p - 1)
    return (lo, hi) if lo < hi else None


@dataclass
class PicardResult:
    u: TubeField
    v: TubeField
    steps: int
    contraction_factor: float
    increments: list
    residual: float
    shape_error: float
    gap: float
    morse_index: int | None = None
    history: list = field(default_factory=list)


def picard_solve(problem: TubeProblem, u_init, M: float, budget: int = 50, tol: float = 1e-12,
                 i: int | None = None, N: int | None = None, N0: int = 0, compute_index: bool = True) -> PicardResult:
    """Fixed point ``v = L⁻¹(E + K(v))`` around ``u_init`` in the ball ``‖v‖_{C¹} <= eps^M``.

    When ``i`` and ``N`` are given, the exponent ``M`` must lie in the
    window of :func:`contraction_window`.  Convergence is declared when the
    increment drops below ``tol * sup ū``.
    """
    p = problem.p
    if i is not None and N is not None:
        win = contraction_window(i, N, N0, p)
        if win is None or not (win[0] < M < win[1]):
            raise ParameterContractViolated(f"M={M} outside the admissible window {win} for i={i}, N={N}, N0={N0}")
    ui = u_init.values if isinstance(u_init, TubeField) else np.asarray(u_init, dtype=float)
    eps = problem.grid.eps
    radius = eps**M
    op = LinearizedOperator(problem, ui)
    E = problem.residual(ui)
    v = np.zeros_like(ui)
    scale = float(np.max(problem.ubar))
    increments, factors = [], []
    converged = False
    for step in range(1, budget + 1):
        v_new = op.solve(E + problem.nonlinear_remainder(ui, v))
        nrm = problem.c1_norm(v_new)
        if not np.isfinite(nrm) or nrm > radius:
            raise LeftBall(f"iterate {step} has C1 norm {nrm:.3g} > eps^M = {radius:.3g}")
        inc = problem.c1_norm(v_new - v)
        increments.append(inc)
        if len(increments) >= 2 and increments[-2] > 0:
            factors.append(inc / increments[-2])
            if factors[-1] >= 1.0 and inc > tol * scale:
                raise NoContraction(f"increment ratio {factors[-1]:.3g} >= 1 at step {step}")
        v = v_new
        if inc <= tol * scale:
            converged = True
            break
    if not converged:
        raise NoContraction(f"no convergence within {budget} steps (last increment {increments[-1]:.3g})")
    u = ui + v
    if np.any(u[:, 1:-1] <= 0):
        raise NonpositiveState("solution is not positive in the interior")
    informative = [f for f, a in zip(factors, increments[1:]) if a > 1e3 * tol * scale]
    theta = max(informative) if informative else (max(factors) if factors else 0.0)
    shape = float(np.max(np.abs(problem.ratio(u - problem.ubar))))
    res = float(np.max(np.abs(problem.residual(u))))
    final_op = LinearizedOperator(problem, u)
    gap = final_op.gap() if final_op.fourier else float("nan")
    index = final_op.morse_index() if compute_index else None
    return PicardResult(u=TubeField(problem.grid, u), v=TubeField(problem.grid, v), steps=step,
                        contraction_factor=float(theta), increments=increments, residual=res,
                        shape_error=shape, gap=gap, morse_index=index)


def write_solution_csv(field: TubeField, path, header: str | None = None) -> Path:
    """Write rows ``t,z,u``; ``header`` (without newline) is emitted first as a comment."""
    path = Path(path)
    g = field.grid
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["t", "z", "u"])
        for a, t in enumerate(g.t):
            for b, z in enumerate(g.z):
                w.writerow([repr(float(t)), repr(float(z)), repr(float(field.values[a, b]))])
    return path
