"""Pohozaev-type identity with ``φ = dist(·, Λ)²/2`` on tubes, the geometric
constants it needs, and the nonexistence certificate for supercritical powers.

Integrals over discrete tube fields use Fermi coordinates on the n = 1 grid
of :mod:`tubesol.tube`: spectral t-derivatives, second-order z-derivatives
and the trapezoidal rule across the fiber.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import jv

from .errors import GridMismatch, NonzeroTrace, SubcriticalInput, UnsupportedGeometry, ZeroField
from .fermi import metric_expansion
from .manifold import EmbeddedCurve, circle_curve, spectral_derivative
from .radial import ProblemParams
from .tube import TubeField, TubeProblem

__all__ = [
    "PohozaevReport",
    "GeometricConstants",
    "Verdict",
    "pohozaev_coefficient",
    "divergence_identity_residual",
    "integrated_identity",
    "poincare_check",
    "geometric_constants",
    "nonexistence_certificate",
    "write_report_csv",
]


def pohozaev_coefficient(n: int, p: float) -> float:
    """``(n-2)/2 - n/(p+1)``; positive exactly when ``p > (n+2)/(n-2)``."""
    return (n - 2) / 2 - n / (p + 1)


# -- fields on the n = 1 tube --------------------------------------------------


@dataclass
class _TubeCalculus:
    """Geometry and derivatives of a field on the planar-tube grid."""

    problem: TubeProblem
    gtt_inv: np.ndarray
    sqrtG: np.ndarray
    lap_phi: np.ndarray
    dlap_phi_z: np.ndarray
    dlap_phi_t: np.ndarray
    hess_tt: np.ndarray

    @classmethod
    def build(cls, problem: TubeProblem):
        g = problem.grid
        exp = metric_expansion(g.curve, g.z)
        gtt = exp.metric[..., 0, 0]
        if np.max(np.abs(exp.ell)) > 1e-12:
            raise UnsupportedGeometry("planar frames must be untwisted")
        # ∂_z g_tt / 2 = ∂_z √g_tt · √g_tt ; Hess_tt = z ∂_z g_tt / 2
        dz_gtt = exp.dmetric[..., 1, 0, 0]
        hess_tt = 0.5 * g.z[None, :] * dz_gtt
        lap_phi = 1.0 + hess_tt / gtt
        # Δφ = 1 + z ∂_z(log √g_tt); differentiate the closed expression
        d2z_gtt = 2.0 * exp.k[:, 0, 0][:, None] * np.ones_like(gtt)
        dlog = 0.5 * dz_gtt / gtt
        d2log = 0.5 * d2z_gtt / gtt - 0.5 * dz_gtt**2 / gtt**2
        dlap_z = dlog + g.z[None, :] * d2log
        dlap_t = problem.F @ lap_phi
        return cls(problem, 1.0 / gtt, np.sqrt(gtt), lap_phi, dlap_z, dlap_t, hess_tt)

    def derivatives(self, u: np.ndarray):
        pr = self.problem
        ut = pr.F @ u
        uz = np.gradient(u, pr.grid.dz, axis=1, edge_order=2)
        return ut, uz

    def integrate(self, f: np.ndarray) -> float:
        g = self.problem.grid
        w = np.full(g.shape[1], g.dz)
        w[0] = w[-1] = 0.5 * g.dz
        return float(np.sum(self.sqrtG * f * w[None, :]) * g.dt)


@dataclass
class PohozaevReport:
    """Terms of the integrated identity (Euclidean volume form).

    ``boundary_term + bulk1 + bulk2 + bulk3 = identity_residual`` and the
    identity states that the sum vanishes for exact solutions.  Constants
    are measured on this grid and are not proofs.
    """

    eps: float
    boundary_term: float
    bulk1: float
    bulk2: float
    bulk3: float
    identity_residual: float
    coefficient: float
    grad_norm2: float
    l2_norm2: float
    laplacian_defect: float
    grad_laplacian_sup: float
    hessian_defect: float
    cauchy_schwarz_lhs: float
    cauchy_schwarz_rhs: float
    poincare_ratio: float

    @property
    def bulk_terms(self):
        return (self.bulk1, self.bulk2, self.bulk3)

    @property
    def relative_residual(self) -> float:
        return abs(self.identity_residual) / self.grad_norm2


def _check_field(problem: TubeProblem, u) -> np.ndarray:
    values = u.values if isinstance(u, TubeField) else np.asarray(u, dtype=float)
    if values.shape != problem.grid.shape:
        raise GridMismatch(f"field shape {values.shape} differs from grid {problem.grid.shape}")
    return values


def divergence_identity_residual(problem: TubeProblem, u, p: float | None = None) -> TubeField:
    """Pointwise left side of the divergence identity at interior nodes.

    With ``X = (∇u·∇φ)∇u - (|∇u|²/2 - u^{p+1}/(p+1))∇φ + u Δφ ∇u/(p+1)``
    the field is ``div X + ((1/n)Δφ|∇u|² - ∇²φ(∇u,∇u))
    + ((n-2)/(2n) - 1/(p+1))|∇u|² Δφ - u ∇u·∇Δφ/(p+1)`` with ``n = 1``.
    """
    values = _check_field(problem, u)
    p = problem.p if p is None else p
    calc = _TubeCalculus.build(problem)
    g = problem.grid
    ut, uz = calc.derivatives(values)
    z = g.z[None, :]
    gi = calc.gtt_inv
    grad2 = gi * ut**2 + uz**2
    dot_phi = z * uz
    up = np.abs(values) ** (p + 1) / (p + 1)
    Xt = gi * ut * (dot_phi + values * calc.lap_phi / (p + 1))
    Xz = uz * (dot_phi + values * calc.lap_phi / (p + 1)) - (0.5 * grad2 - up) * z
    S = calc.sqrtG
    div = (problem.F @ (S * Xt) + np.gradient(S * Xz, g.dz, axis=1, edge_order=2)) / S
    hess_def = (calc.lap_phi - 1.0) * uz**2 + gi * ut**2 * (calc.lap_phi - gi * calc.hess_tt)
    kappa = -0.5 - 1.0 / (p + 1)
    grad_lap = gi * ut * calc.dlap_phi_t + uz * calc.dlap_phi_z
    out = div + hess_def + kappa * grad2 * calc.lap_phi - values * grad_lap / (p + 1)
    out[:, 0] = out[:, -1] = 0.0
    return TubeField(g, out)


def integrated_identity(problem: TubeProblem, u, p: float | None = None) -> PohozaevReport:
    """Evaluate every term of the integrated identity on a field with zero trace."""
    values = _check_field(problem, u)
    if max(np.max(np.abs(values[:, 0])), np.max(np.abs(values[:, -1]))) != 0.0:
        raise NonzeroTrace("field must vanish exactly on the tube boundary")
    p = problem.p if p is None else p
    n = 1
    calc = _TubeCalculus.build(problem)
    g = problem.grid
    eps = g.eps
    ut, uz = calc.derivatives(values)
    gi = calc.gtt_inv
    grad2 = gi * ut**2 + uz**2
    # boundary: |∇u|² = u_z², ∇φ·ν = eps, dσ = √g_tt dt
    bnd = 0.5 * eps * np.sum(calc.sqrtG[:, 0] * uz[:, 0] ** 2 + calc.sqrtG[:, -1] * uz[:, -1] ** 2) * g.dt
    hess_def = (calc.lap_phi - 1.0) * uz**2 + gi * ut**2 * (calc.lap_phi - gi * calc.hess_tt)
    kappa = (n - 2) / (2 * n) - 1.0 / (p + 1)
    grad_lap = gi * ut * calc.dlap_phi_t + uz * calc.dlap_phi_z
    b1 = calc.integrate(hess_def)
    b2 = kappa * calc.integrate(grad2 * calc.lap_phi)
    cs = calc.integrate(values * grad_lap)
    b3 = -cs / (p + 1)
    G2 = calc.integrate(grad2)
    L2 = calc.integrate(values**2)
    gl_sup = float(np.max(np.sqrt(gi * calc.dlap_phi_t**2 + calc.dlap_phi_z**2)))
    # one-sided quotient, skipping nodes where the gradient is at rounding level
    live = grad2 > 1e-12 * np.max(grad2) if np.any(grad2) else np.zeros_like(grad2, dtype=bool)
    q = np.zeros_like(grad2)
    q[live] = np.maximum(0.0, -hess_def[live]) / grad2[live]
    return PohozaevReport(
        eps=eps, boundary_term=float(bnd), bulk1=b1, bulk2=b2, bulk3=b3,
        identity_residual=float(bnd + b1 + b2 + b3), coefficient=pohozaev_coefficient(n, p),
        grad_norm2=G2, l2_norm2=L2,
        laplacian_defect=float(np.max(np.abs(calc.lap_phi - n)) / eps),
        grad_laplacian_sup=gl_sup, hessian_defect=float(np.max(q) / eps),
        cauchy_schwarz_lhs=abs(cs), cauchy_schwarz_rhs=gl_sup * math.sqrt(L2 * G2),
        poincare_ratio=L2 / (eps**2 * G2) if G2 > 0 else math.nan,
    )


def poincare_check(problem: TubeProblem, u) -> float:
    """``∫u² / (eps² ∫|∇u|²)`` with the Euclidean volume form.

    Uses the cell-based Dirichlet form (differences across each fiber
    cell, faces weighted by the volume factor) so that product fields give
    exactly the fiber Rayleigh quotient.
    """
    values = _check_field(problem, u)
    if max(np.max(np.abs(values[:, 0])), np.max(np.abs(values[:, -1]))) != 0.0:
        raise NonzeroTrace("field must vanish exactly on the tube boundary")
    if not np.any(values):
        raise ZeroField("Poincaré ratio of the zero field is undefined")
    g = problem.grid
    s = problem.speed[:, None]
    G = s * problem.a
    Gh = s * problem.a_half
    l2 = np.sum(G * values**2) * g.dz * g.dt
    uz = problem.fiber_derivative(values)
    ut = problem.F @ values
    # |∇u|² √G = u_t² / √G + u_z² √G for an untwisted planar frame
    energy = (np.sum(Gh * uz**2) + np.sum(ut**2 / G)) * g.dz * g.dt
    return float(l2 / (g.eps**2 * energy))


# -- geometric constants and the certificate ------------------------------------


def _bessel_zero(order: float) -> float:
    """First positive zero of ``J_order``."""
    lo = max(order, 0.0) + 1e-6
    step = 0.5
    a, fa = lo, jv(order, lo)
    while True:
        b = a + step
        fb = jv(order, b)
        if fa * fb < 0:
            return float(brentq(lambda x: jv(order, x), a, b, xtol=1e-14))
        a, fa = b, fb


@dataclass(frozen=True)
class GeometricConstants:
    """Measured on sample points of the tube; ``c_geo`` multiplies eps in the proof's bound."""

    laplacian_defect: float
    grad_laplacian: float
    hessian_defect: float
    hessian_defect_two_sided: float
    poincare: float
    c_geo: float
    samples: int


def _fiber_samples(n: int, eps: float, radial: int, directions: int, rng) -> np.ndarray:
    r = eps * np.linspace(0.0, 1.0, radial + 1)[1:]
    dirs = rng.standard_normal((directions, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.vstack([dirs, np.eye(n), -np.eye(n)])
    return np.vstack([np.zeros((1, n)), (r[:, None, None] * dirs[None]).reshape(-1, n)])


def geometric_constants(curve: EmbeddedCurve, eps: float, p: float, radial: int = 12, directions: int = 24,
                        seed: int = 0) -> GeometricConstants:
    """Measure ``sup|Δφ - n|/eps``, ``sup|∇Δφ|`` and the Hessian-defect constant on the tube.

    The Hessian defect ``(1/n)Δφ|ξ|² - ∇²φ(ξ, ξ)`` is bounded below by
    ``-C eps |ξ|²``; only this one-sided constant enters the certificate
    (the defect is positive for directions along Λ).  The Poincaré
    constant is ``(max a / min a) / j²`` with ``j`` the first zero of
    ``J_{n/2-1}``.
    """
    rng = np.random.default_rng(seed)
    n = curve.n
    z = _fiber_samples(n, eps, radial, directions, rng)
    exp = metric_expansion(curve, z)
    lap = exp.laplacian_of_half_square()
    H = exp.hessian_of_half_square()
    g, ginv = exp.metric, exp.inverse
    # generalized eigenvalues of (Δφ/n) g - H relative to g
    Lc = np.linalg.cholesky(g)
    Li = np.linalg.inv(Lc)
    Q = (lap / n)[..., None, None] * g - H
    w = np.linalg.eigvalsh(Li @ Q @ np.swapaxes(Li, -1, -2))
    one_sided = max(0.0, float(-np.min(w))) / eps
    two_sided = float(np.max(np.abs(w))) / eps
    # ∇Δφ: spectral in t, centered differences in z
    grads = np.zeros(lap.shape + (n + 1,))
    grads[..., 0] = spectral_derivative(lap, exp.curve.period)
    delta = 1e-4 * eps
    for k in range(n):
        e = np.zeros(n)
        e[k] = delta
        lp = metric_expansion(curve, z + e).laplacian_of_half_square()
        lm = metric_expansion(curve, z - e).laplacian_of_half_square()
        grads[..., k + 1] = (lp - lm) / (2 * delta)
    gl = float(np.max(np.sqrt(np.einsum("...a,...ab,...b->...", grads, ginv, grads))))
    ld = float(np.max(np.abs(lap - n))) / eps
    a = exp.volume_factor
    cp = (float(a.max()) / float(a.min())) / _bessel_zero(n / 2 - 1) ** 2
    kappa = (n - 2) / (2 * n) - 1.0 / (p + 1)
    c_geo = abs(kappa) * ld + one_sided + gl * math.sqrt(cp) / (p + 1)
    return GeometricConstants(laplacian_defect=ld, grad_laplacian=gl, hessian_defect=one_sided,
                              hessian_defect_two_sided=two_sided, poincare=cp, c_geo=c_geo, samples=z.shape[0])


@dataclass(frozen=True)
class Verdict:
    """``kind`` is "NoPositiveSolution" when eps < eps_bar, else "Inconclusive"."""

    kind: str
    eps: float
    eps_bar: float
    coefficient: float
    constants: GeometricConstants
    margin: float | None = None
    identity_sum: float | None = None
    note: str = "constants measured on a sample grid; a demonstration, not a proof"


def _candidate_terms(curve: EmbeddedCurve, eps: float, p: float, candidate: Callable, nt: int = 64,
                     nr: int = 24, nang: int = 16):
    """Identity terms for an ambient candidate ``x -> (u, ∇u)`` on a planar circle tube with n = 3."""
    n = curve.n
    if n != 3:
        raise UnsupportedGeometry("candidate quadrature is implemented for n = 3")
    R = curve.period / (2 * math.pi)
    ref = circle_curve(R, curve.m, curve.t.size)
    if not np.allclose(ref.Y, curve.Y, atol=1e-9):
        raise UnsupportedGeometry("candidate evaluation needs the planar circle family")
    xr, wr = np.polynomial.legendre.leggauss(nr)
    r = 0.5 * eps * (xr + 1)
    wr = 0.5 * eps * wr * r ** (n - 1)
    xc, wc = np.polynomial.legendre.leggauss(nang)
    ph = np.arange(2 * nang) * math.pi / nang
    wph = math.pi / nang
    th = 2 * math.pi * np.arange(nt) / nt
    sint = np.sqrt(1 - xc**2)
    omega = np.stack([np.outer(sint, np.cos(ph)).ravel(), np.outer(sint, np.sin(ph)).ravel(),
                      np.repeat(xc, 2 * nang)], axis=1)
    wom = np.repeat(wc, 2 * nang) * wph
    terms = np.zeros(6)
    for tt in th:
        rhat = np.array([math.cos(tt), math.sin(tt)] + [0.0] * (curve.m - 2))
        that = np.array([-math.sin(tt), math.cos(tt)] + [0.0] * (curve.m - 2))
        E = np.zeros((3, curve.m))
        E[0] = rhat
        E[1, 2] = 1.0
        E[2, 3] = 1.0
        zz = (r[:, None, None] * omega[None]).reshape(-1, 3)
        w = (wr[:, None] * wom[None]).ravel()
        x = R * rhat + zz @ E
        rho = R + zz[:, 0]
        a = rho / R
        vol = w * a * R * (2 * math.pi / nt)
        u, gu = candidate(x)
        lap = n + 1 - R / rho
        # ambient Hessian of φ: normal directions identity, tangent direction 1 - R/ρ
        hess_uu = np.sum(gu**2, axis=1) - (R / rho) * (gu @ that) ** 2
        grad2 = np.sum(gu**2, axis=1)
        kappa = (n - 2) / (2 * n) - 1.0 / (p + 1)
        terms[0] += np.sum(vol * (lap / n * grad2 - hess_uu))
        terms[1] += kappa * np.sum(vol * grad2 * lap)
        terms[2] += -np.sum(vol * u * (gu @ rhat) * (R / rho**2)) / (p + 1)
        terms[3] += np.sum(vol * grad2)
        terms[4] += np.sum(vol * u**2)
    # boundary: |∇u|² ∇φ·ν = eps |∇u|² on r = eps
    for tt in th:
        rhat = np.array([math.cos(tt), math.sin(tt)] + [0.0] * (curve.m - 2))
        E = np.zeros((3, curve.m))
        E[0] = rhat
        E[1, 2] = 1.0
        E[2, 3] = 1.0
        zz = eps * omega
        x = R * rhat + zz @ E
        a = (R + zz[:, 0]) / R
        _, gu = candidate(x)
        terms[5] += 0.5 * eps * np.sum(wom * eps ** (n - 1) * a * R * (2 * math.pi / nt) * np.sum(gu**2, axis=1))
    return terms


def nonexistence_certificate(params: ProblemParams, eps: float, curve: EmbeddedCurve | None = None,
                             candidate: Callable | None = None, **kwargs) -> Verdict:
    """Threshold below which the identity forces ``∫|∇u|² <= 0`` on ``B_eps(Λ)``.

    ``eps_bar = ((n-2)/2 - n/(p+1)) / C_geo``; the verdict is
    NoPositiveSolution for ``eps < eps_bar`` and Inconclusive otherwise.
    ``curve`` defaults to the unit circle in ``R^{n+1}``.  A candidate
    ``x -> (u, ∇u)`` (planar circle, n = 3) yields the identity sum and the
    margin ``(coefficient - C_geo eps) ∫|∇u|²``.
    """
    n, p = params.n, params.p
    if n < 3:
        raise SubcriticalInput(f"the nonexistence argument needs n >= 3 (got n={n})")
    crit = (n + 2) / (n - 2)
    if p < crit:
        raise SubcriticalInput(f"p={p} is below the critical exponent {crit}")
    curve = curve if curve is not None else circle_curve(1.0, n + 1, 33)
    if curve.n != n:
        raise GridMismatch(f"curve has fiber dimension {curve.n}, params have n={n}")
    consts = geometric_constants(curve, eps, p, **kwargs)
    coef = pohozaev_coefficient(n, p)
    eps_bar = max(coef, 0.0) / consts.c_geo
    kind = "NoPositiveSolution" if eps < eps_bar else "Inconclusive"
    margin = total = None
    if candidate is not None:
        b1, b2, b3, G2, _, bnd = _candidate_terms(curve, eps, p, candidate)
        total = float(bnd + b1 + b2 + b3)
        margin = float((coef - consts.c_geo * eps) * G2)
    return Verdict(kind=kind, eps=eps, eps_bar=float(eps_bar), coefficient=coef, constants=consts,
                   margin=margin, identity_sum=total)


def write_report_csv(rows, path, header: str | None = None) -> Path:
    """Rows of ``(report, eps_bar, verdict)``; schema
    ``eps,boundary_term,bulk1,bulk2,bulk3,residual,coefficient,eps_bar,verdict``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["eps", "boundary_term", "bulk1", "bulk2", "bulk3", "residual", "coefficient", "eps_bar", "verdict"])
        for rep, eps_bar, verdict in rows:
            w.writerow([repr(rep.eps), repr(rep.boundary_term), repr(rep.bulk1), repr(rep.bulk2), repr(rep.bulk3),
                        repr(rep.identity_residual), repr(rep.coefficient), repr(float(eps_bar)), verdict])
    return path
