"""Fermi coordinates around a closed curve: metric, volume factor and the
splitting of the Euclidean Laplacian into the product part plus a correction.

Coordinates are ordered ``(t, z_1, ..., z_n)``; the embedding is
``x = Y(t) + sum_i z_i e^i(t)``.  All fields are sampled on the curve's
t-grid times a list of fiber points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatch, SingularMetric, TubeTooWide
from .manifold import EmbeddedCurve, spectral_derivative

__all__ = [
    "FermiExpansion",
    "CorrectionOperator",
    "metric_expansion",
    "laplacian_split",
    "laplacian_from_derivatives",
    "apply_laplacian",
    "grid_derivatives",
    "ambient_points",
    "dump_field_csv",
]

DET_FLOOR = 1e-10


def _as_points(z_grid, n: int) -> np.ndarray:
    z = np.asarray(z_grid, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[1] != n:
        raise GridMismatch(f"fiber points have dimension {z.shape[1]}, frame has {n}")
    return z


@dataclass(frozen=True)
class FermiExpansion:
    """Metric data of the tube in Fermi coordinates.

    ``h[t, i] = 2 Y'.e^i'``, ``k[t, i, j] = e^i'.e^j'`` and
    ``ell[t, i, j] = e^i'.e^j``; the metric is
    ``g_tt = |Y'|^2 + z.h + z.k.z``, ``g_{t z_j} = sum_i z_i ell_ij``,
    ``g_{z z} = I``.  ``metric``, ``dmetric`` and ``volume_factor`` are
    sampled on ``t x z``; ``dmetric[..., c, a, b]`` is ``∂_c g_ab``.
    """

    curve: EmbeddedCurve
    t: np.ndarray
    z: np.ndarray
    speed2: np.ndarray
    h: np.ndarray
    k: np.ndarray
    ell: np.ndarray
    metric: np.ndarray
    dmetric: np.ndarray
    inverse: np.ndarray
    volume_factor: np.ndarray
    dspeed2: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.z.shape[1]

    @property
    def dim(self) -> int:
        return self.n + 1

    @property
    def shape(self):
        return (self.t.size, self.z.shape[0])

    def volume_bound(self) -> float:
        """``max |a - 1| / |z|`` over nodes with ``z != 0``."""
        r = np.linalg.norm(self.z, axis=1)
        mask = r > 0
        return float(np.max(np.abs(self.volume_factor[:, mask] - 1.0) / r[mask]))

    def christoffel(self) -> np.ndarray:
        """Christoffel symbols ``Γ^c_{ab}`` with shape ``(nt, nz, d, d, d)`` indexed ``[c, a, b]``."""
        dg = self.dmetric
        # lower-index symbol Γ_{d a b} = (∂_a g_db + ∂_b g_da - ∂_d g_ab)/2
        low = 0.5 * (np.einsum("...adb->...dab", dg) + np.einsum("...bda->...dab", dg) - dg)
        return np.einsum("...cd,...dab->...cab", self.inverse, low)

    def hessian_of_half_square(self) -> np.ndarray:
        """Covariant Hessian of ``φ = |z|^2/2``, shape ``(nt, nz, d, d)``."""
        d = self.dim
        P = np.zeros((d, d))
        P[1:, 1:] = np.eye(self.n)
        # ∂_a∂_b φ = P_ab, ∂_c φ = z_c on the fiber
        gam = self.christoffel()
        return P - np.einsum("tzkab,zk->tzab", gam[:, :, 1:, :, :], self.z)

    def laplacian_of_half_square(self) -> np.ndarray:
        return np.einsum("...ab,...ab->...", self.inverse, self.hessian_of_half_square())


def metric_expansion(curve: EmbeddedCurve, z_grid, t_grid=None) -> FermiExpansion:
    """Assemble the Fermi metric of the tube around ``curve`` at the given fiber points.

    Raises TubeTooWide when ``det g / |Y'|^2`` drops below ``1e-10`` at any node.
    """
    if t_grid is not None and (np.shape(t_grid) != curve.t.shape or not np.allclose(t_grid, curve.t)):
        raise GridMismatch("t_grid must coincide with the curve's sample parameters")
    n = curve.n
    z = _as_points(z_grid, n)
    E, dE, dY = curve.frame, curve.dframe, curve.dY
    P = curve.period
    A = np.einsum("tm,tm->t", dY, dY)
    h = 2.0 * np.einsum("tm,tim->ti", dY, dE)
    K = np.einsum("tim,tjm->tij", dE, dE)
    ell = np.einsum("tim,tjm->tij", dE, E)
    dA = spectral_derivative(A, P)
    dh = spectral_derivative(h, P)
    dK = spectral_derivative(K, P)
    dell = spectral_derivative(ell, P)

    nt, nz, d = A.size, z.shape[0], n + 1
    g = np.zeros((nt, nz, d, d))
    g[..., 0, 0] = A[:, None] + h @ z.T + np.einsum("zi,tij,zj->tz", z, K, z)
    gtz = np.einsum("zi,tij->tzj", z, ell)
    g[..., 0, 1:] = gtz
    g[..., 1:, 0] = gtz
    g[..., 1:, 1:] = np.eye(n)

    dg = np.zeros((nt, nz, d, d, d))
    dg[..., 0, 0, 0] = dA[:, None] + dh @ z.T + np.einsum("zi,tij,zj->tz", z, dK, z)
    dtz = np.einsum("zi,tij->tzj", z, dell)
    dg[..., 0, 0, 1:] = dtz
    dg[..., 0, 1:, 0] = dtz
    Ksym = 0.5 * (K + np.swapaxes(K, 1, 2))
    dz_tt = h[:, None, :] + 2.0 * np.einsum("tcj,zj->tzc", Ksym, z)
    dg[..., 1:, 0, 0] = dz_tt
    dg[..., 1:, 0, 1:] = ell[:, None, :, :]
    dg[..., 1:, 1:, 0] = ell[:, None, :, :]

    det = np.linalg.det(g)
    a2 = det / A[:, None]
    # with m = n + 1 the Jacobian of the chart is |Y'| (1 + z.h / 2|Y'|^2); past a focal point it changes sign
    signed = 1.0 + (h @ z.T) / (2.0 * A[:, None])
    bad = (a2 < DET_FLOOR) | (signed <= 0)
    if np.any(bad):
        ti, zi = np.argwhere(bad)[0]
        raise TubeTooWide(f"metric degenerates at t={curve.t[ti]:.6g}, z={z[zi].tolist()} (det g / |Y'|^2 = {a2[ti, zi]:.3g})")
    ginv = np.linalg.inv(g)
    return FermiExpansion(curve=curve, t=curve.t, z=z, speed2=A, h=h, k=K, ell=ell, metric=g, dmetric=dg,
                          inverse=ginv, volume_factor=np.sqrt(a2), dspeed2=dA)


@dataclass(frozen=True)
class CorrectionOperator:
    """Coefficients of ``D = Δ - Δ_ḡ`` written as ``c^{ab} ∂_a ∂_b + d^a ∂_a``.

    ``second_order`` is ``g^{ab} - ḡ^{ab}`` and ``first_order`` is
    ``b^a - b̄^a`` with ``b^a = (1/√G) ∂_c(√G g^{ca})``.  Every
    second-order coefficient vanishes at ``z = 0``; the zz block equals
    ``β β^T / γ`` (β the t-z cross terms) and therefore vanishes exactly
    when the frame is untwisted (``ell = 0``).
    """

    expansion: FermiExpansion
    second_order: np.ndarray
    first_order: np.ndarray
    full_first_order: np.ndarray
    bar_first_order: np.ndarray

    @property
    def zz_defect(self) -> float:
        return float(np.max(np.abs(self.second_order[..., 1:, 1:]), initial=0.0))

    def linear_parts(self):
        """Split the second-order coefficients as ``Σ z_i D2_i + O(|z|^2)``.

        Returns ``(D2, D1)`` where ``D2[t, i, a, b]`` is the z_i-derivative of
        ``c^{ab}`` at ``z = 0`` (estimated from the fiber samples by least
        squares) and ``D1`` is ``first_order``.
        """
        z = self.expansion.z
        c = self.second_order.reshape(self.second_order.shape[:2] + (-1,))
        D2 = np.einsum("ij,tjq->tiq", np.linalg.pinv(z), c)
        d = self.expansion.dim
        return D2.reshape(D2.shape[:2] + (d, d)), self.first_order

    def apply(self, df: np.ndarray, d2f: np.ndarray) -> np.ndarray:
        """``D f`` from first derivatives ``df[..., a]`` and second derivatives ``d2f[..., a, b]``."""
        return np.einsum("...ab,...ab->...", self.second_order, d2f) + np.einsum("...a,...a->...", self.first_order, df)


def laplacian_split(exp: FermiExpansion) -> CorrectionOperator:
    """Coefficient fields of the correction ``D`` in ``Δ = Δ_g̊ + Δ_{g_z} + D``."""
    g_inv, dg = exp.inverse, exp.dmetric
    det = np.linalg.det(exp.metric)
    if not np.all(np.isfinite(g_inv)) or np.any(det <= 0):
        raise SingularMetric("metric is not positive definite on the grid")
    # ∂_c g^{ab} = -g^{ae} ∂_c g_ef g^{fb}
    dginv = -np.einsum("...ae,...cef,...fb->...cab", g_inv, dg, g_inv)
    dlog = 0.5 * np.einsum("...ab,...cab->...c", g_inv, dg)
    b = np.einsum("...cca->...a", dginv) + np.einsum("...ca,...c->...a", g_inv, dlog)
    A, dA = exp.speed2, exp.dspeed2
    d = exp.dim
    bar_inv = np.zeros_like(g_inv)
    bar_inv[..., 0, 0] = (1.0 / A)[:, None]
    bar_inv[..., 1:, 1:] = np.eye(d - 1)
    bbar = np.zeros_like(b)
    bbar[..., 0] = (-0.5 * dA / A**2)[:, None]
    return CorrectionOperator(expansion=exp, second_order=g_inv - bar_inv, first_order=b - bbar,
                              full_first_order=b, bar_first_order=bbar)


def laplacian_from_derivatives(op: CorrectionOperator, df: np.ndarray, d2f: np.ndarray):
    """Return ``(Δf, Δ_ḡ f, D f)`` from supplied coordinate derivatives of f."""
    exp = op.expansion
    full = np.einsum("...ab,...ab->...", exp.inverse, d2f) + np.einsum("...a,...a->...", op.full_first_order, df)
    bar_inv = exp.inverse - op.second_order
    bar = np.einsum("...ab,...ab->...", bar_inv, d2f) + np.einsum("...a,...a->...", op.bar_first_order, df)
    return full, bar, op.apply(df, d2f)


def grid_derivatives(exp: FermiExpansion, values: np.ndarray):
    """Coordinate derivatives of a field on a ``t x z`` grid with uniform 1-D fiber.

    t-derivatives are spectral; z-derivatives are second-order central
    differences with second-order one-sided stencils at the two ends.
    """
    if exp.n != 1:
        raise GridMismatch("grid derivatives need a one-dimensional fiber grid")
    values = np.asarray(values, dtype=float)
    if values.shape != exp.shape:
        raise GridMismatch(f"field shape {values.shape} differs from grid {exp.shape}")
    z = exp.z[:, 0]
    dz = np.diff(z)
    if not np.allclose(dz, dz[0], rtol=1e-9):
        raise GridMismatch("fiber grid must be uniform")
    hz = dz[0]
    P = exp.curve.period
    ft = spectral_derivative(values, P)
    ftt = spectral_derivative(values, P, order=2)
    fz = np.gradient(values, hz, axis=1, edge_order=2)
    fzz = np.empty_like(values)
    fzz[:, 1:-1] = (values[:, 2:] - 2 * values[:, 1:-1] + values[:, :-2]) / hz**2
    fzz[:, 0] = (2 * values[:, 0] - 5 * values[:, 1] + 4 * values[:, 2] - values[:, 3]) / hz**2
    fzz[:, -1] = (2 * values[:, -1] - 5 * values[:, -2] + 4 * values[:, -3] - values[:, -4]) / hz**2
    ftz = spectral_derivative(fz, P)
    df = np.stack([ft, fz], axis=-1)
    d2f = np.empty(values.shape + (2, 2))
    d2f[..., 0, 0] = ftt
    d2f[..., 1, 1] = fzz
    d2f[..., 0, 1] = d2f[..., 1, 0] = ftz
    return df, d2f


def apply_laplacian(exp: FermiExpansion, values: np.ndarray, op: CorrectionOperator | None = None):
    """Euclidean Laplacian of a grid field through the Fermi coordinate formula.

    Returns ``(Δf, Δ_ḡ f, D f)``; the first equals the sum of the other two
    up to rounding.
    """
    op = op or laplacian_split(exp)
    df, d2f = grid_derivatives(exp, values)
    return laplacian_from_derivatives(op, df, d2f)


def ambient_points(exp: FermiExpansion) -> np.ndarray:
    """Ambient coordinates ``x = Y(t) + z_i e^i(t)`` on the grid, shape ``(nt, nz, m)``."""
    c = exp.curve
    return c.Y[:, None, :] + np.einsum("zi,tim->tzm", exp.z, c.frame)


def dump_field_csv(exp: FermiExpansion, values: np.ndarray, path, header: str | None = None) -> Path:
    """Write a coefficient field as rows ``t,z1[,z2...],value``."""
    values = np.asarray(values)
    if values.shape != exp.shape:
        raise GridMismatch(f"field shape {values.shape} differs from grid {exp.shape}")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["t"] + [f"z{i + 1}" for i in range(exp.n)] + ["value"])
        for a, t in enumerate(exp.t):
            for b in range(exp.z.shape[0]):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in exp.z[b]] + [repr(float(values[a, b]))])
    return path
