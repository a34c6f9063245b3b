"""Base manifolds: closed-form Laplace-Beltrami spectra and framed closed curves."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.linalg import expm, logm
from scipy.special import comb, gamma

from .errors import DegenerateTangent, NonClosedCurve, RangeExceeded, UnsupportedFamily

__all__ = [
    "Circle",
    "FlatTorus",
    "Sphere",
    "NumericCurve",
    "ManifoldSpectrum",
    "EmbeddedCurve",
    "model_spectrum",
    "weyl_count",
    "weyl_exponent",
    "build_frame",
    "circle_curve",
    "ellipse_curve",
    "straight_line",
    "spectral_derivative",
    "read_curve_csv",
    "write_spectrum_csv",
]


@dataclass(frozen=True)
class Circle:
    R: float = 1.0


@dataclass(frozen=True)
class FlatTorus:
    lengths: tuple = (2 * math.pi,)


@dataclass(frozen=True)
class Sphere:
    k: int = 2
    R: float = 1.0


@dataclass(frozen=True)
class NumericCurve:
    curve: "EmbeddedCurve"


Family = Union[Circle, FlatTorus, Sphere, NumericCurve]


@dataclass(frozen=True)
class ManifoldSpectrum:
    """First ``count`` eigenvalues of ``-Δ`` on Λ, repeated by multiplicity.

    ``next_value`` is the eigenvalue that would come at position ``count``;
    counting functions are exact strictly below it.
    """

    dim: int
    family: object
    eigenvalues: np.ndarray
    next_value: float
    weyl_constant: float
    volume: float

    @property
    def count(self) -> int:
        return self.eigenvalues.size

    def distinct(self):
        """Distinct values and their multiplicities within the computed list."""
        vals, mult = np.unique(np.round(self.eigenvalues, 12), return_counts=True)
        # np.unique on rounded values; recover exact representatives
        reps = np.array([self.eigenvalues[np.argmin(np.abs(self.eigenvalues - v))] for v in vals])
        return reps, mult


def _unit_ball_volume(k: int) -> float:
    return math.pi ** (k / 2) / gamma(k / 2 + 1)


def _torus_values(lengths, need: int) -> np.ndarray:
    lengths = np.asarray(lengths, dtype=float)
    k = lengths.size
    cutoff = 4.0 * (2 * math.pi / lengths.min()) ** 2
    while True:
        bounds = [int(math.floor(L * math.sqrt(cutoff) / (2 * math.pi))) for L in lengths]
        axes = [np.arange(-b, b + 1) for b in bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        lam = sum((2 * math.pi * xi / L) ** 2 for xi, L in zip(mesh, lengths)).ravel()
        lam = np.sort(lam[lam <= cutoff])
        if lam.size >= need:
            return lam[:need]
        cutoff *= 2.0


def _sphere_values(k: int, R: float, need: int) -> np.ndarray:
    out = []
    ell = 0
    while len(out) < need:
        mult = int(comb(ell + k, k, exact=True) - comb(ell + k - 2, k, exact=True))
        out.extend([ell * (ell + k - 1) / R**2] * mult)
        ell += 1
    return np.array(out[:need])


def model_spectrum(family: Family, count: int) -> ManifoldSpectrum:
    """Eigenvalues of the Laplace-Beltrami operator for a built-in family.

    circle of radius R: ``(j/R)^2`` (multiplicity 2 for j >= 1); flat torus
    ``R^k / (L_1 Z x ... x L_k Z)``: ``sum (2π ξ_a / L_a)^2`` over the dual
    lattice; round sphere ``S^k`` of radius R: ``ℓ(ℓ+k-1)/R^2``.  A numeric
    closed curve has the spectrum of the circle with the same length.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    need = count + 1
    if isinstance(family, NumericCurve):
        return _with_family(model_spectrum(Circle(family.curve.length / (2 * math.pi)), count), family)
    if isinstance(family, Circle):
        R = float(family.R)
        j = np.arange(need)
        vals = np.sort(np.concatenate([[0.0], np.repeat((j[1:] / R) ** 2, 2)]))[:need]
        dim, vol = 1, 2 * math.pi * R
    elif isinstance(family, FlatTorus):
        vals = _torus_values(family.lengths, need)
        dim, vol = len(family.lengths), float(np.prod(family.lengths))
    elif isinstance(family, Sphere):
        k, R = int(family.k), float(family.R)
        vals = _sphere_values(k, R, need)
        dim = k
        vol = (k + 1) * _unit_ball_volume(k + 1) * R**k
    else:
        raise UnsupportedFamily(f"unsupported manifold family {family!r}")
    weyl = _unit_ball_volume(dim) * vol / (2 * math.pi) ** dim
    return ManifoldSpectrum(dim=dim, family=family, eigenvalues=vals[:count], next_value=float(vals[count]),
                            weyl_constant=weyl, volume=vol)


def _with_family(spec: ManifoldSpectrum, family) -> ManifoldSpectrum:
    return ManifoldSpectrum(dim=spec.dim, family=family, eigenvalues=spec.eigenvalues,
                            next_value=spec.next_value, weyl_constant=spec.weyl_constant, volume=spec.volume)


def weyl_count(spec: ManifoldSpectrum, lam: float) -> int:
    """Number of eigenvalues ``<= lam`` counted with multiplicity."""
    if lam >= spec.next_value:
        raise RangeExceeded(f"lambda={lam!r} reaches the uncomputed tail (next eigenvalue {spec.next_value!r})")
    return int(np.searchsorted(spec.eigenvalues, lam, side="right"))


def weyl_exponent(spec: ManifoldSpectrum, lam_lo: float, lam_hi: float, samples: int = 40) -> float:
    """Least-squares slope of log N(λ) against log λ on a log-spaced λ grid."""
    lams = np.geomspace(lam_lo, lam_hi, samples)
    counts = np.array([weyl_count(spec, x) for x in lams], dtype=float)
    slope, _ = np.polyfit(np.log(lams), np.log(counts), 1)
    return float(slope)


# -- closed curves -------------------------------------------------------------------


def spectral_derivative(values: np.ndarray, period: float, order: int = 1) -> np.ndarray:
    """Fourier derivative along axis 0 of samples on a uniform periodic grid.

    The Nyquist coefficient is dropped for even sample counts.
    """
    N = values.shape[0]
    k = np.fft.fftfreq(N, d=period / (2 * math.pi * N))
    mult = (1j * k) ** order
    if N % 2 == 0:
        mult[N // 2] = 0.0
    shape = (N,) + (1,) * (values.ndim - 1)
    return np.real(np.fft.ifft(mult.reshape(shape) * np.fft.fft(values, axis=0), axis=0))


@dataclass(frozen=True)
class EmbeddedCurve:
    """Closed curve ``t ↦ Y(t)`` in R^m sampled on a uniform periodic grid.

    ``frame[:, i]`` is the normal vector ``e^{i+1}`` and ``dframe`` its
    t-derivative; ``dY`` is ``Y'``.  ``translation_periodic`` marks a
    straight segment whose ends are identified by a translation (the flat
    control tube), in which case ``Y`` itself is not periodic.
    """

    t: np.ndarray
    period: float
    Y: np.ndarray
    dY: np.ndarray
    frame: np.ndarray
    dframe: np.ndarray
    holonomy_angle: float = 0.0
    translation_periodic: bool = False

    @property
    def m(self) -> int:
        return self.Y.shape[1]

    @property
    def n(self) -> int:
        return self.m - 1

    @property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.dY, axis=1)

    @property
    def length(self) -> float:
        return float(np.sum(self.speed) * self.period / self.t.size)

    def check_frame(self) -> float:
        """Largest violation of orthonormality, normality and closure."""
        E = self.frame
        gram = np.einsum("kim,kjm->kij", E, E) - np.eye(self.n)[None]
        normal = np.einsum("kim,km->ki", E, self.dY) / self.speed[:, None]
        return float(max(np.max(np.abs(gram)), np.max(np.abs(normal))))


def _double_reflection(Y: np.ndarray, T: np.ndarray, E0: np.ndarray) -> np.ndarray:
    """Rotation-minimizing transport of the normal frame ``E0`` around the samples.

    Returns an array of shape ``(N + 1, n, m)``; the last entry is the frame
    transported back to the first sample.
    """
    N = Y.shape[0]
    frames = np.empty((N + 1,) + E0.shape)
    frames[0] = E0
    for j in range(N):
        jn = (j + 1) % N
        v1 = Y[jn] - Y[j]
        c1 = v1 @ v1
        E = frames[j]
        EL = E - (2.0 / c1) * np.outer(E @ v1, v1)
        TL = T[j] - (2.0 / c1) * (v1 @ T[j]) * v1
        v2 = T[jn] - TL
        c2 = v2 @ v2
        if c2 > 0:
            EL = EL - (2.0 / c2) * np.outer(EL @ v2, v2)
        frames[j + 1] = EL
    return frames


def build_frame(samples, period: float = 2 * math.pi, closure_factor: float = 3.0) -> EmbeddedCurve:
    """Smooth periodic orthonormal normal frame for a closed sampled curve.

    ``samples`` has shape ``(N, m)`` at uniform parameters ``t_j = j T / N``;
    a repeated closing sample is dropped.  For ``m = 2`` the frame is the
    tangent rotated clockwise.  For ``m >= 3`` a rotation-minimizing frame is
    transported by double reflection and its end-to-end holonomy ``H`` is
    removed by the rotation ``exp(-s log H)`` applied at arclength fraction
    ``s``.
    """
    Y = np.array(samples, dtype=float)
    if Y.ndim != 2 or Y.shape[1] < 2:
        raise ValueError("samples must have shape (N, m) with m >= 2")
    steps = np.linalg.norm(np.diff(Y, axis=0), axis=1)
    scale = float(np.median(steps))
    if np.linalg.norm(Y[-1] - Y[0]) < 1e-12 * max(scale, 1.0):
        Y = Y[:-1]
        steps = steps[:-1]
    gap = np.linalg.norm(Y[-1] - Y[0])
    if gap > closure_factor * scale:
        raise NonClosedCurve(f"endpoint gap {gap:.3g} exceeds {closure_factor} x sample spacing {scale:.3g}")
    N, m = Y.shape
    t = np.arange(N) * period / N
    dY = spectral_derivative(Y, period)
    speed = np.linalg.norm(dY, axis=1)
    if np.any(speed < 1e-10 * max(np.max(speed), 1e-300)):
        raise DegenerateTangent(f"|Y'| vanishes near t = {t[np.argmin(speed)]:.6g}")
    T = dY / speed[:, None]
    n = m - 1
    holonomy = 0.0
    if m == 2:
        E = np.stack([T[:, 1], -T[:, 0]], axis=1)[:, None, :]
    else:
        basis = np.eye(m)
        order = np.argsort(np.abs(basis @ T[0]))
        E0 = []
        for idx in order:
            v = basis[idx] - (basis[idx] @ T[0]) * T[0]
            for w in E0:
                v = v - (v @ w) * w
            if np.linalg.norm(v) > 1e-8:
                E0.append(v / np.linalg.norm(v))
            if len(E0) == n:
                break
        E0 = np.array(E0)
        frames = _double_reflection(Y, T, E0)
        # holonomy: E_end = H^T E0 expressed in the initial frame
        H = frames[-1] @ E0.T
        U, _, Vt = np.linalg.svd(H)
        H = U @ Vt
        if np.linalg.det(H) < 0:
            raise NonClosedCurve("transported frame reverses orientation")
        G = np.real(logm(H))
        G = 0.5 * (G - G.T)
        holonomy = float(np.linalg.norm(G) / math.sqrt(2.0))
        arclen = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(Y, axis=0), axis=1))])
        total = arclen[-1] + np.linalg.norm(Y[0] - Y[-1])
        E = np.empty((N, n, m))
        for j in range(N):
            E[j] = expm(-(arclen[j] / total) * G).T @ frames[j]
            E[j] = _reorthonormalize(E[j], T[j])
    dE = spectral_derivative(E, period)
    return EmbeddedCurve(t=t, period=period, Y=Y, dY=dY, frame=E, dframe=dE, holonomy_angle=holonomy)


def _reorthonormalize(E: np.ndarray, T: np.ndarray) -> np.ndarray:
    E = E - np.outer(E @ T, T)
    q, r = np.linalg.qr(E.T)
    return (q * np.sign(np.diag(r))).T


def circle_curve(R: float = 1.0, m: int = 2, n_samples: int = 129) -> EmbeddedCurve:
    """Planar circle of radius R in the x1-x2 plane of R^m, arclength parameter.

    ``e^1`` is the outward radial unit vector, the remaining normals are the
    constant coordinate vectors ``x_3, ..., x_m``; this frame is rotation
    minimizing with zero holonomy.
    """
    if m < 2:
        raise ValueError("m must be at least 2")
    period = 2 * math.pi * R
    s = np.arange(n_samples) * period / n_samples
    th = s / R
    Y = np.zeros((n_samples, m))
    Y[:, 0], Y[:, 1] = R * np.cos(th), R * np.sin(th)
    dY = np.zeros_like(Y)
    dY[:, 0], dY[:, 1] = -np.sin(th), np.cos(th)
    E = np.zeros((n_samples, m - 1, m))
    dE = np.zeros_like(E)
    E[:, 0, 0], E[:, 0, 1] = np.cos(th), np.sin(th)
    dE[:, 0, 0], dE[:, 0, 1] = -np.sin(th) / R, np.cos(th) / R
    for i in range(1, m - 1):
        E[:, i, i + 1] = 1.0
    return EmbeddedCurve(t=s, period=period, Y=Y, dY=dY, frame=E, dframe=dE)


def ellipse_curve(a: float, b: float, n_samples: int = 129) -> EmbeddedCurve:
    """Ellipse ``(a cos θ, b sin θ)`` in the plane, framed by :func:`build_frame`."""
    th = np.arange(n_samples) * 2 * math.pi / n_samples
    return build_frame(np.stack([a * np.cos(th), b * np.sin(th)], axis=1), period=2 * math.pi)


def straight_line(length: float = 2 * math.pi, m: int = 2, n_samples: int = 129) -> EmbeddedCurve:
    """Straight segment of the given length with ends identified by translation.

    This is the zero-curvature control: its tube is a flat product and the
    Fermi metric equals the product metric exactly.
    """
    s = np.arange(n_samples) * length / n_samples
    Y = np.zeros((n_samples, m))
    Y[:, 0] = s
    dY = np.zeros_like(Y)
    dY[:, 0] = 1.0
    E = np.zeros((n_samples, m - 1, m))
    for i in range(m - 1):
        E[:, i, i + 1] = 1.0
    return EmbeddedCurve(t=s, period=length, Y=Y, dY=dY, frame=E, dframe=np.zeros_like(E),
                         translation_periodic=True)


def read_curve_csv(path, period: float | None = None) -> EmbeddedCurve:
    """Read samples from a ``t,x1,...,xm`` CSV file and frame them.

    The parameter column must be uniform; the period defaults to
    ``N * (t_1 - t_0)``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if header[0] != "t" or any(h != f"x{i + 1}" for i, h in enumerate(header[1:])):
            raise ValueError(f"unexpected curve header {header}")
        rows = np.array([[float(x) for x in row] for row in reader if row])
    t, Y = rows[:, 0], rows[:, 1:]
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
        raise ValueError("curve parameter must be uniformly spaced")
    if period is None:
        period = dt[0] * t.size
    return build_frame(Y, period=period)


def write_spectrum_csv(spec: ManifoldSpectrum, path, header: str | None = None) -> Path:
    """Write ``index,eigenvalue,multiplicity`` rows, one per distinct eigenvalue."""
    vals, mult = spec.distinct()
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue", "multiplicity"])
        for i, (v, k) in enumerate(zip(vals, mult)):
            w.writerow([i, repr(float(v)), int(k)])
    return path
