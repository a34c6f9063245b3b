"""Model eigenvalue lattice ``μ_i/ε² + λ_j``: resonances, gaps, admissible
epsilon sets, Morse counting and eigenvalue-branch derivatives."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import BranchCrossing, EmptyWindow, OnResonance, RangeExceeded
from .manifold import ManifoldSpectrum
from .radial import ModeSpectrum

__all__ = [
    "FiberData",
    "LatticePoint",
    "Resonance",
    "ResonanceReport",
    "KatoReport",
    "fiber_data",
    "lattice_eigenvalues",
    "resonance_set",
    "morse_index_model",
    "spectral_gap",
    "admissible_intervals",
    "admissible_set",
    "density_defect",
    "off_resonance_points",
    "kato_check",
    "model_family",
    "fit_loglog",
    "write_resonances_csv",
    "write_intervals_csv",
]

RESONANCE_TOL = 1e-10


@dataclass(frozen=True)
class FiberData:
    """Distinct fiber eigenvalues with multiplicities, complete strictly below ``complete_below``."""

    values: np.ndarray
    multiplicities: np.ndarray
    complete_below: float

    @property
    def mu0(self) -> float:
        return float(self.values[0])


def fiber_data(fiber) -> FiberData:
    """Normalize a fiber spectrum given as ModeSpectrum list, FiberData or array.

    For a ModeSpectrum list the completeness bound is the smallest last
    eigenvalue over the supplied modes; the caller is responsible for
    including enough angular modes.
    """
    if isinstance(fiber, FiberData):
        return fiber
    if isinstance(fiber, (list, tuple)) and fiber and isinstance(fiber[0], ModeSpectrum):
        vals, mult = [], []
        bound = math.inf
        for ms in fiber:
            vals.extend(ms.eigenvalues)
            mult.extend([ms.multiplicity] * len(ms.eigenvalues))
            bound = min(bound, float(ms.eigenvalues[-1]))
        order = np.argsort(vals)
        return FiberData(np.asarray(vals)[order], np.asarray(mult)[order], bound)
    arr = np.sort(np.asarray(fiber, dtype=float))
    vals, mult = np.unique(arr, return_counts=True)
    return FiberData(vals, mult, float(arr[-1]) if arr.size > 1 else math.inf)


def _distinct_base(spec: ManifoldSpectrum):
    vals, mult = spec.distinct()
    return vals, mult


@dataclass(frozen=True)
class LatticePoint:
    i: int
    j: int
    mu: float
    lam: float
    multiplicity: int

    def value(self, eps: float) -> float:
        return self.mu / eps**2 + self.lam

    def derivative(self, eps: float) -> float:
        return -2.0 * self.mu / eps**3


def lattice_eigenvalues(fiber, manifold: ManifoldSpectrum, eps: float, cutoff: float):
    """All lattice points with ``μ_i/ε² + λ_j < cutoff``, sorted by value.

    ``i`` and ``j`` index the distinct fiber and base eigenvalues.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    fd = fiber_data(fiber)
    lam, lmult = _distinct_base(manifold)
    out = []
    for i, (mu, fm) in enumerate(zip(fd.values, fd.multiplicities)):
        base = mu / eps**2
        if base >= cutoff:
            continue
        if cutoff - base >= manifold.next_value:
            raise RangeExceeded(f"base spectrum ends at {manifold.next_value:.6g}; need values up to {cutoff - base:.6g}")
        for j, (l, lm) in enumerate(zip(lam, lmult)):
            if base + l < cutoff:
                out.append(LatticePoint(i, j, float(mu), float(l), int(fm * lm)))
    if cutoff * eps**2 >= fd.complete_below:
        raise RangeExceeded(f"fiber spectrum is complete only below {fd.complete_below:.6g}")
    out.sort(key=lambda pt: (pt.value(eps), pt.i, pt.j))
    return out


@dataclass(frozen=True)
class Resonance:
    eps_star: float
    j: int
    lam: float
    multiplicity: int


def resonance_set(fiber, manifold: ManifoldSpectrum, eps_min: float, eps_max: float):
    """Resonances ``ε* = sqrt(-μ_i / λ_j)`` in ``[eps_min, eps_max]``, sorted descending."""
    fd = fiber_data(fiber)
    lam, lmult = _distinct_base(manifold)
    negative = fd.values[fd.values < 0]
    if negative.size == 0:
        return []
    need = -negative.min() / eps_min**2
    if need >= manifold.next_value:
        raise RangeExceeded(f"resonances down to eps={eps_min} need λ up to {need:.6g}; spectrum ends at {manifold.next_value:.6g}")
    out = []
    for mu in negative:
        for j, (l, lm) in enumerate(zip(lam, lmult)):
            if l <= 0:
                continue
            e = math.sqrt(-mu / l)
            if eps_min <= e <= eps_max:
                out.append(Resonance(e, j, float(l), int(lm)))
    out.sort(key=lambda r: -r.eps_star)
    return out


def _check_range(fd: FiberData, manifold: ManifoldSpectrum, eps: float):
    if -fd.mu0 / eps**2 >= manifold.next_value:
        raise RangeExceeded(f"eps={eps} needs base eigenvalues beyond {manifold.next_value:.6g}")


def _nearest_values(fd: FiberData, manifold: ManifoldSpectrum, eps: float):
    lam, lmult = _distinct_base(manifold)
    vals, mults = [], []
    for mu, fm in zip(fd.values, fd.multiplicities):
        v = mu / eps**2 + lam
        vals.append(v)
        mults.append(fm * lmult)
    return np.concatenate(vals), np.concatenate(mults)


def morse_index_model(fiber, manifold: ManifoldSpectrum, eps: float) -> int:
    """``#{(i, j) : μ_i/ε² + λ_j < 0}`` counted with multiplicity."""
    fd = fiber_data(fiber)
    _check_range(fd, manifold, eps)
    vals, mults = _nearest_values(fd, manifold, eps)
    if np.min(np.abs(vals)) < RESONANCE_TOL / eps**2:
        raise OnResonance(f"eps={eps!r} is a resonance; perturb it")
    return int(np.sum(mults[vals < 0]))


def spectral_gap(fiber, manifold: ManifoldSpectrum, eps: float, strict: bool = False) -> float:
    """``min |μ_i/ε² + λ_j|`` over the lattice.

    Returns 0 at a resonance; with ``strict`` raises OnResonance instead.
    """
    fd = fiber_data(fiber)
    _check_range(fd, manifold, eps)
    vals, _ = _nearest_values(fd, manifold, eps)
    gap = float(np.min(np.abs(vals)))
    # the first uncomputed base value may lie closer to zero than any computed one
    gap = min(gap, abs(fd.mu0 / eps**2 + manifold.next_value))
    if strict and gap < RESONANCE_TOL / eps**2:
        raise OnResonance(f"eps={eps!r} is a resonance")
    return gap


# -- admissible set -------------------------------------------------------------


def _merge(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [tuple(iv) for iv in out]


def admissible_intervals(resonances: Sequence[float], N: float, eps_max: float, eps_min: float,
                         windows=None):
    """Intervals of ``S_N ∩ [eps_min, eps_max]`` and the list of windows used.

    Windows default to ``(eps_max 2^{-l-1}, eps_max 2^{-l}]``; inside a
    window with left endpoint ``e`` every point within ``e^N`` of a
    resonance is removed.  Raises EmptyWindow when a window is fully removed.
    """
    res = np.sort(np.asarray(list(resonances), dtype=float))
    if windows is None:
        windows = []
        hi = eps_max
        while hi > eps_min:
            windows.append((hi / 2, hi))
            hi /= 2
    kept = []
    for lo, hi in windows:
        r = lo**N
        cut = _merge([(x - r, x + r) for x in res if lo - r < x < hi + r])
        a = max(lo, eps_min)
        pieces = []
        for c0, c1 in cut:
            if c1 <= a:
                continue
            if c0 >= hi:
                break
            if c0 > a:
                pieces.append((a, c0))
            a = max(a, c1)
        if a < hi:
            pieces.append((a, hi))
        if not pieces and hi > eps_min:
            raise EmptyWindow(f"window ({lo:.6g}, {hi:.6g}] is entirely excluded at N={N}")
        kept.extend(pieces)
    return _merge(kept), list(windows)


def _measure_below(intervals, eps: float) -> float:
    return sum(max(0.0, min(hi, eps) - lo) for lo, hi in intervals if lo < eps)


def density_defect(intervals, eps_min: float, eps) -> np.ndarray:
    """Excluded measure in ``[eps_min, eps]``: ``(eps - eps_min) - meas(S_N ∩ [eps_min, eps])``."""
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    return np.array([(e - eps_min) - _measure_below(intervals, e) for e in eps])


@dataclass
class ResonanceReport:
    resonances: list
    admissible: list
    N: float
    eps_min: float
    eps_max: float
    windows: list = field(default_factory=list)
    gap_samples: np.ndarray | None = None
    defect_samples: np.ndarray | None = None
    sample_eps: np.ndarray | None = None

    def defect(self, eps) -> np.ndarray:
        return density_defect(self.admissible, self.eps_min, eps)

    def contains(self, eps: float) -> bool:
        return any(lo < eps <= hi for lo, hi in self.admissible)


def admissible_set(fiber, manifold: ManifoldSpectrum, N: float, eps_max: float = 1.0, eps_min: float = 1e-3,
                   samples: int = 40, resonances=None, windows=None) -> ResonanceReport:
    """Build ``S_N`` on ``[eps_min, eps_max]`` together with sampled gap and defect.

    ``resonances`` may be supplied directly (a list of floats) to bypass
    the lattice.
    """
    if resonances is None:
        res = resonance_set(fiber, manifold, 0.99 * eps_min, 2 * eps_max)
        rvals = [r.eps_star for r in res]
    else:
        res = list(resonances)
        rvals = [float(r) for r in res]
    intervals, used = admissible_intervals(rvals, N, eps_max, eps_min, windows=windows)
    xs = np.geomspace(max(eps_min, intervals[0][0] if intervals else eps_min), eps_max, samples)
    defect = density_defect(intervals, eps_min, xs)
    gaps = None
    if fiber is not None and manifold is not None:
        gaps = np.array([spectral_gap(fiber, manifold, x) for x in xs])
    shown = [r for r in res if not isinstance(r, Resonance) or eps_min <= r.eps_star <= eps_max]
    return ResonanceReport(resonances=shown, admissible=intervals, N=N, eps_min=eps_min, eps_max=eps_max,
                           windows=used, gap_samples=gaps, defect_samples=defect, sample_eps=xs)


def off_resonance_points(resonances: Sequence[float], eps_lo: float, eps_hi: float, count: int,
                         spacing: str = "log") -> np.ndarray:
    """``count`` log- or linearly spaced points, each moved to the midpoint of its resonance gap.

    Gaps are clipped to ``[eps_lo, eps_hi]`` first, so every point stays in range.
    """
    res = np.sort(np.asarray(list(resonances), dtype=float))
    grid = np.geomspace(eps_lo, eps_hi, count) if spacing == "log" else np.linspace(eps_lo, eps_hi, count)
    out = []
    for e in grid:
        k = np.searchsorted(res, e)
        if 0 < k < res.size:
            e = 0.5 * (max(res[k - 1], eps_lo) + min(res[k], eps_hi))
        out.append(e)
    return np.array(out)


def fit_loglog(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    slope, _ = np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)
    return float(slope)


# -- Kato eigenvalue derivative ------------------------------------------------


@dataclass(frozen=True)
class KatoReport:
    eps: float
    branch: int
    eigenvalue: float
    derivative: float
    scaled_constant: float
    overlap: float
    isolation: float
    model_derivative: float | None = None

    @property
    def relative_error(self) -> float | None:
        if self.model_derivative is None:
            return None
        return abs(self.derivative - self.model_derivative) / abs(self.model_derivative)


def kato_check(family: Callable, eps: float, branch: int = 0, branch_tolerance: float = 0.05,
               step: float | None = None, model_mu: float | None = None) -> KatoReport:
    """Centered finite difference of one eigenvalue branch of ``ε ↦ L̃_ε``.

    ``family(eps)`` returns ``(values, vectors, weights)`` for the lowest
    eigenpairs on a fixed rescaled grid (vectors as columns, weights the
    quadrature weights of the inner product, or None).  The branch at
    ``eps ± step`` is the eigenvector with the largest overlap with the
    central one; it must exceed ``1 - branch_tolerance`` and the central
    eigenvalue must be separated from its neighbours, else BranchCrossing.
    """
    h = step if step is not None else 1e-4 * eps
    vals, vecs, w = family(eps)
    nu = float(vals[branch])
    neighbours = [abs(vals[k] - nu) for k in (branch - 1, branch + 1) if 0 <= k < len(vals)]
    isolation = min(neighbours) if neighbours else math.inf
    center = vecs[:, branch]
    picked, worst = [], 1.0
    for e in (eps - h, eps + h):
        v2, V2, w2 = family(e)
        ww = np.ones(center.size) if w2 is None else w2
        ov = np.abs(V2.T @ (ww * center))
        ov /= math.sqrt(float(center @ (ww * center))) * np.sqrt(np.einsum("ik,i,ik->k", V2, ww, V2))
        k = int(np.argmax(ov))
        worst = min(worst, float(ov[k]))
        if ov[k] < 1 - branch_tolerance:
            raise BranchCrossing(f"branch {branch} not trackable at eps={e:.6g} (overlap {ov[k]:.3f})")
        picked.append(float(v2[k]))
    if isolation < abs(picked[1] - picked[0]):
        raise BranchCrossing(f"branch {branch} is not isolated at eps={eps:.6g}")
    d = (picked[1] - picked[0]) / (2 * h)
    model = None if model_mu is None else -2.0 * model_mu / eps**3
    return KatoReport(eps=eps, branch=branch, eigenvalue=nu, derivative=float(d), scaled_constant=float(d * eps**3),
                      overlap=worst, isolation=float(isolation), model_derivative=model)


def model_family(fiber, manifold: ManifoldSpectrum, count: int = 8) -> Callable:
    """The model operator as an eps-family: its lowest ``count`` lattice points at the base eps.

    Eigenvectors are the lattice basis vectors, fixed along the family, so
    branches are tracked by identity.
    """
    fd = fiber_data(fiber)
    lam, _ = _distinct_base(manifold)
    pairs = [(mu, l) for mu in fd.values[:2] for l in lam[:count]]

    def family(eps):
        vals = np.array([mu / eps**2 + l for mu, l in pairs])
        order = np.argsort(vals, kind="stable")
        V = np.eye(len(pairs))[:, order]
        return vals[order], V, None

    family.pairs = pairs
    return family


def write_resonances_csv(resonances, path, header: str | None = None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["eps_star", "j"])
        for r in resonances:
            w.writerow([repr(float(r.eps_star)), r.j])
    return path


def write_intervals_csv(intervals, path, header: str | None = None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        w = csv.writer(fh)
        w.writerow(["left", "right"])
        for lo, hi in intervals:
            w.writerow([repr(float(lo)), repr(float(hi))])
    return path
