"""Lyapunov gauges rho, their sublevel sets, level-set volumes, the energy
supremum sup <sym(A) grad rho, grad rho>, and the martingale tail bound
3 * vol(U_{R+r}) * Erfc(r / sqrt(8 M(R+r) T)).

Bounding boxes for sublevel sets come from the gauge constructor (closed form
for the built-in families, bisection for sum gauges, a user rule for custom
gauges) and are probe-verified on the box faces rather than derived.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import special

from . import sampling
from .errors import ConstructionError, SamplingError
from .expr import ScalarField

__all__ = [
    "LyapunovGauge",
    "TailBoundCurve",
    "VolumeEstimate",
    "EnergyEstimate",
    "make_log_gauge",
    "make_sum_gauge",
    "make_custom_gauge",
    "estimate_volume",
    "estimate_sup_energy",
    "erfc",
    "martingale_tail_bound",
    "largest_passing_horizon",
]

LOG_GAUGE_VARIANTS = ("square-plus-1", "abs-plus-2", "square-plus-2")


def erfc(x):
    """Complementary error function, Erfc(0) = 1 normalization."""
    return special.erfc(x)


class LyapunovGauge:
    """A positive continuous gauge with gradient, sublevel-set bounding boxes
    and enough metadata to sample U_r = {rho < r}."""

    def __init__(self, field: ScalarField, halfwidths: Callable[[float], Optional[np.ndarray]],
                 min_value: float, describe: dict, grad_bound: Optional[float] = None):
        self.field = field
        self.dimension = field.dimension
        self._halfwidths = halfwidths
        self.min_value = float(min_value)
        self.describe = describe
        self.grad_bound = grad_bound
        self._probe()

    def value(self, points, check=True):
        return self.field.value(points, check=check)

    def gradient(self, points, check=True):
        return self.field.gradient(points, check=check)

    def bounding_box(self, r: float):
        """(lo, hi) box containing U_r, or (None, None) when U_r is empty."""
        w = self._halfwidths(float(r))
        if w is None:
            return None, None
        w = np.broadcast_to(np.asarray(w, dtype=float), (self.dimension,))
        if np.any(w <= 0.0):
            return None, None
        return -w, w

    def _probe(self):
        d = self.dimension
        # nonnegativity near the origin and growth to infinity along rays
        rays = np.vstack([np.eye(d), -np.eye(d)])
        radii = 10.0 ** np.arange(0, 7)
        vals = np.empty((rays.shape[0], radii.shape[0]))
        with np.errstate(all="ignore"):
            for i, s in enumerate(radii):
                vals[:, i] = self.value(rays * s, check=False)
        if np.any(np.diff(vals, axis=1) <= 0.0):
            raise ConstructionError(
                "gauge does not diverge: values are not increasing along radial probes")
        origin = float(self.value(np.zeros((1, d)), check=False)[0])
        if origin < -1e-12 or not np.isfinite(origin):
            raise ConstructionError("gauge is not nonnegative at the origin")
        # box containment: rho >= r on the faces of the declared box
        for r in (self.min_value + 0.7, self.min_value + 2.0):
            lo, hi = self.bounding_box(r)
            if lo is None:
                continue
            face = sampling.halton_in_box(128, lo, hi, ("gauge-probe", r))
            for axis in range(d):
                for s, bound in ((0, lo[axis]), (1, hi[axis])):
                    pts = face.copy()
                    pts[:, axis] = bound
                    v = self.value(pts, check=False)
                    if np.any(v < r - 1e-7):
                        raise ConstructionError(
                            f"declared bounding box for r={r} does not contain U_r "
                            f"(rho < r on a face, min {float(np.min(v)):.6g})")


def make_log_gauge(dimension: int, variant: str = "square-plus-1") -> LyapunovGauge:
    """Built-in logarithmic gauges: log(|x|^2+1), log(|x|+2), log(|x|^2+2)."""
    if dimension < 1:
        raise ValueError("dimension must be >= 1")
    if variant not in LOG_GAUGE_VARIANTS:
        raise ValueError(f"unknown log gauge variant {variant!r}; "
                         f"choose one of {LOG_GAUGE_VARIANTS}")

    if variant == "square-plus-1":
        offset, power, min_value = 1.0, 2, 0.0
    elif variant == "square-plus-2":
        offset, power, min_value = 2.0, 2, float(np.log(2.0))
    else:
        offset, power, min_value = 2.0, 1, float(np.log(2.0))

    def value(p):
        s = np.einsum("ij,ij->i", p, p)
        base = s if power == 2 else np.sqrt(s)
        return np.log(base + offset)

    def grad(p):
        s = np.einsum("ij,ij->i", p, p)
        if power == 2:
            return 2.0 * p / (s + offset)[:, None]
        norm = np.sqrt(s)
        factor = np.zeros_like(norm)
        nz = norm > 0.0
        factor[nz] = 1.0 / (norm[nz] * (norm[nz] + offset))
        return p * factor[:, None]

    def halfwidths(r):
        t = np.exp(r) - offset
        if t <= 0.0:
            return None
        return np.full(dimension, np.sqrt(t) if power == 2 else t)

    field = ScalarField(dimension, value, grad,
                        name=f"log(|x|{'^2' if power == 2 else ''}+{offset:g})", exact=True)
    return LyapunovGauge(field, halfwidths, min_value,
                         {"kind": "log", "variant": variant, "dimension": dimension})


def _axis_threshold(field1: ScalarField, threshold: float) -> float:
    """Smallest probe radius t with field1(+-t) >= threshold (bisection)."""
    with np.errstate(all="ignore"):
        for exponent in range(0, 301, 2):
            t = 10.0 ** exponent
            v = min(float(field1.value(np.array([[t]]), check=False)[0]),
                    float(field1.value(np.array([[-t]]), check=False)[0]))
            if v >= threshold:
                hi = t
                lo = 10.0 ** (exponent - 2) if exponent else 0.0
                break
        else:
            raise ConstructionError(
                f"level threshold {threshold:g} is never reached along the probe range")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            v = min(float(field1.value(np.array([[mid]]), check=False)[0]),
                    float(field1.value(np.array([[-mid]]), check=False)[0]))
            if v >= threshold:
                hi = mid
            else:
                lo = mid
    return hi


def make_sum_gauge(k: ScalarField, l: ScalarField, m: ScalarField) -> LyapunovGauge:
    """Separable 3-D gauge rho(x) = k(x1) + l(x2) + m(x3).

    Each 1-D profile must be positive with divergent tails (probe-verified;
    bounded profiles are rejected) and carry exact derivatives.  The
    constructor records sup |grad rho|^2 <= ||k'||^2 + ||l'||^2 + ||m'||^2
    estimated over a probe grid.
    """
    profiles = [k, l, m]
    for name, f in zip("klm", profiles):
        if f.dimension != 1:
            raise ConstructionError(f"{name} must be a 1-D field")
    probe_ts = np.concatenate([np.linspace(-1000.0, 1000.0, 4001),
                               [-10.0 ** e for e in range(1, 7)],
                               [10.0 ** e for e in range(1, 7)]])[:, None]
    minima = []
    sup_slopes = []
    for name, f in zip("klm", profiles):
        with np.errstate(all="ignore"):
            vals = f.value(probe_ts, check=False)
        if np.any(vals < 0.0) or not np.all(np.isfinite(vals)):
            raise ConstructionError(f"profile {name} is not positive on the probe grid")
        grid = 10.0 ** np.arange(0, 7)
        seq_pos = f.value(grid[:, None], check=False)
        seq_neg = f.value(-grid[:, None], check=False)
        if np.any(np.diff(seq_pos) <= 0.0) or np.any(np.diff(seq_neg) <= 0.0):
            raise ConstructionError(
                f"profile {name} does not diverge (bounded tail on radial probes); rejected")
        minima.append(float(np.min(vals)))
        sup_slopes.append(float(np.max(np.abs(f.gradient(probe_ts, check=False)))))
    grad_bound = float(sum(s ** 2 for s in sup_slopes))

    fields3 = [profiles[i].embed(i, 3) for i in range(3)]
    field = fields3[0] + fields3[1] + fields3[2]
    min_value = float(sum(minima))

    def halfwidths(r):
        if r <= min_value:
            return None
        w = np.empty(3)
        for i in range(3):
            thr = r - (sum(minima) - minima[i])
            w[i] = _axis_threshold(profiles[i], thr)
        return w

    return LyapunovGauge(field, halfwidths, min_value,
                         {"kind": "sum", "dimension": 3,
                          "profiles": [f.name for f in profiles]},
                         grad_bound=grad_bound)


def make_custom_gauge(field: ScalarField, halfwidth_rule: ScalarField,
                      min_value: Optional[float] = None) -> LyapunovGauge:
    """Custom gauge from a scalar field plus a user-declared cube half-width
    rule (a 1-D field of r).  The rule is probe-verified, not derived."""
    if halfwidth_rule.dimension != 1:
        raise ConstructionError("half-width rule must be a 1-D field of r")
    if min_value is None:
        probes = sampling.halton_in_box(
            4096, -10.0 * np.ones(field.dimension), 10.0 * np.ones(field.dimension),
            ("custom-gauge", "min"))
        min_value = float(np.min(field.value(probes, check=False)))

    def halfwidths(r):
        w = float(halfwidth_rule.value(np.array([[r]]), check=False)[0])
        if not np.isfinite(w) or w <= 0.0:
            return None
        return np.full(field.dimension, w)

    return LyapunovGauge(field, halfwidths, min_value,
                         {"kind": "custom", "expression": field.name,
                          "dimension": field.dimension})


# ---------------------------------------------------------------------------
# estimates


@dataclass
class VolumeEstimate:
    value: float
    stderr: float
    acceptance: float
    samples: int

    def __float__(self):
        return self.value


@dataclass
class EnergyEstimate:
    value: float
    percentile_999: float
    samples: int

    def __float__(self):
        return self.value


def estimate_volume(gauge: LyapunovGauge, r: float, samples: int,
                    seed_parts=(0,), domain=None) -> VolumeEstimate:
    """Monte Carlo volume of U_r (intersected with the domain): bounding-box
    volume times the acceptance fraction, with the binomial standard error."""
    lo, hi = gauge.bounding_box(r)
    if lo is None:
        return VolumeEstimate(0.0, 0.0, 0.0, 0)
    pts = sampling.halton_in_box(samples, lo, hi, (*seed_parts, "vol", round(r, 12)))
    mask = gauge.value(pts, check=False) < r
    if domain is not None:
        mask &= domain.contains(pts)
    acc = float(np.count_nonzero(mask)) / samples
    box_vol = float(np.prod(hi - lo))
    if acc == 0.0:
        raise SamplingError(f"volume estimate at r={r}: zero acceptance")
    stderr = box_vol * float(np.sqrt(acc * (1.0 - acc) / samples))
    return VolumeEstimate(box_vol * acc, stderr, acc, samples)


def estimate_sup_energy(sym_matrix, gauge: LyapunovGauge, r: float, samples: int,
                        seed_parts=(0,), domain=None) -> EnergyEstimate:
    """Sample maximum of <sym(A) grad rho, grad rho> over U_r.

    Samples are scrambled-Halton rejections from the bounding box, stratified
    over dyadically shrinking concentric sub-boxes so maxima near the origin
    are found even inside very large level sets.  Reported with the 99.9th
    percentile of the pooled sample energies.
    """
    if samples < 100:
        raise ValueError("samples must be >= 100")
    if r <= gauge.min_value:
        raise ValueError(f"r={r} is at or below inf rho = {gauge.min_value}")
    lo, hi = gauge.bounding_box(r)
    if lo is None:
        raise SamplingError(f"empty level set at r={r}")
    scales = [1.0]
    w = float(np.max(hi))
    while w * scales[-1] > 0.5 and len(scales) < 40:
        scales.append(scales[-1] / 4.0)
    per = max(samples // len(scales), 100)
    energies = []
    accepted = total = 0
    for level, s in enumerate(scales):
        pts = sampling.halton_in_box(per, lo * s, hi * s,
                                     (*seed_parts, "energy", round(r, 12), level))
        mask = gauge.value(pts, check=False) < r
        if domain is not None:
            mask &= domain.contains(pts)
        if level == 0:
            accepted += int(np.count_nonzero(mask))
            total += per
        sel = pts[mask]
        if sel.shape[0] == 0:
            continue
        grads = gauge.gradient(sel, check=False)
        with np.errstate(all="ignore"):
            av = sym_matrix.evaluate_sym(sel, check=False)
            e = np.einsum("nij,ni,nj->n", av, grads, grads)
        energies.append(e)
    if total and accepted / total < 1e-6:
        raise SamplingError(
            f"sup-energy sampling at r={r}: acceptance rate below 1e-6")
    if not energies:
        raise SamplingError(f"sup-energy sampling at r={r}: no accepted points")
    pooled = np.concatenate(energies)
    pooled = pooled[~np.isnan(pooled)]
    if pooled.size == 0:
        raise SamplingError(f"sup-energy sampling at r={r}: all energies undefined")
    return EnergyEstimate(float(np.max(pooled)),
                          float(np.percentile(pooled, 99.9)), int(pooled.size))


# ---------------------------------------------------------------------------
# tail bound


@dataclass
class TailBoundCurve:
    """The martingale tail bound evaluated on an r grid."""

    r_values: List[float]
    volumes: List[float]
    vol_stderrs: List[float]
    m_rho: List[float]
    erfc_args: List[float]
    bounds: List[float]
    R: float
    T: float
    satisfied: bool = False
    log_slope: float = 0.0
    final_bound: float = float("inf")
    final_tolerance: float = 1e-3

    def rows(self):
        """CSV rows: r, vol, vol_stderr, M_rho, erfc_arg, bound."""
        for i, r in enumerate(self.r_values):
            yield (r, self.volumes[i], self.vol_stderrs[i], self.m_rho[i],
                   self.erfc_args[i], self.bounds[i])

    def bound_at(self, r: float) -> float:
        return float(np.interp(r, self.r_values, self.bounds))

    def to_dict(self) -> dict:
        return {
            "R": self.R,
            "T": self.T,
            "r": [float(x) for x in self.r_values],
            "vol": [float(x) for x in self.volumes],
            "vol_stderr": [float(x) for x in self.vol_stderrs],
            "M_rho": [_finite_or_repr(x) for x in self.m_rho],
            "erfc_arg": [float(x) for x in self.erfc_args],
            "bound": [float(x) for x in self.bounds],
            "satisfied": self.satisfied,
            "log_slope": _finite_or_repr(self.log_slope),
            "final_bound": float(self.final_bound),
            "final_tolerance": self.final_tolerance,
        }


def _finite_or_repr(x):
    x = float(x)
    return x if np.isfinite(x) else repr(x)


def martingale_tail_bound(sym_matrix, gauge: LyapunovGauge, R: float, T: float,
                          r_grid: Sequence[float], seed_parts=(0,), domain=None,
                          volume_samples: int = 20000, energy_samples: int = 4096,
                          final_tolerance: float = 1e-3) -> TailBoundCurve:
    """Evaluate 3 vol(U_{R+r}) Erfc(r / sqrt(8 M(R+r) T)) on the grid.

    The vanishing-limit requirement is decided by a least-squares slope of
    log(bound) over the last half of the grid (must be negative) plus a
    final-value threshold; the raw curve is always kept for inspection.
    """
    if T <= 0.0:
        raise ValueError("T must be positive")
    rs = [float(r) for r in r_grid]
    if any(b <= a for a, b in zip(rs, rs[1:])):
        raise ValueError("r_grid must be increasing")
    vols, errs, ms, args, bounds = [], [], [], [], []
    for r in rs:
        vol = estimate_volume(gauge, R + r, volume_samples, (*seed_parts, "tail"), domain)
        en = estimate_sup_energy(sym_matrix, gauge, R + r, energy_samples,
                                 (*seed_parts, "tail"), domain)
        m = en.value
        if m > 0.0 and np.isfinite(m):
            arg = r / np.sqrt(8.0 * m * T)
        else:
            # unbounded energy: Erfc argument collapses to 0, bound = 3 vol
            arg = 0.0 if not np.isfinite(m) else float("inf")
        with np.errstate(all="ignore"):
            b = 3.0 * vol.value * float(erfc(arg))
        vols.append(vol.value)
        errs.append(vol.stderr)
        ms.append(m)
        args.append(float(arg))
        bounds.append(b)
    logs = np.log(np.maximum(bounds, 1e-300))
    half = len(rs) // 2 if len(rs) >= 4 else 0
    x = np.asarray(rs[half:])
    y = logs[half:]
    slope = 0.0
    if len(x) >= 2 and np.ptp(x) > 0:
        slope = float(np.polyfit(x, y, 1)[0])
    final = float(bounds[-1])
    satisfied = bool(slope < 0.0 and final <= final_tolerance)
    return TailBoundCurve(rs, vols, errs, ms, args, bounds, float(R), float(T),
                          satisfied, slope, final, final_tolerance)


def largest_passing_horizon(sym_matrix, gauge, R, r_grid, candidates,
                            seed_parts=(0,), domain=None, **kwargs):
    """Largest horizon T among ``candidates`` whose tail-bound curve passes;
    returns (T, curve) or (None, last curve)."""
    curve = None
    for T in sorted(candidates, reverse=True):
        curve = martingale_tail_bound(sym_matrix, gauge, R, T, r_grid,
                                      seed_parts, domain, **kwargs)
        if curve.satisfied:
            return T, curve
    return None, curve
