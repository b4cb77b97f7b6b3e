"""Coefficient data (A, B): symmetric/antisymmetric split, the drift beta,
and the numeric structural checks (local ellipticity, bounded antisymmetry,
weak divergence-freeness, sectoriality).

Essential suprema/infima are approximated by sample extrema over scrambled
Halton point sets plus the box corners; reports carry both the extremum and
the 99.9th (resp. 0.1th) percentile so heavy-tail sensitivity stays visible.
Local integrability of the coefficients is not tested: it is assumed whenever
fields evaluate finitely a.e. on the sampled compacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import List, Optional, Sequence

import numpy as np

from . import sampling
from .errors import EvaluationError, SamplingError
from .expr import ScalarField

__all__ = [
    "CoefficientMatrix",
    "DriftField",
    "SingularSet",
    "ConditionEvidence",
    "decompose",
    "compute_beta",
    "check_ellipticity_bounds",
    "check_divergence_free",
    "check_sectoriality",
    "bump_test_function",
]


# ---------------------------------------------------------------------------
# evidence record


@dataclass
class ConditionEvidence:
    """Numeric evidence for one condition check.

    ``status`` is pass/fail/inconclusive; ``constants`` holds the estimated
    constants named by the condition (delta, M, C, c, c1, M1, M2, M3, ...).
    """

    tag: str
    status: str
    constants: dict = dc_field(default_factory=dict)
    worst_point: Optional[list] = None
    sample_count: int = 0
    tolerance: Optional[float] = None
    sequence: Optional[dict] = None
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        out = {
            "tag": self.tag,
            "status": self.status,
            "constants": {k: _jsonify(v) for k, v in sorted(self.constants.items())},
            "worst_point": self.worst_point,
            "sample_count": self.sample_count,
            "tolerance": self.tolerance,
            "note": self.note,
        }
        if self.sequence is not None:
            out["sequence"] = {k: [_jsonify(x) for x in v] for k, v in sorted(self.sequence.items())}
        return out


def _jsonify(v):
    if isinstance(v, (np.floating, np.integer)):
        v = v.item()
    if isinstance(v, float) and not np.isfinite(v):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# coefficient matrix and drift


class CoefficientMatrix:
    """The d x d matrix field A(x) with cached symmetric/antisymmetric parts."""

    def __init__(self, entries: Sequence[Sequence[ScalarField]]):
        d = len(entries)
        for row in entries:
            if len(row) != d:
                raise ValueError("coefficient matrix must be square")
        self.dimension = entries[0][0].dimension
        for row in entries:
            for f in row:
                if f.dimension != self.dimension:
                    raise ValueError("all entries must share one dimension")
        self.entries = [list(row) for row in entries]
        self._sym = None
        self._antisym = None

    @classmethod
    def from_expressions(cls, rows: Sequence[Sequence[str]], dimension: int):
        return cls([[ScalarField.from_expression(e, dimension) for e in row] for row in rows])

    @classmethod
    def identity(cls, dimension: int):
        return cls([[ScalarField.constant(1.0 if i == j else 0.0, dimension)
                     for j in range(dimension)] for i in range(dimension)])

    @property
    def sym_entries(self):
        if self._sym is None:
            d = self.dimension
            self._sym = [[0.5 * (self.entries[i][j] + self.entries[j][i])
                          for j in range(d)] for i in range(d)]
        return self._sym

    @property
    def antisym_entries(self):
        if self._antisym is None:
            d = self.dimension
            self._antisym = [[0.5 * (self.entries[i][j] + (-1.0) * self.entries[j][i])
                              for j in range(d)] for i in range(d)]
        return self._antisym

    def _evaluate(self, entries, points, check=True):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n, d = pts.shape[0], self.dimension
        out = np.empty((n, d, d))
        for i in range(d):
            for j in range(d):
                f = entries[i][j]
                if f.const is not None:
                    out[:, i, j] = f.const
                else:
                    out[:, i, j] = f.value(pts, check=check)
        return out

    def evaluate(self, points, check=True):
        return self._evaluate(self.entries, points, check)

    def evaluate_sym(self, points, check=True):
        return self._evaluate(self.sym_entries, points, check)

    def evaluate_antisym(self, points, check=True):
        return self._evaluate(self.antisym_entries, points, check)

    def constant_value(self):
        """The matrix as floats when every entry is constant, else None."""
        vals = np.empty((self.dimension, self.dimension))
        for i in range(self.dimension):
            for j in range(self.dimension):
                c = self.entries[i][j].const
                if c is None:
                    return None
                vals[i, j] = c
        return vals


@dataclass
class SingularSet:
    """Region where the drift pairing may blow up but stays integrable.

    ``kind`` is one of empty | balls | boxes | predicate.  Predicate sets hold
    a ScalarField whose nonnegativity defines membership and must declare
    their own boundedness (probe-verified, not proven).
    """

    kind: str = "empty"
    balls: list = dc_field(default_factory=list)   # (center ndarray, radius)
    boxes: list = dc_field(default_factory=list)   # (lo ndarray, hi ndarray)
    predicate: Optional[ScalarField] = None
    bounded: bool = True
    bounding_radius: float = 0.0

    @classmethod
    def empty(cls):
        return cls(kind="empty", bounded=True, bounding_radius=0.0)

    @classmethod
    def ball(cls, center, radius):
        center = np.asarray(center, dtype=float)
        return cls(kind="balls", balls=[(center, float(radius))], bounded=True,
                   bounding_radius=float(np.linalg.norm(center) + radius))

    @classmethod
    def from_predicate(cls, field: ScalarField, bounded: bool, bounding_radius: float = 0.0):
        return cls(kind="predicate", predicate=field, bounded=bounded,
                   bounding_radius=float(bounding_radius))

    @property
    def is_empty(self) -> bool:
        return self.kind == "empty"

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "empty":
            return np.zeros(pts.shape[0], dtype=bool)
        if self.kind == "balls":
            mask = np.zeros(pts.shape[0], dtype=bool)
            for center, radius in self.balls:
                mask |= np.linalg.norm(pts - center, axis=1) <= radius
            return mask
        if self.kind == "boxes":
            mask = np.zeros(pts.shape[0], dtype=bool)
            for lo, hi in self.boxes:
                mask |= np.all((pts >= lo) & (pts <= hi), axis=1)
            return mask
        return self.predicate.value(pts, check=False) >= 0.0

    def sampling_box(self):
        """A box certainly containing the set (bounded sets only)."""
        if self.kind == "empty":
            return None
        if self.kind == "balls":
            los = np.array([c - r for c, r in self.balls])
            his = np.array([c + r for c, r in self.balls])
            return los.min(axis=0), his.max(axis=0)
        if self.kind == "boxes":
            return (np.array([lo for lo, _ in self.boxes]).min(axis=0),
                    np.array([hi for _, hi in self.boxes]).max(axis=0))
        if not self.bounded:
            return None
        d = self.predicate.dimension
        w = self.bounding_radius
        return -w * np.ones(d), w * np.ones(d)


class DriftField:
    """Vector field beta with an optional singular-set reference."""

    def __init__(self, components: Sequence[ScalarField],
                 singular_set: Optional[SingularSet] = None):
        self.components = list(components)
        self.dimension = len(components)
        self.singular_set = singular_set

    def value(self, points, check=True) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty((pts.shape[0], self.dimension))
        for i, f in enumerate(self.components):
            out[:, i] = f.const if f.const is not None else f.value(pts, check=check)
        return out

    def constant_value(self):
        vals = [f.const for f in self.components]
        if any(v is None for v in vals):
            return None
        return np.asarray(vals, dtype=float)


# ---------------------------------------------------------------------------
# operations


def decompose(A: CoefficientMatrix):
    """Split A into its symmetric and antisymmetric matrix fields."""
    return CoefficientMatrix(A.sym_entries), CoefficientMatrix(A.antisym_entries)


def compute_beta(B: Sequence[ScalarField], antisym: CoefficientMatrix,
                 singular_set: Optional[SingularSet] = None) -> DriftField:
    """beta_i = B_i + (1/2) sum_j d_j(antisym_ij), with exact AD derivatives."""
    d = antisym.dimension
    if len(B) != d:
        raise ValueError(f"B must have {d} components")
    components = []
    for i in range(d):
        varying = [(j, antisym.entries[i][j]) for j in range(d)
                   if antisym.entries[i][j].const is None]
        bi = B[i]
        if not varying:
            components.append(bi)
            continue

        def value_fn(pts, bi=bi, varying=varying):
            acc = bi.value(pts, check=False) if bi.const is None else np.full(pts.shape[0], bi.const)
            acc = acc.astype(float, copy=True)
            for j, a in varying:
                acc += 0.5 * a.gradient(pts, check=False)[:, j]
            return acc

        components.append(ScalarField(
            d, value_fn, None, name=f"beta{i + 1}",
            exact=bi.exact and all(a.exact for _, a in varying)))
    return DriftField(components, singular_set)


def _region_samples(region, samples, seed_parts, domain=None):
    lo = np.asarray(region[0], dtype=float)
    hi = np.asarray(region[1], dtype=float)
    if np.any(hi <= lo):
        raise ValueError(f"degenerate region with zero volume: {lo.tolist()}..{hi.tolist()}")
    pts = sampling.halton_in_box(samples, lo, hi, seed_parts, include_corners=True)
    if domain is not None and domain.kind != "full-space":
        pts = pts[domain.contains(pts)]
        if pts.shape[0] == 0:
            raise SamplingError("region does not intersect the domain")
    return pts


def check_ellipticity_bounds(A: CoefficientMatrix, region, samples: int,
                             seed_parts=(0,), domain=None, tolerance: float = 1e-6):
    """Estimate delta(K) = inf min-eigenvalue of the symmetric part on the
    region and M = sup |antisym_ij| / delta(K); evidence for the local strict
    ellipticity and bounded-antisymmetry conditions."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    pts = _region_samples(region, samples, (*seed_parts, "P1"), domain)
    sym = A.evaluate_sym(pts, check=True)
    eigs = np.linalg.eigvalsh(sym)[:, 0]
    order = np.argsort(eigs)
    delta = float(eigs[order[0]])
    worst = pts[order[0]]
    anti = np.abs(A.evaluate_antisym(pts, check=True))
    amax_idx = np.unravel_index(np.argmax(anti), anti.shape)
    amax = float(anti[amax_idx])

    p1 = ConditionEvidence(
        tag="P1",
        status="pass" if delta > tolerance else "fail",
        constants={"delta": delta,
                   "delta_p001": float(np.percentile(eigs, 0.1))},
        worst_point=worst.tolist(),
        sample_count=int(pts.shape[0]),
        tolerance=tolerance,
    )
    if delta > tolerance:
        M = amax / delta
        p2 = ConditionEvidence(
            tag="P2", status="pass",
            constants={"M": M,
                       "M_p999": float(np.percentile(anti.reshape(anti.shape[0], -1).max(axis=1),
                                                     99.9)) / delta},
            worst_point=pts[amax_idx[0]].tolist(),
            sample_count=int(pts.shape[0]), tolerance=tolerance)
    else:
        p2 = ConditionEvidence(
            tag="P2", status="fail",
            constants={"M": float("inf"), "sup_antisym": amax},
            worst_point=pts[amax_idx[0]].tolist(),
            sample_count=int(pts.shape[0]), tolerance=tolerance,
            note="delta(K) not positive; no finite M exists")
    return p1, p2


def bump_test_function(center, radius):
    """A C-infinity bump supported on the ball |x-c| < r.

    Returns ``(value_fn, grad_fn)`` acting on (N, d) points:
    u = exp(1 - 1/(1 - |x-c|^2/r^2)) inside the support, 0 outside.
    """
    center = np.asarray(center, dtype=float)
    radius = float(radius)

    def _parts(pts):
        diff = pts - center
        s = np.einsum("ij,ij->i", diff, diff) / radius ** 2
        inside = s < 1.0 - 1e-12
        u = np.zeros(pts.shape[0])
        with np.errstate(all="ignore"):
            u[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
        return diff, s, inside, u

    def value(pts):
        return _parts(pts)[3]

    def grad(pts):
        diff, s, inside, u = _parts(pts)
        g = np.zeros_like(pts)
        with np.errstate(all="ignore"):
            factor = np.zeros(pts.shape[0])
            factor[inside] = -u[inside] / (1.0 - s[inside]) ** 2 * (2.0 / radius ** 2)
        g[:] = factor[:, None] * diff
        return g

    return value, grad


def _midpoint_grid(center, radius, q):
    d = center.shape[0]
    axes = [center[i] - radius + (np.arange(q) + 0.5) * (2.0 * radius / q) for i in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    cell = (2.0 * radius / q) ** d
    return pts, cell


def _divergence_residual(B, center, radius, q):
    value, grad = bump_test_function(center, radius)
    pts, cell = _midpoint_grid(center, radius, q)
    gu = grad(pts)
    resid = 0.0
    for i, bi in enumerate(B):
        col = gu[:, i]
        nz = col != 0.0
        if not np.any(nz):
            continue
        resid += float(np.sum(bi.value(pts[nz], check=True) * col[nz])) * cell
    norm = float(np.sum(np.linalg.norm(gu, axis=1))) * cell
    return resid, norm


def check_divergence_free(B: Sequence[ScalarField], domain, n_tests: int,
                          quadrature_points: int = 64, seed_parts=(0,),
                          tolerance: float = 1e-6, window_halfwidth: float = 4.0):
    """Test weak divergence-freeness against random smooth bumps.

    Draws ``n_tests`` compactly supported bump test functions with centers and
    radii inside the domain interior (supports never touch the boundary) and
    integrates <B, grad u> on a tensor midpoint grid with
    ``quadrature_points`` nodes per axis.  Each residual is normalized by the
    L1 norm of grad u; a pass requires every normalized residual <= tolerance.
    Residuals that are above tolerance but still shrinking fast under grid
    refinement are reported as inconclusive rather than failed.
    """
    if n_tests < 1:
        raise ValueError("n_tests must be >= 1")
    d = B[0].dimension
    if all(bi.const == 0.0 for bi in B):
        return ConditionEvidence(
            tag="P3", status="pass", constants={"max_residual": 0.0},
            sample_count=n_tests, tolerance=tolerance,
            note="B is identically zero; residuals vanish exactly")
    rng = sampling.generator(*seed_parts, "P3")
    residuals = []
    coarse = []
    worst = None
    for t in range(n_tests):
        for _ in range(256):
            center = rng.uniform(-window_halfwidth, window_halfwidth, size=d)
            radius = rng.uniform(0.3, 1.2)
            if domain is None or domain.kind == "full-space":
                break
            inner = domain.interior_distance(center[None, :])[0]
            if inner > radius * 1.05:
                break
        else:
            raise SamplingError("could not place a bump inside the domain interior")
        r_full, n_full = _divergence_residual(B, center, radius, quadrature_points)
        r_half, _ = _divergence_residual(B, center, radius, max(quadrature_points // 2, 8))
        val = abs(r_full) / n_full
        residuals.append(val)
        coarse.append(abs(r_half) / n_full)
        if worst is None or val > worst[0]:
            worst = (val, center)
    max_resid = max(residuals)
    status = "pass"
    if max_resid > tolerance:
        # still converging rapidly: quadrature has not resolved the integral
        k = int(np.argmax(residuals))
        status = "inconclusive" if residuals[k] <= 0.25 * coarse[k] else "fail"
    return ConditionEvidence(
        tag="P3", status=status,
        constants={"max_residual": float(max_resid)},
        worst_point=worst[1].tolist(),
        sample_count=n_tests, tolerance=tolerance,
        sequence={"residual": [float(x) for x in residuals]},
    )


def _slope(xs, ys):
    """Least-squares slope over the last half of the sequence."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    half = len(xs) // 2 if len(xs) >= 4 else 0
    x, y = xs[half:], ys[half:]
    if len(x) < 2:
        return 0.0
    xm, ym = x.mean(), y.mean()
    den = float(np.sum((x - xm) ** 2))
    if den == 0.0:
        return 0.0
    return float(np.sum((x - xm) * (y - ym)) / den)


def check_sectoriality(B: Sequence[ScalarField], A: CoefficientMatrix,
                       regions, samples: int, seed_parts=(0,), domain=None,
                       tolerance: float = 1e-6, slope_tolerance: float = 0.05):
    """Sufficient sectoriality test on a ladder of nested compact boxes.

    Per region K_n the test compares min{sup B_i^2, ||B_i||_d} (the second
    branch only for d >= 3) against delta(K_n); the per-component constants
    C_i must stay bounded along the ladder: the fitted slope of log C_i per
    ladder rung must not exceed ``slope_tolerance`` (a scale-free growth
    threshold; saturating sequences pass, polynomial growth fails).  The test
    is sufficient, not necessary: a fail means the condition was not
    established.
    """
    if not regions:
        raise ValueError("empty region list")
    d = B[0].dimension
    if all(bi.const == 0.0 for bi in B):
        return ConditionEvidence(
            tag="P4", status="pass", constants={"C": 0.0},
            sample_count=0, tolerance=tolerance,
            note="B is identically zero; sectoriality constant C = 0")
    ladder = {f"C{i + 1}": [] for i in range(d)}
    deltas = []
    count = 0
    for n, region in enumerate(regions):
        ev_p1, _ = check_ellipticity_bounds(A, region, samples,
                                            (*seed_parts, "P4", n), domain, tolerance)
        delta = ev_p1.constants["delta"]
        deltas.append(delta)
        if delta <= tolerance:
            return ConditionEvidence(
                tag="P4", status="fail", constants={"delta": delta},
                sample_count=samples, tolerance=tolerance,
                note=f"delta(K_{n + 1}) not positive; ratios undefined")
        pts = _region_samples(region, samples, (*seed_parts, "P4pts", n), domain)
        count += pts.shape[0]
        for i, bi in enumerate(B):
            vals = bi.value(pts, check=True)
            sup_sq = float(np.max(vals ** 2))
            branch = sup_sq
            if d >= 3:
                lo = np.asarray(region[0], dtype=float)
                hi = np.asarray(region[1], dtype=float)
                vol = float(np.prod(hi - lo)) * pts.shape[0] / (samples + 2 ** d)
                ld = float(np.mean(np.abs(vals) ** d) * vol) ** (1.0 / d)
                branch = min(sup_sq, ld)
            ladder[f"C{i + 1}"].append(branch / delta)
    constants = {}
    worst_slope = -np.inf
    for key, seq in ladder.items():
        constants[key] = float(max(seq))
        positive = [max(v, 1e-300) for v in seq]
        if max(seq) > tolerance:
            worst_slope = max(worst_slope, _slope(range(len(seq)), np.log(positive)))
    constants["C"] = float(max(constants.values()))
    status = "pass" if (worst_slope == -np.inf or worst_slope <= slope_tolerance) else "fail"
    return ConditionEvidence(
        tag="P4", status=status, constants=constants,
        sample_count=count, tolerance=tolerance,
        sequence={"region": list(range(1, len(regions) + 1)),
                  **{k: [float(x) for x in v] for k, v in ladder.items()}},
        note="" if status == "pass" else
        "sufficient test failed: C_i grows along the region ladder",
    )
