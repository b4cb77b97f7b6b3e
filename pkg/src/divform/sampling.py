"""Deterministic sampling utilities: derived seeds, Halton sets, rejection.

Every stochastic routine in the package draws from a stream keyed by
``derive_seed(scenario_seed, operation_tag, ...)`` so results are independent
of call order and thread count.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.stats import qmc

from .errors import SamplingError

__all__ = [
    "derive_seed",
    "generator",
    "halton",
    "box_corners",
    "halton_in_box",
    "sample_level_set",
    "sphere_directions",
]


def derive_seed(*parts) -> int:
    """A stable 64-bit seed from a tuple of ints/floats/strings."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def generator(*parts) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by the derived seed."""
    return np.random.Generator(np.random.Philox(seed=derive_seed(*parts)))


def halton(n: int, d: int, seed_parts) -> np.ndarray:
    """Scrambled Halton points in the unit cube, (n, d)."""
    engine = qmc.Halton(d=d, scramble=True, seed=generator(*seed_parts, "halton"))
    return engine.random(n)


def box_corners(lo, hi) -> np.ndarray:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = lo.shape[0]
    corners = np.empty((2 ** d, d))
    for k in range(2 ** d):
        for i in range(d):
            corners[k, i] = hi[i] if (k >> i) & 1 else lo[i]
    return corners


def halton_in_box(n, lo, hi, seed_parts, include_corners=False):
    """Low-discrepancy points in the box [lo, hi]; corners optionally appended."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    pts = lo + halton(n, lo.shape[0], seed_parts) * (hi - lo)
    if include_corners:
        pts = np.vstack([pts, box_corners(lo, hi)])
    return pts


def sample_level_set(gauge, r, n, seed_parts, domain=None, max_batches=64,
                     min_acceptance=1e-6):
    """Rejection-sample ``n`` points of {rho < r} (intersected with ``domain``).

    Draws scrambled Halton points from the gauge's bounding box and keeps those
    with rho(x) < r (and inside the domain, when given).  Raises
    :class:`SamplingError` once the running acceptance rate falls below
    ``min_acceptance``.

    Returns ``(points, acceptance_rate, box_volume)``.
    """
    lo, hi = gauge.bounding_box(r)
    if lo is None:
        raise SamplingError(f"empty level set: r={r} is at or below min rho")
    d = lo.shape[0]
    engine = qmc.Halton(d=d, scramble=True, seed=generator(*seed_parts, "levelset"))
    kept = []
    total = 0
    accepted = 0
    batch = max(n, 256)
    for _ in range(max_batches):
        u = engine.random(batch)
        pts = lo + u * (hi - lo)
        mask = gauge.value(pts, check=False) < r
        if domain is not None:
            mask &= domain.contains(pts)
        total += batch
        sel = pts[mask]
        accepted += sel.shape[0]
        if sel.shape[0]:
            kept.append(sel)
        if accepted >= n:
            break
        if total >= 16 * batch and accepted / total < min_acceptance:
            break
    if accepted < n and (total == 0 or accepted / total < min_acceptance):
        raise SamplingError(
            f"rejection sampling of the level set r={r} failed: "
            f"acceptance rate {accepted / max(total, 1):.2e} below {min_acceptance:.0e}")
    pts = np.vstack(kept)[:n] if kept else np.empty((0, d))
    if pts.shape[0] < n:
        raise SamplingError(
            f"rejection sampling exhausted {max_batches} batches with only "
            f"{pts.shape[0]}/{n} accepted points (r={r})")
    box_volume = float(np.prod(hi - lo))
    return pts, accepted / total, box_volume


def sphere_directions(n, d, seed_parts) -> np.ndarray:
    """n unit vectors in R^d from a keyed Gaussian stream."""
    rng = generator(*seed_parts, "sphere")
    v = rng.standard_normal((n, d))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return v / norms
