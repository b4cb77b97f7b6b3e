"""Domains (full space, 3-D upper half-space, 2-D wedge), oblique reflection
angles/directions read off the coefficient matrix, boundary pushback, and the
explicit constructors for the wedge and half-space model examples.

Reflection angles are computed with signed numerators,
``theta = arccos(<A eta, e> / |A eta|)``, so that a constant off-diagonal
antisymmetric entry gives theta_l + theta_r = pi and the closed forms
``theta_r = arccos(s / sqrt(1+s^2))``, ``theta_l = arccos(-s / sqrt(1+s^2))``
hold for every sign of s.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from . import sampling
from .coeff import CoefficientMatrix, ConditionEvidence
from .errors import ConstructionError, NumericalError
from .expr import ScalarField

__all__ = [
    "Domain",
    "ReflectionData",
    "full_space",
    "upper_half_space",
    "make_wedge",
    "wedge_reflection_angles",
    "halfspace_reflection",
    "build_wedge_example",
    "build_halfspace_example",
    "oblique_pushback",
    "pushback_batch",
]

CORNER_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Domain:
    """State space: full space, the upper half-space {x3 >= 0} in R^3, or a
    2-D wedge spanned by unit edge vectors e_r = (p1, p2), e_l = (-p1, p2)."""

    kind: str                     # full-space | half-space-3d | wedge-2d
    dimension: int
    p1: float = 0.0
    p2: float = 0.0

    @property
    def has_boundary(self) -> bool:
        return self.kind != "full-space"

    @property
    def phi(self) -> float:
        """Wedge opening angle."""
        return float(np.arccos(self.p2 ** 2 - self.p1 ** 2))

    @property
    def e_r(self):
        return np.array([self.p1, self.p2])

    @property
    def e_l(self):
        return np.array([-self.p1, self.p2])

    @property
    def eta_r(self):
        return np.array([-self.p2, self.p1])

    @property
    def eta_l(self):
        return np.array([self.p2, self.p1])

    def edge_coords(self, points) -> np.ndarray:
        """(a, b) with z = a e_r + b e_l; inside the wedge iff a, b >= 0."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        den = 2.0 * self.p1 * self.p2
        a = (self.p2 * pts[:, 0] + self.p1 * pts[:, 1]) / den
        b = (-self.p2 * pts[:, 0] + self.p1 * pts[:, 1]) / den
        return np.stack([a, b], axis=1)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "full-space":
            return np.ones(pts.shape[0], dtype=bool)
        if self.kind == "half-space-3d":
            return pts[:, 2] >= -tol
        ab = self.edge_coords(pts)
        return np.all(ab >= -tol, axis=1)

    def interior_distance(self, points) -> np.ndarray:
        """Euclidean distance to the boundary (negative outside); +inf for
        the full space."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "full-space":
            return np.full(pts.shape[0], np.inf)
        if self.kind == "half-space-3d":
            return pts[:, 2].copy()
        ab = self.edge_coords(pts)
        return 2.0 * self.p1 * self.p2 * ab.min(axis=1)

    def interior_box(self) -> Tuple[np.ndarray, np.ndarray]:
        """A default unit-scale probe box compactly inside the domain."""
        if self.kind == "full-space":
            h = 0.5 * np.ones(self.dimension)
            return -h, h
        if self.kind == "half-space-3d":
            return np.array([-0.5, -0.5, 0.5]), np.array([0.5, 0.5, 1.5])
        center = np.array([0.0, 2.0])
        half = 0.45 * 2.0 * self.p1 * self.p2 * min(1.0, 2.0 * self.p2 / (self.p1 + self.p2))
        half = max(half, 0.15)
        lo = center - half
        hi = center + half
        if not bool(np.all(self.contains(sampling.box_corners(lo, hi)))):
            lo, hi = center - 0.1, center + 0.1
        return lo, hi


@dataclass(frozen=True)
class ReflectionData:
    """Reflection data at one boundary point: angle/direction for the
    half-space, or the (theta_r, theta_l) pair for a wedge."""

    theta: Optional[float] = None
    direction: Optional[np.ndarray] = None
    theta_r: Optional[float] = None
    theta_l: Optional[float] = None
    side: Optional[str] = None


def full_space(dimension: int) -> Domain:
    return Domain("full-space", dimension)


def upper_half_space() -> Domain:
    return Domain("half-space-3d", 3)


def make_wedge(p1: float, p2: float) -> Domain:
    """Wedge domain from p1, p2 in (0,1); (p1,p2) is renormalized to the unit
    circle and the opening angle is arccos(p2^2 - p1^2)."""
    if not (0.0 < p1 < 1.0):
        raise ValueError(f"p1 out of (0,1): {p1}")
    if not (0.0 < p2 < 1.0):
        raise ValueError(f"p2 out of (0,1): {p2}")
    norm = float(np.hypot(p1, p2))
    if abs(norm - 1.0) > 1e-9:
        p1, p2 = p1 / norm, p2 / norm
    return Domain("wedge-2d", 2, float(p1), float(p2))


def wedge_reflection_angles(A: CoefficientMatrix, wedge: Domain, z,
                            side: str = "right") -> ReflectionData:
    """Reflection angles (theta_r, theta_l) from A(z) at a wedge edge point.

    ``z`` must lie on the named edge to within 1e-9.  Requires d = 2 and
    A(z) eta != 0.
    """
    z = np.asarray(z, dtype=float)
    if A.dimension != 2:
        raise ValueError("wedge reflection requires d = 2")
    if wedge.kind != "wedge-2d":
        raise ValueError("wedge domain required")
    if side not in ("right", "left"):
        raise ValueError("side must be 'right' or 'left'")
    eta_side = wedge.eta_r if side == "right" else wedge.eta_l
    ab = wedge.edge_coords(z[None, :])[0]
    along = ab[0] if side == "right" else ab[1]
    if abs(float(z @ eta_side)) > 1e-9 or along < -1e-9:
        raise ValueError(f"point {z.tolist()} is not on the {side} wedge edge")
    Az = A.evaluate(z[None, :], check=True)[0]
    out = {}
    for s, eta, e in (("right", wedge.eta_r, wedge.e_r), ("left", wedge.eta_l, wedge.e_l)):
        v = Az @ eta
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise NumericalError(f"degenerate matrix at boundary point {z.tolist()}: A eta = 0")
        out[s] = float(np.arccos(np.clip(float(v @ e) / norm, -1.0, 1.0)))
    return ReflectionData(theta_r=out["right"], theta_l=out["left"], side=side)


def halfspace_reflection(A: CoefficientMatrix, x) -> ReflectionData:
    """Angle and tangential direction on the boundary {x3 = 0} of the upper
    half-space: theta = arcsin(1/sqrt(a13^2 + a23^2 + 1)), F = (a13, a23, 0)."""
    x = np.asarray(x, dtype=float)
    if A.dimension != 3:
        raise ValueError("half-space reflection requires d = 3")
    if abs(x[2]) > 1e-9:
        raise ValueError(f"point is not on the boundary x3 = 0: {x.tolist()}")
    pt = x[None, :]
    a13 = A.entries[0][2].value(pt, check=True)[0]
    a23 = A.entries[1][2].value(pt, check=True)[0]
    theta = float(np.arcsin(1.0 / np.sqrt(a13 ** 2 + a23 ** 2 + 1.0)))
    return ReflectionData(theta=theta, direction=np.array([a13, a23, 0.0]))


# ---------------------------------------------------------------------------
# model example constructors


def build_wedge_example(f: ScalarField, k: ScalarField, j: ScalarField,
                        g: ScalarField, wedge: Domain,
                        tolerance: float = 1e-8):
    """Oblique reflected Brownian motion data in a wedge from 1-D profiles.

    Builds the divergence-free compensating field B and the off-diagonal
    antisymmetric entry a12 = g(k(x) + j(y)) so that the absolutely
    continuous drift B + (1/2)(d2 a12, -d1 a12) cancels identically.  The
    cancellation forces B = (-(1/2) j'(y) f(k+j), (1/2) k'(x) f(k+j)) with
    g' = f; the caller-asserted identity g' = f is spot-checked at 50 points
    and the edge compatibility j'(-(p2/p1) x) = -j'((p2/p1) x) = k'(x) at 100.

    Returns (B, a12, compatibility evidence).
    """
    for name, field1 in (("f", f), ("k", k), ("j", j), ("g", g)):
        if field1.dimension != 1:
            raise ConstructionError(f"{name} must be a 1-D field")
    if wedge.kind != "wedge-2d":
        raise ConstructionError("wedge domain required")

    ts = sampling.halton_in_box(50, np.array([-3.0]), np.array([3.0]),
                                ("wedge-example", "gprime"))
    gp = g.derivative1().value(ts, check=True)
    fv = f.value(ts, check=True)
    gap = float(np.max(np.abs(gp - fv)))
    if gap > max(tolerance, 1e-6):
        raise ConstructionError(
            f"g' != f beyond tolerance (max |g' - f| = {gap:.3e}); construction rejected")

    q = wedge.p2 / wedge.p1
    xs = sampling.halton_in_box(100, np.array([-4.0]), np.array([4.0]),
                                ("wedge-example", "compat"))
    jp = j.derivative1()
    kp = k.derivative1()
    odd_resid = float(np.max(np.abs(jp.value(-q * xs, check=True)
                                    + jp.value(q * xs, check=True))))
    match_resid = float(np.max(np.abs(-jp.value(q * xs, check=True)
                                      - kp.value(xs, check=True))))
    status = "pass" if max(odd_resid, match_resid) <= tolerance else "fail"
    compatibility = ConditionEvidence(
        tag="GROWTH", status=status,
        constants={"oddness_residual": odd_resid, "match_residual": match_resid},
        sample_count=100, tolerance=tolerance,
        note="wedge edge compatibility j'(-(p2/p1)x) = -j'((p2/p1)x) = k'(x)")

    inner = k.embed(0, 2) + j.embed(1, 2)
    f_of = f.of(inner)
    b1 = (-0.5) * (jp.embed(1, 2) * f_of)
    b2 = 0.5 * (kp.embed(0, 2) * f_of)
    a12 = g.of(inner)
    return [b1, b2], a12, compatibility


def build_halfspace_example(g: ScalarField, k: ScalarField, l: ScalarField,
                            tolerance: float = 1e-8, samples: int = 200):
    """Variable oblique reflection data on the 3-D upper half-space:
    a13 = -l'(x2) g(k(x1) + l(x2)), a23 = k'(x1) g(k(x1) + l(x2)), both
    constant in x3, so d1 a13 + d2 a23 = 0 and the drift vanishes.

    Returns (a13, a23, divergence evidence)."""
    for name, field1 in (("g", g), ("k", k), ("l", l)):
        if field1.dimension != 1:
            raise ConstructionError(f"{name} must be a 1-D field")
        if not field1.exact:
            raise ConstructionError(f"{name} must be differentiable (exact gradients)")
    inner = k.embed(0, 3) + l.embed(1, 3)
    g_of = g.of(inner)
    a13 = (-1.0) * (l.derivative1().embed(1, 3) * g_of)
    a23 = k.derivative1().embed(0, 3) * g_of

    pts = sampling.halton_in_box(
        samples, np.array([-4.0, -4.0, 0.0]), np.array([4.0, 4.0, 4.0]),
        ("halfspace-example", "div"))
    resid = a13.gradient(pts, check=True)[:, 0] + a23.gradient(pts, check=True)[:, 1]
    worst = int(np.argmax(np.abs(resid)))
    max_resid = float(np.abs(resid[worst]))
    evidence = ConditionEvidence(
        tag="GROWTH",
        status="pass" if max_resid <= tolerance else "fail",
        constants={"max_divergence": max_resid},
        worst_point=pts[worst].tolist(),
        sample_count=samples, tolerance=tolerance,
        note="d1 a13 + d2 a23 = 0 (drift-free construction)")
    return a13, a23, evidence


# ---------------------------------------------------------------------------
# pushback


def oblique_pushback(x, domain: Domain, direction_data: ReflectionData) -> np.ndarray:
    """Project an exited point back onto the boundary along the co-normal.

    Half-space: v = eta + F with F from ``direction_data``; wedge: the
    direction cos(theta_side) e_side + sin(theta_side) eta_side (the direction
    of A(z) eta_side).  The step length solves the linear boundary constraint,
    so the result lies on the boundary exactly.  Raises
    :class:`NumericalError` when the direction does not point back into the
    domain.
    """
    x = np.asarray(x, dtype=float)
    if domain.kind == "half-space-3d":
        if x[2] >= 0.0:
            raise ValueError("point does not lie outside the half-space")
        F = direction_data.direction
        v = np.array([F[0], F[1], 1.0])
        lam = -x[2]  # v3 = 1
        return x + lam * v
    if domain.kind != "wedge-2d":
        raise ValueError("pushback applies to domains with boundary")
    ab = domain.edge_coords(x[None, :])[0]
    if np.all(ab >= 0.0):
        raise ValueError("point does not lie outside the wedge")
    side = direction_data.side or ("right" if ab[1] <= ab[0] else "left")
    if side == "right":
        eta, e, theta = domain.eta_r, domain.e_r, direction_data.theta_r
    else:
        eta, e, theta = domain.eta_l, domain.e_l, direction_data.theta_l
    v = np.cos(theta) * e + np.sin(theta) * eta
    vn = float(v @ eta)
    if vn <= 0.0:
        raise NumericalError("reflection failure: direction does not point inward")
    lam = -float(x @ eta) / vn
    if lam <= 0.0:
        raise NumericalError("reflection failure: nonpositive pushback length")
    return x + lam * v


def pushback_batch(points: np.ndarray, domain: Domain, A: CoefficientMatrix):
    """Vectorized pushback used by the simulator.

    Returns ``(new_points, ledger, corner_hit, invalid)`` where ``ledger`` is
    the pushback magnitude lambda * |v| accumulated as a local-time surrogate.
    Wedge points still outside after one projection are pushed once more on
    the other edge; anything left is marked invalid.
    """
    pts = np.array(points, dtype=float)
    n = pts.shape[0]
    ledger = np.zeros(n)
    corner = np.zeros(n, dtype=bool)
    invalid = np.zeros(n, dtype=bool)
    if domain.kind == "half-space-3d":
        out = pts[:, 2] < 0.0
        if np.any(out):
            proj = pts[out].copy()
            proj[:, 2] = 0.0
            a13 = A.entries[0][2].value(proj, check=False)
            a23 = A.entries[1][2].value(proj, check=False)
            bad = ~(np.isfinite(a13) & np.isfinite(a23))
            lam = -pts[out, 2]
            vx = np.where(bad, 0.0, a13)
            vy = np.where(bad, 0.0, a23)
            newp = pts[out].copy()
            newp[:, 0] += lam * vx
            newp[:, 1] += lam * vy
            newp[:, 2] = 0.0
            pts[out] = newp
            speed = np.sqrt(vx ** 2 + vy ** 2 + 1.0)
            led = np.zeros(n)
            led[out] = lam * speed
            ledger += led
            inv = np.zeros(n, dtype=bool)
            inv[out] = bad
            invalid |= inv
        return pts, ledger, corner, invalid
    if domain.kind != "wedge-2d":
        return pts, ledger, corner, invalid
    for _round in range(2):
        ab = domain.edge_coords(pts)
        out = np.any(ab < 0.0, axis=1) & ~invalid
        if not np.any(out):
            break
        side_right = ab[out, 1] <= ab[out, 0]
        sub = pts[out]
        news = np.empty_like(sub)
        led = np.zeros(sub.shape[0])
        bad = np.zeros(sub.shape[0], dtype=bool)
        for is_right in (True, False):
            sel = side_right == is_right
            if not np.any(sel):
                continue
            eta = domain.eta_r if is_right else domain.eta_l
            e = domain.e_r if is_right else domain.e_l
            pp = sub[sel]
            t = pp @ e
            proj = np.outer(t, e)  # orthogonal projection onto the edge line
            Az = A.evaluate(proj, check=False)
            v = np.einsum("nij,j->ni", Az, eta)
            vn = v @ eta
            okay = np.isfinite(vn) & (vn > 0.0)
            lam = np.where(okay, -(pp @ eta) / np.where(vn == 0.0, 1.0, vn), 0.0)
            moved = pp + lam[:, None] * v
            # land exactly on the edge line
            moved -= np.outer(moved @ eta, eta)
            news[sel] = np.where(okay[:, None], moved, pp)
            led[sel] = np.where(okay, lam * np.linalg.norm(v, axis=1), 0.0)
            bad[sel] = ~okay
        pts[out] = news
        tmp = np.zeros(n)
        tmp[out] = led
        ledger += tmp
        tmp_b = np.zeros(n, dtype=bool)
        tmp_b[out] = bad
        invalid |= tmp_b
        hit = np.zeros(n, dtype=bool)
        hit[out] = np.linalg.norm(news, axis=1) <= CORNER_TOLERANCE
        corner |= hit
    still_out = ~domain.contains(pts, tol=1e-12) & ~invalid
    invalid |= still_out
    return pts, ledger, corner, invalid
