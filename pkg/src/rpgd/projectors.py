"""Projectors onto analytic sets and randomized checks of their properties.

A projector is any callable image -> image.  The checkers sample points and
look for violations of

    local:   <z − P(x), x − P(x)> <= 0  for z in S ∩ B_eps(P(x))
    global:  <z − P(x), x − P(x)> <= 0  for z in S

as well as idempotence and a sampled lower bound on the Lipschitz constant.
All sampling is driven by an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class InvalidSetError(ValueError):
    pass


# --- convex set specifications ---------------------------------------------

@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        if np.any(lo > hi):
            raise InvalidSetError("box needs lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def project(self, x):
        return np.clip(x, self.lo, self.hi)

    def to_dict(self):
        return {"kind": "Box", "lo": np.asarray(self.lo).tolist(), "hi": np.asarray(self.hi).tolist()}


@dataclass(frozen=True)
class L2Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidSetError("ball radius must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))

    def project(self, x):
        d = x - self.center
        n = np.linalg.norm(d)
        if n <= self.radius:
            return np.array(x, dtype=np.float64, copy=True)
        return self.center + d * (self.radius / n)

    def to_dict(self):
        return {"kind": "L2Ball", "center": np.asarray(self.center).tolist(), "radius": self.radius}


@dataclass(frozen=True)
class AffineSubspace:
    """offset + span(basis); basis rows are orthonormal vectors of the flattened image."""

    basis: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        basis = np.atleast_2d(np.asarray(self.basis, dtype=np.float64))
        offset = np.asarray(self.offset, dtype=np.float64)
        gram = basis @ basis.T
        if not np.allclose(gram, np.eye(basis.shape[0]), atol=1e-10):
            raise InvalidSetError("affine subspace basis must be orthonormal")
        if basis.shape[1] != offset.size:
            raise InvalidSetError("basis vectors and offset differ in size")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "offset", offset)

    def project(self, x):
        x = np.asarray(x, dtype=np.float64)
        d = x.ravel() - self.offset.ravel()
        return (self.offset.ravel() + self.basis.T @ (self.basis @ d)).reshape(x.shape)

    def to_dict(self):
        return {"kind": "AffineSubspace", "basis": self.basis.tolist(),
                "offset": self.offset.tolist()}


@dataclass(frozen=True)
class PointSet:
    """A finite set of points, i.e. a union of singletons."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim < 2 or pts.shape[0] == 0:
            raise InvalidSetError("point set needs at least one point")
        object.__setattr__(self, "points", pts)

    def project(self, x):
        d = np.linalg.norm((self.points - x).reshape(len(self.points), -1), axis=1)
        return self.points[int(np.argmin(d))].copy()

    def to_dict(self):
        return {"kind": "PointSet", "points": self.points.tolist()}


ConvexSetSpec = Box | L2Ball | AffineSubspace | PointSet

_KINDS = {"Box": Box, "L2Ball": L2Ball, "AffineSubspace": AffineSubspace, "PointSet": PointSet}


def spec_from_dict(d) -> ConvexSetSpec:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _KINDS:
        raise InvalidSetError(f"unknown set kind {kind!r}")
    return _KINDS[kind](**d)


def project_convex(spec: ConvexSetSpec, x) -> np.ndarray:
    """Nearest point of ``spec`` to ``x`` in the l2 sense."""
    return spec.project(np.asarray(x, dtype=np.float64))


def project_union(members: Sequence[ConvexSetSpec], x) -> np.ndarray:
    """Project onto each member and keep the closest; ties go to the lowest index."""
    if len(members) == 0:
        raise InvalidSetError("union needs at least one member")
    x = np.asarray(x, dtype=np.float64)
    best, best_d = None, np.inf
    for m in members:
        p = m.project(x)
        d = np.linalg.norm(p - x)
        if d < best_d:
            best, best_d = p, d
    return best


# --- projector wrapper -------------------------------------------------------

class Projector:
    """A named image -> image map."""

    def __init__(self, apply: Callable[[np.ndarray], np.ndarray], descriptor: str = ""):
        self._apply = apply
        self.descriptor = descriptor

    def __call__(self, x):
        return self._apply(np.asarray(x, dtype=np.float64))

    def __repr__(self):
        return f"Projector({self.descriptor!r})"

    @classmethod
    def convex(cls, spec: ConvexSetSpec) -> "Projector":
        return cls(lambda x: project_convex(spec, x), f"orthogonal projection onto {type(spec).__name__}")

    @classmethod
    def union(cls, members: Sequence[ConvexSetSpec]) -> "Projector":
        members = list(members)
        if not members:
            raise InvalidSetError("union needs at least one member")
        return cls(lambda x: project_union(members, x),
                   "union of " + ", ".join(type(m).__name__ for m in members))

    @classmethod
    def identity(cls) -> "Projector":
        return cls(lambda x: x.copy(), "identity")


# --- samplers ---------------------------------------------------------------

def _random_in_ball(rng, center, radius):
    d = rng.standard_normal(center.shape)
    d /= max(np.linalg.norm(d), 1e-300)
    r = radius * rng.uniform() ** (1.0 / max(center.size, 1))
    return center + r * d


class UnionSampler:
    """Draws points of a union of convex sets (point sets count as singletons).

    ``sampler(rng, center, radius)`` returns a point of S ∩ B_radius(center)
    (projecting a random point of the ball onto each member and keeping those
    that land inside the ball), or a point of S near ``center`` when radius is
    None.  Returns None if no member meets the ball after a few attempts.
    """

    def __init__(self, members: Sequence[ConvexSetSpec], spread: float = 1.0, attempts: int = 20):
        self.members = []
        for m in members:
            if isinstance(m, PointSet):
                self.members.extend(PointSet(pt[None]) for pt in m.points)
            else:
                self.members.append(m)
        self.spread = spread
        self.attempts = attempts

    def __call__(self, rng, center, radius=None):
        center = np.asarray(center, dtype=np.float64)
        if radius is None:
            u = center + self.spread * rng.standard_normal(center.shape)
            m = self.members[rng.integers(len(self.members))]
            return m.project(u)
        for _ in range(self.attempts):
            u = _random_in_ball(rng, center, radius)
            order = rng.permutation(len(self.members))
            for i in order:
                p = self.members[i].project(u)
                if np.linalg.norm(p - center) <= radius:
                    return p
        return None


@dataclass
class ConditionReport:
    satisfied: bool
    samples_tested: int
    epsilon: Optional[float] = None
    witness: Optional[tuple] = None
    witness_value: Optional[float] = None
    max_inner: float = -np.inf


def default_epsilon(members: Sequence[ConvexSetSpec]) -> Optional[float]:
    """A quarter of the smallest pairwise distance between point-set members."""
    pts = []
    for m in members:
        if isinstance(m, PointSet):
            pts.extend(m.points.reshape(len(m.points), -1))
        else:
            return None
    if len(pts) < 2:
        return None
    pts = np.asarray(pts)
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d[np.diag_indices_from(d)] = np.inf
    return 0.25 * float(d.min())


def _sample_x(rng, shape, box, set_sampler, sigma):
    """Half the draws uniform on the box, half Gaussian around points of S."""
    if rng.uniform() < 0.5:
        return rng.uniform(box[0], box[1], size=shape)
    anchor = set_sampler(rng, rng.uniform(box[0], box[1], size=shape), None)
    return anchor + sigma * rng.standard_normal(shape)


def _check_condition(p, set_sampler, shape, epsilon, n_samples, seed, box, sigma, tol):
    rng = np.random.default_rng(seed)
    best = -np.inf
    for i in range(n_samples):
        x = _sample_x(rng, shape, box, set_sampler, sigma)
        px = p(x)
        z = set_sampler(rng, px, epsilon) if epsilon is not None else set_sampler(rng, px, None)
        if z is None:
            continue
        val = float(np.vdot(z - px, x - px))
        best = max(best, val)
        if val > tol:
            return ConditionReport(False, i + 1, epsilon, (x, z), val, best)
    return ConditionReport(True, n_samples, epsilon, None, None, best)


def check_local_condition(p, set_sampler, epsilon, n_samples, shape, seed=0,
                          box=(-2.0, 2.0), sigma=0.5, tol=1e-12) -> ConditionReport:
    """Search for x, z with z in S ∩ B_eps(P(x)) and <z − P(x), x − P(x)> > 0."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return _check_condition(p, set_sampler, shape, epsilon, n_samples, seed, box, sigma, tol)


def check_global_condition(p, set_sampler, n_samples, shape, seed=0,
                           box=(-2.0, 2.0), sigma=0.5, tol=1e-12) -> ConditionReport:
    """As :func:`check_local_condition` with z drawn from all of S."""
    return _check_condition(p, set_sampler, shape, None, n_samples, seed, box, sigma, tol)


def estimate_lipschitz(p, n_pairs, radius, shape, seed=0) -> float:
    """Max of ‖P(x) − P(z)‖/‖x − z‖ over sampled pairs (a lower bound on L)."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n_pairs):
        x = rng.uniform(-radius, radius, size=shape)
        z = x + rng.uniform(0.0, radius) * rng.standard_normal(shape)
        dn = np.linalg.norm(x - z)
        if dn == 0.0:
            continue
        best = max(best, float(np.linalg.norm(p(x) - p(z)) / dn))
    return best


def check_idempotence(p, n_samples, tol, shape, seed=0, scale=2.0) -> bool:
    """True iff ‖P(P(x)) − P(x)‖ <= tol·(1 + ‖P(x)‖) on every sample."""
    return idempotence_defect(p, n_samples, shape, seed, scale)[0] <= tol


def idempotence_defect(p, n_samples, shape, seed=0, scale=2.0, inputs=None):
    """Worst and mean of ‖P(P(x)) − P(x)‖/(1 + ‖P(x)‖)."""
    rng = np.random.default_rng(seed)
    if inputs is None:
        inputs = [rng.uniform(-scale, scale, size=shape) for _ in range(n_samples)]
    vals = []
    for x in inputs:
        px = p(x)
        vals.append(float(np.linalg.norm(p(px) - px) / (1.0 + np.linalg.norm(px))))
    return max(vals), float(np.mean(vals))
