"""Matrix-free linear operators and the parallel-beam discrete Radon transform.

The Radon transform is ray driven: every detector sample is the exact line
integral of the piecewise-constant pixel image, computed from the exact
intersection lengths of the ray with the pixel grid (Siddon traversal).  The
ray weights are assembled once per geometry into a sparse matrix, so the
adjoint is the literal transpose of the forward map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    """Raised when an operator or geometry is configured inconsistently."""


@dataclass(frozen=True)
class SinogramGeometry:
    """Parallel-beam acquisition geometry.

    Pixels are square with side ``pixel_size`` and the image is centred on the
    origin.  Row 0 of the image is the top (largest y).  Detector offsets are
    bin centres that evenly span the image diagonal.
    """

    image_shape: tuple[int, int]
    angles_deg: tuple[float, ...]
    n_offsets: int
    pixel_size: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "image_shape", tuple(int(s) for s in self.image_shape))
        object.__setattr__(self, "angles_deg", tuple(float(a) for a in self.angles_deg))
        if len(self.angles_deg) == 0:
            raise ConfigurationError("geometry needs at least one view angle")
        if min(self.image_shape) < 1:
            raise ConfigurationError(f"empty image shape {self.image_shape}")
        if self.n_offsets < 1:
            raise ConfigurationError("n_offsets must be positive")
        if not self.pixel_size > 0:
            raise ConfigurationError("pixel_size must be positive")

    @classmethod
    def parallel(cls, size, n_views, n_offsets=None, pixel_size=1.0):
        """Evenly spaced views over [0, 180) for a square ``size`` image.

        The offset count defaults to 1.5 times the image width.
        """
        if n_views < 1:
            raise ConfigurationError("n_views must be positive")
        if n_offsets is None:
            n_offsets = int(round(1.5 * size))
        angles = np.arange(n_views) * (180.0 / n_views)
        return cls((size, size), tuple(angles), n_offsets, pixel_size)

    def with_angles(self, angles_deg) -> "SinogramGeometry":
        return SinogramGeometry(self.image_shape, tuple(angles_deg), self.n_offsets, self.pixel_size)

    @property
    def n_views(self) -> int:
        return len(self.angles_deg)

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_offsets)

    @property
    def diagonal(self) -> float:
        h, w = self.image_shape
        return float(np.hypot(h, w) * self.pixel_size)

    @property
    def offset_spacing(self) -> float:
        return self.diagonal / self.n_offsets

    @property
    def offsets(self) -> np.ndarray:
        ds = self.offset_spacing
        return -0.5 * self.diagonal + (np.arange(self.n_offsets) + 0.5) * ds

    def to_dict(self) -> dict:
        return {
            "image_shape": list(self.image_shape),
            "angles_deg": list(self.angles_deg),
            "n_offsets": self.n_offsets,
            "pixel_size": self.pixel_size,
        }

    @classmethod
    def from_dict(cls, d) -> "SinogramGeometry":
        return cls(tuple(d["image_shape"]), tuple(d["angles_deg"]), int(d["n_offsets"]),
                   float(d.get("pixel_size", 1.0)))


class LinearOperator:
    """A forward/adjoint pair acting on arrays of fixed shape.

    Subclasses implement ``_forward`` and ``_adjoint``; shapes are checked here.
    """

    def __init__(self, domain_shape, range_shape):
        self.domain_shape = tuple(domain_shape)
        self.range_shape = tuple(range_shape)

    @property
    def domain_size(self) -> int:
        return int(np.prod(self.domain_shape))

    @property
    def range_size(self) -> int:
        return int(np.prod(self.range_shape))

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.domain_shape:
            raise ValueError(f"forward expects shape {self.domain_shape}, got {x.shape}")
        return self._forward(x)

    def adjoint(self, u):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != self.range_shape:
            raise ValueError(f"adjoint expects shape {self.range_shape}, got {u.shape}")
        return self._adjoint(u)

    def normal(self, x):
        """Apply HᵀH."""
        return self.adjoint(self.forward(x))

    __call__ = forward

    def _forward(self, x):
        raise NotImplementedError

    def _adjoint(self, u):
        raise NotImplementedError


class MatrixOperator(LinearOperator):
    """Dense or sparse matrix acting on flattened arrays."""

    def __init__(self, matrix, domain_shape=None, range_shape=None):
        self.matrix = matrix if sp.issparse(matrix) else np.asarray(matrix, dtype=np.float64)
        m, n = self.matrix.shape
        super().__init__(domain_shape or (n,), range_shape or (m,))
        if self.domain_size != n or self.range_size != m:
            raise ConfigurationError("matrix size does not match the declared shapes")

    def _forward(self, x):
        return np.asarray(self.matrix @ x.ravel()).reshape(self.range_shape)

    def _adjoint(self, u):
        return np.asarray(self.matrix.T @ u.ravel()).reshape(self.domain_shape)


class IdentityOperator(LinearOperator):
    def __init__(self, shape):
        super().__init__(shape, shape)

    def _forward(self, x):
        return x.copy()

    def _adjoint(self, u):
        return u.copy()


def siddon_system_matrix(geometry: SinogramGeometry) -> sp.csr_matrix:
    """Assemble the ray-driven system matrix of exact intersection lengths.

    Row ``v * n_offsets + k`` holds the lengths of ray (view ``v``, offset
    ``k``) inside each pixel; columns index the row-major image.  The ray at
    angle θ and offset s is the line x·cosθ + y·sinθ = s.
    """
    ny, nx = geometry.image_shape
    p = geometry.pixel_size
    theta = np.deg2rad(np.asarray(geometry.angles_deg))
    offsets = geometry.offsets
    cos = np.repeat(np.cos(theta), geometry.n_offsets)
    sin = np.repeat(np.sin(theta), geometry.n_offsets)
    s = np.tile(offsets, geometry.n_views)
    n_rays = s.size

    # point(t) = s·(cos, sin) + t·(−sin, cos)
    px, py = s * cos, s * sin
    dx, dy = -sin, cos
    x_planes = (np.arange(nx + 1) - nx / 2.0) * p
    y_planes = (np.arange(ny + 1) - ny / 2.0) * p
    tiny = 1e-12

    with np.errstate(divide="ignore", invalid="ignore"):
        tx = (x_planes[None, :] - px[:, None]) / dx[:, None]
        ty = (y_planes[None, :] - py[:, None]) / dy[:, None]
    flat_x = np.abs(dx) < tiny
    flat_y = np.abs(dy) < tiny
    tx[flat_x] = np.nan
    ty[flat_y] = np.nan

    big = np.inf
    tx_lo = np.where(flat_x, -big, np.nanmin(np.where(flat_x[:, None], 0.0, tx), axis=1))
    tx_hi = np.where(flat_x, big, np.nanmax(np.where(flat_x[:, None], 0.0, tx), axis=1))
    ty_lo = np.where(flat_y, -big, np.nanmin(np.where(flat_y[:, None], 0.0, ty), axis=1))
    ty_hi = np.where(flat_y, big, np.nanmax(np.where(flat_y[:, None], 0.0, ty), axis=1))
    # a ray parallel to an axis misses the box when it lies outside the slab
    x_half, y_half = nx * p / 2.0, ny * p / 2.0
    miss = (flat_x & (np.abs(px) >= x_half)) | (flat_y & (np.abs(py) >= y_half))
    t_enter = np.maximum(tx_lo, ty_lo)
    t_exit = np.minimum(tx_hi, ty_hi)
    t_exit = np.where(miss | (t_exit < t_enter), t_enter, t_exit)

    ts = np.concatenate([tx, ty, t_enter[:, None], t_exit[:, None]], axis=1)
    ts = np.where(np.isnan(ts), t_enter[:, None], ts)
    ts = np.clip(ts, t_enter[:, None], t_exit[:, None])
    ts.sort(axis=1)
    lengths = np.diff(ts, axis=1)
    mids = 0.5 * (ts[:, 1:] + ts[:, :-1])
    mx = px[:, None] + mids * dx[:, None]
    my = py[:, None] + mids * dy[:, None]
    col = np.floor(mx / p + nx / 2.0).astype(np.int64)
    row = np.floor(ny / 2.0 - my / p).astype(np.int64)

    keep = lengths > tiny * p
    ray_idx = np.broadcast_to(np.arange(n_rays)[:, None], lengths.shape)[keep]
    col, row, lengths = col[keep], row[keep], lengths[keep]
    np.clip(col, 0, nx - 1, out=col)
    np.clip(row, 0, ny - 1, out=row)
    mat = sp.csr_matrix((lengths, (ray_idx, row * nx + col)), shape=(n_rays, nx * ny))
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


class RadonTransform(LinearOperator):
    """Parallel-beam Radon transform with an exact-transpose adjoint."""

    def __init__(self, geometry: SinogramGeometry):
        super().__init__(geometry.image_shape, geometry.sinogram_shape)
        self.geometry = geometry

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return siddon_system_matrix(self.geometry)

    @cached_property
    def _matrix_t(self) -> sp.csr_matrix:
        return self.matrix.T.tocsr()

    def _forward(self, x):
        return (self.matrix @ x.ravel()).reshape(self.range_shape)

    def _adjoint(self, u):
        return (self._matrix_t @ u.ravel()).reshape(self.domain_shape)


def radon_forward(img, geometry: SinogramGeometry) -> np.ndarray:
    return RadonTransform(geometry).forward(img)


def radon_adjoint(sino, geometry: SinogramGeometry) -> np.ndarray:
    return RadonTransform(geometry).adjoint(sino)


@dataclass
class SpectralBounds:
    lambda_max: float
    lambda_min: float
    iterations_used: int
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _power_iteration(apply: Callable, shape, tol, max_iter, rng):
    v = rng.standard_normal(shape)
    v /= np.linalg.norm(v)
    history = []
    estimate = 0.0
    for it in range(1, max_iter + 1):
        w = apply(v)
        estimate_new = float(np.vdot(v, w))
        history.append(estimate_new)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0, it, True, history
        v = w / norm_w
        if it > 1 and abs(estimate_new - estimate) <= tol * abs(estimate_new):
            return estimate_new, it, True, history
        estimate = estimate_new
    return estimate, max_iter, False, history


def estimate_spectral_bounds(op: LinearOperator, tol=1e-8, max_iter=1000, seed=0) -> SpectralBounds:
    """Largest and smallest eigenvalues of HᵀH by power iteration.

    ``lambda_min`` is set to 0 when the operator has fewer measurements than
    unknowns; otherwise it comes from power iteration on λ_max·I − HᵀH.
    Estimates are Rayleigh quotients of the normalised iterates, which are
    non-decreasing for a positive semidefinite operator.
    """
    rng = np.random.default_rng(seed)
    lmax, it, ok, hist = _power_iteration(op.normal, op.domain_shape, tol, max_iter, rng)
    lmax = max(lmax, 0.0)
    if op.range_size < op.domain_size:
        return SpectralBounds(lmax, 0.0, it, ok, hist)
    shifted, it2, ok2, _ = _power_iteration(
        lambda v: lmax * v - op.normal(v), op.domain_shape, tol, max_iter, rng)
    lmin = min(max(lmax - shifted, 0.0), lmax)
    return SpectralBounds(lmax, lmin, it + it2, ok and ok2, hist)


def adjoint_gap(op: LinearOperator, n_pairs=50, seed=0) -> float:
    """Worst relative gap |<Hx,u> − <x,Hᵀu>| over random pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        x = rng.standard_normal(op.domain_shape)
        u = rng.standard_normal(op.range_shape)
        lhs = float(np.vdot(op.forward(x), u))
        rhs = float(np.vdot(x, op.adjoint(u)))
        scale = max(abs(lhs), abs(rhs), np.finfo(float).tiny)
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def dense_matrix(op: LinearOperator) -> np.ndarray:
    """Materialise an operator column by column (small problems only)."""
    cols = []
    e = np.zeros(op.domain_size)
    for j in range(op.domain_size):
        e[j] = 1.0
        cols.append(op.forward(e.reshape(op.domain_shape)).ravel())
        e[j] = 0.0
    return np.stack(cols, axis=1)
