"""Direct reconstructions: backprojection and filtered backprojection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linops import ConfigurationError, RadonTransform, SinogramGeometry


def _check_sino(sino, geometry):
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != geometry.sinogram_shape:
        raise ValueError(f"sinogram shape {sino.shape} does not match geometry {geometry.sinogram_shape}")
    return sino


def backproject(sino, geometry: SinogramGeometry) -> np.ndarray:
    """Hᵀy, identical to the exact Radon adjoint."""
    sino = _check_sino(sino, geometry)
    return RadonTransform(geometry).adjoint(sino)


def ramp_filter(n_offsets: int, spacing: float) -> np.ndarray:
    """Frequency response |ω| of the ram-lak filter on the padded grid.

    The grid is the next power of two at least twice the offset count.  The
    DC bin is exactly zero.
    """
    n_pad = max(64, int(2 ** np.ceil(np.log2(2 * n_offsets))))
    freq = np.fft.fftfreq(n_pad, d=spacing)
    return np.abs(freq)


def filter_sinogram(sino, spacing: float) -> np.ndarray:
    n_views, n_off = sino.shape
    response = ramp_filter(n_off, spacing)
    padded = np.zeros((n_views, response.size))
    padded[:, :n_off] = sino
    filtered = np.fft.ifft(np.fft.fft(padded, axis=1) * response, axis=1).real
    return filtered[:, :n_off]


def interp_backproject(sino, geometry: SinogramGeometry) -> np.ndarray:
    """Pixel-driven backprojection with linear interpolation between offsets."""
    ny, nx = geometry.image_shape
    p = geometry.pixel_size
    xs = (np.arange(nx) - nx / 2.0 + 0.5) * p
    ys = (ny / 2.0 - np.arange(ny) - 0.5) * p
    X, Y = np.meshgrid(xs, ys)
    s0 = geometry.offsets[0]
    ds = geometry.offset_spacing
    n_off = geometry.n_offsets
    out = np.zeros((ny, nx))
    for row, angle in zip(sino, np.deg2rad(geometry.angles_deg)):
        pos = (X * np.cos(angle) + Y * np.sin(angle) - s0) / ds
        lo = np.floor(pos).astype(np.int64)
        frac = pos - lo
        padded = np.concatenate([[0.0], row, [0.0]])
        i0 = np.clip(lo + 1, 0, n_off + 1)
        i1 = np.clip(lo + 2, 0, n_off + 1)
        out += (1.0 - frac) * padded[i0] + frac * padded[i1]
    return out


def fbp(sino, geometry: SinogramGeometry) -> np.ndarray:
    """Filtered backprojection with the ram-lak filter.

    Each view is ramp filtered along the offsets, backprojected pixel by
    pixel with linear interpolation, and the sum is scaled by π/(2·n_views).
    The filter response is 2|f| in cycles per detector bin; dividing by the
    bin spacing keeps physical units, so FBP(Hx) ≈ x.
    """
    sino = _check_sino(sino, geometry)
    if geometry.n_views < 2:
        raise ConfigurationError("FBP needs at least two views")
    ds = geometry.offset_spacing
    filtered = filter_sinogram(sino, ds)
    # |ω| with ω in cycles/length is (2|f|)/(2·ds); the 2 is folded into π/(2n)·2
    return interp_backproject(filtered, geometry) * (np.pi / (2 * geometry.n_views)) * 2.0


@dataclass(frozen=True)
class ReconstructorA:
    """The fixed linear initialiser x₀ = A y used by RPGD and the training ensembles."""

    kind: str
    geometry: SinogramGeometry

    def __post_init__(self):
        if self.kind not in ("BP", "FBP"):
            raise ConfigurationError(f"unknown reconstructor kind {self.kind!r}")

    def __call__(self, sino) -> np.ndarray:
        if self.kind == "BP":
            return backproject(sino, self.geometry)
        return fbp(sino, self.geometry)
