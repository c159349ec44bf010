"""Synthetic ground truth and sinogram simulation.

Measurements follow the anti-inverse-crime protocol: the true acquisition
uses view angles jittered by Gaussian noise (0.05° std by default) while
reconstruction uses the nominal angles, and white Gaussian noise is scaled
so the sinogram SNR is exactly the requested value.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .io import load_array, save_array, write_json
from .linops import RadonTransform, SinogramGeometry

logger = logging.getLogger(__name__)

DYNAMIC_RANGE = (0.0, 350.0)
MIN_SIZE = 8
TEST_SEED_OFFSET = 10_000_000

# (intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees)
SHEPP_LOGAN = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
]


@dataclass
class PhantomSpec:
    kind: str = "RandomEllipses"       # or "SheppLogan"
    size: int = 32
    n_ellipses: int = 6
    intensity_range: tuple = DYNAMIC_RANGE
    seed: int = 0

    def __post_init__(self):
        if self.size < MIN_SIZE:
            raise ValueError(f"phantom size must be at least {MIN_SIZE}, got {self.size}")
        if self.kind not in ("SheppLogan", "RandomEllipses"):
            raise ValueError(f"unknown phantom kind {self.kind!r}")
        lo, hi = self.intensity_range
        if not lo < hi:
            raise ValueError("intensity range must be increasing")
        self.intensity_range = (float(lo), float(hi))


def _grid(size):
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    X, Y = np.meshgrid(c, -c)
    return X, Y


def ellipse_mask(size, a, b, x0, y0, phi_deg):
    X, Y = _grid(size)
    phi = np.deg2rad(phi_deg)
    xr = (X - x0) * np.cos(phi) + (Y - y0) * np.sin(phi)
    yr = -(X - x0) * np.sin(phi) + (Y - y0) * np.cos(phi)
    return (xr / a) ** 2 + (yr / b) ** 2 <= 1.0


def shepp_logan(size, hi=DYNAMIC_RANGE[1]):
    """Modified Shepp-Logan phantom scaled so its maximum intensity is ``hi``."""
    img = np.zeros((size, size))
    for val, a, b, x0, y0, phi in SHEPP_LOGAN:
        img[ellipse_mask(size, a, b, x0, y0, phi)] += val
    return np.clip(img, 0.0, None) * hi


def random_ellipses(size, n_ellipses, intensity_range, rng):
    """A body-like ellipse with random inserts, clamped to the intensity range.

    Inserts whose semi-axes are below 1.5 pixels are resampled.
    """
    lo, hi = intensity_range
    span = hi - lo
    img = np.zeros((size, size))
    body_a, body_b = rng.uniform(0.6, 0.9, size=2)
    img[ellipse_mask(size, body_a, body_b, 0.0, 0.0, rng.uniform(0, 180))] = lo + rng.uniform(0.3, 0.6) * span
    min_axis = 1.5 * 2.0 / size
    placed = 0
    while placed < n_ellipses:
        a, b = rng.uniform(0.05, 0.4, size=2)
        if min(a, b) < min_axis:
            continue
        r = rng.uniform(0, 0.6)
        t = rng.uniform(0, 2 * np.pi)
        mask = ellipse_mask(size, a, b, r * np.cos(t) * body_a, r * np.sin(t) * body_b, rng.uniform(0, 180))
        if not mask.any():
            continue
        img[mask] += rng.uniform(-0.3, 0.4) * span
        placed += 1
    return np.clip(img, lo, hi)


def generate_phantom(spec: PhantomSpec) -> np.ndarray:
    if spec.kind == "SheppLogan":
        return np.clip(shepp_logan(spec.size, spec.intensity_range[1]), *spec.intensity_range)
    rng = np.random.default_rng(spec.seed)
    return random_ellipses(spec.size, spec.n_ellipses, spec.intensity_range, rng)


@dataclass
class MeasurementConfig:
    n_views: int = 45
    n_offsets: Optional[int] = None
    angle_jitter_std_deg: float = 0.05
    measurement_snr_db: Optional[float] = None
    seed: int = 0
    pixel_size: float = 1.0

    def geometry(self, size) -> SinogramGeometry:
        return SinogramGeometry.parallel(size, self.n_views, self.n_offsets, self.pixel_size)


def add_noise(y, snr_db, rng):
    """y + n with n white Gaussian scaled so 20·log10(‖y‖/‖n‖) = snr_db exactly."""
    n = rng.standard_normal(y.shape)
    target = np.linalg.norm(y) / 10.0 ** (snr_db / 20.0)
    return y + n * (target / np.linalg.norm(n))


def simulate_measurement(x, cfg: MeasurementConfig, geometry: SinogramGeometry = None):
    """Forward-project with independently jittered view angles, then add noise.

    Returns (sinogram, jittered_angles_deg).  The jittered angles describe
    the true acquisition; reconstruction should use the nominal geometry.
    """
    x = np.asarray(x, dtype=np.float64)
    geometry = geometry or cfg.geometry(x.shape[0])
    rng = np.random.default_rng(cfg.seed)
    angles = np.asarray(geometry.angles_deg)
    if cfg.angle_jitter_std_deg > 0:
        angles = angles + cfg.angle_jitter_std_deg * rng.standard_normal(angles.size)
        y = RadonTransform(geometry.with_angles(angles)).forward(x)
    else:
        y = RadonTransform(geometry).forward(x)
    if cfg.measurement_snr_db is not None and np.isfinite(cfg.measurement_snr_db):
        y = add_noise(y, cfg.measurement_snr_db, rng)
    return y, angles


# --- datasets ---------------------------------------------------------------

def split_seeds(n_train, n_test, base_seed=0):
    train = [base_seed + i for i in range(n_train)]
    test = [base_seed + TEST_SEED_OFFSET + i for i in range(n_test)]
    if set(train) & set(test):
        raise ValueError("train and test phantom seeds overlap")
    return train, test


def make_phantom_set(n, size, base_seed=0, split="train", n_ellipses=6):
    """In-memory random-ellipse phantoms using the same seed split as datasets on disk."""
    if split == "train":
        seeds = split_seeds(n, 0, base_seed)[0]
    else:
        seeds = split_seeds(0, n, base_seed)[1]
    return [generate_phantom(PhantomSpec("RandomEllipses", size, n_ellipses, DYNAMIC_RANGE, s))
            for s in seeds]


def write_dataset(out_dir, n_train=475, n_test=25, size=32, base_seed=0, n_ellipses=6):
    """Write phantoms/{train,test}/NNNN.f64 plus manifest.json under out_dir."""
    train_seeds, test_seeds = split_seeds(n_train, n_test, base_seed)
    manifest = {"size": size, "n_ellipses": n_ellipses, "base_seed": base_seed,
                "dynamic_range": list(DYNAMIC_RANGE), "splits": {}}
    for split, seeds in (("train", train_seeds), ("test", test_seeds)):
        d = os.path.join(out_dir, "phantoms", split)
        os.makedirs(d, exist_ok=True)
        entries = []
        for i, seed in enumerate(seeds):
            spec = PhantomSpec("RandomEllipses", size, n_ellipses, DYNAMIC_RANGE, seed)
            name = f"{i:04d}.f64"
            save_array(os.path.join(d, name), generate_phantom(spec), seed=seed, pixel_size=1.0)
            entries.append({"file": name, "seed": seed})
        manifest["splits"][split] = entries
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def load_split(dataset_dir, split):
    d = os.path.join(dataset_dir, "phantoms", split)
    with open(os.path.join(dataset_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    return [load_array(os.path.join(d, e["file"]))[0] for e in manifest["splits"][split]]
