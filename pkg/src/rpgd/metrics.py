"""SNR figures of merit: plain, regressed (affine-fitted) and measurement SNR."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

INF_SENTINEL = math.inf
_EPS_NORM = 1e-300
_FIT_RTOL = 1e-13


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def snr(x_hat, x) -> float:
    """20·log10(‖x‖/‖x − x_hat‖) in dB; +inf when the error vanishes."""
    x_hat, x = _same_shape(x_hat, x)
    err = np.linalg.norm(x - x_hat)
    if err < _EPS_NORM:
        return INF_SENTINEL
    ref = np.linalg.norm(x)
    if ref == 0.0:
        return -INF_SENTINEL
    return float(20.0 * np.log10(ref / err))


def regression_coefficients(x_hat, x):
    """Least-squares (a, b) minimising ‖a·x_hat + b − x‖."""
    x_hat, x = _same_shape(x_hat, x)
    xh, xv = x_hat.ravel(), x.ravel()
    dh = xh - xh.mean()
    var = float(np.dot(dh, dh))
    if var <= _EPS_NORM * max(1.0, float(np.dot(xh, xh))):
        return 0.0, float(xv.mean())
    a = float(np.dot(dh, xv - xv.mean()) / var)
    b = float(xv.mean() - a * xh.mean())
    return a, b


def regressed_snr(x_hat, x):
    """SNR after the best affine fit of x_hat to x; returns (snr_db, a, b).

    The maximisation over (a, b) is ordinary linear regression in closed
    form.  A constant x_hat falls back to the best constant fit.
    """
    a, b = regression_coefficients(x_hat, x)
    x_hat, x = _same_shape(x_hat, x)
    fitted = a * x_hat + b
    # an exact affine relation leaves only rounding error in the fit
    if np.linalg.norm(fitted - x) <= _FIT_RTOL * np.linalg.norm(x):
        return INF_SENTINEL, a, b
    return snr(fitted, x), a, b


def sinogram_snr(op, x_hat, y_clean) -> float:
    """Measurement consistency: snr(H x_hat, y_clean)."""
    return snr(op.forward(x_hat), y_clean)


def _fmt(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


@dataclass
class ImageScore:
    index: int
    snr_db: float
    regressed_snr_db: float
    a: float
    b: float
    sinogram_snr_db: float = float("nan")
    extra: dict = field(default_factory=dict)


@dataclass
class EvalReport:
    """Aggregate and per-image scores; ``inf`` is serialised as the string "inf"."""

    snr_db: float
    regressed_snr_db: float
    a: float
    b: float
    sinogram_snr_db: float
    per_image: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @classmethod
    def from_scores(cls, scores, config=None) -> "EvalReport":
        def mean(attr):
            vals = [getattr(s, attr) for s in scores]
            return float(np.mean(vals)) if vals else float("nan")
        return cls(mean("snr_db"), mean("regressed_snr_db"), mean("a"), mean("b"),
                   mean("sinogram_snr_db"), list(scores), dict(config or {}))

    def to_dict(self) -> dict:
        d = asdict(self)
        d = {k: _fmt(v) for k, v in d.items() if k != "per_image"}
        d["per_image"] = [{k: _fmt(v) for k, v in asdict(s).items()} for s in self.per_image]
        return d

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def to_csv(self, path):
        fields = ["index", "snr_db", "regressed_snr_db", "a", "b", "sinogram_snr_db"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(fields)
            for s in self.per_image:
                w.writerow([_fmt(getattr(s, f)) for f in fields])


def score_image(index, x_hat, x, op=None, y_clean=None) -> ImageScore:
    r, a, b = regressed_snr(x_hat, x)
    sino = sinogram_snr(op, x_hat, y_clean) if op is not None and y_clean is not None else float("nan")
    return ImageScore(index, snr(x_hat, x), r, a, b, sino)
