"""Benchmark plumbing shared by the command line and the benchmark tests.

Measurements follow one protocol everywhere: jittered view angles for the
true acquisition, exact-SNR white noise, reconstruction with the nominal
operator.  Methods are dispatched by name.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .classical import ReconstructorA, backproject
from .linops import ConfigurationError, RadonTransform, SinogramGeometry
from .metrics import EvalReport, ImageScore, score_image
from .neural import ConvNetParams, forward
from .phantoms import DYNAMIC_RANGE, MeasurementConfig, simulate_measurement
from .projectors import Box, Projector
from .solvers import SolverConfig, pgd, rpgd
from .tv import lambda_grid_search

logger = logging.getLogger(__name__)

METHODS = ("FBP", "BP", "TV", "REGRESSOR", "PGD", "RPGD")


def parse_snr(value) -> float:
    """'inf', 'none' or a number; +inf means noiseless."""
    if value is None:
        return math.inf
    if isinstance(value, str) and value.strip().lower() in ("inf", "none", "noiseless"):
        return math.inf
    return float(value)


def snr_label(level: float) -> str:
    return "inf" if math.isinf(level) else f"{level:g}"


def measure_set(images, geometry: SinogramGeometry, snr_db=math.inf, jitter_std_deg=0.05, seed=0):
    """Noisy jittered sinograms for a list of images; image i uses seed + i.

    The same seed at two SNR levels gives the same noise direction, so
    levels can be compared pairwise.
    """
    out = []
    for i, x in enumerate(images):
        cfg = MeasurementConfig(geometry.n_views, geometry.n_offsets, jitter_std_deg,
                                None if math.isinf(snr_db) else snr_db, seed + i, geometry.pixel_size)
        out.append(simulate_measurement(x, cfg, geometry)[0])
    return out


@dataclass
class MethodContext:
    geometry: SinogramGeometry
    regressor: Optional[ConvNetParams] = None
    projector: Optional[ConvNetParams] = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    gammas: tuple = ()                  # RPGD step sizes to tune over; empty = solver.gamma
    tv_grid: int = 20
    tv_iter: int = 100
    pgd_projector: str = "box"

    def __post_init__(self):
        self.op = RadonTransform(self.geometry)
        self.A = ReconstructorA("FBP", self.geometry)

    def require(self, method):
        if method not in METHODS:
            raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")
        if method == "REGRESSOR" and self.regressor is None:
            raise ConfigurationError("method REGRESSOR needs a regressor model file")
        if method == "RPGD" and self.projector is None:
            raise ConfigurationError("method RPGD needs a projector model file")
        if method == "PGD" and self.pgd_projector == "cnn" and self.projector is None:
            raise ConfigurationError("PGD with the CNN projector needs a projector model file")


@dataclass
class MethodResult:
    method: str
    report: EvalReport
    images: list
    traces: list            # SolverTrace or None per image
    settings: dict = field(default_factory=dict)


def _box_projector():
    lo, hi = DYNAMIC_RANGE
    return Projector.convex(Box(lo, hi))


def _rpgd_run(ctx, ys, truths, y_clean, gamma):
    cfg = SolverConfig(**{**ctx.solver.to_dict(), "gamma": gamma})
    out = []
    for y, x, yc in zip(ys, truths, y_clean):
        out.append(rpgd(ctx.projector, ctx.op, y, ctx.A, cfg, truth=x, y_clean=yc))
    return out


def run_method(method, ctx: MethodContext, truths, ys, y_clean=None) -> MethodResult:
    """Reconstruct every sinogram with one method and score it against the truth."""
    ctx.require(method)
    if y_clean is None:
        y_clean = [ctx.op.forward(x) for x in truths]
    images, traces, extras, settings = [], [], [], {}
    if method == "FBP":
        images = [ctx.A(y) for y in ys]
    elif method == "BP":
        images = [backproject(y, ctx.geometry) for y in ys]
    elif method == "REGRESSOR":
        images = [forward(ctx.regressor, ctx.A(y)) for y in ys]
    elif method == "TV":
        for y, x in zip(ys, truths):
            lam, img, scores = lambda_grid_search(ctx.op, y, x, ctx.tv_grid, x0=ctx.A(y), n_iter=ctx.tv_iter)
            images.append(img)
            extras.append({"best_lambda": lam})
    elif method == "PGD":
        proj = ctx.projector if ctx.pgd_projector == "cnn" else _box_projector()
        for y, x, yc in zip(ys, truths, y_clean):
            img, tr = pgd(proj, ctx.op, y, ctx.solver, ctx.A(y), truth=x, y_clean=yc)
            images.append(img)
            traces.append(tr)
    elif method == "RPGD":
        gammas = list(ctx.gammas) or [ctx.solver.gamma]
        best = None
        for g in gammas:
            runs = _rpgd_run(ctx, ys, truths, y_clean, g)
            mean = float(np.mean([score_image(0, r[0], x).regressed_snr_db for r, x in zip(runs, truths)]))
            logger.info("RPGD gamma=%s mean regressed SNR %.3f dB", g, mean)
            if best is None or mean > best[0]:
                best = (mean, g, runs)
        _, gamma, runs = best
        settings["gamma"] = gamma
        settings["gamma_grid"] = gammas
        images = [r[0] for r in runs]
        traces = [r[1] for r in runs]
    for img in images:
        if not np.all(np.isfinite(img)):
            raise FloatingPointError(f"{method} produced non-finite values")
    scores = []
    for i, (img, x, yc) in enumerate(zip(images, truths, y_clean)):
        s: ImageScore = score_image(i, img, x, ctx.op, yc)
        if extras:
            s.extra.update(extras[i])
        if traces:
            s.extra.update({"iterations": len(traces[i]), "status": traces[i].status,
                            "final_alpha": float(traces[i].alphas[-1])})
        scores.append(s)
    report = EvalReport.from_scores(scores, {"method": method, **settings})
    return MethodResult(method, report, images, traces or [None] * len(images), settings)
