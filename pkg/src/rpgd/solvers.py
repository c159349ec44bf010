"""Iterative reconstruction: Landweber step, PGD, averaged PGD and relaxed PGD.

All solvers minimise ½‖Hx − y‖² over a set described only through an
operator F (a projector, or any nonlinear map for RPGD).  Each run returns
the final iterate and a :class:`SolverTrace` with one record per iteration.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .linops import LinearOperator, estimate_spectral_bounds
from .metrics import snr
from .projectors import ConditionReport

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
DIVERGED = "diverged"

DIVERGENCE_FACTOR = 1e6


@dataclass
class SolverConfig:
    """Step size, relaxation and stopping parameters.

    ``c`` is either a constant C in (0, 1) or an explicit list c_1, c_2, ...
    (the last entry is repeated once the list runs out).  ``gamma=None``
    selects the default step-size rule of each solver.
    """

    gamma: Optional[float] = None
    alpha0: float = 1.0
    c: float | Sequence[float] = 0.99
    max_iter: int = 500
    stop_tol: float = 1e-6
    skip_first_gradient: bool = False

    def __post_init__(self):
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.alpha0 <= 1:
            raise ValueError("alpha0 must lie in (0, 1]")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")
        if isinstance(self.c, (int, float)):
            if not 0 < self.c < 1:
                raise ValueError("constant C must lie in (0, 1)")
        else:
            self.c = [float(v) for v in self.c]
            if not self.c or any(v <= 0 for v in self.c):
                raise ValueError("custom c sequence must be nonempty and positive")

    def c_at(self, k: int) -> float:
        """c_k for k >= 1."""
        if isinstance(self.c, (int, float)):
            return float(self.c)
        return self.c[min(k - 1, len(self.c) - 1)]

    def to_dict(self):
        return asdict(self)


@dataclass
class IterationRecord:
    k: int
    step_norm: float          # ‖x_{k+1} − x_k‖
    update_norm: float        # ‖z_k − x_k‖
    alpha: float
    data_residual: float      # ‖H x_k − y‖
    c: float = float("nan")
    triggered: bool = False
    snr_db: float = float("nan")
    sinogram_snr_db: float = float("nan")


@dataclass
class SolverTrace:
    records: list = field(default_factory=list)
    status: str = MAX_ITER

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def alphas(self):
        return self.column("alpha")

    @property
    def steps(self):
        return self.column("step_norm")

    def to_csv(self, path):
        names = list(IterationRecord.__dataclass_fields__)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.records:
                w.writerow([getattr(r, n) for n in names])


def _landweber(x, op, y, gamma):
    residual = op.forward(x) - y
    return x - gamma * op.adjoint(residual), float(np.linalg.norm(residual))


def gradient_step(x, op: LinearOperator, y, gamma: float) -> np.ndarray:
    """x − γHᵀ(Hx − y)."""
    return _landweber(np.asarray(x, dtype=np.float64), op, y, gamma)[0]


def default_gamma(op, rule="contraction", bounds=None) -> float:
    """Step size from the spectral bounds of HᵀH.

    ``contraction``: 2/(λ_max + λ_min).  ``relaxed``: 0.9·2/λ_max.
    """
    bounds = bounds or estimate_spectral_bounds(op)
    if rule == "contraction":
        return 2.0 / (bounds.lambda_max + bounds.lambda_min)
    if rule == "relaxed":
        return 0.9 * 2.0 / bounds.lambda_max
    raise ValueError(f"unknown step rule {rule!r}")


def _monitor(rec, x, op, truth, y_clean):
    if truth is not None:
        rec.snr_db = snr(x, truth)
    if y_clean is not None:
        rec.sinogram_snr_db = snr(op.forward(x), y_clean)
    return rec


def _relative_step(step, x):
    return step / (1.0 + float(np.linalg.norm(x)))


def _fixed_alpha_iteration(projector, op, y, cfg, x0, alpha, truth, y_clean):
    gamma = cfg.gamma
    x = np.array(x0, dtype=np.float64, copy=True)
    trace = SolverTrace()
    first_step = None
    for k in range(cfg.max_iter):
        g, res = _landweber(x, op, y, gamma)
        z = projector(g)
        x_new = x + alpha * (z - x) if alpha != 1.0 else z
        step = float(np.linalg.norm(x_new - x))
        trace.records.append(_monitor(
            IterationRecord(k, step, float(np.linalg.norm(z - x)), alpha, res), x, op, truth, y_clean))
        if not np.all(np.isfinite(x_new)):
            trace.status = DIVERGED
            break
        if first_step is None:
            first_step = step
        elif first_step > 0 and step > DIVERGENCE_FACTOR * first_step:
            trace.status = DIVERGED
            x = x_new
            break
        done = _relative_step(step, x) < cfg.stop_tol
        x = x_new
        if done:
            trace.status = CONVERGED
            break
    return x, trace


def pgd(projector, op: LinearOperator, y, cfg: SolverConfig, x0, truth=None, y_clean=None):
    """x_{k+1} = P(x_k − γHᵀ(Hx_k − y)).

    Stops when ‖x_{k+1} − x_k‖/(1 + ‖x_k‖) < stop_tol.  Divergence (a step
    10⁶ times the first one) ends the run with status "diverged".
    """
    if cfg.gamma is None:
        cfg = SolverConfig(**{**cfg.to_dict(), "gamma": default_gamma(op, "contraction")})
    return _fixed_alpha_iteration(projector, op, y, cfg, x0, 1.0, truth, y_clean)


def averaged_pgd(projector, op: LinearOperator, y, cfg: SolverConfig, x0, alpha: float,
                 truth=None, y_clean=None):
    """x_{k+1} = (1 − α)x_k + α·G_γ(x_k) with a fixed α in (0, 1)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if cfg.gamma is None:
        cfg = SolverConfig(**{**cfg.to_dict(), "gamma": default_gamma(op, "relaxed")})
    return _fixed_alpha_iteration(projector, op, y, cfg, x0, alpha, truth, y_clean)


def rpgd(F, op: LinearOperator, y, A, cfg: SolverConfig, x0=None, truth=None, y_clean=None):
    """Relaxed projected gradient descent.

    z_k = F(x_k − γHᵀ(Hx_k − y)); for k >= 1 the relaxation shrinks to
    α_k = c_k·‖z_{k−1} − x_{k−1}‖/‖z_k − x_k‖·α_{k−1} whenever
    ‖z_k − x_k‖ > c_k‖z_{k−1} − x_{k−1}‖, and x_{k+1} = (1 − α_k)x_k + α_k z_k.
    The run starts from x_0 = A(y) unless ``x0`` is given.  With
    ``skip_first_gradient`` the first update is z_0 = F(x_0).
    """
    if cfg.gamma is None:
        cfg = SolverConfig(**{**cfg.to_dict(), "gamma": default_gamma(op, "relaxed")})
    gamma = cfg.gamma
    x = np.array(A(y) if x0 is None else x0, dtype=np.float64, copy=True)
    alpha = cfg.alpha0
    prev_update = None
    trace = SolverTrace()
    for k in range(cfg.max_iter):
        if k == 0 and cfg.skip_first_gradient:
            res = float(np.linalg.norm(op.forward(x) - y))
            z = F(x)
        else:
            g, res = _landweber(x, op, y, gamma)
            z = F(g)
        update = float(np.linalg.norm(z - x))
        c_k = float("nan")
        triggered = False
        if k >= 1:
            c_k = cfg.c_at(k)
            # update == 0 never triggers, so the division is guarded
            if update > c_k * prev_update:
                alpha = c_k * (prev_update / update) * alpha
                triggered = True
        x_new = (1.0 - alpha) * x + alpha * z
        step = float(np.linalg.norm(x_new - x))
        trace.records.append(_monitor(
            IterationRecord(k, step, update, alpha, res, c_k, triggered), x, op, truth, y_clean))
        prev_update = update
        done = _relative_step(step, x) < cfg.stop_tol
        x = x_new
        if done:
            trace.status = CONVERGED
            break
    return x, trace


def residual_bound_violations(trace: SolverTrace, rtol=1e-9, atol=1e-12) -> list:
    """Iterations where ‖r_k‖ > ‖r_0‖·∏_{i=1..k} c_i (with float slack)."""
    steps = trace.steps
    cs = trace.column("c")
    bad = []
    if len(steps) == 0:
        return bad
    bound = steps[0]
    for k in range(1, len(steps)):
        bound *= cs[k]
        if steps[k] > bound * (1 + rtol) + atol:
            bad.append(k)
    return bad


def certify_fixed_point(F, op, y, x_star, gamma) -> float:
    """‖G_γ(x*) − x*‖/(1 + ‖x*‖) with G_γ(x) = F(x − γHᵀ(Hx − y))."""
    x_star = np.asarray(x_star, dtype=np.float64)
    g = F(gradient_step(x_star, op, y, gamma))
    return float(np.linalg.norm(g - x_star) / (1.0 + np.linalg.norm(x_star)))


def certify_local_minimizer(x_star, op, y, set_sampler, epsilon, n_samples, seed=0,
                            tol=1e-10) -> ConditionReport:
    """Sample z in S ∩ B_eps(x*) and look for ‖Hz − y‖ < ‖Hx* − y‖ − tol.

    ``satisfied`` is True iff no sampled point beats x*.
    """
    rng = np.random.default_rng(seed)
    x_star = np.asarray(x_star, dtype=np.float64)
    base = float(np.linalg.norm(op.forward(x_star) - y))
    for i in range(n_samples):
        z = set_sampler(rng, x_star, epsilon)
        if z is None:
            continue
        val = float(np.linalg.norm(op.forward(z) - y))
        if val < base - tol:
            return ConditionReport(False, i + 1, epsilon, (x_star, z), base - val)
    return ConditionReport(True, n_samples, epsilon)
