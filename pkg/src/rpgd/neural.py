"""A small residual convolutional network trained to act as a projector.

Architecture (fixed): conv 1→8 (3×3) → ReLU → conv 8→8 (3×3) → ReLU →
conv 8→1 (3×3), zero "same" padding, applied residually:

    CNN(x) = x + s·net(x / s)

where ``s`` is a fixed intensity scale stored with the parameters.  All
weights are float64 and gradients are computed by hand-written backprop.

Training minimises the sum of squared errors between ground-truth images
and the network output over three perturbation ensembles:

    identity     (x, x)
    linear       (A(Hx [+ n]), x)
    dynamic      (CNN_prev(A(Hx [+ n])), x), rebuilt every epoch

in three stages: linear only; linear + dynamic; all three.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .linops import RadonTransform
from .phantoms import add_noise

logger = logging.getLogger(__name__)

CHANNELS = (1, 8, 8, 1)
KERNEL = 3
DEFAULT_SCALE = 100.0
MAGIC = b"RPGDCNN\0"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass
class ConvNetParams:
    weights: list          # per layer, shape (c_out, c_in, 3, 3)
    biases: list           # per layer, shape (c_out,)
    scale: float = DEFAULT_SCALE
    resolution: tuple | None = None

    @classmethod
    def zeros(cls, scale=DEFAULT_SCALE, resolution=None):
        ws = [np.zeros((co, ci, KERNEL, KERNEL)) for ci, co in zip(CHANNELS[:-1], CHANNELS[1:])]
        bs = [np.zeros(co) for co in CHANNELS[1:]]
        return cls(ws, bs, scale, resolution)

    @classmethod
    def initial(cls, seed, scale=DEFAULT_SCALE, resolution=None):
        """He-normal hidden layers, zero output layer (so the net starts as the identity)."""
        rng = np.random.default_rng(seed)
        p = cls.zeros(scale, resolution)
        for w in p.weights[:-1]:
            fan_in = w.shape[1] * KERNEL * KERNEL
            w[...] = rng.standard_normal(w.shape) * math.sqrt(2.0 / fan_in)
        return p

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec) -> "ConvNetParams":
        p = ConvNetParams.zeros(self.scale, self.resolution)
        pos = 0
        for a in p.arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size
        return p

    def copy(self) -> "ConvNetParams":
        return self.with_vector(self.to_vector())

    def __call__(self, x):
        return forward(self, x)


def _im2col(x):
    """(B, C, H, W) -> (B, H, W, C·9) patches with zero padding."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))   # B, C, H, W, 3, 3
    b, c, h, w = x.shape
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, h, w, c * KERNEL * KERNEL)


def conv_forward(x, w, b):
    cols = _im2col(x)
    out = cols @ w.reshape(w.shape[0], -1).T + b          # B, H, W, Cout
    return out.transpose(0, 3, 1, 2), cols


def conv_backward(g, cols, w, need_input_grad=True):
    """Gradients of a 3×3 same conv given the upstream gradient g (B, Cout, H, W)."""
    gt = g.transpose(0, 2, 3, 1).reshape(-1, g.shape[1])          # BHW, Cout
    dw = (gt.T @ cols.reshape(-1, cols.shape[-1])).reshape(w.shape)
    db = g.sum(axis=(0, 2, 3))
    if not need_input_grad:
        return None, dw, db
    # full correlation of g with the spatially flipped, channel-transposed kernel
    wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)                # Cin, Cout, 3, 3
    dx, _ = conv_forward(g, wf, np.zeros(wf.shape[0]))
    return dx, dw, db


def _batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return x[None, None], True
    if x.ndim == 3:
        return x[:, None], False
    raise ValueError(f"expected an image or a stack of images, got shape {x.shape}")


def _net(params, xb):
    """Residual branch on a (B, 1, H, W) batch; returns output and cache."""
    s = params.scale
    h = xb / s
    cache = []
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        pre, cols = conv_forward(h, w, b)
        cache.append(cols)
        if i < n_layers - 1:
            cache.append(pre > 0)
            h = np.maximum(pre, 0.0)
        else:
            h = pre
    return xb + s * h, cache


def forward(params: ConvNetParams, x) -> np.ndarray:
    """x + s·net(x/s) for one image (H, W) or a stack (B, H, W)."""
    xb, single = _batch(x)
    if params.resolution is not None and tuple(xb.shape[-2:]) != tuple(params.resolution):
        raise ValueError(f"network trained at {params.resolution}, got image {xb.shape[-2:]}")
    out, _ = _net(params, xb)
    return out[0, 0] if single else out[:, 0]


def loss_and_grad(params: ConvNetParams, batch):
    """Σ ‖target − CNN(input)‖² over (input, target) pairs and its exact gradient.

    The gradient is returned as a ConvNetParams with the same layout.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    inputs = np.stack([np.asarray(i, dtype=np.float64) for i, _ in batch])[:, None]
    targets = np.stack([np.asarray(t, dtype=np.float64) for _, t in batch])[:, None]
    out, cache = _net(params, inputs)
    diff = out - targets
    loss = float(np.vdot(diff, diff))

    s = params.scale
    g = 2.0 * diff * s              # through the s·net(·) output scaling
    grads_w, grads_b = [], []
    n_layers = len(params.weights)
    for i in reversed(range(n_layers)):
        if i < n_layers - 1:
            mask = cache[2 * i + 1]
            g = g * mask
        cols = cache[2 * i]
        g_in, dw, db = conv_backward(g, cols, params.weights[i], need_input_grad=i > 0)
        grads_w.append(dw)
        grads_b.append(db)
        g = g_in
    grad = ConvNetParams(grads_w[::-1], grads_b[::-1], s, params.resolution)
    return loss, grad


# --- ensembles --------------------------------------------------------------

IDENTITY, LINEAR, DYNAMIC = "Identity", "LinearRecon", "Dynamic"


@dataclass
class PerturbationEnsemble:
    kind: str
    samples: list           # (input, target) pairs; targets are ground truth


@dataclass
class NoiseConfig:
    """Measurement noise used when building the linear-reconstruction ensemble."""

    snr_db: float | None = None
    view_jitter_prob: float = 0.0
    jitter_std_deg: float = 0.05
    seed: int = 0


def linear_recon_inputs(images, op: RadonTransform, A, noise: NoiseConfig | None = None):
    """A(Hx) or, with noise, A(Hx + n) where a fraction of sinograms use jittered views."""
    noise = noise or NoiseConfig()
    rng = np.random.default_rng(noise.seed)
    out = []
    for x in images:
        if noise.view_jitter_prob > 0 and rng.uniform() < noise.view_jitter_prob:
            angles = np.asarray(op.geometry.angles_deg)
            jittered = angles + noise.jitter_std_deg * rng.standard_normal(angles.size)
            y = RadonTransform(op.geometry.with_angles(jittered)).forward(x)
        else:
            y = op.forward(x)
        if noise.snr_db is not None:
            y = add_noise(y, noise.snr_db, rng)
        out.append(A(y))
    return out


def build_ensembles(train_images, op, A, params_current, noise_cfg=None, linear_inputs=None):
    """The identity, linear-reconstruction and dynamic ensembles for one epoch."""
    if len(train_images) == 0:
        raise ValueError("training set is empty")
    if linear_inputs is None:
        linear_inputs = linear_recon_inputs(train_images, op, A, noise_cfg)
    ident = PerturbationEnsemble(IDENTITY, [(x, x) for x in train_images])
    lin = PerturbationEnsemble(LINEAR, list(zip(linear_inputs, train_images)))
    dyn_in = forward(params_current, np.stack(linear_inputs))
    dyn = PerturbationEnsemble(DYNAMIC, list(zip(list(dyn_in), train_images)))
    return [ident, lin, dyn]


# --- training ---------------------------------------------------------------

@dataclass
class TrainingSchedule:
    t1: int = 20
    t2: int = 10
    t3: int = 4
    lr_start: float = 1e-2
    lr_end: float = 1e-3
    momentum: float = 0.99
    grad_clip: float = 1e-2
    batch_size: int = 2
    seed: int = 0

    def __post_init__(self):
        if min(self.t1, self.t2, self.t3) < 0:
            raise ValueError("epoch counts must be non-negative")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or not self.grad_clip > 0:
            raise ValueError("batch size and grad_clip must be positive")

    def learning_rate(self, stage, epoch) -> float:
        """Geometric decay across stage 1, then constant lr_end."""
        if stage == 1 and self.t1 > 1:
            return float(self.lr_start * (self.lr_end / self.lr_start) ** (epoch / (self.t1 - 1)))
        if stage == 1:
            return float(self.lr_start)
        return float(self.lr_end)


@dataclass
class TrainingResult:
    params: ConvNetParams            # after stage 3: the projector
    stage1_params: ConvNetParams     # after stage 1: the regressor
    history: list = field(default_factory=list)


def _sgd_epoch(params, pairs, schedule, lr, velocity, rng):
    vec = params.to_vector()
    order = rng.permutation(len(pairs))
    total = 0.0
    for start in range(0, len(order), schedule.batch_size):
        batch = [pairs[i] for i in order[start:start + schedule.batch_size]]
        loss, grad = loss_and_grad(params, batch)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss} (lr={lr}, batch start {start})")
        g = np.clip(grad.to_vector(), -schedule.grad_clip, schedule.grad_clip)
        velocity *= schedule.momentum
        velocity += g
        vec -= lr * velocity
        params = params.with_vector(vec)
        total += loss
    return params, total


def _ensemble_losses(params, ensembles):
    out = {}
    for ens in ensembles:
        inp = np.stack([i for i, _ in ens.samples])
        tgt = np.stack([t for _, t in ens.samples])
        d = forward(params, inp) - tgt
        out[ens.kind] = float(np.vdot(d, d))
    return out


def train(schedule: TrainingSchedule, train_images, op, A, noise_cfg=None,
          init_params=None, scale=DEFAULT_SCALE, log_every=1) -> TrainingResult:
    """Three-stage training of the residual CNN.

    Stage 1: t1 epochs on the linear ensemble with a geometrically decaying
    learning rate.  Stage 2: t2 epochs on linear + dynamic.  Stage 3: t3
    epochs on all three.  The dynamic ensemble is rebuilt at the start of
    every epoch from the parameters at the end of the previous epoch.
    SGD with momentum and per-element gradient clipping.
    """
    train_images = [np.asarray(x, dtype=np.float64) for x in train_images]
    if not train_images:
        raise ValueError("training set is empty")
    resolution = train_images[0].shape
    rng = np.random.default_rng(schedule.seed)
    if init_params is None:
        params = ConvNetParams.initial(schedule.seed, scale, resolution)
    else:
        params = init_params.copy()
        params.resolution = resolution
    linear_inputs = linear_recon_inputs(train_images, op, A, noise_cfg)
    velocity = np.zeros(params.to_vector().size)
    history = []
    stage1 = params.copy()
    for stage, n_epochs in ((1, schedule.t1), (2, schedule.t2), (3, schedule.t3)):
        for epoch in range(n_epochs):
            lr = schedule.learning_rate(stage, epoch)
            ident, lin, dyn = build_ensembles(train_images, op, A, params, linear_inputs=linear_inputs)
            active = {1: [lin], 2: [lin, dyn], 3: [ident, lin, dyn]}[stage]
            pairs = [p for ens in active for p in ens.samples]
            params, total = _sgd_epoch(params, pairs, schedule, lr, velocity, rng)
            losses = _ensemble_losses(params, active)
            history.append({"stage": stage, "epoch": epoch, "lr": lr, "sgd_loss": total, **losses})
            if log_every and epoch % log_every == 0:
                logger.info("stage %d epoch %d lr %.2e loss %s", stage, epoch, lr,
                            {k: f"{v:.4g}" for k, v in losses.items()})
        if stage == 1:
            stage1 = params.copy()
    return TrainingResult(params, stage1, history)


# --- serialisation ------------------------------------------------------------

def save_params(path, params: ConvNetParams, **header):
    """Binary: magic, u32 version, u32 header length, JSON header, little-endian f64 weights."""
    meta = {"channels": list(CHANNELS), "kernel": KERNEL, "scale": params.scale,
            "resolution": list(params.resolution) if params.resolution else None,
            "n_values": int(params.to_vector().size), **header}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(params.to_vector().astype("<f8").tobytes())


def load_params(path):
    """Returns (params, header)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a network parameter file")
    version, n = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported parameter file version {version}")
    meta = json.loads(data[16:16 + n].decode("utf-8"))
    if tuple(meta["channels"]) != CHANNELS or meta["kernel"] != KERNEL:
        raise ValueError("architecture in file does not match this build")
    vec = np.frombuffer(data[16 + n:], dtype="<f8").astype(np.float64)
    res = tuple(meta["resolution"]) if meta.get("resolution") else None
    params = ConvNetParams.zeros(meta["scale"], res).with_vector(vec)
    return params, meta
