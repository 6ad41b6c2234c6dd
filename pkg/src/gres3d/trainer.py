"""Adam training loop with polynomial learning-rate decay and binary checkpoints."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .geometry import SceneCloud
from .losses import LossWeights, sample_loss
from .model import Expression, ModelConfig, ModelParams, forward_state, init_params, param_shapes

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GRES3DCK"
CHECKPOINT_VERSION = 1


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    base_lr: float = 1e-4
    total_steps: int = 2000
    poly_power: float = 4.0
    batch_size: int = 4
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    log_every: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.total_steps < 1:
            raise ValueError("total_steps must be >= 1")
        if not self.base_lr > 0:
            raise ValueError("base_lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ValueError(f"unknown TrainConfig keys: {sorted(extra)}")
        return cls(**d)


def poly_lr(step: int, cfg: TrainConfig) -> float:
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    return cfg.base_lr * (1.0 - step / cfg.total_steps) ** cfg.poly_power


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def batch_loss(batch, params: ModelParams, mcfg: ModelConfig, weights: LossWeights) -> dc.Tensor:
    """Mean of the per-sample total losses over ``(scene, expression)`` pairs."""
    total = None
    for scene, expr in batch:
        state = forward_state(scene, expr, params, mcfg)
        loss = sample_loss(state, scene, expr, params, mcfg, weights).total
        total = loss if total is None else dc.add(total, loss)
    return dc.mul(total, 1.0 / len(batch))


def train_step(batch, params: ModelParams, state: AdamState, mcfg: ModelConfig,
               tcfg: TrainConfig) -> tuple[ModelParams, float]:
    """One Adam update in place on ``params``; returns ``(params, loss)``."""
    try:
        loss = batch_loss(batch, params, mcfg, tcfg.weights)
    except dc.ComputationError as err:
        raise TrainingError(f"non-finite value at step {state.step}: {err}") from err
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingError(f"non-finite loss at step {state.step}")
    for p in params.values():
        p.grad = None
    if loss.requires_grad:
        loss.backward()
    grads = {k: (np.zeros_like(p.data) if p.grad is None else p.grad) for k, p in params.items()}
    if tcfg.clip_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if not np.isfinite(norm):
            raise TrainingError(f"non-finite gradient at step {state.step}")
        if norm > tcfg.clip_norm:
            grads = {k: g * (tcfg.clip_norm / norm) for k, g in grads.items()}

    lr = poly_lr(state.step, tcfg)
    t = state.step + 1
    b1, b2 = tcfg.beta1, tcfg.beta2
    for k, p in params.items():
        g = grads[k]
        if not g.any() and k not in state.m:
            continue
        m = state.m.get(k)
        v = state.v.get(k)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[k], state.v[k] = m, v
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + tcfg.eps)
    state.step += 1
    return params, value


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: ModelParams
    step: int = 0
    rng_state: dict | None = None
    train_config: dict | None = None


def fit(pairs: list[tuple[SceneCloud, Expression]], mcfg: ModelConfig, tcfg: TrainConfig,
        out_path=None, params: ModelParams | None = None, callback=None) -> Checkpoint:
    """Run ``tcfg.total_steps`` Adam steps over seeded shuffles of ``pairs``.

    ``callback(step, loss, params)`` is invoked after every step when given.
    """
    if not pairs:
        raise ValueError("fit needs a non-empty training split")
    rng = np.random.default_rng(tcfg.seed)
    if params is None:
        params = init_params(mcfg, rng)
    state = AdamState()
    order: list[int] = []
    for step in range(tcfg.total_steps):
        batch = []
        while len(batch) < min(tcfg.batch_size, len(pairs)):
            if not order:
                order = rng.permutation(len(pairs)).tolist()
            batch.append(pairs[order.pop(0)])
        _, loss = train_step(batch, params, state, mcfg, tcfg)
        if tcfg.log_every and step % tcfg.log_every == 0:
            log.info("step %d lr %.3g loss %.5f", step, poly_lr(step, tcfg), loss)
        if callback is not None:
            callback(step, loss, params)
    ckpt = Checkpoint(mcfg, params, state.step, rng.bit_generator.state, tcfg.to_dict())
    if out_path is not None:
        save_checkpoint(ckpt, out_path)
    return ckpt


# ---------------------------------------------------------------------------
# checkpoint file: magic, u64 header length, JSON header, little-endian f64 payload


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    directory, offset, chunks = [], 0, []
    for name, t in ckpt.params.items():
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
        chunks.append(arr.tobytes())
    header = {
        "version": CHECKPOINT_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "train_config": ckpt.train_config,
        "tensors": directory,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC or len(raw) < 16:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic / version header)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"{path}: corrupt header, version unreadable") from err
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    mcfg = ModelConfig.from_dict(header["model_config"])
    payload = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    entries = {e["name"]: e for e in header["tensors"]}
    arrays = {}
    for name, shape in param_shapes(mcfg).items():
        if name not in entries:
            raise CheckpointError(f"{path}: missing tensor '{name}'")
        e = entries[name]
        if tuple(e["shape"]) != shape:
            raise CheckpointError(f"{path}: tensor '{name}' has shape {tuple(e['shape'])}, expected {shape}")
        n = int(np.prod(shape))
        if e["offset"] + n > payload.size:
            raise CheckpointError(f"{path}: payload truncated in tensor '{name}'")
        arrays[name] = payload[e["offset"]:e["offset"] + n].reshape(shape).astype(np.float64)
    extra = set(entries) - set(arrays)
    if extra:
        raise CheckpointError(f"{path}: unexpected tensors {sorted(extra)}")
    return Checkpoint(mcfg, ModelParams.from_arrays(arrays), header["step"], header.get("rng_state"),
                      header.get("train_config"))


# ---------------------------------------------------------------------------
# finite-difference check on a tiny problem


def tiny_problem(seed: int = 0, **overrides):
    """A 30-point, 6-superpoint scene, one expression and a D=4 one-layer model."""
    from .data import VOCABULARY

    rng = np.random.default_rng([seed, 17])
    sp = np.repeat(np.arange(6), 5)
    inst = np.array([0, 0, 1, 1, -1, -1])[sp]
    anchors = rng.uniform(0.0, 2.0, size=(6, 3))
    pos = anchors[sp] + rng.normal(0.0, 0.05, size=(30, 3))
    col = np.clip(rng.uniform(0.2, 0.8, size=(6, 3))[sp] + rng.normal(0.0, 0.02, size=(30, 3)), 0, 1)
    centers = np.array([pos[inst == k].mean(axis=0) for k in range(2)])
    scene = SceneCloud(pos, col, sp, inst, np.array([0, 1]), centers, name=f"tiny_{seed}")
    toks = rng.integers(0, len(VOCABULARY), size=6).tolist()
    expr = Expression(toks, {"main": [1], "attri": [0], "rel": [2, 3], "auxi": [4]}, [0], "st_dis", 0)
    mcfg = ModelConfig(D=4, D_P=4, D_T=4, C=4, encoder_hidden=8, layers=1, N_seed=4, N_Q=2,
                       vocab_size=len(VOCABULARY), **overrides)
    params = init_params(mcfg, rng)
    return scene, expr, mcfg, params


def gradcheck(seed: int = 0, step: float = 1e-5, weights: LossWeights | None = None) -> float:
    """Worst relative gradient error of the total loss over every parameter entry."""
    scene, expr, mcfg, params = tiny_problem(seed)
    weights = weights or LossWeights()

    def f():
        return sample_loss(forward_state(scene, expr, params, mcfg), scene, expr, params, mcfg, weights).total

    return dc.grad_check(f, params.values(), step)
