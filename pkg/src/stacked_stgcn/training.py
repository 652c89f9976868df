"""Losses, optimizer, learning-rate schedule, training loop, checkpoints.

Training consumes one windowed sequence per optimizer step: sequences longer
than the window are cropped at a random start, shorter ones are zero-padded
with the padding masked out of the loss. The optimizer is plain SGD with an
exponential step schedule lr(e) = lr0 * drop^floor(e / step).
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as tn
from .errors import ContractError, NumericalError, ValidationError
from .graph import StgSequence, pad_sequence, slice_sequence
from .model import ModelConfig, StgcnModel
from .tensor import DTYPE, Tensor, backward, dump_tensor, load_tensor, record


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "single"  # "single" | "multi"
    lr0: float = 0.0004
    sched_step: int = 1
    sched_drop: float = 0.9
    max_window: int = 50
    epochs: int = 30
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValidationError("lr0 must be positive")
        if not 0 < self.sched_drop <= 1:
            raise ValidationError("sched_drop must be in (0, 1]")
        if self.sched_step < 1 or self.max_window < 1 or self.epochs < 1:
            raise ValidationError("bad training configuration")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "lr0": self.lr0,
            "sched_step": self.sched_step,
            "sched_drop": self.sched_drop,
            "max_window": self.max_window,
            "epochs": self.epochs,
            "seed": self.seed,
            "momentum": self.momentum,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(
            mode=d.get("mode", "single"),
            lr0=d["lr0"],
            sched_step=d.get("sched_step", 1),
            sched_drop=d.get("sched_drop", 0.9),
            max_window=d.get("max_window", 50),
            epochs=d.get("epochs", 30),
            seed=d.get("seed", 0),
            momentum=d.get("momentum", 0.0),
        )


# ---------------------------------------------------------------------------
# losses (numerically stabilized, recorded directly on the tape)


def masked_bce_loss(scores: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean binary cross-entropy with logits over masked-in timesteps."""
    targets = np.asarray(targets, dtype=DTYPE)
    mask = np.asarray(mask, dtype=bool)
    if scores.shape != targets.shape or mask.shape != (scores.shape[0],):
        raise ValidationError("scores, targets and mask shapes disagree")
    cell_mask = np.broadcast_to(mask[:, None], scores.shape).astype(DTYPE)
    m = cell_mask.sum()
    if m == 0:
        raise ValidationError("all positions masked out; loss undefined")
    s = scores.data.astype(np.float64)
    y = targets.astype(np.float64)
    per_cell = np.maximum(s, 0) - s * y + np.log1p(np.exp(-np.abs(s)))
    loss = (per_cell * cell_mask).sum() / m
    sig = 1.0 / (1.0 + np.exp(-s))

    def grad_fn(gout):
        g = float(gout) * (sig - y) * cell_mask / m
        return [g.astype(DTYPE)]

    return record(np.asarray(loss, dtype=DTYPE), [scores], grad_fn)


def masked_ce_loss(scores: Tensor, labels: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over masked-in timesteps."""
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    T, C = scores.shape
    if labels.shape != (T,) or mask.shape != (T,):
        raise ValidationError("labels/mask shapes disagree with scores")
    if np.any((labels < 0) | (labels >= C)):
        raise ValidationError("label index out of range")
    m = int(mask.sum())
    if m == 0:
        raise ValidationError("all positions masked out; loss undefined")
    s = scores.data.astype(np.float64)
    smax = s.max(axis=1, keepdims=True)
    logz = smax[:, 0] + np.log(np.exp(s - smax).sum(axis=1))
    per_t = logz - s[np.arange(T), labels]
    loss = per_t[mask].sum() / m
    softmax = np.exp(s - logz[:, None])

    def grad_fn(gout):
        g = softmax.copy()
        g[np.arange(T), labels] -= 1.0
        g *= mask[:, None] / m
        return [(float(gout) * g).astype(DTYPE)]

    return record(np.asarray(loss, dtype=DTYPE), [scores], grad_fn)


def sequence_loss(scores: Tensor, seq: StgSequence, mode: str) -> Tensor:
    if mode == "single":
        return masked_ce_loss(scores, seq.labels, seq.label_mask)
    return masked_bce_loss(scores, seq.labels, seq.label_mask)


# ---------------------------------------------------------------------------
# optimizer and schedule


def step_lr(epoch: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * cfg.sched_drop ** (epoch // cfg.sched_step)


def sgd_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    velocity: Optional[Dict[str, np.ndarray]] = None,
) -> None:
    """In-place SGD update p <- p - lr * g, with optional momentum."""
    if lr <= 0:
        raise ValidationError("learning rate must be positive")
    for key, p in params.items():
        g = grads[key]
        if momentum > 0:
            assert velocity is not None
            v = velocity.setdefault(key, np.zeros_like(p))
            v *= DTYPE(momentum)
            v += g
            g = v
        params[key] = (p - DTYPE(lr) * g).astype(DTYPE)


def train_window_sample(
    seq: StgSequence, max_window: int, rng: np.random.Generator
) -> StgSequence:
    """Random crop to the window length, or zero-pad with masked positions."""
    if max_window < 1:
        raise ValidationError("max_window must be >= 1")
    if seq.num_steps > max_window:
        start = int(rng.integers(0, seq.num_steps - max_window + 1))
        return slice_sequence(seq, start, max_window)
    if seq.num_steps < max_window:
        return pad_sequence(seq, max_window)
    return seq


def leave_one_group_out(
    dataset: Sequence[StgSequence], groups: Sequence
) -> List[Tuple[List[StgSequence], List[StgSequence]]]:
    """Cross-validation folds holding one group (e.g. subject) out per fold.

    Four distinct groups give the four-fold leave-one-subject-out protocol.
    Folds are ordered by sorted group label.
    """
    if len(groups) != len(dataset):
        raise ValidationError("need one group label per sequence")
    if not dataset:
        raise ValidationError("empty dataset")
    folds = []
    for g in sorted(set(groups)):
        held_in = [s for s, gg in zip(dataset, groups) if gg != g]
        held_out = [s for s, gg in zip(dataset, groups) if gg == g]
        folds.append((held_in, held_out))
    return folds


# ---------------------------------------------------------------------------
# training loop


@dataclass
class CurvePoint:
    epoch: int
    split: str
    loss: float
    metric: float


def train(
    dataset: Sequence[StgSequence],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir: Optional[str] = None,
    model: Optional[StgcnModel] = None,
) -> Tuple[StgcnModel, List[CurvePoint]]:
    """Train a model; deterministic given the config seed.

    Returns the trained model and the loss curve. When ``out_dir`` is given,
    a checkpoint is written per epoch along with the curve CSV.
    """
    if not dataset:
        raise ValidationError("empty training dataset")
    for seq in dataset:
        if seq.mode != train_cfg.mode:
            raise ValidationError(
                f"sequence mode {seq.mode!r} does not match training mode {train_cfg.mode!r}"
            )
    if model is None:
        model = StgcnModel(model_cfg, seed=train_cfg.seed)
    rng = np.random.default_rng(train_cfg.seed + 1)
    velocity: Dict[str, np.ndarray] = {}
    curve: List[CurvePoint] = []

    for epoch in range(train_cfg.epochs):
        lr = step_lr(epoch, train_cfg)
        order = rng.permutation(len(dataset))
        losses = []
        for i in order:
            window = train_window_sample(dataset[i], train_cfg.max_window, rng)
            tape, taped, scores = model.forward_taped(window)
            loss = sequence_loss(scores, window, train_cfg.mode)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, sequence {i}"
                )
            grads_by_id = backward(tape, loss)
            grads = {path: grads_by_id[t.tid] for path, t in taped.items()}
            sgd_step(model.params, grads, lr, train_cfg.momentum, velocity)
            losses.append(loss_val)
        curve.append(CurvePoint(epoch, "train", float(np.mean(losses)), lr))
        if out_dir is not None:
            save_checkpoint(
                os.path.join(out_dir, f"epoch_{epoch:04d}.ckpt"),
                model, train_cfg, epoch, rng,
            )
    if out_dir is not None:
        write_curve(os.path.join(out_dir, "curve.csv"), curve)
    return model, curve


def write_curve(path: str, curve: Sequence[CurvePoint]) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,split,loss,metric\n")
        for p in curve:
            fh.write(f"{p.epoch},{p.split},{p.loss!r},{p.metric!r}\n")


# ---------------------------------------------------------------------------
# checkpoint format: length-prefixed JSON manifest + concatenated tensor blobs


def save_checkpoint(
    path: str,
    model: StgcnModel,
    train_cfg: TrainConfig,
    epoch: int,
    rng: Optional[np.random.Generator] = None,
) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    keys = sorted(model.params)
    manifest = {
        "format": "stgcn-checkpoint-1",
        "model_config": model.cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "epoch": epoch,
        "keys": keys,
        "rng_state": _rng_state_to_json(rng) if rng is not None else None,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for key in keys:
            dump_tensor(fh, model.params[key])


def load_checkpoint(path: str) -> Tuple[StgcnModel, TrainConfig, int, Optional[dict]]:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(n).decode("utf-8"))
        if manifest.get("format") != "stgcn-checkpoint-1":
            raise ValidationError(f"not a checkpoint file: {path}")
        model_cfg = ModelConfig.from_dict(manifest["model_config"])
        train_cfg = TrainConfig.from_dict(manifest["train_config"])
        model = StgcnModel(model_cfg, seed=train_cfg.seed)
        expected = sorted(model.params)
        if manifest["keys"] != expected:
            raise ValidationError("checkpoint keys do not match model configuration")
        for key in manifest["keys"]:
            model.params[key] = load_tensor(fh)
    return model, train_cfg, manifest["epoch"], manifest.get("rng_state")


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state
    return json.loads(json.dumps(state, default=int))
