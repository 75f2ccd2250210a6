"""Charbonnier objective, Adam with per-group cosine learning rates, sampling and the train loop."""
from __future__ import annotations

import csv
from dataclasses import dataclass
import json
import logging
import math
import os

import numpy as np

from . import functional as F
from .config import read_config, write_config
from .data import DegradationSpec, VideoSequence, degrade
from .errors import ConfigError, MissingGradient, ShapeMismatchError, TrainingDiverged
from .flow import GroundTruthFlow
from .models import ModelConfig, VSRNet, forward_sequence
from .rng import get_state, make_rng, set_state
from .serialize import load_checkpoint, save_checkpoint
from .tensor import as_tensor, backward, mean, sub

log = logging.getLogger(__name__)

GROUPS = ("main", "flow", "extractor")
LOSS_COLUMNS = ("iter", "loss", "lr_main", "lr_flow", "lr_extractor")


@dataclass
class TrainConfig:
    total_iters: int = 2000
    lr_main: float = 1e-3
    lr_flow: float = 1.25e-4
    lr_extractor: float = 5e-4
    freeze_iters: int = 100
    batch: int = 2
    lr_patch: int = 32
    seq_len: int = 5
    flip: bool = False
    eps: float = 1e-8
    seed: int = 0
    checkpoint_interval: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.total_iters < 1:
            raise ConfigError("total_iters must be >= 1")
        if not 0 <= self.freeze_iters < self.total_iters:
            raise ConfigError(f"freeze_iters ({self.freeze_iters}) must be < total_iters ({self.total_iters})")
        if self.batch < 1 or self.seq_len < 1 or self.lr_patch < 1:
            raise ConfigError("batch, seq_len and lr_patch must be >= 1")

    @classmethod
    def full(cls, **kw):
        base = dict(total_iters=300_000, lr_main=2e-4, lr_flow=2.5e-5, lr_extractor=1e-4,
                    freeze_iters=5_000, batch=8, lr_patch=64, seq_len=15)
        base.update(kw)
        return cls(**base)

    def base_lrs(self):
        return {"main": self.lr_main, "flow": self.lr_flow, "extractor": self.lr_extractor}


def charbonnier_loss(y, z, eps=1e-8):
    """Mean over every element of every frame of sqrt((y - z)**2 + eps**2)."""
    y = as_tensor(y)
    z = z if hasattr(z, "requires_grad") else as_tensor(np.asarray(z, dtype=y.dtype))
    if y.shape != z.shape:
        raise ShapeMismatchError("charbonnier_loss", y.shape, z.shape)
    return mean(F.charbonnier(sub(y, z), eps))


def cosine_lr(base_lr, t, total):
    """base_lr * (1 + cos(pi t / total)) / 2 for 0 <= t <= total; single period, floor 0."""
    if t < 0 or t > total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return max(0.0, base_lr * 0.5 * (1.0 + math.cos(math.pi * t / total)))


class Adam:
    """Bias-corrected Adam over named parameter groups; frozen groups are skipped entirely."""

    def __init__(self, groups, betas=(0.9, 0.999), eps=1e-8):
        self.groups = {g: list(ps) for g, ps in groups.items()}
        self.betas = betas
        self.eps = eps
        self.steps = {g: 0 for g in self.groups}
        self.m = {}
        self.v = {}
        for ps in self.groups.values():
            for name, p in ps:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)

    def step(self, lrs, frozen=()):
        b1, b2 = self.betas
        for g, ps in self.groups.items():
            if g in frozen or not ps:
                continue
            for name, p in ps:
                if p.grad is None:
                    raise MissingGradient(f"no gradient for parameter {name!r} in group {g!r}")
            self.steps[g] += 1
            t = self.steps[g]
            lr = lrs[g]
            for name, p in ps:
                dt = p.dtype.type
                grad = p.grad
                m = dt(b1) * self.m[name] + dt(1 - b1) * grad
                v = dt(b2) * self.v[name] + dt(1 - b2) * grad * grad
                self.m[name], self.v[name] = m, v
                mhat = m / dt(1 - b1 ** t)
                vhat = v / dt(1 - b2 ** t)
                p.data = p.data - dt(lr) * mhat / (np.sqrt(vhat) + dt(self.eps))

    def state_tensors(self):
        out = {}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_tensors(self, named, steps):
        for name in self.m:
            self.m[name] = np.array(named[f"m.{name}"].data)
            self.v[name] = np.array(named[f"v.{name}"].data)
        self.steps = {g: int(steps[g]) for g in self.groups}


def adam_step(opt, lrs, frozen=()):
    opt.step(lrs, frozen)


# data -------------------------------------------------------------------------

@dataclass
class TrainingClip:
    """Aligned LR/HR frames; ``displacements`` (T, 2) in LR pixels when motion is known."""

    lr: np.ndarray
    hr: np.ndarray
    displacements: np.ndarray | None = None

    def __post_init__(self):
        t, _, h, w = self.lr.shape
        if self.hr.shape != (t, 3, 4 * h, 4 * w):
            raise ShapeMismatchError("TrainingClip", self.lr.shape, self.hr.shape)

    @classmethod
    def from_sequence(cls, seq: VideoSequence, spec=DegradationSpec()):
        lr = degrade(seq.inputs, spec)
        disp = None if seq.displacements is None else np.asarray(seq.displacements) / spec.scale
        return cls(lr, seq.frames, disp)


@dataclass
class Batch:
    lr: np.ndarray
    hr: np.ndarray
    displacements: np.ndarray | None


def sample_batch(dataset, cfg, rng, dtype=np.float32):
    """Random temporal windows and aligned crops (HR offset = 4 x LR offset).

    With ``cfg.flip`` a window of ceil(seq_len / 2) frames is concatenated with
    its reverse: [a, b, c] -> [a, b, c, c, b, a].
    """
    length = math.ceil(cfg.seq_len / 2) if cfg.flip else cfg.seq_len
    p = cfg.lr_patch
    lrs, hrs, disps = [], [], []
    for _ in range(cfg.batch):
        clip = dataset[int(rng.integers(len(dataset)))]
        t, _, h, w = clip.lr.shape
        if t < length:
            raise ValueError(f"sequence of {t} frames shorter than required {length}")
        if p > h or p > w:
            raise ValueError(f"LR patch {p} exceeds frame extents {h}x{w}")
        t0 = int(rng.integers(t - length + 1))
        oy = int(rng.integers(h - p + 1))
        ox = int(rng.integers(w - p + 1))
        idx = list(range(t0, t0 + length))
        if cfg.flip:
            idx = idx + idx[::-1]
        lrs.append(clip.lr[idx, :, oy:oy + p, ox:ox + p])
        hrs.append(clip.hr[idx, :, 4 * oy:4 * (oy + p), 4 * ox:4 * (ox + p)])
        disps.append(None if clip.displacements is None else clip.displacements[idx])
    disp = None if any(d is None for d in disps) else np.stack(disps)
    return Batch(
        np.ascontiguousarray(np.stack(lrs), dtype=dtype),
        np.ascontiguousarray(np.stack(hrs), dtype=dtype),
        disp,
    )


def batch_flow_provider(model, batch):
    cfg = model.config
    if not (cfg.uses_flow and cfg.flow_source == "ground_truth"):
        return None
    if batch.displacements is None:
        raise ConfigError("ground-truth flow source needs clips with known motion")
    return GroundTruthFlow(batch.displacements, batch.lr.shape[-2:], model.dtype)


# training loop ----------------------------------------------------------------

@dataclass
class TrainResult:
    rows: list
    model: VSRNet
    out_dir: str | None = None

    @property
    def losses(self):
        return [r[1] for r in self.rows]


def _grad_norms(model):
    out = {}
    for g, ps in model.param_groups().items():
        sq = [float(np.sum(p.grad.astype(np.float64) ** 2)) for _, p in ps if p.grad is not None]
        out[g] = math.sqrt(sum(sq)) if sq else 0.0
    return out


def train(model, dataset, cfg: TrainConfig, out_dir=None, resume=False, stop_at=None, on_step=None):
    """Run the schedule from iteration 0 (or from ``out_dir``'s saved state when ``resume``).

    ``stop_at`` ends the run early after that many total iterations (the
    schedule still spans ``cfg.total_iters``), which is how interrupted runs
    are simulated. Writes ``loss.csv`` and checkpoints when ``out_dir`` is set.
    """
    groups = model.param_groups()
    opt = Adam(groups)
    rng = make_rng(cfg.seed, 1)
    rows = []
    start = 0
    if resume:
        start, rows = load_training_state(out_dir, model, opt, rng)
    base = cfg.base_lrs()
    end = cfg.total_iters if stop_at is None else min(stop_at, cfg.total_iters)
    for it in range(start, end):
        lrs = {g: cosine_lr(base[g], it, cfg.total_iters) for g in GROUPS}
        frozen = {"flow", "extractor"} if it < cfg.freeze_iters else set()
        for g, ps in groups.items():
            for _, p in ps:
                p.requires_grad = g not in frozen
        batch = sample_batch(dataset, cfg, rng, model.dtype)
        y = forward_sequence(model, batch.lr, batch_flow_provider(model, batch))
        loss = charbonnier_loss(y, batch.hr, cfg.eps)
        value = loss.item()
        model.zero_grad()
        backward(loss)
        if not math.isfinite(value):
            raise TrainingDiverged(it, lrs, _grad_norms(model), value)
        opt.step(lrs, frozen)
        rows.append((it, value, lrs["main"], lrs["flow"], lrs["extractor"]))
        if on_step is not None:
            on_step(it, value)
        if out_dir and cfg.checkpoint_interval and (it + 1) % cfg.checkpoint_interval == 0:
            save_training_state(out_dir, model, opt, rng, cfg, it + 1, rows)
    for _, ps in groups.items():
        for _, p in ps:
            p.requires_grad = True
    if out_dir:
        save_training_state(out_dir, model, opt, rng, cfg, end, rows)
    return TrainResult(rows, model, out_dir)


def write_loss_csv(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for it, loss, a, b, c in rows:
            w.writerow([it, repr(float(loss)), repr(float(a)), repr(float(b)), repr(float(c))])


def read_loss_csv(path):
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if tuple(header) != LOSS_COLUMNS:
            raise ValueError(f"unexpected loss CSV header {header}")
        return [(int(a), float(b), float(c), float(d), float(e)) for a, b, c, d, e in r]


def save_model(out_dir, model):
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "model.vsrt"), model.state_dict())
    write_config(os.path.join(out_dir, "model.ini"), {"model": model.config})


def load_model(ckpt_dir):
    """Rebuild a model from ``model.ini`` and load ``model.vsrt``; names and shapes must agree."""
    cfg = read_config(os.path.join(ckpt_dir, "model.ini"), {"model": ModelConfig})["model"]
    model = VSRNet(cfg)
    model.load_state_dict(load_checkpoint(os.path.join(ckpt_dir, "model.vsrt")))
    return model


def save_training_state(out_dir, model, opt, rng, cfg, iteration, rows):
    save_model(out_dir, model)
    save_checkpoint(os.path.join(out_dir, "optimizer.vsrt"), opt.state_tensors())
    write_config(os.path.join(out_dir, "train.ini"), {"train": cfg})
    state = {"iteration": iteration, "adam_steps": opt.steps, "rng": get_state(rng)}
    with open(os.path.join(out_dir, "train_state.json"), "w") as f:
        json.dump(state, f, indent=1, sort_keys=True)
    write_loss_csv(os.path.join(out_dir, "loss.csv"), rows)


def load_training_state(out_dir, model, opt, rng):
    model.load_state_dict(load_checkpoint(os.path.join(out_dir, "model.vsrt")))
    with open(os.path.join(out_dir, "train_state.json")) as f:
        state = json.load(f)
    opt.load_state_tensors(load_checkpoint(os.path.join(out_dir, "optimizer.vsrt")), state["adam_steps"])
    set_state(rng, state["rng"])
    rows = read_loss_csv(os.path.join(out_dir, "loss.csv"))
    return int(state["iteration"]), rows
