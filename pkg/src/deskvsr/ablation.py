"""Desk-scale ablation harness: segment, propagation, alignment and keyframe studies.

Every study trains (or reuses) one model per sweep cell and seed, evaluates
per-frame PSNR on held-out synthetic clips, and writes a long-format CSV.
Plots are rebuilt from that CSV alone.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
import hashlib
import json
import logging
import math
import os
import time

import numpy as np

from .config import dataclass_to_section, read_config
from .data import DegradationSpec, Occluder, load_frames, synth_sequence
from .errors import ConfigError
from .flow import GroundTruthFlow
from .metrics import psnr
from .models import (
    ALIGNMENT_MODES,
    PROPAGATION_MODES,
    ModelConfig,
    VSRNet,
    keyframes_by_count,
    main_network_count,
    matched_unidirectional,
    super_resolve,
)
from .rng import make_rng
from .training import TrainConfig, TrainingClip, load_model, save_model, train

log = logging.getLogger(__name__)

STUDIES = ("segments", "propagation", "alignment", "keyframes")
CSV_COLUMNS = ("study", "value", "seed", "clip", "frame_index", "psnr_db", "psnr_diff", "status")
REFERENCE = {"segments": "1", "propagation": "bidirectional", "alignment": "feature", "keyframes": "0"}


@dataclass
class ExperimentSpec:
    name: str = "ablation"
    study: str = "segments"
    values: str = "1, 2, 4"
    seeds: tuple = (0, 1, 2)
    preset: str = "desk"
    propagation: str = "bidirectional"
    alignment: str = "feature"
    flow_source: str = "pyramid"
    keyframe_interval: int = 5
    train_iters: int = 300
    batch: int = 2
    seq_len: int = 6
    lr_patch: int = 8
    lr_main: float = 1e-3
    train_clips: int = 4
    train_frames: int = 8
    eval_clips: int = 2
    eval_frames: int = 8
    height: int = 32
    width: int = 32
    max_motion: float = 4.0
    reverse_every: int = 8
    occlusion_frac: float = 0.25
    occluder_size: int = 12
    smooth: float = 2.0
    detail: float = 0.35
    degradation: str = "bd"
    metric_mode: str = "rgb"
    data_seed: int = 1000
    frames_dir: str = ""
    output_dir: str = ""
    checkpoint_dir: str = ""

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.validate()

    @property
    def sweep(self):
        raw = [v.strip() for v in str(self.values).replace(",", " ").split()]
        if self.study in ("segments", "keyframes"):
            return [int(v) for v in raw]
        return raw

    def validate(self):
        if self.study not in STUDIES:
            raise ConfigError(f"study must be one of {STUDIES}, got {self.study!r}")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if self.preset not in ("desk", "full"):
            raise ConfigError(f"preset must be 'desk' or 'full', got {self.preset!r}")
        try:
            sweep = self.sweep
        except ValueError:
            raise ConfigError(f"values {self.values!r} are not integers for the {self.study} study") from None
        if not sweep:
            raise ConfigError("values must be non-empty")
        if self.study == "segments" and min(sweep) < 1:
            raise ConfigError("segment counts K must be >= 1")
        if self.study == "keyframes" and min(sweep) < 0:
            raise ConfigError("keyframe counts N must be >= 0")
        allowed = {"propagation": PROPAGATION_MODES, "alignment": ALIGNMENT_MODES}.get(self.study)
        if allowed is not None:
            bad = [v for v in sweep if v not in allowed]
            if bad:
                raise ConfigError(f"invalid {self.study} values {bad}; allowed {allowed}")
        if self.degradation not in ("bd", "bi"):
            raise ConfigError(f"degradation must be 'bd' or 'bi', got {self.degradation!r}")
        if self.metric_mode not in ("rgb", "y"):
            raise ConfigError(f"metric_mode must be 'rgb' or 'y', got {self.metric_mode!r}")
        if self.frames_dir and self.flow_source == "ground_truth":
            raise ConfigError("ground-truth flow is only available for synthetic clips")


def read_spec(path):
    return read_config(path, {"experiment": ExperimentSpec})["experiment"]


# data ---------------------------------------------------------------------------

def clip_motion(seed, t, max_motion, reverse_every):
    """Per-step (dx, dy): one random velocity per clip whose sign flips every ``reverse_every`` steps."""
    rng = make_rng(seed, 21)
    v = rng.uniform(-max_motion, max_motion, size=2)
    steps = np.array([v * (-1.0) ** (i // reverse_every) for i in range(max(t - 1, 0))])
    return steps.reshape(-1, 2)


def make_clip(spec, seed, t, occluded):
    h, w = spec.height, spec.width
    occ = []
    if occluded and spec.occlusion_frac > 0:
        hidden = max(1, int(round(t * spec.occlusion_frac)))
        s = spec.occluder_size
        occ = [Occluder(i, (h - s) // 2, (w - s) // 2, s, s) for i in range(hidden)]
    motion = clip_motion(seed, t, spec.max_motion, spec.reverse_every)
    seq = synth_sequence(seed, t, h, w, motion, occ, smooth=spec.smooth, detail=spec.detail)
    return TrainingClip.from_sequence(seq, DegradationSpec(spec.degradation))


def study_clips(spec):
    """(train, eval) clip lists. Occluders appear in the segment and propagation studies."""
    if spec.frames_dir:
        seq = load_frames(spec.frames_dir)
        clip = TrainingClip.from_sequence(seq, DegradationSpec(spec.degradation))
        return [clip], [clip]
    occluded = spec.study in ("segments", "propagation")
    train_set = [make_clip(spec, spec.data_seed + i, spec.train_frames, occluded) for i in range(spec.train_clips)]
    eval_set = [
        make_clip(spec, spec.data_seed + 10_000 + i, spec.eval_frames, occluded) for i in range(spec.eval_clips)
    ]
    return train_set, eval_set


def flow_provider_for(model, clip):
    cfg = model.config
    if not (cfg.uses_flow and cfg.flow_source == "ground_truth"):
        return None
    return GroundTruthFlow(clip.displacements, clip.lr.shape[-2:], model.dtype)


# cells --------------------------------------------------------------------------

def base_model_config(spec, seed):
    preset = ModelConfig.full if spec.preset == "full" else ModelConfig.desk
    return preset(propagation=spec.propagation, alignment=spec.alignment, flow_source=spec.flow_source,
                  keyframe_interval=spec.keyframe_interval, seed=seed)


def cell_model_config(spec, value, seed):
    """Model trained for one sweep cell; segment and keyframe studies share one model per seed."""
    base = base_model_config(spec, seed)
    if spec.study == "propagation":
        bi = base.with_(propagation="bidirectional")
        if value == "unidirectional":
            return matched_unidirectional(bi)
        return bi.with_(propagation=value)
    if spec.study == "alignment":
        return base.with_(alignment=value)
    if spec.study == "keyframes":
        return base.with_(propagation="coupled", refill=True)
    return base


def train_config(spec, seed):
    return TrainConfig(total_iters=spec.train_iters, lr_main=spec.lr_main, batch=spec.batch,
                       lr_patch=spec.lr_patch, seq_len=spec.seq_len,
                       freeze_iters=min(100, spec.train_iters // 10), seed=seed)


def _cache_key(mcfg, tcfg, spec):
    data_keys = ("study", "train_clips", "train_frames", "height", "width", "max_motion", "reverse_every",
                 "occlusion_frac", "occluder_size", "smooth", "detail", "degradation", "data_seed", "frames_dir")
    blob = json.dumps(
        {"model": dataclass_to_section(mcfg), "train": dataclass_to_section(tcfg),
         "data": {k: str(getattr(spec, k)) for k in data_keys}},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def trained_model(spec, mcfg, tcfg, train_set, cache_root=None):
    """Train ``mcfg`` under ``tcfg``, reusing a cached checkpoint when one matches exactly."""
    ckpt = None
    if cache_root:
        ckpt = os.path.join(cache_root, _cache_key(mcfg, tcfg, spec))
        if os.path.exists(os.path.join(ckpt, "model.vsrt")):
            return load_model(ckpt)
    model = VSRNet(mcfg)
    train(model, train_set, tcfg)
    if ckpt:
        save_model(ckpt, model)
    return model


def evaluate_cell(spec, model, value, eval_set):
    """Per-frame PSNR for one sweep value: list of (clip, frame, psnr)."""
    out = []
    for ci, clip in enumerate(eval_set):
        kw = {}
        if spec.study == "segments":
            kw["segments"] = int(value)
        elif spec.study == "keyframes":
            kw["keyframes"] = keyframes_by_count(len(clip.lr), int(value))
        y = super_resolve(model, clip.lr, flow_provider_for(model, clip), **kw)
        out.extend((ci, i, psnr(y[i], clip.hr[i], spec.metric_mode)) for i in range(len(y)))
    return out


@dataclass
class StudyResult:
    rows: list
    manifest: dict
    failures: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures


def run_study(spec: ExperimentSpec, cache_root=None):
    """All sweep cells x seeds; a failing cell is recorded and the sweep continues."""
    t_start = time.time()
    train_set, eval_set = study_clips(spec)
    ref = REFERENCE[spec.study]
    values = [str(v) for v in spec.sweep]
    shared = spec.study in ("segments", "keyframes")
    rows, failures, cells = [], [], []
    for seed in spec.seeds:
        scores = {}
        shared_model = None
        for value in values:
            t0 = time.time()
            try:
                mcfg = cell_model_config(spec, value, seed)
                tcfg = train_config(spec, seed)
                if shared and shared_model is not None:
                    model = shared_model
                else:
                    model = trained_model(spec, mcfg, tcfg, train_set, cache_root)
                    shared_model = model if shared else None
                scores[value] = evaluate_cell(spec, model, value, eval_set)
                cells.append({"value": value, "seed": seed, "main_params": main_network_count(mcfg),
                              "blocks_per_branch": mcfg.blocks_per_branch, "seconds": time.time() - t0})
            except Exception as exc:  # noqa: BLE001 - recorded per cell, sweep continues
                log.exception("cell %s seed %s failed", value, seed)
                failures.append({"value": value, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                rows.append((spec.study, value, seed, "", "", "", "", f"failed: {type(exc).__name__}"))
        base = scores.get(ref)
        for value in values:
            if value not in scores:
                continue
            for k, (ci, fi, p) in enumerate(scores[value]):
                diff = p - base[k][2] if base is not None else float("nan")
                rows.append((spec.study, value, seed, ci, fi, p, diff, "ok"))
    manifest = {
        "spec": asdict(spec),
        "cells": cells,
        "failures": failures,
        "wall_clock_seconds": time.time() - t_start,
        "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    return StudyResult(rows, manifest, failures)


# CSV / plots --------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def write_rows(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def summarize(csv_rows, first_fraction=None):
    """Mean PSNR and mean PSNR difference per sweep value over seeds, clips and frames.

    ``first_fraction`` restricts the means to the leading fraction of each clip's frames.
    """
    ok = [r for r in csv_rows if r["status"] == "ok"]
    n_frames = 1 + max((int(r["frame_index"]) for r in ok), default=-1)
    limit = n_frames if first_fraction is None else max(1, int(math.ceil(n_frames * first_fraction)))
    out = {}
    for r in ok:
        if int(r["frame_index"]) >= limit:
            continue
        acc = out.setdefault(r["value"], [[], []])
        acc[0].append(float(r["psnr_db"]))
        acc[1].append(float(r["psnr_diff"]))
    return {v: {"psnr_db": float(np.mean(a)), "psnr_diff": float(np.mean(d)), "n": len(a)} for v, (a, d) in out.items()}


def per_frame_means(csv_rows, column="psnr_diff"):
    """{value: (frame_indices, mean over seeds and clips)}."""
    acc = {}
    for r in csv_rows:
        if r["status"] != "ok":
            continue
        acc.setdefault(r["value"], {}).setdefault(int(r["frame_index"]), []).append(float(r[column]))
    return {v: (sorted(d), [float(np.mean(d[i])) for i in sorted(d)]) for v, d in acc.items()}


def plot_from_csv(csv_path, png_path):
    """Static figure built only from the CSV written by :func:`write_rows`."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_rows(csv_path)
    ok = [r for r in rows if r["status"] == "ok"]
    study = rows[0]["study"] if rows else "segments"
    fig, ax = plt.subplots(figsize=(5.5, 3.5), dpi=100)
    if study in ("segments", "propagation"):
        ref = REFERENCE[study]
        for value, (xs, ys) in per_frame_means(ok, "psnr_diff").items():
            if study == "propagation" and value == ref:
                continue
            label = f"K={value}" if study == "segments" else f"{value} - {ref}"
            ax.plot(xs, ys, marker="o", label=label)
        ax.axhline(0.0, color="grey", lw=0.8)
        ax.set_xlabel("frame index")
        ax.set_ylabel(f"PSNR difference to {ref} (dB)" if study == "propagation" else "PSNR difference to K=1 (dB)")
        ax.legend()
    elif study == "keyframes":
        summ = summarize(ok)
        xs = sorted(summ, key=int)
        ax.plot([int(v) for v in xs], [summ[v]["psnr_db"] for v in xs], marker="o")
        ax.set_xlabel("number of keyframes N")
        ax.set_ylabel("PSNR (dB)")
    else:
        summ = summarize(ok)
        xs = list(summ)
        ax.bar(xs, [summ[v]["psnr_db"] for v in xs])
        lo = min((summ[v]["psnr_db"] for v in xs), default=0.0)
        ax.set_ylim(lo - 1.0, None)
        ax.set_xlabel("alignment")
        ax.set_ylabel("PSNR (dB)")
    ax.set_title(study)
    fig.tight_layout()
    fig.savefig(png_path)
    plt.close(fig)
    return png_path


def run_and_write(spec, out_dir, cache_root=None):
    """Run a study, then write ``<name>.csv``, ``<name>.png`` and ``<name>_manifest.json``."""
    os.makedirs(out_dir, exist_ok=True)
    cache_root = cache_root or spec.checkpoint_dir or os.path.join(out_dir, "checkpoints")
    res = run_study(spec, cache_root)
    csv_path = os.path.join(out_dir, f"{spec.name}.csv")
    write_rows(csv_path, res.rows)
    if any(r[-1] == "ok" for r in res.rows):
        plot_from_csv(csv_path, os.path.join(out_dir, f"{spec.name}.png"))
    with open(os.path.join(out_dir, f"{spec.name}_manifest.json"), "w") as f:
        json.dump(res.manifest, f, indent=1, sort_keys=True, default=str)
    return res, csv_path


# keyframe cost ------------------------------------------------------------------

def keyframe_timing(model, lr_frames, intervals=(1, 5), repeats=3, flow_provider=None):
    """Minimum wall-clock (s) of full-clip inference per refill interval, plus 'no-refill'."""
    t = len(lr_frames)
    settings = [(f"interval={k}", {"keyframes": list(range(0, t, k))}) for k in intervals]
    settings.append(("no-refill", {"refill": False}))
    super_resolve(model, lr_frames[:2], None if flow_provider is None else flow_provider.subset(range(2)))
    best = {}
    for _ in range(repeats):
        for label, kw in settings:
            t0 = time.perf_counter()
            super_resolve(model, lr_frames, flow_provider, **kw)
            best[label] = min(best.get(label, math.inf), time.perf_counter() - t0)
    return best
