"""Batch command-line interface: ``deskvsr <command> ...``.

Exit codes: 0 success, 1 invariant/test failure, 2 usage or input error.
Relative output paths resolve under ``$DESKVSR_OUTPUT_ROOT`` when it is set.
"""
from __future__ import annotations

import argparse
import csv
from dataclasses import asdict, dataclass
import json
import logging
import math
import os
import sys
import time

import numpy as np

from .config import read_config
from .errors import DeskVSRError, TrainingDiverged

OUTPUT_ROOT_ENV = "DESKVSR_OUTPUT_ROOT"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("deskvsr")


class UsageError(DeskVSRError):
    pass


def output_path(path):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _require_dir(path, what):
    if not os.path.isdir(path):
        raise UsageError(f"{what} not found: {path}")


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True, default=str)
        f.write("\n")


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# degrade ------------------------------------------------------------------------

def cmd_degrade(args):
    from .data import DegradationSpec, VideoSequence, degrade, load_frames, save_frames

    _require_dir(args.in_dir, "input directory")
    seq = load_frames(args.in_dir)
    spec = DegradationSpec(args.deg)
    lr = degrade(seq.frames, spec)
    out = output_path(args.out_dir)
    n = save_frames(VideoSequence(lr), out)
    _write_json(os.path.join(out, "manifest.json"), {
        "degradation": spec.manifest(),
        "source": os.path.abspath(args.in_dir),
        "frames": n,
        "input_size": list(seq.frames.shape[-2:]),
        "output_size": list(lr.shape[-2:]),
        "created_at": _now(),
    })
    print(f"wrote {n} frames ({lr.shape[-2]}x{lr.shape[-1]}) to {out}")
    return EXIT_OK


# train --------------------------------------------------------------------------

@dataclass
class DataConfig:
    """Training data: ``synthetic`` clips or HR frames under ``frames_dir``."""

    source: str = "synthetic"
    frames_dir: str = ""
    degradation: str = "bd"
    clips: int = 1
    frames: int = 5
    height: int = 32
    width: int = 32
    motion_x: float = 1.0
    motion_y: float = 0.0
    occlusion_frac: float = 0.0
    occluder_size: int = 12
    smooth: float = 2.0
    detail: float = 0.35
    seed: int = 0

    def clips_list(self):
        from .data import DegradationSpec, Occluder, load_frames, synth_sequence
        from .training import TrainingClip

        spec = DegradationSpec(self.degradation)
        if self.source == "frames":
            if not self.frames_dir:
                raise UsageError("[data] source = frames needs frames_dir")
            _require_dir(self.frames_dir, "frames_dir")
            return [TrainingClip.from_sequence(load_frames(self.frames_dir), spec)]
        if self.source != "synthetic":
            raise UsageError(f"[data] source must be 'synthetic' or 'frames', got {self.source!r}")
        out = []
        for i in range(self.clips):
            occ = []
            if self.occlusion_frac > 0:
                s = self.occluder_size
                hidden = max(1, int(round(self.frames * self.occlusion_frac)))
                occ = [Occluder(k, (self.height - s) // 2, (self.width - s) // 2, s, s) for k in range(hidden)]
            seq = synth_sequence(self.seed + i, self.frames, self.height, self.width,
                                 (self.motion_x, self.motion_y), occ, smooth=self.smooth, detail=self.detail)
            out.append(TrainingClip.from_sequence(seq, spec))
        return out


def train_schema():
    from .models import ModelConfig
    from .training import TrainConfig

    return {"model": ModelConfig, "train": TrainConfig, "data": DataConfig}


def cmd_train(args):
    from .models import VSRNet
    from .training import train

    if not os.path.isfile(args.config):
        raise UsageError(f"config file not found: {args.config}")
    sections = read_config(args.config, train_schema())
    stem = os.path.splitext(os.path.basename(args.config))[0]
    out = output_path(args.out or os.path.join("runs", stem))
    if args.resume and not os.path.exists(os.path.join(out, "train_state.json")):
        raise UsageError(f"nothing to resume in {out}")
    os.makedirs(out, exist_ok=True)
    dataset = sections["data"].clips_list()
    model = VSRNet(sections["model"])
    tcfg = sections["train"]
    t0 = time.time()

    def progress(it, loss):
        if args.log_every and (it + 1) % args.log_every == 0:
            print(f"iter {it + 1}/{tcfg.total_iters} loss {loss:.6f}", flush=True)

    res = train(model, dataset, tcfg, out_dir=out, resume=args.resume, stop_at=args.stop_at, on_step=progress)
    _write_json(os.path.join(out, "run_manifest.json"), {
        "config": os.path.abspath(args.config),
        "data": asdict(sections["data"]),
        "iterations": len(res.rows),
        "resumed": bool(args.resume),
        "wall_clock_seconds": time.time() - t0,
        "finished_at": _now(),
    })
    last = res.rows[-1][1] if res.rows else float("nan")
    print(f"checkpoint written to {out} (final loss {last:.6f})")
    return EXIT_OK


# infer --------------------------------------------------------------------------

def _interval(text):
    if text.lower() in ("inf", "infinity", "none"):
        return math.inf
    try:
        k = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"keyframe interval must be a positive integer or 'inf', got {text!r}")
    if k < 1:
        raise argparse.ArgumentTypeError(f"keyframe interval must be >= 1, got {k}")
    return k


def cmd_infer(args):
    from .data import VideoSequence, load_frames, save_frames
    from .flow import flow_to_color
    from .models import keyframe_indices, super_resolve
    from .training import load_model

    _require_dir(args.checkpoint, "checkpoint directory")
    _require_dir(args.lr_dir, "input directory")
    model = load_model(args.checkpoint)
    cfg = model.config
    if cfg.uses_flow and cfg.flow_source == "ground_truth":
        raise UsageError("checkpoint uses ground-truth flow, which real frame directories do not provide")
    lr = load_frames(args.lr_dir).frames
    t = len(lr)
    refill = cfg.refill and not args.no_refill
    interval = cfg.keyframe_interval if args.keyframe_interval is None else args.keyframe_interval
    keys = keyframe_indices(t, interval) if refill else []
    t0 = time.perf_counter()
    hr = super_resolve(model, lr, keyframes=keys, refill=refill)
    elapsed = time.perf_counter() - t0
    out = output_path(args.out_dir)
    save_frames(VideoSequence(hr), out)
    manifest = {
        "checkpoint": os.path.abspath(args.checkpoint),
        "input": os.path.abspath(args.lr_dir),
        "frames": t,
        "refill": refill,
        "keyframes": keys,
        "keyframe_interval": None if not refill else (str(interval) if math.isinf(interval) else interval),
        "wall_clock_seconds": elapsed,
        "wall_clock_per_frame_seconds": elapsed / t,
        "created_at": _now(),
    }
    if args.dump_flow:
        if not (cfg.uses_flow and hasattr(model, "flow")):
            raise UsageError("--dump-flow needs a model with a flow estimator")
        from PIL import Image

        from .tensor import Tensor, no_grad

        fdir = output_path(args.dump_flow)
        os.makedirs(fdir, exist_ok=True)
        x = lr.astype(model.dtype)
        with no_grad():
            flows = model.flow(Tensor._wrap(x[1:]), Tensor._wrap(x[:-1])).data
        for i, f in enumerate(flows):
            Image.fromarray(flow_to_color(f)).save(os.path.join(fdir, f"flow_{i + 1:08d}_{i:08d}.png"))
            np.save(os.path.join(fdir, f"flow_{i + 1:08d}_{i:08d}.npy"), f)
        manifest["flow_dir"] = os.path.abspath(fdir)
    _write_json(os.path.join(out, "run_manifest.json"), manifest)
    print(f"wrote {t} frames to {out} ({elapsed / t * 1000:.1f} ms/frame)")
    return EXIT_OK


# eval ---------------------------------------------------------------------------

EVAL_COLUMNS = ("sequence_id", "frame_index", "psnr_db", "ssim", "mode")


def eval_rows(pred_dir, gt_dir, mode, sequence_id):
    from .data import load_frames
    from .errors import ShapeMismatchError
    from .metrics import sequence_metrics

    pred = load_frames(pred_dir).frames
    gt = load_frames(gt_dir).frames
    if len(pred) != len(gt):
        raise ShapeMismatchError("eval", (len(pred),), (len(gt),), detail="frame count mismatch")
    rows = sequence_metrics(pred, gt, mode, sequence_id)
    rows.append({
        "sequence_id": sequence_id,
        "frame_index": "mean",
        "psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
        "ssim": float(np.mean([r["ssim"] for r in rows])),
        "mode": mode,
    })
    return rows


def cmd_eval(args):
    _require_dir(args.pred_dir, "prediction directory")
    _require_dir(args.gt_dir, "ground-truth directory")
    seq_id = args.sequence_id or os.path.basename(os.path.normpath(args.gt_dir))
    rows = eval_rows(args.pred_dir, args.gt_dir, args.mode, seq_id)
    out = output_path(args.out)
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=EVAL_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({**r, "psnr_db": f"{r['psnr_db']:.6f}", "ssim": f"{r['ssim']:.6f}"})
    print(f"mean PSNR {rows[-1]['psnr_db']:.3f} dB, SSIM {rows[-1]['ssim']:.4f} ({args.mode}) -> {out}")
    return EXIT_OK


# ablate -------------------------------------------------------------------------

def cmd_ablate(args):
    from .ablation import read_spec, run_and_write, summarize, read_rows

    if not os.path.isfile(args.spec):
        raise UsageError(f"experiment spec not found: {args.spec}")
    spec = read_spec(args.spec)
    out = output_path(args.out or spec.output_dir or os.path.join("ablations", spec.name))
    res, csv_path = run_and_write(spec, out, output_path(spec.checkpoint_dir) if spec.checkpoint_dir else None)
    for value, s in summarize(read_rows(csv_path)).items():
        print(f"{spec.study}={value}: mean PSNR {s['psnr_db']:.3f} dB, diff to reference {s['psnr_diff']:+.3f} dB")
    for f in res.failures:
        print(f"FAILED cell {spec.study}={f['value']} seed={f['seed']}: {f['error']}", file=sys.stderr)
    print(f"results in {csv_path}")
    return EXIT_OK if res.ok else EXIT_FAIL


# invariant suites ---------------------------------------------------------------

def cmd_gradcheck(args):
    from .diagnostics import GRAD_TOL_F64, gradient_suite

    failed = 0
    for r in gradient_suite(args.seed):
        ok = r.passed(GRAD_TOL_F64)
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} {r.name:<26} max rel err {r.max_rel_error:.2e} ({r.n_checked} checks)")
    print(f"{failed} failure(s); tolerance {GRAD_TOL_F64:g}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_reachability(args):
    from .diagnostics import alignment_difference, reachability_suite

    failed = 0
    for r in reachability_suite(t=args.frames, seed=args.seed):
        failed += not r.passed
        extra = ""
        if r.upsampler_reads_forward_only is not None:
            extra = f" (upsampler reads forward states only: {r.upsampler_reads_forward_only})"
        print(f"{'PASS' if r.passed else 'FAIL'} {r.label}{extra}")
        for row in r.observed:
            print("   " + " ".join(str(v) for v in row))
    diff = alignment_difference(seed=args.seed)
    print(f"alignment none vs feature on shifted data: max |difference| = {diff:.3e}")
    if diff == 0.0:
        failed += 1
    return EXIT_FAIL if failed else EXIT_OK


def cmd_keyframe_timing(args):
    from .ablation import keyframe_timing
    from .data import DegradationSpec, degrade, synth_sequence
    from .ablation import clip_motion
    from .models import ModelConfig, VSRNet

    seq = synth_sequence(args.seed, args.frames, 4 * args.size, 4 * args.size,
                         clip_motion(args.seed, args.frames, 2.0, 8))
    lr = degrade(seq.frames, DegradationSpec("bd"))
    model = VSRNet(ModelConfig.coupled_refill(seed=args.seed))
    times = keyframe_timing(model, lr, intervals=(1, 5), repeats=args.repeats)
    for label, s in times.items():
        print(f"{label:<12} {s:.3f} s ({s / args.frames * 1000:.2f} ms/frame)")
    ok = times["interval=1"] >= times["interval=5"] >= times["no-refill"]
    print(("PASS" if ok else "FAIL") + " interval 1 >= interval 5 >= no refill")
    return EXIT_OK if ok else EXIT_FAIL


# entry point --------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="deskvsr", description="Desk-scale recurrent video super-resolution.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("degrade", help="HR frames -> LR frames (x4)")
    s.add_argument("in_dir")
    s.add_argument("out_dir")
    s.add_argument("--deg", choices=("bi", "bd"), default="bd")
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("train", help="train from an INI config ([model], [train], [data])")
    s.add_argument("config")
    s.add_argument("--out", help="checkpoint directory (default runs/<config name>)")
    s.add_argument("--resume", action="store_true", help="continue from the state saved in --out")
    s.add_argument("--stop-at", type=int, default=None, help="stop after this many iterations (schedule unchanged)")
    s.add_argument("--log-every", type=int, default=100)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="super-resolve a directory of LR frames")
    s.add_argument("checkpoint")
    s.add_argument("lr_dir")
    s.add_argument("out_dir")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--keyframe-interval", type=_interval, default=None, metavar="N|inf")
    g.add_argument("--no-refill", action="store_true")
    s.add_argument("--dump-flow", metavar="DIR", help="write colour-coded flow fields (t -> t-1)")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="per-frame PSNR/SSIM CSV with a mean row")
    s.add_argument("pred_dir")
    s.add_argument("gt_dir")
    s.add_argument("--mode", choices=("rgb", "y"), default="rgb")
    s.add_argument("--out", default="eval.csv")
    s.add_argument("--sequence-id", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="run an experiment spec ([experiment] section)")
    s.add_argument("spec")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op (64-bit)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("reachability", help="frame dependence matrices for every propagation mode")
    s.add_argument("--frames", type=int, default=6)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_reachability)

    s = sub.add_parser("keyframe-timing", help="inference cost vs refill interval on a long clip")
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--size", type=int, default=16, help="LR frame side")
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_keyframe_timing)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (DeskVSRError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
