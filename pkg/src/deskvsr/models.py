"""Recurrent video super-resolution models.

One configurable network covers every propagation, alignment and refill
variant. Tensors flowing through a sequence are laid out (N, T, 3, H, W).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np

from . import functional as F
from .errors import ConfigError, DeskVSRError, ShapeMismatchError
from .flow import GroundTruthFlow, PyramidFlowNet
from .layers import Conv2d, Module, ResidualBlock
from .rng import make_rng
from .tensor import Tensor, add, as_tensor, concat, permute, reshape, slice_axis

PROPAGATION_MODES = ("local", "unidirectional", "bidirectional", "coupled")
ALIGNMENT_MODES = ("none", "image", "feature")
FLOW_SOURCES = ("pyramid", "ground_truth")


@dataclass
class ModelConfig:
    channels: int = 16
    blocks_per_branch: int = 4
    scale: int = 4
    propagation: str = "bidirectional"
    segments: int = 1
    alignment: str = "feature"
    refill: bool = False
    keyframe_interval: int = 5
    flow_source: str = "pyramid"
    flow_levels: int = 3
    flow_widths: tuple = (16, 16, 8)
    flow_kernel: int = 3
    extractor_blocks: int = 3
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.flow_widths = tuple(int(w) for w in self.flow_widths)
        self.validate()

    def validate(self):
        if self.propagation not in PROPAGATION_MODES:
            raise ConfigError(f"propagation must be one of {PROPAGATION_MODES}, got {self.propagation!r}")
        if self.alignment not in ALIGNMENT_MODES:
            raise ConfigError(f"alignment must be one of {ALIGNMENT_MODES}, got {self.alignment!r}")
        if self.flow_source not in FLOW_SOURCES:
            raise ConfigError(f"flow_source must be one of {FLOW_SOURCES}, got {self.flow_source!r}")
        if self.scale != 4:
            raise ConfigError("only x4 upsampling is supported (two x2 pixel shuffles)")
        if self.channels < 1 or self.blocks_per_branch < 0:
            raise ConfigError("channels must be >= 1 and blocks_per_branch >= 0")
        if self.segments < 1:
            raise ConfigError(f"segments (K) must be >= 1, got {self.segments}")
        if self.keyframe_interval < 1:
            raise ConfigError(f"keyframe_interval must be >= 1, got {self.keyframe_interval}")
        if self.refill and self.propagation == "unidirectional":
            raise ConfigError("refill requires a bidirectional structure")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def has_backward_branch(self):
        return self.propagation != "unidirectional"

    @property
    def uses_flow(self):
        return self.alignment != "none"

    @classmethod
    def desk(cls, **kw):
        return cls(**kw)

    @classmethod
    def full(cls, **kw):
        base = dict(channels=64, blocks_per_branch=30, flow_levels=6, flow_widths=(32, 64, 32, 16), flow_kernel=7)
        base.update(kw)
        return cls(**base)

    @classmethod
    def coupled_refill(cls, full_size=False, **kw):
        kw = {"propagation": "coupled", "refill": True, **kw}
        return cls.full(**kw) if full_size else cls.desk(**kw)

    def with_(self, **kw):
        return replace(self, **kw)


class FeatureExtractor(Module):
    """Keyframe extractor: concat(x_{i-1}, x_i, x_{i+1}) -> conv -> residual blocks."""

    def __init__(self, channels, blocks, rng, dtype):
        self.conv = Conv2d(9, channels, 3, rng, dtype=dtype)
        self.blocks = [ResidualBlock(channels, rng, dtype) for _ in range(blocks)]

    def forward(self, x):
        h = F.leaky_relu(self.conv(x), 0.1)
        for blk in self.blocks:
            h = blk(h)
        return h


class Branch(Module):
    """One propagation branch: align the neighbour state, optionally refill, then refine."""

    def __init__(self, cfg, rng, dtype, coupled_input=False):
        c = cfg.channels
        self._alignment = cfg.alignment
        self._coupled = coupled_input
        self.embed = Conv2d(3, c, 3, rng, dtype=dtype)
        n_in = 2
        if cfg.alignment == "image":
            self.img_embed = Conv2d(3, c, 3, rng, dtype=dtype)
            n_in += 1
        if coupled_input:
            n_in += 1
        self.fuse = Conv2d(n_in * c, c, 3, rng, dtype=dtype)
        self.blocks = [ResidualBlock(c, rng, dtype) for _ in range(cfg.blocks_per_branch)]
        if cfg.refill:
            self.refill_fuse = Conv2d(2 * c, c, 3, rng, dtype=dtype)

    def align(self, h_prev, flow):
        if flow is None or self._alignment != "feature":
            return h_prev
        return F.flow_warp(h_prev, flow)

    def forward(self, x_i, h_prev, flow=None, x_neighbor=None, extracted=None, h_other=None):
        aligned = self.align(h_prev, flow)
        if extracted is not None:
            aligned = refill_features(self.refill_fuse, extracted, aligned)
        feats = [F.leaky_relu(self.embed(x_i), 0.1)]
        if self._alignment == "image":
            if flow is None or x_neighbor is None:
                warped = Tensor._wrap(np.zeros(x_i.shape, dtype=x_i.dtype))
            else:
                warped = F.flow_warp(x_neighbor, flow)
            feats.append(F.leaky_relu(self.img_embed(warped), 0.1))
        if self._coupled:
            if h_other is None:
                raise DeskVSRError("coupled branch needs the backward feature h_i^b")
            feats.append(h_other)
        feats.append(aligned)
        h = F.leaky_relu(self.fuse(concat(feats, axis=1)), 0.1)
        for blk in self.blocks:
            h = blk(h)
        return h


def refill_features(fusion_conv, extracted, aligned):
    """Keyframe fusion conv(concat(e_i, aligned)); callers skip it off keyframes."""
    return fusion_conv(concat([extracted, aligned], axis=1))


class Upsampler(Module):
    """concat features -> conv+lrelu -> 2x [conv C->4C, shuffle x2, lrelu] -> conv C->3, + bilinear x4 skip."""

    def __init__(self, channels, n_in, rng, dtype):
        c = channels
        self.fuse = Conv2d(n_in * c, c, 3, rng, dtype=dtype)
        self.up1 = Conv2d(c, 4 * c, 3, rng, dtype=dtype)
        self.up2 = Conv2d(c, 4 * c, 3, rng, dtype=dtype)
        self.out = Conv2d(c, 3, 3, rng, dtype=dtype)

    def forward(self, feat, x):
        h = F.leaky_relu(self.fuse(feat), 0.1)
        h = F.leaky_relu(F.pixel_shuffle(self.up1(h), 2), 0.1)
        h = F.leaky_relu(F.pixel_shuffle(self.up2(h), 2), 0.1)
        return add(self.out(h), F.bilinear_resize(x, 4))

    @staticmethod
    def count(channels, n_in):
        c = channels
        return Conv2d.count(n_in * c, c) + 2 * Conv2d.count(c, 4 * c) + Conv2d.count(c, 3)


def upsample_module(h_f, h_b, upsampler, x):
    feat = h_f if h_b is None else concat([h_f, h_b], axis=1)
    return upsampler(feat, x)


class VSRNet(Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self._cfg = cfg
        dtype = np.dtype(cfg.dtype)
        rng = make_rng(cfg.seed)
        if cfg.uses_flow and cfg.flow_source == "pyramid":
            self.flow = PyramidFlowNet(cfg.flow_levels, cfg.flow_widths, rng, dtype, cfg.flow_kernel)
        if cfg.has_backward_branch:
            self.backward_branch = Branch(cfg, rng, dtype)
        self.forward_branch = Branch(cfg, rng, dtype, coupled_input=cfg.propagation == "coupled")
        if cfg.refill:
            self.extractor = FeatureExtractor(cfg.channels, cfg.extractor_blocks, rng, dtype)
        n_in = 2 if cfg.propagation in ("bidirectional", "local") else 1
        self.upsampler = Upsampler(cfg.channels, n_in, rng, dtype)

    @property
    def config(self):
        return self._cfg

    @property
    def dtype(self):
        return np.dtype(self._cfg.dtype)

    def param_groups(self):
        """Parameters split into the 'flow', 'extractor' and 'main' groups."""
        groups = {"flow": [], "extractor": [], "main": []}
        for name, p in self.named_parameters():
            head = name.split(".", 1)[0]
            groups[head if head in ("flow", "extractor") else "main"].append((name, p))
        return groups

    def forward(self, lrs, flow_provider=None, **kw):
        return forward_sequence(self, lrs, flow_provider, **kw)


def keyframe_indices(num_frames, interval):
    """Evenly spaced keyframes 0, interval, 2*interval, ...; ``None``/inf means none."""
    if interval is None or (isinstance(interval, float) and math.isinf(interval)):
        return []
    interval = int(interval)
    if interval < 1:
        raise ValueError(f"keyframe interval must be >= 1, got {interval}")
    return list(range(0, num_frames, interval))


def keyframes_by_count(num_frames, count):
    """``count`` evenly spaced keyframes starting at index 0."""
    if count <= 0:
        return []
    count = min(count, num_frames)
    return sorted({(k * num_frames) // count for k in range(count)})


def segment_bounds(num_frames, k):
    """K contiguous near-equal segments as (start, stop) pairs."""
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    k = min(k, num_frames)
    edges = np.cumsum([0] + [len(a) for a in np.array_split(np.arange(num_frames), k)])
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _prepare_input(model, lrs):
    x = as_tensor(lrs, dtype=model.dtype) if isinstance(lrs, Tensor) else Tensor._wrap(
        np.ascontiguousarray(lrs, dtype=model.dtype)
    )
    squeeze = False
    if x.ndim == 4:
        x = reshape(x, (1, *x.shape))
        squeeze = True
    if x.ndim != 5 or x.shape[2] != 3:
        raise ShapeMismatchError("forward_sequence", x.shape, ("N", "T", 3, "H", "W"))
    if x.shape[1] < 1:
        raise DeskVSRError("empty sequence (T == 0)")
    return x, squeeze


def forward_sequence(model, lrs, flow_provider=None, keyframes=None, segments=None, refill=None, trace=None):
    """Super-resolve a whole sequence.

    ``lrs`` is (N, T, 3, H, W) (or (T, 3, H, W)); returns (N, T, 3, 4H, 4W)
    unclamped. ``keyframes`` overrides the configured keyframe interval with an
    explicit index set; ``refill=False`` disables information refill;
    ``segments`` overrides K (each segment is restored independently).
    ``trace``, if a list, receives one dict per segment holding the branch
    states and the exact tensor handed to the upsampler.
    """
    cfg = model.config
    x, squeeze = _prepare_input(model, lrs)
    n, t, _, h, w = x.shape
    if cfg.uses_flow and cfg.flow_source == "ground_truth":
        if flow_provider is None:
            raise DeskVSRError("ground-truth flow source selected but no flow provider given")
        if flow_provider.num_frames != t:
            raise ShapeMismatchError("flow provider", (flow_provider.num_frames,), (t,))
    if cfg.uses_flow and cfg.flow_source == "pyramid":
        model.flow.check_extents(h, w)

    use_refill = cfg.refill if refill is None else (refill and cfg.refill)
    if not use_refill:
        keys = []
    elif keyframes is not None:
        keys = sorted(set(int(k) for k in keyframes))
        if keys and (keys[0] < 0 or keys[-1] >= t):
            raise DeskVSRError(f"keyframe index out of range for T={t}: {keys}")
    else:
        keys = keyframe_indices(t, cfg.keyframe_interval)

    k = segments if segments is not None else (cfg.segments if cfg.propagation == "local" else 1)
    bounds = segment_bounds(t, k)
    if len(bounds) == 1:
        out = _forward_segment(model, x, flow_provider, keys, trace)
    else:
        outs = []
        for lo, hi in bounds:
            seg = slice_axis(x, 1, lo, hi)
            prov = flow_provider.subset(range(lo, hi)) if flow_provider is not None else None
            seg_keys = [i - lo for i in keys if lo <= i < hi]
            outs.append(_forward_segment(model, seg, prov, seg_keys, trace))
        out = concat(outs, axis=1)
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def _pair_flows(model, frames_flat, n, t, provider, need_backward, need_forward):
    """Flows for the backward branch (i -> i+1) and forward branch (i -> i-1)."""
    cfg = model.config
    fb = [None] * t
    ff = [None] * t
    if t == 1 or not cfg.uses_flow:
        return fb, ff
    if cfg.flow_source == "ground_truth":
        for i in range(t):
            if need_backward and i < t - 1:
                fb[i] = provider.flow(i, i + 1)
            if need_forward and i > 0:
                ff[i] = provider.flow(i, i - 1)
        return fb, ff
    early = slice_axis(frames_flat, 0, 0, (t - 1) * n)
    late = slice_axis(frames_flat, 0, n, t * n)
    a, b = [], []
    if need_backward:
        a.append(early)
        b.append(late)
    if need_forward:
        a.append(late)
        b.append(early)
    flows = model.flow(concat(a, axis=0), concat(b, axis=0))
    off = 0
    if need_backward:
        for i in range(t - 1):
            fb[i] = slice_axis(flows, 0, off + i * n, off + (i + 1) * n)
        off = (t - 1) * n
    if need_forward:
        for i in range(1, t):
            ff[i] = slice_axis(flows, 0, off + (i - 1) * n, off + i * n)
    return fb, ff


def _extract_keyframes(model, frames, keys):
    if not keys:
        return {}
    t = len(frames)
    triples = [concat([frames[max(i - 1, 0)], frames[i], frames[min(i + 1, t - 1)]], axis=1) for i in keys]
    feats = model.extractor(concat(triples, axis=0))
    n = frames[0].shape[0]
    return {i: slice_axis(feats, 0, j * n, (j + 1) * n) for j, i in enumerate(keys)}


UPSAMPLE_FRAMES = 4


def _upsample_chunked(upsampler, feat, flat, n, t):
    """Upsample a few frames at a time so full-resolution temporaries stay small and reusable."""
    if t <= UPSAMPLE_FRAMES:
        return upsampler(feat, flat)
    parts = []
    for lo in range(0, t, UPSAMPLE_FRAMES):
        hi = min(t, lo + UPSAMPLE_FRAMES)
        parts.append(upsampler(slice_axis(feat, 0, lo * n, hi * n), slice_axis(flat, 0, lo * n, hi * n)))
    return concat(parts, axis=0)


def _forward_segment(model, x, provider, keys, trace=None):
    cfg = model.config
    n, t, _, h, w = x.shape
    flat = reshape(permute(x, (1, 0, 2, 3, 4)), (t * n, 3, h, w))
    frames = [slice_axis(flat, 0, i * n, (i + 1) * n) if t > 1 else flat for i in range(t)]
    coupled = cfg.propagation == "coupled"
    fb, ff = _pair_flows(model, flat, n, t, provider, cfg.has_backward_branch, True)
    extracted = _extract_keyframes(model, frames, keys)
    zeros = Tensor._wrap(np.zeros((n, cfg.channels, h, w), dtype=model.dtype))

    hb = [None] * t
    if cfg.has_backward_branch:
        h_prev = zeros
        for i in range(t - 1, -1, -1):
            nb = frames[i + 1] if i < t - 1 else None
            h_prev = model.backward_branch(frames[i], h_prev, fb[i], nb, extracted.get(i))
            hb[i] = h_prev

    hf = [None] * t
    h_prev = zeros
    for i in range(t):
        nb = frames[i - 1] if i > 0 else None
        h_prev = model.forward_branch(frames[i], h_prev, ff[i], nb, extracted.get(i), hb[i] if coupled else None)
        hf[i] = h_prev

    feat = concat(hf, axis=0)
    if cfg.propagation in ("bidirectional", "local"):
        feat = concat([feat, concat(hb, axis=0)], axis=1)
    if trace is not None:
        trace.append({"h_forward": hf, "h_backward": hb, "upsampler_input": feat})
    y = _upsample_chunked(model.upsampler, feat, flat, n, t)
    y = reshape(y, (t, n, 3, 4 * h, 4 * w))
    return permute(y, (1, 0, 2, 3, 4))


def param_count(model):
    """Trainable parameter totals per component: flow, main, extractor, total."""
    out = {g: int(sum(p.size for _, p in ps)) for g, ps in model.param_groups().items()}
    out["total"] = out["flow"] + out["main"] + out["extractor"]
    return out


def main_network_count(cfg):
    """Closed-form main-network count (branches + upsampler) for ``cfg``."""
    c = cfg.channels
    n_branches = 2 if cfg.has_backward_branch else 1
    per = Conv2d.count(3, c) + cfg.blocks_per_branch * ResidualBlock.count(c)
    n_in = 2 + (1 if cfg.alignment == "image" else 0)
    total = n_branches * per + n_branches * Conv2d.count(n_in * c, c)
    if cfg.alignment == "image":
        total += n_branches * Conv2d.count(3, c)
    if cfg.propagation == "coupled":
        total += c * c * 9  # extra h^b input channels of the forward fuse conv
    if cfg.refill:
        total += n_branches * Conv2d.count(2 * c, c)
    total += Upsampler.count(c, 2 if cfg.propagation in ("bidirectional", "local") else 1)
    return total


def matched_unidirectional(cfg):
    """Unidirectional config whose main-network size best matches ``cfg``'s."""
    target = main_network_count(cfg)
    best = None
    for blocks in range(1, 4 * cfg.blocks_per_branch + 8):
        cand = cfg.with_(propagation="unidirectional", blocks_per_branch=blocks, refill=False)
        gap = abs(main_network_count(cand) - target)
        if best is None or gap < best[0]:
            best = (gap, cand)
    return best[1]


def ground_truth_provider(displacements, lr_shape, dtype=np.float32):
    return GroundTruthFlow(displacements, lr_shape, dtype)


def super_resolve(model, lr_frames, flow_provider=None, **kw):
    """Inference helper: (T, 3, H, W) ndarray -> clamped (T, 3, 4H, 4W) ndarray."""
    from .tensor import no_grad

    with no_grad():
        y = forward_sequence(model, lr_frames, flow_provider, **kw)
    return np.clip(y.data, 0.0, 1.0)
