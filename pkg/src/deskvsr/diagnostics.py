"""Operational invariant suites: finite-difference gradients and temporal reachability."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .flow import GroundTruthFlow
from .gradcheck import check, check_directional
from .layers import ResidualBlock
from .models import ModelConfig, VSRNet, forward_sequence, segment_bounds
from .rng import make_rng
from .tensor import concat, mean, no_grad, slice_axis, sum as tsum
from .training import charbonnier_loss

GRAD_TOL_F64 = 1e-4


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def gradient_suite(seed=0):
    """64-bit finite-difference checks of every differentiable op and a tiny end-to-end model."""
    rng = make_rng(seed)
    r = lambda *s: _rand(rng, *s)  # noqa: E731
    results = [
        check(lambda x, w, b: F.conv2d(x, w, b), [r(1, 2, 5, 5), r(3, 2, 3, 3), r(3)], "conv2d", rng),
        check(lambda x, w, b: F.conv2d(x, w, b, stride=2), [r(2, 2, 6, 5), r(2, 2, 3, 3), r(2)], "conv2d_stride2", rng),
        check(lambda x: F.leaky_relu(x, 0.1), [r(2, 3, 4, 4)], "leaky_relu", rng),
        check(lambda x: F.relu(x), [r(2, 3, 4, 4)], "relu", rng),
        check(lambda x: F.pixel_shuffle(x, 2), [r(1, 8, 3, 2)], "pixel_shuffle", rng),
        check(lambda x: F.bilinear_resize(x, 2.0), [r(1, 2, 3, 4)], "bilinear_resize_x2", rng),
        check(lambda x: F.bilinear_resize(x, 0.5), [r(1, 2, 4, 6)], "bilinear_resize_x0.5", rng),
        check(lambda x: F.bilinear_resize(x, 4.0), [r(1, 1, 2, 3)], "bilinear_resize_x4", rng),
        check(lambda x, f: F.flow_warp(x, f), [r(1, 3, 5, 6), 1.5 * r(1, 2, 5, 6)], "flow_warp", rng),
        check(lambda x: F.charbonnier(x, 1e-8), [r(3, 4)], "charbonnier", rng),
        check(lambda a, b: concat([a, b], axis=1), [r(1, 3, 2, 2), r(1, 2, 2, 2)], "concat", rng),
        check(lambda a: slice_axis(a, 1, 1, 3), [r(2, 4, 3)], "slice", rng),
        check(lambda a: mean(a * a), [r(4, 3)], "mean", rng),
        check(lambda a: tsum(a), [r(4, 3)], "sum", rng),
        _residual_block_check(rng),
        _model_check(seed),
    ]
    return results


def _residual_block_check(rng):
    blk = ResidualBlock(6, None, np.float64)

    def fn(x, w1, b1, w2, b2):
        blk.conv1.weight, blk.conv1.bias, blk.conv2.weight, blk.conv2.bias = w1, b1, w2, b2
        return blk(x)

    args = [_rand(rng, 1, 6, 5, 5), _rand(rng, 6, 6, 3, 3) * 0.3, _rand(rng, 6), _rand(rng, 6, 6, 3, 3) * 0.3, _rand(rng, 6)]
    return check(fn, args, "residual_block", rng, max_coords=80)


def tiny_model(propagation="coupled", refill=True, seed=0, dtype="float64", alignment="feature"):
    cfg = ModelConfig(channels=4, blocks_per_branch=1, propagation=propagation, alignment=alignment,
                      refill=refill, keyframe_interval=2, flow_widths=(4, 4), extractor_blocks=1,
                      seed=seed, dtype=dtype)
    model = VSRNet(cfg)
    rng = make_rng(seed, 3)
    # random (non-zero) flow heads so the end-to-end check exercises d(warp)/d(flow)
    for name, p in model.named_parameters():
        if name.startswith("flow.") or "conv2" in name or name.endswith("bias"):
            p.data = (rng.standard_normal(p.shape) * 0.1).astype(p.dtype)
    return model


def _model_check(seed):
    rng = make_rng(seed, 5)
    model = tiny_model(seed=seed)
    x = rng.random((1, 3, 3, 4, 4))
    z = rng.random((1, 3, 3, 16, 16))
    params = model.parameters()
    res = check_directional(lambda: charbonnier_loss(forward_sequence(model, x), z, 1e-3), params,
                            "tiny_model_end_to_end", rng, n_dirs=4)
    xin = check(lambda xx: forward_sequence(model, xx), [x], "tiny_model_input", rng, max_coords=24)
    res.max_rel_error = max(res.max_rel_error, xin.max_rel_error)
    res.n_checked += xin.n_checked
    return res


# reachability -------------------------------------------------------------------

def reachability_matrix(model, x, flow_provider=None, seed=0, amplitude=0.05, **kw):
    """D[i, j] = 1 iff perturbing input frame j changes output frame i (bitwise)."""
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim == 4:
        x = x[None]
    t = x.shape[1]
    rng = make_rng(seed, 11)
    with no_grad():
        base = forward_sequence(model, x, flow_provider, **kw).data
        d = np.zeros((t, t), dtype=int)
        for j in range(t):
            xp = x.copy()
            xp[:, j] += (amplitude * rng.standard_normal(xp[:, j].shape)).astype(x.dtype)
            y = forward_sequence(model, xp, flow_provider, **kw).data
            d[:, j] = [int(np.any(y[:, i] != base[:, i])) for i in range(t)]
    return d


def expected_reachability(propagation, t, segments=1):
    """Structural prediction of the dependence matrix for a propagation mode."""
    if propagation == "unidirectional":
        return np.tril(np.ones((t, t), dtype=int))
    if propagation == "local":
        d = np.zeros((t, t), dtype=int)
        for lo, hi in segment_bounds(t, segments):
            d[lo:hi, lo:hi] = 1
        return d
    return np.ones((t, t), dtype=int)


@dataclass
class ReachabilityResult:
    label: str
    observed: np.ndarray
    expected: np.ndarray
    upsampler_reads_forward_only: bool | None = None

    @property
    def passed(self):
        ok = np.array_equal(self.observed, self.expected)
        return ok and self.upsampler_reads_forward_only is not False


def upsampler_reads_forward_only(model, x, flow_provider=None):
    """True iff the tensor handed to the upsampler is exactly the stacked forward states."""
    trace = []
    with no_grad():
        forward_sequence(model, x, flow_provider, trace=trace)
    for seg in trace:
        fed = seg["upsampler_input"].data
        hf = np.concatenate([h.data for h in seg["h_forward"]], axis=0)
        if fed.shape != hf.shape or not np.array_equal(fed, hf):
            return False
    return True


def reachability_suite(t=6, hw=8, seed=0):
    """Dependence matrices for every propagation mode on a random sequence with random weights."""
    rng = make_rng(seed, 13)
    x = rng.random((1, t, 3, hw, hw))
    out = []
    cases = [("unidirectional", 1), ("local", 2), ("local", 3), ("bidirectional", 1), ("coupled", 1)]
    for prop, k in cases:
        model = VSRNet(ModelConfig(propagation=prop, segments=k, seed=seed, dtype="float64"))
        _randomize_flow(model, seed)
        label = prop if prop != "local" else f"local(K={k})"
        res = ReachabilityResult(label, reachability_matrix(model, x, seed=seed), expected_reachability(prop, t, k))
        if prop == "coupled":
            res.upsampler_reads_forward_only = upsampler_reads_forward_only(model, x)
        out.append(res)
    return out


def _randomize_flow(model, seed):
    if not hasattr(model, "flow"):
        return
    rng = make_rng(seed, 17)
    for net in model.flow.nets:
        net.out.weight.data = (rng.standard_normal(net.out.weight.shape) * 0.01).astype(model.dtype)


def alignment_difference(seed=0, t=4, hw=8):
    """Max |y_feature - y_none| on a translating sequence with shared weights where possible."""
    from .data import degrade, synth_sequence

    seq = synth_sequence(seed, t, 4 * hw, 4 * hw, motion=(4.0, 0.0))
    x = degrade(seq.frames)[None]
    prov = GroundTruthFlow(seq.displacements / 4.0, (hw, hw), np.float64)
    outs = {}
    for al in ("none", "feature"):
        cfg = ModelConfig(alignment=al, flow_source="ground_truth", seed=seed, dtype="float64")
        with no_grad():
            outs[al] = forward_sequence(VSRNet(cfg), x, prov).data
    return float(np.abs(outs["feature"] - outs["none"]).max())
