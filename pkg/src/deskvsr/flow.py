"""Optical flow sources: a small coarse-to-fine pyramid network and ground truth.

Flow convention everywhere: ``flow_warp(frame_j, flow(i, j)) ~= frame_i``,
channel 0 horizontal, channel 1 vertical, pixel units.
"""
from __future__ import annotations

import numpy as np

from . import functional as F
from .errors import DeskVSRError, ShapeMismatchError
from .layers import Conv2d, Module
from .tensor import Tensor, add, as_tensor, concat, scalar_mul


class FlowLevel(Module):
    """Conv stack mapping (frame A, warped frame B, current flow) to a flow residual."""

    def __init__(self, widths, rng, dtype, k=3):
        chans = [8, *widths]
        self.convs = [Conv2d(a, b, k, rng, dtype=dtype) for a, b in zip(chans[:-1], chans[1:])]
        self.out = Conv2d(chans[-1], 2, k, rng, init_scale=0.0, dtype=dtype)

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.1)
        return self.out(x)


class PyramidFlowNet(Module):
    """Coarse-to-fine residual flow estimator with ``levels`` pyramid levels.

    Level l runs at 1/2**l resolution; the flow passed from level l to l-1 is
    ``2 * upsample(flow_l)``, to which the finer level adds its residual.
    """

    def __init__(self, levels=3, widths=(16, 16, 8), rng=None, dtype=np.float32, k=3):
        self._levels = levels
        self.nets = [FlowLevel(widths, rng, dtype, k) for _ in range(levels)]

    @property
    def levels(self):
        return self._levels

    def check_extents(self, h, w):
        m = 2 ** (self._levels - 1)
        if h % m or w % m:
            raise ShapeMismatchError(
                "estimate_flow", (h, w), (m, m), detail=f"extents must be divisible by {m}; pad the input"
            )

    def forward(self, a, b):
        a = as_tensor(a)
        b = as_tensor(b)
        if a.shape != b.shape or a.ndim != 4 or a.shape[1] != 3:
            raise ShapeMismatchError("estimate_flow", a.shape, b.shape)
        n, _, h, w = a.shape
        self.check_extents(h, w)
        pa, pb = [a], [b]
        for _ in range(self._levels - 1):
            pa.append(F.bilinear_resize(pa[-1], 0.5))
            pb.append(F.bilinear_resize(pb[-1], 0.5))
        hc, wc = pa[-1].shape[2:]
        flow = Tensor._wrap(np.zeros((n, 2, hc, wc), dtype=a.dtype))
        for lvl in range(self._levels - 1, -1, -1):
            if lvl < self._levels - 1:
                flow = scalar_mul(F.bilinear_resize(flow, 2.0), 2.0)
            warped = F.flow_warp(pb[lvl], flow)
            flow = add(flow, self.nets[lvl](concat([pa[lvl], warped, flow], axis=1)))
        return flow


def estimate_flow(net, a, b):
    """Flow such that ``flow_warp(b, flow)`` approximates ``a``."""
    return net(a, b)


class GroundTruthFlow:
    """Known flow from per-frame content displacements.

    ``displacements`` is (N, T, 2) or (T, 2): cumulative (dx, dy) of the scene
    content in frame t, at the resolution the flow is requested for. Then
    ``flow(i, j) = D_j - D_i`` everywhere.
    """

    def __init__(self, displacements, shape, dtype=np.float32):
        d = np.asarray(displacements, dtype=np.float64)
        if d.ndim == 2:
            d = d[None]
        if d.ndim != 3 or d.shape[-1] != 2:
            raise ValueError(f"displacements must be (N, T, 2), got {d.shape}")
        self.displacements = d
        self.shape = tuple(shape)
        self.dtype = np.dtype(dtype)

    @property
    def num_frames(self):
        return self.displacements.shape[1]

    def flow(self, i, j):
        t = self.num_frames
        if not (0 <= i < t and 0 <= j < t):
            raise DeskVSRError(f"unknown frame pair ({i}, {j}) for a {t}-frame sequence")
        h, w = self.shape
        delta = self.displacements[:, j] - self.displacements[:, i]  # (N, 2)
        out = np.broadcast_to(delta[:, :, None, None], (delta.shape[0], 2, h, w))
        return Tensor._wrap(np.ascontiguousarray(out, dtype=self.dtype))

    def subset(self, index):
        """Provider for a reindexed frame list (temporal window, flip, segment)."""
        return GroundTruthFlow(self.displacements[:, list(index)], self.shape, self.dtype)

    @classmethod
    def from_sequence(cls, seq, scale=1.0, dtype=np.float32):
        h, w = seq.frames.shape[-2:]
        shape = (int(round(h * scale)), int(round(w * scale)))
        return cls(seq.displacements * scale, shape, dtype)


def ground_truth_flow(provider, i, j):
    return provider.flow(i, j)


def flow_to_color(flow, max_mag=None):
    """Colour-wheel rendering of a (2, H, W) flow: hue = direction, saturation = magnitude.

    Returns uint8 (H, W, 3). Magnitudes are normalised by ``max_mag`` (default:
    the field's maximum); zero flow is white.
    """
    from matplotlib.colors import hsv_to_rgb

    f = np.asarray(flow.data if isinstance(flow, Tensor) else flow, dtype=np.float64)
    u, v = f[0], f[1]
    mag = np.hypot(u, v)
    ang = (np.arctan2(-v, -u) / np.pi + 1.0) / 2.0
    top = float(mag.max()) if max_mag is None else float(max_mag)
    sat = np.clip(mag / top, 0, 1) if top > 0 else np.zeros_like(mag)
    rgb = hsv_to_rgb(np.stack([ang, sat, np.ones_like(mag)], axis=-1))
    return np.round(rgb * 255).astype(np.uint8)
