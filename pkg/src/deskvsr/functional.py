"""Differentiable neural-network ops built on :mod:`deskvsr.tensor`."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from . import kernels
from .errors import ShapeMismatchError
from .tensor import Tensor, as_tensor, record


def conv2d(x, weight, bias=None, stride=1, padding=None):
    """2-D cross-correlation with zero padding (no kernel flip).

    ``x`` is (N, C_in, H, W), ``weight`` (C_out, C_in, k, k). ``padding``
    defaults to ``(k - 1) // 2``.
    """
    x = as_tensor(x)
    weight = as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeMismatchError("conv2d", x.shape, weight.shape, detail="expected 4-D input and weight")
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin or k != k2:
        raise ShapeMismatchError("conv2d", x.shape, weight.shape, detail="channel mismatch")
    if padding is None:
        padding = (k - 1) // 2
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatchError("conv2d", x.shape, weight.shape, detail=f"non-positive output extent {ho}x{wo}")
    if x.dtype != weight.dtype:
        raise TypeError(f"conv2d: dtype mismatch {x.dtype} vs {weight.dtype}")

    cols = kernels.im2col(x.data, k, stride, padding)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeMismatchError("conv2d", bias.shape, (cout,), detail="bias")
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    xshape = x.shape
    wshape = weight.shape

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
        gx = None
        if x.requires_grad:
            gx = kernels.col2im(gm @ wmat, xshape, k, stride, padding)
        gw = (gm.T @ cols).reshape(wshape) if weight.requires_grad else None
        gb = gm.sum(axis=0) if bias is not None and bias.requires_grad else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return record(out, parents, bw, "conv2d")


def leaky_relu(x, slope=0.1):
    """max(x, slope*x) for slope in [0, 1]; at 0 the positive branch (slope 1) is used."""
    x = as_tensor(x)
    pos = x.data >= 0
    s = x.dtype.type(slope)
    out = np.where(pos, x.data, x.data * s)
    return record(out, (x,), lambda g: (np.where(pos, g, g * s),), "leaky_relu")


def relu(x):
    return leaky_relu(x, 0.0)


def pixel_shuffle(x, r):
    """(N, C*r*r, H, W) -> (N, C, r*H, r*W); out[n,c,h*r+a,w*r+b] = in[n,c*r*r+a*r+b,h,w]."""
    x = as_tensor(x)
    n, crr, h, w = x.shape
    if crr % (r * r):
        raise ShapeMismatchError("pixel_shuffle", x.shape, (r,), detail=f"channels not divisible by {r * r}")
    c = crr // (r * r)
    out = np.ascontiguousarray(x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3)).reshape(n, c, h * r, w * r)
    return record(out, (x,), lambda g: (_unshuffle(g, r),), "pixel_shuffle")


def _unshuffle(a, r):
    n, c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return np.ascontiguousarray(a.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4)).reshape(n, c * r * r, h, w)


def pixel_unshuffle(x, r):
    """Inverse rearrangement of :func:`pixel_shuffle`."""
    x = as_tensor(x)
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ShapeMismatchError("pixel_unshuffle", x.shape, (r,), detail=f"extents not divisible by {r}")
    out = _unshuffle(x.data, r)
    return record(out, (x,), lambda g: (pixel_shuffle(Tensor._wrap(g), r).data,), "pixel_unshuffle")


@lru_cache(maxsize=256)
def _linear_matrix(n_in, n_out, dtype_str):
    """(n_out, n_in) bilinear interpolation weights, align_corners=False, edge clamped."""
    scale = n_out / n_in
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for d in range(n_out):
        src = (d + 0.5) / scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        i0 = int(np.floor(src))
        t = src - i0
        i1 = min(i0 + 1, n_in - 1)
        m[d, i0] += 1.0 - t
        m[d, i1] += t
    m = m.astype(dtype_str)
    m.setflags(write=False)
    return m


def resize_extent(n, scale):
    return max(1, int(round(n * scale)))


def bilinear_resize(x, scale):
    """Separable bilinear resampling of the last two axes by ``scale``.

    Source coordinate of output index d is ``(d + 0.5) / scale - 0.5``, clamped
    to the valid range (edge replication).
    """
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    x = as_tensor(x)
    h, w = x.shape[-2:]
    ho, wo = resize_extent(h, scale), resize_extent(w, scale)
    if (ho, wo) == (h, w):
        return x
    mh = _linear_matrix(h, ho, x.dtype.str)
    mw = _linear_matrix(w, wo, x.dtype.str)
    out = np.ascontiguousarray(mh @ x.data @ mw.T)
    return record(out, (x,), lambda g: (np.ascontiguousarray(mh.T @ g @ mw),), "bilinear_resize")


def flow_warp(feat, flow):
    """Bilinearly sample ``feat`` at (x + u, y + v); out-of-frame samples read zero.

    ``flow`` is (N, 2, H, W) in pixels: channel 0 horizontal, channel 1 vertical.
    """
    feat = as_tensor(feat)
    flow = as_tensor(flow)
    if feat.ndim != 4 or flow.ndim != 4 or flow.shape[1] != 2 or feat.shape[0] != flow.shape[0] \
            or feat.shape[2:] != flow.shape[2:]:
        raise ShapeMismatchError("flow_warp", feat.shape, flow.shape)
    if feat.dtype != flow.dtype:
        raise TypeError(f"flow_warp: dtype mismatch {feat.dtype} vs {flow.dtype}")
    out = kernels.warp(feat.data, flow.data)

    def bw(g):
        gfeat, gflow = kernels.warp_backward(feat.data, flow.data, g)
        return gfeat, gflow

    return record(out, (feat, flow), bw, "flow_warp")


def charbonnier(x, eps=1e-8):
    """Elementwise sqrt(x**2 + eps**2), evaluated as hypot so that rho(0) == eps exactly."""
    x = as_tensor(x)
    e = x.dtype.type(eps)
    out = np.hypot(x.data, e)
    return record(out, (x,), lambda g: (g * (x.data / out),), "charbonnier")


def clamp01(x):
    """Clamp to [0, 1] without recording a graph (evaluation/output only)."""
    x = as_tensor(x)
    return Tensor._wrap(np.clip(x.data, 0.0, 1.0))
