"""Pure-numpy reference kernels. Same contracts as the numba versions."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, padding):
    n, c, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # (n, c, ho, wo, k, k) -> (n, ho, wo, c, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return np.ascontiguousarray(cols)


def col2im(cols, shape, k, stride, padding):
    n, c, h, w = shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    g = cols.reshape(n, ho, wo, c, k, k)
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(out)


def _corners(flow, h, w):
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sx = xs + flow[:, 0]
    sy = ys + flow[:, 1]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    ax = sx - x0
    ay = sy - y0
    return x0.astype(np.int64), y0.astype(np.int64), ax, ay


def _gather(feat, yy, xx):
    n, c, h, w = feat.shape
    valid = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
    yc = np.clip(yy, 0, h - 1)
    xc = np.clip(xx, 0, w - 1)
    bidx = np.arange(n)[:, None, None]
    vals = feat[bidx, :, yc, xc]  # (n, h, w, c)
    vals = np.moveaxis(vals, -1, 1)
    return vals * valid[:, None].astype(feat.dtype), valid


def warp(feat, flow):
    n, c, h, w = feat.shape
    x0, y0, ax, ay = _corners(flow, h, w)
    f00, _ = _gather(feat, y0, x0)
    f01, _ = _gather(feat, y0, x0 + 1)
    f10, _ = _gather(feat, y0 + 1, x0)
    f11, _ = _gather(feat, y0 + 1, x0 + 1)
    ax = ax[:, None]
    ay = ay[:, None]
    one = feat.dtype.type(1)
    out = (one - ax) * (one - ay) * f00 + ax * (one - ay) * f01 + (one - ax) * ay * f10 + ax * ay * f11
    return np.ascontiguousarray(out, dtype=feat.dtype)


def warp_backward(feat, flow, gout):
    n, c, h, w = feat.shape
    x0, y0, ax, ay = _corners(flow, h, w)
    one = feat.dtype.type(1)
    gfeat = np.zeros_like(feat)
    corners = []
    bidx = np.broadcast_to(np.arange(n)[:, None, None], x0.shape)
    for dy, dx, wgt in (
        (0, 0, (one - ax) * (one - ay)),
        (0, 1, ax * (one - ay)),
        (1, 0, (one - ax) * ay),
        (1, 1, ax * ay),
    ):
        vals, valid = _gather(feat, y0 + dy, x0 + dx)
        corners.append(vals)
        contrib = gout * wgt[:, None]  # (n, c, h, w)
        m = valid
        b = bidx[m]
        yy = (y0 + dy)[m]
        xx = (x0 + dx)[m]
        np.add.at(gfeat, (b, slice(None), yy, xx), np.moveaxis(contrib, 1, -1)[m])
    f00, f01, f10, f11 = corners
    axc = ax[:, None]
    ayc = ay[:, None]
    dax = (one - ayc) * (f01 - f00) + ayc * (f11 - f10)
    day = (one - axc) * (f10 - f00) + axc * (f11 - f01)
    gflow = np.empty((n, 2, h, w), dtype=feat.dtype)
    gflow[:, 0] = (gout * dax).sum(axis=1)
    gflow[:, 1] = (gout * day).sum(axis=1)
    return gfeat, gflow
