"""numba-compiled kernels. Loops run in a fixed order, so results are deterministic."""
import math

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _im2col(x, k, stride, padding, ho, wo):
    n, c, h, w = x.shape
    cols = np.empty((n * ho * wo, c * k * k), dtype=x.dtype)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                row = (b * ho + oy) * wo + ox
                col = 0
                for ch in range(c):
                    for i in range(k):
                        iy = oy * stride + i - padding
                        for j in range(k):
                            ix = ox * stride + j - padding
                            if 0 <= iy < h and 0 <= ix < w:
                                cols[row, col] = x[b, ch, iy, ix]
                            else:
                                cols[row, col] = 0.0
                            col += 1
    return cols


@nb.njit(cache=True)
def _col2im(cols, n, c, h, w, k, stride, padding, ho, wo):
    out = np.zeros((n, c, h, w), dtype=cols.dtype)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                row = (b * ho + oy) * wo + ox
                col = 0
                for ch in range(c):
                    for i in range(k):
                        iy = oy * stride + i - padding
                        for j in range(k):
                            ix = ox * stride + j - padding
                            if 0 <= iy < h and 0 <= ix < w:
                                out[b, ch, iy, ix] += cols[row, col]
                            col += 1
    return out


def im2col(x, k, stride, padding):
    n, c, h, w = x.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    return _im2col(np.ascontiguousarray(x), k, stride, padding, ho, wo)


def col2im(cols, shape, k, stride, padding):
    n, c, h, w = shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    return _col2im(np.ascontiguousarray(cols), n, c, h, w, k, stride, padding, ho, wo)


@nb.njit(cache=True)
def _warp(feat, flow):
    n, c, h, w = feat.shape
    out = np.empty_like(feat)
    one = feat.dtype.type(1.0)
    zero = feat.dtype.type(0.0)
    for b in range(n):
        for y in range(h):
            for x in range(w):
                sx = x + flow[b, 0, y, x]
                sy = y + flow[b, 1, y, x]
                fx = math.floor(sx)
                fy = math.floor(sy)
                ax = sx - fx
                ay = sy - fy
                x0 = int(fx)
                y0 = int(fy)
                w00 = (one - ax) * (one - ay)
                w01 = ax * (one - ay)
                w10 = (one - ax) * ay
                w11 = ax * ay
                in_x0 = 0 <= x0 < w
                in_x1 = 0 <= x0 + 1 < w
                in_y0 = 0 <= y0 < h
                in_y1 = 0 <= y0 + 1 < h
                for ch in range(c):
                    f00 = feat[b, ch, y0, x0] if (in_y0 and in_x0) else zero
                    f01 = feat[b, ch, y0, x0 + 1] if (in_y0 and in_x1) else zero
                    f10 = feat[b, ch, y0 + 1, x0] if (in_y1 and in_x0) else zero
                    f11 = feat[b, ch, y0 + 1, x0 + 1] if (in_y1 and in_x1) else zero
                    out[b, ch, y, x] = w00 * f00 + w01 * f01 + w10 * f10 + w11 * f11
    return out


@nb.njit(cache=True)
def _warp_backward(feat, flow, gout):
    n, c, h, w = feat.shape
    gfeat = np.zeros_like(feat)
    gflow = np.zeros((n, 2, h, w), dtype=feat.dtype)
    one = feat.dtype.type(1.0)
    zero = feat.dtype.type(0.0)
    for b in range(n):
        for y in range(h):
            for x in range(w):
                sx = x + flow[b, 0, y, x]
                sy = y + flow[b, 1, y, x]
                fx = math.floor(sx)
                fy = math.floor(sy)
                ax = sx - fx
                ay = sy - fy
                x0 = int(fx)
                y0 = int(fy)
                w00 = (one - ax) * (one - ay)
                w01 = ax * (one - ay)
                w10 = (one - ax) * ay
                w11 = ax * ay
                in_x0 = 0 <= x0 < w
                in_x1 = 0 <= x0 + 1 < w
                in_y0 = 0 <= y0 < h
                in_y1 = 0 <= y0 + 1 < h
                gu = zero
                gv = zero
                for ch in range(c):
                    g = gout[b, ch, y, x]
                    f00 = zero
                    f01 = zero
                    f10 = zero
                    f11 = zero
                    if in_y0 and in_x0:
                        f00 = feat[b, ch, y0, x0]
                        gfeat[b, ch, y0, x0] += w00 * g
                    if in_y0 and in_x1:
                        f01 = feat[b, ch, y0, x0 + 1]
                        gfeat[b, ch, y0, x0 + 1] += w01 * g
                    if in_y1 and in_x0:
                        f10 = feat[b, ch, y0 + 1, x0]
                        gfeat[b, ch, y0 + 1, x0] += w10 * g
                    if in_y1 and in_x1:
                        f11 = feat[b, ch, y0 + 1, x0 + 1]
                        gfeat[b, ch, y0 + 1, x0 + 1] += w11 * g
                    gu += g * ((one - ay) * (f01 - f00) + ay * (f11 - f10))
                    gv += g * ((one - ax) * (f10 - f00) + ax * (f11 - f01))
                gflow[b, 0, y, x] = gu
                gflow[b, 1, y, x] = gv
    return gfeat, gflow


def warp(feat, flow):
    return _warp(np.ascontiguousarray(feat), np.ascontiguousarray(flow, dtype=feat.dtype))


def warp_backward(feat, flow, gout):
    return _warp_backward(
        np.ascontiguousarray(feat),
        np.ascontiguousarray(flow, dtype=feat.dtype),
        np.ascontiguousarray(gout, dtype=feat.dtype),
    )
