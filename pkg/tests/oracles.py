"""Independent reference implementations (direct loops and closed forms) shared by the tests."""
import numpy as np

C1, C2 = 0.01 ** 2, 0.03 ** 2


def conv_oracle(x, w, b, stride, pad):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for nn in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for c in range(cin):
                        for a in range(k):
                            for bb in range(k):
                                acc += xp[nn, c, i * stride + a, j * stride + bb] * w[o, c, a, bb]
                    out[nn, o, i, j] = acc
    return out


def shuffle_oracle(x, r):
    n, cr, h, w = x.shape
    c = cr // (r * r)
    out = np.empty((n, c, h * r, w * r), dtype=x.dtype)
    for ci in range(c):
        for a in range(r):
            for b in range(r):
                out[:, ci, a::r, b::r] = x[:, ci * r * r + a * r + b]
    return out


def bilinear_oracle_1d(row, scale):
    n = len(row)
    m = int(round(n * scale))
    out = np.empty(m)
    for d in range(m):
        s = (d + 0.5) / scale - 0.5
        s = min(max(s, 0.0), n - 1)
        i0 = int(np.floor(s))
        i1 = min(i0 + 1, n - 1)
        t = s - i0
        out[d] = (1 - t) * row[i0] + t * row[i1]
    return out


def warp_oracle(feat, flow):
    n, c, h, w = feat.shape
    out = np.zeros_like(feat)
    for nn in range(n):
        for y in range(h):
            for x in range(w):
                sx = x + flow[nn, 0, y, x]
                sy = y + flow[nn, 1, y, x]
                x0, y0 = int(np.floor(sx)), int(np.floor(sy))
                tx, ty = sx - x0, sy - y0
                for yy, xx, wt in ((y0, x0, (1 - ty) * (1 - tx)), (y0, x0 + 1, (1 - ty) * tx),
                                   (y0 + 1, x0, ty * (1 - tx)), (y0 + 1, x0 + 1, ty * tx)):
                    if 0 <= yy < h and 0 <= xx < w:
                        out[nn, :, y, x] += wt * feat[nn, :, yy, xx]
    return out


def bd_oracle(img, sigma=1.6, size=13, s=4):
    r = np.arange(size) - size // 2
    g1 = np.exp(-r ** 2 / (2 * sigma ** 2))
    k2 = np.outer(g1, g1)
    k2 /= k2.sum()
    half = size // 2
    padded = np.pad(img, ((0, 0), (half, half), (half, half)), mode="reflect")
    c, h, w = img.shape
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            out[:, y, x] = np.sum(padded[:, y:y + size, x:x + size] * k2, axis=(1, 2))
    return out[:, ::s, ::s]


def cubic(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def bicubic_oracle_1d(row, scale):
    n = len(row)
    m = int(round(n * scale))
    padded = np.pad(row, 16, mode="symmetric")
    out = np.zeros(m)
    for d in range(m):
        u = (d + 0.5) / scale - 0.5
        ws, vs = [], []
        for j in range(int(np.floor(u)) - 10, int(np.floor(u)) + 12):
            wgt = scale * cubic(scale * (u - j)) if scale < 1 else cubic(u - j)
            ws.append(wgt)
            vs.append(padded[j + 16])
        ws = np.array(ws)
        out[d] = np.dot(ws / ws.sum(), vs)
    return out


def window():
    r = np.arange(11) - 5
    g = np.exp(-r ** 2 / (2 * 1.5 ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_oracle(x, y):
    """Per-window weighted statistics, averaged over all valid window positions."""
    w = window()
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            mx, my = np.sum(w * px), np.sum(w * py)
            vx = np.sum(w * (px - mx) ** 2)
            vy = np.sum(w * (py - my) ** 2)
            cxy = np.sum(w * (px - mx) * (py - my))
            vals.append((2 * mx * my + C1) * (2 * cxy + C2) / ((mx ** 2 + my ** 2 + C1) * (vx + vy + C2)))
    return np.mean(vals)


def psnr_oracle(a, b):
    return 10 * np.log10(1.0 / np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))


def shift_zero_fill(x, u, v):
    """out[..., y, x] = x[..., y + v, x + u] where that lies inside, else 0."""
    h, w = x.shape[-2:]
    out = np.zeros_like(x)
    for y in range(h):
        for xx in range(w):
            sy, sx = y + v, xx + u
            if 0 <= sy < h and 0 <= sx < w:
                out[..., y, xx] = x[..., sy, sx]
    return out
