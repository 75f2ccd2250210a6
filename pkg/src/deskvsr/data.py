"""Degradations, synthetic sequences with known motion, and PNG frame I/O.

Frames are float ndarrays shaped (T, 3, H, W) with values in [0, 1].
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import os
import re

import numpy as np

from .errors import FrameShapeMismatch, MissingFrame, ShapeMismatchError
from .rng import make_rng

BD_SIGMA = 1.6
BD_KERNEL_SIZE = 13
SCALE = 4


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "bd"
    scale: int = SCALE
    sigma: float = BD_SIGMA
    kernel_size: int = BD_KERNEL_SIZE

    def __post_init__(self):
        if self.kind not in ("bi", "bd"):
            raise ValueError(f"degradation kind must be 'bi' or 'bd', got {self.kind!r}")
        if self.kernel_size % 2 == 0:
            raise ValueError("Gaussian kernel size must be odd")

    def manifest(self):
        if self.kind == "bd":
            return {"kind": "bd", "scale": self.scale, "sigma": self.sigma,
                    "kernel_size": self.kernel_size, "stride": self.scale, "phase": 0, "padding": "reflect"}
        return {"kind": "bi", "scale": self.scale, "kernel": "cubic", "a": -0.5, "antialias": True}


@dataclass
class VideoSequence:
    """Frames plus, for synthetic data, the cumulative content displacement per frame.

    ``displacements[t] = (dx, dy)`` in pixels of ``frames``; ``observed`` holds
    the occluded frames a model actually sees (``frames`` stays clean).
    """

    frames: np.ndarray
    displacements: np.ndarray | None = None
    observed: np.ndarray | None = None
    occluders: list = field(default_factory=list)

    def __post_init__(self):
        self.frames = np.clip(np.asarray(self.frames, dtype=np.float64), 0.0, 1.0)
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise FrameShapeMismatch(f"frames must be (T, 3, H, W), got {self.frames.shape}")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def inputs(self):
        return self.frames if self.observed is None else self.observed


# kernels ---------------------------------------------------------------------

def gaussian_kernel1d(sigma=BD_SIGMA, size=BD_KERNEL_SIZE):
    r = np.arange(size) - size // 2
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _reflect(i, n):
    """numpy 'reflect' index mapping (edge sample not repeated)."""
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = abs(i) % period
    return period - i if i >= n else i


@lru_cache(maxsize=64)
def _blur_matrix(n, sigma, size):
    g = gaussian_kernel1d(sigma, size)
    half = size // 2
    m = np.zeros((n, n))
    for y in range(n):
        for t, wgt in enumerate(g):
            m[y, _reflect(y + t - half, n)] += wgt
    m.setflags(write=False)
    return m


def _cubic(x, a=-0.5):
    ax = np.abs(x)
    return np.where(
        ax <= 1, (a + 2) * ax ** 3 - (a + 3) * ax ** 2 + 1,
        np.where(ax < 2, a * ax ** 3 - 5 * a * ax ** 2 + 8 * a * ax - 4 * a, 0.0),
    )


def _symmetric(i, n):
    """'symmetric' index mapping (edge sample repeated), as MATLAB imresize pads."""
    period = 2 * n
    i = i % period
    return period - 1 - i if i >= n else i


@lru_cache(maxsize=64)
def bicubic_matrix(n_in, n_out):
    """(n_out, n_in) bicubic weights; a=-0.5, antialiased when shrinking, align-corners=False."""
    scale = n_out / n_in
    aa = scale < 1
    width = 4.0 / scale if aa else 4.0
    m = np.zeros((n_out, n_in))
    for d in range(n_out):
        u = (d + 0.5) / scale - 0.5
        left = int(np.floor(u - width / 2))
        taps = np.arange(left, left + int(np.ceil(width)) + 2)
        dist = u - taps
        wgt = scale * _cubic(scale * dist) if aa else _cubic(dist)
        wgt = wgt / wgt.sum()
        for tap, wv in zip(taps, wgt):
            if wv != 0.0:
                m[d, _symmetric(int(tap), n_in)] += wv
    m.setflags(write=False)
    return m


def bicubic_resize(x, scale):
    """Resize the last two axes by ``scale`` with the antialiased cubic kernel."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    ho, wo = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
    if (ho, wo) == (h, w):
        return x.copy()
    return bicubic_matrix(h, ho) @ x @ bicubic_matrix(w, wo).T


def blur_downsample(x, spec=DegradationSpec()):
    """Separable Gaussian blur (reflect padding), then keep pixels 0, s, 2s, ... per axis."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    s = spec.scale
    mh = _blur_matrix(h, spec.sigma, spec.kernel_size)[::s]
    mw = _blur_matrix(w, spec.sigma, spec.kernel_size)[::s]
    return mh @ x @ mw.T


def degrade(hr, spec=DegradationSpec()):
    """HR frames (..., H, W) -> LR frames (..., H/4, W/4) under BI or BD."""
    if isinstance(spec, str):
        spec = DegradationSpec(kind=spec)
    frames = hr.frames if isinstance(hr, VideoSequence) else np.asarray(hr, dtype=np.float64)
    h, w = frames.shape[-2:]
    if h % spec.scale or w % spec.scale:
        raise ShapeMismatchError("degrade", (h, w), (spec.scale,), detail="extents not divisible by scale")
    if spec.kind == "bd":
        return blur_downsample(frames, spec)
    return bicubic_resize(frames, 1.0 / spec.scale)


# synthetic sequences ---------------------------------------------------------

@dataclass(frozen=True)
class Occluder:
    frame: int
    y: int
    x: int
    h: int
    w: int
    value: float = 0.5


def texture(rng, h, w, smooth=2.0, detail=0.35):
    """Band-limited colour texture: blurred noise plus a weaker fine-scale layer, in [0, 1]."""
    def blurred(sigma):
        noise = rng.standard_normal((3, h, w))
        if sigma <= 0:
            return noise
        g = gaussian_kernel1d(sigma, 2 * int(np.ceil(3 * sigma)) + 1)
        mh = _blur_matrix_wrap(h, tuple(g))
        mw = _blur_matrix_wrap(w, tuple(g))
        return mh @ noise @ mw.T

    def norm(a):
        a = a - a.mean(axis=(1, 2), keepdims=True)
        return a / (a.std() + 1e-12)

    img = norm(blurred(smooth)) + detail * norm(blurred(smooth / 2.0))
    img = (img - img.min()) / (img.max() - img.min())
    return img


@lru_cache(maxsize=32)
def _blur_matrix_wrap(n, g):
    half = len(g) // 2
    m = np.zeros((n, n))
    for y in range(n):
        for t, wgt in enumerate(g):
            m[y, (y + t - half) % n] += wgt
    return m


def _shift_bilinear(canvas, dy, dx):
    """canvas sampled at (y - dy, x - dx): content moved by (dx, dy)."""
    c, h, w = canvas.shape
    ys = np.arange(h) - dy
    xs = np.arange(w) - dx
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y0 + 1, 0, h - 1)
    x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x0 + 1, 0, w - 1)
    a = canvas[:, y0c][:, :, x0c]
    b = canvas[:, y0c][:, :, x1c]
    cc = canvas[:, y1c][:, :, x0c]
    d = canvas[:, y1c][:, :, x1c]
    return (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * cc + tx * d)


def synth_sequence(seed, t, h, w, motion=(1.0, 0.0), occluders=(), margin=None, smooth=2.0, detail=0.35):
    """Random-texture canvas translated per step, seen through an H x W window.

    ``motion`` is one (dx, dy) for every step or a list of T-1 per-step pairs;
    content in frame t+1 is frame t's content moved by that step's (dx, dy).
    ``occluders`` paint rectangles into ``observed`` only, so the hidden content
    must come from other frames.
    """
    steps = np.asarray(motion, dtype=np.float64)
    if steps.ndim == 1:
        steps = np.tile(steps, (max(t - 1, 0), 1))
    if steps.shape != (max(t - 1, 0), 2):
        raise ValueError(f"motion must be one (dx, dy) or {t - 1} pairs, got shape {steps.shape}")
    if steps.size and np.abs(steps).max() > 4:
        raise ValueError("per-step motion must satisfy |u|, |v| <= 4 px")
    disp = np.vstack([np.zeros((1, 2)), np.cumsum(steps, axis=0)]) if t > 1 else np.zeros((1, 2))
    need = int(np.ceil(np.abs(disp).max())) + 2
    margin = need if margin is None else int(margin)
    if np.abs(disp).max() + 1 > margin:
        raise ValueError(f"motion exceeds canvas margin {margin}px (max displacement {np.abs(disp).max():.2f})")
    rng = make_rng(seed, 7)
    canvas = texture(rng, h + 2 * margin, w + 2 * margin, smooth, detail)
    frames = np.empty((t, 3, h, w))
    for i in range(t):
        dx, dy = disp[i]
        if float(dx).is_integer() and float(dy).is_integer():
            shifted = np.roll(canvas, (int(dy), int(dx)), axis=(1, 2))
        else:
            shifted = _shift_bilinear(canvas, dy, dx)
        frames[i] = shifted[:, margin:margin + h, margin:margin + w]
    observed = None
    occ = list(occluders)
    if occ:
        observed = frames.copy()
        for o in occ:
            if not 0 <= o.frame < t:
                raise ValueError(f"occluder frame {o.frame} outside 0..{t - 1}")
            observed[o.frame, :, o.y:o.y + o.h, o.x:o.x + o.w] = o.value
    return VideoSequence(frames, disp, observed, occ)


def occluded_clip(seed, t=8, h=32, w=32, motion=(1.0, 0.0), frac=0.25, size=12):
    """Clip whose first ``frac`` of frames hide a centred patch in the model input."""
    hidden = max(1, int(round(t * frac)))
    y = (h - size) // 2
    x = (w - size) // 2
    occ = [Occluder(i, y, x, size, size) for i in range(hidden)]
    return synth_sequence(seed, t, h, w, motion, occ)


# frame directories -----------------------------------------------------------

_FRAME_RE = re.compile(r"^frame_(\d{8})\.png$")


def frame_name(i):
    return f"frame_{i:08d}.png"


def list_frames(directory):
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"frame directory not found: {directory}")
    idx = sorted(int(m.group(1)) for m in map(_FRAME_RE.match, os.listdir(directory)) if m)
    for expect, got in enumerate(idx):
        if expect != got:
            raise MissingFrame(expect)
    return [os.path.join(directory, frame_name(i)) for i in idx]


def load_frames(directory):
    """PNG frames frame_%08d.png (0, 1, 2, ...) -> (T, 3, H, W) float64 in [0, 1]."""
    from PIL import Image

    paths = list_frames(directory)
    if not paths:
        raise FileNotFoundError(f"no frame_%08d.png files in {directory}")
    frames, first = [], None
    for p in paths:
        try:
            with Image.open(p) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        except OSError as exc:
            raise OSError(f"unreadable frame {p}: {exc}") from exc
        first = arr.shape if first is None else first
        if arr.shape != first:
            raise FrameShapeMismatch(
                f"{os.path.basename(p)} is {arr.shape[1]}x{arr.shape[0]}, expected {first[1]}x{first[0]}"
            )
        frames.append(arr.transpose(2, 0, 1))
    return VideoSequence(np.stack(frames))


def quantize(frames):
    """[0, 1] floats -> uint8 with round-half-up."""
    return np.floor(np.clip(np.asarray(frames, dtype=np.float64), 0, 1) * 255.0 + 0.5).astype(np.uint8)


def save_frames(seq, directory):
    from PIL import Image

    frames = seq.frames if isinstance(seq, VideoSequence) else np.asarray(seq)
    os.makedirs(directory, exist_ok=True)
    q = quantize(frames)
    for i, f in enumerate(q):
        Image.fromarray(f.transpose(1, 2, 0), mode="RGB").save(os.path.join(directory, frame_name(i)))
    return len(q)
