"""Compare the numba and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeats 5] [--end-to-end]

Kernel timings call each backend module directly. ``--end-to-end`` also times
one training step of the desk model in a subprocess per backend, selected by
``DESKVSR_KERNELS`` exactly as a user would.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from deskvsr.kernels import backends

CASES = [
    ("im2col", (2, 16, 32, 32)),
    ("im2col", (8, 64, 16, 16)),
    ("col2im", (2, 16, 32, 32)),
    ("col2im", (8, 64, 16, 16)),
    ("warp", (2, 16, 32, 32)),
    ("warp", (8, 64, 16, 16)),
    ("warp_backward", (2, 16, 32, 32)),
    ("warp_backward", (8, 64, 16, 16)),
]

STEP_SNIPPET = """
import time, numpy as np
from deskvsr.models import ModelConfig, VSRNet, forward_sequence
from deskvsr.tensor import backward
from deskvsr.training import charbonnier_loss
rng = np.random.default_rng(0)
m = VSRNet(ModelConfig())
x = rng.random((2, 5, 3, 16, 16)).astype(np.float32)
z = rng.random((2, 5, 3, 64, 64)).astype(np.float32)
def step():
    m.zero_grad()
    backward(charbonnier_loss(forward_sequence(m, x), z))
step()
best = min((lambda t0: (step(), time.perf_counter() - t0)[1])(time.perf_counter()) for _ in range({repeats}))
print(best)
"""


def _args(name, shape, rng):
    n, c, h, w = shape
    x = rng.random(shape)
    if name == "im2col":
        return (x, 3, 1, 1)
    if name == "col2im":
        cols = rng.random((n * h * w, c * 9))
        return (cols, shape, 3, 1, 1)
    flow = rng.uniform(-2, 2, (n, 2, h, w))
    if name == "warp":
        return (x, flow)
    return (x, flow, rng.random(shape))


def time_call(fn, args, repeats):
    fn(*args)  # compile / warm caches
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    mods = backends()
    rng = np.random.default_rng(0)
    names = sorted(mods)
    print(f"{'kernel':<14} {'shape':<18} " + " ".join(f"{n + ' ms':>11}" for n in names) + "   speedup")
    for kernel, shape in CASES:
        a = _args(kernel, shape, rng)
        t = {n: time_call(getattr(mods[n], kernel), a, args.repeats) for n in names}
        speed = t["numpy"] / t["numba"] if "numba" in t else float("nan")
        cols = " ".join(f"{t[n] * 1e3:11.3f}" for n in names)
        print(f"{kernel:<14} {str(shape):<18} {cols}   {speed:6.2f}x")
    if args.end_to_end:
        for n in names:
            env = {**os.environ, "DESKVSR_KERNELS": n}
            out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.format(repeats=args.repeats)],
                                 env=env, capture_output=True, text=True, check=True)
            print(f"train step (desk model, 2x5x16x16) [{n}]: {float(out.stdout.strip()) * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
