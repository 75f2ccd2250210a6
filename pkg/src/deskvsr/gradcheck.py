"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward, mul, no_grad, sum as tsum


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    n_checked: int

    def passed(self, tol):
        return self.max_rel_error < tol


def _scalarize(out, proj):
    return tsum(mul(out, Tensor._wrap(proj)))


def rel_error(analytic, numeric):
    """Elementwise |a - n| / max(|a|, |n|, floor), floor = 1e-3 * max|n| (and >= 1e-10).

    The floor keeps entries whose true gradient is essentially zero from being
    judged by relative noise; they are measured against the gradient's scale.
    """
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    floor = max(1e-3 * float(np.abs(numeric).max(initial=0.0)), 1e-10)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max(initial=0.0))


def check(fn, inputs, name="", rng=None, max_coords=None, reference_dtype=None):
    """Compare analytic and central-difference gradients of ``fn``.

    ``fn`` maps the input tensors to a tensor output; it is reduced to a scalar
    by a fixed random projection. Step size is ``1e-5 * (1 + |x|)``. When
    ``max_coords`` is set, only that many randomly chosen coordinates per input
    are perturbed. ``reference_dtype`` evaluates the finite differences at that
    precision (used to check 32-bit backward rules against a 64-bit reference).
    """
    rng = np.random.default_rng(0) if rng is None else rng
    leaves = [Tensor(np.array(x.data if isinstance(x, Tensor) else x), requires_grad=True) for x in inputs]
    out = fn(*leaves)
    proj = rng.standard_normal(out.shape).astype(out.dtype)
    backward(_scalarize(out, proj))
    analytic = [leaf.grad for leaf in leaves]

    ref_dt = np.dtype(reference_dtype) if reference_dtype is not None else None
    base = [leaf.data.astype(ref_dt) if ref_dt is not None else leaf.data.copy() for leaf in leaves]
    proj_ref = proj.astype(ref_dt) if ref_dt is not None else proj

    def f(arrs):
        with no_grad():
            o = fn(*[Tensor._wrap(a) for a in arrs])
        return float(np.sum(o.data.astype(np.float64) * proj_ref.astype(np.float64)))

    worst = 0.0
    n_checked = 0
    for k, arr in enumerate(base):
        flat_idx = np.arange(arr.size)
        if max_coords is not None and arr.size > max_coords:
            flat_idx = np.sort(rng.choice(arr.size, size=max_coords, replace=False))
        num = np.empty(len(flat_idx))
        for m, i in enumerate(flat_idx):
            orig = arr.flat[i]
            h = 1e-5 * (1.0 + abs(float(orig)))
            arrs = list(base)
            plus = arr.copy()
            plus.flat[i] = orig + h
            minus = arr.copy()
            minus.flat[i] = orig - h
            arrs[k] = plus
            fp = f(arrs)
            arrs[k] = minus
            fm = f(arrs)
            num[m] = (fp - fm) / (float(plus.flat[i]) - float(minus.flat[i]))
        a = analytic[k]
        a = np.zeros(arr.shape) if a is None else a
        worst = max(worst, rel_error(a.ravel()[flat_idx], num))
        n_checked += len(flat_idx)
    return GradcheckResult(name, worst, n_checked)


def check_directional(loss_fn, params, name="", rng=None, n_dirs=3):
    """Directional-derivative check for many-parameter functions.

    Compares ``<grad, d>`` with ``(L(p + h d) - L(p - h d)) / 2h`` for random
    unit directions ``d`` spanning all parameters jointly.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    grads = [np.zeros(p.shape) if p.grad is None else p.grad.astype(np.float64) for p in params]
    base = [p.data.copy() for p in params]
    worst = 0.0
    try:
        for _ in range(n_dirs):
            dirs = [rng.standard_normal(p.shape) for p in params]
            norm = np.sqrt(np.sum([np.sum(d * d) for d in dirs]))
            dirs = [d / norm for d in dirs]
            analytic = float(np.sum([np.sum(g * d) for g, d in zip(grads, dirs)]))
            h = 1e-5
            vals = []
            for sign in (1.0, -1.0):
                for p, b, d in zip(params, base, dirs):
                    p.data = (b + sign * h * d).astype(p.dtype)
                with no_grad():
                    vals.append(loss_fn().item())
            numeric = (vals[0] - vals[1]) / (2 * h)
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-10))
    finally:
        for p, b in zip(params, base):
            p.data = b
            p.grad = None
    return GradcheckResult(name, worst, n_dirs)
