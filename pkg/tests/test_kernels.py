import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deskvsr import kernels

mods = kernels.backends()
needs_numba = pytest.mark.skipif("numba" not in mods, reason="numba not importable")


@needs_numba
@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 2), c=st.integers(1, 3), h=st.integers(1, 6), w=st.integers(1, 6),
       k=st.sampled_from([1, 3, 5]), stride=st.sampled_from([1, 2]), seed=st.integers(0, 1000))
def test_im2col_col2im_parity(n, c, h, w, k, stride, seed):
    pad = k // 2
    x = np.random.default_rng(seed).standard_normal((n, c, h, w))
    a = mods["numpy"].im2col(x, k, stride, pad)
    b = mods["numba"].im2col(x, k, stride, pad)
    assert np.array_equal(a, b)
    cols = np.random.default_rng(seed + 1).standard_normal(a.shape)
    ga = mods["numpy"].col2im(cols, x.shape, k, stride, pad)
    gb = mods["numba"].col2im(cols, x.shape, k, stride, pad)
    np.testing.assert_allclose(ga, gb, rtol=1e-13, atol=1e-13)


@needs_numba
@settings(max_examples=20, deadline=None)
@given(h=st.integers(1, 6), w=st.integers(1, 6), seed=st.integers(0, 1000),
       dtype=st.sampled_from([np.float32, np.float64]))
def test_warp_parity(h, w, seed, dtype):
    r = np.random.default_rng(seed)
    feat = r.standard_normal((2, 3, h, w)).astype(dtype)
    flow = r.uniform(-3, 3, (2, 2, h, w)).astype(dtype)
    g = r.standard_normal((2, 3, h, w)).astype(dtype)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(mods["numpy"].warp(feat, flow), mods["numba"].warp(feat, flow), rtol=tol, atol=tol)
    for ga, gb in zip(mods["numpy"].warp_backward(feat, flow, g), mods["numba"].warp_backward(feat, flow, g)):
        np.testing.assert_allclose(ga, gb, rtol=tol, atol=tol)


def test_adjointness_of_im2col(rng):
    # <im2col(x), c> == <x, col2im(c)> for the active backend
    x = rng.standard_normal((2, 3, 5, 4))
    cols = kernels.im2col(x, 3, 2, 1)
    c = rng.standard_normal(cols.shape)
    lhs = float(np.sum(cols * c))
    rhs = float(np.sum(x * kernels.col2im(c, x.shape, 3, 2, 1)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@pytest.mark.parametrize("name", ["numpy", "numba"])
def test_env_flag_selects_backend(name):
    if name not in mods:
        pytest.skip("numba not importable")
    env = {**os.environ, "DESKVSR_KERNELS": name}
    out = subprocess.run([sys.executable, "-c", "from deskvsr import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == name


def test_env_flag_rejects_unknown():
    env = {**os.environ, "DESKVSR_KERNELS": "cuda"}
    out = subprocess.run([sys.executable, "-c", "import deskvsr.kernels"], env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "DESKVSR_KERNELS" in out.stderr
