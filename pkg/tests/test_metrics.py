import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deskvsr.errors import ShapeMismatchError
from deskvsr.metrics import psnr, rgb_to_y, sequence_metrics, ssim

from oracles import C1, psnr_oracle, ssim_oracle


# PSNR --------------------------------------------------------------------------

def test_psnr_identical_is_capped(rng):
    a = rng.random((3, 8, 8))
    assert psnr(a, a) == 100.0


def test_psnr_constant_offset():
    a = np.full((3, 8, 8), 0.2)
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-9


def test_psnr_quantized_offset():
    a = np.arange(64, dtype=np.float64).reshape(1, 8, 8) / 255.0
    assert abs(psnr(a, a + 16 / 255) - 20 * np.log10(255 / 16)) < 1e-9
    assert psnr(a, a + 16 / 255) == pytest.approx(24.05, abs=0.01)


def test_psnr_matches_direct_formula(rng):
    a, b = rng.random((2, 3, 16, 16))
    assert abs(psnr(a, b) - psnr_oracle(a, b)) < 1e-9


def test_psnr_y_uses_luma(rng):
    a, b = rng.random((2, 3, 16, 16))
    want = psnr_oracle(rgb_to_y(a), rgb_to_y(b))
    assert abs(psnr(a, b, "y") - want) < 1e-9


def test_luma_of_white_and_black():
    assert rgb_to_y(np.ones((3, 1, 1))).item() == pytest.approx(235 / 255)
    assert rgb_to_y(np.zeros((3, 1, 1))).item() == pytest.approx(16 / 255)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_psnr_symmetric(seed):
    a, b = np.random.default_rng(seed).random((2, 3, 6, 6))
    assert psnr(a, b) == psnr(b, a)


def test_psnr_decreases_with_noise(rng):
    a = rng.random((3, 16, 16))
    u = rng.uniform(-1, 1, a.shape)
    vals = [psnr(a, a + amp * u) for amp in np.linspace(0.01, 0.5, 12)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_metric_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))
    with pytest.raises(ShapeMismatchError):
        ssim(np.zeros((3, 12, 12)), np.zeros((3, 12, 13)))


def test_unknown_mode():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 2, 2)), np.zeros((3, 2, 2)), "lab")


# SSIM --------------------------------------------------------------------------

def test_ssim_identical(rng):
    a = rng.random((3, 16, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_checker_vs_negative():
    yy, xx = np.mgrid[:16, :16]
    a = ((yy + xx) % 2).astype(np.float64)
    got = ssim(a[None], 1 - a[None])
    assert abs(got - ssim_oracle(a, 1 - a)) < 1e-6
    assert got < 0


def test_ssim_random_matches_oracle(rng):
    a, b = rng.random((2, 14, 17))
    assert abs(ssim(a[None], b[None]) - ssim_oracle(a, b)) < 1e-6


@pytest.mark.parametrize("m1,m2", [(0.2, 0.7), (0.0, 1.0), (0.5, 0.45)])
def test_ssim_constants_closed_form(m1, m2):
    got = ssim(np.full((1, 12, 12), m1), np.full((1, 12, 12), m2))
    assert abs(got - (2 * m1 * m2 + C1) / (m1 ** 2 + m2 ** 2 + C1)) < 1e-9


def test_ssim_rgb_averages_channels(rng):
    a, b = rng.random((2, 3, 12, 12))
    want = np.mean([ssim_oracle(a[c], b[c]) for c in range(3)])
    assert abs(ssim(a, b) - want) < 1e-6


def test_ssim_y_mode(rng):
    a, b = rng.random((2, 3, 12, 12))
    assert abs(ssim(a, b, "y") - ssim_oracle(rgb_to_y(a)[0], rgb_to_y(b)[0])) < 1e-6


def test_ssim_smaller_than_window():
    with pytest.raises(ShapeMismatchError):
        ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))


# rows ----------------------------------------------------------------------------

def test_sequence_rows(rng):
    gt = rng.random((3, 3, 12, 12))
    rows = sequence_metrics(gt, gt, "y", "clip")
    assert [r["frame_index"] for r in rows] == [0, 1, 2]
    assert all(r["psnr_db"] == 100.0 and r["ssim"] == pytest.approx(1.0) for r in rows)
    assert set(rows[0]) == {"sequence_id", "frame_index", "psnr_db", "ssim", "mode"}


def test_sequence_length_mismatch(rng):
    with pytest.raises(ShapeMismatchError):
        sequence_metrics(rng.random((2, 3, 12, 12)), rng.random((3, 3, 12, 12)))
