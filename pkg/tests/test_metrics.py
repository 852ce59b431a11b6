import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from frpan.metrics import (QualityReport, d_lambda_k, d_rho, d_s, ergas, evaluate, hc_conj,
                           hc_mul, q2n, reprojection_indexes, sam, sam_with_count, uiqi)
from frpan.resample import SensorProfile, degrade, expand

from oracles import brute_field, hamilton, quaternion_q

images = arrays(np.float64, (3, 16, 16), elements=st.floats(1, 1000))


def uiqi_direct(x, y):
    # textbook form with sample covariance; the normalization cancels
    c = np.cov(x.ravel(), y.ravel())
    mx, my = x.mean(), y.mean()
    return 4 * c[0, 1] * mx * my / ((c[0, 0] + c[1, 1]) * (mx ** 2 + my ** 2))


def test_uiqi_single_block_matches_formula(rng):
    x, y = rng.uniform(0, 5, (8, 8)), rng.uniform(0, 5, (8, 8))
    assert uiqi(x, y, window=8) == pytest.approx(uiqi_direct(x, y), rel=1e-12)


def test_uiqi_averages_blocks(rng):
    x, y = rng.uniform(0, 5, (16, 8)), rng.uniform(0, 5, (16, 8))
    want = (uiqi_direct(x[:8], y[:8]) + uiqi_direct(x[8:], y[8:])) / 2
    assert uiqi(x, y, window=8) == pytest.approx(want, rel=1e-12)


def test_uiqi_window_clamped_to_image(rng):
    x, y = rng.uniform(0, 5, (12, 12)), rng.uniform(0, 5, (12, 12))
    assert uiqi(x, y) == pytest.approx(uiqi_direct(x, y), rel=1e-12)


def test_uiqi_flat_blocks():
    a, b = np.full((8, 8), 2.0), np.full((8, 8), 3.0)
    assert uiqi(a, a, 8) == 1.0
    assert uiqi(a, b, 8) == pytest.approx(2 * 6 / 13)
    assert uiqi(np.zeros((8, 8)), np.zeros((8, 8)), 8) == 1.0


def test_uiqi_rejects_small_window_and_mismatch(rng):
    x = rng.uniform(size=(8, 8))
    with pytest.raises(ValueError):
        uiqi(x, x, window=3)
    with pytest.raises(ValueError):
        uiqi(x, x[:4])


@given(images)
def test_identity_scores(x):
    assert uiqi(x[0], x[0]) == pytest.approx(1.0, abs=1e-9)
    assert q2n(x, x) == pytest.approx(1.0, abs=1e-9)
    assert sam(x, x) == 0.0
    assert ergas(x, x, 4) == 0.0


@given(images, images)
def test_uiqi_symmetric_and_bounded(x, y):
    a, b = uiqi(x[0], y[0]), uiqi(y[0], x[0])
    assert a == pytest.approx(b, abs=1e-12)
    assert -1 - 1e-12 <= a <= 1 + 1e-12


@given(images, images)
def test_q2n_bounded(x, y):
    assert 0 <= q2n(x, y) <= 1 + 1e-12


@given(images, images)
def test_q2n_single_band_is_uiqi(x, y):
    assert q2n(x[:1], y[:1]) == pytest.approx(uiqi(y[0], x[0]), abs=1e-12)


def test_q2n_single_band_keeps_sign(rng):
    x = rng.uniform(1, 2, (1, 8, 8))
    assert q2n(2 * x.mean() - x, x, 8) < 0


def test_hypercomplex_product_matches_quaternions(rng):
    a, b = rng.normal(size=(4, 7)), rng.normal(size=(4, 7))
    np.testing.assert_allclose(hc_mul(a, b), hamilton(a, b), atol=1e-14)


def test_octonion_norm_is_multiplicative(rng):
    a, b = rng.normal(size=(8, 5)), rng.normal(size=(8, 5))
    np.testing.assert_allclose(np.linalg.norm(hc_mul(a, b), axis=0),
                               np.linalg.norm(a, axis=0) * np.linalg.norm(b, axis=0))
    np.testing.assert_allclose(hc_mul(a, hc_conj(a))[0], (a ** 2).sum(axis=0))


def test_q4_matches_quaternion_oracle(rng):
    ref = rng.uniform(0, 10, (4, 8, 8))
    test = ref + rng.normal(0, 2, ref.shape)
    assert q2n(test, ref, 8) == pytest.approx(quaternion_q(ref, test), rel=1e-12)


def test_q2n_pads_three_bands(rng):
    ref = rng.uniform(0, 10, (3, 8, 8))
    test = ref + rng.normal(0, 1, ref.shape)
    padded = q2n(np.concatenate([test, np.zeros((1, 8, 8))]),
                 np.concatenate([ref, np.zeros((1, 8, 8))]), 8)
    assert q2n(test, ref, 8) == pytest.approx(padded, rel=1e-12)


def test_sam_right_angle_and_diagonal():
    ref = np.array([[[1.0, 1.0]], [[0.0, 0.0]]])
    test = np.array([[[0.0, 1.0]], [[1.0, 1.0]]])
    assert sam(test, ref) == pytest.approx((90 + 45) / 2)


def test_sam_skips_zero_pixels():
    ref = np.array([[[1.0, 0.0]], [[1.0, 0.0]]])
    test = np.array([[[2.0, 3.0]], [[2.0, 3.0]]])
    assert sam_with_count(test, ref) == (0.0, 1)
    with pytest.raises(ValueError):
        sam(np.zeros((2, 1, 1)), np.zeros((2, 1, 1)))


@given(images, st.floats(0.1, 10))
def test_sam_scale_invariant(x, k):
    y = np.flip(x, axis=2)
    assert sam(k * x, y) == pytest.approx(sam(x, y), abs=1e-6)


def test_ergas_hand_case():
    ref = np.stack([np.ones((2, 2)), np.full((2, 2), 2.0)])
    test = ref.copy()
    test[0, 0, 0] += 1.0   # rmse 0.5, mean 1
    test[1, 1, 1] += 2.0   # rmse 1.0, mean 2
    assert ergas(test, ref, 4) == pytest.approx(25 * 0.5)


def test_ergas_zero_mean_band():
    with pytest.raises(ValueError):
        ergas(np.ones((1, 2, 2)), np.zeros((1, 2, 2)), 4)


def test_d_rho_matches_brute_force(rng):
    profile = SensorProfile(dynamic_range=10.0)
    p0 = rng.uniform(0, 10, (1, 12, 12))
    m = rng.uniform(0, 10, (2, 12, 12))
    rho, valid = brute_field(p0, m, 4, 1e-9 * 100)
    want = np.where(valid, np.maximum(0, 1 - rho), 0).mean()
    assert d_rho(m, p0, profile) == pytest.approx(want, abs=1e-12)


def test_d_rho_zero_for_pan_copies(rng):
    p0 = rng.uniform(0, 2048, (1, 16, 16))
    assert d_rho(np.repeat(p0, 4, 0), p0, SensorProfile()) == 0.0


def test_d_s_zero_on_matched_scales(rng):
    profile = SensorProfile(ms_nyquist_gains=(0.15,) * 2, pan_nyquist_gain=0.15)
    p0 = rng.uniform(0, 2048, (1, 64, 64))
    m_hat = np.repeat(p0, 2, 0)
    m1 = degrade(m_hat, profile).value
    assert d_s(m_hat, m1, p0, profile) == 0.0
    assert d_s(m_hat[::-1, ::-1], m1, p0, profile) > 0.01


def test_d_lambda_small_for_consistent_output(small_scene, profile):
    m0, _, m1, _ = small_scene
    assert d_lambda_k(m0, m1, profile) < 0.01
    assert d_lambda_k(expand(m1, 4)[:, ::-1], m1, profile) > 0.05


def test_reprojection_of_truth(small_scene, profile):
    m0, _, m1, _ = small_scene
    r_sam, r_ergas, r_q = reprojection_indexes(m0, m1, profile)
    assert r_sam < 1e-6 and r_ergas < 1e-6 and r_q == pytest.approx(1.0)


def test_evaluate_report(small_scene, profile):
    m0, p0, m1, _ = small_scene
    report = evaluate(expand(m1, 4), m1, p0, profile, m0)
    assert isinstance(report, QualityReport)
    payload = json.loads(report.to_json(run="x"))
    assert payload["run"] == "x"
    assert set(payload["full_reference"]) == {"sam", "ergas", "q2n"}
    assert report.d_lambda_k == pytest.approx(1 - report.r_q2n)
    assert "full_reference" not in evaluate(m0, m1, p0, profile).to_dict()
