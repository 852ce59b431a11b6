import numpy as np
import pytest
from hypothesis import given, strategies as st

from frpan.resample import BandShifts, SensorProfile, degrade, lowpass_pan, shift_decimate, translate
from frpan.synth import PanWeights, SceneSpec, gen_scene, inject_shift, simulate_pair


def test_scene_is_deterministic_and_in_range():
    spec = SceneSpec(seed=9, size=(64, 48))
    a, b = gen_scene(spec), gen_scene(spec)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (4, 64, 48)
    assert a.min() == 0.0 and a.max() == pytest.approx(0.9 * 2048)
    assert not np.array_equal(a, gen_scene(SceneSpec(seed=10, size=(64, 48))))


@given(st.integers(0, 10 ** 6))
def test_interband_correlation_in_range(seed):
    m0 = gen_scene(SceneSpec(seed=seed, size=(64, 64)))
    c = np.corrcoef(m0.reshape(4, -1))[np.triu_indices(4, 1)]
    assert c.min() >= 0.55 - 1e-9 and c.max() <= 0.93 + 1e-9


def test_other_band_counts():
    assert gen_scene(SceneSpec(size=(32, 32), bands=1)).shape == (1, 32, 32)
    assert gen_scene(SceneSpec(size=(32, 32), bands=8)).shape == (8, 32, 32)


def test_scene_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec(bands=0)
    with pytest.raises(ValueError):
        SceneSpec(mix={"clouds": 1.0})
    with pytest.raises(ValueError):
        SceneSpec(mix={"smooth": -1.0})


def test_pan_weights_validation():
    assert PanWeights.uniform(4).weights.sum() == pytest.approx(1)
    with pytest.raises(ValueError):
        PanWeights([0.5, 0.6])
    with pytest.raises(ValueError):
        PanWeights([1.0], boost=-1)


def test_pair_without_boost_is_mixture_and_degradation(small_scene, profile):
    m0, p0, m1, shifts = small_scene
    np.testing.assert_allclose(p0[0], m0.mean(axis=0), rtol=1e-12)
    np.testing.assert_array_equal(m1, degrade(m0, profile).value)
    assert shifts.shifts == [(0, 0)] * 4


def test_boost_adds_detail(small_scene, profile):
    m0, p0, _, _ = small_scene
    boosted = simulate_pair(m0, profile, PanWeights.uniform(4, 0.5)).p0

    def detail(p):
        return np.abs(p - lowpass_pan(p, 0.15, 41, 4)).mean()

    assert detail(boosted) > 1.3 * detail(p0)


def test_misaligned_pair_uses_shifted_sampling(small_scene, profile):
    m0 = small_scene[0]
    misalign = [(1, 0), (0, -2), (3, 3), (0, 0)]
    pair = simulate_pair(m0, profile, misalign=misalign)
    np.testing.assert_array_equal(pair.m1, shift_decimate(m0, BandShifts(misalign), profile).value)
    with pytest.raises(ValueError):
        simulate_pair(m0, profile, misalign=[(4, 0)] * 4)
    with pytest.raises(ValueError):
        simulate_pair(m0, profile, misalign=[(0, 0)] * 3)


def test_inject_shift_moves_one_band(small_scene):
    m1 = small_scene[2]
    out = inject_shift(m1, 2, 1, -1)
    np.testing.assert_array_equal(out[2], translate(m1[2], 1, -1))
    np.testing.assert_array_equal(np.delete(out, 2, 0), np.delete(m1, 2, 0))
    with pytest.raises(IndexError):
        inject_shift(m1, 4, 0, 0)


def test_other_ratio(rng):
    profile = SensorProfile(ratio=2, kernel_size=21)
    m0 = gen_scene(SceneSpec(size=(32, 32)))
    pair = simulate_pair(m0, profile)
    assert pair.m1.shape == (4, 16, 16)
