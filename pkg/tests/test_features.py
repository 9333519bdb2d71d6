"""Feature bank: counts, spectral placement, and the complexity estimators."""

import numpy as np
import pytest

from tempo_contrast.features import (
    BAND_EDGES_HZ,
    POWER_FLOOR,
    approximate_entropy,
    band_log_power,
    channel_feature_names,
    compute_feature_vector,
    feature_matrix,
    hjorth_complexity,
    hurst_exponent,
    write_feature_csv,
)
from tempo_contrast.windows import Window, WindowDataset


def window_of(array_2d):
    return Window(data=np.asarray(array_2d, dtype=np.float64), start_sample=0,
                  recording_ref="r")


def sine(freq, rate, n, amp=1.0, phase=0.0):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / rate + phase)


class TestVectorLayout:
    @pytest.mark.parametrize("channels", [1, 2, 3])
    def test_length_is_34_per_channel(self, channels):
        rng = np.random.default_rng(channels)
        vec = compute_feature_vector(window_of(rng.standard_normal((512, channels))),
                                     rate_hz=100.0)
        assert len(vec.values) == 34 * channels
        assert len(vec.names) == 34 * channels
        assert len(set(vec.names)) == 34 * channels

    def test_channel_order_matches_window(self):
        data = np.zeros((256, 2))
        data[:, 0] = sine(5.0, 100.0, 256)
        data[:, 1] = sine(5.0, 100.0, 256, amp=3.0)
        vec = compute_feature_vector(window_of(data), rate_hz=100.0)
        names = channel_feature_names()
        var_idx = names.index("variance")
        assert vec.values[34 + var_idx] > vec.values[var_idx]

    def test_ratio_features_are_log_differences(self):
        rng = np.random.default_rng(0)
        vec = compute_feature_vector(window_of(rng.standard_normal((1024, 1))), 100.0)
        names = channel_feature_names()
        powers = {name: vec.values[names.index(name)] for name in names
                  if name.startswith("logpow")}
        bands = list(zip(BAND_EDGES_HZ[:-1], BAND_EDGES_HZ[1:]))
        for i, (lo_i, hi_i) in enumerate(bands):
            for j, (lo_j, hi_j) in enumerate(bands):
                if i == j:
                    continue
                ratio = vec.values[names.index(
                    f"ratio_{lo_i:g}_{hi_i:g}_over_{lo_j:g}_{hi_j:g}")]
                expected = (powers[f"logpow_{lo_i:g}_{hi_i:g}"]
                            - powers[f"logpow_{lo_j:g}_{hi_j:g}"])
                assert ratio == pytest.approx(expected, abs=1e-12)

    def test_normalized_window_moments(self):
        rng = np.random.default_rng(1)
        raw = rng.standard_normal(3000)
        data = ((raw - raw.mean()) / raw.std()).reshape(-1, 1)
        vec = compute_feature_vector(window_of(data), 100.0)
        names = channel_feature_names()
        assert vec.values[names.index("mean")] == pytest.approx(0.0, abs=1e-10)
        assert vec.values[names.index("variance")] == pytest.approx(1.0, abs=1e-10)
        assert vec.values[names.index("std")] == pytest.approx(1.0, abs=1e-10)

    def test_gaussian_moments(self):
        rng = np.random.default_rng(2)
        data = rng.standard_normal((3000, 1))
        vec = compute_feature_vector(window_of(data), 100.0)
        names = channel_feature_names()
        assert abs(vec.values[names.index("skewness")]) < 0.1
        assert abs(vec.values[names.index("kurtosis")]) < 0.2

    def test_too_short_window_rejected(self):
        with pytest.raises(ValueError, match="too short"):
            compute_feature_vector(window_of(np.zeros((32, 1))), 100.0)

    def test_fuzz_corpus_all_finite(self):
        rng = np.random.default_rng(3)
        for trial in range(300):
            kind = trial % 4
            if kind == 0:
                data = rng.standard_normal((64, 2))
            elif kind == 1:
                data = np.zeros((64, 2))
            elif kind == 2:
                data = np.full((64, 2), rng.uniform(-5, 5))
            else:
                data = np.zeros((64, 2))
                data[rng.integers(64), rng.integers(2)] = 100.0
            vec = compute_feature_vector(window_of(data), rate_hz=128.0)
            assert np.all(np.isfinite(vec.values)), f"trial {trial} kind {kind}"


class TestBandLogPower:
    def test_sine_lands_in_alpha_band(self):
        x = sine(10.0, 100.0, 3000)
        powers = [band_log_power(x, lo, hi, 100.0)
                  for lo, hi in zip(BAND_EDGES_HZ[:-1], BAND_EDGES_HZ[1:])]
        assert int(np.argmax(powers)) == 2  # the 8-13 Hz band

    def test_zero_signal_hits_floor(self):
        for lo, hi in zip(BAND_EDGES_HZ[:-1], BAND_EDGES_HZ[1:]):
            assert band_log_power(np.zeros(1000), lo, hi, 100.0) == pytest.approx(
                np.log(POWER_FLOOR))

    def test_white_noise_power_scales_with_bandwidth(self):
        rng = np.random.default_rng(4)
        wide = narrow = 0.0
        for _ in range(50):
            x = rng.standard_normal(3000)
            wide += band_log_power(x, 30.0, 49.0, 100.0)
            narrow += band_log_power(x, 0.5, 4.0, 100.0)
        assert wide > narrow

    def test_invalid_band(self):
        with pytest.raises(ValueError):
            band_log_power(np.zeros(100), 30.0, 60.0, 100.0)
        with pytest.raises(ValueError):
            band_log_power(np.zeros(100), 10.0, 5.0, 100.0)


class TestHurst:
    def test_white_noise_near_half(self):
        rng = np.random.default_rng(5)
        values = [hurst_exponent(rng.standard_normal(3000)) for _ in range(20)]
        assert 0.4 <= np.mean(values) <= 0.6

    def test_random_walk_is_persistent(self):
        rng = np.random.default_rng(6)
        values = [hurst_exponent(np.cumsum(rng.standard_normal(3000)))
                  for _ in range(10)]
        assert np.mean(values) > 0.85

    def test_constant_sentinel(self):
        assert hurst_exponent(np.ones(3000)) == 0.5

    def test_short_signal_sentinel(self):
        assert hurst_exponent(np.arange(40.0)) == 0.5


class TestApproximateEntropy:
    def test_constant_is_zero(self):
        assert approximate_entropy(np.ones(500)) == pytest.approx(0.0, abs=1e-12)

    def test_sine_more_regular_than_noise(self):
        rng = np.random.default_rng(7)
        x_sine = sine(5.0, 100.0, 1000)
        x_noise = rng.standard_normal(1000) * x_sine.std()
        assert approximate_entropy(x_sine) < approximate_entropy(x_noise)

    def test_affine_invariance_with_relative_tolerance(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal(600)
        a = approximate_entropy(x)
        b = approximate_entropy(5.0 * x + 3.0)
        assert a == pytest.approx(b, abs=1e-9)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            approximate_entropy(np.zeros(3), m=2)


class TestHjorthComplexity:
    def test_pure_sine_is_one(self):
        assert hjorth_complexity(sine(5.0, 100.0, 3000)) == pytest.approx(1.0, abs=0.02)

    def test_noise_exceeds_one(self):
        rng = np.random.default_rng(9)
        values = [hjorth_complexity(rng.standard_normal(2000)) for _ in range(20)]
        assert all(v > 1.0 for v in values)

    def test_constant_sentinel(self):
        assert hjorth_complexity(np.zeros(100)) == 1.0


class TestFeatureMatrix:
    def test_matrix_and_csv(self, tmp_path):
        rng = np.random.default_rng(10)
        windows = [window_of(rng.standard_normal((128, 2))) for _ in range(5)]
        ds = WindowDataset(windows=windows, window_samples=128, rate_hz=64.0,
                           channel_names=["A", "B"])
        matrix, names = feature_matrix(ds)
        assert matrix.shape == (5, 68)
        path = tmp_path / "features.csv"
        write_feature_csv(matrix, names, path)
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == names
        assert len(lines) == 6
        parsed = np.loadtxt(path, delimiter=",", skiprows=1)
        np.testing.assert_allclose(parsed, matrix, rtol=1e-8)
