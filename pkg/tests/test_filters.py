"""Lowpass design, measured frequency response, and decimation behavior."""

import numpy as np
import pytest

from tempo_contrast.filters import (
    apply_zero_phase,
    design_lowpass_fir,
    frequency_response,
    preprocess,
)
from tempo_contrast.windows import Recording


def sine_recording(freq_hz, rate_hz, duration_s=8.0, channels=1):
    t = np.arange(int(duration_s * rate_hz)) / rate_hz
    sig = np.tile(np.sin(2 * np.pi * freq_hz * t), (channels, 1))
    return Recording(sig, rate_hz, [f"CH{i}" for i in range(channels)], "s")


class TestDesign:
    def test_unit_dc_gain(self):
        for order in (2, 17, 64, 128):
            filt = design_lowpass_fir(30.0, order, 256.0)
            assert abs(filt.coefficients.sum() - 1.0) < 1e-9

    def test_symmetric_odd_length(self):
        for order in (2, 5, 64, 127, 128):
            filt = design_lowpass_fir(10.0, order, 100.0)
            taps = filt.coefficients
            assert len(taps) % 2 == 1
            assert len(taps) in (order + 1, order + 2)
            np.testing.assert_allclose(taps, taps[::-1], atol=1e-15)

    def test_cutoff_response_is_half(self):
        # -6 dB (amplitude 0.5) at the cutoff, measured on the actual taps
        filt = design_lowpass_fir(30.0, 128, 100.0)
        mag = np.abs(frequency_response(filt, np.array([30.0]), 100.0))[0]
        db = 20 * np.log10(mag)
        assert abs(db - (-6.02)) < 1.0

    def test_stopband_rejection(self):
        # at least 20 dB down at 1.5x cutoff for order >= 128
        for rate, cutoff in [(100.0, 30.0), (256.0, 30.0)]:
            filt = design_lowpass_fir(cutoff, 128, rate)
            mag = np.abs(frequency_response(filt, np.array([1.5 * cutoff]), rate))[0]
            assert 20 * np.log10(mag) < -20.0

    def test_invalid_cutoff(self):
        with pytest.raises(ValueError):
            design_lowpass_fir(50.0, 128, 100.0)
        with pytest.raises(ValueError):
            design_lowpass_fir(60.0, 128, 100.0)
        with pytest.raises(ValueError):
            design_lowpass_fir(10.0, 1, 100.0)


class TestZeroPhase:
    def test_no_phase_shift_on_passband_sine(self):
        rec = sine_recording(2.0, 100.0)
        filt = design_lowpass_fir(30.0, 128, 100.0)
        out = apply_zero_phase(filt, rec.signals[0])
        assert out.shape == rec.signals[0].shape
        core = slice(200, -200)  # away from edge effects
        np.testing.assert_allclose(out[core], rec.signals[0][core], atol=0.01)


class TestPreprocess:
    def test_decimation_halves_length(self):
        rec = sine_recording(5.0, 256.0)
        out = preprocess(rec, 30.0, 128.0, ["CH0"])
        assert out.rate_hz == 128.0
        assert out.n_samples == rec.n_samples // 2

    def test_stopband_sine_attenuated(self):
        rec = sine_recording(45.0, 256.0)
        out = preprocess(rec, 30.0, 128.0, ["CH0"])
        rms_in = np.sqrt((rec.signals[0] ** 2).mean())
        rms_out = np.sqrt((out.signals[0] ** 2).mean())
        assert rms_out < 0.10 * rms_in

    def test_passband_sine_preserved(self):
        rec = sine_recording(5.0, 256.0)
        out = preprocess(rec, 30.0, 128.0, ["CH0"])
        rms_in = np.sqrt((rec.signals[0] ** 2).mean())
        rms_out = np.sqrt((out.signals[0] ** 2).mean())
        assert abs(rms_out - rms_in) < 0.05 * rms_in

    def test_channel_selection_and_order(self):
        rec = Recording(
            np.vstack([np.zeros(512), np.ones(512), np.full(512, 2.0)]),
            256.0, ["A", "B", "C"], "s",
        )
        out = preprocess(rec, 30.0, 128.0, ["C", "A"])
        assert out.channel_names == ["C", "A"]
        core = slice(100, -100)
        np.testing.assert_allclose(out.signals[0][core], 2.0, atol=1e-6)
        np.testing.assert_allclose(out.signals[1][core], 0.0, atol=1e-6)

    def test_non_integer_ratio_rejected(self):
        rec = sine_recording(5.0, 100.0)
        with pytest.raises(ValueError, match="ratio"):
            preprocess(rec, 30.0, 40.0, ["CH0"])

    def test_unknown_channel_rejected(self):
        rec = sine_recording(5.0, 100.0)
        with pytest.raises(ValueError, match="unknown channel"):
            preprocess(rec, 30.0, 50.0, ["NOPE"])

    def test_annotations_carried_through(self):
        rec = sine_recording(5.0, 256.0)
        rec.annotations = [(0.0, 4.0, "Sleep stage W")]
        out = preprocess(rec, 30.0, 128.0, ["CH0"])
        assert out.annotations == [(0.0, 4.0, "Sleep stage W")]
