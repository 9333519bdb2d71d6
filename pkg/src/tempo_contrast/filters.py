"""Windowed-sinc lowpass design, zero-phase filtering, and integer decimation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .windows import Recording

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FirFilter:
    """Linear-phase lowpass taps with unit DC gain."""

    coefficients: np.ndarray
    cutoff_hz: float
    design_order: int

    @property
    def group_delay_samples(self) -> int:
        return (len(self.coefficients) - 1) // 2


def design_lowpass_fir(cutoff_hz: float, order: int, rate_hz: float) -> FirFilter:
    """Design a Hamming-windowed sinc lowpass.

    The tap count is order + 1, bumped to the next odd number so the filter
    has an integral group delay. Coefficients are normalized to unit DC gain.
    """
    if not 0 < cutoff_hz < rate_hz / 2:
        raise ValueError(
            f"cutoff {cutoff_hz} Hz must lie strictly inside (0, {rate_hz / 2}) at {rate_hz} Hz"
        )
    if order < 2:
        raise ValueError(f"order must be >= 2, got {order}")

    n_taps = order + 1
    if n_taps % 2 == 0:
        n_taps += 1
    mid = (n_taps - 1) // 2
    n = np.arange(n_taps) - mid
    fc = cutoff_hz / rate_hz
    # sinc(2 fc n) * 2 fc, with numpy's normalized sinc handling n = 0.
    taps = 2.0 * fc * np.sinc(2.0 * fc * n)
    window = np.hamming(n_taps)
    taps = taps * window
    taps /= taps.sum()
    return FirFilter(coefficients=taps, cutoff_hz=cutoff_hz, design_order=order)


def frequency_response(filt: FirFilter, freqs_hz: np.ndarray, rate_hz: float) -> np.ndarray:
    """Complex response of the taps evaluated at the given frequencies."""
    n = np.arange(len(filt.coefficients))
    omega = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / rate_hz
    return np.exp(-1j * np.outer(omega, n)) @ filt.coefficients


def apply_zero_phase(filt: FirFilter, signal: np.ndarray) -> np.ndarray:
    """Filter one channel without phase shift.

    A single forward convolution is run and the symmetric filter's group
    delay is cropped off, which keeps the FIR magnitude response exact. The
    output has the input's length; the first and last half-filter-length
    samples see the implicit zero padding.
    """
    full = np.convolve(signal, filt.coefficients, mode="full")
    delay = filt.group_delay_samples
    return full[delay : delay + len(signal)]


def preprocess(
    rec: Recording,
    cutoff_hz: float,
    target_rate_hz: float,
    keep_channels: list[str],
    filter_order: int = 128,
) -> Recording:
    """Lowpass, decimate to the target rate, and select channels.

    The decimation ratio must be a whole number; the lowpass runs at the
    original rate before samples are dropped. Channel order in the output
    follows keep_channels.
    """
    for name in keep_channels:
        if name not in rec.channel_names:
            raise ValueError(
                f"unknown channel {name!r}; recording has {rec.channel_names}"
            )
    ratio = rec.rate_hz / target_rate_hz
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ValueError(
            f"cannot decimate {rec.rate_hz} Hz to {target_rate_hz} Hz: ratio {ratio} is not "
            "a positive integer"
        )

    filt = design_lowpass_fir(cutoff_hz, filter_order, rec.rate_hz)
    rows = [rec.channel_names.index(name) for name in keep_channels]
    out = np.empty((len(rows), int(np.ceil(rec.n_samples / factor))))
    for j, row in enumerate(rows):
        filtered = apply_zero_phase(filt, rec.signals[row])
        out[j] = filtered[::factor]

    annotations = list(rec.annotations) if rec.annotations is not None else None
    logger.debug(
        "preprocessed %s: %d -> %d Hz, channels %s", rec.subject_id, rec.rate_hz,
        target_rate_hz, keep_channels,
    )
    return Recording(
        signals=out,
        rate_hz=target_rate_hz,
        channel_names=list(keep_channels),
        subject_id=rec.subject_id,
        age_years=rec.age_years,
        annotations=annotations,
    )
