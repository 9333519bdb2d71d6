"""Classical per-channel signal features: moments, band powers, and complexity measures.

Each channel contributes 34 values in a fixed order: five moments, five band
log-powers, the twenty ordered log-power ratios, then peak-to-peak amplitude,
Hurst exponent, approximate entropy, and Hjorth complexity. Degenerate inputs
produce documented sentinels instead of NaN.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .windows import Window, WindowDataset

logger = logging.getLogger(__name__)

BAND_EDGES_HZ = (0.5, 4.0, 8.0, 13.0, 30.0, 49.0)
POWER_FLOOR = 1e-10
MIN_SAMPLES = 64
FEATURES_PER_CHANNEL = 34


@dataclass
class FeatureVector:
    values: np.ndarray
    names: list[str]


def band_log_power(signal: np.ndarray, lo_hz: float, hi_hz: float, rate_hz: float) -> float:
    """Natural log of untapered periodogram power summed over [lo_hz, hi_hz)."""
    if not 0 <= lo_hz < hi_hz <= rate_hz / 2:
        raise ValueError(
            f"band [{lo_hz}, {hi_hz}) Hz invalid at rate {rate_hz} Hz"
        )
    return _band_log_power_clipped(signal, lo_hz, hi_hz, rate_hz)


def _band_log_power_clipped(signal: np.ndarray, lo_hz: float, hi_hz: float,
                            rate_hz: float) -> float:
    """Like band_log_power but silently truncates the band at the Nyquist rate."""
    signal = np.asarray(signal, dtype=np.float64)
    n = len(signal)
    spectrum = np.fft.rfft(signal)
    freqs = np.fft.rfftfreq(n, d=1.0 / rate_hz)
    mask = (freqs >= lo_hz) & (freqs < hi_hz)
    power = float((np.abs(spectrum[mask]) ** 2).sum() / n)
    return float(np.log(power + POWER_FLOOR))


def hurst_exponent(signal: np.ndarray) -> float:
    """Rescaled-range slope over dyadic chunk sizes 16, 32, ..., T/2.

    Uncorrelated noise sits near 0.5, persistent processes approach 1.
    Signals too flat or too short to estimate return the 0.5 sentinel.
    """
    x = np.asarray(signal, dtype=np.float64)
    t = len(x)
    sizes = []
    n = 16
    while n <= t // 2:
        sizes.append(n)
        n *= 2
    if len(sizes) < 2:
        return 0.5

    log_n, log_rs = [], []
    for n in sizes:
        ratios = []
        for start in range(0, t - n + 1, n):
            chunk = x[start : start + n]
            std = chunk.std()
            if std < 1e-12:
                continue
            walk = np.cumsum(chunk - chunk.mean())
            ratios.append((walk.max() - walk.min()) / std)
        if ratios:
            log_n.append(np.log(n))
            log_rs.append(np.log(np.mean(ratios)))
    if len(log_n) < 2:
        return 0.5
    slope = np.polyfit(log_n, log_rs, 1)[0]
    return float(slope)


def approximate_entropy(signal: np.ndarray, m: int = 2, r: float | None = None) -> float:
    """ApEn(m, r) with Chebyshev distance and self-matches included.

    r defaults to 0.2 times the signal's standard deviation, which makes the
    statistic invariant to affine rescaling. A constant signal returns 0.
    """
    x = np.asarray(signal, dtype=np.float64)
    t = len(x)
    if t < m + 2:
        raise ValueError(f"need at least {m + 2} samples, got {t}")
    if r is None:
        r = 0.2 * float(x.std())

    def phi(order: int) -> float:
        n_vec = t - order + 1
        counts = np.zeros(n_vec)
        chunk = 512
        for start in range(0, n_vec, chunk):
            stop = min(start + chunk, n_vec)
            dist = np.zeros((stop - start, n_vec))
            for k in range(order):
                col = x[k : k + n_vec]
                np.maximum(dist, np.abs(col[start:stop, None] - col[None, :]), out=dist)
            counts[start:stop] = (dist <= r).mean(axis=1)
        return float(np.log(counts).mean())

    return phi(m) - phi(m + 1)


def hjorth_complexity(signal: np.ndarray) -> float:
    """Mobility of the first difference over the signal's own mobility.

    A sampled pure sinusoid gives 1; broadband noise exceeds 1. Degenerate
    variances return the sentinel 1.
    """
    x = np.asarray(signal, dtype=np.float64)
    if len(x) < 3:
        raise ValueError("need at least 3 samples")
    dx = np.diff(x)
    ddx = np.diff(dx)
    var_x, var_dx, var_ddx = x.var(), dx.var(), ddx.var()
    if var_x < 1e-24 or var_dx < 1e-24:
        return 1.0
    mobility_x = np.sqrt(var_dx / var_x)
    mobility_dx = np.sqrt(var_ddx / var_dx)
    return float(mobility_dx / mobility_x)


def _moments(x: np.ndarray) -> tuple[float, float, float, float, float]:
    mean = float(x.mean())
    var = float(x.var())
    std = float(np.sqrt(var))
    if std < 1e-12:
        skew, kurt = 0.0, 0.0
    else:
        centered = x - mean
        skew = float((centered**3).mean() / std**3)
        kurt = float((centered**4).mean() / std**4 - 3.0)
    return mean, var, skew, kurt, std


def channel_feature_names() -> list[str]:
    names = ["mean", "variance", "skewness", "kurtosis", "std"]
    bands = list(zip(BAND_EDGES_HZ[:-1], BAND_EDGES_HZ[1:]))
    names += [f"logpow_{lo:g}_{hi:g}" for lo, hi in bands]
    for i, (lo_i, hi_i) in enumerate(bands):
        for j, (lo_j, hi_j) in enumerate(bands):
            if i != j:
                names.append(f"ratio_{lo_i:g}_{hi_i:g}_over_{lo_j:g}_{hi_j:g}")
    names += ["peak_to_peak", "hurst", "approx_entropy", "hjorth_complexity"]
    assert len(names) == FEATURES_PER_CHANNEL
    return names


def compute_feature_vector(window: Window, rate_hz: float) -> FeatureVector:
    """All 34 features for every channel of one window, channels concatenated."""
    if window.n_samples < MIN_SAMPLES:
        raise ValueError(
            f"window of {window.n_samples} samples too short; need >= {MIN_SAMPLES}"
        )
    base_names = channel_feature_names()
    values: list[float] = []
    names: list[str] = []
    bands = list(zip(BAND_EDGES_HZ[:-1], BAND_EDGES_HZ[1:]))
    for c in range(window.n_channels):
        x = window.data[:, c].astype(np.float64)
        feats = list(_moments(x))
        log_powers = [_band_log_power_clipped(x, lo, hi, rate_hz) for lo, hi in bands]
        feats += log_powers
        for i in range(len(bands)):
            for j in range(len(bands)):
                if i != j:
                    # Ordered power ratios, computed as log differences.
                    feats.append(log_powers[i] - log_powers[j])
        feats.append(float(x.max() - x.min()))
        feats.append(hurst_exponent(x))
        feats.append(approximate_entropy(x))
        feats.append(hjorth_complexity(x))
        values.extend(feats)
        names.extend(f"ch{c}:{name}" for name in base_names)
    return FeatureVector(values=np.array(values), names=names)


def feature_matrix(ds: WindowDataset) -> tuple[np.ndarray, list[str]]:
    """Stack feature vectors for a whole dataset into an (N, 34*C) matrix."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    first = compute_feature_vector(ds.windows[0], ds.rate_hz)
    out = np.empty((len(ds), len(first.values)))
    out[0] = first.values
    for i in range(1, len(ds)):
        out[i] = compute_feature_vector(ds.windows[i], ds.rate_hz).values
    return out, first.names


def write_feature_csv(matrix: np.ndarray, names: list[str], path) -> None:
    header = ",".join(names)
    np.savetxt(path, matrix, delimiter=",", header=header, comments="", fmt="%.9g")
