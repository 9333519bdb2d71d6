"""Seeded generator of regime-switching multichannel recordings.

A hidden Markov chain picks one regime per 30-second block. Each regime
contributes narrowband components (a sinusoid plus band-limited noise around
the same center frequency); white noise is added on top. Components sharing a
(center, bandwidth) pair across regimes are realized as one continuous
underlying oscillator whose amplitude follows the active regime's listing
(zero in regimes that omit it), so a component present everywhere behaves
like a slowly evolving background rhythm and regime-dependent amplitudes
modulate it without breaking its phase continuity.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .windows import Recording

logger = logging.getLogger(__name__)

BLOCK_S = 30.0

# Regime labels reuse hypnogram vocabulary so the downstream label mapping
# applies unchanged; generators with more than five regimes get unmappable
# labels for the surplus and those blocks stay unlabeled.
_STATE_LABELS = ["Sleep stage W", "Sleep stage 1", "Sleep stage 2", "Sleep stage 3",
                 "Sleep stage R"]


@dataclass
class SyntheticConfig:
    n_states: int
    transition: np.ndarray
    state_spectra: list[list[tuple[float, float, float]]]
    duration_s: float
    rate_hz: float
    channels: int
    noise_std: float
    seed: int

    def __post_init__(self) -> None:
        self.transition = np.asarray(self.transition, dtype=np.float64)
        if self.n_states < 2:
            raise ValueError(f"need at least 2 states, got {self.n_states}")
        if self.transition.shape != (self.n_states, self.n_states):
            raise ValueError(
                f"transition matrix shape {self.transition.shape} does not match "
                f"{self.n_states} states"
            )
        row_sums = self.transition.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-9) or np.any(self.transition < 0):
            raise ValueError("each transition row must be nonnegative and sum to 1")
        if len(self.state_spectra) != self.n_states:
            raise ValueError(
                f"{len(self.state_spectra)} spectra lists for {self.n_states} states"
            )
        for spectra in self.state_spectra:
            for center, bandwidth, amplitude in spectra:
                if amplitude < 0:
                    raise ValueError(f"negative amplitude {amplitude}")
                if bandwidth < 0:
                    raise ValueError(f"negative bandwidth {bandwidth}")
                if not 0 < center < self.rate_hz / 2:
                    raise ValueError(
                        f"center {center} Hz outside (0, {self.rate_hz / 2}) Hz"
                    )
        if self.duration_s < BLOCK_S:
            raise ValueError(f"duration {self.duration_s} s shorter than one {BLOCK_S} s block")
        if self.channels < 1:
            raise ValueError("need at least one channel")


def state_label(state: int) -> str:
    if state < len(_STATE_LABELS):
        return _STATE_LABELS[state]
    return f"state {state}"


def _markov_chain(cfg: SyntheticConfig, n_blocks: int, rng: np.random.Generator) -> np.ndarray:
    states = np.empty(n_blocks, dtype=np.int64)
    states[0] = rng.integers(cfg.n_states)
    cumulative = np.cumsum(cfg.transition, axis=1)
    draws = rng.random(n_blocks - 1)
    for i in range(1, n_blocks):
        states[i] = np.searchsorted(cumulative[states[i - 1]], draws[i - 1], side="right")
    return np.minimum(states, cfg.n_states - 1)


def _bandlimited_noise(
    n_samples: int, rate_hz: float, center: float, bandwidth: float, rng: np.random.Generator
) -> np.ndarray:
    """Unit-variance Gaussian noise confined to [center - bw/2, center + bw/2]."""
    white = rng.standard_normal(n_samples)
    if bandwidth <= 0:
        return np.zeros(n_samples)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / rate_hz)
    keep = (freqs >= center - bandwidth / 2) & (freqs <= center + bandwidth / 2)
    if not keep.any():
        return np.zeros(n_samples)
    spectrum[~keep] = 0.0
    shaped = np.fft.irfft(spectrum, n=n_samples)
    std = shaped.std()
    if std < 1e-12:
        return np.zeros(n_samples)
    return shaped / std


def generate_synthetic(cfg: SyntheticConfig) -> Recording:
    """Render one recording from the config, bit-reproducible for a given seed."""
    rng = np.random.default_rng(cfg.seed)
    rate = cfg.rate_hz
    n_samples = int(round(cfg.duration_s * rate))
    block_samples = int(round(BLOCK_S * rate))
    n_blocks = n_samples // block_samples
    n_samples = n_blocks * block_samples

    states = _markov_chain(cfg, n_blocks, rng)

    # One oscillator per distinct (center, bandwidth), first-seen order; each
    # state scales it by its listed amplitude (0 when the state omits it).
    components: list[tuple[float, float]] = []
    state_gains: dict[tuple[float, float], np.ndarray] = {}
    for s, spectra in enumerate(cfg.state_spectra):
        for center, bandwidth, amplitude in spectra:
            key = (float(center), float(bandwidth))
            if key not in state_gains:
                components.append(key)
                state_gains[key] = np.zeros(cfg.n_states)
            state_gains[key][s] = float(amplitude)

    t = np.arange(n_samples) / rate
    signals = np.zeros((cfg.channels, n_samples))
    for ch in range(cfg.channels):
        total = np.zeros(n_samples)
        for center, bandwidth in components:
            gain = np.repeat(state_gains[(center, bandwidth)][states], block_samples)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            wave = np.sin(2.0 * np.pi * center * t + phase)
            wave += _bandlimited_noise(n_samples, rate, center, bandwidth, rng)
            total += gain * wave
        total += cfg.noise_std * rng.standard_normal(n_samples)
        signals[ch] = total

    annotations = [
        (i * BLOCK_S, BLOCK_S, state_label(int(states[i]))) for i in range(n_blocks)
    ]
    logger.debug(
        "generated synthetic recording: %d blocks, %d channels, %.0f Hz",
        n_blocks, cfg.channels, rate,
    )
    return Recording(
        signals=signals,
        rate_hz=rate,
        channel_names=[f"CH{ch + 1}" for ch in range(cfg.channels)],
        subject_id=f"synth-{cfg.seed:04d}",
        annotations=annotations,
    )
