"""Core signal containers: recordings, fixed-length windows, and stage labels."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

# Channel flatter than this (in std) is treated as flat and zeroed out.
DEGENERATE_STD = 1e-8


class SleepStage(enum.Enum):
    """The five canonical sleep stages."""

    W = "W"
    N1 = "N1"
    N2 = "N2"
    N3 = "N3"
    R = "R"


# Canonical ordering used everywhere a stable class order is needed.
STAGE_ORDER = (SleepStage.W, SleepStage.N1, SleepStage.N2, SleepStage.N3, SleepStage.R)

# Raw hypnogram label -> stage, for the two common scoring schemes. Under the
# older scheme, stages 3 and 4 collapse into N3. Canonical names map to
# themselves so the function is idempotent on its own outputs. Anything absent
# here (movement, unscored, ...) yields no label.
_AASM_MAP = {s.value: s for s in SleepStage}
_RK_MAP = {
    "W": SleepStage.W,
    "1": SleepStage.N1,
    "2": SleepStage.N2,
    "3": SleepStage.N3,
    "4": SleepStage.N3,
    "R": SleepStage.R,
    **_AASM_MAP,
}


def map_stages(raw_label: str, scheme: str = "RK") -> SleepStage | None:
    """Map a raw hypnogram label string to a canonical stage.

    Labels like ``"Sleep stage 4"`` have their prefix stripped before lookup.
    Unknown labels (movement time, artifacts, ...) return None.
    """
    token = raw_label.strip()
    if token.lower().startswith("sleep stage"):
        token = token[len("sleep stage"):].strip()
    if scheme == "RK":
        return _RK_MAP.get(token)
    if scheme == "AASM":
        return _AASM_MAP.get(token)
    raise ValueError(f"unknown stage scheme {scheme!r}; expected 'RK' or 'AASM'")


@dataclass
class Recording:
    """A multichannel signal in physical units with optional stage annotations.

    signals has shape (channels, samples). Annotations are
    (start_s, duration_s, raw_label) tuples on the recording's own time axis.
    """

    signals: np.ndarray
    rate_hz: float
    channel_names: list[str]
    subject_id: str
    age_years: float | None = None
    annotations: list[tuple[float, float, str]] | None = None

    def __post_init__(self) -> None:
        self.signals = np.asarray(self.signals, dtype=np.float64)
        if self.signals.ndim != 2:
            raise ValueError(f"signals must be 2-D (channels, samples), got {self.signals.shape}")
        if self.signals.shape[0] != len(self.channel_names):
            raise ValueError(
                f"{self.signals.shape[0]} signal rows but {len(self.channel_names)} channel names"
            )
        if self.rate_hz <= 0:
            raise ValueError(f"rate_hz must be positive, got {self.rate_hz}")
        if self.signals.shape[1] < 1:
            raise ValueError("recording must contain at least one sample")

    @property
    def n_channels(self) -> int:
        return self.signals.shape[0]

    @property
    def n_samples(self) -> int:
        return self.signals.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.rate_hz


@dataclass
class Window:
    """A normalized (samples, channels) slice of one recording."""

    data: np.ndarray
    start_sample: int
    recording_ref: str
    stage: SleepStage | None = None
    degenerate: bool = False

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]


@dataclass
class WindowDataset:
    """Ordered windows cut from one or more recordings on a fixed grid."""

    windows: list[Window]
    window_samples: int
    rate_hz: float
    channel_names: list[str] = field(default_factory=list)
    subject_ages: dict[str, float | None] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.windows)

    def start_times_s(self) -> np.ndarray:
        """Window start times in seconds, index-aligned with .windows."""
        return np.array([w.start_sample for w in self.windows], dtype=np.float64) / self.rate_hz

    def recording_refs(self) -> list[str]:
        return [w.recording_ref for w in self.windows]

    def indices_by_recording(self) -> dict[str, np.ndarray]:
        """Window indices grouped per recording, in dataset order."""
        groups: dict[str, list[int]] = {}
        for i, w in enumerate(self.windows):
            groups.setdefault(w.recording_ref, []).append(i)
        return {ref: np.array(idx, dtype=np.int64) for ref, idx in groups.items()}

    def stages(self) -> list[SleepStage | None]:
        return [w.stage for w in self.windows]

    def stack(self, indices: np.ndarray | list[int] | None = None) -> np.ndarray:
        """Window tensors stacked as (n, channels, samples) float32."""
        ws = self.windows if indices is None else [self.windows[i] for i in indices]
        out = np.empty((len(ws), ws[0].n_channels, ws[0].n_samples), dtype=np.float32)
        for i, w in enumerate(ws):
            out[i] = w.data.T
        return out

    def subset(self, recording_refs: set[str] | list[str]) -> "WindowDataset":
        """New dataset restricted to the given recordings."""
        keep = set(recording_refs)
        return WindowDataset(
            windows=[w for w in self.windows if w.recording_ref in keep],
            window_samples=self.window_samples,
            rate_hz=self.rate_hz,
            channel_names=list(self.channel_names),
            subject_ages={k: v for k, v in self.subject_ages.items() if k in keep},
        )


def normalize_window(data: np.ndarray) -> tuple[np.ndarray, bool]:
    """Standardize each channel to mean 0 / std 1; flat channels become zeros.

    Returns the normalized (samples, channels) array and a flag marking
    whether any channel was degenerate.
    """
    out = np.array(data, dtype=np.float64)
    degenerate = False
    for c in range(out.shape[1]):
        col = out[:, c]
        std = col.std()
        if std < DEGENERATE_STD:
            out[:, c] = 0.0
            degenerate = True
        else:
            out[:, c] = (col - col.mean()) / std
    return out, degenerate


def _stage_for_interval(
    annotations: list[tuple[float, float, str]] | None,
    start_s: float,
    end_s: float,
    scheme: str,
) -> SleepStage | None:
    """Stage whose annotation interval fully contains [start_s, end_s)."""
    if not annotations:
        return None
    for a_start, a_dur, raw in annotations:
        if a_start <= start_s and end_s <= a_start + a_dur:
            return map_stages(raw, scheme)
    return None


def extract_windows(rec: Recording, window_s: float, scheme: str = "RK") -> WindowDataset:
    """Cut a recording into non-overlapping normalized windows.

    The window length in samples must come out integral. Trailing samples
    that do not fill a whole window are discarded. A window picks up a stage
    label only when it lies entirely inside a single annotated interval.
    """
    t_float = window_s * rec.rate_hz
    t = int(round(t_float))
    if t < 1 or abs(t_float - t) > 1e-6:
        raise ValueError(
            f"window of {window_s} s at {rec.rate_hz} Hz is {t_float} samples; need a positive integer"
        )
    if t > rec.n_samples:
        raise ValueError(f"window of {t} samples longer than recording of {rec.n_samples}")

    n_windows = rec.n_samples // t
    windows: list[Window] = []
    for i in range(n_windows):
        start = i * t
        raw = rec.signals[:, start : start + t].T
        data, degenerate = normalize_window(raw)
        stage = _stage_for_interval(
            rec.annotations, start / rec.rate_hz, (start + t) / rec.rate_hz, scheme
        )
        windows.append(
            Window(
                data=data,
                start_sample=start,
                recording_ref=rec.subject_id,
                stage=stage,
                degenerate=degenerate,
            )
        )
    logger.debug("extracted %d windows of %d samples from %s", n_windows, t, rec.subject_id)
    return WindowDataset(
        windows=windows,
        window_samples=t,
        rate_hz=rec.rate_hz,
        channel_names=list(rec.channel_names),
        subject_ages={rec.subject_id: rec.age_years},
    )


def merge_datasets(datasets: list[WindowDataset]) -> WindowDataset:
    """Concatenate per-recording datasets that share a window grid."""
    if not datasets:
        raise ValueError("nothing to merge")
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.window_samples != first.window_samples or ds.rate_hz != first.rate_hz:
            raise ValueError("datasets disagree on window length or rate")
    ages: dict[str, float | None] = {}
    windows: list[Window] = []
    for ds in datasets:
        windows.extend(ds.windows)
        ages.update(ds.subject_ages)
    return WindowDataset(
        windows=windows,
        window_samples=first.window_samples,
        rate_hz=first.rate_hz,
        channel_names=list(first.channel_names),
        subject_ages=ages,
    )
