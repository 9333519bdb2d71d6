"""Binary window cache so ingestion runs once per dataset.

Layout: magic "TCWD", u32 version, u32 window count, u32 samples, u32 channels,
f64 rate, the window data as 32-bit little-endian floats (window-major,
samples x channels), then a length-prefixed JSON block with per-window and
per-recording metadata.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path

import numpy as np

from .windows import SleepStage, Window, WindowDataset

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"TCWD"
CACHE_VERSION = 1


class CacheError(ValueError):
    """Unreadable or incompatible window cache."""


def save_cache(ds: WindowDataset, path: str | Path) -> None:
    n = len(ds)
    t = ds.window_samples
    c = len(ds.channel_names) if ds.channel_names else (ds.windows[0].n_channels if n else 0)
    data = np.empty((n, t, c), dtype="<f4")
    meta_windows = []
    for i, w in enumerate(ds.windows):
        data[i] = w.data
        meta_windows.append(
            {
                "start_sample": w.start_sample,
                "recording": w.recording_ref,
                "stage": w.stage.value if w.stage is not None else None,
                "degenerate": w.degenerate,
            }
        )
    meta = {
        "channel_names": ds.channel_names,
        "subject_ages": ds.subject_ages,
        "windows": meta_windows,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IIII", CACHE_VERSION, n, t, c))
        fh.write(struct.pack("<d", ds.rate_hz))
        fh.write(data.tobytes())
        fh.write(struct.pack("<Q", len(meta_bytes)))
        fh.write(meta_bytes)
    logger.info("cached %d windows (%d x %d) to %s", n, t, c, path)


def load_cache(path: str | Path) -> WindowDataset:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != CACHE_MAGIC:
        raise CacheError(f"{path}: bad magic {raw[:4]!r}, expected {CACHE_MAGIC!r}")
    version, n, t, c = struct.unpack_from("<IIII", raw, 4)
    if version != CACHE_VERSION:
        raise CacheError(f"{path}: cache version {version} unsupported")
    (rate,) = struct.unpack_from("<d", raw, 20)
    data_start = 28
    data_bytes = n * t * c * 4
    if len(raw) < data_start + data_bytes + 8:
        raise CacheError(f"{path}: truncated cache; expected {data_start + data_bytes + 8} bytes")
    data = np.frombuffer(raw, dtype="<f4", count=n * t * c, offset=data_start)
    data = data.reshape(n, t, c).astype(np.float64)
    (meta_len,) = struct.unpack_from("<Q", raw, data_start + data_bytes)
    meta_raw = raw[data_start + data_bytes + 8 : data_start + data_bytes + 8 + meta_len]
    if len(meta_raw) != meta_len:
        raise CacheError(f"{path}: truncated metadata block")
    meta = json.loads(meta_raw.decode("utf-8"))

    windows = []
    for i, wm in enumerate(meta["windows"]):
        stage = SleepStage(wm["stage"]) if wm["stage"] is not None else None
        windows.append(
            Window(
                data=data[i],
                start_sample=int(wm["start_sample"]),
                recording_ref=wm["recording"],
                stage=stage,
                degenerate=bool(wm["degenerate"]),
            )
        )
    return WindowDataset(
        windows=windows,
        window_samples=t,
        rate_hz=rate,
        channel_names=list(meta["channel_names"]),
        subject_ages={k: v for k, v in meta["subject_ages"].items()},
    )
