"""Reader and writer for classic continuous EDF files plus a plain-text hypnogram sidecar.

The on-disk layout is the standard one: a 256-byte ASCII header, 256 bytes of
header per signal, then data records of 16-bit little-endian two's-complement
samples. Discontinuous (EDF+D) files are rejected. Stage annotations live in a
sidecar text file with one ``start<TAB>duration<TAB>label`` line per interval.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np

from .windows import Recording

logger = logging.getLogger(__name__)

HEADER_BYTES = 256
SIGNAL_HEADER_BYTES = 256


class EdfParseError(ValueError):
    """Malformed EDF content; the message names the offending byte offset."""


def _ascii_field(raw: bytes, offset: int, length: int) -> str:
    return raw[offset : offset + length].decode("ascii", errors="replace").strip()


def _int_field(raw: bytes, offset: int, length: int, name: str) -> int:
    text = _ascii_field(raw, offset, length)
    try:
        return int(text)
    except ValueError:
        raise EdfParseError(
            f"non-numeric {name} field {text!r} at byte offset {offset}"
        ) from None


def _float_field(raw: bytes, offset: int, length: int, name: str) -> float:
    text = _ascii_field(raw, offset, length)
    try:
        return float(text)
    except ValueError:
        raise EdfParseError(
            f"non-numeric {name} field {text!r} at byte offset {offset}"
        ) from None


def parse_edf(data: bytes, subject_id: str | None = None) -> Recording:
    """Parse classic EDF bytes into a Recording in physical units.

    Digital samples map linearly onto the [physical_min, physical_max] range
    declared per signal. All signals must share one sampling rate; the format
    allows per-signal rates but this pipeline does not.
    """
    if len(data) < HEADER_BYTES:
        raise EdfParseError(
            f"file is {len(data)} bytes; a {HEADER_BYTES}-byte header is required (offset 0)"
        )

    reserved = _ascii_field(data, 192, 44)
    if "EDF+D" in reserved:
        raise EdfParseError("discontinuous (EDF+D) records are not supported (offset 192)")

    header_bytes = _int_field(data, 184, 8, "header-bytes")
    n_records = _int_field(data, 236, 8, "record-count")
    record_duration_s = _float_field(data, 244, 8, "record-duration")
    n_signals = _int_field(data, 252, 4, "signal-count")
    if n_signals < 1:
        raise EdfParseError(f"signal count {n_signals} at byte offset 252 must be >= 1")

    expected_header = HEADER_BYTES + n_signals * SIGNAL_HEADER_BYTES
    if header_bytes != expected_header:
        raise EdfParseError(
            f"header claims {header_bytes} header bytes at offset 184 but "
            f"{n_signals} signals require {expected_header}"
        )
    if len(data) < expected_header:
        raise EdfParseError(
            f"file truncated inside signal headers: {len(data)} bytes, need {expected_header}"
        )

    def signal_field(kind_offset: int, width: int, idx: int) -> tuple[int, bytes]:
        start = HEADER_BYTES + kind_offset * n_signals + width * idx
        return start, data[start : start + width]

    labels: list[str] = []
    physical_min = np.empty(n_signals)
    physical_max = np.empty(n_signals)
    digital_min = np.empty(n_signals, dtype=np.int64)
    digital_max = np.empty(n_signals, dtype=np.int64)
    samples_per_record = np.empty(n_signals, dtype=np.int64)

    # Per-signal headers are stored field-major: all labels, all transducers, ...
    field_offsets = {
        "label": 0,
        "transducer": 16 * n_signals,
        "dimension": (16 + 80) * n_signals,
        "physical_min": (16 + 80 + 8) * n_signals,
        "physical_max": (16 + 80 + 8 + 8) * n_signals,
        "digital_min": (16 + 80 + 8 + 8 + 8) * n_signals,
        "digital_max": (16 + 80 + 8 + 8 + 8 + 8) * n_signals,
        "prefiltering": (16 + 80 + 8 + 8 + 8 + 8 + 8) * n_signals,
        "samples_per_record": (16 + 80 + 8 + 8 + 8 + 8 + 8 + 80) * n_signals,
    }
    for i in range(n_signals):
        labels.append(_ascii_field(data, HEADER_BYTES + field_offsets["label"] + 16 * i, 16))
        physical_min[i] = _float_field(
            data, HEADER_BYTES + field_offsets["physical_min"] + 8 * i, 8, "physical-min"
        )
        physical_max[i] = _float_field(
            data, HEADER_BYTES + field_offsets["physical_max"] + 8 * i, 8, "physical-max"
        )
        digital_min[i] = _int_field(
            data, HEADER_BYTES + field_offsets["digital_min"] + 8 * i, 8, "digital-min"
        )
        digital_max[i] = _int_field(
            data, HEADER_BYTES + field_offsets["digital_max"] + 8 * i, 8, "digital-max"
        )
        samples_per_record[i] = _int_field(
            data, HEADER_BYTES + field_offsets["samples_per_record"] + 8 * i, 8, "samples-per-record"
        )
        if digital_max[i] <= digital_min[i]:
            off = HEADER_BYTES + field_offsets["digital_max"] + 8 * i
            raise EdfParseError(
                f"signal {i} digital range [{digital_min[i]}, {digital_max[i]}] is empty "
                f"(offset {off})"
            )

    if record_duration_s <= 0:
        raise EdfParseError(f"record duration {record_duration_s} at offset 244 must be positive")
    rates = samples_per_record / record_duration_s
    if not np.all(rates == rates[0]):
        raise EdfParseError(
            f"signals advertise mixed sampling rates {sorted(set(rates.tolist()))}; "
            "a single common rate is required"
        )

    record_samples = int(samples_per_record.sum())
    record_bytes = record_samples * 2
    body = data[expected_header:]
    needed = n_records * record_bytes
    if len(body) < needed:
        raise EdfParseError(
            f"data records truncated at byte offset {expected_header + len(body)}: "
            f"{n_records} records of {record_bytes} bytes need {needed} bytes, found {len(body)}"
        )

    digital = np.frombuffer(body[:needed], dtype="<i2").reshape(n_records, record_samples)
    gain = (physical_max - physical_min) / (digital_max - digital_min)

    signals = np.empty((n_signals, int(n_records * samples_per_record[0])))
    bounds = np.concatenate([[0], np.cumsum(samples_per_record)])
    for i in range(n_signals):
        chunk = digital[:, bounds[i] : bounds[i + 1]].reshape(-1).astype(np.float64)
        signals[i] = (chunk - digital_min[i]) * gain[i] + physical_min[i]

    patient = _ascii_field(data, 8, 80)
    if subject_id is not None:
        subject = subject_id
    else:
        subject = patient.split()[0] if patient.split() else "unknown"
    age = _age_from_patient_field(patient)
    logger.debug("parsed EDF: %d signals, %d records, %.1f Hz", n_signals, n_records, rates[0])
    return Recording(
        signals=signals,
        rate_hz=float(rates[0]),
        channel_names=labels,
        subject_id=subject,
        age_years=age,
    )


def _age_from_patient_field(patient: str) -> float | None:
    """Pull an ``age=NN`` token out of the free-form patient field, if present."""
    m = re.search(r"age[=_](\d+(?:\.\d+)?)", patient, flags=re.IGNORECASE)
    return float(m.group(1)) if m else None


def parse_edf_file(path: str | Path, subject_id: str | None = None) -> Recording:
    return parse_edf(Path(path).read_bytes(), subject_id=subject_id)


def _pad_ascii(text: str, width: int) -> bytes:
    encoded = text.encode("ascii", errors="replace")[:width]
    return encoded.ljust(width)


def _format_number(value: float, width: int) -> bytes:
    if value == int(value) and abs(value) < 10 ** (width - 1):
        text = str(int(value))
    else:
        text = f"{value:.{max(0, width - 3)}g}"
    if len(text) > width:
        raise ValueError(f"value {value} does not fit in {width} ASCII bytes")
    return _pad_ascii(text, width)


def write_edf(
    rec: Recording,
    path: str | Path,
    record_duration_s: float = 1.0,
    physical_range: tuple[float, float] | None = None,
    digital_range: tuple[int, int] = (-32768, 32767),
) -> None:
    """Serialize a recording to the classic EDF layout.

    Samples are quantized onto the digital range; the physical range defaults
    to a symmetric span covering the signal with a little headroom. Trailing
    samples that do not fill a whole record are dropped.
    """
    samples_per_record = rec.rate_hz * record_duration_s
    if abs(samples_per_record - round(samples_per_record)) > 1e-9:
        raise ValueError(
            f"record duration {record_duration_s} s at {rec.rate_hz} Hz gives a "
            "non-integer samples-per-record"
        )
    spr = int(round(samples_per_record))
    n_records = rec.n_samples // spr
    if n_records < 1:
        raise ValueError("recording shorter than one data record")

    if physical_range is None:
        peak = float(np.abs(rec.signals).max())
        peak = max(peak * 1.01, 1e-6)
        physical_range = (-peak, peak)
    pmin, pmax = physical_range
    dmin, dmax = digital_range
    gain = (pmax - pmin) / (dmax - dmin)

    n_signals = rec.n_channels
    patient = f"{rec.subject_id}"
    if rec.age_years is not None:
        patient += f" age={rec.age_years:g}"

    header = b"".join(
        [
            _pad_ascii("0", 8),
            _pad_ascii(patient, 80),
            _pad_ascii("tempo-contrast export", 80),
            _pad_ascii("01.01.00", 8),
            _pad_ascii("00.00.00", 8),
            _format_number(HEADER_BYTES + SIGNAL_HEADER_BYTES * n_signals, 8),
            _pad_ascii("", 44),
            _format_number(n_records, 8),
            _format_number(record_duration_s, 8),
            _format_number(n_signals, 4),
        ]
    )
    assert len(header) == HEADER_BYTES

    def per_signal(fmt) -> bytes:
        return b"".join(fmt(i) for i in range(n_signals))

    signal_header = b"".join(
        [
            per_signal(lambda i: _pad_ascii(rec.channel_names[i], 16)),
            per_signal(lambda i: _pad_ascii("", 80)),
            per_signal(lambda i: _pad_ascii("uV", 8)),
            per_signal(lambda i: _format_number(pmin, 8)),
            per_signal(lambda i: _format_number(pmax, 8)),
            per_signal(lambda i: _format_number(dmin, 8)),
            per_signal(lambda i: _format_number(dmax, 8)),
            per_signal(lambda i: _pad_ascii("", 80)),
            per_signal(lambda i: _format_number(spr, 8)),
            per_signal(lambda i: _pad_ascii("", 32)),
        ]
    )
    assert len(signal_header) == SIGNAL_HEADER_BYTES * n_signals

    digital = np.round((rec.signals[:, : n_records * spr] - pmin) / gain + dmin)
    digital = np.clip(digital, dmin, dmax).astype("<i2")

    records = np.empty((n_records, n_signals * spr), dtype="<i2")
    for i in range(n_signals):
        records[:, i * spr : (i + 1) * spr] = digital[i].reshape(n_records, spr)

    out = Path(path)
    out.write_bytes(header + signal_header + records.tobytes())
    logger.debug("wrote EDF %s: %d signals, %d records", out, n_signals, n_records)


def read_hypnogram(path: str | Path) -> list[tuple[float, float, str]]:
    """Read a sidecar of tab-separated (start_s, duration_s, label) lines."""
    intervals: list[tuple[float, float, str]] = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        start, duration, label = parts
        intervals.append((float(start), float(duration), label))
    return intervals


def write_hypnogram(intervals: list[tuple[float, float, str]], path: str | Path) -> None:
    lines = [f"{start:g}\t{duration:g}\t{label}" for start, duration, label in intervals]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def quantization_step(physical_range: tuple[float, float], digital_range: tuple[int, int]) -> float:
    """Physical size of one digital step; useful for round-trip tolerances."""
    return (physical_range[1] - physical_range[0]) / (digital_range[1] - digital_range[0])


def load_recording(
    edf_path: str | Path,
    hypnogram_path: str | Path | None = None,
    subject_id: str | None = None,
) -> Recording:
    """Parse an EDF file and, when present, attach its hypnogram sidecar."""
    rec = parse_edf_file(edf_path, subject_id=subject_id)
    if hypnogram_path is not None and Path(hypnogram_path).exists():
        rec.annotations = read_hypnogram(hypnogram_path)
    return rec
