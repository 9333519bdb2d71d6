"""Pair and triplet samplers for the relative-positioning and temporal-shuffling tasks.

Window pairs closer than tau_pos seconds are positives, pairs farther apart
than tau_neg are negatives, and anything in between is ignored. Triplets keep
the pair's outer windows inside one positive context and label whether the
middle window falls between them in time.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .windows import WindowDataset

logger = logging.getLogger(__name__)

TASK_RP = "RP"
TASK_TS = "TS"


@dataclass(frozen=True)
class SamplerConfig:
    tau_pos_s: float
    tau_neg_s: float
    n_anchors_per_recording: int = 2000
    n_pos_per_anchor: int = 3
    n_neg_per_anchor: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.tau_pos_s <= 0 or self.tau_neg_s <= 0:
            raise ValueError("context radii must be positive")
        if self.tau_pos_s > self.tau_neg_s:
            raise ValueError(
                f"tau_pos ({self.tau_pos_s}) must not exceed tau_neg ({self.tau_neg_s})"
            )
        if self.n_anchors_per_recording < 1:
            raise ValueError("need at least one anchor per recording")
        if self.n_pos_per_anchor < 0 or self.n_neg_per_anchor < 0:
            raise ValueError("per-anchor quotas must be nonnegative")


@dataclass(frozen=True)
class RPExample:
    anchor_idx: int
    other_idx: int
    y: int


@dataclass(frozen=True)
class TSExample:
    first_idx: int
    middle_idx: int
    last_idx: int
    y: int


@dataclass
class PretextDataset:
    examples: list
    task: str
    source: WindowDataset
    skipped_anchors: int = 0

    def __len__(self) -> int:
        return len(self.examples)

    def labels(self) -> np.ndarray:
        return np.array([ex.y for ex in self.examples], dtype=np.int64)


def label_rp(t_s: float, t2_s: float, cfg: SamplerConfig) -> int | None:
    """Sign label for a window pair, or None when the gap is in neither context."""
    gap = abs(t_s - t2_s)
    if gap <= cfg.tau_pos_s:
        return 1
    if gap > cfg.tau_neg_s:
        return -1
    return None


def label_ts(t_s: float, t2_s: float, t3_s: float) -> int:
    """+1 when the middle time lies strictly between the ordered outer two."""
    if not t_s < t3_s:
        raise ValueError(f"outer windows must be ordered, got {t_s} >= {t3_s}")
    if t2_s == t_s or t2_s == t3_s:
        raise ValueError(f"middle time {t2_s} coincides with an endpoint")
    return 1 if t_s < t2_s < t3_s else -1


def _recording_rng(cfg: SamplerConfig, recording_index: int) -> np.random.Generator:
    # Per-recording streams keep sampling deterministic no matter how
    # recordings are scheduled.
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, recording_index]))


def sample_rp_dataset(ds: WindowDataset, cfg: SamplerConfig) -> PretextDataset:
    """Draw anchor/other pairs with balanced labels from each recording.

    Anchors are drawn uniformly with replacement; each yields its positive and
    negative quota drawn uniformly (with replacement) from the respective
    context. An anchor with an empty positive or negative context is skipped
    whole and counted, so a skip-free run is exactly label-balanced.
    """
    if len(ds) == 0:
        raise ValueError("window dataset is empty")
    times = ds.start_times_s()
    examples: list[RPExample] = []
    total_skipped = 0
    for rec_idx, (ref, indices) in enumerate(ds.indices_by_recording().items()):
        rng = _recording_rng(cfg, rec_idx)
        rec_times = times[indices]
        anchors = rng.integers(len(indices), size=cfg.n_anchors_per_recording)
        skipped = 0
        for a in anchors:
            gaps = np.abs(rec_times - rec_times[a])
            pos_candidates = indices[(gaps > 0) & (gaps <= cfg.tau_pos_s)]
            neg_candidates = indices[gaps > cfg.tau_neg_s]
            if len(pos_candidates) == 0 or len(neg_candidates) == 0:
                skipped += 1
                continue
            anchor_global = int(indices[a])
            for other in rng.choice(pos_candidates, size=cfg.n_pos_per_anchor):
                examples.append(RPExample(anchor_global, int(other), 1))
            for other in rng.choice(neg_candidates, size=cfg.n_neg_per_anchor):
                examples.append(RPExample(anchor_global, int(other), -1))
        if skipped:
            logger.info("recording %s: %d anchors skipped (empty context)", ref, skipped)
        total_skipped += skipped
    return PretextDataset(examples=examples, task=TASK_RP, source=ds,
                          skipped_anchors=total_skipped)


def sample_ts_dataset(ds: WindowDataset, cfg: SamplerConfig) -> PretextDataset:
    """Draw ordered triplets: outer pair from one positive context, middle labeled by order.

    Each example closes the anchor's frame with a later window of its positive
    context. Positives need a closing window whose open interval back to the
    anchor contains at least one window start; the middle is drawn uniformly
    from that interval. Negative middles come from the anchor's negative
    context, which puts them outside the frame on either side. An anchor that
    cannot fill its full quota is skipped whole and counted.
    """
    if len(ds) == 0:
        raise ValueError("window dataset is empty")
    times = ds.start_times_s()
    examples: list[TSExample] = []
    total_skipped = 0
    for rec_idx, (ref, indices) in enumerate(ds.indices_by_recording().items()):
        rng = _recording_rng(cfg, rec_idx)
        rec_times = times[indices]
        anchors = rng.integers(len(indices), size=cfg.n_anchors_per_recording)
        skipped = 0
        for a in anchors:
            deltas = rec_times - rec_times[a]
            closers = np.flatnonzero((deltas > 0) & (deltas <= cfg.tau_pos_s))
            neg_candidates = np.flatnonzero(np.abs(deltas) > cfg.tau_neg_s)
            # A closing window leaves room for a positive middle when it is not
            # the nearest later window.
            roomy = closers[deltas[closers] > deltas[closers].min()] if len(closers) else closers

            needs_pos = cfg.n_pos_per_anchor > 0
            needs_neg = cfg.n_neg_per_anchor > 0
            if (needs_pos and len(roomy) == 0) or (
                needs_neg and (len(closers) == 0 or len(neg_candidates) == 0)
            ):
                skipped += 1
                continue

            first_global = int(indices[a])
            for close in rng.choice(roomy, size=cfg.n_pos_per_anchor):
                interior = np.flatnonzero((deltas > 0) & (deltas < deltas[close]))
                middle = rng.choice(interior)
                examples.append(
                    TSExample(first_global, int(indices[middle]), int(indices[close]), 1)
                )
            for close in rng.choice(closers, size=cfg.n_neg_per_anchor):
                middle = rng.choice(neg_candidates)
                examples.append(
                    TSExample(first_global, int(indices[middle]), int(indices[close]), -1)
                )
        if skipped:
            logger.info("recording %s: %d anchors skipped (cannot fill quota)", ref, skipped)
        total_skipped += skipped
    return PretextDataset(examples=examples, task=TASK_TS, source=ds,
                          skipped_anchors=total_skipped)


def write_examples_csv(dataset: PretextDataset, path: str | Path) -> None:
    """Serialize sampled tuples as task,recording,first,middle,last,y rows."""
    refs = dataset.source.recording_refs()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "recording", "first", "middle", "last", "y"])
        for ex in dataset.examples:
            if dataset.task == TASK_RP:
                writer.writerow([dataset.task, refs[ex.anchor_idx], ex.anchor_idx, "",
                                 ex.other_idx, ex.y])
            else:
                writer.writerow([dataset.task, refs[ex.first_idx], ex.first_idx,
                                 ex.middle_idx, ex.last_idx, ex.y])


def read_examples_csv(path: str | Path, source: WindowDataset) -> PretextDataset:
    examples: list = []
    task = TASK_RP
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            task = row["task"]
            if task == TASK_RP:
                examples.append(RPExample(int(row["first"]), int(row["last"]), int(row["y"])))
            else:
                examples.append(
                    TSExample(int(row["first"]), int(row["middle"]), int(row["last"]),
                              int(row["y"]))
                )
    return PretextDataset(examples=examples, task=task, source=source)
