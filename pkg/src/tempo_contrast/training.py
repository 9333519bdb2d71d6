"""Mini-batch training loops with early stopping for all model variants."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import models
from .autodiff import Tensor
from .models import FeatureExtractorConfig, ModelBundle
from .optim import Adam
from .sampling import PretextDataset, TASK_RP
from .windows import STAGE_ORDER, WindowDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 300
    patience_epochs: int = 30
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.patience_epochs > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def summary(self) -> dict:
        return {
            "stopped_epoch": self.stopped_epoch,
            "best_epoch": self.best_epoch,
            "best_valid_loss": min(self.valid_loss) if self.valid_loss else None,
        }


def write_history_csv(history: TrainHistory, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "valid_loss", "seconds"])
        for i, (tr, va, sec) in enumerate(
            zip(history.train_loss, history.valid_loss, history.seconds), start=1
        ):
            writer.writerow([i, f"{tr:.9g}", f"{va:.9g}", f"{sec:.3f}"])


def read_history_csv(path: str | Path) -> TrainHistory:
    history = TrainHistory()
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            history.train_loss.append(float(row["train_loss"]))
            history.valid_loss.append(float(row["valid_loss"]))
            history.seconds.append(float(row["seconds"]))
    history.stopped_epoch = len(history.train_loss)
    if history.valid_loss:
        history.best_epoch = 1 + int(np.argmin(history.valid_loss))
    return history


def compute_class_weights(targets: np.ndarray, n_classes: int) -> np.ndarray:
    """Inverse-frequency weights: N / (K * N_c) over the K classes present.

    Absent classes get weight 0; they are never indexed by a target. The
    weighted mean of the weights under the empirical distribution is exactly 1.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("no labels to weight")
    counts = np.bincount(targets, minlength=n_classes).astype(np.float64)
    present = counts > 0
    k = int(present.sum())
    weights = np.zeros(n_classes)
    weights[present] = targets.size / (k * counts[present])
    return weights


class _EarlyStopper:
    """Tracks the best validation loss and a parameter snapshot of that epoch."""

    def __init__(self, patience: int, params: list[Tensor]):
        self.patience = patience
        self.params = params
        self.best_loss = np.inf
        self.best_epoch = 0
        self.snapshot: list[np.ndarray] | None = None
        self.stale = 0

    def update(self, epoch: int, valid_loss: float) -> bool:
        """Record the epoch; returns True when training should stop."""
        if valid_loss < self.best_loss:
            self.best_loss = valid_loss
            self.best_epoch = epoch
            self.snapshot = [p.data.copy() for p in self.params]
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience

    def restore(self) -> None:
        if self.snapshot is not None:
            for p, saved in zip(self.params, self.snapshot):
                p.data[...] = saved


def _check_finite(loss: float, epoch: int) -> None:
    if not np.isfinite(loss):
        raise RuntimeError(f"non-finite loss {loss} at epoch {epoch}; aborting")


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = np.arange(n) if rng is None else rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _run_loop(compute_batch_loss, compute_valid_loss, bundle: ModelBundle,
              cfg: TrainConfig, n_train: int) -> TrainHistory:
    """The shared epoch loop: shuffle, step, validate, early-stop, restore best."""
    params = bundle.parameters()
    optimizer = Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    dropout_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    stopper = _EarlyStopper(cfg.patience_epochs, params)
    history = TrainHistory()

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        total, seen = 0.0, 0
        for batch_idx in _batches(n_train, cfg.batch_size, shuffle_rng):
            loss = compute_batch_loss(batch_idx, dropout_rng)
            ad.backward(loss)
            optimizer.step()
            total += loss.item() * len(batch_idx)
            seen += len(batch_idx)
        train_loss = total / seen
        _check_finite(train_loss, epoch)
        valid_loss = compute_valid_loss()
        _check_finite(valid_loss, epoch)

        history.train_loss.append(train_loss)
        history.valid_loss.append(valid_loss)
        history.seconds.append(time.perf_counter() - started)
        history.stopped_epoch = epoch
        if stopper.update(epoch, valid_loss):
            logger.info("early stop at epoch %d (best %d)", epoch, stopper.best_epoch)
            break

    stopper.restore()
    history.best_epoch = stopper.best_epoch
    bundle.history_summary = history.summary()
    return history


def _pretext_batch_indices(data: PretextDataset) -> tuple[np.ndarray, ...]:
    if data.task == TASK_RP:
        a = np.array([ex.anchor_idx for ex in data.examples], dtype=np.int64)
        b = np.array([ex.other_idx for ex in data.examples], dtype=np.int64)
        y = data.labels()
        return a, b, y
    a = np.array([ex.first_idx for ex in data.examples], dtype=np.int64)
    b = np.array([ex.middle_idx for ex in data.examples], dtype=np.int64)
    c = np.array([ex.last_idx for ex in data.examples], dtype=np.int64)
    return a, b, c, data.labels()


def pretext_loss(bundle: ModelBundle, stacked: np.ndarray, tuple_arrays: tuple[np.ndarray, ...],
                 batch_idx: np.ndarray, mode: str,
                 rng: np.random.Generator | None) -> Tensor:
    """Forward one mini-batch of pairs or triplets to its logistic loss.

    All branch windows go through the shared extractor as one batch; the
    embedding block is then split back into per-branch halves (or thirds).
    """
    cfg, params = bundle.config, bundle.extractor
    n = len(batch_idx)
    branches = tuple_arrays[:-1]
    windows = np.concatenate([stacked[arr[batch_idx]] for arr in branches], axis=0)
    h_all = models.feature_extractor_forward(Tensor(windows), cfg, params, mode=mode,
                                             rng=rng)
    embeddings = [ad.slice_rows(h_all, i * n, (i + 1) * n) for i in range(len(branches))]
    if bundle.task == TASK_RP:
        agg = models.contrast_rp(*embeddings)
    else:
        agg = models.contrast_ts(*embeddings)
    scores = models.pretext_score(agg, bundle.head["w"], bundle.head["w0"])
    y = tuple_arrays[-1][batch_idx]
    return ad.binary_logistic_loss(scores, y)


def _eval_pretext(bundle: ModelBundle, stacked: np.ndarray,
                  tuple_arrays: tuple[np.ndarray, ...], batch_size: int) -> float:
    n = len(tuple_arrays[-1])
    total = 0.0
    with ad.no_grad():
        for batch_idx in _batches(n, batch_size, rng=None):
            loss = pretext_loss(bundle, stacked, tuple_arrays, batch_idx, "eval", None)
            total += loss.item() * len(batch_idx)
    return total / n


def fit_pretext(
    train_data: PretextDataset,
    valid_data: PretextDataset,
    task: str,
    model_cfg: FeatureExtractorConfig,
    cfg: TrainConfig,
    dtype=np.float32,
) -> tuple[ModelBundle, TrainHistory]:
    """Train extractor and scoring head on sampled pairs or triplets."""
    if len(train_data) == 0 or len(valid_data) == 0:
        raise ValueError("pretext datasets must be nonempty")
    if train_data.task != task or valid_data.task != task:
        raise ValueError(
            f"task {task} does not match datasets ({train_data.task}, {valid_data.task})"
        )
    bundle = models.init_bundle(task, model_cfg, cfg.seed, dtype)
    train_stack = train_data.source.stack().astype(dtype)
    valid_stack = valid_data.source.stack().astype(dtype)
    train_tuples = _pretext_batch_indices(train_data)
    valid_tuples = _pretext_batch_indices(valid_data)

    history = _run_loop(
        lambda batch_idx, rng: pretext_loss(bundle, train_stack, train_tuples, batch_idx,
                                            "train", rng),
        lambda: _eval_pretext(bundle, valid_stack, valid_tuples, cfg.batch_size),
        bundle, cfg, n_train=len(train_data),
    )
    return bundle, history


def _stage_targets(ds: WindowDataset) -> np.ndarray:
    order = {stage: i for i, stage in enumerate(STAGE_ORDER)}
    targets = np.full(len(ds), -1, dtype=np.int64)
    for i, w in enumerate(ds.windows):
        if w.stage is None:
            raise ValueError(f"window {i} ({w.recording_ref}) has no stage label")
        targets[i] = order[w.stage]
    return targets


def fit_supervised(
    train_windows: WindowDataset,
    valid_windows: WindowDataset,
    model_cfg: FeatureExtractorConfig,
    cfg: TrainConfig,
    class_weights: np.ndarray | None = None,
    dtype=np.float32,
) -> tuple[ModelBundle, TrainHistory]:
    """Train extractor plus stage head end to end with class-weighted loss."""
    if len(train_windows) == 0 or len(valid_windows) == 0:
        raise ValueError("window datasets must be nonempty")
    train_targets = _stage_targets(train_windows)
    valid_targets = _stage_targets(valid_windows)
    missing = sorted(set(valid_targets.tolist()) - set(train_targets.tolist()))
    if missing:
        names = [STAGE_ORDER[i].value for i in missing]
        raise ValueError(f"classes absent from the training split: {names}")
    if class_weights is None:
        class_weights = compute_class_weights(train_targets, len(STAGE_ORDER))

    bundle = models.init_bundle(models.TASK_SUPERVISED, model_cfg, cfg.seed, dtype)
    train_stack = train_windows.stack().astype(dtype)
    valid_stack = valid_windows.stack().astype(dtype)

    def batch_loss(batch_idx, rng):
        emb = models.feature_extractor_forward(
            Tensor(train_stack[batch_idx]), model_cfg, bundle.extractor, "train", rng
        )
        logits = models.supervised_logits(emb, bundle.head)
        return ad.weighted_cross_entropy(logits, train_targets[batch_idx], class_weights)

    def valid_loss():
        total = 0.0
        with ad.no_grad():
            for batch_idx in _batches(len(valid_windows), cfg.batch_size, rng=None):
                emb = models.feature_extractor_forward(
                    Tensor(valid_stack[batch_idx]), model_cfg, bundle.extractor, "eval", None
                )
                logits = models.supervised_logits(emb, bundle.head)
                loss = ad.weighted_cross_entropy(logits, valid_targets[batch_idx],
                                                 class_weights)
                total += loss.item() * len(batch_idx)
        return total / len(valid_windows)

    history = _run_loop(batch_loss, valid_loss, bundle, cfg, n_train=len(train_windows))
    return bundle, history


def fit_autoencoder(
    train_windows: WindowDataset,
    valid_windows: WindowDataset,
    model_cfg: FeatureExtractorConfig,
    cfg: TrainConfig,
    dtype=np.float32,
) -> tuple[ModelBundle, TrainHistory]:
    """Train encoder/decoder to reconstruct windows under mean squared error."""
    if len(train_windows) == 0 or len(valid_windows) == 0:
        raise ValueError("window datasets must be nonempty")
    bundle = models.init_bundle(models.TASK_AE, model_cfg, cfg.seed, dtype)
    train_stack = train_windows.stack().astype(dtype)
    valid_stack = valid_windows.stack().astype(dtype)

    def reconstruction_loss(stack, batch_idx, mode, rng):
        batch = stack[batch_idx]
        emb = models.feature_extractor_forward(Tensor(batch), model_cfg, bundle.extractor,
                                               mode, rng)
        recon = models.decode_autoencoder(emb, model_cfg, bundle.head)
        return ad.mse_loss(recon, batch)

    def valid_loss():
        total = 0.0
        with ad.no_grad():
            for batch_idx in _batches(len(valid_windows), cfg.batch_size, rng=None):
                loss = reconstruction_loss(valid_stack, batch_idx, "eval", None)
                total += loss.item() * len(batch_idx)
        return total / len(valid_windows)

    history = _run_loop(
        lambda batch_idx, rng: reconstruction_loss(train_stack, batch_idx, "train", rng),
        valid_loss, bundle, cfg, n_train=len(train_windows),
    )
    return bundle, history
