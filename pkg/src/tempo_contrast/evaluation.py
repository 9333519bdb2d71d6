"""Frozen-feature evaluation: probing, balanced accuracy, label-budget curves, sweeps."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import models
from .autodiff import Tensor
from .features import feature_matrix
from .models import FeatureExtractorConfig, ModelBundle
from .sampling import PretextDataset, SamplerConfig, sample_rp_dataset, sample_ts_dataset
from .training import TrainConfig, compute_class_weights, fit_pretext, fit_supervised
from .windows import STAGE_ORDER, SleepStage, WindowDataset

logger = logging.getLogger(__name__)

ALL_LABELS = "all"


@dataclass
class EmbeddingMatrix:
    """Row-aligned features and window metadata."""

    values: np.ndarray
    recording_ids: list[str]
    start_s: np.ndarray
    stages: list[SleepStage | None]
    ages: list[float | None]

    def __len__(self) -> int:
        return self.values.shape[0]

    def labeled_indices(self) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.stages) if s is not None],
                        dtype=np.int64)


@dataclass
class ProbeModel:
    weights: np.ndarray
    bias: np.ndarray
    class_order: list[SleepStage]

    def predict(self, values: np.ndarray) -> list[SleepStage]:
        logits = values @ self.weights + self.bias
        return [self.class_order[i] for i in logits.argmax(axis=1)]


def _metadata_for(windows: WindowDataset) -> tuple[list[str], np.ndarray, list, list]:
    refs = windows.recording_refs()
    ages = [windows.subject_ages.get(ref) for ref in refs]
    return refs, windows.start_times_s(), windows.stages(), ages


def embed_dataset(bundle: ModelBundle, windows: WindowDataset,
                  batch_size: int = 256) -> EmbeddingMatrix:
    """Evaluation-mode embeddings of every window; deterministic, dropout off."""
    if len(windows) == 0:
        raise ValueError("empty dataset")
    stacked = windows.stack()
    parts = []
    with ad.no_grad():
        for start in range(0, len(windows), batch_size):
            batch = Tensor(stacked[start : start + batch_size])
            parts.append(
                models.feature_extractor_forward(
                    batch, bundle.config, bundle.extractor, mode="eval"
                ).data
            )
    refs, starts, stages, ages = _metadata_for(windows)
    return EmbeddingMatrix(np.concatenate(parts, axis=0), refs, starts, stages, ages)


def handcrafted_embeddings(windows: WindowDataset) -> EmbeddingMatrix:
    """The classical feature bank dressed up as an embedding matrix."""
    values, _ = feature_matrix(windows)
    refs, starts, stages, ages = _metadata_for(windows)
    return EmbeddingMatrix(values.astype(np.float32), refs, starts, stages, ages)


def balanced_accuracy(predictions, labels) -> float:
    """Mean per-class recall over the classes present in the reference labels."""
    predictions = list(predictions)
    labels = list(labels)
    if not labels or len(predictions) != len(labels):
        raise ValueError("predictions and labels must be nonempty and aligned")
    recalls = []
    for cls in dict.fromkeys(labels):
        hits = sum(1 for p, l in zip(predictions, labels) if l == cls and p == cls)
        total = sum(1 for l in labels if l == cls)
        recalls.append(hits / total)
    return float(np.mean(recalls))


def subsample_per_class(labels, n_per_class, seed: int) -> np.ndarray:
    """Indices of up to n_per_class examples per class, drawn without replacement.

    Passing the "all" sentinel (or None) keeps everything. Classes with fewer
    examples than requested contribute all of theirs, which is logged.
    """
    labels = list(labels)
    indices = np.arange(len(labels))
    if n_per_class in (None, ALL_LABELS):
        return indices
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    chosen = []
    for cls in dict.fromkeys(labels):
        cls_idx = np.array([i for i in indices if labels[i] == cls])
        if len(cls_idx) < n_per_class:
            logger.info("class %s has %d < %d examples; keeping all", cls, len(cls_idx),
                        n_per_class)
            chosen.append(cls_idx)
        else:
            chosen.append(rng.choice(cls_idx, size=n_per_class, replace=False))
    return np.sort(np.concatenate(chosen))


def _stage_indices(stages: list[SleepStage | None], class_order: list[SleepStage]) -> np.ndarray:
    lookup = {stage: i for i, stage in enumerate(class_order)}
    out = np.empty(len(stages), dtype=np.int64)
    for i, stage in enumerate(stages):
        if stage not in lookup:
            raise ValueError(f"label {stage} absent from the training classes {class_order}")
        out[i] = lookup[stage]
    return out


def fit_linear_probe(
    train_values: np.ndarray,
    train_stages: list[SleepStage],
    valid_values: np.ndarray,
    valid_stages: list[SleepStage],
    cfg: TrainConfig,
    class_weights: np.ndarray | None = None,
) -> ProbeModel:
    """Multinomial logistic regression on frozen features.

    Only the probe's affine parameters train; features are read-only inputs.
    Early stopping watches the class-weighted validation loss.
    """
    present = [s for s in STAGE_ORDER if s in set(train_stages)]
    if not present:
        raise ValueError("no labeled training examples")
    train_targets = _stage_indices(train_stages, present)
    valid_targets = _stage_indices(valid_stages, present)
    if class_weights is None:
        class_weights = compute_class_weights(train_targets, len(present))

    dim = train_values.shape[1]
    weight = Tensor(np.zeros((dim, len(present)), dtype=np.float32), requires_grad=True)
    bias = Tensor(np.zeros(len(present), dtype=np.float32), requires_grad=True)
    train_x = train_values.astype(np.float32)
    valid_x = valid_values.astype(np.float32)

    from .optim import Adam
    from .training import _EarlyStopper, _batches, _check_finite

    optimizer = Adam([weight, bias], lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    stopper = _EarlyStopper(cfg.patience_epochs, [weight, bias])

    for epoch in range(1, cfg.max_epochs + 1):
        for batch_idx in _batches(len(train_x), cfg.batch_size, shuffle_rng):
            logits = ad.linear(Tensor(train_x[batch_idx]), weight, bias)
            loss = ad.weighted_cross_entropy(logits, train_targets[batch_idx], class_weights)
            ad.backward(loss)
            optimizer.step()
        with ad.no_grad():
            logits = ad.linear(Tensor(valid_x), weight, bias)
            valid_loss = ad.weighted_cross_entropy(logits, valid_targets, class_weights).item()
        _check_finite(valid_loss, epoch)
        if stopper.update(epoch, valid_loss):
            break
    stopper.restore()
    return ProbeModel(weights=weight.data.copy(), bias=bias.data.copy(), class_order=present)


def _labeled_view(emb: EmbeddingMatrix) -> tuple[np.ndarray, list[SleepStage]]:
    idx = emb.labeled_indices()
    if len(idx) == 0:
        raise ValueError("no labeled windows available")
    return emb.values[idx], [emb.stages[i] for i in idx]


@dataclass
class CurveResult:
    rows: list[tuple[str, str, int, float]]


def write_curve_csv(result: CurveResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "n_per_class", "seed", "balanced_accuracy"])
        for method, budget, seed, acc in result.rows:
            writer.writerow([method, budget, seed, f"{acc:.9g}"])


def run_lowdata_curve(
    methods: list[str],
    budgets: list,
    n_seeds: int,
    splits: dict[str, WindowDataset],
    model_cfg: FeatureExtractorConfig,
    train_cfg: TrainConfig,
    bundles: dict[str, ModelBundle] | None = None,
) -> CurveResult:
    """Balanced accuracy per (method, label budget, seed) on the test split.

    Frozen-feature methods reuse one embedding per method; the purely
    supervised method retrains the whole network on each budgeted subset.
    """
    bundles = bundles or {}
    labeled = splits
    rows: list[tuple[str, str, int, float]] = []

    frozen_embeddings: dict[str, dict[str, EmbeddingMatrix]] = {}
    for method in methods:
        if method == "supervised":
            continue
        if method == "handcrafted":
            frozen_embeddings[method] = {
                name: handcrafted_embeddings(ds) for name, ds in labeled.items()
            }
            continue
        if method == "rand":
            bundle = models.init_bundle(models.TASK_RP, model_cfg, train_cfg.seed)
        elif method in bundles:
            bundle = bundles[method]
        else:
            raise ValueError(f"no pretrained bundle supplied for method {method!r}")
        frozen_embeddings[method] = {
            name: embed_dataset(bundle, ds, train_cfg.batch_size)
            for name, ds in labeled.items()
        }

    for method in methods:
        for budget in budgets:
            budget_key = ALL_LABELS if budget in (None, ALL_LABELS) else int(budget)
            for seed in range(n_seeds):
                cell_seed = int(np.random.SeedSequence([train_cfg.seed, seed]).generate_state(1)[0])
                if method == "supervised":
                    acc = _supervised_cell(labeled, budget_key, cell_seed, model_cfg,
                                           train_cfg)
                else:
                    acc = _frozen_cell(frozen_embeddings[method], budget_key, cell_seed,
                                       train_cfg)
                rows.append((method, str(budget_key), seed, acc))
                logger.info("curve %s budget=%s seed=%d bal_acc=%.4f", method, budget_key,
                            seed, acc)
    return CurveResult(rows=rows)


def _frozen_cell(embeddings: dict[str, EmbeddingMatrix], budget, seed: int,
                 train_cfg: TrainConfig) -> float:
    train_x, train_stages = _labeled_view(embeddings["train"])
    valid_x, valid_stages = _labeled_view(embeddings["valid"])
    test_x, test_stages = _labeled_view(embeddings["test"])
    keep = subsample_per_class(train_stages, budget, seed)
    probe_cfg = replace(train_cfg, seed=seed)
    probe = fit_linear_probe(train_x[keep], [train_stages[i] for i in keep],
                             valid_x, valid_stages, probe_cfg)
    return balanced_accuracy(probe.predict(test_x), test_stages)


def _supervised_cell(labeled: dict[str, WindowDataset], budget, seed: int,
                     model_cfg: FeatureExtractorConfig, train_cfg: TrainConfig) -> float:
    train_ds = _labeled_windows(labeled["train"])
    valid_ds = _labeled_windows(labeled["valid"])
    test_ds = _labeled_windows(labeled["test"])
    keep = subsample_per_class([w.stage for w in train_ds.windows], budget, seed)
    subset = WindowDataset(
        windows=[train_ds.windows[i] for i in keep],
        window_samples=train_ds.window_samples,
        rate_hz=train_ds.rate_hz,
        channel_names=train_ds.channel_names,
        subject_ages=train_ds.subject_ages,
    )
    cell_cfg = replace(train_cfg, seed=seed)
    bundle, _ = fit_supervised(subset, valid_ds, model_cfg, cell_cfg)
    emb = embed_dataset(bundle, test_ds, train_cfg.batch_size)
    logits = emb.values @ bundle.head["weight"].data + bundle.head["bias"].data
    predictions = [STAGE_ORDER[i] for i in logits.argmax(axis=1)]
    return balanced_accuracy(predictions, [w.stage for w in test_ds.windows])


def _labeled_windows(ds: WindowDataset) -> WindowDataset:
    return WindowDataset(
        windows=[w for w in ds.windows if w.stage is not None],
        window_samples=ds.window_samples,
        rate_hz=ds.rate_hz,
        channel_names=ds.channel_names,
        subject_ages=ds.subject_ages,
    )


def score_pretext_dataset(bundle: ModelBundle, data: PretextDataset,
                          batch_size: int = 256) -> np.ndarray:
    """Evaluation-mode scores for every sampled tuple."""
    from .training import _pretext_batch_indices

    stacked = data.source.stack()
    tuples = _pretext_batch_indices(data)
    scores = []
    with ad.no_grad():
        for start in range(0, len(data), batch_size):
            batch_idx = np.arange(start, min(start + batch_size, len(data)))
            embeddings = [
                models.feature_extractor_forward(
                    Tensor(stacked[arr[batch_idx]]), bundle.config, bundle.extractor, "eval"
                )
                for arr in tuples[:-1]
            ]
            agg = (models.contrast_rp(*embeddings) if bundle.task == models.TASK_RP
                   else models.contrast_ts(*embeddings))
            scores.append(models.pretext_score(agg, bundle.head["w"], bundle.head["w0"]).data)
    return np.concatenate(scores)


def pretext_balanced_accuracy(bundle: ModelBundle, data: PretextDataset,
                              batch_size: int = 256) -> float:
    scores = score_pretext_dataset(bundle, data, batch_size)
    return balanced_accuracy(models.predict_sign(scores).tolist(), data.labels().tolist())


@dataclass
class SweepRow:
    tau_pos_s: float
    tau_neg_s: float
    bal_acc_ssl: float
    bal_acc_staging: float


def write_sweep_csv(rows: list[SweepRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_pos_s", "tau_neg_s", "bal_acc_ssl", "bal_acc_staging"])
        for row in rows:
            writer.writerow([f"{row.tau_pos_s:g}", f"{row.tau_neg_s:g}",
                             f"{row.bal_acc_ssl:.9g}", f"{row.bal_acc_staging:.9g}"])


def run_tau_sweep(
    tau_pairs: list[tuple[float, float]],
    task: str,
    splits: dict[str, WindowDataset],
    sampler_cfg: SamplerConfig,
    model_cfg: FeatureExtractorConfig,
    train_cfg: TrainConfig,
) -> tuple[list[SweepRow], dict[tuple[float, float], ModelBundle]]:
    """Pretrain once per context setting; report pretext and staging accuracy."""
    sampler = sample_rp_dataset if task == models.TASK_RP else sample_ts_dataset
    rows: list[SweepRow] = []
    trained: dict[tuple[float, float], ModelBundle] = {}
    for tau_pos, tau_neg in tau_pairs:
        cfg = replace(sampler_cfg, tau_pos_s=tau_pos, tau_neg_s=tau_neg)
        data = {name: sampler(ds, replace(cfg, seed=cfg.seed + i))
                for i, (name, ds) in enumerate(splits.items())}
        for name, d in data.items():
            if len(d) == 0:
                raise ValueError(
                    f"tau=({tau_pos}, {tau_neg}) s yields no tuples on the {name} split"
                )
        bundle, _ = fit_pretext(data["train"], data["valid"], task, model_cfg, train_cfg)
        ssl_acc = pretext_balanced_accuracy(bundle, data["test"], train_cfg.batch_size)

        train_emb = embed_dataset(bundle, splits["train"], train_cfg.batch_size)
        valid_emb = embed_dataset(bundle, splits["valid"], train_cfg.batch_size)
        test_emb = embed_dataset(bundle, splits["test"], train_cfg.batch_size)
        probe = fit_linear_probe(*_labeled_view(train_emb), *_labeled_view(valid_emb),
                                 train_cfg)
        test_x, test_stages = _labeled_view(test_emb)
        staging_acc = balanced_accuracy(probe.predict(test_x), test_stages)
        rows.append(SweepRow(tau_pos, tau_neg, ssl_acc, staging_acc))
        trained[(tau_pos, tau_neg)] = bundle
        logger.info("sweep tau=(%g, %g): ssl=%.4f staging=%.4f", tau_pos, tau_neg,
                    ssl_acc, staging_acc)
    return rows, trained


def export_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Write one row per window: metadata columns then the embedding values."""
    d = matrix.values.shape[1]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording", "start_s", "stage", "age"]
                        + [f"e{i:03d}" for i in range(d)])
        for i in range(len(matrix)):
            stage = matrix.stages[i].value if matrix.stages[i] is not None else ""
            age = f"{matrix.ages[i]:g}" if matrix.ages[i] is not None else ""
            writer.writerow(
                [matrix.recording_ids[i], f"{matrix.start_s[i]:.9g}", stage, age]
                + [f"{v:.9g}" for v in matrix.values[i]]
            )
