"""Command-line entry point: ingest, pretrain, baselines, probing, sweeps, curves, export."""

from __future__ import annotations

import functools
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import models, report
from .cache import load_cache, save_cache
from .config import ConfigError, ExperimentConfig, apply_overrides, config_from_dict
from .edf import load_recording, write_edf, write_hypnogram
from .evaluation import (
    balanced_accuracy,
    embed_dataset,
    export_embeddings,
    fit_linear_probe,
    handcrafted_embeddings,
    pretext_balanced_accuracy,
    run_lowdata_curve,
    run_tau_sweep,
    write_curve_csv,
    write_sweep_csv,
    _labeled_view,
)
from .filters import preprocess
from .models import ModelBundle, load_checkpoint, save_checkpoint
from .sampling import SamplerConfig, sample_rp_dataset, sample_ts_dataset
from .synthetic import generate_synthetic
from .training import (
    fit_autoencoder,
    fit_pretext,
    fit_supervised,
    write_history_csv,
)
from .windows import Recording, WindowDataset, extract_windows, merge_datasets

logger = logging.getLogger(__name__)

THREADS_ENV = "TEMPO_CONTRAST_THREADS"

FEATURE_CHOICES = ("rp", "ts", "ae", "rand", "handcrafted")
TASK_NAMES = {"rp": models.TASK_RP, "ts": models.TASK_TS, "ae": models.TASK_AE}


class _ListingGroup(click.Group):
    def resolve_command(self, ctx, args):
        try:
            return super().resolve_command(ctx, args)
        except click.UsageError:
            valid = ", ".join(sorted(self.commands))
            raise click.UsageError(f"unknown command {args[0]!r}; valid commands: {valid}")


@click.group(cls=_ListingGroup)
def main():
    """Temporal-contrast representation learning pipeline."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


def _common_options(fn):
    @click.option("--config", "config_path", required=True,
                  type=click.Path(exists=True, dir_okay=False),
                  help="Path to the JSON experiment config.")
    @click.option("--set", "overrides", multiple=True, metavar="KEY.PATH=VALUE",
                  help="Override a scalar config field; repeatable.")
    @click.option("--threads", type=int, default=None,
                  help=f"Worker threads (default: ${THREADS_ENV} or CPU count).")
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, ValueError, OSError, RuntimeError) as exc:
            raise click.ClickException(str(exc))

    return wrapper


def _load_config(config_path: str, overrides: tuple[str, ...]) -> ExperimentConfig:
    document = json.loads(Path(config_path).read_text(encoding="utf-8"))
    if overrides:
        document = apply_overrides(document, list(overrides))
    cfg = config_from_dict(document, base_dir=Path(config_path).parent)
    cfg.run_dir.mkdir(parents=True, exist_ok=True)
    return cfg


def _resolve_threads(threads: int | None) -> int:
    if threads is not None:
        return max(1, threads)
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _build_recordings(cfg: ExperimentConfig) -> list[Recording]:
    ds = cfg.dataset
    if ds.kind == "synthetic":
        recordings = []
        for i in range(ds.n_recordings):
            rec = generate_synthetic(cfg.synthetic_config(i))
            rec.subject_id = f"synth-{i:02d}"
            recordings.append(rec)
        return recordings
    edf_dir = Path(ds.edf_dir)
    paths = sorted(edf_dir.glob("*.edf"))
    if not paths:
        raise ConfigError(f"no .edf files under {edf_dir}")
    recordings = []
    for path in paths:
        sidecar = path.with_suffix("")
        sidecar = sidecar.parent / (sidecar.name + ds.hypnogram_suffix)
        recordings.append(load_recording(path, sidecar, subject_id=path.stem))
    return recordings


def _ingest_windows(cfg: ExperimentConfig, threads: int) -> WindowDataset:
    recordings = _build_recordings(cfg)
    pp = cfg.preprocess

    def one(rec: Recording) -> WindowDataset:
        if pp.enabled:
            target = pp.target_rate_hz if pp.target_rate_hz is not None else rec.rate_hz
            keep = pp.channels if pp.channels is not None else list(rec.channel_names)
            rec = preprocess(rec, pp.cutoff_hz, target, keep, pp.filter_order)
        return extract_windows(rec, pp.window_s, scheme=cfg.dataset.scheme)

    if threads > 1 and len(recordings) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            datasets = list(pool.map(one, recordings))
    else:
        datasets = [one(rec) for rec in recordings]
    return merge_datasets(datasets)


def _cache_path(cfg: ExperimentConfig) -> Path:
    return cfg.run_dir / "windows.tcwd"


def _load_cached_windows(cfg: ExperimentConfig) -> WindowDataset:
    path = _cache_path(cfg)
    if not path.exists():
        raise ConfigError(f"window cache {path} missing; run 'ingest' first")
    return load_cache(path)


def _split_windows(cfg: ExperimentConfig, ds: WindowDataset) -> dict[str, WindowDataset]:
    available = set(ds.indices_by_recording())
    splits = {}
    for name, subjects in cfg.split.items():
        missing = sorted(set(subjects) - available)
        if missing:
            raise ConfigError(f"split '{name}' names unknown subjects {missing}; "
                              f"cache has {sorted(available)}")
        splits[name] = ds.subset(subjects)
        if len(splits[name]) == 0:
            raise ConfigError(f"split '{name}' selects no windows")
    return splits


def _checkpoint_path(cfg: ExperimentConfig, task: str) -> Path:
    return cfg.run_dir / f"{task.lower()}.tckp"


def _model_config(cfg: ExperimentConfig, ds: WindowDataset):
    channels = len(ds.channel_names) or ds.windows[0].n_channels
    return cfg.model.to_feature_config(channels, ds.window_samples)


def _sample_pretext_splits(task: str, splits: dict[str, WindowDataset],
                           sampler_cfg: SamplerConfig):
    sampler = sample_rp_dataset if task == models.TASK_RP else sample_ts_dataset
    out = {}
    for i, (name, ds) in enumerate(splits.items()):
        from dataclasses import replace
        data = sampler(ds, replace(sampler_cfg, seed=sampler_cfg.seed + i))
        if len(data) == 0:
            raise ConfigError(f"pretext sampling produced no tuples on the '{name}' split")
        out[name] = data
    return out


def _bundle_for_features(cfg: ExperimentConfig, features: str,
                         model_cfg) -> ModelBundle | None:
    """Checkpoint-backed or freshly initialized bundle; None for handcrafted."""
    if features == "handcrafted":
        return None
    if features == "rand":
        return models.init_bundle(models.TASK_RP, model_cfg, cfg.seed)
    path = _checkpoint_path(cfg, TASK_NAMES[features])
    if not path.exists():
        raise ConfigError(
            f"no checkpoint for features '{features}'; expected {path} "
            f"(run 'pretrain --task {features}' first)"
        )
    return load_checkpoint(path)


def _write_metrics_csv(path: Path, rows: list[tuple[str, float]]) -> None:
    lines = ["metric,value"] + [f"{name},{value:.9g}" for name, value in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@main.command()
@_common_options
def synth(config_path, overrides, threads):
    """Write synthetic recordings as EDF files plus hypnogram sidecars."""
    cfg = _load_config(config_path, overrides)
    if cfg.dataset.kind != "synthetic":
        raise ConfigError("synth requires dataset.kind = 'synthetic'")
    out_dir = cfg.run_dir / "synth"
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(cfg.dataset.n_recordings):
        rec = generate_synthetic(cfg.synthetic_config(i))
        rec.subject_id = f"synth-{i:02d}"
        write_edf(rec, out_dir / f"{rec.subject_id}.edf")
        write_hypnogram(rec.annotations, out_dir / f"{rec.subject_id}.hyp.txt")
    click.echo(f"synth: wrote {cfg.dataset.n_recordings} recordings under {out_dir}")


@main.command()
@_common_options
def ingest(config_path, overrides, threads):
    """Build the normalized window cache from the configured dataset."""
    cfg = _load_config(config_path, overrides)
    ds = _ingest_windows(cfg, _resolve_threads(threads))
    save_cache(ds, _cache_path(cfg))
    lines = ["recording,windows,labeled"]
    for ref, idx in ds.indices_by_recording().items():
        labeled = sum(1 for i in idx if ds.windows[i].stage is not None)
        lines.append(f"{ref},{len(idx)},{labeled}")
    (cfg.run_dir / "ingest_summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    click.echo(f"ingest: cached {len(ds)} windows from "
               f"{len(ds.indices_by_recording())} recordings at {_cache_path(cfg)}")


@main.command()
@click.option("--task", "task_key", type=click.Choice(["rp", "ts", "ae"]), required=True)
@_common_options
def pretrain(task_key, config_path, overrides, threads):
    """Train a feature extractor on a pretext task or as an autoencoder."""
    cfg = _load_config(config_path, overrides)
    ds = _load_cached_windows(cfg)
    splits = _split_windows(cfg, ds)
    model_cfg = _model_config(cfg, ds)
    task = TASK_NAMES[task_key]

    if task in (models.TASK_RP, models.TASK_TS):
        data = _sample_pretext_splits(task, splits, cfg.sampler)
        bundle, history = fit_pretext(data["train"], data["valid"], task, model_cfg,
                                      cfg.train)
        ssl_acc = pretext_balanced_accuracy(bundle, data["test"], cfg.train.batch_size)
        _write_metrics_csv(cfg.run_dir / f"pretrain_{task_key}_metrics.csv",
                           [("pretext_balanced_accuracy_test", ssl_acc)])
        extra = f", pretext test bal acc {ssl_acc:.4f}"
    else:
        bundle, history = fit_autoencoder(splits["train"], splits["valid"], model_cfg,
                                          cfg.train)
        extra = ""

    save_checkpoint(bundle, _checkpoint_path(cfg, task))
    write_history_csv(history, cfg.run_dir / f"history_{task_key}.csv")
    report.plot_history(history, cfg.run_dir / f"history_{task_key}.png", title=task_key)
    click.echo(
        f"pretrain {task_key}: stopped at epoch {history.stopped_epoch} "
        f"(best {history.best_epoch}, valid loss {min(history.valid_loss):.4f}){extra}; "
        f"checkpoint {_checkpoint_path(cfg, task)}"
    )


@main.command("train-supervised")
@_common_options
def train_supervised(config_path, overrides, threads):
    """Train the extractor plus stage head end to end on labeled windows."""
    cfg = _load_config(config_path, overrides)
    ds = _load_cached_windows(cfg)
    splits = _split_windows(cfg, ds)
    model_cfg = _model_config(cfg, ds)
    train_ds = _labeled_subset(splits["train"])
    valid_ds = _labeled_subset(splits["valid"])
    bundle, history = fit_supervised(train_ds, valid_ds, model_cfg, cfg.train)
    save_checkpoint(bundle, _checkpoint_path(cfg, models.TASK_SUPERVISED))
    write_history_csv(history, cfg.run_dir / "history_supervised.csv")
    report.plot_history(history, cfg.run_dir / "history_supervised.png", title="supervised")
    click.echo(
        f"train-supervised: stopped at epoch {history.stopped_epoch} "
        f"(best {history.best_epoch}); checkpoint "
        f"{_checkpoint_path(cfg, models.TASK_SUPERVISED)}"
    )


def _labeled_subset(ds: WindowDataset) -> WindowDataset:
    return WindowDataset(
        windows=[w for w in ds.windows if w.stage is not None],
        window_samples=ds.window_samples,
        rate_hz=ds.rate_hz,
        channel_names=ds.channel_names,
        subject_ages=ds.subject_ages,
    )


@main.command()
@click.option("--features", type=click.Choice(FEATURE_CHOICES), required=True)
@_common_options
def probe(features, config_path, overrides, threads):
    """Fit a frozen-feature linear probe and score it on the test split."""
    cfg = _load_config(config_path, overrides)
    ds = _load_cached_windows(cfg)
    splits = _split_windows(cfg, ds)
    model_cfg = _model_config(cfg, ds)
    bundle = _bundle_for_features(cfg, features, model_cfg)

    if bundle is None:
        embeddings = {name: handcrafted_embeddings(s) for name, s in splits.items()}
    else:
        embeddings = {name: embed_dataset(bundle, s, cfg.train.batch_size)
                      for name, s in splits.items()}
    train_x, train_stages = _labeled_view(embeddings["train"])
    valid_x, valid_stages = _labeled_view(embeddings["valid"])
    test_x, test_stages = _labeled_view(embeddings["test"])
    probe_model = fit_linear_probe(train_x, train_stages, valid_x, valid_stages, cfg.train)

    valid_acc = balanced_accuracy(probe_model.predict(valid_x), valid_stages)
    predictions = probe_model.predict(test_x)
    test_acc = balanced_accuracy(predictions, test_stages)

    classes = probe_model.class_order
    matrix = np.zeros((len(classes), len(classes)))
    index = {c: i for i, c in enumerate(classes)}
    for pred, actual in zip(predictions, test_stages):
        matrix[index[actual], index[pred]] += 1
    rows = [("balanced_accuracy_valid", valid_acc), ("balanced_accuracy_test", test_acc)]
    for i, cls in enumerate(classes):
        total = matrix[i].sum()
        rows.append((f"recall_test_{cls.value}", matrix[i, i] / total if total else 0.0))
    _write_metrics_csv(cfg.run_dir / f"probe_{features}_metrics.csv", rows)
    report.plot_confusion(matrix, [c.value for c in classes],
                          cfg.run_dir / f"probe_{features}_confusion.png")
    click.echo(f"probe {features}: test balanced accuracy {test_acc:.4f} "
               f"({len(train_x)} train / {len(test_x)} test windows)")


@main.command()
@click.option("--task", "task_key", type=click.Choice(["rp", "ts"]), default="rp",
              show_default=True)
@_common_options
def sweep(task_key, config_path, overrides, threads):
    """Pretrain across context settings and tabulate both accuracies."""
    cfg = _load_config(config_path, overrides)
    ds = _load_cached_windows(cfg)
    splits = _split_windows(cfg, ds)
    model_cfg = _model_config(cfg, ds)
    rows, _ = run_tau_sweep(cfg.sweep_tau_pairs_s, TASK_NAMES[task_key], splits,
                            cfg.sampler, model_cfg, cfg.train)
    write_sweep_csv(rows, cfg.run_dir / "sweep.csv")
    report.plot_sweep(rows, cfg.run_dir / "sweep.png")
    click.echo(f"sweep: {len(rows)} settings written to {cfg.run_dir / 'sweep.csv'}")


@main.command()
@_common_options
def curve(config_path, overrides, threads):
    """Balanced accuracy across label budgets for the configured methods."""
    cfg = _load_config(config_path, overrides)
    ds = _load_cached_windows(cfg)
    splits = _split_windows(cfg, ds)
    model_cfg = _model_config(cfg, ds)
    bundles = {}
    for method in cfg.curve_methods:
        if method in TASK_NAMES:
            bundles[method] = _bundle_for_features(cfg, method, model_cfg)
    result = run_lowdata_curve(cfg.curve_methods, cfg.curve_budgets, cfg.curve_seeds,
                               splits, model_cfg, cfg.train, bundles)
    write_curve_csv(result, cfg.run_dir / "curve.csv")
    report.plot_curve(result, cfg.run_dir / "curve.png")
    click.echo(f"curve: {len(result.rows)} rows written to {cfg.run_dir / 'curve.csv'}")


@main.command()
@click.option("--features", type=click.Choice(FEATURE_CHOICES), default="ts",
              show_default=True)
@_common_options
def embed(features, config_path, overrides, threads):
    """Export embeddings with metadata for external projection tools."""
    cfg = _load_config(config_path, overrides)
    ds = _load_cached_windows(cfg)
    model_cfg = _model_config(cfg, ds)
    bundle = _bundle_for_features(cfg, features, model_cfg)
    matrix = (handcrafted_embeddings(ds) if bundle is None
              else embed_dataset(bundle, ds, cfg.train.batch_size))
    out = cfg.run_dir / f"embeddings_{features}.csv"
    export_embeddings(matrix, out)
    click.echo(f"embed {features}: {len(matrix)} rows x {matrix.values.shape[1]} dims "
               f"written to {out}")


if __name__ == "__main__":
    main()
