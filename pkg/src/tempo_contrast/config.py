"""Run-level configuration: JSON loading, defaults, and validation."""

from __future__ import annotations

import difflib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import FeatureExtractorConfig
from .sampling import SamplerConfig
from .synthetic import SyntheticConfig
from .training import TrainConfig

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


@dataclass
class DatasetSpec:
    kind: str
    edf_dir: str | None = None
    hypnogram_suffix: str = ".hyp.txt"
    scheme: str = "RK"
    n_recordings: int = 3
    duration_s: float = 3600.0
    durations_s: list | None = None
    rate_hz: float = 100.0
    channels: int = 2
    n_states: int = 4
    transition: list | None = None
    state_spectra: list | None = None
    noise_std: float = 0.3

    def recording_duration(self, index: int) -> float:
        if self.durations_s is not None:
            if len(self.durations_s) != self.n_recordings:
                raise ConfigError(
                    f"durations_s lists {len(self.durations_s)} entries for "
                    f"{self.n_recordings} recordings"
                )
            return float(self.durations_s[index])
        return self.duration_s


@dataclass
class PreprocessSpec:
    enabled: bool = False
    cutoff_hz: float = 30.0
    target_rate_hz: float | None = None
    channels: list[str] | None = None
    window_s: float = 30.0
    filter_order: int = 128


@dataclass
class ModelSpec:
    conv_kernel: int = 50
    pool_size: int = 13
    embed_dim: int = 100
    dropout_rate: float = 0.5

    def to_feature_config(self, channels: int, window_samples: int) -> FeatureExtractorConfig:
        return FeatureExtractorConfig(
            channels=channels,
            window_samples=window_samples,
            conv_kernel=self.conv_kernel,
            pool_size=self.pool_size,
            embed_dim=self.embed_dim,
            dropout_rate=self.dropout_rate,
        )


@dataclass
class ExperimentConfig:
    run_name: str
    dataset: DatasetSpec
    split: dict[str, list[str]]
    out_dir: str = "runs"
    seed: int = 0
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(240.0, 900.0))
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep_tau_pairs_s: list[tuple[float, float]] = field(
        default_factory=lambda: [(120.0, 120.0), (240.0, 900.0), (7200.0, 7200.0)]
    )
    curve_methods: list[str] = field(default_factory=lambda: ["rp", "rand"])
    curve_budgets: list = field(default_factory=lambda: [1, 10, 100, 500, "all"])
    curve_seeds: int = 3

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.run_name

    def recording_seed(self, index: int) -> int:
        return int(np.random.SeedSequence([self.seed, 101, index]).generate_state(1)[0])

    def synthetic_config(self, index: int) -> SyntheticConfig:
        ds = self.dataset
        if ds.transition is None or ds.state_spectra is None:
            raise ConfigError("synthetic dataset needs 'transition' and 'state_spectra'")
        spectra = [[tuple(comp) for comp in state] for state in ds.state_spectra]
        return SyntheticConfig(
            n_states=ds.n_states,
            transition=np.asarray(ds.transition),
            state_spectra=spectra,
            duration_s=ds.recording_duration(index),
            rate_hz=ds.rate_hz,
            channels=ds.channels,
            noise_std=ds.noise_std,
            seed=self.recording_seed(index),
        )


_KNOWN_KEYS = {
    "": ["run_name", "out_dir", "seed", "dataset", "preprocess", "sampler", "model",
         "train", "split", "sweep", "curve"],
    "dataset": ["kind", "edf_dir", "hypnogram_suffix", "scheme", "n_recordings",
                "duration_s", "durations_s", "rate_hz", "channels", "n_states", "transition",
                "state_spectra", "noise_std"],
    "preprocess": ["enabled", "cutoff_hz", "target_rate_hz", "channels", "window_s",
                   "filter_order"],
    "sampler": ["tau_pos_s", "tau_neg_s", "n_anchors_per_recording", "n_pos_per_anchor",
                "n_neg_per_anchor"],
    "model": ["conv_kernel", "pool_size", "embed_dim", "dropout_rate"],
    "train": ["batch_size", "max_epochs", "patience_epochs", "lr", "beta1", "beta2"],
    "split": ["train", "valid", "test"],
    "sweep": ["tau_pairs_s"],
    "curve": ["methods", "budgets", "n_seeds"],
}


def _warn_unknown(section: str, given: dict) -> None:
    known = _KNOWN_KEYS[section]
    for key in given:
        if key not in known:
            hint = difflib.get_close_matches(key, known, n=1)
            suffix = f"; closest known key is {hint[0]!r}" if hint else ""
            where = f"section {section!r}" if section else "top level"
            logger.warning("ignoring unknown config key %r at %s%s", key, where, suffix)


def _require(document: dict, key: str) -> object:
    if key not in document:
        raise ConfigError(f"missing required config key {key!r}")
    return document[key]


def parse_config(path: str | Path) -> ExperimentConfig:
    """Load, default-fill, and validate a JSON experiment configuration."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return config_from_dict(document, base_dir=Path(path).parent)


def config_from_dict(document: dict, base_dir: Path | None = None) -> ExperimentConfig:
    _warn_unknown("", document)
    run_name = str(_require(document, "run_name"))

    raw_dataset = dict(_require(document, "dataset"))
    _warn_unknown("dataset", raw_dataset)
    kind = raw_dataset.get("kind")
    if kind not in ("synthetic", "edf"):
        raise ConfigError(f"dataset.kind must be 'synthetic' or 'edf', got {kind!r}")
    dataset = DatasetSpec(**{k: v for k, v in raw_dataset.items()
                             if k in DatasetSpec.__dataclass_fields__})
    if kind == "edf":
        if not dataset.edf_dir:
            raise ConfigError("missing required config key 'dataset.edf_dir'")
        edf_dir = Path(dataset.edf_dir)
        if base_dir is not None and not edf_dir.is_absolute():
            edf_dir = base_dir / edf_dir
            dataset.edf_dir = str(edf_dir)
        if not edf_dir.is_dir():
            raise ConfigError(f"dataset.edf_dir {edf_dir} does not exist")

    raw_split = dict(_require(document, "split"))
    _warn_unknown("split", raw_split)
    split: dict[str, list[str]] = {}
    for name in ("train", "valid", "test"):
        subjects = raw_split.get(name)
        if not subjects:
            raise ConfigError(f"missing required config key 'split.{name}'")
        split[name] = [str(s) for s in subjects]
    _check_disjoint(split)

    sections = {}
    for section, cls in (("preprocess", PreprocessSpec), ("model", ModelSpec)):
        raw = dict(document.get(section, {}))
        _warn_unknown(section, raw)
        known = {k: v for k, v in raw.items() if k in cls.__dataclass_fields__}
        sections[section] = cls(**known)
        if section == "preprocess" and raw and "enabled" not in raw:
            sections[section].enabled = True

    raw_sampler = dict(document.get("sampler", {}))
    _warn_unknown("sampler", raw_sampler)
    seed = int(document.get("seed", 0))
    sampler = SamplerConfig(
        tau_pos_s=float(raw_sampler.get("tau_pos_s", 240.0)),
        tau_neg_s=float(raw_sampler.get("tau_neg_s", 900.0)),
        n_anchors_per_recording=int(raw_sampler.get("n_anchors_per_recording", 2000)),
        n_pos_per_anchor=int(raw_sampler.get("n_pos_per_anchor", 3)),
        n_neg_per_anchor=int(raw_sampler.get("n_neg_per_anchor", 3)),
        seed=seed,
    )

    raw_train = dict(document.get("train", {}))
    _warn_unknown("train", raw_train)
    train = TrainConfig(
        batch_size=int(raw_train.get("batch_size", 256)),
        max_epochs=int(raw_train.get("max_epochs", 300)),
        patience_epochs=int(raw_train.get("patience_epochs", 30)),
        lr=float(raw_train.get("lr", 0.001)),
        beta1=float(raw_train.get("beta1", 0.9)),
        beta2=float(raw_train.get("beta2", 0.999)),
        seed=seed,
    )

    raw_sweep = dict(document.get("sweep", {}))
    _warn_unknown("sweep", raw_sweep)
    tau_pairs = [tuple(float(v) for v in pair)
                 for pair in raw_sweep.get("tau_pairs_s",
                                           [[120.0, 120.0], [240.0, 900.0],
                                            [7200.0, 7200.0]])]

    raw_curve = dict(document.get("curve", {}))
    _warn_unknown("curve", raw_curve)

    return ExperimentConfig(
        run_name=run_name,
        dataset=dataset,
        split=split,
        out_dir=str(document.get("out_dir", "runs")),
        seed=seed,
        preprocess=sections["preprocess"],
        sampler=sampler,
        model=sections["model"],
        train=train,
        sweep_tau_pairs_s=tau_pairs,
        curve_methods=[str(m) for m in raw_curve.get("methods", ["rp", "rand"])],
        curve_budgets=raw_curve.get("budgets", [1, 10, 100, 500, "all"]),
        curve_seeds=int(raw_curve.get("n_seeds", 3)),
    )


def _check_disjoint(split: dict[str, list[str]]) -> None:
    names = list(split)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            shared = sorted(set(split[a]) & set(split[b]))
            if shared:
                raise ConfigError(
                    f"splits '{a}' and '{b}' share subjects {shared}; splits must be disjoint"
                )


def apply_overrides(document: dict, overrides: list[str]) -> dict:
    """Apply dotted key=value CLI overrides onto a raw config dict."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key.path=value")
        dotted, raw_value = item.split("=", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        node = document
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot override {dotted!r}: {part!r} is not an object")
        node[leaf] = value
        logger.info("config override: %s = %r", dotted, value)
    return document
