"""Network definitions: shared feature extractor, task heads, and checkpoints.

The extractor first mixes channels with a spatial convolution, moves the mixed
maps onto the spatial height axis, then applies two temporal conv/pool stages
and a dropout-protected linear projection to the embedding. Pair and triplet
tasks aggregate embeddings with elementwise absolute differences and score the
result with a linear head; the autoencoder inverts the extractor with an
upsampling decoder; the supervised variant adds a five-way affine head.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

logger = logging.getLogger(__name__)

TEMPORAL_MAPS = 8
N_STAGES = 5

TASK_RP = "RP"
TASK_TS = "TS"
TASK_AE = "AE"
TASK_SUPERVISED = "SUPERVISED"

CHECKPOINT_MAGIC = b"TCKP"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint file."""


@dataclass(frozen=True)
class FeatureExtractorConfig:
    channels: int
    window_samples: int
    conv_kernel: int
    pool_size: int
    embed_dim: int = 100
    dropout_rate: float = 0.5

    def __post_init__(self) -> None:
        if self.embed_dim < 1:
            raise ValueError("embedding dimension must be >= 1")
        if self.conv_kernel > self.window_samples:
            raise ValueError(
                f"kernel {self.conv_kernel} longer than window {self.window_samples}"
            )
        if self.pooled_length < 1:
            raise ValueError(
                f"window of {self.window_samples} samples collapses to nothing after two "
                f"poolings by {self.pool_size}"
            )

    @property
    def pooled_length(self) -> int:
        return (self.window_samples // self.pool_size) // self.pool_size

    @property
    def flat_size(self) -> int:
        return self.channels * TEMPORAL_MAPS * self.pooled_length

    def to_json_dict(self) -> dict:
        return {
            "channels": self.channels,
            "window_samples": self.window_samples,
            "conv_kernel": self.conv_kernel,
            "pool_size": self.pool_size,
            "embed_dim": self.embed_dim,
            "dropout_rate": self.dropout_rate,
        }


@dataclass
class ModelBundle:
    """Extractor parameters plus one task head, trained or not."""

    task: str
    config: FeatureExtractorConfig
    extractor: dict[str, Tensor]
    head: dict[str, Tensor]
    history_summary: dict | None = None

    def parameters(self) -> list[Tensor]:
        return list(self.extractor.values()) + list(self.head.values())

    def named_tensors(self) -> dict[str, Tensor]:
        out = {f"extractor.{k}": v for k, v in self.extractor.items()}
        out.update({f"head.{k}": v for k, v in self.head.items()})
        return out


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape: tuple[int, ...], dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_extractor(cfg: FeatureExtractorConfig, rng: np.random.Generator,
                   dtype=np.float32) -> dict[str, Tensor]:
    c, k = cfg.channels, cfg.conv_kernel
    return {
        "conv_mix.kernel": _uniform(rng, (c, 1, c, 1), c, dtype),
        "conv_mix.bias": _uniform(rng, (c,), c, dtype),
        "conv_t1.kernel": _uniform(rng, (TEMPORAL_MAPS, 1, 1, k), k, dtype),
        "conv_t1.bias": _uniform(rng, (TEMPORAL_MAPS,), k, dtype),
        "conv_t2.kernel": _uniform(rng, (TEMPORAL_MAPS, TEMPORAL_MAPS, 1, k),
                                   TEMPORAL_MAPS * k, dtype),
        "conv_t2.bias": _uniform(rng, (TEMPORAL_MAPS,), TEMPORAL_MAPS * k, dtype),
        "out.weight": _uniform(rng, (cfg.flat_size, cfg.embed_dim), cfg.flat_size, dtype),
        "out.bias": _uniform(rng, (cfg.embed_dim,), cfg.flat_size, dtype),
    }


def init_head(task: str, cfg: FeatureExtractorConfig, rng: np.random.Generator,
              dtype=np.float32) -> dict[str, Tensor]:
    """Task head parameters. Linear scoring heads start at zero so an untrained
    model sits exactly at chance."""
    d = cfg.embed_dim
    if task == TASK_RP:
        return {"w": _zeros((d,), dtype), "w0": _zeros((1,), dtype)}
    if task == TASK_TS:
        return {"w": _zeros((2 * d,), dtype), "w0": _zeros((1,), dtype)}
    if task == TASK_SUPERVISED:
        return {"weight": _zeros((d, N_STAGES), dtype), "bias": _zeros((N_STAGES,), dtype)}
    if task == TASK_AE:
        k = cfg.conv_kernel
        m = TEMPORAL_MAPS
        return {
            "dec_in.weight": _uniform(rng, (d, cfg.flat_size), d, dtype),
            "dec_in.bias": _uniform(rng, (cfg.flat_size,), d, dtype),
            "dec_c1.kernel": _uniform(rng, (m, m, 1, k), m * k, dtype),
            "dec_c1.bias": _uniform(rng, (m,), m * k, dtype),
            "dec_c2.kernel": _uniform(rng, (m, m, 1, k), m * k, dtype),
            "dec_c2.bias": _uniform(rng, (m,), m * k, dtype),
            "dec_out.kernel": _uniform(rng, (1, m, 1, k), m * k, dtype),
            "dec_out.bias": _uniform(rng, (1,), m * k, dtype),
        }
    raise ValueError(f"unknown task {task!r}")


def init_bundle(task: str, cfg: FeatureExtractorConfig, seed: int,
                dtype=np.float32) -> ModelBundle:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    return ModelBundle(
        task=task,
        config=cfg,
        extractor=init_extractor(cfg, rng, dtype),
        head=init_head(task, cfg, rng, dtype),
    )


def feature_extractor_forward(
    batch: Tensor,
    cfg: FeatureExtractorConfig,
    params: dict[str, Tensor],
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Map a (batch, channels, samples) tensor to (batch, embed_dim)."""
    b, c, t = batch.shape
    if c != cfg.channels or t != cfg.window_samples:
        raise ValueError(
            f"batch shaped {batch.shape} does not match config ({cfg.channels} channels, "
            f"{cfg.window_samples} samples)"
        )
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    x = ad.reshape(batch, (b, 1, c, t))
    x = ad.conv2d(x, params["conv_mix.kernel"], params["conv_mix.bias"], padding="valid")
    x = ad.permute(x, (0, 2, 1, 3))
    x = ad.conv2d(x, params["conv_t1.kernel"], params["conv_t1.bias"], padding="same")
    x = ad.relu(x)
    x = ad.maxpool2d(x, 1, cfg.pool_size)
    x = ad.conv2d(x, params["conv_t2.kernel"], params["conv_t2.bias"], padding="same")
    x = ad.relu(x)
    x = ad.maxpool2d(x, 1, cfg.pool_size)
    x = ad.reshape(x, (b, cfg.flat_size))
    x = ad.dropout(x, cfg.dropout_rate, training=(mode == "train"), rng=rng)
    return ad.linear(x, params["out.weight"], params["out.bias"])


def contrast_rp(h1: Tensor, h2: Tensor) -> Tensor:
    """Pair aggregation: elementwise |h1 - h2|."""
    return ad.abs_diff(h1, h2)


def contrast_ts(h1: Tensor, h2: Tensor, h3: Tensor) -> Tensor:
    """Triplet aggregation: (|h1 - h2|, |h2 - h3|) concatenated to 2D dims."""
    return ad.concat([ad.abs_diff(h1, h2), ad.abs_diff(h2, h3)], axis=1)


def pretext_score(g_out: Tensor, w: Tensor, w0: Tensor) -> Tensor:
    """Linear score per row; its sign is the predicted label (0 counts as +1)."""
    f = g_out.shape[1]
    if w.shape != (f,):
        raise ValueError(f"head expects {w.shape[0]} features, aggregate has {f}")
    scores = ad.linear(g_out, ad.reshape(w, (f, 1)), w0)
    return ad.reshape(scores, (g_out.shape[0],))


def predict_sign(scores: np.ndarray) -> np.ndarray:
    """Score sign as a +/-1 label, with 0 resolving to +1."""
    return np.where(scores >= 0, 1, -1).astype(np.int64)


def supervised_logits(embedding: Tensor, head: dict[str, Tensor]) -> Tensor:
    return ad.linear(embedding, head["weight"], head["bias"])


def decode_autoencoder(embedding: Tensor, cfg: FeatureExtractorConfig,
                       head: dict[str, Tensor]) -> Tensor:
    """Reconstruct (batch, channels, samples) from embeddings.

    Two upsample/conv/ReLU stages undo the encoder's poolings and a final
    linear conv folds the temporal maps back into one; the time axis is then
    cropped or zero-padded to the exact window length.
    """
    b = embedding.shape[0]
    x = ad.linear(embedding, head["dec_in.weight"], head["dec_in.bias"])
    x = ad.reshape(x, (b, TEMPORAL_MAPS, cfg.channels, cfg.pooled_length))
    x = ad.upsample_last(x, cfg.pool_size)
    x = ad.relu(ad.conv2d(x, head["dec_c1.kernel"], head["dec_c1.bias"], padding="same"))
    x = ad.upsample_last(x, cfg.pool_size)
    x = ad.relu(ad.conv2d(x, head["dec_c2.kernel"], head["dec_c2.bias"], padding="same"))
    x = ad.conv2d(x, head["dec_out.kernel"], head["dec_out.bias"], padding="same")
    x = ad.reshape(x, (b, cfg.channels, x.shape[3]))
    return ad.crop_pad_last(x, cfg.window_samples)


def check_head_matches(bundle: ModelBundle, task: str) -> None:
    """Raise when the bundle's head cannot serve the requested task."""
    d = bundle.config.embed_dim
    expected = {TASK_RP: d, TASK_TS: 2 * d}
    if task in expected and bundle.task in expected:
        have = bundle.head["w"].shape[0]
        if have != expected[task]:
            raise ValueError(
                f"head dimension mismatch: task {task} needs a {expected[task]}-dim scoring "
                f"head, checkpoint carries {have} (task {bundle.task})"
            )
    elif bundle.task != task:
        raise ValueError(f"checkpoint was trained for task {bundle.task}, requested {task}")


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(bundle: ModelBundle, path: str | Path) -> None:
    """Write magic, version, config JSON, then per-tensor records (32-bit LE)."""
    config = {
        "task": bundle.task,
        "extractor": bundle.config.to_json_dict(),
        "history_summary": bundle.history_summary,
    }
    config_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(config_bytes))
    blob += config_bytes
    for name, tensor in bundle.named_tensors().items():
        encoded = name.encode("utf-8")
        blob += struct.pack("<I", len(encoded))
        blob += encoded
        dims = tensor.shape
        blob += struct.pack("<I", len(dims))
        blob += struct.pack(f"<{len(dims)}Q", *dims)
        blob += np.ascontiguousarray(tensor.data, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(blob))
    logger.debug("saved checkpoint %s (%d tensors)", path, len(bundle.named_tensors()))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointError(
                f"{self.path}: truncated at byte {self.offset} (needed {n} more bytes)"
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    @property
    def exhausted(self) -> bool:
        return self.offset >= len(self.data)


def load_checkpoint(path: str | Path) -> ModelBundle:
    raw = Path(path).read_bytes()
    reader = _Reader(raw, str(path))
    magic = reader.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version = reader.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    config = json.loads(reader.take(reader.u32()).decode("utf-8"))
    cfg = FeatureExtractorConfig(**config["extractor"])

    tensors: dict[str, Tensor] = {}
    while not reader.exhausted:
        name = reader.take(reader.u32()).decode("utf-8")
        rank = reader.u32()
        dims = struct.unpack(f"<{rank}Q", reader.take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(reader.take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = Tensor(values.copy(), requires_grad=True)

    extractor = {k[len("extractor."):]: v for k, v in tensors.items()
                 if k.startswith("extractor.")}
    head = {k[len("head."):]: v for k, v in tensors.items() if k.startswith("head.")}
    bundle = ModelBundle(
        task=config["task"],
        config=cfg,
        extractor=extractor,
        head=head,
        history_summary=config.get("history_summary"),
    )
    check_head_matches(bundle, bundle.task)
    return bundle
