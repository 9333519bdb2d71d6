"""Dense tensors with reverse-mode automatic differentiation.

Every primitive records a backward closure on its output; calling
:func:`backward` on a scalar loss replays the recorded graph once in reverse
topological order. Tensors used in several places (shared weights in siamese
branches) accumulate gradient contributions from every use. Arrays keep the
dtype they were created with: float32 is the training default, float64 exists
for gradient verification.
"""

from __future__ import annotations

import contextlib
import logging

import numpy as np

logger = logging.getLogger(__name__)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    """A dense n-dimensional array plus optional gradient storage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _record(out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Attach the backward closure when recording is on and any parent needs it."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if t.grad is None:
        t.grad = grad.astype(t.data.dtype, copy=True)
    else:
        t.grad += grad


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the recorded graph, once.

    Gradients accumulate into every tensor reachable from the loss, so
    parameters reused across branches receive the sum of their per-use
    contributions. The recorded closures are consumed; building the loss again
    is required before another call.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise RuntimeError("backward called twice on the same recorded graph")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        node._consumed = True


# ---------------------------------------------------------------------------
# elementwise and linear primitives


def add(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out = Tensor(a.data + b.data)

    def backward_fn(grad):
        _accumulate(a, _unbroadcast(grad, a.shape))
        _accumulate(b, _unbroadcast(grad, b.shape))

    return _record(out, (a, b), backward_fn)


def sub(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out = Tensor(a.data - b.data)

    def backward_fn(grad):
        _accumulate(a, _unbroadcast(grad, a.shape))
        _accumulate(b, _unbroadcast(-grad, b.shape))

    return _record(out, (a, b), backward_fn)


def mul(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, like=a)
    out = Tensor(a.data * b.data)

    def backward_fn(grad):
        _accumulate(a, _unbroadcast(grad * b.data, a.shape))
        _accumulate(b, _unbroadcast(grad * a.data, b.shape))

    return _record(out, (a, b), backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))

    def backward_fn(grad):
        _accumulate(x, grad * (x.data > 0))

    return _record(out, (x,), backward_fn)


def abs_diff(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise |a - b| with the subgradient at zero taken as zero."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = Tensor(np.abs(diff))

    def backward_fn(grad):
        sign = np.sign(diff)
        _accumulate(a, grad * sign)
        _accumulate(b, -grad * sign)

    return _record(out, (a, b), backward_fn)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias for x of shape (batch, in) and weight (in, out)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"linear shapes {x.shape} x {weight.shape} do not chain")
    if bias.shape != (weight.shape[1],):
        raise ValueError(f"bias shape {bias.shape} does not match output {weight.shape[1]}")
    out = Tensor(x.data @ weight.data + bias.data)

    def backward_fn(grad):
        _accumulate(x, grad @ weight.data.T)
        _accumulate(weight, x.data.T @ grad)
        _accumulate(bias, grad.sum(axis=0))

    return _record(out, (x, weight, bias), backward_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def backward_fn(grad):
        _accumulate(x, grad.reshape(x.shape))

    return _record(out, (x,), backward_fn)


def permute(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    """Transpose axes; the gradient flows through the inverse permutation."""
    out = Tensor(np.ascontiguousarray(x.data.transpose(axes)))
    inverse = np.argsort(axes)

    def backward_fn(grad):
        _accumulate(x, grad.transpose(inverse))

    return _record(out, (x,), backward_fn)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) of a 2-D tensor; off-slice gradient is zero."""
    out = Tensor(x.data[start:stop].copy())

    def backward_fn(grad):
        dx = np.zeros_like(x.data)
        dx[start:stop] = grad
        _accumulate(x, dx)

    return _record(out, (x,), backward_fn)


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(grad):
        for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * grad.ndim
            index[axis] = slice(start, stop)
            _accumulate(part, grad[tuple(index)])

    return _record(out, tuple(parts), backward_fn)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: scaling happens at train time, evaluation is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    out = Tensor(x.data * mask)

    def backward_fn(grad):
        _accumulate(x, grad * mask)

    return _record(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# convolution and pooling


def _pad_amounts(kernel: int) -> tuple[int, int]:
    # Even kernels pad one sample more at the end.
    before = (kernel - 1) // 2
    return before, kernel - 1 - before


# Bound on the scratch im2col buffer, in elements; batches are chunked to fit.
_COL_BUDGET = 32_000_000


def _im2col(xp: np.ndarray, kh: int, kw: int, h_out: int, w_out: int) -> np.ndarray:
    """Unfold padded (B, Cin, Hp, Wp) into (B * h_out * w_out, Cin * kh * kw)."""
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    b, c_in = xp.shape[0], xp.shape[1]
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(b * h_out * w_out, c_in * kh * kw)
    return np.ascontiguousarray(cols)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, padding: str = "valid") -> Tensor:
    """Cross-correlation of (B, Cin, H, W) input with a (Cout, Cin, kh, kw) kernel.

    "same" zero-pads to preserve the spatial size (even kernels pad one more
    sample at the end). Internally unfolds patches and runs one matrix product
    per batch chunk, with the scratch buffer bounded in size.
    """
    B, c_in, H, W = x.shape
    c_out, c_in_k, kh, kw = kernel.shape
    if c_in != c_in_k:
        raise ValueError(f"input has {c_in} channels but kernel expects {c_in_k}")
    if bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} does not match {c_out} output maps")

    if padding == "same":
        ph = _pad_amounts(kh)
        pw = _pad_amounts(kw)
    elif padding == "valid":
        ph = pw = (0, 0)
    else:
        raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")

    if ph != (0, 0) or pw != (0, 0):
        xp = np.pad(x.data, ((0, 0), (0, 0), ph, pw))
    else:
        xp = x.data
    h_out = xp.shape[2] - kh + 1
    w_out = xp.shape[3] - kw + 1
    if h_out < 1 or w_out < 1:
        raise ValueError(f"kernel ({kh}, {kw}) larger than padded input {xp.shape[2:]}")

    patch_elems = h_out * w_out * c_in * kh * kw
    chunk = max(1, _COL_BUDGET // max(patch_elems, 1))
    k_matrix = kernel.data.reshape(c_out, -1).T

    out_data = np.empty((B, c_out, h_out, w_out), dtype=x.data.dtype)
    for start in range(0, B, chunk):
        stop = min(start + chunk, B)
        cols = _im2col(xp[start:stop], kh, kw, h_out, w_out)
        prod = (cols @ k_matrix).reshape(stop - start, h_out, w_out, c_out)
        out_data[start:stop] = prod.transpose(0, 3, 1, 2)
    out_data += bias.data.reshape(1, c_out, 1, 1)
    out = Tensor(out_data)

    def backward_fn(grad):
        dk_flat = np.zeros((c_out, c_in * kh * kw), dtype=kernel.data.dtype)
        dxp = np.zeros_like(xp)
        for start in range(0, B, chunk):
            stop = min(start + chunk, B)
            nb = stop - start
            cols = _im2col(xp[start:stop], kh, kw, h_out, w_out)
            grad_rows = np.ascontiguousarray(
                grad[start:stop].transpose(0, 2, 3, 1)
            ).reshape(-1, c_out)
            dk_flat += grad_rows.T @ cols
            # Patch gradients in one GEMM, then col2im scatter-adds per tap.
            dcols = (grad_rows @ k_matrix.T).reshape(nb, h_out, w_out, c_in, kh, kw)
            for u in range(kh):
                for v in range(kw):
                    dxp[start:stop, :, u : u + h_out, v : v + w_out] += (
                        dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
                    )
        if ph != (0, 0) or pw != (0, 0):
            dx = dxp[:, :, ph[0] : ph[0] + H, pw[0] : pw[0] + W]
        else:
            dx = dxp
        _accumulate(x, dx)
        _accumulate(kernel, dk_flat.reshape(kernel.shape))
        _accumulate(bias, grad.sum(axis=(0, 2, 3)))

    return _record(out, (x, kernel, bias), backward_fn)


def maxpool2d(x: Tensor, pool_h: int, pool_w: int) -> Tensor:
    """Non-overlapping max pooling; trailing samples that do not fill a window drop.

    The gradient routes to the first maximum in each window, so ties break
    toward the earliest element.
    """
    if pool_h < 1 or pool_w < 1:
        raise ValueError("pool sizes must be >= 1")
    B, C, H, W = x.shape
    h_out, w_out = H // pool_h, W // pool_w
    if h_out < 1 or w_out < 1:
        raise ValueError(f"pool ({pool_h}, {pool_w}) larger than input ({H}, {W})")

    cropped = x.data[:, :, : h_out * pool_h, : w_out * pool_w]
    tiles = cropped.reshape(B, C, h_out, pool_h, w_out, pool_w)
    tiles = np.ascontiguousarray(tiles.transpose(0, 1, 2, 4, 3, 5)).reshape(
        B, C, h_out, w_out, pool_h * pool_w
    )
    argmax = tiles.argmax(axis=-1)
    out = Tensor(np.take_along_axis(tiles, argmax[..., None], axis=-1)[..., 0])

    def backward_fn(grad):
        dtiles = np.zeros((B, C, h_out, w_out, pool_h * pool_w), dtype=grad.dtype)
        np.put_along_axis(dtiles, argmax[..., None], grad[..., None], axis=-1)
        dcropped = dtiles.reshape(B, C, h_out, w_out, pool_h, pool_w)
        dcropped = dcropped.transpose(0, 1, 2, 4, 3, 5).reshape(
            B, C, h_out * pool_h, w_out * pool_w
        )
        dx = np.zeros_like(x.data)
        dx[:, :, : h_out * pool_h, : w_out * pool_w] = dcropped
        _accumulate(x, dx)

    return _record(out, (x,), backward_fn)


def upsample_last(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbor repetition along the final axis."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out = Tensor(np.repeat(x.data, factor, axis=-1))

    def backward_fn(grad):
        _accumulate(x, grad.reshape(*x.shape, factor).sum(axis=-1))

    return _record(out, (x,), backward_fn)


def crop_pad_last(x: Tensor, length: int) -> Tensor:
    """Crop or zero-pad the final axis to exactly the requested length."""
    current = x.shape[-1]
    if current >= length:
        out = Tensor(np.ascontiguousarray(x.data[..., :length]))

        def backward_fn(grad):
            dx = np.zeros_like(x.data)
            dx[..., :length] = grad
            _accumulate(x, dx)

    else:
        pad = [(0, 0)] * (x.data.ndim - 1) + [(0, length - current)]
        out = Tensor(np.pad(x.data, pad))

        def backward_fn(grad):
            _accumulate(x, grad[..., :current])

    return _record(out, (x,), backward_fn)


# ---------------------------------------------------------------------------
# losses


def binary_logistic_loss(score: Tensor, y: np.ndarray) -> Tensor:
    """Mean of log(1 + exp(-y * score)) over the batch, overflow-safe.

    y holds +/-1 labels and is a constant with respect to differentiation.
    """
    y = np.asarray(y, dtype=score.data.dtype)
    if y.shape != score.shape:
        raise ValueError(f"labels {y.shape} do not match scores {score.shape}")
    z = y * score.data
    losses = np.log1p(np.exp(-np.abs(z))) + np.maximum(-z, 0.0)
    out = Tensor(np.asarray(losses.mean(), dtype=score.data.dtype))
    n = max(score.data.size, 1)

    def backward_fn(grad):
        # d/ds log(1 + e^{-ys}) = -y * sigmoid(-ys)
        sig = np.empty_like(z)
        pos = z >= 0
        ez = np.exp(-z[pos])
        sig[pos] = ez / (1.0 + ez)
        ez = np.exp(z[~pos])
        sig[~pos] = 1.0 / (1.0 + ez)
        _accumulate(score, grad * (-y * sig) / n)

    return _record(out, (score,), backward_fn)


def weighted_cross_entropy(logits: Tensor, targets: np.ndarray, class_weights: np.ndarray) -> Tensor:
    """Class-weighted multinomial logistic loss.

    Per-example losses are weighted by their target's class weight and the
    total is normalized by the summed weights, so uniform weights reduce to
    the plain mean.
    """
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(class_weights, dtype=logits.data.dtype)
    B, K = logits.shape
    if targets.shape != (B,):
        raise ValueError(f"targets shape {targets.shape} does not match batch {B}")
    if np.any(targets < 0) or np.any(targets >= K):
        raise ValueError(f"target index outside [0, {K})")
    if weights.shape != (K,):
        raise ValueError(f"need one weight per class, got {weights.shape} for K={K}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    w = weights[targets]
    w_total = w.sum()
    loss = -(w * log_probs[np.arange(B), targets]).sum() / w_total
    out = Tensor(np.asarray(loss, dtype=logits.data.dtype))

    def backward_fn(grad):
        softmax = np.exp(log_probs)
        dlogits = softmax * w[:, None]
        dlogits[np.arange(B), targets] -= w
        _accumulate(logits, grad * dlogits / w_total)

    return _record(out, (logits,), backward_fn)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target."""
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.shape:
        raise ValueError(f"target {target.shape} does not match prediction {pred.shape}")
    diff = pred.data - target
    out = Tensor(np.asarray((diff * diff).mean(), dtype=pred.data.dtype))
    n = max(pred.data.size, 1)

    def backward_fn(grad):
        _accumulate(pred, grad * 2.0 * diff / n)

    return _record(out, (pred,), backward_fn)
