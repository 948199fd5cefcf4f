"""
Minimal layer engine with reverse-mode gradients.

Activations are 2-D numpy arrays with one row per frame. Rows may come from
several utterances at once; `segments` (row boundaries, starting at 0 and
ending at the row count) tells time-delay layers where each utterance or chunk
starts and ends so frame offsets clamp inside it.

Layer kinds: fully-connected, 2-D convolution, max-pooling, time-delay, P-norm,
ReLU, softmax, concat (side inputs) and length normalisation. Losses:
cross-entropy (gradient at the logits) and MSE.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from models.network import LayerKind, NetworkSpec, ParamStore, TrainConfig

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
NORM_FLOOR = 1e-8


# Fully-connected

def fc_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Affine map y = xW + b.

    Raises:
        ValueError: On shape mismatch
    """
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ValueError(f"fc shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    return x @ W + b


def fc_backward(x: np.ndarray, W: np.ndarray, gy: np.ndarray) -> tuple:
    """Return (grad x, grad W, grad b)."""
    return gy @ W.T, x.T @ gy, gy.sum(axis=0)


# Convolution and pooling on (B, C, H, W) tensors

def _conv_windows(x: np.ndarray, kernel: tuple, stride: tuple) -> np.ndarray:
    kh, kw = kernel
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ValueError(f"window {kernel} larger than input {x.shape[2:]}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    return windows[:, :, :: stride[0], :: stride[1]]


def conv2d_forward(
    x: np.ndarray,
    kernels: np.ndarray,
    bias: Optional[np.ndarray] = None,
    stride: tuple = (1, 1),
) -> np.ndarray:
    """
    Valid cross-correlation.

    Args:
        x: Input of shape (B, C, H, W)
        kernels: Weights of shape (C', C, kh, kw)
        bias: Optional (C',) bias
        stride: (sh, sw)

    Returns:
        np.ndarray: (B, C', floor((H-kh)/sh)+1, floor((W-kw)/sw)+1)

    Raises:
        ValueError: If the kernel is larger than the input or channels differ
    """
    if x.ndim != 4 or kernels.ndim != 4 or x.shape[1] != kernels.shape[1]:
        raise ValueError(f"conv shape mismatch: x {x.shape}, kernels {kernels.shape}")
    windows = _conv_windows(x, kernels.shape[2:], stride)
    y = np.tensordot(windows, kernels, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        y = y + bias[None, :, None, None]
    return np.ascontiguousarray(y)


def conv2d_backward(x: np.ndarray, kernels: np.ndarray, gy: np.ndarray, stride: tuple = (1, 1)) -> tuple:
    """Return (grad x, grad kernels, grad bias) of conv2d_forward."""
    kh, kw = kernels.shape[2:]
    windows = _conv_windows(x, (kh, kw), stride)
    g_kernels = np.tensordot(gy, windows, axes=([0, 2, 3], [0, 2, 3]))
    g_bias = gy.sum(axis=(0, 2, 3))
    gx = np.zeros_like(x)
    out_h, out_w = gy.shape[2:]
    for i in range(kh):
        rows = slice(i, i + stride[0] * (out_h - 1) + 1, stride[0])
        for j in range(kw):
            cols = slice(j, j + stride[1] * (out_w - 1) + 1, stride[1])
            contribution = np.tensordot(gy, kernels[:, :, i, j], axes=([1], [0]))
            gx[:, :, rows, cols] += contribution.transpose(0, 3, 1, 2)
    return gx, g_kernels, g_bias


def maxpool2d_forward(x: np.ndarray, pool: tuple, stride: Optional[tuple] = None) -> tuple:
    """
    Max-pooling over (B, C, H, W).

    Ties go to the lowest flat index inside the window.

    Returns:
        tuple: (pooled output, flat indices into x of each selected maximum)

    Raises:
        ValueError: If the window exceeds the input
    """
    stride = tuple(stride or pool)
    ph, pw = pool
    windows = _conv_windows(x, (ph, pw), stride)
    b, c, out_h, out_w = windows.shape[:4]
    flat = windows.reshape(b, c, out_h, out_w, ph * pw)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    rows = np.arange(out_h)[:, None] * stride[0] + arg // pw
    cols = np.arange(out_w)[None, :] * stride[1] + arg % pw
    base = (np.arange(b)[:, None, None, None] * c + np.arange(c)[None, :, None, None]) * x.shape[2]
    indices = (base + rows) * x.shape[3] + cols
    return np.ascontiguousarray(y), indices


def maxpool2d_backward(gy: np.ndarray, indices: np.ndarray, x_shape: tuple) -> np.ndarray:
    gx = np.zeros(int(np.prod(x_shape)), dtype=gy.dtype)
    np.add.at(gx, indices.ravel(), gy.ravel())
    return gx.reshape(x_shape)


# Time-delay

def segment_bounds(num_rows: int, segments: Optional[np.ndarray]) -> tuple:
    """Per-row (first row, last row) of the segment each row belongs to."""
    if segments is None:
        return np.zeros(num_rows, dtype=np.int64), np.full(num_rows, num_rows - 1, dtype=np.int64)
    segments = np.asarray(segments, dtype=np.int64)
    if segments[0] != 0 or segments[-1] != num_rows or np.any(np.diff(segments) <= 0):
        raise ValueError(f"segments {segments.tolist()} do not partition {num_rows} rows")
    lengths = np.diff(segments)
    starts = np.repeat(segments[:-1], lengths)
    ends = np.repeat(segments[1:] - 1, lengths)
    return starts, ends


def timedelay_indices(num_rows: int, offsets: tuple, segments: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Source rows of every offset, clamped inside each segment.

    Returns:
        np.ndarray: len(offsets) x num_rows integer indices
    """
    if not offsets:
        raise ValueError("time-delay layer needs at least one offset")
    starts, ends = segment_bounds(num_rows, segments)
    rows = np.arange(num_rows)
    return np.stack([np.clip(rows + o, starts, ends) for o in offsets])


def timedelay_forward(
    x: np.ndarray,
    offsets: tuple,
    W: np.ndarray,
    b: np.ndarray,
    segments: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Splice rows at the given offsets and apply an affine map.

    Args:
        x: T x D input rows in time order
        offsets: Frame offsets, e.g. (-2, 0, 2)
        W: (len(offsets) * D) x Dout weights
        b: Dout bias
        segments: Optional row boundaries of independent sequences

    Returns:
        np.ndarray: T x Dout
    """
    indices = timedelay_indices(x.shape[0], offsets, segments)
    return fc_forward(_gather_blocks(x, indices), W, b)


def _gather_blocks(x: np.ndarray, indices: np.ndarray) -> np.ndarray:
    return np.concatenate([x[idx] for idx in indices], axis=1)


def timedelay_backward(x: np.ndarray, indices: np.ndarray, W: np.ndarray, gy: np.ndarray) -> tuple:
    stacked = _gather_blocks(x, indices)
    g_stacked, gW, gb = fc_backward(stacked, W, gy)
    gx = np.zeros_like(x)
    width = x.shape[1]
    for k, idx in enumerate(indices):
        np.add.at(gx, idx, g_stacked[:, k * width:(k + 1) * width])
    return gx, gW, gb


# Elementwise and normalising layers

def pnorm_forward(x: np.ndarray, group: int, p: float = 2.0) -> np.ndarray:
    """
    P-norm over contiguous groups of units.

    Raises:
        ValueError: If the width is not divisible by the group size
    """
    if group <= 0 or x.shape[1] % group:
        raise ValueError(f"p-norm width {x.shape[1]} not divisible by group {group}")
    grouped = np.abs(x.reshape(x.shape[0], -1, group))
    return (grouped ** p).sum(axis=2) ** (1.0 / p)


def pnorm_backward(x: np.ndarray, y: np.ndarray, gy: np.ndarray, group: int, p: float = 2.0) -> np.ndarray:
    grouped = x.reshape(x.shape[0], -1, group)
    safe_y = np.where(y > 0, y, 1.0)
    scale = np.where(y > 0, gy / safe_y ** (p - 1.0), 0.0)
    gx = np.sign(grouped) * np.abs(grouped) ** (p - 1.0) * scale[..., None]
    return gx.reshape(x.shape)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return gy * (x > 0)


def softmax(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = x - x.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_backward(y: np.ndarray, gy: np.ndarray) -> np.ndarray:
    return y * (gy - (gy * y).sum(axis=1, keepdims=True))


def lengthnorm_forward(x: np.ndarray) -> tuple:
    """
    Scale rows to unit L2 norm.

    Rows with norm below 1e-8 become the unit vector e1.

    Returns:
        tuple: (normalised rows, row norms, boolean mask of fallback rows)
    """
    norms = np.linalg.norm(x, axis=1)
    degenerate = norms < NORM_FLOOR
    y = x / np.where(degenerate, 1.0, norms)[:, None]
    if np.any(degenerate):
        y[degenerate] = 0.0
        y[degenerate, 0] = 1.0
    return y, norms, degenerate


def lengthnorm_backward(y: np.ndarray, norms: np.ndarray, degenerate: np.ndarray, gy: np.ndarray) -> np.ndarray:
    safe = np.where(degenerate, 1.0, norms)[:, None]
    gx = (gy - y * (gy * y).sum(axis=1, keepdims=True)) / safe
    gx[degenerate] = 0.0
    return gx


# Losses

def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray) -> tuple:
    """
    Mean negative log-likelihood of the true classes.

    Args:
        probs: B x K softmax outputs
        labels: B integer class labels

    Returns:
        tuple: (loss, gradient at the logits = (probs - onehot) / B)
    """
    labels = np.asarray(labels, dtype=np.int64)
    batch = len(labels)
    if probs.shape[0] != batch:
        raise ValueError(f"{probs.shape[0]} predictions for {batch} labels")
    picked = probs[np.arange(batch), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
    grad = probs.copy()
    grad[np.arange(batch), labels] -= 1.0
    return loss, grad / batch


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple:
    """
    Mean squared elementwise error.

    Returns:
        tuple: (loss, gradient 2 (pred - target) / numel)
    """
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def frame_accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Share of rows whose argmax equals the label."""
    return float(np.mean(probs.argmax(axis=1) == np.asarray(labels)))


# Whole networks

@dataclass
class Trace:
    """
    Activations recorded by network_forward.

    Attributes:
        activations (list): activations[0] is the input, activations[i + 1]
                            the output of layer i
        caches (dict): Per-layer values needed by the backward pass
        side (dict): Side inputs consumed by concat layers
        segments (np.ndarray | None): Row boundaries used by time-delay layers
    """

    activations: list = field(default_factory=list)
    caches: dict = field(default_factory=dict)
    side: dict = field(default_factory=dict)
    segments: Optional[np.ndarray] = None

    @property
    def output(self) -> np.ndarray:
        return self.activations[-1]

    def layer_output(self, index: int) -> np.ndarray:
        return self.activations[index + 1]


def _params_dtype(params: ParamStore) -> np.dtype:
    for array in params.weights.values():
        return array.dtype
    return np.dtype(np.float64)


def network_forward(
    spec: NetworkSpec,
    params: ParamStore,
    x: np.ndarray,
    side: Optional[dict] = None,
    segments: Optional[np.ndarray] = None,
    upto: Optional[int] = None,
) -> Trace:
    """
    Run a network over a block of rows.

    Args:
        spec: Network topology
        params: Network parameters
        x: N x input_dim rows
        side: Conditioning rows for concat layers, keyed by source tag
        segments: Row boundaries for time-delay clamping
        upto: Stop after this layer index (inclusive)

    Returns:
        Trace: All intermediate activations

    Raises:
        ValueError: On shape mismatch or a missing side input
    """
    dtype = _params_dtype(params)
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"{spec.name} expects N x {spec.input_dim} input, got {x.shape}")
    side = {k: np.asarray(v, dtype=dtype) for k, v in (side or {}).items()}
    trace = Trace(activations=[x], side=side, segments=segments)
    last = len(spec.layers) - 1 if upto is None else upto

    h = x
    for idx, layer in enumerate(spec.layers[: last + 1]):
        kind = layer.kind
        if kind == LayerKind.FULLY_CONNECTED:
            h = fc_forward(h, params.weights[idx], params.biases[idx])
        elif kind == LayerKind.CONV2D:
            images = h.reshape(h.shape[0], *layer.in_shape)
            h = conv2d_forward(images, params.weights[idx], params.biases[idx], layer.stride).reshape(h.shape[0], -1)
        elif kind == LayerKind.MAXPOOL2D:
            images = h.reshape(h.shape[0], *layer.in_shape)
            pooled, indices = maxpool2d_forward(images, layer.kernel, layer.stride)
            trace.caches[idx] = indices
            h = pooled.reshape(h.shape[0], -1)
        elif kind == LayerKind.TIME_DELAY:
            indices = timedelay_indices(h.shape[0], layer.offsets, segments)
            trace.caches[idx] = indices
            h = fc_forward(_gather_blocks(h, indices), params.weights[idx], params.biases[idx])
        elif kind == LayerKind.PNORM:
            h = pnorm_forward(h, layer.group, layer.p)
        elif kind == LayerKind.RELU:
            h = relu_forward(h)
        elif kind == LayerKind.SOFTMAX:
            h = softmax(h)
        elif kind == LayerKind.CONCAT:
            blocks = [h]
            for tag, width in zip(layer.sources, layer.source_dims):
                if tag not in side:
                    raise ValueError(f"{spec.name} layer {idx} needs side input '{tag}'")
                if side[tag].shape != (h.shape[0], width):
                    raise ValueError(
                        f"side input '{tag}' has shape {side[tag].shape}, expected {(h.shape[0], width)}"
                    )
                blocks.append(side[tag])
            h = np.concatenate(blocks, axis=1)
        elif kind == LayerKind.LENGTH_NORM:
            h, norms, degenerate = lengthnorm_forward(h)
            trace.caches[idx] = (norms, degenerate)
        else:
            raise ValueError(f"unknown layer kind {kind}")
        trace.activations.append(h)
    return trace


def network_backward(
    spec: NetworkSpec,
    params: ParamStore,
    trace: Trace,
    output_grad: np.ndarray,
    from_logits: Optional[bool] = None,
) -> ParamStore:
    """
    Back-propagate a gradient through a recorded forward pass.

    Args:
        spec: Network topology
        params: Parameters used for the forward pass
        trace: Result of network_forward over the full network
        output_grad: Gradient at the network output, or at the softmax input
                     when from_logits is true
        from_logits: Skip the final softmax layer; defaults to true when the
                     network ends with softmax

    Returns:
        ParamStore: Gradients with the same shapes as params
    """
    if from_logits is None:
        from_logits = spec.ends_with_softmax
    last = len(trace.activations) - 2
    if from_logits:
        if spec.layers[last].kind != LayerKind.SOFTMAX:
            raise ValueError("from_logits requires a trace ending at a softmax layer")
        last -= 1

    grads = ParamStore()
    g = output_grad
    for idx in range(last, -1, -1):
        layer = spec.layers[idx]
        x = trace.activations[idx]
        y = trace.activations[idx + 1]
        kind = layer.kind
        if kind == LayerKind.FULLY_CONNECTED:
            g, grads.weights[idx], grads.biases[idx] = fc_backward(x, params.weights[idx], g)
        elif kind == LayerKind.CONV2D:
            images = x.reshape(x.shape[0], *layer.in_shape)
            gy = g.reshape(x.shape[0], *layer.out_shape)
            gx, grads.weights[idx], grads.biases[idx] = conv2d_backward(images, params.weights[idx], gy, layer.stride)
            g = gx.reshape(x.shape)
        elif kind == LayerKind.MAXPOOL2D:
            gy = g.reshape(x.shape[0], *layer.out_shape)
            g = maxpool2d_backward(gy, trace.caches[idx], (x.shape[0], *layer.in_shape)).reshape(x.shape)
        elif kind == LayerKind.TIME_DELAY:
            g, grads.weights[idx], grads.biases[idx] = timedelay_backward(x, trace.caches[idx], params.weights[idx], g)
        elif kind == LayerKind.PNORM:
            g = pnorm_backward(x, y, g, layer.group, layer.p)
        elif kind == LayerKind.RELU:
            g = relu_backward(x, g)
        elif kind == LayerKind.SOFTMAX:
            g = softmax_backward(y, g)
        elif kind == LayerKind.CONCAT:
            g = g[:, : layer.in_dim]
        elif kind == LayerKind.LENGTH_NORM:
            norms, degenerate = trace.caches[idx]
            g = lengthnorm_backward(y, norms, degenerate, g)
    return grads


def sgd_step(
    params: ParamStore,
    grads: ParamStore,
    velocity: ParamStore,
    cfg: TrainConfig,
    learning_rate: Optional[float] = None,
) -> ParamStore:
    """
    Momentum SGD update, in place: v <- momentum v - lr g; theta <- theta + v.

    Args:
        params: Parameters to update
        grads: Gradients of the loss
        velocity: Momentum buffers, updated in place
        cfg: Optimiser settings
        learning_rate: Current step size (defaults to cfg.learning_rate)

    Returns:
        ParamStore: The updated params
    """
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    for store, vel, grad in (
        (params.weights, velocity.weights, grads.weights),
        (params.biases, velocity.biases, grads.biases),
    ):
        for idx in store:
            vel[idx] *= cfg.momentum
            vel[idx] -= lr * grad[idx].astype(vel[idx].dtype, copy=False)
            store[idx] += vel[idx]
    return params


# Minibatch gradients

@dataclass
class Batch:
    """
    Rows of one minibatch.

    Attributes:
        x (np.ndarray): N x input_dim rows
        side (dict): Side inputs, N rows each
        segments (np.ndarray | None): Chunk boundaries
        loss_rows (np.ndarray): Rows that contribute to the loss
        targets (np.ndarray): Target per loss row (labels or regression rows)
    """

    x: np.ndarray
    side: dict
    segments: Optional[np.ndarray]
    loss_rows: np.ndarray
    targets: np.ndarray

    def split(self, parts: int) -> list:
        """Split at chunk boundaries into at most `parts` contiguous batches."""
        bounds = self.segments if self.segments is not None else np.array([0, self.x.shape[0]])
        n_chunks = len(bounds) - 1
        parts = max(1, min(parts, n_chunks))
        cut = np.linspace(0, n_chunks, parts + 1).round().astype(int)
        pieces = []
        for lo, hi in zip(cut[:-1], cut[1:]):
            start, stop = bounds[lo], bounds[hi]
            mask = (self.loss_rows >= start) & (self.loss_rows < stop)
            pieces.append(Batch(
                x=self.x[start:stop],
                side={k: v[start:stop] for k, v in self.side.items()},
                segments=None if self.segments is None else bounds[lo:hi + 1] - start,
                loss_rows=self.loss_rows[mask] - start,
                targets=self.targets[mask],
            ))
        return pieces


LossFn = Callable[[np.ndarray, np.ndarray], tuple]


def _batch_gradients(spec: NetworkSpec, params: ParamStore, batch: Batch, loss_fn: LossFn, scale: float) -> tuple:
    trace = network_forward(spec, params, batch.x, batch.side, batch.segments)
    output = trace.output
    loss, grad_rows = loss_fn(output[batch.loss_rows], batch.targets)
    output_grad = np.zeros_like(output)
    output_grad[batch.loss_rows] = grad_rows * scale
    grads = network_backward(spec, params, trace, output_grad)
    return loss * scale, grads, output[batch.loss_rows]


def compute_gradients(
    spec: NetworkSpec,
    params: ParamStore,
    batch: Batch,
    loss_fn: LossFn,
    threads: int = 1,
    executor: Optional[ThreadPoolExecutor] = None,
) -> tuple:
    """
    Loss and gradients of one minibatch, optionally split across workers.

    Each worker handles a contiguous share of the chunks; partial gradients are
    weighted by their share of loss rows and summed in worker order, so a given
    thread count always produces the same bytes.

    Args:
        spec: Network topology
        params: Current parameters
        batch: Minibatch rows
        loss_fn: (output rows, targets) -> (mean loss, gradient at those rows)
        threads: Number of workers
        executor: Optional pool reused across minibatches

    Returns:
        tuple: (mean loss, gradients, network output at the loss rows)
    """
    total = len(batch.loss_rows)
    if threads <= 1:
        return _batch_gradients(spec, params, batch, loss_fn, 1.0)

    pieces = [piece for piece in batch.split(threads) if len(piece.loss_rows)]

    def work(piece: Batch) -> tuple:
        return _batch_gradients(spec, params, piece, loss_fn, len(piece.loss_rows) / total)

    if executor is None:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, pieces))
    else:
        results = list(executor.map(work, pieces))

    loss = 0.0
    grads = ParamStore.zeros_like(results[0][1])
    for part_loss, part_grads, _ in results:
        loss += part_loss
        for idx, name, array in part_grads.arrays():
            target = grads.weights if name == "weight" else grads.biases
            target[idx] += array
    outputs = np.concatenate([r[2] for r in results], axis=0)
    return loss, grads, outputs


def gradient_check(
    spec: NetworkSpec,
    params: ParamStore,
    x: np.ndarray,
    loss: Callable[[np.ndarray], tuple],
    side: Optional[dict] = None,
    segments: Optional[np.ndarray] = None,
    num_checks: int = 40,
    eps: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-7,
) -> float:
    """
    Compare analytic gradients with central finite differences.

    Runs in float64 over a random subset of parameter entries.

    Args:
        spec: Network topology
        params: Parameters (copied to float64)
        x: Input rows
        loss: output -> (loss, gradient at output or logits)
        side: Side inputs
        segments: Row boundaries
        num_checks: Parameter entries to perturb
        eps: Finite-difference step
        seed: Seed of the entry selection
        floor: Denominator floor of the relative error

    Returns:
        float: Maximum relative error |a - n| / max(|a|, |n|, floor)
    """
    params = params.astype("float64")
    x = np.asarray(x, dtype=np.float64)

    def objective() -> float:
        return loss(network_forward(spec, params, x, side, segments).output)[0]

    trace = network_forward(spec, params, x, side, segments)
    _, output_grad = loss(trace.output)
    grads = network_backward(spec, params, trace, output_grad)

    entries = list(params.arrays())
    sizes = np.array([array.size for _, _, array in entries])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(offsets[-1], size=min(num_checks, int(offsets[-1])), replace=False)

    worst = 0.0
    for pick in np.sort(picks):
        which = int(np.searchsorted(offsets, pick, side="right") - 1)
        idx, name, array = entries[which]
        local = int(pick - offsets[which])
        analytic = (grads.weights if name == "weight" else grads.biases)[idx].flat[local]
        original = array.flat[local]
        array.flat[local] = original + eps
        plus = objective()
        array.flat[local] = original - eps
        minus = objective()
        array.flat[local] = original
        numeric = (plus - minus) / (2.0 * eps)
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, error)
    logger.debug("gradient check on %s: %d entries, max relative error %.3g", spec.name, len(picks), worst)
    return worst
