"""
Training loop shared by every network in the toolkit.

Minibatches are built from chunks of consecutive frames. Networks without
time-delay layers use one-frame chunks, which amounts to shuffling frames
globally. Networks with time-delay layers get chunks of `chunk_frames` loss
frames padded on both sides by the receptive radius; padding rows past an
utterance end replicate the boundary frame, and only the unpadded frames
enter the loss.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

import numpy as np
from tqdm import tqdm

from models.network import EpochRecord, NetworkSpec, ParamStore, TrainConfig, TrainLog
from utils.nn import Batch, compute_gradients, cross_entropy_loss, network_forward, sgd_step

logger = logging.getLogger(__name__)

EVAL_MAX_ROWS = 4096


@dataclass
class FrameDataset:
    """
    Frame-aligned sequences used for training or evaluation.

    Attributes:
        inputs (list): Per-sequence T x D network input rows
        targets (list): Per-sequence targets (T labels or T x D rows)
        sides (list): Per-sequence dicts of T x Dc side inputs
        ids (list): Sequence identifiers
    """

    inputs: list = field(default_factory=list)
    targets: list = field(default_factory=list)
    sides: list = field(default_factory=list)
    ids: list = field(default_factory=list)

    def add(self, utt_id: str, x: np.ndarray, target: np.ndarray, side: Optional[dict] = None) -> None:
        if len(target) != x.shape[0]:
            raise ValueError(f"{utt_id}: {x.shape[0]} input rows but {len(target)} targets")
        for tag, rows in (side or {}).items():
            if rows.shape[0] != x.shape[0]:
                raise ValueError(f"{utt_id}: side input '{tag}' has {rows.shape[0]} rows, expected {x.shape[0]}")
        self.ids.append(utt_id)
        self.inputs.append(x)
        self.targets.append(target)
        self.sides.append(dict(side or {}))

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def num_frames(self) -> int:
        return sum(x.shape[0] for x in self.inputs)


def plan_chunks(lengths: list, chunk_frames: int) -> np.ndarray:
    """
    Cut every sequence into runs of at most chunk_frames loss frames.

    Returns:
        np.ndarray: K x 3 array of (sequence index, first frame, end frame)
    """
    chunks = []
    for seq, length in enumerate(lengths):
        for start in range(0, length, chunk_frames):
            chunks.append((seq, start, min(start + chunk_frames, length)))
    return np.asarray(chunks, dtype=np.int64).reshape(-1, 3)


def assemble_batch(data: FrameDataset, chunks: np.ndarray, radius: int) -> Batch:
    """
    Gather padded chunks into one minibatch.

    Args:
        data: Source sequences
        chunks: Rows of (sequence, first frame, end frame)
        radius: Context frames added on each side

    Returns:
        Batch: Rows, side inputs, chunk boundaries, loss rows and targets
    """
    xs, sides, targets, loss_rows = [], [], [], []
    bounds = [0]
    tags = list(data.sides[int(chunks[0][0])]) if len(chunks) else []
    for seq, start, stop in chunks:
        length = data.inputs[seq].shape[0]
        rows = np.clip(np.arange(start - radius, stop + radius), 0, length - 1)
        xs.append(data.inputs[seq][rows])
        sides.append({tag: data.sides[seq][tag][rows] for tag in tags})
        targets.append(data.targets[seq][start:stop])
        loss_rows.append(bounds[-1] + radius + np.arange(stop - start))
        bounds.append(bounds[-1] + len(rows))
    return Batch(
        x=np.concatenate(xs, axis=0),
        side={tag: np.concatenate([s[tag] for s in sides], axis=0) for tag in tags},
        segments=np.asarray(bounds, dtype=np.int64) if radius > 0 else None,
        loss_rows=np.concatenate(loss_rows),
        targets=np.concatenate(targets, axis=0),
    )


def epoch_minibatches(
    data: FrameDataset, cfg: TrainConfig, radius: int, epoch: int
) -> Iterator[np.ndarray]:
    """
    Shuffle chunks with the run seed and group them into minibatches.

    Yields:
        np.ndarray: Chunk rows of one minibatch
    """
    chunk_frames = cfg.chunk_frames if radius > 0 else 1
    chunks = plan_chunks([x.shape[0] for x in data.inputs], chunk_frames)
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, epoch)))
    order = rng.permutation(len(chunks))
    if cfg.frames_per_epoch is not None:
        frames = np.cumsum(chunks[order, 2] - chunks[order, 1])
        order = order[: max(1, int(np.searchsorted(frames, cfg.frames_per_epoch)) + 1)]
    per_batch = max(1, cfg.minibatch_size // chunk_frames)
    for start in range(0, len(order), per_batch):
        yield chunks[order[start:start + per_batch]]


def forward_sequences(
    spec: NetworkSpec,
    params: ParamStore,
    inputs: list,
    sides: Optional[list] = None,
    upto: Optional[int] = None,
    max_rows: int = EVAL_MAX_ROWS,
) -> list:
    """
    Run a network over whole sequences, grouping them to bound memory.

    Time-delay layers clamp at each sequence's own first and last frame.

    Returns:
        list: Output rows per sequence, in input order
    """
    sides = sides or [{} for _ in inputs]
    outputs = []
    group, group_sides, rows = [], [], 0

    def flush() -> None:
        if not group:
            return
        bounds = np.concatenate([[0], np.cumsum([x.shape[0] for x in group])])
        side = {tag: np.concatenate([s[tag] for s in group_sides]) for tag in group_sides[0]}
        out = network_forward(spec, params, np.concatenate(group), side, bounds, upto).output
        outputs.extend(np.split(out, bounds[1:-1]))
        group.clear()
        group_sides.clear()

    for x, side in zip(inputs, sides):
        if group and rows + x.shape[0] > max_rows:
            flush()
            rows = 0
        group.append(x)
        group_sides.append(side)
        rows += x.shape[0]
    flush()
    return outputs


def evaluate_classifier(spec: NetworkSpec, params: ParamStore, data: FrameDataset) -> tuple:
    """
    Cross-entropy and frame accuracy over whole sequences.

    Returns:
        tuple: (mean loss, frame accuracy)
    """
    outputs = forward_sequences(spec, params, data.inputs, data.sides)
    probs = np.concatenate(outputs)
    labels = np.concatenate(data.targets)
    loss, _ = cross_entropy_loss(probs, labels)
    return loss, float(np.mean(probs.argmax(axis=1) == labels))


def run_epochs(
    cfg: TrainConfig,
    train_epoch: Callable[[int, float], tuple],
    validate: Callable[[], tuple],
    label: str,
) -> TrainLog:
    """
    Epoch loop with learning-rate halving and early stopping.

    The learning rate halves when validation loss improves on the best value by
    less than cfg.lr_halving_threshold; training stops after
    cfg.early_stop_patience consecutive rises of validation loss.

    Args:
        cfg: Optimiser settings
        train_epoch: (epoch, learning rate) -> (train loss, train accuracy)
        validate: () -> (validation loss, validation accuracy)
        label: Name used in log messages

    Returns:
        TrainLog: One record per completed epoch
    """
    log = TrainLog()
    lr = cfg.learning_rate
    best = np.inf
    previous = np.inf
    rises = 0
    for epoch in range(1, cfg.epochs + 1):
        train_loss, _ = train_epoch(epoch, lr)
        valid_loss, valid_acc = validate()
        log.record(EpochRecord(epoch, train_loss, valid_loss, valid_acc, lr))
        logger.info(
            "%s epoch %d: train %.4f valid %.4f acc %.4f lr %.3g",
            label, epoch, train_loss, valid_loss, valid_acc, lr,
        )
        if not np.isfinite(train_loss):
            raise FloatingPointError(f"{label}: training diverged at epoch {epoch}")

        rises = rises + 1 if valid_loss > previous else 0
        previous = valid_loss
        if rises >= cfg.early_stop_patience:
            log.stopped_early = True
            logger.info("%s: validation loss rose %d epochs in a row, stopping", label, rises)
            break
        if best - valid_loss < cfg.lr_halving_threshold:
            lr /= 2.0
        best = min(best, valid_loss)

    if log.epochs and log.epochs[-1].valid_loss > log.epochs[0].valid_loss:
        log.not_improved = True
        logger.warning("%s: final validation loss %.4f is above the first epoch's %.4f",
                       label, log.epochs[-1].valid_loss, log.epochs[0].valid_loss)
    return log


def train_classifier(
    spec: NetworkSpec,
    params: ParamStore,
    train: FrameDataset,
    valid: FrameDataset,
    cfg: TrainConfig,
    label: Optional[str] = None,
) -> TrainLog:
    """
    Train a softmax network with cross-entropy and momentum SGD, in place.

    Args:
        spec: Network topology ending in softmax
        params: Initial parameters, updated in place
        train: Training sequences with integer frame labels
        valid: Validation sequences (training data is reused when empty)
        cfg: Optimiser settings
        label: Name used in log messages

    Returns:
        TrainLog: Per-epoch history
    """
    label = label or spec.name
    radius = spec.receptive_radius
    velocity = ParamStore.zeros_like(params)
    held_out = valid if len(valid) else train
    if not len(valid):
        logger.warning("%s: no validation sequences, validating on training data", label)

    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:

        def train_epoch(epoch: int, lr: float) -> tuple:
            total_loss, total_correct, total_rows = 0.0, 0, 0
            batches = tqdm(
                list(epoch_minibatches(train, cfg, radius, epoch)),
                desc=f"{label} epoch {epoch}", leave=False, disable=None,
            )
            for chunks in batches:
                batch = assemble_batch(train, chunks, radius)
                loss, grads, probs = compute_gradients(
                    spec, params, batch, cross_entropy_loss, cfg.threads, pool
                )
                sgd_step(params, grads, velocity, cfg, lr)
                rows = len(batch.loss_rows)
                total_loss += loss * rows
                total_correct += int(np.sum(probs.argmax(axis=1) == batch.targets))
                total_rows += rows
            return total_loss / total_rows, total_correct / total_rows

        return run_epochs(cfg, train_epoch, lambda: evaluate_classifier(spec, params, held_out), label)
