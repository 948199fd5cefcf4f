"""
Network models for the CDF toolkit.

This module contains the declarative description of a network (LayerSpec,
NetworkSpec), its trainable parameters (ParamStore) and the optimiser settings
and per-epoch history of a training run (TrainConfig, TrainLog).
"""

from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterator, Optional

import numpy as np
import pandas as pd


class LayerKind(IntEnum):
    """Layer tag, also the byte written in CDFN files."""

    FULLY_CONNECTED = 0
    CONV2D = 1
    MAXPOOL2D = 2
    TIME_DELAY = 3
    PNORM = 4
    RELU = 5
    SOFTMAX = 6
    CONCAT = 7
    LENGTH_NORM = 8


PARAMETRIC_KINDS = (LayerKind.FULLY_CONNECTED, LayerKind.CONV2D, LayerKind.TIME_DELAY)


@dataclass(frozen=True)
class LayerSpec:
    """
    One layer of a NetworkSpec.

    Every layer maps a flat row (one frame) of in_dim values to out_dim values.
    Convolution and pooling layers reshape rows to (channels, height, width)
    internally using in_shape.

    Attributes:
        kind (LayerKind): Layer type
        in_dim (int): Input width
        out_dim (int): Output width
        in_shape (tuple): (C, H, W) view of the input for CONV2D / MAXPOOL2D
        out_channels (int): Feature maps produced by CONV2D
        kernel (tuple): (kh, kw) of CONV2D, pool window of MAXPOOL2D
        stride (tuple): (sh, sw) of CONV2D / MAXPOOL2D
        offsets (tuple): Frame offsets spliced by TIME_DELAY
        group (int): P-norm group size
        p (float): P-norm exponent
        sources (tuple): Side-input tags appended by CONCAT
        source_dims (tuple): Widths of the CONCAT side inputs
        tag (str): Name used to read activations (e.g. "feature")
    """

    kind: LayerKind
    in_dim: int
    out_dim: int
    in_shape: tuple = ()
    out_channels: int = 0
    kernel: tuple = ()
    stride: tuple = (1, 1)
    offsets: tuple = ()
    group: int = 0
    p: float = 2.0
    sources: tuple = ()
    source_dims: tuple = ()
    tag: str = ""

    @classmethod
    def fully_connected(cls, in_dim: int, out_dim: int, tag: str = "") -> "LayerSpec":
        return cls(LayerKind.FULLY_CONNECTED, in_dim, out_dim, tag=tag)

    @classmethod
    def conv2d(
        cls,
        in_shape: tuple,
        out_channels: int,
        kernel: tuple,
        stride: tuple = (1, 1),
        tag: str = "",
    ) -> "LayerSpec":
        c, h, w = in_shape
        kh, kw = kernel
        if kh > h or kw > w:
            raise ValueError(f"kernel {kernel} larger than input {in_shape[1:]}")
        oh, ow = (h - kh) // stride[0] + 1, (w - kw) // stride[1] + 1
        return cls(
            LayerKind.CONV2D, c * h * w, out_channels * oh * ow,
            in_shape=tuple(in_shape), out_channels=out_channels,
            kernel=tuple(kernel), stride=tuple(stride), tag=tag,
        )

    @classmethod
    def maxpool2d(
        cls, in_shape: tuple, pool: tuple, stride: Optional[tuple] = None, tag: str = ""
    ) -> "LayerSpec":
        stride = tuple(stride or pool)
        c, h, w = in_shape
        if pool[0] > h or pool[1] > w:
            raise ValueError(f"pool window {pool} exceeds input {in_shape[1:]}")
        oh, ow = (h - pool[0]) // stride[0] + 1, (w - pool[1]) // stride[1] + 1
        return cls(
            LayerKind.MAXPOOL2D, c * h * w, c * oh * ow,
            in_shape=tuple(in_shape), out_channels=c, kernel=tuple(pool), stride=stride, tag=tag,
        )

    @classmethod
    def time_delay(cls, in_dim: int, out_dim: int, offsets: tuple, tag: str = "") -> "LayerSpec":
        if not offsets:
            raise ValueError("time-delay layer needs at least one offset")
        return cls(LayerKind.TIME_DELAY, in_dim, out_dim, offsets=tuple(int(o) for o in offsets), tag=tag)

    @classmethod
    def pnorm(cls, in_dim: int, out_dim: int, p: float = 2.0, tag: str = "") -> "LayerSpec":
        if out_dim <= 0 or in_dim % out_dim:
            raise ValueError(f"p-norm input {in_dim} not divisible into {out_dim} groups")
        return cls(LayerKind.PNORM, in_dim, out_dim, group=in_dim // out_dim, p=float(p), tag=tag)

    @classmethod
    def relu(cls, dim: int, tag: str = "") -> "LayerSpec":
        return cls(LayerKind.RELU, dim, dim, tag=tag)

    @classmethod
    def softmax(cls, dim: int, tag: str = "output") -> "LayerSpec":
        return cls(LayerKind.SOFTMAX, dim, dim, tag=tag)

    @classmethod
    def concat(cls, in_dim: int, sources: tuple, source_dims: tuple, tag: str = "") -> "LayerSpec":
        if len(sources) != len(source_dims):
            raise ValueError("concat needs one width per source")
        return cls(
            LayerKind.CONCAT, in_dim, in_dim + sum(source_dims),
            sources=tuple(sources), source_dims=tuple(int(d) for d in source_dims), tag=tag,
        )

    @classmethod
    def length_norm(cls, dim: int, tag: str = "") -> "LayerSpec":
        return cls(LayerKind.LENGTH_NORM, dim, dim, tag=tag)

    @property
    def out_shape(self) -> tuple:
        """(C, H, W) of the output of a CONV2D or MAXPOOL2D layer."""
        _, h, w = self.in_shape
        kh, kw = self.kernel
        return (self.out_channels, (h - kh) // self.stride[0] + 1, (w - kw) // self.stride[1] + 1)

    @property
    def has_params(self) -> bool:
        return self.kind in PARAMETRIC_KINDS

    def param_shapes(self) -> tuple:
        """Shapes of (weight, bias) for parametric layers."""
        if self.kind == LayerKind.FULLY_CONNECTED:
            return (self.in_dim, self.out_dim), (self.out_dim,)
        if self.kind == LayerKind.TIME_DELAY:
            return (len(self.offsets) * self.in_dim, self.out_dim), (self.out_dim,)
        if self.kind == LayerKind.CONV2D:
            return (self.out_channels, self.in_shape[0], *self.kernel), (self.out_channels,)
        return ()

    def fans(self) -> tuple:
        """(fan_in, fan_out) used by Glorot initialisation."""
        weight_shape, _ = self.param_shapes()
        if self.kind == LayerKind.CONV2D:
            receptive = weight_shape[2] * weight_shape[3]
            return weight_shape[1] * receptive, weight_shape[0] * receptive
        return weight_shape


@dataclass(frozen=True)
class NetworkSpec:
    """
    Declarative topology of a feed-forward frame network.

    Attributes:
        name (str): Network name (e.g. "speaker")
        input_dim (int): Width of the spliced feature rows
        layers (tuple): LayerSpec sequence
        splice (tuple): (left, right) context spliced onto the raw features
    """

    name: str
    input_dim: int
    layers: tuple
    splice: tuple = (0, 0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "splice", tuple(self.splice))

    def check(self) -> None:
        """
        Verify that layer widths chain and kind-specific constraints hold.

        Raises:
            ValueError: Naming the first inconsistent layer
        """
        width = self.input_dim
        for idx, layer in enumerate(self.layers):
            if layer.in_dim != width:
                raise ValueError(
                    f"{self.name} layer {idx} ({layer.kind.name}) expects {layer.in_dim} inputs, "
                    f"predecessor gives {width}"
                )
            if layer.kind == LayerKind.PNORM and (layer.group <= 0 or layer.in_dim != layer.group * layer.out_dim):
                raise ValueError(f"{self.name} layer {idx}: p-norm groups do not tile the input")
            if layer.kind in (LayerKind.CONV2D, LayerKind.MAXPOOL2D):
                if int(np.prod(layer.in_shape)) != layer.in_dim:
                    raise ValueError(f"{self.name} layer {idx}: in_shape does not match in_dim")
                if int(np.prod(layer.out_shape)) != layer.out_dim:
                    raise ValueError(f"{self.name} layer {idx}: out_shape does not match out_dim")
            if layer.kind == LayerKind.CONCAT and layer.out_dim != layer.in_dim + sum(layer.source_dims):
                raise ValueError(f"{self.name} layer {idx}: concat width mismatch")
            if layer.kind in (LayerKind.RELU, LayerKind.SOFTMAX, LayerKind.LENGTH_NORM) and layer.out_dim != layer.in_dim:
                raise ValueError(f"{self.name} layer {idx}: elementwise layer changes width")
            width = layer.out_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim if self.layers else self.input_dim

    @property
    def conditioning(self) -> dict:
        """Side-input tags consumed by CONCAT layers, mapped to their widths."""
        tags = {}
        for layer in self.layers:
            if layer.kind == LayerKind.CONCAT:
                tags.update(zip(layer.sources, layer.source_dims))
        return tags

    @property
    def receptive_radius(self) -> int:
        """Frames of context each side added by the time-delay layers."""
        return sum(max(abs(o) for o in layer.offsets) for layer in self.layers if layer.kind == LayerKind.TIME_DELAY)

    @property
    def ends_with_softmax(self) -> bool:
        return bool(self.layers) and self.layers[-1].kind == LayerKind.SOFTMAX

    def layer_index(self, tag: str) -> int:
        """
        Index of the layer carrying a tag.

        Raises:
            KeyError: If no layer has the tag
        """
        for idx, layer in enumerate(self.layers):
            if layer.tag == tag:
                return idx
        raise KeyError(f"{self.name} has no layer tagged '{tag}'")


class ParamStore:
    """
    Trainable weights and biases of a network, keyed by layer index.

    The same structure holds gradients and optimiser velocities.
    """

    def __init__(self, weights: Optional[dict] = None, biases: Optional[dict] = None) -> None:
        self.weights: dict[int, np.ndarray] = dict(weights or {})
        self.biases: dict[int, np.ndarray] = dict(biases or {})

    @classmethod
    def init(cls, spec: NetworkSpec, seed: int, dtype: str = "float64") -> "ParamStore":
        """
        Glorot-uniform weights and zero biases from a seeded generator.

        Args:
            spec: Network topology
            seed: Seed of the initialisation stream
            dtype: Numpy dtype name of the arrays

        Returns:
            ParamStore: Freshly initialised parameters
        """
        rng = np.random.default_rng(seed)
        store = cls()
        for idx, layer in enumerate(spec.layers):
            if not layer.has_params:
                continue
            weight_shape, bias_shape = layer.param_shapes()
            fan_in, fan_out = layer.fans()
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            store.weights[idx] = rng.uniform(-limit, limit, size=weight_shape).astype(dtype)
            store.biases[idx] = np.zeros(bias_shape, dtype=dtype)
        return store

    @classmethod
    def zeros_like(cls, other: "ParamStore") -> "ParamStore":
        return cls(
            {k: np.zeros_like(v) for k, v in other.weights.items()},
            {k: np.zeros_like(v) for k, v in other.biases.items()},
        )

    def copy(self) -> "ParamStore":
        return ParamStore(
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.biases.items()},
        )

    def astype(self, dtype: str) -> "ParamStore":
        return ParamStore(
            {k: v.astype(dtype) for k, v in self.weights.items()},
            {k: v.astype(dtype) for k, v in self.biases.items()},
        )

    def arrays(self) -> Iterator[tuple]:
        """Yield (layer index, "weight" | "bias", array) in layer order."""
        for idx in sorted(self.weights):
            yield idx, "weight", self.weights[idx]
            yield idx, "bias", self.biases[idx]

    def num_parameters(self) -> int:
        return sum(array.size for _, _, array in self.arrays())

    def check(self, spec: NetworkSpec) -> None:
        """
        Verify that every parametric layer has arrays of the right shape.

        Raises:
            ValueError: On a missing or mis-shaped array
        """
        for idx, layer in enumerate(spec.layers):
            if not layer.has_params:
                continue
            weight_shape, bias_shape = layer.param_shapes()
            if idx not in self.weights or self.weights[idx].shape != weight_shape:
                raise ValueError(f"{spec.name} layer {idx}: weight shape does not match {weight_shape}")
            if idx not in self.biases or self.biases[idx].shape != bias_shape:
                raise ValueError(f"{spec.name} layer {idx}: bias shape does not match {bias_shape}")
            if not (np.all(np.isfinite(self.weights[idx])) and np.all(np.isfinite(self.biases[idx]))):
                raise ValueError(f"{spec.name} layer {idx}: non-finite parameters")

    def __repr__(self) -> str:
        return f"ParamStore(layers={sorted(self.weights)}, parameters={self.num_parameters()})"


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimiser and minibatch settings for one training run.

    Attributes:
        learning_rate (float): Initial SGD step size
        momentum (float): Momentum coefficient in [0, 1)
        minibatch_size (int): Loss frames per minibatch
        epochs (int): Maximum number of epochs
        seed (int): Seed of initialisation, splits and shuffling
        lr_halving_threshold (float): Minimum validation improvement before halving lr
        early_stop_patience (int): Consecutive validation-loss rises that stop training
        validation_fraction (float): Share of utterances held out for validation
        chunk_frames (int): Consecutive loss frames per chunk for time-delay networks
        frames_per_epoch (int | None): Optional cap on training frames per epoch
        dtype (str): Floating point type of parameters and activations
        threads (int): Gradient workers per minibatch
    """

    learning_rate: float = 0.01
    momentum: float = 0.9
    minibatch_size: int = 256
    epochs: int = 20
    seed: int = 0
    lr_halving_threshold: float = 1e-4
    early_stop_patience: int = 3
    validation_fraction: float = 0.1
    chunk_frames: int = 16
    frames_per_epoch: Optional[int] = None
    dtype: str = "float32"
    threads: int = 1

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.minibatch_size <= 0 or self.epochs <= 0 or self.chunk_frames <= 0:
            raise ValueError("minibatch_size, epochs and chunk_frames must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in [0, 1)")
        if self.threads <= 0:
            raise ValueError("threads must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype}")

    def with_overrides(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class EpochRecord:
    """Losses and accuracy after one epoch."""

    epoch: int
    train_loss: float
    valid_loss: float
    frame_accuracy: float
    learning_rate: float


@dataclass
class TrainLog:
    """
    Per-epoch history of a training run.

    Attributes:
        epochs (list[EpochRecord]): Records in epoch order
        stopped_early (bool): Training ended on the early-stop rule
        not_improved (bool): Final validation loss exceeds the first epoch's
    """

    epochs: list = field(default_factory=list)
    stopped_early: bool = False
    not_improved: bool = False

    def record(self, entry: EpochRecord) -> None:
        if self.epochs and entry.epoch <= self.epochs[-1].epoch:
            raise ValueError("epochs must be recorded in order")
        self.epochs.append(entry)

    def to_frame(self) -> pd.DataFrame:
        """
        Get the history as a pandas DataFrame.

        Returns:
            pd.DataFrame: Columns epoch, train_loss, valid_loss, frame_accuracy,
                          learning_rate
        """
        columns = ["epoch", "train_loss", "valid_loss", "frame_accuracy", "learning_rate"]
        return pd.DataFrame([[getattr(e, c) for c in columns] for e in self.epochs], columns=columns)
