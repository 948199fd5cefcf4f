"""
Factor models for the CDF toolkit.

This module contains the per-frame factor streams produced by the cascade and
the model bundles that produce or consume them.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np
import pandas as pd

from models.audio import FrameConfig
from models.network import NetworkSpec, ParamStore

SPEAKER_FACTOR_DIM = 40
EMOTION_FACTOR_DIM = 40


class FactorKind(IntEnum):
    """Factor tag, also the byte written in CDFF files."""

    LINGUISTIC = 0
    SPEAKER = 1
    EMOTION = 2

    @property
    def tag(self) -> str:
        """Side-input tag under which the factor feeds a later network."""
        return self.name.lower()


@dataclass(frozen=True)
class FactorStream:
    """
    Per-frame factor matrix of one utterance.

    Attributes:
        utterance_id (str): Utterance the frames belong to
        kind (FactorKind): Which factor the rows hold
        data (np.ndarray): T x D factor rows
    """

    utterance_id: str
    kind: FactorKind
    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"factor stream must be T x D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"factor stream {self.utterance_id} has non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "kind", FactorKind(self.kind))

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class Network:
    """A topology together with its parameters."""

    spec: NetworkSpec
    params: ParamStore

    def __post_init__(self) -> None:
        self.spec.check()
        self.params.check(self.spec)


@dataclass(frozen=True)
class FactorDims:
    """
    Class counts and factor widths of a cascade.

    Attributes:
        phones (int): Phone classes P (also the linguistic factor width)
        speakers (int): Training speakers S
        emotions (int): Emotion classes E
        speaker_dim (int): Speaker factor width
        emotion_dim (int): Emotion factor width
    """

    phones: int
    speakers: int
    emotions: int
    speaker_dim: int = SPEAKER_FACTOR_DIM
    emotion_dim: int = EMOTION_FACTOR_DIM

    def width(self, kind: FactorKind) -> int:
        return {
            FactorKind.LINGUISTIC: self.phones,
            FactorKind.SPEAKER: self.speaker_dim,
            FactorKind.EMOTION: self.emotion_dim,
        }[kind]


@dataclass
class ReconModel:
    """
    Three spectrum generators whose outputs add up in the log domain.

    Attributes:
        gen_q (Network): Linguistic component generator
        gen_s (Network): Speaker component generator
        gen_e (Network): Emotion component generator
        spectrum_dim (int): Width of every generator output
        context (int): Symmetric splice applied to each factor stream
    """

    gen_q: Network
    gen_s: Network
    gen_e: Network
    spectrum_dim: int
    context: int = 4

    def __post_init__(self) -> None:
        for name, gen in self.generators().items():
            if gen.spec.output_dim != self.spectrum_dim:
                raise ValueError(f"generator {name} outputs {gen.spec.output_dim} bins, expected {self.spectrum_dim}")

    def generators(self) -> dict:
        return {"q": self.gen_q, "s": self.gen_s, "e": self.gen_e}


@dataclass
class CascadeModelSet:
    """
    Trained networks of one cascade configuration.

    Attributes:
        dims (FactorDims): Class counts and factor widths
        linguistic (Network | None): Phone posterior network
        speaker (Network | None): Speaker network (IDF or CDF)
        emotion (Network | None): Emotion network
        recon (ReconModel | None): Spectrum generators
        frame_cfg (FrameConfig): Front-end settings the networks were trained with
    """

    dims: FactorDims
    linguistic: Optional[Network] = None
    speaker: Optional[Network] = None
    emotion: Optional[Network] = None
    recon: Optional[ReconModel] = None
    frame_cfg: FrameConfig = field(default_factory=FrameConfig)


@dataclass
class ReconReport:
    """
    Outcome of spectrum reconstruction over a set of utterances.

    Attributes:
        frame_mse (float): Mean squared log-magnitude error per bin
        residual_mean (float): Mean of target minus reconstruction
        residual_var (float): Variance of target minus reconstruction
        utterance_id (str): Utterance whose spectrograms are kept
        original (np.ndarray | None): T x D target log-spectrum
        reconstruction (np.ndarray | None): T x D sum of components
        components (dict): "q", "s", "e" -> T x D component log-spectra
        per_utterance (pd.DataFrame | None): utterance_id, frames, mse
        train_log (TrainLog | None): History of the run that produced the model
    """

    frame_mse: float
    residual_mean: float
    residual_var: float
    utterance_id: str = ""
    original: Optional[np.ndarray] = None
    reconstruction: Optional[np.ndarray] = None
    components: dict = field(default_factory=dict)
    per_utterance: Optional[pd.DataFrame] = None
    train_log: Optional[object] = None

    def __post_init__(self) -> None:
        if self.frame_mse < 0:
            raise ValueError("frame MSE cannot be negative")

    def summary(self) -> pd.DataFrame:
        """
        Get the scalar results as (metric, value) rows.

        Returns:
            pd.DataFrame: Columns metric, value
        """
        return pd.DataFrame({
            "metric": ["frame_mse", "residual_mean", "residual_var"],
            "value": [self.frame_mse, self.residual_mean, self.residual_var],
        })
