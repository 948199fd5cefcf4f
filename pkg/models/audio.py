"""
Audio and feature models for the CDF toolkit.

This module contains the containers passed between the front-end (WAV reading,
spectrogram, filterbank) and the networks: AudioBuffer, FrameConfig and
FeatureMatrix.
"""

from dataclasses import dataclass
from enum import IntEnum

import numpy as np


class FeatureKind(IntEnum):
    """Kind tag stored in the CDFM file header."""

    LOG_FBANK = 0
    LOG_SPECTRUM = 1
    SPLICED = 2
    CONDITIONED = 3
    POWER_SPECTRUM = 4


@dataclass(frozen=True)
class AudioBuffer:
    """
    Mono audio samples with their sampling rate.

    Attributes:
        samples (np.ndarray): Real amplitudes in [-1, 1]
        sample_rate (int): Sampling rate in Hz
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioBuffer holds mono audio only")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_seconds(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameConfig:
    """
    Framing and filterbank settings of the front-end.

    Attributes:
        frame_length_ms (float): Analysis window length
        frame_shift_ms (float): Hop between consecutive frames
        fft_size (int): FFT length, a power of two
        n_mels (int): Number of triangular mel filters
        log_floor (float): Energy floor applied before every log
        low_freq_hz (float): Lower edge of the first mel filter
        pre_emphasis (float): First-order pre-emphasis coefficient (0 disables)
        dither (float): Std of seeded Gaussian dither added to samples (0 disables)
        dither_seed (int): Seed of the dither noise
        norm_means (bool): Subtract the per-utterance mean of network inputs
        norm_vars (bool): Divide network inputs by their per-utterance deviation
    """

    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    fft_size: int = 256
    n_mels: int = 40
    log_floor: float = 1e-10
    low_freq_hz: float = 20.0
    pre_emphasis: float = 0.0
    dither: float = 0.0
    dither_seed: int = 0
    norm_means: bool = True
    norm_vars: bool = True

    def __post_init__(self) -> None:
        if self.frame_shift_ms <= 0 or self.frame_length_ms <= 0:
            raise ValueError("frame length and shift must be positive")
        if self.frame_shift_ms > self.frame_length_ms:
            raise ValueError("frame_shift_ms must not exceed frame_length_ms")
        if self.fft_size <= 0 or self.fft_size & (self.fft_size - 1):
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if not 0 < self.n_mels <= self.fft_size // 2:
            raise ValueError(f"n_mels must be in [1, fft_size/2], got {self.n_mels}")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    def frame_length(self, sample_rate: int) -> int:
        """Samples per analysis frame at the given rate."""
        return int(round(self.frame_length_ms * sample_rate / 1000.0))

    def frame_step(self, sample_rate: int) -> int:
        """Samples between frame starts at the given rate."""
        return int(round(self.frame_shift_ms * sample_rate / 1000.0))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class FeatureMatrix:
    """
    Per-frame features of one utterance.

    Attributes:
        data (np.ndarray): T x D matrix, one row per frame
        frame_shift_ms (float): Frame period
        kind (FeatureKind): What the columns hold
    """

    data: np.ndarray
    frame_shift_ms: float = 10.0
    kind: FeatureKind = FeatureKind.LOG_FBANK

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"feature matrix must be T x D with T >= 1, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature matrix contains non-finite values")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "kind", FeatureKind(self.kind))

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]
