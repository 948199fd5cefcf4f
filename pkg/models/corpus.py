"""
Corpus models for the CDF toolkit.

This module contains the synthetic corpus generation settings and the manifest
that lists utterances, their labels and their feature files.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

MANIFEST_COLUMNS = ["id", "speaker", "emotion", "frames", "fbank", "spectrum", "phones", "subset"]
SUBSETS = ("train", "test")


@dataclass(frozen=True)
class GenConfig:
    """
    Settings of the synthetic corpus.

    Every frame's log-spectrum is phone template + speaker template + emotion
    template + N(0, sigma^2) noise per bin.

    Attributes:
        phones (int): Phone classes P
        speakers (int): Speakers S
        emotions (int): Emotions E
        spectrum_dim (int): Log-spectrum bins (fft_size / 2 + 1)
        utterances_per_pair (int): Training utterances per (speaker, emotion)
        test_utterances_per_pair (int): Held-out utterances per (speaker, emotion)
        min_frames (int): Shortest utterance
        max_frames (int): Longest utterance
        sigma (float): Residual standard deviation in log units
        alpha_q (float): Scale of phone templates
        alpha_s (float): Scale of speaker templates
        alpha_e (float): Scale of emotion templates
        min_phone_frames (int): Minimum phone duration
        speaker_emotion_interaction (bool): Add a speaker-specific emotion offset
        sample_rate (int): Rate the bins refer to (for the filterbank)
        seed (int): Master seed
    """

    phones: int = 10
    speakers: int = 20
    emotions: int = 4
    spectrum_dim: int = 129
    utterances_per_pair: int = 8
    test_utterances_per_pair: int = 4
    min_frames: int = 200
    max_frames: int = 400
    sigma: float = 0.1
    alpha_q: float = 1.0
    alpha_s: float = 0.5
    alpha_e: float = 0.3
    min_phone_frames: int = 5
    speaker_emotion_interaction: bool = False
    sample_rate: int = 8000
    seed: int = 0

    def __post_init__(self) -> None:
        counts = (self.phones, self.speakers, self.emotions, self.spectrum_dim,
                  self.utterances_per_pair, self.min_frames, self.min_phone_frames)
        if min(counts) <= 0:
            raise ValueError("corpus counts must be positive")
        if self.test_utterances_per_pair < 0:
            raise ValueError("test_utterances_per_pair cannot be negative")
        if self.max_frames < self.min_frames:
            raise ValueError("max_frames must be at least min_frames")
        if self.min_frames < self.min_phone_frames:
            raise ValueError("utterances must hold at least one phone")
        if self.sigma < 0 or min(self.alpha_q, self.alpha_s, self.alpha_e) < 0:
            raise ValueError("sigma and template scales must be non-negative")
        if (self.spectrum_dim - 1) & (self.spectrum_dim - 2):
            raise ValueError("spectrum_dim must be fft_size / 2 + 1 for a power-of-two fft_size")

    @property
    def fft_size(self) -> int:
        return 2 * (self.spectrum_dim - 1)


@dataclass(frozen=True)
class Templates:
    """
    Ground-truth component log-spectra of a synthetic corpus.

    Attributes:
        phone (np.ndarray): P x D phone templates
        speaker (np.ndarray): S x D speaker templates
        emotion (np.ndarray): E x D emotion templates
        interaction (np.ndarray | None): S x E x D speaker-specific emotion offsets
    """

    phone: np.ndarray
    speaker: np.ndarray
    emotion: np.ndarray
    interaction: Optional[np.ndarray] = None

    def frame_means(self, phones: np.ndarray, speaker: int, emotion: int) -> np.ndarray:
        """Noise-free log-spectrum of each frame."""
        means = self.phone[phones] + self.speaker[speaker] + self.emotion[emotion]
        if self.interaction is not None:
            means = means + self.interaction[speaker, emotion]
        return means


@dataclass(frozen=True)
class UtteranceRecord:
    """
    One manifest line.

    Attributes:
        utt_id (str): Utterance identifier
        speaker (int): Speaker label
        emotion (int): Emotion label
        num_frames (int): Frames in each feature file
        fbank_path (Path): LogFbank CDFM file
        spectrum_path (Path): LogSpectrum CDFM file
        phones_path (Path | None): Per-frame phone labels (u16)
        subset (str): "train" or "test"
    """

    utt_id: str
    speaker: int
    emotion: int
    num_frames: int
    fbank_path: Path
    spectrum_path: Path
    phones_path: Optional[Path] = None
    subset: str = "train"


@dataclass
class CorpusManifest:
    """
    Utterances of a corpus with labels and feature locations.

    Attributes:
        records (list[UtteranceRecord]): Utterances in manifest order
        root (Path): Directory the manifest lives in
        config (GenConfig | None): Generation settings when synthetic
        templates (Templates | None): Ground truth when synthetic
    """

    records: list = field(default_factory=list)
    root: Path = Path(".")
    config: Optional[GenConfig] = None
    templates: Optional[Templates] = None

    def __post_init__(self) -> None:
        seen = set()
        for rec in self.records:
            if rec.utt_id in seen:
                raise ValueError(f"duplicate utterance id {rec.utt_id}")
            seen.add(rec.utt_id)
            if rec.subset not in SUBSETS:
                raise ValueError(f"{rec.utt_id}: unknown subset '{rec.subset}'")
            if self.config is not None:
                if not 0 <= rec.speaker < self.config.speakers or not 0 <= rec.emotion < self.config.emotions:
                    raise ValueError(f"{rec.utt_id}: label out of range")

    def subset(self, name: str) -> list:
        """Records of one subset, in manifest order."""
        return [rec for rec in self.records if rec.subset == name]

    def get(self, utt_id: str) -> UtteranceRecord:
        for rec in self.records:
            if rec.utt_id == utt_id:
                return rec
        raise KeyError(f"utterance '{utt_id}' is not in the manifest")

    @property
    def num_speakers(self) -> int:
        if self.config is not None:
            return self.config.speakers
        return len({rec.speaker for rec in self.records})

    @property
    def num_emotions(self) -> int:
        if self.config is not None:
            return self.config.emotions
        return len({rec.emotion for rec in self.records})

    def to_frame(self) -> pd.DataFrame:
        """
        Get the manifest as a pandas DataFrame with paths relative to root.

        Returns:
            pd.DataFrame: Columns id, speaker, emotion, frames, fbank, spectrum,
                          phones, subset
        """
        def rel(path: Optional[Path]) -> str:
            if path is None:
                return ""
            try:
                return Path(path).relative_to(self.root).as_posix()
            except ValueError:
                return Path(path).as_posix()

        rows = [
            [rec.utt_id, rec.speaker, rec.emotion, rec.num_frames,
             rel(rec.fbank_path), rel(rec.spectrum_path), rel(rec.phones_path), rec.subset]
            for rec in self.records
        ]
        return pd.DataFrame(rows, columns=MANIFEST_COLUMNS)
