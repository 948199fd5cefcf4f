"""
Evaluation models for the CDF toolkit.

This module contains utterance- and speaker-level d-vectors, speaker
identification test conditions and confusion matrices.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd

UNIT_NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class DVector:
    """
    Length-normalised average of frame-level speaker factors.

    Attributes:
        owner (str): Speaker or utterance identifier
        vector (np.ndarray): Unit-norm vector
    """

    owner: str
    vector: np.ndarray

    def __post_init__(self) -> None:
        vector = np.asarray(self.vector, dtype=np.float64)
        if vector.ndim != 1:
            raise ValueError(f"d-vector must be 1-D, got shape {vector.shape}")
        norm = float(np.linalg.norm(vector))
        if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
            raise ValueError(f"d-vector {self.owner} has norm {norm:.8f}, expected 1")
        object.__setattr__(self, "vector", vector)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True)
class TrialCondition:
    """
    Speaker identification condition, e.g. 30 s enrollment against 20-frame tests.

    Attributes:
        enroll_seconds (float): Enrollment speech per speaker
        test_frames (int): Frames per test segment
    """

    enroll_seconds: float
    test_frames: int

    def __post_init__(self) -> None:
        if self.enroll_seconds <= 0 or self.test_frames <= 0:
            raise ValueError("enroll_seconds and test_frames must be positive")

    def enroll_frames(self, frame_shift_ms: float = 10.0) -> int:
        """Frames of enrollment speech at the given frame shift."""
        return int(round(self.enroll_seconds * 1000.0 / frame_shift_ms))

    @property
    def label(self) -> str:
        """Short name such as C(30-20f)."""
        return f"C({self.enroll_seconds:g}-{self.test_frames}f)"


@dataclass(frozen=True)
class ConfusionMatrix:
    """
    K x K counts; rows are true classes, columns predicted classes.

    Attributes:
        counts (np.ndarray): Non-negative integer counts
    """

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape {counts.shape}")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.round(counts)):
                raise ValueError("confusion matrix counts must be integers")
            counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise ValueError("confusion matrix counts must be non-negative")
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def true_positives(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    @property
    def false_positives(self) -> np.ndarray:
        """Per predicted class, the count of other classes predicted as it."""
        return self.counts.sum(axis=0) - np.diag(self.counts)

    def to_frame(self) -> pd.DataFrame:
        """
        Get the counts as a pandas DataFrame.

        Returns:
            pd.DataFrame: Index true_<k>, columns pred_<k>
        """
        k = self.num_classes
        return pd.DataFrame(
            self.counts,
            index=[f"true_{i}" for i in range(k)],
            columns=[f"pred_{i}" for i in range(k)],
        )
