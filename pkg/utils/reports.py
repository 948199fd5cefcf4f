"""
Report emission for the CDF toolkit.

Tables go out as CSV through pandas; spectrograms go out as binary PGM (P5)
grayscale images, one row per frequency bin with low frequencies at the
bottom and one column per frame.
"""

import logging
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

PANEL_GAP = 2


def write_table(frame: pd.DataFrame, path: PathLike, index: bool = False) -> Path:
    """
    Write a DataFrame as CSV with a fixed float format.

    Args:
        frame: Table to write
        path: Destination file
        index: Keep the DataFrame index as the first column

    Returns:
        Path: The written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, float_format="%.6f", lineterminator="\n")
    logger.info("wrote %s", path)
    return path


def spectrogram_image(log_spectrum: np.ndarray) -> np.ndarray:
    """
    Map a T x D log-spectrogram to 8-bit gray levels.

    Values are min-max scaled to 0-255 within the image; a constant
    spectrogram maps to 0.

    Returns:
        np.ndarray: D x T uint8 image, frequency bin 0 in the bottom row
    """
    values = np.asarray(log_spectrum, dtype=np.float64).T[::-1]
    low, high = float(values.min()), float(values.max())
    if high - low <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round(255.0 * (values - low) / (high - low)).astype(np.uint8)


def write_pgm(image: np.ndarray, path: PathLike) -> Path:
    """
    Write a 2-D uint8 array as a binary PGM file.

    Returns:
        Path: The written file
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"PGM needs a 2-D uint8 image, got {image.dtype} {image.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = image.shape
    path.write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + image.tobytes())
    return path


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary PGM written by write_pgm."""
    payload = Path(path).read_bytes()
    parts = payload.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    width, height = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8)[: width * height].reshape(height, width)


def stack_panels(images: Sequence[np.ndarray], gap: int = PANEL_GAP) -> np.ndarray:
    """
    Stack images of equal width vertically with white separator rows.

    Returns:
        np.ndarray: uint8 image
    """
    width = images[0].shape[1]
    separator = np.full((gap, width), 255, dtype=np.uint8)
    rows = []
    for number, image in enumerate(images):
        if image.shape[1] != width:
            raise ValueError("panels must share the frame count")
        if number:
            rows.append(separator)
        rows.append(image)
    return np.concatenate(rows, axis=0)
