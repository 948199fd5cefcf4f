"""
Front-end signal processing for the CDF toolkit.

This module turns audio into the network inputs and the reconstruction target:
- 16-bit PCM WAV reading and writing
- Hamming-windowed power spectrogram
- Log mel filterbank (HTK mel scale, triangular filters)
- Log magnitude spectrum
- Frame splicing with edge replication and per-utterance CMVN
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np
import soundfile as sf

from models.audio import AudioBuffer, FeatureKind, FeatureMatrix, FrameConfig
from utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

PCM_SCALE = 32768.0


def read_wav(path: Union[str, Path]) -> AudioBuffer:
    """
    Read a mono 16-bit PCM WAV file.

    Args:
        path: WAV file location

    Returns:
        AudioBuffer: Samples divided by 32768 and the header sample rate

    Raises:
        FileNotFoundError: If the file does not exist
        DataError: If the file is not mono 16-bit PCM WAV
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"WAV file not found: {path}")
    try:
        info = sf.info(str(path))
    except RuntimeError as exc:
        raise DataError(f"{path}: not a readable audio file ({exc})") from exc
    if info.format != "WAV":
        raise DataError(f"{path}: expected RIFF WAV, got {info.format}")
    if info.subtype != "PCM_16":
        raise DataError(f"{path}: expected 16-bit PCM, got {info.subtype}")
    if info.channels != 1:
        raise DataError(f"{path}: expected mono audio, got {info.channels} channels")
    samples, sample_rate = sf.read(str(path), dtype="int16", always_2d=False)
    return AudioBuffer(samples.astype(np.float64) / PCM_SCALE, int(sample_rate))


def write_wav(audio: AudioBuffer, path: Union[str, Path]) -> None:
    """
    Write audio as mono 16-bit PCM WAV.

    Samples are scaled by 32768 and clipped to the int16 range, so values read
    by read_wav are written back unchanged.

    Args:
        audio: Samples to write
        path: Destination file
    """
    pcm = np.clip(np.round(audio.samples * PCM_SCALE), -32768, 32767).astype(np.int16)
    sf.write(str(path), pcm, audio.sample_rate, subtype="PCM_16", format="WAV")


def _prepare_samples(audio: AudioBuffer, cfg: FrameConfig) -> np.ndarray:
    samples = audio.samples
    if cfg.dither > 0:
        rng = np.random.default_rng(cfg.dither_seed)
        samples = samples + cfg.dither * rng.standard_normal(len(samples))
    if cfg.pre_emphasis > 0:
        samples = np.concatenate([samples[:1], samples[1:] - cfg.pre_emphasis * samples[:-1]])
    return samples


def power_spectrogram(audio: AudioBuffer, cfg: FrameConfig) -> FeatureMatrix:
    """
    Compute |FFT|^2 of Hamming-windowed frames.

    T = 1 + floor((N - frame_len) / frame_step), no padding at the end.

    Args:
        audio: Input audio
        cfg: Framing configuration

    Returns:
        FeatureMatrix: T x (fft_size/2 + 1) linear power values

    Raises:
        DataError: If the audio is shorter than one frame or the frame does not
                   fit in the FFT
    """
    frame_len = cfg.frame_length(audio.sample_rate)
    step = cfg.frame_step(audio.sample_rate)
    if frame_len > cfg.fft_size:
        raise DataError(
            f"frame of {frame_len} samples does not fit fft_size {cfg.fft_size} "
            f"at {audio.sample_rate} Hz"
        )
    if len(audio) < frame_len:
        raise DataError(f"audio has {len(audio)} samples, shorter than one frame ({frame_len})")

    samples = _prepare_samples(audio, cfg)
    num_frames = 1 + (len(samples) - frame_len) // step
    frames = np.lib.stride_tricks.sliding_window_view(samples, frame_len)[::step][:num_frames]
    spectrum = np.fft.rfft(frames * np.hamming(frame_len), n=cfg.fft_size, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    return FeatureMatrix(power, cfg.frame_shift_ms, FeatureKind.POWER_SPECTRUM)


def hz_to_mel(freq: np.ndarray) -> np.ndarray:
    """HTK mel scale: 1127 ln(1 + f/700)."""
    return 1127.0 * np.log1p(np.asarray(freq, dtype=np.float64) / 700.0)


def mel_to_hz(mel: np.ndarray) -> np.ndarray:
    """Inverse of hz_to_mel."""
    return 700.0 * np.expm1(np.asarray(mel, dtype=np.float64) / 1127.0)


def mel_filterbank(cfg: FrameConfig, sample_rate: int) -> np.ndarray:
    """
    Build triangular mel filters over the FFT bins.

    Filter edges are equally spaced on the mel scale between cfg.low_freq_hz and
    Nyquist; each triangle is evaluated at the bin centre frequencies.

    Args:
        cfg: Front-end configuration (fft_size, n_mels, low_freq_hz)
        sample_rate: Sampling rate in Hz

    Returns:
        np.ndarray: n_mels x (fft_size/2 + 1) weight matrix

    Raises:
        ConfigError: If a filter falls between bins and receives no weight
    """
    nyquist = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.low_freq_hz), hz_to_mel(nyquist), cfg.n_mels + 2))
    bin_freqs = np.arange(cfg.n_bins) * sample_rate / cfg.fft_size

    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - lower) / (centre - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - centre)
    weights = np.maximum(0.0, np.minimum(rising, falling))

    empty = np.flatnonzero(weights.sum(axis=1) <= 0)
    if empty.size:
        raise ConfigError(
            f"mel filters {empty.tolist()} cover no FFT bin; reduce n_mels or raise fft_size"
        )
    return weights


def log_fbank(audio: AudioBuffer, cfg: FrameConfig) -> FeatureMatrix:
    """
    Compute log mel filterbank energies.

    Args:
        audio: Input audio
        cfg: Front-end configuration

    Returns:
        FeatureMatrix: T x n_mels, entries ln(max(mel energy, log_floor))
    """
    power = power_spectrogram(audio, cfg).data
    return fbank_from_power(power, cfg, audio.sample_rate)


def fbank_from_power(power: np.ndarray, cfg: FrameConfig, sample_rate: int) -> FeatureMatrix:
    """
    Pool a power spectrogram through the mel filterbank and take the floored log.

    Args:
        power: T x (fft_size/2 + 1) power values
        cfg: Front-end configuration
        sample_rate: Sampling rate the bins refer to

    Returns:
        FeatureMatrix: T x n_mels log energies
    """
    energies = power @ mel_filterbank(cfg, sample_rate).T
    return FeatureMatrix(
        np.log(np.maximum(energies, cfg.log_floor)), cfg.frame_shift_ms, FeatureKind.LOG_FBANK
    )


def log_spectrum(audio: AudioBuffer, cfg: FrameConfig) -> FeatureMatrix:
    """
    Compute the log magnitude spectrum, 0.5 ln(max(power, log_floor^2)).

    Args:
        audio: Input audio
        cfg: Front-end configuration

    Returns:
        FeatureMatrix: T x (fft_size/2 + 1), kind LOG_SPECTRUM
    """
    power = power_spectrogram(audio, cfg).data
    floored = np.maximum(power, cfg.log_floor ** 2)
    return FeatureMatrix(0.5 * np.log(floored), cfg.frame_shift_ms, FeatureKind.LOG_SPECTRUM)


def splice_indices(num_frames: int, left: int, right: int) -> np.ndarray:
    """
    Row indices of a spliced matrix, clamped to the utterance.

    Returns:
        np.ndarray: T x (left + right + 1) integer indices
    """
    offsets = np.arange(-left, right + 1)
    return np.clip(np.arange(num_frames)[:, None] + offsets[None, :], 0, num_frames - 1)


def splice(feat: FeatureMatrix, left: int, right: int) -> FeatureMatrix:
    """
    Concatenate each frame with its neighbours.

    Boundary frames are replicated so the output keeps T rows.

    Args:
        feat: Input features (T x D)
        left: Frames of left context
        right: Frames of right context

    Returns:
        FeatureMatrix: T x D*(left + right + 1), kind SPLICED
    """
    if left < 0 or right < 0:
        raise ValueError("splice context must be non-negative")
    idx = splice_indices(feat.num_frames, left, right)
    data = feat.data[idx].reshape(feat.num_frames, -1)
    return FeatureMatrix(data, feat.frame_shift_ms, FeatureKind.SPLICED)


def cmvn(feat: FeatureMatrix, norm_means: bool = True, norm_vars: bool = True) -> FeatureMatrix:
    """
    Per-utterance mean and variance normalisation.

    Columns with zero variance are only mean-centred.

    Args:
        feat: Input features
        norm_means: Subtract the column means
        norm_vars: Divide by the column standard deviations

    Returns:
        FeatureMatrix: Same shape and kind, columns with mean 0 and variance 1
                       when both switches are on
    """
    data = feat.data.astype(np.float64)
    mean = data.mean(axis=0, keepdims=True)
    centred = data - mean
    if norm_vars:
        std = centred.std(axis=0, keepdims=True)
        centred = centred / np.where(std > 1e-12, std, 1.0)
    return FeatureMatrix(centred if norm_means else centred + mean, feat.frame_shift_ms, feat.kind)
