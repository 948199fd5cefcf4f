"""
Synthetic corpus generation for the CDF toolkit.

Every frame's log-spectrum is the sum of a phone template, a speaker template
and an emotion template plus i.i.d. Gaussian noise per bin. The known templates
and labels are the ground truth the rest of the toolkit is checked against.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from models.audio import FeatureKind, FeatureMatrix, FrameConfig
from models.corpus import CorpusManifest, GenConfig, Templates, UtteranceRecord
from models.factors import FactorKind, FactorStream
from utils.dsp import fbank_from_power
from utils.errors import ConfigError
from utils.storage import (
    load_features,
    load_phone_labels,
    save_features,
    save_manifest,
    save_phone_labels,
)

logger = logging.getLogger(__name__)

MAX_COSINE_TERMS = 8
EXTRA_DURATION_P = 0.2
DIAGNOSTIC_FRAMES = 2000


def _unit_rms(envelope: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(envelope ** 2, axis=-1, keepdims=True))
    return envelope / np.where(rms > 0, rms, 1.0)


def _cosine_series(rng: np.random.Generator, count: int, axis: np.ndarray, terms: int) -> np.ndarray:
    k = np.arange(1, terms + 1)
    coeffs = rng.standard_normal((count, terms)) / k
    return coeffs @ np.cos(np.pi * k[:, None] * axis[None, :])


def gen_templates(cfg: GenConfig) -> Templates:
    """
    Draw the component log-spectra of a corpus.

    Phone templates are smooth envelopes (cosine series of up to 8 terms);
    speaker templates are spectral tilts with formant-like bumps; emotion
    templates are broad shifts of the low/high balance. Each family is scaled
    to unit RMS per template and multiplied by its alpha.

    Args:
        cfg: Corpus settings

    Returns:
        Templates: P x D, S x D, E x D (and S x E x D interaction when enabled)
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[0])
    d = cfg.spectrum_dim
    axis = np.linspace(0.0, 1.0, d)

    terms = rng.integers(3, MAX_COSINE_TERMS + 1, size=cfg.phones)
    phone = np.stack([
        _cosine_series(rng, 1, axis, int(n))[0] for n in terms
    ])

    tilt = rng.standard_normal((cfg.speakers, 1)) * (axis[None, :] - 0.5)
    bumps = np.zeros((cfg.speakers, d))
    for _ in range(3):
        centre = rng.uniform(0.1, 0.9, size=(cfg.speakers, 1))
        width = rng.uniform(0.03, 0.08, size=(cfg.speakers, 1))
        height = rng.standard_normal((cfg.speakers, 1))
        bumps += height * np.exp(-0.5 * ((axis[None, :] - centre) / width) ** 2)
    speaker = tilt + bumps

    pivot = rng.uniform(0.3, 0.7, size=(cfg.emotions, 1))
    balance = rng.standard_normal((cfg.emotions, 1))
    level = rng.standard_normal((cfg.emotions, 1))
    emotion = balance * np.tanh((axis[None, :] - pivot) / 0.2) + 0.5 * level

    interaction = None
    if cfg.speaker_emotion_interaction:
        offsets = _cosine_series(rng, cfg.speakers * cfg.emotions, axis, 3)
        interaction = 0.5 * cfg.alpha_e * _unit_rms(offsets).reshape(cfg.speakers, cfg.emotions, d)

    return Templates(
        cfg.alpha_q * _unit_rms(phone),
        cfg.alpha_s * _unit_rms(speaker),
        cfg.alpha_e * _unit_rms(emotion),
        interaction,
    )


def phone_sequence(cfg: GenConfig, num_frames: int, rng: np.random.Generator) -> np.ndarray:
    """
    Per-frame phone labels from a uniform Markov chain with minimum duration.

    Each run lasts min_phone_frames plus a geometric number of extra frames;
    the next phone is drawn uniformly from the other phones. A run that would
    leave less than min_phone_frames absorbs the remainder of the utterance.

    Returns:
        np.ndarray: num_frames integer labels
    """
    labels = np.empty(num_frames, dtype=np.int64)
    phone = int(rng.integers(cfg.phones))
    pos = 0
    while pos < num_frames:
        remaining = num_frames - pos
        run = cfg.min_phone_frames + int(rng.geometric(EXTRA_DURATION_P)) - 1
        if remaining - run < cfg.min_phone_frames:
            run = remaining
        labels[pos:pos + run] = phone
        pos += run
        if cfg.phones > 1:
            step = int(rng.integers(1, cfg.phones))
            phone = (phone + step) % cfg.phones
    return labels


def _frame_config(cfg: GenConfig, frame_cfg: Optional[FrameConfig]) -> FrameConfig:
    frame_cfg = frame_cfg or FrameConfig(fft_size=cfg.fft_size)
    if frame_cfg.n_bins != cfg.spectrum_dim:
        raise ConfigError(
            f"front-end fft_size {frame_cfg.fft_size} gives {frame_cfg.n_bins} bins, "
            f"corpus spectra have {cfg.spectrum_dim}"
        )
    return frame_cfg


def gen_utterance(
    cfg: GenConfig,
    templates: Templates,
    speaker: int,
    emotion: int,
    rng: np.random.Generator,
    frame_cfg: Optional[FrameConfig] = None,
) -> tuple:
    """
    Generate one labelled utterance.

    Args:
        cfg: Corpus settings
        templates: Component log-spectra
        speaker: Speaker label
        emotion: Emotion label
        rng: Generator owned by this utterance
        frame_cfg: Front-end settings of the filterbank

    Returns:
        tuple: (phone labels, LogSpectrum FeatureMatrix, LogFbank FeatureMatrix)
    """
    frame_cfg = _frame_config(cfg, frame_cfg)
    num_frames = int(rng.integers(cfg.min_frames, cfg.max_frames + 1))
    phones = phone_sequence(cfg, num_frames, rng)
    noise = cfg.sigma * rng.standard_normal((num_frames, cfg.spectrum_dim))
    spectrum = templates.frame_means(phones, speaker, emotion) + noise
    fbank = fbank_from_power(np.exp(2.0 * spectrum), frame_cfg, cfg.sample_rate)
    return (
        phones,
        FeatureMatrix(spectrum, frame_cfg.frame_shift_ms, FeatureKind.LOG_SPECTRUM),
        fbank,
    )


def corpus_plan(cfg: GenConfig) -> list:
    """
    Utterances of a corpus in manifest order.

    Returns:
        list: (utterance id, speaker, emotion, subset) tuples
    """
    plan = []
    for speaker in range(cfg.speakers):
        for emotion in range(cfg.emotions):
            for subset, count in (("train", cfg.utterances_per_pair), ("test", cfg.test_utterances_per_pair)):
                for number in range(count):
                    plan.append((f"spk{speaker:03d}-emo{emotion:02d}-{subset}-{number:03d}", speaker, emotion, subset))
    return plan


def gen_corpus(
    cfg: GenConfig,
    root: Union[str, Path],
    frame_cfg: Optional[FrameConfig] = None,
    threads: int = 1,
) -> CorpusManifest:
    """
    Generate and write a whole corpus.

    Every utterance draws from its own generator, spawned in manifest order
    from the master seed, so the output does not depend on the thread count.

    Args:
        cfg: Corpus settings
        root: Output directory (manifest, fbank/, spectrum/, phones/, templates/)
        frame_cfg: Front-end settings of the filterbank
        threads: Worker threads

    Returns:
        CorpusManifest: The written manifest
    """
    root = Path(root)
    frame_cfg = _frame_config(cfg, frame_cfg)
    templates = gen_templates(cfg)
    plan = corpus_plan(cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)[1].spawn(len(plan))
    logger.info("generating %d utterances into %s", len(plan), root)

    def work(job: tuple) -> UtteranceRecord:
        (utt_id, speaker, emotion, subset), seed = job
        phones, spectrum, fbank = gen_utterance(
            cfg, templates, speaker, emotion, np.random.default_rng(seed), frame_cfg
        )
        record = UtteranceRecord(
            utt_id, speaker, emotion, len(phones),
            root / "fbank" / f"{utt_id}.cdfm",
            root / "spectrum" / f"{utt_id}.cdfm",
            root / "phones" / f"{utt_id}.phn",
            subset,
        )
        save_features(fbank, record.fbank_path)
        save_features(spectrum, record.spectrum_path)
        save_phone_labels(phones, record.phones_path)
        return record

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        records = list(tqdm(
            pool.map(work, zip(plan, seeds)), total=len(plan), desc="corpus", leave=False, disable=None,
        ))
    manifest = CorpusManifest(records, root, cfg, templates)
    save_manifest(manifest)
    return manifest


def template_noise_floor(manifest: CorpusManifest, subset: Optional[str] = None) -> float:
    """
    MSE of the ground-truth template sum against the stored log-spectra.

    Equals sigma^2 in expectation; it is the best MSE a reconstruction can reach.

    Raises:
        ValueError: If the manifest carries no templates
    """
    if manifest.templates is None:
        raise ValueError("noise floor needs a synthetic corpus with templates")
    records = manifest.subset(subset) if subset else manifest.records
    total, count = 0.0, 0
    for rec in records:
        spectrum = load_features(rec.spectrum_path).data.astype(np.float64)
        phones = load_phone_labels(rec.phones_path)
        residual = spectrum - manifest.templates.frame_means(phones, rec.speaker, rec.emotion)
        total += float(np.sum(residual ** 2))
        count += residual.size
    return total / count


def _frame_labels(manifest: CorpusManifest, stream: FactorStream) -> np.ndarray:
    rec = manifest.get(stream.utterance_id)
    if stream.kind == FactorKind.LINGUISTIC:
        return load_phone_labels(rec.phones_path)
    label = rec.speaker if stream.kind == FactorKind.SPEAKER else rec.emotion
    return np.full(stream.num_frames, label, dtype=np.int64)


def oracle_factor_distance(
    manifest: CorpusManifest,
    streams: Iterable[FactorStream],
    max_frames: int = DIAGNOSTIC_FRAMES,
    seed: int = 0,
) -> pd.DataFrame:
    """
    Clustering quality of extracted factors against ground-truth labels.

    Frames are labelled by phone (linguistic), speaker or emotion; a seeded
    sample of frames is compared pairwise by cosine similarity.

    Args:
        manifest: Corpus the streams were extracted from
        streams: Factor streams of any kinds
        max_frames: Frames sampled per factor kind
        seed: Seed of the frame sample

    Returns:
        pd.DataFrame: factor, frames, within (mean within-class cosine),
                      between (mean between-class cosine), separation
    """
    rows, labels = {}, {}
    for stream in streams:
        rows.setdefault(stream.kind, []).append(stream.data.astype(np.float64))
        labels.setdefault(stream.kind, []).append(_frame_labels(manifest, stream))

    rng = np.random.default_rng(seed)
    report = []
    for kind in sorted(rows):
        x = np.concatenate(rows[kind])
        y = np.concatenate(labels[kind])
        if len(x) > max_frames:
            pick = np.sort(rng.choice(len(x), size=max_frames, replace=False))
            x, y = x[pick], y[pick]
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        unit = x / np.where(norms > 0, norms, 1.0)
        cos = unit @ unit.T
        same = y[:, None] == y[None, :]
        off_diagonal = ~np.eye(len(y), dtype=bool)
        within_mask = same & off_diagonal
        within = float(cos[within_mask].mean()) if within_mask.any() else float("nan")
        between = float(cos[~same].mean()) if (~same).any() else float("nan")
        report.append([kind.tag, len(y), within, between, within - between])
        logger.info("%s factors: within %.4f between %.4f", kind.tag, within, between)
    return pd.DataFrame(report, columns=["factor", "frames", "within", "between", "separation"])
