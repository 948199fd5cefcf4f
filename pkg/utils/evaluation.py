"""
Evaluation harness for the CDF toolkit.

- d-vectors, cosine scoring and Top-1 speaker identification under
  enrollment-length / test-length conditions
- Emotion ACC and MAP from confusion matrices, at frame and utterance level
- PCA projection of factors for inspection
"""

import logging
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from models.config import RunConfig
from models.corpus import CorpusManifest, UtteranceRecord
from models.evaluation import ConfusionMatrix, DVector, TrialCondition
from models.factors import FactorKind, FactorStream
from utils.cascade import (
    PRODUCED_FACTOR,
    StageKind,
    load_factors,
    load_stage_network,
    make_plan,
    require_factors,
    stage_dir,
    stage_info,
    stage_posteriors,
)
from utils.errors import ConfigError, DataError
from utils.networks import length_normalize
from utils.storage import load_phone_labels

logger = logging.getLogger(__name__)

SID_COLUMNS = ["stage", "condition", "enroll_seconds", "test_frames", "trials", "correct", "idr"]
AER_COLUMNS = ["stage", "subset", "level", "metric", "value"]
PROJECTION_FRAMES = 2000


# Speaker identification

def dvector_from_rows(rows: np.ndarray, owner: str) -> DVector:
    """
    Average frame-level speaker factors and length-normalise the mean.

    Raises:
        DataError: If there are no frames
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DataError(f"{owner}: a d-vector needs at least one frame")
    return DVector(owner, length_normalize(rows.mean(axis=0)))


def dvector(stream: FactorStream) -> DVector:
    """d-vector of a whole speaker factor stream."""
    return dvector_from_rows(stream.data, stream.utterance_id)


def cosine(a: DVector, b: DVector) -> float:
    """Cosine similarity of two unit vectors, clipped to [-1, 1]."""
    if a.dim != b.dim:
        raise ValueError(f"d-vector widths differ: {a.dim} vs {b.dim}")
    return float(np.clip(np.dot(a.vector, b.vector), -1.0, 1.0))


def top1_identify(enrollments: Mapping, test: DVector):
    """
    Speaker whose enrolled d-vector scores highest against the test d-vector.

    Args:
        enrollments: Speaker id -> enrolled DVector
        test: Test segment d-vector

    Returns:
        The best-scoring speaker id; ties go to the lowest id
    """
    if not enrollments:
        raise ValueError("no enrolled speakers")
    speakers = sorted(enrollments)
    scores = np.array([cosine(enrollments[spk], test) for spk in speakers])
    return speakers[int(np.argmax(scores))]


def _speaker_material(
    streams: Sequence[np.ndarray],
    condition: TrialCondition,
    max_segments: int,
    rng: np.random.Generator,
    frame_shift_ms: float,
) -> Optional[tuple]:
    """Enrollment rows and test segments of one speaker, or None when speech runs short."""
    order = rng.permutation(len(streams))
    need = condition.enroll_frames(frame_shift_ms)
    enroll, remainders = [], []
    taken = 0
    for idx in order:
        rows = streams[idx]
        use = min(need - taken, rows.shape[0])
        if use > 0:
            enroll.append(rows[:use])
            taken += use
        remainders.append(rows[max(use, 0):])
    if taken < need:
        return None
    size = condition.test_frames
    segments = [
        rows[start:start + size]
        for rows in remainders
        for start in range(0, rows.shape[0] - size + 1, size)
    ]
    if not segments:
        return None
    pick = rng.permutation(len(segments))[:max_segments]
    return np.concatenate(enroll), [segments[i] for i in np.sort(pick)]


def run_sid_eval(
    streams: Mapping,
    records: Sequence[UtteranceRecord],
    conditions: Sequence[TrialCondition],
    max_segments: int = 50,
    seed: int = 0,
    frame_shift_ms: float = 10.0,
) -> pd.DataFrame:
    """
    Top-1 identification rate per trial condition.

    For each speaker the utterances are shuffled with the seed; enrollment
    takes the first enroll_seconds of speech in that order and the rest is cut
    into non-overlapping test segments of test_frames frames inside each
    utterance, of which up to max_segments are drawn.

    Args:
        streams: Utterance id -> speaker FactorStream
        records: Utterances to use
        conditions: Trial conditions
        max_segments: Test segments per speaker and condition
        seed: Seed of the utterance shuffle and segment draw
        frame_shift_ms: Frame period

    Returns:
        pd.DataFrame: condition, enroll_seconds, test_frames, trials, correct, idr

    Raises:
        DataError: If a speaker lacks speech for a condition (speakers are listed)
    """
    by_speaker = {}
    for rec in records:
        by_speaker.setdefault(rec.speaker, []).append(streams[rec.utt_id].data.astype(np.float64))

    rows = []
    for condition in conditions:
        enrollments, trials, short = {}, [], []
        for speaker in sorted(by_speaker):
            rng = np.random.default_rng(np.random.SeedSequence([seed, speaker]))
            material = _speaker_material(
                by_speaker[speaker], condition, max_segments, rng, frame_shift_ms
            )
            if material is None:
                short.append(speaker)
                continue
            enroll_rows, segments = material
            enrollments[speaker] = dvector_from_rows(enroll_rows, f"speaker {speaker}")
            trials += [(speaker, segment) for segment in segments]
        if short:
            raise DataError(f"insufficient speech for {condition.label}: speakers {short}")

        correct = sum(
            top1_identify(enrollments, dvector_from_rows(segment, f"speaker {speaker} segment")) == speaker
            for speaker, segment in trials
        )
        idr = correct / len(trials)
        logger.info("%s: %d/%d correct, IDR %.4f", condition.label, correct, len(trials), idr)
        rows.append([condition.label, condition.enroll_seconds, condition.test_frames, len(trials), correct, idr])
    return pd.DataFrame(rows, columns=SID_COLUMNS[1:])


def cached_streams(cache_dir, stage: str, records: Sequence[UtteranceRecord], kind: FactorKind) -> dict:
    """Cached factor streams of a stage, keyed by utterance id."""
    require_factors(cache_dir, stage)
    directory = stage_dir(cache_dir, stage)
    return {rec.utt_id: load_factors(directory, rec.utt_id, kind) for rec in records}


def sid_report(run_cfg: RunConfig, manifest: CorpusManifest, stages: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """
    Identification rates of the configured speaker stages, from their caches.

    Raises:
        ConfigError: If a listed stage is not a speaker stage
        MissingStageError: If a stage has not cached its factors
    """
    stages = list(stages or run_cfg.eval.sid_stages)
    records = manifest.subset(run_cfg.eval.sid_subset)
    if not records:
        raise DataError(f"corpus has no '{run_cfg.eval.sid_subset}' utterances")
    frames = []
    for stage in stages:
        if stage_info(stage).kind != StageKind.SPEAKER:
            raise ConfigError(f"eval-sid: '{stage}' is not a speaker stage")
        streams = cached_streams(run_cfg.cache_dir, stage, records, FactorKind.SPEAKER)
        frame = run_sid_eval(
            streams, records, run_cfg.eval.conditions, run_cfg.eval.max_segments,
            run_cfg.seed, run_cfg.dsp.frame_shift_ms,
        )
        frame.insert(0, "stage", stage)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)[SID_COLUMNS]


# Emotion recognition

def confusion(true_labels: Sequence[int], predicted: Sequence[int], num_classes: int) -> ConfusionMatrix:
    """
    Count (true, predicted) pairs.

    Raises:
        ValueError: On mismatched lengths or labels outside [0, num_classes)
    """
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if true_labels.shape != predicted.shape:
        raise ValueError("true and predicted labels differ in length")
    for labels in (true_labels, predicted):
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ValueError(f"labels must lie in [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted), 1)
    return ConfusionMatrix(counts)


def acc(cm: ConfusionMatrix) -> float:
    """
    Sum of TP_i over the sum of TP_i + FP_i, i.e. trace / total.

    Raises:
        DataError: If the matrix holds no predictions
    """
    denominator = int(np.sum(cm.true_positives + cm.false_positives))
    if denominator == 0:
        raise DataError("accuracy of an empty confusion matrix is undefined")
    return float(cm.true_positives.sum()) / denominator


def undefined_precision_classes(cm: ConfusionMatrix) -> list:
    """Classes that were never predicted (TP_i + FP_i = 0)."""
    return np.flatnonzero(cm.true_positives + cm.false_positives == 0).tolist()


def map_score(cm: ConfusionMatrix) -> float:
    """
    Mean over classes of TP_i / (TP_i + FP_i).

    Classes that were never predicted contribute precision 0.

    Raises:
        DataError: If the matrix holds no predictions
    """
    if cm.total == 0:
        raise DataError("MAP of an empty confusion matrix is undefined")
    predicted = cm.true_positives + cm.false_positives
    precision = np.divide(
        cm.true_positives, predicted, out=np.zeros(cm.num_classes, dtype=np.float64), where=predicted > 0
    )
    undefined = undefined_precision_classes(cm)
    if undefined:
        logger.warning("classes %s were never predicted; their precision counts as 0", undefined)
    return float(precision.mean())


def utterance_emotion(posteriors: np.ndarray) -> int:
    """
    Utterance decision: argmax of the mean frame posterior (ties to the lowest class).

    Raises:
        DataError: If there are no frames
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2 or posteriors.shape[0] == 0:
        raise DataError("utterance decision needs at least one frame of posteriors")
    return int(np.argmax(posteriors.mean(axis=0)))


def aer_scores(posteriors: Sequence[np.ndarray], labels: Sequence[int], num_classes: int) -> dict:
    """
    Frame- and utterance-level confusion matrices of an emotion classifier.

    Every frame is scored against its utterance's label.

    Returns:
        dict: "frame" and "utterance" -> ConfusionMatrix
    """
    frame_true = np.concatenate([np.full(p.shape[0], label) for p, label in zip(posteriors, labels)])
    frame_pred = np.concatenate([p.argmax(axis=1) for p in posteriors])
    utt_pred = [utterance_emotion(p) for p in posteriors]
    return {
        "frame": confusion(frame_true, frame_pred, num_classes),
        "utterance": confusion(labels, utt_pred, num_classes),
    }


def aer_report(
    run_cfg: RunConfig,
    manifest: CorpusManifest,
    stages: Optional[Sequence[str]] = None,
    subsets: Optional[Sequence[str]] = None,
) -> tuple:
    """
    ACC and MAP of the emotion stages at frame and utterance level.

    Returns:
        tuple: (report DataFrame with stage, subset, level, metric, value;
                dict (stage, subset, level) -> ConfusionMatrix)
    """
    stages = list(stages or run_cfg.eval.aer_stages)
    subsets = list(subsets or run_cfg.eval.aer_subsets)
    rows, matrices = [], {}
    for stage in stages:
        if stage_info(stage).kind != StageKind.EMOTION:
            raise ConfigError(f"eval-aer: '{stage}' is not an emotion stage")
        plan = make_plan(stage, run_cfg, manifest)
        load_stage_network(run_cfg.cache_dir, stage)
        for subset in subsets:
            records = manifest.subset(subset)
            if not records:
                logger.warning("no '%s' utterances, skipping %s", subset, stage)
                continue
            outputs = stage_posteriors(plan, records)
            scores = aer_scores(outputs, [rec.emotion for rec in records], manifest.num_emotions)
            for level, cm in scores.items():
                matrices[(stage, subset, level)] = cm
                rows.append([stage, subset, level, "acc", acc(cm)])
                rows.append([stage, subset, level, "map", map_score(cm)])
                rows.append([stage, subset, level, "undefined_precision_classes", len(undefined_precision_classes(cm))])
            logger.info("%s on %s: frame ACC %.4f", stage, subset, acc(scores["frame"]))
    return pd.DataFrame(rows, columns=AER_COLUMNS), matrices


# Projection

def pca_project(vectors: np.ndarray, dim: int = 2) -> np.ndarray:
    """
    Project mean-centred vectors onto the top principal axes.

    Each axis is signed so that its largest-magnitude component is positive.

    Args:
        vectors: N x d data
        dim: Output dimensions (at most d)

    Returns:
        np.ndarray: N x dim coordinates
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("PCA needs an N x d matrix with N >= 1")
    if not 0 < dim <= x.shape[1]:
        raise ValueError(f"cannot project {x.shape[1]}-D data onto {dim} axes")
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / max(1, x.shape[0] - 1)
    values, vecs = np.linalg.eigh(cov)
    axes = vecs[:, np.argsort(values)[::-1][:dim]]
    signs = np.sign(axes[np.argmax(np.abs(axes), axis=0), np.arange(dim)])
    axes = axes * np.where(signs == 0, 1.0, signs)
    return centred @ axes


def project_stage(run_cfg: RunConfig, manifest: CorpusManifest, stage: str) -> pd.DataFrame:
    """
    2-D PCA view of a stage's cached factors.

    Speaker and emotion stages give one point per utterance (mean factor,
    length-normalised for speakers), labelled by speaker or emotion; the
    linguistic stage gives a seeded sample of frames labelled by phone.
    Utterances are limited to the first eval.project_speakers speakers.

    Returns:
        pd.DataFrame: id, label, x, y
    """
    info = stage_info(stage)
    if info.kind not in PRODUCED_FACTOR:
        raise ConfigError(f"project: stage '{stage}' produces no factors")
    kind = PRODUCED_FACTOR[info.kind]
    speakers = sorted({rec.speaker for rec in manifest.records})[: run_cfg.eval.project_speakers]
    records = [rec for rec in manifest.records if rec.speaker in set(speakers)]
    streams = cached_streams(run_cfg.cache_dir, stage, records, kind)

    ids, labels, vectors = [], [], []
    if kind == FactorKind.LINGUISTIC:
        for rec in records:
            phones = load_phone_labels(rec.phones_path) if rec.phones_path else np.zeros(rec.num_frames, int)
            for t, row in enumerate(streams[rec.utt_id].data):
                ids.append(f"{rec.utt_id}:{t}")
                labels.append(int(phones[t]))
                vectors.append(row)
        if len(vectors) > PROJECTION_FRAMES:
            pick = np.sort(np.random.default_rng(run_cfg.seed).choice(len(vectors), PROJECTION_FRAMES, replace=False))
            ids = [ids[i] for i in pick]
            labels = [labels[i] for i in pick]
            vectors = [vectors[i] for i in pick]
    else:
        for rec in records:
            data = streams[rec.utt_id].data
            ids.append(rec.utt_id)
            if kind == FactorKind.SPEAKER:
                labels.append(rec.speaker)
                vectors.append(dvector(streams[rec.utt_id]).vector)
            else:
                labels.append(rec.emotion)
                vectors.append(data.astype(np.float64).mean(axis=0))
    points = pca_project(np.asarray(vectors), 2)
    return pd.DataFrame({"id": ids, "label": labels, "x": points[:, 0], "y": points[:, 1]})
