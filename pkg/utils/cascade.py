"""
Cascaded training and factor caching.

The cascade trains one stage at a time: the linguistic network first, then
the speaker network (optionally conditioned on cached linguistic factors),
then the emotion network (optionally conditioned on cached linguistic and
speaker factors), and finally the spectrum generators. Every stage writes its
model and its per-utterance factors under cache_dir/<stage>/ so later stages
and evaluations start from files instead of recomputing earlier stages.
"""

import inspect
import logging
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from tqdm import tqdm

from models.audio import FeatureMatrix, FrameConfig
from models.config import STAGE_NAMES, ReconSection, RunConfig
from models.corpus import CorpusManifest, UtteranceRecord
from models.factors import CascadeModelSet, FactorDims, FactorKind, FactorStream, Network, ReconModel
from models.network import NetworkSpec, ParamStore, TrainConfig
from utils.errors import ConfigError, DataError, MissingStageError
from utils.networks import (
    build_emotion_net,
    build_linguistic_net,
    build_speaker_net,
    extract_factors,
    network_input,
    posteriors,
)
from utils.reconstruct import FACTORS, ReconUtterance, build_recon_model, train_recon
from utils.reports import write_table
from utils.storage import (
    load_factor_file,
    load_features,
    load_network,
    load_phone_labels,
    save_factors,
    save_network,
)
from utils.training import FrameDataset, train_classifier

logger = logging.getLogger(__name__)

MODEL_FILE = "model.cdfn"
TRAIN_LOG_FILE = "train_log.csv"
FACTOR_SUFFIX = ".cdff"


class StageKind(Enum):
    """What a stage trains."""

    LINGUISTIC = "linguistic"
    SPEAKER = "speaker"
    EMOTION = "emotion"
    RECON = "recon"


@dataclass(frozen=True)
class StageInfo:
    """Registry entry: stage kind and the factor kinds it is conditioned on."""

    name: str
    kind: StageKind
    conditioning: tuple = ()


STAGES = {
    "ling": StageInfo("ling", StageKind.LINGUISTIC),
    "spk-idf": StageInfo("spk-idf", StageKind.SPEAKER),
    "spk-cdf": StageInfo("spk-cdf", StageKind.SPEAKER, (FactorKind.LINGUISTIC,)),
    "emo-baseline": StageInfo("emo-baseline", StageKind.EMOTION),
    "emo-ling": StageInfo("emo-ling", StageKind.EMOTION, (FactorKind.LINGUISTIC,)),
    "emo-spk": StageInfo("emo-spk", StageKind.EMOTION, (FactorKind.SPEAKER,)),
    "emo-ling-spk": StageInfo("emo-ling-spk", StageKind.EMOTION, (FactorKind.LINGUISTIC, FactorKind.SPEAKER)),
    "recon": StageInfo(
        "recon", StageKind.RECON, (FactorKind.LINGUISTIC, FactorKind.SPEAKER, FactorKind.EMOTION)
    ),
}

ALLOWED_CONDITIONING = {
    StageKind.LINGUISTIC: set(),
    StageKind.SPEAKER: {FactorKind.LINGUISTIC},
    StageKind.EMOTION: {FactorKind.LINGUISTIC, FactorKind.SPEAKER},
    StageKind.RECON: {FactorKind.LINGUISTIC, FactorKind.SPEAKER, FactorKind.EMOTION},
}

PRODUCED_FACTOR = {
    StageKind.LINGUISTIC: FactorKind.LINGUISTIC,
    StageKind.SPEAKER: FactorKind.SPEAKER,
    StageKind.EMOTION: FactorKind.EMOTION,
}

RECON_FACTOR_KINDS = {"q": FactorKind.LINGUISTIC, "s": FactorKind.SPEAKER, "e": FactorKind.EMOTION}

# Builder arguments filled in by the cascade rather than the config
MANAGED_ARGS = {"phones", "speakers", "emotions", "input_dim", "cond_dim", "conditioning", "n_mels"}


@dataclass
class StagePlan:
    """
    Everything needed to train or extract one stage.

    Attributes:
        name (str): Stage name (ling, spk-idf, ...)
        stage (StageKind): What the stage trains
        conditioning (dict): FactorKind -> stage whose cache provides that factor
        corpus (CorpusManifest): Utterances and labels
        train_cfg (TrainConfig): Optimiser settings
        cache_dir (Path): Root of the per-stage caches
        frame_cfg (FrameConfig): Front-end settings (filterbank width)
        network (dict): Builder keyword overrides
        recon (ReconSection): Generator settings of the recon stage
    """

    name: str
    stage: StageKind
    conditioning: dict
    corpus: CorpusManifest
    train_cfg: TrainConfig
    cache_dir: Path
    frame_cfg: FrameConfig = field(default_factory=FrameConfig)
    network: dict = field(default_factory=dict)
    recon: ReconSection = field(default_factory=ReconSection)

    def __post_init__(self) -> None:
        extra = set(self.conditioning) - ALLOWED_CONDITIONING[self.stage]
        if extra:
            raise ConfigError(
                f"stage {self.name}: {self.stage.value} networks cannot be conditioned on "
                f"{sorted(kind.tag for kind in extra)}"
            )
        self.cache_dir = Path(self.cache_dir)

    @property
    def directory(self) -> Path:
        return stage_dir(self.cache_dir, self.name)


def stage_info(name: str) -> StageInfo:
    """
    Registry entry of a stage.

    Raises:
        ConfigError: For an unknown stage name
    """
    if name not in STAGES:
        raise ConfigError(f"unknown stage '{name}' (expected one of {', '.join(STAGE_NAMES)})")
    return STAGES[name]


def make_plan(name: str, run_cfg: RunConfig, manifest: CorpusManifest) -> StagePlan:
    """
    Build the plan of a stage from the run configuration.

    Linguistic factors always come from "ling"; speaker factors of the emotion
    stages come from eval.emotion_speaker_source; the recon stage takes its
    three sources from recon.sources.
    """
    info = stage_info(name)
    if info.kind == StageKind.RECON:
        sources = {RECON_FACTOR_KINDS[k]: stage for k, stage in run_cfg.recon.sources.items()}
        for kind, source in sources.items():
            produced = PRODUCED_FACTOR.get(stage_info(source).kind)
            if produced != kind:
                raise ConfigError(f"recon source '{source}' does not produce {kind.tag} factors")
    else:
        defaults = {FactorKind.LINGUISTIC: "ling", FactorKind.SPEAKER: run_cfg.eval.emotion_speaker_source}
        sources = {kind: defaults[kind] for kind in info.conditioning}
    return StagePlan(
        name=name,
        stage=info.kind,
        conditioning=sources,
        corpus=manifest,
        train_cfg=run_cfg.train_config(name),
        cache_dir=run_cfg.cache_dir,
        frame_cfg=run_cfg.dsp,
        network=dict(run_cfg.stage(name).network),
        recon=run_cfg.recon,
    )


# Cache layout

def stage_dir(cache_dir: Union[str, Path], stage: str) -> Path:
    return Path(cache_dir) / stage


def model_path(cache_dir: Union[str, Path], stage: str) -> Path:
    return stage_dir(cache_dir, stage) / MODEL_FILE


def cache_factors(stream: FactorStream, directory: Union[str, Path]) -> Path:
    """
    Write a factor stream to directory/<utterance_id>.cdff.

    Returns:
        Path: The written file
    """
    path = Path(directory) / f"{stream.utterance_id}{FACTOR_SUFFIX}"
    save_factors(stream, path)
    return path


def load_factors(directory: Union[str, Path], utterance_id: str, kind: FactorKind) -> FactorStream:
    """
    Read a cached factor stream.

    Raises:
        MissingStageError: If the stage has not cached this utterance
        DataError: If the cached factor is of another kind
    """
    directory = Path(directory)
    path = directory / f"{utterance_id}{FACTOR_SUFFIX}"
    if not path.is_file():
        raise MissingStageError(directory.name, f"no cached factors for {utterance_id}")
    stream = load_factor_file(path)
    if stream.kind != kind:
        raise DataError(f"{path}: holds {stream.kind.tag} factors, expected {kind.tag}")
    if stream.utterance_id != utterance_id:
        raise DataError(f"{path}: belongs to {stream.utterance_id}")
    return stream


def load_stage_network(cache_dir: Union[str, Path], stage: str) -> Network:
    """
    Load the trained network of a stage.

    Raises:
        MissingStageError: If the stage has no model file
    """
    path = model_path(cache_dir, stage)
    if not path.is_file():
        raise MissingStageError(stage, f"{path} does not exist")
    return load_network(path)


def require_factors(cache_dir: Union[str, Path], stage: str) -> None:
    """
    Check that a stage has cached factors.

    Raises:
        MissingStageError: If the stage directory holds no factor files
    """
    directory = stage_dir(cache_dir, stage)
    if not directory.is_dir() or not any(directory.glob(f"*{FACTOR_SUFFIX}")):
        raise MissingStageError(stage, f"no cached factors under {directory}")


# Data

def corpus_dims(manifest: CorpusManifest) -> FactorDims:
    """
    Class counts of a corpus.

    Raises:
        DataError: If the phone count cannot be determined
    """
    if manifest.config is not None:
        return FactorDims(manifest.config.phones, manifest.config.speakers, manifest.config.emotions)
    phones = 0
    for rec in manifest.records:
        if rec.phones_path is not None:
            phones = max(phones, int(load_phone_labels(rec.phones_path).max()) + 1)
    if phones == 0:
        raise DataError("corpus has no phone labels")
    return FactorDims(phones, manifest.num_speakers, manifest.num_emotions)


def stage_seed(seed: int, stage: str) -> int:
    """Initialisation seed of a stage, derived from the master seed and the stage name."""
    sequence = np.random.SeedSequence([seed, zlib.crc32(stage.encode("utf-8"))])
    return int(sequence.generate_state(1)[0])


def split_utterances(records: Sequence[UtteranceRecord], fraction: float, seed: int) -> tuple:
    """
    Seeded split by utterance.

    Returns:
        tuple: (training records, validation records), each in manifest order
    """
    records = list(records)
    count = int(round(fraction * len(records)))
    if fraction > 0 and len(records) > 1:
        count = min(max(count, 1), len(records) - 1)
    order = np.random.default_rng(seed).permutation(len(records))
    held = set(order[:count].tolist())
    train = [rec for i, rec in enumerate(records) if i not in held]
    valid = [rec for i, rec in enumerate(records) if i in held]
    return train, valid


def conditioning_streams(plan: StagePlan, record: UtteranceRecord, num_frames: int) -> list:
    """
    Cached factors a stage consumes for one utterance.

    Raises:
        MissingStageError: If a source stage has not cached the utterance
        DataError: If a cached stream is not frame-aligned with the features
    """
    streams = []
    for kind, source in plan.conditioning.items():
        stream = load_factors(stage_dir(plan.cache_dir, source), record.utt_id, kind)
        if stream.num_frames != num_frames:
            raise DataError(
                f"{record.utt_id}: cached {kind.tag} factors from {source} have {stream.num_frames} "
                f"frames, features have {num_frames}"
            )
        streams.append(stream)
    return streams


def _builder_kwargs(builder, overrides: dict, stage: str) -> dict:
    accepted = set(inspect.signature(builder).parameters) - MANAGED_ARGS
    unknown = set(overrides) - accepted
    if unknown:
        raise ConfigError(f"stage {stage}: unknown network option(s) {sorted(unknown)}")
    return dict(overrides)


def build_stage_network(plan: StagePlan, dims: FactorDims) -> NetworkSpec:
    """Topology of a classifier stage, with the config's builder overrides."""
    n_mels = plan.frame_cfg.n_mels
    side = {kind.tag: dims.width(kind) for kind in plan.conditioning}
    try:
        if plan.stage == StageKind.LINGUISTIC:
            kwargs = _builder_kwargs(build_linguistic_net, plan.network, plan.name)
            context = kwargs.get("context", 5)
            return build_linguistic_net(dims.phones, n_mels * (2 * context + 1), **kwargs)
        if plan.stage == StageKind.SPEAKER:
            kwargs = _builder_kwargs(build_speaker_net, plan.network, plan.name)
            return build_speaker_net(dims.speakers, side.get(FactorKind.LINGUISTIC.tag, 0), n_mels, **kwargs)
        if plan.stage == StageKind.EMOTION:
            kwargs = _builder_kwargs(build_emotion_net, plan.network, plan.name)
            return build_emotion_net(dims.emotions, side, n_mels, **kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"stage {plan.name}: {exc}") from exc
    raise ConfigError(f"stage {plan.name} has no classifier network")


def _targets(plan: StagePlan, record: UtteranceRecord, num_frames: int) -> np.ndarray:
    if plan.stage == StageKind.LINGUISTIC:
        if record.phones_path is None:
            raise DataError(f"{record.utt_id}: no phone labels for the linguistic stage")
        labels = load_phone_labels(record.phones_path)
        if len(labels) != num_frames:
            raise DataError(f"{record.utt_id}: {len(labels)} phone labels for {num_frames} frames")
        return labels
    label = record.speaker if plan.stage == StageKind.SPEAKER else record.emotion
    return np.full(num_frames, label, dtype=np.int64)


def _load_fbank(record: UtteranceRecord) -> FeatureMatrix:
    fbank = load_features(record.fbank_path)
    if fbank.num_frames != record.num_frames:
        raise DataError(f"{record.utt_id}: manifest lists {record.num_frames} frames, features have {fbank.num_frames}")
    return fbank


def stage_dataset(plan: StagePlan, spec: NetworkSpec, records: Sequence[UtteranceRecord]) -> FrameDataset:
    """Network inputs, frame targets and cached side inputs of a classifier stage."""
    data = FrameDataset()
    for rec in tqdm(records, desc=f"{plan.name} data", leave=False, disable=None):
        fbank = _load_fbank(rec)
        x = network_input(spec, fbank, plan.frame_cfg).astype(plan.train_cfg.dtype)
        side = {s.kind.tag: s.data.astype(plan.train_cfg.dtype) for s in conditioning_streams(plan, rec, fbank.num_frames)}
        data.add(rec.utt_id, x, _targets(plan, rec, fbank.num_frames), side)
    return data


def _check_sources(plan: StagePlan) -> None:
    for source in plan.conditioning.values():
        require_factors(plan.cache_dir, source)


# Training and extraction

def train_stage(plan: StagePlan) -> tuple:
    """
    Train one stage on the corpus's training subset and save it.

    Utterances are split 90/10 (train_cfg.validation_fraction) with the run seed.
    The model goes to cache_dir/<stage>/model.cdfn (gen_q/gen_s/gen_e.cdfn for
    recon) and the history to train_log.csv.

    Args:
        plan: Stage plan

    Returns:
        tuple: (ParamStore, TrainLog); (ReconModel, TrainLog) for the recon stage

    Raises:
        MissingStageError: If a conditioning stage has not cached its factors
        DataError: On misaligned factors or missing labels
    """
    _check_sources(plan)
    if plan.stage == StageKind.RECON:
        return _train_recon_stage(plan)

    cfg = plan.train_cfg
    dims = corpus_dims(plan.corpus)
    spec = build_stage_network(plan, dims)
    train_records, valid_records = split_utterances(plan.corpus.subset("train"), cfg.validation_fraction, cfg.seed)
    if not train_records:
        raise DataError(f"stage {plan.name}: no training utterances")
    logger.info(
        "training %s on %d utterances (%d held out for validation)",
        plan.name, len(train_records), len(valid_records),
    )
    train = stage_dataset(plan, spec, train_records)
    valid = stage_dataset(plan, spec, valid_records)
    params = ParamStore.init(spec, stage_seed(cfg.seed, plan.name), cfg.dtype)
    log = train_classifier(spec, params, train, valid, cfg, plan.name)

    save_network(Network(spec, params), model_path(plan.cache_dir, plan.name))
    write_table(log.to_frame(), plan.directory / TRAIN_LOG_FILE)
    return params, log


def extract_stage(plan: StagePlan) -> int:
    """
    Cache the factors of a trained stage for every utterance of the corpus.

    Returns:
        int: Number of utterances written

    Raises:
        MissingStageError: If the stage or a conditioning stage is missing
        ConfigError: For the recon stage, which produces no factors
    """
    if plan.stage == StageKind.RECON:
        raise ConfigError("the recon stage produces no factors to extract")
    network = load_stage_network(plan.cache_dir, plan.name)
    _check_sources(plan)
    kind = PRODUCED_FACTOR[plan.stage]
    for rec in tqdm(plan.corpus.records, desc=f"{plan.name} extract", leave=False, disable=None):
        fbank = _load_fbank(rec)
        conditioning = conditioning_streams(plan, rec, fbank.num_frames)
        stream = extract_factors(network, rec.utt_id, fbank, kind, conditioning, frame_cfg=plan.frame_cfg)
        cache_factors(stream, plan.directory)
    logger.info("cached %s factors of %d utterances in %s", kind.tag, len(plan.corpus.records), plan.directory)
    return len(plan.corpus.records)


def stage_posteriors(plan: StagePlan, records: Sequence[UtteranceRecord]) -> list:
    """
    Frame posteriors of a trained classifier stage, fed from the caches.

    Returns:
        list: T x K posterior matrix per record
    """
    network = load_stage_network(plan.cache_dir, plan.name)
    _check_sources(plan)
    outputs = []
    for rec in records:
        fbank = _load_fbank(rec)
        outputs.append(posteriors(network, fbank, conditioning_streams(plan, rec, fbank.num_frames), plan.frame_cfg))
    return outputs


# Cascade inference

def _rounded(stream: FactorStream) -> FactorStream:
    return FactorStream(stream.utterance_id, stream.kind, stream.data.astype(np.float32))


def run_cascade(models: CascadeModelSet, features: FeatureMatrix, utterance_id: str = "") -> dict:
    """
    Factorise one utterance with a trained cascade.

    Each factor is rounded to f32, as in the caches the later stages were
    trained on, before it conditions the next network.

    Args:
        models: Linguistic, speaker and emotion networks
        features: Raw log filterbank features
        utterance_id: Identifier stored in the streams

    Returns:
        dict: FactorKind -> T-aligned FactorStream

    Raises:
        MissingStageError: If a network of the cascade is untrained
    """
    for network, stage in ((models.linguistic, "ling"), (models.speaker, "spk-cdf"), (models.emotion, "emo-ling-spk")):
        if network is None:
            raise MissingStageError(stage, "the cascade needs all three networks")

    streams = {}
    streams[FactorKind.LINGUISTIC] = _rounded(
        extract_factors(models.linguistic, utterance_id, features, FactorKind.LINGUISTIC, frame_cfg=models.frame_cfg)
    )
    for kind, network in ((FactorKind.SPEAKER, models.speaker), (FactorKind.EMOTION, models.emotion)):
        wanted = set(network.spec.conditioning)
        conditioning = [stream for k, stream in streams.items() if k.tag in wanted]
        streams[kind] = _rounded(
            extract_factors(network, utterance_id, features, kind, conditioning, frame_cfg=models.frame_cfg)
        )
    return streams


def load_model_set(
    run_cfg: RunConfig,
    manifest: CorpusManifest,
    speaker_stage: str = "spk-cdf",
    emotion_stage: str = "emo-ling-spk",
) -> CascadeModelSet:
    """
    Trained networks of one cascade configuration; absent stages stay None.
    """
    def optional(stage: str) -> Optional[Network]:
        try:
            return load_stage_network(run_cfg.cache_dir, stage)
        except MissingStageError:
            return None

    recon = None
    if (stage_dir(run_cfg.cache_dir, "recon") / "gen_q.cdfn").is_file():
        recon = load_recon_model(run_cfg.cache_dir)
    return CascadeModelSet(
        corpus_dims(manifest), optional("ling"), optional(speaker_stage), optional(emotion_stage), recon,
        frame_cfg=run_cfg.dsp,
    )


# Reconstruction stage

def recon_utterances(plan: StagePlan, records: Sequence[UtteranceRecord]) -> list:
    """Cached factors and log-spectrum targets of the given records."""
    sources = {name: plan.conditioning[RECON_FACTOR_KINDS[name]] for name in FACTORS}
    utterances = []
    for rec in records:
        target = load_features(rec.spectrum_path).data
        factors = {}
        for name, source in sources.items():
            stream = load_factors(stage_dir(plan.cache_dir, source), rec.utt_id, RECON_FACTOR_KINDS[name])
            factors[name] = stream.data.astype(plan.train_cfg.dtype)
        utterances.append(ReconUtterance(rec.utt_id, factors, target.astype(plan.train_cfg.dtype)))
    return utterances


def save_recon_model(model: ReconModel, directory: Union[str, Path]) -> None:
    for name, network in model.generators().items():
        save_network(network, Path(directory) / f"gen_{name}.cdfn")


def load_recon_model(cache_dir: Union[str, Path]) -> ReconModel:
    """
    Load the generators of the recon stage.

    Raises:
        MissingStageError: If the recon stage has not been trained
    """
    directory = stage_dir(cache_dir, "recon")
    networks = []
    for name in FACTORS:
        path = directory / f"gen_{name}.cdfn"
        if not path.is_file():
            raise MissingStageError("recon", f"{path} does not exist")
        networks.append(load_network(path))
    return ReconModel(*networks, spectrum_dim=networks[0].spec.output_dim, context=networks[0].spec.splice[0])


def _train_recon_stage(plan: StagePlan) -> tuple:
    cfg = plan.train_cfg
    settings = {"hidden": plan.recon.hidden, "num_hidden": plan.recon.num_hidden, "context": plan.recon.context}
    unknown = set(plan.network) - set(settings)
    if unknown:
        raise ConfigError(f"stage recon: unknown network option(s) {sorted(unknown)}")
    settings.update(plan.network)

    dims = corpus_dims(plan.corpus)
    train_records, valid_records = split_utterances(plan.corpus.subset("train"), cfg.validation_fraction, cfg.seed)
    if not train_records:
        raise DataError("stage recon: no training utterances")
    train = recon_utterances(plan, train_records)
    valid = recon_utterances(plan, valid_records)
    widths = {name: train[0].factors[name].shape[1] for name in FACTORS}
    if widths["q"] != dims.phones:
        raise DataError(f"cached linguistic factors are {widths['q']} wide, corpus has {dims.phones} phones")
    model = build_recon_model(
        widths["q"], train[0].target.shape[1], widths["s"], widths["e"],
        seed=stage_seed(cfg.seed, plan.name), dtype=cfg.dtype, **settings,
    )
    model, report = train_recon(model, train, valid, cfg, plan.recon.ablate, plan.name)
    save_recon_model(model, plan.directory)
    write_table(report.train_log.to_frame(), plan.directory / TRAIN_LOG_FILE)
    logger.info("recon validation MSE %.5f", report.frame_mse)
    return model, report.train_log
