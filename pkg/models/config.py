"""
Run configuration models for the CDF toolkit.

One JSON file drives a whole experiment. Each section maps onto a dataclass;
utils.storage loads and validates the file.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path

from models.audio import FrameConfig
from models.corpus import GenConfig
from models.evaluation import TrialCondition
from models.network import TrainConfig

STAGE_NAMES = (
    "ling", "spk-idf", "spk-cdf", "emo-baseline", "emo-ling", "emo-spk", "emo-ling-spk", "recon",
)

DEFAULT_CONDITIONS = (
    TrialCondition(30.0, 20),
    TrialCondition(30.0, 50),
    TrialCondition(30.0, 100),
)


@dataclass(frozen=True)
class PathsSection:
    """
    Output locations, resolved against the config file's directory.

    Attributes:
        corpus_dir (Path): Manifest, features and templates
        cache_dir (Path): Per-stage models and factor caches
        report_dir (Path): CSV reports and PGM images
    """

    corpus_dir: Path = Path("corpus")
    cache_dir: Path = Path("cache")
    report_dir: Path = Path("reports")


@dataclass(frozen=True)
class StageEntry:
    """
    Per-stage overrides.

    Attributes:
        name (str): Stage name (ling, spk-idf, spk-cdf, emo-*, recon)
        train (dict): TrainConfig fields overriding the [train] section
        network (dict): Builder keyword arguments (layer widths, offsets)
    """

    name: str
    train: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EvalSection:
    """
    Evaluation settings.

    Attributes:
        conditions (tuple[TrialCondition]): Speaker identification test conditions
        max_segments (int): Test segments per speaker and condition
        sid_subset (str): Subset used for enrollment and test segments
        sid_stages (tuple[str]): Speaker stages scored by eval-sid
        aer_stages (tuple[str]): Emotion stages scored by eval-aer
        aer_subsets (tuple[str]): Subsets scored by eval-aer
        emotion_speaker_source (str): Speaker stage conditioning the emotion stages
        project_speakers (int): Speakers drawn in the PCA projection
    """

    conditions: tuple = DEFAULT_CONDITIONS
    max_segments: int = 50
    sid_subset: str = "test"
    sid_stages: tuple = ("spk-idf", "spk-cdf")
    aer_stages: tuple = ("emo-baseline", "emo-ling", "emo-spk", "emo-ling-spk")
    aer_subsets: tuple = ("train", "test")
    emotion_speaker_source: str = "spk-cdf"
    project_speakers: int = 20


@dataclass(frozen=True)
class ReconSection:
    """
    Spectrum reconstruction settings.

    Attributes:
        hidden (int): Units per generator hidden layer
        num_hidden (int): Hidden layers per generator
        context (int): Frames spliced on each side of every factor stream
        sources (dict): Factor ("q", "s", "e") -> stage whose cache provides it
        ablate (tuple[str]): Factors whose context is zeroed during training
        utterance (str): Utterance rendered by default (first test utterance when empty)
    """

    hidden: int = 1024
    num_hidden: int = 5
    context: int = 4
    sources: dict = field(default_factory=lambda: {"q": "ling", "s": "spk-cdf", "e": "emo-ling-spk"})
    ablate: tuple = ()
    utterance: str = ""


@dataclass(frozen=True)
class RunConfig:
    """
    Complete experiment configuration.

    Attributes:
        dsp (FrameConfig): Front-end settings
        corpus (GenConfig): Synthetic corpus settings
        train (TrainConfig): Default optimiser settings of every stage
        stages (tuple[StageEntry]): Per-stage overrides
        eval (EvalSection): Evaluation settings
        recon (ReconSection): Reconstruction settings
        paths (PathsSection): Output locations (absolute after loading)
        seed (int): Master seed of corpus generation, splits and training
        threads (int): Worker cap
        base_dir (Path): Directory of the config file
    """

    dsp: FrameConfig = field(default_factory=FrameConfig)
    corpus: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    stages: tuple = ()
    eval: EvalSection = field(default_factory=EvalSection)
    recon: ReconSection = field(default_factory=ReconSection)
    paths: PathsSection = field(default_factory=PathsSection)
    seed: int = 0
    threads: int = 1
    base_dir: Path = Path(".")

    def stage(self, name: str) -> StageEntry:
        for entry in self.stages:
            if entry.name == name:
                return entry
        return StageEntry(name)

    def train_config(self, stage: str) -> TrainConfig:
        """TrainConfig of a stage: [train] defaults, stage overrides, master seed and threads."""
        return self.train.with_overrides(**self.stage(stage).train, seed=self.seed, threads=self.threads)

    def gen_config(self) -> GenConfig:
        return replace(self.corpus, seed=self.seed)

    @property
    def corpus_dir(self) -> Path:
        return self.paths.corpus_dir

    @property
    def cache_dir(self) -> Path:
        return self.paths.cache_dir

    @property
    def report_dir(self) -> Path:
        return self.paths.report_dir
