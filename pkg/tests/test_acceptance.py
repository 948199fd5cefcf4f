"""
End-to-end checks on small synthetic corpora.

Tests cover:
- Speaker identification of the trained IDF and CDF speaker stages
- Emotion accuracy of the baseline and conditioned emotion stages
- Reconstruction error against the corpus noise level
- Byte-identical outputs of repeated pipeline runs

These train whole stages and are marked slow; deselect them with -m "not slow".
"""

import copy

import numpy as np
import pytest

from main import main
from models.audio import FrameConfig
from models.corpus import GenConfig
from models.network import TrainConfig
from tests.conftest import CASCADE, TINY_CONFIG
from utils.cascade import extract_stage, make_plan, train_stage
from utils.evaluation import aer_report, sid_report
from utils.reconstruct import ReconUtterance, build_recon_model, train_recon
from utils.storage import load_features, load_manifest, load_phone_labels, parse_config
from utils.synthcorpus import gen_corpus

pytestmark = pytest.mark.slow

# Speaker and emotion templates are constant over an utterance, so the
# network inputs keep their means here.
SEPARABLE_CONFIG = copy.deepcopy(TINY_CONFIG)
SEPARABLE_CONFIG.update({
    "seed": 3,
    "dsp": {"fft_size": 64, "n_mels": 8, "norm_means": False, "norm_vars": False},
    "corpus": {
        "phones": 3,
        "speakers": 4,
        "emotions": 2,
        "spectrum_dim": 33,
        "utterances_per_pair": 4,
        "test_utterances_per_pair": 3,
        "min_frames": 60,
        "max_frames": 80,
        "min_phone_frames": 4,
        "sigma": 0.1,
        "alpha_s": 1.0,
        "alpha_e": 1.0,
    },
    "train": {"epochs": 20, "minibatch_size": 64, "learning_rate": 0.01, "chunk_frames": 8},
    "eval": {"conditions": [{"enroll_seconds": 1.0, "test_frames": 20}], "max_segments": 10},
})


@pytest.fixture(scope="module")
def separable(tmp_path_factory):
    """
    Every cascade stage trained and extracted on a well separated corpus.

    Returns:
        tuple: (RunConfig, CorpusManifest)
    """
    cfg = parse_config(copy.deepcopy(SEPARABLE_CONFIG), tmp_path_factory.mktemp("separable"))
    gen_corpus(cfg.gen_config(), cfg.corpus_dir, cfg.dsp)
    manifest = load_manifest(cfg.corpus_dir)
    for stage in CASCADE:
        plan = make_plan(stage, cfg, manifest)
        train_stage(plan)
        extract_stage(plan)
    return cfg, manifest


def oracle_utterances(manifest):
    """Recon inputs built from the ground-truth labels as one-hot factors."""
    cfg = manifest.config
    utterances = {"train": [], "test": []}
    for rec in manifest.records:
        phones = load_phone_labels(rec.phones_path)
        frames = len(phones)
        factors = {
            "q": np.eye(cfg.phones)[phones],
            "s": np.tile(np.eye(cfg.speakers)[rec.speaker], (frames, 1)),
            "e": np.tile(np.eye(cfg.emotions)[rec.emotion], (frames, 1)),
        }
        target = load_features(rec.spectrum_path).data.astype(np.float64)
        utterances[rec.subset].append(ReconUtterance(rec.utt_id, factors, target))
    return utterances["train"], utterances["test"]


class TestSpeakerIdentification:
    """Test cases for identification with trained speaker factors"""

    def test_cdf_identifies_speakers(self, separable):
        """Test 20-frame segments are identified at 90% or better"""
        cfg, manifest = separable
        report = sid_report(cfg, manifest).set_index("stage")
        assert report.loc["spk-cdf", "trials"] == 4 * 10
        assert report.loc["spk-cdf", "idr"] >= 0.9

    def test_cdf_not_below_idf(self, separable):
        """Test conditioning on linguistic factors does not lower the identification rate"""
        cfg, manifest = separable
        report = sid_report(cfg, manifest).set_index("stage")
        assert report.loc["spk-cdf", "idr"] >= report.loc["spk-idf", "idr"]


class TestEmotionConditioning:
    """Test cases for emotion accuracy with and without factor conditioning"""

    def test_frame_accuracy_ordering(self, separable):
        """Test held-out frame ACC: baseline <= +ling <= +ling&spk and baseline <= +spk"""
        cfg, manifest = separable
        report, _ = aer_report(cfg, manifest, subsets=["test"])
        frame = report[(report["level"] == "frame") & (report["metric"] == "acc")]
        scores = dict(zip(frame["stage"], frame["value"]))
        assert scores["emo-baseline"] <= scores["emo-ling"] <= scores["emo-ling-spk"]
        assert scores["emo-baseline"] <= scores["emo-spk"]


class TestReconstructionError:
    """Test cases for generator accuracy against the corpus noise"""

    @pytest.mark.parametrize("sigma, bound", [(0.1, 1.5 * 0.1 ** 2), (0.0, 1e-2)])
    def test_held_out_mse(self, tmp_path, sigma, bound):
        """Test held-out MSE stays within the noise-dependent bound"""
        gen_cfg = GenConfig(
            phones=3, speakers=4, emotions=2, spectrum_dim=33, utterances_per_pair=4,
            test_utterances_per_pair=1, min_frames=60, max_frames=80, sigma=sigma, seed=4,
        )
        manifest = gen_corpus(gen_cfg, tmp_path, FrameConfig(fft_size=64, n_mels=8))
        train, test = oracle_utterances(manifest)
        model = build_recon_model(3, 33, speaker_dim=4, emotion_dim=2, hidden=32, num_hidden=1,
                                  context=0, seed=0, dtype="float64")
        cfg = TrainConfig(epochs=60, learning_rate=0.02, minibatch_size=32, dtype="float64")
        _, report = train_recon(model, train, test, cfg)
        assert report.frame_mse <= bound
        assert len(report.per_utterance) == len(test)


class TestDeterminism:
    """Test cases for repeated runs with the same seed"""

    def test_pipeline_outputs_identical(self, config_file, tmp_path):
        """Test two pipeline runs write byte-identical corpus, model, factor and report files"""
        roots = [tmp_path / "first", tmp_path / "second"]
        for root in roots:
            assert main(["pipeline", "--config", str(config_file), "--out", str(root)]) == 0

        first = sorted(p.relative_to(roots[0]) for p in roots[0].rglob("*") if p.is_file())
        second = sorted(p.relative_to(roots[1]) for p in roots[1].rglob("*") if p.is_file())
        assert first == second
        assert any(p.suffix == ".cdfn" for p in first)
        assert any(p.suffix == ".cdff" for p in first)
        for path in first:
            assert (roots[0] / path).read_bytes() == (roots[1] / path).read_bytes(), path
