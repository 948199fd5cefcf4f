"""
Tests for the stage registry, cascaded training and factor caching.

Tests cover:
- Stage plans and conditioning rules
- Seeded utterance splits and per-stage seeds
- Training and extraction on a desk-sized corpus, with cached outputs
- Missing-stage errors and whole-cascade inference
"""

import numpy as np
import pytest

from models.factors import FactorKind
from utils.cascade import (
    STAGES,
    StageKind,
    StagePlan,
    load_factors,
    load_model_set,
    make_plan,
    model_path,
    run_cascade,
    split_utterances,
    stage_dir,
    stage_seed,
    train_stage,
    extract_stage,
)
from utils.errors import ConfigError, MissingStageError
from utils.storage import load_features, parse_config


class TestPlans:
    """Test cases for stage plans"""

    def test_registry_covers_stage_names(self):
        """Test every stage has a registry entry"""
        assert set(STAGES) == {
            "ling", "spk-idf", "spk-cdf", "emo-baseline", "emo-ling", "emo-spk", "emo-ling-spk", "recon",
        }

    def test_emotion_sources(self, run_cfg, corpus):
        """Test the emotion stages read speaker factors from the configured source"""
        plan = make_plan("emo-ling-spk", run_cfg, corpus)
        assert plan.conditioning == {FactorKind.LINGUISTIC: "ling", FactorKind.SPEAKER: "spk-cdf"}
        assert make_plan("emo-baseline", run_cfg, corpus).conditioning == {}

    def test_idf_speaker_source(self, tmp_path, tiny_config, corpus):
        """Test eval.emotion_speaker_source switches the speaker source"""
        tiny_config["eval"]["emotion_speaker_source"] = "spk-idf"
        cfg = parse_config(tiny_config, tmp_path)
        assert make_plan("emo-spk", cfg, corpus).conditioning == {FactorKind.SPEAKER: "spk-idf"}

    def test_unknown_stage(self, run_cfg, corpus):
        """Test unknown stage names raise ConfigError"""
        with pytest.raises(ConfigError, match="unknown stage"):
            make_plan("spk-xyz", run_cfg, corpus)

    def test_disallowed_conditioning(self, run_cfg, corpus):
        """Test speaker stages cannot be conditioned on emotion factors"""
        plan = make_plan("spk-cdf", run_cfg, corpus)
        with pytest.raises(ConfigError, match="emotion"):
            StagePlan(
                "spk-bad", StageKind.SPEAKER, {FactorKind.EMOTION: "emo-baseline"},
                corpus, plan.train_cfg, plan.cache_dir,
            )

    def test_unknown_network_option(self, tmp_path, tiny_config, corpus):
        """Test builder overrides are checked against the builder signature"""
        tiny_config["stages"][0]["network"]["widht"] = 3
        cfg = parse_config(tiny_config, tmp_path)
        with pytest.raises(ConfigError, match="widht"):
            train_stage(make_plan("ling", cfg, corpus))


class TestSplitsAndSeeds:
    """Test cases for seeded splits"""

    def test_split_is_seeded_and_disjoint(self, corpus):
        """Test the validation split is reproducible and covers every record once"""
        records = corpus.subset("train")
        train, valid = split_utterances(records, 0.1, 3)
        again, _ = split_utterances(records, 0.1, 3)
        assert [r.utt_id for r in train] == [r.utt_id for r in again]
        assert len(valid) == 2
        assert {r.utt_id for r in train} | {r.utt_id for r in valid} == {r.utt_id for r in records}
        assert not {r.utt_id for r in train} & {r.utt_id for r in valid}

    def test_split_holds_out_at_least_one(self, corpus):
        """Test a small fraction still holds out one utterance"""
        _, valid = split_utterances(corpus.records[:3], 0.01, 0)
        assert len(valid) == 1

    def test_stage_seeds_differ(self):
        """Test stages derive different seeds from one master seed"""
        assert stage_seed(0, "ling") != stage_seed(0, "spk-idf")
        assert stage_seed(0, "ling") == stage_seed(0, "ling")


class TestMissingStages:
    """Test cases for stages run out of order"""

    def test_cdf_before_linguistic(self, run_cfg, corpus):
        """Test training spk-cdf before ling names the missing stage"""
        with pytest.raises(MissingStageError) as info:
            train_stage(make_plan("spk-cdf", run_cfg, corpus))
        assert info.value.stage == "ling"

    def test_extract_untrained(self, run_cfg, corpus):
        """Test extracting an untrained stage names it"""
        with pytest.raises(MissingStageError) as info:
            extract_stage(make_plan("spk-idf", run_cfg, corpus))
        assert info.value.stage == "spk-idf"

    def test_extract_recon(self, run_cfg, corpus):
        """Test the recon stage has no factors to extract"""
        with pytest.raises(ConfigError):
            extract_stage(make_plan("recon", run_cfg, corpus))

    def test_cascade_needs_all_networks(self, run_cfg, corpus):
        """Test cascade inference without trained networks raises MissingStageError"""
        models = load_model_set(run_cfg, corpus)
        features = load_features(corpus.records[0].fbank_path)
        with pytest.raises(MissingStageError):
            run_cascade(models, features)


class TestTrainedCascade:
    """Test cases on the session-trained cascade"""

    def test_models_and_logs_written(self, trained):
        """Test every stage left a model and a training log"""
        cfg, _ = trained
        for stage in ("ling", "spk-idf", "spk-cdf", "emo-baseline", "emo-ling", "emo-spk", "emo-ling-spk"):
            assert model_path(cfg.cache_dir, stage).is_file()
            assert (stage_dir(cfg.cache_dir, stage) / "train_log.csv").is_file()
        for name in ("q", "s", "e"):
            assert (stage_dir(cfg.cache_dir, "recon") / f"gen_{name}.cdfn").is_file()

    def test_factor_caches_are_aligned(self, trained):
        """Test cached factors have one row per feature frame"""
        cfg, manifest = trained
        for rec in manifest.records[:4]:
            ling = load_factors(stage_dir(cfg.cache_dir, "ling"), rec.utt_id, FactorKind.LINGUISTIC)
            spk = load_factors(stage_dir(cfg.cache_dir, "spk-cdf"), rec.utt_id, FactorKind.SPEAKER)
            emo = load_factors(stage_dir(cfg.cache_dir, "emo-ling-spk"), rec.utt_id, FactorKind.EMOTION)
            assert ling.num_frames == spk.num_frames == emo.num_frames == rec.num_frames
            assert ling.dim == 3
            assert spk.dim == 40
            np.testing.assert_allclose(ling.data.sum(axis=1), 1.0, rtol=1e-4)
            np.testing.assert_allclose(np.linalg.norm(spk.data, axis=1), 1.0, rtol=1e-4)

    def test_wrong_kind_rejected(self, trained):
        """Test reading a cache as another factor kind raises"""
        cfg, manifest = trained
        with pytest.raises(ValueError):
            load_factors(stage_dir(cfg.cache_dir, "ling"), manifest.records[0].utt_id, FactorKind.SPEAKER)

    def test_run_cascade_matches_caches(self, trained):
        """Test whole-cascade inference reproduces the cached factors"""
        cfg, manifest = trained
        rec = manifest.records[0]
        models = load_model_set(cfg, manifest)
        streams = run_cascade(models, load_features(rec.fbank_path), rec.utt_id)
        assert set(streams) == {FactorKind.LINGUISTIC, FactorKind.SPEAKER, FactorKind.EMOTION}
        cached = load_factors(stage_dir(cfg.cache_dir, "emo-ling-spk"), rec.utt_id, FactorKind.EMOTION)
        np.testing.assert_allclose(streams[FactorKind.EMOTION].data, cached.data, rtol=1e-4, atol=1e-5)
        assert models.recon is not None
