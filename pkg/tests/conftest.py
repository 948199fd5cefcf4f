"""
Shared fixtures: a desk-sized configuration, a generated corpus and a fully
trained cascade reused by the cascade, evaluation, reconstruction and CLI tests.
"""

import copy
import json

import pytest

from utils.cascade import extract_stage, make_plan, train_stage
from utils.storage import load_manifest, parse_config
from utils.synthcorpus import gen_corpus

TINY_CONFIG = {
    "seed": 7,
    "threads": 1,
    "dsp": {"fft_size": 64, "n_mels": 8},
    "corpus": {
        "phones": 3,
        "speakers": 3,
        "emotions": 2,
        "spectrum_dim": 33,
        "utterances_per_pair": 3,
        "test_utterances_per_pair": 2,
        "min_frames": 40,
        "max_frames": 60,
        "min_phone_frames": 3,
        "sigma": 0.05,
    },
    "train": {"epochs": 2, "minibatch_size": 64, "learning_rate": 0.01, "chunk_frames": 8},
    "stages": [
        {"name": "ling", "network": {"hidden": 16, "num_hidden": 1, "context": 2}},
        {
            "name": "spk-idf",
            "network": {
                "conv_maps": [2, 2], "conv_kernels": [[3, 3], [2, 2]], "pool": [1, 1],
                "bottleneck": 16, "td_dim": 12, "pnorm_dim": 6, "offsets": [[-1, 0, 1], [-1, 0, 1]],
            },
        },
        {
            "name": "spk-cdf",
            "network": {
                "conv_maps": [2, 2], "conv_kernels": [[3, 3], [2, 2]], "pool": [1, 1],
                "bottleneck": 16, "td_dim": 12, "pnorm_dim": 6, "offsets": [[-1, 0, 1], [-1, 0, 1]],
            },
        },
        {"name": "emo-baseline", "network": {"context": 2, "hidden": 80, "offsets": [[0], [-1, 0, 1]]}},
        {"name": "emo-ling", "network": {"context": 2, "hidden": 80, "offsets": [[0], [-1, 0, 1]]}},
        {"name": "emo-spk", "network": {"context": 2, "hidden": 80, "offsets": [[0], [-1, 0, 1]]}},
        {"name": "emo-ling-spk", "network": {"context": 2, "hidden": 80, "offsets": [[0], [-1, 0, 1]]}},
        {"name": "recon", "network": {"hidden": 16, "num_hidden": 1, "context": 1}},
    ],
    "eval": {
        "conditions": [{"enroll_seconds": 0.5, "test_frames": 10}],
        "max_segments": 5,
        "project_speakers": 3,
    },
}

CASCADE = ("ling", "spk-idf", "spk-cdf", "emo-baseline", "emo-ling", "emo-spk", "emo-ling-spk")


@pytest.fixture
def tiny_config():
    """Fresh copy of the desk-sized configuration document."""
    return copy.deepcopy(TINY_CONFIG)


@pytest.fixture
def config_file(tmp_path, tiny_config):
    """The desk-sized configuration written next to an empty run directory."""
    path = tmp_path / "run.json"
    path.write_text(json.dumps(tiny_config), encoding="utf-8")
    return path


@pytest.fixture
def run_cfg(tmp_path, tiny_config):
    """Parsed desk-sized configuration rooted in a temporary directory."""
    return parse_config(tiny_config, tmp_path)


@pytest.fixture
def corpus(run_cfg):
    """Generated corpus of the desk-sized configuration."""
    return gen_corpus(run_cfg.gen_config(), run_cfg.corpus_dir, run_cfg.dsp)


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """
    Corpus and every cascade stage trained and extracted once per session.

    Returns:
        tuple: (RunConfig, CorpusManifest)
    """
    root = tmp_path_factory.mktemp("cascade")
    cfg = parse_config(copy.deepcopy(TINY_CONFIG), root)
    gen_corpus(cfg.gen_config(), cfg.corpus_dir, cfg.dsp)
    manifest = load_manifest(cfg.corpus_dir)
    for stage in CASCADE:
        plan = make_plan(stage, cfg, manifest)
        train_stage(plan)
        extract_stage(plan)
    train_stage(make_plan("recon", cfg, manifest))
    return cfg, manifest
