"""
Tests for the cdf command line.

Tests cover:
- Exit codes for success, user errors and bad arguments
- Missing-stage messages naming the stage to run
- Featurizing WAV files and the full pipeline on the desk-sized configuration
"""

import json

import numpy as np
import pandas as pd

from main import main
from models.audio import AudioBuffer
from utils.dsp import write_wav
from utils.storage import load_config, load_manifest


class TestExitCodes:
    """Test cases for command exit codes"""

    def test_init_config(self, tmp_path, capsys):
        """Test init-config writes a loadable configuration"""
        path = tmp_path / "run.json"
        assert main(["init-config", str(path)]) == 0
        assert load_config(path).train.minibatch_size == 256
        assert "run.json" in capsys.readouterr().out

    def test_unknown_command(self):
        """Test an unknown command is a usage error"""
        assert main(["frobnicate"]) == 2

    def test_unknown_stage(self, config_file):
        """Test stage names are checked by the parser"""
        assert main(["train", "spk-xyz", "--config", str(config_file)]) == 2

    def test_help(self, capsys):
        """Test --help exits successfully"""
        assert main(["--help"]) == 0
        assert "gen-corpus" in capsys.readouterr().out

    def test_bad_config(self, tmp_path):
        """Test an invalid configuration is a user error"""
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"train": {"learning_rat": 1}}))
        assert main(["gen-corpus", "--config", str(path)]) == 2

    def test_missing_config_file(self, tmp_path):
        """Test a missing configuration file is a user error"""
        assert main(["gen-corpus", "--config", str(tmp_path / "absent.json")]) == 2


class TestMissingStages:
    """Test cases for commands run out of order"""

    def test_train_before_corpus(self, config_file, caplog):
        """Test training without a corpus asks for gen-corpus"""
        assert main(["train", "ling", "--config", str(config_file)]) == 2
        assert "cdf gen-corpus" in caplog.text

    def test_cdf_before_linguistic(self, config_file, caplog):
        """Test spk-cdf before ling exits 2 and names ling"""
        assert main(["gen-corpus", "--config", str(config_file)]) == 0
        assert main(["train", "spk-cdf", "--config", str(config_file)]) == 2
        assert "stage 'ling' has not been run" in caplog.text
        assert "cdf train ling" in caplog.text

    def test_eval_sid_untrained(self, config_file, caplog):
        """Test eval-sid before the speaker stages exits 2"""
        assert main(["gen-corpus", "--config", str(config_file)]) == 0
        assert main(["eval-sid", "--config", str(config_file)]) == 2
        assert "spk-idf" in caplog.text

    def test_reconstruct_untrained(self, config_file):
        """Test reconstruct before the recon stage exits 2"""
        assert main(["gen-corpus", "--config", str(config_file)]) == 0
        assert main(["reconstruct", "--config", str(config_file)]) == 2


class TestCommands:
    """Test cases for complete commands"""

    def test_seed_override(self, config_file, tmp_path):
        """Test --seed and --out change the generated corpus location and content"""
        assert main(["gen-corpus", "--config", str(config_file), "--out", str(tmp_path / "a")]) == 0
        assert main(["gen-corpus", "--config", str(config_file), "--out", str(tmp_path / "b"), "--seed", "8"]) == 0
        first = load_manifest(tmp_path / "a" / "corpus")
        second = load_manifest(tmp_path / "b" / "corpus")
        assert first.config.seed == 7
        assert second.config.seed == 8
        assert not np.array_equal(first.templates.phone, second.templates.phone)

    def test_featurize(self, tmp_path):
        """Test WAV files become a manifest with labels from labels.tsv"""
        wav_dir = tmp_path / "wav"
        wav_dir.mkdir()
        rng = np.random.default_rng(0)
        for name in ("a", "b"):
            write_wav(AudioBuffer(0.1 * rng.standard_normal(4000), 8000), wav_dir / f"{name}.wav")
        (wav_dir / "labels.tsv").write_text("file\tspeaker\temotion\tsubset\na.wav\t1\t2\ttest\nb.wav\t0\t1\t\n")
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"dsp": {"n_mels": 8}}))

        assert main(["featurize", str(wav_dir), "--config", str(config)]) == 0
        manifest = load_manifest(tmp_path / "corpus")
        first, second = manifest.records
        assert (first.utt_id, first.speaker, first.emotion, first.subset) == ("a", 1, 2, "test")
        assert second.subset == "train"
        assert first.num_frames == 48

    def test_featurize_empty_directory(self, tmp_path, caplog):
        """Test a directory without WAV files is a user error"""
        assert main(["featurize", str(tmp_path)]) == 2
        assert "no WAV files" in caplog.text

    def test_featurize_empty_mel_filter(self, tmp_path, caplog):
        """Test a filterbank too fine for the FFT is a configuration error"""
        wav_dir = tmp_path / "wav"
        wav_dir.mkdir()
        write_wav(AudioBuffer(np.zeros(4000), 8000), wav_dir / "a.wav")
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"dsp": {"n_mels": 128}}))

        assert main(["featurize", str(wav_dir), "--config", str(config)]) == 2
        assert "cover no FFT bin" in caplog.text

    def test_pipeline(self, config_file, tmp_path):
        """Test the pipeline writes every report"""
        assert main(["pipeline", "--config", str(config_file)]) == 0
        reports = tmp_path / "reports"
        sid = pd.read_csv(reports / "sid.csv")
        assert sid["stage"].tolist() == ["spk-idf", "spk-cdf"]
        aer = pd.read_csv(reports / "aer.csv")
        assert set(aer["stage"]) == {"emo-baseline", "emo-ling", "emo-spk", "emo-ling-spk"}
        assert (reports / "confusion" / "emo-ling-spk_test_utterance.csv").is_file()
        summary = pd.read_csv(reports / "recon" / "recon_summary.csv")
        assert "noise_floor" in summary["metric"].tolist()
        assert len(list((reports / "recon").glob("*.pgm"))) == 6
        clustering = pd.read_csv(reports / "factor_clustering.csv")
        assert set(clustering["factor"]) >= {"speaker", "emotion"}

        assert main(["project", "spk-cdf", "--config", str(config_file)]) == 0
        assert (reports / "projection_spk-cdf.csv").is_file()
