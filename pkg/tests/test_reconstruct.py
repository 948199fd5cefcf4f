"""
Unit tests for spectrum reconstruction and report images.

Tests cover:
- Additive composition of the three generators
- Factor ablation and misaligned inputs
- Joint training, scoring and spectrogram rendering
- PGM panels
"""

import numpy as np
import pytest

from models.network import TrainConfig
from utils.cascade import load_recon_model, make_plan, recon_utterances
from utils.errors import DataError
from utils.reconstruct import (
    ReconUtterance,
    build_recon_model,
    evaluate_recon,
    generator_input,
    reconstruct_frame,
    reconstruct_utterance,
    render_spectrograms,
    train_recon,
)
from utils.reports import read_pgm, spectrogram_image, stack_panels


def toy_utterances(count=4, frames=12, seed=0):
    """Utterances whose spectrum is a fixed linear map of their factors."""
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal((3 + 4 + 2, 5))
    utterances = []
    for number in range(count):
        q = np.eye(3)[rng.integers(0, 3, frames)]
        s = np.tile(rng.standard_normal(4), (frames, 1))
        e = np.tile(np.eye(2)[number % 2], (frames, 1))
        target = np.hstack([q, s, e]) @ mix
        utterances.append(ReconUtterance(f"u{number}", {"q": q, "s": s, "e": e}, target))
    return utterances


def toy_model(seed=0):
    return build_recon_model(3, 5, speaker_dim=4, emotion_dim=2, hidden=8, num_hidden=1, context=1, seed=seed, dtype="float64")


class TestComposition:
    """Test cases for the additive generator composition"""

    def test_sum_of_components(self):
        """Test the reconstruction is exactly q + s + e"""
        model = toy_model()
        recon, parts = reconstruct_utterance(model, toy_utterances(1)[0])
        np.testing.assert_array_equal(recon, parts["q"] + parts["s"] + parts["e"])
        assert recon.shape == (12, 5)

    def test_zero_weights_give_bias_sum(self):
        """Test generators without weights output the sum of their last biases"""
        model = toy_model()
        biases = np.zeros(5)
        for gen in model.generators().values():
            for idx, name, array in gen.params.arrays():
                if name == "weight":
                    array[...] = 0.0
                else:
                    array[...] = 0.1 * (idx + 1)
            last = max(idx for idx, _, _ in gen.params.arrays())
            biases += gen.params.biases[last]
        recon, _ = reconstruct_utterance(model, toy_utterances(1)[0])
        np.testing.assert_allclose(recon, np.tile(biases, (12, 1)))

    def test_generator_widths(self):
        """Test each generator takes its spliced factor width"""
        model = toy_model()
        assert model.gen_q.spec.input_dim == 3 * 3
        assert model.gen_s.spec.input_dim == 3 * 4
        assert model.gen_e.spec.input_dim == 3 * 2

    def test_ablation_zeroes_inputs(self):
        """Test an ablated factor sees zero inputs"""
        model = toy_model()
        utt = toy_utterances(1)[0]
        _, parts = reconstruct_utterance(model, utt, ablate=("s",))
        zero = np.zeros((12, model.gen_s.spec.input_dim))
        _, expected = reconstruct_frame(
            model,
            generator_input(utt.factors["q"], 1),
            zero,
            generator_input(utt.factors["e"], 1),
        )
        np.testing.assert_allclose(parts["s"], expected["s"])

    def test_wrong_input_width(self):
        """Test inputs of the wrong width raise DataError"""
        model = toy_model()
        with pytest.raises(DataError, match="gen_q"):
            reconstruct_frame(model, np.zeros((2, 4)), np.zeros((2, 12)), np.zeros((2, 6)))

    def test_misaligned_utterance(self):
        """Test factor streams must match the spectrum length"""
        with pytest.raises(DataError, match="'s' factors"):
            ReconUtterance("u", {"q": np.zeros((5, 3)), "s": np.zeros((4, 4)), "e": np.zeros((5, 2))}, np.zeros((5, 5)))


class TestTraining:
    """Test cases for joint training"""

    def test_mse_falls(self):
        """Test training lowers the reconstruction error"""
        utterances = toy_utterances()
        model = toy_model()
        before = evaluate_recon(model, utterances).frame_mse
        cfg = TrainConfig(epochs=5, learning_rate=0.02, minibatch_size=8)
        model, report = train_recon(model, utterances, [], cfg)
        assert report.frame_mse < before
        assert 1 <= len(report.train_log.epochs) <= 5

    def test_threads_do_not_change_result(self):
        """Test generator workers give the same parameters as a single thread"""
        results = []
        for threads in (1, 3):
            cfg = TrainConfig(epochs=2, minibatch_size=8, threads=threads)
            model, _ = train_recon(toy_model(), toy_utterances(), [], cfg)
            results.append(model)
        for name in ("q", "s", "e"):
            one = results[0].generators()[name].params.arrays()
            three = results[1].generators()[name].params.arrays()
            for (_, _, a), (_, _, b) in zip(one, three):
                np.testing.assert_allclose(a, b)

    def test_unknown_ablation(self):
        """Test ablating an unknown factor raises"""
        with pytest.raises(ValueError):
            train_recon(toy_model(), toy_utterances(), [], TrainConfig(epochs=1), ablate=("x",))

    def test_report_statistics(self):
        """Test the report keeps per-utterance rows and the first utterance's spectrograms"""
        utterances = toy_utterances()
        report = evaluate_recon(toy_model(), utterances)
        assert report.utterance_id == "u0"
        assert report.per_utterance["utterance_id"].tolist() == ["u0", "u1", "u2", "u3"]
        assert report.frame_mse == pytest.approx(report.per_utterance["mse"].mean())
        assert report.residual_var <= report.frame_mse + 1e-12


class TestImages:
    """Test cases for spectrogram images"""

    def test_constant_image(self):
        """Test a constant spectrogram maps to black"""
        assert not spectrogram_image(np.full((4, 3), 2.5)).any()

    def test_orientation_and_scale(self):
        """Test bin 0 is the bottom row and values span 0-255"""
        image = spectrogram_image(np.array([[0.0, 1.0], [2.0, 3.0]]))
        assert image.shape == (2, 2)
        assert image[-1].tolist() == [0, 170]
        assert image[0].tolist() == [85, 255]

    def test_stack_panels(self):
        """Test panels are separated by white rows"""
        panel = stack_panels([np.zeros((2, 3), np.uint8), np.zeros((1, 3), np.uint8)], gap=2)
        assert panel.shape == (5, 3)
        assert (panel[2:4] == 255).all()
        with pytest.raises(ValueError):
            stack_panels([np.zeros((2, 3), np.uint8), np.zeros((2, 4), np.uint8)])

    def test_render(self, tmp_path):
        """Test five images and a panel are written"""
        report = evaluate_recon(toy_model(), toy_utterances())
        paths = render_spectrograms(report, tmp_path)
        assert len(paths) == 6
        assert paths[-1].name == "u0_panel.pgm"
        original = read_pgm(tmp_path / "u0_original.pgm")
        assert original.shape == (5, 12)
        assert read_pgm(paths[-1]).shape == (5 * 5 + 4 * 2, 12)


class TestTrainedRecon:
    """Test cases on the session-trained generators"""

    def test_reload_and_score(self, trained):
        """Test the saved generators reconstruct cached test utterances"""
        cfg, manifest = trained
        model = load_recon_model(cfg.cache_dir)
        assert model.spectrum_dim == 33
        assert model.context == 1
        assert model.gen_q.spec.input_dim == 3 * 3
        utterances = recon_utterances(make_plan("recon", cfg, manifest), manifest.subset("test"))
        report = evaluate_recon(model, utterances)
        assert np.isfinite(report.frame_mse)
        assert len(report.per_utterance) == len(manifest.subset("test"))
