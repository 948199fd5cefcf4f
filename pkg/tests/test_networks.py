"""
Unit tests for the stage network builders and factor extraction.

Tests cover:
- Topologies of the linguistic, speaker and emotion networks
- Conditioning layers and their widths
- Network inputs, length normalisation and factor reading
- Finite-difference gradients and receptive fields of the built networks
"""

import numpy as np
import pytest

from models.audio import FeatureKind, FeatureMatrix, FrameConfig
from models.factors import FactorKind, FactorStream, Network
from models.network import LayerKind, ParamStore
from utils.dsp import splice
from utils.errors import DataError
from utils.nn import cross_entropy_loss, gradient_check, mse_loss, network_forward
from utils.networks import (
    build_emotion_net,
    build_linguistic_net,
    build_speaker_net,
    context_radius,
    extract_factors,
    length_normalize,
    network_input,
    posteriors,
)
from utils.reconstruct import build_recon_model

SMALL_SPEAKER = {
    "conv_maps": (2, 2), "conv_kernels": ((3, 3), (2, 2)), "pool": (1, 1),
    "bottleneck": 16, "td_dim": 12, "pnorm_dim": 6,
}


def fbank(frames=30, n_mels=8, seed=0):
    data = np.random.default_rng(seed).standard_normal((frames, n_mels))
    return FeatureMatrix(data, kind=FeatureKind.LOG_FBANK)


class TestBuilders:
    """Test cases for the network builders"""

    def test_linguistic_defaults(self):
        """Test the default phone classifier layout"""
        spec = build_linguistic_net(10, 40 * 11)
        kinds = [layer.kind for layer in spec.layers]
        assert kinds.count(LayerKind.FULLY_CONNECTED) == 5
        assert spec.splice == (5, 5)
        assert spec.output_dim == 10
        assert spec.ends_with_softmax

    def test_linguistic_needs_two_phones(self):
        """Test a single phone class is rejected"""
        with pytest.raises(ValueError):
            build_linguistic_net(1, 40)

    def test_speaker_default_shapes(self):
        """Test the published speaker network chains at 40 mels and 9 frames"""
        spec = build_speaker_net(20)
        assert spec.input_dim == 9 * 40
        assert spec.layers[spec.layer_index("feature")].out_dim == 40
        assert spec.layers[spec.layer_index("bottleneck")].out_dim == 512
        assert spec.receptive_radius == 6
        assert spec.conditioning == {}

    def test_speaker_cdf_conditioning(self):
        """Test the CDF speaker network appends linguistic factors after the bottleneck"""
        spec = build_speaker_net(5, cond_dim=10, n_mels=8, **SMALL_SPEAKER)
        concat = [layer for layer in spec.layers if layer.kind == LayerKind.CONCAT]
        assert len(concat) == 1
        assert concat[0].in_dim == 16
        assert spec.conditioning == {"linguistic": 10}

    def test_speaker_needs_two_speakers(self):
        """Test fewer than two speakers is rejected"""
        with pytest.raises(ValueError):
            build_speaker_net(1)

    def test_emotion_conditioning_at_input(self):
        """Test emotion conditioning is concatenated before the first time-delay layer"""
        spec = build_emotion_net(4, {"linguistic": 10, "speaker": 40})
        assert spec.layers[0].kind == LayerKind.CONCAT
        assert spec.layers[0].out_dim == 9 * 40 + 50
        assert spec.layers[spec.layer_index("last_hidden")].out_dim == 40
        assert spec.receptive_radius == 6

    def test_emotion_baseline(self):
        """Test the baseline emotion network has no conditioning"""
        spec = build_emotion_net(4)
        assert spec.conditioning == {}
        assert context_radius(spec) == 4 + 6


class TestFactors:
    """Test cases for inputs and factor extraction"""

    def test_network_input_width_mismatch(self):
        """Test features of the wrong width raise DataError"""
        spec = build_linguistic_net(3, 8 * 5, hidden=4, num_hidden=1, context=2)
        with pytest.raises(DataError):
            network_input(spec, fbank(n_mels=6))

    def test_network_input_normalisation(self):
        """Test the front-end switches decide whether inputs are normalised"""
        spec = build_linguistic_net(3, 8, hidden=4, num_hidden=1, context=0)
        feat = fbank()
        np.testing.assert_allclose(network_input(spec, feat).mean(axis=0), 0.0, atol=1e-12)
        raw = network_input(spec, feat, FrameConfig(n_mels=8, norm_means=False, norm_vars=False))
        np.testing.assert_allclose(raw, feat.data, atol=1e-12)

    def test_length_normalize(self):
        """Test vectors and matrix rows are scaled to unit length"""
        np.testing.assert_allclose(length_normalize(np.array([3.0, 4.0, 0.0])), [0.6, 0.8, 0.0])
        rows = length_normalize(np.array([[0.0, 2.0], [1.0, 0.0]]))
        np.testing.assert_allclose(rows, [[0.0, 1.0], [1.0, 0.0]])

    def test_length_normalize_zero_vector(self, caplog):
        """Test a zero vector maps to e1 with a warning"""
        out = length_normalize(np.zeros(4))
        np.testing.assert_array_equal(out, [1.0, 0.0, 0.0, 0.0])
        assert "zero-norm" in caplog.text

    def test_linguistic_factors_are_posteriors(self):
        """Test linguistic factors are the softmax rows"""
        spec = build_linguistic_net(3, 8 * 5, hidden=4, num_hidden=1, context=2)
        network = Network(spec, ParamStore.init(spec, 0))
        stream = extract_factors(network, "u", fbank(), FactorKind.LINGUISTIC)
        assert stream.data.shape == (30, 3)
        np.testing.assert_allclose(stream.data.sum(axis=1), 1.0, rtol=1e-5)
        np.testing.assert_allclose(stream.data, posteriors(network, fbank()), rtol=1e-6)

    def test_speaker_factors_unit_norm(self):
        """Test speaker factors are length-normalised per frame"""
        spec = build_speaker_net(3, n_mels=8, **SMALL_SPEAKER)
        network = Network(spec, ParamStore.init(spec, 0))
        stream = extract_factors(network, "u", fbank(), FactorKind.SPEAKER)
        assert stream.dim == 40
        np.testing.assert_allclose(np.linalg.norm(stream.data, axis=1), 1.0, rtol=1e-6)

    def test_misaligned_conditioning(self):
        """Test a conditioning stream with another frame count raises DataError"""
        spec = build_speaker_net(3, cond_dim=3, n_mels=8, **SMALL_SPEAKER)
        network = Network(spec, ParamStore.init(spec, 0))
        ling = FactorStream("u", FactorKind.LINGUISTIC, np.full((29, 3), 1 / 3))
        with pytest.raises(DataError, match="frames"):
            extract_factors(network, "u", fbank(), FactorKind.SPEAKER, [ling])

    def test_missing_conditioning(self):
        """Test omitting a required conditioning stream raises DataError"""
        spec = build_speaker_net(3, cond_dim=3, n_mels=8, **SMALL_SPEAKER)
        network = Network(spec, ParamStore.init(spec, 0))
        with pytest.raises(DataError, match="linguistic"):
            extract_factors(network, "u", fbank(), FactorKind.SPEAKER)


GRAD_TOLERANCE = 1e-4
SMALL_EMOTION = {"n_mels": 4, "context": 1, "hidden": 8, "pnorm_dim": 4}


def builder_gradient_error(spec, loss, side_dims=None, frames=12):
    """Second-best relative gradient error over three parameter seeds."""
    rng = np.random.default_rng(7)
    x = rng.standard_normal((frames, spec.input_dim))
    side = {tag: rng.random((frames, width)) for tag, width in (side_dims or {}).items()}
    errors = sorted(
        gradient_check(spec, ParamStore.init(spec, seed), x, loss, side, num_checks=60, seed=seed)
        for seed in (1, 2, 3)
    )
    # a ReLU kink can spoil one seed; a wrong backward pass spoils all of them
    return errors[1]


def classes(count, frames=12):
    labels = np.random.default_rng(3).integers(0, count, frames)
    return lambda out: cross_entropy_loss(out, labels)


def regression(width, frames=12):
    target = np.random.default_rng(3).standard_normal((frames, width))
    return lambda out: mse_loss(out, target)


class TestBuiltNetworkGradients:
    """Test cases for finite-difference gradients of every built network"""

    def test_linguistic(self):
        """Test the phone classifier"""
        spec = build_linguistic_net(4, 8 * 3, hidden=10, num_hidden=2, context=1)
        assert builder_gradient_error(spec, classes(4)) < GRAD_TOLERANCE

    def test_speaker_idf(self):
        """Test the speaker network without conditioning"""
        spec = build_speaker_net(3, n_mels=8, **SMALL_SPEAKER)
        assert builder_gradient_error(spec, classes(3)) < GRAD_TOLERANCE

    def test_speaker_cdf(self):
        """Test the speaker network with linguistic factors at the bottleneck"""
        spec = build_speaker_net(3, cond_dim=4, n_mels=8, **SMALL_SPEAKER)
        assert builder_gradient_error(spec, classes(3), {"linguistic": 4}) < GRAD_TOLERANCE

    @pytest.mark.parametrize("conditioning", [{}, {"linguistic": 4}, {"speaker": 5}, {"linguistic": 4, "speaker": 5}])
    def test_emotion(self, conditioning):
        """Test the emotion network with each conditioning set"""
        spec = build_emotion_net(3, conditioning, **SMALL_EMOTION)
        assert builder_gradient_error(spec, classes(3), conditioning) < GRAD_TOLERANCE

    @pytest.mark.parametrize("name", ["q", "s", "e"])
    def test_recon_generators(self, name):
        """Test each spectrum generator"""
        model = build_recon_model(4, 6, speaker_dim=5, emotion_dim=3, hidden=8, num_hidden=2, context=1, dtype="float64")
        spec = model.generators()[name].spec
        assert builder_gradient_error(spec, regression(6)) < GRAD_TOLERANCE


class TestReceptiveField:
    """Test cases for the context each output frame sees"""

    @pytest.mark.parametrize("builder", [lambda: build_speaker_net(20), lambda: build_emotion_net(4)])
    def test_impulse_reaches_ten_frames(self, builder):
        """Test an impulse at frame t0 changes exactly the outputs t0-10 .. t0+10"""
        spec = builder()
        params = ParamStore.init(spec, 0)
        raw = np.random.default_rng(0).standard_normal((41, 40))
        bumped = raw.copy()
        bumped[20] += 5.0
        left, right = spec.splice

        outputs = [
            network_forward(spec, params, splice(FeatureMatrix(data), left, right).data).output
            for data in (raw, bumped)
        ]
        changed = np.flatnonzero(np.abs(outputs[1] - outputs[0]).max(axis=1) > 1e-12)
        assert changed.tolist() == list(range(10, 31))
        assert context_radius(spec) == 10
