"""
Network builders and factor extraction for the cascade.

Builders return NetworkSpecs for the linguistic frame classifier, the
convolutional/time-delay speaker network (with or without linguistic
conditioning at the bottleneck) and the time-delay emotion network (with
conditioning appended to its input). Layer widths default to the published
sizes and can be reduced through keyword arguments.
"""

import logging
from typing import Optional, Sequence

import numpy as np

from models.audio import FeatureKind, FeatureMatrix, FrameConfig
from models.factors import EMOTION_FACTOR_DIM, SPEAKER_FACTOR_DIM, FactorKind, FactorStream, Network
from models.network import LayerSpec, NetworkSpec
from utils.dsp import cmvn, splice
from utils.errors import DataError
from utils.nn import lengthnorm_forward, network_forward

logger = logging.getLogger(__name__)

SPEAKER_OFFSETS = ((-4, 0, 4), (-2, 0, 2))
EMOTION_OFFSETS = ((0,), (0,), (0,), (0,), (-4, 0, 4), (-2, 0, 2))

READ_LAYERS = {
    FactorKind.LINGUISTIC: "output",
    FactorKind.SPEAKER: "feature",
    FactorKind.EMOTION: "last_hidden",
}


def build_linguistic_net(
    phones: int,
    input_dim: int,
    hidden: int = 1024,
    num_hidden: int = 4,
    context: int = 5,
) -> NetworkSpec:
    """
    Phone classifier: spliced Fbank -> ReLU hidden layers -> softmax.

    Args:
        phones: Number of phone classes P
        input_dim: Width of the spliced input (n_mels * (2 * context + 1))
        hidden: Units per hidden layer
        num_hidden: Number of hidden layers
        context: Frames spliced on each side

    Returns:
        NetworkSpec: Checked topology
    """
    if phones < 2:
        raise ValueError("the linguistic network needs at least 2 phone classes")
    layers = []
    width = input_dim
    for _ in range(num_hidden):
        layers += [LayerSpec.fully_connected(width, hidden), LayerSpec.relu(hidden)]
        width = hidden
    layers += [LayerSpec.fully_connected(width, phones, tag="logits"), LayerSpec.softmax(phones)]
    spec = NetworkSpec("linguistic", input_dim, layers, splice=(context, context))
    spec.check()
    return spec


def build_speaker_net(
    speakers: int,
    cond_dim: int = 0,
    n_mels: int = 40,
    context: int = 4,
    conv_maps: tuple = (32, 64),
    conv_kernels: tuple = ((4, 8), (2, 4)),
    pool: tuple = (2, 2),
    bottleneck: int = 512,
    td_dim: int = 400,
    pnorm_dim: int = 80,
    feature_dim: int = SPEAKER_FACTOR_DIM,
    offsets: tuple = SPEAKER_OFFSETS,
) -> NetworkSpec:
    """
    Convolutional + time-delay speaker network.

    The spliced input is viewed as a (2 * context + 1) x n_mels time-frequency
    patch: conv -> pool -> conv -> pool -> bottleneck -> [concat linguistic
    posteriors] -> (time-delay -> p-norm) x 2 -> feature layer -> softmax.

    Args:
        speakers: Training speakers S
        cond_dim: Width of the linguistic factor appended at the bottleneck (0 for IDF)
        n_mels: Filterbank channels per frame
        context: Frames spliced on each side
        conv_maps: Feature maps of the two convolutional layers
        conv_kernels: (time, frequency) kernels of the two convolutional layers
        pool: Max-pooling window (and stride) after each convolution
        bottleneck: Bottleneck width
        td_dim: Output width of each time-delay layer
        pnorm_dim: Output width of each p-norm layer
        feature_dim: Speaker factor width
        offsets: Frame offsets of the two time-delay layers

    Returns:
        NetworkSpec: Checked topology

    Raises:
        ValueError: If fewer than 2 speakers are given
    """
    if speakers < 2:
        raise ValueError(f"speaker network needs at least 2 speakers, got {speakers}")
    frames = 2 * context + 1
    layers = []
    shape = (1, frames, n_mels)
    for maps, kernel in zip(conv_maps, conv_kernels):
        conv = LayerSpec.conv2d(shape, maps, kernel)
        pooling = LayerSpec.maxpool2d(conv.out_shape, pool)
        layers += [conv, LayerSpec.relu(conv.out_dim), pooling]
        shape = pooling.out_shape
    width = int(np.prod(shape))
    layers += [LayerSpec.fully_connected(width, bottleneck, tag="bottleneck"), LayerSpec.relu(bottleneck)]
    width = bottleneck
    if cond_dim:
        layers.append(LayerSpec.concat(width, (FactorKind.LINGUISTIC.tag,), (cond_dim,)))
        width += cond_dim
    for delays in offsets:
        layers += [LayerSpec.time_delay(width, td_dim, delays), LayerSpec.pnorm(td_dim, pnorm_dim)]
        width = pnorm_dim
    layers += [
        LayerSpec.fully_connected(width, feature_dim, tag="feature"),
        LayerSpec.fully_connected(feature_dim, speakers, tag="logits"),
        LayerSpec.softmax(speakers),
    ]
    spec = NetworkSpec("speaker", frames * n_mels, layers, splice=(context, context))
    spec.check()
    return spec


def build_emotion_net(
    emotions: int,
    conditioning: Optional[dict] = None,
    n_mels: int = 40,
    context: int = 4,
    hidden: int = 200,
    pnorm_dim: int = EMOTION_FACTOR_DIM,
    offsets: tuple = EMOTION_OFFSETS,
) -> NetworkSpec:
    """
    Time-delay emotion network with optional factor conditioning at the input.

    Args:
        emotions: Emotion classes E
        conditioning: Side-input tag -> width appended to the spliced Fbank,
                      e.g. {"linguistic": P, "speaker": 40}; empty for the baseline
        n_mels: Filterbank channels per frame
        context: Frames spliced on each side
        hidden: Output width of each time-delay layer
        pnorm_dim: Output width of each p-norm layer (the emotion factor width)
        offsets: Frame offsets of each time-delay layer

    Returns:
        NetworkSpec: Checked topology
    """
    if emotions < 2:
        raise ValueError(f"emotion network needs at least 2 emotions, got {emotions}")
    conditioning = dict(conditioning or {})
    input_dim = (2 * context + 1) * n_mels
    layers = []
    width = input_dim
    if conditioning:
        layers.append(LayerSpec.concat(width, tuple(conditioning), tuple(conditioning.values())))
        width = layers[-1].out_dim
    for number, delays in enumerate(offsets, start=1):
        tag = "last_hidden" if number == len(offsets) else ""
        layers += [LayerSpec.time_delay(width, hidden, delays), LayerSpec.pnorm(hidden, pnorm_dim, tag=tag)]
        width = pnorm_dim
    layers += [LayerSpec.fully_connected(width, emotions, tag="logits"), LayerSpec.softmax(emotions)]
    spec = NetworkSpec("emotion", input_dim, layers, splice=(context, context))
    spec.check()
    return spec


def context_radius(spec: NetworkSpec) -> int:
    """Input frames each side that can influence one output frame."""
    return max(spec.splice) + spec.receptive_radius


def network_input(spec: NetworkSpec, features: FeatureMatrix, frame_cfg: Optional[FrameConfig] = None) -> np.ndarray:
    """
    Turn raw per-frame features into the rows a network consumes.

    Log filterbank input is CMVN-normalised per utterance (as far as
    frame_cfg.norm_means and frame_cfg.norm_vars ask), then spliced.

    Returns:
        np.ndarray: T x spec.input_dim
    """
    if features.kind == FeatureKind.LOG_FBANK:
        frame_cfg = frame_cfg or FrameConfig()
        features = cmvn(features, frame_cfg.norm_means, frame_cfg.norm_vars)
    rows = splice(features, *spec.splice).data
    if rows.shape[1] != spec.input_dim:
        raise DataError(
            f"{spec.name} expects {spec.input_dim} spliced inputs, features give {rows.shape[1]}"
        )
    return rows


def length_normalize(v: np.ndarray) -> np.ndarray:
    """
    Scale a vector (or each row of a matrix) to unit L2 norm.

    Vectors with norm below 1e-8 are replaced by e1 and a warning is logged.

    Returns:
        np.ndarray: Unit vector(s) of the same shape
    """
    v = np.asarray(v, dtype=np.float64)
    rows = v.reshape(1, -1) if v.ndim == 1 else v
    normalised, _, degenerate = lengthnorm_forward(rows)
    if np.any(degenerate):
        logger.warning("length normalisation of %d zero-norm vector(s), using e1", int(degenerate.sum()))
    return normalised.reshape(v.shape)


def extract_factors(
    network: Network,
    utterance_id: str,
    features: FeatureMatrix,
    kind: FactorKind,
    conditioning: Sequence[FactorStream] = (),
    read_layer: Optional[str] = None,
    frame_cfg: Optional[FrameConfig] = None,
) -> FactorStream:
    """
    Read per-frame factors from a trained network.

    Args:
        network: Trained network
        utterance_id: Utterance the features belong to
        features: Raw log filterbank features of the utterance
        kind: Factor produced; speaker factors are length-normalised per frame
        conditioning: Earlier factor streams consumed by concat layers
        read_layer: Layer tag to read (defaults by kind: softmax output,
                    feature layer, last hidden layer)
        frame_cfg: Front-end settings of the input normalisation

    Returns:
        FactorStream: T x D factor rows

    Raises:
        DataError: If a conditioning stream is not frame-aligned with the features
    """
    spec = network.spec
    x = network_input(spec, features, frame_cfg)
    side = {}
    for stream in conditioning:
        if stream.num_frames != features.num_frames:
            raise DataError(
                f"{utterance_id}: {stream.kind.tag} factors have {stream.num_frames} frames, "
                f"features have {features.num_frames}"
            )
        side[stream.kind.tag] = stream.data
    missing = set(spec.conditioning) - set(side)
    if missing:
        raise DataError(f"{utterance_id}: {spec.name} network needs factors {sorted(missing)}")

    upto = spec.layer_index(read_layer or READ_LAYERS[kind])
    rows = network_forward(spec, network.params, x, side, upto=upto).output.astype(np.float64)
    if kind == FactorKind.SPEAKER:
        rows = length_normalize(rows)
    return FactorStream(utterance_id, kind, rows)


def posteriors(
    network: Network,
    features: FeatureMatrix,
    conditioning: Sequence[FactorStream] = (),
    frame_cfg: Optional[FrameConfig] = None,
) -> np.ndarray:
    """
    Frame-level softmax outputs of a classifier.

    Returns:
        np.ndarray: T x K posterior rows
    """
    side = {stream.kind.tag: stream.data for stream in conditioning}
    x = network_input(network.spec, features, frame_cfg)
    return network_forward(network.spec, network.params, x, side).output.astype(np.float64)
