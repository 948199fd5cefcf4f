"""
Spectrum reconstruction from factor streams.

Three generator networks map spliced linguistic, speaker and emotion factors
to per-frame log-spectra. Their outputs add up in the log domain and the sum
is trained jointly against the true log-spectrum with MSE.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from models.factors import EMOTION_FACTOR_DIM, SPEAKER_FACTOR_DIM, Network, ReconModel, ReconReport
from models.network import LayerSpec, NetworkSpec, ParamStore, TrainConfig
from utils.dsp import splice_indices
from utils.errors import DataError
from utils.nn import mse_loss, network_backward, network_forward, sgd_step
from utils.reports import spectrogram_image, stack_panels, write_pgm
from utils.training import FrameDataset, epoch_minibatches, run_epochs

logger = logging.getLogger(__name__)

FACTORS = ("q", "s", "e")


@dataclass
class ReconUtterance:
    """
    Factor streams and target log-spectrum of one utterance.

    Attributes:
        utt_id (str): Utterance identifier
        factors (dict): "q", "s", "e" -> T x d factor rows
        target (np.ndarray): T x D log-spectrum
    """

    utt_id: str
    factors: dict
    target: np.ndarray

    def __post_init__(self) -> None:
        frames = self.target.shape[0]
        for name in FACTORS:
            if name not in self.factors:
                raise DataError(f"{self.utt_id}: missing '{name}' factors")
            if self.factors[name].shape[0] != frames:
                raise DataError(
                    f"{self.utt_id}: '{name}' factors have {self.factors[name].shape[0]} frames, "
                    f"spectrum has {frames}"
                )


def build_generator(name: str, factor_dim: int, spectrum_dim: int, hidden: int, num_hidden: int, context: int) -> NetworkSpec:
    """Spliced factor -> ReLU hidden layers -> linear log-spectrum."""
    input_dim = (2 * context + 1) * factor_dim
    layers = []
    width = input_dim
    for _ in range(num_hidden):
        layers += [LayerSpec.fully_connected(width, hidden), LayerSpec.relu(hidden)]
        width = hidden
    layers.append(LayerSpec.fully_connected(width, spectrum_dim, tag="output"))
    spec = NetworkSpec(name, input_dim, layers, splice=(context, context))
    spec.check()
    return spec


def build_recon_model(
    phones: int,
    spectrum_dim: int,
    speaker_dim: int = SPEAKER_FACTOR_DIM,
    emotion_dim: int = EMOTION_FACTOR_DIM,
    hidden: int = 1024,
    num_hidden: int = 5,
    context: int = 4,
    seed: int = 0,
    dtype: str = "float32",
) -> ReconModel:
    """
    Build the three generators with fresh parameters.

    Args:
        phones: Linguistic factor width P (gen_q input is (2 context + 1) P)
        spectrum_dim: Log-spectrum bins D of every generator output
        speaker_dim: Speaker factor width
        emotion_dim: Emotion factor width
        hidden: Units per hidden layer
        num_hidden: Hidden layers per generator
        context: Frames spliced on each side of every factor
        seed: Initialisation seed (one stream per generator)
        dtype: Parameter dtype

    Returns:
        ReconModel: Untrained generators
    """
    seeds = np.random.SeedSequence(seed).spawn(3)
    networks = []
    for name, width, child in zip(FACTORS, (phones, speaker_dim, emotion_dim), seeds):
        spec = build_generator(f"gen_{name}", width, spectrum_dim, hidden, num_hidden, context)
        params = ParamStore.init(spec, int(child.generate_state(1)[0]), dtype)
        networks.append(Network(spec, params))
    return ReconModel(*networks, spectrum_dim=spectrum_dim, context=context)


def generator_input(rows: np.ndarray, context: int) -> np.ndarray:
    """Splice one utterance's factor rows with edge replication."""
    idx = splice_indices(rows.shape[0], context, context)
    return rows[idx].reshape(rows.shape[0], -1)


def reconstruct_frame(model: ReconModel, q_ctx: np.ndarray, s_ctx: np.ndarray, e_ctx: np.ndarray) -> tuple:
    """
    Reconstruct log-spectra from spliced factor rows.

    Args:
        model: Generators
        q_ctx: N x gen_q.input_dim spliced linguistic factors
        s_ctx: N x gen_s.input_dim spliced speaker factors
        e_ctx: N x gen_e.input_dim spliced emotion factors

    Returns:
        tuple: (N x D reconstruction, {"q", "s", "e"} -> N x D components);
               the reconstruction is exactly components q + s + e

    Raises:
        DataError: If an input does not match its generator
    """
    components = {}
    for name, x in zip(FACTORS, (q_ctx, s_ctx, e_ctx)):
        gen = model.generators()[name]
        x = np.atleast_2d(x)
        if x.shape[1] != gen.spec.input_dim:
            raise DataError(f"gen_{name} expects {gen.spec.input_dim} inputs, got {x.shape[1]}")
        components[name] = network_forward(gen.spec, gen.params, x).output
    if not components["q"].shape[0] == components["s"].shape[0] == components["e"].shape[0]:
        raise DataError("factor inputs have different row counts")
    return components["q"] + components["s"] + components["e"], components


def _inputs(model: ReconModel, utt: ReconUtterance, ablate: Sequence[str]) -> list:
    inputs = []
    for name in FACTORS:
        x = generator_input(utt.factors[name], model.context)
        inputs.append(np.zeros_like(x) if name in ablate else x)
    return inputs


def reconstruct_utterance(model: ReconModel, utt: ReconUtterance, ablate: Sequence[str] = ()) -> tuple:
    """Reconstruction and components of a whole utterance."""
    return reconstruct_frame(model, *_inputs(model, utt, ablate))


class _FramePool:
    """Concatenated factor streams that serve spliced minibatch rows."""

    def __init__(self, utterances: Sequence[ReconUtterance], context: int) -> None:
        lengths = np.array([utt.target.shape[0] for utt in utterances], dtype=np.int64)
        self.starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        self.lengths = lengths
        self.offsets = np.arange(-context, context + 1)
        self.factors = {name: np.concatenate([utt.factors[name] for utt in utterances]) for name in FACTORS}
        self.targets = np.concatenate([utt.target for utt in utterances])

    def gather(self, chunks: np.ndarray, ablate: Sequence[str]) -> tuple:
        seq, frame = chunks[:, 0], chunks[:, 1]
        local = np.clip(frame[:, None] + self.offsets[None, :], 0, self.lengths[seq][:, None] - 1)
        rows = self.starts[seq][:, None] + local
        inputs = []
        for name in FACTORS:
            x = self.factors[name][rows].reshape(len(seq), -1)
            inputs.append(np.zeros_like(x) if name in ablate else x)
        return inputs, self.targets[self.starts[seq] + frame]


def evaluate_recon(
    model: ReconModel,
    utterances: Sequence[ReconUtterance],
    ablate: Sequence[str] = (),
    keep: Optional[str] = None,
) -> ReconReport:
    """
    Score a model on whole utterances.

    Args:
        model: Generators
        utterances: Utterances to reconstruct
        ablate: Factors whose input is zeroed
        keep: Utterance whose spectrograms are kept (first one by default)

    Returns:
        ReconReport: Frame MSE, residual statistics and per-utterance MSE
    """
    if not utterances:
        raise DataError("no utterances to reconstruct")
    keep = keep or utterances[0].utt_id
    total, sq_total, count = 0.0, 0.0, 0
    rows = []
    report_arrays = {}
    for utt in utterances:
        recon, components = reconstruct_utterance(model, utt, ablate)
        residual = utt.target.astype(np.float64) - recon.astype(np.float64)
        total += float(residual.sum())
        sq_total += float(np.sum(residual ** 2))
        count += residual.size
        rows.append([utt.utt_id, utt.target.shape[0], float(np.mean(residual ** 2))])
        if utt.utt_id == keep:
            report_arrays = {
                "original": utt.target.astype(np.float64),
                "reconstruction": recon.astype(np.float64),
                "components": {k: v.astype(np.float64) for k, v in components.items()},
            }
    mean = total / count
    if not report_arrays:
        logger.warning("utterance %s was not among the reconstructed ones", keep)
    return ReconReport(
        frame_mse=sq_total / count,
        residual_mean=mean,
        residual_var=max(0.0, sq_total / count - mean ** 2),
        utterance_id=keep if report_arrays else "",
        original=report_arrays.get("original"),
        reconstruction=report_arrays.get("reconstruction"),
        components=report_arrays.get("components", {}),
        per_utterance=pd.DataFrame(rows, columns=["utterance_id", "frames", "mse"]),
    )


def train_recon(
    model: ReconModel,
    train: Sequence[ReconUtterance],
    valid: Sequence[ReconUtterance],
    cfg: TrainConfig,
    ablate: Sequence[str] = (),
    label: str = "recon",
) -> tuple:
    """
    Train the generators jointly through the additive composition, in place.

    Frames are shuffled globally each epoch. The MSE gradient at the summed
    output is the gradient at every generator output; the three generators
    run forward and backward on separate workers when cfg.threads > 1.

    Args:
        model: Generators to train
        train: Training utterances
        valid: Validation utterances (training data is reused when empty)
        cfg: Optimiser settings
        ablate: Factors whose input is zeroed
        label: Name used in log messages

    Returns:
        tuple: (model, ReconReport on the validation utterances)
    """
    if not train:
        raise DataError("no training utterances for reconstruction")
    unknown = set(ablate) - set(FACTORS)
    if unknown:
        raise ValueError(f"unknown factors to ablate: {sorted(unknown)}")
    held_out = list(valid) if valid else list(train)
    gens = [model.generators()[name] for name in FACTORS]
    velocities = [ParamStore.zeros_like(gen.params) for gen in gens]
    pool_data = _FramePool(train, model.context)
    frames = FrameDataset()
    for utt in train:
        frames.add(utt.utt_id, utt.target, utt.target)

    with ThreadPoolExecutor(max_workers=min(3, cfg.threads)) as pool:

        def forward(job: tuple):
            gen, x = job
            return network_forward(gen.spec, gen.params, x)

        def train_epoch(epoch: int, lr: float) -> tuple:
            total_loss, total_rows = 0.0, 0
            batches = tqdm(
                list(epoch_minibatches(frames, cfg, 0, epoch)),
                desc=f"{label} epoch {epoch}", leave=False, disable=None,
            )
            for chunks in batches:
                inputs, target = pool_data.gather(chunks, ablate)
                traces = list(pool.map(forward, zip(gens, inputs)))
                recon = traces[0].output + traces[1].output + traces[2].output
                loss, grad = mse_loss(recon, target.astype(recon.dtype))
                grads = list(pool.map(
                    lambda job: network_backward(job[0].spec, job[0].params, job[1], grad),
                    zip(gens, traces),
                ))
                for gen, gen_grads, velocity in zip(gens, grads, velocities):
                    sgd_step(gen.params, gen_grads, velocity, cfg, lr)
                total_loss += loss * len(chunks)
                total_rows += len(chunks)
            return total_loss / total_rows, float("nan")

        def validate() -> tuple:
            return evaluate_recon(model, held_out, ablate).frame_mse, float("nan")

        log = run_epochs(cfg, train_epoch, validate, label)

    report = evaluate_recon(model, held_out, ablate)
    report.train_log = log
    return model, report


def render_spectrograms(report: ReconReport, directory: Union[str, Path]) -> list:
    """
    Write the kept utterance's spectrograms as PGM images.

    Files: <utt>_original, <utt>_reconstruction, <utt>_component_{q,s,e} and
    <utt>_panel (all five stacked). Each image is scaled on its own.

    Returns:
        list: Written paths

    Raises:
        DataError: If the report holds no spectrograms
    """
    if report.original is None or report.reconstruction is None:
        raise DataError("reconstruction report holds no spectrograms to render")
    directory = Path(directory)
    panels = [("original", report.original), ("reconstruction", report.reconstruction)]
    panels += [(f"component_{name}", report.components[name]) for name in FACTORS]
    images = [spectrogram_image(values) for _, values in panels]
    paths = [
        write_pgm(image, directory / f"{report.utterance_id}_{name}.pgm")
        for (name, _), image in zip(panels, images)
    ]
    paths.append(write_pgm(stack_panels(images), directory / f"{report.utterance_id}_panel.pgm"))
    logger.info("rendered %d spectrogram images for %s", len(paths), report.utterance_id)
    return paths
