"""
Storage utilities for the CDF toolkit.

This module handles every file the toolkit reads or writes:
- CDFM feature matrices, CDFN networks and CDFF factor streams (little-endian binary)
- Phone label files (u16 per frame)
- The corpus manifest (tab-separated), templates and corpus.json
- The JSON run configuration, with unknown-key rejection and path resolution
"""

import json
import logging
import struct
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd

from models.audio import FeatureKind, FeatureMatrix, FrameConfig
from models.config import (
    STAGE_NAMES,
    EvalSection,
    PathsSection,
    ReconSection,
    RunConfig,
    StageEntry,
)
from models.corpus import MANIFEST_COLUMNS, CorpusManifest, GenConfig, Templates, UtteranceRecord
from models.evaluation import TrialCondition
from models.factors import FactorKind, FactorStream, Network
from models.network import LayerKind, LayerSpec, NetworkSpec, ParamStore, TrainConfig
from utils.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FEATURE_MAGIC = b"CDFM"
NETWORK_MAGIC = b"CDFN"
FACTOR_MAGIC = b"CDFF"
FORMAT_VERSION = 1

MANIFEST_NAME = "manifest.tsv"
CORPUS_CONFIG_NAME = "corpus.json"
TEMPLATE_NAMES = ("phone", "speaker", "emotion", "interaction")

# Keys owned by the top-level seed and threads fields
RUN_OWNED_KEYS = {"corpus": ("seed",), "train": ("seed", "threads")}


class _Reader:
    """Sequential little-endian reader over a byte string."""

    def __init__(self, payload: bytes, path: Path) -> None:
        self.payload = payload
        self.path = path
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.payload):
            raise DataError(f"{self.path}: truncated file")
        chunk = self.payload[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def text(self) -> str:
        (length,) = self.unpack("H")
        return self.take(length).decode("utf-8")

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)

    def finish(self) -> None:
        if self.pos != len(self.payload):
            raise DataError(f"{self.path}: {len(self.payload) - self.pos} trailing bytes")


def _open_binary(path: PathLike, magic: bytes) -> _Reader:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    reader = _Reader(path.read_bytes(), path)
    if reader.take(4) != magic:
        raise DataError(f"{path}: not a {magic.decode()} file")
    (version,) = reader.unpack("B")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported {magic.decode()} version {version}")
    return reader


def _text(value: str) -> bytes:
    encoded = value.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ValueError("string too long for a u16 length prefix")
    return struct.pack("<H", len(encoded)) + encoded


def _write(path: PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)


# Feature matrices

def save_features(feat: FeatureMatrix, path: PathLike) -> None:
    """
    Write a FeatureMatrix as a CDFM file.

    Args:
        feat: Features to write (stored as f32)
        path: Destination file
    """
    t, d = feat.data.shape
    header = FEATURE_MAGIC + struct.pack("<BBHIIf", FORMAT_VERSION, int(feat.kind), 0, t, d, feat.frame_shift_ms)
    _write(path, header + np.ascontiguousarray(feat.data, dtype="<f4").tobytes())


def load_features(path: PathLike) -> FeatureMatrix:
    """
    Read a CDFM file.

    Returns:
        FeatureMatrix: f32 data, frame shift and kind from the header

    Raises:
        FileNotFoundError: If the file does not exist
        DataError: On a bad magic, version or size
    """
    reader = _open_binary(path, FEATURE_MAGIC)
    kind, _, t, d, shift = reader.unpack("BHIIf")
    data = reader.floats(t * d).reshape(t, d)
    reader.finish()
    try:
        return FeatureMatrix(data, float(shift), FeatureKind(kind))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# Networks

def _layer_bytes(layer: LayerSpec) -> bytes:
    ints = [layer.in_dim, layer.out_dim, layer.out_channels, layer.group]
    for values in (layer.in_shape, layer.kernel, layer.stride, layer.offsets, layer.source_dims):
        ints += [len(values), *values]
    strings = [layer.tag, *layer.sources]
    payload = struct.pack("<BH", int(layer.kind), len(ints)) + struct.pack(f"<{len(ints)}i", *ints)
    payload += struct.pack("<Hf", 1, layer.p)
    payload += struct.pack("<H", len(strings)) + b"".join(_text(s) for s in strings)
    return payload


def _read_layer(reader: _Reader) -> LayerSpec:
    kind, count = reader.unpack("BH")
    ints = list(reader.unpack(f"{count}i"))
    (num_floats,) = reader.unpack("H")
    floats = reader.unpack(f"{num_floats}f")
    (num_strings,) = reader.unpack("H")
    strings = [reader.text() for _ in range(num_strings)]

    in_dim, out_dim, out_channels, group = ints[:4]
    rest = ints[4:]
    groups = []
    for _ in range(5):
        size = rest[0]
        groups.append(tuple(rest[1:1 + size]))
        rest = rest[1 + size:]
    in_shape, kernel, stride, offsets, source_dims = groups
    return LayerSpec(
        LayerKind(kind), in_dim, out_dim, in_shape=in_shape, out_channels=out_channels,
        kernel=kernel, stride=stride, offsets=offsets, group=group, p=float(floats[0]),
        sources=tuple(strings[1:]), source_dims=source_dims, tag=strings[0],
    )


def save_network(network: Network, path: PathLike) -> None:
    """
    Write a network (topology and parameters) as a CDFN file.

    Parameters are stored as f32; a float32 network round-trips bit-exactly.

    Args:
        network: Network to write
        path: Destination file
    """
    spec = network.spec
    payload = NETWORK_MAGIC + struct.pack("<B", FORMAT_VERSION) + _text(spec.name)
    payload += struct.pack("<IIIH", spec.input_dim, spec.splice[0], spec.splice[1], len(spec.layers))
    payload += b"".join(_layer_bytes(layer) for layer in spec.layers)
    indices = sorted(network.params.weights)
    payload += struct.pack("<H", len(indices))
    for idx in indices:
        payload += struct.pack("<I", idx)
        for array in (network.params.weights[idx], network.params.biases[idx]):
            payload += struct.pack(f"<B{array.ndim}I", array.ndim, *array.shape)
            payload += np.ascontiguousarray(array, dtype="<f4").tobytes()
    _write(path, payload)


def load_network(path: PathLike) -> Network:
    """
    Read a CDFN file.

    Returns:
        Network: Checked topology with float32 parameters

    Raises:
        FileNotFoundError: If the file does not exist
        DataError: On a malformed file
    """
    reader = _open_binary(path, NETWORK_MAGIC)
    name = reader.text()
    input_dim, left, right, num_layers = reader.unpack("IIIH")
    layers = [_read_layer(reader) for _ in range(num_layers)]
    params = ParamStore()
    (num_param_layers,) = reader.unpack("H")
    for _ in range(num_param_layers):
        (idx,) = reader.unpack("I")
        arrays = []
        for _ in range(2):
            (ndim,) = reader.unpack("B")
            shape = reader.unpack(f"{ndim}I")
            arrays.append(reader.floats(int(np.prod(shape))).reshape(shape))
        params.weights[idx], params.biases[idx] = arrays
    reader.finish()
    try:
        return Network(NetworkSpec(name, input_dim, layers, (left, right)), params)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


# Factor streams

def save_factors(stream: FactorStream, path: PathLike) -> None:
    """Write a FactorStream as a CDFF file (f32 rows)."""
    t, d = stream.data.shape
    payload = FACTOR_MAGIC + struct.pack("<BBII", FORMAT_VERSION, int(stream.kind), t, d)
    payload += _text(stream.utterance_id)
    _write(path, payload + np.ascontiguousarray(stream.data, dtype="<f4").tobytes())


def load_factor_file(path: PathLike) -> FactorStream:
    """
    Read a CDFF file.

    Raises:
        FileNotFoundError: If the file does not exist
        DataError: On a malformed file
    """
    reader = _open_binary(path, FACTOR_MAGIC)
    kind, t, d = reader.unpack("BII")
    utt_id = reader.text()
    data = reader.floats(t * d).reshape(t, d)
    reader.finish()
    return FactorStream(utt_id, FactorKind(kind), data)


# Phone labels

def save_phone_labels(labels: np.ndarray, path: PathLike) -> None:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise ValueError("phone labels must fit in u16")
    _write(path, labels.astype("<u2").tobytes())


def load_phone_labels(path: PathLike) -> np.ndarray:
    """Per-frame phone labels as int64."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"phone label file not found: {path}")
    payload = path.read_bytes()
    if len(payload) % 2:
        raise DataError(f"{path}: odd byte count in u16 label file")
    return np.frombuffer(payload, dtype="<u2").astype(np.int64)


# Corpus

def save_manifest(manifest: CorpusManifest) -> Path:
    """
    Write manifest.tsv, and corpus.json plus templates when the corpus is synthetic.

    Returns:
        Path: The manifest file
    """
    root = Path(manifest.root)
    root.mkdir(parents=True, exist_ok=True)
    path = root / MANIFEST_NAME
    manifest.to_frame().to_csv(path, sep="\t", index=False, lineterminator="\n")
    if manifest.config is not None:
        with open(root / CORPUS_CONFIG_NAME, "w", encoding="utf-8") as f:
            json.dump(asdict(manifest.config), f, indent=2)
    if manifest.templates is not None:
        save_templates(manifest.templates, root / "templates")
    return path


def load_manifest(root: PathLike) -> CorpusManifest:
    """
    Read a corpus directory written by save_manifest.

    Raises:
        FileNotFoundError: If manifest.tsv is absent
        DataError: On missing columns or inconsistent records
    """
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise FileNotFoundError(f"corpus manifest not found: {path}")
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    missing = [c for c in MANIFEST_COLUMNS[:7] if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    if "subset" not in frame.columns:
        frame["subset"] = "train"

    def resolve(value: str) -> Optional[Path]:
        if not value:
            return None
        candidate = Path(value)
        return candidate if candidate.is_absolute() else root / candidate

    try:
        records = [
            UtteranceRecord(
                row["id"], int(row["speaker"]), int(row["emotion"]), int(row["frames"]),
                resolve(row["fbank"]), resolve(row["spectrum"]), resolve(row["phones"]), row["subset"],
            )
            for row in frame.to_dict("records")
        ]
        config = None
        if (root / CORPUS_CONFIG_NAME).is_file():
            with open(root / CORPUS_CONFIG_NAME, "r", encoding="utf-8") as f:
                config = GenConfig(**json.load(f))
        templates = load_templates(root / "templates") if (root / "templates").is_dir() else None
        return CorpusManifest(records, root, config, templates)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_templates(templates: Templates, directory: PathLike) -> None:
    directory = Path(directory)
    for name in TEMPLATE_NAMES:
        values = getattr(templates, name)
        if values is None:
            continue
        rows = values.reshape(-1, values.shape[-1])
        save_features(FeatureMatrix(rows, kind=FeatureKind.LOG_SPECTRUM), directory / f"{name}.cdfm")


def load_templates(directory: PathLike) -> Templates:
    """Ground-truth templates (interaction reshaped to S x E x D when present)."""
    directory = Path(directory)
    arrays = {}
    for name in TEMPLATE_NAMES[:3]:
        arrays[name] = load_features(directory / f"{name}.cdfm").data.astype(np.float64)
    interaction = None
    if (directory / "interaction.cdfm").is_file():
        rows = load_features(directory / "interaction.cdfm").data.astype(np.float64)
        speakers = arrays["speaker"].shape[0]
        interaction = rows.reshape(speakers, -1, rows.shape[1])
    return Templates(arrays["phone"], arrays["speaker"], arrays["emotion"], interaction)


# Run configuration

def _section(cls: type, data: Any, where: str, exclude: tuple = ()) -> Any:
    """Build a dataclass from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    allowed = {f.name: f for f in fields(cls)}
    for key in data:
        if key not in allowed or key in exclude:
            raise ConfigError(f"unknown config key '{where}.{key}'")
    values = {}
    for key, value in data.items():
        default = allowed[key].default
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        values[key] = value
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _stage_entry(data: Any, where: str) -> StageEntry:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(data) - {"name", "train", "network"}
    if unknown:
        raise ConfigError(f"unknown config key '{where}.{sorted(unknown)[0]}'")
    name = data.get("name")
    if name not in STAGE_NAMES:
        raise ConfigError(f"{where}.name: unknown stage '{name}' (expected one of {', '.join(STAGE_NAMES)})")
    train = data.get("train", {})
    # Validates the override keys
    _section(TrainConfig, train, f"{where}.train", exclude=RUN_OWNED_KEYS["train"])
    network = data.get("network", {})
    if not isinstance(network, dict):
        raise ConfigError(f"{where}.network: expected an object")
    network = {k: tuple(map(tuple, v)) if _nested(v) else (tuple(v) if isinstance(v, list) else v)
               for k, v in network.items()}
    return StageEntry(name, dict(train), network)


def _nested(value: Any) -> bool:
    return isinstance(value, list) and bool(value) and all(isinstance(v, list) for v in value)


def _eval_section(data: Any) -> EvalSection:
    data = dict(data)
    if "conditions" in data:
        conditions = []
        for number, entry in enumerate(data["conditions"]):
            conditions.append(_section(TrialCondition, entry, f"eval.conditions[{number}]"))
        data["conditions"] = tuple(conditions)
    section = _section(EvalSection, data, "eval")
    if section.emotion_speaker_source not in ("spk-idf", "spk-cdf"):
        raise ConfigError("eval.emotion_speaker_source must be 'spk-idf' or 'spk-cdf'")
    for stage in (*section.sid_stages, *section.aer_stages):
        if stage not in STAGE_NAMES:
            raise ConfigError(f"eval: unknown stage '{stage}'")
    return section


def _recon_section(data: Any) -> ReconSection:
    section = _section(ReconSection, data, "recon")
    if set(section.sources) != {"q", "s", "e"}:
        raise ConfigError("recon.sources must name exactly the factors q, s and e")
    for factor, stage in section.sources.items():
        if stage not in STAGE_NAMES:
            raise ConfigError(f"recon.sources.{factor}: unknown stage '{stage}'")
    if not set(section.ablate) <= {"q", "s", "e"}:
        raise ConfigError("recon.ablate may only list q, s and e")
    return section


def _resolve(paths: PathsSection, base: Path) -> PathsSection:
    def absolute(value: Any) -> Path:
        value = Path(value).expanduser()
        return value if value.is_absolute() else (base / value).resolve()

    return PathsSection(*(absolute(getattr(paths, f.name)) for f in fields(PathsSection)))


def parse_config(data: Any, base_dir: PathLike = ".") -> RunConfig:
    """
    Build a RunConfig from a decoded JSON document.

    Args:
        data: Decoded JSON object
        base_dir: Directory that relative paths are resolved against

    Returns:
        RunConfig: Validated configuration with absolute paths

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    sections = {"dsp", "corpus", "train", "stages", "eval", "recon", "paths", "seed", "threads"}
    for key in data:
        if key not in sections:
            raise ConfigError(f"unknown config key '{key}'")

    stages = data.get("stages", [])
    if not isinstance(stages, list):
        raise ConfigError("stages: expected a list")
    entries = tuple(_stage_entry(entry, f"stages[{number}]") for number, entry in enumerate(stages))
    names = [entry.name for entry in entries]
    if len(set(names)) != len(names):
        raise ConfigError("stages: a stage is listed twice")

    seed = data.get("seed", 0)
    threads = data.get("threads", 1)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads must be a positive integer")

    base = Path(base_dir).resolve()
    return RunConfig(
        dsp=_section(FrameConfig, data.get("dsp", {}), "dsp"),
        corpus=_section(GenConfig, data.get("corpus", {}), "corpus", exclude=RUN_OWNED_KEYS["corpus"]),
        train=_section(TrainConfig, data.get("train", {}), "train", exclude=RUN_OWNED_KEYS["train"]),
        stages=entries,
        eval=_eval_section(data.get("eval", {})),
        recon=_recon_section(data.get("recon", {})),
        paths=_resolve(_section(PathsSection, data.get("paths", {}), "paths"), base),
        seed=seed,
        threads=threads,
        base_dir=base,
    )


def load_config(
    path: PathLike,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    out: Optional[PathLike] = None,
) -> RunConfig:
    """
    Load a JSON run configuration.

    Args:
        path: Config file; relative paths inside resolve against its directory
        seed: Override of the master seed
        threads: Override of the worker cap
        out: Directory that relative paths resolve against instead

    Returns:
        RunConfig: Validated configuration

    Raises:
        ConfigError: If the file is missing, malformed or has unknown keys
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    if isinstance(data, dict):
        if seed is not None:
            data["seed"] = seed
        if threads is not None:
            data["threads"] = threads
    cfg = parse_config(data, Path(out) if out is not None else path.parent)
    logger.debug("loaded config %s (seed %d, %d threads)", path, cfg.seed, cfg.threads)
    return cfg


def default_config(base_dir: PathLike = ".") -> RunConfig:
    """Desk-scale defaults with paths under base_dir."""
    return parse_config({}, base_dir)


def config_to_dict(cfg: RunConfig) -> dict:
    """
    JSON-ready form of a RunConfig; paths are written relative to base_dir when possible.

    Returns:
        dict: Document accepted by parse_config
    """
    def plain(value: Any) -> Any:
        if is_dataclass(value):
            return {f.name: plain(getattr(value, f.name)) for f in fields(value)}
        if isinstance(value, (tuple, list)):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        if isinstance(value, Path):
            try:
                return value.relative_to(cfg.base_dir).as_posix()
            except ValueError:
                return value.as_posix()
        return value

    document = plain(cfg)
    document.pop("base_dir")
    for section, keys in RUN_OWNED_KEYS.items():
        for key in keys:
            document[section].pop(key)
    return document


def save_config(cfg: RunConfig, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2, ensure_ascii=False)
        f.write("\n")
