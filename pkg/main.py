"""
Command line entry point of the CDF toolkit.

    cdf <command> [--config PATH] [--seed N] [--threads N] [--out DIR]

Exit codes: 0 on success, 2 on a user, config or data error, 1 on an
internal error. The log level comes from the CDF_LOG environment variable.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import pandas as pd

from models.config import STAGE_NAMES, RunConfig
from models.corpus import CorpusManifest, UtteranceRecord
from models.factors import FactorKind
from utils.cascade import (
    extract_stage,
    load_recon_model,
    make_plan,
    recon_utterances,
    train_stage,
)
from utils.dsp import log_fbank, log_spectrum, read_wav
from utils.errors import CDFError, DataError, MissingStageError
from utils.evaluation import aer_report, cached_streams, project_stage, sid_report
from utils.reconstruct import evaluate_recon, render_spectrograms
from utils.reports import write_table
from utils.storage import (
    default_config,
    load_config,
    load_manifest,
    save_config,
    save_features,
    save_manifest,
)
from utils.synthcorpus import gen_corpus, oracle_factor_distance, template_noise_floor
from utils.translations import load_translation, message

logger = logging.getLogger("cdf")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
CASCADE_ORDER = ("ling", "spk-idf", "spk-cdf", "emo-baseline", "emo-ling", "emo-spk", "emo-ling-spk")
LABELS_FILE = "labels.tsv"
CORPUS_STAGE = "gen-corpus"


def configure_logging() -> None:
    """Configure the root logger from CDF_LOG (default INFO)."""
    name = os.environ.get("CDF_LOG", "INFO").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)
    if level == logging.INFO and name != "INFO":
        logger.warning("unknown CDF_LOG level '%s', using INFO", name)


def say(key: str, **values) -> None:
    print(message("Messages", key, **values))


def run_config(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        return load_config(args.config, args.seed, args.threads, args.out)
    base = Path(args.out) if args.out is not None else Path.cwd()
    cfg = default_config(base)
    if args.seed is not None or args.threads is not None:
        cfg = replace(
            cfg,
            seed=cfg.seed if args.seed is None else args.seed,
            threads=cfg.threads if args.threads is None else args.threads,
        )
    return cfg


def corpus(cfg: RunConfig) -> CorpusManifest:
    try:
        return load_manifest(cfg.corpus_dir)
    except FileNotFoundError as exc:
        raise MissingStageError(CORPUS_STAGE, str(exc)) from exc


# Commands

def cmd_gen_corpus(cfg: RunConfig, args: argparse.Namespace) -> None:
    manifest = gen_corpus(cfg.gen_config(), cfg.corpus_dir, cfg.dsp, cfg.threads)
    say("corpus written", count=len(manifest.records), path=cfg.corpus_dir)


def _wav_labels(wav_dir: Path) -> dict:
    path = wav_dir / LABELS_FILE
    if not path.is_file():
        logger.warning("%s not found; every utterance gets speaker 0 and emotion 0", path)
        return {}
    frame = pd.read_csv(path, sep="\t", dtype=str, keep_default_na=False)
    missing = {"file", "speaker", "emotion"} - set(frame.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    return {row["file"]: row for row in frame.to_dict("records")}


def cmd_featurize(cfg: RunConfig, args: argparse.Namespace) -> None:
    wav_dir = Path(args.wav_dir)
    files = sorted(wav_dir.glob("*.wav"))
    if not files:
        raise DataError(message("Errors", "no wav files", path=wav_dir))
    labels = _wav_labels(wav_dir)
    root = cfg.corpus_dir
    records = []
    for path in files:
        audio = read_wav(path)
        fbank = log_fbank(audio, cfg.dsp)
        spectrum = log_spectrum(audio, cfg.dsp)
        row = labels.get(path.name, {})
        record = UtteranceRecord(
            path.stem, int(row.get("speaker", 0)), int(row.get("emotion", 0)), fbank.num_frames,
            root / "fbank" / f"{path.stem}.cdfm", root / "spectrum" / f"{path.stem}.cdfm",
            None, row.get("subset", "train") or "train",
        )
        save_features(fbank, record.fbank_path)
        save_features(spectrum, record.spectrum_path)
        records.append(record)
    save_manifest(CorpusManifest(records, root))
    say("features written", count=len(records), path=root)


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> None:
    plan = make_plan(args.stage, cfg, corpus(cfg))
    _, log = train_stage(plan)
    last = log.epochs[-1]
    say("stage trained", stage=args.stage, epochs=last.epoch, loss=last.valid_loss)


def cmd_extract(cfg: RunConfig, args: argparse.Namespace) -> None:
    count = extract_stage(make_plan(args.stage, cfg, corpus(cfg)))
    say("stage extracted", stage=args.stage, count=count)


def cmd_eval_sid(cfg: RunConfig, args: argparse.Namespace) -> None:
    report = sid_report(cfg, corpus(cfg))
    say("report written", path=write_table(report, cfg.report_dir / "sid.csv"))


def cmd_eval_aer(cfg: RunConfig, args: argparse.Namespace) -> None:
    report, matrices = aer_report(cfg, corpus(cfg))
    for (stage, subset, level), cm in matrices.items():
        write_table(cm.to_frame(), cfg.report_dir / "confusion" / f"{stage}_{subset}_{level}.csv", index=True)
    say("report written", path=write_table(report, cfg.report_dir / "aer.csv"))


def cmd_reconstruct(cfg: RunConfig, args: argparse.Namespace) -> None:
    manifest = corpus(cfg)
    model = load_recon_model(cfg.cache_dir)
    plan = make_plan("recon", cfg, manifest)
    records = manifest.subset("test") or manifest.subset("train")
    utt_id = args.utterance or cfg.recon.utterance or records[0].utt_id
    try:
        target = manifest.get(utt_id)
    except KeyError as exc:
        raise DataError(str(exc)) from exc
    if target not in records:
        records = records + [target]
    report = evaluate_recon(model, recon_utterances(plan, records), cfg.recon.ablate, keep=utt_id)

    summary = report.summary()
    if manifest.templates is not None:
        floor = template_noise_floor(manifest, "test")
        summary = pd.concat([summary, pd.DataFrame({"metric": ["noise_floor"], "value": [floor]})], ignore_index=True)
    out = cfg.report_dir / "recon"
    write_table(summary, out / "recon_summary.csv")
    write_table(report.per_utterance, out / "recon_utterances.csv")
    paths = render_spectrograms(report, out)
    say("images written", count=len(paths), path=out)


def cmd_project(cfg: RunConfig, args: argparse.Namespace) -> None:
    points = project_stage(cfg, corpus(cfg), args.stage)
    say("report written", path=write_table(points, cfg.report_dir / f"projection_{args.stage}.csv"))


def cmd_init_config(cfg: RunConfig, args: argparse.Namespace) -> None:
    path = Path(args.path)
    save_config(default_config(path.parent), path)
    say("config written", path=path)


def cmd_pipeline(cfg: RunConfig, args: argparse.Namespace) -> None:
    cmd_gen_corpus(cfg, args)
    manifest = corpus(cfg)
    for stage in CASCADE_ORDER:
        plan = make_plan(stage, cfg, manifest)
        train_stage(plan)
        extract_stage(plan)
    train_stage(make_plan("recon", cfg, manifest))
    cmd_eval_sid(cfg, args)
    cmd_eval_aer(cfg, args)
    args.utterance = None
    cmd_reconstruct(cfg, args)

    records = manifest.subset("test")
    streams = []
    for stage, kind in (("ling", FactorKind.LINGUISTIC), ("spk-cdf", FactorKind.SPEAKER), ("emo-ling-spk", FactorKind.EMOTION)):
        streams += cached_streams(cfg.cache_dir, stage, records, kind).values()
    write_table(oracle_factor_distance(manifest, streams, seed=cfg.seed), cfg.report_dir / "factor_clustering.csv")
    say("pipeline done", path=cfg.report_dir)


COMMANDS = {
    "gen-corpus": cmd_gen_corpus,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "extract": cmd_extract,
    "eval-sid": cmd_eval_sid,
    "eval-aer": cmd_eval_aer,
    "reconstruct": cmd_reconstruct,
    "project": cmd_project,
    "init-config": cmd_init_config,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one sub-command per pipeline step."""
    t = load_translation("en")
    options = t["Options"]
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help=options["config"])
    common.add_argument("--seed", type=int, help=options["seed"])
    common.add_argument("--threads", type=int, help=options["threads"])
    common.add_argument("--out", type=Path, help=options["out"])

    parser = argparse.ArgumentParser(prog="cdf", description=t["subtitle"])
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = commands.add_parser(name, parents=[common], help=t["Commands"][name])
        if name in ("train", "extract"):
            sub.add_argument("stage", choices=STAGE_NAMES, help=options["stage"])
        elif name == "project":
            sub.add_argument("stage", choices=[s for s in STAGE_NAMES if s != "recon"], help=options["stage"])
        elif name == "featurize":
            sub.add_argument("wav_dir", type=Path, help=options["wav_dir"])
        elif name == "reconstruct":
            sub.add_argument("utterance", nargs="?", help=options["utterance"])
        elif name == "init-config":
            sub.add_argument("path", type=Path, help=options["path"])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one command.

    Returns:
        int: 0 on success, 2 on user/config/data errors, 1 on internal errors
    """
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2

    try:
        cfg = run_config(args)
        COMMANDS[args.command](cfg, args)
    except MissingStageError as exc:
        if exc.stage == CORPUS_STAGE:
            logger.error(message("Errors", "missing corpus", message=exc))
        else:
            logger.error(message("Errors", "missing stage", message=exc, stage=exc.stage))
        return 2
    except (CDFError, FileNotFoundError) as exc:
        logger.error(message("Errors", "user", message=exc))
        return 2
    except Exception as exc:
        logger.exception(message("Errors", "internal", message=exc))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
