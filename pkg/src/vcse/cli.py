"""Command-line entry point.

All commands share a working directory (``--out``) laid out as::

    corpus/raw/         generated or user-supplied raw corpus + manifest.ndjson
    corpus/prepared/    3 s utterances + manifest.ndjson
    mixtures/           {train,valid,test}.ndjson, summary.json
    checkpoints/        {variant}_{stage}_{epoch}.ckpt
    runs/               {variant}.ndjson event logs
    eval/               {variant}.json rows (+ per-utterance scores)
    report/             results.txt, results.csv, si_snri.png
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import torch

from .checkpoint import CheckpointError
from .config import load_config, to_dict
from .datakit import (
    DataError,
    generate_toy_corpus,
    load_mixtures,
    materialize_mixtures,
    prepare_corpus,
    save_mixtures,
    simulate_mixtures,
)
from .datakit.formats import FormatError
from .evaluation import EvalRow, evaluate
from .extractors import VARIANTS, build_variant
from .report import render_report
from .trainkit import (
    FreezeViolation,
    MissingCheckpointError,
    StageData,
    load_trained,
    run_stage,
    stage_plan,
    train_variant,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUN = 0, 1, 2, 3

log = logging.getLogger("vcse")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="YAML config file (default: $VCSE_CONFIG)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--toy", action="store_true", help="use desk-scale toy presets everywhere")
    p.add_argument("--out", type=Path, default=Path("vcse_work"), help="working directory")
    p.add_argument("--device", choices=("cpu", "gpu"), default="cpu")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="vcse", description="Visual-contextual speaker extraction toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("toy-corpus", parents=[common], help="synthesise a toy audio-visual corpus")
    p.add_argument("--n-speakers", type=int)
    p.add_argument("--n-utterances", type=int)

    p = sub.add_parser("simulate", parents=[common], help="prepare utterances and simulate mixtures")
    p.add_argument("--manifest", type=Path, help="raw corpus manifest (default: OUT/corpus/raw/manifest.ndjson)")
    p.add_argument("--counts", type=int, nargs=3, metavar=("TRAIN", "VALID", "TEST"))
    p.add_argument("--materialize", action="store_true", help="also write mixture WAV files")

    p = sub.add_parser("train", parents=[common], help="run one training stage")
    p.add_argument("--stage", type=int, required=True)
    p.add_argument("--variant", choices=VARIANTS, default="vcse")
    p.add_argument("--epochs", type=int, help="override the stage epoch budget")
    p.add_argument("--asr-checkpoint", type=Path, help="external ASR checkpoint replacing stage 2")

    p = sub.add_parser("train-all", parents=[common], help="run every stage of one variant (or all)")
    p.add_argument("--variant", choices=VARIANTS + ("all",), default="vcse")
    p.add_argument("--asr-checkpoint", type=Path)

    p = sub.add_parser("evaluate", parents=[common], help="score a trained variant on the test split")
    p.add_argument("--variant", choices=VARIANTS, default="vcse")
    p.add_argument("--output", choices=("refined", "pre_extracted"), default="refined")
    p.add_argument("--fast-sdr", action="store_true", help="plain energy-ratio SDR instead of the 512-tap projection")

    sub.add_parser("report", parents=[common], help="render table, CSV and chart from evaluation rows")
    return parser


def _config(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    overrides["device"] = args.device
    return load_config(args.config, toy=args.toy, overrides=overrides)


def _device(name: str) -> torch.device:
    if name == "gpu":
        if not torch.cuda.is_available():
            raise UsageError("--device gpu requested but CUDA is not available")
        return torch.device("cuda")
    return torch.device("cpu")


def _stage_data(out: Path) -> StageData:
    mix_dir = out / "mixtures"
    if not (mix_dir / "train.ndjson").exists():
        raise DataError(f"no simulated mixtures in {mix_dir}; run `vcse simulate` first")
    return StageData(load_mixtures(mix_dir / "train.ndjson"), load_mixtures(mix_dir / "valid.ndjson"))


def cmd_toy_corpus(args, cfg):
    n_spk = args.n_speakers or cfg.data.n_speakers
    n_utt = args.n_utterances or cfg.data.n_utterances
    manifest = generate_toy_corpus(args.out / "corpus" / "raw", n_spk, n_utt, seed=cfg.seed,
                                   duration_s=cfg.data.duration_s)
    print(f"wrote {n_utt} utterances from {n_spk} speakers: {manifest}")


def cmd_simulate(args, cfg):
    manifest = args.manifest or args.out / "corpus" / "raw" / "manifest.ndjson"
    if not Path(manifest).exists():
        raise DataError(f"manifest not found: {manifest}")
    prepared = prepare_corpus(manifest, args.out / "corpus" / "prepared", seed=cfg.seed,
                              duration_s=cfg.data.duration_s)
    for uid, why in prepared.errors.items():
        print(f"skipped {uid}: {why}", file=sys.stderr)
    counts = dict(zip(("train", "valid", "test"), args.counts or (cfg.data.train, cfg.data.valid, cfg.data.test)))
    splits = simulate_mixtures(prepared.records, counts, seed=cfg.seed, snr_range=(cfg.data.snr_low, cfg.data.snr_high))
    mix_dir = args.out / "mixtures"
    mix_dir.mkdir(parents=True, exist_ok=True)
    for name, records in splits.items():
        save_mixtures(mix_dir / f"{name}.ndjson", records)
    summary = {"seed": cfg.seed, "counts": counts, "kept": len(prepared.records), "dropped": prepared.dropped,
               "errors": prepared.errors, "snr_range": [cfg.data.snr_low, cfg.data.snr_high]}
    (mix_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    if args.materialize:
        for records in splits.values():
            materialize_mixtures(records, mix_dir / "audio")
    print(f"kept {len(prepared.records)} utterances, dropped {len(prepared.dropped)}; "
          + ", ".join(f"{k}={len(v)}" for k, v in splits.items()))


def cmd_train(args, cfg):
    plan = stage_plan(args.stage, args.variant)
    model = build_variant(args.variant, cfg.model, seed=cfg.seed)
    budget = args.epochs or cfg.train.stage_epochs[args.stage]
    result = run_stage(plan, _stage_data(args.out), model, budget, cfg, args.out, external_asr=args.asr_checkpoint)
    print(f"stage {args.stage} ({args.variant}): best epoch {result.best_epoch}, checkpoint {result.checkpoint}")


def cmd_train_all(args, cfg):
    data = _stage_data(args.out)
    variants = VARIANTS if args.variant == "all" else (args.variant,)
    for variant in variants:
        _, results = train_variant(variant, data, cfg, args.out, external_asr=args.asr_checkpoint)
        for r in results:
            print(f"{variant} stage {r.plan.stage}: best epoch {r.best_epoch} -> {r.checkpoint.name}")


def cmd_evaluate(args, cfg):
    test = args.out / "mixtures" / "test.ndjson"
    if not test.exists():
        raise DataError(f"no test mixtures at {test}")
    model = load_trained(args.variant, cfg, args.out)
    row, scores = evaluate(model, load_mixtures(test), output=args.output, fast_sdr=args.fast_sdr)
    eval_dir = args.out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    suffix = "" if args.output == "refined" else f".{args.output}"
    payload = {"row": row.to_dict(), "utterances": [s.__dict__ for s in scores]}
    (eval_dir / f"{args.variant}{suffix}.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    print(f"{row.model_name}: SI-SNRi {row.si_snri_db:.4f} dB, SDRi {row.sdri_db:.4f} dB over {row.n_utterances}")


def cmd_report(args, cfg):
    eval_dir = args.out / "eval"
    rows = []
    for variant in VARIANTS:
        path = eval_dir / f"{variant}.json"
        if path.exists():
            rows.append(EvalRow(**json.loads(path.read_text())["row"]))
    if not rows:
        raise DataError(f"no evaluation rows in {eval_dir}; run `vcse evaluate` first")
    for path in render_report(rows, args.out / "report"):
        print(path)


COMMANDS = {
    "toy-corpus": cmd_toy_corpus,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "train-all": cmd_train_all,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code or EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        _device(args.device)
        log.debug("config: %s", to_dict(cfg))
        COMMANDS[args.command](args, cfg)
    except (DataError, FormatError, FileNotFoundError) as exc:
        print(f"vcse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, KeyError, ValueError) as exc:
        print(f"vcse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MissingCheckpointError, FreezeViolation, CheckpointError, RuntimeError) as exc:
        print(f"vcse: run failed: {exc}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
