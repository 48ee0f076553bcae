"""Command-line launcher for audio style matching through black-box effects."""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Optional

from core import analysis, dafx, reports, trainer
from core.audio import read_wav, write_wav
from core.checkpoint import Checkpoint, load_checkpoint, require_effect, save_checkpoint
from core.config import PRESETS, RunConfig, config_to_dict, load_config, save_config
from core.datagen import MANIFEST_NAME, Corpus, generate_examples
from core.errors import CheckpointError, ConfigError, DafxStyleError
from core.types import Split
from validate.validate_load import looks_like_checkpoint

log = logging.getLogger("dafx_style")

VAE_CHECKPOINT = "vae.ndst"
GEN_DATA_STREAM = (51,)


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got '{text}'")


def e2e_checkpoint_name(effect_id: str) -> str:
    return f"e2e_{effect_id}.ndst"


def build_corpus(cfg: RunConfig, run_dir: Path) -> Corpus:
    """Synthetic corpus unless the config names a WAV directory.

    Args:
      cfg: Resolved run configuration.
      run_dir: Where the corpus manifest is cached.
    """
    d = cfg.datagen
    common = dict(silence_dbfs=d.silence_dbfs, patch_retries=d.patch_retries, max_semitones=d.max_semitones)
    if cfg.corpus:
        return Corpus.from_directory(cfg.corpus, d.sample_rate, d.patch_len,
                                     manifest_path=run_dir / MANIFEST_NAME, **common)
    return Corpus.synthetic_corpus(d.sample_rate, d.patch_len, d.synth_kinds, **common)


def open_checkpoint(path: Optional[str], default: Path) -> Checkpoint:
    """Load a checkpoint, defaulting to the one in the run directory."""
    p = Path(path) if path else default
    if not p.exists():
        raise CheckpointError(f"checkpoint '{p}' does not exist")
    if not looks_like_checkpoint(p):
        raise CheckpointError(f"'{p}' is not a checkpoint file")
    return load_checkpoint(p)


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise ConfigError(f"this command needs {flag}")
    return value


def _final_metrics(rows: list[reports.MetricRow]) -> dict:
    for row in reversed(rows):
        if row.split == Split.VAL.value:
            return {k: v for k, v in row.__dict__.items() if v is not None}
    return {}


# ----- Commands -------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace, cfg: RunConfig, run_dir: Path, progress: bool) -> dict:
    """Write N (input, ref, truth) WAV triples plus thetas.json."""
    effect_id = _require(args.effect, "--effect")
    count = args.count if args.count is not None else 4
    out = Path(args.out) if args.out else run_dir / "data"
    examples = generate_examples(
        build_corpus(cfg, run_dir), effect_id, count, cfg.seed, GEN_DATA_STREAM,
        workers=cfg.datagen.workers, retries=cfg.datagen.example_retries, progress=progress,
    )
    descriptor = dafx.get_descriptor(effect_id)
    entries = []
    for i, example in enumerate(examples):
        write_wav(example.input_seg, out / f"input_{i:04d}.wav")
        write_wav(example.ref_seg, out / f"ref_{i:04d}.wav")
        write_wav(example.truth_seg, out / f"truth_{i:04d}.wav")
        entries.append({
            "index": i,
            "side": example.side.value,
            "theta": example.theta.values.tolist(),
            "physical": dafx.physical_params(descriptor, example.theta),
        })
    reports.write_json({"effect_id": effect_id, "config": config_to_dict(cfg), "examples": entries}, out / "thetas.json")
    return {"effect_id": effect_id, "count": count, "out": str(out)}


def cmd_train_vae(args: argparse.Namespace, cfg: RunConfig, run_dir: Path, progress: bool) -> dict:
    result = trainer.train_vae(cfg, build_corpus(cfg, run_dir), progress)
    result.checkpoint.metadata["final_metrics"] = _final_metrics(result.metrics)
    save_checkpoint(result.checkpoint, run_dir / VAE_CHECKPOINT)
    reports.write_metric_csv(result.metrics, run_dir / "vae_metrics.csv")
    return {"checkpoint": str(run_dir / VAE_CHECKPOINT), "best_epoch": result.best_epoch,
            "best_val": result.best_val}


def cmd_train_e2e(args: argparse.Namespace, cfg: RunConfig, run_dir: Path, progress: bool) -> dict:
    effect_id = _require(args.effect, "--effect")
    encoder = None
    if args.encoder or cfg.e2e.freeze_encoder:
        encoder = open_checkpoint(args.encoder, run_dir / VAE_CHECKPOINT)
    result = trainer.train_e2e(cfg, effect_id, build_corpus(cfg, run_dir), encoder, progress)
    result.checkpoint.metadata["final_metrics"] = _final_metrics(result.metrics)
    path = run_dir / e2e_checkpoint_name(effect_id)
    save_checkpoint(result.checkpoint, path)
    reports.write_metric_csv(result.metrics, run_dir / f"e2e_{effect_id}_metrics.csv")
    return {"effect_id": effect_id, "checkpoint": str(path), "lr": cfg.e2e.effective_lr,
            "freeze_encoder": cfg.e2e.freeze_encoder, "best_epoch": result.best_epoch,
            "best_val": result.best_val}


def cmd_style_match(args: argparse.Namespace, cfg: RunConfig, run_dir: Path, progress: bool) -> dict:
    effect_id = _require(args.effect, "--effect")
    ckpt = open_checkpoint(args.checkpoint, run_dir / e2e_checkpoint_name(effect_id))
    rate = ckpt.metadata.get("sample_rate", cfg.datagen.sample_rate)
    input_audio = read_wav(_require(args.input, "--input"), rate)
    ref_audio = read_wav(_require(args.ref, "--ref"), rate)
    result = trainer.style_match(input_audio, ref_audio, effect_id, ckpt)

    out = Path(args.out) if args.out else run_dir
    write_wav(result.output, out / "matched.wav")
    reports.write_json({
        "effect_id": effect_id,
        "theta": result.theta.values.tolist(),
        "physical": result.physical,
    }, out / "params.json")
    return {"effect_id": effect_id, "output": str(out / "matched.wav"), "theta": result.theta.values.tolist()}


def cmd_eval_classifier(args: argparse.Namespace, cfg: RunConfig, run_dir: Path, progress: bool) -> dict:
    encoder = trainer.encoder_from_checkpoint(open_checkpoint(args.encoder, run_dir / VAE_CHECKPOINT))
    dataset = analysis.build_classifier_dataset(cfg, build_corpus(cfg, run_dir), per_effect=args.count,
                                                progress=progress)
    comparison = analysis.eval_classifier(dataset, encoder, cfg)
    reports.write_json({
        "n_train": comparison.n_train,
        "n_test": comparison.n_test,
        "encoder": comparison.encoder.summary(),
        "pca": comparison.pca.summary(),
    }, run_dir / "classifier.json")
    reports.write_confusion_csv(comparison.encoder.confusion, comparison.encoder.labels,
                                run_dir / "confusion_encoder.csv")
    reports.write_confusion_csv(comparison.pca.confusion, comparison.pca.labels, run_dir / "confusion_pca.csv")
    return {"encoder_accuracy": comparison.encoder.accuracy, "pca_accuracy": comparison.pca.accuracy,
            "encoder_f1": comparison.encoder.f1_macro, "pca_f1": comparison.pca.f1_macro}


def cmd_eval_mmi(args: argparse.Namespace, cfg: RunConfig, run_dir: Path, progress: bool) -> dict:
    effect_id = _require(args.effect, "--effect")
    encoder = trainer.encoder_from_checkpoint(open_checkpoint(args.encoder, run_dir / VAE_CHECKPOINT))
    report = analysis.mmi_table(effect_id, encoder, cfg, args.count, progress)
    reports.write_table_csv(("parameter", "mmi_nats"), report.rows, run_dir / f"mmi_{effect_id}.csv")
    reports.write_json({"effect_id": effect_id, "rows": report.rows, "cca_correlations": report.correlations},
                       run_dir / f"mmi_{effect_id}.json")
    return {"effect_id": effect_id, "mmi": report.as_dict()}


def cmd_eval_e2e(args: argparse.Namespace, cfg: RunConfig, run_dir: Path, progress: bool) -> dict:
    effect_id = _require(args.effect, "--effect")
    ckpt = open_checkpoint(args.checkpoint, run_dir / e2e_checkpoint_name(effect_id))
    require_effect(ckpt, effect_id)
    hook = analysis.matcher_hook(trainer.matcher_from_checkpoint(ckpt), cfg)
    report = analysis.eval_e2e(effect_id, hook, build_corpus(cfg, run_dir), cfg, args.count, progress)
    reports.write_table_csv(("index", "model", "baseline", "random"), report.rows,
                            run_dir / f"eval_e2e_{effect_id}.csv")
    reports.write_json(report.summary(), run_dir / f"eval_e2e_{effect_id}.json")
    return report.summary()


def cmd_describe_effect(args: argparse.Namespace, cfg: RunConfig, run_dir: Path, progress: bool) -> dict:
    if args.effect:
        return dafx.describe(args.effect)
    return {"effects": [dafx.describe(e) for e in dafx.effect_ids()]}


COMMANDS: dict[str, Callable[..., dict]] = {
    "gen-data": cmd_gen_data,
    "train-vae": cmd_train_vae,
    "train-e2e": cmd_train_e2e,
    "style-match": cmd_style_match,
    "eval-classifier": cmd_eval_classifier,
    "eval-mmi": cmd_eval_mmi,
    "eval-e2e": cmd_eval_e2e,
    "describe-effect": cmd_describe_effect,
}

# Commands that only read: no run directory, no config echo.
READ_ONLY = {"describe-effect"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dafx-style",
        description="Audio production style matching through black-box audio effects.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document (merged over the preset)")
    common.add_argument("--preset", default="desk", choices=PRESETS, help="base preset (default: desk)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--run-dir", help="override the run directory")
    common.add_argument("--corpus", help="directory of WAV files (default: synthetic corpus)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. e2e.lr=1e-4 (repeatable)")
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    common.add_argument("--quiet", action="store_true", help="no progress bars")

    sub = parser.add_subparsers(dest="command", required=True)
    specs: dict[str, tuple[str, ...]] = {
        "gen-data": ("effect", "count", "out"),
        "train-vae": (),
        "train-e2e": ("effect", "encoder", "freeze"),
        "style-match": ("effect", "checkpoint", "input", "ref", "out"),
        "eval-classifier": ("encoder", "count"),
        "eval-mmi": ("effect", "encoder", "count"),
        "eval-e2e": ("effect", "checkpoint", "count"),
        "describe-effect": ("effect",),
    }
    for name, flags in specs.items():
        p = sub.add_parser(name, parents=[common], help=COMMANDS[name].__doc__)
        p.set_defaults(effect=None, count=None, out=None, encoder=None, checkpoint=None,
                       input=None, ref=None, freeze=None)
        if "effect" in flags:
            p.add_argument("--effect", help="effect id (see describe-effect)")
        if "count" in flags:
            p.add_argument("--count", type=int, help="number of examples")
        if "out" in flags:
            p.add_argument("--out", help="output directory (default: inside the run directory)")
        if "encoder" in flags:
            p.add_argument("--encoder", help=f"VAE checkpoint (default: <run-dir>/{VAE_CHECKPOINT})")
        if "checkpoint" in flags:
            p.add_argument("--checkpoint", help="E2E checkpoint (default: <run-dir>/e2e_<effect>.ndst)")
        if "input" in flags:
            p.add_argument("--input", help="WAV to process")
            p.add_argument("--ref", help="reference WAV carrying the target effect")
        if "freeze" in flags:
            p.add_argument("--freeze-encoder", dest="freeze", type=_parse_bool, nargs="?", const=True,
                           help="train only the controller (default: true)")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Preset, then --config, then --set, then the dedicated flags."""
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.run_dir:
        overrides.append(f"run_dir={json.dumps(args.run_dir)}")
    if args.corpus:
        overrides.append(f"corpus={json.dumps(args.corpus)}")
    if args.freeze is not None:
        overrides.append(f"e2e.freeze_encoder={json.dumps(args.freeze)}")
    return load_config(args.config, args.preset, overrides)


def _emit(payload: dict[str, Any]) -> None:
    print(json.dumps(payload, default=str), flush=True)


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point: parse args, run one command, print a one-line JSON summary.

    Returns:
      0 on success, otherwise the exit code of the raised error family.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    progress = not args.quiet and sys.stderr.isatty()

    try:
        cfg = resolve_config(args)
        run_dir = Path(cfg.run_dir)
        if args.command not in READ_ONLY:
            run_dir.mkdir(parents=True, exist_ok=True)
            save_config(cfg, run_dir / "config.json")
            log.info("run directory %s", run_dir)
        summary = COMMANDS[args.command](args, cfg, run_dir, progress)
    except DafxStyleError as e:
        log.error("%s: %s", type(e).__name__, e)
        _emit({"status": "error", "command": args.command, "error": type(e).__name__,
               "message": str(e), "exit_code": e.exit_code})
        return e.exit_code

    _emit({"status": "ok", "command": args.command, **summary})
    return 0


if __name__ == "__main__":
    sys.exit(main())
