"""Command-line entry point: ``deepfake-music <subcommand> ...``.

Exit codes: 0 success, 1 stage error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from . import augment, dataset, dsp, experiments, metrics, model
from .errors import ConfigError, PipelineError

log = logging.getLogger("deepfake_music")

_MEL_KEYS = {f.name for f in fields(dsp.MelConfig)}
_TRAIN_KEYS = {"epochs", "batch_size", "lr", "dtype", "eval_batch"}
_TOP_KEYS = {"seed", "out", "corpus", "synthetic", "per_class", "variants", "continuous", "order",
             "reset_optimizer", "image_size", "train_seed", "augment_seed"}
CONFIG_KEYS = _MEL_KEYS | _TRAIN_KEYS | _TOP_KEYS

_INT_KEYS = {"n_fft", "hop", "n_mels", "epochs", "batch_size", "eval_batch", "seed", "synthetic",
             "per_class", "image_size", "train_seed", "augment_seed"}
_FLOAT_KEYS = {"fmin", "fmax", "top_db", "lr"}
_BOOL_KEYS = {"continuous", "reset_optimizer"}
_LIST_KEYS = {"variants", "order"}


class UsageError(Exception):
    pass


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            out[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return out


def _convert(key: str, value: str):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        lowered = value.lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {value!r}")
        return lowered in ("true", "1", "yes")
    if key in _LIST_KEYS:
        return tuple(v.strip() for v in value.split(",") if v.strip())
    return value


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def _settings(args) -> dict:
    """Config file values, overridden by explicit command-line flags."""
    settings = load_config(args.config) if args.config else {}
    for key in ("seed", "out"):
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    for key in CONFIG_KEYS - {"seed", "out"}:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def _mel_config(settings: dict) -> dsp.MelConfig:
    return dsp.MelConfig(**{k: settings[k] for k in _MEL_KEYS if k in settings})


def _train_config(settings: dict) -> model.TrainConfig:
    return model.TrainConfig(**{k: settings[k] for k in _TRAIN_KEYS if k in settings})


def experiment_config(settings: dict) -> experiments.ExperimentConfig:
    if "seed" not in settings:
        raise UsageError("--seed is required (no wall-clock default)")
    if ("corpus" in settings) == ("synthetic" in settings):
        raise UsageError("give exactly one of --corpus ROOT or --synthetic N")
    kwargs = {k: settings[k] for k in _TOP_KEYS if k in settings}
    kwargs.setdefault("out", Path("results"))
    return experiments.ExperimentConfig(mel=_mel_config(settings), train=_train_config(settings), **kwargs)


def _require_seed(settings: dict) -> int:
    if "seed" not in settings:
        raise UsageError("--seed is required")
    return settings["seed"]


def _out(settings: dict, default: str) -> Path:
    return Path(settings.get("out", default))


# --- subcommands --------------------------------------------------------------

def cmd_scan(args, settings) -> int:
    manifest = dataset.scan_corpus(args.root)
    target = _out(settings, "manifest.csv")
    manifest.save(target)
    counts = manifest.class_counts()
    print(f"{len(manifest)} clips ({counts['human']} human, {counts['deepfake']} deepfake) -> {target}")
    return 0


def cmd_synth(args, settings) -> int:
    out = _out(settings, "synthetic_corpus")
    manifest = dataset.synth_corpus(args.n, _require_seed(settings), out)
    manifest.save(out / "manifest.csv")
    print(f"{len(manifest)} synthetic clips -> {out}")
    return 0


def cmd_augment(args, settings) -> int:
    manifest = dataset.Manifest.load(args.manifest)
    spec = augment.AugmentSpec(args.kind, _require_seed(settings))
    out = _out(settings, f"variant_{args.kind}")
    result = augment.build_variant(manifest, spec, out, source_root=args.source_root)
    result.save(out / "manifest.csv")
    print(f"{len(result)} of {len(manifest)} clips written -> {out}")
    return 0


def cmd_featurize(args, settings) -> int:
    manifest = dataset.Manifest.load(args.manifest)
    out = _out(settings, "features")
    store = experiments.FeatureStore(_mel_config(settings), out)
    with open(out / "features.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "platform", "mels"])
        for entry in manifest:
            store.mel_spectrogram(entry.path)
            writer.writerow([entry.path, entry.label, entry.platform, str(out / f"{store.key(entry.path)}.mels")])
    print(f"{len(manifest)} mel spectrograms -> {out}")
    return 0


def cmd_train(args, settings) -> int:
    seed = _require_seed(settings)
    manifest = dataset.Manifest.load(args.manifest)
    out = _out(settings, "train_run")
    parts = dataset.split(manifest, experiments.stage_seed(seed, "split"))
    parts.save(out / "split")
    store = experiments.FeatureStore(_mel_config(settings), out / "features", settings.get("image_size", dsp.IMAGE_SIZE))
    cfg = replace(_train_config(settings), seed=settings.get("train_seed", experiments.stage_seed(seed, "train")))
    ckpt = model.train(cfg, parts, store)
    ckpt.save(out / "checkpoint.mgck")
    print(f"best val accuracy {ckpt.best_val_accuracy:.3f} at epoch {ckpt.epoch}; checkpoint -> {out / 'checkpoint.mgck'}")
    return 0


def cmd_eval(args, settings) -> int:
    ckpt = model.Checkpoint.load(args.checkpoint)
    manifest = dataset.Manifest.load(args.manifest)
    out = _out(settings, "eval")
    store = experiments.FeatureStore(_mel_config(settings), Path(out) / "features",
                                     settings.get("image_size", dsp.IMAGE_SIZE))
    report = experiments.evaluate_report(ckpt.params, list(manifest), store, args.name)
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / "results.csv").write_text(metrics.to_csv([report]), encoding="utf-8", newline="\n")
    print(metrics.format_table([report]))
    return 0


def cmd_experiment(args, settings) -> int:
    cfg = experiment_config(settings)
    reports = experiments.run_experiment(cfg)
    print(metrics.format_table(reports))
    print(f"results -> {cfg.out / 'results.csv'}")
    return 0


def cmd_verify_table1(args, settings) -> int:
    rows = metrics.audit_published_table()
    print(f"{'row':30s} {'|f1-2PR/(P+R)|':>15s} {'|rec+fnr-1|':>12s} {'|fpr+spec-1|':>13s}  result")
    for row in rows:
        print(f"{row.source:30s} {row.f1_gap:15.5f} {row.recall_fnr_gap:12.5f} {row.fpr_spec_gap:13.5f}  "
              f"{'PASS' if row.passed else 'FAIL'}")
    ok = all(r.passed for r in rows)
    print("all rows consistent" if ok else "identity audit FAILED")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="deepfake-music", description="Music deepfake detection pipeline")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("scan", parents=[common], help="inventory a corpus laid out by platform")
    p.add_argument("root")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic stand-in corpus")
    p.add_argument("n", type=int, help="clips per class")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", parents=[common], help="materialize one augmented variant")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", choices=augment.KINDS, required=True)
    p.add_argument("--source-root", dest="source_root")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("featurize", parents=[common], help="compute and cache log-mel spectrograms")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", parents=[common], help="split a manifest and train a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--name", default="Evaluation")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", parents=[common], help="run all five experiments")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--corpus")
    src.add_argument("--synthetic", type=int, metavar="N", help="use N synthetic clips per class")
    p.add_argument("--epochs", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--order", type=lambda s: tuple(s.split(",")),
                   help="continuous-learning variant order, comma separated")
    p.add_argument("--reset-optimizer", dest="reset_optimizer", action="store_const", const=True)
    p.add_argument("--no-continuous", dest="continuous", action="store_const", const=False)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify-table1", parents=[common], help="audit the published metric identities")
    p.set_defaults(func=cmd_verify_table1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = _settings(args)
        return args.func(args, settings)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except PipelineError as exc:
        where = f" during {exc.stage}" if exc.stage else ""
        print(f"error{where}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
