"""Command-line entry point: ``aln <command> [flags]``.

Exit status: 0 success, 1 I/O or validation failure, 2 usage error, 3 numeric fault.

Settings are layered as built-in defaults < ``--config`` JSON file < explicit
flags.  Config keys are flag names with or without the leading dashes
(``"batch-size"`` and ``"batch_size"`` both work).  When ``ALN_OUTPUT_DIR`` is
set, relative output paths are resolved against it.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .dataio import GeneratorConfig, load_dataset, save_dataset
from .errors import ALNError, NumericFaultError, ValidationError
from .evaluation import evaluate, export_embeddings, run_ablation
from .gradcheck import gradcheck, tiny_instance
from .model import VARIANTS, ModelConfig, load_checkpoint, normalize_variant, save_checkpoint
from .training import MetricsWriter, TrainConfig, train

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_DIR_ENV = "ALN_OUTPUT_DIR"

log = logging.getLogger("aln")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- flag value types ------------------------------------------------------------


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return v


def _nonneg_float(text):
    v = float(text)
    if not v >= 0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"expected a finite number >= 0, got {text}")
    return v


def _unit_float(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a number in [0, 1], got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _variant(text):
    try:
        return normalize_variant(text)
    except ALNError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _variant_list(text):
    return [_variant(t) for t in str(text).split(",") if t.strip()]


def _alpha_list(text):
    return [_unit_float(t) for t in str(text).split(",") if t.strip()]


# --- parser --------------------------------------------------------------------

# (flags, dest, type, default, help); None default means "required" when listed in REQUIRED
GEN_FLAGS = [
    ("--out", "out", str, None, "directory that receives train.jsonl and test.jsonl"),
    ("--seed", "seed", int, 42, "generator seed"),
    ("--classes", "classes", _positive_int, 8, "number of intent classes"),
    ("--train-n", "train_n", _positive_int, 1000, "training utterances"),
    ("--test-n", "test_n", _positive_int, 250, "test utterances"),
    ("--d-acoustic", "d_acoustic", _positive_int, 32, "acoustic frame width"),
    ("--d-ling", "d_ling", _positive_int, 96, "teacher embedding width"),
    ("--min-len", "min_len", _positive_int, 5, "minimum frames per utterance"),
    ("--max-len", "max_len", _positive_int, 20, "maximum frames per utterance"),
    ("--teacher-noise", "teacher_noise", _nonneg_float, 0.3, "teacher noise scale"),
    ("--acoustic-noise", "acoustic_noise", _nonneg_float, 0.5, "acoustic noise scale"),
    ("--keyword-prob", "keyword_prob", _unit_float, 0.6, "probability of a class keyword frame"),
    ("--centroid-scale", "centroid_scale", _positive_float, 1.0, "class centroid scale"),
]

TRAIN_OPTS = [
    ("--variant", "variant", _variant, "aln", "baseline2 | aln-linguistic | aln"),
    ("--alpha", "alpha", _unit_float, 0.8, "weight of the distillation loss"),
    ("--epochs", "epochs", _positive_int, 100, "training epochs"),
    ("--lr", "lr", _nonneg_float, 0.001, "Adam learning rate"),
    ("--batch-size", "batch_size", _positive_int, 64, "utterances per optimizer step"),
    ("--seed", "seed", int, 0, "initialisation and shuffling seed"),
    ("--gru-hidden", "gru_hidden", _positive_int, 128, "GRU hidden size"),
    ("--d-attn", "d_attn", _positive_int, None, "attention width (default: acoustic width)"),
    ("--eval-every", "eval_every", _positive_int, 1, "evaluate on the test split every N epochs"),
]

COMMANDS = {
    "gen-data": (GEN_FLAGS, ["out"]),
    "train": (
        [
            ("--data", "data", str, None, "dataset directory (train.jsonl, test.jsonl)"),
            ("--model-out", "model_out", str, None, "checkpoint path to write"),
            ("--metrics-out", "metrics_out", str, None, "per-epoch metrics file"),
            ("--record-time", "record_time", "flag", False, "include wall time in the metrics file"),
            *TRAIN_OPTS,
        ],
        ["data", "model_out"],
    ),
    "eval": (
        [
            ("--model", "model", str, None, "checkpoint to evaluate"),
            ("--data", "data", str, None, "dataset file, or directory holding <split>.jsonl"),
            ("--split", "split", str, "test", "split file to use when --data is a directory"),
        ],
        ["model", "data"],
    ),
    "ablate": (
        [
            ("--data", "data", str, None, "dataset directory"),
            ("--out", "out", str, None, "report prefix; writes <out>.tsv and <out>.json"),
            ("--variants", "variants", _variant_list, ["aln_linguistic", "aln"], "comma-separated variants"),
            ("--alphas", "alphas", _alpha_list, [0.5, 0.8], "comma-separated alpha values"),
            *[o for o in TRAIN_OPTS if o[1] not in ("variant", "alpha", "eval_every")],
        ],
        ["data", "out"],
    ),
    "gradcheck": (
        [
            ("--variants", "variants", _variant_list, list(VARIANTS), "variants to check"),
            ("--alphas", "alphas", _alpha_list, [0.0, 0.5, 0.8, 1.0], "alpha values to check"),
            ("--tolerance", "tolerance", _positive_float, 1e-3, "maximum relative error"),
            ("--seed", "seed", int, 0, "seed of the tiny instance"),
        ],
        [],
    ),
    "export-embeddings": (
        [
            ("--model", "model", str, None, "checkpoint"),
            ("--data", "data", str, None, "dataset file, or directory holding <split>.jsonl"),
            ("--split", "split", str, "test", "split file to use when --data is a directory"),
            ("--out", "out", str, None, "export path"),
        ],
        ["model", "data", "out"],
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aln", description="Acoustic-linguistic intent classification toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (opts, required) in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", dest="config", default=None, help="JSON file with default flag values")
        for flag, dest, typ, default, help_ in opts:
            suffix = " (required)" if dest in required else f" (default: {default})"
            if typ == "flag":
                p.add_argument(flag, dest=dest, action="store_const", const=True, default=None, help=help_)
            else:
                # None marks "not given" so config-file values can fill in
                p.add_argument(flag, dest=dest, type=typ, default=None, help=help_ + suffix)
    return parser


def resolve_settings(command: str, ns: argparse.Namespace) -> dict:
    """Merge defaults, config file and explicit flags; check required settings."""
    opts, required = COMMANDS[command]
    by_dest = {dest: (flag, typ, default) for flag, dest, typ, default, _ in opts}
    settings = {dest: default for dest, (_, _, default) in by_dest.items()}
    if ns.config is not None:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config file {ns.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {ns.config} is not valid JSON: {exc.msg}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in cfg.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in by_dest:
                raise UsageError(f"unknown config key {key!r} for {command}")
            flag, typ, _ = by_dest[dest]
            if typ == "flag":
                settings[dest] = bool(value)
                continue
            try:
                if isinstance(value, list):
                    value = ",".join(str(v) for v in value)
                settings[dest] = typ(str(value)) if typ is not str else str(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
    for dest in by_dest:
        value = getattr(ns, dest)
        if value is not None:
            settings[dest] = value
    missing = [by_dest[d][0] for d in required if settings.get(d) is None]
    if missing:
        raise UsageError(f"aln {command}: missing required flag(s): {', '.join(missing)}")
    return settings


def output_path(path: str) -> Path:
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def _dataset_file(data: str, split: str) -> Path:
    p = Path(data)
    return p / f"{split}.jsonl" if p.is_dir() else p


def _emit(record: dict) -> None:
    print(json.dumps(record))


# --- commands --------------------------------------------------------------------


def cmd_gen_data(s: dict) -> int:
    cfg = GeneratorConfig(
        seed=s["seed"], num_classes=s["classes"], train_count=s["train_n"], test_count=s["test_n"],
        d_acoustic=s["d_acoustic"], d_linguistic=s["d_ling"], min_len=s["min_len"], max_len=s["max_len"],
        teacher_noise=s["teacher_noise"], acoustic_noise=s["acoustic_noise"], keyword_prob=s["keyword_prob"],
        centroid_scale=s["centroid_scale"],
    )
    try:
        cfg.validate()
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    from .dataio import generate

    out = output_path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = generate(cfg)
    save_dataset(train_ds, out / "train.jsonl")
    save_dataset(test_ds, out / "test.jsonl")
    _emit({"command": "gen-data", "out": str(out), "train": len(train_ds), "test": len(test_ds), **cfg.to_dict()})
    return EXIT_OK


def _train_config(s: dict, alpha=None) -> TrainConfig:
    return TrainConfig(
        alpha=s["alpha"] if alpha is None else alpha, epochs=s["epochs"], batch_size=s["batch_size"],
        learning_rate=s["lr"], shuffle_seed=s["seed"], eval_every=s.get("eval_every", 1),
    )


def cmd_train(s: dict) -> int:
    tcfg = _train_config(s)
    train_ds = load_dataset(_dataset_file(s["data"], "train"))
    test_ds = load_dataset(_dataset_file(s["data"], "test"))
    mcfg = ModelConfig(
        variant=s["variant"], d_acoustic=train_ds.d_acoustic, d_linguistic=train_ds.d_linguistic,
        d_attn=s["d_attn"] or train_ds.d_acoustic, gru_hidden=s["gru_hidden"],
        num_classes=train_ds.num_classes, init_seed=s["seed"],
    )
    model_out = output_path(s["model_out"])
    writer = MetricsWriter(output_path(s["metrics_out"]), bool(s["record_time"])) if s["metrics_out"] else None
    try:
        params, history = train(train_ds, test_ds, mcfg, tcfg, on_epoch=writer)
    finally:
        if writer is not None:
            writer.close()
    save_checkpoint(params, model_out)
    final = history[-1]
    print(f"test accuracy: {final.test_accuracy:.4f}")
    return EXIT_OK


def cmd_eval(s: dict) -> int:
    params = load_checkpoint(s["model"])
    ds = load_dataset(_dataset_file(s["data"], s["split"]))
    print(f"{evaluate(params, ds):.4f}")
    return EXIT_OK


def cmd_ablate(s: dict) -> int:
    train_ds = load_dataset(_dataset_file(s["data"], "train"))
    test_ds = load_dataset(_dataset_file(s["data"], "test"))
    tcfg = _train_config({**s, "alpha": s["alphas"][0] if s["alphas"] else 0.8})
    report = run_ablation(
        train_ds, test_ds, s["variants"], s["alphas"], tcfg,
        d_attn=s["d_attn"], gru_hidden=s["gru_hidden"], init_seed=s["seed"],
    )
    report.save(output_path(s["out"]))
    sys.stdout.write(report.to_table())
    return EXIT_OK


def cmd_gradcheck(s: dict) -> int:
    worst = 0.0
    for variant in s["variants"]:
        for alpha in s["alphas"]:
            params, batch = tiny_instance(variant, seed=s["seed"])
            report = gradcheck(params, batch, s["tolerance"], alpha=alpha)
            for name, err in report.max_rel_error.items():
                print(f"{variant}\t{alpha}\t{name}\t{err:.3e}")
                worst = max(worst, err)
    status = "ok" if worst < s["tolerance"] else "FAILED"
    print(f"max relative error {worst:.3e} (tolerance {s['tolerance']:g}): {status}")
    return EXIT_OK if worst < s["tolerance"] else EXIT_NUMERIC


def cmd_export_embeddings(s: dict) -> int:
    params = load_checkpoint(s["model"])
    ds = load_dataset(_dataset_file(s["data"], s["split"]))
    export_embeddings(params, ds, output_path(s["out"]))
    return EXIT_OK


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "export-embeddings": cmd_export_embeddings,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        settings = resolve_settings(ns.command, ns)
        if ns.command in ("train", "ablate"):
            _train_config({**settings, "alpha": settings.get("alpha", 0.8)})
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"aln: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if ns.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        return HANDLERS[ns.command](settings)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericFaultError as exc:
        print(f"aln: numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ALNError, OSError) as exc:
        print(f"aln: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
