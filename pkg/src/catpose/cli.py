"""``catpose`` command line: synth, train, eval, ablate, curves.

Relative file paths are resolved under ``--data-dir``, which defaults to the
``CATPOSE_DATA`` environment variable or the current directory. Training
settings can come from a ``key=value`` file (``--config``); explicit flags win.

Exit codes: 0 success, 2 invalid input, 3 file-system error, 4 training diverged.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .errors import DegenerateConfigurationError, InvalidInputError, ParseError, TrainingDiverged
from .evaluation import METRICS, evaluate, write_curves, write_report
from .learn.train import (
    VARIANTS,
    TrainConfig,
    config_to_dict,
    evaluate_model,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    variant_config,
    write_history,
)
from .synth.io import read_dataset, read_predictions, write_dataset, write_predictions
from .synth.scene import DEFAULT_CATEGORIES, category_by_name, generate_dataset

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
ENV_DATA = "CATPOSE_DATA"
CURVE_FILES = {"iou": "curves_iou.csv", "rotation": "curves_rotation.csv", "translation": "curves_translation.csv"}
_SECTIONS = ("model", "weights", "noise")
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


# ---------------------------------------------------------------- configuration


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: expected key=value", line=no)
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise ParseError(f"{path}: empty key", line=no)
            out[key] = value
    return out


def _convert(key: str, raw: str, current):
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low not in _TRUE | _FALSE:
                raise ValueError(f"not a boolean: {raw!r}")
            return low in _TRUE
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise InvalidInputError(f"setting {key}: {exc}") from None


def build_train_config(settings: dict[str, str], base: TrainConfig = TrainConfig()) -> TrainConfig:
    """Apply string settings such as ``epochs=5`` or ``model.c=32`` to a configuration."""
    top: dict = {}
    sub: dict[str, dict] = {s: {} for s in _SECTIONS}
    top_fields = {f.name for f in dataclasses.fields(TrainConfig)} - set(_SECTIONS)
    for key, raw in settings.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise InvalidInputError(f"unknown setting {key!r}")
            obj = getattr(base, section)
            if name not in {f.name for f in dataclasses.fields(obj)}:
                raise InvalidInputError(f"unknown setting {key!r}")
            sub[section][name] = _convert(key, raw, getattr(obj, name))
        elif key in top_fields:
            top[key] = _convert(key, raw, getattr(base, key))
        else:
            raise InvalidInputError(f"unknown setting {key!r}")
    try:
        parts = {s: dataclasses.replace(getattr(base, s), **sub[s]) for s in _SECTIONS}
        return dataclasses.replace(base, **top, **parts)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(str(exc)) from None


def _settings_from_args(args) -> dict[str, str]:
    settings = read_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise InvalidInputError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        settings[k.strip()] = v.strip()
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("lr", "lr"), ("lr_disc", "lr_disc"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            settings[key] = str(value)
    for flag, key, value in (
        ("no_ngph", "model.use_ngph", "false"),
        ("no_decouple", "model.decouple", "false"),
        ("direct_regression", "model.shape_prior", "false"),
        ("no_adversarial", "adversarial", "false"),
    ):
        if getattr(args, flag, False):
            settings[key] = value
    return settings


# ---------------------------------------------------------------- helpers


def _resolve(path, data_dir: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else data_dir / p


def _split(dataset, k: int):
    if k <= 0:
        return dataset.instances, dataset.instances
    train_ds, test_ds = dataset.split(k)
    return train_ds.instances, test_ds.instances


def _check_predictions(preds, instances) -> None:
    by_id = {i.id: i for i in instances}
    unknown = sorted({p.id for p in preds} - set(by_id))
    if unknown:
        shown = ", ".join(map(str, unknown[:20])) + (" ..." if len(unknown) > 20 else "")
        raise InvalidInputError(f"{len(unknown)} prediction id(s) not in the evaluated dataset: {shown}")
    seen = set()
    for p in preds:
        if p.id in seen:
            raise InvalidInputError(f"duplicate prediction for id {p.id}")
        seen.add(p.id)
        if by_id[p.id].category != p.category:
            raise InvalidInputError(f"prediction {p.id} has category {p.category!r}, dataset says {by_id[p.id].category!r}")


def _write_outputs(report, out: Path, curves_dir: Path | None) -> None:
    write_report(report, out)
    if curves_dir is not None and report.curves:
        curves_dir.mkdir(parents=True, exist_ok=True)
        for key, name in CURVE_FILES.items():
            write_curves(report.curves[key], curves_dir / name)


def _summary(report) -> str:
    return " ".join(f"{m}={report.mean[m]:.4f}" for m in METRICS)


# ---------------------------------------------------------------- commands


def cmd_synth(args, data_dir: Path) -> int:
    names = [s.strip() for s in args.categories.split(",") if s.strip()] if args.categories else [c.name for c in DEFAULT_CATEGORIES]
    specs = [category_by_name(n) for n in names]
    if args.n is not None:
        if args.n % len(specs):
            raise InvalidInputError(f"--n {args.n} is not divisible by the {len(specs)} categories")
        per = args.n // len(specs)
    else:
        per = args.n_per_category
    if per < 0:
        raise InvalidInputError("instance count must be non-negative")
    out = _resolve(args.out, data_dir)
    ds = generate_dataset(specs, n_per_category=per, seed=args.seed, n_pixels=args.n_pixels, n_prior=args.n_prior, threads=args.threads)
    write_dataset(ds, out)
    print(f"synth: wrote {len(ds)} instances ({len(specs)} categories, seed {args.seed}) to {out}")
    return EXIT_OK


def cmd_train(args, data_dir: Path) -> int:
    cfg = build_train_config(_settings_from_args(args))
    ds = read_dataset(_resolve(args.dataset, data_dir))
    train_insts, _ = _split(ds, args.test_per_category)
    out = _resolve(args.out, data_dir)
    history = _resolve(args.history, data_dir) if args.history else out.with_suffix(".losses.csv")
    result = train(ds, train_insts, cfg)
    meta = {"train_config": config_to_dict(cfg), "test_per_category": args.test_per_category}
    save_checkpoint(result.model, out, disc=result.disc, binary=args.binary, meta=meta)
    write_history(result.history, history)
    final = f"{result.history[-1].total:.6f}" if result.history else "n/a"
    print(f"train: {len(result.history)} steps on {len(train_insts)} instances, final loss {final}; wrote {out} and {history}")
    return EXIT_OK


def _predictions_for(args, data_dir: Path, ds, instances):
    if args.checkpoint:
        model, _, meta = load_checkpoint(_resolve(args.checkpoint, data_dir))
        seed = args.seed if args.seed is not None else meta.get("train_config", {}).get("seed", 0)
        preds = predict(model, ds, instances, seed=seed)
        if args.save_predictions:
            write_predictions(preds, _resolve(args.save_predictions, data_dir))
        return preds
    preds = read_predictions(_resolve(args.predictions, data_dir))
    wanted = {i.id for i in instances}
    all_ids = {i.id for i in ds.instances}
    _check_predictions([p for p in preds if p.id in wanted or p.id not in all_ids], instances)
    return [p for p in preds if p.id in wanted]


def cmd_eval(args, data_dir: Path) -> int:
    ds = read_dataset(_resolve(args.dataset, data_dir))
    _, instances = _split(ds, args.test_per_category)
    preds = _predictions_for(args, data_dir, ds, instances)
    report = evaluate([p.to_detection() for p in preds], [i.as_detection() for i in instances], ds.symmetric_categories)
    out = _resolve(args.out, data_dir)
    curves_dir = _resolve(args.curves_dir, data_dir) if args.curves_dir else out.parent
    _write_outputs(report, out, curves_dir)
    print(f"eval: {len(preds)} predictions for {len(instances)} instances: {_summary(report)}; wrote {out}")
    return EXIT_OK


def cmd_curves(args, data_dir: Path) -> int:
    ds = read_dataset(_resolve(args.dataset, data_dir))
    _, instances = _split(ds, args.test_per_category)
    preds = _predictions_for(args, data_dir, ds, instances)
    report = evaluate([p.to_detection() for p in preds], [i.as_detection() for i in instances], ds.symmetric_categories)
    out_dir = _resolve(args.out_dir, data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for key, name in CURVE_FILES.items():
        write_curves(report.curves[key], out_dir / name)
    print(f"curves: wrote {', '.join(CURVE_FILES.values())} to {out_dir}")
    return EXIT_OK


def cmd_ablate(args, data_dir: Path) -> int:
    base = build_train_config(_settings_from_args(args))
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in VARIANTS:
            raise InvalidInputError(f"unknown variant {v!r}; expected one of {', '.join(VARIANTS)}")
    ds = read_dataset(_resolve(args.dataset, data_dir))
    train_insts, test_insts = _split(ds, args.test_per_category)
    out = _resolve(args.out, data_dir)
    rows = []
    for v in variants:
        result = train(ds, train_insts, variant_config(base, v))
        ev = evaluate_model(result.model, ds, test_insts, seed=base.seed, noise=base.noise, with_curves=False)
        rows.append([v, *(ev.report.mean[m] for m in METRICS), ev.depth_l1])
        print(f"ablate: {v}: {_summary(ev.report)} depth_l1={ev.depth_l1:.4f}")
    header = ["variant", *METRICS, "depth_l1"]
    with open(out, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join([r[0], *(repr(float(x)) for x in r[1:])]) + "\n")
    print(f"ablate: wrote {len(rows)} rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting (repeatable), e.g. model.c=32")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-disc", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-ngph", action="store_true", help="zero the position hints")
    p.add_argument("--no-decouple", action="store_true", help="predict absolute depth without a separate translation")
    p.add_argument("--no-adversarial", action="store_true", help="drop the discriminator")
    p.add_argument("--direct-regression", action="store_true", help="regress points directly instead of deforming the prior")


def _add_prediction_source(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--predictions", help="prediction file")
    src.add_argument("--checkpoint", help="model checkpoint to run on the dataset")
    p.add_argument("--seed", type=int, help="descriptor seed for checkpoint inference (default: the training seed)")
    p.add_argument("--save-predictions", help="also write the checkpoint's predictions here")
    p.add_argument("--test-per-category", type=int, default=0, help="evaluate only the last K instances of each category")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catpose", description=__doc__.splitlines()[0])
    parser.add_argument("--data-dir", default=None, help=f"base for relative paths (default: ${ENV_DATA} or .)")
    parser.add_argument("--threads", type=int, default=1, help="cap on worker and BLAS threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--categories", help="comma-separated category names (default: all six)")
    count = p.add_mutually_exclusive_group()
    count.add_argument("--n", type=int, help="total instances, split evenly over categories")
    count.add_argument("--n-per-category", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-pixels", type=int, default=64)
    p.add_argument("--n-prior", type=int, default=128)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint plus loss CSV")
    p.add_argument("dataset")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="loss CSV path (default: <out>.losses.csv)")
    p.add_argument("--binary", action="store_true", help="store tensors as raw little-endian doubles")
    p.add_argument("--test-per-category", type=int, default=0, help="hold out the last K instances of each category")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions or a checkpoint; writes a report and curve CSVs")
    p.add_argument("dataset")
    p.add_argument("--out", default="report.jsonl")
    p.add_argument("--curves-dir", help="directory for curve CSVs (default: next to the report)")
    _add_prediction_source(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curves", help="write AP curves over IoU, rotation and translation thresholds")
    p.add_argument("dataset")
    p.add_argument("--out-dir", default=".")
    _add_prediction_source(p)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("ablate", help="train variants with a shared seed and tabulate mean AP")
    p.add_argument("dataset")
    p.add_argument("--out", default="ablation.csv")
    p.add_argument("--variants", default="full,no_ngph,no_decouple", help=f"comma-separated subset of {','.join(VARIANTS)}")
    p.add_argument("--test-per-category", type=int, default=20)
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    data_dir = Path(args.data_dir or os.environ.get(ENV_DATA) or ".")
    if args.threads < 1:
        print("catpose: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args, data_dir)
    except TrainingDiverged as exc:
        print(f"catpose: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (InvalidInputError, DegenerateConfigurationError, ParseError, json.JSONDecodeError) as exc:
        print(f"catpose: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"catpose: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
