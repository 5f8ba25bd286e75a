"""Command-line interface over the staged pipeline.

Exit codes: 0 success, 2 configuration/usage error, 3 stage failure,
4 incompatible runs in a comparison.  The default output root comes from
the FAIRSKIN_OUT environment variable, falling back to ./runs.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from ..classifier import (
    augmented_from_images,
    epoch_records_csv,
    load_classifier,
    save_classifier,
    train_classifier,
)
from ..data import (
    RACES,
    Disease,
    Race,
    Sample,
    count_samples,
    label_index,
    write_corpus,
)
from ..diffusion import load_denoiser, save_denoiser, train
from ..diffusion import sample as dm_sample
from ..errors import (
    ConfigError,
    FairskinError,
    IncompatibleRunsError,
    PreconditionError,
    StageError,
)
from ..numerics import Rng
from .config import config_keys, load_config
from .pipeline import (
    CLF_CKPT,
    DM_CKPT,
    clf_train_config,
    compare,
    corpus_and_split,
    dm_train_config,
    evaluate,
    generated_images,
    load_run,
    run_experiment,
    sweep,
    write_losses_csv,
)
from .svg import bar_chart, line_chart


def default_out_root() -> str:
    return os.environ.get("FAIRSKIN_OUT", "./runs")


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="FILE", help="key = value config file")
    for key in config_keys():
        sub.add_argument(f"--{key}", default=None, help=argparse.SUPPRESS)


def _config_from_args(args: argparse.Namespace):
    overrides = {key: getattr(args, key) for key in config_keys()}
    return load_config(args.config, overrides)


def _run_dir(args: argparse.Namespace, config) -> Path:
    out = Path(args.out)
    d = out / config.hash()
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.txt").write_text(config.canonical())
    return d


def cmd_gen_data(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    corpus, _ = corpus_and_split(config)
    out_dir = Path(args.out_dir or Path(args.out) / f"corpus-{config.seed}")
    write_corpus(corpus, out_dir)
    counts = count_samples(corpus)
    print(f"wrote {counts.total()} samples to {out_dir}")
    for race in RACES:
        print(f"  {race.value}: {counts.race_total(race)}")
    return 0


def cmd_train_dm(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if not config.uses_dm:
        raise ConfigError("method 'none' has no diffusion stage")
    out_dir = _run_dir(args, config)
    try:
        _, split = corpus_and_split(config)
        dm, schedule, losses = train(split.train, dm_train_config(config))
    except FairskinError as exc:
        raise StageError("train-dm", exc) from exc
    save_denoiser(out_dir / DM_CKPT, dm, schedule)
    write_losses_csv(losses, out_dir / "losses.csv")
    if losses:
        line_chart(
            {"total": ([r.step for r in losses], [r.total for r in losses])},
            out_dir / "losses.svg",
            title="training loss",
        )
    print(f"trained denoiser -> {out_dir / DM_CKPT}")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    model, schedule = load_denoiser(args.ckpt)
    race = Race(args.race)
    disease = Disease(args.disease)
    rng = Rng(args.seed).stream("cli-sample")
    images = dm_sample(model, schedule, label_index(race, disease), args.n, rng)
    out_dir = Path(args.out_dir)
    write_corpus([Sample(image=img, race=race, disease=disease) for img in images], out_dir)
    print(f"wrote {args.n} samples for ({race.value}, {disease.value}) to {out_dir}")
    return 0


def _load_dm_and_images(config, out_dir: Path):
    if not config.uses_dm or config.aug_total == 0:
        return None, None, {}
    ckpt = out_dir / DM_CKPT
    if not ckpt.is_file():
        raise StageError("sample", FileNotFoundError(f"{ckpt} not found; run train-dm first"))
    dm, schedule = load_denoiser(ckpt)
    return dm, schedule, generated_images(config, dm, schedule)


def cmd_train_clf(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    out_dir = _run_dir(args, config)
    _, _, images = _load_dm_and_images(config, out_dir)
    try:
        _, split = corpus_and_split(config)
        s_aug = augmented_from_images(split.train, images)
        clf, epochs = train_classifier(
            s_aug, split.validation, clf_train_config(config), Rng(config.seed).stream("clf")
        )
    except FairskinError as exc:
        raise StageError("train-clf", exc) from exc
    save_classifier(out_dir / CLF_CKPT, clf)
    epoch_records_csv(epochs, out_dir / "clf_epochs.csv")
    print(f"trained classifier -> {out_dir / CLF_CKPT}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    out_dir = _run_dir(args, config)
    ckpt = out_dir / CLF_CKPT
    if not ckpt.is_file():
        raise StageError("eval", FileNotFoundError(f"{ckpt} not found; run train-clf first"))
    clf = load_classifier(ckpt)
    _, _, images = _load_dm_and_images(config, out_dir)
    try:
        corpus, split = corpus_and_split(config)
        report = evaluate(config, corpus, split, clf, images)
    except FairskinError as exc:
        raise StageError("eval", exc) from exc
    (out_dir / "report.json").write_bytes(report.to_json().encode())
    (out_dir / "report.txt").write_text(report.to_text())
    print(report.to_text(), end="")
    return 0


def cmd_experiment(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    record = run_experiment(config, args.out, reuse=args.reuse)
    print(f"run {record.config_hash} -> {record.out_dir}")
    print(record.report.to_text(), end="")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    records, table = sweep(config, args.axis, values, args.out, jobs=args.jobs)
    sweep_dir = Path(args.out) / f"sweep-{args.axis.replace('_', '-')}"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    (sweep_dir / "sweep.csv").write_text(table)
    reports = [r.report for r in records]
    if args.axis == "aug_total" and all(r.dp is not None for r in reports):
        xs = [float(v) for v in values]
        line_chart(
            {
                "dp": (xs, [r.dp for r in reports]),
                "essp": (xs, [r.essp for r in reports]),
                "acc": (xs, [r.acc_overall for r in reports]),
            },
            sweep_dir / "sweep.svg",
            title="metrics vs augmentation size",
        )
    elif args.axis == "aug_proportions":
        bar_chart(
            values, [r.essp for r in reports], sweep_dir / "sweep.svg",
            title="equity-scaled accuracy vs race proportions",
        )
    print(table, end="")
    print(f"sweep table -> {sweep_dir / 'sweep.csv'}", file=sys.stderr)
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    records = []
    for d in args.run_dirs:
        path = Path(d)
        if not (path / "report.json").is_file():
            raise PreconditionError(f"{d} holds no completed run (missing report.json)")
        records.append(load_run(path))
    table = compare(records)
    if args.out_file:
        Path(args.out_file).write_text(table)
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairskin",
        description="Three-level resampling pipeline for fair conditional image generation.",
    )
    parser.add_argument(
        "--out", default=default_out_root(),
        help="output root directory (default: $FAIRSKIN_OUT or ./runs)",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="generate (or ingest) the corpus and export it as PGM files")
    _add_config_flags(p)
    p.add_argument("--out-dir", help="corpus directory (default <out>/corpus-<seed>)")
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("train-dm", help="train the diffusion model stage only")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_dm)

    p = subs.add_parser("sample", help="generate images for one class from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--race", required=True, choices=[r.value for r in Race])
    p.add_argument("--disease", required=True, choices=[d.value for d in Disease])
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sample)

    p = subs.add_parser("train-clf", help="train the downstream classifier stage only")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train_clf)

    p = subs.add_parser("eval", help="evaluate a completed run and write its report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("experiment", help="run the full pipeline end to end")
    _add_config_flags(p)
    p.add_argument("--reuse", action="store_true", help="return the stored report if the run exists")
    p.set_defaults(func=cmd_experiment)

    p = subs.add_parser("sweep", help="run the pipeline across one axis of values")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=("aug_total", "aug_proportions"))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("compare", help="tabulate per-method medians over completed runs")
    p.add_argument("run_dirs", nargs="+", metavar="RUN_DIR")
    p.add_argument("--out-file", help="also write the table to this file")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IncompatibleRunsError as exc:
        print(f"incompatible runs: {exc}", file=sys.stderr)
        return 4
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except PreconditionError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (OSError, FairskinError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
