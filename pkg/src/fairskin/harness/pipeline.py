"""Staged experiment pipeline: data, diffusion, augmentation, evaluation.

A run is identified by its config hash and owns a directory of artifacts.
Every stage derives its randomness from the root seed through named
streams, so running stages one at a time through the CLI produces exactly
the same bytes as one end-to-end call, and reruns are bit-identical.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..classifier import (
    AugmentationPlan,
    ClassifierModel,
    ClassifierTrainConfig,
    EpochRecord,
    augmented_from_images,
    epoch_records_csv,
    generate_plan_images,
    save_classifier,
    train_classifier,
)
from ..data import (
    CLASSES,
    DISEASES,
    RACES,
    DatasetSplit,
    Disease,
    Race,
    Sample,
    default_count_profile,
    generate_synthetic,
    ingest_external,
    split_8_1_1,
    write_corpus,
)
from ..diffusion import (
    DenoiserModel,
    DiffusionTrainConfig,
    LossRecord,
    NoiseSchedule,
    save_denoiser,
    train,
)
from ..errors import (
    IncompatibleRunsError,
    PreconditionError,
    StageError,
)
from ..metrics import (
    MetricsReport,
    demographic_parity,
    essp,
    extract_features_projection,
    fid,
    fid_per_group,
    fid_variance,
    inception_style_score,
    pca_2d,
)
from ..numerics import Rng
from ..resampling import scheme_weights
from .config import ExperimentConfig, build_config, parse_config_text

DM_CKPT = "dm.ckpt"
CLF_CKPT = "clf.ckpt"


@dataclass
class RunRecord:
    """Everything produced by one pipeline run."""

    config: ExperimentConfig
    config_hash: str
    out_dir: str
    report: MetricsReport
    timings: dict[str, float] = field(default_factory=dict)
    loss_records: list[LossRecord] = field(default_factory=list)
    epoch_records: list[EpochRecord] = field(default_factory=list)
    dm_path: str | None = None
    clf_path: str | None = None


def _staged(name: str, timings: dict[str, float], fn):
    start = time.perf_counter()
    try:
        result = fn()
    except Exception as exc:
        raise StageError(name, exc) from exc
    timings[name] = time.perf_counter() - start
    return result


def corpus_and_split(config: ExperimentConfig) -> tuple[list[Sample], DatasetSplit]:
    """Build (or ingest) the corpus and its stratified 8:1:1 split."""
    rng = Rng(config.seed)
    if config.manifest:
        corpus = ingest_external(config.manifest, config.image_dir, config.height, config.width)
    else:
        corpus = generate_synthetic(
            default_count_profile(), rng.stream("data"), config.height, config.width
        )
    return corpus, split_8_1_1(corpus, rng.stream("split"))


def dm_train_config(config: ExperimentConfig) -> DiffusionTrainConfig:
    return DiffusionTrainConfig(
        steps=config.dm_steps,
        batch_size=config.dm_batch,
        lr=config.dm_lr,
        gamma=config.gamma,
        weight_scheme=config.scheme,
        weight_mode=config.weight_mode,
        seed=config.seed,
        t_steps=config.t_steps,
    )


def clf_train_config(config: ExperimentConfig) -> ClassifierTrainConfig:
    return ClassifierTrainConfig(
        epochs=config.clf_epochs,
        batch_size=config.clf_batch,
        lr=config.clf_lr,
        reweight=config.reweight,
        reweight_mode=config.reweight_mode,
        seed=config.seed,
    )


def augmentation_plan(config: ExperimentConfig) -> AugmentationPlan:
    props = config.race_proportions()
    if props is None:
        return AugmentationPlan.uniform(config.aug_total)
    return AugmentationPlan.from_race_proportions(props, config.aug_total)


def generated_images(
    config: ExperimentConfig, dm: DenoiserModel, schedule: NoiseSchedule
) -> dict[tuple[Race, Disease], np.ndarray]:
    plan = augmentation_plan(config)
    return generate_plan_images(dm, schedule, plan, Rng(config.seed).stream("sample"))


def write_losses_csv(records: list[LossRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss_dm", "loss_r", "total"])
        for r in records:
            writer.writerow([r.step, f"{r.loss_dm:.6f}", f"{r.loss_r:.6f}", f"{r.total:.6f}"])


def _feature_fn(config: ExperimentConfig, clf: ClassifierModel):
    if config.feature_source == "projection":
        return extract_features_projection
    return clf.features


def evaluate(
    config: ExperimentConfig,
    corpus: list[Sample],
    split: DatasetSplit,
    clf: ClassifierModel,
    images_by_class: dict[tuple[Race, Disease], np.ndarray],
) -> MetricsReport:
    """Score one trained pipeline: generation quality/fairness + classifier fairness.

    The real side of every distribution comparison is the full corpus; the
    generated side is the augmentation output, grouped by conditioning
    label.  Classifier metrics come from the configured held-out split.
    """
    eval_set = split.validation if config.eval_split == "validation" else split.test
    eval_images = np.stack([s.image for s in eval_set])
    truth = np.array([DISEASES.index(s.disease) for s in eval_set])
    races = [s.race for s in eval_set]
    predicted = clf.predict_labels(eval_images)
    acc_overall = 100.0 * float(np.mean(predicted == truth))
    acc_per_race = {}
    race_idx = np.array([RACES.index(r) for r in races])
    for z, race in enumerate(RACES):
        mask = race_idx == z
        acc_per_race[race.value] = 100.0 * float(np.mean(predicted[mask] == truth[mask]))
    dp = demographic_parity(predicted, races)
    report = MetricsReport(
        fid_overall=None,
        fid_per_race={},
        fid_variance=None,
        is_mean=None,
        is_std=None,
        dp=dp,
        essp=essp(acc_overall, dp),
        acc_overall=acc_overall,
        acc_per_race=acc_per_race,
    )
    if not images_by_class:
        return report
    features = _feature_fn(config, clf)
    real_by_class = {cls: [] for cls in CLASSES}
    for s in corpus:
        real_by_class[(s.race, s.disease)].append(s.image)
    real_feats = {
        cls: features(np.stack(imgs)) for cls, imgs in real_by_class.items() if imgs
    }
    gen_feats = {cls: features(imgs) for cls, imgs in images_by_class.items()}
    real_all = np.concatenate([real_feats[cls] for cls in CLASSES if cls in real_feats])
    gen_all = np.concatenate([gen_feats[cls] for cls in CLASSES if cls in gen_feats])
    report.fid_overall = fid(real_all, gen_all)

    def by_race(feats: dict) -> dict[str, np.ndarray]:
        out = {}
        for race in RACES:
            parts = [feats[(race, d)] for d in DISEASES if (race, d) in feats]
            if parts:
                out[race.value] = np.concatenate(parts)
        return out

    race_scores, _ = fid_per_group(by_race(real_feats), by_race(gen_feats))
    report.fid_per_race = race_scores
    if config.fid_grouping == "race":
        group_scores = race_scores
    else:
        group_scores, _ = fid_per_group(
            {f"{r.value}/{d.value}": v for (r, d), v in real_feats.items()},
            {f"{r.value}/{d.value}": v for (r, d), v in gen_feats.items()},
        )
    if len(group_scores) >= 2:
        report.fid_variance = fid_variance([group_scores[k] for k in sorted(group_scores)])
    probs = clf.predict(np.concatenate([images_by_class[cls] for cls in CLASSES if cls in images_by_class]))
    report.is_mean, report.is_std = inception_style_score(probs)
    return report


def _write_pca_csv(images_by_class, features, path) -> None:
    all_feats = []
    labels = []
    for cls in CLASSES:
        if cls not in images_by_class:
            continue
        feats = features(images_by_class[cls])
        all_feats.append(feats)
        labels.extend([cls] * feats.shape[0])
    coords = pca_2d(np.concatenate(all_feats))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["race", "disease", "u", "v"])
        for (race, disease), (u, v) in zip(labels, coords):
            writer.writerow([race.value, disease.value, f"{u:.6f}", f"{v:.6f}"])


def run_experiment(config: ExperimentConfig, out_root, reuse: bool = False) -> RunRecord:
    """Run every stage for one config; artifacts land in ``out_root/<hash>``.

    ``reuse`` returns the stored report when the directory already holds a
    completed run of the identical canonical config; by default everything
    is recomputed (and overwritten bit-identically).
    """
    config_hash = config.hash()
    out_dir = Path(out_root) / config_hash
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    config_path = out_dir / "config.txt"
    if reuse and report_path.is_file() and config_path.is_file():
        if config_path.read_text() == config.canonical():
            return load_run(out_dir)
    config_path.write_text(config.canonical())
    timings: dict[str, float] = {}
    record = RunRecord(
        config=config, config_hash=config_hash, out_dir=str(out_dir),
        report=None, timings=timings,  # type: ignore[arg-type]
    )
    corpus, split = _staged("data", timings, lambda: corpus_and_split(config))
    images_by_class: dict[tuple[Race, Disease], np.ndarray] = {}
    if config.uses_dm:
        weights = scheme_weights(config.scheme, split.counts())
        weights.dump_csv(out_dir / "weights.csv")

        def _train_dm():
            dm, schedule, losses = train(split.train, dm_train_config(config))
            save_denoiser(out_dir / DM_CKPT, dm, schedule)
            write_losses_csv(losses, out_dir / "losses.csv")
            return dm, schedule, losses

        dm, schedule, record.loss_records = _staged("train-dm", timings, _train_dm)
        record.dm_path = str(out_dir / DM_CKPT)
        if config.aug_total > 0:

            def _sample():
                images = generated_images(config, dm, schedule)
                gen_samples = [
                    Sample(image=img, race=r, disease=d)
                    for (r, d), imgs in images.items()
                    for img in imgs
                ]
                write_corpus(gen_samples, out_dir / "samples")
                return images

            images_by_class = _staged("sample", timings, _sample)
    s_aug = _staged(
        "augment", timings, lambda: augmented_from_images(split.train, images_by_class)
    )

    def _train_clf():
        clf, epochs = train_classifier(
            s_aug, split.validation, clf_train_config(config), Rng(config.seed).stream("clf")
        )
        save_classifier(out_dir / CLF_CKPT, clf)
        epoch_records_csv(epochs, out_dir / "clf_epochs.csv")
        return clf, epochs

    clf, record.epoch_records = _staged("train-clf", timings, _train_clf)
    record.clf_path = str(out_dir / CLF_CKPT)

    def _eval():
        report = evaluate(config, corpus, split, clf, images_by_class)
        report_path.write_bytes(report.to_json().encode())
        (out_dir / "report.txt").write_text(report.to_text())
        if images_by_class:
            _write_pca_csv(images_by_class, _feature_fn(config, clf), out_dir / "pca.csv")
        return report

    record.report = _staged("eval", timings, _eval)
    return record


def load_run(out_dir) -> RunRecord:
    """Rebuild a RunRecord from a completed run directory."""
    out_dir = Path(out_dir)
    config = build_config(parse_config_text((out_dir / "config.txt").read_text()))
    report = MetricsReport.from_json((out_dir / "report.json").read_text())
    dm = out_dir / DM_CKPT
    clf = out_dir / CLF_CKPT
    return RunRecord(
        config=config,
        config_hash=config.hash(),
        out_dir=str(out_dir),
        report=report,
        dm_path=str(dm) if dm.is_file() else None,
        clf_path=str(clf) if clf.is_file() else None,
    )


_COMPARE_COLUMNS = (
    "method", "runs", "fid", "fid_variance", "dp", "essp", "is",
    "acc", "acc_african", "acc_asian", "acc_caucasian",
)


def compare(records: list[RunRecord]) -> str:
    """Per-method medians over seeds as a CSV table, one row per method."""
    if len(records) < 2:
        raise PreconditionError(f"need at least 2 run records to compare, got {len(records)}")
    options = {
        (r.config.feature_source, r.config.fid_grouping, r.config.eval_split,
         r.config.height, r.config.width)
        for r in records
    }
    if len(options) > 1:
        raise IncompatibleRunsError(
            f"runs use different metric options: {sorted(options)}"
        )
    by_method: dict[str, list[RunRecord]] = {}
    for r in records:
        by_method.setdefault(r.config.method, []).append(r)

    def median(values) -> str:
        vals = list(values)
        if any(v is None for v in vals):
            return "-"
        return f"{float(np.median(np.asarray(vals, dtype=np.float64))):.4f}"

    lines = [",".join(_COMPARE_COLUMNS)]
    for method, group in sorted(by_method.items()):
        reports = [g.report for g in group]
        lines.append(
            ",".join(
                [
                    method,
                    str(len(group)),
                    median(r.fid_overall for r in reports),
                    median(r.fid_variance for r in reports),
                    median(r.dp for r in reports),
                    median(r.essp for r in reports),
                    median(r.is_mean for r in reports),
                    median(r.acc_overall for r in reports),
                    median(r.acc_per_race.get(Race.AFRICAN.value) for r in reports),
                    median(r.acc_per_race.get(Race.ASIAN.value) for r in reports),
                    median(r.acc_per_race.get(Race.CAUCASIAN.value) for r in reports),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _run_worker(args: tuple[str, str]) -> RunRecord:
    canonical, out_root = args
    config = build_config(parse_config_text(canonical))
    return run_experiment(config, out_root)


def run_many(configs: list[ExperimentConfig], out_root, jobs: int = 1) -> list[RunRecord]:
    """Run several configs, optionally in parallel worker processes."""
    if jobs <= 1 or len(configs) <= 1:
        return [run_experiment(c, out_root) for c in configs]
    args = [(c.canonical(), str(out_root)) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_worker, args))


SWEEP_AXES = ("aug_total", "aug_proportions")


def sweep(
    base: ExperimentConfig, axis: str, values: list[str], out_root, jobs: int = 1
) -> tuple[list[RunRecord], str]:
    """One run per axis value; returns the records and a metric-vs-axis CSV."""
    if axis not in SWEEP_AXES:
        raise PreconditionError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    if not values:
        raise PreconditionError("sweep needs at least one axis value")
    configs = []
    for value in values:
        raw = parse_config_text(base.canonical())
        raw[axis] = str(value)
        configs.append(build_config(raw))
    records = run_many(configs, out_root, jobs)

    def fmt(v) -> str:
        return "-" if v is None else f"{v:.4f}"

    lines = [f"{axis},fid,fid_variance,dp,essp,is,acc"]
    for value, record in zip(values, records):
        r = record.report
        lines.append(
            ",".join(
                [str(value), fmt(r.fid_overall), fmt(r.fid_variance), fmt(r.dp),
                 fmt(r.essp), fmt(r.is_mean), fmt(r.acc_overall)]
            )
        )
    return records, "\n".join(lines) + "\n"
