"""Level 3: disease classifier trained on real plus generated images.

Two rebalancing mechanisms act here.  Imbalance-aware augmentation adds a
chosen number of generated images per (race, disease) class before
training.  Dynamic reweighting recomputes per-race loss weights after
every epoch as the inverse of that race's validation accuracy, so races
the model currently serves worst pull harder on the next epoch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DISEASES, N_LABELS, RACES, Disease, Race, Sample, label_pair
from .diffusion import DenoiserModel, NoiseSchedule
from .diffusion import sample as dm_sample
from .errors import (
    DivergenceError,
    EmptyCorpusError,
    MissingGroupError,
    PreconditionError,
)
from .nn import Adam, Mlp, load_checkpoint, save_checkpoint
from .numerics import Rng

ACCURACY_CLAMP = 0.05


@dataclass
class AugmentationPlan:
    """How many generated samples to add per (race, disease) class."""

    counts: dict[tuple[Race, Disease], int]

    def __post_init__(self) -> None:
        for key, m in self.counts.items():
            if m < 0:
                raise PreconditionError(f"negative augmentation count {m} for {key}")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def uniform(cls, total: int) -> "AugmentationPlan":
        """Split ``total`` evenly over the 15 classes; must divide evenly."""
        if total % N_LABELS != 0:
            raise PreconditionError(f"total {total} is not a multiple of {N_LABELS}")
        per = total // N_LABELS
        return cls({(r, d): per for r in RACES for d in DISEASES})

    @classmethod
    def from_race_proportions(cls, proportions: dict[Race, float], total: int) -> "AugmentationPlan":
        """Split ``total`` by race proportion, then evenly over diseases.

        Proportions must sum to 1 and every per-class share must come out a
        whole number, mirroring splits like 0.3:0.2:0.5 of 7500 giving
        2250:1500:3750 per race and 450:300:750 per class.
        """
        sum_p = sum(proportions.get(r, 0.0) for r in RACES)
        if abs(sum_p - 1.0) > 1e-9:
            raise PreconditionError(f"race proportions sum to {sum_p}, expected 1")
        counts = {}
        for race in RACES:
            share = proportions.get(race, 0.0) * total
            per = share / len(DISEASES)
            if abs(per - round(per)) > 1e-9:
                raise PreconditionError(
                    f"race share {share} for {race.value} does not split evenly over {len(DISEASES)} diseases"
                )
            for disease in DISEASES:
                counts[(race, disease)] = int(round(per))
        return cls(counts)

    @classmethod
    def from_counts(cls, counts: dict[tuple[Race, Disease], int]) -> "AugmentationPlan":
        return cls(dict(counts))


def generate_plan_images(
    dm: DenoiserModel,
    schedule: NoiseSchedule,
    plan: AugmentationPlan,
    rng: Rng,
) -> dict[tuple[Race, Disease], np.ndarray]:
    """Generate the planned number of images per class, keyed by class.

    Each class draws from its own named stream (and each image from a
    numbered child of that), so plans can change per class without
    shifting any other class's outputs.
    """
    images: dict[tuple[Race, Disease], np.ndarray] = {}
    for idx in range(N_LABELS):
        race, disease = label_pair(idx)
        m = plan.counts.get((race, disease), 0)
        if m == 0:
            continue
        stream = rng.stream(f"{race.value}/{disease.value}")
        images[(race, disease)] = dm_sample(dm, schedule, idx, m, stream)
    return images


def augmented_from_images(
    real: list[Sample], images: dict[tuple[Race, Disease], np.ndarray]
) -> list[Sample]:
    """Real samples plus generated ones labeled by their conditioning class."""
    out = list(real)
    for (race, disease), imgs in images.items():
        out.extend(Sample(image=img, race=race, disease=disease) for img in imgs)
    return out


def build_augmented_set(
    real: list[Sample],
    dm: DenoiserModel,
    schedule: NoiseSchedule,
    plan: AugmentationPlan,
    rng: Rng,
) -> list[Sample]:
    """Real samples plus exactly the planned generated samples per class.

    Generated images inherit the conditioning (race, disease) as their
    label; the real list is never mutated.
    """
    return augmented_from_images(real, generate_plan_images(dm, schedule, plan, rng))


class ClassifierModel:
    """5-way disease classifier over flattened images.

    Dense layers D -> 128 -> 64 -> 5 with tanh hidden activations; the
    64-dim penultimate activation doubles as the feature map for the
    distribution metrics.
    """

    HIDDEN = (128, 64)

    def __init__(self, height: int, width: int, theta: np.ndarray | None = None):
        self.height = int(height)
        self.width = int(width)
        self.dim = self.height * self.width
        self.sizes = (self.dim, *self.HIDDEN, len(DISEASES))
        self.n_params = Mlp.n_params(self.sizes)
        if theta is None:
            theta = np.zeros(self.n_params)
        if theta.shape != (self.n_params,):
            raise PreconditionError(f"theta has shape {theta.shape}, expected ({self.n_params},)")
        self.theta = theta
        self.mlp = Mlp(self.sizes, theta)

    @classmethod
    def init(cls, height: int, width: int, rng: Rng) -> "ClassifierModel":
        model = cls(height, width)
        return cls(height, width, theta=Mlp.init_theta(model.sizes, rng))

    def arch_config(self) -> dict:
        return {"height": self.height, "width": self.width, "hidden": list(self.HIDDEN)}

    def logits(self, images: np.ndarray):
        x = _flatten(images, self.dim)
        return self.mlp.forward(x)

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Softmax distribution over diseases, rows summing to 1."""
        z, _ = self.logits(images)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict_labels(self, images: np.ndarray) -> np.ndarray:
        """Predicted disease indices; argmax ties go to the lowest index."""
        return np.argmax(self.predict(images), axis=1)

    def features(self, images: np.ndarray) -> np.ndarray:
        """Penultimate-layer activations, shape (B, 64)."""
        _, cache = self.logits(images)
        return cache[-2]


def _flatten(images: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    elif x.ndim == 2 and x.shape[1] != dim:
        x = x.reshape(1, -1)
    elif x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    if x.shape[1] != dim:
        raise PreconditionError(f"images flatten to {x.shape[1]} pixels, model expects {dim}")
    return x


def cross_entropy_loss(model: ClassifierModel, images: np.ndarray, labels: np.ndarray,
                       weights: np.ndarray | None = None):
    """Weighted mean cross-entropy; returns (loss, dtheta).

    ``weights`` are per-sample multipliers (race weights during dynamic
    reweighting); the reduction is sum(w_i * ce_i) / B.
    """
    labels = np.asarray(labels, dtype=np.int64)
    b = labels.size
    z, cache = model.logits(images)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.sum(np.exp(z), axis=1))
    ce = logsum - z[np.arange(b), labels]
    w = np.ones(b) if weights is None else np.asarray(weights, dtype=np.float64)
    loss = float(np.sum(w * ce) / b)
    probs = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    dout = probs
    dout[np.arange(b), labels] -= 1.0
    dout *= (w / b)[:, None]
    _, dtheta = model.mlp.backward(cache, dout)
    return loss, dtheta


def epoch_race_accuracy(model: ClassifierModel, validation: list[Sample]) -> dict[Race, float]:
    """Per-race disease accuracy on the validation split."""
    by_race: dict[Race, list[Sample]] = {r: [] for r in RACES}
    for s in validation:
        by_race[s.race].append(s)
    missing = [r.value for r in RACES if not by_race[r]]
    if missing:
        raise MissingGroupError(f"validation split has no samples for race(s): {', '.join(missing)}")
    acc = {}
    for race in RACES:
        members = by_race[race]
        images = np.stack([s.image for s in members])
        pred = model.predict_labels(images)
        truth = np.array([DISEASES.index(s.disease) for s in members])
        acc[race] = float(np.mean(pred == truth))
    return acc


def dynamic_reweight(acc: dict[Race, float]) -> dict[Race, float]:
    """Inverse-accuracy race weights, clamped and renormalized to mean 1."""
    raw = {race: 1.0 / max(acc[race], ACCURACY_CLAMP) for race in RACES}
    mean = sum(raw.values()) / len(raw)
    return {race: w / mean for race, w in raw.items()}


@dataclass
class ClassifierTrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    reweight: bool = True
    reweight_mode: str = "loss"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs <= 0 or self.batch_size <= 0:
            raise PreconditionError("epochs and batch_size must be positive")
        if self.reweight_mode not in ("loss", "resample"):
            raise PreconditionError(f"unknown reweight_mode {self.reweight_mode!r}")


@dataclass
class EpochRecord:
    epoch: int
    acc_overall: float
    acc_per_race: dict[Race, float]
    race_weights: dict[Race, float]
    loss: float


def train_classifier(
    train_set: list[Sample],
    validation: list[Sample],
    config: ClassifierTrainConfig,
    rng: Rng | None = None,
) -> tuple[ClassifierModel, list[EpochRecord]]:
    """Train the disease classifier with optional dynamic race reweighting.

    Weights start uniform and are refreshed from validation accuracy after
    each epoch.  ``reweight_mode = loss`` multiplies per-sample losses;
    ``resample`` draws each epoch's sample order from a race-weighted
    distribution instead and keeps losses unweighted.
    """
    if not train_set or not validation:
        raise EmptyCorpusError("train and validation splits must be nonempty")
    if rng is None:
        rng = Rng(config.seed)
    height, width = train_set[0].image.shape
    model = ClassifierModel.init(height, width, rng.stream("init"))
    opt = Adam(model.n_params, config.lr)
    images = np.stack([s.image.ravel() for s in train_set])
    labels = np.array([DISEASES.index(s.disease) for s in train_set])
    race_of = np.array([RACES.index(s.race) for s in train_set])
    n = len(train_set)
    weights = {race: 1.0 for race in RACES}
    order_rng = rng.stream("order")
    records: list[EpochRecord] = []
    for epoch in range(1, config.epochs + 1):
        w_vec = np.array([weights[RACES[r]] for r in race_of])
        if config.reweight and config.reweight_mode == "resample":
            probs = w_vec / w_vec.sum()
            order = order_rng.choice(n, size=n, replace=True, p=probs)
            epoch_weights = None
        else:
            order = order_rng.permutation(n)
            epoch_weights = w_vec if config.reweight else None
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            bw = None if epoch_weights is None else epoch_weights[idx]
            loss, grad = cross_entropy_loss(model, images[idx], labels[idx], bw)
            if not (np.isfinite(loss) and np.isfinite(grad).all()):
                raise DivergenceError(epoch, last_good_theta=model.theta.copy())
            opt.step(model.theta, grad)
            epoch_loss += loss
            n_batches += 1
        acc = epoch_race_accuracy(model, validation)
        if config.reweight:
            weights = dynamic_reweight(acc)
        val_images = np.stack([s.image for s in validation])
        val_truth = np.array([DISEASES.index(s.disease) for s in validation])
        overall = float(np.mean(model.predict_labels(val_images) == val_truth))
        records.append(
            EpochRecord(
                epoch=epoch,
                acc_overall=overall,
                acc_per_race=acc,
                race_weights=dict(weights),
                loss=epoch_loss / max(n_batches, 1),
            )
        )
    return model, records


def epoch_records_csv(records: list[EpochRecord], path) -> None:
    """Dump per-epoch metrics in a fixed column order."""
    header = "epoch,acc_overall,acc_asian,acc_african,acc_caucasian,w_asian,w_african,w_caucasian,loss"
    lines = [header]
    for r in records:
        lines.append(
            ",".join(
                [
                    str(r.epoch),
                    f"{r.acc_overall:.6f}",
                    f"{r.acc_per_race[Race.ASIAN]:.6f}",
                    f"{r.acc_per_race[Race.AFRICAN]:.6f}",
                    f"{r.acc_per_race[Race.CAUCASIAN]:.6f}",
                    f"{r.race_weights[Race.ASIAN]:.6f}",
                    f"{r.race_weights[Race.AFRICAN]:.6f}",
                    f"{r.race_weights[Race.CAUCASIAN]:.6f}",
                    f"{r.loss:.6f}",
                ]
            )
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_classifier(path, model: ClassifierModel) -> None:
    save_checkpoint(path, "classifier", model.arch_config(), model.theta)


def load_classifier(path) -> ClassifierModel:
    config, theta = load_checkpoint(path, "classifier")
    return ClassifierModel(config["height"], config["width"], theta=theta)
