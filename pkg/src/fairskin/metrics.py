"""Distribution and fairness metrics for generated images and classifiers.

Image quality is scored in a 64-dim feature space by the Frechet distance
between Gaussian fits of real and generated features, overall and per
race; the sample variance of the per-race distances is the headline
fairness-of-quality number.  Classifier fairness is the aggregate gap
between per-race and pooled predicted-label rates (reported in percentage
points), and equity-scaled accuracy divides accuracy by one plus that gap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .classifier import ClassifierModel
from .data import DISEASES, RACES, Race
from .errors import (
    InsufficientDataError,
    MissingGroupError,
    PreconditionError,
)
from .numerics import Rng, eig_sym, gaussian_stats, sqrtm_psd

COV_REGULARIZATION = 1e-6
N_IS_SPLITS = 10
PROJECTION_SEED = 170_301  # frozen; classifier-independent features only


@dataclass
class FeatureSet:
    """Feature vectors for one group of images plus provenance tags."""

    vectors: np.ndarray
    source: str  # "real" | "generated"
    group: str  # race code, "race/disease", or "all"

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise PreconditionError("feature vectors must form a 2-d array")
        if not np.isfinite(self.vectors).all():
            raise PreconditionError(f"non-finite features in group {self.group!r}")


def extract_features_classifier(model: ClassifierModel, images: np.ndarray) -> np.ndarray:
    """Penultimate-layer activations of the downstream classifier."""
    return model.features(images)


def extract_features_projection(images: np.ndarray, out_dim: int = 64) -> np.ndarray:
    """Frozen random linear projection of pixels, classifier-independent.

    The projection matrix depends only on the image size and output
    dimension (fixed internal seed), so scores are comparable across every
    model evaluated at the same size.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    d = x.shape[1]
    proj_rng = Rng(PROJECTION_SEED).stream(f"proj/{d}/{out_dim}")
    w = proj_rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, out_dim))
    return x @ w


def frechet_distance(mu1: np.ndarray, cov1: np.ndarray, mu2: np.ndarray, cov2: np.ndarray) -> float:
    """Squared 2-Wasserstein distance between two Gaussian fits.

    ``d^2 = |mu1-mu2|^2 + tr(cov1 + cov2 - 2 (cov1 cov2)^{1/2})``, with the
    cross term computed symmetrically as sqrtm(sqrt1 cov2 sqrt1) and both
    covariances regularized by 1e-6 I first.
    """
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    if mu1.shape != mu2.shape:
        raise PreconditionError(f"mean dimensions differ: {mu1.shape} vs {mu2.shape}")
    n = mu1.size
    cov1 = np.asarray(cov1, dtype=np.float64).reshape(n, n) + COV_REGULARIZATION * np.eye(n)
    cov2 = np.asarray(cov2, dtype=np.float64).reshape(n, n) + COV_REGULARIZATION * np.eye(n)
    root1 = sqrtm_psd(cov1)
    cross = sqrtm_psd(root1 @ cov2 @ root1)
    diff = mu1 - mu2
    d2 = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    return max(d2, 0.0)


def fid(real_features: np.ndarray, gen_features: np.ndarray) -> float:
    mu1, cov1 = gaussian_stats(real_features)
    mu2, cov2 = gaussian_stats(gen_features)
    return frechet_distance(mu1, cov1, mu2, cov2)


def fid_per_group(
    real: dict[str, np.ndarray], generated: dict[str, np.ndarray]
) -> tuple[dict[str, float], list[str]]:
    """Per-group Frechet distances plus the list of skipped groups.

    A group needs at least dim+1 vectors on both sides for a full-rank
    covariance fit; smaller groups are flagged and excluded rather than
    scored on a degenerate fit.
    """
    scores: dict[str, float] = {}
    insufficient: list[str] = []
    for group in sorted(set(real) | set(generated)):
        r = real.get(group)
        g = generated.get(group)
        if r is None or g is None:
            insufficient.append(group)
            continue
        need = r.shape[1] + 1
        if r.shape[0] < need or g.shape[0] < need:
            insufficient.append(group)
            continue
        scores[group] = fid(r, g)
    return scores, insufficient


def fid_variance(per_group_fids) -> float:
    """Unbiased sample variance (n-1 denominator) of per-group distances."""
    values = np.asarray(list(per_group_fids), dtype=np.float64)
    if values.size < 2:
        raise InsufficientDataError(f"need at least 2 group values, got {values.size}")
    return float(np.var(values, ddof=1))


def inception_style_score(probs: np.ndarray, n_splits: int = N_IS_SPLITS) -> tuple[float, float]:
    """Exponentiated mean KL to the marginal, over contiguous splits.

    ``probs`` holds one predictive distribution per generated image.  Each
    split's score is exp(mean_x KL(p(y|x) || p_bar)) with p_bar the split's
    mean distribution; reported as (mean, population std) over the splits.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise PreconditionError("probs must be (n_images, n_classes)")
    if p.shape[0] < n_splits:
        raise InsufficientDataError(f"need at least {n_splits} images, got {p.shape[0]}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise PreconditionError("rows of probs must be valid distributions")
    scores = []
    for chunk in np.array_split(p, n_splits):
        marginal = chunk.mean(axis=0)
        safe = np.where(chunk > 0, chunk, 1.0)
        kl = np.sum(chunk * (np.log(safe) - np.log(marginal)), axis=1)
        scores.append(np.exp(kl.mean()))
    scores = np.asarray(scores)
    return float(scores.mean()), float(scores.std())


def parity_gap(predicted: np.ndarray, groups, n_labels: int) -> float:
    """Aggregate predicted-label rate gap across groups, in percentage points.

    For every label, compare each group's predicted rate with the pooled
    rate; sum the absolute gaps over groups and labels and average over
    the labels.  Zero means every group sees the same predicted-label
    distribution.  With two labels and symmetric treatment this is 100x
    the classic two-group positive-rate disparity.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    groups = list(groups)
    if predicted.size != len(groups):
        raise PreconditionError("predictions and group labels differ in length")
    if predicted.size == 0:
        raise MissingGroupError("no predictions given")
    if np.any(predicted < 0) or np.any(predicted >= n_labels):
        raise PreconditionError(f"predicted labels out of range 0..{n_labels - 1}")
    overall = np.bincount(predicted, minlength=n_labels) / predicted.size
    gap = 0.0
    for g in sorted(set(groups), key=str):
        mask = np.array([x == g for x in groups])
        rates = np.bincount(predicted[mask], minlength=n_labels) / mask.sum()
        gap += np.abs(overall - rates).sum()
    return float(100.0 * gap / n_labels)


def demographic_parity(predicted: np.ndarray, races: list[Race]) -> float:
    """Race-level parity gap over the 5 disease labels, in percentage points."""
    present = set(races)
    missing = [r.value for r in RACES if r not in present]
    if missing:
        raise MissingGroupError(f"race(s) absent from predictions: {', '.join(missing)}")
    return parity_gap(predicted, [r.value for r in races], len(DISEASES))


def essp(acc_pp: float, dp_pp: float) -> float:
    """Equity-scaled accuracy: accuracy over (1 + parity gap), both in points."""
    if not 0.0 <= acc_pp <= 100.0:
        raise PreconditionError(f"accuracy {acc_pp} out of [0, 100]")
    if dp_pp < 0.0:
        raise PreconditionError(f"parity gap {dp_pp} must be >= 0")
    return acc_pp / (1.0 + dp_pp)


@dataclass
class MetricsReport:
    """All evaluation numbers for one trained pipeline.

    Generation metrics are None when the pipeline produced no generated
    images (the no-augmentation baseline); they serialize as JSON null and
    render as "-" in the text form.
    """

    fid_overall: float | None
    fid_per_race: dict[str, float]
    fid_variance: float | None
    is_mean: float | None
    is_std: float | None
    dp: float
    essp: float
    acc_overall: float
    acc_per_race: dict[str, float]

    def to_json(self) -> str:
        payload = {
            "fid_overall": self.fid_overall,
            "fid_per_race": self.fid_per_race,
            "fid_variance": self.fid_variance,
            "is_mean": self.is_mean,
            "is_std": self.is_std,
            "dp": self.dp,
            "essp": self.essp,
            "acc_overall": self.acc_overall,
            "acc_per_race": self.acc_per_race,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        raw = json.loads(text)
        return cls(**raw)

    def to_text(self) -> str:
        def fmt(v) -> str:
            return "-" if v is None else f"{v:.4f}"

        rows = [
            ("fid_overall", fmt(self.fid_overall)),
            ("fid_variance", fmt(self.fid_variance)),
            ("is_mean", fmt(self.is_mean)),
            ("is_std", fmt(self.is_std)),
            ("dp", fmt(self.dp)),
            ("essp", fmt(self.essp)),
            ("acc_overall", fmt(self.acc_overall)),
        ]
        for race in RACES:
            rows.append((f"fid[{race.value}]", fmt(self.fid_per_race.get(race.value))))
        for race in RACES:
            rows.append((f"acc[{race.value}]", fmt(self.acc_per_race.get(race.value))))
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows) + "\n"


def pca_2d(features: np.ndarray) -> np.ndarray:
    """Project features onto their two leading principal axes."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] < 3:
        raise InsufficientDataError("need at least 3 vectors for a 2-d projection")
    mu, cov = gaussian_stats(x)
    _, vecs = eig_sym(cov)
    return (x - mu) @ vecs[:, :2]
