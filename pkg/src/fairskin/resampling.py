"""Level 1: class-balanced and square-root resampling of the corpus.

Rare (race, disease) classes get proportionally larger draw weights so the
generator sees them as often (CBRS) or nearly as often (SQRS) as common
classes.  Weights can steer either which samples are drawn or how much
each drawn sample's loss counts; both routes share the same per-class
weight table.
"""

from __future__ import annotations

import csv
import enum

import numpy as np

from .data import CLASSES, ClassCountTable, Disease, Race, Sample
from .errors import EmptyCorpusError, MissingWeightError, PreconditionError
from .numerics import Rng


class Scheme(enum.Enum):
    UNIFORM = "uniform"
    CBRS = "cbrs"
    SQRS = "sqrs"


class ClassWeights:
    """Per-(race, disease) draw weights, normalized to corpus mean 1.

    Normalization uses the count table the weights were built from: the
    count-weighted average of the per-class weights equals 1, so a
    uniform-weight table stays all-ones and weighted losses stay on the
    same scale as unweighted ones.
    """

    def __init__(self, raw: dict[tuple[Race, Disease], float], counts: ClassCountTable):
        total = counts.total()
        if total == 0:
            raise EmptyCorpusError("cannot normalize weights over an empty corpus")
        for cls, w in raw.items():
            if not np.isfinite(w) or w < 0:
                raise PreconditionError(f"weight {w} for {cls} must be finite and >= 0")
        mass = sum(raw.get(cls, 0.0) * counts.get(*cls) for cls in CLASSES)
        if mass <= 0:
            raise EmptyCorpusError("all class weights are zero on the populated classes")
        scale = total / mass
        self._weights = {cls: raw.get(cls, 0.0) * scale for cls in CLASSES if counts.get(*cls) > 0}
        self._counts = counts

    def get(self, race: Race, disease: Disease) -> float:
        key = (race, disease)
        if key not in self._weights:
            raise MissingWeightError(f"no weight for class ({race.value}, {disease.value})")
        return self._weights[key]

    def items(self) -> list[tuple[tuple[Race, Disease], float]]:
        return sorted(self._weights.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value))

    def sample_weights(self, samples: list[Sample]) -> np.ndarray:
        return np.array([self.get(s.race, s.disease) for s in samples])

    def dump_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["race", "disease", "weight"])
            for (race, disease), w in self.items():
                writer.writerow([race.value, disease.value, f"{w:.12g}"])


def uniform_weights(counts: ClassCountTable) -> ClassWeights:
    return ClassWeights({cls: 1.0 for cls in counts.nonempty()}, counts)


def cbrs_weights(counts: ClassCountTable) -> ClassWeights:
    """Inverse-frequency weights: every populated class gets equal total mass."""
    return ClassWeights({cls: 1.0 / counts.get(*cls) for cls in counts.nonempty()}, counts)


def sqrs_weights(counts: ClassCountTable) -> ClassWeights:
    """Inverse square-root frequency: a softer pull toward balance than CBRS."""
    return ClassWeights(
        {cls: 1.0 / np.sqrt(counts.get(*cls)) for cls in counts.nonempty()}, counts
    )


def scheme_weights(scheme: Scheme, counts: ClassCountTable) -> ClassWeights:
    if scheme is Scheme.UNIFORM:
        return uniform_weights(counts)
    if scheme is Scheme.CBRS:
        return cbrs_weights(counts)
    return sqrs_weights(counts)


def draw_probabilities(weights: ClassWeights, samples: list[Sample]) -> np.ndarray:
    """Per-sample draw distribution proportional to each sample's class weight."""
    w = weights.sample_weights(samples)
    total = w.sum()
    if total <= 0:
        raise EmptyCorpusError("all sample weights are zero")
    return w / total

def weighted_sampler(samples: list[Sample], weights: ClassWeights, rng: Rng, block: int = 4096):
    """Infinite with-replacement sample stream following the class weights.

    Draws are generated in blocks by inverting the cumulative distribution,
    so consuming k samples costs O(k log n) regardless of corpus size.
    """
    probs = draw_probabilities(weights, samples)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    while True:
        u = rng.random(block)
        for idx in np.searchsorted(cdf, u, side="right"):
            yield samples[idx]
