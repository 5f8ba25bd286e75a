import itertools

import numpy as np
import pytest

from fairskin.data import (
    ClassCountTable,
    Disease,
    Race,
    Sample,
    count_samples,
    default_count_profile,
)
from fairskin.errors import EmptyCorpusError, MissingWeightError, PreconditionError
from fairskin.numerics import Rng
from fairskin.resampling import (
    ClassWeights,
    Scheme,
    cbrs_weights,
    draw_probabilities,
    scheme_weights,
    sqrs_weights,
    uniform_weights,
    weighted_sampler,
)

A_PSO = (Race.ASIAN, Disease.PSORIASIS)
C_SCC = (Race.CAUCASIAN, Disease.SQUAMOUS_CELL_CARCINOMA)


def tiny_samples(n_a, n_c):
    img = np.zeros((8, 8))
    return (
        [Sample(image=img, race=A_PSO[0], disease=A_PSO[1]) for _ in range(n_a)]
        + [Sample(image=img, race=C_SCC[0], disease=C_SCC[1]) for _ in range(n_c)]
    )


def test_uniform_weights_are_all_one():
    w = uniform_weights(default_count_profile())
    for _, value in w.items():
        assert value == pytest.approx(1.0)


def test_cbrs_two_class_hand_values():
    counts = count_samples(tiny_samples(10, 40))
    w = cbrs_weights(counts)
    # raw 1/10 and 1/40, rescaled so 10*w_a + 40*w_c = 50
    assert w.get(*A_PSO) == pytest.approx(2.5)
    assert w.get(*C_SCC) == pytest.approx(0.625)


def test_sqrs_two_class_hand_values():
    counts = count_samples(tiny_samples(10, 40))
    w = sqrs_weights(counts)
    assert w.get(*A_PSO) == pytest.approx(5.0 / 3.0)
    assert w.get(*C_SCC) == pytest.approx(5.0 / 6.0)


def test_normalization_count_weighted_mean_is_one():
    counts = default_count_profile()
    for scheme in Scheme:
        w = scheme_weights(scheme, counts)
        mean = sum(w.get(*cls) * counts.get(*cls) for cls, _ in w.items()) / counts.total()
        assert mean == pytest.approx(1.0, rel=1e-12)


def test_cbrs_equalizes_class_mass():
    counts = default_count_profile()
    w = cbrs_weights(counts)
    masses = {cls: w.get(*cls) * counts.get(*cls) for cls, _ in w.items()}
    values = list(masses.values())
    assert np.allclose(values, values[0])


def test_sqrs_sits_between_uniform_and_cbrs():
    counts = default_count_profile()
    uni = uniform_weights(counts)
    cb = cbrs_weights(counts)
    sq = sqrs_weights(counts)
    rare = (Race.AFRICAN, Disease.BASAL_CELL_CARCINOMA)  # 12 samples
    common = (Race.CAUCASIAN, Disease.PSORIASIS)  # 412 samples
    assert uni.get(*rare) < sq.get(*rare) < cb.get(*rare)
    assert cb.get(*common) < sq.get(*common) < uni.get(*common)


def test_missing_class_weight_raises():
    counts = count_samples(tiny_samples(3, 3))
    w = cbrs_weights(counts)
    with pytest.raises(MissingWeightError):
        w.get(Race.AFRICAN, Disease.LICHEN_PLANUS)


def test_rejects_negative_weight():
    counts = count_samples(tiny_samples(2, 2))
    with pytest.raises(PreconditionError):
        ClassWeights({A_PSO: -1.0, C_SCC: 1.0}, counts)


def test_rejects_empty_corpus():
    with pytest.raises(EmptyCorpusError):
        uniform_weights(ClassCountTable({}))


def test_draw_probabilities_sum_to_one():
    samples = tiny_samples(5, 20)
    probs = draw_probabilities(cbrs_weights(count_samples(samples)), samples)
    assert probs.shape == (25,)
    assert probs.sum() == pytest.approx(1.0)
    # every member of the rare class is 4x as likely as of the common class
    assert probs[0] == pytest.approx(4.0 * probs[-1])


def test_sampler_frequencies_follow_weights():
    samples = tiny_samples(10, 40)
    weights = cbrs_weights(count_samples(samples))
    stream = weighted_sampler(samples, weights, Rng(0).stream("draw"))
    drawn = list(itertools.islice(stream, 20000))
    frac_rare = sum(1 for s in drawn if s.race is Race.ASIAN) / len(drawn)
    assert abs(frac_rare - 0.5) < 0.02


def test_sampler_deterministic():
    samples = tiny_samples(4, 4)
    weights = uniform_weights(count_samples(samples))
    a = [id(s) for s in itertools.islice(weighted_sampler(samples, weights, Rng(3)), 100)]
    b = [id(s) for s in itertools.islice(weighted_sampler(samples, weights, Rng(3)), 100)]
    assert a == b


def test_dump_csv(tmp_path):
    counts = count_samples(tiny_samples(10, 40))
    path = tmp_path / "weights.csv"
    cbrs_weights(counts).dump_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "race,disease,weight"
    assert lines[1] == "asian,pso,2.5"
    assert lines[2] == "caucasian,scc,0.625"
