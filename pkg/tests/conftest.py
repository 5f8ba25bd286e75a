import pytest

from fairskin.data import default_count_profile, generate_synthetic, split_8_1_1
from fairskin.numerics import Rng


@pytest.fixture(scope="session")
def corpus():
    """The default long-tailed corpus at seed 0."""
    return generate_synthetic(default_count_profile(), Rng(0).stream("data"))


@pytest.fixture(scope="session")
def corpus_split(corpus):
    return split_8_1_1(corpus, Rng(0).stream("split"))
