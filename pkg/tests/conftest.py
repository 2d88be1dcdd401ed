import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fixture_corpus import build_fixture_dataset, build_foreign_pool  # noqa: E402

from ssdau.corpus import RelationSchema  # noqa: E402
from ssdau.discretize import build_library  # noqa: E402
from ssdau.embedding import DeterministicTestProvider, SentenceVectorCache  # noqa: E402
from ssdau.matching import SimilarityWeights, build_queues  # noqa: E402


@pytest.fixture(scope="session")
def dataset():
    return build_fixture_dataset()


@pytest.fixture(scope="session")
def foreign_pool():
    return build_foreign_pool()


@pytest.fixture(scope="session")
def schema(dataset):
    return RelationSchema.from_dataset(dataset)


@pytest.fixture(scope="session")
def provider():
    return DeterministicTestProvider(32)


@pytest.fixture(scope="session")
def cache(provider):
    return SentenceVectorCache(provider)


@pytest.fixture(scope="session")
def library(dataset, schema):
    return build_library(dataset, schema)


@pytest.fixture(scope="session")
def queues(library, cache):
    return build_queues(library, SimilarityWeights(), cache, floor=0.0)
