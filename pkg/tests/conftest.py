import numpy as np
import pytest

from curare.store import EmbeddingSet, make_meta


def random_set(count: int, dim: int, seed: int = 0, products=None) -> EmbeddingSet:
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(count, dim)).astype(np.float32)
    ids = [f"item-{i:05d}" for i in range(count)]
    meta = make_meta(ids, products=products)
    return EmbeddingSet(vectors, meta)


@pytest.fixture
def small_set() -> EmbeddingSet:
    return random_set(32, 8, seed=7)
