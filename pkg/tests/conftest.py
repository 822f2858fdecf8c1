import numpy as np
import pytest

from bowmerge import SyntheticSpec, prepare_setup


@pytest.fixture(scope="session")
def small_setup():
    """Small two-vocabulary pipeline shared across unit tests."""
    spec = SyntheticSpec(
        n_images=60,
        features_per_image=30,
        dim=8,
        n_clusters=16,
        cluster_spread=1.0,
        duplicates_per_query=2,
        noise=0.5,
        seed=5,
        n_queries=6,
    )
    return prepare_setup(spec, vocab_size=32, n_vocabs=2, max_iters=8)


@pytest.fixture(scope="session")
def hamming_setup():
    """Like small_setup but with 32-bit signatures attached."""
    spec = SyntheticSpec(
        n_images=50,
        features_per_image=25,
        dim=8,
        n_clusters=16,
        cluster_spread=1.0,
        duplicates_per_query=2,
        noise=0.5,
        seed=9,
        n_queries=5,
    )
    return prepare_setup(spec, vocab_size=32, n_vocabs=2, max_iters=8, hamming_bits=32)


@pytest.fixture(scope="session")
def three_vocab_setup():
    """K=3 pipeline for the general scoring path."""
    spec = SyntheticSpec(
        n_images=50,
        features_per_image=25,
        dim=8,
        n_clusters=16,
        cluster_spread=1.0,
        duplicates_per_query=2,
        noise=0.5,
        seed=13,
        n_queries=5,
    )
    return prepare_setup(spec, vocab_size=24, n_vocabs=3, max_iters=8)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
