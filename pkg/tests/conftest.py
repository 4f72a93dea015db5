import numpy as np
import pytest

from hintmatch import RewardMatrix, generate_instance


@pytest.fixture(scope="session")
def toy_instance():
    """Two agents, two arms, gap 1.4; hand-checkable."""
    return RewardMatrix(means=[[0.9, 0.1], [0.2, 0.8]])


@pytest.fixture(scope="session")
def skewed_instance():
    """Gap 0.1 instance where agent 1 dominates both arms."""
    return RewardMatrix(means=[[0.6, 0.4], [0.2, 0.1]])


@pytest.fixture(scope="session")
def gap03_instance():
    """Seeded 2x3 instance with minimum gap ~0.3."""
    return generate_instance(2, 3, 0.28, 0.32, seed=7)


@pytest.fixture(scope="session")
def gap045_instance():
    """Seeded 2x2 instance with minimum gap ~0.45."""
    return generate_instance(2, 2, 0.43, 0.47, seed=11)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
