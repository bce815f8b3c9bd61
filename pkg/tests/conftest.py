import numpy as np
import pytest

from robfunc.fd import FunctionalSample, Grid


@pytest.fixture
def grid():
    return Grid.uniform(101)


@pytest.fixture
def fourier_sample(grid):
    """Curves from two orthogonal directions with score variances 4 and 1."""
    rng = np.random.default_rng(7)
    s = grid.points
    g1 = np.sqrt(2) * np.sin(np.pi * s)
    g2 = np.sqrt(2) * np.cos(2 * np.pi * s)
    scores = rng.standard_normal((200, 2)) * np.array([2.0, 1.0])
    return FunctionalSample(scores @ np.vstack([g1, g2]), grid), np.vstack([g1, g2])
