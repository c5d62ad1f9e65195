import pytest

from evade import reachability as rb
from evade import world as wd


@pytest.fixture(scope="session")
def grid_cache():
    """One solver cache per session; grids cost ~1.5 s each to solve."""
    return rb.GridCache()


@pytest.fixture(scope="session")
def ellipse_grid(grid_cache):
    return grid_cache.get(wd.Ellipse(3.5, 1.75))


@pytest.fixture(scope="session")
def micro_spec():
    """Small 4-D grid for operator-level properties."""
    return rb.GridSpec(dims=((-5.0, 5.0, 4), (-5.0, 5.0, 4),
                             (0.0, 10.0, 3), (-0.5, 0.5, 3)),
                       gamma=0.9)
