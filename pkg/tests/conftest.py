import numpy as np
import pytest

from reihom.cells import solve_cells
from reihom.coeff import BUILTIN_FAMILIES, make_builtin, sample

_CELLS = {}


def cell_solution(family, n=16, tol=1e-10, params=None):
    """Memoized cell solutions shared across test modules."""
    key = (family, n, tol, tuple(sorted((params or {}).items())))
    if key not in _CELLS:
        fld = make_builtin(family, params)
        _CELLS[key] = solve_cells(sample(fld, n, n), tol)
    return _CELLS[key]


@pytest.fixture(scope="session")
def cells16():
    return {f: cell_solution(f) for f in BUILTIN_FAMILIES}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
