"""The compiled and numpy kernels must agree bit for bit."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from viewstitch import kernels

pytestmark = pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")


def both():
    return kernels.get_backend("cython"), kernels.get_backend("python")


@given(st.integers(0, 100_000), st.integers(0, 300), st.integers(1, 300), st.sampled_from([None, 0.1, 1.0]))
@settings(max_examples=60, deadline=None)
def test_nearest_sqdist_parity(seed, n, m, rounding):
    rng = np.random.default_rng(seed)
    q, p = rng.normal(size=(n, 3)), rng.normal(size=(m, 3)) + rng.normal(size=3) * 3
    if rounding is not None:  # many ties and duplicates
        q, p = np.round(q / rounding) * rounding, np.round(p / rounding) * rounding
    c, py = both()
    assert np.array_equal(c.nearest_sqdist(q, p), py.nearest_sqdist(q, p))


def test_nearest_sqdist_empty_reference():
    for backend in both():
        with pytest.raises(ValueError):
            backend.nearest_sqdist(np.zeros((2, 3)), np.zeros((0, 3)))
        assert backend.nearest_sqdist(np.zeros((0, 3)), np.zeros((2, 3))).shape == (0,)


@given(st.integers(0, 100_000), st.integers(1, 20))
@settings(max_examples=60, deadline=None)
def test_greedy_scan_parity(seed, n_pairs):
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, 5, size=n_pairs)
    cols = rng.integers(0, 5, size=n_pairs)
    order = np.argsort(rng.random((16, n_pairs)), axis=1)
    accept = rng.random((16, n_pairs)) < 0.7
    c, py = both()
    a = c.greedy_scan(order, accept, rows, cols, 5, 5)
    b = py.greedy_scan(order, accept, rows, cols, 5, 5)
    assert np.array_equal(a, b)
    for mask in a:
        chosen = np.flatnonzero(mask)
        assert len(set(rows[chosen])) == len(chosen) == len(set(cols[chosen]))


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
