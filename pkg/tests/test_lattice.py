import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from l1bsde.lattice import (
    LatticeError,
    NodeProcess,
    TimeGrid,
    build_lattice,
    conditional_expectation,
    martingale_coefficient,
    max_path_sum,
    path_ensemble,
    philox,
    sample_paths,
)


def brute_paths(lat):
    """Every path as a list of node indices, with its probability."""
    n, d = lat.n_steps, lat.dim
    for moves in itertools.product((0, 1), repeat=n * d):
        m = np.array(moves).reshape(n, d)
        idx = np.vstack([np.zeros((1, d), dtype=int), np.cumsum(m, axis=0)])
        yield [tuple(r) for r in idx], 0.5 ** (n * d)


def test_grid_rejects_bad_input():
    with pytest.raises(LatticeError):
        TimeGrid(0.0, 4)
    with pytest.raises(LatticeError):
        TimeGrid(1.0, 0)
    with pytest.raises(LatticeError):
        TimeGrid(1.0, 2.5)


def test_states_and_shapes():
    lat = build_lattice(TimeGrid(1.0, 4), 2)
    assert lat.shape(3) == (4, 4)
    s = lat.states(2)
    assert s.shape == (3, 3, 2)
    np.testing.assert_allclose(s[0, 2], [-2 * math.sqrt(0.25), 2 * math.sqrt(0.25)])
    with pytest.raises(LatticeError):
        lat.states(5)


def test_binomial_weights_frozen():
    lat = build_lattice(TimeGrid(1.0, 4), 1)
    np.testing.assert_array_equal(lat.weights(4), np.array([1, 4, 6, 4, 1]) / 16)
    lat2 = build_lattice(TimeGrid(1.0, 2), 2)
    assert lat2.weights(1).tolist() == [[0.25, 0.25], [0.25, 0.25]]


@given(st.integers(1, 1100))
def test_weights_are_probabilities(k):
    lat = build_lattice(TimeGrid(1.0, k), 1)
    w = lat.weights(k)
    assert w.min() >= 0 and math.isclose(w.sum(), 1.0, rel_tol=1e-12)


def test_weights_are_read_only():
    w = build_lattice(TimeGrid(1.0, 3), 1).weights(3)
    with pytest.raises(ValueError):
        w[0] = 1.0


@given(st.integers(1, 40), st.sampled_from([1, 2]))
def test_brownian_moments_exact(n, d):
    n = min(n, 12) if d == 2 else n
    lat = build_lattice(TimeGrid(1.0, n), d)
    x = lat.states(n)
    assert abs(lat.expectation(x[..., 0], n)) < 1e-12
    assert abs(lat.expectation(x[..., 0] ** 2, n) - 1.0) < 1e-12


@given(st.integers(1, 30), st.integers(0, 10**6))
def test_conditional_expectation_tower(n, seed):
    lat = build_lattice(TimeGrid(1.0, n), 1)
    rng = np.random.default_rng(seed)
    layer = rng.normal(size=lat.shape(n))
    cur = layer
    for k in range(n - 1, -1, -1):
        cur = conditional_expectation(lat, cur, k)
    assert math.isclose(float(cur.ravel()[0]), lat.expectation(layer, n), rel_tol=1e-10, abs_tol=1e-12)


@given(st.integers(1, 12), st.sampled_from([1, 2]), st.integers(0, 10**6))
def test_martingale_representation(n, d, seed):
    """E[Y dB]/dt recovers a linear layer's slope; in d=1 the two-child representation is exact."""
    lat = build_lattice(TimeGrid(0.7, n), d)
    rng = np.random.default_rng(seed)
    a = rng.normal(size=d)
    k = int(rng.integers(0, n))
    nxt = lat.states(k + 1) @ a + 3.0
    z = martingale_coefficient(lat, nxt, k)
    np.testing.assert_allclose(z, np.broadcast_to(a, lat.shape(k) + (d,)), atol=1e-12)


def test_node_process_lookup_and_validation():
    lat = build_lattice(TimeGrid(1.0, 3), 1)
    p = NodeProcess.from_function(lat, lambda t, x: t + x[..., 0])
    x = lat.states(2)
    np.testing.assert_allclose(p(2 / 3, x), 2 / 3 + x[..., 0])
    with pytest.raises(LatticeError):
        NodeProcess(lat, (np.zeros(1), np.zeros(3)))
    assert NodeProcess.minus_infinity(lat).is_sentinel


@given(st.integers(1, 9), st.integers(0, 10**6))
def test_max_path_sum_matches_enumeration(n, seed):
    lat = build_lattice(TimeGrid(1.0, n), 1)
    rng = np.random.default_rng(seed)
    inc = [rng.normal(size=lat.shape(k)) for k in range(n)]
    best, worst = -np.inf, np.inf
    for path, _ in brute_paths(lat):
        s = 0.0
        best, worst = max(best, s), min(worst, s)
        for k in range(n):
            s += inc[k][path[k]]
            best, worst = max(best, s), min(worst, s)
    hi, lo = max_path_sum(lat, inc)
    assert math.isclose(hi, best, abs_tol=1e-12) and math.isclose(lo, worst, abs_tol=1e-12)


def test_path_ensemble_exact_then_sampled():
    small = path_ensemble(build_lattice(TimeGrid(1.0, 6), 1))
    assert small.exact and small.index.shape == (64, 7, 1)
    big = path_ensemble(build_lattice(TimeGrid(1.0, 40), 1))
    assert not big.exact and big.index.shape == (2**14, 41, 1)
    again = path_ensemble(build_lattice(TimeGrid(1.0, 40), 1))
    np.testing.assert_array_equal(big.index, again.index)


def test_sample_paths_reproducible_and_seeded():
    grid = TimeGrid(1.0, 8)
    a, b = sample_paths(grid, 2, 1000, seed=5), sample_paths(grid, 2, 1000, seed=5)
    assert a.increments.tobytes() == b.increments.tobytes()
    assert not np.array_equal(a.increments, sample_paths(grid, 2, 1000, seed=6).increments)
    with pytest.raises(LatticeError):
        sample_paths(grid, 1, 10, seed=None)
    assert philox(1, 0).random() != philox(1, 1).random()


def test_sample_paths_variance():
    b = sample_paths(TimeGrid(2.0, 16), 1, 200_000, seed=1)
    assert abs(np.var(b.paths[:, -1, 0]) - 2.0) < 0.03
