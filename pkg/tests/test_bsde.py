import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from l1bsde.bsde import (
    ContractionError,
    FixedPointError,
    ForcingTerm,
    Numerics,
    RegressionConfig,
    RegressionError,
    implicit_residuals,
    regularized_generator,
    solve_bsde,
    solve_bsde_mc,
    solve_minimal_via_convolution,
)
from l1bsde.generators import GeneratorSpec, SearchConfig, get, linear_generator, zero_generator
from l1bsde.generators.spec import add
from l1bsde.lattice import LatticeError, TimeGrid, build_lattice, sample_paths



def square(t, x):
    return x[..., 0] ** 2


def cubic():
    return GeneratorSpec(lambda t, x, y, z: 1.0 - np.asarray(y) ** 3, name="1-y^3", growth_constant=0.0)


def lattice(N, T=1.0, d=1):
    return build_lattice(TimeGrid(T, N), d)


@pytest.mark.parametrize("N", [1, 2, 5, 64, 512])
def test_martingale_exactness(N):
    assert abs(solve_bsde(lattice(N), square, zero_generator()).y0 - 1.0) <= 1e-12


@pytest.mark.parametrize("N", [8, 100, 512, 1024])
def test_linear_driver_matches_discrete_closed_form(N):
    # implicit Euler: Y_k = Y_{k+1} / (1 - a dt)
    y0 = solve_bsde(lattice(N), 1.0, linear_generator(0.5)).y0
    assert y0 == pytest.approx((1 - 0.5 / N) ** (-N), rel=1e-12)


def test_linear_driver_error_frozen():
    errs = [abs(solve_bsde(lattice(N), 1.0, linear_generator(0.5)).y0 - math.exp(0.5)) for N in (512, 1024)]
    assert errs[0] == pytest.approx(4.0283e-4, rel=1e-3)
    assert errs[0] / errs[1] == pytest.approx(2.0, abs=0.01)


@given(st.floats(-3, 3), st.integers(1, 40))
def test_girsanov_identity(b, N):
    # g = b z and xi = B_T: Y_k = E[Y_{k+1} (1 + b dB)], hence Y_0 = b T exactly
    lat = lattice(N, T=0.8)
    if abs(b) * lat.sqrt_dt > 1:
        b = math.copysign(1.0 / lat.sqrt_dt, b)
    y0 = solve_bsde(lat, lambda t, x: x[..., 0], linear_generator(0.0, b)).y0
    assert y0 == pytest.approx(b * 0.8, abs=1e-12)


def test_cubic_driver_against_independent_root_finder():
    N = 64
    dt = 1.0 / N
    Y = [(2 * j - N) ** 2 * dt for j in range(N + 1)]
    for k in range(N - 1, -1, -1):
        Y = [brentq(lambda y, e=0.5 * (Y[j] + Y[j + 1]): y - e - (1 - y**3) * dt, -100, 100, xtol=1e-15)
             for j in range(k + 1)]
    y0 = solve_bsde(lattice(N), square, cubic()).y0
    assert y0 == pytest.approx(Y[0], abs=1e-11)
    assert y0 == pytest.approx(0.96805414588, abs=1e-10)


def test_deterministic_forcing_shifts_solution():
    lat = lattice(10)
    V = ForcingTerm.deterministic(lat, [0.1] * 10)
    assert solve_bsde(lat, square, zero_generator(), V).y0 == pytest.approx(2.0, abs=1e-12)
    assert V.total_variation() == pytest.approx(1.0)


def test_forcing_from_rate_matches_future_sum():
    lat = lattice(6)
    V = ForcingTerm.from_rate(lat, lambda t, x: np.cos(x[..., 0]))
    sol = solve_bsde(lat, 0.0, zero_generator(), V)
    np.testing.assert_allclose(sol.Y[0], V.future_sum()[0], atol=1e-13)


def test_contraction_check():
    with pytest.raises(ContractionError) as exc:
        solve_bsde(lattice(32), 1.0, linear_generator(40.0))
    assert exc.value.required_steps == 41
    # past the threshold the residual y - rhs(y) is decreasing and no bracket exists
    with pytest.raises(FixedPointError, match="bracket"):
        solve_bsde(lattice(32), 1.0, linear_generator(40.0), numerics=Numerics(check_contraction=False))
    assert solve_bsde(lattice(41), 1.0, linear_generator(40.0)).y0 > 0


def test_non_finite_generator_raises():
    g = GeneratorSpec(lambda t, x, y, z: np.log(np.asarray(y) - 5.0), name="log")
    with pytest.raises(FixedPointError):
        solve_bsde(lattice(4), 0.0, g)


def test_terminal_must_be_finite():
    with pytest.raises(LatticeError):
        solve_bsde(lattice(4), lambda t, x: np.where(x[..., 0] > 0, np.inf, 0.0), zero_generator())


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.integers(1, 24), st.integers(0, 10**6))
def test_residuals_within_tolerance(a, b, c, N, seed):
    g = GeneratorSpec(lambda t, x, y, z: a * np.sin(np.asarray(y)) + b * np.tanh(np.asarray(z)[..., 0]) + c * np.cos(x[..., 0]),
                      name="smooth", growth_constant=abs(a), stiffness=abs(a))
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=3)
    sol = solve_bsde(lattice(N), lambda t, x: coef[0] + coef[1] * x[..., 0] + coef[2] * np.sin(x[..., 0]), g)
    worst = max(float(np.max(np.abs(r) / np.maximum(1.0, np.abs(y))))
                for r, y in zip(implicit_residuals(sol), sol.Y.values))
    assert worst <= 1e-10


@given(st.floats(-2, 2), st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 2), st.integers(3, 30))
def test_comparison_for_lipschitz_drivers(a, b, c, gap, N):
    lat = lattice(N)
    b = float(np.clip(b, -1 / lat.sqrt_dt, 1 / lat.sqrt_dt))
    lo = solve_bsde(lat, lambda t, x: np.sin(x[..., 0]) - gap, linear_generator(a, b, c - gap))
    hi = solve_bsde(lat, lambda t, x: np.sin(x[..., 0]), linear_generator(a, b, c))
    for yl, yh in zip(lo.Y.values, hi.Y.values):
        assert np.all(yl <= yh + 1e-12)


@given(st.integers(1, 20), st.floats(-3, 3))
def test_translation_invariance(N, c):
    lat = lattice(N)
    a = solve_bsde(lat, square, zero_generator())
    b = solve_bsde(lat, lambda t, x: x[..., 0] ** 2 + c, zero_generator())
    for ya, yb in zip(a.Y.values, b.Y.values):
        np.testing.assert_allclose(yb, ya + c, atol=1e-12)


def test_two_dimensional_lattice():
    lat = lattice(10, d=2)
    sol = solve_bsde(lat, lambda t, x: x[..., 0] * x[..., 1] + x[..., 1] ** 2, zero_generator())
    assert sol.y0 == pytest.approx(1.0, abs=1e-12)
    assert sol.Z[0].shape == (1, 1, 2)


def test_init_shift_and_damping_reach_same_fixed_point():
    lat = lattice(16)
    base = solve_bsde(lat, square, cubic())
    other = solve_bsde(lat, square, cubic(), numerics=Numerics(init_shift=0.7, damping=0.5))
    assert max(float(np.max(np.abs(a - b))) for a, b in zip(base.Y.values, other.Y.values)) <= 1e-11


def test_stiff_penalty_uses_bracketing():
    g = linear_generator(-400.0).with_(growth_constant=None)
    sol = solve_bsde(lattice(8), square, g)
    assert any(d.bracketed.any() for d in sol.diagnostics)
    assert sol.y0 == pytest.approx((1 + 400 / 8) ** (-8), rel=1e-9)


# Monte Carlo ------------------------------------------------------------------------------

def test_mc_is_bit_reproducible():
    grid = TimeGrid(1.0, 16)
    a = solve_bsde_mc(sample_paths(grid, 1, 4000, seed=9), square, cubic())
    b = solve_bsde_mc(sample_paths(grid, 1, 4000, seed=9), square, cubic())
    assert a.y0 == b.y0 and a.Y.tobytes() == b.Y.tobytes() and a.std_error == b.std_error


def test_mc_martingale_case():
    sol = solve_bsde_mc(sample_paths(TimeGrid(1.0, 8), 1, 50_000, seed=1), square, zero_generator())
    assert abs(sol.y0 - 1.0) < 0.03


def test_mc_close_to_lattice_on_small_problem():
    grid = TimeGrid(1.0, 16)
    ref = solve_bsde(build_lattice(grid, 1), square, cubic()).y0
    sol = solve_bsde_mc(sample_paths(grid, 1, 40_000, seed=4), square, cubic())
    assert abs(sol.y0 - ref) < 3e-2


def test_mc_regression_needs_enough_paths():
    with pytest.raises(RegressionError):
        solve_bsde_mc(sample_paths(TimeGrid(1.0, 4), 2, 3, seed=0), square, zero_generator(),
                      regression=RegressionConfig(degree=2, bootstrap=0))


# convolution ------------------------------------------------------------------------------

def test_regularized_generator_requires_parameters():
    with pytest.raises(ValueError):
        regularized_generator(zero_generator().with_(lam=None), None, 4)
    with pytest.raises(ValueError):
        regularized_generator(None, None, 4)


@pytest.mark.parametrize("kind", ["inf", "sup"])
def test_convolution_sequence_converges_to_direct_solve(kind):
    lat = lattice(2, T=0.1)
    g1, g2 = get("ex7.3.g1"), get("ex7.3.g2")
    xi = lambda t, x: np.clip(x[..., 0], -1, 1)  # noqa: E731
    seq = solve_minimal_via_convolution(lat, xi, g1, g2, schedule=(1, 4, 16), kind=kind,
                                        search=SearchConfig(points=257, joint_points=33))
    direct = solve_bsde(lat, xi, add(g1, g2))
    assert seq.cauchy_gap <= 1e-3
    assert abs(seq.limit.y0 - direct.y0) <= 1e-3
