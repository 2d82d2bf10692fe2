import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from l1bsde.analysis import random_reflected_instances
from l1bsde.generators import linear_generator, zero_generator
from l1bsde.lattice import LatticeError, NodeProcess, TimeGrid, build_lattice
from l1bsde.reflected import (
    VARIANTS,
    BarrierPair,
    dynkin_oracle,
    flat_off_report,
    max_violation,
    mirror_generator,
    penalization_ladder_lower,
    penalization_ladder_mixed,
    penalization_ladder_upper,
    snell_oracle,
    solve_drbsde,
    solve_rbsde_lower,
    solve_rbsde_upper,
)
from l1bsde.suites import bounded_instance, snell_instance

seeds = st.integers(0, 2**31 - 1)


def instance(seed):
    return random_reflected_instances(1, seed=seed, max_steps=40)[0]


def gap(a, b):
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))


@given(seeds)
def test_lower_reflection_equals_snell_envelope(seed):
    inst = instance(seed)
    q = solve_rbsde_lower(inst.lattice, inst.xi, zero_generator(), L=inst.L)
    assert gap(q.Y.values, snell_oracle(inst.lattice, inst.xi, inst.L).values) <= 1e-10


@given(seeds)
def test_double_reflection_equals_dynkin_value(seed):
    inst = instance(seed)
    b = BarrierPair.build(inst.lattice, inst.L, inst.U)
    q = solve_drbsde(inst.lattice, inst.xi, zero_generator(), barriers=b)
    assert gap(q.Y.values, dynkin_oracle(inst.lattice, inst.xi, inst.L, inst.U).values) <= 1e-10
    rep = flat_off_report(q, b)
    assert rep["ortho_violations"] == 0
    for k in range(inst.lattice.n_steps):
        assert np.all(np.minimum(q.dK[k], q.dA[k]) == 0)
        assert np.all((q.Y[k] - b.L[k]) * q.dK[k] == 0)
        assert np.all((b.U[k] - q.Y[k]) * q.dA[k] == 0)
    assert max_violation(q, b) <= 0


@given(seeds, st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_mirror_symmetry(seed, a, bz, c):
    """``-Y`` solves the problem with data ``-xi``, driver ``-g(-y,-z)`` and barriers ``-U <= . <= -L``."""
    inst = instance(seed)
    lat = inst.lattice
    bz = float(np.clip(bz, -1 / lat.sqrt_dt, 1 / lat.sqrt_dt))
    g = linear_generator(a, bz, c)
    if abs(a) * lat.dt >= 1:
        return
    q = solve_drbsde(lat, inst.xi, g, barriers=BarrierPair.build(lat, inst.L, inst.U))
    m = solve_drbsde(lat, -inst.xi, mirror_generator(g),
                     barriers=BarrierPair.build(lat, inst.U.map(np.negative), inst.L.map(np.negative)))
    assert gap(q.Y.values, [-y for y in m.Y.values]) <= 1e-10
    assert gap(q.dK.values, m.dA.values) <= 1e-10


def test_upper_reflection_alone():
    lat = build_lattice(TimeGrid(1.0, 16), 1)
    q = solve_rbsde_upper(lat, lambda t, x: np.minimum(x[..., 0] ** 2, 0.8), linear_generator(0.0, 0.0, 2.0), U=0.8)
    assert q.expected_A_T > 0 and q.expected_K_T == 0
    assert max(float(np.max(y)) for y in q.Y.values) <= 0.8


def test_barrier_validation_names_node():
    lat = build_lattice(TimeGrid(1.0, 4), 1)
    L = NodeProcess.from_function(lat, lambda t, x: x[..., 0])
    with pytest.raises(LatticeError, match=r"L > U at step 1, node \(1,\)"):
        BarrierPair.build(lat, L, 0.1)
    with pytest.raises(LatticeError, match="below the lower barrier"):
        solve_rbsde_lower(lat, -5.0, zero_generator(), L=0.0)
    with pytest.raises(LatticeError, match="above the upper barrier"):
        solve_rbsde_upper(lat, 5.0, zero_generator(), U=0.0)


def test_snell_instance_frozen_values():
    lat, xi, L = snell_instance(32)
    q = solve_rbsde_lower(lat, xi, zero_generator(), L=L)
    assert q.y0 == pytest.approx(snell_oracle(lat, xi, L).values[0].item(), abs=1e-14)
    assert q.y0 == pytest.approx(1.0 + q.expected_K_T, abs=1e-12)


def penalized_oracle(lat, xi, L, n):
    """Implicit penalised step solved in closed form node by node."""
    a = n * lat.dt
    Y = [np.asarray(xi, dtype=float)]
    for k in range(lat.n_steps - 1, -1, -1):
        nxt = Y[0]
        e = np.array([(nxt[j] + nxt[j + 1]) / 2 for j in range(k + 1)])
        Y.insert(0, np.where(e >= L[k], e, (e + a * L[k]) / (1 + a)))
    return Y


def test_lower_ladder_matches_closed_form_and_converges():
    lat, xi, L = snell_instance(32)
    lad = penalization_ladder_lower(lat, xi, zero_generator(), L=L)
    for e in lad.entries:
        assert gap(e.solution.Y.values, penalized_oracle(lat, xi, L, e.n)) <= 1e-12
    assert lad.monotone_violations == 0
    ys = lad.gap_series("y_sup")
    assert all(b <= a for a, b in zip(ys, ys[1:]))
    assert ys[-1] == pytest.approx(1.3258e-2, rel=1e-3)
    assert lad.entries[-1].gaps["k_sup"] <= 5e-2
    for e in lad.entries:
        assert all(np.all(p <= d + 1e-12) for p, d in zip(e.solution.Y.values, lad.reference.Y.values))


def test_penalized_flat_off_defect():
    lat, xi, L = snell_instance(32)
    lad = penalization_ladder_lower(lat, xi, zero_generator(), L=L)
    n = lad.entries[-1].n
    Y = penalized_oracle(lat, xi, L, n)
    want = -n * lat.dt * sum(float(np.dot(lat.weights(k), np.maximum(L[k] - Y[k], 0.0) ** 2))
                             for k in range(lat.n_steps))
    rep = flat_off_report(lad.limit, BarrierPair.build(lat, L))
    assert rep["kl"] == pytest.approx(want, rel=1e-9)
    assert rep["kl"] == pytest.approx(-1.83087e-3, rel=1e-5)
    assert abs(rep["kl"]) <= 1e-2 and rep["ua"] == 0.0
    assert flat_off_report(lad.reference, BarrierPair.build(lat, L)) == {"kl": 0.0, "ua": 0.0, "ortho_violations": 0}


def test_upper_ladder_decreases_to_reflected_solution():
    lat = build_lattice(TimeGrid(1.0, 24), 1)
    U = NodeProcess.from_function(lat, lambda t, x: 0.3 + 0.2 * np.abs(x[..., 0]))
    xi = np.minimum(lat.states(24)[..., 0], U[24])
    lad = penalization_ladder_upper(lat, xi, linear_generator(0.2, 0.1, 0.3), U=U)
    assert lad.monotone_violations == 0
    assert lad.tail_nonincreasing("y_sup")
    assert lad.entries[-1].gaps["y_sup"] < lad.entries[0].gaps["y_sup"]


@pytest.mark.parametrize("variant", VARIANTS)
def test_double_barrier_variants(variant):
    lat, xi, L, U = bounded_instance(32)
    lad = penalization_ladder_mixed(lat, xi, linear_generator(0.5, 0.3, -0.2), L=L, U=U, variant=variant)
    assert abs(lad.limit.y0 - lad.reference.y0) <= 2e-2
    assert lad.sandwich_violations == 0 and lad.monotone_violations == 0
    assert lad.reference.expected_K_T > 0


@pytest.mark.parametrize("variant", VARIANTS)
def test_variants_with_both_barriers_active(variant):
    lat = build_lattice(TimeGrid(1.0, 24), 1)
    L = NodeProcess.from_function(lat, lambda t, x: np.full(x.shape[:-1], 0.25 if t < 1 else -1.0))
    U = NodeProcess.from_function(lat, lambda t, x: np.full(x.shape[:-1], 0.3 if t < 1 else 1.0))
    xi = np.clip(lat.states(24)[..., 0], -1.0, 1.0)
    lad = penalization_ladder_mixed(lat, xi, linear_generator(0.0, 0.0, 0.0), L=L, U=U, variant=variant)
    assert lad.reference.expected_K_T > 0 and lad.reference.expected_A_T > 0
    assert lad.sandwich_violations == 0
    assert lad.entries[-1].gaps["y_sup"] < lad.entries[0].gaps["y_sup"]


def test_ladder_rejects_bad_schedule():
    lat, xi, L = snell_instance(8)
    with pytest.raises(ValueError):
        penalization_ladder_lower(lat, xi, zero_generator(), L=L, schedule=(4, 1))
    with pytest.raises(ValueError):
        penalization_ladder_mixed(lat, xi, zero_generator(), L=L, U=2.0, variant="sideways")


def test_two_dimensional_reflection():
    lat = build_lattice(TimeGrid(1.0, 8), 2)
    L = lambda t, x: 0.3 * np.ones(x.shape[:-1])  # noqa: E731
    xi = lambda t, x: np.maximum(x[..., 0] * x[..., 1], 0.3)  # noqa: E731
    q = solve_rbsde_lower(lat, xi, zero_generator(), L=L)
    assert gap(q.Y.values, snell_oracle(lat, xi, L).values) <= 1e-12
