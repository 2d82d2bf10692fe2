import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from l1bsde.analysis import (
    WitnessError,
    approximation_battery,
    comparison_battery,
    estimate_norms,
    mokobodzki_check,
    random_comparison_cases,
    random_reflected_instances,
    run_case,
    uniqueness_probe,
)
from l1bsde.bsde import MonotonicityError
from l1bsde.generators import linear_generator, zero_generator
from l1bsde.generators.catalog import get
from l1bsde.lattice import NodeProcess, TimeGrid, build_lattice, path_ensemble
from l1bsde.norms import expected_total, h1, m_beta, s_beta, sup_cumulative
from l1bsde.reflected import BarrierPair, solve_drbsde
from l1bsde.suites import bounded_instance


def brute_paths(n):
    """Every +-1 walk of length n as node indices (number of up moves so far)."""
    for moves in itertools.product((0, 1), repeat=n):
        yield [0] + list(itertools.accumulate(moves))


def brute_s_beta(layers, n, beta):
    vals = [max(abs(float(layers[k][j])) ** beta for k, j in enumerate(p)) for p in brute_paths(n)]
    return sum(vals) / len(vals)


@given(st.integers(1, 9), st.floats(0.05, 0.95), st.integers(0, 10**6))
def test_s_beta_matches_brute_enumeration(n, beta, seed):
    lat = build_lattice(TimeGrid(1.0, n), 1)
    rng = np.random.default_rng(seed)
    layers = [rng.normal(size=k + 1) for k in range(n + 1)]
    assert s_beta(lat, layers, beta) == pytest.approx(brute_s_beta(layers, n, beta), rel=1e-12)


def test_m_beta_and_h1_by_hand():
    lat = build_lattice(TimeGrid(1.0, 2), 1)
    Z = [np.array([[1.0]]), np.array([[0.0], [2.0]])]
    # paths: (0,0) -> |Z|^2 = 1, 1; (0,1) same; (1,*) -> 1 + 4
    want = 0.5 * (1 * 0.5) ** 0.25 + 0.5 * (5 * 0.5) ** 0.25
    assert m_beta(lat, Z, 0.5) == pytest.approx(want, rel=1e-14)
    X = [np.array([2.0]), np.array([-1.0, 3.0]), np.zeros(3)]
    assert h1(lat, X) == pytest.approx((2.0 + 2.0) * 0.5)
    assert expected_total(lat, [np.array([1.0]), np.array([0.0, 2.0])]) == pytest.approx(2.0)
    assert sup_cumulative(lat, [np.array([-1.0]), np.array([0.0, -3.0])]) == pytest.approx(4.0)


def test_sampled_norms_stable_under_more_paths():
    lat = build_lattice(TimeGrid(1.0, 20), 1)
    Y = NodeProcess.from_function(lat, lambda t, x: np.sin(3 * x[..., 0]) + t)
    small = path_ensemble(lat, n_samples=2**13, seed=1)
    large = path_ensemble(lat, n_samples=2**14, seed=1)
    assert not small.exact
    rep = estimate_norms(lat, Y=Y, beta=0.5)
    assert rep.s_beta_se > 0
    assert abs(s_beta(lat, Y, 0.5, small) - s_beta(lat, Y, 0.5, large)) <= 3 * rep.s_beta_se * np.sqrt(2)


@settings(max_examples=20)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 0.9))
def test_class_d_curve_nonincreasing(seed, beta):
    inst = random_reflected_instances(1, seed=seed, max_steps=14)[0]
    q = solve_drbsde(inst.lattice, inst.xi, zero_generator(),
                     barriers=BarrierPair.build(inst.lattice, inst.L, inst.U))
    rep = estimate_norms(inst.lattice, Y=q.Y, Z=q.Z, beta=beta)
    tails = [v for _, v in rep.classD_curve]
    assert all(b <= a + 1e-15 for a, b in zip(tails, tails[1:]))
    assert rep.s_beta >= 0 and rep.m_beta >= 0


def test_norms_reject_bad_beta():
    lat = build_lattice(TimeGrid(1.0, 2), 1)
    with pytest.raises(ValueError):
        estimate_norms(lat, beta=1.0)


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1), st.floats(-0.5, 0.5), st.floats(-1, 1))
def test_witness_from_solution_closes(seed, a, c):
    inst = random_reflected_instances(1, seed=seed, max_steps=24)[0]
    b = BarrierPair.build(inst.lattice, inst.L, inst.U)
    w = mokobodzki_check(inst.lattice, linear_generator(a, 0.0, c), b, xi=inst.xi)
    assert w.sandwich_ok and not w.violations
    assert w.residual <= 1e-10
    if inst.lattice.dim == 1:
        assert w.orthogonal_residual <= 1e-10
    assert np.isfinite(w.c_variation) and np.isfinite(w.g_at_X_norm)


def test_user_supplied_witness():
    lat, xi, L, U = bounded_instance(16)
    b = BarrierPair.build(lat, L, U)
    mid = NodeProcess(lat, tuple((l + u) / 2 for l, u in zip(L.values, U.values)))
    w = mokobodzki_check(lat, zero_generator(), b, strategy="user_supplied", X=mid)
    assert w.sandwich_ok and w.residual <= 1e-12 and w.orthogonal_residual <= 1e-12
    outside = NodeProcess(lat, tuple(u + 1.0 for u in U.values))
    bad = mokobodzki_check(lat, zero_generator(), b, strategy="user_supplied", X=outside)
    assert not bad.sandwich_ok and bad.violations[0] == (0, (0,))
    with pytest.raises(WitnessError):
        mokobodzki_check(lat, zero_generator(), b, strategy="user_supplied")
    with pytest.raises(WitnessError):
        mokobodzki_check(lat, zero_generator(), b)


def test_comparison_battery_small():
    cases = random_comparison_cases(16, seed=5, osgood_share=0.0)
    rep = comparison_battery(cases, threads=2)
    assert rep.count("pass") == 16 and not rep.failures
    assert [r.case_id for r in rep.results] == sorted(c.case_id for c in cases)


def test_comparison_battery_detects_reversed_order():
    cases = [c for c in random_comparison_cases(40, seed=5, osgood_share=0.0) if c.solver == "bsde"]
    case = next(c for c in cases if run_case(c).y_margin < -1e-3)
    swapped = replace(case, first=case.second, second=case.first)
    res = run_case(swapped)
    assert res.verdict == "fail" and res.node is not None
    assert res.reverify()


def test_comparison_rejects_unknown_solver():
    case = random_comparison_cases(1, seed=0)[0]
    with pytest.raises(ValueError):
        run_case(replace(case, solver="nope"))


def test_uniqueness_probe_verdicts():
    lat, xi, L, U = bounded_instance(16)
    b = BarrierPair.build(lat, L, U)
    # the fixed-n penalised limits carry an O(1/(n dt)) gap, so n must outgrow the grid
    rep = uniqueness_probe(lat, xi, get("ex7.1"), barriers=b, ladder_n=2**14)
    assert rep.verdict == "pass" and rep.rerun_deviation <= 1e-8 and rep.ladder_deviation <= 2e-2
    odd = uniqueness_probe(lat, xi, linear_generator(0.5, 0.0, 0.0), barriers=b, ladder_n=None)
    assert odd.verdict == "inconclusive" and odd.notes


def test_approximation_battery_monotone():
    lat, xi, L, U = bounded_instance(16)
    b = BarrierPair.build(lat, L, U)
    gens = [linear_generator(0.2, 0.1, -1.0 / n) for n in (1, 2, 4, 8)]
    rep = approximation_battery(lat, xi, gens, +1, barriers=b, reference_g=linear_generator(0.2, 0.1, 0.0),
                                schedule=(1, 2, 4, 8))
    assert rep.y_violations == rep.k_violations == rep.a_violations == 0
    assert rep.tail_nonincreasing["y_sup"]
    y0 = [r["Y0"] for r in rep.table]
    assert all(b2 >= a2 for a2, b2 in zip(y0, y0[1:]))
    with pytest.raises(MonotonicityError):
        approximation_battery(lat, xi, gens[::-1], +1, barriers=b)
    with pytest.raises(ValueError):
        approximation_battery(lat, xi, gens, 0, barriers=b)
