import math

import numpy as np
import pytest

from beamsec import bcd
from beamsec.cli import summarize
from beamsec.metrics import beampattern_residual
from beamsec.scenario import with_overrides
from beamsec.transforms import common_rate_cap, sca_log_linearize

from conftest import SCENARIOS, solved


@pytest.fixture(scope="module")
def two_slot_steps():
    """Problem plus the states after phase 0 / block 2 / block 1 on the two-slot scenario."""
    problem = bcd.build_problem(SCENARIOS["two_slot"]())
    init = bcd.initialize(problem)
    st0 = bcd.solve_block2(problem, bcd.phase0(problem, init), have_previous=False)
    st1 = bcd.solve_block1(problem, st0)
    st2 = bcd.solve_block2(problem, st1)
    return problem, init, st0, st1, st2


def test_initialize(two_slot_steps):
    problem, init, *_ = two_slot_steps
    T = problem.scenario.slots.period
    for sd in problem.slots:
        Z = init.Zc[sd.slot] + init.Zp[sd.slot].sum(axis=0)
        diag = np.real(np.einsum("nr,rs,ns->n", sd.Q, Z, sd.Q.conj()))
        assert np.all(diag <= 1.0 + 1e-12)
    assert math.isfinite(bcd.objective(init, T))
    assert max(bcd.objective(init, T), 0.0) >= 0.0
    again = bcd.initialize(bcd.build_problem(SCENARIOS["two_slot"]()))
    np.testing.assert_array_equal(again.Zp, init.Zp)
    np.testing.assert_array_equal(again.t, init.t)
    np.testing.assert_array_equal(init.C, 0.0)


def test_block1_monotone(two_slot_steps):
    problem, _, st0, st1, st2 = two_slot_steps
    T = problem.scenario.slots.period
    assert st1.statuses[-1][2] == "optimal"
    assert bcd.objective(st1, T) >= bcd.objective(st0, T) - 1e-6
    assert bcd.objective(st2, T) >= bcd.objective(st1, T) - 1e-6
    sl = problem.scenario.slots
    assert st1.t.sum() <= T * (1 + 1e-9)
    assert np.all(st1.t >= sl.t_min * (1 - 1e-9)) and np.all(st1.t <= sl.t_max * (1 + 1e-9))


def test_block2_feasibility(two_slot_steps):
    problem, _, _, _, st2 = two_slot_steps
    assert np.all(st2.chi >= 0) and np.all(st2.C >= 0)
    for sd in problem.slots:
        l = sd.slot
        cap = common_rate_cap(sd, st2.Zc[l], list(st2.Zp[l]))
        assert st2.C[l].sum() <= cap + 1e-8
        for k in range(sd.K):
            # anchors were reset to the new iota, so check against the row used in the solve
            assert st2.omega[l, k] >= math.log2(1 + st2.iota[l, k]) - 1e-6
            assert st2.o[l, k] <= st2.C[l, k] + math.log2(1 + st2.chi[l, k]) + 1e-6


def test_removing_beampattern_rows_never_hurts(two_slot_steps):
    problem, _, st0, st1, _ = two_slot_steps
    relaxed = bcd.build_problem(SCENARIOS["two_slot"]())
    for sd in relaxed.slots:
        sd.bp_radius = 1e6
    loose = bcd.solve_block1(relaxed, st0)
    assert loose.block1_value >= st1.block1_value - 1e-6


def test_sca_row_is_tangent():
    assert sca_log_linearize(0.4, 0.4) == pytest.approx(math.log2(1.4))


def test_infeasible_detection_raises():
    sc = with_overrides(SCENARIOS["two_slot"](), {"detection": {"mode": "explicit", "threshold": 1e15}})
    with pytest.raises(bcd.BcdError) as exc:
        bcd.run(sc)
    assert exc.value.state is not None
    assert "detection" in exc.value.diagnostics["families"] or exc.value.diagnostics["status"] == "infeasible"


def test_two_slot_run_deterministic(two_slot_run):
    sc, _, sol = two_slot_run
    again = bcd.run(sc, seed=0)
    np.testing.assert_allclose(again.objective_trace, sol.objective_trace, rtol=0, atol=1e-9)


def _check_solution(sc, problem, sol):
    p_t = sc.rf.per_element_power
    T = sc.slots.period
    assert np.all(np.diff(sol.objective_trace) >= -1e-6)
    assert sol.t.sum() <= T + 1e-12
    assert np.all(sol.t >= sc.slots.t_min - 1e-12) and np.all(sol.t <= sc.slots.t_max + 1e-12)
    for l in range(sol.L):
        for W in sol.covariances(l):
            assert np.linalg.eigvalsh(0.5 * (W + W.conj().T))[0] >= -1e-8 * p_t
        if problem.power_rows == "element":
            assert np.all(sol.element_power(l) <= p_t + 1e-9)
        else:
            assert sol.slot_power(l) <= sc.N * p_t + 1e-9
        R = problem.desired_covariance(l)
        assert beampattern_residual(sol, R, l) <= sc.beampattern_tolerance * np.linalg.norm(R) ** 2 * (1 + 1e-9)
    assert np.all(sol.C >= 0)


def test_two_slot_solution_invariants(two_slot_run):
    _check_solution(*two_slot_run)


def test_default_run(default_run):
    sc, problem, sol = default_run
    _check_solution(sc, problem, sol)
    assert sol.info["converged"] and sol.info["iterations"] <= 15
    assert sol.C.sum() > 0
    block1 = [s for s in sol.info["statuses"] if s[0] == "block1"]
    assert block1[0][2] in ("optimal", "near_optimal")


def test_trsma_baseline():
    sc, problem, sol = solved("default", power_rows="trace")
    _check_solution(sc, problem, sol)
    _, _, tris = solved("default")
    # the trace row is a relaxation of the per-element rows
    assert sol.objective_trace[-1] >= tris.objective_trace[-1] * (1 - 1e-3)


@pytest.mark.parametrize("name", ["p2", "bp_loose", "pout_loose"])
def test_relaxing_a_bound_never_hurts(name):
    _, _, base = solved("default")
    _, _, relaxed = solved(name)
    assert relaxed.objective_trace[-1] >= base.objective_trace[-1] * (1 - 1e-3)
