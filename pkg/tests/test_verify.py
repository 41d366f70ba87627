import ast
import dataclasses
import json
import math
from pathlib import Path

import cvxpy as cp
import numpy as np
import pytest

import beamsec.verify as verify
from beamsec import bcd
from beamsec.metrics import BeamSolution
from beamsec.scenario import with_overrides
from beamsec.verify import (ValidationReport, grade, load_report, mc_detection, mc_iu_exceedance, mc_lu_outage,
                            structural_checks, trs_min, wilson, worst_case_search, worst_iu_sinr_ball,
                            worst_lu_sinr_ball)

from conftest import SCENARIOS


def sdp_trs(A, b, c, eps):
    """Trust-region minimum through its (tight) semidefinite relaxation."""
    n = b.size
    X = cp.Variable((n + 1, n + 1), hermitian=True)
    Abar = np.block([[A, b[:, None]], [b.conj()[None, :], np.zeros((1, 1))]])
    cons = [X >> 0, X[n, n] == 1, cp.real(cp.trace(X[:n, :n])) <= eps ** 2]
    prob = cp.Problem(cp.Minimize(cp.real(cp.trace(Abar @ X)) + c), cons)
    prob.solve(solver="CLARABEL")
    return prob.value


# --- statistics ----------------------------------------------------------------

def test_wilson():
    p, lo, hi = wilson(0, 1000)
    assert p == 0 and lo == 0 and 0 < hi < 0.01
    z = 2.5758293035489
    p, lo, hi = wilson(30, 100)
    centre = (0.3 + z * z / 200) / (1 + z * z / 100)
    half = z * math.sqrt(0.3 * 0.7 / 100 + z * z / 40000) / (1 + z * z / 100)
    assert (lo, hi) == pytest.approx((centre - half, centre + half))
    with pytest.raises(ValueError):
        wilson(0, 0)


# --- trust-region oracle ------------------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
def test_trs_matches_sdp(seed):
    rng = np.random.default_rng(seed)
    n = 3
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    A = B + B.conj().T
    b = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    eps = rng.uniform(0.2, 2.0)
    val, x = trs_min(A, b, 0.7, eps)
    assert np.linalg.norm(x) <= eps * (1 + 1e-9)
    assert float(np.real(np.vdot(x, A @ x) + 2 * np.vdot(b, x)) + 0.7) == pytest.approx(float(val), abs=1e-8)
    assert float(val) == pytest.approx(sdp_trs(A, b, 0.7, eps), abs=1e-5)


def test_trs_hard_case_and_zero_radius():
    A = np.diag([-1.0, 2.0]).astype(complex)
    b = np.array([0.0, 1.0], complex)
    val, x = trs_min(A, b, 0.0, 1.5)
    assert float(val) == pytest.approx(sdp_trs(A, b, 0.0, 1.5), abs=1e-6)
    val0, x0 = trs_min(A, b, 0.3, 0.0)
    assert float(val0) == pytest.approx(0.3) and np.allclose(x0, 0)


def test_worst_lu_ball(rng):
    h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    w = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    Wk = np.outer(w, w.conj())
    S = 0.1 * np.eye(3)
    nominal = np.real(np.vdot(h, Wk @ h)) / (np.real(np.vdot(h, S @ h)) + 0.5)
    assert worst_lu_sinr_ball(h, Wk, S, 0.5, 0.0)[0] == pytest.approx(nominal, rel=1e-9)
    worst = worst_lu_sinr_ball(h, Wk, S, 0.5, 0.3)[0]
    # no sampled point of the ball goes below the exact minimum
    x = rng.standard_normal((20000, 3)) + 1j * rng.standard_normal((20000, 3))
    x *= 0.3 / np.linalg.norm(x, axis=1, keepdims=True)
    y = h + x
    vals = np.real(np.einsum("ni,ij,nj->n", y.conj(), Wk, y)) / (np.real(np.einsum("ni,ij,nj->n", y.conj(), S, y)) + 0.5)
    assert worst <= vals.min() + 1e-9
    assert worst >= vals.min() * 0.97


def test_worst_iu_ball(rng):
    g = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    Wk = np.diag([1.0, 0.2, 0.0]).astype(complex)
    Wc = 0.3 * np.eye(3, dtype=complex)
    nominal = np.real(np.vdot(g, Wk @ g)) / (np.real(np.vdot(g, Wc @ g)) + 1.0)
    assert worst_iu_sinr_ball(g, Wk, Wc, 1.0, 0.0)[0] == pytest.approx(nominal, rel=1e-9)
    worst = worst_iu_sinr_ball(g, Wk, Wc, 1.0, 0.5)[0]
    x = rng.standard_normal((20000, 3)) + 1j * rng.standard_normal((20000, 3))
    x *= 0.5 / np.linalg.norm(x, axis=1, keepdims=True)
    y = g + x
    vals = np.real(np.einsum("ni,ij,nj->n", y.conj(), Wk, y)) / (np.real(np.einsum("ni,ij,nj->n", y.conj(), Wc, y)) + 1.0)
    assert worst >= vals.max() - 1e-9


# --- Monte-Carlo oracles on solved designs ---------------------------------------------

def test_lu_outage_zero_sigma(small_run):
    sc, problem, sol = small_run
    quiet = dataclasses.replace(problem, lu=[dataclasses.replace(e, sigma=0.0) for e in problem.lu])
    est = mc_lu_outage(sol, quiet, n_samples=10_000)["estimates"]
    assert all(e.value == 0.0 for e in est.ravel())


def test_mc_seeded(small_run):
    _, problem, sol = small_run
    a = mc_lu_outage(sol, problem, 10_000, seed=3)["estimates"]
    b = mc_lu_outage(sol, problem, 10_000, seed=3)["estimates"]
    assert [e.value for e in a.ravel()] == [e.value for e in b.ravel()]
    a = mc_iu_exceedance(sol, problem, 10_000, seed=3)["estimates"]
    b = mc_iu_exceedance(sol, problem, 10_000, seed=3)["estimates"]
    assert [e.value for e in a.ravel()] == [e.value for e in b.ravel()]


def test_iu_exceedance_zero_and_monotone(small_run):
    _, problem, sol = small_run
    silent = dataclasses.replace(sol, W_p=np.zeros_like(sol.W_p))
    est = mc_iu_exceedance(silent, problem, 10_000)["estimates"]
    assert all(e.value == 0.0 for e in est.ravel())
    base = mc_iu_exceedance(sol, problem, 10_000, seed=5)["estimates"]
    loud = mc_iu_exceedance(dataclasses.replace(sol, W_p=4 * sol.W_p), problem, 10_000, seed=5)["estimates"]
    for a, b in zip(base.ravel(), loud.ravel()):
        assert b.value >= a.value


def test_sample_size_warning(small_run):
    _, problem, sol = small_run
    with pytest.warns(UserWarning, match="below recommended sample size"):
        mc_lu_outage(sol, problem, 1000)


def test_worst_case_nominal_limits(small_run):
    sc, _, sol = small_run
    zero = with_overrides(sc, {"errors": {"lu_radius": 0.0, "iu_element_bound": 0.0, "iu_pitch_bound": 0.0,
                                          "iu_azimuth_bound": 0.0, "iu_distance_bound": 0.0}})
    problem = bcd.build_problem(zero)
    wc = worst_case_search(sol, problem, grid=3, n_random=4, n_starts=4)
    h = problem.lu[0].nominal
    W = sol.W_p[0, 0]
    nominal = np.real(np.vdot(h, W @ h)) / zero.rf.noise_power_lu
    assert wc["lu_worst"][0, 0] == pytest.approx(nominal, rel=1e-6)
    g = problem.iu[0].nominal * problem.iu[0].path_loss
    eav = np.real(np.vdot(g, W @ g)) / (np.real(np.vdot(g, sol.W_c[0] @ g)) + zero.rf.noise_power_iu)
    assert wc["iu_worst"][0, 0, 0] == pytest.approx(eav, rel=1e-6)


def test_detection_null_case(small_run):
    _, problem, sol = small_run
    off = dataclasses.replace(sol, W_c=np.zeros_like(sol.W_c), W_p=np.zeros_like(sol.W_p))
    det = mc_detection(off, problem, 100_000)
    p_fa = problem.scenario.outage.p_fa
    for e in det["estimates"].ravel():
        assert e.lower <= p_fa <= e.upper
    np.testing.assert_allclose(det["closed_form"], p_fa)


def test_default_oracles(default_run):
    sc, problem, sol = default_run
    lu = mc_lu_outage(sol, problem, 100_000)
    assert max(e.upper for e in lu["estimates"].ravel()) <= sc.outage.p_out1
    iu = mc_iu_exceedance(sol, problem, 100_000)
    assert max(e.upper for e in iu["estimates"].ravel()) <= sc.outage.p_out2
    wc = worst_case_search(sol, problem)
    assert np.all(wc["lu_worst"] >= wc["chi"] * (1 - 1e-4))
    assert np.all(wc["iu_worst"] <= wc["iota"][..., None] * (1 + 1e-4))
    det = mc_detection(sol, problem, 100_000)
    assert np.all(det["closed_form"] >= sc.outage.p_d - 1e-9)
    for (l, m), e in np.ndenumerate(det["estimates"]):
        assert e.lower <= det["closed_form"][l, m] <= e.upper


# --- grading ----------------------------------------------------------------------

def test_grade(two_slot_run):
    sc, problem, sol = two_slot_run
    checks = structural_checks(sol, problem)
    report = grade(sol, sc, {"structural": checks})
    assert report.passed and report.exit_code == 0
    hot = dataclasses.replace(sol, W_c=sol.W_c.copy())
    hot.W_c[0] = hot.W_c[0] + 2 * sc.rf.per_element_power * np.diag([1.0, 0, 0, 0])
    bad = grade(hot, sc, {"structural": structural_checks(hot, problem)})
    assert not bad.passed and bad.exit_code == 2
    assert any(c["name"].startswith("power[slot 0") for c in bad.failures)
    with pytest.raises(ValueError, match="nothing to grade"):
        grade(sol, sc, {})
    with pytest.raises(ValueError, match="nothing to grade"):
        grade(sol, sc, {"structural": []})


def test_report_round_trip(two_slot_run):
    sc, problem, sol = two_slot_run
    rep = grade(sol, sc, {"structural": structural_checks(sol, problem),
                          "lu_outage": mc_lu_outage(sol, problem, 10_000)})
    d = load_report(rep.to_json())
    assert d["passed"] == rep.passed and d["samples"]["lu_outage"] == 10_000
    assert d["confidence"] == "wilson-99"
    d["format"] = "beamsec.validation/2.0"
    with pytest.raises(ValueError):
        load_report(json.dumps(d))


def test_oracle_independence():
    tree = ast.parse(Path(verify.__file__).read_text())
    imported = {n.module for n in ast.walk(tree) if isinstance(n, ast.ImportFrom) and n.module}
    imported |= {a.name for n in ast.walk(tree) if isinstance(n, ast.Import) for a in n.names}
    assert not any(m.endswith(("transforms", "conic", "bcd")) for m in imported)
