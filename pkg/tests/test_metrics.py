import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beamsec.channel import steering_batch, upa_steering
from beamsec.metrics import (BeamSolution, achievable_rates, average_power, beampattern_gain,
                             beampattern_residual, common_rate, desired_covariance, detection_probability,
                             detection_threshold, eavesdrop_rate, efficiency_measures, link_report,
                             link_sinrs, required_gain_threshold, secrecy_sum_rate, sensing_gain,
                             solution_from_dict, solution_to_dict, static_power)
from beamsec.scenario import ArrayGeometry, PowerModel, RfConstants


def make_solution(wc, wp, t=None, C=None, period=1.0):
    """Single- or multi-slot solution from beamformer vectors."""
    wc = np.atleast_2d(np.asarray(wc, dtype=complex))
    wp = np.asarray(wp, dtype=complex)
    if wp.ndim == 2:
        wp = wp[None]
    L, K = wp.shape[0], wp.shape[1]
    W_c = np.einsum("ln,lm->lnm", wc, wc.conj())
    W_p = np.einsum("lkn,lkm->lknm", wp, wp.conj())
    t = np.full(L, period / L) if t is None else np.asarray(t, float)
    C = np.zeros((L, K)) if C is None else np.asarray(C, float)
    return BeamSolution(W_c=W_c, W_p=W_p, t=t, C=C, period=period, w_c=wc, w_p=wp)


def test_link_sinrs_zero_common():
    sol = make_solution([0, 0], [[1, 0], [0, 1]])
    gc, _ = link_sinrs(np.array([1.0, 0.5]), sol, 0.1, 0, 0)
    assert gc == 0.0


def test_link_sinrs_single_user():
    p, s2 = 2.0, 0.25
    sol = make_solution([0, 0], [[math.sqrt(p), 0]])
    _, gp = link_sinrs(np.array([1.0, 0.0]), sol, s2, 0, 0)
    assert gp == pytest.approx(p / s2)
    for use in ("covariance", "beamformer"):
        _, gp2 = link_sinrs(np.array([1.0, 0.0]), make_solution([0, 0], [[3 * math.sqrt(p), 0]]), s2, 0, 0, use)
        assert gp2 == pytest.approx(9 * p / s2)


def test_link_sinrs_formula(rng):
    N, K = 4, 3
    wc = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    wp = rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))
    h = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    sol = make_solution(wc, wp)
    g = [abs(np.vdot(h, w)) ** 2 for w in wp]
    for k in range(K):
        gc, gp = link_sinrs(h, sol, 0.3, 0, k)
        assert gc == pytest.approx(abs(np.vdot(h, wc)) ** 2 / (sum(g) + 0.3))
        assert gp == pytest.approx(g[k] / (sum(g) - g[k] + 0.3))


def test_achievable_rates():
    np.testing.assert_allclose(achievable_rates([0, 1, 3]), [0, 1, 2])


def test_common_rate():
    assert common_rate([2, 3, 1.5]) == (1.5, True)
    assert common_rate([2, 3, 1.5], [0.5, 0.5, 0.4]) == (1.5, True)
    assert common_rate([2, 3, 1.5], [1, 1, 0]) == (1.5, False)


def test_eavesdrop_rate():
    g = np.array([1.0, 0.0])
    assert eavesdrop_rate(g, make_solution([0, 0], [[0, 0]]), 1.0, 0, 0) == 0.0
    assert eavesdrop_rate(g, make_solution([0, 0], [[0, 2]]), 1.0, 0, 0) == 0.0
    assert eavesdrop_rate(g, make_solution([0, 0], [[math.sqrt(0.7), 0]]), 0.7, 0, 0) == pytest.approx(1.0)
    # the common stream acts as artificial noise
    assert eavesdrop_rate(g, make_solution([1, 0], [[1, 0]]), 1.0, 0, 0) == pytest.approx(math.log2(1.5))


def test_secrecy_sum_rate():
    assert secrecy_sum_rate([2, 1], [[0.5], [1.5]]) == pytest.approx(1.5)
    assert secrecy_sum_rate([2, 1, 0.5], np.zeros((3, 2))) == pytest.approx(3.5)
    L, T = 4, 0.01
    R = np.tile([2.0, 1.0], (L, 1))
    Rkm = np.tile([[0.5], [1.5]], (L, 1, 1))
    assert secrecy_sum_rate(R, Rkm, np.full(L, T / L), T) == pytest.approx(1.5)


def test_detection_threshold():
    assert detection_threshold(math.exp(-1), 1.0) == pytest.approx(1.0)
    assert detection_threshold(0.01, 1.0) == pytest.approx(4.60517, abs=1e-5)
    assert detection_threshold(0.01, 3.0) == pytest.approx(3 * detection_threshold(0.01, 1.0))
    for bad in (0.0, 1.0, -0.1, 2.0):
        with pytest.raises(ValueError):
            detection_threshold(bad, 1.0)


def test_detection_probability():
    p_fa, p_d, s2 = 1e-3, 0.95, 2.0
    th = detection_threshold(p_fa, s2)
    assert detection_probability(0.0, 5.0, th, s2) == pytest.approx(p_fa, rel=1e-12)
    x = math.log(p_fa) / math.log(p_d)
    assert detection_probability(x - 1.0, 1.0, th, s2) == pytest.approx(p_d, rel=1e-12)
    ps = np.linspace(0, 100, 50)
    assert np.all(np.diff(detection_probability(ps, 0.3, th, s2)) > 0)


def test_required_gain_threshold():
    assert required_gain_threshold(0.2, 0.2) == 0.0
    assert required_gain_threshold(1e-4, 0.9) == pytest.approx(86.42, abs=5e-3)
    I = required_gain_threshold(1e-4, 0.9)
    th = detection_threshold(1e-4, 1.0)
    assert abs(detection_probability(I, 1.0, th, 1.0) - 0.9) <= 1e-12
    with pytest.raises(ValueError):
        required_gain_threshold(0.0, 0.9)


def test_sensing_gain():
    assert sensing_gain(2.0, 16.0, 4, 0.5) == pytest.approx(2.0 * 16 / (16 * 0.5))


def test_beampattern_residual():
    geom, rf = ArrayGeometry(2, 2), RfConstants()
    a = upa_steering(0.5, 0.2, geom, rf.spacing, rf.wavelength)
    R = desired_covariance(a, 1e-3)
    np.testing.assert_allclose(np.diag(R).real, 1e-3)
    sol = make_solution(math.sqrt(1e-3) * a, [np.zeros(4)])
    assert beampattern_residual(sol, R, 0) == pytest.approx(0.0, abs=1e-20)
    zero = make_solution(np.zeros(4), [np.zeros(4)])
    assert beampattern_residual(zero, R, 0) == pytest.approx(np.linalg.norm(R) ** 2)


def test_beampattern_gain():
    geom, rf = ArrayGeometry(3, 3), RfConstants()
    th0, ph0, p_t = math.radians(40), math.radians(20), 1e-3
    a = upa_steering(th0, ph0, geom, rf.spacing, rf.wavelength)
    sol = make_solution(math.sqrt(p_t) * a, [np.zeros(9)])
    thetas = np.radians(np.linspace(0, 90, 91))
    phis = np.radians(np.linspace(-90, 90, 181))
    lin = beampattern_gain(sol, 0, thetas, phis, geom, rf, db=False)
    i, j = np.unravel_index(np.argmax(lin), lin.shape)
    assert (thetas[i], phis[j]) == pytest.approx((th0, ph0))
    assert lin.max() == pytest.approx(p_t * 81)
    assert np.all(lin >= 0)
    db = beampattern_gain(sol, 0, thetas, phis, geom, rf)
    assert db.max() == pytest.approx(0.0)
    coarse = beampattern_gain(sol, 0, thetas[::2], phis[::4], geom, rf, db=False)
    np.testing.assert_allclose(coarse, lin[::2, ::4])


def test_gain_frobenius_identity(rng):
    geom, rf = ArrayGeometry(2, 3), RfConstants()
    B = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    X = B @ B.conj().T
    sol = BeamSolution(W_c=X[None], W_p=np.zeros((1, 1, 6, 6), complex), t=np.ones(1), C=np.zeros((1, 1)),
                       period=1.0)
    th = np.linspace(0, math.pi / 2, 13)
    ph = np.linspace(-math.pi, math.pi, 17)
    gain = beampattern_gain(sol, 0, th, ph, geom, rf, db=False)
    T, P = np.meshgrid(th, ph, indexing="ij")
    A = steering_batch(T, P, geom, rf.spacing, rf.wavelength).reshape(-1, 6)
    G = (A.T @ A.conj()) / A.shape[0]
    assert gain.mean() == pytest.approx(np.real(np.trace(X @ G)), rel=1e-8)


def test_link_report_and_efficiency(rng):
    N, K, M, L = 4, 2, 2, 3
    wc = 0.1 * (rng.standard_normal((L, N)) + 1j * rng.standard_normal((L, N)))
    wp = 0.1 * (rng.standard_normal((L, K, N)) + 1j * rng.standard_normal((L, K, N)))
    t = np.array([0.2, 0.3, 0.5])
    sol = make_solution(wc, wp, t=t, C=np.full((L, K), 0.1))
    h = rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))
    g = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    rep = link_report(sol, h, g, 0.01, 0.02)
    assert np.all(rep.R_km >= 0) and np.all(rep.secrecy_slot >= 0)
    np.testing.assert_allclose(rep.R_c, rep.R_ck.min(axis=1))
    assert rep.secrecy == pytest.approx(secrecy_sum_rate(rep.R_k, rep.R_km, t, 1.0), abs=1e-12)
    sse, see, iee = efficiency_measures(rep, sol, 1e6)
    assert sse == pytest.approx(rep.secrecy, abs=1e-12)
    assert see == pytest.approx(sse * 1e6 / average_power(sol))
    assert iee == pytest.approx(rep.eavesdrop * 1e6 / average_power(sol))
    doubled = make_solution(math.sqrt(2) * wc, math.sqrt(2) * wp, t=t, C=sol.C)
    assert efficiency_measures(rep, doubled, 1e6)[1] == pytest.approx(see / 2)
    quiet = link_report(sol, h, np.zeros((M, N)), 0.01, 0.02)
    assert efficiency_measures(quiet, sol, 1e6)[2] == 0.0
    zero = make_solution(np.zeros((L, N)), np.zeros((L, K, N)), t=t)
    with pytest.raises(ZeroDivisionError):
        efficiency_measures(rep, zero, 1e6)


def test_static_power_model():
    pm = PowerModel(static_tris=0.0, rf_chain=1e-3)
    assert static_power(pm, 16, "tris") == pytest.approx(1e-3)
    assert static_power(pm, 16, "trsma") == pytest.approx(16e-3)
    with pytest.raises(ValueError):
        static_power(pm, 16, "mimo")


def test_solution_round_trip(rng):
    sol = make_solution(rng.standard_normal((2, 3)), rng.standard_normal((2, 2, 3)), C=np.ones((2, 2)))
    sol.info = {"a": np.arange(3.0), "b": [1, 2]}
    back = solution_from_dict(solution_to_dict(sol))
    np.testing.assert_array_equal(back.W_p, sol.W_p)
    np.testing.assert_array_equal(back.w_c, sol.w_c)
    np.testing.assert_array_equal(back.info["a"], np.arange(3.0))
    bad = solution_to_dict(sol)
    bad["format"] = "beamsec.solution/2.0"
    with pytest.raises(ValueError):
        solution_from_dict(bad)


@settings(max_examples=50, deadline=None)
@given(rk=st.lists(st.floats(0, 10), min_size=1, max_size=4), e=st.floats(0, 10))
def test_secrecy_clamp(rk, e):
    K = len(rk)
    R_km = np.full((K, 2), e)
    v = secrecy_sum_rate(rk, R_km)
    assert v >= 0
    assert v == pytest.approx(sum(max(r - e, 0.0) for r in rk))


@settings(max_examples=50, deadline=None)
@given(p_fa=st.floats(1e-8, 0.5), p_d=st.floats(0.5, 0.999))
def test_detection_round_trip(p_fa, p_d):
    I = required_gain_threshold(p_fa, p_d)
    th = detection_threshold(p_fa, 1.0)
    assert abs(detection_probability(I, 1.0, th, 1.0) - p_d) <= 1e-12
