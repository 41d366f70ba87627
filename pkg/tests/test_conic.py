import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from beamsec.conic import Affine, Program, Values, add_matrix_var, add_soc, embed, rank_one_extract, solve


def test_maximize_bounded_scalar():
    p = Program("toy")
    x = p.scalar("x")
    p.add_linear(x, "<=", 3.0)
    p.maximize(x)
    sol = solve(p)
    assert sol.status == "optimal"
    assert sol.values.scalars["x"] == pytest.approx(3.0, abs=1e-7)
    assert sol.objective == pytest.approx(3.0, abs=1e-7)


def test_trace_with_unit_diagonal():
    p = Program()
    X = add_matrix_var(p, "X", 2)
    for i in range(2):
        e = np.zeros(2)
        e[i] = 1.0
        p.add_linear(X.quad(e), "<=", 1.0)
    p.maximize(X.trace_with())
    sol = solve(p)
    assert sol.objective == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(sol.values.matrices["X"], np.eye(2), atol=1e-5)
    assert sol.stats["residuals"]["max"] <= 1e-7


def test_infeasible():
    p = Program()
    x = p.scalar("x")
    p.add_linear(x, ">=", 1.0)
    p.add_linear(x, "<=", 0.0)
    p.maximize(x)
    sol = solve(p)
    assert sol.status == "infeasible"
    assert sol.values is None and not sol.ok


def test_psd_1x1_is_nonnegative():
    p = Program()
    X = add_matrix_var(p, "X", 1)
    p.maximize(-1.0 * X.trace_with())
    sol = solve(p)
    assert sol.objective == pytest.approx(0.0, abs=1e-7)
    assert np.real(sol.values.matrices["X"][0, 0]) >= -1e-9


def test_duplicate_and_bad_dimension():
    p = Program()
    add_matrix_var(p, "W", 3)
    with pytest.raises(ValueError, match="duplicate"):
        add_matrix_var(p, "W", 3)
    with pytest.raises(ValueError, match="duplicate"):
        p.scalar("W")
    with pytest.raises(ValueError):
        add_matrix_var(p, "Z", 0)


def test_matrix_dimension_serialized():
    p = Program()
    add_matrix_var(p, "W", 16)
    assert p.to_dict()["matrices"]["W"][0] == 16


def test_soc_constant_maps():
    p = Program()
    x = p.scalar("x", ub=1.0)
    add_soc(p, [1.0, 0.5])
    p.maximize(x)
    assert solve(p).status == "optimal"
    q = Program()
    y = q.scalar("y", ub=1.0)
    add_soc(q, [0.5, 1.0])
    q.maximize(y)
    assert solve(q).status == "infeasible"
    with pytest.raises(ValueError):
        add_soc(q, [1.0])


def test_soc_bounds_scalar():
    for sign in (1.0, -1.0):
        p = Program()
        x = p.scalar("x")
        add_soc(p, [1.0, x])
        p.maximize(sign * x)
        assert solve(p).values.scalars["x"] == pytest.approx(sign, abs=1e-6)


def test_lmi_and_unknown_variable():
    p = Program()
    x = p.scalar("x")
    # [[1, x], [x, 1]] >= 0 bounds |x| <= 1
    M = x.times(np.array([[0, 1], [1, 0]])) + np.eye(2)
    p.add_lmi(M)
    p.maximize(x)
    assert solve(p).values.scalars["x"] == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(KeyError):
        p.add_linear(Affine(0.0, {"nope": 1.0}))
    with pytest.raises(TypeError):
        x * x


def test_complex_matrix_variable():
    # maximize Re(h^H X h) subject to tr X <= 1 gives the projector onto h
    h = np.array([1.0, 1j, 0.5])
    p = Program()
    X = p.matrix("X", 3)
    p.add_linear(X.trace_with(), "<=", 1.0)
    p.maximize(X.quad(h))
    sol = solve(p)
    assert sol.objective == pytest.approx(np.vdot(h, h).real, rel=1e-6)
    u = h / np.linalg.norm(h)
    np.testing.assert_allclose(sol.values.matrices["X"], np.outer(u, u.conj()), atol=1e-5)


def _toy_program():
    p = Program("round_trip")
    x = p.scalar("x", lb=0.0, ub=2.0)
    X = p.matrix("X", 2)
    p.add_linear(X.trace_with() + x, "<=", 2.5, label="budget")
    add_soc(p, [x + 1.0, X.apply(np.array([1.0, 1j]))], label="cone")
    p.add_lmi(X.cong_by(np.array([[1.0], [0.5j]])) + x.times(np.eye(1)), label="lmi")
    p.maximize(x + X.quad(np.array([1.0, -1j])))
    return p


def test_serialization_round_trip():
    p = _toy_program()
    text = p.to_json()
    q = Program.from_json(text)
    assert q.to_json() == text
    assert q.digest() == p.digest()
    a, b = solve(p), solve(q)
    assert a.status == b.status
    assert a.objective == pytest.approx(b.objective, abs=1e-9)
    bad = p.to_dict()
    bad["format"] = "beamsec.program/9.0"
    with pytest.raises(ValueError):
        Program.from_dict(bad)


def test_solve_deterministic():
    p = _toy_program()
    objs = [solve(Program.from_json(p.to_json())).objective for _ in range(3)]
    assert max(objs) - min(objs) <= 1e-9


def test_residuals_report():
    p = _toy_program()
    sol = solve(p)
    res = p.residuals(sol.values)
    assert res["max"] <= 1e-7
    bad = Values({"x": 5.0}, {"X": np.eye(2)})
    assert p.residuals(bad)["bounds"] == pytest.approx(3.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(1, 6))
def test_embedding_quadratic_form(seed, n):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    H = B + B.conj().T
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x = np.concatenate([v.real, v.imag])
    assert x @ embed(H) @ x == pytest.approx(np.real(np.vdot(v, H @ v)), abs=1e-10 * max(1.0, np.abs(H).sum()))
    np.testing.assert_allclose(embed(H), embed(H).T)


def test_rank_one_exact():
    w = np.array([1.0, 1j])
    res = rank_one_extract(np.outer(w, w.conj()))
    assert res.path == "eigen" and res.residual == pytest.approx(0.0, abs=1e-12)
    phase = np.vdot(res.w, w) / abs(np.vdot(res.w, w))
    np.testing.assert_allclose(res.w * phase, w, atol=1e-12)


def test_rank_one_identity_randomizes():
    res = rank_one_extract(np.eye(2), rng=np.random.default_rng(0))
    assert res.residual == pytest.approx(1.0)
    assert res.path == "randomization"
    assert np.all(np.abs(res.w) ** 2 <= 1.0 + 1e-12)


def test_rank_one_diagonal():
    res = rank_one_extract(np.diag([4.0, 0.04]))
    assert res.path == "eigen"
    assert res.residual == pytest.approx(0.01)
    np.testing.assert_allclose(np.abs(res.w), [2.0, 0.0], atol=1e-12)


def test_rank_one_degenerate():
    with pytest.raises(ValueError, match="degenerate"):
        rank_one_extract(np.zeros((3, 3)))
