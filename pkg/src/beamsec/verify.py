"""Independent checks of a design: Monte-Carlo outage estimates, worst-case
searches over the uncertainty sets, detection simulation and grading.

Nothing here uses the program builders; rates and SINRs are recomputed from
the channel models and the formulas in ``metrics``. Exact worst cases over
Euclidean balls come from a batched trust-region solver.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import norm

from .channel import sample_iu_realization, steering_batch, upa_steering
from .metrics import (BeamSolution, detection_probability, detection_threshold, link_report,
                      required_gain_threshold)

VALIDATION_FORMAT = "beamsec.validation/1.0"
RECOMMENDED_SAMPLES = 10_000


# ---------------------------------------------------------------------------
# statistics


def wilson(successes: int, n: int, confidence: float = 0.99) -> tuple[float, float, float]:
    """Point estimate and Wilson score interval."""
    if n <= 0:
        raise ValueError("need at least one sample")
    z = float(norm.ppf(0.5 + confidence / 2.0))
    p = successes / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return p, max(centre - half, 0.0), min(centre + half, 1.0)


@dataclass
class Estimate:
    value: float
    lower: float
    upper: float
    samples: int
    method: str = "wilson-99"


def _check_samples(n: int) -> None:
    if n < RECOMMENDED_SAMPLES:
        warnings.warn(f"{n} samples is below recommended sample size {RECOMMENDED_SAMPLES}", stacklevel=3)


def _estimate(count: int, n: int) -> Estimate:
    p, lo, hi = wilson(int(count), int(n))
    return Estimate(p, lo, hi, int(n))


# ---------------------------------------------------------------------------
# trust-region subproblem


def trs_min(A, b, c, eps, iters: int = 200):
    """min_{||x|| <= eps} x^H A x + 2 Re(b^H x) + c, batched over the leading axis.

    Returns (value, x). A: (n, d, d) Hermitian, b: (n, d), c and eps: (n,).
    """
    A = np.asarray(A, dtype=complex)
    single = A.ndim == 2
    if single:
        A, b = A[None], np.asarray(b, complex)[None]
    b = np.asarray(b, dtype=complex)
    n, d = b.shape
    c = np.broadcast_to(np.asarray(c, float), (n,)).astype(float)
    eps = np.broadcast_to(np.asarray(eps, float), (n,)).astype(float)
    lam, V = np.linalg.eigh(0.5 * (A + np.conj(np.swapaxes(A, 1, 2))))
    bt = np.einsum("nji,nj->ni", V.conj(), b)
    w = np.abs(bt) ** 2
    lmin = lam[:, 0]
    scale = np.maximum(np.abs(lam).max(axis=1), 1e-300)
    tiny = 1e-13 * scale

    # interior candidate (convex case)
    with np.errstate(divide="ignore", invalid="ignore"):
        xin = -bt / lam
        nin = np.sqrt(np.sum(np.abs(xin) ** 2, axis=1))
    interior = (lmin > tiny) & (nin <= eps)

    lo = np.maximum(0.0, -lmin)
    bn = np.sqrt(w.sum(axis=1))
    hi = lo + bn / np.maximum(eps, 1e-150) + tiny
    lo_eval = lo + 1e-15 * scale

    def phi(mu):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.sum(w / (lam + mu[:, None]) ** 2, axis=1)

    hard = (phi(lo_eval) < eps ** 2) & ~interior
    a_, b_ = lo.copy(), hi.copy()
    for _ in range(iters):
        mid = 0.5 * (a_ + b_)
        big = phi(mid) > eps ** 2
        a_ = np.where(big, mid, a_)
        b_ = np.where(big, b_, mid)
    mu = np.where(hard, lo, 0.5 * (a_ + b_))
    with np.errstate(divide="ignore", invalid="ignore"):
        den = lam + mu[:, None]
        xt = np.where(np.abs(den) > tiny[:, None], -bt / den, 0.0)
    # hard case: fill the remaining radius along the lowest eigenvector
    rest = np.sqrt(np.clip(eps ** 2 - np.sum(np.abs(xt) ** 2, axis=1), 0.0, None))
    xt[:, 0] = np.where(hard, xt[:, 0] + rest, xt[:, 0])
    xt = np.where(interior[:, None], xin, xt)
    xt = np.where((eps > 0)[:, None], xt, 0.0)
    val = np.sum(lam * np.abs(xt) ** 2, axis=1) + 2.0 * np.real(np.sum(np.conj(bt) * xt, axis=1)) + c
    x = np.einsum("nij,nj->ni", V, xt)
    if single:
        return float(val[0]), x[0]
    return val, x


def _quad_batch(X, v):
    """Re(v^H X v) for X (n, d, d), v (n, d)."""
    return np.real(np.einsum("ni,nij,nj->n", v.conj(), X, v))


def worst_lu_sinr_ball(h, Wk, S, noise, eps, iters: int = 80):
    """Exact minimum over ||dh|| <= eps of h^H Wk h / (h^H S h + noise); batched.

    Bisection on chi with a trust-region solve of min (h+x)^H (Wk - chi S)(h+x).
    """
    Wk = np.atleast_3d(Wk) if np.ndim(Wk) == 3 else np.asarray(Wk)[None]
    S = np.asarray(S)[None] if np.ndim(S) == 2 else np.asarray(S)
    h = np.atleast_2d(h)
    n = h.shape[0]
    noise = np.broadcast_to(np.asarray(noise, float), (n,))
    nominal = _quad_batch(Wk, h) / (_quad_batch(S, h) + noise)
    lo = np.zeros(n)
    hi = np.maximum(nominal, 0.0)
    for _ in range(iters):
        chi = 0.5 * (lo + hi)
        A = Wk - chi[:, None, None] * S
        b = np.einsum("nij,nj->ni", A, h)
        c = _quad_batch(A, h) - chi * noise
        val, _ = trs_min(A, b, c, eps)
        ok = val >= 0
        lo = np.where(ok, chi, lo)
        hi = np.where(ok, hi, chi)
    return lo


def worst_iu_sinr_ball(g, Wk, Wc, noise, radius, iters: int = 80):
    """Exact maximum over ||dg|| <= radius of g^H Wk g / (g^H Wc g + noise); batched."""
    Wk = np.asarray(Wk)[None] if np.ndim(Wk) == 2 else np.asarray(Wk)
    Wc = np.asarray(Wc)[None] if np.ndim(Wc) == 2 else np.asarray(Wc)
    g = np.atleast_2d(g)
    n = g.shape[0]
    noise = np.broadcast_to(np.asarray(noise, float), (n,))
    top = np.linalg.eigvalsh(Wk)[:, -1]
    hi = np.maximum(top, 0.0) * (np.linalg.norm(g, axis=1) + radius) ** 2 / noise + 1e-300
    lo = np.zeros(n)
    for _ in range(iters):
        iota = 0.5 * (lo + hi)
        A = iota[:, None, None] * Wc - Wk
        b = np.einsum("nij,nj->ni", A, g)
        c = _quad_batch(A, g) + iota * noise
        val, _ = trs_min(A, b, c, radius)
        ok = val >= 0           # iota is an upper bound
        hi = np.where(ok, iota, hi)
        lo = np.where(ok, lo, iota)
    return hi


# ---------------------------------------------------------------------------
# problem-level helpers


def _lu_normalized(problem, sol: BeamSolution, l: int, k: int):
    """(h, Wk, S, noise, eps, sigma) with h divided by the path loss and W by P_t."""
    est = problem.lu[k]
    xi, p_t = est.path_loss, problem.p_t
    Wk = sol.W_p[l, k] / p_t
    S = (sol.W_p[l].sum(axis=0) - sol.W_p[l, k]) / p_t
    noise = problem.scenario.rf.noise_power_lu / (xi ** 2 * p_t)
    return est.nominal / xi, Wk, S, noise, est.radius / xi, est.sigma / xi


def _slack(sol: BeamSolution, key: str) -> Optional[np.ndarray]:
    if not sol.slacks:
        return None
    return np.array([s[key] for s in sol.slacks], dtype=float)


# ---------------------------------------------------------------------------
# Monte-Carlo oracles


def mc_lu_outage(sol: BeamSolution, problem, n_samples: int = 100_000, seed: int = 0,
                 use: str = "covariance", chunk: int = 20_000) -> dict:
    """Empirical Pr{R_k < r_k} per (slot, LU) under dh ~ CN(0, sigma_he^2 I)."""
    _check_samples(n_samples)
    sc = problem.scenario
    rate = sc.outage.lu_rate
    noise = sc.rf.noise_power_lu
    L, K = sol.L, sol.K
    est = np.empty((L, K), dtype=object)
    for k in range(K):
        e = problem.lu[k]
        rng = np.random.default_rng([seed, 1, k])
        counts = np.zeros(L, dtype=np.int64)
        done = 0
        while done < n_samples:
            m = min(chunk, n_samples - done)
            h = e.nominal + e.sigma * (rng.standard_normal((m, sol.N)) + 1j * rng.standard_normal((m, sol.N))) / math.sqrt(2)
            for l in range(L):
                if use == "beamformer":
                    gains = np.abs(h.conj() @ sol.w_p[l].T) ** 2            # (m, K)
                else:
                    gains = np.real(np.einsum("mi,kij,mj->mk", h.conj(), sol.W_p[l], h))
                intf = gains.sum(axis=1) - gains[:, k]
                rk = sol.C[l, k] + np.log2(1.0 + gains[:, k] / (intf + noise))
                counts[l] += int(np.sum(rk < rate))
            done += m
        for l in range(L):
            est[l, k] = _estimate(counts[l], n_samples)
    return {"estimates": est, "target": sc.outage.p_out1, "samples": n_samples}


def mc_iu_exceedance(sol: BeamSolution, problem, n_samples: int = 100_000, seed: int = 0,
                     use: str = "covariance", chunk: int = 20_000, composition: str = "gaussian") -> dict:
    """Empirical Pr{R_km > r_e} per (slot, LU, IU) over random IU realizations.

    ``composition`` selects the deviation model of the sampler (see
    ``channel.sample_iu_deviation``).
    """
    _check_samples(n_samples)
    sc = problem.scenario
    rate = sc.outage.iu_rate
    noise = sc.rf.noise_power_iu
    L, K, M = sol.L, sol.K, len(problem.iu)
    counts = np.zeros((L, K, M), dtype=np.int64)
    for m in range(M):
        rng = np.random.default_rng([seed, 2, m])
        done = 0
        while done < n_samples:
            n = min(chunk, n_samples - done)
            g = sample_iu_realization(problem.iu[m], problem.iu_sets[m], rng, size=n, composition=composition)
            for l in range(L):
                if use == "beamformer":
                    jam = np.abs(g.conj() @ sol.w_c[l]) ** 2
                    sig = np.abs(g.conj() @ sol.w_p[l].T) ** 2
                else:
                    jam = np.real(np.einsum("mi,ij,mj->m", g.conj(), sol.W_c[l], g))
                    sig = np.real(np.einsum("mi,kij,mj->mk", g.conj(), sol.W_p[l], g))
                r = np.log2(1.0 + sig / (jam + noise)[:, None])
                counts[l, :, m] += np.sum(r > rate, axis=0)
            done += n
    est = np.empty((L, K, M), dtype=object)
    for idx in np.ndindex(L, K, M):
        est[idx] = _estimate(counts[idx], n_samples)
    return {"estimates": est, "target": sc.outage.p_out2, "samples": n_samples, "composition": composition}


def _iu_candidates(problem, m: int, grid: int, n_random: int, rng, Wt: Optional[np.ndarray] = None):
    """IU channel candidates (unit-free, before the distance factor) over the
    angle box and per-element NLoS ball, plus distances on a grid."""
    est, uset = problem.iu[m], problem.iu_sets[m]
    rf, geom = est.rf, est.array
    kappa = rf.rician_factor
    u = est.user
    dt = np.linspace(-uset.pitch_bound, uset.pitch_bound, grid)
    dp = np.linspace(-uset.azimuth_bound, uset.azimuth_bound, grid)
    T, P = np.meshgrid(dt, dp, indexing="ij")
    los = math.sqrt(kappa) * steering_batch(u.pitch + T.ravel(), u.azimuth + P.ravel(), geom, rf.spacing,
                                            rf.wavelength)                       # (grid^2, N)
    bounds = np.asarray(uset.per_element_bounds, float) * np.ones(geom.n)
    phases = rng.uniform(0, 2 * np.pi, (n_random, geom.n))
    dirs = [np.zeros(geom.n, complex)] + list(bounds * np.exp(1j * phases))
    if Wt is not None:
        v = np.linalg.eigh(Wt)[1][:, -1]
        dirs.append(bounds * np.exp(1j * np.angle(v)))
    dirs = np.array(dirs)
    g = (los[:, None, :] + dirs[None, :, :]).reshape(-1, geom.n)
    if Wt is not None:
        # gradient-aligned NLoS phases for each LoS point
        grad = los @ Wt.T
        g = np.vstack([g, los + bounds * np.exp(1j * np.angle(grad))])
    d = u.distance + np.linspace(-uset.distance_bound, uset.distance_bound, grid)
    return g, d


def worst_case_search(sol: BeamSolution, problem, grid: int = 9, n_random: int = 64, n_starts: int = 32,
                      seed: int = 0, pg_steps: int = 60) -> dict:
    """Falsification search for the robust SINR certificates.

    LU: exact ball minimum (trust-region bisection) and projected gradient
    from random starts. IU: grid over angles and distance times random and
    aligned NLoS directions, plus the exact maximum over the enclosing ball.
    """
    sc = problem.scenario
    L, K, M = sol.L, sol.K, len(problem.iu)
    rng = np.random.default_rng([seed, 3])
    lu_worst = np.zeros((L, K))
    lu_exact = np.zeros((L, K))
    lu_arg = np.zeros((L, K, sol.N), complex)
    for l in range(L):
        for k in range(K):
            h, Wk, S, noise, eps, _ = _lu_normalized(problem, sol, l, k)
            exact = float(worst_lu_sinr_ball(h, Wk, S, noise, eps)[0])
            # projected gradient from random starts in the ball
            z = rng.standard_normal((n_starts, sol.N)) + 1j * rng.standard_normal((n_starts, sol.N))
            x = eps * z / np.linalg.norm(z, axis=1, keepdims=True) * rng.uniform(0, 1, (n_starts, 1)) ** (1 / (2 * sol.N))
            step = eps / 10
            for _ in range(pg_steps):
                y = h + x
                num = np.real(np.einsum("ni,ij,nj->n", y.conj(), Wk, y))
                den = np.real(np.einsum("ni,ij,nj->n", y.conj(), S, y)) + noise
                grad = (y @ Wk.T * den[:, None] - y @ S.T * num[:, None]) / den[:, None] ** 2
                x = x - step * grad / np.maximum(np.linalg.norm(grad, axis=1, keepdims=True), 1e-300)
                nx = np.linalg.norm(x, axis=1, keepdims=True)
                x = np.where(nx > eps, x * eps / np.maximum(nx, 1e-300), x)
                step *= 0.93
            y = h + x
            vals = np.real(np.einsum("ni,ij,nj->n", y.conj(), Wk, y)) / (
                np.real(np.einsum("ni,ij,nj->n", y.conj(), S, y)) + noise)
            # analytic candidate: move against h through W_k - chi S
            A = Wk - exact * S
            v = A @ h
            nv = np.linalg.norm(v)
            if nv > 0 and eps > 0:
                x = np.vstack([x, -eps * v / nv])
                y = h + x[-1]
                vals = np.append(vals, np.real(np.vdot(y, Wk @ y)) / (np.real(np.vdot(y, S @ y)) + noise))
            i = int(np.argmin(vals))
            lu_exact[l, k] = exact
            lu_worst[l, k] = min(exact, float(vals[i]))
            lu_arg[l, k] = x[i]
    iu_worst = np.zeros((L, K, M))
    iu_ball = np.zeros((L, K, M))
    iota_cert = _slack(sol, "iota")
    p_t = sc.rf.per_element_power
    for m in range(M):
        est, uset = problem.iu[m], problem.iu_sets[m]
        noise = sc.rf.noise_power_iu
        delta = uset.distance_bound / est.user.distance
        s_worst = noise / (est.path_loss ** 2 * p_t) * (1 - delta) ** 2
        tau = float(problem.iu_reports[m].tau)
        for l in range(L):
            for k in range(K):
                ref = 0.0 if iota_cert is None else float(iota_cert[l, k])
                Wt = sol.W_p[l, k] - ref * sol.W_c[l]
                g, d = _iu_candidates(problem, m, grid, n_random, rng, Wt=Wt)
                sig = np.real(np.einsum("ni,ij,nj->n", g.conj(), sol.W_p[l, k], g))
                jam = np.real(np.einsum("ni,ij,nj->n", g.conj(), sol.W_c[l], g))
                # large-scale factor lambda / (4 pi d) / sqrt(1 + kappa) on the distance grid
                scale2 = (est.rf.wavelength / (4 * math.pi * d)) ** 2 / (1 + est.rf.rician_factor)
                vals = (sig[:, None] * scale2[None, :]) / (jam[:, None] * scale2[None, :] + noise)
                iu_worst[l, k, m] = float(vals.max())
                iu_ball[l, k, m] = float(worst_iu_sinr_ball(est.nominal, sol.W_p[l, k] / p_t, sol.W_c[l] / p_t,
                                                            s_worst, tau)[0])
    return {"lu_worst": lu_worst, "lu_exact": lu_exact, "lu_argmin": lu_arg, "iu_worst": iu_worst,
            "iu_ball": iu_ball, "chi": _slack(sol, "chi"), "iota": iota_cert}


def mc_detection(sol: BeamSolution, problem, n_samples: int = 100_000, seed: int = 0) -> dict:
    """Empirical detection probability at the worst-case IU range and angle.

    The matched-filter output is alpha * sqrt(p) * (a^H a_hat)/N + n with
    alpha ~ CN(0, sigma_alpha^2) and n ~ CN(0, sigma_r^2); its energy is
    compared with the false-alarm threshold.
    """
    _check_samples(n_samples)
    sc = problem.scenario
    rf = sc.rf
    s2 = rf.processing_noise
    thr = detection_threshold(sc.outage.p_fa, s2)
    L, M = sol.L, len(problem.iu)
    emp = np.empty((L, M), dtype=object)
    closed = np.zeros((L, M))
    for m in range(M):
        est, uset = problem.iu[m], problem.iu_sets[m]
        u = est.user
        d = u.distance + uset.distance_bound
        var = rf.rcs * rf.wavelength ** 2 / ((4 * math.pi) ** 3 * d ** 4)
        a0 = upa_steering(u.pitch, u.azimuth, est.array, rf.spacing, rf.wavelength)
        match = min(abs(np.vdot(upa_steering(u.pitch + s * uset.pitch_bound, u.azimuth + v * uset.azimuth_bound,
                                             est.array, rf.spacing, rf.wavelength), a0)) ** 2
                    for s in (-1, 0, 1) for v in (-1, 0, 1))
        rng = np.random.default_rng([seed, 4, m])
        for l in range(L):
            p = sol.slot_power(l)
            amp = math.sqrt(var * p * match) / sol.N
            alpha = (rng.standard_normal(n_samples) + 1j * rng.standard_normal(n_samples)) / math.sqrt(2)
            noise = math.sqrt(s2) * (rng.standard_normal(n_samples) + 1j * rng.standard_normal(n_samples)) / math.sqrt(2)
            stat = np.abs(amp * alpha + noise) ** 2
            emp[l, m] = _estimate(int(np.sum(stat > thr)), n_samples)
            varsigma = var * match / (sol.N ** 2 * s2)
            closed[l, m] = detection_probability(p, varsigma, thr, s2)
    return {"estimates": emp, "closed_form": closed, "target": sc.outage.p_d, "samples": n_samples}


# ---------------------------------------------------------------------------
# structural checks and grading


def structural_checks(sol: BeamSolution, problem, power_rows: str = "element") -> list[dict]:
    sc = problem.scenario
    p_t = sc.rf.per_element_power
    checks = []
    for l in range(sol.L):
        pw = sol.element_power(l)
        if power_rows == "element":
            n = int(np.argmax(pw))
            checks.append(_check(f"power[slot {l}, element {n}]", float(pw[n]) <= p_t + 1e-9, float(pw[n]), p_t + 1e-9))
        else:
            checks.append(_check(f"power_total[slot {l}]", float(pw.sum()) <= sc.N * p_t + 1e-9, float(pw.sum()),
                                 sc.N * p_t + 1e-9))
        for name, X in (("W_c", sol.W_c[l]), *((f"W_{k}", sol.W_p[l, k]) for k in range(sol.K))):
            lam = float(np.linalg.eigvalsh(X)[0])
            checks.append(_check(f"psd[slot {l}, {name}]", lam >= -1e-12 * max(p_t, 1e-300), lam, 0.0))
        R = p_t * np.outer(problem.scan[l], problem.scan[l].conj())
        res = float(np.linalg.norm(sol.total_covariance(l) - R, "fro") ** 2)
        tol = sc.beampattern_tolerance * float(np.linalg.norm(R, "fro") ** 2)
        checks.append(_check(f"beampattern[slot {l}]", res <= tol, res, tol))
    sl = sc.slots
    checks.append(_check("time_budget", float(sol.t.sum()) <= sl.period * (1 + 1e-9), float(sol.t.sum()), sl.period))
    checks.append(_check("slot_bounds", bool(np.all(sol.t >= sl.t_min * (1 - 1e-9)) and np.all(sol.t <= sl.t_max * (1 + 1e-9))),
                         [float(sol.t.min()), float(sol.t.max())], [sl.t_min, sl.t_max]))
    lu = [e.nominal for e in problem.lu]
    iu = [e.nominal * e.path_loss for e in problem.iu]
    rep = link_report(sol, lu, iu, sc.rf.noise_power_lu, sc.rf.noise_power_iu)
    for l in range(sol.L):
        tot = float(sol.C[l].sum())
        checks.append(_check(f"common_split[slot {l}]", tot <= rep.R_c[l] + 1e-8, tot, float(rep.R_c[l]) + 1e-8))
    return checks


def _check(name, passed, value, limit, detail="") -> dict:
    return {"name": name, "passed": bool(passed), "value": value, "limit": limit, "detail": detail}


@dataclass
class ValidationReport:
    checks: list
    passed: bool
    samples: dict = field(default_factory=dict)
    confidence: str = "wilson-99"
    summary: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [c for c in self.checks if not c["passed"]]

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 2

    def to_dict(self) -> dict:
        return {"format": VALIDATION_FORMAT, "passed": self.passed, "confidence": self.confidence,
                "samples": self.samples, "summary": self.summary, "checks": self.checks}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=_json_default)


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Estimate):
        return asdict(x)
    raise TypeError(type(x))


def load_report(text: str) -> dict:
    d = json.loads(text)
    fmt = d.get("format", "")
    if fmt.split("/")[0] != VALIDATION_FORMAT.split("/")[0] or fmt.split("/")[-1].split(".")[0] != "1":
        raise ValueError(f"unsupported validation format {fmt!r}")
    return d


def grade(sol: BeamSolution, scenario, reports: dict) -> ValidationReport:
    """Aggregate sub-reports into pass/fail checks.

    ``reports`` may hold 'lu_outage', 'iu_exceedance', 'worst_case',
    'detection' (outputs of the functions above) and 'structural' (a list
    of checks).
    """
    if not reports or not any(reports.values()):
        raise ValueError("nothing to grade")
    checks = list(reports.get("structural", []))
    samples = {}
    summary = {}
    lu = reports.get("lu_outage")
    if lu:
        samples["lu_outage"] = lu["samples"]
        worst = 0.0
        for (l, k), e in np.ndenumerate(lu["estimates"]):
            checks.append(_check(f"lu_outage[slot {l}, LU {k}]", e.upper <= lu["target"], e.upper, lu["target"],
                                 f"estimate {e.value:.3g}"))
            worst = max(worst, e.upper)
        summary["lu_outage_upper"] = worst
    iu = reports.get("iu_exceedance")
    if iu:
        samples["iu_exceedance"] = iu["samples"]
        worst = 0.0
        for (l, k, m), e in np.ndenumerate(iu["estimates"]):
            checks.append(_check(f"iu_exceedance[slot {l}, LU {k}, IU {m}]", e.upper <= iu["target"], e.upper,
                                 iu["target"], f"estimate {e.value:.3g}"))
            worst = max(worst, e.upper)
        summary["iu_exceedance_upper"] = worst
    wc = reports.get("worst_case")
    if wc:
        chi, iota = wc.get("chi"), wc.get("iota")
        if chi is not None:
            for (l, k), v in np.ndenumerate(wc["lu_worst"]):
                lim = chi[l, k] * (1 - 1e-4)
                checks.append(_check(f"worst_lu_sinr[slot {l}, LU {k}]", v >= lim, float(v), float(lim)))
        if iota is not None:
            for (l, k, m), v in np.ndenumerate(wc["iu_worst"]):
                lim = iota[l, k] * (1 + 1e-4)
                checks.append(_check(f"worst_iu_sinr[slot {l}, LU {k}, IU {m}]", v <= lim, float(v), float(lim)))
    det = reports.get("detection")
    if det:
        samples["detection"] = det["samples"]
        for (l, m), e in np.ndenumerate(det["estimates"]):
            cf = float(det["closed_form"][l, m])
            checks.append(_check(f"detection[slot {l}, IU {m}]", cf >= det["target"] - 1e-9, cf, det["target"]))
            checks.append(_check(f"detection_consistency[slot {l}, IU {m}]", e.lower <= cf <= e.upper,
                                 [e.lower, e.upper], cf))
    if not checks:
        raise ValueError("nothing to grade")
    passed = all(c["passed"] for c in checks)
    return ValidationReport(checks=checks, passed=passed, samples=samples, summary=summary)


def validate(sol: BeamSolution, problem, n_samples: int = 100_000, seed: int = 0,
             power_rows: str = "element") -> ValidationReport:
    """Run every oracle and grade the design."""
    reports = {
        "structural": structural_checks(sol, problem, power_rows),
        "lu_outage": mc_lu_outage(sol, problem, n_samples, seed),
        "iu_exceedance": mc_iu_exceedance(sol, problem, n_samples, seed),
        "worst_case": worst_case_search(sol, problem, seed=seed),
        "detection": mc_detection(sol, problem, n_samples, seed),
    }
    return grade(sol, problem.scenario, reports)


# ---------------------------------------------------------------------------
# certified secrecy value and small-scale brute force


def _bernstein_lower(Q, r, sigma):
    Q = 0.5 * (Q + Q.conj().T)
    lam = np.linalg.eigvalsh(Q)
    spread = math.sqrt(2 * sigma * (np.linalg.norm(Q) ** 2 + 2 * np.linalg.norm(r) ** 2))
    return float(np.real(np.trace(Q))) - spread - sigma * max(-float(lam[0]), 0.0)


def _bernstein_upper_batch(Q, r, sigma):
    lam = np.linalg.eigvalsh(Q)
    fro = np.sum(np.abs(Q) ** 2, axis=(1, 2))
    spread = np.sqrt(2 * sigma * (fro + 2 * np.sum(np.abs(r) ** 2, axis=1)))
    return np.real(np.trace(Q, axis1=1, axis2=2)) + spread + sigma * np.maximum(lam[:, -1], 0.0)


def certified_value(problem, Wc: np.ndarray, Wp: np.ndarray, a_cap: float = 1e3) -> dict:
    """Certified worst-case secrecy of a single-slot design with K = 1.

    Feasibility follows the same robust model as the design (per-element power,
    beampattern ball, detection power, Bernstein outage rows); the value is
    C + log2(1 + chi*) - log2(1 + iota*) with the exact worst-case SINRs over
    the LU error ball and the enclosing IU ball at the closest distance.
    Inputs are batched: Wc (n, N, N), Wp (n, N, N).
    """
    sc = problem.scenario
    rf, out = sc.rf, sc.outage
    p_t = rf.per_element_power
    Wc = np.asarray(Wc, complex) / p_t
    Wp = np.asarray(Wp, complex) / p_t
    if Wc.ndim == 2:
        Wc, Wp = Wc[None], Wp[None]
    n, N = Wc.shape[0], Wc.shape[1]
    ok = np.ones(n, bool)
    tot = Wc + Wp
    ok &= np.all(np.real(np.diagonal(tot, axis1=1, axis2=2)) <= 1 + 1e-9, axis=1)
    a0 = problem.scan[0]
    R = np.outer(a0, a0.conj())
    ok &= np.linalg.norm(tot - R, axis=(1, 2)) <= math.sqrt(sc.beampattern_tolerance) * N + 1e-12
    target = np.asarray(problem.detection_target, float)
    need = float(np.max(target / (np.asarray(problem.sensing_gain) * p_t)))
    ok &= np.real(np.trace(tot, axis1=1, axis2=2)) >= need - 1e-9
    # IU outage rows (Bernstein upper bound at the closest distance)
    b = 2.0 ** out.iu_rate - 1.0
    for m, est in enumerate(problem.iu):
        E_half = np.diag(problem.iu_reports[m].element_bound / 3.0)
        X = Wp / b - Wc
        g = est.nominal
        B = E_half @ X @ E_half
        r = np.einsum("ij,njk,k->ni", E_half, X, g)
        s = rf.noise_power_iu / (est.path_loss ** 2 * p_t) * (1 - problem.iu_sets[m].distance_bound / est.user.distance) ** 2
        lhs = np.real(np.einsum("i,nij,j->n", g.conj(), X, g)) + _bernstein_upper_batch(B, r, out.sigma2)
        ok &= lhs <= s
    # LU outage row: linear in a for a single LU
    est = problem.lu[0]
    h = est.nominal / est.path_loss
    sig = est.sigma / est.path_loss
    eps = est.radius / est.path_loss
    s_lu = rf.noise_power_lu / (est.path_loss ** 2 * p_t)
    coef = np.zeros(n)
    for i in np.nonzero(ok)[0]:
        coef[i] = float(np.real(np.vdot(h, Wp[i] @ h))) + _bernstein_lower(sig ** 2 * Wp[i], sig * Wp[i] @ h, out.sigma1)
    a_lo = np.where(coef > 0, s_lu / np.where(coef > 0, coef, 1.0), np.inf)
    ok &= a_lo <= a_cap
    C_split = out.lu_rate - math.log2(1 + 1 / a_cap)
    # common rate at the nominal channel and under H = hh^H + eps^2 I
    sig_c = np.real(np.einsum("i,nij,j->n", h.conj(), Wc, h))
    intf = np.real(np.einsum("i,nij,j->n", h.conj(), Wp, h))
    g_nom = sig_c / (intf + s_lu)
    g_avg = (sig_c + eps ** 2 * np.real(np.trace(Wc, axis1=1, axis2=2))) / (
        intf + eps ** 2 * np.real(np.trace(Wp, axis1=1, axis2=2)) + s_lu)
    R_c = np.log2(1 + np.maximum(np.minimum(g_nom, g_avg), 0))
    # the common share has to cover what the guaranteed private SINR 1/a_lo leaves
    with np.errstate(divide="ignore"):
        C_need = out.lu_rate - np.log2(1 + 1 / a_lo)
    ok &= C_need <= R_c + 1e-12
    C = np.minimum(R_c, C_split)
    value = np.full(n, -np.inf)
    idx = np.nonzero(ok)[0]
    if idx.size:
        chi = worst_lu_sinr_ball(np.repeat(h[None], idx.size, 0), Wp[idx], np.zeros_like(Wp[idx]), s_lu, eps)
        iota = np.zeros(idx.size)
        for m, est_m in enumerate(problem.iu):
            s = rf.noise_power_iu / (est_m.path_loss ** 2 * p_t) * (
                1 - problem.iu_sets[m].distance_bound / est_m.user.distance) ** 2
            tau = float(problem.iu_reports[m].tau)
            iota = np.maximum(iota, worst_iu_sinr_ball(np.repeat(est_m.nominal[None], idx.size, 0), Wp[idx], Wc[idx],
                                                       s, tau))
        value[idx] = C[idx] + np.log2(1 + chi) - np.log2(1 + iota)
    return {"feasible": ok, "value": value, "C": C}


def brute_force_small(problem, power_levels=(0.6, 0.8, 1.0), splits=6, phases=12) -> dict:
    """Grid over rank-one designs for N = 2, K = 1, M = 1, L = 1.

    Each element n carries total power p_n P_t split between the common and
    private stream; the relative phases of the second element are gridded
    for both streams.
    """
    sc = problem.scenario
    if sc.N != 2 or sc.K != 1 or sc.L != 1:
        raise ValueError("brute force is defined for N = 2, K = 1, L = 1")
    p_t = sc.rf.per_element_power
    levels = np.asarray(power_levels, float)
    fr = (np.arange(splits) + 0.5) / splits
    ph = 2 * np.pi * np.arange(phases) / phases
    P1, P2, S1, S2, F1, F2 = np.meshgrid(levels, levels, fr, fr, ph, ph, indexing="ij")
    P1, P2, S1, S2, F1, F2 = (x.ravel() for x in (P1, P2, S1, S2, F1, F2))
    wc = np.stack([np.sqrt(P1 * (1 - S1)), np.sqrt(P2 * (1 - S2)) * np.exp(1j * F1)], axis=1) * math.sqrt(p_t)
    wp = np.stack([np.sqrt(P1 * S1), np.sqrt(P2 * S2) * np.exp(1j * F2)], axis=1) * math.sqrt(p_t)
    Wc = np.einsum("ni,nj->nij", wc, wc.conj())
    Wp = np.einsum("ni,nj->nij", wp, wp.conj())
    res = certified_value(problem, Wc, Wp)
    best = int(np.argmax(res["value"]))
    diag = np.real(np.diagonal(Wc + Wp, axis1=1, axis2=2))
    return {"points": int(Wc.shape[0]), "power_feasible": int(np.all(diag <= p_t * (1 + 1e-9), axis=1).sum()),
            "feasible": int(res["feasible"].sum()),
            "best_value": float(res["value"][best]), "best_wc": wc[best], "best_wp": wp[best]}
