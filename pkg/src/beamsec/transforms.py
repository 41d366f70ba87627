"""Convex restrictions of the robust design constraints as conic-program fragments.

All builders work in normalized, subspace-reduced coordinates (see
``SlotData``): covariances are r x r matrices Z with W = P_t Q Z Q^H, LU
channels are divided by their path loss and IU quantities are expressed
relative to the unit-free LoS vector sqrt(kappa) a.

Every builder accepts each stream covariance either as a numeric matrix or
as a ``MatAffine`` variable, and each per-user scalar (SINR targets, the
rate-split factor a, ...) either as a number or as an ``Affine`` variable.
The same code therefore emits the rows of both coordinate blocks; a product
of two variables raises ``TypeError`` instead of producing a bilinear row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import optimize

from .conic import Affine, MatAffine, Program, VecAffine

Scalar = Union[float, Affine]
Stream = Union[np.ndarray, MatAffine]

A_GRID = (1e-3, 1e3, 64)        # secant grid for log2(1 + 1/a)
CHI_GRID = (1e-4, 1e4, 128)     # chord grid for log2(1 + chi)


class SplitError(ValueError):
    """The rate split leaves no room for the private stream (C_k >= r_k)."""


@dataclass(frozen=True)
class BernsteinBound:
    Q: np.ndarray
    r: np.ndarray
    sigma: float
    direction: str = "upper"

    def value(self) -> float:
        return bernstein_tail(self.Q, self.r, self.sigma, self.direction)


@dataclass
class SprocCertificate:
    multiplier: str
    lmi: int


@dataclass
class SlotData:
    """Per-slot constants in reduced coordinates.

    ``Q`` is an orthonormal N x r basis; vectors ``h``, ``g`` and ``a`` are
    Q^H times the normalized LU channels, IU LoS vectors and scan steering.
    ``s_lu``/``s_iu`` are noise powers in the same units (IU at the nominal
    distance), ``delta`` the relative IU distance bound and ``E_half`` the
    reduced square roots (Q^H E Q)^(1/2) of the IU error covariances.
    """
    slot: int
    Q: np.ndarray
    h: np.ndarray
    g: np.ndarray
    a: np.ndarray
    s_lu: np.ndarray
    eps_lu: np.ndarray
    sigma_lu: np.ndarray
    s_iu: np.ndarray
    delta: np.ndarray
    tau: np.ndarray
    E_half: np.ndarray
    lu_rate: float
    iu_rate: float
    sigma1: float
    sigma2: float
    bp_radius: float
    min_power: float
    power_rows: str = "element"
    power_cap: float = 1.0

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @property
    def M(self) -> int:
        return self.g.shape[0]

    @property
    def r(self) -> int:
        return self.Q.shape[1]

    @property
    def N(self) -> int:
        return self.Q.shape[0]

    @property
    def s_iu_worst(self) -> np.ndarray:
        """IU noise term at the closest admissible distance."""
        return self.s_iu * (1.0 - self.delta) ** 2

    @property
    def element_rows(self) -> np.ndarray:
        """Q^H e_n for every element n, shape (N, r)."""
        return self.Q.conj()


# ---------------------------------------------------------------------------
# small helpers


def lift(M: Stream) -> MatAffine:
    return M if isinstance(M, MatAffine) else MatAffine.constant(M)


def scale(c: Scalar, M: Stream) -> MatAffine:
    """c * M where at most one factor carries variables."""
    M = lift(M)
    if isinstance(c, Affine):
        if not M.variables():
            return c.times(M.const)
        if c.variables():
            raise TypeError("product of two variable quantities")
        c = c.const
    return M * float(c)


def _corner(n: int) -> np.ndarray:
    """Matrix unit selecting the bottom-right entry of an n x n matrix."""
    E = np.zeros((n, n))
    E[-1, -1] = 1.0
    return E


def _augment(v: np.ndarray) -> np.ndarray:
    """[I v], the congruence that turns M into [[M, Mv], [v^H M, v^H M v]]."""
    r = v.size
    return np.hstack([np.eye(r), v[:, None]]).astype(complex)


def stream_sum(Wc: Stream, Wp: Sequence[Stream]) -> MatAffine:
    out = lift(Wc)
    for W in Wp:
        out = out + lift(W)
    return out


def _others(Wp: Sequence[Stream], k: int, r: int) -> MatAffine:
    out = MatAffine(r)
    for i, W in enumerate(Wp):
        if i != k:
            out = out + lift(W)
    return out


# ---------------------------------------------------------------------------
# Bernstein-type bound


def bernstein_tail(Q, r, sigma: float, direction: str = "upper") -> float:
    """Deviation bound for f(e) = e^H Q e + 2 Re(r^H e), e ~ CN(0, I).

    upper: Pr{f >= bound} <= exp(-sigma); lower: Pr{f <= bound} <= exp(-sigma).
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    Q = np.atleast_2d(np.asarray(Q, dtype=complex))
    r = np.asarray(r, dtype=complex).ravel()
    Q = 0.5 * (Q + Q.conj().T)
    lam = np.linalg.eigvalsh(Q)
    spread = math.sqrt(2.0 * sigma * (np.linalg.norm(Q, "fro") ** 2 + 2.0 * np.linalg.norm(r) ** 2))
    tr = float(np.real(np.trace(Q)))
    if direction == "upper":
        return tr + spread + sigma * max(float(lam[-1]), 0.0)
    if direction == "lower":
        return tr - spread - sigma * max(float(-lam[0]), 0.0)
    raise ValueError("direction must be 'upper' or 'lower'")


def lu_outage_margin(sd: SlotData, k: int, Wp: Sequence[np.ndarray], a: float) -> float:
    """Exact value of the LU Bernstein row (>= 0 means the chance constraint is certified)."""
    Wbar = a * Wp[k] - sum(W for i, W in enumerate(Wp) if i != k)
    sig = sd.sigma_lu[k]
    h = sd.h[k]
    low = bernstein_tail(sig ** 2 * Wbar, sig * Wbar @ h, sd.sigma1, "lower")
    return float(np.real(np.vdot(h, Wbar @ h))) + low - sd.s_lu[k]


def iu_outage_margin(sd: SlotData, k: int, m: int, Wc: np.ndarray, Wp: Sequence[np.ndarray]) -> float:
    """Exact value of the IU Bernstein row (>= 0 means certified)."""
    b = 2.0 ** sd.iu_rate - 1.0
    X = Wp[k] / b - Wc
    F = sd.E_half[m]
    g = sd.g[m]
    up = bernstein_tail(F @ X @ F, F @ X @ g, sd.sigma2, "upper")
    return sd.s_iu_worst[m] - float(np.real(np.vdot(g, X @ g))) - up


# ---------------------------------------------------------------------------
# outage constraints


def split_factor(rate: float, C: float) -> float:
    """a = 1 / (2^(r - C) - 1)."""
    gap = 2.0 ** (rate - C) - 1.0
    if not gap > 0:
        raise SplitError(f"common share {C} leaves no private rate below target {rate}")
    return 1.0 / gap


def split_floor(sd: SlotData, k: int, Wp: Sequence[np.ndarray], safety: float = 0.0) -> float:
    """Smallest a in the secant range whose LU Bernstein row holds at the given covariances.

    The row is concave in a, so its feasible set is an interval; the left end
    is the tightest robust private SINR guarantee 1/a. Returns inf when no a
    in range certifies the row.
    """
    lo, hi, _ = A_GRID
    target = safety * float(sd.s_lu[k])

    def g(la):
        return lu_outage_margin(sd, k, Wp, math.exp(la)) - target

    if g(math.log(lo)) >= 0:
        return lo
    top = math.log(hi)
    if g(top) < 0:
        res = optimize.minimize_scalar(lambda x: -g(x), bounds=(math.log(lo), top), method="bounded",
                                       options={"xatol": 1e-10})
        if -res.fun < 0:
            return math.inf
        top = float(res.x)
    return math.exp(optimize.brentq(g, math.log(lo), top, xtol=1e-14, rtol=1e-12)) * (1.0 + 1e-9)


def build_lu_outage(prog: Program, sd: SlotData, k: int, Wp: Sequence[Stream], a: Optional[Scalar] = None,
                    C: Optional[float] = None, tag: str = "", margin: Optional[Affine] = None,
                    safety: float = 0.0) -> dict:
    """Bernstein restriction of Pr{R_k < r_k} <= P_out1.

    With Wbar = a W_k - sum_{i != k} W_i and A = sigma^2 Wbar, adds
    tr(A) - sqrt(2 s1) z - s1 nu + h^H Wbar h >= s_k, the cone
    ||[vec(A); sqrt(2) sigma Wbar h]|| <= z and nu I + A >= 0, nu >= 0.
    """
    if a is None:
        if C is None:
            raise ValueError("either a or C is required")
        a = split_factor(sd.lu_rate, C)
    r = sd.r
    Wbar = scale(a, Wp[k]) - _others(Wp, k, r)
    sig = float(sd.sigma_lu[k])
    A = Wbar * sig ** 2
    z = prog.scalar(f"{tag}z{k}")
    nu = prog.scalar(f"{tag}nu{k}", lb=0.0)
    row = A.trace_with() - math.sqrt(2.0 * sd.sigma1) * z - sd.sigma1 * nu + Wbar.quad(sd.h[k])
    row = row - sd.s_lu[k] * (1.0 + safety)
    if margin is not None:
        row = row - margin
    out = {"row": prog.add_linear(row, ">=", 0.0, f"{tag}lu_outage{k}")}
    out["soc"] = prog.add_soc(z, VecAffine.stack(A.vec(), Wbar.apply(sd.h[k]) * (math.sqrt(2.0) * sig)),
                              f"{tag}lu_outage_soc{k}")
    out["lmi"] = prog.add_lmi(nu.times(np.eye(r)) + A, f"{tag}lu_outage_eig{k}")
    return out


def build_iu_outage(prog: Program, sd: SlotData, k: int, m: int, Wc: Stream, Wp: Sequence[Stream],
                    tag: str = "", margin: Optional[Affine] = None, safety: float = 0.0) -> dict:
    """Bernstein restriction of Pr{R_km > r_e} <= P_out2 at the worst-case distance.

    With X = W_k / (2^r_e - 1) - W_c and B = E^(1/2) X E^(1/2), adds
    g^H X g + tr(B) + sqrt(2 s2) rho + s2 mu <= s_m (1 - D/d)^2, the cone
    ||[vec(B); sqrt(2) E^(1/2) X g]|| <= rho and mu I - B >= 0, mu >= 0.
    """
    b = 2.0 ** sd.iu_rate - 1.0
    X = lift(Wp[k]) * (1.0 / b) - lift(Wc)
    F = sd.E_half[m]
    B = X.cong_by(F)
    rho = prog.scalar(f"{tag}rho{k}_{m}")
    mu = prog.scalar(f"{tag}mu{k}_{m}", lb=0.0)
    row = sd.s_iu_worst[m] * (1.0 - safety) - X.quad(sd.g[m]) - B.trace_with() \
        - math.sqrt(2.0 * sd.sigma2) * rho - sd.sigma2 * mu
    if margin is not None:
        row = row - margin
    out = {"row": prog.add_linear(row, ">=", 0.0, f"{tag}iu_outage{k}_{m}")}
    out["soc"] = prog.add_soc(rho, VecAffine.stack(B.vec(), X.apply(sd.g[m], left=F) * math.sqrt(2.0)),
                              f"{tag}iu_outage_soc{k}_{m}")
    out["lmi"] = prog.add_lmi(mu.times(np.eye(sd.r)) - B, f"{tag}iu_outage_eig{k}_{m}")
    return out


# ---------------------------------------------------------------------------
# common stream


def common_sinr_floor(R_c: float) -> float:
    return 2.0 ** R_c - 1.0


def common_sinrs(sd: SlotData, Wc: np.ndarray, Wp: Sequence[np.ndarray]) -> np.ndarray:
    """Common-stream SINR of each LU under the averaged model H = hh^H + eps^2 I
    and at the nominal channel; shape (K, 2)."""
    S = sum(Wp)
    out = np.zeros((sd.K, 2))
    for k in range(sd.K):
        h = sd.h[k]
        e2 = sd.eps_lu[k] ** 2
        sig = float(np.real(np.vdot(h, Wc @ h)))
        intf = float(np.real(np.vdot(h, S @ h)))
        out[k, 0] = (sig + e2 * float(np.real(np.trace(Wc)))) / (intf + e2 * float(np.real(np.trace(S))) + sd.s_lu[k])
        out[k, 1] = sig / (intf + sd.s_lu[k])
    return out


def common_rate_cap(sd: SlotData, Wc: np.ndarray, Wp: Sequence[np.ndarray]) -> float:
    return float(np.log2(1.0 + max(common_sinrs(sd, Wc, Wp).min(), 0.0)))


def build_common_rate(prog: Program, sd: SlotData, Wc: Stream, Wp: Sequence[Stream], R_c: float,
                      tag: str = "", margin: Optional[Affine] = None, weights=None) -> list:
    """tr(H_k W_c) >= g0 (sum_i tr(H_k W_i) + s_k), plus the same row at the nominal channel.

    ``margin`` (times ``weights[k]``) is subtracted from every row.
    """
    g0 = common_sinr_floor(R_c)
    Wc = lift(Wc)
    S = stream_sum(MatAffine(sd.r), Wp)
    rows = []
    for k in range(sd.K):
        h = sd.h[k]
        e2 = float(sd.eps_lu[k] ** 2)
        for model, extra in (("avg", e2), ("nom", 0.0)):
            lhs = Wc.quad(h) + extra * Wc.trace_with()
            rhs = (S.quad(h) + extra * S.trace_with() + sd.s_lu[k]) * g0
            row = lhs - rhs
            if margin is not None:
                row = row - margin * (1.0 if weights is None else float(weights[k]))
            rows.append(prog.add_linear(row, ">=", 0.0, f"{tag}common_{model}{k}"))
    return rows


# ---------------------------------------------------------------------------
# S-procedure certificates


def build_sproc_min_sinr(prog: Program, sd: SlotData, k: int, Wp: Sequence[Stream], chi: Scalar,
                         tag: str = "", margin: Optional[Affine] = None) -> SprocCertificate:
    """Worst-case private SINR of LU k over ||dh|| <= eps_k is at least chi.

    D = [I h]^H (W_k - chi S_k) [I h] + diag(theta I, -s chi - theta eps^2) >= 0.
    """
    r = sd.r
    negU = lift(Wp[k]) - scale(chi, _others(Wp, k, r))
    theta = prog.scalar(f"{tag}theta{k}", lb=0.0)
    eps2 = float(sd.eps_lu[k] ** 2)
    D = negU.cong_by(_augment(sd.h[k]))
    D = D + theta.times(np.diag(np.r_[np.ones(r), -eps2]))
    corner = Affine.lift(chi) * (-float(sd.s_lu[k]))
    if margin is not None:
        corner = corner - margin
    D = D + corner.times(_corner(r + 1))
    return SprocCertificate(f"{tag}theta{k}", prog.add_lmi(D, f"{tag}min_sinr{k}"))


def build_sproc_eavesdrop(prog: Program, sd: SlotData, k: int, m: int, Wc: Stream, Wp: Sequence[Stream],
                          iota: Scalar, tag: str = "", margin: Optional[Affine] = None) -> list:
    """Worst-case eavesdrop SINR of IU m on stream k is at most iota.

    F: g^H (W_k - iota W_c) g <= pi for all ||dg|| <= tau_m (multiplier zeta);
    P: pi <= iota s_m (1 + x)^2 for all |x| <= D_m/d_m (multiplier beta),
    i.e. [[beta + iota s, iota s], [iota s, iota s - pi - beta delta^2]] >= 0.
    """
    r = sd.r
    Wt = lift(Wp[k]) - scale(iota, Wc)
    zeta = prog.scalar(f"{tag}zeta{k}_{m}", lb=0.0)
    beta = prog.scalar(f"{tag}beta{k}_{m}", lb=0.0)
    pi = prog.scalar(f"{tag}pi{k}_{m}")
    tau2 = float(sd.tau[m] ** 2)
    F = (-Wt).cong_by(_augment(sd.g[m])) + zeta.times(np.diag(np.r_[np.ones(r), -tau2]))
    corner = pi if margin is None else pi - margin
    F = F + corner.times(_corner(r + 1))
    s = float(sd.s_iu[m])
    d2 = float(sd.delta[m] ** 2)
    P = (Affine.lift(iota) * s).times(np.ones((2, 2))) + beta.times(np.diag([1.0, -d2])) \
        + pi.times(np.diag([0.0, -1.0]))
    return [SprocCertificate(f"{tag}zeta{k}_{m}", prog.add_lmi(F, f"{tag}eavesdrop{k}_{m}")),
            SprocCertificate(f"{tag}beta{k}_{m}", prog.add_lmi(P, f"{tag}distance{k}_{m}"))]


# ---------------------------------------------------------------------------
# SCA and piecewise-linear envelopes


def sca_log_linearize(iota: Scalar, anchor: float) -> Scalar:
    """Tangent of log2(1 + iota) at the anchor (a global upper bound)."""
    if anchor < 0:
        raise ValueError("anchor must be nonnegative")
    slope = 1.0 / (math.log(2.0) * (1.0 + anchor))
    return (iota - anchor) * slope + math.log2(1.0 + anchor)


def secant_rows(f, grid) -> list[tuple[float, float]]:
    """(slope, intercept) of the chord of f over every consecutive grid pair."""
    x = np.asarray(grid, dtype=float)
    y = f(x)
    out = []
    for i in range(x.size - 1):
        s = (y[i + 1] - y[i]) / (x[i + 1] - x[i])
        out.append((float(s), float(y[i] - s * x[i])))
    return out


def a_grid() -> np.ndarray:
    lo, hi, n = A_GRID
    return np.geomspace(lo, hi, n + 1)


def chi_grid() -> np.ndarray:
    lo, hi, n = CHI_GRID
    return np.r_[0.0, np.geomspace(lo, hi, n)]


def inv_log_term(a):
    """log2(1 + 1/a), convex and decreasing in a > 0."""
    return np.log2(1.0 + 1.0 / np.asarray(a, dtype=float))


def log_term(x):
    return np.log2(1.0 + np.asarray(x, dtype=float))


def interp_upper_inv(a: float) -> float:
    """Piecewise-linear majorant of log2(1 + 1/a) used by the program."""
    g = a_grid()
    return float(np.interp(a, g, inv_log_term(g)))


def interp_lower_log(x: float) -> float:
    """Piecewise-linear minorant of log2(1 + x) used by the program."""
    g = chi_grid()
    return float(np.interp(x, g, log_term(g)))


# ---------------------------------------------------------------------------
# sensing and power


def build_detection(prog: Program, sd: SlotData, Wsum: MatAffine, tag: str = "") -> Optional[int]:
    """Total slot power large enough for the worst-case detection target."""
    if sd.min_power <= 0:
        return None
    return prog.add_linear(Wsum.trace_with(), ">=", sd.min_power, f"{tag}detection")


def build_power_and_beampattern(prog: Program, sd: SlotData, Wsum: MatAffine, tag: str = "") -> dict:
    """Per-element (or total, for the conventional baseline) power rows and the
    Frobenius-ball beampattern constraint around P_t a a^H."""
    rows = []
    if sd.power_rows == "element":
        for n, u in enumerate(sd.element_rows):
            rows.append(prog.add_linear(Wsum.quad(u), "<=", sd.power_cap, f"{tag}power{n}"))
    elif sd.power_rows == "trace":
        rows.append(prog.add_linear(Wsum.trace_with(), "<=", sd.power_cap * sd.N, f"{tag}power_total"))
    else:
        raise ValueError("power_rows must be 'element' or 'trace'")
    target = np.outer(sd.a, sd.a.conj())
    soc = prog.add_soc(Affine(sd.bp_radius), (Wsum - target).vec(), f"{tag}beampattern")
    return {"power": rows, "beampattern": soc}


# ---------------------------------------------------------------------------
# second block


@dataclass
class Block2Anchor:
    """Inputs of one slot of the second block besides the covariances."""
    weight: float               # t[l] / T
    iota_anchor: np.ndarray     # (K,) SCA anchors
    safety: float = 1e-6


def build_block2_rows(prog: Program, sd: SlotData, Wc: np.ndarray, Wp: Sequence[np.ndarray],
                      anchor: Block2Anchor, tag: str = "") -> dict:
    """Rows of the second block for one slot with the covariances fixed.

    Variables per LU: C (common share), a (split factor), chi (robust SINR),
    iota (robust eavesdrop SINR), o and omega (objective epigraph terms)
    plus the certificate multipliers. Returns the objective contribution
    weight * sum_k (o_k - omega_k) and the handles needed for re-checks.
    """
    K, M = sd.K, sd.M
    R_c = common_rate_cap(sd, Wc, Wp)
    a_chords = secant_rows(inv_log_term, a_grid())
    chi_chords = secant_rows(log_term, chi_grid())
    chi_max = float(chi_grid()[-1])
    lo, hi, _ = A_GRID
    handles = {"R_c": R_c, "vars": [], "split_row": None, "floor": []}
    obj = Affine()
    C_sum = Affine()
    for k in range(K):
        C = prog.scalar(f"{tag}C{k}", lb=0.0)
        a = prog.scalar(f"{tag}a{k}", lb=lo, ub=hi)
        chi = prog.scalar(f"{tag}chi{k}", lb=0.0, ub=chi_max)
        iota = prog.scalar(f"{tag}iota{k}", lb=0.0)
        o = prog.scalar(f"{tag}o{k}")
        om = prog.scalar(f"{tag}omega{k}")
        for s, b in a_chords:
            prog.add_linear(sd.lu_rate - (a * s + b) - C, ">=", 0.0, f"{tag}split{k}")
        # the covariances fixed here guarantee a private SINR of 1 / a_floor; the
        # common share has to cover whatever that leaves of the rate target
        a_floor = split_floor(sd, k, Wp, 0.5 * anchor.safety)
        need = sd.lu_rate - float(inv_log_term(a_floor)) if math.isfinite(a_floor) else sd.lu_rate
        handles["floor"].append((prog.add_linear(C, ">=", need, f"{tag}split_floor{k}"), a_floor))
        for s, b in chi_chords:
            prog.add_linear(C + chi * s + b - o, ">=", 0.0, f"{tag}rate_env{k}")
        prog.add_linear(om - sca_log_linearize(iota, float(anchor.iota_anchor[k])), ">=", 0.0, f"{tag}sca{k}")
        build_lu_outage(prog, sd, k, Wp, a=a, tag=tag, safety=anchor.safety)
        build_sproc_min_sinr(prog, sd, k, Wp, chi, tag=tag)
        for m in range(M):
            build_sproc_eavesdrop(prog, sd, k, m, Wc, Wp, iota, tag=tag)
        obj = obj + (o - om) * anchor.weight
        C_sum = C_sum + C
        handles["vars"].append({"C": f"{tag}C{k}", "a": f"{tag}a{k}", "chi": f"{tag}chi{k}",
                                "iota": f"{tag}iota{k}", "o": f"{tag}o{k}", "omega": f"{tag}omega{k}"})
    handles["split_row"] = prog.add_linear(C_sum, "<=", R_c, f"{tag}common_split")
    handles["objective"] = obj
    return handles


def diagnostic_split_bound(sd: SlotData, k: int, Wp: Sequence[np.ndarray], a: float) -> dict:
    """Closed-form quantities of the linearized split bound, reported only.

    tp1 and tp2 are the coefficients of a in the exact Bernstein row
    row(a) = a * tp1 - tp2 at the current covariances when the spread and
    eigenvalue terms are frozen at their value for the given a.
    """
    sig = float(sd.sigma_lu[k])
    h = sd.h[k]
    S = sum((W for i, W in enumerate(Wp) if i != k), np.zeros_like(Wp[k]))
    Wbar = a * Wp[k] - S
    A = sig ** 2 * Wbar
    spread = math.sqrt(2.0 * sd.sigma1) * float(np.linalg.norm(np.r_[A.ravel(), math.sqrt(2.0) * sig * (Wbar @ h)]))
    eig = sd.sigma1 * max(float(-np.linalg.eigvalsh(A)[0]), 0.0)
    tp1 = float(np.real(np.vdot(h, Wp[k] @ h) + sig ** 2 * np.trace(Wp[k])))
    tp2 = float(np.real(np.vdot(h, S @ h) + sig ** 2 * np.trace(S))) + spread + eig + float(sd.s_lu[k])
    return {"tp1": tp1, "tp2": tp2, "a_floor": tp2 / tp1 if tp1 > 0 else math.inf}
