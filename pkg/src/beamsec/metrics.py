"""Communication and sensing figures of merit for a concrete beam solution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SOLUTION_FORMAT = "beamsec.solution/1.0"


@dataclass
class BeamSolution:
    """Per-slot covariances (watts), extracted beamformers and schedule."""
    W_c: np.ndarray                    # (L, N, N)
    W_p: np.ndarray                    # (L, K, N, N)
    t: np.ndarray                      # (L,) seconds
    C: np.ndarray                      # (L, K) bps/Hz
    period: float
    w_c: Optional[np.ndarray] = None   # (L, N)
    w_p: Optional[np.ndarray] = None   # (L, K, N)
    objective_trace: list = field(default_factory=list)
    slacks: list = field(default_factory=list)
    extraction: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def L(self) -> int:
        return self.W_c.shape[0]

    @property
    def K(self) -> int:
        return self.W_p.shape[1]

    @property
    def N(self) -> int:
        return self.W_c.shape[1]

    def covariances(self, slot: int) -> list[np.ndarray]:
        """[W_c, W_1, ..., W_K] for one slot."""
        return [self.W_c[slot]] + [self.W_p[slot, k] for k in range(self.K)]

    def total_covariance(self, slot: int) -> np.ndarray:
        return self.W_c[slot] + self.W_p[slot].sum(axis=0)

    def element_power(self, slot: int) -> np.ndarray:
        return np.real(np.diag(self.total_covariance(slot)))

    def slot_power(self, slot: int) -> float:
        return float(np.real(np.trace(self.total_covariance(slot))))

    def with_rank_one(self) -> "BeamSolution":
        """Copy whose covariances are the outer products of the extracted vectors."""
        if self.w_c is None or self.w_p is None:
            raise ValueError("solution carries no rank-one extraction")
        W_c = np.einsum("ln,lm->lnm", self.w_c, self.w_c.conj())
        W_p = np.einsum("lkn,lkm->lknm", self.w_p, self.w_p.conj())
        return BeamSolution(W_c=W_c, W_p=W_p, t=self.t.copy(), C=self.C.copy(), period=self.period,
                            w_c=self.w_c, w_p=self.w_p, objective_trace=list(self.objective_trace),
                            slacks=self.slacks, extraction=self.extraction, info=dict(self.info))


@dataclass
class LinkReport:
    gamma_c: np.ndarray    # (L, K)
    gamma_p: np.ndarray    # (L, K)
    R_ck: np.ndarray       # (L, K)
    R_pk: np.ndarray       # (L, K)
    R_c: np.ndarray        # (L,)
    C: np.ndarray          # (L, K)
    R_k: np.ndarray        # (L, K)
    gamma_km: np.ndarray   # (L, K, M)
    R_km: np.ndarray       # (L, K, M)
    secrecy_slot: np.ndarray   # (L,)
    eavesdrop_slot: np.ndarray  # (L,)
    secrecy: float
    eavesdrop: float
    split_feasible: np.ndarray  # (L,) bool


def _gain(h: np.ndarray, X: np.ndarray) -> float:
    """h^H X h for a covariance X, or |h^H x|^2 for a vector x."""
    if X.ndim == 1:
        return float(abs(np.vdot(h, X)) ** 2)
    return float(np.real(np.vdot(h, X @ h)))


def _streams(sol: BeamSolution, slot: int, use: str):
    if use == "beamformer":
        if sol.w_c is None:
            raise ValueError("solution carries no rank-one extraction")
        return sol.w_c[slot], [sol.w_p[slot, k] for k in range(sol.K)]
    return sol.W_c[slot], [sol.W_p[slot, k] for k in range(sol.K)]


def link_sinrs(h: np.ndarray, sol: BeamSolution, noise: float, slot: int, k: int,
               use: str = "covariance") -> tuple[float, float]:
    """Common and private SINR of LU k (common stream decoded first)."""
    wc, wp = _streams(sol, slot, use)
    private = [_gain(h, w) for w in wp]
    gamma_c = _gain(h, wc) / (sum(private) + noise)
    gamma_p = private[k] / (sum(private) - private[k] + noise)
    return gamma_c, gamma_p


def achievable_rates(gamma):
    return np.log2(1.0 + np.asarray(gamma, dtype=float))


def common_rate(rates: Sequence[float], C: Optional[Sequence[float]] = None, tol: float = 0.0):
    """R_c = min_k R_c,k and whether the split C fits under it."""
    r_c = float(np.min(rates))
    if C is None:
        return r_c, True
    return r_c, bool(float(np.sum(C)) <= r_c + tol)


def eavesdrop_rate(g: np.ndarray, sol: BeamSolution, noise: float, k: int, slot: int,
                   use: str = "covariance") -> float:
    """Rate at which an IU with channel g overhears private stream k (common stream as AN)."""
    wc, wp = _streams(sol, slot, use)
    gamma = _gain(g, wp[k]) / (_gain(g, wc) + noise)
    return float(math.log2(1.0 + gamma))


def secrecy_sum_rate(R_k, R_km, t=None, T=None):
    """Sum over users of [R_k - max_m R_k,m]^+.

    With shapes (K,) and (K, M) a single slot value is returned; with (L, K)
    and (L, K, M) plus durations ``t`` and period ``T`` the period average.
    """
    R_k = np.asarray(R_k, dtype=float)
    R_km = np.asarray(R_km, dtype=float)
    per = np.maximum(R_k - R_km.max(axis=-1), 0.0).sum(axis=-1)
    if t is None:
        return per
    return float(np.dot(np.asarray(t, dtype=float), per) / T)


def chi2_cdf2(x):
    """CDF of the chi-square distribution with two degrees of freedom."""
    return 1.0 - np.exp(-np.asarray(x, dtype=float) / 2.0)


def detection_threshold(p_fa: float, sigma_r2: float) -> float:
    if not 0 < p_fa < 1:
        raise ValueError("P_FA must lie in (0, 1)")
    return sigma_r2 / 2.0 * (-2.0 * math.log(p_fa))


def detection_probability(p, varsigma, delta_th: float, sigma_r2: float):
    """Closed-form detection probability under the chi-square(2) statistic."""
    x = (2.0 * delta_th / sigma_r2) / (1.0 + np.asarray(p, dtype=float) * varsigma)
    out = 1.0 - chi2_cdf2(x)
    return float(out) if np.ndim(out) == 0 else out


def required_gain_threshold(p_fa: float, p_d: float) -> float:
    """Smallest p*varsigma giving detection probability p_d at false-alarm p_fa."""
    if not (0 < p_fa < 1 and 0 < p_d < 1):
        raise ValueError("P_FA and P_D must lie in (0, 1)")
    return math.log(p_fa) / math.log(p_d) - 1.0


def sensing_gain(reflection_var: float, match: float, n: int, sigma_r2: float) -> float:
    """Normalized sensing gain varsigma = sigma_alpha^2 |c c_hat^H|^2 / (N^2 sigma_r^2)."""
    return reflection_var * match / (n ** 2 * sigma_r2)


def desired_covariance(a: np.ndarray, p_t: float) -> np.ndarray:
    return p_t * np.outer(a, a.conj())


def beampattern_residual(sol: BeamSolution, R: np.ndarray, slot: int) -> float:
    return float(np.linalg.norm(sol.total_covariance(slot) - R, "fro") ** 2)


def beampattern_gain(sol: BeamSolution, slot: int, thetas, phis, geom, rf, db: bool = True):
    """Gain a^H (sum_i W_i) a on a (theta, phi) grid; dB relative to the grid peak."""
    from .channel import steering_batch

    T, P = np.meshgrid(np.asarray(thetas, float), np.asarray(phis, float), indexing="ij")
    A = steering_batch(T, P, geom, rf.spacing, rf.wavelength)
    X = sol.total_covariance(slot)
    gain = np.real(np.einsum("...n,nm,...m->...", A.conj(), X, A))
    gain = np.maximum(gain, 0.0)
    if not db:
        return gain
    peak = gain.max()
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.where(gain > 0, gain / peak, 1e-300))


def link_report(sol: BeamSolution, lu_channels: Sequence[np.ndarray], iu_channels: Sequence[np.ndarray],
                noise_lu: float, noise_iu: float, use: str = "covariance", tol: float = 1e-8) -> LinkReport:
    """Evaluate every rate of every slot at the given channel realizations."""
    L, K, M = sol.L, sol.K, len(iu_channels)
    gc = np.zeros((L, K))
    gp = np.zeros((L, K))
    gkm = np.zeros((L, K, M))
    for l in range(L):
        for k, h in enumerate(lu_channels):
            gc[l, k], gp[l, k] = link_sinrs(h, sol, noise_lu, l, k, use)
        wc, wp = _streams(sol, l, use)
        for m, g in enumerate(iu_channels):
            jam = _gain(g, wc) + noise_iu
            for k in range(K):
                gkm[l, k, m] = _gain(g, wp[k]) / jam
    R_ck = achievable_rates(gc)
    R_pk = achievable_rates(gp)
    R_c = R_ck.min(axis=1)
    R_k = sol.C + R_pk
    R_km = achievable_rates(gkm)
    sec = secrecy_sum_rate(R_k, R_km)
    eav = R_km.max(axis=2).sum(axis=1)
    T = sol.period
    return LinkReport(gamma_c=gc, gamma_p=gp, R_ck=R_ck, R_pk=R_pk, R_c=R_c, C=sol.C.copy(), R_k=R_k,
                      gamma_km=gkm, R_km=R_km, secrecy_slot=sec, eavesdrop_slot=eav,
                      secrecy=float(np.dot(sol.t, sec) / T), eavesdrop=float(np.dot(sol.t, eav) / T),
                      split_feasible=sol.C.sum(axis=1) <= R_c + tol)


def average_power(sol: BeamSolution) -> float:
    """Time-averaged radiated power (watts) over the period."""
    p = np.array([sol.slot_power(l) for l in range(sol.L)])
    return float(np.dot(sol.t, p) / sol.period)


def static_power(model, n_elements: int, architecture: str = "tris") -> float:
    """Static power of the declared model: a TRIS transmitter has one feed RF
    chain plus its own static draw; a conventional array has one chain per
    element."""
    if architecture == "tris":
        return model.static_tris + model.rf_chain
    if architecture == "trsma":
        return n_elements * model.rf_chain
    raise ValueError(f"unknown architecture {architecture!r}")


def efficiency_measures(link: LinkReport, sol: BeamSolution, bandwidth: float,
                        static_power: float = 0.0) -> tuple[float, float, float]:
    """(SSE in bps/Hz, SEE in bit/J, IEE in bit/J)."""
    total = average_power(sol) + static_power
    if not total > 0:
        raise ZeroDivisionError("total power is zero; efficiency undefined")
    sse = link.secrecy
    return sse, sse * bandwidth / total, link.eavesdrop * bandwidth / total


# ---------------------------------------------------------------------------
# serialization

def _enc(a) -> dict:
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"shape": list(a.shape), "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist()}
    return {"shape": list(a.shape), "re": a.ravel().astype(float).tolist()}


def _dec(d) -> np.ndarray:
    re = np.asarray(d["re"], dtype=float)
    out = re + 1j * np.asarray(d["im"], dtype=float) if "im" in d else re
    return out.reshape(d["shape"])


def _plain(x):
    if isinstance(x, np.ndarray):
        return {"__array__": _enc(x)}
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _unplain(x):
    if isinstance(x, dict):
        if "__array__" in x:
            return _dec(x["__array__"])
        return {k: _unplain(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_unplain(v) for v in x]
    return x


def solution_to_dict(sol: BeamSolution) -> dict:
    out = {
        "format": SOLUTION_FORMAT,
        "W_c": _enc(sol.W_c),
        "W_p": _enc(sol.W_p),
        "t": _enc(sol.t),
        "C": _enc(sol.C),
        "period": sol.period,
        "objective_trace": [float(v) for v in sol.objective_trace],
        "slacks": _plain(sol.slacks),
        "extraction": _plain(sol.extraction),
        "info": _plain(sol.info),
    }
    if sol.w_c is not None:
        out["w_c"] = _enc(sol.w_c)
        out["w_p"] = _enc(sol.w_p)
    return out


def solution_from_dict(d: dict) -> BeamSolution:
    fmt = d.get("format", "")
    name, _, version = fmt.partition("/")
    if name != SOLUTION_FORMAT.split("/")[0] or version.split(".")[0] != SOLUTION_FORMAT.split("/")[1].split(".")[0]:
        raise ValueError(f"unsupported solution format {fmt!r}")
    return BeamSolution(
        W_c=_dec(d["W_c"]), W_p=_dec(d["W_p"]), t=_dec(d["t"]), C=_dec(d["C"]), period=float(d["period"]),
        w_c=_dec(d["w_c"]) if "w_c" in d else None, w_p=_dec(d["w_p"]) if "w_p" in d else None,
        objective_trace=list(d.get("objective_trace", [])), slacks=_unplain(d.get("slacks", [])),
        extraction=_unplain(d.get("extraction", [])), info=_unplain(d.get("info", {})),
    )
