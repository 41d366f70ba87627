"""Alternating optimization of the robust secure ISAC design.

Block 1 fixes the rate-split and certificate targets (C, a, chi, iota, o,
omega) and optimizes the slot durations and the covariances; block 2 fixes
the covariances and durations and optimizes the rest. Both blocks are
conic programs over all slots at once. Because block 1 has no direct
objective dependence on the covariances, it maximizes weighted first-order
slack in the constraints that limit block 2 (robust SINR, eavesdrop bound,
common rate and LU outage rows); the weights are the marginal objective
gains of relaxing each row, so block 2 can convert the slack into objective.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import conic
from .channel import (ChannelEstimate, iu_nominal_channel, lu_nominal_channel, steering_batch,
                      upa_steering)
from .conic import Affine, Program
from .metrics import BeamSolution, required_gain_threshold
from .scenario import Scenario, validate_scenario, ScenarioError
from .transforms import (Block2Anchor, SlotData, build_block2_rows, build_common_rate, build_detection,
                         build_iu_outage, build_lu_outage, build_power_and_beampattern,
                         build_sproc_eavesdrop, build_sproc_min_sinr, common_rate_cap, common_sinrs,
                         diagnostic_split_bound, interp_lower_log, lu_outage_margin, split_factor,
                         stream_sum, SplitError)
from .uncertainty import UncertaintySet, aggregate_bound

log = logging.getLogger("beamsec.bcd")

POWER_SLACK = 1e-7        # per-element rows are solved against (1 - POWER_SLACK) P_t
BERNSTEIN_SAFETY = 1e-6   # relative safety on the LU outage rows
MARGIN_FLOOR = 1e-3       # smallest weight of a block-1 slack term (relative to t/T)
EXPLORE_RADIUS = 0.25     # initial trust radius of the signed-margin block-1 step
EXPLORE_MAX = 0.5
EXPLORE_MIN = 1e-3        # below this radius only the monotone step is taken
ACCEPT_GAIN = 1e-9        # relative gain needed to accept an exploration step


class BcdError(RuntimeError):
    """A subproblem failed; ``state`` holds the last consistent iterate."""

    def __init__(self, message: str, state=None, diagnostics=None):
        super().__init__(message)
        self.state = state
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------------------
# problem data


@dataclass
class ProblemData:
    scenario: Scenario
    seed: int
    lu: list                   # ChannelEstimate per LU (physical)
    iu: list                   # ChannelEstimate per IU (unit-free LoS nominal)
    iu_sets: list              # UncertaintySet per IU
    iu_reports: list           # ElementBoundReport per IU
    scan: np.ndarray           # (L, N) steering vectors of the slot scan directions
    slots: list                # SlotData per slot
    detection_target: np.ndarray   # I_m
    sensing_gain: np.ndarray       # worst-case varsigma_m at 1 W
    power_rows: str = "element"

    @property
    def p_t(self) -> float:
        return self.scenario.rf.per_element_power

    def desired_covariance(self, l: int) -> np.ndarray:
        return self.p_t * np.outer(self.scan[l], self.scan[l].conj())


def _basis(cols: np.ndarray, mode: str) -> np.ndarray:
    n = cols.shape[0]
    if mode == "full":
        return np.eye(n, dtype=complex)
    U, s, _ = np.linalg.svd(cols, full_matrices=False)
    rank = int(np.sum(s > 1e-10 * s[0]))
    Q = U[:, :rank]
    # fix the column phases so the basis is reproducible
    piv = np.argmax(np.abs(Q), axis=0)
    ph = Q[piv, np.arange(rank)]
    return Q * (np.abs(ph) / ph)


def _worst_match(user, uset: UncertaintySet, scenario: Scenario) -> float:
    """min |a(theta + dt, phi + dp)^H a(theta, phi)|^2 over the 3 x 3 angle grid."""
    rf, geom = scenario.rf, scenario.array
    a0 = upa_steering(user.pitch, user.azimuth, geom, rf.spacing, rf.wavelength)
    best = np.inf
    for s in (-1, 0, 1):
        for u in (-1, 0, 1):
            a = upa_steering(user.pitch + s * uset.pitch_bound, user.azimuth + u * uset.azimuth_bound,
                             geom, rf.spacing, rf.wavelength)
            best = min(best, abs(np.vdot(a, a0)) ** 2)
    return float(best)


def worst_sensing_gain(user, uset: UncertaintySet, scenario: Scenario) -> float:
    """varsigma at 1 W total power, worst case over angle and distance error."""
    rf = scenario.rf
    n = scenario.N
    d = user.distance + uset.distance_bound
    var = rf.rcs * rf.wavelength ** 2 / ((4.0 * math.pi) ** 3 * d ** 4)
    return var * _worst_match(user, uset, scenario) / (n ** 2 * rf.processing_noise)


def build_problem(scenario: Scenario, seed: int = 0, power_rows: str = "element") -> ProblemData:
    """Channels, uncertainty sets and per-slot reduced data for a scenario."""
    v = validate_scenario(scenario)
    if v:
        raise ScenarioError(v)
    rf, geom, err, out = scenario.rf, scenario.array, scenario.errors, scenario.outage
    N, K, M, L = scenario.N, scenario.K, scenario.M, scenario.L
    p_t = rf.per_element_power
    lu = [lu_nominal_channel(u, rf, geom, [int(seed), 0, k], radius=err.lu_radius, sigma=err.lu_sigma)
          for k, u in enumerate(scenario.lus)]
    iu_sets, reports, iu = [], [], []
    for u in scenario.ius:
        uset = UncertaintySet(err.element_bounds(N), err.iu_distance_bound, err.iu_pitch_bound,
                              err.iu_azimuth_bound)
        tau, rep = aggregate_bound(uset, u, geom, rf)
        iu_sets.append(uset)
        reports.append(rep)
        iu.append(iu_nominal_channel(u, rf, geom, rep.element_bound))
    scan = np.array([upa_steering(t, p, geom, rf.spacing, rf.wavelength) for t, p in scenario.slots.scan_directions])

    h = np.array([e.nominal / e.path_loss for e in lu])
    s_lu = np.array([rf.noise_power_lu / (e.path_loss ** 2 * p_t) for e in lu])
    g = np.array([e.nominal for e in iu])
    s_iu = np.array([rf.noise_power_iu / (e.path_loss ** 2 * p_t) for e in iu])
    delta = np.array([err.iu_distance_bound / u.distance for u in scenario.ius])
    tau = np.array([r.tau for r in reports])
    E = [np.diag((r.element_bound / 3.0) ** 2) for r in reports]

    if scenario.detection_mode == "explicit":
        target = np.full(M, float(scenario.detection_threshold))
    else:
        target = np.full(M, required_gain_threshold(out.p_fa, out.p_d))
    gain = np.array([worst_sensing_gain(u, s, scenario) for u, s in zip(scenario.ius, iu_sets)])
    min_power = float(np.max(target / (gain * p_t))) if M else 0.0

    slots = []
    for l in range(L):
        Q = _basis(np.column_stack([*h, *g, scan[l]]), scenario.bcd.subspace)
        Qh = Q.conj().T
        E_half = []
        for Em in E:
            F = Qh @ Em @ Q
            w, V = np.linalg.eigh(0.5 * (F + F.conj().T))
            E_half.append((V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T)
        slots.append(SlotData(
            slot=l, Q=Q, h=h @ Q.conj(), g=g @ Q.conj(), a=Qh @ scan[l], s_lu=s_lu,
            eps_lu=np.full(K, err.lu_radius), sigma_lu=np.full(K, err.sigma_he), s_iu=s_iu, delta=delta,
            tau=tau, E_half=np.array(E_half), lu_rate=out.lu_rate, iu_rate=out.iu_rate,
            sigma1=out.sigma1, sigma2=out.sigma2,
            bp_radius=math.sqrt(scenario.beampattern_tolerance) * N * (1.0 - POWER_SLACK),
            min_power=min_power, power_rows=power_rows, power_cap=1.0 - POWER_SLACK))
    return ProblemData(scenario=scenario, seed=seed, lu=lu, iu=iu, iu_sets=iu_sets, iu_reports=reports,
                       scan=scan, slots=slots, detection_target=target, sensing_gain=gain,
                       power_rows=power_rows)


# ---------------------------------------------------------------------------
# state


@dataclass
class BcdState:
    iteration: int
    Zc: np.ndarray           # (L, r, r) reduced normalized covariances
    Zp: np.ndarray           # (L, K, r, r)
    t: np.ndarray            # (L,) seconds
    C: np.ndarray            # (L, K)
    a: np.ndarray
    chi: np.ndarray
    iota: np.ndarray
    o: np.ndarray
    omega: np.ndarray
    anchor: np.ndarray       # SCA anchors
    history: list = field(default_factory=list)
    statuses: list = field(default_factory=list)
    duals: dict = field(default_factory=dict)
    stalled: list = field(default_factory=list)
    block1_value: float = math.nan   # optimum of the last block-1 program

    def block2(self) -> dict:
        return {k: getattr(self, k).copy() for k in ("C", "a", "chi", "iota", "o", "omega")}

    def set_block2(self, vals: dict) -> None:
        for k, v in vals.items():
            setattr(self, k, np.array(v, dtype=float))

    def copy(self) -> "BcdState":
        out = BcdState(self.iteration, self.Zc.copy(), self.Zp.copy(), self.t.copy(), **self.block2(),
                       anchor=self.anchor.copy(), history=list(self.history), statuses=list(self.statuses),
                       duals={k: np.array(v) for k, v in self.duals.items()}, stalled=list(self.stalled),
                       block1_value=self.block1_value)
        return out


def objective(state: BcdState, period: float) -> float:
    return float(np.dot(state.t, (state.o - state.omega).sum(axis=1)) / period)


def _nominal_private_sinr(sd: SlotData, Zp, k: int) -> float:
    h = sd.h[k]
    sig = float(np.real(np.vdot(h, Zp[k] @ h)))
    intf = sum(float(np.real(np.vdot(h, Z @ h))) for i, Z in enumerate(Zp) if i != k)
    return sig / (intf + sd.s_lu[k])


def _nominal_eavesdrop_sinr(sd: SlotData, Zc, Zp, k: int) -> float:
    vals = [float(np.real(np.vdot(g, Zp[k] @ g))) / (float(np.real(np.vdot(g, Zc @ g))) + sd.s_iu[m])
            for m, g in enumerate(sd.g)]
    return max(vals) if vals else 0.0


def initialize(problem: ProblemData) -> BcdState:
    """Matched-filter starting point (not necessarily feasible for the robust rows)."""
    sc = problem.scenario
    K, L = sc.K, sc.L
    share = 1.0 / (K + 1)
    Zc, Zp = [], []
    for sd in problem.slots:
        def scaled(v):
            peak = float(np.max(np.abs(sd.Q @ v) ** 2))
            return share / peak * np.outer(v, v.conj())
        Zc.append(scaled(sd.a))
        Zp.append([scaled(sd.h[k]) for k in range(K)])
    Zc, Zp = np.array(Zc), np.array(Zp)
    sl = sc.slots
    t = np.full(L, min(max(sl.period / L, sl.t_min), sl.t_max))
    C = np.zeros((L, K))
    a = np.full((L, K), split_factor(sc.outage.lu_rate, 0.0))
    chi = np.array([[_nominal_private_sinr(sd, Zp[l], k) for k in range(K)] for l, sd in enumerate(problem.slots)])
    iota = np.array([[_nominal_eavesdrop_sinr(sd, Zc[l], Zp[l], k) for k in range(K)]
                     for l, sd in enumerate(problem.slots)])
    o = C + np.log2(1.0 + chi)
    omega = np.log2(1.0 + iota)
    return BcdState(0, Zc, Zp, t, C, a, chi, iota, o, omega, anchor=iota.copy())


# ---------------------------------------------------------------------------
# solving helpers


def _solve(prog: Program, settings, what: str) -> conic.ConicSolution:
    sol = conic.solve(prog, tol=1e-8, solver=settings.solver)
    if sol.status == "numerical_failure":
        log.info("%s: numerical failure, retrying with relaxed tolerance", what)
        sol = conic.solve(prog, tol=1e-6, solver=settings.solver, accept_tol=1e-5)
    if sol.status == "numerical_failure" and settings.solver != "SCS":
        sol = conic.solve(prog, tol=1e-6, solver="SCS", accept_tol=1e-5)
    return sol


def _families(prog: Program) -> list:
    fam = {lab.rstrip("0123456789_").split("_", 1)[-1] for _, _, lab in prog.linear}
    fam |= {lab.split("_", 1)[-1].rstrip("0123456789_") for _, lab in prog.lmis}
    return sorted(fam)


def _stream_vars(prog: Program, sd: SlotData, tag: str):
    Wc = prog.matrix(f"{tag}Wc", sd.r)
    Wp = [prog.matrix(f"{tag}W{k}", sd.r) for k in range(sd.K)]
    return Wc, Wp


def _common_structure(prog, sd, Wc, Wp, tag):
    Wsum = stream_sum(Wc, Wp)
    build_power_and_beampattern(prog, sd, Wsum, tag)
    build_detection(prog, sd, Wsum, tag)
    for k in range(sd.K):
        for m in range(sd.M):
            build_iu_outage(prog, sd, k, m, Wc, Wp, tag)


def _dump(trace_dir: Optional[Path], name: str, prog: Program, sol: conic.ConicSolution) -> None:
    if trace_dir is None:
        return
    trace_dir.mkdir(parents=True, exist_ok=True)
    (trace_dir / f"{name}.program.json").write_text(prog.to_json())
    rec = {"status": sol.status, "objective": sol.objective,
           "stats": {k: v for k, v in sol.stats.items() if k != "error"}, "digest": prog.digest()}
    (trace_dir / f"{name}.result.json").write_text(json.dumps(rec, default=float, indent=1))


# ---------------------------------------------------------------------------
# phase 0


def _phase0_slot(problem: ProblemData, sd: SlotData, C: float, settings):
    tag = f"l{sd.slot}_"
    prog = Program(f"phase0_slot{sd.slot}")
    Wc, Wp = _stream_vars(prog, sd, tag)
    _common_structure(prog, sd, Wc, Wp, tag)
    build_common_rate(prog, sd, Wc, Wp, C * sd.K, tag)
    obj = Affine()
    for k in range(sd.K):
        build_lu_outage(prog, sd, k, Wp, C=C, tag=tag, safety=BERNSTEIN_SAFETY)
        marg = prog.scalar(f"{tag}margin{k}", lb=0.0)
        build_sproc_min_sinr(prog, sd, k, Wp, 0.0, tag, margin=marg)
        obj = obj + marg / float(sd.s_lu[k])
        for m in range(sd.M):
            obj = obj - Wp[k].quad(sd.g[m]) / float(sd.s_iu_worst[m])
    prog.maximize(obj)
    return prog, _solve(prog, settings, f"phase 0 slot {sd.slot}")


def phase0(problem: ProblemData, state: BcdState, trace_dir=None) -> BcdState:
    """Find covariances satisfying every covariance-only row (targets chi = 0, C small)."""
    settings = problem.scenario.bcd
    rate = problem.scenario.outage.lu_rate
    st = state.copy()
    for sd in problem.slots:
        last = None
        for C in (0.0, 0.25 * rate, 0.5 * rate, 0.75 * rate):
            prog, sol = _phase0_slot(problem, sd, C, settings)
            _dump(trace_dir, f"phase0_slot{sd.slot}_C{C:g}", prog, sol)
            last = (prog, sol)
            if sol.ok:
                break
        prog, sol = last
        if not sol.ok:
            raise BcdError(f"no feasible starting point in slot {sd.slot} ({sol.status})", st,
                           {"families": _families(prog), "status": sol.status})
        tag = f"l{sd.slot}_"
        st.Zc[sd.slot] = _psd(sol.values.matrices[f"{tag}Wc"])
        for k in range(sd.K):
            st.Zp[sd.slot, k] = _psd(sol.values.matrices[f"{tag}W{k}"])
            st.C[sd.slot, k] = C
            st.a[sd.slot, k] = split_factor(rate, C)
        st.chi[sd.slot] = 0.0
        st.iota[sd.slot] = [_nominal_eavesdrop_sinr(sd, st.Zc[sd.slot], st.Zp[sd.slot], k) for k in range(sd.K)]
        st.anchor[sd.slot] = st.iota[sd.slot]
        st.statuses.append(("phase0", sd.slot, sol.status))
    return st


def _psd(Z: np.ndarray) -> np.ndarray:
    Z = 0.5 * (Z + Z.conj().T)
    w, V = np.linalg.eigh(Z)
    return (V * np.clip(w, 0.0, None)) @ V.conj().T


# ---------------------------------------------------------------------------
# block 1


def _block1_weights(problem: ProblemData, st: BcdState) -> dict:
    T = problem.scenario.slots.period
    ln2 = math.log(2.0)
    out = {}
    for sd in problem.slots:
        l = sd.slot
        w_t = st.t[l] / T
        Zc, Zp = st.Zc[l], st.Zp[l]
        for k in range(sd.K):
            h = sd.h[k]
            intf = sum(float(np.real(np.vdot(h, Z @ h))) for i, Z in enumerate(Zp) if i != k)
            out[("chi", l, k)] = w_t / ((1.0 + st.chi[l, k]) * ln2 * (intf + sd.s_lu[k]))
            den = max((float(np.real(np.vdot(g, Zc @ g))) + sd.s_iu_worst[m] for m, g in enumerate(sd.g)),
                      default=1.0)
            out[("iota", l, k)] = w_t / ((1.0 + st.iota[l, k]) * ln2 * den)
            out[("lu", l, k)] = abs(st.duals.get("lu", np.zeros_like(st.C))[l, k])
        lam = abs(st.duals.get("split", np.zeros(len(problem.slots)))[l])
        g0 = 2.0 ** st.C[l].sum() - 1.0
        out[("common", l)] = lam / ((1.0 + g0) * ln2)
    floor = MARGIN_FLOOR * min(st.t) / T
    return {k: max(v, floor) for k, v in out.items()}


def solve_block1(problem: ProblemData, state: BcdState, trace_dir=None, radius: float = 0.0) -> BcdState:
    """W and t step with the block-2 variables held fixed.

    Each robust row carries a margin weighted by the first-order change of
    the objective. With ``radius = 0`` margins are nonnegative, so the
    block-2 point stays feasible and the step is monotone. A positive radius
    lets a margin go down to ``-radius`` times the scale of its row, which
    lets the step trade one rate against another; the caller then has to
    accept or reject the step on the block-2 objective.
    """
    sc = problem.scenario
    T = sc.slots.period
    settings = sc.bcd
    st = state.copy()
    weights = _block1_weights(problem, st)
    prog = Program(f"block1_it{st.iteration}")
    frac = [prog.scalar(f"l{l}_t", lb=sc.slots.t_min / T, ub=sc.slots.t_max / T) for l in range(sc.L)]
    total = Affine()
    for f in frac:
        total = total + f
    prog.add_linear(total, "<=", 1.0, "time_budget")
    value = (st.o - st.omega).sum(axis=1)
    obj = Affine()
    for l, f in enumerate(frac):
        obj = obj + f * float(value[l])
    for sd in problem.slots:
        l = sd.slot
        tag = f"l{l}_"
        Wc, Wp = _stream_vars(prog, sd, tag)
        _common_structure(prog, sd, Wc, Wp, tag)
        # common-rate rows with an SINR slack scaled by the current denominators
        S = sum(st.Zp[l])
        dens, intf = [], []
        for k in range(sd.K):
            h = sd.h[k]
            dens.append(float(np.real(np.vdot(h, S @ h))) + sd.s_lu[k])
            intf.append(float(np.real(np.vdot(h, (S - st.Zp[l, k]) @ h))) + sd.s_lu[k])
        jam = max((float(np.real(np.vdot(g, st.Zc[l] @ g))) + sd.s_iu_worst[m] for m, g in enumerate(sd.g)),
                  default=1.0)
        g0 = 2.0 ** float(st.C[l].sum()) - 1.0
        mc = prog.scalar(f"{tag}margin_c", lb=-radius * g0)
        build_common_rate(prog, sd, Wc, Wp, float(st.C[l].sum()), tag, margin=mc, weights=dens)
        obj = obj + mc * weights[("common", l)]
        for k in range(sd.K):
            ml = prog.scalar(f"{tag}margin_lu{k}", lb=-radius * sd.s_lu[k])
            build_lu_outage(prog, sd, k, Wp, a=float(st.a[l, k]), tag=tag, margin=ml, safety=BERNSTEIN_SAFETY)
            mx = prog.scalar(f"{tag}margin_chi{k}", lb=-radius * float(st.chi[l, k]) * intf[k])
            build_sproc_min_sinr(prog, sd, k, Wp, float(st.chi[l, k]), tag, margin=mx)
            mi = prog.scalar(f"{tag}margin_iota{k}", lb=-radius * float(st.iota[l, k]) * jam)
            for m in range(sd.M):
                build_sproc_eavesdrop(prog, sd, k, m, Wc, Wp, float(st.iota[l, k]), tag, margin=mi)
            obj = obj + ml * weights[("lu", l, k)] + mx * weights[("chi", l, k)] + mi * weights[("iota", l, k)]
    prog.maximize(obj)
    sol = _solve(prog, settings, "block 1")
    _dump(trace_dir, f"it{st.iteration:03d}_block1", prog, sol)
    st.statuses.append(("block1", st.iteration, sol.status))
    if not sol.ok:
        raise BcdError(f"block 1 failed with status {sol.status}", state,
                       {"families": _families(prog), "status": sol.status})
    vals = sol.values
    st.block1_value = sol.objective
    st.t = np.array([vals.scalars[f"l{l}_t"] for l in range(sc.L)]) * T
    for sd in problem.slots:
        tag = f"l{sd.slot}_"
        st.Zc[sd.slot] = _psd(vals.matrices[f"{tag}Wc"])
        for k in range(sd.K):
            st.Zp[sd.slot, k] = _psd(vals.matrices[f"{tag}W{k}"])
    return st


# ---------------------------------------------------------------------------
# block 2


def _block2_program(problem: ProblemData, st: BcdState):
    T = problem.scenario.slots.period
    prog = Program(f"block2_it{st.iteration}")
    handles = []
    obj = Affine()
    for sd in problem.slots:
        l = sd.slot
        anchor = Block2Anchor(weight=float(st.t[l] / T), iota_anchor=st.anchor[l], safety=BERNSTEIN_SAFETY)
        hd = build_block2_rows(prog, sd, st.Zc[l], list(st.Zp[l]), anchor, tag=f"l{l}_")
        handles.append(hd)
        obj = obj + hd["objective"]
    prog.maximize(obj)
    return prog, handles


def _block2_values(problem, sol, handles) -> dict:
    L, K = problem.scenario.L, problem.scenario.K
    out = {k: np.zeros((L, K)) for k in ("C", "a", "chi", "iota", "o", "omega")}
    for l, hd in enumerate(handles):
        for k, names in enumerate(hd["vars"]):
            for key, name in names.items():
                out[key][l, k] = sol.values.scalars[name]
    return out


def _recheck(problem: ProblemData, st: BcdState, vals: dict) -> list:
    """Rows of the original outage model violated by the block-2 point."""
    bad = []
    rate = problem.scenario.outage.lu_rate
    for sd in problem.slots:
        l = sd.slot
        Zp = list(st.Zp[l])
        for k in range(sd.K):
            gap = 2.0 ** (rate - vals["C"][l, k]) - 1.0
            if not gap > 0:
                bad.append((l, k, "split"))
            elif lu_outage_margin(sd, k, Zp, 1.0 / gap) < -1e-9 * sd.s_lu[k]:
                # the rate target needs a private SINR of gap with the set outage
                bad.append((l, k, "lu_outage"))
    return bad


def _clean_split(problem: ProblemData, st: BcdState, vals: dict) -> dict:
    """Project away solver round-off: C >= 0, sum C <= R_c, o consistent with the envelope."""
    vals = {k: v.copy() for k, v in vals.items()}
    vals["C"] = np.clip(vals["C"], 0.0, None)
    vals["chi"] = np.clip(vals["chi"], 0.0, None)
    vals["iota"] = np.clip(vals["iota"], 0.0, None)
    for sd in problem.slots:
        l = sd.slot
        cap = common_rate_cap(sd, st.Zc[l], list(st.Zp[l]))
        tot = vals["C"][l].sum()
        if tot > cap:
            vals["C"][l] *= cap / tot
        for k in range(sd.K):
            vals["o"][l, k] = min(vals["o"][l, k], vals["C"][l, k] + interp_lower_log(vals["chi"][l, k]))
            tangent = math.log2(1.0 + st.anchor[l, k]) + (vals["iota"][l, k] - st.anchor[l, k]) / (
                math.log(2.0) * (1.0 + st.anchor[l, k]))
            vals["omega"][l, k] = max(vals["omega"][l, k], tangent)
    return vals


def solve_block2(problem: ProblemData, state: BcdState, trace_dir=None, have_previous: bool = True) -> BcdState:
    settings = problem.scenario.bcd
    rate = problem.scenario.outage.lu_rate
    st = state.copy()
    prog, handles = _block2_program(problem, st)
    sol = _solve(prog, settings, "block 2")
    _dump(trace_dir, f"it{st.iteration:03d}_block2", prog, sol)
    st.statuses.append(("block2", st.iteration, sol.status))
    if not sol.ok:
        if have_previous:
            st.stalled.append(st.iteration)
            log.warning("block 2 failed (%s); keeping previous values", sol.status)
            return st
        raise BcdError(f"block 2 failed with status {sol.status}", state,
                       {"families": _families(prog), "status": sol.status})
    vals = _clean_split(problem, st, _block2_values(problem, sol, handles))
    prev = st.block2()
    tries = 0
    while _recheck(problem, st, vals):
        if not have_previous or tries >= 10:
            if have_previous:
                st.stalled.append(st.iteration)
                log.warning("block 2 re-check failed after %d backtracks; keeping previous values", tries)
                return st
            raise BcdError("block 2 point violates the outage model", state, {"violations": _recheck(problem, st, vals)})
        vals = {k: 0.5 * (vals[k] + prev[k]) for k in vals}
        tries += 1
    # the auxiliary a of the program only has to dominate the exact split
    # factor; block 1 is handed the exact one
    vals["a"] = np.vectorize(lambda C: split_factor(rate, C))(vals["C"])
    st.set_block2(vals)
    st.anchor = st.iota.copy()
    # price of the LU row margin: the floor row dual times the change of the
    # guaranteed private rate per unit of margin
    lu_duals = np.zeros_like(st.C)
    for sd, hd in zip(problem.slots, handles):
        for k, (row, a_floor) in enumerate(hd["floor"]):
            if not math.isfinite(a_floor):
                continue
            Wk = st.Zp[sd.slot, k]
            slope = float(np.real(np.vdot(sd.h[k], Wk @ sd.h[k]) + sd.sigma_lu[k] ** 2 * np.trace(Wk)))
            dfda = 1.0 / (math.log(2.0) * a_floor * (a_floor + 1.0))
            lu_duals[sd.slot, k] = abs(sol.duals.get(row, 0.0)) * dfda / max(slope, 1e-300)
    st.duals = {"lu": lu_duals, "split": np.array([sol.duals.get(h["split_row"], 0.0) for h in handles])}
    return st


# ---------------------------------------------------------------------------
# driver


def _to_solution(problem: ProblemData, st: BcdState, info: dict) -> BeamSolution:
    p_t = problem.p_t
    sc = problem.scenario
    L, K, N = sc.L, sc.K, sc.N
    W_c = np.zeros((L, N, N), complex)
    W_p = np.zeros((L, K, N, N), complex)
    for sd in problem.slots:
        l = sd.slot
        Q = sd.Q
        W_c[l] = p_t * Q @ st.Zc[l] @ Q.conj().T
        for k in range(K):
            W_p[l, k] = p_t * Q @ st.Zp[l, k] @ Q.conj().T
        # the diagonal must stay below P_t after the PSD clean-up
        peak = float(np.max(np.real(np.diag(W_c[l] + W_p[l].sum(axis=0)))))
        if problem.power_rows == "element" and peak > p_t:
            W_c[l] *= p_t / peak
            W_p[l] *= p_t / peak
    W_c = 0.5 * (W_c + np.conj(np.swapaxes(W_c, -1, -2)))
    W_p = 0.5 * (W_p + np.conj(np.swapaxes(W_p, -1, -2)))
    sol = BeamSolution(W_c=W_c, W_p=W_p, t=st.t.copy(), C=st.C.copy(), period=sc.slots.period,
                       objective_trace=[float(v) for v in st.history], info=info)
    sol.slacks = [{"a": st.a[l].tolist(), "chi": st.chi[l].tolist(), "iota": st.iota[l].tolist(),
                   "o": st.o[l].tolist(), "omega": st.omega[l].tolist()} for l in range(L)]
    _extract(problem, sol)
    return sol


def _extract(problem: ProblemData, sol: BeamSolution) -> None:
    from .conic import rank_one_extract

    sc = problem.scenario
    L, K, N = sol.L, sol.K, sol.N
    rng = np.random.default_rng([problem.seed, 99])
    h = [e.nominal for e in problem.lu]
    g = [e.nominal * e.path_loss for e in problem.iu]
    w_c = np.zeros((L, N), complex)
    w_p = np.zeros((L, K, N), complex)
    records = []
    for l in range(L):
        def jam(w):
            return min(abs(np.vdot(x, w)) ** 2 for x in h)

        Xc = sol.W_c[l]
        if np.real(np.trace(Xc)) > 1e-15:
            res = rank_one_extract(Xc, surrogate=jam, power_cap=np.real(np.diag(Xc)), rng=rng)
            w_c[l] = res.w
            records.append({"slot": l, "stream": "common", "residual": res.residual, "path": res.path})
        for k in range(K):
            X = sol.W_p[l, k]
            if np.real(np.trace(X)) <= 1e-15:
                records.append({"slot": l, "stream": k, "residual": 0.0, "path": "zero"})
                continue

            def secrecy(w, k=k):
                return abs(np.vdot(h[k], w)) ** 2 - max((abs(np.vdot(x, w)) ** 2 for x in g), default=0.0)

            res = rank_one_extract(X, surrogate=secrecy, power_cap=np.real(np.diag(X)), rng=rng)
            w_p[l, k] = res.w
            records.append({"slot": l, "stream": k, "residual": res.residual, "path": res.path})
        # keep the per-element power of the rank-one design within P_t
        tot = np.abs(w_c[l]) ** 2 + (np.abs(w_p[l]) ** 2).sum(axis=0)
        lim = sc.rf.per_element_power
        over = float(np.max(tot)) / lim if problem.power_rows == "element" else float(tot.sum()) / (lim * N)
        if over > 1.0:
            w_c[l] /= math.sqrt(over)
            w_p[l] /= math.sqrt(over)
    sol.w_c, sol.w_p, sol.extraction = w_c, w_p, records


def run(scenario: Scenario, seed: int = 0, power_rows: str = "element", trace_dir=None,
        progress=None, explore: bool = True) -> BeamSolution:
    """Algorithm driver; returns the converged design with rank-one extraction.

    Every outer iteration first tries a signed-margin block-1 step (see
    ``solve_block1``) and keeps it only when block 2 then improves the
    objective; otherwise it falls back to the monotone step and halves the
    trust radius.
    """
    t0 = time.perf_counter()
    trace_dir = Path(trace_dir) if trace_dir is not None else None
    problem = build_problem(scenario, seed, power_rows)
    settings = scenario.bcd
    T = scenario.slots.period
    st = initialize(problem)
    st = phase0(problem, st, trace_dir)
    st = solve_block2(problem, st, trace_dir, have_previous=False)
    st.history.append(objective(st, T))
    records = [{"iteration": 0, "objective": st.history[-1], "statuses": list(st.statuses)}]
    if progress:
        progress(records[-1])
    converged = False
    radius = EXPLORE_RADIUS if explore else 0.0
    for it in range(1, settings.max_iters + 1):
        st.iteration = it
        n_stat = len(st.statuses)
        f_old = st.history[-1]
        accepted = None
        if radius >= EXPLORE_MIN:
            try:
                trial = solve_block1(problem, st, trace_dir, radius=radius)
                trial = solve_block2(problem, trial, trace_dir, have_previous=False)
                if objective(trial, T) > f_old + ACCEPT_GAIN * max(abs(f_old), 1e-6):
                    accepted = trial
            except BcdError as exc:
                log.info("exploration step rejected: %s", exc)
                st.statuses.append(("explore", it, "rejected"))
            if accepted is None:
                radius *= 0.5
            else:
                radius = min(2.0 * radius, EXPLORE_MAX)
        if accepted is not None:
            st = accepted
            st.statuses.append(("explore", it, "accepted"))
        else:
            step = solve_block2(problem, solve_block1(problem, st, trace_dir), trace_dir)
            if objective(step, T) >= f_old:
                st = step
            else:
                # an exact block step cannot lose objective; a solver-accuracy
                # drop is discarded and the previous iterate is kept
                st.statuses = step.statuses + [("monotone", it, "kept previous")]
                st.iteration = it
        f_new = objective(st, T)
        st.history.append(f_new)
        records.append({"iteration": it, "objective": f_new, "statuses": st.statuses[n_stat:],
                        "radius": radius, "time": time.perf_counter() - t0})
        if progress:
            progress(records[-1])
        if trace_dir is not None:
            (trace_dir / f"it{it:03d}.json").write_text(json.dumps(records[-1], default=str))
        if abs(f_new - f_old) <= settings.eps * max(abs(f_old), 1e-6):
            converged = True
            break
    info = {
        "seed": seed, "iterations": st.iteration, "converged": converged, "runtime": time.perf_counter() - t0,
        "stalled": st.stalled, "statuses": [list(s) for s in st.statuses], "power_rows": power_rows,
        "subspace": settings.subspace, "explore": explore, "surrogate_objective": st.history[-1],
        "detection_target": problem.detection_target.tolist(), "records": records,
        "split_diagnostics": [[diagnostic_split_bound(sd, k, list(st.Zp[sd.slot]), float(st.a[sd.slot, k]))
                               for k in range(sd.K)] for sd in problem.slots],
    }
    sol = _to_solution(problem, st, info)
    sol.info["state"] = {"t": st.t.tolist()}
    return sol


def run_baseline_trsma(scenario: Scenario, seed: int = 0, trace_dir=None, progress=None) -> BeamSolution:
    """Same pipeline with a single total-power row sum_i tr(W_i) <= N P_t."""
    return run(scenario, seed, power_rows="trace", trace_dir=trace_dir, progress=progress)
