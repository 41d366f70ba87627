"""Command-line front end: design, sweep, beampattern and verify."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bcd import BcdError, build_problem, run
from .metrics import (BeamSolution, beampattern_gain, detection_probability, detection_threshold,
                      efficiency_measures, link_report, solution_from_dict, solution_to_dict, static_power)
from .scenario import (ConfigError, ScenarioError, default_scenario, dump_scenario, load_scenario, to_document,
                       with_overrides)
from .verify import RECOMMENDED_SAMPLES, validate

EXIT_OK, EXIT_VALIDATION, EXIT_USAGE, EXIT_SOLVER = 0, 2, 3, 4
ARTIFACT_FORMAT = "beamsec.artifact/1.0"
VOLATILE_INFO = ("runtime",)

log = logging.getLogger("beamsec")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _scenario(path):
    return default_scenario() if path is None else load_scenario(Path(path))


def _stable_info(info: dict) -> dict:
    """Drop wall-clock fields so that equal runs serialize to equal bytes."""
    out = {k: v for k, v in info.items() if k not in VOLATILE_INFO}
    if "records" in out:
        out["records"] = [{k: v for k, v in r.items() if k != "time"} for r in out["records"]]
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _links(sol: BeamSolution, problem):
    sc = problem.scenario
    lu = [e.nominal for e in problem.lu]
    iu = [e.nominal * e.path_loss for e in problem.iu]
    return link_report(sol, lu, iu, sc.rf.noise_power_lu, sc.rf.noise_power_iu)


def _detection(sol: BeamSolution, problem) -> np.ndarray:
    sc = problem.scenario
    thr = detection_threshold(sc.outage.p_fa, sc.rf.processing_noise)
    return np.array([[detection_probability(sol.slot_power(l), problem.sensing_gain[m], thr, sc.rf.processing_noise)
                      for m in range(sc.M)] for l in range(sol.L)])


def summarize(sol: BeamSolution, problem, architecture: str = "tris") -> dict:
    """SSE, SEE, IEE and detection figures of a design."""
    sc = problem.scenario
    link = _links(sol, problem)
    p_static = static_power(sc.power, sc.N, architecture)
    sse, see, iee = efficiency_measures(link, sol, sc.rf.bandwidth, p_static)
    det = _detection(sol, problem)
    return {"sse": sse, "see": see, "iee": iee, "static_power": p_static, "architecture": architecture,
            "certified_objective": float(sol.objective_trace[-1]) if sol.objective_trace else float("nan"),
            "detection_min": float(det.min()) if det.size else float("nan"),
            "iterations": int(sol.info.get("iterations", 0)), "converged": bool(sol.info.get("converged", False)),
            "link": link}


def _link_rows(sol: BeamSolution, link) -> list:
    rows = []
    for l in range(sol.L):
        for k in range(sol.K):
            rows.append([l, k, sol.t[l] * 1e3, sol.C[l, k], link.R_c[l], link.R_pk[l, k], link.R_k[l, k],
                         float(link.R_km[l, k].max()) if link.R_km.shape[2] else 0.0,
                         max(link.R_k[l, k] - (link.R_km[l, k].max() if link.R_km.shape[2] else 0.0), 0.0)])
    return rows


# ---------------------------------------------------------------------------
# commands


def cmd_design(args) -> int:
    sc = _scenario(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace_dir = out / "trace" if args.trace else None
    if trace_dir is not None:
        trace_dir.mkdir(exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    sol = run(sc, seed=args.seed, power_rows=args.power_rows, trace_dir=trace_dir,
              progress=lambda r: log.info("iteration %d: objective %.6f", r["iteration"], r["objective"]))
    runtime = time.perf_counter() - t0
    sol.info = _stable_info(sol.info)
    problem = build_problem(sc, args.seed, args.power_rows)
    summary = summarize(sol, problem, "tris" if args.power_rows == "element" else "trsma")
    link = summary.pop("link")
    report = validate(sol, problem, n_samples=args.samples, seed=args.seed, power_rows=args.power_rows)

    sol_doc = solution_to_dict(sol)
    _write_json(out / "solution.json", sol_doc)
    (out / "scenario.json").write_text(dump_scenario(sc) + "\n")
    _write_csv(out / "trace.csv", ["iteration", "objective"], list(enumerate(sol.objective_trace)))
    _write_csv(out / "links.csv", ["slot", "lu", "t_ms", "C", "R_c", "R_p", "R_k", "R_eve_max", "secrecy"],
               _link_rows(sol, link))
    _write_csv(out / "allocation.csv", ["slot", "t_ms", "power_mW"],
               [[l, sol.t[l] * 1e3, sol.slot_power(l) * 1e3] for l in range(sol.L)])
    (out / "validation.json").write_text(report.to_json() + "\n")
    artifact = {
        "format": ARTIFACT_FORMAT,
        "scenario": to_document(sc),
        "solution": sol_doc,
        "summary": summary,
        "validation": report.to_dict(),
        "provenance": {"seed": args.seed, "version": __version__, "started": started,
                       "finished": datetime.now(timezone.utc).isoformat(), "runtime_s": runtime,
                       "power_model": {"static_tris": sc.power.static_tris, "rf_chain": sc.power.rf_chain}},
    }
    (out / "artifact.json").write_text(json.dumps(artifact, indent=1, default=_json_default) + "\n")
    print(f"objective {summary['certified_objective']:.6f}  SSE {summary['sse']:.4f} bps/Hz  "
          f"SEE {summary['see']:.4g} bit/J  iterations {summary['iterations']}  "
          f"validation {'pass' if report.passed else 'FAIL'}")
    for c in report.failures:
        print(f"  failed: {c['name']} value={c['value']} limit={c['limit']}")
    return report.exit_code


def _json_default(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


SWEEP_AXES = ("n_elements", "power", "error")


def sweep_overrides(axis: str, value: float) -> dict:
    """Configuration overrides for one sweep point.

    n_elements takes a square element count, power is in mW, and error is the
    normalized LU error radius (IU element bounds scale with it by sqrt(3),
    the default ratio).
    """
    if axis == "n_elements":
        side = int(round(math.sqrt(value)))
        if side * side != int(value) or side < 1:
            raise UsageError(f"n_elements must be a perfect square, got {value}")
        return {"array": {"n_rows": side, "n_cols": side}}
    if axis == "power":
        return {"rf": {"per_element_power": value * 1e-3}}
    if axis == "error":
        return {"errors": {"lu_radius": value, "iu_element_bound": value * math.sqrt(3.0)}}
    raise UsageError(f"unknown axis {axis!r}")


def _sweep_point(task):
    doc, axis, value, seed, power_rows = task
    sc = with_overrides(load_scenario(doc), sweep_overrides(axis, value))
    sol = run(sc, seed=seed, power_rows=power_rows)
    problem = build_problem(sc, seed, power_rows)
    s = summarize(sol, problem, "tris" if power_rows == "element" else "trsma")
    s.pop("link")
    return [value, s["sse"], s["see"], s["iee"], s["detection_min"], s["iterations"], s["converged"],
            s["certified_objective"]]


def cmd_sweep(args) -> int:
    if not args.values:
        raise UsageError("sweep needs at least one value")
    sc = _scenario(args.config)
    doc = to_document(sc)
    for v in args.values:
        sweep_overrides(args.axis, v)          # reject bad values before solving
    tasks = [(doc, args.axis, v, args.seed, args.power_rows) for v in args.values]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            rows = list(ex.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = [args.axis, "sse", "see", "iee", "detection_min", "iterations", "converged", "certified_objective"]
    _write_csv(out / "sweep.csv", header, rows)
    for r in rows:
        print(f"{args.axis}={r[0]:g}  SSE {r[1]:.4f}  SEE {r[2]:.4g}  objective {r[7]:.4f}  iterations {r[5]}")
    return EXIT_OK


def parse_grid(spec: str):
    """'t0:t1:n,p0:p1:m' in degrees -> (thetas, phis) in radians."""
    if not spec or not spec.strip():
        raise UsageError("empty grid specification")
    parts = spec.split(",")
    if len(parts) != 2:
        raise UsageError("grid must be 'pitch_lo:pitch_hi:n,azimuth_lo:azimuth_hi:m'")
    axes = []
    for p in parts:
        f = p.split(":")
        if len(f) != 3:
            raise UsageError(f"bad grid axis {p!r}")
        try:
            lo, hi, n = float(f[0]), float(f[1]), int(f[2])
        except ValueError as exc:
            raise UsageError(f"bad grid axis {p!r}") from exc
        if n < 1:
            raise UsageError("grid axes need at least one point")
        axes.append(np.radians(np.linspace(lo, hi, n)))
    return axes[0], axes[1]


def load_solution(path) -> BeamSolution:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    try:
        return solution_from_dict(json.loads(p.read_text()))
    except (json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot read solution {p}: {exc}") from exc


def beampattern_table(sol: BeamSolution, sc, thetas, phis):
    rows, peaks = [], []
    for l in range(sol.L):
        g = beampattern_gain(sol, l, thetas, phis, sc.array, sc.rf)
        i, j = np.unravel_index(int(np.argmax(g)), g.shape)
        peaks.append([l, math.degrees(thetas[i]), math.degrees(phis[j])])
        for a, th in enumerate(thetas):
            for b, ph in enumerate(phis):
                rows.append([l, math.degrees(th), math.degrees(ph), float(g[a, b])])
    return rows, peaks


def cmd_beampattern(args) -> int:
    thetas, phis = parse_grid(args.grid)
    sc = _scenario(args.config)
    sol = load_solution(args.solution)
    if sol.N != sc.N:
        raise UsageError(f"solution has {sol.N} elements but the configuration has {sc.N}")
    rows, peaks = beampattern_table(sol, sc, thetas, phis)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "beampattern.csv", ["slot", "pitch_deg", "azimuth_deg", "gain_db"], rows)
    _write_csv(out / "peaks.csv", ["slot", "pitch_deg", "azimuth_deg"], peaks)
    for l, th, ph in peaks:
        print(f"slot {l}: peak at pitch {th:.2f} deg, azimuth {ph:.2f} deg")
    return EXIT_OK


def cmd_verify(args) -> int:
    sc = _scenario(args.config)
    sol = load_solution(args.solution)
    if sol.N != sc.N or sol.K != sc.K or sol.L != sc.L:
        raise UsageError("solution dimensions do not match the configuration")
    if args.samples < RECOMMENDED_SAMPLES:
        log.warning("%d samples is below recommended sample size %d", args.samples, RECOMMENDED_SAMPLES)
    channel_seed = int(sol.info.get("seed", 0))
    power_rows = sol.info.get("power_rows", "element")
    problem = build_problem(sc, channel_seed, power_rows)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = validate(sol, problem, n_samples=args.samples, seed=args.seed, power_rows=power_rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "validation.json").write_text(report.to_json() + "\n")
    print(f"validation {'pass' if report.passed else 'FAIL'} ({len(report.checks)} checks)")
    for c in report.failures:
        print(f"  failed: {c['name']} value={c['value']} limit={c['limit']}")
    return report.exit_code


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="beamsec", description="Robust secure ISAC beamforming designs.")
    p.add_argument("--version", action="version", version=f"beamsec {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="scenario file (.yaml/.yml/.json); defaults when omitted")
        sp.add_argument("--seed", type=int, default=0, help="channel / sampling seed")

    d = sub.add_parser("design", help="solve one scenario and write the run artifact")
    common(d)
    d.add_argument("--out", required=True)
    d.add_argument("--samples", type=int, default=100_000)
    d.add_argument("--trace", action="store_true", help="dump every conic subproblem")
    d.add_argument("--power-rows", choices=("element", "trace"), default="element")

    s = sub.add_parser("sweep", help="solve a sequence of scenarios along one axis")
    common(s)
    s.add_argument("--axis", choices=SWEEP_AXES, required=True)
    s.add_argument("--values", type=float, nargs="+", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--power-rows", choices=("element", "trace"), default="element")

    b = sub.add_parser("beampattern", help="tabulate the beampattern of a solution")
    b.add_argument("--solution", required=True)
    b.add_argument("--config")
    b.add_argument("--grid", default="0:90:91,-90:90:181", help="pitch_lo:pitch_hi:n,az_lo:az_hi:m in degrees")
    b.add_argument("--out", required=True)

    v = sub.add_parser("verify", help="run every oracle against a solution")
    common(v)
    v.add_argument("--solution", required=True)
    v.add_argument("--samples", type=int, default=100_000)
    v.add_argument("--out")
    return p


COMMANDS = {"design": cmd_design, "sweep": cmd_sweep, "beampattern": cmd_beampattern, "verify": cmd_verify}


def main(argv=None) -> int:
    level = os.environ.get("BEAMSEC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ScenarioError, UsageError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BcdError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
