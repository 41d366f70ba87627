import csv
import json
import logging
import math

import numpy as np
import pytest

from beamsec import bcd
from beamsec.cli import main, summarize
from beamsec.metrics import BeamSolution, solution_to_dict
from beamsec.scenario import dump_scenario

from conftest import SCENARIOS, solved


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def two_slot_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "two_slot.json"
    path.write_text(dump_scenario(SCENARIOS["two_slot"]()))
    return path


@pytest.fixture(scope="module")
def design_dir(tmp_path_factory, two_slot_config):
    out = tmp_path_factory.mktemp("design")
    code = main(["design", "--config", str(two_slot_config), "--seed", "7", "--out", str(out),
                 "--samples", "20000"])
    assert code == 0
    return out


def test_design_writes_every_file(design_dir):
    for name in ("solution.json", "trace.csv", "links.csv", "validation.json", "allocation.csv",
                 "scenario.json", "artifact.json"):
        assert (design_dir / name).exists(), name
    trace = [float(r["objective"]) for r in read_csv(design_dir / "trace.csv")]
    assert len(trace) >= 2
    assert all(b >= a - 1e-6 for a, b in zip(trace, trace[1:]))
    art = json.loads((design_dir / "artifact.json").read_text())
    assert art["provenance"]["seed"] == 7
    assert art["validation"]["passed"]


def test_design_is_reproducible(design_dir, two_slot_config, tmp_path):
    assert main(["design", "--config", str(two_slot_config), "--seed", "7", "--out", str(tmp_path),
                 "--samples", "20000"]) == 0
    assert (tmp_path / "solution.json").read_bytes() == (design_dir / "solution.json").read_bytes()


def test_verify_round_trip(design_dir, two_slot_config, tmp_path):
    code = main(["verify", "--config", str(two_slot_config), "--solution", str(design_dir / "solution.json"),
                 "--samples", "20000", "--out", str(tmp_path)])
    assert code == 0
    assert json.loads((tmp_path / "validation.json").read_text())["passed"]


def test_verify_rejects_doubled_power(design_dir, two_slot_config, tmp_path):
    doc = json.loads((design_dir / "solution.json").read_text())
    sol_path = tmp_path / "edited.json"
    from beamsec.metrics import solution_from_dict
    sol = solution_from_dict(doc)
    sol.W_c = 2.0 * sol.W_c
    sol.W_p = 2.0 * sol.W_p
    sol.w_c = math.sqrt(2.0) * sol.w_c
    sol.w_p = math.sqrt(2.0) * sol.w_p
    sol_path.write_text(json.dumps(solution_to_dict(sol)))
    assert main(["verify", "--config", str(two_slot_config), "--solution", str(sol_path),
                 "--samples", "20000"]) == 2


def test_verify_warns_on_small_samples(design_dir, two_slot_config, caplog):
    with caplog.at_level(logging.WARNING):
        main(["verify", "--config", str(two_slot_config), "--solution", str(design_dir / "solution.json"),
              "--samples", "1000"])
    assert "below recommended sample size" in caplog.text


def test_usage_errors(tmp_path, design_dir):
    assert main(["design", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == 3
    assert main(["verify", "--solution", str(tmp_path / "missing.json")]) == 3
    assert main(["frobnicate"]) == 3
    assert main(["sweep", "--axis", "n_elements", "--values", "10", "--out", str(tmp_path)]) == 3
    doc = json.loads((design_dir / "solution.json").read_text())
    doc["format"] = "beamsec.solution/2.0"
    bad = tmp_path / "future.json"
    bad.write_text(json.dumps(doc))
    assert main(["verify", "--solution", str(bad)]) == 3


def test_sweep_single_value_matches_design(two_slot_config, two_slot_run, tmp_path):
    code = main(["sweep", "--config", str(two_slot_config), "--axis", "power", "--values", "1.0",
                 "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "sweep.csv")
    assert len(rows) == 1
    sc, problem, sol = two_slot_run
    s = summarize(sol, problem)
    assert float(rows[0]["sse"]) == pytest.approx(s["sse"], rel=1e-9)
    assert float(rows[0]["certified_objective"]) == pytest.approx(s["certified_objective"], rel=1e-9)
    assert int(rows[0]["iterations"]) == s["iterations"]


# --- beampattern -------------------------------------------------------------------------

def test_beampattern_empty_grid(design_dir, two_slot_config, tmp_path):
    assert main(["beampattern", "--config", str(two_slot_config), "--solution", str(design_dir / "solution.json"),
                 "--grid", "", "--out", str(tmp_path)]) == 3


def test_beampattern_peak_at_scan_direction(two_slot_config, tmp_path):
    sc = SCENARIOS["two_slot"]()
    problem = bcd.build_problem(sc, 0)
    L, N = sc.L, sc.N
    W = np.array([problem.desired_covariance(l) for l in range(L)])
    sol = BeamSolution(W_c=W, W_p=np.zeros((L, sc.K, N, N), complex), t=np.full(L, sc.slots.period / L),
                       C=np.zeros((L, sc.K)), period=sc.slots.period)
    path = tmp_path / "scan.json"
    path.write_text(json.dumps(solution_to_dict(sol)))
    # 1 degree cells
    assert main(["beampattern", "--config", str(two_slot_config), "--solution", str(path),
                 "--grid", "0:90:91,-90:90:181", "--out", str(tmp_path)]) == 0
    peaks = read_csv(tmp_path / "peaks.csv")
    for l, row in enumerate(peaks):
        th, ph = (math.degrees(x) for x in sc.slots.scan_directions[l])
        assert abs(float(row["pitch_deg"]) - th) <= 1.0 + 1e-9
        assert abs(float(row["azimuth_deg"]) - ph) <= 1.0 + 1e-9


def test_default_beams_cover_the_lus(default_run, tmp_path):
    """Every LU sits within 3 dB of the peak of at least one slot beam."""
    from beamsec.metrics import beampattern_gain
    sc, problem, sol = default_run
    for u in sc.lus:
        best = max(float(beampattern_gain(sol, l, [u.pitch], [u.azimuth], sc.array, sc.rf, db=False)[0, 0])
                   / float(np.max(beampattern_gain(sol, l, np.radians(np.linspace(0, 90, 181)),
                                                   np.radians(np.linspace(-90, 90, 361)), sc.array, sc.rf,
                                                   db=False)))
                   for l in range(sc.L))
        assert 10 * math.log10(best) >= -3.0


def test_default_design_verifies(default_run, tmp_path):
    sc, problem, sol = default_run
    cfg = tmp_path / "default.json"
    cfg.write_text(dump_scenario(sc))
    path = tmp_path / "solution.json"
    path.write_text(json.dumps(solution_to_dict(sol)))
    assert main(["verify", "--config", str(cfg), "--solution", str(path), "--samples", "20000"]) == 0
