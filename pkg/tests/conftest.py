"""Shared fixtures. Full designs are expensive, so every BCD run used by more
than one test is computed once per session and cached here."""
import time
import warnings

import numpy as np
import pytest

from beamsec import bcd
from beamsec.scenario import default_scenario, load_scenario, to_document, with_overrides

_RUNS = {}
RUNTIMES = {}   # wall-clock seconds of each cached design


def pytest_configure(config):
    warnings.filterwarnings("ignore", message="Solution may be inaccurate")


def small_scenario():
    """N = 2, K = 1, M = 1, L = 1 with the period equal to t_max."""
    doc = to_document(default_scenario())
    doc["array"] = {"n_rows": 1, "n_cols": 2}
    doc["users"]["lus"] = doc["users"]["lus"][:1]
    doc["users"]["ius"] = doc["users"]["ius"][:1]
    doc["slots"].update({"count": 1, "period": 3.5e-3})
    doc["slots"].pop("scan", None)
    return load_scenario(doc)


def two_slot_scenario():
    """N = 4, K = 2, M = 1, L = 2: cheap but exercises interference and time sharing."""
    doc = to_document(default_scenario())
    doc["array"] = {"n_rows": 2, "n_cols": 2}
    doc["users"]["lus"] = doc["users"]["lus"][:2]
    doc["users"]["ius"] = doc["users"]["ius"][:1]
    doc["slots"].update({"count": 2, "period": 4e-3})
    doc["slots"].pop("scan", None)
    return load_scenario(doc)


SCENARIOS = {
    "default": default_scenario,
    "small": small_scenario,
    "two_slot": two_slot_scenario,
    "n9": lambda: with_overrides(default_scenario(), {"array": {"n_rows": 3, "n_cols": 3}}),
    "n36": lambda: with_overrides(default_scenario(), {"array": {"n_rows": 6, "n_cols": 6}}),
    "p05": lambda: with_overrides(default_scenario(), {"rf": {"per_element_power": 0.5e-3}}),
    "p2": lambda: with_overrides(default_scenario(), {"rf": {"per_element_power": 2e-3}}),
    "bp_loose": lambda: with_overrides(default_scenario(), {"beampattern": {"tolerance": 0.2}}),
    "pout_loose": lambda: with_overrides(default_scenario(), {"outage": {"p_out1": 0.04, "p_out2": 0.02}}),
}


def bernstein_mc_violations(n_instances: int = 20, draws: int = 1_000_000, seed: int = 0) -> list:
    """Random (Q, r, sigma) instances whose empirical tail beyond either
    Bernstein bound exceeds exp(-sigma). Returns the offending instances."""
    from beamsec.transforms import bernstein_tail

    rng = np.random.default_rng(seed)
    bad = []
    for i in range(n_instances):
        n = int(rng.integers(1, 7))
        B = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        Q = (B + B.conj().T) / 2 * rng.uniform(0.1, 3.0)
        r = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * rng.uniform(0.0, 2.0)
        sigma = float(rng.uniform(0.5, 5.0))
        up = bernstein_tail(Q, r, sigma, "upper")
        lo = bernstein_tail(Q, r, sigma, "lower")
        n_up = n_lo = 0
        for start in range(0, draws, 200_000):
            m = min(200_000, draws - start)
            e = (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2.0)
            f = np.real(np.einsum("si,ij,sj->s", e.conj(), Q, e)) + 2 * np.real(e @ r.conj())
            n_up += int(np.count_nonzero(f >= up))
            n_lo += int(np.count_nonzero(f <= lo))
        bound = np.exp(-sigma)
        if n_up / draws > bound or n_lo / draws > bound:
            bad.append({"instance": i, "n": n, "sigma": sigma, "upper": n_up / draws, "lower": n_lo / draws})
    return bad


def solved(name: str, power_rows: str = "element", seed: int = 0):
    """(scenario, problem, solution) for a named scenario, cached per session."""
    key = (name, power_rows, seed)
    if key not in _RUNS:
        sc = SCENARIOS[name]()
        t0 = time.perf_counter()
        sol = bcd.run(sc, seed=seed, power_rows=power_rows)
        RUNTIMES[key] = time.perf_counter() - t0
        _RUNS[key] = (sc, bcd.build_problem(sc, seed, power_rows), sol)
    return _RUNS[key]


@pytest.fixture(scope="session")
def default_run():
    return solved("default")


@pytest.fixture(scope="session")
def small_run():
    return solved("small")


@pytest.fixture(scope="session")
def two_slot_run():
    return solved("two_slot")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
