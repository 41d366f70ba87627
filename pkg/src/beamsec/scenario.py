"""Experiment configuration: physical constants, geometry, targets and slot plan.

Configuration documents are nested mappings (YAML or JSON) with the sections
``rf``, ``array``, ``users``, ``outage``, ``slots``, ``errors`` plus the
optional ``beampattern``, ``detection``, ``power`` and ``bcd`` sections.
Angles are given in degrees and noise powers in dBm; everything is stored
internally in SI units and radians.
"""
from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
import yaml

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    """The configuration document does not match the schema."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ScenarioError(ValueError):
    """A fully parsed scenario violates one or more invariants."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(violations))


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


def watt_to_dbm(watt: float) -> float:
    return 10.0 * math.log10(watt / 1e-3)


@dataclass(frozen=True)
class RfConstants:
    carrier_freq: float = 30e9
    bandwidth: float = 20e6
    per_element_power: float = 1e-3
    noise_power_lu: float = 1e-12
    noise_power_iu: float = 1e-12
    rician_factor: float = 3.0
    element_spacing: Optional[float] = None
    rcs: float = 1.0
    processing_noise: float = 3e-20

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def spacing(self) -> float:
        if self.element_spacing is None:
            return self.wavelength / 2.0
        return self.element_spacing


@dataclass(frozen=True)
class ArrayGeometry:
    n_rows: int = 4
    n_cols: int = 4

    @property
    def n(self) -> int:
        return self.n_rows * self.n_cols

    def index_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column index of every element, ordered n = N_c*n_r + n_c."""
        n_r, n_c = np.divmod(np.arange(self.n), self.n_cols)
        return n_r, n_c


@dataclass(frozen=True)
class UserGeometry:
    distance: float
    pitch: float
    azimuth: float
    role: str = "LU"


@dataclass(frozen=True)
class OutageTargets:
    lu_rate: float = 0.5
    iu_rate: float = 0.25
    p_out1: float = 0.02
    p_out2: float = 0.01
    p_fa: float = 1e-4
    p_d: float = 0.9

    @property
    def sigma1(self) -> float:
        return -math.log(self.p_out1)

    @property
    def sigma2(self) -> float:
        return -math.log(self.p_out2)


@dataclass(frozen=True)
class SlotPlan:
    count: int = 5
    period: float = 10e-3
    t_min: float = 0.5e-3
    t_max: float = 3.5e-3
    scan_directions: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class ErrorConfig:
    lu_radius: float = 0.1
    lu_sigma: Optional[float] = None
    iu_element_bounds: tuple[float, ...] = (0.1 * math.sqrt(3.0),)
    iu_pitch_bound: float = math.radians(1.0)
    iu_azimuth_bound: float = math.radians(1.0)
    iu_distance_bound: float = 2.0

    @property
    def sigma_he(self) -> float:
        # 3-sigma embedding of the bounded LU error in the Gaussian model
        return self.lu_radius / 3.0 if self.lu_sigma is None else self.lu_sigma

    def element_bounds(self, n: int) -> np.ndarray:
        b = np.asarray(self.iu_element_bounds, dtype=float)
        if b.size == 1:
            return np.full(n, float(b[0]))
        return b.copy()


@dataclass(frozen=True)
class PowerModel:
    static_tris: float = 0.0
    rf_chain: float = 1e-3


@dataclass(frozen=True)
class BcdSettings:
    eps: float = 1e-3
    max_iters: int = 50
    subspace: str = "span"
    solver: str = "CLARABEL"
    seed: int = 0


@dataclass(frozen=True)
class Scenario:
    rf: RfConstants = field(default_factory=RfConstants)
    array: ArrayGeometry = field(default_factory=ArrayGeometry)
    lus: tuple[UserGeometry, ...] = ()
    ius: tuple[UserGeometry, ...] = ()
    outage: OutageTargets = field(default_factory=OutageTargets)
    slots: SlotPlan = field(default_factory=SlotPlan)
    errors: ErrorConfig = field(default_factory=ErrorConfig)
    beampattern_tolerance: float = 0.1
    detection_mode: str = "derived"
    detection_threshold: Optional[float] = None
    power: PowerModel = field(default_factory=PowerModel)
    bcd: BcdSettings = field(default_factory=BcdSettings)

    @property
    def K(self) -> int:
        return len(self.lus)

    @property
    def M(self) -> int:
        return len(self.ius)

    @property
    def N(self) -> int:
        return self.array.n

    @property
    def L(self) -> int:
        return self.slots.count


DEFAULT_LUS = ((50.0, 22.5, 10.0), (70.0, 45.0, 20.0), (90.0, 67.5, 30.0))
DEFAULT_IUS = ((65.0, 35.0, 25.0), (85.0, 55.0, 35.0))


def default_scan_directions(count: int, lus, pitch_range=(10.0, 80.0)):
    """Slot centres partitioning the pitch sector; azimuth follows the LUs.

    ``lus`` is a sequence of UserGeometry; the azimuth is interpolated
    piecewise-linearly in pitch between the LU positions.
    """
    lo, hi = pitch_range
    edges = np.linspace(lo, hi, count + 1)
    pitches = 0.5 * (edges[:-1] + edges[1:])
    if lus:
        order = sorted(lus, key=lambda u: u.pitch)
        xp = [math.degrees(u.pitch) for u in order]
        fp = [math.degrees(u.azimuth) for u in order]
        azimuths = np.interp(pitches, xp, fp)
    else:
        azimuths = np.zeros_like(pitches)
    return tuple((math.radians(p), math.radians(a)) for p, a in zip(pitches, azimuths))


def default_scenario() -> Scenario:
    lus = tuple(UserGeometry(d, math.radians(t), math.radians(p), "LU") for d, t, p in DEFAULT_LUS)
    ius = tuple(UserGeometry(d, math.radians(t), math.radians(p), "IU") for d, t, p in DEFAULT_IUS)
    slots = SlotPlan(scan_directions=default_scan_directions(5, lus))
    return Scenario(lus=lus, ius=ius, slots=slots)


# ---------------------------------------------------------------------------
# parsing

_SECTIONS = {
    "rf": {"carrier_freq", "bandwidth", "per_element_power", "noise_lu_dbm", "noise_iu_dbm",
           "rician_factor", "element_spacing", "rcs", "processing_noise"},
    "array": {"n_rows", "n_cols"},
    "users": {"lus", "ius"},
    "outage": {"lu_rate", "iu_rate", "p_out1", "p_out2", "p_fa", "p_d"},
    "slots": {"count", "period", "t_min", "t_max", "pitch_range", "scan"},
    "errors": {"lu_radius", "lu_sigma", "iu_element_bound", "iu_pitch_bound",
               "iu_azimuth_bound", "iu_distance_bound"},
    "beampattern": {"tolerance"},
    "detection": {"mode", "threshold"},
    "power": {"static_tris", "rf_chain"},
    "bcd": {"eps", "max_iters", "subspace", "solver", "seed"},
}
_USER_KEYS = {"distance", "pitch", "azimuth"}


_FLOAT = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _num(key: str, value: Any, integer: bool = False) -> float:
    # YAML 1.1 reads exponent literals without a dot (3e-20) as strings
    if isinstance(value, str) and _FLOAT.match(value.strip()):
        value = float(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    if integer:
        if int(value) != value:
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _user(key: str, entry: Any, role: str) -> UserGeometry:
    if not isinstance(entry, Mapping):
        raise ConfigError(key, "expected a mapping with distance, pitch, azimuth")
    extra = set(entry) - _USER_KEYS
    if extra:
        raise ConfigError(f"{key}.{sorted(extra)[0]}", "unknown key")
    missing = _USER_KEYS - set(entry)
    if missing:
        raise ConfigError(f"{key}.{sorted(missing)[0]}", "missing key")
    return UserGeometry(
        distance=_num(f"{key}.distance", entry["distance"]),
        pitch=math.radians(_num(f"{key}.pitch", entry["pitch"])),
        azimuth=math.radians(_num(f"{key}.azimuth", entry["azimuth"])),
        role=role,
    )


def parse_document(doc: Optional[Mapping[str, Any]]) -> Scenario:
    """Build a Scenario from an already-decoded document (no validation)."""
    doc = {} if doc is None else doc
    if not isinstance(doc, Mapping):
        raise ConfigError("<root>", "document must be a mapping")
    for section, body in doc.items():
        if section not in _SECTIONS:
            raise ConfigError(section, "unknown section")
        if body is None:
            continue
        if not isinstance(body, Mapping):
            raise ConfigError(section, "section must be a mapping")
        for key in body:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")

    base = default_scenario()
    get = lambda s: doc.get(s) or {}

    rf_doc = get("rf")
    rf_kw = {}
    for key in ("carrier_freq", "bandwidth", "per_element_power", "rician_factor", "rcs",
                "processing_noise"):
        if key in rf_doc:
            rf_kw[key] = _num(f"rf.{key}", rf_doc[key])
    if rf_doc.get("element_spacing") is not None:
        rf_kw["element_spacing"] = _num("rf.element_spacing", rf_doc["element_spacing"])
    if "noise_lu_dbm" in rf_doc:
        rf_kw["noise_power_lu"] = dbm_to_watt(_num("rf.noise_lu_dbm", rf_doc["noise_lu_dbm"]))
    if "noise_iu_dbm" in rf_doc:
        rf_kw["noise_power_iu"] = dbm_to_watt(_num("rf.noise_iu_dbm", rf_doc["noise_iu_dbm"]))
    rf = replace(base.rf, **rf_kw)

    arr_doc = get("array")
    array = ArrayGeometry(
        n_rows=_num("array.n_rows", arr_doc.get("n_rows", base.array.n_rows), integer=True),
        n_cols=_num("array.n_cols", arr_doc.get("n_cols", base.array.n_cols), integer=True),
    )

    users_doc = get("users")
    lus, ius = base.lus, base.ius
    if "lus" in users_doc:
        if not isinstance(users_doc["lus"], list):
            raise ConfigError("users.lus", "expected a list")
        lus = tuple(_user(f"users.lus[{i}]", u, "LU") for i, u in enumerate(users_doc["lus"]))
    if "ius" in users_doc:
        if not isinstance(users_doc["ius"], list):
            raise ConfigError("users.ius", "expected a list")
        ius = tuple(_user(f"users.ius[{i}]", u, "IU") for i, u in enumerate(users_doc["ius"]))

    out_doc = get("outage")
    outage = replace(base.outage, **{k: _num(f"outage.{k}", v) for k, v in out_doc.items()})

    sl_doc = get("slots")
    count = _num("slots.count", sl_doc.get("count", base.slots.count), integer=True)
    scan = sl_doc.get("scan")
    if scan is not None:
        if not isinstance(scan, list):
            raise ConfigError("slots.scan", "expected a list of [pitch, azimuth] pairs")
        dirs = []
        for i, pair in enumerate(scan):
            if not isinstance(pair, (list, tuple)) or len(pair) != 2:
                raise ConfigError(f"slots.scan[{i}]", "expected [pitch, azimuth]")
            dirs.append((math.radians(_num(f"slots.scan[{i}]", pair[0])),
                         math.radians(_num(f"slots.scan[{i}]", pair[1]))))
        scan_dirs = tuple(dirs)
    else:
        pr = sl_doc.get("pitch_range", (10.0, 80.0))
        if not isinstance(pr, (list, tuple)) or len(pr) != 2:
            raise ConfigError("slots.pitch_range", "expected [low, high] in degrees")
        pr = (_num("slots.pitch_range", pr[0]), _num("slots.pitch_range", pr[1]))
        scan_dirs = default_scan_directions(max(count, 0), lus, pr)
    slots = SlotPlan(
        count=count,
        period=_num("slots.period", sl_doc.get("period", base.slots.period)),
        t_min=_num("slots.t_min", sl_doc.get("t_min", base.slots.t_min)),
        t_max=_num("slots.t_max", sl_doc.get("t_max", base.slots.t_max)),
        scan_directions=scan_dirs,
    )

    er_doc = get("errors")
    er_kw = {}
    if "lu_radius" in er_doc:
        er_kw["lu_radius"] = _num("errors.lu_radius", er_doc["lu_radius"])
    if er_doc.get("lu_sigma") is not None:
        er_kw["lu_sigma"] = _num("errors.lu_sigma", er_doc["lu_sigma"])
    if "iu_element_bound" in er_doc:
        b = er_doc["iu_element_bound"]
        vals = b if isinstance(b, list) else [b]
        er_kw["iu_element_bounds"] = tuple(_num("errors.iu_element_bound", v) for v in vals)
    for key, attr in (("iu_pitch_bound", "iu_pitch_bound"), ("iu_azimuth_bound", "iu_azimuth_bound")):
        if key in er_doc:
            er_kw[attr] = math.radians(_num(f"errors.{key}", er_doc[key]))
    if "iu_distance_bound" in er_doc:
        er_kw["iu_distance_bound"] = _num("errors.iu_distance_bound", er_doc["iu_distance_bound"])
    errors = replace(base.errors, **er_kw)

    bp = get("beampattern")
    tol = _num("beampattern.tolerance", bp.get("tolerance", base.beampattern_tolerance))

    det = get("detection")
    mode = det.get("mode", "derived")
    if mode not in ("derived", "explicit"):
        raise ConfigError("detection.mode", "expected 'derived' or 'explicit'")
    threshold = det.get("threshold")
    if threshold is not None:
        threshold = _num("detection.threshold", threshold)
    if mode == "explicit" and threshold is None:
        raise ConfigError("detection.threshold", "required when mode is 'explicit'")

    pw = get("power")
    power = replace(base.power, **{k: _num(f"power.{k}", v) for k, v in pw.items()})

    bc = get("bcd")
    bcd_kw = {}
    if "eps" in bc:
        bcd_kw["eps"] = _num("bcd.eps", bc["eps"])
    if "max_iters" in bc:
        bcd_kw["max_iters"] = _num("bcd.max_iters", bc["max_iters"], integer=True)
    if "seed" in bc:
        bcd_kw["seed"] = _num("bcd.seed", bc["seed"], integer=True)
    for key in ("subspace", "solver"):
        if key in bc:
            if not isinstance(bc[key], str):
                raise ConfigError(f"bcd.{key}", "expected a string")
            bcd_kw[key] = bc[key]
    if bcd_kw.get("subspace", "span") not in ("span", "full"):
        raise ConfigError("bcd.subspace", "expected 'span' or 'full'")
    bcd = replace(base.bcd, **bcd_kw)

    return Scenario(rf=rf, array=array, lus=lus, ius=ius, outage=outage, slots=slots,
                    errors=errors, beampattern_tolerance=tol, detection_mode=mode,
                    detection_threshold=threshold, power=power, bcd=bcd)


def load_scenario(source: Any = None) -> Scenario:
    """Parse and validate a configuration.

    ``source`` may be None (all defaults), a mapping, a YAML/JSON string or a
    path to a ``.yaml``/``.yml``/``.json`` file.
    """
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                    and source.strip().endswith((".yaml", ".yml", ".json"))):
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(str(path))
        source = path.read_text()
    if isinstance(source, str):
        try:
            doc = yaml.safe_load(source) if source.strip() else {}
            if isinstance(doc, str):
                raise ConfigError("<document>", "document must be a mapping")
        except yaml.YAMLError as exc:
            raise ConfigError("<document>", f"cannot parse: {exc}") from exc
    else:
        doc = source
    scenario = parse_document(doc)
    violations = validate_scenario(scenario)
    if violations:
        raise ScenarioError(violations)
    return scenario


def validate_scenario(s: Scenario) -> list[str]:
    v = []
    rf = s.rf
    for name in ("carrier_freq", "bandwidth", "per_element_power", "noise_power_lu",
                 "noise_power_iu", "rician_factor", "rcs", "processing_noise"):
        if not getattr(rf, name) > 0:
            v.append(f"{name} must be positive")
    if rf.carrier_freq > 0:
        if not rf.spacing > 0:
            v.append("element_spacing must be positive")
        elif rf.spacing > rf.wavelength * (1 + 1e-12):
            v.append("element_spacing must not exceed the wavelength")
    if s.array.n_rows < 1 or s.array.n_cols < 1:
        v.append("array dimensions must be at least 1")
    if s.K < 1:
        v.append("at least one LU is required")
    if s.M < 1:
        v.append("at least one IU is required")
    for role, users in (("LU", s.lus), ("IU", s.ius)):
        for i, u in enumerate(users):
            if not u.distance > 0:
                v.append(f"{role} {i}: distance must be positive")
            if not 0 <= u.pitch <= math.pi / 2:
                v.append(f"{role} {i}: pitch must lie in [0, 90] degrees")
            if not 0 <= u.azimuth < 2 * math.pi:
                v.append(f"{role} {i}: azimuth must lie in [0, 360) degrees")
    o = s.outage
    for name in ("p_out1", "p_out2", "p_fa", "p_d"):
        if not 0 < getattr(o, name) < 1:
            v.append(f"{name} must lie in (0, 1)")
    if not (o.lu_rate > o.iu_rate > 0):
        v.append("rate thresholds must satisfy lu_rate > iu_rate > 0")
    sl = s.slots
    if sl.count < 1:
        v.append("slot count must be at least 1")
    if not (sl.period > 0 and sl.t_min > 0 and sl.t_max > 0):
        v.append("slot durations must be positive")
    if sl.t_min > sl.t_max:
        v.append("t_min must not exceed t_max")
    if sl.count * sl.t_min > sl.period * (1 + 1e-12):
        v.append("time budget infeasible")
    if sl.period > sl.count * sl.t_max * (1 + 1e-12):
        v.append("time budget exceeds L*t_max")
    if len(sl.scan_directions) != sl.count:
        v.append("scan_directions length must equal the slot count")
    e = s.errors
    bounds = np.asarray(e.iu_element_bounds, dtype=float)
    if e.lu_radius < 0 or e.sigma_he < 0:
        v.append("LU error bounds must be nonnegative")
    if bounds.size not in (1, s.N):
        v.append("iu_element_bound must be a scalar or have one entry per element")
    if np.any(bounds < 0) or e.iu_pitch_bound < 0 or e.iu_azimuth_bound < 0 or e.iu_distance_bound < 0:
        v.append("IU error bounds must be nonnegative")
    for i, u in enumerate(s.ius):
        if e.iu_distance_bound >= u.distance:
            v.append(f"IU {i}: distance bound must be smaller than the distance")
    if not s.beampattern_tolerance >= 0:
        v.append("beampattern tolerance must be nonnegative")
    if s.detection_threshold is not None and s.detection_threshold < 0:
        v.append("detection threshold must be nonnegative")
    if s.power.static_tris < 0 or s.power.rf_chain < 0:
        v.append("static powers must be nonnegative")
    if not (0 < s.bcd.eps < 1) or s.bcd.max_iters < 1:
        v.append("bcd settings out of range")
    return v


def to_document(s: Scenario) -> dict:
    """Inverse of parse_document (degrees and dBm restored)."""
    deg = math.degrees
    user = lambda u: {"distance": u.distance, "pitch": deg(u.pitch), "azimuth": deg(u.azimuth)}
    rf = s.rf
    doc = {
        "rf": {
            "carrier_freq": rf.carrier_freq,
            "bandwidth": rf.bandwidth,
            "per_element_power": rf.per_element_power,
            "noise_lu_dbm": watt_to_dbm(rf.noise_power_lu),
            "noise_iu_dbm": watt_to_dbm(rf.noise_power_iu),
            "rician_factor": rf.rician_factor,
            "element_spacing": rf.element_spacing,
            "rcs": rf.rcs,
            "processing_noise": rf.processing_noise,
        },
        "array": {"n_rows": s.array.n_rows, "n_cols": s.array.n_cols},
        "users": {"lus": [user(u) for u in s.lus], "ius": [user(u) for u in s.ius]},
        "outage": asdict(s.outage),
        "slots": {
            "count": s.slots.count,
            "period": s.slots.period,
            "t_min": s.slots.t_min,
            "t_max": s.slots.t_max,
            "scan": [[deg(t), deg(p)] for t, p in s.slots.scan_directions],
        },
        "errors": {
            "lu_radius": s.errors.lu_radius,
            "lu_sigma": s.errors.lu_sigma,
            "iu_element_bound": list(s.errors.iu_element_bounds),
            "iu_pitch_bound": deg(s.errors.iu_pitch_bound),
            "iu_azimuth_bound": deg(s.errors.iu_azimuth_bound),
            "iu_distance_bound": s.errors.iu_distance_bound,
        },
        "beampattern": {"tolerance": s.beampattern_tolerance},
        "detection": {"mode": s.detection_mode, "threshold": s.detection_threshold},
        "power": asdict(s.power),
        "bcd": asdict(s.bcd),
    }
    return doc


def dump_scenario(s: Scenario) -> str:
    return json.dumps(to_document(s), indent=2, sort_keys=True)


def scenarios_close(a: Scenario, b: Scenario, rtol: float = 1e-12) -> bool:
    """Equality up to float round-off from the degree/dBm conversions."""
    da, db = json.loads(dump_scenario(a)), json.loads(dump_scenario(b))

    def close(x, y):
        if isinstance(x, dict):
            return isinstance(y, dict) and x.keys() == y.keys() and all(close(x[k], y[k]) for k in x)
        if isinstance(x, list):
            return isinstance(y, list) and len(x) == len(y) and all(close(p, q) for p, q in zip(x, y))
        if isinstance(x, float) or isinstance(y, float):
            return math.isclose(x, y, rel_tol=rtol, abs_tol=1e-300)
        return x == y

    return close(da, db)


def with_overrides(s: Scenario, overrides: Mapping[str, Mapping[str, Any]]) -> Scenario:
    """Re-parse ``s`` with section-level overrides (used by sweeps)."""
    doc = copy.deepcopy(to_document(s))
    for section, body in overrides.items():
        doc.setdefault(section, {})
        doc[section].update(body)
    return load_scenario(doc)
