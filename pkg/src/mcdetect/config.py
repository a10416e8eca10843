"""Experiment configuration: YAML file in, resolved dataclasses out.

Angles may be given in degrees (``*_deg`` keys) or directly as
directional cosines (``u`` keys); exactly one form per entry.  Unknown keys
are rejected with their dotted path and line number.

Schema (all sections optional; defaults reproduce the reference scenario)::

    geometry:   {n_elements: 16, spacing_over_wavelength: 0.5}
    pointing:   {look_deg: 35.0 | u_bar: ..., alpha: null}   # null -> 0.891/N
    coupling:   [0.7, 0.4]
    jammers:    [{u: 0.866 | theta_deg: ..., power_db: 30.0}, ...]
    noise_power: 1.0
    k_secondary: 48
    target:     {delta_u: 0.0349 | theta_deg: ... | u: ..., phase: 0.0}
    pfa: 1.0e-3
    sinr_grid_db: [0, 5, ..., 30]
    detectors:  [{name: GLRT_LAM, order: 3}, {name: MFLRT, n_bar: 8}, ...]
    mm:         {epsilon: 1.0e-8, max_iters: 200, relative_exit: true, stage2_alpha: null}
    seeds:      {master: 20240601}
    trials:     {calibration: 100000, holdout: 20000, curves: 500}
    crb:        {order: null}                                   # null -> len(coupling) + 1
    scan:       {theta_min_deg: 30.0, theta_max_deg: 60.0, step_deg: 0.01, target_deg: 35.0}
    thresholds_file: null
    threads: 1
    output_dir: out
"""

import copy
import math
from dataclasses import asdict, dataclass

import yaml

from .array_model import ArrayGeometry, CouplingProfile, PointingState
from .detectors import DetectorKind
from .errors import ConfigError
from .estimator import MMConfig
from .scenario import EnvironmentSpec, JammerSpec

DEFAULTS = {
    "geometry": {"n_elements": 16, "spacing_over_wavelength": 0.5},
    "pointing": {"look_deg": 35.0, "u_bar": None, "alpha": None},
    "coupling": [0.7, 0.4],
    "jammers": [{"u": 0.866, "power_db": 30.0},
                {"u": -0.342, "power_db": 40.0}],
    "noise_power": 1.0,
    "k_secondary": 48,
    "target": {"delta_u": 0.0349, "theta_deg": None, "u": None, "phase": 0.0},
    "pfa": 1.0e-3,
    "sinr_grid_db": [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
    "detectors": [{"name": "GLRT_LAM", "order": 3},
                  {"name": "GLRT_LAM_2S", "order": 3},
                  {"name": "MFLRT", "n_bar": 8},
                  {"name": "BEN_GLRT"},
                  {"name": "BEN_GLRT_DOA", "order": 3}],
    "mm": {"epsilon": 1.0e-8, "max_iters": 200, "relative_exit": True, "stage2_alpha": None},
    "seeds": {"master": 20240601},
    "trials": {"calibration": 100000, "holdout": 20000, "curves": 500},
    "crb": {"order": None},
    "scan": {"theta_min_deg": 30.0, "theta_max_deg": 60.0, "step_deg": 0.01,
             "target_deg": 35.0},
    "thresholds_file": None,
    "threads": 1,
    "output_dir": "out",
}

_JAMMER_KEYS = {"theta_deg", "u", "power_db"}
_DETECTOR_KEYS = {"name", "order", "n_bar", "log_form", "verbatim"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment; ``raw`` is the defaults-filled mapping."""

    env: EnvironmentSpec
    pointing: PointingState
    u0: float
    phase: float
    pfa: float
    sinr_grid_db: tuple
    detectors: tuple
    mm: MMConfig
    master_seed: int
    n_calibration: int
    n_holdout: int
    n_curves: int
    crb_order: int
    scan: dict
    thresholds_file: str | None
    threads: int
    output_dir: str
    raw: dict

    def echo(self):
        """Resolved configuration as plain data, including derived values."""
        out = copy.deepcopy(self.raw)
        out["resolved"] = {
            "u_bar": self.pointing.u_bar,
            "alpha": self.pointing.alpha,
            "u0": self.u0,
            "jammers_u": [j.u for j in self.env.jammers],
            "detector_labels": [k.label for k in self.detectors],
            "mm": asdict(self.mm),
            "crb_order": self.crb_order,
        }
        return out


def _line_index(text):
    """Map dotted key paths to 1-based source lines."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return {}
    lines = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                p = f"{path}.{k.value}" if path else str(k.value)
                lines[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                p = f"{path}[{i}]"
                lines[p] = v.start_mark.line + 1
                walk(v, p)

    if root is not None:
        walk(root, "")
    return lines


class _Reader:
    def __init__(self, lines):
        self.lines = lines

    def fail(self, path, msg):
        line = self.lines.get(path)
        where = f"line {line}, key '{path}'" if line else f"key '{path}'"
        raise ConfigError(f"{where}: {msg}")

    def merge(self, user, defaults, path=""):
        if not isinstance(user, dict):
            self.fail(path or "<root>", "expected a mapping")
        out = copy.deepcopy(defaults)
        for key, val in user.items():
            p = f"{path}.{key}" if path else str(key)
            if key not in defaults:
                self.fail(p, "unknown key")
            if isinstance(defaults[key], dict) and val is not None:
                out[key] = self.merge(val, defaults[key], p)
            else:
                out[key] = val
        return out

    def number(self, path, val, kind=float, positive=False, allow_none=False):
        if val is None and allow_none:
            return None
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            self.fail(path, f"expected a number, got {val!r}")
        if kind is int and float(val) != int(val):
            self.fail(path, f"expected an integer, got {val!r}")
        val = kind(val)
        if not math.isfinite(val):
            self.fail(path, "must be finite")
        if positive and not val > 0:
            self.fail(path, f"must be positive, got {val!r}")
        return val


def _u_from(reader, path, entry, deg_key, u_key):
    deg = entry.get(deg_key)
    u = entry.get(u_key)
    if (deg is None) == (u is None):
        reader.fail(path, f"give exactly one of '{deg_key}' or '{u_key}'")
    if deg is not None:
        return math.sin(math.radians(reader.number(f"{path}.{deg_key}", deg)))
    return reader.number(f"{path}.{u_key}", u)


def parse_config(text, overrides=None):
    """Parse YAML ``text``; ``overrides`` is a flat dict of top-level replacements."""
    try:
        user = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}malformed YAML: {exc}") from exc
    user = {} if user is None else user
    rd = _Reader(_line_index(text))
    raw = rd.merge(user, DEFAULTS)
    _clear_default_alternatives(user, raw, "target", ("delta_u", "theta_deg", "u"))
    _clear_default_alternatives(user, raw, "pointing", ("look_deg", "u_bar"))
    for key, val in (overrides or {}).items():
        if val is not None:
            raw[key] = val if not isinstance(raw.get(key), dict) else {**raw[key], **val}
    try:
        return _resolve(rd, raw)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _clear_default_alternatives(user, raw, section, keys):
    given = user.get(section) if isinstance(user, dict) else None
    if isinstance(given, dict) and any(k in given for k in keys):
        for k in keys:
            if k not in given:
                raw[section][k] = None


def load_config(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)


def _resolve(rd, raw):
    g = raw["geometry"]
    geometry = ArrayGeometry(rd.number("geometry.n_elements", g["n_elements"], int),
                             rd.number("geometry.spacing_over_wavelength",
                                       g["spacing_over_wavelength"], positive=True))

    if not isinstance(raw["coupling"], list):
        rd.fail("coupling", "expected a list of coefficients")
    coupling = CouplingProfile(tuple(rd.number(f"coupling[{i}]", c)
                                     for i, c in enumerate(raw["coupling"])))

    jammers = []
    if not isinstance(raw["jammers"], list):
        rd.fail("jammers", "expected a list")
    for i, j in enumerate(raw["jammers"]):
        path = f"jammers[{i}]"
        if not isinstance(j, dict):
            rd.fail(path, "expected a mapping")
        for key in j:
            if key not in _JAMMER_KEYS:
                rd.fail(f"{path}.{key}", "unknown key")
        jammers.append(JammerSpec(_u_from(rd, path, j, "theta_deg", "u"),
                                  rd.number(f"{path}.power_db", j.get("power_db"))))

    env = EnvironmentSpec(geometry, coupling, tuple(jammers),
                          rd.number("noise_power", raw["noise_power"], positive=True),
                          rd.number("k_secondary", raw["k_secondary"], int, positive=True))

    p = raw["pointing"]
    if p.get("u_bar") is not None:
        u_bar = rd.number("pointing.u_bar", p["u_bar"])
    else:
        u_bar = math.sin(math.radians(rd.number("pointing.look_deg", p["look_deg"])))
    alpha = rd.number("pointing.alpha", p["alpha"], positive=True, allow_none=True)
    pointing = PointingState(u_bar, geometry.u3db if alpha is None else alpha)

    t = raw["target"]
    given = [k for k in ("delta_u", "theta_deg", "u") if t.get(k) is not None]
    if len(given) != 1:
        rd.fail("target", "give exactly one of 'delta_u', 'theta_deg' or 'u'")
    if given[0] == "delta_u":
        u0 = u_bar + rd.number("target.delta_u", t["delta_u"])
    elif given[0] == "theta_deg":
        u0 = math.sin(math.radians(rd.number("target.theta_deg", t["theta_deg"])))
    else:
        u0 = rd.number("target.u", t["u"])
    if abs(u0) > 1:
        rd.fail("target", f"target direction {u0} outside [-1, 1]")

    pfa = rd.number("pfa", raw["pfa"])
    if not 0 < pfa < 1:
        rd.fail("pfa", "must lie in (0, 1)")

    if not isinstance(raw["sinr_grid_db"], list) or not raw["sinr_grid_db"]:
        rd.fail("sinr_grid_db", "expected a nonempty list")
    grid = tuple(rd.number(f"sinr_grid_db[{i}]", s) for i, s in enumerate(raw["sinr_grid_db"]))

    kinds = []
    if not isinstance(raw["detectors"], list) or not raw["detectors"]:
        rd.fail("detectors", "expected a nonempty list")
    for i, d in enumerate(raw["detectors"]):
        path = f"detectors[{i}]"
        if not isinstance(d, dict):
            rd.fail(path, "expected a mapping")
        for key in d:
            if key not in _DETECTOR_KEYS:
                rd.fail(f"{path}.{key}", "unknown key")
        try:
            kinds.append(DetectorKind(d.get("name"), d.get("order"), d.get("n_bar"),
                                      bool(d.get("log_form", False)),
                                      bool(d.get("verbatim", False))))
        except ValueError as exc:
            rd.fail(path, str(exc))
    labels = [k.label for k in kinds]
    if len(set(labels)) != len(labels):
        rd.fail("detectors", f"duplicate detector labels {labels}")

    m = raw["mm"]
    stage2 = rd.number("mm.stage2_alpha", m["stage2_alpha"], positive=True, allow_none=True)
    mm = MMConfig(pointing.alpha, rd.number("mm.epsilon", m["epsilon"], positive=True),
                  rd.number("mm.max_iters", m["max_iters"], int, positive=True),
                  bool(m["relative_exit"]), stage2)

    tr = raw["trials"]
    n_cal = rd.number("trials.calibration", tr["calibration"], int, positive=True)
    n_hold = rd.number("trials.holdout", tr["holdout"], int)
    if n_hold < 0:
        rd.fail("trials.holdout", "must be >= 0 (0 skips the hold-out check)")
    n_mc = rd.number("trials.curves", tr["curves"], int, positive=True)

    crb_order = rd.number("crb.order", raw["crb"]["order"], int, positive=True, allow_none=True)
    if crb_order is None:
        crb_order = coupling.order

    sc = raw["scan"]
    scan = {
        "theta_min_deg": rd.number("scan.theta_min_deg", sc["theta_min_deg"]),
        "theta_max_deg": rd.number("scan.theta_max_deg", sc["theta_max_deg"]),
        "step_deg": rd.number("scan.step_deg", sc["step_deg"], positive=True),
        "target_deg": rd.number("scan.target_deg", sc["target_deg"]),
    }
    if scan["theta_max_deg"] < scan["theta_min_deg"]:
        rd.fail("scan", "theta_max_deg < theta_min_deg")

    threads = rd.number("threads", raw["threads"], int)
    if threads < 0:
        rd.fail("threads", "must be >= 0")

    return ExperimentConfig(
        env=env, pointing=pointing, u0=u0,
        phase=rd.number("target.phase", t["phase"]),
        pfa=pfa, sinr_grid_db=grid, detectors=tuple(kinds), mm=mm,
        master_seed=rd.number("seeds.master", raw["seeds"]["master"], int),
        n_calibration=n_cal, n_holdout=n_hold, n_curves=n_mc,
        crb_order=crb_order, scan=scan,
        thresholds_file=raw["thresholds_file"],
        threads=threads, output_dir=str(raw["output_dir"]), raw=raw)
