"""Scenario files: INI sections, ``key = value``, arrays as comma lists.

    [scenario]     name
    [problem]      modes, d, c, coupling (rows separated by ';')
    [mode.<i>]     kind, potential, drift, exponent   (one section per mode)
    [numerics]     n, h, controls, v_max, tol, lp_tol, tol_face, measures
    [experiment]   pipeline, lambdas, seed, probes, probe_mode, mc_paths,
                   mc_lambda, mc_point, horizon, c_values
    [output]       directory, formats

Unknown sections or keys are errors that carry the line number.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import ControlGrid, HamiltonianSpec, ProblemSpec, TorusGrid, validate_coupling

PIPELINES = ("solve", "critical", "mather", "select", "converge", "montecarlo", "all")
FORMATS = ("csv", "json")

KEYS = {
    "scenario": {"name"},
    "problem": {"modes", "d", "c", "coupling"},
    "mode": {"kind", "potential", "drift", "exponent"},
    "numerics": {"n", "h", "controls", "v_max", "tol", "lp_tol", "tol_face", "measures"},
    "experiment": {
        "pipeline",
        "lambdas",
        "seed",
        "probes",
        "probe_mode",
        "mc_paths",
        "mc_lambda",
        "mc_point",
        "horizon",
        "c_values",
    },
    "output": {"directory", "formats"},
}


class ParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class Scenario:
    name: str
    problem: ProblemSpec
    n: int
    controls: int = 65
    h: float | None = None
    v_max: float | None = None
    tol: float = 1e-9
    lp_tol: float = 1e-9
    tol_face: float = 1e-8
    measures: int = 16
    pipeline: str = "all"
    lambdas: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    seed: int = 0
    probes: list = field(default_factory=list)  # points in [0,1)^d
    probe_mode: int = 0
    mc_paths: int = 1000
    mc_lambda: float | None = None
    mc_point: list | None = None
    horizon: float | None = None
    c_values: list = field(default_factory=lambda: [0.0])
    directory: str = "out"
    formats: tuple = FORMATS

    @property
    def d(self) -> int:
        return self.problem.d

    def grid(self) -> TorusGrid:
        return TorusGrid(self.d, self.n)

    def control_grid(self) -> ControlGrid:
        vm = self.problem.default_v_max(max(abs(c) for c in self.c_values)) if self.v_max is None else self.v_max
        return ControlGrid.uniform(self.d, self.controls, vm)


def _key_lines(text: str) -> dict:
    """(section, key) -> line number of its first occurrence."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            out.setdefault((section, None), no)
        elif section and s and s[0] not in "#;":
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            out.setdefault((section, key), no)
    return out


def _floats(text: str, what: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"{what}: expected a comma list of numbers, got {text!r}") from None


def _scalar(conv, text, what):
    try:
        return conv(text)
    except ValueError:
        raise ValidationError(f"{what}: cannot read {text!r}") from None


def _matrix(text: str) -> np.ndarray:
    rows = [_floats(r, "coupling") for r in text.split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ValidationError("coupling: rows have different lengths")
    return np.array(rows)


def parse_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",), empty_lines_in_values=False)
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ParseError("content before the first [section]", e.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ParseError(str(e).split(":")[-1].strip() or "duplicate entry", e.lineno) from None
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ParseError("malformed line (expected key = value)", line) from None
    lines = _key_lines(text)
    for sec in cp.sections():
        base = sec.split(".")[0] if sec.startswith("mode.") else sec
        if base not in KEYS:
            raise ParseError(f"unknown section [{sec}]", lines.get((sec, None)))
        for key in cp[sec]:
            if key not in KEYS[base]:
                raise ParseError(f"unknown key {key!r} in [{sec}]", lines.get((sec, key)))
    get = lambda sec, key, default=None: cp.get(sec, key, fallback=default)  # noqa: E731

    # problem
    d = _scalar(int, get("problem", "d", "1"), "problem.d")
    m = _scalar(int, get("problem", "modes", "1"), "problem.modes")
    c = _scalar(float, get("problem", "c", "0"), "problem.c")
    if m < 1:
        raise ValidationError("problem.modes must be positive")
    coup = get("problem", "coupling")
    bmat = np.zeros((1, 1)) if coup is None and m == 1 else None
    if bmat is None:
        if coup is None:
            raise ValidationError("problem.coupling is required for more than one mode")
        bmat = _matrix(coup)
    coupling = validate_coupling(bmat)
    mode_secs = sorted(s for s in cp.sections() if s.startswith("mode."))
    want = [f"mode.{i}" for i in range(m)]
    if mode_secs != sorted(want):
        raise ValidationError(f"expected sections {want}, found {mode_secs}")
    hams = []
    for i in range(m):
        sec = cp[f"mode.{i}"]
        drift = sec.get("drift")
        if drift is not None:
            drift = tuple(t.strip() for t in drift.split(","))
        try:
            hams.append(
                HamiltonianSpec(
                    sec.get("kind", "quadratic").strip(),
                    sec.get("potential", "0").strip(),
                    drift=drift,
                    exponent=_scalar(float, sec.get("exponent", "2"), f"mode.{i}.exponent"),
                    mode=i,
                    d=d,
                )
            )
        except ValidationError as e:
            raise ValidationError(f"mode.{i}: {e}") from None
    problem = ProblemSpec(tuple(hams), coupling, d=d, c=c)

    sc = Scenario(name=get("scenario", "name", "scenario").strip(), problem=problem, n=0)
    num = lambda key, conv, default: _scalar(conv, get("numerics", key, default), f"numerics.{key}")  # noqa: E731
    sc.n = num("n", int, "64")
    sc.controls = num("controls", int, "65")
    sc.h = None if get("numerics", "h") is None else num("h", float, None)
    sc.v_max = None if get("numerics", "v_max") is None else num("v_max", float, None)
    sc.tol = num("tol", float, "1e-9")
    sc.lp_tol = num("lp_tol", float, "1e-9")
    sc.tol_face = num("tol_face", float, "1e-8")
    sc.measures = num("measures", int, "16")

    sc.pipeline = get("experiment", "pipeline", "all").strip()
    if sc.pipeline not in PIPELINES:
        raise ValidationError(f"experiment.pipeline must be one of {PIPELINES}")
    if get("experiment", "lambdas") is not None:
        sc.lambdas = _floats(get("experiment", "lambdas"), "experiment.lambdas")
    if not sc.lambdas or any(l <= 0 for l in sc.lambdas) or any(b >= a for a, b in zip(sc.lambdas, sc.lambdas[1:])):
        raise ValidationError("experiment.lambdas must be positive and strictly decreasing")
    sc.seed = _scalar(int, get("experiment", "seed", "0"), "experiment.seed")
    if get("experiment", "probes") is not None:
        vals = _floats(get("experiment", "probes"), "experiment.probes")
        if len(vals) % d:
            raise ValidationError(f"experiment.probes: need a multiple of d={d} coordinates")
        sc.probes = [vals[k : k + d] for k in range(0, len(vals), d)]
    sc.probe_mode = _scalar(int, get("experiment", "probe_mode", "0"), "experiment.probe_mode")
    if not 0 <= sc.probe_mode < m:
        raise ValidationError("experiment.probe_mode out of range")
    sc.mc_paths = _scalar(int, get("experiment", "mc_paths", "1000"), "experiment.mc_paths")
    if get("experiment", "mc_lambda") is not None:
        sc.mc_lambda = _scalar(float, get("experiment", "mc_lambda"), "experiment.mc_lambda")
    if get("experiment", "mc_point") is not None:
        sc.mc_point = _floats(get("experiment", "mc_point"), "experiment.mc_point")
        if len(sc.mc_point) != d:
            raise ValidationError("experiment.mc_point needs d coordinates")
    if get("experiment", "horizon") is not None:
        sc.horizon = _scalar(float, get("experiment", "horizon"), "experiment.horizon")
    if get("experiment", "c_values") is not None:
        sc.c_values = _floats(get("experiment", "c_values"), "experiment.c_values")

    sc.directory = get("output", "directory", "out").strip()
    fm = tuple(t.strip() for t in get("output", "formats", "csv, json").split(",") if t.strip())
    if not fm or any(f not in FORMATS for f in fm):
        raise ValidationError(f"output.formats must be a subset of {FORMATS}")
    sc.formats = fm
    # fail early on grid/control problems
    sc.grid()
    sc.control_grid()
    return sc


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
