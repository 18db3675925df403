"""hj-switch: scenario-driven batch runner.

    hj-switch run <scenario> [--out DIR] [--seed N] [--threads K]
    hj-switch validate <scenario>

Exit codes: 0 ok, 2 parse/validation error, 3 numerical failure,
4 an acceptance check inside the pipeline failed (outputs are still written).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .errors import NumericalError, ValidationError
from .mather import MatherFace, build_lp, closedness_residual, extreme_mather_measures, solve_lp
from .montecarlo import estimate_occupation, simulate_discounted_cost, synthesize_feedback
from .scenario import Scenario, load_scenario
from .selection import SelectionProblem, convergence_study, solve_u0, verify_u0_membership
from .solver import build_scheme, estimate_critical_value, solve_discounted

logger = logging.getLogger("hjswitch")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


def _fmt(x) -> str:
    return "%.17g" % x


def _to_json(obj, indent=0) -> str:
    """JSON with every float printed as %.17g; non-finite floats become null."""
    pad, nxt = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{nxt}{json.dumps(str(k))}: {_to_json(v, indent + 1)}" for k, v in sorted(obj.items())]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(nxt + _to_json(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj) if math.isfinite(obj) else "null"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


class Outputs:
    """Writes files under one directory and remembers them for the manifest."""

    def __init__(self, root: Path, formats):
        self.root = root
        self.formats = set(formats)
        self.files: list[str] = []
        root.mkdir(parents=True, exist_ok=True)

    def _write(self, name: str, text: str) -> None:
        (self.root / name).write_text(text, encoding="utf-8")
        self.files.append(name)

    def csv(self, name: str, header, rows) -> None:
        if "csv" not in self.formats:
            return
        lines = [",".join(header)]
        for row in rows:
            lines.append(",".join(_fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
        self._write(name, "\n".join(lines) + "\n")

    def json(self, name: str, obj) -> None:
        if "json" not in self.formats:
            return
        self._write(name, _to_json(obj) + "\n")


def _grid_header(d: int) -> list:
    return ["x"] if d == 1 else ["x1", "x2"]


def _node_of(scheme, point) -> int:
    return int(scheme.grid.nearest(np.asarray(point, float).reshape(1, -1))[0])


class Runner:
    def __init__(self, sc: Scenario, out: Outputs, threads: int = 1):
        self.sc = sc
        self.out = out
        self.threads = threads
        self.timings: dict = {}
        self.failures: list = []
        self.scheme = build_scheme(sc.problem, sc.grid(), sc.control_grid(), sc.h)
        self._mather = None

    def timed(self, name, fn):
        t = time.perf_counter()
        res = fn()
        self.timings[name] = time.perf_counter() - t
        return res

    # -- stages --------------------------------------------------------------

    def solve(self):
        sc, s = self.sc, self.scheme
        summary = []
        for j, c in enumerate(sc.c_values):
            for k, lam in enumerate(sc.lambdas):
                u = solve_discounted(s, lam, c, sc.tol)
                name = f"solve_c{j}_lam{k}.csv"
                self.out.csv(name, _grid_header(s.grid.d) + ["mode", "value"], u.csv_rows())
                self.out.csv(name.replace(".csv", "_log.csv"), ["iteration", "residual"], u.meta["log"])
                summary.append(
                    {"lambda": lam, "c": c, "iterations": u.meta["iterations"], "residual": u.meta["residual"], "sup_norm": u.sup_norm()}
                )
        self.out.json("solve.json", {"scenario": sc.name, "runs": summary})

    def critical(self):
        est = estimate_critical_value(self.scheme, self.sc.lambdas, self.sc.tol)
        self.out.csv("critical.csv", ["lambda", "minus_rate_u_mean"], zip(est.rates, est.raw))
        self.out.json(
            "critical.json",
            {"scenario": self.sc.name, "value": est.value, "error": est.error, "spread": est.spread, "extrapolation_residual": est.extrapolation_residual},
        )
        return est

    def mather(self):
        if self._mather is None:
            s, sc = self.scheme, self.sc
            lp = build_lp(s)
            sol = solve_lp(lp, sc.lp_tol)
            ext = extreme_mather_measures(lp, sc.measures, sc.seed, sol, sc.tol_face) or [sol.measure]
            self._mather = (lp, sol, ext)
            head = _grid_header(s.grid.d) + (["v"] if s.grid.d == 1 else ["v1", "v2"]) + ["mode", "weight"]
            self.out.csv("mather_measure.csv", head, sol.measure.csv_rows(s.grid, s.controls, 1e-14))
            self.out.csv("mather_dual.csv", _grid_header(s.grid.d) + ["mode", "value"], _rows(s, sol.w))
            self.out.json(
                "mather.json",
                {
                    "scenario": sc.name,
                    "objective": sol.objective,
                    "c_h": sol.c_h,
                    "gap": sol.gap,
                    "dual_infeasibility": sol.dual_infeasibility,
                    "closedness": closedness_residual(s, sol.measure),
                    "extreme_measures": {"requested": sc.measures, "distinct": len(ext)},
                    "supports": [
                        [[*map(float, s.grid.nodes[x]), *map(float, s.controls.values[k]), int(i), float(mu.weights[i, x, k])] for i, x, k in sorted(mu.support())]
                        for mu in ext
                    ],
                },
            )
        return self._mather

    def select(self):
        s, sc = self.scheme, self.sc
        lp, sol, ext = self.mather()
        sel = SelectionProblem(s, sol.c_h, ext, MatherFace(lp, sol, sc.tol_face), sc.tol_face)
        res = solve_u0(sel)
        u0 = res.function(s.grid)
        rep = verify_u0_membership(sel, u0, res.measures)
        self.out.csv("u0.csv", _grid_header(s.grid.d) + ["mode", "value"], u0.csv_rows())
        self.out.json(
            "select.json",
            {
                "scenario": sc.name,
                "c_h": sol.c_h,
                "cuts": res.cuts,
                "lp_iterations": res.iterations,
                "membership": {
                    "min_slack": rep.min_slack,
                    "max_measure_average": rep.max_measure_average,
                    "max_tightness": rep.max_tightness,
                    "ok": rep.ok,
                },
            },
        )
        if not rep.ok:
            self.failures.append("u0 membership")
        return u0

    def converge(self):
        s, sc = self.scheme, self.sc
        if len(sc.lambdas) < 3:
            raise ValidationError("converge needs at least three discount rates")
        probes = [(sc.probe_mode, _node_of(s, p)) for p in sc.probes] or None
        rep = convergence_study(
            sc.problem, s.grid, s.controls, s.h, sc.lambdas, probes, tol=sc.tol, k=sc.measures, seed=sc.seed, scheme=s
        )
        self.out.csv("converge.csv", ["lambda", "dist_u0", "ergodic", "closedness"], ((r.lam, r.dist_u0, r.ergodic, r.closedness) for r in rep.rows))
        self.out.json("converge.json", json.loads(rep.to_json()) | {"scenario": sc.name})
        if not rep.ok:
            self.failures.append("convergence study")
        return rep

    def montecarlo(self):
        s, sc = self.scheme, self.sc
        lam = sc.mc_lambda if sc.mc_lambda is not None else sc.lambdas[0]
        point = sc.mc_point or (sc.probes[0] if sc.probes else [0.5] * s.grid.d)
        y, mode = _node_of(s, point), sc.probe_mode
        c = sc.c_values[0]
        u = solve_discounted(s, lam, c, sc.tol)
        pol = synthesize_feedback(s, u)
        res = simulate_discounted_cost(s, pol, y, mode, lam, sc.mc_paths, sc.horizon, sc.seed, self.threads)
        res.scenario = sc.name
        grid_value = float(u.values[mode, y])
        slack = 5e-2 * (1 + u.sup_norm())
        ok = abs(res.estimate - grid_value) <= 3 * res.stderr + slack
        occ = estimate_occupation(s, pol, y, mode, lam, sc.mc_paths, sc.horizon, sc.seed, self.threads)
        self.out.json(
            "montecarlo.json",
            json.loads(res.to_json()) | {"grid_value": grid_value, "lambda": lam, "point": [float(v) for v in s.grid.nodes[y]], "mode": mode, "within_tolerance": ok, "occupation_closedness": closedness_residual(s, occ.measure)},
        )
        head = _grid_header(s.grid.d) + (["v"] if s.grid.d == 1 else ["v1", "v2"]) + ["mode", "weight"]
        self.out.csv("occupation.csv", head, occ.measure.csv_rows(s.grid, s.controls, 0.0))
        if not ok:
            self.failures.append("Monte Carlo representation")
        return res

    def run(self, pipeline: str):
        stages = ["solve", "critical", "mather", "select", "converge", "montecarlo"] if pipeline == "all" else [pipeline]
        for st in stages:
            self.timed(st, getattr(self, st))


def _rows(scheme, w):
    for i in range(w.shape[0]):
        for k, x in enumerate(scheme.grid.nodes):
            yield (*x, i, w[i, k])


def run(sc: Scenario, out_dir=None, seed=None, threads: int = 1, scenario_text: str = "") -> int:
    if seed is not None:
        sc.seed = int(seed)
    root = Path(out_dir if out_dir is not None else sc.directory)
    out = Outputs(root, sc.formats)
    runner = Runner(sc, out, threads)
    runner.run(sc.pipeline)
    (root / "timings.json").write_text(_to_json(runner.timings) + "\n", encoding="utf-8")
    manifest = {
        "scenario": sc.name,
        "pipeline": sc.pipeline,
        "inputs_sha256": hashlib.sha256(scenario_text.encode("utf-8")).hexdigest(),
        "seed": sc.seed,
        "versions": {"hjswitch": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
        "files": sorted(out.files) + ["timings.json"],
        "failed_checks": runner.failures,
    }
    (root / "manifest.json").write_text(_to_json(manifest) + "\n", encoding="utf-8")
    for f in runner.failures:
        logger.error("check failed: %s", f)
    return EXIT_CHECK if runner.failures else EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="hj-switch", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="execute the scenario's pipeline")
    r.add_argument("scenario")
    r.add_argument("--out", default=None)
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--threads", type=int, default=1)
    v = sub.add_parser("validate", help="parse and validate a scenario")
    v.add_argument("scenario")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        text = Path(args.scenario).read_text(encoding="utf-8")
        sc = load_scenario(args.scenario)
        if args.cmd == "validate":
            print(f"{sc.name}: ok (m={sc.problem.m}, d={sc.d}, n={sc.n}, pipeline={sc.pipeline})")
            return EXIT_OK
        code = run(sc, args.out, args.seed, args.threads, text)
        print(f"{sc.name}: {'ok' if code == 0 else 'check failed'}")
        return code
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
