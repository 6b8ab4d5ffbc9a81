"""Command-line entry point: ``lagflow <command> --config FILE [--seed N] [--out DIR]``.

Exit codes: 0 pass, 1 property failure, 2 input error, 3 numerical abort.
Every command writes its artifacts plus ``manifest.json`` into ``--out``.
Reports carry no timestamps so reruns are byte-identical; timestamps live
only in the manifest.
"""

import argparse
import copy
from datetime import datetime, timezone
import hashlib
import json
import math
from pathlib import Path
import sys

import jsonschema
import numpy as np

from . import __version__
from .constructions import (GridSpec, booster_eigen_ratio, booster_profile, cone_invariance_check,
                            cone_slope)
from .errors import (InfeasibleConstraintsError, InvalidInputError, LagflowError, NumericalAbort,
                     SigmaSelectionError)
from .expander import converge_to_expander
from .flow import FIELDS, run_flow
from .inequalities import DEFAULT_CAMPAIGN, run_campaign
from .io import dumps_json, write_csv, write_json
from .regularization import regularize_initial, sample_field

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_ABORT = 0, 1, 2, 3
SCHEMA_VERSION = 1

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer"}
_matrix = {"type": "array", "items": {"type": "array", "items": _num}}


def _schema(props, required=()):
    props = dict(props, schema_version={"const": SCHEMA_VERSION}, seed=_int)
    return {"type": "object", "properties": props,
            "required": ["schema_version", *required], "additionalProperties": False}


SCHEMAS = {
    "flow": _schema({
        "mode": {"enum": ["periodic", "interval", "radial"]},
        "n": {"type": "integer", "minimum": 1, "maximum": 8},
        "R": _pos, "resolution": {"type": "integer", "minimum": 16},
        "A0": _matrix, "initial": {"type": "object"},
        "dt": _pos, "cfl": _pos, "T_end": _pos, "sample_dt": _pos,
        "sample_times": {"type": "array", "items": _pos},
        "tol_mon": _pos, "snapshot": {"type": "boolean"},
        "expect": {"type": "object", "properties": {
            "decay_slope_max": _num, "gradient_preserved": {"type": "boolean"},
            "D2_ratio_max": _num, "exact_residual_max": _num}, "additionalProperties": False},
    }, ["n", "R", "resolution", "T_end"]),
    "verify": _schema({
        "samples": {"type": "integer", "minimum": 1},
        "dims": {"type": "array", "items": {"type": "integer", "minimum": 1, "maximum": 8}},
        "checks": {"type": "array", "items": {"type": "string"}},
        "c_param": _num, "box": _pos, "eps_pairs": {"type": "object"},
    }),
    "cone": _schema({
        "delta1": _pos, "delta2": _pos, "samples": {"type": "integer", "minimum": 1},
        "pairs": {"type": "array", "items": {"type": "array", "items": _pos,
                                             "minItems": 2, "maxItems": 2}},
        "tau_factor": _pos, "extent": _pos,
    }, ["delta1", "delta2"]),
    "booster": _schema({
        "kind": {"enum": ["outer", "inner"]}, "k": _pos, "tau": _pos, "theta": _pos,
        "layer_cells": _int, "r_max": _pos, "samples": {"type": "integer", "minimum": 2},
    }, ["kind", "k", "tau"]),
    "expander": _schema({
        "mode": {"enum": ["radial", "interval"]}, "n": {"type": "integer", "minimum": 1},
        "R": _pos, "resolution": {"type": "integer", "minimum": 16},
        "U0": {"type": "object"}, "k_list": {"type": "array", "items": _pos},
        "tau": _pos, "mu_schedule": {"type": "array", "items": _pos}, "window": _pos,
        "self_similar_times": {"type": "array", "items": _pos}, "trace_time": _pos,
        "cfl": _pos,
    }, ["R", "resolution", "U0"]),
    "regularize": _schema({
        "n": {"type": "integer", "minimum": 1, "maximum": 3}, "A": _matrix,
        "L": _pos, "h": _pos, "eps1": _pos, "eps2": _pos, "k": _pos, "theta": _pos,
        "sigma_cap": _pos, "method": {"enum": ["direct", "fft"]},
    }, ["n", "A", "L", "h", "eps1", "eps2", "k"]),
}


PLOT_TEMPLATE = """# Plot script for {csv}; run with python after installing matplotlib.
import csv
import matplotlib.pyplot as plt

with open({csv!r}) as fh:
    rows = list(csv.DictReader(fh))
x = [float(r[{x!r}]) for r in rows]
for name in {ys!r}:
    plt.plot(x, [float(r[name]) for r in rows], label=name)
plt.xlabel({x!r})
plt.legend()
plt.savefig({png!r})
"""


def write_plot_script(out, csv_name, x, ys):
    path = out / (Path(csv_name).stem + "_plot.py")
    path.write_text(PLOT_TEMPLATE.format(csv=csv_name, x=x, ys=list(ys),
                                         png=Path(csv_name).stem + ".png"))
    return path


# -- commands -------------------------------------------------------------------------
# Each returns (exit code, list of written paths, short status line).


def cmd_flow(cfg, out):
    res = run_flow(cfg)
    s = res.summary
    exp = cfg.get("expect", {})
    verdicts = {"preservation": s["passed"]}
    if "decay_slope_max" in exp:
        verdicts["decay"] = s["decay_slope"] is not None and s["decay_slope"] <= exp["decay_slope_max"]
    if exp.get("gradient_preserved"):
        verdicts["gradient_preserved"] = s["gradient_preserved"]
    if "D2_ratio_max" in exp:
        verdicts["D2_decay"] = s["D2_ratio"] <= exp["D2_ratio_max"]
    if "exact_quadratic_residual" in s:
        verdicts["exact_quadratic"] = s["exact_quadratic_residual"] <= exp.get("exact_residual_max", 1e-12)
    s = dict(s, verdicts=verdicts, flags=res.flags, passed=all(verdicts.values()))
    paths = [res.to_csv(out / "monitors.csv"), write_json(out / "summary.json", s),
             write_plot_script(out, "monitors.csv", "t", [f for f in FIELDS if f != "t"])]
    if cfg.get("snapshot"):
        paths.append(res.state.to_csv(out / "final_state.csv"))
    return (EXIT_PASS if s["passed"] else EXIT_FAIL), paths, f"flow: {verdicts}"


def cmd_verify(cfg, out):
    conf = {k: v for k, v in cfg.items() if k != "schema_version"}
    report = run_campaign(conf)
    path = write_json(out / "report.json", report)
    bad = [r for r in report["results"] if r["violations"]]
    status = f"verify: {report['violations']} violations"
    for r in bad:
        status += f"\n  {r['check']} n={r['n']}: {r['violations']}"
    return (EXIT_PASS if report["passed"] else EXIT_FAIL), [path], status


def cmd_cone(cfg, out):
    seed = int(cfg.get("seed", 0))
    samples = int(cfg.get("samples", 100_000))
    sol = cone_slope(cfg["delta1"], cfg["delta2"])
    pairs = cfg.get("pairs", [[cfg["delta1"], cfg["delta2"]]])
    factor = cfg.get("tau_factor")
    rows = []
    for i, (d1, d2) in enumerate(pairs):
        c = cone_slope(d1, d2)
        tau = c.tau * factor if factor else None
        rep = cone_invariance_check(c, samples, rng_seed=seed + i, tau=tau,
                                    extent=cfg.get("extent", 4.0))
        rows.append(rep.to_dict())
    violations = sum(r["violations"] for r in rows)
    report = {"solution": sol.to_dict(), "tau": sol.tau, "invariance": rows,
              "violations": violations, "passed": violations == 0}
    path = write_json(out / "cone.json", report)
    return (EXIT_PASS if violations == 0 else EXIT_FAIL), [path], f"cone: tau = {sol.tau!r}, {violations} violations"


def cmd_booster(cfg, out):
    grid = GridSpec(layer_cells=int(cfg.get("layer_cells", 512)), r_max=cfg.get("r_max"),
                    samples=int(cfg.get("samples", 2001)))
    p = booster_profile(cfg["kind"], cfg["k"], cfg["tau"], cfg.get("theta", 0.05), grid)
    r = p.r_grid[p.r_grid > 0]
    ratio = np.array([booster_eigen_ratio(p, x) for x in r])
    tau = p.tau
    ok_ratio = bool(ratio.min() >= 1 / tau - 1e-9 and ratio.max() <= tau + 1e-9)
    if p.kind == "outer":
        far = r >= p.k
    else:
        far = r <= 1.0 / p.k
    rad, ang = p.hessian_eigs(r[far])
    ident = float(max(np.abs(rad - 1).max(initial=0.0), np.abs(ang - 1).max(initial=0.0)))
    report = {"kind": p.kind, "k": p.k, "tau": tau, "theta": p.theta, "r_max": p.r_max,
              "ratio_min": float(ratio.min()), "ratio_max": float(ratio.max()), "ratio_ok": ok_ratio,
              "identity_region_defect": ident, "identity_ok": ident <= 1e-12}
    report["passed"] = bool(ok_ratio and report["identity_ok"])
    paths = [p.to_csv(out / "booster.csv"), write_json(out / "booster.json", report),
             write_plot_script(out, "booster.csv", "r", ["u", "f", "fprime", "F"])]
    return (EXIT_PASS if report["passed"] else EXIT_FAIL), paths, f"booster: passed = {report['passed']}"


def cmd_expander(cfg, out):
    conf = {k: v for k, v in cfg.items() if k not in ("schema_version", "seed")}
    run = converge_to_expander(conf)
    rows = {"k": [], "mu": [], "T": [], "residual": []}
    for m in run.members:
        for row in m["residual_trace"]:
            rows["k"].append(math.inf if m["k"] == "inf" else m["k"])
            rows["mu"].append(row["mu"])
            rows["T"].append(row["T"])
            rows["residual"].append(row["residual"])
    prof = run.profile
    paths = [
        write_csv(out / "residual_trace.csv", rows),
        write_csv(out / "profile.csv", {"x": prof.x, "u": prof.u, "residual": prof.residual}),
        write_json(out / "expander.json", {"summary": run.summary, "members": run.members}),
        write_plot_script(out, "profile.csv", "x", ["u", "residual"]),
    ]
    ok = run.summary["passed"]
    return (EXIT_PASS if ok else EXIT_FAIL), paths, f"expander: final residual {run.summary['final_residual']:.3g}"


def cmd_regularize(cfg, out):
    n = int(cfg["n"])
    A = np.array(cfg["A"], dtype=float)
    if A.shape != (n, n) or not np.array_equal(A, A.T):
        raise InvalidInputError(f"A must be a symmetric {n}x{n} matrix")
    L, h = float(cfg["L"]), float(cfg["h"])
    u0 = sample_field(lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, A, x), [-L] * n, [L] * n, h,
                      lambda x: np.broadcast_to(A, x.shape[:-1] + (n, n)))
    try:
        field = regularize_initial(u0, cfg["eps1"], cfg["eps2"], cfg["k"],
                                   theta=cfg.get("theta", 0.05), sigma_cap=cfg.get("sigma_cap"),
                                   method=cfg.get("method", "direct"))
    except SigmaSelectionError as exc:
        path = write_json(out / "regularization.json",
                          {"passed": False, "error": str(exc), "diagnostics": exc.diagnostics})
        return EXIT_FAIL, [path], f"regularize: {exc}"
    rep = field.meta["regularization"]
    rep = dict(rep, passed=bool(rep["strict_2convex"] and rep["slope_ok"]
                                and rep["min_star_omega"] >= rep["target_star_omega"] - 1e-9))
    paths = [field.to_csv(out / "field.csv"), write_json(out / "regularization.json", rep)]
    return (EXIT_PASS if rep["passed"] else EXIT_FAIL), paths, f"regularize: sigma = {rep['sigma']}"


COMMANDS = {"flow": cmd_flow, "verify": cmd_verify, "cone": cmd_cone, "booster": cmd_booster,
            "expander": cmd_expander, "regularize": cmd_regularize}


# -- plumbing -----------------------------------------------------------------------


def load_config(command, path, seed=None):
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from None
    if command == "verify":
        cfg = dict(copy.deepcopy(DEFAULT_CAMPAIGN), **cfg)
    if seed is not None:
        cfg["seed"] = seed
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidInputError(f"config error at {where}: {exc.message}") from None
    return cfg


def config_digest(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def build_parser():
    parser = argparse.ArgumentParser(prog="lagflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default="lagflow_out", help="output directory")
        p.add_argument("--quiet", action="store_true", help="suppress status output")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    say = (lambda msg: None) if args.quiet else (lambda msg: print(msg))
    paths, cfg = [], None
    try:
        cfg = load_config(args.command, args.config, args.seed)
        code, paths, status = COMMANDS[args.command](cfg, out)
        say(status)
    except NumericalAbort as exc:
        code = EXIT_ABORT
        if exc.state is not None:
            paths = [exc.state.to_csv(out / "abort_state.csv")]
        print(f"numerical abort: {exc}", file=sys.stderr)
    except (InvalidInputError, InfeasibleConstraintsError, LagflowError) as exc:
        code = EXIT_INPUT
        print(f"input error: {exc}", file=sys.stderr)
    manifest = {
        "command": args.command,
        "config_path": str(args.config),
        "config_digest": config_digest(cfg) if cfg is not None else None,
        "seed": cfg.get("seed") if cfg else None,
        "version": __version__,
        "started": started,
        "finished": _now(),
        "exit_code": code,
        "outputs": sorted(str(Path(p).relative_to(out)) for p in paths),
    }
    (out / "manifest.json").write_text(dumps_json(manifest))
    return code


if __name__ == "__main__":
    sys.exit(main())
