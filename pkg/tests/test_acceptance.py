"""The ten acceptance criteria, each at its stated tolerance and runtime limit.

Every test prints one ``[PASS]`` / ``[FAIL]`` line; the lines are also
collected and repeated in the pytest terminal summary.
"""

import json
import math
from pathlib import Path
import time

import numpy as np

from conftest import ACCEPTANCE_LINES
from lagflow.constructions import (booster_eigen_ratio, booster_profile, booster_uniform_decay,
                                   cone_invariance_check, cone_slope)
from lagflow.expander import converge_to_expander
from lagflow.flow import FlowDomain, PotentialState, gradient_identity_check, run_flow
from lagflow.inequalities import run_campaign
from lagflow.spectral import angle_via_complex_det, eigvals_sym, lagrangian_angle

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def load(name):
    cfg = json.loads((CONFIGS / name).read_text())
    cfg.pop("schema_version", None)
    return cfg


def verdict(number, title, ok, elapsed, limit, detail):
    ok = bool(ok) and elapsed < limit
    line = (f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail} | "
            f"{elapsed:.1f}s (limit {limit:g}s)")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_01_angle_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    total = 0
    for n in range(1, 6):
        A = rng.uniform(-5, 5, size=(2000, n, n))
        B = 0.5 * (A + np.swapaxes(A, -1, -2))
        a = lagrangian_angle(eigvals_sym(B))
        b = angle_via_complex_det(B)
        worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a)))))
        total += B.shape[0]
    elapsed = time.perf_counter() - t0
    verdict(1, "angle oracle", total == 10_000 and worst <= 1e-10, elapsed, 5,
            f"{total} matrices, worst relative diff {worst:.2e}")


def test_criterion_02_inequality_campaign():
    t0 = time.perf_counter()
    rep = run_campaign({"samples": 100_000, "dims": [2, 3]})
    elapsed = time.perf_counter() - t0
    checks = {r["check"].split(":")[0] for r in rep["results"]}
    enough = all(r["count"] >= 100_000 for r in rep["results"])
    verdict(2, "inequality campaigns", rep["violations"] == 0 and enough and len(checks) == 5, elapsed, 60,
            f"{len(rep['results'])} checks x 1e5 samples, {rep['violations']} violations")


def test_criterion_03_cone_invariance():
    t0 = time.perf_counter()
    c = cone_slope(0.5, 0.5)
    pairs = [(d1, d2) for d1 in (0.05, 0.3, 0.5, 0.7, 0.95) for d2 in (0.1, 0.5, 1.0, 2.0)]
    viol = 0
    for i, (d1, d2) in enumerate(pairs):
        viol += cone_invariance_check(cone_slope(d1, d2), 100_000, rng_seed=300 + i).violations
    elapsed = time.perf_counter() - t0
    verdict(3, "cone invariance", abs(c.tau - 2.0) <= 1e-12 and viol == 0, elapsed, 10,
            f"tau - 2 = {c.tau - 2.0:.1e}, {len(pairs)} pairs x 1e5 samples, {viol} violations")


def test_criterion_04_booster_suite():
    t0 = time.perf_counter()
    ks = (4, 8, 16)
    problems = []
    for tau in (2.0, 4.0):
        for kind in ("outer", "inner"):
            for k in ks:
                p = booster_profile(kind, k, tau, 0.05)
                r = np.linspace(k, 2 * k, 401) if kind == "outer" else np.linspace(0, 1.0 / k, 401)
                rad, ang = p.hessian_eigs(r)
                ident = max(np.abs(rad - 1).max(), np.abs(ang - 1).max())
                if ident > 1e-12:
                    problems.append(f"{kind} tau={tau} k={k}: identity defect {ident:.1e}")
                rr = p.r_grid[p.r_grid > 0]
                ratio = np.array([booster_eigen_ratio(p, x) for x in rr[:: max(1, rr.size // 2000)]])
                if ratio.min() < 1 / tau - 1e-9 or ratio.max() > tau + 1e-9:
                    problems.append(f"{kind} tau={tau} k={k}: ratio [{ratio.min()}, {ratio.max()}]")
            rows = booster_uniform_decay(kind, tau, 0.05, 1.0, list(ks))
            sups = [row["sup_F1"] for row in rows]
            if not all(b < a for a, b in zip(sups, sups[1:])):
                problems.append(f"{kind} tau={tau}: sup f not decreasing {sups}")
            for row in rows:
                if row["plateau_regime"] and row["sup_F1"] > row["bound"] * (1 + 1e-12):
                    problems.append(f"{kind} tau={tau} k={row['k']}: sup f {row['sup_F1']} > {row['bound']}")
    elapsed = time.perf_counter() - t0
    verdict(4, "booster suite", not problems, elapsed, 10,
            "12 profiles checked" if not problems else "; ".join(problems[:3]))


def test_criterion_05_exact_quadratic():
    t0 = time.perf_counter()
    res = run_flow(load("flow_quadratic.json"))
    dom = res.state.domain
    exact = dom.background() + 1.0 * (math.atan(1.0) + math.atan(-0.4))
    err = float(np.abs(res.state.u() - exact).max())
    elapsed = time.perf_counter() - t0
    verdict(5, "exact quadratic flow", err <= 1e-12 and res.state.t == 1.0, elapsed, 5,
            f"max |u - exact| = {err:.1e}")


def test_criterion_06_preservation():
    t0 = time.perf_counter()
    cfg = load("flow_preservation.json")
    res = run_flow(cfg)
    elapsed = time.perf_counter() - t0
    pres = res.summary["preservation"]
    drops = {k: v["drop"] for k, v in pres.items()}
    ok = (cfg["resolution"] == 128 and cfg["n"] == 2 and res.summary["T_end"] == 1.0
          and len(pres) == 4 and all(d <= 1e-3 for d in drops.values()))
    detail = ", ".join(f"{k} {pres[k]['initial']:.4f} drop {d:.1e}" for k, d in drops.items())
    verdict(6, "preservation", ok, elapsed, 300, detail)


def test_criterion_07_decay_exponent():
    t0 = time.perf_counter()
    res = run_flow(load("flow_decay.json"))
    elapsed = time.perf_counter() - t0
    slope = res.summary["decay_slope"]
    first = res.records[0]
    two_convex = first.min_star_omega > 0  # n = 1: every datum is 2-convex
    verdict(7, "decay exponent", slope is not None and slope <= -0.4 and two_convex, elapsed, 120,
            f"log-log slope of max_D3_norm on [0.1, 1] = {slope:.3f}")


def test_criterion_08_bounded_gradient():
    t0 = time.perf_counter()
    cfg = load("flow_bounded_gradient.json")
    res = run_flow(cfg)
    elapsed = time.perf_counter() - t0
    s = res.summary
    ok = (res.state.domain.A0 == 0).all() and s["T_end"] == 5.0 and s["grad_sup_nonincreasing"] \
        and s["D2_ratio"] < 0.1
    verdict(8, "bounded-gradient convergence", ok, elapsed, 300,
            f"grad_sup non-increasing {s['grad_sup_nonincreasing']}, D2 ratio at T=5 {s['D2_ratio']:.4f}")


def test_criterion_09_expander():
    t0 = time.perf_counter()
    one = converge_to_expander(load("expander_quadratic_1d.json"))
    radial = converge_to_expander(load("expander_radial.json"))
    elapsed = time.perf_counter() - t0
    lim = [m for m in radial.members if m["k"] == "inf"][0]
    ss = max(lim["self_similarity"].values())
    trace_all = all(m["trace_ok"] for m in radial.members)
    ok = (one.profile.sup <= 1e-8 and lim["self_similar"] and set(lim["self_similarity"]) == {"0.25", "0.5", "2.0"}
          and trace_all)
    finite = ", ".join(f"k={m['k']:g}: {max(m['self_similarity'].values()):.1e}"
                       for m in radial.members if m["k"] != "inf")
    verdict(9, "expander", ok, elapsed, 300,
            f"n=1 residual {one.profile.sup:.1e}; radial limit self-similarity {ss:.1e} "
            f"(bound {lim['self_similarity_bound']:.1e}; finite k {finite}); "
            f"trace defect {lim['trace_defect']:.1e} <= c10*0.01 = {lim['trace_bound']:.1e}, all members {trace_all}")


def test_criterion_10_gradient_identity_order():
    t0 = time.perf_counter()

    def residual(N):
        dom = FlowDomain("periodic", 1, math.pi, N, np.array([[0.5]]))
        return gradient_identity_check(PotentialState(dom, 0.0, 0.3 * np.sin(dom.axis())))

    errs = [residual(N) for N in (64, 128, 256)]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    elapsed = time.perf_counter() - t0
    verdict(10, "gradient identity order", min(orders) >= 1.9, elapsed, 60,
            f"residuals {', '.join(f'{e:.2e}' for e in errs)}, orders {', '.join(f'{o:.3f}' for o in orders)}")
