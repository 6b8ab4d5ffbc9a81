"""Sampling verification of the algebra behind the two evolution inequalities.

The checks evaluate, on random admissible eigenvalue vectors and random
fully symmetric 3-tensors ``h_ijk``, each algebraic step used to bound
the heat operator of ``log *Omega`` and ``log det S`` from below: the
Cauchy-Schwarz estimates, the sum-of-squares identities, the exact rewrite
of the gradient of ``S_ii + S_jj``, and the assembled final bounds.  The
quoted lower bounds for the heat operators are taken as given formulas.

All ``*_arrays`` functions are vectorized over a leading sample axis.
Margins are oriented so that a correct inequality gives ``margin >= 0``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations, permutations
import math
import os

import numpy as np

from . import spectral
from .errors import InfeasibleConstraintsError, InvalidInputError

MARGIN_RTOL = 1e-12
DEGENERATE_TOL = 1e-8
DEFAULT_BOX = 4.0
_MAX_DRAWS = 2_000_000
_MIN_ACCEPT_RATE = 1e-3


def symmetrize3(h):
    """Average a ``(..., n, n, n)`` tensor over all index permutations."""
    h = np.asarray(h, dtype=float)
    lead = h.ndim - 3
    axes = [lead, lead + 1, lead + 2]
    out = np.zeros_like(h)
    for perm in permutations(range(3)):
        out += np.moveaxis(h, axes, [axes[p] for p in perm])
    return out / 6.0


@dataclass(frozen=True)
class HSample:
    """Fully symmetric 3-tensor standing in for the second fundamental form."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        if h.ndim != 3 or len(set(h.shape)) != 1:
            raise InvalidInputError(f"expected (n, n, n) tensor, got {h.shape}")
        h = symmetrize3(h)
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def n(self):
        return self.h.shape[0]

    @property
    def norm_sq(self):
        """|A|^2 = sum of h_ijk^2 over all index triples."""
        return float(np.sum(self.h**2))


@dataclass(frozen=True)
class AdmissibleSample:
    spectrum: spectral.Spectrum
    h: HSample


@dataclass(frozen=True)
class Constraints:
    """Region the eigenvalues are sampled from.

    ``region`` is one of ``"strict_2convex"``, ``"2convex"`` or
    ``"pair_prod_nonneg"`` (only 1 + lambda_i lambda_j >= 0).  Optional
    ``eps1``/``eps2`` add the certificates *Omega >= eps1, det S >= eps2.
    """

    region: str = "strict_2convex"
    eps1: float = None
    eps2: float = None
    box: float = None

    def __post_init__(self):
        if self.region not in ("strict_2convex", "2convex", "pair_prod_nonneg"):
            raise InvalidInputError(f"unknown region {self.region!r}")
        if self.eps1 is not None and not 0.0 < self.eps1 < 1.0:
            raise InfeasibleConstraintsError(f"eps1 = {self.eps1} outside (0, 1)")
        if self.eps2 is not None and not 0.0 < self.eps2 <= 1.0:
            raise InfeasibleConstraintsError(f"eps2 = {self.eps2} outside (0, 1]; det S <= 1")

    def half_width(self):
        if self.eps1 is not None:
            lam_max = math.sqrt(self.eps1**-2 - 1.0)
            return lam_max if self.box is None else min(lam_max, self.box)
        return DEFAULT_BOX if self.box is None else self.box

    def accept(self, lam):
        if self.region == "strict_2convex":
            ok = spectral.is_two_convex(lam, strict=True)
        elif self.region == "2convex":
            ok = spectral.is_two_convex(lam)
        else:
            ok = spectral.min_pair_prod(lam) >= 0
        if self.eps1 is not None:
            ok &= spectral.star_omega(lam) >= self.eps1
        if self.eps2 is not None:
            ok &= spectral.det_s_frak(lam) >= self.eps2
        return ok


@dataclass
class AdmissibleBatch:
    """Columnar storage of admissible samples; indexing yields AdmissibleSample."""

    lambdas: np.ndarray
    h: np.ndarray
    drawn: int = 0
    constraints: Constraints = field(default_factory=Constraints)

    def __len__(self):
        return self.lambdas.shape[0]

    def __getitem__(self, i):
        return AdmissibleSample(
            spectrum=spectral.Spectrum.from_eigenvalues(self.lambdas[i]),
            h=HSample(self.h[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def sample_eigenvalues(n, constraints, count, rng):
    """Uniform draws from the admissible box, rejection-filtered."""
    half = constraints.half_width()
    chunk = max(10_000, 4 * count)
    kept, got, drawn = [], 0, 0
    while got < count:
        lam = rng.uniform(-half, half, size=(chunk, n))
        drawn += chunk
        ok = constraints.accept(lam)
        kept.append(lam[ok])
        got += int(ok.sum())
        if drawn >= _MAX_DRAWS and got < _MIN_ACCEPT_RATE * drawn:
            raise InfeasibleConstraintsError(
                f"acceptance rate {got / drawn:.2e} below {_MIN_ACCEPT_RATE:.0e} "
                f"after {drawn} draws for n={n}, {constraints}"
            )
    return np.concatenate(kept)[:count], drawn


def sample_h(n, count, rng):
    return symmetrize3(rng.standard_normal(size=(count, n, n, n)))


def sample_admissible(n, constraints=None, count=1000, seed=0):
    """Draw ``count`` admissible (spectrum, h) pairs deterministically from ``seed``."""
    constraints = constraints or Constraints()
    rng = np.random.default_rng(seed)
    lam, drawn = sample_eigenvalues(n, constraints, count, rng)
    lam = np.sort(lam, axis=-1)
    return AdmissibleBatch(lam, sample_h(n, count, rng), drawn, constraints)


# -- identities ----------------------------------------------------------------


def check_sos_identity(li, lj):
    """Defects of (1+li^2)(1+lj^2) = (li+lj)^2 + (1-li lj)^2 = (1+li lj)^2 + (li-lj)^2."""
    li, lj = np.asarray(li, dtype=float), np.asarray(lj, dtype=float)
    lhs = (1 + li**2) * (1 + lj**2)
    d1 = np.abs(lhs - ((li + lj) ** 2 + (1 - li * lj) ** 2))
    d2 = np.abs(lhs - ((1 + li * lj) ** 2 + (li - lj) ** 2))
    if d1.ndim == 0:
        return float(d1), float(d2)
    return d1, d2


def _diag_slices(h):
    # hd[..., k, i] = h_kii
    return np.diagonal(h, axis1=-2, axis2=-1)


# -- *Omega chain ----------------------------------------------------------------


def starom_chain_arrays(lam, h):
    """Terms of the lower bound for the heat operator of log *Omega.

    Returns a dict of arrays: ``Q`` (quoted lower bound), ``G`` (|grad log
    *Omega|^2 in the eigenvalue-weighted form), ``cs_margin`` (Cauchy-Schwarz
    step ``n sum lambda_i^2 h_kii^2 - G``), and ``margin = Q - G / n``.
    """
    lam = np.asarray(lam, dtype=float)
    h = np.asarray(h, dtype=float)
    n = lam.shape[-1]
    hd = _diag_slices(h)
    Q = np.sum((1 + lam**2) * np.diagonal(hd, axis1=-2, axis2=-1) ** 2, axis=-1)
    for i in range(n):
        for j in range(n):
            if i != j:
                coef = 3 + lam[..., i] ** 2 + 2 * lam[..., i] * lam[..., j]
                Q = Q + coef * h[..., i, i, j] ** 2
    for i, j, k in combinations(range(n), 3):
        li, lj, lk = lam[..., i], lam[..., j], lam[..., k]
        Q = Q + (6 + 2 * li * lj + 2 * lj * lk + 2 * lk * li) * h[..., i, j, k] ** 2
    weighted = np.einsum("...i,...ki->...k", lam, hd)
    G = np.sum(weighted**2, axis=-1)
    cs_bound = n * np.sum(lam[..., None, :] ** 2 * hd**2, axis=(-2, -1))
    return {
        "Q": Q,
        "G": G,
        "cs_margin": cs_bound - G,
        "cs_scale": 1 + cs_bound + G,
        "margin": Q - G / n,
        "scale": 1 + Q + G / n,
    }


def check_starom_chain(s):
    """Margin of Q - |grad log *Omega|^2 / n for one admissible sample."""
    lam = s.spectrum.lambdas
    if s.spectrum.min_pair_prod < 0:
        raise InvalidInputError("sample violates 1 + lambda_i lambda_j >= 0")
    out = starom_chain_arrays(lam, s.h.h)
    return float(out["margin"])


# -- det S chain -------------------------------------------------------------


def detst_chain_arrays(lam, h):
    """Every step of the lower bound for the heat operator of log det S.

    Returned margins (``>= 0`` when the step holds) and defects (``~ 0`` for
    exact identities), each with a ``*_scale`` for relative tolerances:

    * ``rewrite_defect``: the split of grad(S_ii + S_jj) into the
      (h_kii + h_kjj) and (h_kii - h_kjj) parts,
    * ``quotient_defect``: the same after dividing by S_ii + S_jj,
    * ``young_margin``: (x a - y b)^2 <= 2 x^2 a^2 + 2 y^2 b^2,
    * ``cs_margin``: |grad log det S|^2 <= n(n-1)/2 * sum of squared ratios,
    * ``sos_defect``: rewriting the quoted bound with the sum-of-squares identity,
    * ``middle_margin``: sum (4 h_kij^2 + a^2 + b^2) >= 2|A|^2,
    * ``final_margin``: quoted bound - 2|A|^2 - |grad log det S|^2 / (n(n-1)).

    ``degenerate`` flags samples with a pair margin below 1e-8.
    """
    lam = np.asarray(lam, dtype=float)
    h = np.asarray(h, dtype=float)
    n = lam.shape[-1]
    if n < 2:
        raise InvalidInputError("det S chain needs n >= 2")
    hd = _diag_slices(h)
    iu, ju = np.triu_indices(n, k=1)
    li, lj = lam[..., iu], lam[..., ju]  # (..., P)
    a = hd[..., :, iu] + hd[..., :, ju]  # (..., n_k, P)
    b = hd[..., :, iu] - hd[..., :, ju]
    hkij = h[..., :, iu, ju]
    D = (1 + li**2) * (1 + lj**2)
    psum, pprod = li + lj, 1 + li * lj
    S = psum * pprod / D
    p = (1 - lam**2) / (1 + lam**2)
    pi, pj = p[..., iu], p[..., ju]

    neg_grad = pi[..., None, :] * hd[..., :, iu] + pj[..., None, :] * hd[..., :, ju]
    split = ((1 - li**2 * lj**2) / D)[..., None, :] * a - ((li**2 - lj**2) / D)[..., None, :] * b
    rewrite_defect = np.max(np.abs(neg_grad - split), axis=(-2, -1))
    rewrite_scale = 1 + np.max(np.abs(neg_grad), axis=(-2, -1))

    x = (1 - li * lj) / psum
    y = (li - lj) / pprod
    ratio = neg_grad / S[..., None, :]
    quotient = x[..., None, :] * a - y[..., None, :] * b
    quotient_defect = np.max(np.abs(ratio - quotient), axis=(-2, -1))
    quotient_scale = 1 + np.max(np.abs(ratio), axis=(-2, -1))

    young_rhs = 2 * x[..., None, :] ** 2 * a**2 + 2 * y[..., None, :] ** 2 * b**2
    young_margin = np.min(young_rhs - ratio**2, axis=(-2, -1))
    young_scale = 1 + np.max(young_rhs, axis=(-2, -1))

    grad_log_sq = np.sum(np.sum(ratio, axis=-1) ** 2, axis=-1)
    cs_bound = 0.5 * n * (n - 1) * np.sum(ratio**2, axis=(-2, -1))
    cs_margin = cs_bound - grad_log_sq

    quoted = np.sum(
        4 * hkij**2 + (D / psum**2)[..., None, :] * a**2 + (D / pprod**2)[..., None, :] * b**2,
        axis=(-2, -1),
    )
    base = np.sum(4 * hkij**2 + a**2 + b**2, axis=(-2, -1))
    extra = np.sum(x[..., None, :] ** 2 * a**2 + y[..., None, :] ** 2 * b**2, axis=(-2, -1))
    sos_defect = np.abs(quoted - (base + extra))
    A2 = np.sum(h**2, axis=(-3, -2, -1))
    middle_margin = base - 2 * A2
    final_margin = quoted - 2 * A2 - grad_log_sq / (n * (n - 1))

    degenerate = (np.min(psum, axis=-1) < DEGENERATE_TOL) | (np.min(pprod, axis=-1) < DEGENERATE_TOL)
    return {
        "rewrite_defect": rewrite_defect,
        "rewrite_scale": rewrite_scale,
        "quotient_defect": quotient_defect,
        "quotient_scale": quotient_scale,
        "young_margin": young_margin,
        "young_scale": young_scale,
        "cs_margin": cs_margin,
        "cs_scale": 1 + cs_bound + grad_log_sq,
        "sos_defect": sos_defect,
        "sos_scale": 1 + quoted,
        "middle_margin": middle_margin,
        "middle_scale": 1 + base + 2 * A2,
        "final_margin": final_margin,
        "final_scale": 1 + quoted + 2 * A2 + grad_log_sq,
        "degenerate": degenerate,
    }


@dataclass(frozen=True)
class DetSChainMargins:
    cs_factor: float
    rewrite_identity: float
    final: float
    young: float
    skipped: bool = False


def check_detst_chain(s):
    """Margins of the det S chain for one strictly 2-convex sample."""
    if not spectral.two_convexity(s.spectrum, strict=True).is_2convex:
        raise InvalidInputError("det S chain requires strict 2-convexity")
    out = detst_chain_arrays(s.spectrum.lambdas, s.h.h)
    return DetSChainMargins(
        cs_factor=float(out["cs_margin"]),
        rewrite_identity=float(out["rewrite_defect"]),
        final=float(out["final_margin"]),
        young=float(out["young_margin"]),
        skipped=bool(out["degenerate"]),
    )


# -- maximum-principle quadratic form -------------------------------------------


def max_principle_form(a, b, c_param=2.0):
    """-6|a|^2 - 2(1+c)|b|^2 + (8+2c)<a, b>, with a = phi grad w, b = w grad|F|^2."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    aa = np.sum(a * a, axis=-1)
    bb = np.sum(b * b, axis=-1)
    ab = np.sum(a * b, axis=-1)
    return -6 * aa - 2 * (1 + c_param) * bb + (8 + 2 * c_param) * ab


def check_max_principle_form(a, b, c_param=2.0):
    """Margin = minus the form value; nonnegative for every (a, b) exactly when c = 2."""
    out = -max_principle_form(a, b, c_param)
    return float(out) if np.ndim(out) == 0 else out


# -- eps-bound deduction -----------------------------------------------------------


def eps_bound_margins(lam, eps1, eps2):
    """Margins of the three eigenvalue bounds plus the expansion step.

    ``direct`` is prod(1+lambda^2) - (1 + sum lambda^2) >= 0, which together
    with prod(1+lambda^2) <= eps1^-2 gives the slope bound.
    """
    b = spectral.eigen_bounds_from(eps1, eps2)
    lam = np.asarray(lam, dtype=float)
    sumsq = np.sum(lam**2, axis=-1)
    prod = np.prod(1 + lam**2, axis=-1)
    return {
        "slope": b.slope_sq_ub - sumsq,
        "pair_prod": spectral.min_pair_prod(lam) - b.pair_prod_lb,
        "pair_sum": spectral.min_pair_sum(lam) - b.pair_sum_lb,
        "direct": prod - (1 + sumsq),
        "scale": 1 + prod,
    }


def check_eps_bound_derivation(eps1, eps2, count=10_000, seed=0, n=2):
    """Sample admissible spectra and count violations of each deduced bound."""
    cons = Constraints(region="strict_2convex", eps1=eps1, eps2=eps2)
    rng = np.random.default_rng(seed)
    lam, drawn = sample_eigenvalues(n, cons, count, rng)
    m = eps_bound_margins(lam, eps1, eps2)
    tol = -MARGIN_RTOL * m["scale"]
    report = {"n": n, "eps1": eps1, "eps2": eps2, "count": int(lam.shape[0]), "drawn": drawn}
    for key in ("slope", "pair_prod", "pair_sum", "direct"):
        vals = m[key]
        if not np.all(np.isfinite(vals)):
            # n = 1: pair bounds are vacuous
            vals = np.where(np.isfinite(vals), vals, 0.0)
        report[key] = {
            "violations": int(np.sum(vals < tol)),
            "worst_margin": float(np.min(vals)),
        }
    report["violations"] = sum(report[k]["violations"] for k in ("slope", "pair_prod", "pair_sum", "direct"))
    return report


# -- campaigns -----------------------------------------------------------------

CAMPAIGN_CHECKS = ("sos_identity", "starom_chain", "detst_chain", "max_principle_form", "eps_bounds")

DEFAULT_CAMPAIGN = {
    "schema_version": 1,
    "seed": 20240,
    "samples": 100_000,
    "dims": [2, 3],
    "checks": list(CAMPAIGN_CHECKS),
    "c_param": 2.0,
    "box": DEFAULT_BOX,
    # (eps1, eps2) per dimension; (1/sqrt 2, 1/2) is nearly empty for n = 3
    "eps_pairs": {"2": [[0.7071067811865476, 0.5], [0.5, 0.1]], "3": [[0.5, 0.1]]},
}


def worker_count():
    """Worker cap from LAGFLOW_THREADS (default: cpu count)."""
    env = os.environ.get("LAGFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidInputError(f"LAGFLOW_THREADS={env!r} is not an integer") from None
    return os.cpu_count() or 1


def _summarize(name, n, margins, scales, extra=None):
    rel = margins / scales
    row = {
        "check": name,
        "n": n,
        "count": int(margins.size),
        "violations": int(np.sum(rel < -MARGIN_RTOL)),
        "worst_margin": float(np.min(rel)) if margins.size else 0.0,
    }
    if extra:
        row.update(extra)
    return row


def _summarize_defect(name, n, defects, scales):
    rel = defects / scales
    return {
        "check": name,
        "n": n,
        "count": int(defects.size),
        "violations": int(np.sum(rel > MARGIN_RTOL)),
        "worst_defect": float(np.max(rel)) if defects.size else 0.0,
    }


def _run_one(check, n, cfg, rng):
    count = int(cfg["samples"])
    box = cfg.get("box", DEFAULT_BOX)
    if check == "sos_identity":
        li, lj = rng.uniform(-10 * box, 10 * box, size=(2, count))
        d1, d2 = check_sos_identity(li, lj)
        scale = 1 + (1 + li**2) * (1 + lj**2)
        return [
            _summarize_defect("sos_identity:sum_form", n, d1, scale),
            _summarize_defect("sos_identity:prod_form", n, d2, scale),
        ]
    if check == "starom_chain":
        cons = Constraints(region="pair_prod_nonneg", box=box)
        lam, _ = sample_eigenvalues(n, cons, count, rng)
        out = starom_chain_arrays(lam, sample_h(n, count, rng))
        return [
            _summarize("starom_chain:cauchy_schwarz", n, out["cs_margin"], out["cs_scale"]),
            _summarize("starom_chain:final", n, out["margin"], out["scale"]),
        ]
    if check == "detst_chain":
        cons = Constraints(region="strict_2convex", box=box)
        lam, _ = sample_eigenvalues(n, cons, count, rng)
        out = detst_chain_arrays(lam, sample_h(n, count, rng))
        keep = ~out["degenerate"]
        skipped = {"skipped_degenerate": int(np.sum(~keep))}
        rows = []
        for key in ("rewrite", "quotient", "sos"):
            rows.append(_summarize_defect(
                f"detst_chain:{key}_identity", n, out[key + "_defect"][keep], out[key + "_scale"][keep]))
        for key in ("young", "cs", "middle", "final"):
            rows.append(_summarize(
                f"detst_chain:{key}", n, out[key + "_margin"][keep], out[key + "_scale"][keep], skipped))
        return rows
    if check == "max_principle_form":
        c = float(cfg.get("c_param", 2.0))
        a = rng.standard_normal(size=(count, n))
        b = rng.standard_normal(size=(count, n))
        margin = check_max_principle_form(a, b, c)
        scale = 1 + 6 * np.sum(a * a, -1) + 2 * abs(1 + c) * np.sum(b * b, -1)
        return [_summarize(f"max_principle_form:c={c:g}", n, margin, scale)]
    if check == "eps_bounds":
        rows = []
        for eps1, eps2 in cfg.get("eps_pairs", {}).get(str(n), []):
            cons = Constraints(region="strict_2convex", eps1=eps1, eps2=eps2)
            lam, _ = sample_eigenvalues(n, cons, count, rng)
            m = eps_bound_margins(lam, eps1, eps2)
            for key in ("slope", "pair_prod", "pair_sum", "direct"):
                rows.append(_summarize(
                    f"eps_bounds:{key}", n, m[key], m["scale"], {"eps1": eps1, "eps2": eps2}))
        return rows
    raise InvalidInputError(f"unknown check {check!r}")


def run_campaign(config=None):
    """Run every configured check for every dimension; returns a JSON-ready report.

    Each (check, n) task gets its own RNG stream derived from the seed, so the
    report does not depend on the number of workers.
    """
    cfg = dict(DEFAULT_CAMPAIGN)
    cfg.update(config or {})
    seed = int(cfg["seed"])
    tasks = []
    for ci, check in enumerate(cfg["checks"]):
        if check not in CAMPAIGN_CHECKS:
            raise InvalidInputError(f"unknown check {check!r}")
        for n in cfg["dims"]:
            n = int(n)
            if n < 2 and check in ("detst_chain",):
                continue
            tasks.append((check, n, np.random.default_rng([seed, ci, n])))
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(lambda t: _run_one(t[0], t[1], cfg, t[2]), tasks))
    rows = [row for chunk in results for row in chunk]
    total = sum(r["violations"] for r in rows)
    return {
        "schema_version": 1,
        "seed": seed,
        "samples": int(cfg["samples"]),
        "dims": [int(n) for n in cfg["dims"]],
        "margin_rtol": MARGIN_RTOL,
        "results": rows,
        "violations": total,
        "passed": total == 0,
    }
