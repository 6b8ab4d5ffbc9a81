"""Mollification of sampled initial data and the choice of smoothing radius.

The pipeline adds an outer booster ``F_k`` to the initial potential ``u0``,
convolves with a standard bump mollifier of radius ``sigma`` and halves
``sigma`` until the smoothed Hessian keeps quantified lower bounds on *Omega
and det S inside ``B_{k+1}`` and stays in a convex eigenvalue box outside.

Fields live on uniform boxes.  Convolution uses ``mode="valid"`` so every
output node has full kernel support; the output box is the input box shrunk
by the kernel radius on every side.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np
from scipy import integrate, signal, special

from .constructions import booster_profile, cone_slope, GridSpec, DEFAULT_THETA
from .errors import InvalidInputError, ResolutionError, SigmaSelectionError
from .io import write_csv
from .spectral import det_s_frak, eigvals_sym, is_two_convex, star_omega
from .stencils import hessian as fd_hessian

BOUND_SLACK = 1e-12


@dataclass
class SampledField:
    """Scalar field on the grid ``origin + h * index`` (optionally with its Hessian)."""

    origin: tuple
    h: float
    values: np.ndarray
    hessian: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        if len(self.origin) != self.values.ndim:
            raise InvalidInputError(
                f"origin has {len(self.origin)} entries for a {self.values.ndim}-d field")
        if not self.h > 0:
            raise InvalidInputError(f"grid spacing must be positive, got {self.h}")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("field values must be finite")
        if self.hessian is not None:
            self.hessian = np.asarray(self.hessian, dtype=float)
            n = self.n
            if self.hessian.shape != self.values.shape + (n, n):
                raise InvalidInputError(
                    f"hessian shape {self.hessian.shape} does not match values {self.values.shape}")
            if not np.all(np.isfinite(self.hessian)):
                raise InvalidInputError("hessian entries must be finite")

    @property
    def n(self):
        return self.values.ndim

    def axes(self):
        return [o + self.h * np.arange(m) for o, m in zip(self.origin, self.values.shape)]

    def coords(self):
        """Node coordinates, shape ``values.shape + (n,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def to_csv(self, path):
        x = self.coords().reshape(-1, self.n)
        cols = {f"x{i}": x[:, i] for i in range(self.n)}
        cols["value"] = self.values.ravel()
        if self.hessian is not None:
            for i in range(self.n):
                for j in range(i, self.n):
                    cols[f"H{i}{j}"] = self.hessian[..., i, j].ravel()
        return write_csv(path, cols)


def sample_field(func, lo, hi, h, hess=None):
    """Sample ``func`` (and optionally its Hessian ``hess``) on the box [lo, hi]."""
    lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
    counts = np.floor((hi - lo) / h + 1e-9).astype(int) + 1
    axes = [a + h * np.arange(m) for a, m in zip(lo, counts)]
    x = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    values = func(x)
    H = hess(x) if hess is not None else None
    return SampledField(tuple(lo), h, values, H)


# -- mollifier -------------------------------------------------------------------


def _bump(s2):
    """exp(1/(s^2 - 1)) for s^2 < 1, else 0 (argument is s^2)."""
    s2 = np.asarray(s2, dtype=float)
    inside = s2 < 1.0
    return np.where(inside, np.exp(1.0 / np.where(inside, s2 - 1.0, -1.0)), 0.0)


def _continuous_mass(n):
    sphere = 2.0 * math.pi ** (n / 2) / special.gamma(n / 2)
    val, _ = integrate.quad(lambda r: r ** (n - 1) * math.exp(1.0 / (r * r - 1.0)), 0.0, 1.0,
                            epsabs=1e-14, epsrel=1e-13)
    return sphere * val


@dataclass(frozen=True)
class MollifierSpec:
    """Bump mollifier of radius ``sigma`` in dimension ``n``.

    With a grid spacing ``h`` the constant is fixed so the discrete mass
    ``sum(weights) * h**n`` is exactly one; without it the continuous
    integral is used.
    """

    sigma: float
    n: int
    h: float = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")
        if int(self.n) != self.n or not 1 <= self.n <= 8:
            raise InvalidInputError(f"dimension must be an integer in 1..8, got {self.n}")
        if self.h is not None and not self.h > 0:
            raise InvalidInputError(f"grid spacing must be positive, got {self.h}")

    @property
    def radius_nodes(self):
        return int(math.floor(self.sigma / self.h + 1e-12))

    def _offsets(self):
        m = self.radius_nodes
        ax = self.h * np.arange(-m, m + 1)
        grids = np.meshgrid(*([ax] * self.n), indexing="ij")
        return sum(g * g for g in grids)

    @property
    def constant(self):
        """Normalization C in C sigma^-n exp(1/(|x/sigma|^2 - 1))."""
        if self.h is None:
            return 1.0 / _continuous_mass(self.n)
        raw = _bump(self._offsets() / self.sigma**2).sum() * (self.h / self.sigma) ** self.n
        return 1.0 / raw

    def weights(self):
        """Discrete kernel times cell volume on the (2m+1)^n offset stencil."""
        if self.h is None:
            raise InvalidInputError("discrete weights need a grid spacing")
        if self.sigma < 2.0 * self.h:
            raise ResolutionError(f"sigma = {self.sigma} < 2h = {2.0 * self.h}: kernel unresolved")
        w = _bump(self._offsets() / self.sigma**2)
        return w / w.sum()


def mollifier_kernel(spec, x):
    """Kernel value at a point (or stack of points, last axis of length n)."""
    x = np.asarray(x, dtype=float)
    s2 = np.sum(x * x, axis=-1) / spec.sigma**2
    out = spec.constant * spec.sigma ** (-spec.n) * _bump(s2)
    return float(out) if np.ndim(out) == 0 else out


def _convolve(a, w, method):
    return signal.convolve(a, w, mode="valid", method=method)


def mollify(u, spec, method="direct"):
    """Convolve a sampled field (and its Hessian, if present) with the mollifier.

    ``method`` is ``"direct"`` (fixed summation order) or ``"fft"``.
    """
    if spec.n != u.n:
        raise InvalidInputError(f"kernel dimension {spec.n} != field dimension {u.n}")
    if spec.h is None:
        spec = replace(spec, h=u.h)
    elif not math.isclose(spec.h, u.h, rel_tol=1e-12):
        raise InvalidInputError(f"kernel spacing {spec.h} != field spacing {u.h}")
    w = spec.weights()
    m = spec.radius_nodes
    if any(s <= 2 * m for s in u.values.shape):
        raise InvalidInputError("field box smaller than the kernel support")
    values = _convolve(u.values, w, method)
    H = None
    if u.hessian is not None:
        n = u.n
        H = np.empty(values.shape + (n, n))
        for i in range(n):
            for j in range(i, n):
                H[..., i, j] = H[..., j, i] = _convolve(u.hessian[..., i, j], w, method)
    origin = tuple(o + m * u.h for o in u.origin)
    return SampledField(origin, u.h, values, H, dict(u.meta, sigma=spec.sigma))


# -- choice of sigma -----------------------------------------------------------------


@dataclass
class SigmaSelection:
    sigma: float
    field: SampledField
    trace: list


def _field_eigs(f):
    if f.hessian is None:
        raise InvalidInputError("field has no Hessian samples")
    return eigvals_sym(f.hessian)


def _assess(f, k, t1, t2, delta3):
    lam = _field_eigs(f)
    x = f.coords()
    r = np.linalg.norm(x, axis=-1)
    inside = r < k + 1
    row = {"nodes_inside": int(inside.sum()), "nodes_outside": int((~inside).sum())}
    ok = True
    worst = None
    if inside.any():
        so = star_omega(lam[inside])
        ds = det_s_frak(lam[inside])
        pos = is_two_convex(lam[inside], strict=True)
        m1 = so - t1
        m2 = ds - t2
        margin = np.minimum(m1, m2)
        margin = np.where(pos, margin, -np.inf)
        i = int(np.argmin(margin))
        row.update(min_star_omega=float(so.min()), min_det_s_frak=float(ds.min()),
                   inside_margin=float(margin[i]))
        if margin[i] < -BOUND_SLACK * max(1.0, t1):
            ok = False
            worst = {"region": "inside", "x": x[inside][i].tolist(),
                     "lambdas": lam[inside][i].tolist(), "margin": float(margin[i])}
    if delta3 is not None and (~inside).any():
        lo = lam[~inside].min(axis=-1) - delta3
        hi = 1.0 / delta3 - lam[~inside].max(axis=-1)
        margin = np.minimum(lo, hi)
        i = int(np.argmin(margin))
        row["outside_margin"] = float(margin[i])
        if margin[i] < -BOUND_SLACK:
            ok = False
            if worst is None:
                worst = {"region": "outside", "x": x[~inside][i].tolist(),
                         "lambdas": lam[~inside][i].tolist(), "margin": float(margin[i])}
    row["ok"] = ok
    return ok, row, worst


def select_sigma(w, k, targets, sigma0=1.0, sigma_cap=None, method="direct"):
    """Largest ``sigma = sigma0 * 2**-j`` (< 1) for which the smoothed field qualifies.

    ``targets`` holds ``eps1p, eps2p, eps1pp, eps2pp`` and optionally
    ``delta3``.  Inside ``B_{k+1}`` the smoothed Hessian must satisfy
    *Omega >= min(eps1p/2, eps1pp), det S >= min(eps2p/2, eps2pp) and strict
    2-convexity; outside, its eigenvalues must lie in ``[delta3, 1/delta3]``.
    """
    for key in ("eps1p", "eps2p", "eps1pp", "eps2pp"):
        v = targets.get(key)
        if v is None or not 0.0 < v <= 1.0:
            raise InvalidInputError(f"target {key} must lie in (0, 1], got {v}")
    t1 = min(0.5 * targets["eps1p"], targets["eps1pp"])
    t2 = min(0.5 * targets["eps2p"], targets["eps2pp"])
    delta3 = targets.get("delta3")
    cap = 1.0 if sigma_cap is None else float(sigma_cap)
    trace = []
    worst = None
    sigma = float(sigma0)
    while sigma >= 2.0 * w.h:
        if sigma < 1.0 and sigma <= cap:
            out = mollify(w, MollifierSpec(sigma, w.n, w.h), method)
            ok, row, bad = _assess(out, k, t1, t2, delta3)
            row["sigma"] = sigma
            trace.append(row)
            if ok:
                out.meta["sigma_trace"] = trace
                return SigmaSelection(sigma, out, trace)
            worst = bad
        sigma *= 0.5
    raise SigmaSelectionError(
        f"no sigma >= 2h = {2.0 * w.h} meets the smoothed bounds",
        diagnostics={"trace": trace, "worst": worst, "targets": dict(targets, t1=t1, t2=t2)})


# -- full pipeline ------------------------------------------------------------------


def _pair_factor_min(lo, hi, samples=801):
    g = np.geomspace(lo, hi, samples)
    a, b = np.meshgrid(g, g, indexing="ij")
    pf = (a + b) * (1.0 + a * b) / ((1.0 + a * a) * (1.0 + b * b))
    return float(pf.min())


def pipeline_constants(eps1, eps2, n):
    """Constants of the regularization: delta1, delta2, the cone and the delta3 box."""
    if not 0.0 < eps1 < 1.0 or not 0.0 < eps2 <= 1.0:
        raise InvalidInputError(f"need eps1 in (0,1) and eps2 in (0,1], got {eps1}, {eps2}")
    q = eps1**-2 - 1.0
    delta1 = min(eps2 / math.sqrt(2.0 * q), eps2)
    delta2 = 2.0 * eps2 / (eps1**-2 + 1.0)
    cone = cone_slope(delta1, delta2)
    tau = cone.tau
    slope_sq = 2.0 * (q + n * tau * tau)
    delta3 = min(1.0 + cone.x0, 1.0 / (1.0 + math.sqrt(slope_sq)))
    eps1pp = (1.0 + delta3**-2) ** (-n / 2.0)
    eps2pp = _pair_factor_min(delta3, 1.0 / delta3) ** (n * (n - 1) // 2) if n > 1 else 1.0
    return {"delta1": delta1, "delta2": delta2, "x0": cone.x0, "y0": cone.y0, "tau": tau,
            "slope_sq_bound": slope_sq, "delta3": delta3, "eps1pp": eps1pp, "eps2pp": eps2pp}


def _ensure_hessian(u):
    if u.hessian is not None:
        return u
    H = fd_hessian(u.values, u.h, periodic=False)
    origin = tuple(o + u.h for o in u.origin)
    return SampledField(origin, u.h, u.values[(slice(1, -1),) * u.n], H, dict(u.meta))


def regularize_initial(u0, eps1, eps2, k, theta=DEFAULT_THETA, layer_cells=512,
                       sigma_cap=None, method="direct"):
    """Smoothed, boosted initial data ``eta_sigma_k * (u0 + F_k)``.

    ``u0`` must satisfy *Omega >= eps1, det S >= eps2 and strict 2-convexity
    at every node.  When ``u0`` carries no Hessian one is computed by
    centered differences (dropping the boundary layer of nodes).  By default
    ``sigma`` is capped at ``min(1/2, 1/k)`` so the radii shrink with k.
    """
    u0 = _ensure_hessian(u0)
    n = u0.n
    lam0 = _field_eigs(u0)
    so, ds = star_omega(lam0), det_s_frak(lam0)
    if so.min() < eps1 - BOUND_SLACK or ds.min() < eps2 - BOUND_SLACK:
        raise InvalidInputError(
            f"initial data violate the bounds: min *Omega = {so.min():.6g} (eps1 = {eps1}), "
            f"min det S = {ds.min():.6g} (eps2 = {eps2})")
    if not np.all(is_two_convex(lam0, strict=True)):
        raise InvalidInputError("initial data are not strictly 2-convex at every node")

    c = pipeline_constants(eps1, eps2, n)
    booster = booster_profile("outer", k, c["tau"], theta, GridSpec(layer_cells=layer_cells))
    x = u0.coords()
    w = SampledField(u0.origin, u0.h, u0.values + booster.value(x),
                     u0.hessian + booster.hessian(x), dict(u0.meta))
    lam_w = _field_eigs(w)
    inside = np.linalg.norm(x, axis=-1) < k + 1
    lw = lam_w[inside] if inside.any() else lam_w
    eps1p = float(star_omega(lw).min())
    eps2p = float(det_s_frak(lw).min())
    targets = {"eps1p": eps1p, "eps2p": eps2p, "eps1pp": c["eps1pp"], "eps2pp": c["eps2pp"],
               "delta3": c["delta3"]}
    cap = sigma_cap if sigma_cap is not None else min(0.5, 1.0 / k)
    sel = select_sigma(w, k, targets, sigma_cap=cap, method=method)

    out = sel.field
    lam = _field_eigs(out)
    slope = np.sum(lam * lam, axis=-1)
    report = dict(c)
    report.update(targets)
    report.update(
        k=k, theta=theta, sigma=sel.sigma, sigma_trace=sel.trace,
        target_star_omega=min(0.5 * eps1p, c["eps1pp"]),
        target_det_s_frak=min(0.5 * eps2p, c["eps2pp"]),
        min_star_omega=float(star_omega(lam).min()),
        min_det_s_frak=float(det_s_frak(lam).min()),
        max_slope_sq=float(slope.max()),
        slope_ok=bool(slope.max() <= c["slope_sq_bound"] * (1 + BOUND_SLACK)),
        strict_2convex=bool(np.all(is_two_convex(lam, strict=True))),
    )
    out.meta["regularization"] = report
    out.meta["booster"] = booster
    return out
