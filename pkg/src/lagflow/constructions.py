"""Invariant cone of the strictly 2-convex region and radial booster functions.

Two constructions live here:

* :func:`cone_slope` finds the corner of ``Q = {1 + xy >= d1, x + y >= d2}``
  in the second quadrant and the slope ``tau`` of a cone ``C_tau`` with
  ``Q + C_tau`` contained in ``Q``.
* :func:`booster_profile` builds radial convex functions whose Hessian
  eigenvalues ``(f', f/r)`` have ratio ``u(r) = f'(r) r / f(r)`` prescribed,
  via ``f(r) = f(r0) exp(int_{r0}^r u(rho)/rho drho)``.  The outer kind is
  the identity Hessian outside ``B_k``; the inner kind is the identity inside
  ``B_{1/k}``.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicHermiteSpline

from .errors import InvalidInputError, OutOfRangeError, ResolutionError
from .io import write_csv

DEFAULT_THETA = 0.05
MIN_LAYER_CELLS = 32


# -- cone slope ---------------------------------------------------------------------


@dataclass(frozen=True)
class ConeSolution:
    delta1: float
    delta2: float
    x0: float
    y0: float
    tau: float

    def to_dict(self):
        return {"delta1": self.delta1, "delta2": self.delta2, "x0": self.x0, "y0": self.y0, "tau": self.tau}


def cone_slope(delta1, delta2):
    """Second-quadrant corner of the region and the cone slope tau = -y0/x0.

    The corner solves x + y = delta2, xy = delta1 - 1; the negative root is
    taken from the product to avoid cancellation.
    """
    if not 0.0 < delta1 < 1.0:
        raise InvalidInputError(f"delta1 must lie in (0, 1), got {delta1}")
    if not delta2 > 0.0:
        raise InvalidInputError(f"delta2 must be positive, got {delta2}")
    y0 = 0.5 * (delta2 + math.sqrt(delta2 * delta2 + 4.0 * (1.0 - delta1)))
    x0 = (delta1 - 1.0) / y0
    return ConeSolution(delta1, delta2, x0, y0, -y0 / x0)


def region_margin(x, y, delta1, delta2):
    """min(1 + xy - delta1, x + y - delta2); nonnegative exactly on Q."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return np.minimum(1.0 + x * y - delta1, x + y - delta2)


@dataclass(frozen=True)
class ConeReport:
    samples: int
    violations: int
    worst_margin: float
    tau_used: float

    def to_dict(self):
        return {
            "samples": self.samples,
            "violations": self.violations,
            "worst_margin": self.worst_margin,
            "tau_used": self.tau_used,
        }


def _sample_region(c, count, rng, extent):
    d1, d2, x0, y0 = c.delta1, c.delta2, c.x0, c.y0
    third = count // 3
    # hyperbola boundary 1 + xy = d1 on both branches beyond the corners
    xs = rng.uniform(x0, -1e-3 * (-x0), size=third)
    hyp = np.stack([xs, (d1 - 1.0) / xs], axis=1)
    swap = rng.random(third) < 0.5
    hyp[swap] = hyp[swap][:, ::-1]
    # line boundary x + y = d2 between the corners
    xs = rng.uniform(x0, y0, size=third)
    line = np.stack([xs, d2 - xs], axis=1)
    # interior of the bounded window
    rest = count - 2 * third
    pts = rng.uniform(x0, extent, size=(4 * rest + 16, 2))
    pts = pts[region_margin(pts[:, 0], pts[:, 1], d1, d2) >= 0][:rest]
    corners = np.array([[x0, y0], [y0, x0]])
    q = np.concatenate([corners, hyp, line, pts])[:count]
    return q


def _sample_cone(tau, count, rng, size):
    slope = np.exp(rng.uniform(-math.log(tau), math.log(tau), size=count))
    mag = 10.0 ** rng.uniform(-8.0, math.log10(size), size=count)
    c = np.stack([mag, mag * slope], axis=1)
    c[0] = 0.0
    return c


def cone_invariance_check(c, samples=100_000, rng_seed=0, tau=None, extent=4.0):
    """Sample q in Q and v in C_tau and count q + v falling outside Q.

    ``tau`` overrides the cone slope (negative controls); ``extent`` bounds
    the sampled window of Q.  A point counts as a violation when its region
    margin is below ``-1e-12 * (1 + |x| |y| + |x| + |y|)``.
    """
    tau = c.tau if tau is None else float(tau)
    rng = np.random.default_rng(rng_seed)
    q = _sample_region(c, samples, rng, extent)
    v = _sample_cone(tau, q.shape[0], rng, extent)
    p = q + v
    m = region_margin(p[:, 0], p[:, 1], c.delta1, c.delta2)
    scale = 1.0 + np.abs(p[:, 0] * p[:, 1]) + np.abs(p[:, 0]) + np.abs(p[:, 1])
    viol = int(np.sum(m < -1e-12 * scale))
    return ConeReport(int(q.shape[0]), viol, float(np.min(m / scale)), tau)


# -- booster profiles ------------------------------------------------------------


def smoothstep(s):
    """C-infinity step from 0 (s <= 0) to 1 (s >= 1) built from exp(-1/s)."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class GridSpec:
    """Resolution of the booster construction.

    ``layer_cells`` Simpson cells (in log r) across each transition layer;
    ``r_max`` and ``samples`` describe the exported uniform radius grid.
    """

    layer_cells: int = 512
    r_max: float = None
    samples: int = 2001


class _Layer:
    """Cumulative log-r integrals across one transition layer, Hermite-interpolated."""

    def __init__(self, a, b, cells, dJ_dt, dF_dt_of_J, J_start, reverse):
        t = np.linspace(math.log(a), math.log(b), cells + 1)
        g = dJ_dt(np.exp(t))
        I = cumulative_simpson(g, x=t, initial=0.0)
        # reverse: J_start is J(b), so J(t) = J(b) - int_t^b g
        J = J_start - (I[-1] - I) if reverse else J_start + I
        self.a, self.b = a, b
        self.t, self.J = t, J
        self._J = CubicHermiteSpline(t, J, g)
        self._dJ = dJ_dt
        self._dF = dF_dt_of_J
        dF = dF_dt_of_J(np.exp(t), J)
        self.F_rel = cumulative_simpson(dF, x=t, initial=0.0)
        self._F = CubicHermiteSpline(t, self.F_rel, dF)

    def J_at(self, r):
        return self._J(np.log(r))

    def F_rel_at(self, r):
        return self._F(np.log(r))


@dataclass
class BoosterProfile:
    """Radial booster F(|x|) with prescribed eigenvalue ratio u(r).

    Evaluation methods work at arbitrary radii; ``r_grid`` and the
    ``*_of_r`` arrays are the sampled export used for CSV output.
    """

    kind: str
    k: float
    tau: float
    theta: float
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self):
        if self.kind not in ("outer", "inner"):
            raise InvalidInputError(f"kind must be 'outer' or 'inner', got {self.kind!r}")
        if not self.tau >= 1.0:
            raise InvalidInputError(f"tau must be >= 1, got {self.tau}")
        if self.grid.layer_cells < MIN_LAYER_CELLS:
            raise ResolutionError(
                f"{self.grid.layer_cells} cells per transition layer, need >= {MIN_LAYER_CELLS}")
        if self.kind == "outer":
            if not 0.0 < self.theta < 0.1:
                raise InvalidInputError(f"theta must lie in (0, 1/10), got {self.theta}")
            if not self.k >= 1.0:
                raise InvalidInputError(f"k must be >= 1, got {self.k}")
            self._build_outer()
        else:
            if not self.k > 0:
                raise InvalidInputError(f"k must be positive, got {self.k}")
            self._build_inner()
        self._sample()

    # construction ---------------------------------------------------------

    def _build_outer(self):
        th, k, tau, m = self.theta, self.k, self.tau, self.grid.layer_cells
        self.bounds = (th, 2 * th, k / 2, k)
        # J(r) = int_r^inf (u - 1)/rho drho,  f = r exp(-J)
        neg = lambda r: -(self.u(r) - 1.0)
        dF = lambda r, J: r * r * np.exp(-J)
        self._outer_layer = _Layer(k / 2, k, m, neg, dF, 0.0, reverse=True)
        self._J_plateau_top = float(self._outer_layer.J[0])
        self._J_plateau_bot = self._J_plateau_top + (tau - 1.0) * math.log(k / (4 * th))
        self._inner_layer = _Layer(th, 2 * th, m, neg, dF, self._J_plateau_bot, reverse=True)
        self._J_core = float(self._inner_layer.J[0])
        self._c_core = math.exp(-self._J_core)
        self._F_theta = 0.5 * self._c_core * th * th
        L1 = self._inner_layer
        self._F_2theta = self._F_theta + float(L1.F_rel[-1])
        self._plateau_A = math.exp(-self._J_plateau_top) * (2.0 / k) ** (tau - 1.0)
        A = self._plateau_A
        self._F_khalf = self._F_2theta + A * ((k / 2) ** (tau + 1) - (2 * th) ** (tau + 1)) / (tau + 1)
        self._F_k = self._F_khalf + float(self._outer_layer.F_rel[-1])

    def _build_inner(self):
        k, tau, m = self.k, self.tau, self.grid.layer_cells
        self.bounds = (1.0 / k, 2.0 / k)
        # J(r) = int_{1/k}^r (u - 1)/rho drho <= 0,  e = r exp(J)
        pos = lambda r: self.u(r) - 1.0
        dF = lambda r, J: r * r * np.exp(J)
        self._layer = _Layer(1.0 / k, 2.0 / k, m, pos, dF, 0.0, reverse=False)
        self._J_two = float(self._layer.J[-1])
        self._F_one = 0.5 / (k * k)
        self._F_two = self._F_one + float(self._layer.F_rel[-1])
        p = 1.0 / tau
        self._tail_B = math.exp(self._J_two) * (k / 2.0) ** (p - 1.0)

    def _sample(self):
        r_max = self.grid.r_max
        if r_max is None:
            r_max = 2.0 * self.k if self.kind == "outer" else 4.0 / self.k
        self.r_max = float(r_max)
        r = np.linspace(0.0, self.r_max, self.grid.samples)
        layers = [b for b in self.bounds if b <= self.r_max]
        self.r_grid = np.unique(np.concatenate([r, layers]))
        self.u_of_r = self.u(self.r_grid)
        self.f_of_r = self.f(self.r_grid)
        self.fprime_of_r = self.fprime(self.r_grid)
        self.F_of_r = self.F(self.r_grid)

    # evaluation -----------------------------------------------------------

    def u(self, r):
        """Eigenvalue ratio f'(r) r / f(r)."""
        r = np.asarray(r, dtype=float)
        tau = self.tau
        if self.kind == "outer":
            th, k = self.theta, self.k
            up = 1.0 + (tau - 1.0) * smoothstep((r - th) / th)
            down = tau - (tau - 1.0) * smoothstep((r - k / 2) / (k / 2))
            return np.where(r <= 2 * th, up, down)
        k = self.k
        return 1.0 - (1.0 - 1.0 / tau) * smoothstep((r - 1.0 / k) * k)

    def _J(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "outer":
            th, k, tau = self.theta, self.k, self.tau
            out = np.zeros_like(r)
            core = r <= th
            L1 = (r > th) & (r < 2 * th)
            plat = (r >= 2 * th) & (r <= k / 2)
            L2 = (r > k / 2) & (r < k)
            out[core] = self._J_core
            out[L1] = self._inner_layer.J_at(r[L1])
            out[plat] = self._J_plateau_top + (tau - 1.0) * np.log(k / (2 * r[plat]))
            out[L2] = self._outer_layer.J_at(r[L2])
            return out
        k, tau = self.k, self.tau
        out = np.zeros_like(r)
        L = (r > 1.0 / k) & (r < 2.0 / k)
        tail = r >= 2.0 / k
        out[L] = self._layer.J_at(r[L])
        out[tail] = self._J_two + (1.0 / tau - 1.0) * np.log(r[tail] * k / 2.0)
        return out

    def f_over_r(self, r):
        """Angular Hessian eigenvalue f(r)/r (multiplicity n - 1); equals f'(0) at r = 0."""
        J = self._J(r)
        return np.exp(-J) if self.kind == "outer" else np.exp(J)

    def f(self, r):
        """Radial derivative F'(r)."""
        return np.asarray(r, dtype=float) * self.f_over_r(r)

    def fprime(self, r):
        """Radial Hessian eigenvalue F''(r)."""
        return self.u(r) * self.f_over_r(r)

    def F(self, r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        if self.kind == "outer":
            th, k, tau = self.theta, self.k, self.tau
            core = r <= th
            L1 = (r > th) & (r < 2 * th)
            plat = (r >= 2 * th) & (r <= k / 2)
            L2 = (r > k / 2) & (r < k)
            far = r >= k
            out[core] = 0.5 * self._c_core * r[core] ** 2
            out[L1] = self._F_theta + self._inner_layer.F_rel_at(r[L1])
            out[plat] = self._F_2theta + self._plateau_A * (
                r[plat] ** (tau + 1) - (2 * th) ** (tau + 1)) / (tau + 1)
            out[L2] = self._F_khalf + self._outer_layer.F_rel_at(r[L2])
            out[far] = self._F_k + 0.5 * (r[far] ** 2 - k * k)
            return out
        k, p = self.k, 1.0 / self.tau
        core = r <= 1.0 / k
        L = (r > 1.0 / k) & (r < 2.0 / k)
        tail = r >= 2.0 / k
        out[core] = 0.5 * r[core] ** 2
        out[L] = self._F_one + self._layer.F_rel_at(r[L])
        out[tail] = self._F_two + self._tail_B * (r[tail] ** (p + 1) - (2.0 / k) ** (p + 1)) / (p + 1)
        return out

    def hessian_eigs(self, r):
        """(f'(r), f(r)/r): the simple radial and the (n-1)-fold angular eigenvalue."""
        return self.fprime(r), self.f_over_r(r)

    def hessian(self, x):
        """D^2 F at points ``x`` of shape (..., n)."""
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        r = np.linalg.norm(x, axis=-1)
        radial, angular = self.hessian_eigs(r)
        safe = np.where(r > 0, r, 1.0)
        xh = x / safe[..., None]
        P = xh[..., :, None] * xh[..., None, :]
        P = np.where((r > 0)[..., None, None], P, 0.0)
        eye = np.eye(n)
        return radial[..., None, None] * P + angular[..., None, None] * (eye - P)

    def value(self, x):
        """F(|x|) at points of shape (..., n)."""
        return self.F(np.linalg.norm(np.asarray(x, dtype=float), axis=-1))

    def to_csv(self, path):
        return write_csv(path, {
            "r": self.r_grid,
            "u": self.u_of_r,
            "f": self.f_of_r,
            "fprime": self.fprime_of_r,
            "F": self.F_of_r,
        })


def booster_profile(kind, k, tau, theta=DEFAULT_THETA, grid_spec=None):
    """Build an outer (identity Hessian beyond B_k) or inner (identity inside B_{1/k}) booster."""
    return BoosterProfile(kind, float(k), float(tau), float(theta), grid_spec or GridSpec())


def booster_eigen_ratio(p, r):
    """f'(r) / (f(r)/r) evaluated from the profile's f and f'."""
    r = float(r)
    if not 0.0 < r <= p.r_max:
        raise OutOfRangeError(f"r = {r} outside (0, {p.r_max}]")
    return float(p.fprime(r) / p.f_over_r(r))


def plateau_bound(kind, k, tau, R):
    """Bound on sup_{B_R} |F_k'| valid once the plateau covers B_R."""
    if kind == "outer":
        return (2.0 / k) ** (tau - 1.0) * R**tau
    return (2.0 / k) ** (1.0 - 1.0 / tau) * R ** (1.0 / tau)


def booster_uniform_decay(kind, tau, theta, R, k_list, samples=4001):
    """Sup norms of F_k and its radial derivatives over B_R for each k.

    Columns: ``sup_F``, ``sup_F1`` (= sup f), ``sup_F2`` (largest Hessian
    eigenvalue), ``total`` and ``bound`` (plateau estimate for ``sup_F1``),
    with ``plateau_regime`` telling whether the bound applies (outer:
    k/2 > R; inner: 2/k <= R).  For the inner kind the Hessian is the
    identity on B_{1/k} for every k, so ``sup_F2`` is taken on the annulus
    R/2 <= r <= R where convergence is uniform.
    """
    rows = []
    r = np.linspace(0.0, R, samples)
    for k in k_list:
        p = booster_profile(kind, k, tau, theta, GridSpec(r_max=max(R, 2.0 * k if kind == "outer" else R)))
        F = np.abs(p.F(r))
        f = np.abs(p.f(r))
        rr = r if kind == "outer" else r[r >= 0.5 * R]
        rad, ang = p.hessian_eigs(rr)
        F2 = np.maximum(np.abs(rad), np.abs(ang))
        regime = (k / 2 > R) if kind == "outer" else (2.0 / k <= R)
        rows.append({
            "k": k,
            "sup_F": float(F.max()),
            "sup_F1": float(f.max()),
            "sup_F2": float(F2.max()),
            "total": float(F.max() + f.max() + F2.max()),
            "bound": plateau_bound(kind, k, tau, R),
            "plateau_regime": bool(regime),
        })
    return rows
