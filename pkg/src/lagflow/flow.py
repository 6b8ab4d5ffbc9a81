"""Explicit integration of u_t = sum_i arctan lambda_i(D^2 u).

Three domain modes:

``periodic``
    u = 1/2 x^T A0 x + p(x) with p periodic on [-R, R)^n, n <= 3.  D^2 u is
    A0 plus the periodic stencil Hessian of p, so no boundary condition is
    needed and the evolved quantity is p.
``interval``
    n = 1 on [-R, R] with quadratic-extrapolation ghost nodes at both ends
    (exact for quadratics).
``radial``
    u(r) on [0, R], Hessian eigenvalues (u'', u'/r) with the angular one of
    multiplicity n - 1 and u'/r -> u''(0) at the origin.  Even reflection at
    r = 0, quadratic extrapolation at r = R.

Time stepping is classical RK4 with dt <= h^2 / (2n).
"""

from dataclasses import asdict, dataclass, field
import math

import numpy as np

from .errors import InvalidInputError, NumericalAbort, StabilityError
from .io import read_csv, write_csv
from .spectral import (MAX_DIM, det_s_frak, eigvals_sym, induced_metric_inverse,
                       min_pair_prod, min_pair_sum, star_omega)
from .stencils import field_gradient, gradient as fd_gradient, hessian as fd_hessian

MODES = ("periodic", "interval", "radial")
MIN_RESOLUTION = 16
TOL_MON = 1e-3


@dataclass(frozen=True)
class FlowDomain:
    mode: str
    n: int
    R: float
    resolution: int
    A0: np.ndarray = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        n = self.n
        limits = {"periodic": 3, "interval": 1, "radial": MAX_DIM}
        if int(n) != n or not 1 <= n <= limits[self.mode]:
            raise InvalidInputError(f"{self.mode} mode supports 1 <= n <= {limits[self.mode]}, got {n}")
        if not self.R > 0:
            raise InvalidInputError(f"R must be positive, got {self.R}")
        if int(self.resolution) != self.resolution or self.resolution < MIN_RESOLUTION:
            raise InvalidInputError(f"resolution must be an integer >= {MIN_RESOLUTION}")
        A0 = np.zeros((n, n)) if self.A0 is None else np.array(self.A0, dtype=float, ndmin=2)
        if A0.shape != (n, n) or not np.array_equal(A0, A0.T) or not np.all(np.isfinite(A0)):
            raise InvalidInputError(f"A0 must be a finite symmetric {n}x{n} matrix")
        if self.mode != "periodic" and np.any(A0 != 0):
            raise InvalidInputError("a background quadratic is only used in periodic mode")
        A0.setflags(write=False)
        object.__setattr__(self, "A0", A0)

    @property
    def h(self):
        if self.mode == "radial":
            return self.R / self.resolution
        return 2.0 * self.R / self.resolution

    @property
    def shape(self):
        N = self.resolution
        return (N,) * self.n if self.mode == "periodic" else (N + 1,)

    def axis(self):
        N, h = self.resolution, self.h
        if self.mode == "radial":
            return h * np.arange(N + 1)
        m = N if self.mode == "periodic" else N + 1
        return -self.R + h * np.arange(m)

    def coords(self):
        """Node coordinates; shape ``shape + (n,)`` (radial mode: radii, shape (N+1, 1))."""
        ax = self.axis()
        if self.mode == "periodic":
            return np.stack(np.meshgrid(*([ax] * self.n), indexing="ij"), axis=-1)
        return ax[:, None]

    def background(self):
        if self.mode != "periodic":
            return np.zeros(self.shape)
        x = self.coords()
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.A0, x)

    @property
    def dt_max(self):
        return self.h**2 / (2.0 * self.n)


# -- discrete operators ----------------------------------------------------------


def _extend(u, mode):
    """Pad a 1-D profile with one ghost node per side."""
    right = 3.0 * u[-1] - 3.0 * u[-2] + u[-3]
    left = u[1] if mode == "radial" else 3.0 * u[0] - 3.0 * u[1] + u[2]
    return np.concatenate(([left], u, [right]))


def _second(u, h, mode):
    e = _extend(u, mode)
    return (e[2:] - 2.0 * e[1:-1] + e[:-2]) / (h * h)


def _first(u, h, mode):
    e = _extend(u, mode)
    return (e[2:] - e[:-2]) / (2.0 * h)


def _hessian(domain, values):
    """Hessian matrices (periodic/interval) or the diagonal polar-frame form (radial)."""
    n, h = domain.n, domain.h
    if domain.mode == "periodic":
        return domain.A0 + fd_hessian(values, h, periodic=True)
    d2 = _second(values, h, domain.mode)
    if domain.mode == "interval":
        return d2[:, None, None]
    r = domain.axis()
    d1 = _first(values, h, "radial")
    ang = np.empty_like(d2)
    ang[0] = d2[0]
    ang[1:] = d1[1:] / r[1:]
    eigs = np.concatenate([d2[:, None], np.repeat(ang[:, None], n - 1, axis=1)], axis=1)
    return eigs[..., :, None] * np.eye(n)


def _eigs(domain, H):
    if domain.n == 1:
        return H[..., 0]
    if domain.mode == "radial":
        return np.sort(np.diagonal(H, axis1=-2, axis2=-1), axis=-1)
    return eigvals_sym(H)


@dataclass
class PotentialState:
    """Grid values at time t with cached Hessian and eigenvalue fields.

    ``values`` holds p (periodic mode) or u (interval and radial modes).
    """

    domain: FlowDomain
    t: float
    values: np.ndarray
    hessian: np.ndarray = field(init=False, repr=False)
    eigs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.domain.shape:
            raise InvalidInputError(
                f"values have shape {self.values.shape}, domain expects {self.domain.shape}")
        self.refresh()

    def refresh(self):
        self.hessian = _hessian(self.domain, self.values)
        self.eigs = _eigs(self.domain, self.hessian)

    def u(self):
        """Full potential including the quadratic background."""
        return self.domain.background() + self.values

    def to_csv(self, path):
        x = self.domain.coords().reshape(-1, self.domain.coords().shape[-1])
        name = "r" if self.domain.mode == "radial" else "x"
        cols = {f"{name}{i}": x[:, i] for i in range(x.shape[1])}
        cols["u"] = self.u().ravel()
        cols["rhs"] = rhs(self).ravel()
        return write_csv(path, cols)


def hessian_field(s):
    return s.hessian


def rhs(s):
    """Pointwise Lagrangian angle of the Hessian field."""
    return np.sum(np.arctan(s.eigs), axis=-1)


def _angle(domain, values):
    if not np.all(np.isfinite(values)):
        raise NumericalAbort("non-finite values in a Runge-Kutta stage")
    return np.sum(np.arctan(_eigs(domain, _hessian(domain, values))), axis=-1)


def step(s, dt):
    """One classical RK4 step."""
    dom = s.domain
    if not 0 < dt <= dom.dt_max * (1 + 1e-12):
        raise StabilityError(f"dt = {dt} outside (0, h^2/(2n)] = (0, {dom.dt_max}]")
    p = s.values
    k1 = np.sum(np.arctan(s.eigs), axis=-1)
    try:
        k2 = _angle(dom, p + 0.5 * dt * k1)
        k3 = _angle(dom, p + 0.5 * dt * k2)
        k4 = _angle(dom, p + dt * k3)
    except NumericalAbort as exc:
        raise NumericalAbort(f"{exc} at t = {s.t}", state=s) from None
    new = p + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise NumericalAbort(f"non-finite values at t = {s.t + dt}", state=s)
    return PotentialState(dom, s.t + dt, new)


# -- monitors ----------------------------------------------------------------------


@dataclass(frozen=True)
class MonitorRecord:
    t: float
    min_star_omega: float
    min_det_s_frak: float
    min_pair_sum: float
    min_pair_prod: float
    max_D2_norm: float
    max_D3_norm: float
    max_dudt: float
    grad_sup: float
    grad_background: float

    def to_dict(self):
        return asdict(self)


FIELDS = tuple(MonitorRecord.__dataclass_fields__)


def _d_dx(F, h, domain):
    """Centered derivative of a field along each grid axis (trailing axis added)."""
    if domain.mode == "periodic":
        return field_gradient(F, h, domain.n, periodic=True)
    return np.gradient(F, h, axis=0, edge_order=2)[..., None]


def third_derivative(s):
    """Centered differences of the Hessian field.

    Grid modes return ``(..., n, n, n)``; radial mode returns radial
    derivatives of the eigenvalue fields, ``(..., n)``.
    """
    dom = s.domain
    if dom.mode == "radial":
        return np.gradient(s.eigs, dom.h, axis=0, edge_order=2)
    return _d_dx(s.hessian, dom.h, dom)


def gradient_field(s):
    dom = s.domain
    if dom.mode == "periodic":
        return fd_gradient(s.values, dom.h, periodic=True)
    return _first(s.values, dom.h, dom.mode)[:, None]


def monitors(s):
    dom = s.domain
    lam = s.eigs
    n = dom.n
    D3 = third_derivative(s)
    axes = tuple(range(dom.n if dom.mode == "periodic" else 1, D3.ndim))
    bg = 0.0
    if dom.mode == "periodic" and np.any(dom.A0 != 0):
        bg = float(np.linalg.norm(dom.coords() @ dom.A0, axis=-1).max())
    return MonitorRecord(
        t=float(s.t),
        min_star_omega=float(star_omega(lam).min()),
        min_det_s_frak=float(det_s_frak(lam).min()),
        min_pair_sum=float(min_pair_sum(lam).min()) if n > 1 else math.inf,
        min_pair_prod=float(min_pair_prod(lam).min()) if n > 1 else math.inf,
        max_D2_norm=float(np.sqrt(np.sum(lam * lam, axis=-1)).max()),
        max_D3_norm=float(np.sqrt(np.sum(D3 * D3, axis=axes)).max()),
        max_dudt=float(np.abs(rhs(s)).max()),
        grad_sup=float(np.linalg.norm(gradient_field(s), axis=-1).max()),
        grad_background=bg,
    )


def gradient_identity_check(s):
    """Worst |d_k(angle) - g^{ij} u_{ijk}| over nodes and directions.

    Both sides are centered-difference approximations of the same quantity,
    so the residual is O(h^2).  Interval mode skips the boundary nodes.
    """
    dom = s.domain
    if dom.mode == "radial":
        raise InvalidInputError("the gradient identity check needs a Cartesian grid")
    d_rhs = _d_dx(rhs(s), dom.h, dom)
    D3 = _d_dx(s.hessian, dom.h, dom)
    ginv = induced_metric_inverse(s.hessian)
    rhs_side = np.einsum("...ij,...ijk->...k", ginv, D3)
    res = np.abs(d_rhs - rhs_side)
    if dom.mode == "interval":
        res = res[1:-1]
    return float(res.max())


# -- builtin initial data ------------------------------------------------------------


def _builtin_initial(domain, spec, seed):
    name = spec.get("name")
    x = domain.coords()
    if name == "zero":
        return np.zeros(domain.shape)
    if name == "sine":
        amp = float(spec.get("amplitude", 0.1))
        axis = int(spec.get("axis", 0))
        wave = int(spec.get("wavenumber", 1))
        if domain.mode != "periodic":
            raise InvalidInputError("the sine datum is periodic")
        return amp * np.sin(wave * np.pi / domain.R * x[..., axis])
    if name == "fourier":
        if domain.mode != "periodic":
            raise InvalidInputError("the fourier datum is periodic")
        return _random_fourier(domain, spec, seed)
    if name == "sawtooth":
        if domain.mode != "periodic" or domain.n != 1:
            raise InvalidInputError("the sawtooth datum is 1-d periodic")
        return _smoothed_sawtooth(domain, float(spec.get("amplitude", 1.0)),
                                  float(spec.get("width", 0.05)))
    if name == "quadratic":
        if domain.mode == "periodic":
            raise InvalidInputError("use A0 for quadratic data in periodic mode")
        a = float(spec.get("a", 1.0))
        return 0.5 * a * x[:, 0] ** 2
    if name == "two_sided_quadratic":
        if domain.mode != "interval":
            raise InvalidInputError("the two-sided quadratic lives on an interval")
        a, b = float(spec.get("a", 1.0)), float(spec.get("b", 0.5))
        xx = x[:, 0]
        return 0.5 * np.where(xx >= 0, a, b) * xx**2
    raise InvalidInputError(f"unknown initial datum {name!r}")


def _random_fourier(domain, spec, seed):
    """Sum of a few low sine/cosine modes with seeded random coefficients."""
    rng = np.random.default_rng(seed)
    modes = int(spec.get("modes", 3))
    amp = float(spec.get("amplitude", 0.1))
    x = domain.coords() * (np.pi / domain.R)
    out = np.zeros(domain.shape)
    for kvec in np.ndindex(*([modes + 1] * domain.n)):
        kv = np.array(kvec)
        if not kv.any():
            continue
        phase = x @ kv
        a, b = rng.standard_normal(2) / (kv @ kv) ** 1.5
        out += a * np.cos(phase) + b * np.sin(phase)
    return amp * out / max(np.abs(out).max(), 1e-300)


def _smoothed_sawtooth(domain, amp, width):
    """p with p'' a Gaussian-smoothed zero-mean sawtooth of height ``amp`` (spectral)."""
    N, R = domain.resolution, domain.R
    x = domain.axis()
    saw = amp * ((x + R) / (2 * R) - 0.5)
    k = np.fft.rfftfreq(N, d=2 * R / N) * 2 * np.pi
    S = np.fft.rfft(saw) * np.exp(-0.5 * (k * width) ** 2)
    S[0] = 0.0
    P = np.zeros_like(S)
    P[1:] = -S[1:] / k[1:] ** 2
    return np.fft.irfft(P, n=N)


# -- driver --------------------------------------------------------------------------


@dataclass
class FlowResult:
    records: list
    state: PotentialState
    flags: list
    summary: dict

    def series(self):
        return {name: np.array([getattr(r, name) for r in self.records]) for name in FIELDS}

    def to_csv(self, path):
        return write_csv(path, self.series())


def _times(config):
    T = float(config["T_end"])
    if not T > 0:
        raise InvalidInputError(f"T_end must be positive, got {T}")
    if "sample_times" in config:
        ts = sorted(float(t) for t in config["sample_times"])
        if ts[0] <= 0 or ts[-1] > T * (1 + 1e-12):
            raise InvalidInputError("sample_times must lie in (0, T_end]")
        if ts[-1] < T:
            ts.append(T)
        return ts
    sdt = float(config.get("sample_dt", T / 10))
    if not sdt > 0:
        raise InvalidInputError(f"sample_dt must be positive, got {sdt}")
    m = max(1, round(T / sdt))
    return [T * i / m for i in range(1, m + 1)]


def domain_from_config(config):
    try:
        return FlowDomain(config.get("mode", "periodic"), int(config["n"]), float(config["R"]),
                          int(config["resolution"]), config.get("A0"))
    except KeyError as exc:
        raise InvalidInputError(f"missing config key {exc}") from None


def initial_state(domain, config):
    init = config.get("initial", {"name": "zero"})
    seed = int(config.get("seed", 0))
    if "csv" in init:
        values = read_csv(init["csv"])[init.get("column", "u")].reshape(domain.shape)
        values = values - domain.background()
    else:
        values = _builtin_initial(domain, init, seed)
    return PotentialState(domain, 0.0, values)


def requested_dt(domain, config):
    """Time step from ``dt`` (absolute) or ``cfl`` (fraction of h^2/(2n))."""
    if "dt" in config:
        dt = float(config["dt"])
        if not 0 < dt <= domain.dt_max * (1 + 1e-12):
            raise StabilityError(f"dt = {dt} exceeds the stability bound h^2/(2n) = {domain.dt_max}")
        return dt
    cfl = float(config.get("cfl", 1.0))
    if not 0 < cfl <= 1:
        raise StabilityError(f"cfl fraction must lie in (0, 1], got {cfl}")
    return cfl * domain.dt_max


def integrate(state, t_end, dt):
    """Advance to ``t_end`` with equal steps no larger than ``dt``."""
    span = t_end - state.t
    if span <= 0:
        return state
    steps = max(1, math.ceil(span / dt - 1e-9))
    h = span / steps
    for _ in range(steps):
        state = step(state, h)
    state.t = t_end
    return state


def decay_slope(records, t_lo=0.1, t_hi=1.0, field_name="max_D3_norm"):
    """Least-squares slope of log(field) against log(t) on [t_lo, t_hi]."""
    pts = [(r.t, getattr(r, field_name)) for r in records
           if t_lo - 1e-12 <= r.t <= t_hi + 1e-12 and getattr(r, field_name) > 0]
    if len(pts) < 2:
        return None
    t, v = np.array(pts).T
    return float(np.polyfit(np.log(t), np.log(v), 1)[0])


PRESERVED = ("min_star_omega", "min_det_s_frak", "min_pair_sum", "min_pair_prod")


def run_flow(config, state=None):
    """Integrate a flow configuration and evaluate the monitor verdicts.

    Config keys: ``mode, n, R, resolution, A0, initial, dt | cfl, T_end,
    sample_dt | sample_times, seed, tol_mon``.  A prepared ``state`` may be
    passed instead of ``initial``.
    """
    if state is None:
        domain = domain_from_config(config)
        state = initial_state(domain, config)
    domain = state.domain
    dt = requested_dt(domain, config)
    times = _times(config)
    tol = float(config.get("tol_mon", TOL_MON))

    flat_start = not np.any(state.values)
    records = [monitors(state)]
    flags = []
    first = records[0]
    for t in times:
        state = integrate(state, t, dt)
        rec = monitors(state)
        records.append(rec)
        for name in PRESERVED:
            v0, v = getattr(first, name), getattr(rec, name)
            if math.isfinite(v0) and v < v0 - tol:
                flags.append({"t": rec.t, "monitor": name, "initial": v0, "value": v})

    summary = {"tol_mon": tol, "dt": dt, "h": domain.h, "T_end": times[-1], "preservation": {}}
    for name in PRESERVED:
        v0 = getattr(first, name)
        if not math.isfinite(v0):
            continue
        worst = min(getattr(r, name) for r in records)
        summary["preservation"][name] = {"initial": v0, "min": worst, "drop": v0 - worst,
                                         "passed": bool(worst >= v0 - tol)}
    g = [r.grad_sup for r in records]
    summary["gradient_preserved"] = bool(max(g) <= g[0] + tol)
    summary["grad_sup_nonincreasing"] = bool(all(b <= a + tol for a, b in zip(g, g[1:])))
    summary["D2_ratio"] = records[-1].max_D2_norm / first.max_D2_norm if first.max_D2_norm else 0.0
    summary["decay_slope"] = decay_slope(records)
    if domain.mode == "periodic" and flat_start:
        expect = state.t * float(np.sum(np.arctan(np.linalg.eigvalsh(domain.A0))))
        summary["exact_quadratic_residual"] = float(np.abs(state.values - expect).max())
    summary["passed"] = bool(not flags)
    return FlowResult(records, state, flags, summary)

