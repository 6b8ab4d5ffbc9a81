import math

import numpy as np
import pytest

from lagflow.errors import InvalidInputError, ResolutionError, SigmaSelectionError
from lagflow.regularization import (MollifierSpec, SampledField, mollifier_kernel, mollify,
                                    pipeline_constants, regularize_initial, sample_field,
                                    select_sigma)
from lagflow.spectral import eigvals_sym, is_two_convex, star_omega
from lagflow.stencils import hessian as fd_hessian


def quadratic_field(A, L=2.0, h=0.05):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    return sample_field(lambda x: 0.5 * np.einsum("...i,ij,...j->...", x, A, x), [-L] * n, [L] * n, h,
                        lambda x: np.broadcast_to(A, x.shape[:-1] + (n, n)))


def test_kernel_support_and_center():
    spec = MollifierSpec(0.4, 2)
    assert mollifier_kernel(spec, [0.4, 0.0]) == 0.0
    assert mollifier_kernel(spec, [0.3, 0.3]) == 0.0
    C = spec.constant
    assert mollifier_kernel(spec, [0.0, 0.0]) == pytest.approx(C * 0.4**-2 * math.exp(-1), rel=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_continuous_mass_is_one(n):
    # Monte Carlo-free check: radial quadrature on a fine grid with the trapezoid rule
    spec = MollifierSpec(0.7, n)
    r = np.linspace(0, 0.7, 200_001)
    sphere = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    vals = np.array([mollifier_kernel(spec, np.r_[x, np.zeros(n - 1)]) for x in r[::1000]])
    dense = spec.constant * 0.7**-n * np.where(r < 0.7, np.exp(1 / np.minimum((r / 0.7) ** 2 - 1, -1e-300)), 0)
    mass = sphere * np.trapezoid(dense * r ** (n - 1), r)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert np.all(vals >= 0)


def test_discrete_mass_and_symmetry():
    w = MollifierSpec(0.33, 2, 0.05).weights()
    assert abs(w.sum() - 1.0) <= 1e-10
    np.testing.assert_array_equal(w, w[::-1, :])
    np.testing.assert_array_equal(w, w.T)


def test_resolution_error():
    f = quadratic_field(np.eye(2))
    with pytest.raises(ResolutionError):
        mollify(f, MollifierSpec(0.09, 2, 0.05))


def test_constant_and_linear_fields_are_reproduced():
    c = sample_field(lambda x: np.full(x.shape[:-1], 3.25), [-1, -1], [1, 1], 0.05)
    out = mollify(c, MollifierSpec(0.2, 2, 0.05))
    np.testing.assert_allclose(out.values, 3.25, atol=1e-14)
    lin = sample_field(lambda x: 1 + 2 * x[..., 0] - x[..., 1], [-1, -1], [1, 1], 0.05)
    out = mollify(lin, MollifierSpec(0.2, 2, 0.05))
    m = 4
    np.testing.assert_allclose(out.values, lin.values[m:-m, m:-m], atol=1e-14)
    np.testing.assert_allclose(out.origin, (-0.8, -0.8), atol=1e-15)


def test_quadratic_keeps_its_hessian():
    A = np.array([[1.0, 0.3], [0.3, -0.2]])
    out = mollify(quadratic_field(A), MollifierSpec(0.3, 2, 0.05))
    H = fd_hessian(out.values, 0.05, periodic=False)
    assert np.abs(H - A).max() <= 1e-8
    np.testing.assert_allclose(out.hessian, np.broadcast_to(A, out.hessian.shape), atol=1e-14)


def test_sup_norm_does_not_increase():
    rng = np.random.default_rng(0)
    f = SampledField((0.0, 0.0), 0.05, rng.standard_normal((60, 60)))
    out = mollify(f, MollifierSpec(0.2, 2, 0.05))
    assert np.abs(out.values).max() <= np.abs(f.values).max()


def test_hessian_commutation_second_order():
    # D^2(eta * u) by stencils vs eta * (D^2 u) with the exact Hessian
    def run(h):
        f = sample_field(lambda x: np.sin(x[..., 0]) * np.cos(2 * x[..., 1]), [-1.5, -1.5], [1.5, 1.5], h,
                         lambda x: np.stack([
                             np.stack([-np.sin(x[..., 0]) * np.cos(2 * x[..., 1]),
                                       -2 * np.cos(x[..., 0]) * np.sin(2 * x[..., 1])], -1),
                             np.stack([-2 * np.cos(x[..., 0]) * np.sin(2 * x[..., 1]),
                                       -4 * np.sin(x[..., 0]) * np.cos(2 * x[..., 1])], -1)], -2))
        out = mollify(f, MollifierSpec(0.4, 2, h))
        H = fd_hessian(out.values, h, periodic=False)
        return np.abs(H - out.hessian[1:-1, 1:-1]).max()

    e1, e2 = run(0.05), run(0.025)
    assert math.log2(e1 / e2) > 1.8


def test_fft_matches_direct():
    rng = np.random.default_rng(1)
    f = SampledField((0.0, 0.0), 0.05, rng.standard_normal((50, 50)))
    spec = MollifierSpec(0.3, 2, 0.05)
    a, b = mollify(f, spec, "direct"), mollify(f, spec, "fft")
    assert np.abs(a.values - b.values).max() <= 1e-10


def test_select_sigma_quadratic_first_candidate():
    A = np.diag([1.0, 0.5])
    f = quadratic_field(A, L=3.0)
    lam = np.array([0.5, 1.0])
    t = {"eps1p": float(star_omega(lam)), "eps2p": 0.5, "eps1pp": 0.9, "eps2pp": 0.9}
    sel = select_sigma(f, 1, t)
    assert sel.sigma == 0.5 and len(sel.trace) == 1


def test_select_sigma_impossible_targets():
    # thresholds min(1/2, 1) = 1/2 exceed *Omega = 1/5 of the Hessian 2I
    f = quadratic_field(2 * np.eye(2), L=3.0)
    t = {"eps1p": 1.0, "eps2p": 1.0, "eps1pp": 1.0, "eps2pp": 1.0}
    with pytest.raises(SigmaSelectionError) as info:
        select_sigma(f, 1, t)
    d = info.value.diagnostics
    assert d["trace"] and d["worst"]["region"] == "inside"


def test_select_sigma_shrinks_until_core_stops_leaking():
    # Hessian 20I on r < 1.9 and I beyond; outside B_2 the eigenvalues must stay in
    # [0.3, 1/0.3], so sigma has to shrink until the core no longer reaches r >= 2
    h = 0.02
    def hess(x):
        r = np.linalg.norm(x, axis=-1)
        c = np.where(r < 1.9, 20.0, 1.0)
        return c[..., None, None] * np.eye(2)
    f = sample_field(lambda x: np.zeros(x.shape[:-1]), [-3, -3], [3, 3], h, hess)
    t = {"eps1p": 0.004, "eps2p": 0.15, "eps1pp": 0.9, "eps2pp": 0.9, "delta3": 0.3}
    sel = select_sigma(f, 1, t)
    assert sel.sigma <= 0.125 and len(sel.trace) >= 3
    assert all(not row["ok"] for row in sel.trace[:-1]) and sel.trace[-1]["ok"]
    lam = eigvals_sym(sel.field.hessian)
    r = np.linalg.norm(sel.field.coords(), axis=-1)
    assert lam[r >= 2].max() <= 1 / 0.3


def test_pipeline_constants_for_identity_data():
    c = pipeline_constants(0.5, 1.0, 2)
    assert c["delta1"] == pytest.approx(1 / math.sqrt(6))
    assert c["delta2"] == pytest.approx(0.4)
    assert 0 < c["delta3"] < 1 and 0 < c["eps1pp"] < 1 and 0 < c["eps2pp"] <= 1


def test_regularize_identity_quadratic():
    n = 2
    u0 = quadratic_field(np.eye(n), L=6.0, h=0.05)
    out = regularize_initial(u0, 2 ** (-n / 2), 1.0, 4)
    rep = out.meta["regularization"]
    lam = eigvals_sym(out.hessian)
    assert lam.min() >= 1 - 1e-12 and lam.max() <= 1 + rep["tau"] + 1e-12
    assert np.all(is_two_convex(lam, strict=True))
    assert rep["min_star_omega"] >= rep["target_star_omega"] - 1e-9
    assert rep["slope_ok"]


def test_sigma_shrinks_with_k():
    u0 = quadratic_field(np.eye(2), L=5.0, h=0.05)
    sig = [regularize_initial(u0, 0.5, 1.0, k).meta["regularization"]["sigma"] for k in (2, 4, 8)]
    assert sig[0] > sig[1] > sig[2]


def test_locality_of_outputs():
    # k1 < k2 with R < k1: outputs differ on B_R by at most the booster difference on B_{R+1}
    u0 = quadratic_field(np.eye(2), L=5.0, h=0.05)
    a = regularize_initial(u0, 0.5, 1.0, 2, sigma_cap=0.25)
    b = regularize_initial(u0, 0.5, 1.0, 3, sigma_cap=0.25)
    x = a.coords()
    R = 1.0
    mask = np.linalg.norm(x, axis=-1) <= R
    diff = np.abs(a.values - b.values)[mask].max()
    r = np.linspace(0, R + 1, 2001)
    Fa, Fb = a.meta["booster"], b.meta["booster"]
    assert diff <= np.abs(Fa.F(r) - Fb.F(r)).max() + 1e-10


def test_regularize_rejects_bad_initial_data():
    u0 = quadratic_field(np.diag([1.0, -1.0]), L=3.0)
    with pytest.raises(InvalidInputError):
        regularize_initial(u0, 0.3, 0.1, 2)
