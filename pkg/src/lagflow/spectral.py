"""Pointwise spectral geometry of a symmetric Hessian.

Everything here is a pure function of a symmetric matrix (or of its sorted
eigenvalues).  Most functions accept a single ``(n, n)`` matrix or a stack
``(..., n, n)`` so that whole grid fields can be processed at once.
"""

from dataclasses import dataclass
from itertools import combinations
import math

import numpy as np

from .errors import InvalidInputError

MAX_DIM = 8
JACOBI_REL_TOL = 1e-14
JACOBI_MAX_SWEEPS = 100


def as_sym_matrix(B):
    """Validate a single symmetric matrix and return it as a float array."""
    B = np.array(B, dtype=float)
    if B.ndim == 0:
        B = B.reshape(1, 1)
    if B.ndim != 2 or B.shape[0] != B.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {B.shape}")
    n = B.shape[0]
    if not 1 <= n <= MAX_DIM:
        raise InvalidInputError(f"dimension {n} outside 1..{MAX_DIM}")
    if not np.all(np.isfinite(B)):
        raise InvalidInputError("matrix has non-finite entries")
    if not np.array_equal(B, B.T):
        raise InvalidInputError("matrix is not symmetric")
    return B


def _check_stack(B):
    B = np.asarray(B, dtype=float)
    if B.ndim < 2 or B.shape[-1] != B.shape[-2]:
        raise InvalidInputError(f"expected (..., n, n) array, got shape {B.shape}")
    if not np.all(np.isfinite(B)):
        raise InvalidInputError("matrix has non-finite entries")
    return B


def _eigh2(B):
    a, b, c = B[..., 0, 0], B[..., 0, 1], B[..., 1, 1]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    lam = np.stack([mean - rad, mean + rad], axis=-1)
    # rotation angle that zeroes the off-diagonal entry
    phi = 0.5 * np.arctan2(2.0 * b, a - c)
    cs, sn = np.cos(phi), np.sin(phi)
    # columns: eigenvector of the larger eigenvalue is (cs, sn)
    V = np.empty(B.shape)
    V[..., 0, 0], V[..., 1, 0] = -sn, cs
    V[..., 0, 1], V[..., 1, 1] = cs, sn
    return lam, V


def _jacobi(B, rel_tol=JACOBI_REL_TOL, max_sweeps=JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi on a stack of symmetric matrices.

    The same (p, q) sweep order is applied to the whole stack; each matrix
    gets its own rotation angle, and matrices whose pivot is already below
    threshold receive the identity rotation.
    """
    A = np.array(B, dtype=float)
    batch, n = A.shape[0], A.shape[1]
    V = np.broadcast_to(np.eye(n), A.shape).copy()
    thresh = rel_tol * np.abs(A).sum(axis=2).max(axis=1)
    pairs = list(combinations(range(n), 2))
    rows = np.arange(batch)
    for _ in range(max_sweeps):
        off = np.max(np.abs(A[:, [p for p, _ in pairs], [q for _, q in pairs]]), axis=1)
        if np.all(off <= thresh):
            break
        for p, q in pairs:
            apq = A[:, p, q]
            active = np.abs(apq) > thresh
            if not active.any():
                continue
            idx = rows[active]
            a_pq = apq[idx]
            theta = (A[idx, q, q] - A[idx, p, p]) / (2.0 * a_pq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            Ai = A[idx]
            cp, cq = Ai[:, :, p].copy(), Ai[:, :, q].copy()
            Ai[:, :, p] = c[:, None] * cp - s[:, None] * cq
            Ai[:, :, q] = s[:, None] * cp + c[:, None] * cq
            rp, rq = Ai[:, p, :].copy(), Ai[:, q, :].copy()
            Ai[:, p, :] = c[:, None] * rp - s[:, None] * rq
            Ai[:, q, :] = s[:, None] * rp + c[:, None] * rq
            Ai[:, p, q] = 0.0
            Ai[:, q, p] = 0.0
            A[idx] = Ai
            Vi = V[idx]
            vp, vq = Vi[:, :, p].copy(), Vi[:, :, q].copy()
            Vi[:, :, p] = c[:, None] * vp - s[:, None] * vq
            Vi[:, :, q] = s[:, None] * vp + c[:, None] * vq
            V[idx] = Vi
    lam = np.diagonal(A, axis1=1, axis2=2).copy()
    return lam, V


def eigh_sym(B):
    """Eigen-decomposition of a symmetric matrix or stack of matrices.

    Closed form for ``n <= 2``, cyclic Jacobi otherwise.  Returns eigenvalues
    sorted ascending (stable on ties) and the matching orthonormal
    eigenvectors as columns.
    """
    B = _check_stack(B)
    shape, n = B.shape[:-2], B.shape[-1]
    flat = B.reshape(-1, n, n)
    if n == 1:
        lam, V = flat[:, :, 0].copy(), np.ones_like(flat)
    elif n == 2:
        lam, V = _eigh2(flat)
    else:
        lam, V = _jacobi(flat)
    order = np.argsort(lam, axis=-1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    return lam.reshape(shape + (n,)), V.reshape(shape + (n, n))


def eigvals_sym(B):
    """Sorted eigenvalues of a symmetric matrix or stack."""
    B = _check_stack(B)
    if B.shape[-1] == 2:
        return _eigh2(B)[0]
    return eigh_sym(B)[0]


# -- scalar functions of the eigenvalues -------------------------------------
# All accept arrays of shape (..., n) and reduce over the last axis.


def star_omega(lambdas):
    lambdas = np.asarray(lambdas, dtype=float)
    return 1.0 / np.sqrt(np.prod(1.0 + lambdas**2, axis=-1))


def pair_factors(lambdas):
    """S_ii + S_jj for every pair i < j, stacked on the last axis."""
    lambdas = np.asarray(lambdas, dtype=float)
    n = lambdas.shape[-1]
    if n < 2:
        return np.ones(lambdas.shape[:-1] + (0,))
    i, j = np.triu_indices(n, k=1)
    li, lj = lambdas[..., i], lambdas[..., j]
    return (li + lj) * (1.0 + li * lj) / ((1.0 + li**2) * (1.0 + lj**2))


def det_s_frak(lambdas):
    """Product of the pair factors; 1 for n = 1 (empty product)."""
    return np.prod(pair_factors(lambdas), axis=-1)


def min_pair_sum(lambdas):
    lambdas = np.asarray(lambdas, dtype=float)
    n = lambdas.shape[-1]
    if n < 2:
        return np.full(lambdas.shape[:-1], np.inf)
    i, j = np.triu_indices(n, k=1)
    return np.min(lambdas[..., i] + lambdas[..., j], axis=-1)


def min_pair_prod(lambdas):
    lambdas = np.asarray(lambdas, dtype=float)
    n = lambdas.shape[-1]
    if n < 2:
        return np.full(lambdas.shape[:-1], np.inf)
    i, j = np.triu_indices(n, k=1)
    return np.min(1.0 + lambdas[..., i] * lambdas[..., j], axis=-1)


@dataclass(frozen=True)
class Spectrum:
    """Sorted eigenvalues of one symmetric matrix plus derived scalars."""

    lambdas: np.ndarray
    star_omega: float
    det_s_frak: float
    min_pair_sum: float
    min_pair_prod: float

    @classmethod
    def from_eigenvalues(cls, lambdas):
        lam = np.sort(np.asarray(lambdas, dtype=float).ravel(), kind="stable")
        if lam.size < 1 or lam.size > MAX_DIM:
            raise InvalidInputError(f"need 1..{MAX_DIM} eigenvalues, got {lam.size}")
        if not np.all(np.isfinite(lam)):
            raise InvalidInputError("non-finite eigenvalue")
        lam.setflags(write=False)
        return cls(
            lambdas=lam,
            star_omega=float(star_omega(lam)),
            det_s_frak=float(det_s_frak(lam)),
            min_pair_sum=float(min_pair_sum(lam)),
            min_pair_prod=float(min_pair_prod(lam)),
        )

    @property
    def n(self):
        return self.lambdas.size


def eigen_sym(B):
    """Spectrum of a single symmetric matrix."""
    B = as_sym_matrix(B)
    lam, _ = eigh_sym(B)
    return Spectrum.from_eigenvalues(lam)


def lagrangian_angle(s):
    """Sum of arctan of the eigenvalues.

    Accepts a :class:`Spectrum` or a raw ``(..., n)`` eigenvalue array.
    """
    lam = s.lambdas if isinstance(s, Spectrum) else np.asarray(s, dtype=float)
    out = np.sum(np.arctan(lam), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def angle_via_complex_det(B):
    """Lagrangian angle from the imaginary logarithm of det(I + iB).

    Evaluates ``-i log[det(I + iB) / sqrt(det(I + B^2))]`` without touching
    eigenvalues.  The branch of the logarithm is fixed by following
    ``det(I + i s B)`` continuously from s = 0 (where the angle is 0) to
    s = 1 in steps small enough that each phase increment stays below pi/2.
    Works on a single matrix or a stack.
    """
    B = _check_stack(B)
    single = B.ndim == 2
    n = B.shape[-1]
    flat = B.reshape(-1, n, n)
    eye = np.eye(n)
    # sum |lambda_i| <= n * ||B||_inf bounds d(angle)/ds
    rho = float(np.abs(flat).sum(axis=2).max()) if flat.size else 0.0
    steps = max(1, math.ceil(2.0 * n * rho / math.pi) + 1)
    tracked = np.zeros(flat.shape[0])
    prev = np.ones(flat.shape[0], dtype=complex)
    for s in np.linspace(0.0, 1.0, steps + 1)[1:]:
        cur = np.linalg.det(eye + 1j * s * flat)
        tracked += np.angle(cur / prev)
        prev = cur
    modulus = np.sqrt(np.linalg.det(eye + flat @ flat))
    principal = np.log(prev / modulus).imag
    k = np.round((tracked - principal) / (2.0 * math.pi))
    out = principal + 2.0 * math.pi * k
    if not np.all(np.isfinite(out)):
        raise InvalidInputError("branch of the complex logarithm is undetermined")
    return float(out[0]) if single else out.reshape(B.shape[:-2])


@dataclass(frozen=True)
class TwoConvexityReport:
    is_2convex: bool
    pair_sum_margin: float
    pair_prod_margin: float


def two_convexity(s, strict=False):
    """Check lambda_i + lambda_j >= 0 and 1 + lambda_i lambda_j >= 0 for all i != j."""
    ps, pp = s.min_pair_sum, s.min_pair_prod
    ok = (ps > 0 and pp > 0) if strict else (ps >= 0 and pp >= 0)
    return TwoConvexityReport(bool(ok), ps, pp)


def is_two_convex(lambdas, strict=False):
    """Vectorized 2-convexity predicate over a ``(..., n)`` eigenvalue array."""
    ps, pp = min_pair_sum(lambdas), min_pair_prod(lambdas)
    if strict:
        return (ps > 0) & (pp > 0)
    return (ps >= 0) & (pp >= 0)


@dataclass(frozen=True)
class EigenBounds:
    eps1: float
    eps2: float
    slope_sq_ub: float
    pair_prod_lb: float
    pair_sum_lb: float


def eigen_bounds_from(eps1, eps2):
    """Eigenvalue bounds implied by *Omega >= eps1 and det S >= eps2.

    Under strict 2-convexity: sum lambda_i^2 <= eps1^-2 - 1,
    1 + lambda_i lambda_j >= eps2 / sqrt(2 (eps1^-2 - 1)) and
    lambda_i + lambda_j >= 2 eps2 / (eps1^-2 + 1).
    """
    if not 0.0 < eps1 < 1.0:
        raise InvalidInputError(f"eps1 must lie in (0, 1), got {eps1}")
    if not 0.0 < eps2 <= 1.0:
        raise InvalidInputError(f"eps2 must lie in (0, 1], got {eps2}")
    q = eps1**-2
    return EigenBounds(
        eps1=eps1,
        eps2=eps2,
        slope_sq_ub=q - 1.0,
        pair_prod_lb=eps2 / math.sqrt(2.0 * (q - 1.0)),
        pair_sum_lb=2.0 * eps2 / (q + 1.0),
    )


def induced_metric_inverse(B):
    """(I + B^2)^-1, the inverse of the induced metric of the gradient graph."""
    B = _check_stack(B)
    n = B.shape[-1]
    g = np.eye(n) + B @ B
    return np.linalg.solve(g, np.broadcast_to(np.eye(n), g.shape))


def angle_derivative(B, E):
    """Directional derivative of the Lagrangian angle: tr((I + B^2)^-1 E)."""
    ginv = induced_metric_inverse(B)
    return np.einsum("...ij,...ji->...", ginv, np.asarray(E, dtype=float))
