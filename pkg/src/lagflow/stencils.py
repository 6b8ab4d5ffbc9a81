"""Second-order centered finite differences on uniform grids.

Periodic grids wrap around.  On non-periodic grids the same stencils are
applied and one boundary node is dropped on every side of every axis.
"""

import numpy as np


def _roll(a, axis, k):
    return np.roll(a, -k, axis=axis)


def _trim(a, ndim):
    return a[(slice(1, -1),) * ndim]


def gradient(u, h, periodic=True):
    """Centered first derivatives of a scalar grid, stacked on a new last axis."""
    return field_gradient(u, h, u.ndim, periodic)


def field_gradient(F, h, ndim, periodic=True):
    """Centered first derivatives of every component of a field.

    ``F`` has ``ndim`` grid axes first and arbitrary component axes after;
    the result gains a trailing derivative axis of length ``ndim``.
    """
    out = [(_roll(F, i, 1) - _roll(F, i, -1)) / (2 * h) for i in range(ndim)]
    D = np.stack(out, axis=-1)
    return D if periodic else _trim(D, ndim)


def hessian(u, h, periodic=True):
    """Centered second derivatives; mixed terms use the 4-point cross stencil.

    Returns an array of shape ``u.shape + (n, n)`` (interior shape when not
    periodic).
    """
    n = u.ndim
    H = np.empty(u.shape + (n, n))
    for i in range(n):
        H[..., i, i] = (_roll(u, i, 1) - 2 * u + _roll(u, i, -1)) / (h * h)
        for j in range(i + 1, n):
            up, dn = _roll(u, i, 1), _roll(u, i, -1)
            d = (_roll(up, j, 1) - _roll(up, j, -1) - _roll(dn, j, 1) + _roll(dn, j, -1)) / (4 * h * h)
            H[..., i, j] = H[..., j, i] = d
    return H if periodic else _trim(H, n)
