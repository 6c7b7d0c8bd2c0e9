"""Discrete spatial operators with homogeneous Neumann (mirror ghost) closure."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import Field
from .model import f_u, f_v


def second_difference(values, axis, h):
    """d^2/dx^2 along ``axis``; the ghost node mirrors the first interior node."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = v[:-2] - 2 * v[1:-1] + v[2:]
    out[0] = 2 * (v[1] - v[0])
    out[-1] = 2 * (v[-2] - v[-1])
    out /= h * h
    return np.moveaxis(out, 0, axis)


def laplacian_values(values, grid):
    out = second_difference(values, 0, grid.spacing[0])
    for axis in range(1, grid.dim):
        out = out + second_difference(values, axis, grid.spacing[axis])
    return out


def laplacian(f):
    return Field(f.grid, laplacian_values(f.values, f.grid))


def _laplacian_1d_matrix(n, h):
    main = np.full(n, -2.0)
    upper = np.ones(n - 1)
    lower = np.ones(n - 1)
    upper[0] = 2.0
    lower[-1] = 2.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / (h * h)


@lru_cache(maxsize=32)
def laplacian_matrix(grid):
    """Sparse matrix of the Neumann Laplacian acting on row-major flattened values."""
    mats = [_laplacian_1d_matrix(k, h) for k, h in zip(grid.n, grid.spacing)]
    if grid.dim == 1:
        return mats[0].tocsr()
    I0, I1 = sp.identity(grid.n[0], format="csr"), sp.identity(grid.n[1], format="csr")
    return (sp.kron(mats[0], I1) + sp.kron(I0, mats[1])).tocsr()


def rhs_limit(u, v, p):
    """Right-hand side of the limit cross-diffusion system; the flux variable
    ``(d_u + sigma v) u`` is formed nodewise before the Laplacian is applied."""
    g = u.grid
    w = (p.d_u + p.sigma * v.values) * u.values
    du = laplacian_values(w, g) + f_u(p, u.values, v.values) * u.values
    dv = p.d_v * laplacian_values(v.values, g) + f_v(p, u.values, v.values) * v.values
    return Field(g, du), Field(g, dv)


def rhs_micro_slow(uA, uB, v, p, spec):
    """Diffusion and reaction part of the microscopic system (the 1/eps exchange
    term is excluded)."""
    g = uA.grid
    fu = f_u(p, uA.values + uB.values, v.values)
    duA = spec.d_A * laplacian_values(uA.values, g) + fu * uA.values
    duB = (spec.d_A + spec.d_B) * laplacian_values(uB.values, g) + fu * uB.values
    dv = p.d_v * laplacian_values(v.values, g) + f_v(p, uA.values + uB.values, v.values) * v.values
    return Field(g, duA), Field(g, duB), Field(g, dv)
