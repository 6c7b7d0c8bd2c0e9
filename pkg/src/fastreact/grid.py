"""Uniform tensor grids on intervals/rectangles, fields, quadrature and discrete norms.

Node ``i`` along axis ``a`` sits at ``i * spacing[a]``; the domain is
``[0, extent[0]] x [0, extent[1]]``.  Field values are stored as arrays of
shape ``grid.shape`` (``ij`` indexing, row-major when flattened).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ContractError

MAX_DERIV_ORDER = 4


@dataclass(frozen=True)
class Grid:
    extent: tuple[float, ...]
    n: tuple[int, ...]
    spacing: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        extent = tuple(float(e) for e in np.atleast_1d(self.extent))
        n = tuple(int(k) for k in np.atleast_1d(self.n))
        if len(extent) != len(n):
            raise ContractError("extent and n must have one entry per axis")
        if len(n) not in (1, 2):
            raise ContractError(f"only 1D and 2D grids are supported, got dim={len(n)}")
        if any(k < 3 for k in n):
            raise ContractError(f"every axis needs at least 3 nodes, got n={n}")
        if any(not (e > 0 and np.isfinite(e)) for e in extent):
            raise ContractError(f"extents must be positive and finite, got {extent}")
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "spacing", tuple(e / (k - 1) for e, k in zip(extent, n)))

    @classmethod
    def uniform(cls, dim, extent=1.0, n=65):
        return cls(tuple(np.broadcast_to(extent, (dim,))), tuple(np.broadcast_to(n, (dim,))))

    @property
    def dim(self):
        return len(self.n)

    @property
    def shape(self):
        return self.n

    @property
    def size(self):
        return int(np.prod(self.n))

    @property
    def measure(self):
        return float(np.prod(self.extent))

    def axes(self):
        return [np.arange(k) * h for k, h in zip(self.n, self.spacing)]

    def coords(self):
        """Node coordinates, one array of shape ``self.shape`` per axis."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def field(self, values):
        return Field(self, values)

    def constant(self, c):
        return Field(self, np.full(self.shape, float(c)))

    def zeros(self):
        return self.constant(0.0)


class Field:
    """Scalar nodal values on a grid.

    Supports elementwise arithmetic with other fields on the same grid and with
    scalars; the result is always a new field.
    """

    __slots__ = ("grid", "values")
    __array_priority__ = 100

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            if values.size != grid.size:
                raise ContractError(
                    f"field has {values.size} values, grid has {grid.size} nodes"
                )
            values = values.reshape(grid.shape)
        self.grid = grid
        self.values = values

    def __repr__(self):
        return f"Field(grid={self.grid!r}, values=<{self.values.shape}>)"

    def _other(self, other):
        if isinstance(other, Field):
            check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return Field(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._other(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def map(self, fn):
        return Field(self.grid, fn(self.values))

    def copy(self):
        return Field(self.grid, self.values.copy())

    def is_finite(self):
        return bool(np.all(np.isfinite(self.values)))

    def flat(self):
        return self.values.ravel()


def check_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ContractError("fields live on different grids")
    return g


@dataclass(frozen=True)
class InteriorMask:
    """Nodes whose distance to every face of the rectangle is at least ``margin``."""

    grid: Grid
    margin: float = 0.0

    def __post_init__(self):
        if not self.margin >= 0:
            raise ContractError(f"mask margin must be >= 0, got {self.margin}")

    def index_ranges(self):
        """Inclusive (first, last) node index per axis; empty axes give first > last."""
        out = []
        for k, h, L in zip(self.grid.n, self.grid.spacing, self.grid.extent):
            slack = 1e-9 * h
            x = np.arange(k) * h
            inside = np.nonzero((x >= self.margin - slack) & (L - x >= self.margin - slack))[0]
            out.append((int(inside[0]), int(inside[-1])) if inside.size else (1, 0))
        return out

    def selection(self):
        return np.ix_(*[np.arange(a, b + 1) for a, b in self.index_ranges()])

    def boolean(self):
        sel = np.zeros(self.grid.shape, dtype=bool)
        sel[self.selection()] = True
        return sel

    def weights(self):
        """Trapezoidal weights of the masked sub-rectangle, zero outside it."""
        return _mask_weights(self)


@lru_cache(maxsize=64)
def _mask_weights(mask):
    w = np.ones(())
    for (a, b), k, h in zip(mask.index_ranges(), mask.grid.n, mask.grid.spacing):
        w1 = np.zeros(k)
        if b > a:
            w1[a : b + 1] = h
            w1[a] = w1[b] = 0.5 * h
        w = np.multiply.outer(w, w1)
    w.setflags(write=False)
    return w


def full_mask(grid):
    return InteriorMask(grid, 0.0)


def _mask_for(f, mask):
    if mask is None:
        return full_mask(f.grid)
    if mask.grid != f.grid:
        raise ContractError("field and mask live on different grids")
    return mask


def integrate(f, mask=None):
    mask = _mask_for(f, mask)
    return float(np.sum(mask.weights() * f.values))


def l2_norm(f, mask=None):
    return float(np.sqrt(integrate(f * f, mask)))


def first_difference(values, axis, h):
    """d/dx along ``axis``: centered inside, second-order one-sided at the two ends."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    # written in differences so that constants give exactly zero
    out[0] = (4 * (v[1] - v[0]) - (v[2] - v[0])) / (2 * h)
    out[-1] = (4 * (v[-1] - v[-2]) - (v[-1] - v[-3])) / (2 * h)
    return np.moveaxis(out, 0, axis)


def gradient(f):
    return [Field(f.grid, first_difference(f.values, a, h)) for a, h in enumerate(f.grid.spacing)]


def grad_sq(f):
    """Nodewise |grad f|^2 as a plain array."""
    g = f.grid
    return sum(first_difference(f.values, a, h) ** 2 for a, h in enumerate(g.spacing))


def h1_seminorm(f, mask=None):
    mask = _mask_for(f, mask)
    return float(np.sqrt(np.sum(mask.weights() * grad_sq(f))))


def multi_indices(dim, order):
    """Multi-indices of total ``order`` in lexicographic order."""
    return [a for a in itertools.product(range(order + 1), repeat=dim) if sum(a) == order]


def deriv_tensor(f, order):
    """All partial derivatives of total ``order`` by repeated first differencing.

    Components follow ``multi_indices(dim, order)``.
    """
    if not 1 <= order <= MAX_DERIV_ORDER:
        raise ContractError(f"derivative order must be in [1, {MAX_DERIV_ORDER}], got {order}")
    if min(f.grid.n) < 2 * order + 1:
        raise ContractError(
            f"order {order} needs at least {2 * order + 1} nodes per axis, grid has {f.grid.n}"
        )
    out = []
    for alpha in multi_indices(f.grid.dim, order):
        v = f.values
        for axis, (times, h) in enumerate(zip(alpha, f.grid.spacing)):
            for _ in range(times):
                v = first_difference(v, axis, h)
        out.append(Field(f.grid, v))
    return out


def sobolev_seminorm(f, l, mask=None):
    mask = _mask_for(f, mask)
    if l == 0:
        return l2_norm(f, mask)
    w = mask.weights()
    return float(np.sqrt(sum(np.sum(w * d.values**2) for d in deriv_tensor(f, l))))


def sobolev_norm(f, l, mask=None):
    """Full H^l norm: root sum of squared seminorms of orders 0..l."""
    return float(np.sqrt(sum(sobolev_seminorm(f, j, mask) ** 2 for j in range(l + 1))))
