"""Coefficients, Lotka-Volterra reaction terms and the switching-rate pair (h, k)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .grid import Field, check_same_grid


@dataclass(frozen=True)
class SKTParams:
    d_u: float = 1.0
    d_v: float = 1.0
    sigma: float = 1.0
    r_u: float = 1.0
    r_v: float = 1.0
    d11: float = 1.0
    d12: float = 0.5
    d21: float = 0.5
    d22: float = 1.0

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise ParameterError("; ".join(problems))

    def violations(self):
        out = []
        for name in ("d_u", "d_v", "sigma"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0")
        for name in ("r_u", "r_v", "d11", "d12", "d21", "d22"):
            if not getattr(self, name) >= 0:
                out.append(f"{name} must be >= 0")
        return out

    def reactions_off(self):
        return SKTParams(self.d_u, self.d_v, self.sigma, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def f_u(p, u, v):
    return p.r_u - p.d11 * u - p.d12 * v


def f_v(p, u, v):
    return p.r_v - p.d21 * u - p.d22 * v


@dataclass(frozen=True)
class HKSpec:
    """The relaxation pair h, k with h + k = S and the microscopic diffusion rates.

    On ``[0, A]`` the pair is affine: ``h = d_u/2 + sigma v``,
    ``k = d_u/2 + sigma A + 1 - sigma v``.  Outside, the shift ``phi`` is a
    C^1 tanh continuation that stays inside ``(-d_u/4, sigma A + 1)``.
    """

    A: float
    d_u: float
    sigma: float
    d_A: float
    d_B: float
    S: float
    h0: float

    @property
    def phi_slope(self):
        return self.sigma

    @property
    def phi_cap(self):
        return self.sigma * self.A + 1.0

    @property
    def phi_floor(self):
        return -self.d_u / 4

    def phi(self, v):
        v = np.asarray(v, dtype=float)
        out = self.sigma * v
        above, below = v > self.A, v < 0
        if np.any(above) or np.any(below):
            low = -self.phi_floor
            out = np.where(above, self.sigma * self.A + np.tanh(self.sigma * (v - self.A)), out)
            out = np.where(below, low * np.tanh(self.sigma * np.minimum(v, 0.0) / low), out)
        return out

    def h(self, v):
        return self.d_u / 2 + self.phi(v)

    def k(self, v):
        return self.S - self.h(v)


def build_hk(p, v_init_sup, A=None):
    """Construct (h, k, d_A, d_B) from the a-priori bound on v.

    ``A`` defaults to ``max(v_init_sup, r_v / (2 d22))``; pass it explicitly to
    override that bound.
    """
    if not v_init_sup >= 0:
        raise ParameterError(f"v_init_sup must be >= 0, got {v_init_sup}")
    if A is None:
        if p.r_v > 0:
            if p.d22 <= 0:
                raise ParameterError("r_v > 0 requires d22 > 0 to define the bound A")
            A = max(v_init_sup, p.r_v / (2 * p.d22))
        else:
            A = float(v_init_sup)
    elif not A >= 0:
        raise ParameterError(f"A must be >= 0, got {A}")
    S = p.d_u + p.sigma * A + 1.0
    return HKSpec(A=float(A), d_u=p.d_u, sigma=p.sigma, d_A=p.d_u / 2, d_B=S, S=S, h0=p.d_u / 4)


def eval_h(spec, v):
    return spec.h(v)


def eval_k(spec, v):
    return spec.k(v)


def well_prepared_split(u, v, spec):
    """Equilibrium shares: u_A = k(v) u / S, u_B = u - u_A."""
    check_same_grid(u, v)
    uA = spec.k(v.values) * u.values / spec.S
    return Field(u.grid, uA), Field(u.grid, u.values - uA)


def check_hk_relation(spec, p, samples=101):
    """Max over equispaced v in [0, A] of |d_A + d_B h/(h+k) - (d_u + sigma v)|."""
    if samples < 2:
        raise ParameterError("need at least 2 samples")
    v = np.linspace(0.0, spec.A, samples)
    h, k = spec.h(v), spec.k(v)
    return float(np.max(np.abs(spec.d_A + spec.d_B * h / (h + k) - (p.d_u + p.sigma * v))))


@dataclass(frozen=True)
class MicroState:
    t: float
    uA: Field
    uB: Field
    v: Field
    eps: float

    def __post_init__(self):
        check_same_grid(self.uA, self.uB, self.v)
        if not self.eps > 0:
            raise ParameterError(f"eps must be > 0, got {self.eps}")

    @property
    def grid(self):
        return self.uA.grid

    @property
    def u(self):
        return self.uA + self.uB


@dataclass(frozen=True)
class LimitState:
    t: float
    u: Field
    v: Field

    def __post_init__(self):
        check_same_grid(self.u, self.v)

    @property
    def grid(self):
        return self.u.grid
