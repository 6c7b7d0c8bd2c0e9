"""Functionals of microscopic/limit states and their accumulation in time."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .grid import (
    Field,
    InteriorMask,
    check_same_grid,
    first_difference,
    full_mask,
    h1_seminorm,
    l2_norm,
    sobolev_norm,
    sobolev_seminorm,
)


def compute_Q(s, spec):
    """Deviation from local exchange equilibrium, k(v) uB - h(v) uA."""
    v = s.v.values
    return Field(s.grid, spec.k(v) * s.uB.values - spec.h(v) * s.uA.values)


def compute_UV(micro, limit):
    check_same_grid(micro.uA, limit.u)
    if abs(micro.t - limit.t) > 1e-12 * max(1.0, abs(micro.t)):
        raise ContractError(f"states at different times: {micro.t} vs {limit.t}")
    U = Field(micro.grid, micro.uA.values + micro.uB.values - limit.u.values)
    V = Field(micro.grid, micro.v.values - limit.v.values)
    return U, V


def _energy(weight, uC, u, rate, grid, S):
    total = np.zeros(grid.shape)
    for axis, h in enumerate(grid.spacing):
        g = first_difference(uC, axis, h) - u / S * first_difference(rate, axis, h)
        total += g * g
    return float(np.sum(full_mask(grid).weights() * weight * total))


def energy_EA(s, spec):
    """int h(v) |grad uA - (uA + uB)/S grad k(v)|^2."""
    v = s.v.values
    u = s.uA.values + s.uB.values
    return _energy(spec.h(v), s.uA.values, u, spec.k(v), s.grid, spec.S)


def energy_EB(s, spec):
    """int k(v) |grad uB - (uA + uB)/S grad h(v)|^2."""
    v = s.v.values
    u = s.uA.values + s.uB.values
    return _energy(spec.k(v), s.uB.values, u, spec.h(v), s.grid, spec.S)


def dissipation_increment(s, spec, dt):
    if not dt > 0:
        raise ContractError(f"dt must be > 0, got {dt}")
    return dt / s.eps * h1_seminorm(compute_Q(s, spec)) ** 2


def eps_init(l, Q0, mask=None):
    """sqrt of the largest squared order-k seminorm of Q0 over k = 0..l+1;
    ``l = -1`` is the plain L2 norm."""
    if l < -1:
        raise ContractError(f"l must be >= -1, got {l}")
    if l == -1:
        return l2_norm(Q0, mask)
    return math.sqrt(max(sobolev_seminorm(Q0, k, mask) ** 2 for k in range(l + 2)))


def ub_identity_residual(micro, limit, spec):
    """Max relative residual of U_B = (Q + H u + h(v_eps) U) / S, nodewise."""
    U, _ = compute_UV(micro, limit)
    ve, v = micro.v.values, limit.v.values
    u = limit.u.values
    UB = micro.uB.values - spec.h(v) * u / spec.S
    H = spec.h(ve) - spec.h(v)
    Q = compute_Q(micro, spec).values
    rhs = (Q + H * u + spec.h(ve) * U.values) / spec.S
    scale = max(np.max(np.abs(micro.uB.values)), np.max(np.abs(u)), 1e-300)
    return float(np.max(np.abs(UB - rhs)) / scale)


class TimeAccumulator:
    """Running sup and trapezoidal time integral of squared scalar series.

    ``add(t, {"name": value})`` must be called with increasing t.
    """

    def __init__(self):
        self.t_last = None
        self.last = {}
        self.integral_sq = {}
        self.sup = {}
        self.count = 0

    def add(self, t, values):
        if self.t_last is not None and not t > self.t_last:
            raise ContractError(f"time must increase: {t} after {self.t_last}")
        for name, x in values.items():
            x = float(x)
            self.sup[name] = max(self.sup.get(name, x), x)
            if self.t_last is not None and name in self.last:
                prev = self.last[name]
                self.integral_sq[name] = self.integral_sq.get(name, 0.0) + 0.5 * (t - self.t_last) * (
                    prev * prev + x * x
                )
            else:
                self.integral_sq.setdefault(name, 0.0)
        self.last = {k: float(x) for k, x in values.items()}
        self.t_last = t
        self.count += 1
        return self

    def l2_time(self, name):
        return math.sqrt(self.integral_sq[name])


def accumulate_spacetime(acc, t, values):
    return acc.add(t, values)


@dataclass
class DiagnosticsReport:
    eps: float
    sample_times: list = field(default_factory=list)
    samples: list = field(default_factory=list)
    sup: dict = field(default_factory=dict)
    l2_time: dict = field(default_factory=dict)
    dissipation: float = 0.0
    eps_init: dict = field(default_factory=dict)
    clipped_mass: float = 0.0


def micro_norms(s, spec):
    """Per-step scalar series of a microscopic state used for time integrals."""
    Q = compute_Q(s, spec)
    return {"l2_Q": l2_norm(Q), "h1_Q": h1_seminorm(Q)}


def comparison_norms(micro, limit, spec):
    U, V = compute_UV(micro, limit)
    out = micro_norms(micro, spec)
    out.update(l2_U=l2_norm(U), h1_U=h1_seminorm(U), l2_V=l2_norm(V), h1_V=h1_seminorm(V))
    return out


def sample_diagnostics(micro, spec, limit=None, margin=0.0, l_max=2):
    """Full per-sample record, including energies and interior H^l norms."""
    g = micro.grid
    out = micro_norms(micro, spec)
    out.update(E_A=energy_EA(micro, spec), E_B=energy_EB(micro, spec))
    if limit is not None:
        U, V = compute_UV(micro, limit)
        mask = InteriorMask(g, margin)
        out.update(l2_U=l2_norm(U), h1_U=h1_seminorm(U), l2_V=l2_norm(V), h1_V=h1_seminorm(V))
        out["Hl_U_interior"] = sobolev_norm(U, l_max, mask)
        out["Hl_V_interior"] = sobolev_norm(V, l_max, mask)
        out["ub_identity"] = ub_identity_residual(micro, limit, spec)
    return out
