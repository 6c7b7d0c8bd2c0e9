"""Time stepping for the microscopic and the limit systems.

The microscopic step is a symmetric splitting

    reaction(dt/2) . diffusion(dt/2) . relaxation(dt) . diffusion(dt/2) . reaction(dt/2)

in which the stiff exchange term is integrated exactly (it is linear per node
once v is frozen), diffusion is backward Euler and reactions are forward Euler.
No substep depends on eps, so the cost of a step does not either.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diagnostics import TimeAccumulator
from .errors import ContractError, IntegrationBlowupError, ParameterError, SolverDivergenceError
from .grid import Field, check_same_grid, full_mask
from .model import LimitState, MicroState, f_u, f_v
from .operators import laplacian_matrix

DIRECT = "direct-tridiagonal"
ITERATIVE = "iterative-symmetric"


@dataclass(frozen=True)
class StepConfig:
    dt: float
    diffusion_solver: str | None = None
    tol_lin: float = 1e-10
    max_iter: int | None = None
    clip_negative: bool = True

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ParameterError(f"dt must be > 0, got {self.dt}")
        if not 0 < self.tol_lin <= 1e-4:
            raise ParameterError(f"tol_lin must lie in (0, 1e-4], got {self.tol_lin}")
        if self.diffusion_solver not in (None, DIRECT, ITERATIVE):
            raise ParameterError(f"unknown diffusion_solver {self.diffusion_solver!r}")

    def solver_for(self, grid):
        if self.diffusion_solver is not None:
            if self.diffusion_solver == DIRECT and grid.dim != 1:
                raise ParameterError("the tridiagonal solver only handles 1D grids")
            return self.diffusion_solver
        return DIRECT if grid.dim == 1 else ITERATIVE

    def max_iter_for(self, grid):
        return self.max_iter if self.max_iter is not None else 10 * grid.size


@dataclass
class SolveStats:
    solves: int = 0
    iterations: int = 0
    clipped_nodes: int = 0
    clipped_mass: float = 0.0
    iteration_history: list = field(default_factory=list)


def solve_shifted(grid, diag, c, rhs, cfg, stats=None):
    """Solve ``(diag(diag) - c L) x = rhs`` with L the Neumann Laplacian.

    ``diag`` is a positive scalar or nodal array, ``c >= 0``.  The matrix is
    self-adjoint in the trapezoidal inner product, which the iterative path
    exploits by running CG on the weighted (symmetric) system.
    """
    shape = grid.shape
    d = np.broadcast_to(np.asarray(diag, dtype=float), shape).ravel()
    b = np.asarray(rhs, dtype=float).ravel()
    L = laplacian_matrix(grid)
    if cfg.solver_for(grid) == DIRECT:
        n = grid.n[0]
        ab = np.zeros((3, n))
        ab[0, 1:] = -c * L.diagonal(1)
        ab[1, :] = d - c * L.diagonal(0)
        ab[2, :-1] = -c * L.diagonal(-1)
        x = scipy.linalg.solve_banded((1, 1), ab, b, check_finite=False)
        iters = 1
    else:
        w = full_mask(grid).weights().ravel()
        W = sp.diags(w)
        A = (sp.diags(w * d) - c * (W @ L)).tocsr()
        wb = w * b
        precond = sp.diags(1.0 / A.diagonal())
        count = [0]

        def tick(_):
            count[0] += 1

        maxiter = cfg.max_iter_for(grid)
        x, info = spla.cg(
            A, wb, x0=b / d, rtol=cfg.tol_lin, atol=0.0, maxiter=maxiter, M=precond, callback=tick
        )
        iters = count[0]
        if info != 0:
            bnorm = np.linalg.norm(wb)
            res = np.linalg.norm(wb - A @ x) / (bnorm if bnorm > 0 else 1.0)
            if not res <= cfg.tol_lin:
                raise SolverDivergenceError(
                    f"CG did not reach tol_lin={cfg.tol_lin} within {maxiter} iterations", res
                )
    if stats is not None:
        stats.solves += 1
        stats.iterations += iters
        stats.iteration_history.append(iters)
    return x.reshape(shape)


def diffusion_step(f, coeff, dt, cfg, stats=None):
    """Backward Euler for ``f_t = coeff * Lap f``."""
    if coeff < 0:
        raise ContractError(f"diffusion coefficient must be >= 0, got {coeff}")
    if coeff == 0 or dt == 0:
        return f.copy()
    return Field(f.grid, solve_shifted(f.grid, 1.0, coeff * dt, f.values, cfg, stats))


def _relax(uA, uB, h, k, S, eps, dt):
    Q = k * uB - h * uA
    delta = Q * math.expm1(-S * dt / eps) / S
    return uA - delta, uB + delta


def relax_exact(uA, uB, v, spec, eps, dt):
    """Exact solution of the exchange subsystem over ``dt`` with v frozen.

    Q = k uB - h uA decays like exp(-S t / eps) while uA + uB is untouched.
    """
    if not eps > 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    if dt < 0:
        raise ContractError(f"dt must be >= 0, got {dt}")
    check_same_grid(uA, uB, v)
    h, k = spec.h(v.values), spec.k(v.values)
    a, b = _relax(uA.values, uB.values, h, k, spec.S, eps, dt)
    return Field(uA.grid, a), Field(uA.grid, b)


def _clip(arrays, grid, stats):
    if stats is None:
        return
    w = None
    for x in arrays:
        neg = x < 0
        if neg.any():
            if w is None:
                w = full_mask(grid).weights()
            stats.clipped_nodes += int(neg.sum())
            stats.clipped_mass += float(-np.sum(w * np.where(neg, x, 0.0)))
            x[neg] = 0.0


class MicroStepper:
    """One-step map of the microscopic system for fixed (params, spec, eps, cfg)."""

    def __init__(self, params, spec, eps, cfg):
        if not eps > 0:
            raise ParameterError(f"eps must be > 0, got {eps}")
        self.params = params
        self.spec = spec
        self.eps = float(eps)
        self.cfg = cfg
        self.stats = SolveStats()

    @property
    def dt(self):
        return self.cfg.dt

    def _reaction(self, uA, uB, v, tau):
        p = self.params
        u = uA + uB
        fu = f_u(p, u, v)
        fv = f_v(p, u, v)
        return uA + tau * fu * uA, uB + tau * fu * uB, v + tau * fv * v

    def _diffuse(self, uA, uB, v, tau, grid):
        cfg, spec, st = self.cfg, self.spec, self.stats
        uA = solve_shifted(grid, 1.0, spec.d_A * tau, uA, cfg, st)
        uB = solve_shifted(grid, 1.0, (spec.d_A + spec.d_B) * tau, uB, cfg, st)
        v = solve_shifted(grid, 1.0, self.params.d_v * tau, v, cfg, st)
        return uA, uB, v

    def step(self, s, dt=None):
        dt = self.cfg.dt if dt is None else dt
        grid = s.uA.grid
        half = 0.5 * dt
        clip = self.stats if self.cfg.clip_negative else None
        uA, uB, v = self._reaction(s.uA.values, s.uB.values, s.v.values, half)
        _clip((uA, uB, v), grid, clip)
        uA, uB, v = self._diffuse(uA, uB, v, half, grid)
        uA, uB = _relax(uA, uB, self.spec.h(v), self.spec.k(v), self.spec.S, self.eps, dt)
        uA, uB, v = self._diffuse(uA, uB, v, half, grid)
        uA, uB, v = self._reaction(uA, uB, v, half)
        _clip((uA, uB, v), grid, clip)
        t = s.t + dt
        if not (np.isfinite(uA).all() and np.isfinite(uB).all() and np.isfinite(v).all()):
            raise IntegrationBlowupError(t)
        return MicroState(t, Field(grid, uA), Field(grid, uB), Field(grid, v), self.eps)


class LimitStepper:
    """Semi-implicit step of the limit system.

    v: explicit reaction then backward Euler diffusion.  u: explicit reaction,
    then ``u' = b + dt Lap((d_u + sigma v') u')`` solved for the flux variable
    ``w = (d_u + sigma v') u'``, which keeps the system symmetric.
    """

    def __init__(self, params, cfg):
        self.params = params
        self.cfg = cfg
        self.stats = SolveStats()

    @property
    def dt(self):
        return self.cfg.dt

    def step(self, s, dt=None):
        dt = self.cfg.dt if dt is None else dt
        p, cfg, st = self.params, self.cfg, self.stats
        grid = s.u.grid
        clip = st if cfg.clip_negative else None
        u, v = s.u.values, s.v.values
        bu = u + dt * f_u(p, u, v) * u
        bv = v + dt * f_v(p, u, v) * v
        _clip((bu, bv), grid, clip)
        v_new = solve_shifted(grid, 1.0, p.d_v * dt, bv, cfg, st)
        if clip is not None:
            _clip((v_new,), grid, clip)
        a = p.d_u + p.sigma * v_new
        w = solve_shifted(grid, 1.0 / a, dt, bu, cfg, st)
        u_new = w / a
        t = s.t + dt
        if not (np.isfinite(u_new).all() and np.isfinite(v_new).all()):
            raise IntegrationBlowupError(t)
        return LimitState(t, Field(grid, u_new), Field(grid, v_new))


def step_micro(s, p, spec, cfg):
    return MicroStepper(p, spec, s.eps, cfg).step(s)


def step_limit(s, p, cfg):
    return LimitStepper(p, cfg).step(s)


@dataclass
class Trajectory:
    sample_times: list
    snapshots: list
    samples: list
    accumulated: TimeAccumulator
    step_sizes: list

    @property
    def final(self):
        return self.snapshots[-1]

    @property
    def n_steps(self):
        return len(self.step_sizes)


def _targets(T, sample_times):
    ts = sorted({float(t) for t in sample_times if 0 < t < T} | {float(T)})
    return ts


def run(s0, T, stepper, sample_times=(), observer=None, sample_observer=None,
        keep_snapshots=True):
    """Advance ``s0`` to ``T`` with the stepper's dt, landing exactly on sample times.

    ``observer(state) -> dict`` is evaluated after every step (and at t = 0);
    its values are accumulated in time with the trapezoidal rule.
    ``sample_observer(state) -> dict`` is evaluated at t = 0, each sample time
    and T.
    """
    if not T > 0:
        raise ContractError(f"T must be > 0, got {T}")
    if any(t < 0 or t > T for t in sample_times):
        raise ContractError("sample times must lie in [0, T]")
    dt = stepper.dt
    slack = 1e-9 * dt
    acc = TimeAccumulator()
    if observer is not None:
        acc.add(s0.t, observer(s0))
    times, snaps, samples, steps = [s0.t], [s0 if keep_snapshots else None], [], []
    if sample_observer is not None:
        samples.append(sample_observer(s0))
    s = s0
    for target in _targets(T, sample_times):
        while s.t < target - slack:
            h = target - s.t if target - s.t <= dt + slack else dt
            s = stepper.step(s, h)
            if target - s.t <= slack:
                s = replace(s, t=target)
            steps.append(h)
            if observer is not None:
                acc.add(s.t, observer(s))
        times.append(s.t)
        snaps.append(s if keep_snapshots else None)
        if sample_observer is not None:
            samples.append(sample_observer(s))
    if not keep_snapshots:
        snaps[-1] = s
    return Trajectory(times, snaps, samples, acc, steps)
