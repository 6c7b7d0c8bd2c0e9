"""eps-sweeps against a fine-step limit reference, log-log rate fits,
initial-layer measurements and CSV output."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.stats

from .diagnostics import compute_Q, compute_UV, energy_EA, energy_EB, eps_init
from .errors import ContractError, FitInsufficientError, ParameterError, SweepError
from .grid import Grid, InteriorMask, h1_seminorm, l2_norm, sobolev_norm
from .integrator import LimitStepper, MicroStepper, StepConfig, run
from .model import LimitState, MicroState, SKTParams, build_hk, well_prepared_split

PROFILES = ("default", "homogeneous")
MIN_FIT_POINTS = 4

RATE_COLUMNS = (
    "eps", "U_LinfL2", "U_L2H1", "V_LinfL2", "V_L2H1", "U_L2L2",
    "U_LinfHl_interior", "V_LinfHl_interior", "dissipation",
    "eps_init_m1", "eps_init_0", "eps_init_1", "clipped_mass",
)
LAYER_COLUMNS = (
    "eps", "t_eps", "Q_L2_at_teps", "ratio_sqrt_eps", "tprime_eps",
    "Q_L2_interior_at_tprime", "ratio_eps_logeps",
)


@dataclass(frozen=True)
class SweepPlan:
    eps_list: tuple
    T: float = 0.5
    extent: tuple = (1.0,)
    n: tuple = (512,)
    dt: float | None = None
    params: SKTParams = field(default_factory=SKTParams)
    profile: str = "default"
    well_prepared: bool = False
    ill_amplitude: float = 0.25
    margin: float = 0.1
    l_max: int = 2
    n_samples: int = 10
    dt_ref_factor: int = 4
    A: float | None = None
    diffusion_solver: str | None = None
    tol_lin: float = 1e-10
    drop_saturated: bool = False
    self_check: bool = True
    layer_steps: int = 200

    def __post_init__(self):
        object.__setattr__(self, "eps_list", tuple(float(e) for e in self.eps_list))
        object.__setattr__(self, "extent", tuple(float(e) for e in np.atleast_1d(self.extent)))
        object.__setattr__(self, "n", tuple(int(k) for k in np.atleast_1d(self.n)))
        problems = self.violations()
        if problems:
            raise ParameterError("; ".join(problems))

    def violations(self):
        out = []
        e = self.eps_list
        if not e:
            out.append("eps_list must not be empty")
        if any(not (x > 0 and math.isfinite(x)) for x in e):
            out.append("eps_list entries must be positive")
        if any(b >= a for a, b in zip(e, e[1:])):
            out.append("eps_list must be strictly decreasing")
        if not (self.T > 0 and math.isfinite(self.T)):
            out.append("T must be > 0")
        if self.dt is not None and not (self.dt > 0 and self.dt <= self.T):
            out.append("dt must lie in (0, T]")
        if self.profile not in PROFILES:
            out.append(f"profile must be one of {PROFILES}")
        if not 0 <= self.ill_amplitude <= 0.5:
            out.append("ill_amplitude must lie in [0, 0.5]")
        if not self.margin >= 0:
            out.append("margin must be >= 0")
        if not 0 <= self.l_max <= 3:
            out.append("l_max must lie in [0, 3]")
        if self.n_samples < 1:
            out.append("n_samples must be >= 1")
        if self.dt_ref_factor < 1:
            out.append("dt_ref_factor must be >= 1")
        if self.layer_steps < 1:
            out.append("layer_steps must be >= 1")
        if self.A is not None and not self.A >= 0:
            out.append("A must be >= 0")
        try:
            self.grid()
        except ContractError as exc:
            out.append(str(exc))
        return out

    def grid(self):
        return Grid(self.extent, self.n)

    def step_dt(self):
        """Microscopic step; defaults to a hundredth of the finest spacing."""
        return self.dt if self.dt is not None else 0.01 * min(self.grid().spacing)

    def step_config(self, dt):
        return StepConfig(dt, diffusion_solver=self.diffusion_solver, tol_lin=self.tol_lin)

    def sample_times(self):
        return [self.T * (i + 1) / self.n_samples for i in range(self.n_samples)]


def initial_profiles(plan):
    """(u_init, v_init) as fields; smooth, nonnegative and Neumann compatible."""
    g = plan.grid()
    if plan.profile == "homogeneous":
        return g.constant(1.0), g.constant(1.0)
    X = g.coords()
    cu = np.ones(g.shape)
    cv = np.ones(g.shape)
    for x, L in zip(X, g.extent):
        cu = cu * np.cos(np.pi * x / L)
        cv = cv * np.cos(2 * np.pi * x / L)
    return g.field(1 + 0.5 * cu), g.field(1 + 0.5 * cv)


def hk_for(plan):
    _, v = initial_profiles(plan)
    return build_hk(plan.params, float(np.max(v.values)), A=plan.A)


def initial_split(plan, spec):
    """(uA, uB) at t = 0: equilibrium shares, or an O(1) departure from them."""
    u, v = initial_profiles(plan)
    if plan.well_prepared:
        return well_prepared_split(u, v, spec)
    g = u.grid
    if plan.profile == "homogeneous":
        shape = np.ones(g.shape)
    else:
        shape = np.cos(np.pi * g.coords()[0] / g.extent[0])
    uA = np.clip(u.values * (0.5 + plan.ill_amplitude * shape), 0.0, u.values)
    return g.field(uA), g.field(u.values - uA)


def initial_micro(plan, spec, eps):
    uA, uB = initial_split(plan, spec)
    _, v = initial_profiles(plan)
    return MicroState(0.0, uA, uB, v, eps)


def initial_limit(plan):
    u, v = initial_profiles(plan)
    return LimitState(0.0, u, v)


class LimitFollower:
    """Limit stepper taking ``factor`` equal substeps per requested step."""

    def __init__(self, params, cfg, factor):
        self.inner = LimitStepper(params, cfg)
        self.factor = int(factor)
        self.dt = cfg.dt * self.factor
        self.stats = self.inner.stats

    def step(self, s, dt=None):
        dt = self.dt if dt is None else dt
        t_end = s.t + dt
        for _ in range(self.factor):
            s = self.inner.step(s, dt / self.factor)
        return replace(s, t=t_end)


@dataclass(frozen=True)
class PairState:
    """A microscopic state and the reference limit state at the same time."""

    t: float
    micro: MicroState
    limit: LimitState

    def __post_init__(self):
        if self.micro.t != self.t:
            object.__setattr__(self, "micro", replace(self.micro, t=self.t))
        if self.limit.t != self.t:
            object.__setattr__(self, "limit", replace(self.limit, t=self.t))


class PairStepper:
    def __init__(self, micro_stepper, limit_follower):
        self.micro = micro_stepper
        self.limit = limit_follower
        self.dt = micro_stepper.dt

    def step(self, s, dt=None):
        dt = self.dt if dt is None else dt
        m = self.micro.step(s.micro, dt)
        lim = self.limit.step(s.limit, dt)
        return PairState(m.t, m, lim)


def reference_limit(plan, dt_ref=None, micro_grid=None):
    """Limit trajectory on the sweep grid with step ``dt / dt_ref_factor``."""
    g = plan.grid()
    if micro_grid is not None and micro_grid != g:
        raise ContractError("reference grid differs from the microscopic grid")
    if dt_ref is None:
        dt_ref = plan.step_dt() / plan.dt_ref_factor
    stepper = LimitStepper(plan.params, plan.step_config(dt_ref))
    return run(initial_limit(plan), plan.T, stepper, sample_times=plan.sample_times())


def reference_self_check(plan):
    """L-inf-in-time L2 distance between the reference and its halved-step rerun,
    evaluated after every microscopic step."""
    dt = plan.step_dt()
    f = plan.dt_ref_factor
    coarse = LimitFollower(plan.params, plan.step_config(dt / f), f)
    fine = LimitFollower(plan.params, plan.step_config(dt / (2 * f)), 2 * f)

    class Both:
        def __init__(self):
            self.dt = dt

        def step(self, s, h=None):
            h = dt if h is None else h
            a, b = coarse.step(s.a, h), fine.step(s.b, h)
            return _Twin(a.t, a, b)

    s0 = initial_limit(plan)
    traj = run(
        _Twin(0.0, s0, s0), plan.T, Both(),
        observer=lambda s: {"d": l2_norm(s.a.u - s.b.u)},
        keep_snapshots=False,
    )
    return traj.accumulated.sup["d"]


@dataclass(frozen=True)
class _Twin:
    t: float
    a: LimitState
    b: LimitState


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r2: float
    slope_ci95: float
    n_used: int


def fit_rate(points, drop_saturated=False, floor=0.0):
    """OLS fit of log(value) against log(eps).

    With ``drop_saturated``, points with value < 3 * floor are discarded first.
    ``slope_ci95`` is the half-width of the 95% confidence interval.
    """
    pts = [(float(e), float(y)) for e, y in points]
    if any(not (e > 0 and y > 0) for e, y in pts):
        raise ContractError("fit points must be positive")
    if drop_saturated:
        pts = [(e, y) for e, y in pts if y >= 3 * floor]
    if len(pts) < MIN_FIT_POINTS:
        raise FitInsufficientError(
            f"need at least {MIN_FIT_POINTS} usable points, have {len(pts)}"
        )
    x = np.log([e for e, _ in pts])
    y = np.log([v for _, v in pts])
    res = scipy.stats.linregress(x, y)
    half = scipy.stats.t.ppf(0.975, len(pts) - 2) * res.stderr
    return FitResult(float(res.slope), float(res.intercept), float(res.rvalue**2), float(half), len(pts))


@dataclass
class RateReport:
    plan: SweepPlan
    rows: list = field(default_factory=list)
    details: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)
    columns: tuple = RATE_COLUMNS

    def column(self, name):
        return [r[name] for r in self.rows]


FIT_SERIES = {
    "U_headline": lambda r: r["U_LinfL2"] + r["U_L2H1"],
    "V_headline": lambda r: r["V_LinfL2"] + r["V_L2H1"],
    "U_LinfL2": lambda r: r["U_LinfL2"],
    "U_L2H1": lambda r: r["U_L2H1"],
    "U_L2L2": lambda r: r["U_L2L2"],
    "U_LinfHl_interior": lambda r: r["U_LinfHl_interior"],
    "dissipation": lambda r: r["dissipation"],
}


def sweep_row(plan, spec, eps):
    """Run one eps against the lockstep reference; returns (row, detail)."""
    g = plan.grid()
    dt = plan.step_dt()
    f = plan.dt_ref_factor
    micro = MicroStepper(plan.params, spec, eps, plan.step_config(dt))
    follower = LimitFollower(plan.params, plan.step_config(dt / f), f)
    mask = InteriorMask(g, plan.margin)

    def observe(s):
        U, V = compute_UV(s.micro, s.limit)
        Q = compute_Q(s.micro, spec)
        return {
            "l2_U": l2_norm(U), "h1_U": h1_seminorm(U),
            "l2_V": l2_norm(V), "h1_V": h1_seminorm(V),
            "h1_Q": h1_seminorm(Q), "l2_Q": l2_norm(Q),
            "energy": energy_EA(s.micro, spec) + energy_EB(s.micro, spec),
        }

    def observe_sample(s):
        U, V = compute_UV(s.micro, s.limit)
        return {
            "t": s.t,
            "Hl_U": sobolev_norm(U, plan.l_max, mask),
            "Hl_V": sobolev_norm(V, plan.l_max, mask),
        }

    m0 = initial_micro(plan, spec, eps)
    Q0 = compute_Q(m0, spec)
    inits = {l: eps_init(l, Q0) for l in range(-1, plan.l_max + 1)}
    start = time.perf_counter()
    traj = run(
        PairState(0.0, m0, initial_limit(plan)), plan.T, PairStepper(micro, follower),
        sample_times=plan.sample_times(), observer=observe,
        sample_observer=observe_sample, keep_snapshots=False,
    )
    acc = traj.accumulated
    e0 = energy_EA(m0, spec) + energy_EB(m0, spec)
    row = {
        "eps": eps,
        "U_LinfL2": acc.sup["l2_U"],
        "U_L2H1": math.sqrt(acc.integral_sq["l2_U"] + acc.integral_sq["h1_U"]),
        "V_LinfL2": acc.sup["l2_V"],
        "V_L2H1": math.sqrt(acc.integral_sq["l2_V"] + acc.integral_sq["h1_V"]),
        "U_L2L2": acc.l2_time("l2_U"),
        "U_LinfHl_interior": max(x["Hl_U"] for x in traj.samples),
        "V_LinfHl_interior": max(x["Hl_V"] for x in traj.samples),
        "dissipation": acc.integral_sq["h1_Q"] / eps,
        "eps_init_m1": inits[-1],
        "eps_init_0": inits[0],
        "eps_init_1": inits[1] if 1 in inits else eps_init(1, Q0),
        "clipped_mass": micro.stats.clipped_mass + follower.stats.clipped_mass,
    }
    detail = {
        "eps": eps,
        "energy_sup": acc.sup["energy"],
        "energy_init": e0,
        "Q_L2_sup": acc.sup["l2_Q"],
        "eps_init": inits,
        "samples": traj.samples,
        "n_steps": traj.n_steps,
        "wall_time": time.perf_counter() - start,
        "clipped_nodes": micro.stats.clipped_nodes + follower.stats.clipped_nodes,
    }
    return row, detail


def fit_report(report, floor=0.0):
    fits = {}
    if len(report.rows) >= MIN_FIT_POINTS:
        for name, series in FIT_SERIES.items():
            pts = [(r["eps"], series(r)) for r in report.rows]
            try:
                fits[name] = fit_rate(pts, report.plan.drop_saturated, floor)
            except (FitInsufficientError, ContractError):
                fits[name] = None
    return fits


def convergence_sweep(plan, progress=None):
    """One row per eps, then log-log fits of each norm (when >= 4 rows)."""
    spec = hk_for(plan)
    report = RateReport(plan)
    report.reference = {
        "dt": plan.step_dt(),
        "dt_ref": plan.step_dt() / plan.dt_ref_factor,
        "A": spec.A,
        "S": spec.S,
    }
    for eps in plan.eps_list:
        try:
            row, detail = sweep_row(plan, spec, eps)
        except (RuntimeError, ArithmeticError) as exc:
            raise SweepError(f"run at eps={eps!r} failed: {exc}", report.rows) from exc
        report.rows.append(row)
        report.details.append(detail)
        if progress is not None:
            progress(row)
    largest = max(r["U_LinfL2"] for r in report.rows)
    if plan.self_check:
        err = reference_self_check(plan)
        report.reference.update(
            self_check_error=err,
            largest_error=largest,
            reference_limited=not err < 0.05 * largest,
        )
    else:
        err = 0.0
        report.reference.update(self_check_error=None, largest_error=largest, reference_limited=None)
    report.fits = fit_report(report, err)
    return report


def layer_times(eps, S):
    t = eps * abs(math.log(eps)) / (2 * S)
    tp = eps * abs(math.log(eps**2)) / (2 * S)
    return t, tp


@dataclass
class LayerTable:
    plan: SweepPlan
    rows: list = field(default_factory=list)
    Q0_L2: float = 0.0
    columns: tuple = LAYER_COLUMNS

    def column(self, name):
        return [r[name] for r in self.rows]


def initial_layer_study(plan):
    """Q at t_eps (whole domain) and t'_eps (interior), normalised by the
    layer scalings eps^(1/2) and eps |ln eps|^(1/2)."""
    if plan.well_prepared:
        raise ContractError("the layer study needs ill-prepared initial data")
    spec = hk_for(plan)
    mask = InteriorMask(plan.grid(), plan.margin)
    table = LayerTable(plan)
    for eps in plan.eps_list:
        if not eps < 1:
            raise ParameterError(f"layer times need eps < 1, got {eps}")
        t, tp = layer_times(eps, spec.S)
        dt = min(plan.step_dt(), tp / plan.layer_steps)
        m0 = initial_micro(plan, spec, eps)
        table.Q0_L2 = l2_norm(compute_Q(m0, spec))
        stepper = MicroStepper(plan.params, spec, eps, plan.step_config(dt))
        traj = run(m0, tp, stepper, sample_times=[t])
        at_t, at_tp = traj.snapshots[1], traj.snapshots[-1]
        q = l2_norm(compute_Q(at_t, spec))
        qi = l2_norm(compute_Q(at_tp, spec), mask)
        table.rows.append({
            "eps": eps,
            "t_eps": t,
            "Q_L2_at_teps": q,
            "ratio_sqrt_eps": q / math.sqrt(eps),
            "tprime_eps": tp,
            "Q_L2_interior_at_tprime": qi,
            "ratio_eps_logeps": qi / (eps * math.sqrt(abs(math.log(eps)))),
        })
    return table


def emit_csv(report, path):
    """Header plus one line per row; floats written with ``repr`` so they round-trip."""
    cols = report.columns
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in report.rows:
                w.writerow([repr(float(r[c])) for c in cols])
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, [{k: float(v) for k, v in zip(header, line)} for line in body]
