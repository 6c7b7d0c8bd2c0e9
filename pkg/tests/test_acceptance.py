"""End-to-end acceptance checks; each test prints one PASS/FAIL line.

The eps-sweeps (n = 512, T = 0.5, five eps from 10^-1.5 to 10^-3.5) take a
few minutes each and are shared between the criteria that read them.
"""

import math

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from fastreact.diagnostics import compute_Q
from fastreact.experiments import SweepPlan, convergence_sweep, fit_rate, hk_for, initial_layer_study, initial_micro
from fastreact.grid import Grid, integrate, l2_norm
from fastreact.integrator import MicroStepper, StepConfig, relax_exact, run
from fastreact.model import MicroState, SKTParams, build_hk, f_u, f_v
from fastreact.operators import laplacian, laplacian_matrix

P = SKTParams()
OFF = P.reactions_off()
SWEEP_EPS = tuple(10.0 ** (-1.5 - 0.5 * i) for i in range(5))


def verdict(number, title, ok, detail):
    line = f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def ill_sweep():
    return convergence_sweep(SweepPlan(eps_list=SWEEP_EPS, T=0.5, n=(512,)))


@pytest.fixture(scope="module")
def wp_sweep():
    return convergence_sweep(SweepPlan(eps_list=SWEEP_EPS, T=0.5, n=(512,), well_prepared=True))


def homogeneous(eps):
    plan = SweepPlan(eps_list=(eps,), n=(33,), params=OFF, profile="homogeneous")
    spec = hk_for(plan)
    return plan, spec, initial_micro(plan, spec, eps)


def test_c1_exact_relaxation():
    worst = 0.0
    for eps in (1e-1, 1e-2, 1e-3):
        plan, spec, s0 = homogeneous(eps)
        T = 5 * eps / spec.S
        q0 = l2_norm(compute_Q(s0, spec))
        stepper = MicroStepper(OFF, spec, eps, StepConfig(T / 100))

        def rel_err(s):
            exact = q0 * math.exp(-spec.S * s.t / eps)
            return {"err": abs(l2_norm(compute_Q(s, spec)) - exact) / exact}

        traj = run(s0, T, stepper, observer=rel_err, keep_snapshots=False)
        worst = max(worst, traj.accumulated.sup["err"])
    verdict(1, "exact relaxation", worst <= 1e-6, f"max relative error {worst:.2e} (tol 1e-6)")


def test_c2_initial_layer():
    plan = SweepPlan(eps_list=(1e-1, 1e-2, 1e-3), n=(33,), params=OFF, profile="homogeneous")
    table = initial_layer_study(plan)
    exact = max(abs(r["Q_L2_at_teps"] / (table.Q0_L2 * math.sqrt(r["eps"])) - 1) for r in table.rows)

    generic = initial_layer_study(SweepPlan(eps_list=tuple(10.0 ** -np.arange(2, 4.01, 0.5)), n=(512,)))
    ratios = generic.column("ratio_sqrt_eps")
    spread = max(ratios) / min(ratios)
    ok = exact <= 1e-6 and spread <= 3
    verdict(2, "initial-layer time", ok,
            f"homogeneous |ratio-1| max {exact:.2e} (tol 1e-6); generic ratio spread {spread:.3f} (tol 3), "
            f"ratios {', '.join(f'{r:.4f}' for r in ratios)}")


def test_c3_headline_rate(ill_sweep):
    fu, fv = ill_sweep.fits["U_headline"], ill_sweep.fits["V_headline"]
    ref = ill_sweep.reference
    ok = (0.40 <= fu.slope <= 0.65 and fu.r2 >= 0.98 and 0.40 <= fv.slope <= 0.65 and fv.r2 >= 0.98
          and ref["reference_limited"] is False)
    verdict(3, "headline rate, ill-prepared", ok,
            f"U slope {fu.slope:.3f}±{fu.slope_ci95:.3f} r2 {fu.r2:.4f}; V slope {fv.slope:.3f}±{fv.slope_ci95:.3f} "
            f"r2 {fv.r2:.4f} (band [0.40, 0.65], r2 >= 0.98); self-check {ref['self_check_error']:.2e} vs "
            f"5% of {ref['largest_error']:.2e}")


def test_c4_well_prepared_rate(wp_sweep):
    fit = wp_sweep.fits["U_L2L2"]
    ok = 0.85 <= fit.slope <= 1.15 and fit.r2 >= 0.98
    verdict(4, "improved rate, well-prepared", ok,
            f"U_L2L2 slope {fit.slope:.3f}±{fit.slope_ci95:.3f} r2 {fit.r2:.4f} (band [0.85, 1.15], r2 >= 0.98)")


def test_c5_dissipation_uniform(ill_sweep):
    D = ill_sweep.column("dissipation")
    ratio = D[-1] / D[0]
    spread = max(D) / min(D)
    ok = ratio <= 5 and spread <= 5
    verdict(5, "dissipation uniformity", ok,
            f"D(eps_min)/D(eps_max) {ratio:.3f}, max/min {spread:.3f} (tol 5); D {', '.join(f'{d:.3f}' for d in D)}")


def test_c6_energy_bounded(ill_sweep):
    worst = max(d["energy_sup"] / (10 * (d["energy_init"] + 1)) for d in ill_sweep.details)
    verdict(6, "energy boundedness", worst <= 1,
            f"max over eps of sup(E_A+E_B) / (10 (E(0)+1)) = {worst:.3f} (tol 1)")


def test_c7_conservation():
    plan = SweepPlan(eps_list=(1e-2,), n=(129,), params=OFF)
    spec = hk_for(plan)
    s0 = initial_micro(plan, spec, 1e-2)
    m0 = integrate(s0.u)
    traj = run(s0, 1.0, MicroStepper(OFF, spec, 1e-2, plan.step_config(plan.step_dt())), keep_snapshots=False)
    drift = abs(integrate(traj.final.u) - m0) / m0

    rng = np.random.default_rng(7)
    g = plan.grid()
    per_call = 0.0
    for eps in (1e-1, 1e-3, 1e-6):
        uA, uB, v = (g.field(rng.uniform(0, 3, g.shape)) for _ in range(3))
        a, b = relax_exact(uA, uB, v, spec, eps, 1e-3)
        before = integrate(uA + uB)
        per_call = max(per_call, abs(integrate(a + b) - before) / before)
    ok = drift <= 1e-9 and per_call <= 1e-15
    verdict(7, "scheme conservation", ok,
            f"T=1 mass drift {drift:.2e} (tol 1e-9); relax_exact per-call {per_call:.2e} (tol 1e-15)")


def rk4_reference(s, spec, dt, substeps=1024):
    L = laplacian_matrix(s.grid).toarray()
    eps = s.eps

    def rhs(y):
        a, b, w = y
        u = a + b
        fu = f_u(P, u, w)
        Q = spec.k(w) * b - spec.h(w) * a
        return np.array([
            spec.d_A * L @ a + Q / eps + fu * a,
            (spec.d_A + spec.d_B) * L @ b - Q / eps + fu * b,
            P.d_v * L @ w + f_v(P, u, w) * w,
        ])

    y = np.array([s.uA.values, s.uB.values, s.v.values])
    h = dt / substeps
    for _ in range(substeps):
        k1 = rhs(y)
        k2 = rhs(y + h / 2 * k1)
        k3 = rhs(y + h / 2 * k2)
        k4 = rhs(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def test_c8_small_instance_oracle():
    g = Grid((1.0,), (17,))
    x = g.coords()[0]
    spec = build_hk(P, 1.5)
    u = 1 + 0.5 * np.cos(np.pi * x)
    uA = u * (0.5 + 0.25 * np.cos(np.pi * x))
    v = 1 + 0.5 * np.cos(2 * np.pi * x)
    dt = 5e-5
    worst = 0.0
    for eps in (0.5, 0.05):
        s = MicroState(0.0, g.field(uA), g.field(u - uA), g.field(v), eps)
        ours = MicroStepper(P, spec, eps, StepConfig(dt)).step(s)
        ref = rk4_reference(s, spec, dt)
        for f, r in zip((ours.uA, ours.uB, ours.v), ref):
            worst = max(worst, np.max(np.abs(f.values - r)) / np.max(np.abs(r)))
    verdict(8, "small-instance oracle", worst <= 1e-5, f"max componentwise relative error {worst:.2e} (tol 1e-5)")


def test_c9_discretization_orders():
    def eig_error(n):
        g = Grid((1.0,), (n,))
        x = g.coords()[0]
        return np.max(np.abs(laplacian(g.field(np.cos(np.pi * x))).values + np.pi**2 * np.cos(np.pi * x)))

    e = [eig_error(n) for n in (65, 129, 257, 513)]
    lap = [a / b for a, b in zip(e, e[1:])]

    g = Grid((1.0,), (65,))
    x = g.coords()[0]
    spec = build_hk(P, 1.5)
    u = 1 + 0.5 * np.cos(np.pi * x)
    uA = u * (0.5 + 0.25 * np.cos(np.pi * x))
    s = MicroState(0.0, g.field(uA), g.field(u - uA), g.field(1 + 0.5 * np.cos(2 * np.pi * x)), 0.1)

    def defect(dt):
        st = MicroStepper(P, spec, 0.1, StepConfig(dt))
        one, two = st.step(s, dt), st.step(st.step(s, dt / 2), dt / 2)
        return math.sqrt(sum(l2_norm(a - b) ** 2 for a, b in zip((one.uA, one.uB, one.v), (two.uA, two.uB, two.v))))

    d = [defect(dt) for dt in (5e-4, 2.5e-4, 1.25e-4)]
    strang = [a / b for a, b in zip(d, d[1:])]

    eps = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3]
    fit = fit_rate([(k, 2 * k**0.5) for k in eps])

    ok = (all(3.6 <= r <= 4.4 for r in lap) and all(3.5 <= r <= 4.5 for r in strang)
          and abs(fit.slope - 0.5) <= 1e-12)
    verdict(9, "discretization orders", ok,
            f"Laplacian ratios {', '.join(f'{r:.3f}' for r in lap)} (4±10%); Strang ratios "
            f"{', '.join(f'{r:.3f}' for r in strang)} ([3.5, 4.5]); synthetic slope error {abs(fit.slope - 0.5):.1e}")
