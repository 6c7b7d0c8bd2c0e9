"""Command line entry point: config parsing, validation and subcommand dispatch.

Config files are sectioned ``key = value`` text.  Values are JSON literals
(``0.5``, ``[512]``, ``true``, ``null``, ``"default"``); a bare word such as
``default`` is read as a string.  Lines starting with ``#`` or ``;`` are
comments.  See ``configs/example.cfg`` for every key with its default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

from . import __version__
from .diagnostics import compute_Q, energy_EA, energy_EB
from .errors import ConfigError
from .experiments import (
    PROFILES,
    SweepPlan,
    convergence_sweep,
    emit_csv,
    hk_for,
    initial_layer_study,
    initial_limit,
    initial_micro,
)
from .grid import integrate, l2_norm
from .integrator import DIRECT, ITERATIVE, LimitStepper, MicroStepper, run
from .model import SKTParams

SCHEMA_VERSION = 1
OUTPUT_ENV = "SKT_OUTPUT_DIR"
SUBCOMMANDS = ("validate", "run-micro", "run-limit", "sweep", "layer")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _real(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _opt(check):
    return lambda x: x is None or check(x)


def _reals(x):
    return isinstance(x, list) and len(x) > 0 and all(_real(e) for e in x)


def _ints(x):
    return isinstance(x, list) and len(x) > 0 and all(_int(e) for e in x)


# (section, key) -> (default, type check, type name, [(rule, description)])
SCHEMA = {
    ("", "schema_version"): (SCHEMA_VERSION, _int, "integer", [(lambda x: x == SCHEMA_VERSION, f"== {SCHEMA_VERSION}")]),
    ("params", "d_u"): (1.0, _real, "real", [(lambda x: x > 0, "d_u > 0")]),
    ("params", "d_v"): (1.0, _real, "real", [(lambda x: x > 0, "d_v > 0")]),
    ("params", "sigma"): (1.0, _real, "real", [(lambda x: x > 0, "σ > 0")]),
    ("params", "r_u"): (1.0, _real, "real", [(lambda x: x >= 0, "r_u >= 0")]),
    ("params", "r_v"): (1.0, _real, "real", [(lambda x: x >= 0, "r_v >= 0")]),
    ("params", "d11"): (1.0, _real, "real", [(lambda x: x >= 0, "d11 >= 0")]),
    ("params", "d12"): (0.5, _real, "real", [(lambda x: x >= 0, "d12 >= 0")]),
    ("params", "d21"): (0.5, _real, "real", [(lambda x: x >= 0, "d21 >= 0")]),
    ("params", "d22"): (1.0, _real, "real", [(lambda x: x >= 0, "d22 >= 0")]),
    ("params", "A"): (None, _opt(_real), "real or null", [(lambda x: x is None or x >= 0, "A >= 0")]),
    ("grid", "dim"): (1, _int, "integer", [(lambda x: x in (1, 2), "dim in {1, 2}")]),
    ("grid", "extent"): ([1.0], _reals, "list of reals", [(lambda x: all(e > 0 for e in x), "every extent > 0")]),
    ("grid", "n"): ([512], _ints, "list of integers", [(lambda x: all(e >= 3 for e in x), "every n >= 3")]),
    ("step", "dt"): (None, _opt(_real), "real or null", [(lambda x: x is None or x > 0, "dt > 0")]),
    ("step", "diffusion_solver"): (None, _opt(lambda x: isinstance(x, str)), "string or null",
                                   [(lambda x: x in (None, DIRECT, ITERATIVE), f"one of null, {DIRECT}, {ITERATIVE}")]),
    ("step", "tol_lin"): (1e-10, _real, "real", [(lambda x: 0 < x <= 1e-4, "0 < tol_lin <= 1e-4")]),
    ("step", "dt_ref_factor"): (4, _int, "integer", [(lambda x: x >= 1, "dt_ref_factor >= 1")]),
    ("sweep", "eps_list"): ([10 ** (-1.5 - 0.5 * i) for i in range(5)], _reals, "list of reals",
                            [(lambda x: all(e > 0 for e in x), "every eps > 0"),
                             (lambda x: all(b < a for a, b in zip(x, x[1:])), "strictly decreasing")]),
    ("sweep", "T"): (0.5, _real, "real", [(lambda x: x > 0, "T > 0")]),
    ("sweep", "profile"): ("default", lambda x: isinstance(x, str), "string",
                           [(lambda x: x in PROFILES, f"one of {', '.join(PROFILES)}")]),
    ("sweep", "well_prepared"): (False, lambda x: isinstance(x, bool), "boolean", []),
    ("sweep", "ill_amplitude"): (0.25, _real, "real", [(lambda x: 0 <= x <= 0.5, "0 <= ill_amplitude <= 0.5")]),
    ("sweep", "margin"): (0.1, _real, "real", [(lambda x: x >= 0, "margin >= 0")]),
    ("sweep", "l_max"): (2, _int, "integer", [(lambda x: 0 <= x <= 3, "0 <= l_max <= 3")]),
    ("sweep", "n_samples"): (10, _int, "integer", [(lambda x: x >= 1, "n_samples >= 1")]),
    ("sweep", "drop_saturated"): (False, lambda x: isinstance(x, bool), "boolean", []),
    ("sweep", "self_check"): (True, lambda x: isinstance(x, bool), "boolean", []),
    ("sweep", "layer_steps"): (200, _int, "integer", [(lambda x: x >= 1, "layer_steps >= 1")]),
    ("run", "eps"): (0.01, _real, "real", [(lambda x: x > 0, "eps > 0")]),
    ("output", "dir"): ("out", lambda x: isinstance(x, str) and x != "", "non-empty string", []),
}
SECTIONS = ["", "params", "grid", "step", "sweep", "run", "output"]


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def params(self):
        names = [k for sec, k in SCHEMA if sec == "params" and k != "A"]
        return SKTParams(**{k: self.values["params", k] for k in names})

    def plan(self):
        v = self.values
        return SweepPlan(
            eps_list=tuple(v["sweep", "eps_list"]),
            T=v["sweep", "T"],
            extent=tuple(v["grid", "extent"]),
            n=tuple(v["grid", "n"]),
            dt=v["step", "dt"],
            params=self.params(),
            profile=v["sweep", "profile"],
            well_prepared=v["sweep", "well_prepared"],
            ill_amplitude=v["sweep", "ill_amplitude"],
            margin=v["sweep", "margin"],
            l_max=v["sweep", "l_max"],
            n_samples=v["sweep", "n_samples"],
            dt_ref_factor=v["step", "dt_ref_factor"],
            A=v["params", "A"],
            diffusion_solver=v["step", "diffusion_solver"],
            tol_lin=v["step", "tol_lin"],
            drop_saturated=v["sweep", "drop_saturated"],
            self_check=v["sweep", "self_check"],
            layer_steps=v["sweep", "layer_steps"],
        )

    def output_dir(self):
        return Path(os.environ.get(OUTPUT_ENV) or self.values["output", "dir"])

    def render(self):
        """The effective config in the input format; parses back to itself."""
        lines = []
        for sec in SECTIONS:
            keys = [k for s, k in SCHEMA if s == sec]
            if sec:
                lines += ["", f"[{sec}]"]
            lines += [f"{k} = {json.dumps(self.values[sec, k])}" for k in keys]
        return "\n".join(lines).lstrip("\n") + "\n"

    def digest(self):
        return hashlib.sha256(self.render().encode()).hexdigest()


_SECTION = re.compile(r"^\[\s*([A-Za-z_][\w-]*)\s*\]$")
_ENTRY = re.compile(r"^([A-Za-z_]\w*)\s*=\s*(.*)$")
_BARE = re.compile(r"^[A-Za-z_][\w.-]*$")


def _literal(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if _BARE.match(text):
            return text
        raise


def parse_config(text):
    """Parse and validate; raises ConfigError listing every problem found."""
    errors = []
    seen = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            if section not in SECTIONS:
                errors.append(f"line {lineno}: unknown section [{section}]")
            continue
        m = _ENTRY.match(line)
        if not m:
            errors.append(f"line {lineno}: expected 'key = value', got {line!r}")
            continue
        key, text_value = m.group(1), m.group(2).strip()
        name = f"{section}.{key}" if section else key
        if (section, key) not in SCHEMA:
            if section in SECTIONS:
                errors.append(f"line {lineno}: unknown key '{name}'")
            continue
        if (section, key) in seen:
            errors.append(f"line {lineno}: '{name}' already set on line {seen[section, key][1]}")
            continue
        try:
            value = _literal(text_value)
        except json.JSONDecodeError:
            errors.append(f"line {lineno}: '{name}' has unreadable value {text_value!r}")
            continue
        seen[section, key] = (value, lineno)

    values = {}
    for (sec, key), (default, check, tname, rules) in SCHEMA.items():
        name = f"{sec}.{key}" if sec else key
        if (sec, key) not in seen:
            values[sec, key] = default
            continue
        value, lineno = seen[sec, key]
        if isinstance(value, int) and not isinstance(value, bool) and tname.startswith("real"):
            value = float(value)
        if isinstance(value, list) and tname == "list of reals":
            value = [float(e) if _int(e) else e for e in value]
        if not check(value):
            errors.append(f"line {lineno}: '{name}' must be a {tname}, got {json.dumps(value)}")
            continue
        for rule, desc in rules:
            if not rule(value):
                errors.append(f"line {lineno}: '{name}' violates {desc}, got {json.dumps(value)}")
        values[sec, key] = value

    errors += _cross_checks(values, seen)
    if errors:
        raise ConfigError(sorted(errors, key=_line_of))
    return RunConfig(values)


def _line_of(message):
    m = re.match(r"line (\d+):", message)
    return int(m.group(1)) if m else 0


def _where(seen, *keys):
    lines = [seen[k][1] for k in keys if k in seen]
    return f"line {min(lines)}: " if lines else ""


def _cross_checks(values, seen):
    errors = []
    dim = values.get(("grid", "dim"))
    for key in ("extent", "n"):
        x = values.get(("grid", key))
        if isinstance(x, list) and dim in (1, 2) and len(x) != dim:
            errors.append(f"{_where(seen, ('grid', key))}'grid.{key}' needs {dim} entries for dim = {dim}, got {len(x)}")
    solver = values.get(("step", "diffusion_solver"))
    if solver == DIRECT and dim == 2:
        errors.append(f"{_where(seen, ('step', 'diffusion_solver'))}'step.diffusion_solver' {DIRECT} only handles dim = 1")
    dt, T = values.get(("step", "dt")), values.get(("sweep", "T"))
    if _real(dt) and _real(T) and dt > T:
        errors.append(f"{_where(seen, ('step', 'dt'))}'step.dt' must not exceed 'sweep.T'")
    if values.get(("params", "r_v"), 0) > 0 and values.get(("params", "d22")) == 0 and values.get(("params", "A")) is None:
        errors.append(f"{_where(seen, ('params', 'd22'), ('params', 'r_v'))}'params.d22' must be > 0 when r_v > 0 and A is not given")
    return errors


def _write_provenance(path, cfg, command, wall, extra=None):
    doc = {
        "command": command,
        "config_sha256": cfg.digest(),
        "version": __version__,
        "wall_time_s": wall,
        "effective_config": cfg.render(),
    }
    if extra:
        doc.update(extra)
    Path(str(path) + ".provenance.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _fits_json(report):
    def enc(fit):
        return None if fit is None else fit.__dict__

    return {
        "fits": {k: enc(f) for k, f in report.fits.items()},
        "reference": report.reference,
        "energy": [
            {"eps": d["eps"], "sup": d["energy_sup"], "initial": d["energy_init"]} for d in report.details
        ],
    }


def cmd_run_micro(cfg):
    plan = cfg.plan()
    spec = hk_for(plan)
    eps = cfg["run", "eps"]
    stepper = MicroStepper(plan.params, spec, eps, plan.step_config(plan.step_dt()))

    def sample(s):
        return {
            "t": s.t,
            "mass_u": integrate(s.u),
            "mass_v": integrate(s.v),
            "Q_L2": l2_norm(compute_Q(s, spec)),
            "E_A": energy_EA(s, spec),
            "E_B": energy_EB(s, spec),
        }

    traj = run(initial_micro(plan, spec, eps), plan.T, stepper, sample_times=plan.sample_times(),
               sample_observer=sample, keep_snapshots=False)
    table = SimpleNamespace(columns=("t", "mass_u", "mass_v", "Q_L2", "E_A", "E_B"), rows=traj.samples)
    return "micro.csv", table, None


def cmd_run_limit(cfg):
    plan = cfg.plan()
    stepper = LimitStepper(plan.params, plan.step_config(plan.step_dt()))

    def sample(s):
        return {"t": s.t, "mass_u": integrate(s.u), "mass_v": integrate(s.v),
                "u_L2": l2_norm(s.u), "v_L2": l2_norm(s.v)}

    traj = run(initial_limit(plan), plan.T, stepper, sample_times=plan.sample_times(),
               sample_observer=sample, keep_snapshots=False)
    table = SimpleNamespace(columns=("t", "mass_u", "mass_v", "u_L2", "v_L2"), rows=traj.samples)
    return "limit.csv", table, None


def cmd_sweep(cfg):
    report = convergence_sweep(cfg.plan())
    return "rates.csv", report, _fits_json(report)


def cmd_layer(cfg):
    table = initial_layer_study(cfg.plan())
    return "layer.csv", table, {"Q0_L2": table.Q0_L2}


COMMANDS = {
    "run-micro": cmd_run_micro,
    "run-limit": cmd_run_limit,
    "sweep": cmd_sweep,
    "layer": cmd_layer,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="fastreact", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("config", help="path to a config file")
    return ap


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        err.write(f"error: cannot read config {args.config}: {exc}\n")
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
        cfg.plan()
    except ConfigError as exc:
        err.write(f"error: invalid config {args.config}:\n")
        for line in exc.errors:
            err.write(f"  {line}\n")
        return EXIT_CONFIG
    except ValueError as exc:
        err.write(f"error: invalid config {args.config}: {exc}\n")
        return EXIT_CONFIG
    if args.command == "validate":
        out.write(cfg.render())
        return EXIT_OK

    start = time.perf_counter()
    try:
        name, table, extra = COMMANDS[args.command](cfg)
        wall = time.perf_counter() - start
        outdir = cfg.output_dir()
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / name
        emit_csv(table, path)
        if extra is not None:
            (outdir / (Path(name).stem + ".json")).write_text(json.dumps(extra, indent=2, sort_keys=True) + "\n")
        _write_provenance(path, cfg, args.command, wall)
    except (RuntimeError, ArithmeticError, OSError, ValueError) as exc:
        err.write(f"error: {args.command} failed: {type(exc).__name__}: {exc}\n")
        return EXIT_RUNTIME
    out.write(f"wrote {path}\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
