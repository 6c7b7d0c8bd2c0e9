import io
import json
from pathlib import Path

import pytest

from fastreact import cli
from fastreact.cli import OUTPUT_ENV, main, parse_config
from fastreact.errors import ConfigError, SolverDivergenceError

EXAMPLE = Path(__file__).resolve().parents[1] / "configs" / "example.cfg"

TINY = """
[grid]
n = [17]
[sweep]
T = 0.01
eps_list = [0.1, 0.05, 0.02, 0.01]
n_samples = 2
[output]
dir = "{out}"
"""


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def tiny(tmp_path, name="run.cfg", out="out"):
    p = tmp_path / name
    p.write_text(TINY.format(out=tmp_path / out))
    return p


def test_defaults():
    cfg = parse_config("")
    assert cfg["params", "sigma"] == 1.0 and cfg["grid", "n"] == [512]
    assert cfg.plan().step_dt() == pytest.approx(0.01 / 511)
    assert parse_config(cfg.render()).values == cfg.values


def test_example_config_is_the_defaults():
    assert parse_config(EXAMPLE.read_text()).values == parse_config("").values


def test_reports_every_error_with_key_and_line():
    text = "[params]\nsigma = -1\nbogus = 3\n[sweep]\neps_list = [0.1, 0.2]\nT = \"long\"\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    errs = info.value.errors
    assert len(errs) == 4
    assert any("sigma" in e and "σ > 0" in e and "line 2" in e for e in errs)
    assert any("params.bogus" in e and "line 3" in e for e in errs)
    assert any("eps_list" in e and "decreasing" in e and "line 5" in e for e in errs)
    assert any("sweep.T" in e and "line 6" in e for e in errs)


@pytest.mark.parametrize(
    "text, needle",
    [
        ("[nowhere]\nx = 1\n", "unknown section"),
        ("[grid]\nn = [33\n", "unreadable"),
        ("[grid]\ndim = 2\n", "grid.extent"),
        ("[grid]\ndim = 2\nextent = [1, 1]\nn = [9, 9]\n[step]\ndiffusion_solver = \"direct-tridiagonal\"\n", "only handles"),
        ("[step]\ndt = 1.0\n[sweep]\nT = 0.5\n", "must not exceed"),
        ("[grid]\nn = 33\n", "list of integers"),
        ("[grid]\nn = [33]\nn = [65]\n", "already set"),
        ("just text\n", "expected 'key = value'"),
        ("schema_version = 2\n", "schema_version"),
    ],
)
def test_rejections(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_bare_words_and_comments():
    cfg = parse_config("# note\n; note\n[sweep]\nprofile = homogeneous\n")
    assert cfg["sweep", "profile"] == "homogeneous"


def test_validate_prints_effective_config(tmp_path):
    code, out, _ = call("validate", str(EXAMPLE))
    assert code == 0
    assert parse_config(out).values == parse_config("").values


def test_missing_config_exit_1(tmp_path):
    code, _, err = call("sweep", str(tmp_path / "missing.cfg"))
    assert code == 1 and "missing.cfg" in err


def test_invalid_config_exit_1_before_compute(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text(f"[params]\nsigma = -1\n[output]\ndir = \"{tmp_path / 'out'}\"\n")
    code, _, err = call("sweep", str(p))
    assert code == 1 and "sigma" in err
    assert not (tmp_path / "out").exists()


def test_unknown_subcommand_exit_1(capsys):
    assert main(["explode", str(EXAMPLE)]) == 1


def test_unwritable_output_exit_2(tmp_path):
    (tmp_path / "blocker").write_text("")
    p = tmp_path / "run.cfg"
    p.write_text(TINY.format(out=tmp_path / "blocker" / "sub"))
    code, _, err = call("run-limit", str(p))
    assert code == 2 and "run-limit failed" in err


def test_solver_failure_exit_2(tmp_path, monkeypatch):
    def diverge(plan):
        raise SolverDivergenceError("CG stalled", 1e-3)

    monkeypatch.setattr(cli, "convergence_sweep", diverge)
    code, _, err = call("sweep", str(tiny(tmp_path)))
    assert code == 2 and "SolverDivergenceError" in err


def test_sweep_writes_csv_and_provenance(tmp_path):
    p = tiny(tmp_path)
    code, out, _ = call("sweep", str(p))
    assert code == 0
    d = tmp_path / "out"
    header = (d / "rates.csv").read_text().splitlines()[0]
    assert header.startswith("eps,U_LinfL2,U_L2H1")
    prov = json.loads((d / "rates.csv.provenance.json").read_text())
    assert set(prov) >= {"config_sha256", "version", "wall_time_s", "effective_config"}
    assert parse_config(prov["effective_config"]).digest() == prov["config_sha256"]
    fits = json.loads((d / "rates.json").read_text())
    assert "U_headline" in fits["fits"]


def test_sweep_is_deterministic_and_provenance_round_trips(tmp_path):
    p = tiny(tmp_path)
    assert call("sweep", str(p))[0] == 0
    first = (tmp_path / "out" / "rates.csv").read_bytes()
    assert call("sweep", str(p))[0] == 0
    assert (tmp_path / "out" / "rates.csv").read_bytes() == first

    prov = json.loads((tmp_path / "out" / "rates.csv.provenance.json").read_text())
    echoed = tmp_path / "echoed.cfg"
    echoed.write_text(prov["effective_config"])
    assert call("sweep", str(echoed))[0] == 0
    assert (tmp_path / "out" / "rates.csv").read_bytes() == first


@pytest.mark.parametrize("command, name", [("layer", "layer.csv"), ("run-micro", "micro.csv"),
                                           ("run-limit", "limit.csv")])
def test_other_commands(tmp_path, command, name):
    code, _, _ = call(command, str(tiny(tmp_path)))
    assert code == 0
    lines = (tmp_path / "out" / name).read_text().splitlines()
    assert len(lines) >= 2
    assert (tmp_path / "out" / (name + ".provenance.json")).exists()


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "elsewhere"))
    assert call("run-limit", str(tiny(tmp_path)))[0] == 0
    assert (tmp_path / "elsewhere" / "limit.csv").exists()
    assert not (tmp_path / "out").exists()
