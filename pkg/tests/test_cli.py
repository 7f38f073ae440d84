import json
import math

import pytest

from ldpvol.cli import EXIT_CONFIG, EXIT_OK, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_toy_bounds_command(capsys):
    code, out, _ = run_cli(capsys, "toy-bounds", "--T", "1", "--k", "0.1")
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["lower"] == pytest.approx(0.005000, abs=1e-6)
    assert obj["upper"] == pytest.approx(0.0158198, abs=1e-6)
    assert obj["lower"] <= obj["rate"] <= obj["upper"]
    assert obj["resolved_config"]["n_steps"] == 200


def test_rate_terminal_bundled_model(capsys):
    code, out, _ = run_cli(
        capsys, "rate-terminal", "--preset", "bs_const", "--x", "0.1", "--n-steps", "100"
    )
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["value"] == pytest.approx(0.125, rel=1e-4)
    assert obj["resolved_config"]["preset"] == "bs_const"


def test_missing_model_file_exit_2(capsys):
    code, _, err = run_cli(
        capsys, "rate-terminal", "--model", "/no/such/file.json", "--x", "0.1"
    )
    assert code == EXIT_CONFIG
    assert "error" in json.loads(err)


def test_bad_parameter_exit_2(capsys):
    code, _, err = run_cli(capsys, "toy-bounds", "--T", "1", "--k", "-0.5")
    assert code == EXIT_CONFIG
    assert json.loads(err)["error"] == "DomainError"


def test_model_file_and_outputs(tmp_path, capsys):
    model_file = tmp_path / "model.json"
    model_file.write_text(json.dumps({"preset": "bs_const", "params": {"sigma0": 0.3}}))
    out_prefix = tmp_path / "result"
    code, _, _ = run_cli(
        capsys,
        "iv-limit",
        "--model",
        str(model_file),
        "--k",
        "0.1",
        "--n-steps",
        "100",
        "--output",
        str(out_prefix),
    )
    assert code == EXIT_OK
    obj = json.loads((tmp_path / "result.json").read_text())
    assert obj["limit_value"] == pytest.approx(0.3, rel=1e-5)


def test_call_ladder_csv(tmp_path, capsys):
    out_prefix = tmp_path / "call"
    code, _, _ = run_cli(
        capsys,
        "call-asymptote",
        "--preset",
        "bs_const",
        "--strike",
        "1.1",
        "--ladder",
        "1.2,1.3",
        "--n-steps",
        "60",
        "--format",
        "csv",
        "--output",
        str(out_prefix),
    )
    assert code == EXIT_OK
    lines = (tmp_path / "call.csv").read_text().strip().splitlines()
    assert lines[0].startswith("strike")
    assert len(lines) == 4
    obj = json.loads((tmp_path / "call.json").read_text())
    rates = [row["rate"] for row in obj["ladder"]]
    assert rates == sorted(rates)


def test_exit_rate_inline_domain(capsys):
    dom = json.dumps({"kind": "half_space", "normal": [1.0], "offset": 0.2})
    code, out, _ = run_cli(
        capsys,
        "exit-rate",
        "--preset",
        "bs_const",
        "--domain",
        dom,
        "--n-steps",
        "60",
        "--restarts",
        "2",
    )
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["rate"] == pytest.approx(0.2**2 / 0.08, rel=2e-2)


def test_barrier_rate(capsys):
    dom = json.dumps({"kind": "box", "lower": [0.0], "upper": [1.25]})
    code, out, _ = run_cli(
        capsys,
        "barrier-rate",
        "--preset",
        "bs_const",
        "--domain",
        dom,
        "--n-steps",
        "60",
        "--restarts",
        "2",
    )
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["rate"] == pytest.approx(math.log(1.25) ** 2 / 0.08, rel=2e-2)
    assert obj["diagnostics"]["discount_prefactor"] == 1.0


def test_kernel_info(capsys):
    code, out, _ = run_cli(
        capsys,
        "kernel-info",
        "--kernel",
        json.dumps({"kind": "riemann_liouville", "hurst": 0.5}),
        "--n-steps",
        "16",
    )
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["kind"] == "riemann_liouville"
    # H = 1/2 slice variance equals t
    for t_str, v in obj["slice_variance"].items():
        assert v == pytest.approx(float(t_str), rel=1e-12)


def test_mc_verify_round_trip(tmp_path, capsys):
    cfg = {
        "model": {"preset": "bs_const"},
        "quantity": "tail",
        "epsilon_ladder": [0.4, 0.2],
        "n_paths": 20000,
        "horizon": 1.0,
        "n_steps": 50,
        "seed": 7,
        "k": 0.1,
        "reference_rate": 0.125,
    }
    cfg_file = tmp_path / "sim.json"
    cfg_file.write_text(json.dumps(cfg))
    out_prefix = tmp_path / "mc"
    code, _, _ = run_cli(
        capsys,
        "mc-verify",
        "--config",
        str(cfg_file),
        "--format",
        "csv",
        "--output",
        str(out_prefix),
    )
    assert code == EXIT_OK
    obj = json.loads((tmp_path / "mc.json").read_text())
    assert obj["reference_rate"] == 0.125
    assert len(obj["rows"]) == 2
    # re-running the echoed config reproduces the estimates exactly
    (tmp_path / "sim2.json").write_text(json.dumps(obj["resolved_config"]))
    code2, _, _ = run_cli(
        capsys, "mc-verify", "--config", str(tmp_path / "sim2.json"),
        "--output", str(tmp_path / "mc2"),
    )
    assert code2 == EXIT_OK
    obj2 = json.loads((tmp_path / "mc2.json").read_text())
    assert obj2["rows"] == obj["rows"]
    lines = (tmp_path / "mc.csv").read_text().strip().splitlines()
    assert len(lines) == 3


def test_rate_path_command(tmp_path, capsys):
    from ldpvol import TimeGrid, PathFn
    from ldpvol.paths import path_to_csv

    grid = TimeGrid(1.0, 60)
    target = tmp_path / "target.csv"
    path_to_csv(PathFn(grid, 0.1 * grid.nodes), target)
    code, out, _ = run_cli(
        capsys,
        "rate-path",
        "--preset",
        "bs_const",
        "--target",
        str(target),
        "--restarts",
        "2",
    )
    assert code == EXIT_OK
    obj = json.loads(out)
    assert obj["value"] == pytest.approx(0.125, rel=1e-6)
    assert obj["minimizer_l"] is not None
