import json

import yaml

from privdist.cli import main


def write_cfg(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_run_writes_artifacts(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path,
        "run.yaml",
        {"problem": "opf-toy", "K": 20, "seed": 3, "noise": {"sigma": 0.1}, "thetas": [0.2, 0.5, 0.5, 0.5]},
    )
    out = tmp_path / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    assert (out / "transcript.csv").exists()
    assert (out / "privacy_report.json").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["K"] == 20
    assert "final dual gap" in capsys.readouterr().out


def test_run_deterministic_artifacts(tmp_path):
    cfg = write_cfg(tmp_path, "run.yaml", {"problem": "opf-toy", "K": 10, "seed": 5, "noise": {"sigma": 0.2}})
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a), "--quiet"]) == 0
    assert main(["run", "--config", cfg, "--out", str(b), "--quiet"]) == 0
    assert (a / "transcript.csv").read_bytes() == (b / "transcript.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_cfg(tmp_path, "run.yaml", {"problem": "opf-toy", "K": 5, "seed": 5, "noise": {"sigma": 0.2}})
    out = tmp_path / "o"
    assert main(["run", "--config", cfg, "--out", str(out), "--seed", "9", "--quiet"]) == 0
    assert json.loads((out / "summary.json").read_text())["seed"] == 9


def test_zero_noise_privacy_warning(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path,
        "run.yaml",
        {
            "problem": "opf-toy",
            "K": 3,
            "seed": 0,
            "noise": {"sigma": 0.0},
            "thetas": [0.5] * 4,
            "privacy_requested": [True] * 4,
        },
    )
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert "epsilon=inf" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_builtin_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "run.yaml", {"problem": "nope", "K": 1, "seed": 0})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_missing_problem_file_exit_2(tmp_path):
    cfg = write_cfg(tmp_path, "run.yaml", {"problem": {"file": str(tmp_path / "nope.yaml")}, "K": 1, "seed": 0})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_sensitivity_certificate(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path, "s.yaml", {"problem": "opf-toy", "agent": 1, "alpha": 0.1, "beta": 0.1, "seed": 0}
    )
    out = tmp_path / "o"
    assert main(["sensitivity", "--config", cfg, "--out", str(out), "--trials", "50"]) == 0
    cert = json.loads((out / "sensitivity_certificate.json").read_text())
    assert cert["N"] == 50
    assert "gamma_N" in capsys.readouterr().out


def test_sensitivity_dominance_violation_exit_4(tmp_path, monkeypatch):
    import importlib

    app_module = importlib.import_module("privdist.service.app")
    from privdist.privacy import SensitivityEstimate

    monkeypatch.setattr(
        app_module,
        "sensitivity_sample",
        lambda *a, **k: SensitivityEstimate(gamma_N=99.0, N=10, alpha=0.1, beta=0.1, analytic_upper=1.0),
    )
    cfg = write_cfg(tmp_path, "s.yaml", {"problem": "opf-toy", "alpha": 0.1, "beta": 0.1, "seed": 0})
    assert main(["sensitivity", "--config", cfg, "--out", str(tmp_path / "o")]) == 4


def test_tradeoff_artifacts(tmp_path):
    cfg = write_cfg(
        tmp_path,
        "t.yaml",
        {
            "theta": 1.0,
            "M": 1,
            "G": 1.0,
            "rho_phi": 1.0,
            "eps_bar": 100.0,
            "S_bar": 0.1,
            "test_points": [{"nu": 0.5, "K": 50}],
        },
    )
    out = tmp_path / "o"
    assert main(["tradeoff", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    verdicts = json.loads((out / "feasibility_verdicts.json").read_text())
    assert verdicts[0]["feasible"] is True
    assert (out / "tradeoff_cloud.csv").exists()
    assert (out / "pareto_front.json").exists()


def test_tradeoff_empty_grid_exit_2(tmp_path):
    cfg = write_cfg(tmp_path, "t.yaml", {"theta": 1.0, "M": 1, "G": 1.0, "rho_phi": 1.0, "sigmas": []})
    assert main(["tradeoff", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_allocate_equal_and_kelly(tmp_path, capsys):
    base = {"rho_phi": 1.0, "K": 100, "S_K": 0.4, "G": [1.0, 1.0]}
    cfg = write_cfg(tmp_path, "a.yaml", {**base, "scheme": "equal-split"})
    out = tmp_path / "o1"
    assert main(["allocate", "--config", cfg, "--out", str(out)]) == 0
    alloc = json.loads((out / "allocation.json").read_text())
    assert alloc["shares_sigma2"] == [4.0, 4.0]

    cfg = write_cfg(tmp_path, "k.yaml", {**base, "scheme": "kelly", "bids": [1.0, 3.0]})
    out = tmp_path / "o2"
    assert main(["allocate", "--config", cfg, "--out", str(out), "--quiet"]) == 0
    alloc = json.loads((out / "allocation.json").read_text())
    assert alloc["shares_sigma2"] == [2.0, 6.0]


def test_allocate_infeasible_target_warns(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path,
        "a.yaml",
        {"scheme": "equal-split", "rho_phi": 1.0, "K": 1, "S_K": 1e-9, "G": [1.0], "M": 1},
    )
    assert main(["allocate", "--config", cfg, "--out", str(tmp_path / "o"), "--quiet"]) == 0
    assert "infeasible" in capsys.readouterr().err


def test_mpc_loop_artifacts(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "m.yaml", {"sigma": 0.0, "K_per_step": 5, "steps": 3, "seed": 0})
    out = tmp_path / "o"
    assert main(["mpc-loop", "--config", cfg, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 3
    assert (out / "trajectory.csv").exists()
    assert "tracking error" in capsys.readouterr().out
