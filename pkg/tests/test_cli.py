"""Command line harness: config plumbing, artifacts, exit codes, verify."""
from __future__ import annotations

import json

import numpy as np
import pytest

from cbfed import cli
from cbfed import spectral as sp
from cbfed import timestep as ts
from cbfed.errors import ConfigError


def write_config(tmp_path, body, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return str(path)


def synthetic_csv(tmp_path, t, h, name="traj.csv"):
    z = np.zeros_like(np.asarray(t, dtype=float))
    traj = ts.Trajectory(np.asarray(t, float), np.asarray(h, float), z, z, z, z, z, z)
    path = tmp_path / name
    traj.to_csv(path)
    return str(path)


def load_report(outdir):
    with open(outdir / "report.json") as fh:
        return json.load(fh)


def only_run_dir(root):
    dirs = [p for p in root.iterdir() if p.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


def test_report_decay_exact_exponential(tmp_path):
    t = np.linspace(0.0, 5.0, 120)
    path = synthetic_csv(tmp_path, t, np.exp(-t))
    rep = cli.report_decay(path, delta_claim=1.0)
    assert set(rep) == {"delta_fit", "delta_claim", "pointwise_ok", "window"}
    assert abs(rep["delta_fit"] - 1.0) < 1e-8
    assert rep["delta_claim"] == 1.0
    assert rep["pointwise_ok"]


def test_report_decay_constant_norm(tmp_path):
    t = np.linspace(0.0, 4.0, 50)
    path = synthetic_csv(tmp_path, t, np.ones_like(t))
    rep = cli.report_decay(path, delta_claim=0.1)
    assert not rep["pointwise_ok"]
    assert abs(rep["delta_fit"]) < 1e-10


def test_report_decay_malformed(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("just,some\nnonsense,here\n")
    with pytest.raises(ConfigError):
        cli.report_decay(str(bad), delta_claim=0.5)


def test_constants_subcommand(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "experiment": "constants",
            "params": {"mu": 1.0, "beta": 1.0, "gamma": 0.0, "r": 5.0, "q": 2.0},
            "output_dir": str(tmp_path / "out"),
        },
    )
    assert cli.main(["constants", "--config", cfg]) == 0
    outdir = only_run_dir(tmp_path / "out")
    rep = load_report(outdir)
    assert rep["experiment"] == "constants"
    assert len(rep["config_hash"]) == 64
    assert outdir.name == rep["config_hash"][:12]
    assert abs(rep["report"]["rho_half"] - 0.5) < 1e-12
    assert abs(rep["report"]["rho_one"] - 0.25) < 1e-12
    with open(outdir / "manifest.json") as fh:
        man = json.load(fh)
    assert man["config_hash"] == rep["config_hash"]
    assert "report.json" in man["files"]


def test_same_config_twice_identical_csv(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "experiment": "simulate",
            "grid": {"d": 2, "N": 8},
            "params": {"mu": 1.0, "alpha": 0.5, "beta": 1.0, "gamma": 0.0, "r": 3.0, "q": 2.0},
            "initial": {"kind": "random", "amplitude": 0.05, "decay": 2.0},
            "integrator": {"scheme": "imex1", "T": 0.2, "dt": 0.02},
            "output_dir": str(tmp_path / "out"),
            "seed": 3,
        },
    )
    assert cli.main(["simulate", "--config", cfg]) == 0
    outdir = only_run_dir(tmp_path / "out")
    first = (outdir / "trajectory.csv").read_bytes()
    assert cli.main(["simulate", "--config", cfg]) == 0
    second = (outdir / "trajectory.csv").read_bytes()
    assert first == second
    assert first.startswith(b"# config_hash=")
    traj = ts.Trajectory.from_csv(outdir / "trajectory.csv")
    assert len(traj.t) > 1


def test_set_overrides_change_hash(tmp_path):
    body = {
        "experiment": "constants",
        "params": {"mu": 1.0, "beta": 1.0, "gamma": 0.0, "r": 5.0, "q": 2.0},
        "output_dir": str(tmp_path / "out"),
    }
    cfg = write_config(tmp_path, body)
    assert cli.main(["constants", "--config", cfg]) == 0
    assert cli.main(["constants", "--config", cfg, "--set", "params.r=4.5"]) == 0
    dirs = [p for p in (tmp_path / "out").iterdir() if p.is_dir()]
    assert len(dirs) == 2
    reports = [load_report(d) for d in dirs]
    rs = sorted(rep["config"]["params"]["r"] for rep in reports)
    assert rs == [4.5, 5.0]


def test_exit_code_config_error(tmp_path):
    cfg = write_config(
        tmp_path,
        {"experiment": "constants", "params": {"zeta": 1.0}, "output_dir": str(tmp_path / "o")},
    )
    assert cli.main(["constants", "--config", cfg]) == 2
    # r <= q is rejected by parameter validation
    cfg2 = write_config(
        tmp_path,
        {
            "experiment": "constants",
            "params": {"r": 2.0, "q": 3.0},
            "output_dir": str(tmp_path / "o"),
        },
        name="cfg2.json",
    )
    assert cli.main(["constants", "--config", cfg2]) == 2
    # experiment recorded in the file must agree with the subcommand
    cfg3 = write_config(
        tmp_path, {"experiment": "simulate", "output_dir": str(tmp_path / "o")}, name="cfg3.json"
    )
    assert cli.main(["constants", "--config", cfg3]) == 2


def test_exit_code_regime_violation(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "experiment": "stabilize-theta",
            "grid": {"d": 2, "N": 8},
            "params": {"mu": 1.0, "alpha": 0.3, "beta": 1.0, "gamma": 0.0, "r": 2.0, "q": 1.0},
            "output_dir": str(tmp_path / "out"),
        },
    )
    assert cli.main(["stabilize-theta", "--config", cfg]) == 4


def test_exit_code_solver_divergence(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "experiment": "simulate",
            "grid": {"d": 2, "N": 8},
            "params": {"mu": 1e-4, "alpha": 0.1, "beta": 1.0, "gamma": 0.0, "r": 5.0, "q": 2.0},
            "initial": {"kind": "random", "amplitude": 30.0, "decay": 1.0},
            "integrator": {"scheme": "imex1", "T": 50.0, "dt": 1.0},
            "output_dir": str(tmp_path / "out"),
        },
    )
    assert cli.main(["simulate", "--config", cfg]) == 3


def test_stationary_subcommand(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "experiment": "stationary",
            "grid": {"d": 2, "N": 16},
            "params": {"mu": 1.0, "alpha": 0.4, "beta": 1.0, "gamma": -0.1, "r": 5.0, "q": 2.0},
            "forcing": {"kind": "random", "amplitude": 0.05, "decay": 2.0},
            "output_dir": str(tmp_path / "out"),
        },
    )
    assert cli.main(["stationary", "--config", cfg]) == 0
    outdir = only_run_dir(tmp_path / "out")
    rep = load_report(outdir)
    body = rep["report"]
    assert set(body) == {"residual", "iterations", "uniqueness_report", "energy_report"}
    assert body["residual"] < 1e-10
    assert {"lhs", "rhs", "satisfied"} <= set(body["uniqueness_report"])
    assert body["energy_report"]["satisfied"]
    field = sp.read_snapshot(outdir / "equilibrium.cbfd")
    assert field.grid.N == 16


def test_theta_subcommand(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "experiment": "stabilize-theta",
            "grid": {"d": 2, "N": 16},
            "params": {"mu": 1.0, "alpha": 0.3, "beta": 1.0, "gamma": -0.1, "r": 5.0, "q": 2.0},
            "controller": {"delta_target": 0.3},
            "constraint": {"kind": "ball", "radius": 0.5},
            "initial": {"kind": "random", "amplitude": 0.1, "decay": 2.0},
            "integrator": {"scheme": "imex1", "T": 3.0, "dt": 0.01},
            "output_dir": str(tmp_path / "out"),
        },
    )
    assert cli.main(["stabilize-theta", "--config", cfg]) == 0
    outdir = only_run_dir(tmp_path / "out")
    rep = load_report(outdir)
    body = rep["report"]
    assert set(body) == {
        "theta", "c_min", "delta_claim", "delta_fit", "pointwise_ok", "invariance_ok",
    }
    assert body["pointwise_ok"] and body["invariance_ok"]
    assert abs(body["delta_claim"] - 0.9 * 0.3) < 1e-12
    traj = ts.Trajectory.from_csv(outdir / "trajectory.csv")
    assert traj.norm_H[-1] < traj.norm_H[0]


def test_proportional_subcommand(tmp_path):
    L = 2 * np.pi
    cfg = write_config(
        tmp_path,
        {
            "experiment": "stabilize-proportional",
            "grid": {"d": 2, "N": 16},
            "params": {"mu": 1.0, "alpha": 0.3, "beta": 1.0, "gamma": -0.1, "r": 5.0, "q": 2.0},
            "mask": {"boxes": [[[L / 8, L], [0.0, L]]]},
            "controller": {"k_gain": 60.0, "eps": 0.0},
            "initial": {"kind": "random", "amplitude": 0.05, "decay": 2.5},
            "integrator": {"scheme": "imex1", "T": 2.0, "dt": 0.005},
            "output_dir": str(tmp_path / "out"),
        },
    )
    assert cli.main(["stabilize-proportional", "--config", cfg]) == 0
    outdir = only_run_dir(tmp_path / "out")
    rep = load_report(outdir)
    body = rep["report"]
    assert set(body) == {
        "k_gain", "c_min", "delta_claim", "delta_fit", "pointwise_ok", "invariance_ok",
    }
    assert rep["extra"]["delta"] > 0
    assert body["pointwise_ok"]


def test_eigen_subcommand(tmp_path):
    L = 2 * np.pi
    cfg = write_config(
        tmp_path,
        {
            "experiment": "eigen",
            "grid": {"d": 2, "N": 16},
            "params": {"mu": 1.0, "alpha": 0.3, "beta": 1.0, "gamma": 0.0, "r": 5.0, "q": 2.0},
            "mask": {"boxes": [[[L / 4, L], [0.0, L]]]},
            "controller": {"ladder": [10.0, 20.0, 40.0, 80.0]},
            "output_dir": str(tmp_path / "out"),
        },
    )
    assert cli.main(["eigen", "--config", cfg]) == 0
    rep = load_report(only_run_dir(tmp_path / "out"))
    body = rep["report"]
    assert len(body["ladder"]) == 4
    assert all(len(row) == 3 for row in body["ladder"])
    assert body["monotone_ok"]
    assert body["lambda_star"] >= body["nu_max"] - 1e-9
    assert body["rfk_bound"] > 0
    assert body["rfk_bound_scaled"] > body["rfk_bound"] * 0  # present and numeric


def test_reduce_subcommand(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "experiment": "reduce",
            "grid": {"d": 2, "N": 16},
            "params": {"mu": 1.0, "alpha": 0.3, "beta": 1.0, "gamma": 0.0, "r": 3.0, "q": 2.0},
            "controller": {"n": 8},
            "output_dir": str(tmp_path / "out"),
        },
    )
    assert cli.main(["reduce", "--config", cfg]) == 0
    outdir = only_run_dir(tmp_path / "out")
    rep = load_report(outdir)
    assert rep["report"]["n"] == 8
    assert rep["report"]["rank"] == 8
    with np.load(outdir / "reduction.npz") as bundle:
        assert bundle["Lmat"].shape == (8, 8)
        assert bundle["g1"].shape == (8, 8, 8)
        assert bundle["Bmat"].shape == (8, 8)
        assert np.allclose(bundle["lam"], [0, 0, 1, 1, 1, 1, 2, 2])


def test_galerkin_subcommand(tmp_path):
    L = 2 * np.pi
    cfg = write_config(
        tmp_path,
        {
            "experiment": "stabilize-galerkin",
            "grid": {"d": 2, "N": 16},
            "params": {"mu": 1.0, "alpha": 0.3, "beta": 1.0, "gamma": 0.0, "r": 3.0, "q": 2.0},
            "mask": {"boxes": [[[L / 8, L], [0.0, L]]]},
            "controller": {"sigma": 1.0, "n": 8, "v0_scale": 1e-4},
            "integrator": {"scheme": "imex1", "T": 1.0, "dt": 0.01},
            "output_dir": str(tmp_path / "out"),
        },
    )
    assert cli.main(["stabilize-galerkin", "--config", cfg]) == 0
    outdir = only_run_dir(tmp_path / "out")
    rep = load_report(outdir)
    body = rep["report"]
    assert set(body) == {
        "n", "rank", "sigma", "M_hat", "gamma0", "gamma1_or_2",
        "C4", "C5", "rho1", "decay_fit_reduced", "decay_fit_full",
    }
    assert body["rank"] == 8
    assert body["decay_fit_reduced"] > 0.85
    assert (outdir / "trajectory.csv").exists()
    assert (outdir / "reduced.csv").exists()


def test_verify_subcommand(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        {
            "experiment": "constants",
            "params": {"mu": 1.0, "beta": 1.0, "gamma": 0.0, "r": 5.0, "q": 2.0},
            "output_dir": str(tmp_path / "out"),
        },
    )
    assert cli.main(["constants", "--config", cfg]) == 0
    target = only_run_dir(tmp_path / "out")
    vcfg = write_config(
        tmp_path,
        {
            "experiment": "verify",
            "verify": {"target": str(target)},
            "output_dir": str(tmp_path / "vout"),
        },
        name="verify.json",
    )
    assert cli.main(["verify", "--config", vcfg]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out
    rep = load_report(only_run_dir(tmp_path / "vout"))
    assert rep["report"]["all_ok"]
    names = [c["name"] for c in rep["report"]["checks"]]
    assert "artifact-hashes" in names
    assert all(c["ok"] for c in rep["report"]["checks"])
