import copy
import csv

import pytest
import yaml

from diffhmm.cli import main
from diffhmm.config import ConfigError, load_config, parse_config

SMALL = {
    "model": {"preset": "ou1d"},
    "grid": {"bounds": [[-6.0, 6.0]], "resolution": [121]},
    "lyapunov": {
        "V": [[0.25, [2]]],
        "W": [[1.0, [0]], [0.125, [2]]],
        "delta": 1.0,
        "b": 1.5,
        "C_radius": 3.4641016151377544,
        "sup_V_on_C": 3.0,
    },
    "approximation": {
        "kappa": 20.0,
        "cells_per_axis": 60,
        "epsilon": 0.5,
        "alpha_delta": 0.5,
        "times": [0.5, 1.0],
        "test_function": {"poly": [[1.0, [1]]], "width": 2.0},
    },
    "simulation": {"seed": 11, "n_paths": 3000, "dt": 0.01, "x0": [0.5], "T": 0.5},
    "output": "out",
}


def write_cfg(tmp_path, doc, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return p


def variant(**changes):
    doc = copy.deepcopy(SMALL)
    for path, val in changes.items():
        block, key = path.split("__")
        doc[block][key] = val
    return doc


def run(tmp_path, command, doc, out="o", extra=()):
    cfg = write_cfg(tmp_path, doc, f"{out}.yaml")
    code = main([command, "--config", str(cfg), "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def rows(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


# ----------------------------------------------------------------- certify


def test_certify_passes(tmp_path):
    code, out = run(tmp_path, "certify", SMALL)
    assert code == 0
    summary = yaml.safe_load((out / "summary.yaml").read_text())
    assert summary["certificate"]["passed"] is True
    assert summary["config"]["approximation"]["kappa"] == 20.0
    assert len(rows(out / "certificate.csv")) == 121


def test_certify_fails_without_b(tmp_path, capsys):
    code, out = run(tmp_path, "certify", variant(lyapunov__b=0.0))
    assert code == 1
    err = capsys.readouterr().err
    assert "drift condition fails" in err and "[0.0]" in err
    assert yaml.safe_load((out / "summary.yaml").read_text())["certificate"]["worst_point"] == [0.0]


def test_missing_block_is_config_error(tmp_path, capsys):
    doc = copy.deepcopy(SMALL)
    del doc["grid"]
    code, _ = run(tmp_path, "certify", doc)
    assert code == 2
    assert "grid" in capsys.readouterr().err


def test_yaml_error_reports_position(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("model:\n  preset: ou1d\ngrid: [unclosed\n")
    with pytest.raises(ConfigError, match="line"):
        load_config(p)


def test_config_validation():
    with pytest.raises(ConfigError, match="alpha_delta"):
        parse_config(variant(approximation__alpha_delta=1.5))
    with pytest.raises(ConfigError, match="x0"):
        parse_config(variant(simulation__x0=[0.0, 1.0]))
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({**SMALL, "extra": 1})
    with pytest.warns(UserWarning, match="kappa"):
        parse_config(variant(approximation__kappa=1.5))


def test_config_round_trip():
    cfg = parse_config(SMALL)
    assert parse_config(cfg.to_dict()).to_dict() == cfg.to_dict()
    assert cfg.to_dict()["approximation"]["test_function"] == SMALL["approximation"]["test_function"]


# ------------------------------------------------------------- approximate


def test_approximate_passes_loose_target(tmp_path):
    code, out = run(tmp_path, "approximate", SMALL)
    assert code == 0
    gaps = rows(out / "resolvent_gaps.csv")
    assert [float(r["alpha"]) for r in gaps] == [0.5, 1.0, 2.0]
    assert len(rows(out / "semigroup_gaps.csv")) == 2
    assert (out / "generator.json").exists()
    summary = yaml.safe_load((out / "summary.yaml").read_text())
    assert summary["passed"] is True


def test_approximate_unmet_target(tmp_path, capsys):
    code, out = run(tmp_path, "approximate", variant(approximation__epsilon=1e-6, approximation__cells_per_axis=4))
    assert code == 1
    assert "alpha > (1+b_v)*eps0" in capsys.readouterr().err
    summary = yaml.safe_load((out / "summary.yaml").read_text())
    assert summary["criteria"]["resolvent"]["passed"] is False


def test_alpha_grid_from_config(tmp_path):
    code, out = run(tmp_path, "approximate", variant(approximation__alpha_delta=0.9))
    alphas = [float(r["alpha"]) for r in rows(out / "resolvent_gaps.csv")]
    assert alphas[:2] == [0.9, 1.0] and alphas[2] == pytest.approx(1 / 0.9)


# ---------------------------------------------------------------- spectrum


def test_spectrum_files(tmp_path):
    code, out = run(tmp_path, "spectrum", SMALL)
    assert code == 0
    for name in ("Dh", "R1", "E", "T1", "E_reduced"):
        assert (out / f"spectrum_{name}.csv").exists()
    assert len(rows(out / "spectrum_R1.csv")) == 121
    assert len(rows(out / "spectrum_E_reduced.csv")) == 60


def test_spectrum_two_cells(tmp_path):
    code, out = run(tmp_path, "spectrum", variant(approximation__cells_per_axis=2))
    red = rows(out / "spectrum_E_reduced.csv")
    assert len(red) == 2
    assert float(red[0]["real"]) == pytest.approx(0.0, abs=1e-10)
    assert float(red[1]["real"]) < 0


# ---------------------------------------------------------------- simulate


def test_simulate_outputs_and_statistics(tmp_path):
    code, out = run(tmp_path, "simulate", SMALL)
    assert code == 0
    stats = {r["quantity"]: float(r["z"]) for r in rows(out / "statistics.csv")}
    assert abs(stats["jump_count_mean"]) <= 4 and abs(stats["hmm_event_mean"]) <= 4
    assert stats["jump_max_abs_z"] <= 5 and stats["hmm_max_abs_z"] <= 5


def test_simulate_is_byte_deterministic(tmp_path):
    files = ("sde_law.csv", "jump_law.csv", "hmm_hidden.csv", "statistics.csv", "summary.yaml")
    outs = []
    for tag, threads in (("a", "1"), ("b", "1"), ("c", "2"), ("d", "0")):
        code, out = run(tmp_path, "simulate", SMALL, out=tag, extra=("--threads", threads))
        assert code == 0
        outs.append({f: (out / f).read_bytes() for f in files})
    assert all(o == outs[0] for o in outs[1:])


def test_seed_override_changes_draws(tmp_path):
    _, a = run(tmp_path, "simulate", SMALL, out="a")
    _, b = run(tmp_path, "simulate", SMALL, out="b", extra=("--seed", "12"))
    assert (a / "jump_law.csv").read_bytes() != (b / "jump_law.csv").read_bytes()
    assert yaml.safe_load((b / "summary.yaml").read_text())["seed"] == 12
