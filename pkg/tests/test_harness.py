import json

import numpy as np
import pytest

from gtsim.harness import ConfigError, PRESETS, load_dataset, parse_config, run_experiment
from gtsim.harness.cli import main
from gtsim.harness.config import DEFAULT_SEED
from gtsim.harness.runner import CSV_COLUMNS, EXIT_BOUND, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_OK, resolve
from gtsim.objectives import ObjectiveError

SMALL = {"iters": 300, "trials": 3, "stride": 10}


def small(preset=None, **kw):
    return parse_config(preset=preset, overrides={**SMALL, **kw})


# -- configuration ----------------------------------------------------------


def test_defaults_record_seed():
    cfg = parse_config()
    assert cfg.run.seed == DEFAULT_SEED
    assert cfg.to_dict()["run"]["seed"] == str(DEFAULT_SEED)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_resolve(name):
    cfg = parse_config(preset=name, overrides={"trials": 2})
    res = resolve(cfg)
    assert res.arms
    assert cfg.preset == name


def test_pl_sweep_expands_arms():
    res = resolve(parse_config(preset="pl-sweep"))
    labels = [a.label for a in res.arms]
    assert len(labels) == 6
    assert "gt_dsgd@exponential[0.5*alpha_bar]" in labels
    a = {x.label: x.schedule.alpha for x in res.arms}
    assert a["dsgd@exponential[0.25*alpha_bar]"] == pytest.approx(a["gt_dsgd@exponential[alpha_bar]"] / 4)


def test_epsilon_out_of_range_rejected(tmp_path):
    with pytest.raises(ConfigError, match=r"epsilon = 0.4: must lie in \(0.5, 1\]"):
        parse_config(preset="pl-decay", overrides={"epsilon": "0.4", "output": str(tmp_path / "out")})
    assert not (tmp_path / "out").exists()


def test_cli_rejection_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--preset", "pl-decay", "--epsilon", "0.4", "--output", str(out)])
    assert code == EXIT_CONFIG
    assert "epsilon" in capsys.readouterr().err
    assert not out.exists()


def test_unknown_key_lists_accepted(tmp_path):
    with pytest.raises(ConfigError, match="accepted keys"):
        parse_config(overrides={"learning_rate": 1})
    f = tmp_path / "c.ini"
    f.write_text("[run]\niterations = 5\n")
    with pytest.raises(ConfigError, match="iters"):
        parse_config(f)


def test_bad_values():
    with pytest.raises(ConfigError, match="hetero_scale"):
        parse_config(overrides={"hetero_scale": "abc"})
    with pytest.raises(ConfigError, match="families"):
        parse_config(overrides={"families": "torus"})
    with pytest.raises(ConfigError, match="alpha"):
        parse_config(overrides={"alpha": "big"})
    with pytest.raises(ConfigError, match="sampling"):
        parse_config(overrides={"oracle": "sampling"})
    with pytest.raises(ConfigError, match="dataset"):
        parse_config(overrides={"problem": "logistic", "dataset": "/nonexistent.csv"})


def test_file_and_flag_precedence(tmp_path):
    f = tmp_path / "c.ini"
    f.write_text("[run]\niters = 50\ntrials = 4\n[schedule]\nalpha = 0.01\n")
    cfg = parse_config(f, ["--trials", "7", "--schedule.alpha=0.02"])
    assert (cfg.run.iters, cfg.run.trials, cfg.schedule.alpha) == (50, 7, ("0.02",))


def test_strict_rejects_out_of_range_schedule():
    cfg = parse_config(preset="pl-decay", overrides={"strict": "true"})
    with pytest.raises(ConfigError, match="pl-decay|gt_dsgd"):
        resolve(cfg)


# -- datasets ---------------------------------------------------------------


def test_load_dataset_example(tmp_path, capsys):
    f = tmp_path / "d.csv"
    f.write_text("1,0.5,0.2\n-1,0.1,0.9\n1,0.3,0.3\n-1,0.8,0.0\n")
    part = load_dataset(f, "iid", 2)
    assert [len(y) for y in part.labels] == [2, 2]
    assert "node 1: 2 samples" in capsys.readouterr().out


def test_load_dataset_maps_01_labels(tmp_path, capsys):
    f = tmp_path / "d.csv"
    f.write_text("1,0.5\n0,0.1\n1,0.3\n0,0.8\n")
    part = load_dataset(f, "iid", 2)
    assert set(np.concatenate(part.labels)) == {-1.0, 1.0}
    assert "mapped" in capsys.readouterr().out


def test_load_dataset_reports_line(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("1,0.5,0.2\n-1,0.1,0.9\n1,0.3\n")
    with pytest.raises(ObjectiveError, match="line 3"):
        load_dataset(f, "iid", 1)


def test_label_sorted_partition(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("".join(f"{1 if i % 2 else -1},{i}\n" for i in range(8)))
    part = load_dataset(f, "label_sorted", 2)
    assert {float(v) for v in part.labels[0]} == {1.0}


# -- runs -------------------------------------------------------------------


def test_run_writes_outputs(tmp_path):
    res = run_experiment(small("pl-sweep"), tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    metric_rows = [l for l in lines[1:] if not l.startswith("kind=")]
    assert len(metric_rows) == 6 * 3 * 30
    assert all(len(r.split(",")) == len(CSV_COLUMNS) for r in metric_rows)
    bounds = [l for l in lines if l.startswith("kind=bound")]
    assert bounds and all("arm=" in b for b in bounds)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["seeds"]["master"] == DEFAULT_SEED
    assert man["lambda"]["exponential"] == pytest.approx(0.6)
    assert man["exit_code"] == res.exit_code
    assert (tmp_path / "bounds.txt").read_text().count("claimed = ") == len(res.checks)


def test_replay_is_bit_identical(tmp_path):
    run_experiment(small("pl-sweep"), tmp_path / "a")
    code = main(["run", "--manifest", str(tmp_path / "a" / "manifest.json"), "--output", str(tmp_path / "b")])
    assert code in (EXIT_OK, EXIT_BOUND)
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_thread_count_does_not_change_results(tmp_path, monkeypatch):
    cfg = parse_config(preset="pl-constant", overrides={"iters": 200, "trials": 5, "stride": 10})
    a = run_experiment(cfg, write=False)
    monkeypatch.setenv("GTSIM_THREADS", "3")
    b = run_experiment(cfg, write=False)
    assert b.manifest["threads"] == 3
    for label in a.streams:
        for name in ("loss", "consensus_err", "tracking_err"):
            np.testing.assert_array_equal(getattr(a.streams[label], name), getattr(b.streams[label], name))


def test_seed_changes_results():
    a = run_experiment(small("pl-constant"), write=False)
    b = run_experiment(parse_config(preset="pl-constant", overrides={**SMALL, "seed": 7}), write=False)
    label = next(iter(a.streams))
    assert not np.array_equal(a.streams[label].loss, b.streams[label].loss)


def test_divergence_exit_code(tmp_path):
    cfg = parse_config(overrides={"alpha": "5.0", "iters": 2000, "trials": 2, "bounds": "false"})
    res = run_experiment(cfg, tmp_path)
    assert res.exit_code == EXIT_DIVERGENCE
    arm = res.manifest["arms"][0]
    assert arm["diverged"] and arm["divergence"]
    assert arm["iters_completed"] < 2000
    cfg.run.allow_divergence = True
    assert run_experiment(cfg, write=False).exit_code == EXIT_OK


def test_bound_failure_exit_code():
    # too few iterations to reach steady state at a small step
    cfg = parse_config(preset="pl-constant", overrides={"alpha": "0.25*alpha_bar", "iters": 2000,
                                                        "trials": 3, "stride": 20})
    res = run_experiment(cfg, write=False)
    failed = [c for c in res.checks if c.claimed and not c.passed]
    assert failed and res.exit_code == EXIT_BOUND


def test_unclaimed_bounds_do_not_fail():
    cfg = parse_config(overrides={"alpha": "0.5*ncvx", **SMALL})
    res = run_experiment(cfg, write=False)
    unclaimed = [c for c in res.checks if not c.claimed]
    assert unclaimed and all(c.passed for c in unclaimed)
    assert all("claimed=false" in c.row() for c in unclaimed)


def test_logistic_run_leaves_gaps_empty(tmp_path):
    cfg = parse_config(preset="ncvx-logistic", overrides={"iters": 40, "trials": 2, "stride": 20,
                                                          "samples_per_node": 20})
    res = run_experiment(cfg, tmp_path)
    row = (tmp_path / "metrics.csv").read_text().splitlines()[1].split(",")
    assert row[5] == "" and row[6] == ""
    assert res.manifest["iters_per_epoch"] == pytest.approx(20.0)
    assert res.manifest["oracle"]["nu_estimated"]


def test_cli_presets_and_config(capsys):
    assert main(["presets"]) == 0
    assert "pl-harmonic" in capsys.readouterr().out
    assert main(["config", "--preset", "hetero"]) == 0
    assert json.loads(capsys.readouterr().out)["suite"]["hetero_scale"] == "1.0"
