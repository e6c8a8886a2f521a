import csv
import json

import numpy as np
import pytest

from lenskisim import cli
from lenskisim.cli import compare, derive_seed, main, metric_passes, replicate_rng
from lenskisim.config import ConfigError, build_run_config, parse_config_text, tolerance_for


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def _summary(path):
    return json.loads((path / "summary.json").read_text())


def test_curves_rows(tmp_path):
    out = tmp_path / "curves"
    assert main(["curves", "--out", str(out), "--set", "t_max=10", "--set", "t_step=0.1"]) == 0
    rows = _read_csv(out / "results.csv")
    assert rows[0] == ["t", "value", "ode_value"]
    assert len(rows) == 102
    assert float(rows[1][1]) == 1.0
    assert _summary(out)["all_passed"]
    raw = (out / "results.csv").read_bytes()
    assert raw.count(b"\r\n") == 102


def test_evolve_without_mutation_has_flat_fitness(tmp_path):
    out = tmp_path / "evolve"
    code = main(["evolve", "--out", str(out), "--replicates", "2", "--set", "N=200",
                 "--set", "mu=0", "--set", "horizon=500", "--set", "record_every=50"])
    assert code == 0
    rows = _read_csv(out / "results.csv")
    col = rows[0].index("F")
    assert len(rows) == 1 + 2 * 11
    assert all(float(r[col]) == 1.0 for r in rows[1:])
    events = json.loads((out / "events.json").read_text())
    assert [e["mutations"] for e in events] == [[], []]


def test_fixation_summary_fields(tmp_path):
    out = tmp_path / "fix"
    assert main(["fixation", "--out", str(out), "--replicates", "2000", "--seed", "3",
                 "--set", "N=2000", "--set", "rho=0.1"]) == 0
    s = _summary(out)
    assert {"p_hat", "ci", "theoretical"} <= set(s["extra"])
    assert s["extra"]["theoretical"] == pytest.approx(0.138629, abs=1e-6)
    names = [m["name"] for m in s["metrics"]]
    assert names[:2] == ["p_hat", "tau_tail"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["master_seed"] == 3 and manifest["config"]["N"] == 2000
    assert manifest["version"]


@pytest.mark.parametrize("experiment,extra", [
    ("fixation", ["--replicates", "2500", "--set", "N=300", "--set", "rho=0.1",
                  "--set", "block_size=500"]),
    ("neutral-day", ["--replicates", "3000", "--set", "N=100", "--set", "rho=0.05"]),
    ("evolve", ["--replicates", "3", "--set", "N=200", "--set", "rho=0.1", "--set", "mu=0.01",
                "--set", "horizon=3000", "--set", "record_every=10"]),
])
def test_csv_identical_across_thread_counts(tmp_path, experiment, extra):
    outs = []
    for threads in ("1", "4"):
        out = tmp_path / f"{experiment}-{threads}"
        assert main([experiment, "--out", str(out), "--seed", "11", "--threads", threads] + extra) == 0
        outs.append((out / "results.csv").read_bytes())
    assert outs[0] == outs[1]


def test_config_file_precedence(tmp_path, monkeypatch):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("# curves run\nexperiment = curves\ngamma = 3\nt_max = 2\nt_step = 0.5\n"
                        "threads = 2\nseed = 5\n")
    monkeypatch.setenv("LENSKISIM_THREADS", "3")
    out = tmp_path / "c"
    assert main(["curves", "--config", str(cfg_file), "--out", str(out), "--seed", "9",
                 "--set", "t_max=1"]) == 0
    conf = json.loads((out / "manifest.json").read_text())["config"]
    assert conf["gamma"] == 3.0 and conf["t_max"] == 1.0 and conf["threads"] == 3
    assert conf["seed"] == 9
    monkeypatch.delenv("LENSKISIM_THREADS")
    assert main(["curves", "--config", str(cfg_file), "--out", str(out), "--threads", "1"]) == 0
    conf = json.loads((out / "manifest.json").read_text())["config"]
    assert conf["threads"] == 1 and conf["seed"] == 5


def test_config_parser_errors():
    assert parse_config_text("N = 10\n\n# c\nrho = 0.1") == {"N": 10, "rho": 0.1}
    for bad in ("N = 1.5", "nonsense = 3", "just text", "enforce_assumption_a = maybe"):
        with pytest.raises(ConfigError):
            parse_config_text(bad)
    with pytest.raises(ConfigError):
        build_run_config("fixation", {"N": 100})
    with pytest.raises(ConfigError):
        build_run_config("bogus", {"out": "x"})
    with pytest.raises(ConfigError):
        build_run_config("fixation", {"out": "x", "b": 0.3, "a": 0.5})
    with pytest.raises(ConfigError):
        build_run_config("fixation", {"out": "x", "b": 0.3, "a": 1.0, "rho": 0.1})
    cfg = build_run_config("fixation", {"out": "x", "b": 0.3, "a": 1.0, "N": 1000})
    assert cfg.params.rho == pytest.approx(1000 ** -0.3)


def test_exit_codes(tmp_path, monkeypatch, capsys):
    assert main(["fixation", "--out", str(tmp_path), "--set", "gamma=0.5"]) == 2
    assert main(["fixation", "--out", str(tmp_path), "--set", "wat=1"]) == 2
    assert main(["fixation", "--out", str(tmp_path), "--replicates", "0"]) == 2
    assert main(["evolve", "--out", str(tmp_path), "--set", "N=50"]) == 2

    def boom(cfg):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(cli.RUNNERS, "curves", boom)
    assert main(["curves", "--out", str(tmp_path / "x")]) == 1
    assert "disk on fire" in capsys.readouterr().err


def test_compare_single_run_echoes_summary(tmp_path):
    out = tmp_path / "c"
    main(["curves", "--out", str(out)])
    report = compare([str(out)])
    s = _summary(out)
    assert report["experiment"] == "curves"
    assert [r["estimate"] for r in report["rows"]] == [m["estimate"] for m in s["metrics"]]
    assert report["all_passed"] == s["all_passed"]


def test_compare_two_seeds(tmp_path):
    dirs = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        main(["neutral-day", "--out", str(out), "--seed", seed, "--replicates", "2000",
              "--set", "N=100", "--set", "rho=0.05"])
        dirs.append(str(out))
    rows = compare(dirs)["rows"]
    first = [r for r in rows if r["run"] == dirs[0]]
    second = [r for r in rows if r["run"] == dirs[1]]
    assert [r["target"] for r in first] == [r["target"] for r in second]
    assert any(a["estimate"] != b["estimate"] for a, b in zip(first, second))


def test_compare_rejects_mixed_experiments(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["curves", "--out", str(a)])
    main(["gw", "--out", str(b), "--replicates", "200", "--set", "N=10000", "--set", "rho=0.05"])
    with pytest.raises(ConfigError):
        compare([str(a), str(b)])
    assert main(["compare", str(a), str(b)]) == 2
    assert main(["compare", str(tmp_path / "missing")]) == 2


def test_compare_fixation_grid_is_monotone(tmp_path):
    dirs = []
    for i, rho in enumerate(("0.02", "0.1", "0.3")):
        out = tmp_path / rho
        main(["fixation", "--out", str(out), "--seed", str(i), "--replicates", "2000",
              "--set", "N=200", "--set", f"rho={rho}"])
        dirs.append(str(out))
    report = compare(dirs)
    assert [x[0] for x in report["p_hat_by_rho"]] == [0.02, 0.1, 0.3]
    assert report["monotone_in_rho"]
    assert main(["compare", *dirs, "--out", str(tmp_path / "cmp")]) == 0
    assert (tmp_path / "cmp" / "comparison.json").exists()


def test_seed_derivation():
    seeds = {derive_seed(7, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(7, 3) == derive_seed(7, 3)
    assert derive_seed(7, 3) != derive_seed(8, 3) != derive_seed(7, 3, "block")
    assert all(0 <= s < 2 ** 64 for s in seeds)
    a = replicate_rng(1, 0).random(5)
    np.testing.assert_array_equal(a, replicate_rng(1, 0).random(5))


def test_metric_rules():
    assert metric_passes(1.05, 1.0, "relative", 0.1)
    assert not metric_passes(1.2, 1.0, "relative", 0.1)
    assert metric_passes(0.5, 1.0, "upper", 0.0) and not metric_passes(0.5, 1.0, "lower", 0.0)
    assert metric_passes(1.0001, 1.0, "absolute", 1e-3)
    assert not metric_passes(None, 1.0, "relative", 0.1)
    assert tolerance_for("fixation", "strict") < tolerance_for("fixation", "loose")
