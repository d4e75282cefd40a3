import csv
import json

import numpy as np
import pytest

from fedminimax import __version__
from fedminimax.core import ConfigError
from fedminimax.harness import (CSV_COLUMNS, SUITES, ExperimentConfig, RunManifest,
                                acceptance_suite, aggregate, config_hash, fit_axis, list_suites,
                                run_sweep)


def small_config(**kw):
    doc = dict(
        name="t", problem={"generator": {"class_tag": "NC_SC", "d1": 3, "d2": 3}, "seed": 1},
        algorithm="local_sgda", n=2, sigma=0.1, T=64, tau=4, seeds=[0],
        schedule={"source": "explicit", "eta_x": 0.01, "eta_y": 0.05},
    )
    doc.update(kw)
    return ExperimentConfig.from_dict(doc)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def synthetic_manifest(tmp_path, xs, ys, axis="T"):
    cells = []
    for i, (x, y) in enumerate(zip(xs, ys)):
        cells.append({"index": i, "params": {"T": x, "n": 4, "tau": 1, "sigma": 0.0,
                                             "algorithm": "local_sgda"},
                      "status": "run", "seeds": [0], "tau": 1, "T": x, "path": None,
                      "stats": {"0": {"grad_phi_sq": {"mean": y, "min_over_t": y, "final": y}}}})
    m = RunManifest("x", __version__, str(tmp_path), cells, burn_in=0.0)
    m.save()
    return m


def test_hash_stable_under_key_order():
    a = {"b": 1, "a": {"y": 2, "x": [1, 2]}}
    b = {"a": {"x": [1, 2], "y": 2}, "b": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({"b": 2, "a": {"y": 2, "x": [1, 2]}})


def test_config_validation():
    with pytest.raises(ConfigError):
        small_config(seeds=[])
    with pytest.raises(ConfigError):
        small_config(sweep={"eta": [1]})
    with pytest.raises(ConfigError):
        small_config(sweep={"T": []})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"problem": {"seed": 0}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"problem": {"path": "p.json"}, "bogus": 1})


def test_config_json_round_trip(tmp_path):
    cfg = small_config(sweep={"tau": [1, 2]})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert ExperimentConfig.from_json(path).config_hash() == cfg.config_hash()
    assert len(cfg.cells()) == 2


def test_single_cell_row_count(tmp_path):
    m = run_sweep(small_config(T=10, tau=1), output_dir=tmp_path)
    rows = read_rows(m.csv_paths[0])
    assert tuple(rows[0]) == CSV_COLUMNS
    kinds = [r[0] for r in rows[1:]]
    assert kinds.count("metric") == 10 and kinds.count("summary") == 1


def test_missing_metrics_are_empty_fields(tmp_path):
    m = run_sweep(small_config(T=8, tau=2), output_dir=tmp_path)
    rows = read_rows(m.csv_paths[0])
    col = CSV_COLUMNS.index("moreau_grad_sq")
    assert all(r[col] == "" for r in rows[1:])
    assert all(r[CSV_COLUMNS.index("grad_phi_sq")] != "" for r in rows[1:])


def test_csv_uses_lf_line_endings(tmp_path):
    m = run_sweep(small_config(T=8, tau=2), output_dir=tmp_path)
    raw = m.csv_paths[0].read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")


def test_comm_rounds_column(tmp_path):
    m = run_sweep(small_config(sweep={"tau": [1, 2, 4]}), output_dir=tmp_path)
    got = []
    for path in m.csv_paths:
        summary = [r for r in read_rows(path) if r[0] == "summary"]
        got.append(int(summary[0][CSV_COLUMNS.index("comm_rounds_so_far")]))
    assert got == [64, 32, 16]


def test_rerun_and_threads_are_byte_identical(tmp_path):
    cfg = small_config(seeds=[0, 1, 2], sweep={"tau": [2, 4]})
    a = run_sweep(cfg, output_dir=tmp_path / "a")
    b = run_sweep(cfg, output_dir=tmp_path / "b")
    c = run_sweep(cfg, threads=2, output_dir=tmp_path / "c")
    for pa, pb, pc in zip(a.csv_paths, b.csv_paths, c.csv_paths):
        assert pa.read_bytes() == pb.read_bytes() == pc.read_bytes()


def test_invalid_cells_are_skipped(tmp_path):
    m = run_sweep(small_config(sweep={"tau": [3, 4]}), output_dir=tmp_path)
    assert [c["status"] for c in m.cells] == ["skipped", "run"]
    assert "divisible" in m.skipped[0]["reason"]


def test_unknown_algorithm_is_skipped(tmp_path):
    m = run_sweep(small_config(sweep={"algorithm": ["local_sgd", "local_sgda"]}),
                  output_dir=tmp_path)
    assert m.cells[0]["status"] == "skipped"


def test_theorem_schedule_cell(tmp_path):
    cfg = small_config(schedule={"source": "theorem"}, tau="theorem", T=512, n=2)
    m = run_sweep(cfg, output_dir=tmp_path)
    assert m.cells[0]["status"] == "run"
    assert m.cells[0]["step"]["eta_y"] == pytest.approx(np.sqrt(2 / (512 * 1.0)), rel=1e-6)


def test_plus_variant_uses_tau_squared(tmp_path):
    cfg = small_config(algorithm="local_sgda_plus", S="tau^2", tau=2, T=32)
    m = run_sweep(cfg, output_dir=tmp_path)
    assert m.cells[0]["S"] == 4


def test_manifest_round_trip(tmp_path):
    m = run_sweep(small_config(T=8, tau=2), output_dir=tmp_path, overrides={"seeds": [0]})
    again = RunManifest.load(tmp_path)
    assert again.config_hash == m.config_hash
    assert again.overrides == {"seeds": [0]}
    assert again.artifact_version == __version__


def test_aggregate_examples(tmp_path):
    m = synthetic_manifest(tmp_path, [10], [4.0])
    row = aggregate(m, "grad_phi_sq")[0]
    assert row["mean"] == 4.0 and row["stderr"] == 0.0
    m.cells[0]["seeds"] = [0, 1]
    m.cells[0]["stats"]["1"] = {"grad_phi_sq": {"mean": 3.0, "min_over_t": 3.0, "final": 3.0}}
    m.cells[0]["stats"]["0"]["grad_phi_sq"]["mean"] = 1.0
    assert aggregate(m, "grad_phi_sq")[0]["mean"] == 2.0


def test_aggregate_guards(tmp_path):
    m = synthetic_manifest(tmp_path, [10], [4.0])
    with pytest.raises(ValueError):
        aggregate(m, "bogus")
    with pytest.raises(ValueError):
        aggregate(m, "grad_phi_sq", "median")
    with pytest.raises(ValueError):
        aggregate(m, "phi_gap")


def test_time_mean_of_constant_trajectory(tmp_path):
    # zero steps keep every metric constant along the run
    cfg = small_config(schedule={"source": "explicit", "eta_x": 0.0, "eta_y": 0.0}, sigma=0.0)
    m = run_sweep(cfg, output_dir=tmp_path)
    st = m.cells[0]["stats"]["0"]["grad_phi_sq"]
    assert st["mean"] == st["min_over_t"] == st["final"]


def test_fit_axis_recovers_slope(tmp_path):
    xs = [1000, 2000, 4000, 8000]
    m = synthetic_manifest(tmp_path, xs, [1 / np.sqrt(x) for x in xs])
    assert fit_axis(m, "T", "grad_phi_sq").slope == pytest.approx(-0.5)


def test_registry_complete():
    ids = list_suites()
    assert len(ids) == 10
    assert sorted(num for num, _ in SUITES.values()) == list(range(1, 11))


def test_unknown_suite():
    with pytest.raises(KeyError):
        acceptance_suite("nope")


def test_tau1_suite_passes():
    rep = acceptance_suite("tau1-equivalence")
    assert rep.passed and rep.measured["max_abs_deviation"] == 0.0
    assert rep.line().startswith("[PASS]")


def test_suite_failure_is_a_report(monkeypatch):
    def boom(out_dir=None, threads=1):
        raise RuntimeError("broken")

    monkeypatch.setitem(SUITES, "determinism", (10, boom))
    rep = acceptance_suite("determinism")
    assert not rep.passed and "broken" in rep.details
