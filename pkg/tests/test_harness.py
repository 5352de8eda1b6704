import json
import math

import pandas as pd
import pytest

import harness
from core import ConfigError, InferenceError
from harness import (
    DENSITY_PRESETS,
    FIGURE_COLUMNS,
    RESULT_COLUMNS,
    config_from_dict,
    emit_figure_data,
    estimate_peak_memory,
    expand_cells,
    format_duration,
    load_config,
    preset_config,
    run_cell,
    run_grid,
)

TINY = {
    "name": "tiny",
    "n_nodes_values": [20],
    "ce_ratios": [2, 4],
    "s_c_values": [1],
    "replicate_seeds": [0],
    "phase1": {"max_iters": 30},
    "phase2": {"max_iters": 20, "restarts": [0, 1]},
}


def test_format_duration():
    assert format_duration(5.94) == "5.9s"
    assert format_duration(0.04) == "0.0s"
    assert format_duration(65) == "1m 5s"
    assert format_duration(3725) == "1h 2m 5s"


def test_peak_memory_estimate():
    assert estimate_peak_memory(100, 10, 50, 20, 2) == 8 * 1000
    assert estimate_peak_memory(10, 10, 50, 200, 3) == 8 * 6000
    assert estimate_peak_memory(10, 10, 500, 200, 1) == 8 * 500


def test_empty_config_takes_schema_defaults():
    cfg = config_from_dict({})
    assert cfg.phase1.learning_rate == 0.5
    assert cfg.phase1.max_iters == 500
    assert cfg.phase1.rel_tol == 1e-4
    assert cfg.phase2.learning_rate == 0.1
    assert cfg.phase2.max_iters == 3000
    assert cfg.phase2.restarts == (0, 1, 2)
    assert cfg.densities == (DENSITY_PRESETS[1],)
    assert cfg.cascades.horizon == 10.0
    assert cfg.cascades.seed_prob is None
    assert cfg.budget_factor == 1.1
    assert cfg.filter_scope == "membership"
    assert cfg.n_cells == 5 * 3


@pytest.mark.parametrize("data", [
    {"ce_ratios": []},
    {"gammas": [2.0, 2.0]},
    {"colour": "blue"},
    {"phase2": {"momentum": 0.9}},
    {"select_by": "auc"},
    {"filter_scope": "phase1"},
    {"overlaps": [1.5]},
    {"k_values": [0]},
    {"densities": [{"mu_in": 0.5}]},
    {"ce_ratios": "1,2"},
    {"phase1": {"max_iters": 2.5}},
    {"n_nodes_values": [250.7]},
    {"phase2": {"restarts": "012"}},
    {"phase2": {"restarts": [0.5]}},
    {"s_c_values": [-1]},
    {"budget_factor": "1.1"},
])
def test_invalid_configs_are_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_load_config_reports_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    path = tmp_path / "broken.json"
    path.write_text("{\n  \"name\": \n")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(path)
    path.write_text(json.dumps(TINY))
    assert load_config(path).n_cells == 2


def test_presets_cover_every_family():
    assert preset_config("filtering").n_cells == 4 * 5 * 3
    assert preset_config("cascade-size").gammas == (1.0, 2.0, 4.0, 8.0)
    assert preset_config("overlap").overlaps == (0.0, 0.5, 1.0)
    assert preset_config("mixing").eps_max_values == (0.0, 0.2, 0.4)
    assert preset_config("layers").k_values == (2, 3, 4, 5)
    assert preset_config("density").densities == DENSITY_PRESETS
    assert preset_config("size", "full").n_nodes_values == (1000, 2000, 4000)
    assert preset_config("size", "full").replicate_seeds == (0,)
    with pytest.raises(ConfigError):
        preset_config("weather")
    with pytest.raises(ConfigError):
        preset_config("overlap", "cluster")


def test_cell_hashes_are_stable_and_distinct():
    first = [c.hash for c in expand_cells(preset_config("filtering"))]
    again = [c.hash for c in expand_cells(preset_config("filtering"))]
    assert first == again
    assert len(set(first)) == len(first)


def test_cells_carry_their_axis_values():
    cell = expand_cells(config_from_dict(dict(TINY, gammas=[4.0], eps_max_values=[0.2])))[1]
    assert cell.ce_ratio == 4
    net_cfg = cell.network_config()
    assert (net_cfg.n_nodes, net_cfg.seed) == (20, 0)
    casc_cfg = cell.cascade_config(33)
    assert (casc_cfg.recovery_rate, casc_cfg.eps_max, casc_cfg.n_cascades) == (4.0, 0.2, 33)
    assert set(cell.echo()) <= set(RESULT_COLUMNS)


def test_run_cell_fills_every_metric():
    row = run_cell(expand_cells(config_from_dict(TINY))[1])
    assert set(row.values) == set(RESULT_COLUMNS)
    if row.ok:
        assert 0.0 <= row.values["auc"] <= 1.0
        assert row.values["n_cascades_simulated"] == max(math.floor(4 * row.values["n_aggregated_edges"] + 0.5), 1)
        assert len(row.values["pr_auc_per_layer"].split(";")) == 2
        assert set(row.timings) == {"generate", "phase1", "phase2", "evaluate", "total"}
    else:
        assert row.values["message"]


def test_grid_is_byte_identical_and_resumable(tmp_path):
    cfg = config_from_dict(TINY)
    first = run_grid(cfg, tmp_path / "a", verbose=False)
    second = run_grid(cfg, tmp_path / "b", verbose=False)
    assert first.results_path.read_bytes() == second.results_path.read_bytes()
    assert len(pd.read_csv(first.results_path)) == cfg.n_cells

    resumed = run_grid(cfg, tmp_path / "a", resume=True, verbose=False)
    assert resumed.n_resumed == cfg.n_cells
    assert resumed.results_path.read_bytes() == second.results_path.read_bytes()
    assert list(pd.read_csv(resumed.timings_path).columns) == harness.TIMING_COLUMNS


def test_resume_only_runs_missing_cells(tmp_path):
    cfg = config_from_dict(TINY)
    run_grid(cfg, tmp_path, verbose=False)
    missing = expand_cells(cfg)[0].hash
    (tmp_path / "cells" / f"{missing}.json").unlink()
    outcome = run_grid(cfg, tmp_path, resume=True, verbose=False)
    assert outcome.n_resumed == cfg.n_cells - 1
    assert (tmp_path / "cells" / f"{missing}.json").exists()


def test_failing_cells_are_recorded_and_the_grid_continues(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise InferenceError("every phase-2 restart diverged")

    monkeypatch.setattr(harness, "run_pipeline", boom)
    outcome = run_grid(config_from_dict(TINY), tmp_path, verbose=False)
    assert outcome.n_failed == outcome.n_cells == 2
    results = pd.read_csv(outcome.results_path)
    assert set(results["status"]) == {"failed"}
    assert results["message"].str.startswith("InferenceError").all()


def _results_csv(path, rows):
    frame = pd.DataFrame([{col: None for col in RESULT_COLUMNS} | row for row in rows], columns=RESULT_COLUMNS)
    frame.to_csv(path, index=False)


def test_overlap_figure_groups_replicates(tmp_path):
    rows = []
    for overlap in (0.0, 0.5, 1.0):
        for rep, auc in enumerate((0.7, 0.9)):
            rows.append({"status": "ok", "overlap": overlap, "ce_ratio": 4, "replicate": rep, "auc": auc,
                         "pi_accuracy": 1.0 - overlap / 2, "alpha_spearman": 0.5, "pr_auc_mean": 0.4,
                         "edge_recovery_rate": 0.6})
    rows.append({"status": "failed", "overlap": 0.5, "ce_ratio": 4, "replicate": 2})
    _results_csv(tmp_path / "results.csv", rows)

    table = emit_figure_data(tmp_path / "results.csv", "overlap", tmp_path / "figure.csv")
    assert list(table.columns) == FIGURE_COLUMNS
    assert sorted(set(table["series"])) == [0.0, 0.5, 1.0]
    auc = table[table["panel"] == "auc"]
    assert auc["y_mean"].tolist() == pytest.approx([0.8, 0.8, 0.8])
    assert auc["n"].tolist() == [2, 2, 2]
    assert list(table["panel"].unique()) == ["auc", "pi_accuracy", "alpha_spearman", "pr_auc_mean",
                                             "edge_recovery_rate"]
    assert (tmp_path / "figure.csv").exists()


def test_empty_results_give_a_header_only_table(tmp_path):
    (tmp_path / "empty.csv").write_text("")
    table = emit_figure_data(tmp_path / "empty.csv", "cascade-size", tmp_path / "out.csv")
    assert table.empty
    assert (tmp_path / "out.csv").read_text().strip() == ",".join(FIGURE_COLUMNS)
    with pytest.raises(ConfigError):
        emit_figure_data(tmp_path / "empty.csv", "weather")


def test_config_errors_name_the_offending_field():
    with pytest.raises(ConfigError, match="phase1/max_iters"):
        config_from_dict({"phase1": {"max_iters": 2.5}})


def test_zero_size_threshold_keeps_every_informative_cascade():
    for scope in harness.FILTER_SCOPES:
        cfg = config_from_dict(dict(TINY, s_c_values=[0], filter_scope=scope, ce_ratios=[4]))
        row = run_cell(expand_cells(cfg)[0])
        assert row.values["n_cascades_inferred"] == row.values["n_cascades_informative"]
        if row.ok:
            assert row.values["n_cascades_pooled"] == 0


def test_membership_scope_pools_small_cascades_into_phase2():
    cfg = config_from_dict(dict(TINY, s_c_values=[2], ce_ratios=[4]))
    row = run_cell(expand_cells(cfg)[0])
    assert row.ok, row.values["message"]
    assert row.values["n_cascades_inferred"] == row.values["n_cascades_informative"]
    assert row.values["n_cascades_phase2"] + row.values["n_cascades_pooled"] == row.values["n_cascades_inferred"]

    dropped = run_cell(expand_cells(config_from_dict(dict(TINY, s_c_values=[2], ce_ratios=[4],
                                                           filter_scope="all")))[0])
    assert dropped.values["n_cascades_pooled"] == 0
    assert dropped.values["n_cascades_inferred"] == row.values["n_cascades_phase2"]
