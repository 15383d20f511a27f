import json
import math
from pathlib import Path

import pytest

from cloudsplit.bench import (
    IMPROVEMENT_COLUMNS,
    NO_FEATURES,
    RECORD_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentMatrix,
    SweepPoint,
    improvement_report,
    read_csv,
    run_matrix,
    spearman,
    summarize,
    write_csv,
)
from cloudsplit.cli import load_matrix, main
from cloudsplit.configio import ConfigError, load_scenario, read_yaml, topology_from_dict, topology_to_dict
from cloudsplit.core_model import BASELINE, PIED_PIPER, three_leg_topology
from cloudsplit.pipe_timing import Strategy, timing

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
LOSSLESS = three_leg_topology(external_bw=1e10, cloud_bw=1e10, queue_capacity=10_000_000)


def tiny(**kw):
    kw.setdefault("repetitions", 2)
    return ExperimentMatrix({"chain": LOSSLESS}, feature_sets=(BASELINE, PIED_PIPER), sizes=(10_000,), **kw)


def test_cells_use_placeholder_features_for_unsplit():
    cells = tiny().cells()
    assert ("chain", "e2e", NO_FEATURES, 10_000) in cells
    assert ("chain", "split", "Pied Piper", 10_000) in cells
    assert len(cells) == 4


def test_matrix_validation():
    with pytest.raises(ValueError):
        tiny(repetitions=0)
    with pytest.raises(ValueError):
        tiny(mode="carrier_pigeon")
    with pytest.raises(ValueError):
        tiny(strategies=("ideal",))


def test_run_matrix_is_deterministic_and_replayable():
    m = tiny()
    a, b = run_matrix(m), run_matrix(m)
    assert a == b
    assert len(a) == 8 and all(not r["error"] for r in a)
    text = write_csv(a, RECORD_COLUMNS)
    again = summarize(read_csv(text))
    assert write_csv(again, SUMMARY_COLUMNS) == write_csv(summarize(a), SUMMARY_COLUMNS)
    pp = next(r for r in summarize(a) if r["features"] == "Pied Piper")
    assert pp["completion_median_ms"] == pytest.approx(timing(m.scenario(("chain", "split", "Pied Piper", 10_000))).completion, abs=2)


def test_bad_cell_is_recorded_not_raised():
    m = ExperimentMatrix({"chain": LOSSLESS}, strategies=("split",), feature_sets=(BASELINE,), sizes=(0,),
                         repetitions=1)
    (row,) = run_matrix(m)
    assert row["error"]
    assert summarize([row])[0]["failures"] == 1


def _summary_row(strategy, features, comp):
    return dict(topology="t", strategy=strategy, features=features, size=10, completion_median_ms=comp)


def test_improvement_report():
    rows = [_summary_row("e2e", "-", 600.0), _summary_row("split", "Pied Piper", 300.0),
            _summary_row("split", "OCD Baseline", 700.0)]
    rep = {r["features"]: r for r in improvement_report(rows)}
    assert rep["-"]["ratio"] == 1.0 and not rep["-"]["regression"]
    assert rep["Pied Piper"]["ratio"] == 2.0
    assert rep["OCD Baseline"]["regression"]
    assert set(rep["-"]) == set(IMPROVEMENT_COLUMNS)


def test_improvement_report_missing_baseline_warns():
    with pytest.warns(UserWarning):
        assert improvement_report([_summary_row("split", "Pied Piper", 300.0)]) == []


def test_spearman_degenerate_and_perfect():
    flat = [SweepPoint(i, 1.0, g, {}) for i, g in enumerate((1.0, 1.2, 1.4))]
    assert math.isnan(spearman(flat))
    mono = [SweepPoint(i, e, e * 2, {}) for i, e in enumerate((1.0, 1.5, 3.0, 2.0))]
    assert spearman(mono) == pytest.approx(1.0)


# --- config files and CLI -------------------------------------------------------------


def test_topology_dict_round_trip():
    t = three_leg_topology()
    again = topology_from_dict(topology_to_dict(t))
    assert again.rtt("client", "server", via=("rc", "rs")) == pytest.approx(273.7)
    with pytest.raises(ConfigError):
        topology_from_dict({"preset": "three_leg", "colour": "blue"})


def test_shipped_configs_load():
    s, seed = load_scenario(CONFIGS / "scenario.yaml")
    assert s.strategy is Strategy.SPLIT and isinstance(seed, int)
    m = load_matrix(CONFIGS / "matrix.yaml")
    assert m.repetitions == 3 and m.topologies["chain"].links[0].bandwidth == 1e10
    assert isinstance(read_yaml(CONFIGS / "matrix.yaml")["topologies"][0]["cloud_bw"], float)


def test_cli_model(capsys):
    assert main(["model", str(CONFIGS / "scenario.yaml")]) == 0
    out = capsys.readouterr().out
    assert "ttfb" in out.lower()


def test_cli_plan(capsys):
    assert main(["plan", str(CONFIGS / "rtt.csv"), "--client", "client", "--server", "server"]) == 0
    assert capsys.readouterr().out.strip()


def test_cli_lab_sim_with_trace(tmp_path, capsys):
    trace = tmp_path / "trace.csv"
    main(["lab", "sim", str(CONFIGS / "scenario.yaml"), "--trace", str(trace)])
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert json.loads(line)["bytes"] > 0
    assert trace.read_text().startswith("time,event,flow,cwnd,bytes")


def test_cli_lab_run_and_report(tmp_path, capsys):
    matrix = tmp_path / "m.yaml"
    matrix.write_text("topologies:\n  - {name: chain, preset: three_leg}\nstrategies: [e2e, split]\n"
                      "feature_sets: [Pied Piper]\nsizes: [5000]\nrepetitions: 1\n")
    records = tmp_path / "r.csv"
    assert main(["lab", "run", str(matrix), "-o", str(records)]) == 0
    first = capsys.readouterr().out
    assert main(["lab", "report", str(records)]) == 0
    assert capsys.readouterr().out == first
    assert len(read_csv(records.read_text())) == 2
