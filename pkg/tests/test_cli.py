import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from vscout.chart import control_chart_svg
from vscout.cli import (
    BENCHMARK_COLUMNS,
    EXIT_INPUT,
    EXIT_OK,
    main,
    read_benchmark_csv,
    read_data_csv,
    read_labels_csv,
)
from vscout.metrics import METRIC_FIELDS
from vscout.simgen import ScenarioSpec, generate, write_data_csv

SVG = "{http://www.w3.org/2000/svg}"
QUICK = {"train": {"hidden": 12, "latent": 4, "learning_rate": 1e-3, "max_epochs": 25}}


@pytest.fixture
def quick_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(QUICK))
    return str(path)


@pytest.fixture
def simulated(tmp_path):
    data, labels = tmp_path / "x.csv", tmp_path / "y.csv"
    code = main(["simulate", "--dist", "normal", "--n", "120", "--p", "12", "--delta", "3",
                 "--gamma", "0.1", "--shift", "transient", "--seed", "5",
                 "--output", str(data), "--labels", str(labels)])
    assert code == EXIT_OK
    return data, labels


def run_detect(tmp_path, data, cfg, name, extra=()):
    out = tmp_path / name
    code = main(["detect", "--input", str(data), "--config", cfg, "--seed", "3", "--output", str(out), *extra])
    return code, out


def test_simulate_outputs(tmp_path):
    data, labels = tmp_path / "x.csv", tmp_path / "y.csv"
    assert main(["simulate", "--dist", "normal", "--n", "500", "--p", "3", "--delta", "0",
                 "--output", str(data), "--labels", str(labels)]) == EXIT_OK
    assert not read_labels_csv(labels).any()
    assert main(["simulate", "--n", "500", "--p", "3", "--delta", "1", "--gamma", "0.2",
                 "--shift", "sustained", "--output", str(data), "--labels", str(labels)]) == EXIT_OK
    y = read_labels_csv(labels)
    assert y[-100:].all() and not y[:-100].any()


def test_simulate_rejects_bad_enum(tmp_path):
    code = main(["simulate", "--dist", "cauchy", "--output", str(tmp_path / "x"), "--labels", str(tmp_path / "y")])
    assert code == EXIT_INPUT


def test_csv_round_trip_precision(tmp_path):
    X = generate(ScenarioSpec("lognormal", 30, 4, seed=2)).X * 1e-3
    write_data_csv(tmp_path / "x.csv", X)
    np.testing.assert_allclose(read_data_csv(tmp_path / "x.csv"), X, rtol=1e-12, atol=0)


def test_detect_record(tmp_path, simulated, quick_config):
    data, labels = simulated
    code, out = run_detect(tmp_path, data, quick_config, "rec.json", ["--truth", str(labels)])
    assert code == EXIT_OK
    record = json.loads(out.read_text())
    assert record["schema_version"] == 1
    assert len(record["observations"]) == 120
    assert set(METRIC_FIELDS) <= set(record["metrics"])
    obs = record["observations"][0]
    assert set(obs) == {"index", "y_hat", "c", "e", "u", "q", "anomaly_score", "t2", "recon_error"}
    assert record["config"]["train"]["latent"] == 4
    assert record["seed"] == 3


def test_detect_is_deterministic(tmp_path, simulated, quick_config):
    data, _ = simulated
    _, a = run_detect(tmp_path, data, quick_config, "a.json")
    _, b = run_detect(tmp_path, data, quick_config, "b.json")
    assert a.read_bytes() == b.read_bytes()


def test_record_config_echo_reproduces_labels(tmp_path, simulated, quick_config):
    data, _ = simulated
    _, first = run_detect(tmp_path, data, quick_config, "a.json")
    record = json.loads(first.read_text())
    echo = tmp_path / "echo.json"
    echo.write_text(json.dumps(record["config"]))
    out = tmp_path / "b.json"
    assert main(["detect", "--input", str(data), "--config", str(echo), "--output", str(out)]) == EXIT_OK
    again = json.loads(out.read_text())
    assert [o["y_hat"] for o in again["observations"]] == [o["y_hat"] for o in record["observations"]]


@pytest.mark.parametrize(
    "content, fragment",
    [
        ("x1,x2\n1,2\n3,abc\n", "row 3, column 2"),
        ("x1,x2\n1,2\n3\n", "row 3"),
        ("x1,x2\n1,nan\n", "row 2, column 2"),
    ],
)
def test_detect_input_errors(tmp_path, capsys, content, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    assert main(["detect", "--input", str(path)]) == EXIT_INPUT
    assert fragment in capsys.readouterr().err


def test_detect_unknown_config_key(tmp_path, simulated):
    data, _ = simulated
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trian": {}}))
    assert main(["detect", "--input", str(data), "--config", str(cfg)]) == EXIT_INPUT


def test_detect_pipeline_error(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("x1\n" + "\n".join(str(i) for i in range(10)) + "\n")
    assert main(["detect", "--input", str(path)]) == 3


def test_chart_from_record(tmp_path, simulated, quick_config):
    data, _ = simulated
    _, rec = run_detect(tmp_path, data, quick_config, "rec.json")
    svg = tmp_path / "chart.svg"
    assert main(["chart", "--record", str(rec), "--output", str(svg)]) == EXIT_OK
    root = ET.parse(svg).getroot()
    record = json.loads(rec.read_text())
    flagged = sum(o["y_hat"] for o in record["observations"])
    assert len([c for c in root.iter(f"{SVG}circle") if c.get("class") == "flagged"]) == flagged
    assert len([l for l in root.iter(f"{SVG}line") if l.get("class") == "threshold"]) == 1


def test_chart_markers():
    root = ET.fromstring(control_chart_svg([0.1, 0.5, 1.0], [False] * 3, None).split("\n", 1)[1])
    assert not [c for c in root.iter(f"{SVG}circle") if c.get("class") == "flagged"]
    assert not [l for l in root.iter(f"{SVG}line") if l.get("class") == "changepoint"]
    root = ET.fromstring(control_chart_svg([0.1, 3.0, 3.5], [False, True, True], 1).split("\n", 1)[1])
    assert len([l for l in root.iter(f"{SVG}line") if l.get("class") == "changepoint"]) == 1
    assert len([c for c in root.iter(f"{SVG}circle") if c.get("class") == "flagged"]) == 2


def test_chart_malformed_record(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema_version": 1, "observations": [{"y_hat": 1}]}))
    assert main(["chart", "--record", str(bad), "--output", str(tmp_path / "c.svg")]) == EXIT_INPUT
    bad.write_text("not json")
    assert main(["chart", "--record", str(bad), "--output", str(tmp_path / "c.svg")]) == EXIT_INPUT


def write_scenarios(tmp_path, extra=None):
    doc = {
        "replications": 3,
        "config": QUICK,
        "scenarios": [
            {"id": "ic", "dist": "normal", "n": 60, "p": 6},
            {"id": "shift", "dist": "t5", "n": 60, "p": 6, "delta": 3, "gamma": 0.1, "shift_type": "transient"},
        ],
    }
    doc.update(extra or {})
    path = tmp_path / "scenarios.json"
    path.write_text(json.dumps(doc))
    return path


def test_benchmark_row_accounting(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["benchmark", "--scenarios", str(write_scenarios(tmp_path)), "--output", str(out)]) == EXIT_OK
    detail, agg = read_benchmark_csv(out)
    assert len(detail) == 6 and len(agg) == 2
    assert list(detail[0]) == list(BENCHMARK_COLUMNS)
    assert [a["scenario_id"] for a in agg] == ["ic", "shift"]
    assert all(d["error"] == "" for d in detail)
    assert all(d["recall"] == "" for d in detail if d["scenario_id"] == "ic")


def test_benchmark_worker_count_invariant(tmp_path):
    path = write_scenarios(tmp_path)
    one, two = tmp_path / "one.csv", tmp_path / "two.csv"
    assert main(["benchmark", "--scenarios", str(path), "--output", str(one)]) == EXIT_OK
    assert main(["benchmark", "--scenarios", str(path), "--output", str(two), "--workers", "2"]) == EXIT_OK
    d1, a1 = read_benchmark_csv(one)
    d2, a2 = read_benchmark_csv(two)
    for r1, r2 in zip(d1, d2):
        r1.pop("runtime_seconds"), r2.pop("runtime_seconds")
    assert d1 == d2 and a1 == a2


def test_benchmark_records_failures_in_row(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"config": QUICK, "scenarios": [
        {"id": "tiny", "n": 10, "p": 3, "replications": 1},
        {"id": "ok", "n": 40, "p": 3, "replications": 1},
    ]}))
    out = tmp_path / "b.csv"
    assert main(["benchmark", "--scenarios", str(path), "--output", str(out)]) == EXIT_OK
    detail, agg = read_benchmark_csv(out)
    assert "DegenerateInputError" in detail[0]["error"] and detail[1]["error"] == ""
    assert agg[0]["n_ok"] == "0"


def test_benchmark_bad_scenarios(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"scenarios": [{"id": "x", "dist": "nope"}]}))
    assert main(["benchmark", "--scenarios", str(path), "--output", str(tmp_path / "o.csv")]) == EXIT_INPUT


def test_unknown_subcommand():
    assert main(["frobnicate"]) == EXIT_INPUT
