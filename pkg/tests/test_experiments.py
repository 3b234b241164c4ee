# file: tests/test_experiments.py
import csv
import json

import numpy as np
import pytest
import yaml

from app.cli import main
from app.core.errors import ConfigError
from app.db.registry import list_runs
from app.schemas.models import RunConfig
from app.services.experiment_service import (
    CSV_HEADER,
    EXIT_AUDIT,
    EXIT_CONFIG,
    EXIT_INTERNAL,
    EXIT_NONFINITE,
    EXIT_OK,
    ExperimentService,
    load_config,
    read_trace_csv,
)
from app.services.objective_service import paper_toy_problem
from app.services.preset_service import L0_ITERATIONS, PRESETS, TOY_MIXING, get_preset, list_presets
from app.worker import run_experiment_in_thread


def quadratic_config(alpha: float, iterations: int, **extra) -> dict:
    config = {
        "name": "unit_quadratic",
        "problem": {"objective": "quadratic", "agents": 3, "dimension": 1, "centers": [[0.0], [0.0], [0.0]]},
        "network": {"matrix": TOY_MIXING},
        "step": {"kind": "fixed", "alpha": alpha},
        "x0": {"kind": "rows", "rows": [[1.0], [2.0], [3.0]]},
        "iterations": iterations,
    }
    config.update(extra)
    return config


def write_json(path, payload) -> str:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


# --- Presets ---

def test_presets_are_listed_in_stable_order():
    names = [p.name for p in list_presets()]
    assert names == sorted(names)
    assert {"paper_toy_fixed", "paper_toy_dangerous", "paper_l0"} <= set(names)
    assert names == [p.name for p in list_presets()]


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip_through_json(name):
    config = get_preset(name)
    assert RunConfig.model_validate_json(config.model_dump_json(by_alias=True)) == config


def test_unknown_preset():
    with pytest.raises(ConfigError):
        get_preset("no_such_preset")


def test_l0_preset_keeps_lambda_alias():
    dumped = json.loads(get_preset("paper_l0").model_dump_json(by_alias=True))
    assert dumped["reg"] == {"kind": "l0", "lambda": 0.5, "q": 0.0, "a": 3.7, "gamma": 2.0, "lo": None, "hi": None, "radius": 1.0}


def test_paper_toy_fixed_preset(tmp_path):
    summary, trace = ExperimentService().run(get_preset("paper_toy_fixed", iterations=5000), out_dir=str(tmp_path))
    assert summary.exit_code == EXIT_OK
    assert summary.audit.passed
    np.testing.assert_allclose(trace.x_final[:, 0], 2.62, atol=0.05)


def test_dangerous_preset_settles_at_a_stationary_point(tmp_path):
    summary, trace = ExperimentService().run(get_preset("paper_toy_dangerous", iterations=30_000), out_dir=str(tmp_path))
    assert summary.exit_code == EXIT_OK
    obj = paper_toy_problem()
    assert abs(obj.stacked_gradient(trace.x_final).sum()) <= 1e-2


@pytest.fixture(scope="module")
def l0_traces():
    """The sparse least-squares presets at their full length, run once for the plateau checks."""
    service = ExperimentService(record=False)
    names = ("paper_l0_small_step", "paper_l0", "paper_l0_large_step", "paper_l0_decreasing")
    traces = {}
    for name in names:
        problem, mix, schedule, x0, stop = service.prepare(get_preset(name))
        traces[name] = service.engine.run(problem, mix, schedule, x0, stop)
    return traces


@pytest.mark.slow
def test_l0_fixed_plateau_against_decreasing_decay(l0_traces):
    fixed, decreasing = l0_traces["paper_l0"], l0_traces["paper_l0_decreasing"]
    assert fixed.iterations == decreasing.iterations == L0_ITERATIONS

    tail = fixed["consensus_error"][L0_ITERATIONS // 2 :]
    plateau = float(np.median(tail))
    assert plateau > 0
    assert np.all(tail >= 0.2 * plateau) and np.all(tail <= 5.0 * plateau)

    decaying = decreasing["consensus_error"][-L0_ITERATIONS // 10 :]
    assert float(np.median(decaying)) <= plateau / 10.0
    assert "nonfinite" not in fixed.flags and "nonfinite" not in decreasing.flags


@pytest.mark.slow
def test_l0_plateau_grows_with_the_fixed_step(l0_traces):
    names = ("paper_l0_small_step", "paper_l0", "paper_l0_large_step")
    steps = [l0_traces[name]["alpha"][0] for name in names]
    plateaus = [float(np.median(l0_traces[name]["consensus_error"][L0_ITERATIONS // 2 :])) for name in names]
    assert steps == sorted(steps)
    assert plateaus[0] < plateaus[1] < plateaus[2]
    for name in names:
        assert l0_traces[name].flags == ("fixed", "safe")


def test_builder_rejections_are_recorded(tmp_path):
    # ten nonzeros do not fit in four coordinates
    payload = {
        "name": "oversparse",
        "problem": {"objective": "least_squares", "agents": 3, "dimension": 4, "rows_per_agent": 5},
        "network": {"matrix": TOY_MIXING},
        "step": {"kind": "fixed", "alpha": 1e-3},
        "iterations": 5,
    }
    summary, trace = ExperimentService().run(RunConfig.model_validate(payload), out_dir=str(tmp_path))
    assert trace is None
    assert summary.exit_code == EXIT_CONFIG and summary.status == "invalid"
    assert "sparsity" in summary.message
    records = list_runs()
    assert [(r.name, r.status, r.exit_code) for r in records] == [("oversparse", "invalid", EXIT_CONFIG)]


@pytest.mark.asyncio
async def test_worker_reports_crashes_apart_from_config_errors():
    class CrashingService(ExperimentService):
        def run(self, config, out_dir=None, strict=False):
            raise RuntimeError("disk on fire")

    config = RunConfig.model_validate(quadratic_config(0.1, 5))
    summary = await run_experiment_in_thread(CrashingService(record=False), config)
    assert summary.exit_code == EXIT_INTERNAL != EXIT_CONFIG
    assert summary.status == "error"
    assert "disk on fire" in summary.message


def test_indicator_kind_aliases():
    config = RunConfig.model_validate(quadratic_config(0.1, 5, reg={"kind": "box_indicator", "lo": -1.0, "hi": 1.0}))
    assert config.reg.kind == "box"
    config = RunConfig.model_validate(quadratic_config(0.1, 5, reg={"kind": "ball_indicator", "radius": 2.0}))
    assert config.reg.kind == "ball"


# --- Persistence ---

def test_trace_csv_layout_and_determinism(tmp_path):
    config = get_preset("paper_toy_fixed", iterations=300)
    first, _ = ExperimentService().run(config, out_dir=str(tmp_path / "a"))
    second, _ = ExperimentService().run(config, out_dir=str(tmp_path / "b"))
    data_a = open(first.trace_path, "rb").read()
    data_b = open(second.trace_path, "rb").read()
    assert data_a == data_b
    assert b"\r" not in data_a
    lines = data_a.decode("utf-8").splitlines()
    assert lines[0].split(",") == list(CSV_HEADER)
    assert len(lines) == 1 + 301
    assert lines[1].split(",")[8] == "fixed|safe"


def test_trace_csv_reads_back_exactly(tmp_path):
    summary, trace = ExperimentService().run(get_preset("paper_toy_dangerous", iterations=50), out_dir=str(tmp_path))
    header, values, regimes = read_trace_csv(summary.trace_path)
    assert set(regimes) == {"fixed|safe"}
    for j, name in enumerate(header):
        np.testing.assert_array_equal(values[:, j], trace[name])


def test_audit_json_and_report_yaml(tmp_path):
    config = RunConfig.model_validate(
        quadratic_config(0.1, 10, output={"report_yaml": str(tmp_path / "report.yml")})
    )
    summary, _ = ExperimentService().run(config, out_dir=str(tmp_path))
    audit = json.loads(open(summary.audit_path, encoding="utf-8").read())
    assert audit["passed"] is True
    assert {row["name"] for row in audit["rows"]} >= {"sufficient_descent", "consensus_recursion_bound"}
    report = yaml.safe_load((tmp_path / "report.yml").read_text(encoding="utf-8"))
    assert report["status"] == "completed"
    assert report["iterations"] == 10


def test_runs_are_recorded():
    ExperimentService().run(RunConfig.model_validate(quadratic_config(0.1, 5)))
    records = list_runs()
    assert len(records) == 1
    assert records[0].name == "unit_quadratic"
    assert records[0].audit_passed is True
    assert records[0].iterations == 5


def test_load_config_rejects_unknown_keys(tmp_path):
    path = write_json(tmp_path / "bad.json", quadratic_config(0.1, 5, colour="blue"))
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_reads_yaml(tmp_path):
    payload = quadratic_config(0.1, 5, reg={"kind": "l1", "lambda": 0.25})
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(payload), encoding="utf-8")
    config = load_config(path)
    assert config.reg.lam == 0.25


# --- Command Line ---

def test_cli_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    assert "paper_toy_fixed" in out and "paper_l0" in out


def test_cli_preset_writes_outputs(tmp_path):
    assert main(["preset", "paper_toy_fixed", "--iterations", "100", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "paper_toy_fixed.trace.csv").exists()
    assert (tmp_path / "paper_toy_fixed.audit.json").exists()


def test_cli_unknown_preset():
    assert main(["preset", "nope"]) == EXIT_CONFIG


def test_cli_malformed_config(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    assert main(["run", str(path)]) == EXIT_CONFIG


def test_cli_invalid_network(tmp_path):
    payload = quadratic_config(0.1, 5, network={"nodes": 3, "edges": [[0, 1]]})
    assert main(["run", write_json(tmp_path / "split.json", payload), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert list_runs()[0].status == "invalid"


def test_cli_nonfinite_run_keeps_partial_trace(tmp_path):
    path = write_json(tmp_path / "blowup.json", quadratic_config(1e10, 1000))
    assert main(["run", path, "--out", str(tmp_path)]) == EXIT_NONFINITE
    lines = (tmp_path / "unit_quadratic.trace.csv").read_text(encoding="utf-8").splitlines()
    assert 2 <= len(lines) < 1002
    assert "nonfinite" in lines[1].split(",")[8]


def test_cli_strict_flags_audit_failures(tmp_path):
    # ten times the safe bound for a unit quadratic on the toy matrix
    path = write_json(tmp_path / "unsafe.json", quadratic_config(5.0, 20))
    assert main(["run", path, "--out", str(tmp_path)]) == EXIT_OK
    assert main(["run", path, "--out", str(tmp_path), "--strict"]) == EXIT_AUDIT


def test_cli_runs_configs_in_parallel(tmp_path, capsys):
    paths = [
        write_json(tmp_path / f"q{i}.json", quadratic_config(0.1, 20, name=f"q{i}"))
        for i in range(3)
    ]
    assert main(["run", *paths, "--jobs", "2", "--out", str(tmp_path)]) == EXIT_OK
    for i in range(3):
        assert (tmp_path / f"q{i}.trace.csv").exists()
    assert main(["history"]) == 0
    assert "q2" in capsys.readouterr().out


def test_trace_csv_cells_parse_with_csv_reader(tmp_path):
    summary, _ = ExperimentService().run(get_preset("paper_toy_fixed", iterations=5), out_dir=str(tmp_path))
    with open(summary.trace_path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == list(CSV_HEADER)
    assert all(len(row) == len(CSV_HEADER) for row in rows)
    assert [row[0] for row in rows[1:]] == [str(k) for k in range(6)]
