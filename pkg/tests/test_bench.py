import shutil
from multiprocessing.pool import ThreadPool

import bench
import numpy as np
import pytest
from bench import (
    RESULT_COLUMNS,
    Bench,
    BenchSignalType,
    Method,
    connect_bench_signal,
    disconnect_bench_signal,
    install_fail_fast,
    load_workspace,
    log,
    parse_method,
    read_results,
    realize_recording,
    report,
    simulate,
    solve_scenario,
    summarize,
    write_results,
    write_solution,
)
from exceptions import ConfigurationError, StateError, StopBench, UnknownMethodError
from run_config import load_config


@pytest.fixture(scope="module")
def config(desk_cfg):
    return load_config(desk_cfg)


@pytest.fixture(scope="module")
def desk_dir(tmp_path_factory, config):
    out_dir = tmp_path_factory.mktemp("desk")
    simulate(config, out_dir)
    return out_dir


@pytest.fixture(scope="module")
def workspace(desk_dir):
    return load_workspace(desk_dir)


@pytest.fixture(scope="module")
def bench_run(config, desk_dir):
    signals = []

    def receiver(sig_type, message, args, _msg_type):
        signals.append((sig_type, message, args))

    connect_bench_signal(receiver)
    try:
        rows = Bench(config, desk_dir).run()
    finally:
        disconnect_bench_signal(receiver)
    return rows, signals


def result_row(method, region, kind, snr, le, vis, sr, status="ok"):
    return {
        "method": method,
        "region": region,
        "kind": kind,
        "snr": snr,
        "seed": 0,
        "le_score": le,
        "vis_score": vis,
        "sr_score": sr,
        "runtime_ms": 0.0 if status == "ok" else None,
        "status": status,
        "message": "" if status == "ok" else "boom",
    }


def test_parse_method():
    assert parse_method("moeaar-l2") is Method.MOEAAR_L2
    assert Method.MOEAAR_L2.model_name == "l2L"
    assert not Method.ENET_L.is_moeaar
    with pytest.raises(UnknownMethodError):
        parse_method("sloreta")


def test_simulated_workspace(desk_dir, workspace, config):
    assert desk_dir.joinpath("manifest.json").is_file()
    assert len(workspace.scenarios) == 16
    assert workspace.lead_field.matrix.shape == (16, config.head.n_sources)
    assert workspace.space.n_rois == 4
    label = workspace.scenarios[3].label
    assert workspace.scenario(label) is workspace.scenarios[3]
    with pytest.raises(ConfigurationError):
        workspace.scenario("parietal-punctual-snr0")


def test_load_without_simulation(tmp_path):
    with pytest.raises(ConfigurationError):
        load_workspace(tmp_path)


def test_suite_seed_replays_stored_recording(workspace, config):
    noisy = next(s for s in workspace.scenarios if s.snr > 0)
    clean = next(s for s in workspace.scenarios if s.snr == 0)
    suite_seed = config.suite.seed
    lead_field = workspace.lead_field

    assert realize_recording(noisy, lead_field, suite_seed, suite_seed) is noisy.v
    assert realize_recording(clean, lead_field, suite_seed + 5, suite_seed) is clean.v
    redraw = realize_recording(noisy, lead_field, suite_seed + 1, suite_seed)
    again = realize_recording(noisy, lead_field, suite_seed + 1, suite_seed)
    assert not np.array_equal(redraw.values, noisy.v.values)
    np.testing.assert_array_equal(redraw.values, again.values)


def test_classic_solve_files(tmp_path, workspace, config):
    scenario = workspace.scenarios[0]
    result = solve_scenario(Method.LASSO, scenario, workspace, config)
    assert result.j.shape == (config.head.n_sources,)
    assert len(result.lambdas) == 1
    target = write_solution(result, tmp_path)
    assert target == tmp_path / "solutions" / scenario.label
    names = {path.name for path in target.iterdir()}
    assert names == {"lasso_j.csv", "lasso_metrics.json"}


def test_moeaar_solve_files(tmp_path, workspace, config):
    scenario = workspace.scenarios[1]
    result = solve_scenario(Method.MOEAAR_L0, scenario, workspace, config)
    assert result.moeaar is not None
    assert len(result.moeaar.telemetry) == config.moeaar.iterations
    target = write_solution(result, tmp_path)
    names = {path.name for path in target.iterdir()}
    assert names == {
        "moeaar-l0_j.csv",
        "moeaar-l0_metrics.json",
        "moeaar-l0_telemetry.csv",
        "moeaar-l0_decision.json",
        "moeaar-l0_front.svg",
    }


def test_bench_rows(bench_run, config, desk_dir):
    rows, _ = bench_run
    assert len(rows) == len(config.bench.methods) * 16 * config.bench.repeat
    assert {row["method"] for row in rows} == set(config.bench.methods)
    keys = [(r["method"], r["region"], r["kind"], r["snr"], r["seed"]) for r in rows]
    assert keys == sorted(keys)
    for row in rows:
        assert set(row) == set(RESULT_COLUMNS)
        if row["status"] == "ok":
            assert row["runtime_ms"] == 0.0
            for column in ("le_score", "vis_score", "sr_score"):
                assert 0.0 <= row[column] <= 1.0
    assert all(row["status"] == "ok" for row in rows if row["method"] != "moeaar-l0")
    for name in ("results.csv", "results.json"):
        assert desk_dir.joinpath(name).is_file()
    for metric in ("le_score", "vis_score", "sr_score"):
        assert desk_dir.joinpath("plots", f"{metric}.svg").is_file()


def test_bench_progress_signals(bench_run):
    rows, signals = bench_run
    progress = [
        args for sig_type, _, args in signals if sig_type is BenchSignalType.PROGRESS
    ]
    assert len(progress) == len(rows)
    assert sorted(done for done, _ in progress) == list(range(1, len(rows) + 1))
    assert any(sig_type is BenchSignalType.FINISHED for sig_type, _, _ in signals)


def test_bench_rerun_is_identical(tmp_path, bench_run, config, desk_dir):
    copy = tmp_path / "again"
    shutil.copytree(desk_dir, copy)
    Bench(config, copy, methods=["ridge-l", "lasso"]).run()
    first = [
        line
        for line in desk_dir.joinpath("results.csv").read_text().splitlines()
        if not line.startswith("moeaar")
    ]
    assert copy.joinpath("results.csv").read_text().splitlines() == first


def test_results_read_back(bench_run, desk_dir):
    rows, _ = bench_run
    loaded = read_results(desk_dir)
    assert len(loaded) == len(rows)
    for original, restored in zip(rows, loaded):
        assert restored["method"] == original["method"]
        assert restored["seed"] == original["seed"]
        if original["status"] == "ok":
            assert restored["le_score"] == pytest.approx(original["le_score"])


def test_failed_rows_have_empty_cells(tmp_path):
    rows = [
        result_row("lasso", "frontal", "punctual", 0.0, 0.5, 0.25, 1.0),
        result_row("ridge-l", "frontal", "punctual", 0.0, None, None, None, "failed"),
    ]
    write_results(rows, tmp_path)
    loaded = read_results(tmp_path / "results.csv")
    assert loaded[0]["vis_score"] == 0.25
    assert loaded[1]["status"] == "failed"
    assert loaded[1]["message"] == "boom"
    assert loaded[1]["le_score"] is None
    assert loaded[1]["runtime_ms"] is None


def test_read_results_missing(tmp_path):
    with pytest.raises(ConfigurationError):
        read_results(tmp_path)


def test_summary_deltas():
    rows = [
        result_row("lasso", "frontal", "punctual", 0.0, 1.0, 1.0, 1.0),
        result_row("lasso", "frontal", "punctual", 3.0, 0.5, 0.8, 0.25),
        result_row("lasso", "frontal", "gaussian", 0.0, 0.9, 0.9, 0.9),
        result_row("lasso", "frontal", "gaussian", 3.0, 0.7, 0.9, 0.9),
        result_row("ridge-l", "frontal", "punctual", 0.0, None, None, None, "failed"),
    ]
    summary = summarize(rows)
    assert list(summary) == ["lasso"]
    entry = summary["lasso"]
    assert entry["rows"] == 4
    assert entry["metrics"]["le_score"]["mean"] == pytest.approx(0.775)
    assert entry["metrics"]["le_score"]["count"] == 4
    assert entry["deltas"]["le_score"]["mean"] == pytest.approx(0.35)
    assert entry["deltas"]["le_score"]["max"] == pytest.approx(0.5)
    assert entry["deltas"]["vis_score"]["mean"] == pytest.approx(0.1)
    assert entry["deltas"]["sr_score"]["count"] == 2


def test_summary_without_noise_pairs():
    row = result_row("lasso", "frontal", "punctual", 0.0, 1.0, 1.0, 1.0)
    summary = summarize([row])
    assert summary["lasso"]["deltas"] == {}


def test_summary_needs_ok_rows():
    row = result_row("lasso", "frontal", "punctual", 0.0, None, None, None, "failed")
    with pytest.raises(StateError):
        summarize([row])


def test_report_files(tmp_path):
    rows = [
        result_row("lasso", "frontal", "punctual", 0.0, 1.0, 1.0, 1.0),
        result_row("lasso", "frontal", "punctual", 3.0, 0.5, 0.8, 0.25),
    ]
    write_results(rows, tmp_path)
    summary = report(tmp_path / "results.csv")
    assert summary["lasso"]["deltas"]["le_score"]["mean"] == pytest.approx(0.5)
    assert tmp_path.joinpath("summary.json").is_file()
    markdown = tmp_path.joinpath("summary.md").read_text(encoding="utf-8")
    assert markdown.splitlines()[2].startswith("| lasso | 2 |")


def test_abort_stops_next_row(config, desk_dir):
    runner = Bench(config, desk_dir, methods=["lasso"])
    task = runner.tasks()[0]
    runner.abort_bench()
    with pytest.raises(StopBench):
        runner.run_task(task)
    with pytest.raises(StopBench):
        runner.abort_bench(now=True)


def test_fail_fast_aborts_on_error(config, desk_dir):
    runner = Bench(config, desk_dir, methods=["lasso"])
    handler = install_fail_fast(runner)
    try:
        log.error("row exploded")
        assert runner.to_exit
        with pytest.raises(StopBench):
            runner.run()
    finally:
        log.removeHandler(handler)


def test_bench_unknown_method(config, desk_dir):
    with pytest.raises(UnknownMethodError):
        Bench(config, desk_dir, methods=["sloreta"])


def crash(*_args, **_kwargs):
    raise RuntimeError("solver blew up")


def test_unexpected_error_becomes_failed_row(monkeypatch, config, desk_dir):
    monkeypatch.setattr(bench, "solve_scenario", crash)
    runner = Bench(config, desk_dir, methods=["lasso"])
    row = runner.run_task(runner.tasks()[0])
    assert row["status"] == "failed"
    assert row["message"] == "RuntimeError: solver blew up"
    assert row["le_score"] is None
    assert runner.done == 1


def test_progress_counter_under_threads(monkeypatch, config, desk_dir):
    monkeypatch.setattr(bench, "solve_scenario", crash)
    runner = Bench(config, desk_dir, methods=["lasso"])
    tasks = runner.tasks() * 8
    runner.total = len(tasks)
    with ThreadPool(8) as pool:
        rows = pool.map(runner.run_task, tasks)
    assert runner.done == len(tasks)
    assert all(row["status"] == "failed" for row in rows)
