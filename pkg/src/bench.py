"""
Benchmark harness: builds the desk-scale problem and scenario suite, runs the
classic and MOEAAR solvers on it and writes results, charts and summaries.

Output directory layout:
    source_space.json, sensors.json, leadfield.csv   problem geometry
    manifest.json, scenarios/                        simulated suite
    solutions/<scenario>/<method>_*                  single solves
    results.csv, results.json, plots/                bench
    summary.md, summary.json                         report
    run.log                                          log of the last command
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from enum import Enum, auto
from multiprocessing.pool import ThreadPool
from pathlib import Path
from threading import Lock
from typing import Callable, Optional, Sequence, Union

import numpy as np
from bench_plots import METRIC_TITLES, plot_front, plot_metric
from classic_solvers import ClassicMethod, default_lambda_grid, gcv_select
from coevolution import MoeaarConfig, MoeaarResult, run_moeaar, write_telemetry
from common_utils import read_json, write_to_json, write_vector_csv
from exceptions import (
    ConfigurationError,
    MoeaarException,
    StateError,
    StopBench,
    UnknownMethodError,
)
from head_model import (
    HeadModel,
    LaplacianOperator,
    LeadField,
    SensorArray,
    SourceSpace,
    build_sensor_array,
    build_source_space,
    compute_leadfield,
    graph_laplacian,
    load_leadfield,
    save_leadfield,
)
from metrics import MetricsReport, evaluate_all
from moeaar_logger import get_formatter, get_logger
from objectives import penalty_model
from run_config import RunConfig
from simulator import (
    Recording,
    Scenario,
    add_noise,
    build_test_suite,
    forward,
    load_suite,
    write_suite,
)

log = get_logger("moeaar")

SOURCE_SPACE_FILENAME = "source_space.json"
SENSORS_FILENAME = "sensors.json"
LEADFIELD_FILENAME = "leadfield.csv"
RESULTS_FILENAME = "results.csv"
LOG_FILENAME = "run.log"

RESULT_COLUMNS = (
    "method",
    "region",
    "kind",
    "snr",
    "seed",
    "le_score",
    "vis_score",
    "sr_score",
    "runtime_ms",
    "status",
    "message",
)
METRIC_COLUMNS = ("le_score", "vis_score", "sr_score")


class BenchSignalType(Enum):
    """Defines the different types of messages bench listeners react to."""

    PROGRESS = auto()
    STATUS_MESSAGE = auto()
    ROW_FINISHED = auto()
    FINISHED = auto()
    WARNING_MESSAGE = auto()
    ERROR_MESSAGE = auto()
    CRITICAL_MESSAGE = auto()


class MessageType(Enum):
    """More specific types for warning and error messages."""

    CRIT_GENERIC = auto()

    ERR_ROW_FAILED = auto()
    ERR_ROW_CRASHED = auto()

    WARN_NOT_CONVERGED = auto()


class Method(Enum):
    RIDGE_L = "ridge-l"
    LASSO = "lasso"
    ENET_L = "enet-l"
    MOEAAR_L0 = "moeaar-l0"
    MOEAAR_L1 = "moeaar-l1"
    MOEAAR_L2 = "moeaar-l2"

    @property
    def is_moeaar(self) -> bool:
        return self.value.startswith("moeaar")

    @property
    def model_name(self) -> str:
        return {"moeaar-l0": "l0", "moeaar-l1": "l1", "moeaar-l2": "l2L"}[self.value]


def parse_method(name: str) -> Method:
    try:
        return Method(name)
    except ValueError:
        known = ", ".join(method.value for method in Method)
        raise UnknownMethodError(f"Unknown method '{name}' (known: {known})") from None


_listeners: list[Callable] = []


def connect_bench_signal(receiver: Callable) -> None:
    """Connect a callable(sig_type, message, args, msg_type) to bench events."""
    _listeners.append(receiver)


def disconnect_bench_signal(receiver: Callable) -> None:
    if receiver in _listeners:
        _listeners.remove(receiver)


def emit(
    sig_type: BenchSignalType,
    message: Optional[str] = None,
    args: Optional[tuple] = None,
    msg_type: Optional[MessageType] = None,
) -> None:
    """
    Shortcut for emitting a message with the corresponding signal type and
    string replacement args.
    """
    for receiver in list(_listeners):
        receiver(sig_type, message, args, msg_type)


def log_and_emit(
    log_level: int,
    sig_type: BenchSignalType,
    message: Optional[str] = None,
    args: Optional[tuple] = None,
    msg_type: Optional[MessageType] = None,
) -> None:
    """
    Shortcut for logging and emitting a message with the corresponding signal
    type and string replacement args.
    """
    formatted = message if not args else message.format(*args)
    log.log(log_level, formatted)
    emit(sig_type, message, args, msg_type)


@dataclass(frozen=True, eq=False)
class Workspace:
    """Problem geometry and scenario suite of one output directory."""

    space: SourceSpace
    sensors: SensorArray
    lead_field: LeadField
    laplacian: LaplacianOperator
    scenarios: list[Scenario] = field(default_factory=list)

    def scenario(self, label: str) -> Scenario:
        for scenario in self.scenarios:
            if scenario.label == label:
                return scenario
        known = ", ".join(scenario.label for scenario in self.scenarios)
        raise ConfigurationError(f"Unknown scenario '{label}' (known: {known})")


@dataclass(frozen=True, eq=False)
class SolveResult:
    method: Method
    scenario: Scenario
    seed: int
    j: np.ndarray
    metrics: MetricsReport
    runtime_ms: float
    moeaar: Optional[MoeaarResult] = None
    lambdas: tuple[float, ...] = ()


def head_model_from(config: RunConfig) -> HeadModel:
    return HeadModel(
        radii=tuple(config.head.radii),
        conductivities=tuple(config.head.conductivities),
        series_terms=config.head.series_terms,
        series_tol=config.head.series_tol,
    )


def build_workspace(config: RunConfig) -> Workspace:
    """Geometry, lead field and suite from the configuration alone."""
    head = head_model_from(config)
    space = build_source_space(
        config.head.n_sources,
        config.head.r_cortex,
        config.head.n_rois,
        config.head.space_seed,
    )
    sensors = build_sensor_array(config.head.n_sensors)
    lead_field = compute_leadfield(head, space, sensors, workers=config.workers)
    scenarios = build_test_suite(
        space,
        lead_field,
        regions=config.suite.regions,
        seed=config.suite.seed,
        region_names=config.suite.region_names,
        snr_levels=config.suite.snr_levels,
        spread=config.suite.spread or None,
        amplitude_range=(config.suite.amplitude_min, config.suite.amplitude_max),
    )
    return Workspace(space, sensors, lead_field, graph_laplacian(space), scenarios)


def write_workspace(workspace: Workspace, out_dir: Union[str, Path]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_to_json(out_dir.joinpath(SOURCE_SPACE_FILENAME), workspace.space.to_json())
    write_to_json(out_dir.joinpath(SENSORS_FILENAME), workspace.sensors.to_json())
    save_leadfield(workspace.lead_field, out_dir.joinpath(LEADFIELD_FILENAME))
    return write_suite(workspace.scenarios, out_dir)


def load_workspace(out_dir: Union[str, Path]) -> Workspace:
    out_dir = Path(out_dir)
    space_path = out_dir.joinpath(SOURCE_SPACE_FILENAME)
    if not space_path.is_file():
        raise ConfigurationError(f"No simulated problem in {out_dir}; run simulate")
    space = SourceSpace.from_json(read_json(space_path))
    sensors = SensorArray.from_json(read_json(out_dir.joinpath(SENSORS_FILENAME)))
    lead_field = load_leadfield(out_dir.joinpath(LEADFIELD_FILENAME))
    return Workspace(
        space, sensors, lead_field, graph_laplacian(space), load_suite(out_dir)
    )


def realize_recording(
    scenario: Scenario, lead_field: LeadField, seed: int, suite_seed: int
) -> Recording:
    """
    Recording of a bench row. The suite seed replays the stored recording;
    any other seed draws a fresh noise realization at the scenario's SNR.
    """
    if seed == suite_seed or scenario.snr == 0:
        return scenario.v
    sequence = np.random.SeedSequence([seed, scenario.v.seed])
    noise_seed = int(sequence.generate_state(1)[0])
    return add_noise(forward(lead_field, scenario.j_true), scenario.snr, noise_seed)


def moeaar_config(
    config: RunConfig, method: Method, laplacian, seed: int
) -> MoeaarConfig:
    section = config.moeaar
    return MoeaarConfig(
        iterations=section.iterations,
        crossover_fraction=section.crossover_fraction,
        mutation_fraction=section.mutation_fraction,
        penalty=penalty_model(method.model_name, laplacian=laplacian),
        seed=seed,
        sigma0_factor=section.sigma0_factor,
        clamp_factor=section.clamp_factor,
        ls_max_iter=section.ls_max_iter,
        ls_tol=section.ls_tol,
        greedy_support=section.greedy_support,
    )


def solve_scenario(
    method: Method,
    scenario: Scenario,
    workspace: Workspace,
    config: RunConfig,
    seed: Optional[int] = None,
    workers: Optional[int] = 1,
) -> SolveResult:
    """Run one method on one scenario and score the estimate."""
    seed = config.suite.seed if seed is None else seed
    K = workspace.lead_field.matrix
    recording = realize_recording(
        scenario, workspace.lead_field, seed, config.suite.seed
    )
    V = recording.values

    start = time.perf_counter()
    moeaar = None
    lambdas: tuple[float, ...] = ()
    if method.is_moeaar:
        moeaar = run_moeaar(
            K,
            V,
            workspace.space,
            moeaar_config(config, method, workspace.laplacian, seed),
            workers=workers,
        )
        j = moeaar.decision.coeffs
    else:
        grid = default_lambda_grid(
            K, V, config.classic.lambda_points, config.classic.lambda_min_ratio
        )
        solution = gcv_select(
            ClassicMethod(method.value),
            K,
            V,
            grid,
            laplacian=workspace.laplacian,
            enet_mix=config.classic.enet_mix,
            tol=config.classic.tol,
            max_iter=config.classic.max_iter,
            workers=workers,
        )
        if not solution.converged:
            log_and_emit(
                logging.WARNING,
                BenchSignalType.WARNING_MESSAGE,
                "{} did not converge on {}.",
                (method.value, scenario.label),
                MessageType.WARN_NOT_CONVERGED,
            )
        j, lambdas = solution.j, solution.lambdas
    runtime_ms = (time.perf_counter() - start) * 1000.0

    return SolveResult(
        method=method,
        scenario=scenario,
        seed=seed,
        j=np.asarray(j, dtype=float),
        metrics=evaluate_all(scenario, j, workspace.space),
        runtime_ms=runtime_ms,
        moeaar=moeaar,
        lambdas=lambdas,
    )


def write_solution(result: SolveResult, out_dir: Union[str, Path]) -> Path:
    """Estimate, metrics and (MOEAAR) telemetry, decision trace and front."""
    target = Path(out_dir).joinpath("solutions", result.scenario.label)
    target.mkdir(parents=True, exist_ok=True)
    prefix = result.method.value

    write_vector_csv(target.joinpath(f"{prefix}_j.csv"), result.j)
    write_to_json(
        target.joinpath(f"{prefix}_metrics.json"),
        {
            "method": prefix,
            "scenario": result.scenario.label,
            "seed": result.seed,
            "lambdas": list(result.lambdas),
            "metrics": result.metrics.to_json(),
        },
    )
    if result.moeaar is not None:
        write_telemetry(
            result.moeaar.telemetry, target.joinpath(f"{prefix}_telemetry.csv")
        )
        write_to_json(
            target.joinpath(f"{prefix}_decision.json"), result.moeaar.trace.to_json()
        )
        plot_front(
            [(vector.f0, vector[1]) for vector in result.moeaar.archive],
            result.moeaar.trace.knee,
            target.joinpath(f"{prefix}_front.svg"),
            title=f"{prefix} / {result.scenario.label}",
        )
    return target


@dataclass(frozen=True)
class BenchTask:
    method: Method
    scenario_index: int
    repeat: int


def row_sort_key(row: dict) -> tuple:
    return (row["method"], row["region"], row["kind"], row["snr"], row["seed"])


def _format_row(row: dict) -> dict:
    formatted = dict(row)
    for column in (*METRIC_COLUMNS, "runtime_ms"):
        value = row[column]
        formatted[column] = "" if value is None else f"{value:.12g}"
    formatted["snr"] = f"{row['snr']:g}"
    return formatted


def write_results(rows: Sequence[dict], out_dir: Union[str, Path]) -> Path:
    out_dir = Path(out_dir)
    path = out_dir.joinpath(RESULTS_FILENAME)
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.DictWriter(file, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(_format_row(row) for row in rows)
    write_to_json(out_dir.joinpath("results.json"), {"rows": list(rows)})
    return path


def read_results(path: Union[str, Path]) -> list[dict]:
    """results.csv rows with numeric columns parsed (None for failed rows)."""
    path = Path(path)
    if path.is_dir():
        path = path.joinpath(RESULTS_FILENAME)
    if not path.is_file():
        raise ConfigurationError(f"No benchmark results at {path}")
    rows = []
    with open(path, encoding="utf-8", newline="") as file:
        for record in csv.DictReader(file):
            row = dict(record)
            row["snr"] = float(row["snr"])
            row["seed"] = int(row["seed"])
            for column in (*METRIC_COLUMNS, "runtime_ms"):
                row[column] = float(row[column]) if row[column] != "" else None
            rows.append(row)
    return rows


class Bench:
    """
    Full cross of methods x scenarios x repeats over a simulated workspace.
    """

    def __init__(
        self,
        config: RunConfig,
        out_dir: Union[str, Path],
        methods: Optional[Sequence[str]] = None,
    ) -> None:
        self.to_exit = False
        self.config = config
        self.out_dir = Path(out_dir)
        names = methods or config.bench.methods
        self.methods = [parse_method(name) for name in names]
        self.workspace = load_workspace(self.out_dir)
        if not self.workspace.scenarios:
            raise ConfigurationError("The scenario suite is empty")
        self.lock = Lock()
        self.done = 0
        self.total = 0

    def abort_bench(self, now: bool = False) -> None:
        """
        Request aborting the bench. Optionally abort right away; use only from
        the thread driving run().
        """
        if not self.to_exit:
            log_and_emit(
                logging.INFO, BenchSignalType.STATUS_MESSAGE, "Abort requested."
            )
        self.to_exit = True
        if now:
            self.check_abort()

    def check_abort(self) -> None:
        """Raise StopBench once an abort was requested; called per row."""
        if self.to_exit:
            raise StopBench()

    def tasks(self) -> list[BenchTask]:
        return [
            BenchTask(method, index, repeat)
            for method in self.methods
            for index in range(len(self.workspace.scenarios))
            for repeat in range(self.config.bench.repeat)
        ]

    def run_task(self, task: BenchTask) -> dict:
        self.check_abort()
        scenario = self.workspace.scenarios[task.scenario_index]
        seed = self.config.suite.seed + task.repeat
        row = {
            "method": task.method.value,
            "region": scenario.region,
            "kind": scenario.kind.value,
            "snr": float(scenario.snr),
            "seed": seed,
            "le_score": None,
            "vis_score": None,
            "sr_score": None,
            "runtime_ms": None,
            "status": "ok",
            "message": "",
        }
        try:
            result = solve_scenario(
                task.method, scenario, self.workspace, self.config, seed
            )
        except MoeaarException as ex:
            row["status"], row["message"] = "failed", str(ex)
            log_and_emit(
                logging.ERROR,
                BenchSignalType.ERROR_MESSAGE,
                "{} on {} (seed {}) failed: {}",
                (task.method.value, scenario.label, seed, ex),
                MessageType.ERR_ROW_FAILED,
            )
        except StopBench:
            raise
        except Exception as ex:
            row["status"] = "failed"
            row["message"] = f"{type(ex).__name__}: {ex}"
            log_and_emit(
                logging.ERROR,
                BenchSignalType.ERROR_MESSAGE,
                "{} on {} (seed {}) crashed: {}",
                (task.method.value, scenario.label, seed, row["message"]),
                MessageType.ERR_ROW_CRASHED,
            )
        else:
            row["le_score"] = result.metrics.localization_score
            row["vis_score"] = result.metrics.visibility_score
            row["sr_score"] = result.metrics.spatial_resolution_score
            row["runtime_ms"] = (
                result.runtime_ms if self.config.bench.record_runtime else 0.0
            )

        with self.lock:
            self.done += 1
            done = self.done
        emit(BenchSignalType.PROGRESS, "{}/{}", (done, self.total))
        emit(BenchSignalType.ROW_FINISHED, scenario.label, (task.method.value, seed))
        return row

    def run(self) -> list[dict]:
        """Run every task; rows come back in canonical order."""
        tasks = self.tasks()
        self.done, self.total = 0, len(tasks)
        log_and_emit(
            logging.INFO,
            BenchSignalType.STATUS_MESSAGE,
            "Running {} rows ({} methods, {} scenarios, {} repeats).",
            (
                len(tasks),
                len(self.methods),
                len(self.workspace.scenarios),
                self.config.bench.repeat,
            ),
        )
        with ThreadPool(self.config.workers) as pool:
            rows = pool.map(self.run_task, tasks)
        rows.sort(key=row_sort_key)

        write_results(rows, self.out_dir)
        plot_dir = self.out_dir.joinpath("plots")
        plot_dir.mkdir(exist_ok=True)
        methods = [method.value for method in self.methods]
        for metric in METRIC_TITLES:
            plot_metric(rows, metric, plot_dir.joinpath(f"{metric}.svg"), methods)

        failed = sum(row["status"] != "ok" for row in rows)
        log_and_emit(
            logging.INFO,
            BenchSignalType.FINISHED,
            "Bench finished: {} rows, {} failed.",
            (len(rows), failed),
        )
        return rows


def _stats(values: Sequence[float]) -> dict:
    array = np.asarray(values, dtype=float)
    return {
        "mean": float(array.mean()),
        "std": float(array.std()),
        "count": int(array.size),
    }


def summarize(rows: Sequence[dict]) -> dict:
    """
    Per-method mean/std of every metric and stability deltas: the noiseless
    score minus the noisy score of the same (region, kind, seed).
    """
    ok = [row for row in rows if row["status"] == "ok"]
    if not ok:
        raise StateError("No successful result rows to summarize")

    summary = {}
    for method in sorted({row["method"] for row in ok}):
        method_rows = [row for row in ok if row["method"] == method]
        entry = {"rows": len(method_rows), "metrics": {}, "deltas": {}}
        for metric in METRIC_COLUMNS:
            entry["metrics"][metric] = _stats([row[metric] for row in method_rows])

        clean = {
            (row["region"], row["kind"], row["seed"]): row
            for row in method_rows
            if row["snr"] == 0
        }
        for metric in METRIC_COLUMNS:
            deltas = [
                clean[key][metric] - row[metric]
                for row in method_rows
                if row["snr"] > 0
                and (key := (row["region"], row["kind"], row["seed"])) in clean
            ]
            if deltas:
                entry["deltas"][metric] = {
                    "mean": float(np.mean(deltas)),
                    "max": float(np.max(deltas)),
                    "count": len(deltas),
                }
        summary[method] = entry
    return summary


def summary_markdown(summary: dict) -> str:
    lines = [
        "| method | rows | " + " | ".join(METRIC_COLUMNS) + " | "
        + " | ".join(f"d_{metric} (mean/max)" for metric in METRIC_COLUMNS) + " |",
        "|" + "---|" * (2 + 2 * len(METRIC_COLUMNS)),
    ]
    for method, entry in summary.items():
        cells = [method, str(entry["rows"])]
        for metric in METRIC_COLUMNS:
            stats = entry["metrics"][metric]
            cells.append(f"{stats['mean']:.4f} ± {stats['std']:.4f}")
        for metric in METRIC_COLUMNS:
            delta = entry["deltas"].get(metric)
            cells.append(f"{delta['mean']:.4f} / {delta['max']:.4f}" if delta else "-")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def report(results: Union[str, Path], out_dir: Union[str, Path, None] = None) -> dict:
    """Write summary.md and summary.json next to the results."""
    results = Path(results)
    rows = read_results(results)
    summary = summarize(rows)
    if out_dir:
        target = Path(out_dir)
    else:
        target = results if results.is_dir() else results.parent
    target.mkdir(parents=True, exist_ok=True)
    write_to_json(target.joinpath("summary.json"), summary)
    with open(target.joinpath("summary.md"), "w", encoding="utf-8") as file:
        file.write(summary_markdown(summary))
    log.info("Summary of %d rows written to %s.", len(rows), target)
    return summary


class FailFastHandler(logging.StreamHandler):
    """Stop the bench if an error was encountered."""

    def __init__(self, parent: Bench):
        super().__init__()
        self.parent = parent
        self.triggered = False  # Avoid recursion

    def emit(self, _):
        if not self.triggered:
            self.triggered = True
            log_and_emit(
                logging.CRITICAL,
                BenchSignalType.CRITICAL_MESSAGE,
                "Fail Fast: {}...",
                ("Auto-Aborting",),
                MessageType.CRIT_GENERIC,
            )
            self.parent.abort_bench()


def install_fail_fast(bench: Bench) -> FailFastHandler:
    """Attach (or re-arm) the fail-fast handler for this bench."""
    for handler in log.handlers:
        if isinstance(handler, FailFastHandler):
            handler.parent = bench
            handler.triggered = False
            return handler
    handler = FailFastHandler(bench)
    handler.setLevel(logging.ERROR)
    log.addHandler(handler)
    return handler


class RunLog:
    """Mirror every log message into out_dir/run.log while open."""

    def __init__(self, out_dir: Union[str, Path]):
        self.path = Path(out_dir).joinpath(LOG_FILENAME)
        self.file = None

    def write(self, message: str) -> None:
        if self.file is not None:
            self.file.write(message + "\n")

    def __enter__(self) -> "RunLog":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.file = open(self.path, "w", encoding="utf-8")  # noqa: SIM115
        formatter = get_formatter(log)
        if formatter is not None:
            formatter.connect_log(self.write)
        return self

    def __exit__(self, *_):
        formatter = get_formatter(log)
        if formatter is not None:
            formatter.disconnect_log(self.write)
        self.file.close()
        self.file = None


def simulate(config: RunConfig, out_dir: Union[str, Path]) -> Path:
    """Build and write the problem and scenario suite; returns the manifest."""
    workspace = build_workspace(config)
    manifest = write_workspace(workspace, out_dir)
    log_and_emit(
        logging.INFO,
        BenchSignalType.FINISHED,
        "Wrote {} scenarios to {}.",
        (len(workspace.scenarios), out_dir),
    )
    return manifest

