"""
Run configuration: a sectioned key/value text file.

    # comment
    [head]
    n_sources: 500
    radii: 0.87, 0.92, 1.0

Every value is coerced to the type of the matching default; a fully defaulted
file is produced by dump_config and reads back unchanged.
"""

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

from exceptions import ConfigurationError
from head_model import (
    DEFAULT_CONDUCTIVITIES,
    DEFAULT_RADII,
    DEFAULT_SERIES_TERMS,
    DEFAULT_SERIES_TOL,
)
from simulator import DEFAULT_REGION_NAMES, DEFAULT_SNR_LEVELS, MAX_AMPLITUDE

ALL_METHODS = ("ridge-l", "lasso", "enet-l", "moeaar-l0", "moeaar-l1", "moeaar-l2")


@dataclass(frozen=True)
class HeadSection:
    radii: tuple[float, ...] = DEFAULT_RADII
    conductivities: tuple[float, ...] = DEFAULT_CONDUCTIVITIES
    series_terms: int = DEFAULT_SERIES_TERMS
    series_tol: float = DEFAULT_SERIES_TOL
    n_sources: int = 500
    r_cortex: float = 0.8
    n_rois: int = 8
    n_sensors: int = 32
    space_seed: int = 0


@dataclass(frozen=True)
class SuiteSection:
    seed: int = 0
    regions: tuple[int, ...] = (0, 2, 4, 6)
    region_names: tuple[str, ...] = DEFAULT_REGION_NAMES
    snr_levels: tuple[float, ...] = DEFAULT_SNR_LEVELS
    spread: float = 0.0  # 0 -> twice the median grid spacing
    amplitude_min: float = 1.0
    amplitude_max: float = MAX_AMPLITUDE


@dataclass(frozen=True)
class ClassicSection:
    lambda_points: int = 30
    lambda_min_ratio: float = 1e-4
    enet_mix: float = 0.5
    tol: float = 1e-8
    max_iter: int = 5000


@dataclass(frozen=True)
class MoeaarSection:
    iterations: int = 100
    crossover_fraction: float = 0.8
    mutation_fraction: float = 0.5
    sigma0_factor: float = 0.1
    clamp_factor: float = 10.0
    ls_max_iter: int = 25
    ls_tol: float = 1e-8
    greedy_support: int = 3


@dataclass(frozen=True)
class BenchSection:
    methods: tuple[str, ...] = ALL_METHODS
    repeat: int = 10
    workers: int = 0  # 0 -> one per CPU
    out_dir: str = "out"
    record_runtime: bool = False  # true -> results.csv differs across reruns
    fail_fast: bool = False


@dataclass(frozen=True)
class RunConfig:
    head: HeadSection = field(default_factory=HeadSection)
    suite: SuiteSection = field(default_factory=SuiteSection)
    classic: ClassicSection = field(default_factory=ClassicSection)
    moeaar: MoeaarSection = field(default_factory=MoeaarSection)
    bench: BenchSection = field(default_factory=BenchSection)

    def __post_init__(self):
        if not self.bench.methods:
            raise ConfigurationError("At least one method is required")
        unknown = [name for name in self.bench.methods if name not in ALL_METHODS]
        if unknown:
            listed = ", ".join(unknown)
            raise ConfigurationError(f"Unknown methods in [bench]: {listed}")
        if self.bench.repeat < 1:
            raise ConfigurationError(f"repeat must be >= 1, got {self.bench.repeat}")
        if not self.suite.snr_levels:
            raise ConfigurationError("At least one SNR level is required")
        if self.suite.amplitude_min > self.suite.amplitude_max:
            raise ConfigurationError("amplitude_min exceeds amplitude_max")

    @property
    def workers(self) -> Optional[int]:
        """ThreadPool size; None lets the pool pick the CPU count."""
        return self.bench.workers or None

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Replace fields given as section__key=value."""
        sections = {}
        for name, value in overrides.items():
            section, _, key = name.partition("__")
            sections.setdefault(section, {})[key] = value
        return replace(
            self,
            **{
                section: replace(getattr(self, section), **values)
                for section, values in sections.items()
            },
        )


def _format(value: Any) -> str:
    if isinstance(value, tuple):
        return ", ".join(_format(item) for item in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, default: Any, where: str) -> Any:
    try:
        if isinstance(default, tuple):
            items = [item.strip() for item in raw.split(",") if item.strip()]
            sample = default[0] if default else ""
            return tuple(_coerce(item, sample, where) for item in items)
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return lowered in ("true", "yes", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{where}: cannot read '{raw}'") from None
    return raw


def read_sections(filepath: Union[str, Path]) -> dict[str, dict[str, str]]:
    """
    Run config reader: [section] headers followed by key: value lines.
    """
    sections: dict[str, dict[str, str]] = {}
    current = None
    with open(filepath, encoding="utf-8") as file:
        for number, line in enumerate(file.readlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = sections.setdefault(line[1:-1].strip(), {})
                continue
            found = (line.find(":"), line.find("="))
            separators = [index for index in found if index > 0]
            if current is None or not separators:
                raise ConfigurationError(
                    f"{filepath}:{number}: malformed line '{line}'"
                )
            split = min(separators)
            current[line[:split].strip()] = line[split + 1 :].strip()
    return sections


def parse_config(sections: dict[str, dict[str, str]]) -> RunConfig:
    defaults = RunConfig()
    built = {}
    for name, values in sections.items():
        if name not in {item.name for item in fields(RunConfig)}:
            raise ConfigurationError(f"Unknown config section [{name}]")
        section = getattr(defaults, name)
        known = {item.name for item in fields(section)}
        changes = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigurationError(f"Unknown key '{key}' in [{name}]")
            changes[key] = _coerce(raw, getattr(section, key), f"[{name}] {key}")
        built[name] = replace(section, **changes)
    return replace(defaults, **built)


def load_config(filepath: Union[str, Path, None]) -> RunConfig:
    """Defaults when filepath is None."""
    if filepath is None:
        return RunConfig()
    filepath = Path(filepath)
    if not filepath.is_file():
        raise ConfigurationError(f"Config file {filepath} not found")
    return parse_config(read_sections(filepath))


def dump_config(config: RunConfig) -> str:
    lines = []
    for section in fields(RunConfig):
        values = getattr(config, section.name)
        lines.append(f"[{section.name}]")
        lines.extend(
            f"{item.name}: {_format(getattr(values, item.name))}"
            for item in fields(values)
        )
        lines.append("")
    return "\n".join(lines)
