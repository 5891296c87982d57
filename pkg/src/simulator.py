"""
Synthetic ground truth for the benchmark: punctual and gaussian current
densities, the noiseless forward model and white noise injected at a given
amplitude SNR. SNR 0 follows the study's convention and means no noise.
"""

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from common_utils import read_json, read_vector_csv, write_to_json, write_vector_csv
from exceptions import ConfigurationError, ParameterError, ShapeError
from head_model import LeadField, SourceSpace
from moeaar_logger import get_logger

log = get_logger("moeaar")

MAX_AMPLITUDE = 5.0  # nA/cm^2
GAUSSIAN_CUTOFF = 0.01
DEFAULT_SNR_LEVELS = (0.0, 3.0)
DEFAULT_REGION_NAMES = ("frontal", "temporal", "occipital", "precentral")
MANIFEST_FILENAME = "manifest.json"


class SourceKind(Enum):
    PUNCTUAL = "punctual"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class SourceSpec:
    """One simulated generator. center is a global source index inside roi."""

    roi: int
    center: int
    kind: SourceKind
    amplitude: float
    spread: float = 0.0

    def __post_init__(self):
        if abs(self.amplitude) > MAX_AMPLITUDE:
            raise ParameterError(
                f"Amplitude {self.amplitude} exceeds {MAX_AMPLITUDE} nA/cm^2"
            )
        if self.kind is SourceKind.GAUSSIAN and self.spread <= 0:
            raise ParameterError("Gaussian sources need a positive spread")

    def to_json(self) -> dict:
        return {
            "roi": self.roi,
            "center": self.center,
            "kind": self.kind.value,
            "amplitude": self.amplitude,
            "spread": self.spread,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SourceSpec":
        return cls(
            roi=int(data["roi"]),
            center=int(data["center"]),
            kind=SourceKind(data["kind"]),
            amplitude=float(data["amplitude"]),
            spread=float(data["spread"]),
        )


@dataclass(frozen=True, eq=False)
class CurrentDensity:
    """Source amplitudes J for one time instant (nA/cm^2)."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ParameterError("Current density must be a finite vector")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class Recording:
    """Scalp potentials V, with the noise tag and seed that produced them."""

    values: np.ndarray
    snr: float = 0.0
    seed: Optional[int] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ParameterError("Recording must be a finite vector")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class Scenario:
    spec: SourceSpec
    j_true: CurrentDensity
    v: Recording
    label: str
    region: str = ""

    @property
    def kind(self) -> SourceKind:
        return self.spec.kind

    @property
    def snr(self) -> float:
        return self.v.snr


def synthesize_current(spec: SourceSpec, space: SourceSpace) -> CurrentDensity:
    if not 0 <= spec.center < space.n:
        raise IndexError(f"Source center {spec.center} outside 0..{space.n - 1}")
    if space.roi_labels[spec.center] != spec.roi:
        raise ParameterError(
            f"Source center {spec.center} does not belong to ROI {spec.roi}"
        )

    values = np.zeros(space.n)
    if spec.kind is SourceKind.PUNCTUAL:
        values[spec.center] = spec.amplitude
        return CurrentDensity(values)

    distances = np.linalg.norm(space.positions - space.positions[spec.center], axis=1)
    values = spec.amplitude * np.exp(-(distances**2) / (2.0 * spec.spread**2))
    values[np.abs(values) < GAUSSIAN_CUTOFF * abs(spec.amplitude)] = 0.0
    values[spec.center] = spec.amplitude
    return CurrentDensity(values)


def forward(lead_field: Union[LeadField, np.ndarray], j: CurrentDensity) -> Recording:
    """Noiseless part of V = KJ + e."""
    matrix = lead_field.matrix if isinstance(lead_field, LeadField) else lead_field
    if matrix.shape[1] != j.n:
        raise ShapeError(f"Lead field has {matrix.shape[1]} columns, J has {j.n}")
    return Recording(matrix @ j.values, snr=0.0)


def add_noise(recording: Recording, snr: float, seed: int) -> Recording:
    """
    White gaussian noise scaled after sampling so that |V| / |e| == snr.
    """
    if snr < 0:
        raise ParameterError(f"SNR must be >= 0, got {snr}")
    if snr == 0:
        return Recording(recording.values, snr=0.0, seed=seed)

    noise = np.random.default_rng(seed).standard_normal(recording.m)
    signal_norm = np.linalg.norm(recording.values)
    noise *= signal_norm / (snr * np.linalg.norm(noise))
    return Recording(recording.values + noise, snr=float(snr), seed=seed)


def default_spread(space: SourceSpace) -> float:
    """Twice the median nearest-neighbor spacing of the grid."""
    spacings = [
        min(np.linalg.norm(space.positions[j] - space.positions[i]) for j in row)
        for i, row in enumerate(space.adjacency)
        if row
    ]
    return 2.0 * float(np.median(spacings)) if spacings else 1.0


def roi_center(space: SourceSpace, roi: int) -> int:
    """ROI member closest to the ROI centroid."""
    members = space.roi_members(roi)
    centroid = space.positions[members].mean(axis=0)
    offsets = np.linalg.norm(space.positions[members] - centroid, axis=1)
    return int(members[int(np.argmin(offsets))])


def scenario_label(region: str, kind: SourceKind, snr: float) -> str:
    return f"{region}-{kind.value}-snr{snr:g}"


def build_test_suite(
    space: SourceSpace,
    lead_field: LeadField,
    regions: Sequence[int],
    seed: int,
    region_names: Sequence[str] = DEFAULT_REGION_NAMES,
    snr_levels: Sequence[float] = DEFAULT_SNR_LEVELS,
    spread: Optional[float] = None,
    amplitude_range: tuple[float, float] = (1.0, MAX_AMPLITUDE),
) -> list[Scenario]:
    """
    For each region: one punctual and one gaussian source, each rendered at
    every SNR level (4 regions x 2 kinds x 2 levels = 16 by default).
    """
    if space.n_rois < 4 or len(regions) != 4:
        raise ConfigurationError("The test suite needs 4 ROIs")
    if len(set(regions)) != len(regions):
        raise ConfigurationError(f"Suite regions must be distinct: {regions}")
    if any(not 0 <= roi < space.n_rois for roi in regions):
        raise ConfigurationError(f"Suite regions outside 0..{space.n_rois - 1}")
    if len(region_names) != len(regions):
        raise ConfigurationError("Need one region name per suite region")

    spread = default_spread(space) if spread is None else spread
    rng = np.random.default_rng(seed)
    scenarios = []
    for roi, name in zip(regions, region_names):
        center = roi_center(space, roi)
        for kind in SourceKind:
            amplitude = float(rng.uniform(*amplitude_range))
            spec = SourceSpec(
                roi=roi,
                center=center,
                kind=kind,
                amplitude=amplitude,
                spread=spread if kind is SourceKind.GAUSSIAN else 0.0,
            )
            j_true = synthesize_current(spec, space)
            clean = forward(lead_field, j_true)
            for snr in snr_levels:
                noise_seed = seed + len(scenarios)
                scenarios.append(
                    Scenario(
                        spec=spec,
                        j_true=j_true,
                        v=add_noise(clean, snr, noise_seed),
                        label=scenario_label(name, kind, snr),
                        region=name,
                    )
                )
    log.info("Built test suite with %d scenarios.", len(scenarios))
    return scenarios


def write_suite(scenarios: Sequence[Scenario], out_dir: Union[str, Path]) -> Path:
    """JSON manifest plus one CSV per vector (j_true, v) in out_dir/scenarios."""
    out_dir = Path(out_dir)
    vector_dir = out_dir.joinpath("scenarios")
    vector_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    for scenario in scenarios:
        j_path = vector_dir.joinpath(f"{scenario.label}_j.csv")
        v_path = vector_dir.joinpath(f"{scenario.label}_v.csv")
        write_vector_csv(j_path, scenario.j_true.values)
        write_vector_csv(v_path, scenario.v.values)
        entries.append(
            {
                "label": scenario.label,
                "region": scenario.region,
                "spec": scenario.spec.to_json(),
                "snr": scenario.v.snr,
                "seed": scenario.v.seed,
                "j_true": str(j_path.relative_to(out_dir)),
                "v": str(v_path.relative_to(out_dir)),
            }
        )
    manifest_path = out_dir.joinpath(MANIFEST_FILENAME)
    write_to_json(manifest_path, {"scenarios": entries})
    return manifest_path


def load_suite(out_dir: Union[str, Path]) -> list[Scenario]:
    out_dir = Path(out_dir)
    manifest_path = out_dir.joinpath(MANIFEST_FILENAME)
    if not manifest_path.is_file():
        raise ConfigurationError(f"No scenario manifest at {manifest_path}")
    scenarios = []
    for entry in read_json(manifest_path)["scenarios"]:
        scenarios.append(
            Scenario(
                spec=SourceSpec.from_json(entry["spec"]),
                j_true=CurrentDensity(
                    read_vector_csv(out_dir.joinpath(entry["j_true"]))
                ),
                v=Recording(
                    read_vector_csv(out_dir.joinpath(entry["v"])),
                    snr=float(entry["snr"]),
                    seed=entry["seed"],
                ),
                label=entry["label"],
                region=entry.get("region", ""),
            )
        )
    return scenarios
