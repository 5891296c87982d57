"""
Geometry of the desk-scale EEG problem: cortex source grid with a synthetic
ROI partition, scalp sensor montage, concentric-shell lead field and the graph
Laplacian of the source mesh.

The lead field uses the classical Legendre series for a current dipole inside
nested homogeneous spheres. For every series order the radial solution is
obtained from the interface conditions (continuous potential and normal
current, no current leaving the scalp), which gives one transfer factor per
order shared by radial and tangential dipole components.
"""

import csv
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from multiprocessing.pool import ThreadPool
from pathlib import Path
from typing import Optional, Union

import numpy as np
from exceptions import (
    GeometryError,
    InvalidMontageError,
    InvalidPartitionError,
    LeadFieldDataError,
    LeadFieldParseError,
    ParameterError,
)
from moeaar_logger import get_logger
from numpy.polynomial import legendre
from scipy import sparse
from scipy.cluster.vq import kmeans2
from scipy.sparse.csgraph import laplacian
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

log = get_logger("moeaar")

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))
NEIGHBORS = 6
RADIUS_TOL = 1e-9

DEFAULT_RADII = (0.87, 0.92, 1.0)
DEFAULT_CONDUCTIVITIES = (0.33, 0.0042, 0.33)
DEFAULT_SERIES_TERMS = 60
DEFAULT_SERIES_TOL = 1e-10


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SourceSpace:
    """
    Candidate generators on the cortex sphere. Point index i maps to
    positions[i]; roi_labels partition the index set into k non-empty ROIs.
    """

    positions: np.ndarray
    roi_labels: np.ndarray
    adjacency: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float)
        labels = np.array(self.roi_labels, dtype=int)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise GeometryError("Source positions must be an n x 3 array")
        if labels.shape != (positions.shape[0],):
            raise InvalidPartitionError("Every source point needs one ROI label")
        if labels.size and set(labels.tolist()) != set(range(labels.max() + 1)):
            raise InvalidPartitionError("ROI labels must cover 0..k-1 without gaps")
        adjacency = tuple(tuple(sorted(int(j) for j in row)) for row in self.adjacency)
        if len(adjacency) != positions.shape[0]:
            raise GeometryError("Adjacency needs one neighbor list per point")
        for i, row in enumerate(adjacency):
            for j in row:
                if j == i or not 0 <= j < len(adjacency) or i not in adjacency[j]:
                    raise GeometryError(
                        f"Adjacency must be symmetric and irreflexive (point {i})"
                    )
        object.__setattr__(self, "positions", _frozen(positions))
        object.__setattr__(self, "roi_labels", _frozen(labels))
        object.__setattr__(self, "adjacency", adjacency)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def n_rois(self) -> int:
        return int(self.roi_labels.max()) + 1 if self.n else 0

    @cached_property
    def groups(self) -> tuple[np.ndarray, ...]:
        """Index sets of the ROI partition in ascending ROI order."""
        return tuple(
            _frozen(np.flatnonzero(self.roi_labels == roi))
            for roi in range(self.n_rois)
        )

    def roi_members(self, roi: int) -> np.ndarray:
        return self.groups[roi]

    def position(self, index: int) -> np.ndarray:
        return self.positions[index]

    def index_at(self, point, tol: float = 1e-9) -> int:
        """Inverse of the index map: point coordinates back to their index."""
        distance, index = self._tree.query(np.asarray(point, dtype=float))
        if distance > tol:
            raise GeometryError(f"No source point at {point}")
        return int(index)

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.positions)

    @cached_property
    def diameter(self) -> float:
        """Largest distance between two source points."""
        if self.n < 2:
            return 0.0
        best = 0.0
        for start in range(0, self.n, 256):
            block = cdist(self.positions[start : start + 256], self.positions)
            best = max(best, float(block.max()))
        return best

    def to_json(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "roi_labels": self.roi_labels.tolist(),
            "adjacency": [list(row) for row in self.adjacency],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SourceSpace":
        return cls(
            positions=np.array(data["positions"], dtype=float),
            roi_labels=np.array(data["roi_labels"], dtype=int),
            adjacency=tuple(tuple(row) for row in data["adjacency"]),
        )


@dataclass(frozen=True, eq=False)
class SensorArray:
    """Electrodes on the scalp sphere (radius 1.0)."""

    positions: np.ndarray
    average_reference: bool = True

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise InvalidMontageError("Sensor positions must be an m x 3 array")
        if positions.shape[0] < 2:
            raise InvalidMontageError("A montage needs at least 2 sensors")
        radii = np.linalg.norm(positions, axis=1)
        if np.any(np.abs(radii - 1.0) > RADIUS_TOL):
            raise InvalidMontageError("Sensors must lie on the unit scalp sphere")
        if len(cKDTree(positions).query_pairs(1e-12)):
            raise InvalidMontageError("Sensor positions must be pairwise distinct")
        object.__setattr__(self, "positions", _frozen(positions))

    @property
    def m(self) -> int:
        return self.positions.shape[0]

    def to_json(self) -> dict:
        return {
            "positions": self.positions.tolist(),
            "average_reference": self.average_reference,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SensorArray":
        return cls(
            positions=np.array(data["positions"], dtype=float),
            average_reference=bool(data.get("average_reference", True)),
        )


@dataclass(frozen=True)
class HeadModel:
    """Concentric homogeneous shells, innermost first; the last is the scalp."""

    radii: tuple[float, ...] = DEFAULT_RADII
    conductivities: tuple[float, ...] = DEFAULT_CONDUCTIVITIES
    series_terms: int = DEFAULT_SERIES_TERMS
    series_tol: float = DEFAULT_SERIES_TOL

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        sigmas = tuple(float(s) for s in self.conductivities)
        if not radii or len(radii) != len(sigmas):
            raise GeometryError("Need one conductivity per shell")
        if radii[0] <= 0 or any(b <= a for a, b in zip(radii, radii[1:])):
            raise GeometryError(f"Shell radii must increase from 0: {radii}")
        if abs(radii[-1] - 1.0) > RADIUS_TOL:
            raise GeometryError("Scalp radius is normalized to 1.0")
        if any(s <= 0 for s in sigmas):
            raise ParameterError(f"Conductivities must be positive: {sigmas}")
        if self.series_terms < 1:
            raise ParameterError("series_terms must be >= 1")
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "conductivities", sigmas)


class LeadFieldSource(Enum):
    COMPUTED = "computed"
    LOADED = "loaded"


@dataclass(frozen=True, eq=False)
class LeadField:
    """The m x n matrix K relating source amplitudes to sensor potentials."""

    matrix: np.ndarray
    provenance: LeadFieldSource = LeadFieldSource.COMPUTED
    series_terms: int = 0
    max_tail: float = 0.0
    truncated: bool = False

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2:
            raise LeadFieldParseError("Lead field must be a 2D matrix")
        if not np.all(np.isfinite(matrix)):
            raise LeadFieldDataError("Lead field contains non-finite entries")
        object.__setattr__(self, "matrix", _frozen(matrix))

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True, eq=False)
class LaplacianOperator:
    """Graph Laplacian L = D - A of the source mesh (sparse)."""

    matrix: sparse.csr_matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @cached_property
    def gram(self) -> sparse.csr_matrix:
        """L^T L."""
        return sparse.csr_matrix(self.matrix.T @ self.matrix)


def fibonacci_sphere(count: int) -> np.ndarray:
    """Quasi-uniform unit vectors on the full sphere."""
    index = np.arange(count, dtype=float)
    z = 1.0 - (2.0 * index + 1.0) / count
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = index * GOLDEN_ANGLE
    return np.column_stack((rho * np.cos(phi), rho * np.sin(phi), z))


def _kmeans_labels(positions: np.ndarray, k: int, seed: int) -> np.ndarray:
    n = positions.shape[0]
    if k == 1:
        return np.zeros(n, dtype=int)
    if k == n:
        return np.arange(n)

    with warnings.catch_warnings():
        # Empty clusters are repaired below.
        warnings.simplefilter("ignore")
        centroids, labels = kmeans2(
            positions, k, minit="++", seed=np.random.default_rng(seed)
        )
    labels = np.asarray(labels, dtype=int)

    for roi in range(k):
        if np.any(labels == roi):
            continue
        donor = int(np.argmax(np.bincount(labels, minlength=k)))
        members = np.flatnonzero(labels == donor)
        spread = np.linalg.norm(positions[members] - centroids[donor], axis=1)
        labels[members[int(np.argmax(spread))]] = roi
        log.debug("Repaired empty ROI %d from ROI %d.", roi, donor)

    # Canonical numbering: ROIs ordered by their lowest point index.
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first, kind="stable")
    relabel = np.empty(k, dtype=int)
    relabel[order] = np.arange(k)
    return relabel[labels]


def _knn_adjacency(positions: np.ndarray, neighbors: int) -> tuple:
    n = positions.shape[0]
    count = min(neighbors, n - 1)
    links = [set() for _ in range(n)]
    if count > 0:
        _, nearest = cKDTree(positions).query(positions, k=count + 1)
        for i, row in enumerate(np.atleast_2d(nearest)):
            for j in row:
                if int(j) != i:
                    links[i].add(int(j))
                    links[int(j)].add(i)
    return tuple(tuple(sorted(row)) for row in links)


def build_source_space(n: int, r_cortex: float, k: int, seed: int) -> SourceSpace:
    """
    Fibonacci-sphere grid of n points at radius r_cortex, partitioned into k
    ROIs by seeded k-means, with symmetrized 6-nearest-neighbor adjacency.
    """
    if k < 1 or n < k:
        raise InvalidPartitionError(f"Cannot split {n} points into {k} ROIs")
    if not 0.0 < r_cortex < 1.0:
        raise GeometryError(f"Cortex radius {r_cortex} outside (0, 1)")

    positions = r_cortex * fibonacci_sphere(n)
    labels = _kmeans_labels(positions, k, seed)
    adjacency = _knn_adjacency(positions, NEIGHBORS)
    log.debug("Built source space: %d points, %d ROIs.", n, k)
    return SourceSpace(positions=positions, roi_labels=labels, adjacency=adjacency)


def build_sensor_array(m: int, average_reference: bool = True) -> SensorArray:
    """Deterministic quasi-uniform layout on the upper scalp hemisphere."""
    if m < 2:
        raise InvalidMontageError(f"A montage needs at least 2 sensors, got {m}")
    index = np.arange(m, dtype=float)
    z = 1.0 - (index + 0.5) / m
    rho = np.sqrt(1.0 - z * z)
    phi = index * GOLDEN_ANGLE
    positions = np.column_stack((rho * np.cos(phi), rho * np.sin(phi), z))
    positions /= np.linalg.norm(positions, axis=1)[:, None]
    return SensorArray(positions=positions, average_reference=average_reference)


def _surface_factor(order: int, radii: tuple, sigmas: tuple) -> float:
    """
    Scalp value of the radial solution whose innermost shell carries the
    source term r^-(order+1) plus a regular part.
    """
    shells = len(radii)
    size = 2 * shells - 1
    system = np.zeros((size, size))
    rhs = np.zeros(size)

    def basis(r):
        return (
            r**order,
            r ** -(order + 1),
            order * r ** (order - 1),
            -(order + 1) * r ** -(order + 2),
        )

    # Unknown columns: a_1 -> 0; a_k -> 2k-3, b_k -> 2k-2 for shells k >= 2.
    def terms(shell, r):
        g, h, dg, dh = basis(r)
        if shell == 1:
            return [(0, g, dg)], (h, dh)
        return [(2 * shell - 3, g, dg), (2 * shell - 2, h, dh)], (0.0, 0.0)

    row = 0
    for shell in range(1, shells):
        r = radii[shell - 1]
        inner, (h_in, dh_in) = terms(shell, r)
        outer, _ = terms(shell + 1, r)
        for col, value, _ in inner:
            system[row, col] += value
        for col, value, _ in outer:
            system[row, col] -= value
        rhs[row] = -h_in
        for col, _, slope in inner:
            system[row + 1, col] += sigmas[shell - 1] * slope
        for col, _, slope in outer:
            system[row + 1, col] -= sigmas[shell] * slope
        rhs[row + 1] = -sigmas[shell - 1] * dh_in
        row += 2

    outer_terms, (h_out, dh_out) = terms(shells, radii[-1])
    for col, _, slope in outer_terms:
        system[row, col] += slope
    rhs[row] = -dh_out

    coeffs = np.linalg.solve(system, rhs)
    return float(h_out + sum(coeffs[col] * value for col, value, _ in outer_terms))


def surface_factors(head: HeadModel) -> np.ndarray:
    """Transfer factor per series order; index 0 is unused."""
    factors = np.zeros(head.series_terms + 1)
    for order in range(1, head.series_terms + 1):
        factors[order] = _surface_factor(order, head.radii, head.conductivities)
    return factors


def dipole_potentials(
    head: HeadModel,
    factors: np.ndarray,
    source: np.ndarray,
    moment: np.ndarray,
    sensor_positions: np.ndarray,
) -> tuple[np.ndarray, float]:
    """
    Scalp potentials of one current dipole and the relative size of the last
    series term kept.
    """
    source = np.asarray(source, dtype=float)
    moment = np.asarray(moment, dtype=float)
    r0 = float(np.linalg.norm(source))
    if r0 >= head.radii[0]:
        raise GeometryError(
            f"Source at radius {r0} is not strictly inside the brain shell"
        )

    if r0 > 0.0:
        axis = source / r0
    else:
        # Any frame works at the center; align it with the moment.
        strength = np.linalg.norm(moment)
        axis = moment / strength if strength > 0 else np.array([0.0, 0.0, 1.0])
    radial = float(moment @ axis)
    tangential = moment - radial * axis

    orders = np.arange(factors.size)
    scaled = np.zeros_like(factors)
    scaled[1:] = factors[1:] * np.power(r0, orders[1:] - 1)
    radial_coeffs = scaled * orders

    unit_sensors = sensor_positions / np.linalg.norm(sensor_positions, axis=1)[:, None]
    cosines = np.clip(unit_sensors @ axis, -1.0, 1.0)

    potentials = radial * legendre.legval(cosines, radial_coeffs)
    if np.any(tangential):
        potentials += (unit_sensors @ tangential) * legendre.legval(
            cosines, legendre.legder(scaled)
        )
    potentials /= 4.0 * math.pi * head.conductivities[0]

    peak = float(np.abs(radial_coeffs).max())
    tail = abs(radial_coeffs[-1]) / peak if peak > 0 else 0.0
    return potentials, tail


def radial_orientations(space: SourceSpace) -> np.ndarray:
    norms = np.linalg.norm(space.positions, axis=1)
    if np.any(norms == 0):
        raise GeometryError("Radial orientation undefined at the head center")
    return space.positions / norms[:, None]


def compute_leadfield(
    head: HeadModel,
    space: SourceSpace,
    sensors: SensorArray,
    orientations: Optional[np.ndarray] = None,
    workers: Optional[int] = None,
) -> LeadField:
    """
    K[i, j] = potential at sensor i of a unit dipole at source j, truncated
    series, average-referenced when the montage asks for it.
    """
    if orientations is None:
        orientations = radial_orientations(space)
    orientations = np.asarray(orientations, dtype=float)
    if orientations.shape != space.positions.shape:
        raise GeometryError("Need one orientation per source")

    radii = np.linalg.norm(space.positions, axis=1)
    if np.any(radii >= head.radii[0]):
        outside = int(np.argmax(radii >= head.radii[0]))
        raise GeometryError(
            f"Source {outside} at radius {radii[outside]} is at or outside "
            f"the brain shell ({head.radii[0]})"
        )

    factors = surface_factors(head)

    def column(index):
        return dipole_potentials(
            head,
            factors,
            space.positions[index],
            orientations[index],
            sensors.positions,
        )

    # Columns are assembled by index; the result does not depend on scheduling.
    with ThreadPool(workers) as pool:
        results = pool.map(column, range(space.n))

    matrix = np.column_stack([potentials for potentials, _ in results])
    max_tail = max((tail for _, tail in results), default=0.0)
    truncated = max_tail > head.series_tol
    if truncated:
        log.warning(
            "Lead-field series truncated at order %d; last term is %.2e of the "
            "largest (tolerance %.0e).",
            head.series_terms,
            max_tail,
            head.series_tol,
        )

    if sensors.average_reference:
        matrix = matrix - matrix.mean(axis=0)

    return LeadField(
        matrix=matrix,
        provenance=LeadFieldSource.COMPUTED,
        series_terms=head.series_terms,
        max_tail=max_tail,
        truncated=truncated,
    )


def graph_laplacian(space: SourceSpace) -> LaplacianOperator:
    """L = D - A of the source mesh adjacency."""
    rows = [i for i, row in enumerate(space.adjacency) for _ in row]
    cols = [j for row in space.adjacency for j in row]
    adjacency = sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(space.n, space.n)
    )
    return LaplacianOperator(matrix=sparse.csr_matrix(laplacian(adjacency)))


def save_leadfield(lead_field: LeadField, path: Union[str, Path]) -> None:
    """Header row "m,n" followed by m rows of n values (17 significant digits)."""
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file)
        writer.writerow([lead_field.m, lead_field.n])
        for row in lead_field.matrix:
            writer.writerow([f"{value:.17g}" for value in row])


def load_leadfield(path: Union[str, Path]) -> LeadField:
    with open(path, encoding="utf-8", newline="") as file:
        rows = [row for row in csv.reader(file) if row]

    if not rows:
        raise LeadFieldParseError(f"{path} is empty")
    try:
        m, n = (int(value) for value in rows[0])
    except ValueError:
        raise LeadFieldParseError(f"{path}: header must be 'm,n'") from None

    body = rows[1:]
    if len(body) != m:
        raise LeadFieldParseError(f"{path}: header says {m} rows, found {len(body)}")
    matrix = np.empty((m, n))
    for i, row in enumerate(body):
        if len(row) != n:
            raise LeadFieldParseError(
                f"{path}: row {i + 1} has {len(row)} values, expected {n}"
            )
        try:
            matrix[i] = [float(value) for value in row]
        except ValueError:
            raise LeadFieldParseError(f"{path}: row {i + 1} is not numeric") from None

    if not np.all(np.isfinite(matrix)):
        raise LeadFieldDataError(f"{path} contains non-finite entries")
    return LeadField(matrix=matrix, provenance=LeadFieldSource.LOADED)
