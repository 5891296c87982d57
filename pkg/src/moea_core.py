"""
Pareto machinery and reproduction operators: dominance, non-dominated sorting,
crowding distance, binary tournament, arithmetic crossover, gaussian-step
mutation and elitist environmental selection.

All randomness comes from an injected numpy Generator.
"""

import math
from dataclasses import dataclass, replace
from enum import Enum, auto
from typing import Callable, Optional, Sequence

import numpy as np
from exceptions import ParameterError, ShapeError, StateError
from objectives import ObjectiveVector


class PopulationRole(Enum):
    CURRENT = auto()
    CC = auto()
    LS = auto()
    UNION = auto()
    SUB = auto()


@dataclass
class Individual:
    """
    One candidate solution. Sub-individuals (coevolution projections) hold
    only their group's coordinates and point back to the parent's index.
    """

    coeffs: np.ndarray
    roi: int
    objectives: Optional[ObjectiveVector] = None
    rank: Optional[int] = None
    crowding: float = 0.0
    parent: Optional[int] = None

    def copy(self) -> "Individual":
        return replace(self, coeffs=self.coeffs.copy())

    def invalidate(self) -> None:
        self.objectives = None
        self.rank = None
        self.crowding = 0.0

    @property
    def evaluated(self) -> bool:
        return self.objectives is not None


@dataclass
class Population:
    members: list[Individual]
    generation: int = 0
    role: PopulationRole = PopulationRole.CURRENT

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, index: int) -> Individual:
        return self.members[index]


@dataclass(frozen=True)
class VariationSettings:
    """Arity and step settings of one NSGA-II reproduction round."""

    crossover_fraction: float = 0.8
    mutation_fraction: float = 0.5
    sigma: float = 0.0
    clamp: float = math.inf


def dominates(u: ObjectiveVector, v: ObjectiveVector) -> bool:
    """u <= v componentwise with at least one strict inequality."""
    a, b = u.values, v.values
    if a.shape != b.shape:
        raise ShapeError(f"Objective vectors differ in length: {a.size} vs {b.size}")
    return bool(np.all(a <= b) and np.any(a < b))


def objective_matrix(members: Sequence[Individual]) -> np.ndarray:
    if any(not member.evaluated for member in members):
        raise StateError("Every individual must be evaluated before sorting")
    return np.array([member.objectives.values for member in members])


def non_dominated_sort(members: Sequence[Individual]) -> list[list[int]]:
    """
    Fronts as index lists; front 0 is the non-dominated set. Assigns rank.
    """
    if not members:
        return []
    values = objective_matrix(members)
    less_equal = np.all(values[:, None, :] <= values[None, :, :], axis=-1)
    less = np.any(values[:, None, :] < values[None, :, :], axis=-1)
    dominance = less_equal & less  # dominance[i, j]: i dominates j

    dominated_by = dominance.sum(axis=0)
    fronts = []
    current = [int(i) for i in np.flatnonzero(dominated_by == 0)]
    while current:
        fronts.append(current)
        for i in current:
            members[i].rank = len(fronts) - 1
        following = []
        for i in current:
            for j in np.flatnonzero(dominance[i]):
                dominated_by[j] -= 1
                if dominated_by[j] == 0:
                    following.append(int(j))
        current = sorted(following)
    return fronts


def crowding_distance(front: Sequence[int], values: np.ndarray) -> np.ndarray:
    """
    Per-objective sorted neighbor gaps normalized by the objective range,
    summed; boundary members get +inf. Result aligned with front order.
    """
    size = len(front)
    distance = np.zeros(size)
    if size <= 2:
        distance[:] = math.inf
        return distance

    points = values[list(front)]
    for column in points.T:
        order = np.argsort(column, kind="stable")
        distance[order[0]] = math.inf
        distance[order[-1]] = math.inf
        span = column[order[-1]] - column[order[0]]
        if span == 0:
            continue
        gaps = (column[order[2:]] - column[order[:-2]]) / span
        distance[order[1:-1]] += gaps
    return distance


def assign_crowding(members: Sequence[Individual], fronts: list[list[int]]) -> None:
    values = objective_matrix(members)
    for front in fronts:
        for index, distance in zip(front, crowding_distance(front, values)):
            members[index].crowding = float(distance)


def sort_population(members: Sequence[Individual]) -> list[list[int]]:
    """Rank and crowding for every member; returns the fronts."""
    fronts = non_dominated_sort(members)
    assign_crowding(members, fronts)
    return fronts


def binary_tournament(
    members: Sequence[Individual], rng: np.random.Generator
) -> Individual:
    """
    Two uniform draws with replacement; lower rank wins, then larger
    crowding, then the first draw.
    """
    if any(member.rank is None for member in members):
        raise StateError("Tournament needs a sorted population")
    first, second = (members[int(i)] for i in rng.integers(len(members), size=2))
    if second.rank < first.rank:
        return second
    if second.rank == first.rank and second.crowding > first.crowding:
        return second
    return first


def arithmetic_crossover(
    p1: Individual,
    p2: Individual,
    rng: np.random.Generator,
    alpha: Optional[float] = None,
    clamp: float = math.inf,
) -> Individual:
    """d = alpha p1 + (1 - alpha) p2 with alpha ~ N(0, 1) unless injected."""
    if p1.coeffs.shape != p2.coeffs.shape:
        raise ShapeError("Parents differ in length")
    if alpha is None:
        alpha = float(rng.standard_normal())
    child = alpha * p1.coeffs + (1.0 - alpha) * p2.coeffs
    if math.isfinite(clamp):
        child = np.clip(child, -clamp, clamp)
    return Individual(coeffs=child, roi=p1.roi, parent=p1.parent)


def gaussian_step_mutation(
    individual: Individual,
    sigma: float,
    rng: np.random.Generator,
    clamp: float = math.inf,
) -> Individual:
    """d + sigma N(0, 1) on the individual's active support only."""
    if sigma < 0:
        raise ParameterError(f"Mutation step must be >= 0, got {sigma}")
    mutant = individual.copy()
    mutant.invalidate()
    support = np.flatnonzero(individual.coeffs)
    if sigma == 0 or support.size == 0:
        return mutant
    mutant.coeffs[support] += sigma * rng.standard_normal(support.size)
    if math.isfinite(clamp):
        np.clip(mutant.coeffs, -clamp, clamp, out=mutant.coeffs)
    return mutant


def split_zero_copies(
    members: Sequence[Individual],
) -> tuple[list[Individual], list[Individual]]:
    """
    (kept, spare): an all-zero member whose objectives repeat those of an
    earlier all-zero member is spare. Input order is preserved.
    """
    kept, spare = [], []
    seen = []
    for member in members:
        if np.any(member.coeffs):
            kept.append(member)
            continue
        values = objective_matrix([member])[0]
        if any(np.array_equal(values, other) for other in seen):
            spare.append(member)
            continue
        seen.append(values)
        kept.append(member)
    return kept, spare


def select_survivors(members: Sequence[Individual], size: int) -> list[Individual]:
    """
    Elitist truncation: whole fronts in ascending order, the last admitted
    front split by descending crowding (stable). Copies of the zero vector
    only fill places nothing else can take.
    """
    if size > len(members):
        raise ShapeError(f"Cannot keep {size} of {len(members)} individuals")
    pool, spare = split_zero_copies(members)
    if len(pool) < size:
        pool.extend(spare[: size - len(pool)])
    fronts = sort_population(pool)
    survivors = []
    for front in fronts:
        if len(survivors) + len(front) <= size:
            survivors.extend(pool[i] for i in front)
            continue
        remaining = size - len(survivors)
        ordered = sorted(front, key=lambda i: -pool[i].crowding)
        survivors.extend(pool[i] for i in ordered[:remaining])
        break
    return survivors


def environmental_selection(pop_t: Population, size: int) -> Population:
    """Reduce Pop_T = Pop_CC U Pop_LS (2N members) to N."""
    if len(pop_t) != 2 * size:
        raise ShapeError(f"Expected {2 * size} individuals, got {len(pop_t)}")
    survivors = select_survivors(pop_t.members, size)
    sort_population(survivors)
    return Population(members=survivors, generation=pop_t.generation + 1)


def reproduce(
    members: Sequence[Individual],
    settings: VariationSettings,
    rng: np.random.Generator,
) -> list[Individual]:
    """
    Offspring of one NSGA-II round: ceil(cx * N) crossover children from
    tournament parents, plus mutated copies of a random mutation-fraction
    subset of those children.
    """
    children = []
    for _ in range(math.ceil(settings.crossover_fraction * len(members))):
        p1 = binary_tournament(members, rng)
        p2 = binary_tournament(members, rng)
        children.append(arithmetic_crossover(p1, p2, rng, clamp=settings.clamp))

    count = math.ceil(settings.mutation_fraction * len(children))
    chosen = []
    if count:
        chosen = sorted(rng.choice(len(children), size=count, replace=False))
    mutants = [
        gaussian_step_mutation(children[int(i)], settings.sigma, rng, settings.clamp)
        for i in chosen
    ]
    return children + mutants


def nsga2_generation(
    members: Sequence[Individual],
    settings: VariationSettings,
    rng: np.random.Generator,
    evaluate_fn: Callable[[Individual], ObjectiveVector],
) -> list[Individual]:
    """One generation: reproduce, evaluate offspring, keep len(members)."""
    sort_population(members)
    offspring = reproduce(members, settings, rng)
    for child in offspring:
        child.objectives = evaluate_fn(child)
    survivors = select_survivors(list(members) + offspring, len(members))
    sort_population(survivors)
    return survivors
