"""
MOEAAR search driver. The ROI partition of the source space defines the
variable groups; each cycle runs one NSGA-II generation per group with
sub-individuals evaluated inside a context vector, refines the result with
LSTS and keeps the best N of the union.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from classic_solvers import pseudoinverse_solution
from common_utils import fit_lipschitz
from decision_maker import DecisionTrace, decide
from exceptions import (
    InvalidPartitionError,
    NumericError,
    ParameterError,
    ShapeError,
)
from head_model import SourceSpace
from local_search import ThresholdMode, greedy_support_path, local_search_population
from moea_core import (
    Individual,
    Population,
    PopulationRole,
    VariationSettings,
    environmental_selection,
    nsga2_generation,
    select_survivors,
    sort_population,
)
from moeaar_logger import get_logger
from objectives import ObjectiveVector, PenaltyModel, evaluate, penalty_model

log = get_logger("moeaar")

TELEMETRY_COLUMNS = ("cycle", "best_f0", "front_size", "cv_f0")
KNOWN_FRONT_LIMIT = 100


@dataclass(frozen=True)
class MoeaarConfig:
    iterations: int = 100
    crossover_fraction: float = 0.8
    mutation_fraction: float = 0.5
    penalty: Optional[PenaltyModel] = None  # None -> l0 model
    seed: int = 0
    sigma0_factor: float = 0.1
    clamp_factor: float = 10.0
    ls_max_iter: int = 25
    ls_tol: float = 1e-8
    greedy_support: int = 3

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError(f"iterations must be >= 1, got {self.iterations}")
        for name in ("crossover_fraction", "mutation_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1], got {value}")
        if self.sigma0_factor < 0 or self.clamp_factor <= 0:
            raise ParameterError("sigma0_factor must be >= 0, clamp_factor > 0")
        if self.greedy_support < 0:
            raise ParameterError(
                f"greedy_support must be >= 0, got {self.greedy_support}"
            )

    @property
    def model(self) -> PenaltyModel:
        return self.penalty if self.penalty is not None else penalty_model("l0")


@dataclass
class ContextVector:
    values: np.ndarray
    f0: float = math.inf

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise NumericError("Context vector must be finite")


@dataclass(frozen=True, eq=False)
class SearchProblem:
    """Everything a cycle evaluates against."""

    K: np.ndarray
    V: np.ndarray
    space: SourceSpace
    model: PenaltyModel

    def __post_init__(self):
        if self.K.shape != (self.V.size, self.space.n):
            raise ShapeError(
                f"K {self.K.shape} does not match m={self.V.size}, n={self.space.n}"
            )

    def evaluate(self, values: np.ndarray) -> ObjectiveVector:
        return evaluate(self.K, self.V, values, self.model)


@dataclass(frozen=True)
class TelemetryRow:
    cycle: int
    best_f0: float
    front_size: int
    cv_f0: float


@dataclass(frozen=True, eq=False)
class MoeaarResult:
    front: list[Individual]
    archive: list[ObjectiveVector]
    decision: Individual
    trace: DecisionTrace
    context: ContextVector
    telemetry: list[TelemetryRow] = field(default_factory=list)


def initial_population(
    space: SourceSpace, K: np.ndarray, V: np.ndarray, model: PenaltyModel
) -> Population:
    """One individual per ROI: the pseudoinverse solution restricted to it."""
    problem = SearchProblem(K, V, space, model)
    j_pinv = pseudoinverse_solution(K, V)
    members = []
    for roi, group in enumerate(space.groups):
        if group.size == 0:
            raise InvalidPartitionError(f"ROI {roi} is empty")
        coeffs = np.zeros(space.n)
        coeffs[group] = j_pinv[group]
        individual = Individual(coeffs=coeffs, roi=roi)
        individual.objectives = problem.evaluate(coeffs)
        members.append(individual)
    sort_population(members)
    return Population(members=members, generation=0, role=PopulationRole.CURRENT)


def project_subpopulation(pop: Population, group: np.ndarray) -> Population:
    """Group coordinates of every member, each pointing back to its parent."""
    group = np.asarray(group, dtype=int)
    if group.size == 0:
        raise ParameterError("Cannot project onto an empty group")
    members = [
        Individual(coeffs=member.coeffs[group].copy(), roi=member.roi, parent=index)
        for index, member in enumerate(pop.members)
    ]
    return Population(
        members=members, generation=pop.generation, role=PopulationRole.SUB
    )


def compose(cv: ContextVector, sub: Individual, group: np.ndarray) -> np.ndarray:
    """cv with the group coordinates overwritten by sub."""
    group = np.asarray(group, dtype=int)
    if sub.coeffs.shape != group.shape:
        raise ShapeError(
            f"Sub-individual has {sub.coeffs.size} values for {group.size}"
        )
    if group.size and (group.min() < 0 or group.max() >= cv.values.size):
        raise IndexError(f"Group indices outside 0..{cv.values.size - 1}")
    values = cv.values.copy()
    values[group] = sub.coeffs
    return values


def _group_best(survivors: Sequence[Individual]) -> Individual:
    return min(
        survivors,
        key=lambda member: (member.rank, -member.crowding, member.objectives.f0),
    )


def update_cv(
    cv: ContextVector, best: Individual, group: np.ndarray, problem: SearchProblem
) -> bool:
    """Write best into cv unless the composed data fit gets worse."""
    candidate = compose(cv, best, group)
    f0 = problem.evaluate(candidate).f0
    if f0 > cv.f0:
        return False
    cv.values, cv.f0 = candidate, f0
    return True


def cc_step(
    pop: Population,
    cv: ContextVector,
    problem: SearchProblem,
    settings: VariationSettings,
    rng: np.random.Generator,
) -> tuple[Population, ContextVector]:
    """
    One cooperative pass over the ROI groups in ascending order. Returns the
    reassembled population (same size) and the updated context vector.
    """
    working = list(pop.members)
    for group in problem.space.groups:
        sub = project_subpopulation(Population(working), group)

        def evaluate_sub(member: Individual, group=group) -> ObjectiveVector:
            return problem.evaluate(compose(cv, member, group))

        for member in sub.members:
            member.objectives = evaluate_sub(member)
        survivors = nsga2_generation(sub.members, settings, rng, evaluate_sub)
        update_cv(cv, _group_best(survivors), group, problem)

        reassembled = []
        for survivor in survivors:
            parent = working[survivor.parent]
            coeffs = parent.coeffs.copy()
            coeffs[group] = survivor.coeffs
            individual = Individual(coeffs=coeffs, roi=parent.roi)
            individual.objectives = problem.evaluate(coeffs)
            reassembled.append(individual)
        working = reassembled

    sort_population(working)
    cc = Population(members=working, generation=pop.generation, role=PopulationRole.CC)
    return cc, cv


def as_candidate(values: np.ndarray, problem: SearchProblem) -> Individual:
    """Evaluated full-length individual tagged with the ROI of its peak."""
    coeffs = np.array(values, dtype=float)
    roi = int(problem.space.roi_labels[int(np.argmax(np.abs(coeffs)))])
    individual = Individual(coeffs=coeffs, roi=roi)
    individual.objectives = problem.evaluate(coeffs)
    return individual


def update_known_front(
    known: Sequence[Individual],
    candidates: Sequence[Individual],
    limit: int = KNOWN_FRONT_LIMIT,
) -> list[Individual]:
    """
    Non-dominated copies of known and candidates with exact duplicates dropped;
    past limit the most crowded members go first.
    """
    pool = []
    for member in [*known, *candidates]:
        if not any(np.array_equal(member.coeffs, other.coeffs) for other in pool):
            pool.append(member.copy())
    fronts = sort_population(pool)
    front = [pool[i] for i in fronts[0]] if fronts else []
    if len(front) > limit:
        front = select_survivors(front, limit)
        sort_population(front)
    return front


def write_telemetry(rows: Sequence[TelemetryRow], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as file:
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(TELEMETRY_COLUMNS)
        for row in rows:
            writer.writerow(
                [row.cycle, f"{row.best_f0:.17g}", row.front_size, f"{row.cv_f0:.17g}"]
            )


def run_moeaar(
    K: np.ndarray,
    V: np.ndarray,
    space: SourceSpace,
    config: MoeaarConfig,
    workers: Optional[int] = 1,
    on_cycle: Optional[Callable[[TelemetryRow], None]] = None,
) -> MoeaarResult:
    """
    Search procedure followed by the decision maker. The known front merges
    every cycle's front 0 with the context vector (and, for the L0 model, the
    greedy support path). Output depends only on (K, V, space, config).
    """
    model = config.model
    problem = SearchProblem(K, V, space, model)
    rng = np.random.default_rng(config.seed)
    lipschitz = fit_lipschitz(K)

    pop = initial_population(space, K, V, model)
    size = len(pop)
    seed_member = min(pop.members, key=lambda member: member.objectives.f0)
    cv = ContextVector(seed_member.coeffs, f0=seed_member.objectives.f0)

    peak = max(float(np.abs(member.coeffs).max(initial=0.0)) for member in pop)
    sigma0 = config.sigma0_factor * peak
    clamp = config.clamp_factor * peak if peak > 0 else math.inf

    seeds = [as_candidate(cv.values, problem)]
    if config.greedy_support and ThresholdMode.for_model(model) is ThresholdMode.L0:
        path = greedy_support_path(K, V, config.greedy_support)
        seeds.extend(as_candidate(values, problem) for values in path)
    front = [member for member in pop if member.rank == 0]
    known = update_known_front([], front + seeds)

    telemetry = []
    for cycle in range(config.iterations):
        settings = VariationSettings(
            crossover_fraction=config.crossover_fraction,
            mutation_fraction=config.mutation_fraction,
            sigma=sigma0 * (1.0 - cycle / config.iterations),
            clamp=clamp,
        )
        try:
            pop_cc, cv = cc_step(pop, cv, problem, settings, rng)
            pop_ls = local_search_population(
                pop_cc,
                K,
                V,
                model,
                max_iter=config.ls_max_iter,
                tol=config.ls_tol,
                workers=workers,
                lipschitz=lipschitz,
            )
        except NumericError as ex:
            log.error("Cycle %d produced a non-finite objective: %s", cycle, ex)
            raise
        union = Population(
            members=pop_cc.members + pop_ls.members,
            generation=cycle,
            role=PopulationRole.UNION,
        )
        pop = environmental_selection(union, size)
        front = [member for member in pop if member.rank == 0]
        known = update_known_front(known, front + [as_candidate(cv.values, problem)])

        row = TelemetryRow(
            cycle=cycle,
            best_f0=min(member.objectives.f0 for member in pop),
            front_size=len(known),
            cv_f0=cv.f0,
        )
        telemetry.append(row)
        log.debug(
            "Cycle %d: best f0 %.6g, front %d, cv f0 %.6g",
            row.cycle,
            row.best_f0,
            row.front_size,
            row.cv_f0,
        )
        if on_cycle is not None:
            on_cycle(row)

    decision, trace = decide(known, space.roi_labels, model.l0_epsilon)
    return MoeaarResult(
        front=known,
        archive=[member.objectives for member in known],
        decision=decision,
        trace=trace,
        context=cv,
        telemetry=telemetry,
    )
