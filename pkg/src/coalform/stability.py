"""Exhaustive desk-scale analysis: structures, blocking coalitions, optima, SPoA, cycles.

Everything here is brute force and meant for small instances (n up to ~12).
Utilities for every coalition of size at most K are tabulated once per
instance and mechanism; the per-structure blocking scan then runs in the
compiled kernel (or its numpy fallback, see :mod:`coalform.kernels`).
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterator, Mapping, Sequence, Union

import networkx as nx
import numpy as np

from . import kernels
from .errors import BoundViolation, DegenerateProportional, InstanceTooLarge, NoStableStructure
from .game import (
    DEFAULT_EPSILON,
    INFEASIBLE,
    Coalition,
    CoalitionStructure,
    CostOracle,
    Instance,
    MechanismKind,
    MixedAssignment,
    MixedMechanism,
    share_vector,
    validate_structure,
)

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 10**7
DEFAULT_CYCLE_LENGTH = 6

Mechanism = Union[MechanismKind, MixedMechanism]


# -- structure enumeration ---------------------------------------------------


@lru_cache(maxsize=None)
def count_structures(n: int, k: int) -> int:
    """Number of partitions of ``n`` labelled items into blocks of size <= k."""
    if n == 0:
        return 1
    return sum(math.comb(n - 1, j - 1) * count_structures(n - j, k) for j in range(1, min(k, n) + 1))


def _check_budget(n: int, k: int, budget: int) -> int:
    if n < 1 or k < 1:
        raise ValueError("need n >= 1 and K >= 1")
    count = count_structures(n, k)
    if count > budget:
        raise InstanceTooLarge(
            f"{count} coalition structures for n={n}, K={k} exceeds budget {budget}"
        )
    return count


def _labelings(n: int, k: int) -> Iterator[list[int]]:
    """Restricted growth strings with block sizes <= k, in decreasing lexicographic order.

    The all-singletons structure comes first and the grand coalition (when
    allowed) last.
    """
    labels = [0] * n
    sizes = [0] * n

    def rec(pos: int, blocks: int):
        if pos == n:
            yield labels
            return
        for b in range(blocks, -1, -1):
            if sizes[b] < k:
                labels[pos] = b
                sizes[b] += 1
                yield from rec(pos + 1, max(blocks, b + 1))
                sizes[b] -= 1

    yield from rec(0, 0)


def _structure_from_labels(labels: Sequence[int]) -> CoalitionStructure:
    blocks: dict[int, list[int]] = {}
    for i, b in enumerate(labels):
        blocks.setdefault(b, []).append(i)
    return tuple(tuple(members) for _, members in sorted(blocks.items()))


def enumerate_structures(n: int, k: int, budget: int = DEFAULT_BUDGET) -> Iterator[CoalitionStructure]:
    """Yield every partition of ``0..n-1`` with blocks of size <= k exactly once."""
    _check_budget(n, k, budget)
    for labels in _labelings(n, k):
        yield _structure_from_labels(labels)


# -- tabulated game ----------------------------------------------------------


class GameTable:
    """All coalitions of size <= K with their costs and per-mechanism utilities.

    Coalitions are ordered by size, then lexicographically; this is also the
    order in which blocking coalitions are searched.
    """

    def __init__(self, oracle: CostOracle, k: int):
        self.oracle = oracle
        self.k = k
        self.n = oracle.n
        self.coalitions: list[Coalition] = [
            c for size in range(1, min(k, self.n) + 1) for c in itertools.combinations(range(self.n), size)
        ]
        self.index = {c: idx for idx, c in enumerate(self.coalitions)}
        width = max(len(c) for c in self.coalitions)
        self.members = np.full((len(self.coalitions), width), -1, dtype=np.int64)
        for idx, c in enumerate(self.coalitions):
            self.members[idx, : len(c)] = c
        self.sizes = np.array([len(c) for c in self.coalitions], dtype=np.int64)
        raw = [oracle.evaluate(c) for c in self.coalitions]
        self.feasible = np.array([v is not INFEASIBLE for v in raw])
        self.costs = np.array([math.inf if v is INFEASIBLE else v for v in raw], dtype=float)
        self.standalone = oracle.standalone
        self._utilities: dict[MechanismKind, np.ndarray] = {}
        self._space: StructureSpace | None = None

    def utilities(self, kind: MechanismKind) -> np.ndarray:
        """(C, n) matrix; entry [c, i] is u_i(c) for members, 0 elsewhere.

        Infeasible coalitions carry -inf for their members.  Under
        proportional split a coalition whose standalone costs sum to zero
        yields zero utility if its cost is zero and -inf otherwise.
        """
        cached = self._utilities.get(kind)
        if cached is not None:
            return cached
        util = np.zeros((len(self.coalitions), self.n))
        for idx, c in enumerate(self.coalitions):
            if len(c) == 1:
                continue
            cols = list(c)
            if not self.feasible[idx]:
                util[idx, cols] = -math.inf
                continue
            alone = self.standalone[cols]
            try:
                util[idx, cols] = alone - share_vector(kind, self.costs[idx], alone)
            except DegenerateProportional:
                util[idx, cols] = 0.0 if self.costs[idx] == 0 else -math.inf
        util.setflags(write=False)
        self._utilities[kind] = util
        return util

    def utility_stack(self, kinds: Sequence[MechanismKind]) -> np.ndarray:
        return np.ascontiguousarray(np.stack([self.utilities(k) for k in kinds]))

    def space(self, budget: int = DEFAULT_BUDGET) -> "StructureSpace":
        if self._space is None:
            self._space = StructureSpace(self, budget)
        elif self._space.count > budget:
            _check_budget(self.n, self.k, budget)
        return self._space


def game_table(oracle: CostOracle, k: int) -> GameTable:
    """Per-oracle cache of :class:`GameTable` keyed by K."""
    tables = oracle.__dict__.setdefault("_game_tables", {})
    table = tables.get(k)
    if table is None:
        table = tables[k] = GameTable(oracle, k)
    return table


class StructureSpace:
    """Every feasible structure of a table, as coalition indices per participant."""

    def __init__(self, table: GameTable, budget: int):
        self.count = _check_budget(table.n, table.k, budget)
        n = table.n
        self.structures: list[CoalitionStructure] = []
        self.block_of = np.empty((self.count, n), dtype=np.int64)
        self.costs = np.empty(self.count)
        for s, labels in enumerate(_labelings(n, table.k)):
            structure = _structure_from_labels(labels)
            self.structures.append(structure)
            total = 0.0
            for coalition in structure:
                idx = table.index[coalition]
                self.block_of[s, list(coalition)] = idx
                total += table.costs[idx]
            self.costs[s] = total

    def current_utilities(self, util: np.ndarray) -> np.ndarray:
        return np.ascontiguousarray(util[self.block_of, np.arange(util.shape[1])])


# -- stability ---------------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    is_stable: bool
    witness: Coalition | None
    epsilon: float
    witness_mechanism: MechanismKind | None = None

    def __post_init__(self):
        if self.is_stable != (self.witness is None):
            raise ValueError("is_stable must be true exactly when no witness exists")


def _current_for_assignment(
    table: GameTable, structure: CoalitionStructure, kind_of: Callable[[Coalition], MechanismKind]
) -> np.ndarray:
    cur = np.zeros(table.n)
    for coalition in structure:
        idx = table.index[coalition]
        cols = list(coalition)
        cur[cols] = table.utilities(kind_of(coalition))[idx, cols]
    return cur


def find_blocking_coalition(
    structure: CoalitionStructure,
    mechanism: MechanismKind | MixedAssignment,
    oracle: CostOracle,
    k: int,
    epsilon: float = DEFAULT_EPSILON,
) -> StabilityReport:
    """First coalition (by size, then lexicographic) whose members all strictly gain.

    For a :class:`MixedAssignment` current utilities follow the assignment
    and candidates are tested under every constituent mechanism.
    """
    validate_structure(structure, oracle.n, k)
    table = game_table(oracle, k)
    if isinstance(mechanism, MixedAssignment):
        kinds = mechanism.mechanism.ordered
        cur = _current_for_assignment(table, structure, mechanism.kind_of)
    else:
        kinds = (mechanism,)
        cur = _current_for_assignment(table, structure, lambda _: mechanism)
    util = table.utility_stack(kinds)
    idx = kernels.first_blocking(table.members, table.sizes, util, cur, float(epsilon))
    if idx < 0:
        return StabilityReport(True, None, epsilon)
    coalition = table.coalitions[idx]
    cols = list(coalition)
    layer = next(m for m, kind in enumerate(kinds) if np.all(util[m, idx, cols] > cur[cols] + epsilon))
    return StabilityReport(False, coalition, epsilon, kinds[layer])


def _assignments(structure: CoalitionStructure, mechanism: MixedMechanism) -> Iterator[dict]:
    """All ways to bill the structure's coalitions; singletons get the first constituent."""
    kinds = mechanism.ordered
    shared = [c for c in structure if len(c) > 1]
    for combo in itertools.product(kinds, repeat=len(shared)):
        assignment = {c: kinds[0] for c in structure if len(c) == 1}
        assignment.update(zip(shared, combo))
        yield assignment


def stable_assignments(
    instance: Instance, mechanism: MixedMechanism, structure: CoalitionStructure,
    epsilon: float = DEFAULT_EPSILON,
) -> list[MixedAssignment]:
    """Assignments of constituents under which ``structure`` has no blocking coalition."""
    found = []
    for assignment in _assignments(structure, mechanism):
        mixed = MixedAssignment(structure, assignment, mechanism)
        if find_blocking_coalition(structure, mixed, instance.oracle, instance.k, epsilon).is_stable:
            found.append(mixed)
    return found


def _stable_indices(
    instance: Instance, mechanism: Mechanism, epsilon: float, budget: int
) -> tuple[GameTable, StructureSpace, np.ndarray]:
    table = game_table(instance.oracle, instance.k)
    space = table.space(budget)
    if isinstance(mechanism, MechanismKind):
        util = table.utilities(mechanism)
        cur = space.current_utilities(util)
        first = kernels.scan_blocking(table.members, table.sizes, util[None], cur, float(epsilon))
        return table, space, np.flatnonzero(first < 0)

    kinds = mechanism.ordered
    stack = table.utility_stack(kinds)
    rows, owners = [], []
    for s, structure in enumerate(space.structures):
        for assignment in _assignments(structure, mechanism):
            rows.append(_current_for_assignment(table, structure, assignment.__getitem__))
            owners.append(s)
    cur = np.ascontiguousarray(np.array(rows).reshape(len(rows), table.n))
    first = kernels.scan_blocking(table.members, table.sizes, stack, cur, float(epsilon))
    stable = np.unique(np.asarray(owners)[first < 0])
    return table, space, stable


def enumerate_stable_structures(
    instance: Instance,
    mechanism: Mechanism,
    epsilon: float = DEFAULT_EPSILON,
    budget: int = DEFAULT_BUDGET,
) -> list[CoalitionStructure]:
    """All stable structures, in canonical enumeration order.

    For a mixed mechanism a structure is listed when at least one assignment
    of constituents makes it stable; the result may then be empty.
    """
    _, space, stable = _stable_indices(instance, mechanism, epsilon, budget)
    return [space.structures[s] for s in stable]


def social_optimum(instance: Instance, budget: int = DEFAULT_BUDGET) -> tuple[CoalitionStructure, float]:
    """Minimum-cost structure; the first in canonical order wins near-ties."""
    table = game_table(instance.oracle, instance.k)
    space = table.space(budget)
    best = float(np.min(space.costs))
    if math.isinf(best):
        raise InstanceTooLarge("every coalition structure has infeasible cost")
    slack = 1e-12 * max(1.0, abs(best))
    s = int(np.flatnonzero(space.costs <= best + slack)[0])
    return space.structures[s], float(space.costs[s])


def social_utility(instance: Instance, structure: CoalitionStructure) -> float:
    """Total surplus of a structure, Σ C_i − C(P), valid for any budget-balanced rule."""
    return float(math.fsum(instance.oracle.standalone) - instance.oracle.structure_cost(structure))


# -- strong price of anarchy -------------------------------------------------


@dataclass(frozen=True)
class SpoaReport:
    """Single-instance SPoA figures.

    These are empirical lower bounds on the worst case over all instances,
    not the supremum itself.
    """

    cost_opt: float
    cost_worst_stable: float
    utility_opt: float
    utility_worst_stable: float
    spoa_cost: float
    spoa_utility: float
    stable_count: int
    k: int
    n: int
    optimum: CoalitionStructure = ()
    worst_stable: CoalitionStructure = ()

    def to_dict(self) -> dict:
        def num(x: float):
            if math.isinf(x):
                return "inf" if x > 0 else "-inf"
            if math.isnan(x):
                return "nan"
            return x

        return {
            "cost_opt": num(self.cost_opt),
            "cost_worst_stable": num(self.cost_worst_stable),
            "utility_opt": num(self.utility_opt),
            "utility_worst_stable": num(self.utility_worst_stable),
            "spoa_cost": num(self.spoa_cost),
            "spoa_utility": num(self.spoa_utility),
            "stable_count": self.stable_count,
            "k": self.k,
            "n": self.n,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _ratio(numerator: float, denominator: float, scale: float) -> float:
    zero = 1e-9 * max(1.0, scale)
    if abs(denominator) <= zero:
        return 1.0 if abs(numerator) <= zero else math.inf
    if denominator < 0:
        return math.nan
    return numerator / denominator


def spoa(
    instance: Instance,
    mechanism: Mechanism,
    epsilon: float = DEFAULT_EPSILON,
    budget: int = DEFAULT_BUDGET,
) -> SpoaReport:
    """Worst stable structure versus the social optimum, in cost and utility terms.

    ``spoa_utility`` is +inf when the worst stable structure has zero social
    utility while the optimum has positive utility, and 1 when both are zero.
    """
    table, space, stable = _stable_indices(instance, mechanism, epsilon, budget)
    if stable.size == 0:
        label = mechanism.label if isinstance(mechanism, MixedMechanism) else mechanism.value
        raise NoStableStructure(f"no stable coalition structure under {label}")
    opt_structure, cost_opt = social_optimum(instance, budget)
    worst = int(stable[np.argmax(space.costs[stable])])
    cost_worst = float(space.costs[worst])
    total_alone = float(math.fsum(table.standalone))
    utility_opt = total_alone - cost_opt
    utility_worst = total_alone - cost_worst

    if cost_opt <= 0:
        spoa_cost = 1.0 if cost_worst == cost_opt else math.nan
    else:
        spoa_cost = cost_worst / cost_opt
    report = SpoaReport(
        cost_opt=cost_opt,
        cost_worst_stable=cost_worst,
        utility_opt=utility_opt,
        utility_worst_stable=utility_worst,
        spoa_cost=spoa_cost,
        spoa_utility=_ratio(utility_opt, utility_worst, total_alone),
        stable_count=int(stable.size),
        k=instance.k,
        n=instance.n,
        optimum=opt_structure,
        worst_stable=space.structures[worst],
    )
    if instance.oracle.monotone and cost_opt > 0 and spoa_cost > instance.k + 1e-9:
        raise BoundViolation(
            f"SPoA {spoa_cost} exceeds K={instance.k} on an instance declared monotone"
        )
    return report


# -- cyclic preferences ------------------------------------------------------


@dataclass(frozen=True)
class CyclicPreferenceWitness:
    """Participants i_1..i_t and coalitions G_1..G_t with u_{i_k}(G_{k+1}) > u_{i_k}(G_k)."""

    participants: tuple[int, ...]
    coalitions: tuple[Coalition, ...]

    def holds(self, utility: Callable[[int, Coalition], float], epsilon: float = 0.0) -> bool:
        t = len(self.coalitions)
        for step, i in enumerate(self.participants):
            here, there = self.coalitions[step], self.coalitions[(step + 1) % t]
            if i not in here or i not in there:
                return False
            if not utility(i, there) > utility(i, here) + epsilon:
                return False
        return True


def find_cycle_in_utilities(
    utilities: Mapping[tuple[int, Coalition], float],
    max_length: int = DEFAULT_CYCLE_LENGTH,
    epsilon: float = 0.0,
) -> CyclicPreferenceWitness | None:
    """Search a raw utility table ``{(i, G): u_i(G)}`` for a cyclic preference."""
    by_participant: dict[int, list[Coalition]] = {}
    for i, coalition in utilities:
        by_participant.setdefault(i, []).append(tuple(coalition))
    graph = nx.DiGraph()
    for i in sorted(by_participant):
        for here, there in itertools.permutations(sorted(by_participant[i]), 2):
            if utilities[(i, there)] > utilities[(i, here)] + epsilon and not graph.has_edge(here, there):
                graph.add_edge(here, there, participant=i)
    for cycle in nx.simple_cycles(graph, length_bound=max_length):
        start = cycle.index(min(cycle))
        cycle = cycle[start:] + cycle[:start]
        t = len(cycle)
        participants = tuple(graph.edges[cycle[s], cycle[(s + 1) % t]]["participant"] for s in range(t))
        return CyclicPreferenceWitness(participants, tuple(cycle))
    return None


def find_cyclic_preference(
    instance: Instance,
    mechanism: MechanismKind,
    max_length: int = DEFAULT_CYCLE_LENGTH,
    epsilon: float = DEFAULT_EPSILON,
) -> CyclicPreferenceWitness | None:
    """Cyclic preference over feasible coalitions of size <= K, if one exists."""
    table = game_table(instance.oracle, instance.k)
    util = table.utilities(mechanism)
    utilities = {
        (i, c): float(util[idx, i])
        for idx, c in enumerate(table.coalitions)
        if table.feasible[idx]
        for i in c
    }
    return find_cycle_in_utilities(utilities, max_length, epsilon)
