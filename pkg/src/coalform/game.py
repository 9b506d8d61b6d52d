"""Participants, coalitions, cost oracles and the pure cost-sharing mechanisms.

Coalitions are sorted tuples of participant ids and coalition structures are
tuples of coalitions ordered by their smallest member.  Costs are floats; an
oracle returns :data:`INFEASIBLE` for coalitions whose cost is unbounded.
"""
from __future__ import annotations

import enum
import math
import threading
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np
from scipy.optimize import minimize

from .errors import (
    DegenerateProportional,
    DegenerateSurplus,
    InfeasibleCoalition,
    NotAMember,
    ValidationError,
)

Coalition = tuple[int, ...]
CoalitionStructure = tuple[Coalition, ...]

# Relative tolerance for cost / payment equality checks.
REL_TOL = 1e-9
# Default threshold for "strictly better" utility comparisons.
DEFAULT_EPSILON = 1e-9


class _Infeasible:
    """Singleton marker for unbounded coalition cost."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INFEASIBLE"

    def __reduce__(self):
        return (_Infeasible, ())


INFEASIBLE = _Infeasible()

Cost = Union[float, _Infeasible]


def is_infeasible(value) -> bool:
    return value is INFEASIBLE


def make_coalition(members: Iterable[int]) -> Coalition:
    coalition = tuple(sorted(set(int(m) for m in members)))
    if not coalition:
        raise ValueError("a coalition must be non-empty")
    if coalition[0] < 0:
        raise ValueError(f"negative participant id in {coalition}")
    return coalition


def make_structure(coalitions: Iterable[Iterable[int]]) -> CoalitionStructure:
    """Canonical form: each coalition sorted, coalitions ordered by first member."""
    return tuple(sorted((make_coalition(c) for c in coalitions), key=lambda c: c[0]))


def validate_structure(structure: CoalitionStructure, n: int, k: int) -> None:
    seen: set[int] = set()
    for coalition in structure:
        if len(coalition) > k:
            raise ValidationError(f"coalition {coalition} exceeds cap K={k}")
        overlap = seen.intersection(coalition)
        if overlap:
            raise ValidationError(f"participants {sorted(overlap)} appear in two coalitions")
        seen.update(coalition)
    if seen != set(range(n)):
        raise ValidationError(f"structure does not cover participants 0..{n - 1}")


def standalone_structure(n: int) -> CoalitionStructure:
    return tuple((i,) for i in range(n))


class CostOracle:
    """Deterministic, memoised map from coalitions to non-negative cost.

    ``fn`` receives a sorted member tuple and returns a float or
    :data:`INFEASIBLE`.  Results are cached; concurrent reads are lock-free and
    insertion is serialised.
    """

    def __init__(
        self,
        n: int,
        fn: Callable[[Coalition], Cost],
        *,
        monotone: bool = False,
        name: str = "oracle",
    ):
        if n < 1:
            raise ValueError("an instance needs at least one participant")
        self.n = n
        self.monotone = monotone
        self.name = name
        self._fn = fn
        self._memo: dict[Coalition, Cost] = {}
        self._lock = threading.Lock()
        self._standalone: np.ndarray | None = None

    def __call__(self, coalition: Sequence[int]) -> Cost:
        return self.evaluate(coalition)

    def evaluate(self, coalition: Sequence[int]) -> Cost:
        key = tuple(coalition)
        try:
            return self._memo[key]
        except KeyError:
            pass
        key = make_coalition(key)
        if key[-1] >= self.n:
            raise ValueError(f"coalition {key} references a participant >= n={self.n}")
        value = self._fn(key)
        if value is not INFEASIBLE:
            value = float(value)
            if not math.isfinite(value):
                raise ValueError(
                    f"{self.name}: non-finite cost {value} for {key}; use INFEASIBLE"
                )
        with self._lock:
            return self._memo.setdefault(key, value)

    @property
    def standalone(self) -> np.ndarray:
        if self._standalone is None:
            costs = []
            for i in range(self.n):
                c = self.evaluate((i,))
                if c is INFEASIBLE:
                    raise ValidationError(f"{self.name}: standalone cost of {i} is infeasible")
                costs.append(c)
            arr = np.asarray(costs, dtype=float)
            if np.any(arr < 0):
                warnings.warn(
                    f"{self.name}: negative standalone costs for participants "
                    f"{np.flatnonzero(arr < 0).tolist()}; stability guarantees assume C_i > 0",
                    stacklevel=2,
                )
            arr.setflags(write=False)
            self._standalone = arr
        return self._standalone

    def structure_cost(self, structure: CoalitionStructure) -> Cost:
        total = 0.0
        for coalition in structure:
            c = self.evaluate(coalition)
            if c is INFEASIBLE:
                return INFEASIBLE
            total += c
        return total


def table_oracle(
    n: int, table: Mapping[Iterable[int], float], *, monotone: bool = False
) -> CostOracle:
    """Oracle backed by an explicit table; unlisted coalitions are infeasible."""
    normalised = {make_coalition(k): v for k, v in table.items()}

    def lookup(coalition: Coalition) -> Cost:
        return normalised.get(coalition, INFEASIBLE)

    return CostOracle(n, lookup, monotone=monotone, name="table")


def additive_oracle(standalone: Sequence[float]) -> CostOracle:
    costs = [float(c) for c in standalone]
    return CostOracle(
        len(costs), lambda g: math.fsum(costs[i] for i in g), monotone=True, name="additive"
    )


@dataclass
class Instance:
    """A coalition-formation game: cost oracle plus coalition size cap."""

    oracle: CostOracle
    k: int
    seed: int | None = None
    label: str = ""

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be at least 1")

    @property
    def n(self) -> int:
        return self.oracle.n


class MechanismKind(enum.Enum):
    EQUAL_SPLIT = "equal"
    PROPORTIONAL_SPLIT = "proportional"
    EGALITARIAN_NASH = "egalitarian"

    @classmethod
    def parse(cls, text: str) -> "MechanismKind":
        aliases = {
            "eq": cls.EQUAL_SPLIT,
            "pp": cls.PROPORTIONAL_SPLIT,
            "ega": cls.EGALITARIAN_NASH,
            "nash": cls.EGALITARIAN_NASH,
            "ns": cls.EGALITARIAN_NASH,
        }
        key = text.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


PURE_MECHANISMS = tuple(MechanismKind)


@dataclass(frozen=True)
class MixedMechanism:
    """A set of constituent pure mechanisms, one of which bills each coalition."""

    constituents: frozenset

    def __init__(self, constituents: Iterable[MechanismKind]):
        kinds = frozenset(constituents)
        if not 1 <= len(kinds) <= len(PURE_MECHANISMS):
            raise ValueError("a mixed mechanism needs 1 to 3 distinct constituents")
        object.__setattr__(self, "constituents", kinds)

    @property
    def ordered(self) -> tuple[MechanismKind, ...]:
        return tuple(k for k in PURE_MECHANISMS if k in self.constituents)

    @property
    def label(self) -> str:
        return "mixed(" + "+".join(k.value for k in self.ordered) + ")"


@dataclass(frozen=True)
class MixedAssignment:
    """Which constituent bills each coalition of one particular structure."""

    structure: CoalitionStructure
    assignment: Mapping[Coalition, MechanismKind] = field(hash=False)
    mechanism: MixedMechanism = field(hash=False)

    def __post_init__(self):
        if set(self.assignment) != set(self.structure):
            raise ValidationError("every coalition of the structure needs exactly one mechanism")
        stray = set(self.assignment.values()) - self.mechanism.constituents
        if stray:
            raise ValidationError(f"assigned mechanisms {stray} are not constituents")

    @property
    def constituents(self) -> frozenset:
        return self.mechanism.constituents

    def kind_of(self, coalition: Coalition) -> MechanismKind:
        return self.assignment[coalition]


def share_vector(kind: MechanismKind, cost: float, standalone: np.ndarray) -> np.ndarray:
    """Payments of the members of one coalition, in member order."""
    size = len(standalone)
    if kind is MechanismKind.EQUAL_SPLIT:
        return np.full(size, cost / size)
    total = math.fsum(standalone)
    if kind is MechanismKind.PROPORTIONAL_SPLIT:
        if total == 0.0:
            raise DegenerateProportional("standalone costs of the coalition sum to zero")
        return standalone * (cost / total)
    surplus = (total - cost) / size
    return standalone - surplus


def payment(kind: MechanismKind, coalition: Sequence[int], oracle: CostOracle) -> dict[int, float]:
    """Budget-balanced payment of each member under a pure mechanism."""
    coalition = make_coalition(coalition)
    cost = oracle.evaluate(coalition)
    if cost is INFEASIBLE:
        raise InfeasibleCoalition(f"coalition {coalition} has unbounded cost")
    shares = share_vector(kind, cost, oracle.standalone[list(coalition)])
    return dict(zip(coalition, shares.tolist()))


def utility(kind: MechanismKind, coalition: Sequence[int], oracle: CostOracle, i: int) -> float:
    """Surplus of ``i`` in ``coalition`` relative to standing alone."""
    coalition = make_coalition(coalition)
    if i not in coalition:
        raise NotAMember(f"participant {i} is not in {coalition}")
    if len(coalition) == 1:
        return 0.0
    return float(oracle.standalone[i] - payment(kind, coalition, oracle)[i])


def budget_balanced(payments: Mapping[int, float], cost: float) -> bool:
    return abs(math.fsum(payments.values()) - cost) <= REL_TOL * max(1.0, abs(cost))


def nash_bargaining_verify(
    coalition: Sequence[int], oracle: CostOracle, tolerance: float = 1e-4
) -> bool:
    """Check numerically that the Nash bargaining payments equal the egalitarian ones.

    The Nash product is maximised directly with SLSQP from an asymmetric
    interior starting point; the egalitarian closed form is never used to
    seed or steer the search.
    """
    coalition = make_coalition(coalition)
    cost = oracle.evaluate(coalition)
    if cost is INFEASIBLE:
        raise InfeasibleCoalition(f"coalition {coalition} has unbounded cost")
    standalone = oracle.standalone[list(coalition)]
    surplus = math.fsum(standalone) - cost
    if surplus <= 0:
        raise DegenerateSurplus(f"coalition {coalition} has total surplus {surplus:.3g} <= 0")

    size = len(coalition)
    weights = np.arange(1, size + 1, dtype=float)
    weights /= weights.sum()
    start = standalone - surplus * weights  # feasible, all utilities > 0

    # Scale so the solver works on O(1) numbers regardless of currency units.
    scale = surplus

    def neg_log_product(p):
        u = (standalone - p * scale) / scale
        if np.any(u <= 0):
            return 1e6
        return -float(np.sum(np.log(u)))

    res = minimize(
        neg_log_product,
        start / scale,
        method="SLSQP",
        constraints=[{"type": "eq", "fun": lambda p: np.sum(p) - cost / scale}],
        options={"ftol": 1e-14, "maxiter": 500},
    )
    found = res.x * scale
    expected = np.array([payment(MechanismKind.EGALITARIAN_NASH, coalition, oracle)[i] for i in coalition])
    return bool(np.max(np.abs(found - expected)) <= tolerance * max(1.0, abs(cost)))


def truncate_cost(oracle: CostOracle) -> CostOracle:
    """Cap every coalition cost at the sum of its members' standalone costs."""

    def truncated(coalition: Coalition) -> Cost:
        cap = math.fsum(oracle.standalone[list(coalition)])
        value = oracle.evaluate(coalition)
        if value is INFEASIBLE or value > cap:
            return cap
        return value

    return CostOracle(
        oracle.n, truncated, monotone=oracle.monotone, name=f"truncated({oracle.name})"
    )
