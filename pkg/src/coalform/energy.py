"""Peer-to-peer energy sharing: the coalition dispatch LP used as a cost oracle.

For a coalition of households the LP chooses, per household and slot, how
PV, battery and grid energy serve demand, and how much energy is exchanged
with other members through virtual net metering.  Its optimum is the
coalition cost.  Energy quantities are kWh per slot, prices currency/kWh.

Battery state uses b(0) = 0 as the charge before the first slot; ``soc[t]``
is the charge after slot t and the final charge is left free.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import SolverFailure, ValidationError
from .game import Coalition, CostOracle, make_coalition

log = logging.getLogger(__name__)

# Default parameters of the published evaluation.
DEFAULT_BATTERY_CAPACITY = 9.8
DEFAULT_C_G_PLUS = 0.20
DEFAULT_C_G_MINUS = 0.10
DEFAULT_C_S = 0.00
DEFAULT_ETA_C = 0.95
DEFAULT_ETA_D = 1.05
DEFAULT_MU_C = 5.0
DEFAULT_MU_D = 5.0

# Per-household, per-slot decision variables in LP column order.
VARIABLES = ("soc", "d_a", "d_g", "r_a", "r_b", "r_g", "g_a", "g_b", "g_plus", "g_minus", "s_plus", "s_minus")
_V = {name: k for k, name in enumerate(VARIABLES)}


@dataclass(frozen=True)
class BatterySpec:
    capacity: float = DEFAULT_BATTERY_CAPACITY
    eta_c: float = DEFAULT_ETA_C
    eta_d: float = DEFAULT_ETA_D
    mu_c: float = DEFAULT_MU_C
    mu_d: float = DEFAULT_MU_D

    def __post_init__(self):
        if not self.capacity >= 0:
            raise ValidationError(f"battery capacity must be >= 0, got {self.capacity}")
        if not 0 < self.eta_c <= 1:
            raise ValidationError(f"charging efficiency must lie in (0, 1], got {self.eta_c}")
        if not self.eta_d >= 1:
            raise ValidationError(f"discharging efficiency must be >= 1, got {self.eta_d}")
        if not (self.mu_c >= 0 and self.mu_d >= 0):
            raise ValidationError("charge and discharge limits must be >= 0")


@dataclass(frozen=True)
class TariffSpec:
    c_g_plus: float = DEFAULT_C_G_PLUS
    c_g_minus: float = DEFAULT_C_G_MINUS
    c_s: float = DEFAULT_C_S

    def __post_init__(self):
        if min(self.c_g_plus, self.c_g_minus, self.c_s) < 0:
            raise ValidationError("tariffs must be non-negative")
        if self.c_g_minus > self.c_g_plus:
            raise ValidationError("feed-in tariff cannot exceed the consumption tariff")


@dataclass(frozen=True)
class HouseholdProfile:
    demand: np.ndarray
    pv: np.ndarray
    battery: BatterySpec = field(default_factory=BatterySpec)

    def __post_init__(self):
        demand = np.asarray(self.demand, dtype=float)
        pv = np.asarray(self.pv, dtype=float)
        if demand.ndim != 1 or pv.shape != demand.shape:
            raise ValidationError("demand and pv must be 1-D series of equal length")
        for label, series in (("demand", demand), ("pv", pv)):
            if not np.all(np.isfinite(series)):
                raise ValidationError(f"{label} series has non-finite values")
            if np.any(series < 0):
                raise ValidationError(f"{label} series has negative values")
        demand.setflags(write=False)
        pv.setflags(write=False)
        object.__setattr__(self, "demand", demand)
        object.__setattr__(self, "pv", pv)


@dataclass(frozen=True)
class EnergyScenario:
    households: tuple[HouseholdProfile, ...]
    tariffs: TariffSpec = field(default_factory=TariffSpec)
    slot_duration: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "households", tuple(self.households))
        if not self.households:
            raise ValidationError("a scenario needs at least one household")
        if not self.slot_duration > 0:
            raise ValidationError("slot duration must be positive")
        lengths = {len(h.demand) for h in self.households}
        if len(lengths) != 1 or 0 in lengths:
            raise ValidationError(f"all household series must share one length T >= 1, got {sorted(lengths)}")

    @property
    def horizon(self) -> int:
        return len(self.households[0].demand)

    @property
    def n(self) -> int:
        return len(self.households)

    def with_tariffs(self, **changes) -> "EnergyScenario":
        return replace(self, tariffs=replace(self.tariffs, **changes))

    def with_battery_capacity(self, capacity: float) -> "EnergyScenario":
        households = tuple(replace(h, battery=replace(h.battery, capacity=capacity)) for h in self.households)
        return replace(self, households=households)

    def net_consumers(self) -> bool:
        """True when no household ever produces more PV than it demands in a slot."""
        return all(np.all(h.pv <= h.demand) for h in self.households)


@dataclass(frozen=True)
class DispatchSolution:
    """Optimal dispatch; each field maps a variable name to a (members, T) array."""

    coalition: Coalition
    variables: dict
    objective: float

    def __getitem__(self, name: str) -> np.ndarray:
        return self.variables[name]


def _column(member: int, var: str, t: int, horizon: int) -> int:
    return (member * len(VARIABLES) + _V[var]) * horizon + t


def _build_lp(scenario: EnergyScenario, coalition: Coalition):
    horizon = scenario.horizon
    members = [scenario.households[i] for i in coalition]
    m = len(members)
    n_cols = m * len(VARIABLES) * horizon
    tariffs = scenario.tariffs

    cost = np.zeros(n_cols)
    upper = np.full(n_cols, np.inf)
    eq_rows, eq_cols, eq_vals, eq_rhs = [], [], [], []
    ub_rows, ub_cols, ub_vals, ub_rhs = [], [], [], []

    def add(rows, cols, vals, row, entries):
        for col, val in entries:
            rows.append(row)
            cols.append(col)
            vals.append(val)

    row = 0
    ub_row = 0
    for k, house in enumerate(members):
        bat = house.battery
        col = lambda var, t: _column(k, var, t, horizon)  # noqa: E731
        for t in range(horizon):
            cost[col("g_plus", t)] = tariffs.c_g_plus
            cost[col("g_minus", t)] = -tariffs.c_g_minus
            cost[col("s_plus", t)] = tariffs.c_s
            upper[col("soc", t)] = bat.capacity

            # state of charge
            entries = [
                (col("soc", t), 1.0),
                (col("r_b", t), -bat.eta_c),
                (col("g_b", t), -bat.eta_c),
                (col("d_a", t), bat.eta_d),
                (col("d_g", t), bat.eta_d),
            ]
            if t > 0:
                entries.append((col("soc", t - 1), -1.0))
            add(eq_rows, eq_cols, eq_vals, row, entries)
            eq_rhs.append(0.0)
            row += 1
            # demand balance
            add(eq_rows, eq_cols, eq_vals, row, [(col("d_a", t), 1.0), (col("g_a", t), 1.0), (col("r_a", t), 1.0)])
            eq_rhs.append(float(house.demand[t]))
            row += 1
            # PV split
            add(eq_rows, eq_cols, eq_vals, row, [(col("r_a", t), 1.0), (col("r_b", t), 1.0), (col("r_g", t), 1.0)])
            eq_rhs.append(float(house.pv[t]))
            row += 1
            # import split
            add(eq_rows, eq_cols, eq_vals, row,
                [(col("g_a", t), 1.0), (col("g_b", t), 1.0), (col("g_plus", t), -1.0), (col("s_plus", t), -1.0)])
            eq_rhs.append(0.0)
            row += 1
            # export split
            add(eq_rows, eq_cols, eq_vals, row,
                [(col("d_g", t), 1.0), (col("r_g", t), 1.0), (col("g_minus", t), -1.0), (col("s_minus", t), -1.0)])
            eq_rhs.append(0.0)
            row += 1
            # charge / discharge rate limits
            add(ub_rows, ub_cols, ub_vals, ub_row, [(col("g_b", t), 1.0), (col("r_b", t), 1.0)])
            ub_rhs.append(bat.mu_c)
            ub_row += 1
            add(ub_rows, ub_cols, ub_vals, ub_row, [(col("d_a", t), 1.0), (col("d_g", t), 1.0)])
            ub_rhs.append(bat.mu_d)
            ub_row += 1

    # virtual net metering balances inside the coalition
    for t in range(horizon):
        entries = []
        for k in range(m):
            entries.append((_column(k, "s_plus", t, horizon), 1.0))
            entries.append((_column(k, "s_minus", t, horizon), -1.0))
        add(eq_rows, eq_cols, eq_vals, row, entries)
        eq_rhs.append(0.0)
        row += 1

    a_eq = sp.csr_matrix((eq_vals, (eq_rows, eq_cols)), shape=(row, n_cols))
    a_ub = sp.csr_matrix((ub_vals, (ub_rows, ub_cols)), shape=(ub_row, n_cols))
    bounds = np.column_stack([np.zeros(n_cols), upper])
    return cost, a_ub, np.asarray(ub_rhs), a_eq, np.asarray(eq_rhs), bounds


def coalition_cost(scenario: EnergyScenario, coalition: Sequence[int]) -> tuple[float, DispatchSolution]:
    """Minimum operating cost of a coalition and the dispatch achieving it."""
    coalition = make_coalition(coalition)
    if coalition[-1] >= scenario.n:
        raise ValueError(f"coalition {coalition} references a household >= {scenario.n}")
    cost, a_ub, b_ub, a_eq, b_eq, bounds = _build_lp(scenario, coalition)
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise SolverFailure(f"LP for coalition {coalition} failed: {res.message}")
    x = np.maximum(res.x, 0.0)
    shaped = x.reshape(len(coalition), len(VARIABLES), scenario.horizon)
    variables = {name: shaped[:, k, :].copy() for k, name in enumerate(VARIABLES)}
    objective = float(cost @ x)
    return objective, DispatchSolution(coalition, variables, objective)


def dispatch_violations(
    scenario: EnergyScenario, solution: DispatchSolution, tol: float = 1e-6
) -> list[str]:
    """Every dispatch constraint the solution breaks by more than ``tol`` (empty if valid)."""
    problems = []
    v = solution.variables
    tariffs = scenario.tariffs

    def check(label: str, residual: np.ndarray):
        worst = float(np.max(np.abs(residual))) if residual.size else 0.0
        if worst > tol:
            problems.append(f"{label}: residual {worst:.3g}")

    for name in VARIABLES:
        if np.any(v[name] < -tol):
            problems.append(f"{name} negative")
    for k, i in enumerate(solution.coalition):
        house = scenario.households[i]
        bat = house.battery
        soc = v["soc"][k]
        prev = np.concatenate([[0.0], soc[:-1]])
        check(f"household {i} state of charge",
              soc - prev - bat.eta_c * (v["r_b"][k] + v["g_b"][k]) + bat.eta_d * (v["d_a"][k] + v["d_g"][k]))
        if np.any(soc > bat.capacity + tol):
            problems.append(f"household {i} battery over capacity")
        if np.any(v["g_b"][k] + v["r_b"][k] > bat.mu_c + tol):
            problems.append(f"household {i} charge rate exceeded")
        if np.any(v["d_a"][k] + v["d_g"][k] > bat.mu_d + tol):
            problems.append(f"household {i} discharge rate exceeded")
        check(f"household {i} demand balance", v["d_a"][k] + v["g_a"][k] + v["r_a"][k] - house.demand)
        check(f"household {i} PV split", v["r_a"][k] + v["r_b"][k] + v["r_g"][k] - house.pv)
        check(f"household {i} import split", v["g_a"][k] + v["g_b"][k] - v["g_plus"][k] - v["s_plus"][k])
        check(f"household {i} export split", v["d_g"][k] + v["r_g"][k] - v["g_minus"][k] - v["s_minus"][k])
    check("net-metering balance", v["s_plus"].sum(axis=0) - v["s_minus"].sum(axis=0))
    objective = float(np.sum(tariffs.c_g_plus * v["g_plus"] - tariffs.c_g_minus * v["g_minus"] + tariffs.c_s * v["s_plus"]))
    if abs(objective - solution.objective) > tol:
        problems.append(f"objective mismatch: {objective} vs {solution.objective}")
    return problems


def standalone_costs(scenario: EnergyScenario) -> np.ndarray:
    return np.array([coalition_cost(scenario, (i,))[0] for i in range(scenario.n)])


def as_cost_oracle(scenario: EnergyScenario, *, check_subadditive: bool = True) -> CostOracle:
    """Memoised LP-backed cost oracle.

    Every evaluated multi-member coalition is checked against the
    replication bound C(G) <= sum of member standalone costs.  The oracle is
    declared monotone only when every household is a per-slot net consumer
    and has positive standalone cost; energy sharing is not monotone in
    general.
    """
    standalone: dict[int, float] = {}

    def evaluate(coalition: Coalition) -> float:
        value, _ = coalition_cost(scenario, coalition)
        if len(coalition) == 1:
            standalone[coalition[0]] = value
        elif check_subadditive:
            cap = math.fsum(oracle.evaluate((i,)) for i in coalition)
            if value > cap + 1e-6:
                raise SolverFailure(f"coalition {coalition} costs {value} > standalone sum {cap}")
        return value

    oracle = CostOracle(scenario.n, evaluate, monotone=False, name="energy-lp")
    if scenario.net_consumers() and np.all(oracle.standalone > 0):
        oracle.monotone = True
    return oracle
