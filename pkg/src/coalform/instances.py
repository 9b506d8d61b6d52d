"""Instance generators and file loaders.

Random generation always goes through ``numpy.random.Generator(PCG64(seed))``
so a recorded seed reproduces an instance bit for bit.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .energy import BatterySpec, EnergyScenario, HouseholdProfile, TariffSpec
from .errors import InstanceTooLarge, ParseError, ValidationError
from .game import INFEASIBLE, Coalition, Cost, CostOracle, Instance

DEFAULT_TABLE_BUDGET = 2_000_000


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


# -- random monotone costs ---------------------------------------------------


@dataclass(frozen=True)
class RandomCostSpec:
    n: int
    k: int
    seed: int
    standalone_range: tuple[float, float] = (1.0, 10.0)
    synergy_factor: float = 0.5

    def __post_init__(self):
        low, high = self.standalone_range
        if not 0 < low <= high:
            raise ValidationError("standalone range must satisfy 0 < low <= high")
        if not 0 <= self.synergy_factor <= 1:
            raise ValidationError("synergy factor must lie in [0, 1]")
        if self.n < 1 or self.k < 1:
            raise ValidationError("need n >= 1 and K >= 1")


def random_monotone_oracle(spec: RandomCostSpec, budget: int = DEFAULT_TABLE_BUDGET) -> Instance:
    """Random instance whose costs are monotone and never exceed the standalone sum.

    Each coalition costs the larger of its most expensive one-smaller subset
    and a random discount of its members' standalone sum.
    """
    n, k = spec.n, min(spec.k, spec.n)
    entries = sum(math.comb(n, s) for s in range(1, k + 1))
    if entries > budget:
        raise InstanceTooLarge(f"{entries} coalitions exceed table budget {budget}")
    rng = rng_for(spec.seed)
    low, high = spec.standalone_range
    standalone = rng.uniform(low, high, size=n)
    table: dict[Coalition, float] = {(i,): float(standalone[i]) for i in range(n)}
    for size in range(2, k + 1):
        for coalition in itertools.combinations(range(n), size):
            sigma = rng.uniform(0.0, spec.synergy_factor)
            floor = max(table[coalition[:j] + coalition[j + 1:]] for j in range(size))
            table[coalition] = max(floor, (1.0 - sigma) * math.fsum(standalone[list(coalition)]))

    def lookup(coalition: Coalition) -> Cost:
        try:
            return table[coalition]
        except KeyError:
            raise ValueError(f"coalition {coalition} is larger than K={k}") from None

    oracle = CostOracle(n, lookup, monotone=True, name=f"random(seed={spec.seed})")
    return Instance(oracle, spec.k, seed=spec.seed, label=f"random-n{n}-k{spec.k}-s{spec.seed}")


def random_corpus(count: int, seed: int = 2024, n_range=(4, 8), k_range=(2, 4),
                  synergy_factor: float = 0.5) -> list[Instance]:
    """Seeded batch of random monotone instances for property checks."""
    rng = rng_for(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        k = int(rng.integers(k_range[0], k_range[1] + 1))
        sub_seed = int(rng.integers(0, 2**63 - 1))
        out.append(random_monotone_oracle(RandomCostSpec(n, k, sub_seed, synergy_factor=synergy_factor)))
    return out


# -- set cover ---------------------------------------------------------------


@dataclass(frozen=True)
class SetCoverInstance:
    universe_size: int
    sets: tuple[tuple[int, ...], ...]
    costs: tuple[float, ...]
    k: int | None = None

    def __post_init__(self):
        sets = tuple(tuple(sorted(set(s))) for s in self.sets)
        object.__setattr__(self, "sets", sets)
        object.__setattr__(self, "costs", tuple(float(c) for c in self.costs))
        if len(sets) != len(self.costs):
            raise ValidationError("sets and costs must have equal length")
        if any(c <= 0 for c in self.costs):
            raise ValidationError("set costs must be positive")
        covered = set().union(*sets) if sets else set()
        if covered != set(range(self.universe_size)):
            raise ValidationError("every universe element must lie in some set, and only those")
        if self.k is not None and any(len(s) > self.k for s in sets):
            raise ValidationError(f"a set exceeds the size cap K={self.k}")

    @property
    def cap(self) -> int:
        return self.k if self.k is not None else max(len(s) for s in self.sets)


def set_cover_oracle(sc: SetCoverInstance) -> Instance:
    """Coalition cost = cheapest set containing the coalition, infeasible if none."""
    containing = [(frozenset(s), c) for s, c in zip(sc.sets, sc.costs)]

    def cost(coalition: Coalition) -> Cost:
        members = set(coalition)
        best = min((c for s, c in containing if members <= s), default=None)
        return INFEASIBLE if best is None else best

    oracle = CostOracle(sc.universe_size, cost, monotone=True, name="set-cover")
    return Instance(oracle, sc.cap, label="set-cover")


def min_set_cover_cost(sc: SetCoverInstance) -> float:
    """Exhaustive minimum-cost cover over all 2^m subcollections."""
    universe = set(range(sc.universe_size))
    best = math.inf
    m = len(sc.sets)
    for mask in range(1, 2**m):
        chosen = [j for j in range(m) if mask >> j & 1]
        if set().union(*(sc.sets[j] for j in chosen)) == universe:
            best = min(best, math.fsum(sc.costs[j] for j in chosen))
    return best


def random_set_cover(universe_size: int, m: int, k: int, seed: int) -> SetCoverInstance:
    """Random sets of size <= k with integer costs; uncovered elements get patched in."""
    rng = rng_for(seed)
    sets = []
    for _ in range(m):
        size = int(rng.integers(1, k + 1))
        sets.append(set(rng.choice(universe_size, size=min(size, universe_size), replace=False).tolist()))
    for e in range(universe_size):
        if any(e in s for s in sets):
            continue
        roomy = [j for j, s in enumerate(sets) if len(s) < k]
        if roomy:
            sets[int(rng.choice(roomy))].add(e)
        else:
            sets.append({e})
    costs = [float(rng.integers(1, 11)) for _ in sets]
    return SetCoverInstance(universe_size, tuple(tuple(s) for s in sets), tuple(costs), k)


def load_set_cover(path: str | Path) -> SetCoverInstance:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read ({exc})") from exc
    try:
        data = json.loads(text)
        return SetCoverInstance(
            int(data["universe_size"]),
            tuple(tuple(int(e) for e in s) for s in data["sets"]),
            tuple(float(c) for c in data["costs"]),
            int(data["k"]) if data.get("k") is not None else None,
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed set-cover instance ({exc})") from exc


# -- energy scenarios --------------------------------------------------------


def synthetic_energy_scenario(
    n: int,
    horizon: int = 24,
    seed: int = 0,
    profile_shape: str = "day_night",
    tariffs: TariffSpec | None = None,
    battery: BatterySpec | None = None,
) -> EnergyScenario:
    """Stand-in household data with default battery and tariff parameters.

    ``flat``: constant demand, no PV.  ``day_night``: PV in the middle half
    of the horizon, demand concentrated at the edges on top of a small base
    load; even-indexed households carry large PV arrays, odd-indexed ones
    small arrays.
    """
    if n < 1 or horizon < 1:
        raise ValidationError("need n >= 1 and T >= 1")
    rng = rng_for(seed)
    battery = battery or BatterySpec()
    t = np.arange(horizon)
    households = []
    if profile_shape == "flat":
        for _ in range(n):
            level = rng.uniform(0.5, 1.5)
            households.append(HouseholdProfile(np.full(horizon, level), np.zeros(horizon), battery))
    elif profile_shape == "day_night":
        phase = (t + 0.5) / horizon
        sun = np.clip(np.sin(2 * np.pi * (phase - 0.25)), 0.0, None)
        edges = (phase < 0.25) | (phase >= 0.75)
        for i in range(n):
            base = rng.uniform(0.1, 0.3)
            edge_load = rng.uniform(0.8, 2.0)
            pv_peak = rng.uniform(1.5, 3.0) if i % 2 == 0 else rng.uniform(0.0, 0.8)
            demand = base + edge_load * edges
            pv = pv_peak * sun
            households.append(HouseholdProfile(demand, pv, battery))
    else:
        raise ValidationError(f"unknown profile shape {profile_shape!r}")
    return EnergyScenario(tuple(households), tariffs or TariffSpec(), slot_duration=24.0 / horizon)


_CSV_COLUMNS = ("slot_index", "demand_kwh", "pv_kwh")
_BATTERY_KEYS = ("capacity", "eta_c", "eta_d", "mu_c", "mu_d")


def _read_household_csv(path: Path, horizon: int) -> tuple[np.ndarray, np.ndarray]:
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise ParseError(f"{path}: cannot open household file ({exc})") from exc
    with handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for column in _CSV_COLUMNS:
            if column not in header:
                raise ParseError(f"{path}: missing column {column!r} (header: {header})")
        demand, pv = [], []
        for row_no, row in enumerate(reader, start=2):
            values = {}
            for column in _CSV_COLUMNS:
                raw = row.get(column)
                try:
                    values[column] = float(raw)
                except (TypeError, ValueError):
                    raise ParseError(f"{path}: row {row_no}, field {column!r}: not a number ({raw!r})") from None
            if values["slot_index"] != len(demand):
                raise ValidationError(
                    f"{path}: row {row_no}, field 'slot_index': expected {len(demand)}, got {row['slot_index']}"
                )
            for column in ("demand_kwh", "pv_kwh"):
                if not math.isfinite(values[column]) or values[column] < 0:
                    raise ValidationError(
                        f"{path}: row {row_no}, field {column!r}: must be finite and >= 0, got {values[column]}"
                    )
            demand.append(values["demand_kwh"])
            pv.append(values["pv_kwh"])
    if len(demand) != horizon:
        raise ValidationError(f"{path}: expected {horizon} data rows, found {len(demand)}")
    return np.array(demand), np.array(pv)


def load_scenario(path: str | Path) -> EnergyScenario:
    """Read ``scenario.json`` plus one CSV per household from a directory."""
    root = Path(path)
    meta_path = root / "scenario.json"
    try:
        meta = json.loads(meta_path.read_text())
    except OSError as exc:
        raise ParseError(f"{meta_path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{meta_path}: invalid JSON ({exc})") from exc

    def field(obj: dict, key: str, where: str, default=None):
        if key not in obj:
            if default is not None:
                return default
            raise ParseError(f"{meta_path}: missing field {where}{key!r}")
        try:
            return float(obj[key])
        except (TypeError, ValueError):
            raise ParseError(f"{meta_path}: field {where}{key!r} is not a number") from None

    horizon = field(meta, "T", "")
    if horizon != int(horizon) or horizon < 1:
        raise ValidationError(f"{meta_path}: field 'T' must be a positive integer")
    horizon = int(horizon)
    slot_duration = field(meta, "slot_duration", "", default=1.0)
    tariffs_meta = meta.get("tariffs", {})
    try:
        tariffs = TariffSpec(*(field(tariffs_meta, key, "tariffs.") for key in ("c_g_plus", "c_g_minus", "c_s")))
    except ValidationError as exc:
        raise ValidationError(f"{meta_path}: tariffs: {exc}") from exc
    houses_meta = meta.get("households")
    if not isinstance(houses_meta, list) or not houses_meta:
        raise ParseError(f"{meta_path}: field 'households' must be a non-empty list")
    households = []
    defaults = BatterySpec()
    for idx, house in enumerate(houses_meta):
        where = f"households[{idx}]."
        bat_meta = house.get("battery", {})
        values = [field(bat_meta, key, where + "battery.", default=getattr(defaults, key)) for key in _BATTERY_KEYS]
        try:
            battery = BatterySpec(*values)
        except ValidationError as exc:
            raise ValidationError(f"{meta_path}: {where}battery: {exc}") from exc
        demand, pv = _read_household_csv(root / house.get("file", f"household_{idx}.csv"), horizon)
        households.append(HouseholdProfile(demand, pv, battery))
    return EnergyScenario(tuple(households), tariffs, slot_duration)


def save_scenario(scenario: EnergyScenario, path: str | Path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    houses = []
    for idx, house in enumerate(scenario.households):
        name = f"household_{idx}.csv"
        with (root / name).open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(_CSV_COLUMNS)
            for t, (a, r) in enumerate(zip(house.demand, house.pv)):
                writer.writerow([t, repr(float(a)), repr(float(r))])
        houses.append({"file": name, "battery": {k: getattr(house.battery, k) for k in _BATTERY_KEYS}})
    meta = {
        "T": scenario.horizon,
        "slot_duration": scenario.slot_duration,
        "tariffs": {
            "c_g_plus": scenario.tariffs.c_g_plus,
            "c_g_minus": scenario.tariffs.c_g_minus,
            "c_s": scenario.tariffs.c_s,
        },
        "households": houses,
    }
    (root / "scenario.json").write_text(json.dumps(meta, indent=2) + "\n")
    return root
