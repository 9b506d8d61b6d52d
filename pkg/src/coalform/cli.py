"""Experiment runner: build instances, run formation and/or brute force, sweep, report.

Usage::

    coalform run --config experiment.json --out results/
    coalform run --instance energy --n 6 --k 2 --mode both --sweep c_g_plus=0.2,0.25,0.3
    coalform compare --instance random --n 6 --k 3 --seed 11

Reports are written as ``report.json`` (full detail) and ``runs.csv`` (one
row per run).  Output is byte-stable for a fixed config; wall-clock timings
are only included with ``--timing``.  Log verbosity is read from
``COALFORM_LOG_LEVEL``.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

from . import colnform
from .energy import as_cost_oracle
from .errors import CoalformError, NoStableStructure, ValidationError
from .game import (
    DEFAULT_EPSILON,
    Instance,
    MechanismKind,
    MixedMechanism,
    PURE_MECHANISMS,
    table_oracle,
)
from .instances import (
    RandomCostSpec,
    load_scenario,
    load_set_cover,
    random_monotone_oracle,
    set_cover_oracle,
    synthetic_energy_scenario,
)
from .stability import DEFAULT_BUDGET, find_blocking_coalition, social_utility, spoa

log = logging.getLogger("coalform")

Mechanism = Union[MechanismKind, MixedMechanism]
MODES = ("colnform", "brute_force", "both")
SWEEP_PARAMETERS = ("c_g_plus", "battery_capacity", "K")
INSTANCE_KINDS = ("random", "energy", "scenario", "set_cover", "table")
IDENTITY_TOL = 1e-6


def parse_mechanism(text: str) -> Mechanism:
    """``equal``, ``pp``, ``mixed:equal+egalitarian`` and the like."""
    text = text.strip().lower()
    if text.startswith("mixed"):
        body = text[len("mixed"):].strip(":()")
        return MixedMechanism(MechanismKind.parse(part) for part in body.split("+") if part)
    return MechanismKind.parse(text)


def mechanism_label(mechanism: Mechanism) -> str:
    return mechanism.label if isinstance(mechanism, MixedMechanism) else mechanism.value


@dataclass
class ExperimentConfig:
    instance: dict = field(default_factory=lambda: {"kind": "random", "n": 6})
    mechanisms: list = field(default_factory=lambda: list(PURE_MECHANISMS))
    k: int = 2
    mode: str = "both"
    sweep: tuple | None = None  # (parameter, [values])
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    output: str | None = None
    budget: int = DEFAULT_BUDGET
    trace: bool = False
    timing: bool = False

    def __post_init__(self):
        self.mechanisms = [m if isinstance(m, (MechanismKind, MixedMechanism)) else parse_mechanism(m)
                           for m in self.mechanisms]
        if not self.mechanisms:
            raise ValidationError("at least one mechanism is required")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.k < 1:
            raise ValidationError("K must be at least 1")
        kind = self.instance.get("kind")
        if kind not in INSTANCE_KINDS:
            raise ValidationError(f"instance kind must be one of {INSTANCE_KINDS}, got {kind!r}")
        if self.mode == "colnform" and any(isinstance(m, MixedMechanism) for m in self.mechanisms):
            raise ValidationError("mixed mechanisms need mode brute_force or both")
        if self.sweep is not None:
            parameter, values = self.sweep
            if parameter not in SWEEP_PARAMETERS:
                raise ValidationError(f"sweep parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")
            if not values or any(not v > 0 for v in values):
                raise ValidationError("sweep values must be positive")
            if parameter in ("c_g_plus", "battery_capacity") and kind not in ("energy", "scenario"):
                raise ValidationError(f"sweeping {parameter} needs an energy instance")
            if parameter == "K" and any(v != int(v) for v in values):
                raise ValidationError("K sweep values must be integers")
            self.sweep = (parameter, [float(v) for v in values])

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        sweep = data.get("sweep")
        if isinstance(sweep, dict):
            data["sweep"] = (sweep.get("parameter"), list(sweep.get("values", [])))
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "instance": self.instance,
            "mechanisms": [mechanism_label(m) for m in self.mechanisms],
            "k": self.k,
            "mode": self.mode,
            "sweep": None if self.sweep is None else {"parameter": self.sweep[0], "values": self.sweep[1]},
            "epsilon": self.epsilon,
            "seed": self.seed,
            "budget": self.budget,
        }


# -- instance construction ---------------------------------------------------


def _parse_table_costs(costs: dict) -> dict:
    return {tuple(int(x) for x in key.replace(" ", "").split(",") if x != ""): float(v)
            for key, v in costs.items()}


def build_instance(config: ExperimentConfig, sweep_value: float | None = None) -> Instance:
    """Fresh instance (and fresh memo) for one sweep point."""
    spec = config.instance
    kind = spec["kind"]
    k = config.k
    parameter = config.sweep[0] if config.sweep else None
    if parameter == "K":
        k = int(sweep_value)
    seed = int(spec.get("seed", config.seed))

    if kind == "random":
        rc = RandomCostSpec(
            int(spec.get("n", 6)), k, seed,
            tuple(spec.get("standalone_range", (1.0, 10.0))),
            float(spec.get("synergy_factor", 0.5)),
        )
        return random_monotone_oracle(rc)
    if kind == "table":
        oracle = table_oracle(int(spec["n"]), _parse_table_costs(spec["costs"]),
                              monotone=bool(spec.get("monotone", False)))
        return Instance(oracle, k, label="table")
    if kind == "set_cover":
        sc = load_set_cover(spec["path"])
        inst = set_cover_oracle(sc)
        return Instance(inst.oracle, k, label=inst.label)

    if kind == "energy":
        scenario = synthetic_energy_scenario(
            int(spec.get("n", 6)), int(spec.get("horizon", 24)), seed, spec.get("profile_shape", "day_night")
        )
    else:
        scenario = load_scenario(spec["path"])
    if parameter == "c_g_plus":
        scenario = scenario.with_tariffs(c_g_plus=sweep_value)
    elif parameter == "battery_capacity":
        scenario = scenario.with_battery_capacity(sweep_value)
    return Instance(as_cost_oracle(scenario), k, seed=seed, label=f"energy-{kind}")


# -- runs --------------------------------------------------------------------


def _structure_json(structure) -> list:
    return [list(c) for c in structure]


def _number(x):
    if x is None:
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


def _run_one(config: ExperimentConfig, instance: Instance, mechanism: Mechanism,
             sweep_value, traces: list) -> dict:
    label = mechanism_label(mechanism)
    row = {
        "mechanism": label,
        "k": instance.k,
        "n": instance.n,
        "sweep_parameter": config.sweep[0] if config.sweep else None,
        "sweep_value": sweep_value,
        "seed": instance.seed if instance.seed is not None else config.seed,
        "status": "ok",
    }
    started = time.perf_counter()
    standalone_total = math.fsum(instance.oracle.standalone)
    row["standalone_total"] = standalone_total

    outcome = None
    if config.mode in ("colnform", "both") and isinstance(mechanism, MechanismKind):
        result = colnform.run(instance, mechanism, config.epsilon)
        outcome = result.structure
        row["colnform_rounds"] = len(result.trace)
        row["colnform_proposals"] = colnform.total_proposals(result.trace)
        row["preference_entries"] = result.preference_entries
        if config.trace:
            for record in result.trace:
                entry = json.loads(record.to_json())
                entry.update(mechanism=label, sweep_value=sweep_value)
                traces.append(entry)

    if config.mode in ("brute_force", "both"):
        try:
            report = spoa(instance, mechanism, config.epsilon, config.budget)
        except NoStableStructure:
            row["status"] = "no-stable-structure"
            report = None
        if report is not None:
            row.update({key: v for key, v in report.to_dict().items() if key not in ("k", "n")})
            row["optimum"] = _structure_json(report.optimum)
            row["worst_stable"] = _structure_json(report.worst_stable)
            if outcome is None:
                outcome = report.worst_stable
        if outcome is not None and isinstance(mechanism, MechanismKind) and config.mode == "both":
            check = find_blocking_coalition(outcome, mechanism, instance.oracle, instance.k, config.epsilon)
            row["colnform_stable"] = check.is_stable
            if not check.is_stable:
                row["status"] = "unstable-outcome"
                row["blocking_witness"] = list(check.witness)

    if outcome is not None:
        cost = instance.oracle.structure_cost(outcome)
        util = social_utility(instance, outcome)
        row["structure"] = _structure_json(outcome)
        row["social_cost"] = cost
        row["social_utility"] = util
        if abs(util - (standalone_total - cost)) > IDENTITY_TOL * max(1.0, abs(standalone_total)):
            row["status"] = "identity-violation"
    if config.timing:
        row["runtime_s"] = time.perf_counter() - started
    return row


def sweep_points(config: ExperimentConfig) -> list:
    if config.sweep is None:
        return [None]
    return sorted(config.sweep[1])


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every (sweep point, mechanism) pair; failures are collected, not raised."""
    rows, failures, traces = [], [], []
    order = {mechanism_label(m): pos for pos, m in enumerate(config.mechanisms)}
    for value in sweep_points(config):
        try:
            instance = build_instance(config, value)
        except CoalformError as exc:
            for m in config.mechanisms:
                failures.append({"mechanism": mechanism_label(m), "sweep_value": value,
                                 "error": f"{type(exc).__name__}: {exc}"})
            continue
        for mechanism in config.mechanisms:
            try:
                row = _run_one(config, instance, mechanism, value, traces)
            except CoalformError as exc:
                failures.append({"mechanism": mechanism_label(mechanism), "sweep_value": value,
                                 "error": f"{type(exc).__name__}: {exc}"})
                continue
            rows.append(row)
            if row["status"] not in ("ok", "no-stable-structure"):
                failures.append({"mechanism": row["mechanism"], "sweep_value": value, "error": row["status"]})
    rows.sort(key=lambda r: (r["sweep_value"] if r["sweep_value"] is not None else 0.0, order[r["mechanism"]]))
    return {"config": config.to_dict(), "runs": rows, "failures": failures, "traces": traces}


# -- mechanism comparison ----------------------------------------------------


def compare_mechanisms(config: ExperimentConfig) -> dict:
    """Side-by-side SPoA per mechanism plus pairwise worst-stable cost ratios."""
    if config.mode == "colnform":
        raise ValidationError("comparison needs brute force (mode brute_force or both)")
    tables = []
    failures = []
    for value in sweep_points(config):
        instance = build_instance(config, value)
        entries = []
        for mechanism in config.mechanisms:
            label = mechanism_label(mechanism)
            try:
                report = spoa(instance, mechanism, config.epsilon, config.budget)
            except NoStableStructure:
                entries.append({"mechanism": label, "status": "no stable structure"})
                continue
            except CoalformError as exc:
                failures.append({"mechanism": label, "sweep_value": value, "error": f"{type(exc).__name__}: {exc}"})
                entries.append({"mechanism": label, "status": "error"})
                continue
            entries.append({
                "mechanism": label,
                "status": "ok",
                "spoa_cost": report.spoa_cost,
                "spoa_utility": report.spoa_utility,
                "cost_worst_stable": report.cost_worst_stable,
                "cost_opt": report.cost_opt,
                "stable_count": report.stable_count,
            })
        ok = [e for e in entries if e["status"] == "ok"]
        ranked = sorted(ok, key=lambda e: (e["spoa_cost"], e["mechanism"]))
        for rank, e in enumerate(ranked, 1):
            e["rank"] = rank
        ratios = {
            f"{a['mechanism']}/{b['mechanism']}": a["cost_worst_stable"] / b["cost_worst_stable"]
            for a, b in itertools.permutations(ok, 2)
            if b["cost_worst_stable"] > 0
        }
        for e in entries:
            for key in ("spoa_cost", "spoa_utility", "cost_worst_stable", "cost_opt"):
                if key in e:
                    e[key] = _number(e[key])
        tables.append({"sweep_value": value, "k": instance.k, "mechanisms": entries,
                       "ratios": {k: _number(v) for k, v in ratios.items()}})
    return {"config": config.to_dict(), "tables": tables, "failures": failures}


# -- output ------------------------------------------------------------------

CSV_COLUMNS = (
    "sweep_parameter", "sweep_value", "mechanism", "k", "n", "seed", "status",
    "social_cost", "social_utility", "standalone_total", "cost_opt", "utility_opt",
    "cost_worst_stable", "utility_worst_stable", "spoa_cost", "spoa_utility", "stable_count",
    "colnform_stable", "colnform_rounds", "colnform_proposals", "structure", "runtime_s",
)


def _dumps(data) -> str:
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def rows_to_csv(rows: list) -> str:
    columns = [c for c in CSV_COLUMNS if any(c in r for r in rows)] if rows else list(CSV_COLUMNS)
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        flat = dict(row)
        if "structure" in flat:
            flat["structure"] = " ".join("{" + ",".join(map(str, c)) + "}" for c in flat["structure"])
        writer.writerow(flat)
    return buffer.getvalue()


def write_report(report: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    traces = report.get("traces") or []
    body = {k: v for k, v in report.items() if k != "traces"}
    (out / "report.json").write_text(_dumps(body))
    (out / "runs.csv").write_text(rows_to_csv(report["runs"]))
    if traces:
        with (out / "traces.jsonl").open("w") as handle:
            for entry in traces:
                handle.write(json.dumps(entry, sort_keys=True) + "\n")


def format_comparison(result: dict) -> str:
    lines = []
    for table in result["tables"]:
        head = f"K={table['k']}"
        if table["sweep_value"] is not None:
            head += f"  sweep={table['sweep_value']}"
        lines.append(head)
        lines.append(f"  {'mechanism':<32}{'rank':>5}{'spoa_cost':>12}{'spoa_utility':>14}{'stable':>8}")
        for e in table["mechanisms"]:
            if e["status"] != "ok":
                lines.append(f"  {e['mechanism']:<32}  -- {e['status']}")
                continue
            util = e["spoa_utility"]
            util = f"{util:>14.6f}" if isinstance(util, float) else f"{util:>14}"
            lines.append(f"  {e['mechanism']:<32}{e['rank']:>5}{e['spoa_cost']:>12.6f}{util}{e['stable_count']:>8}")
        for pair, ratio in sorted(table["ratios"].items()):
            lines.append(f"  ratio {pair}: {ratio:.6f}" if isinstance(ratio, float) else f"  ratio {pair}: {ratio}")
    return "\n".join(lines) + "\n"


# -- argument handling -------------------------------------------------------


def _parse_sweep(text: str) -> tuple:
    try:
        parameter, values = text.split("=", 1)
        return parameter.strip(), [float(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected PARAM=v1,v2,..., got {text!r}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coalform", description="Coalition formation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run an experiment and write reports"),
                            ("compare", "rank mechanisms by strong price of anarchy")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--mode", choices=MODES)
        p.add_argument("--mechanism", action="append", dest="mechanisms",
                       help="equal, proportional, egalitarian or mixed:a+b (repeatable)")
        p.add_argument("--k", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--budget", type=int, help="cap on enumerated coalition structures")
        p.add_argument("--trace", action="store_true", help="write per-round formation traces")
        p.add_argument("--timing", action="store_true", help="include wall-clock runtimes")
        p.add_argument("--instance", choices=INSTANCE_KINDS, help="instance source (overrides config)")
        p.add_argument("--n", type=int, help="participants for generated instances")
        p.add_argument("--path", help="scenario directory or set-cover JSON")
        p.add_argument("--sweep", type=_parse_sweep, help="PARAM=v1,v2,... with PARAM in c_g_plus, battery_capacity, K")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"{args.config}: cannot read config ({exc})") from exc
    if args.instance is not None:
        data["instance"] = {"kind": args.instance}
    instance = dict(data.get("instance", {"kind": "random"}))
    if args.n is not None:
        instance["n"] = args.n
    if args.path is not None:
        instance["path"] = args.path
    data["instance"] = instance
    for key in ("mode", "mechanisms", "k", "epsilon", "seed", "budget", "sweep"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.trace:
        data["trace"] = True
    if args.timing:
        data["timing"] = True
    if args.out is not None:
        data["output"] = str(args.out)
    return ExperimentConfig.from_dict(data)


def _setup_logging() -> None:
    level = os.environ.get("COALFORM_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except (CoalformError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "compare":
        try:
            result = compare_mechanisms(config)
        except CoalformError as exc:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
        sys.stdout.write(format_comparison(result))
        if config.output:
            out = Path(config.output)
            out.mkdir(parents=True, exist_ok=True)
            (out / "compare.json").write_text(_dumps(result))
        failures = result["failures"]
    else:
        report = run_experiment(config)
        if config.output:
            write_report(report, Path(config.output))
        else:
            sys.stdout.write(_dumps({k: v for k, v in report.items() if k != "traces"}))
            for entry in report["traces"]:
                sys.stdout.write(json.dumps(entry, sort_keys=True) + "\n")
        failures = report["failures"]

    for failure in failures:
        print(f"failed: mechanism={failure['mechanism']} sweep_value={failure['sweep_value']}: "
              f"{failure['error']}", file=sys.stderr)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
