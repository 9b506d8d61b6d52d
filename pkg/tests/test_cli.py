import csv
import json

import pytest

from coalform.cli import (
    ExperimentConfig,
    compare_mechanisms,
    main,
    parse_mechanism,
    run_experiment,
)
from coalform.errors import ValidationError
from coalform.game import MechanismKind, MixedMechanism

THREE_PLAYER = {
    "kind": "table", "n": 3,
    "costs": {"0": 1.0, "1": 1.0, "2": 1.0, "0,1": 1.0, "0,2": 1.4, "1,2": 1.8},
}
NO_MIXED_STABLE = {
    "kind": "table", "n": 4, "monotone": True,
    "costs": {"0": 9.38, "1": 8.35, "2": 1.59, "3": 8.56, "0,1": 13.67, "0,2": 9.92,
              "0,3": 13.45, "1,2": 8.35, "1,3": 12.93, "2,3": 8.89},
}


def test_parse_mechanism():
    assert parse_mechanism("ega") is MechanismKind.EGALITARIAN_NASH
    mixed = parse_mechanism("mixed:equal+egalitarian")
    assert isinstance(mixed, MixedMechanism) and len(mixed.constituents) == 2
    assert parse_mechanism("mixed(pp+eq)").label == "mixed(equal+proportional)"


def test_both_modes_agree_on_three_players():
    report = run_experiment(ExperimentConfig(instance=THREE_PLAYER, mechanisms=["equal"], k=2))
    (row,) = report["runs"]
    assert row["structure"] == [[0, 1], [2]]
    assert row["colnform_stable"] is True
    assert row["stable_count"] == 1
    assert report["failures"] == []


def test_rows_satisfy_cost_utility_identity():
    report = run_experiment(ExperimentConfig(instance={"kind": "random", "n": 6}, k=3, seed=4))
    assert len(report["runs"]) == 3
    for row in report["runs"]:
        assert row["social_utility"] == pytest.approx(row["standalone_total"] - row["social_cost"], abs=1e-6)


def test_sweep_rows_ordered_and_rebuilt():
    config = ExperimentConfig(
        instance={"kind": "energy", "n": 4, "horizon": 8},
        mechanisms=["egalitarian", "equal"], k=2, mode="colnform",
        sweep=("c_g_plus", [0.30, 0.20, 0.25]),
    )
    rows = run_experiment(config)["runs"]
    assert [(r["sweep_value"], r["mechanism"]) for r in rows] == [
        (0.2, "egalitarian"), (0.2, "equal"), (0.25, "egalitarian"),
        (0.25, "equal"), (0.3, "egalitarian"), (0.3, "equal"),
    ]
    totals = [r["standalone_total"] for r in rows[::2]]
    assert totals == sorted(totals) and totals[0] < totals[-1]


def test_k_sweep():
    config = ExperimentConfig(instance={"kind": "random", "n": 5}, mechanisms=["pp"], mode="brute_force",
                              sweep=("K", [2, 3]))
    assert [r["k"] for r in run_experiment(config)["runs"]] == [2, 3]


def test_config_validation():
    with pytest.raises(ValidationError):
        ExperimentConfig(mode="fast")
    with pytest.raises(ValidationError):
        ExperimentConfig(sweep=("c_g_plus", [0.2]))  # random instance has no tariff
    with pytest.raises(ValidationError):
        ExperimentConfig(instance={"kind": "energy"}, sweep=("battery_capacity", [-1.0]))
    with pytest.raises(ValidationError):
        ExperimentConfig(mechanisms=["mixed:eq+ega"], mode="colnform")
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"colour": "red"})


def test_compare_flags_missing_stable_structure():
    config = ExperimentConfig(instance=NO_MIXED_STABLE,
                              mechanisms=["equal", "proportional", "egalitarian", "mixed:equal+egalitarian"])
    (table,) = compare_mechanisms(config)["tables"]
    status = {e["mechanism"]: e["status"] for e in table["mechanisms"]}
    assert status == {"equal": "ok", "proportional": "ok", "egalitarian": "ok",
                      "mixed(equal+egalitarian)": "no stable structure"}
    for entry in table["mechanisms"]:
        if entry["status"] == "ok":
            assert entry["cost_worst_stable"] / entry["cost_opt"] >= 1 - 1e-9


def test_compare_on_energy_scenario():
    config = ExperimentConfig(instance={"kind": "energy", "n": 6, "horizon": 12}, k=2)
    (table,) = compare_mechanisms(config)["tables"]
    assert [e["mechanism"] for e in table["mechanisms"]] == ["equal", "proportional", "egalitarian"]
    assert len(table["ratios"]) == 6


def test_cli_writes_byte_stable_reports(tmp_path, capsys):
    args = ["run", "--instance", "energy", "--n", "4", "--k", "2", "--sweep", "battery_capacity=4.5,9.8",
            "--trace", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("report.json", "runs.csv", "traces.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.DictReader((tmp_path / "a" / "runs.csv").open()))
    assert len(rows) == 6
    first = json.loads((tmp_path / "a" / "traces.jsonl").read_text().splitlines()[0])
    assert first["round_index"] == 1 and "mechanism" in first


def test_cli_config_file(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"instance": THREE_PLAYER, "mechanisms": ["eq", "ega"], "k": 2}))
    assert main(["run", "--config", str(path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert [r["mechanism"] for r in out["runs"]] == ["equal", "egalitarian"]


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--mode", "colnform", "--mechanism", "mixed:eq+pp"]) == 2
    assert main(["run", "--instance", "set_cover", "--path", str(tmp_path / "missing.json")]) == 1
    err = capsys.readouterr().err
    assert "failed: mechanism=equal" in err


def test_cli_compare_prints_table(capsys):
    assert main(["compare", "--instance", "random", "--n", "5", "--k", "2", "--seed", "2"]) == 0
    out = capsys.readouterr().out
    assert "spoa_cost" in out and "egalitarian" in out
