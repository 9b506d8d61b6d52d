from __future__ import annotations

import re

import pytest

from coalform import kernels
from coalform.game import Instance, table_oracle


@pytest.fixture(params=sorted(kernels.available_backends()))
def backend(request, monkeypatch):
    """Run the test once per available blocking-scan backend."""
    impl = kernels.available_backends()[request.param]
    monkeypatch.setattr(kernels, "scan_blocking", impl.scan_blocking)
    monkeypatch.setattr(kernels, "first_blocking", impl.first_blocking)
    return request.param


def three_player_table():
    return {
        (0,): 1.0, (1,): 1.0, (2,): 1.0,
        (0, 1): 1.0, (0, 2): 1.4, (1, 2): 1.8,
    }


@pytest.fixture
def three_player():
    """C_i = 1, C{0,1} = 1.0, C{0,2} = 1.4, C{1,2} = 1.8, K = 2."""
    return Instance(table_oracle(3, three_player_table()), k=2, label="three-player")


@pytest.fixture
def pair_costs():
    """C_0 = 3, C_1 = 1, C{0,1} = 2."""
    return table_oracle(2, {(0,): 3.0, (1,): 1.0, (0, 1): 2.0})


_LINES = pytest.StashKey[list]()


@pytest.fixture
def report_line(request):
    """Record a one-line verdict; all of them are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(label: str, ok: bool, detail: str = "") -> bool:
        lines.append(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  ({detail})" if detail else ""))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(re.match(r"\d+", s.split()[1]).group())):
            terminalreporter.write_line(line)
