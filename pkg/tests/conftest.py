from __future__ import annotations

from pathlib import Path

import pytest

from envdt.dsl import load_model, parse_model
from envdt.instantiator import instantiate

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "envdt" / "fixtures"
DEVICES = ("karie", "medido", "pilly")
PARAMS = {"N": 4}

# A three-state loop with one uncertain branch, small enough to reason about by hand.
TOY = """\
model Toy;
start LampSM;

signal Flicker: Warning;

component Lamp <<Power, BeliefElement>> {
  property level: int;
  property on: bool;
  reception LowBattery;
  behavior LampSM;
}

constraint L1 on Lamp: self.level >= 0 and self.level <= 10;

machine LampSM for Lamp {
  initial -> Off;
  state Off <<Power>> {
    entry { set on = false; }
  }
  state On <<Power>> {
    entry { set on = true; }
    do { rand level; }
  }
  state Dim <<Power>> {
    entry { emit Flicker; }
  }
  final Broken;
  transition switchOn: Off -> On;
  transition dim: On -> Dim on LowBattery belief 0.6 "battery sags";
  transition fail: On -> Broken on DeadBattery belief 0.4 "battery dies";
  transition recover: Dim -> Broken;
}
"""


@pytest.fixture(scope="session")
def models():
    return {d: load_model(FIXTURES / f"{d}.envdt") for d in DEVICES}


@pytest.fixture(scope="session")
def karie(models):
    return models["karie"]


@pytest.fixture(scope="session")
def pilly(models):
    return models["pilly"]


@pytest.fixture(scope="session")
def toy():
    return parse_model(TOY)


@pytest.fixture
def toy_instance(toy):
    return instantiate(toy, 1, PARAMS)


# -- acceptance verdicts ------------------------------------------------------

VERDICTS: list[str] = []


def record_verdict(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    VERDICTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
