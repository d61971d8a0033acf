from __future__ import annotations

import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from envdt.dsl import parse_model
from envdt.model import (
    SIGNAL_LIBRARY,
    ActionBlock,
    BeliefAnnotation,
    BehaviorMachine,
    Category,
    EnvironmentModel,
    LogStmt,
    SignalKind,
    State,
    StateKind,
    Stereotype,
    element_census,
    flatten_elements,
    has_errors,
    validate_model,
)

from conftest import DEVICES

# Table 1 of the case-study evaluation, one column per device.
TABLE_1 = {
    "karie": dict(classes=8, properties=11, class_stereotypes=9, receptions=13, constraints=12, machines=8,
                  machine_stereotypes=6, states=32, transitions=70, all_events=54, uncertain_events=40,
                  opaque_behaviors=46),
    "medido": dict(classes=7, properties=10, class_stereotypes=9, receptions=12, constraints=11, machines=7,
                   machine_stereotypes=6, states=23, transitions=51, all_events=39, uncertain_events=31,
                   opaque_behaviors=36),
    "pilly": dict(classes=5, properties=10, class_stereotypes=7, receptions=8, constraints=9, machines=4,
                  machine_stereotypes=5, states=12, transitions=26, all_events=19, uncertain_events=13,
                  opaque_behaviors=22),
}

# The fixed signal library: name -> category.
FIG_4 = {
    "CartridgeInserted": "Info", "ConnectionChanged": "Info", "FullBattery": "Info",
    "LowBattery": "Warning", "WeakConnection": "Warning", "CartridgeEmpty": "Warning",
    "NoPower": "Error", "DeadBattery": "Error", "VerifyFail": "Error", "DeliveryFail": "Error",
    "DeviceError": "Error", "SensorError": "Error", "NoConnection": "Error",
}


def test_stereotype_taxonomy_is_closed():
    assert {s.value for s in Stereotype} == {
        "Subcomponent", "Power", "Sensor", "Network", "Interactable", "User", "Feature",
    }


def test_signal_library_matches_reference_table():
    assert {k: v.value for k, v in SIGNAL_LIBRARY.items()} == FIG_4


@given(st.sampled_from(sorted(FIG_4)), st.sampled_from(list(Category)))
def test_each_library_signal_has_exactly_one_category(name, category):
    if category.value == FIG_4[name]:
        assert SignalKind(name, category) == SignalKind.library(name)
    else:
        with pytest.raises(ValueError):
            SignalKind(name, category)


def test_user_interaction_carries_explicit_category():
    s = SignalKind.user_interaction("PressConfirm", Category.INFO)
    assert s.user and s.category is Category.INFO
    with pytest.raises(ValueError):
        SignalKind.user_interaction("LowBattery", Category.WARNING)


@pytest.mark.parametrize("device", DEVICES)
def test_fixture_census_matches_table(models, device):
    assert dataclasses.asdict(element_census(models[device])) == TABLE_1[device]


@pytest.mark.parametrize("device", DEVICES)
def test_fixtures_validate_clean(models, device):
    assert validate_model(models[device]) == []


def test_validation_is_idempotent(karie):
    assert validate_model(karie) == validate_model(karie)


def test_empty_model_census_is_zero():
    census = element_census(EnvironmentModel("Empty"))
    assert all(v == 0 for v in dataclasses.asdict(census).values())


def test_flatten_pilly_length(pilly):
    elems = flatten_elements(pilly)
    assert len(elems) == 12 + 26 + 19 + 22
    assert elems == flatten_elements(pilly)
    assert len(set(elems)) == len(elems)


@pytest.mark.parametrize("device", DEVICES)
def test_flatten_matches_census_totals(models, device):
    c = element_census(models[device])
    assert len(flatten_elements(models[device])) == c.states + c.transitions + c.all_events + c.opaque_behaviors


def test_flatten_minimal_machine():
    m = parse_model("model M;\ncomponent A { behavior S; }\nmachine S for A {\n  initial Start;\n  state Only;\n}\n")
    assert flatten_elements(m) == ["state:S.Only"]


def _replace_machine(model, name, **changes):
    machines = tuple(dataclasses.replace(m, **changes) if m.name == name else m for m in model.machines)
    return dataclasses.replace(model, machines=machines)


def test_initial_state_must_be_bare(toy):
    m = toy.machine("LampSM")
    states = tuple(
        dataclasses.replace(s, entry=ActionBlock((LogStmt("x"),))) if s.kind is StateKind.INITIAL else s
        for s in m.states
    )
    diags = validate_model(_replace_machine(toy, "LampSM", states=states))
    assert [d.message for d in diags] == ["initial state must be bare"]
    assert has_errors(diags)


def test_belief_out_of_range(toy):
    m = toy.machine("LampSM")
    ts = tuple(
        dataclasses.replace(t, belief=BeliefAnnotation(1.3)) if t.name == "dim" else t for t in m.transitions
    )
    diags = validate_model(_replace_machine(toy, "LampSM", transitions=ts))
    assert [d.message for d in diags] == ["belief out of [0,1]"]


def test_submachine_cycle_rejected():
    text = """model M;
component A { behavior P; }
component B { behavior Q; }
machine P for A {
  initial -> X;
  state X { submachine Q; }
  final Done;
  transition go: X -> Done;
}
machine Q for B {
  initial -> Y;
  state Y { submachine P; }
  final Done;
  transition go: Y -> Done;
}
"""
    diags = validate_model(parse_model(text))
    assert any("submachine cycle" in d.message for d in diags)


def test_unreachable_state_and_missing_final():
    text = """model M;
component A { behavior P; }
machine P for A {
  initial -> X;
  state X;
  state Lost;
}
"""
    messages = {d.message for d in validate_model(parse_model(text))}
    assert "state unreachable from the initial state" in messages
    assert "machine needs a final state or a cycle" in messages


def test_cycle_without_final_is_allowed():
    text = """model M;
component A { behavior P; }
machine P for A {
  initial -> X;
  state X;
  state Y;
  transition a: X -> Y;
  transition b: Y -> X;
}
"""
    assert validate_model(parse_model(text)) == []


def test_transition_into_initial_and_out_of_final(toy):
    m = toy.machine("LampSM")
    bad = (
        dataclasses.replace(m.transitions[1], name="back", source="On", target="initial"),
        dataclasses.replace(m.transitions[1], name="zombie", source="Broken", target="On"),
    )
    diags = validate_model(_replace_machine(toy, "LampSM", transitions=m.transitions + bad))
    messages = [d.message for d in diags]
    assert "transition cannot enter the initial state" in messages
    assert "transition cannot leave a final state" in messages


def test_dangling_references():
    text = """model M;
component A <<Power>> {
  behavior Missing;
  assoc b -> Nowhere [2..1];
}
"""
    messages = [d.message for d in validate_model(parse_model(text))]
    assert "unknown behavior machine 'Missing'" in messages
    assert "unknown association target 'Nowhere'" in messages
    assert "multiplicity must satisfy 0 <= lower <= upper" in messages


def test_machine_accessors(toy):
    m: BehaviorMachine = toy.machine("LampSM")
    assert m.initial.name == "initial"
    assert [t.name for t in m.outgoing("On")] == ["dim", "fail"]
    assert toy.root_machine is m
    assert isinstance(m.state("Off"), State)
