"""Execution of environment models.

The device machine starts at its initial pseudostate.  Each scheduler step
advances one machine by one transition: pick the outgoing transition with the
highest weight, record it, hand its trigger to the event sink, then run the
target state (entry, do, submachine launch, exit).  Submachines become new
runtimes that the scheduler advances alongside their parents.

Trace records are line-delimited JSON with a fixed field order::

    {"seq":3,"wallOffsetMs":200.0,"machine":"DeviceSM","kind":"state",
     "element":"state:DeviceSM.SettingUp","detail":{"instance":"Device#1"}}
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .expr import Attr, EvalError, Expr, Ref, Var, evaluate
from .instantiator import (
    ConstraintViolation,
    Domain,
    InstanceModel,
    SetProperty,
    apply_update,
    check_constraints,
    draw_value,
    property_domains,
)
from .model import (
    ActionBlock,
    BehaviorMachine,
    EmitStmt,
    EnvironmentModel,
    LogStmt,
    RandStmt,
    SetStmt,
    SignalKind,
    State,
    StateKind,
    Transition,
    WaitStmt,
    behavior_id,
    event_id,
    state_id,
    transition_id,
)
from .stochastic import DistributionSpec, RandomStream, unit_likelihood

SCHEDULERS = ("deterministic-interleave", "parallel")
WAIT_MODES = ("skip", "scaled", "real")
ELEMENT_KINDS = ("state", "transition", "event", "behavior")


class RuntimeFault(Exception):
    """An action failed; only the machine that ran it is aborted."""


class ReplayError(Exception):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    seed: int
    distribution: DistributionSpec = field(default_factory=lambda: DistributionSpec.of("uniform"))
    once_only: bool = True
    max_steps: int = 10_000
    scheduler: str = "deterministic-interleave"
    wait_mode: str = "skip"
    wait_factor: float = 1.0  # used by "scaled"

    def __post_init__(self) -> None:
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.wait_mode not in WAIT_MODES:
            raise ValueError(f"unknown wait mode {self.wait_mode!r}")


@dataclass(frozen=True)
class TraceRecord:
    seq: int
    wall_offset_ms: float
    machine: str
    kind: str
    element: str
    detail: dict[str, Any]

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "wallOffsetMs": self.wall_offset_ms,
                "machine": self.machine,
                "kind": self.kind,
                "element": self.element,
                "detail": self.detail,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> TraceRecord:
        d = json.loads(line)
        return cls(d["seq"], d["wallOffsetMs"], d["machine"], d["kind"], d["element"], d["detail"])


@dataclass(frozen=True)
class SignalEvent:
    """What the engine hands to the event sink."""

    seq: int
    machine: str
    signal: SignalKind
    instance: str | None
    offset_ms: float
    payload: dict[str, Any]


Sink = Callable[[SignalEvent], None]


@dataclass
class ExecutionTrace:
    records: list[TraceRecord]
    reason: str
    steps: int
    instance: InstanceModel
    core_ms: float
    events: list[SignalEvent]

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    def elements(self) -> list[str]:
        return [r.element for r in self.records if r.kind in ELEMENT_KINDS]


def load_trace(text: str) -> list[TraceRecord]:
    return [TraceRecord.from_json(line) for line in text.splitlines() if line.strip()]


@dataclass
class MachineRuntime:
    machine: BehaviorMachine
    label: str
    instance: str | None
    current: str
    visited: set[str]
    stream: RandomStream
    parent: MachineRuntime | None = None
    active: bool = True
    finished: bool = False
    last_snapshot: dict[str, Any] | None = None


# -- selection ----------------------------------------------------------------


def eligible(runtime: MachineRuntime, t: Transition, config: SimulationConfig) -> bool:
    """Under once-only, a transition may fire only if neither it nor its
    target (unless final) has been exercised in this run."""
    if not config.once_only:
        return True
    if transition_id(runtime.machine.name, t.name) in runtime.visited:
        return False
    target = runtime.machine.state(t.target)
    if target is not None and target.kind is StateKind.FINAL:
        return True
    return state_id(runtime.machine.name, t.target) not in runtime.visited


def transition_weights(runtime: MachineRuntime, config: SimulationConfig) -> list[tuple[Transition, float]]:
    """Weight p * x per outgoing transition, in declaration order.

    p is the belief degree (1 if none); x is a unit likelihood drawn from the
    transition's own distribution or the run-wide one (1 if deterministic).
    Ineligible transitions weigh 0 and consume no draws.
    """
    out = []
    for t in runtime.machine.outgoing(runtime.current):
        if not eligible(runtime, t, config):
            out.append((t, 0.0))
        elif t.belief is None:
            out.append((t, 1.0))
        else:
            x = unit_likelihood(t.dist or config.distribution, runtime.stream)
            out.append((t, t.belief.degree * x))
    return out


def find_transition(runtime: MachineRuntime, config: SimulationConfig) -> Transition | None:
    best, best_w = None, 0.0
    for t, w in transition_weights(runtime, config):
        if w > best_w:  # strict: ties keep the earlier declaration
            best, best_w = t, w
    return best


# -- engine -------------------------------------------------------------------


class Engine:
    def __init__(
        self,
        model: EnvironmentModel,
        instance: InstanceModel,
        config: SimulationConfig,
        sink: Sink | None = None,
    ):
        self.model = model
        self.instance = instance
        self.config = config
        self.sink = sink
        self.records: list[TraceRecord] = []
        self.events: list[SignalEvent] = []
        self.runtimes: list[MachineRuntime] = []
        self.visited: set[str] = set()
        self.clock_ms = 0.0
        self.slept_s = 0.0
        self.steps = 0
        self.stop_reason: str | None = None
        self.spawn_counts: dict[str, int] = {}
        self.base_stream = RandomStream(config.seed, "run")
        self.domains = property_domains(model, instance.params)
        self.lock = threading.RLock()

    # -- records ------------------------------------------------------------

    def record(self, rt: MachineRuntime | None, kind: str, element: str, detail: dict | None = None) -> None:
        self.records.append(
            TraceRecord(len(self.records) + 1, self.clock_ms, rt.label if rt else "", kind, element, detail or {})
        )
        if kind in ELEMENT_KINDS:
            self.visited.add(element)

    def dispatch(self, rt: MachineRuntime, signal: SignalKind, kind: str, element: str, uncertain: bool = False) -> None:
        snapshot = dict(self.instance.get(rt.instance).values) if rt.instance else {}
        if rt.last_snapshot is None:
            payload = snapshot
        else:
            payload = {k: v for k, v in snapshot.items() if rt.last_snapshot.get(k, object()) != v}
        rt.last_snapshot = snapshot
        ev = SignalEvent(len(self.events) + 1, rt.label, signal, rt.instance, self.clock_ms, payload)
        self.record(rt, kind, element, {
            "signal": signal.name, "category": signal.category.value,
            "instance": rt.instance, "eventSeq": ev.seq, "uncertain": uncertain,
        })
        self.events.append(ev)
        if self.sink is not None:
            self.sink(ev)

    # -- runtimes -----------------------------------------------------------

    def new_runtime(self, machine: BehaviorMachine, instance: str | None, parent: MachineRuntime | None) -> MachineRuntime:
        n = self.spawn_counts.get(machine.name, 0) + 1
        self.spawn_counts[machine.name] = n
        label = machine.name if n == 1 else f"{machine.name}#{n}"
        init = machine.initial
        rt = MachineRuntime(
            machine=machine, label=label, instance=instance,
            current=init.name if init else "", visited=self.visited,
            stream=self.base_stream.split(label), parent=parent,
        )
        self.runtimes.append(rt)
        return rt

    def bind(self, cls_name: str, start: str | None) -> str | None:
        """The instance of ``cls_name`` nearest to ``start`` through links."""
        if start is not None:
            seen, queue = {start}, deque([start])
            while queue:
                cur = queue.popleft()
                inst = self.instance.get(cur)
                if inst is not None and inst.cls == cls_name:
                    return cur
                neighbours = [ln.target for ln in self.instance.links if ln.source == cur]
                neighbours += [ln.source for ln in self.instance.links if ln.target == cur]
                for nxt in neighbours:
                    if nxt not in seen:
                        seen.add(nxt)
                        queue.append(nxt)
        found = self.instance.of_class(cls_name)
        return found[0].id if found else None

    # -- Algorithm steps ------------------------------------------------------

    def step(self, rt: MachineRuntime) -> None:
        t = find_transition(rt, self.config)
        if t is None:
            rt.active = False
            self.record(rt, "halt", f"machine:{rt.machine.name}", {"state": rt.current})
            return
        self.steps += 1
        try:
            self.execute_transition(rt, t)
        except RuntimeFault as exc:
            rt.active = False
            self.record(rt, "fault", f"machine:{rt.machine.name}", {"state": rt.current, "error": str(exc)})

    def execute_transition(self, rt: MachineRuntime, t: Transition) -> None:
        m = rt.machine.name
        self.record(rt, "transition", transition_id(m, t.name), {"source": t.source, "target": t.target})
        if t.trigger is not None:
            # the twin hears about the event before the target state runs
            self.dispatch(rt, t.trigger, "event", event_id(m, t), t.belief is not None)
        rt.current = t.target
        self.execute_state(rt, rt.machine.state(t.target))

    def execute_state(self, rt: MachineRuntime, s: State) -> None:
        m = rt.machine.name
        if s.kind is StateKind.FINAL:
            rt.active = False
            rt.finished = True
            self.record(rt, "final", state_id(m, s.name))
            return
        self.record(rt, "state", state_id(m, s.name), {"instance": rt.instance})
        for slot in ("entry", "do"):
            self.run_block(rt, s, slot)
        if s.submachine is not None:
            self.spawn(rt, s)
        self.run_block(rt, s, "exit")

    def spawn(self, rt: MachineRuntime, s: State) -> None:
        sub = self.model.machine(s.submachine)
        if any(r.active and r.machine.name == sub.name for r in self.runtimes):
            return  # one live runtime per machine
        child = self.new_runtime(sub, self.bind(sub.owner, rt.instance), rt)
        self.record(rt, "spawn", f"machine:{sub.name}", {
            "runtime": child.label, "state": s.name, "instance": child.instance,
        })

    def run_block(self, rt: MachineRuntime, s: State, slot: str) -> None:
        block: ActionBlock | None = getattr(s, slot)
        if not block:
            return
        bid = behavior_id(rt.machine.name, s.name, slot)
        self.record(rt, "behavior", bid)
        for stmt in block.statements:
            self.run_statement(rt, bid, stmt)

    # -- action mini-language -------------------------------------------------

    def _self(self, rt: MachineRuntime) -> Ref | None:
        return Ref(rt.instance) if rt.instance else None

    def _eval(self, rt: MachineRuntime, e: Expr) -> Any:
        try:
            return evaluate(e, self.instance, self._self(rt), params=self.instance.params)
        except EvalError as exc:
            raise RuntimeFault(str(exc)) from exc

    def _target(self, rt: MachineRuntime, target: Expr) -> tuple[str, str]:
        if isinstance(target, Var):
            owner, prop = self._self(rt), target.name
        elif isinstance(target, Attr):
            owner, prop = self._eval(rt, target.obj), target.name
        else:
            raise RuntimeFault("assignment target must be a property path")
        if not isinstance(owner, Ref):
            raise RuntimeFault(f"cannot assign {prop!r}: target is {owner!r}")
        inst = self.instance.get(owner.id)
        if inst is None or prop not in inst.values:
            raise RuntimeFault(f"{owner.id} has no property {prop!r}")
        return owner.id, prop

    def _update(self, rt: MachineRuntime, bid: str, iid: str, prop: str, value: Any) -> None:
        try:
            self.instance = apply_update(self.instance, SetProperty(iid, prop, value))
        except ConstraintViolation as exc:
            self.record(rt, "reject", bid, {
                "instance": iid, "property": prop, "value": value,
                "constraints": exc.constraint_ids, "reason": exc.reason,
            })
            return
        self.record(rt, "update", bid, {
            "instance": iid, "property": prop, "value": value, "revision": self.instance.revision,
        })

    def run_statement(self, rt: MachineRuntime, bid: str, stmt) -> None:
        if isinstance(stmt, SetStmt):
            iid, prop = self._target(rt, stmt.target)
            self._update(rt, bid, iid, prop, self._eval(rt, stmt.value))
        elif isinstance(stmt, RandStmt):
            iid, prop = self._target(rt, stmt.target)
            cls = self.instance.get(iid).cls
            dom = self.domains.get((cls, prop)) or Domain(self.model.cls(cls).prop(prop).type)
            if stmt.low is not None and dom.type in ("int", "real"):
                dom = Domain(dom.type, self._eval(rt, stmt.low), self._eval(rt, stmt.high))
            self._update(rt, bid, iid, prop, draw_value(dom, rt.stream, f"{iid}.{prop}"))
        elif isinstance(stmt, EmitStmt):
            self.dispatch(rt, stmt.signal, "emit", bid)
        elif isinstance(stmt, LogStmt):
            self.record(rt, "log", bid, {"text": stmt.text})
        elif isinstance(stmt, WaitStmt):
            self.clock_ms += stmt.ms
            if self.config.wait_mode != "skip":
                seconds = stmt.ms / 1000.0
                if self.config.wait_mode == "scaled":
                    seconds *= self.config.wait_factor
                began = time.perf_counter()
                time.sleep(seconds)
                self.slept_s += time.perf_counter() - began
        else:
            raise RuntimeFault(f"unknown statement {stmt!r}")

    # -- schedulers -----------------------------------------------------------

    def start(self) -> MachineRuntime | None:
        root = self.model.root_machine
        if root is None:
            self.stop_reason = "no-machine"
            return None
        return self.new_runtime(root, self.bind(root.owner, None), None)

    def budget_left(self) -> bool:
        if self.steps >= self.config.max_steps:
            self.stop_reason = "max-steps"
            return False
        return True

    def run_interleaved(self, root: MachineRuntime) -> None:
        while self.stop_reason is None:
            batch = [rt for rt in self.runtimes if rt.active]
            if not batch:
                self.stop_reason = "device-halted" if not root.finished else "device-final"
                return
            for rt in batch:
                if not rt.active:
                    continue
                if not self.budget_left():
                    return
                self.step(rt)
                if root.finished:
                    self.stop_reason = "device-final"
                    return

    def run_parallel(self, root: MachineRuntime) -> None:
        threads: dict[str, threading.Thread] = {}

        def worker(rt: MachineRuntime) -> None:
            while True:
                with self.lock:
                    if self.stop_reason is not None or not rt.active:
                        return
                    if not self.budget_left():
                        return
                    self.step(rt)
                    if root.finished:
                        self.stop_reason = "device-final"
                        return
                    for other in self.runtimes:
                        if other.active and other.label not in threads:
                            launch(other)
                time.sleep(0)

        def launch(rt: MachineRuntime) -> None:
            th = threading.Thread(target=worker, args=(rt,), name=f"envdt-{rt.label}", daemon=True)
            threads[rt.label] = th
            th.start()

        with self.lock:
            launch(root)
        while True:
            pending = [th for th in list(threads.values()) if th.is_alive()]
            if not pending:
                break
            for th in pending:
                th.join()
        if self.stop_reason is None:
            self.stop_reason = "device-final" if root.finished else "device-halted"

    def run(self) -> ExecutionTrace:
        began = time.perf_counter()
        root = self.start()
        if root is not None:
            if self.config.max_steps == 0:
                self.stop_reason = "max-steps"
            elif self.config.scheduler == "parallel":
                self.run_parallel(root)
            else:
                self.run_interleaved(root)
        core_ms = (time.perf_counter() - began - self.slept_s) * 1000.0
        return ExecutionTrace(self.records, self.stop_reason, self.steps, self.instance, core_ms, self.events)


def run(
    model: EnvironmentModel,
    instance: InstanceModel,
    config: SimulationConfig,
    sink: Sink | None = None,
) -> ExecutionTrace:
    """Simulate ``model`` over ``instance``; see the module docstring."""
    return Engine(model, instance, config, sink).run()


# -- replay -------------------------------------------------------------------


@dataclass
class ReplayResult:
    visited: set[str]
    states: dict[str, str]
    instance: InstanceModel | None


def _machine_of(label: str) -> str:
    return label.split("#", 1)[0]


def replay(records: Iterable[TraceRecord], model: EnvironmentModel, instance: InstanceModel | None = None) -> ReplayResult:
    """Re-walk a trace against the model.

    Checks that every transition leaves the state its machine was last in,
    that every state record matches, and (given the starting instance model)
    that every committed update reproduces the recorded revision and leaves
    all constraints satisfied.
    """
    current: dict[str, str] = {}
    visited: set[str] = set()
    for rec in records:
        label = rec.machine
        if rec.kind in ELEMENT_KINDS:
            visited.add(rec.element)
        if rec.kind == "spawn":
            current.pop(rec.detail["runtime"], None)
            continue
        if not label:
            continue
        machine = model.machine(_machine_of(label))
        if machine is None:
            raise ReplayError(f"record {rec.seq}: unknown machine {label!r}")
        if label not in current:
            current[label] = machine.initial.name
        if rec.kind == "transition":
            name = rec.element.split(".", 1)[1]
            t = next((x for x in machine.transitions if x.name == name), None)
            if t is None:
                raise ReplayError(f"record {rec.seq}: unknown transition {rec.element}")
            if t.source != current[label]:
                raise ReplayError(
                    f"record {rec.seq}: {rec.element} leaves {t.source} but {label} is in {current[label]}"
                )
            current[label] = t.target
        elif rec.kind in ("state", "final"):
            expected = state_id(machine.name, current[label])
            if rec.element != expected:
                raise ReplayError(f"record {rec.seq}: {rec.element} but {label} is in {current[label]}")
        elif rec.kind == "update" and instance is not None:
            try:
                instance = apply_update(
                    instance, SetProperty(rec.detail["instance"], rec.detail["property"], rec.detail["value"])
                )
            except ConstraintViolation as exc:
                raise ReplayError(f"record {rec.seq}: committed update now rejected: {exc}") from exc
            if instance.revision != rec.detail["revision"] or check_constraints(instance):
                raise ReplayError(f"record {rec.seq}: revision or constraint mismatch")
    return ReplayResult(visited, current, instance)
