"""Structural and behavioural environment models.

A model is built once (normally by :mod:`envdt.dsl`) and never mutated; all
types here are frozen dataclasses.  Source spans ride along for diagnostics
but are excluded from equality, so a parsed model equals its reprint.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Union

from .expr import Arrow, Attr, Binary, Expr, Lit, Unary, Var, names
from .stochastic import DistributionSpec


class Stereotype(enum.Enum):
    SUBCOMPONENT = "Subcomponent"
    POWER = "Power"
    SENSOR = "Sensor"
    NETWORK = "Network"
    INTERACTABLE = "Interactable"
    USER = "User"
    FEATURE = "Feature"


class BeliefStereotype(enum.Enum):
    """Belief-profile stereotypes that may decorate component classes."""

    BELIEF_AGENT = "BeliefAgent"
    BELIEF_ELEMENT = "BeliefElement"


ClassStereotype = Union[Stereotype, BeliefStereotype]


def stereotype_from_name(name: str) -> ClassStereotype:
    for enum_cls in (Stereotype, BeliefStereotype):
        try:
            return enum_cls(name)
        except ValueError:
            pass
    raise ValueError(f"unknown stereotype {name!r}")


class Category(enum.Enum):
    INFO = "Info"
    WARNING = "Warning"
    ERROR = "Error"


SIGNAL_LIBRARY: dict[str, Category] = {
    "CartridgeInserted": Category.INFO,
    "ConnectionChanged": Category.INFO,
    "FullBattery": Category.INFO,
    "LowBattery": Category.WARNING,
    "WeakConnection": Category.WARNING,
    "CartridgeEmpty": Category.WARNING,
    "NoPower": Category.ERROR,
    "DeadBattery": Category.ERROR,
    "VerifyFail": Category.ERROR,
    "DeliveryFail": Category.ERROR,
    "DeviceError": Category.ERROR,
    "SensorError": Category.ERROR,
    "NoConnection": Category.ERROR,
}


@dataclass(frozen=True)
class SignalKind:
    """A library signal, or a user interaction with an explicit category."""

    name: str
    category: Category
    user: bool = False

    def __post_init__(self) -> None:
        if self.user:
            if self.name in SIGNAL_LIBRARY:
                raise ValueError(f"{self.name} is a library signal, not a user interaction")
        elif SIGNAL_LIBRARY.get(self.name) is not self.category:
            raise ValueError(f"{self.name} is not a {self.category.value} library signal")

    @classmethod
    def library(cls, name: str) -> SignalKind:
        if name not in SIGNAL_LIBRARY:
            raise ValueError(f"unknown library signal {name!r}")
        return cls(name, SIGNAL_LIBRARY[name])

    @classmethod
    def user_interaction(cls, label: str, category: Category) -> SignalKind:
        return cls(label, category, user=True)


@dataclass(frozen=True)
class SourceSpan:
    file: str
    line: int
    col_start: int
    col_end: int

    def __post_init__(self) -> None:
        if self.col_end < self.col_start:
            raise ValueError("span end precedes start")

    def __str__(self) -> str:
        return f"{self.file}:{self.line}:{self.col_start}"


_span = lambda: field(default=None, compare=False, repr=False)  # noqa: E731

PRIMITIVE_TYPES = ("int", "real", "bool", "string", "enum")


@dataclass(frozen=True)
class PropertyDecl:
    name: str
    type: str
    unit: str | None = None
    literals: tuple[str, ...] = ()
    range: tuple[float, float] | None = None
    span: SourceSpan | None = _span()


@dataclass(frozen=True)
class Association:
    role: str
    target: str
    lower: int
    upper: int | None  # None means unbounded
    span: SourceSpan | None = _span()

    @property
    def many(self) -> bool:
        return self.upper is None or self.upper > 1


@dataclass(frozen=True)
class ComponentClass:
    name: str
    stereotypes: tuple[ClassStereotype, ...] = ()
    properties: tuple[PropertyDecl, ...] = ()
    receptions: tuple[SignalKind, ...] = ()
    behavior: str | None = None
    associations: tuple[Association, ...] = ()
    span: SourceSpan | None = _span()

    def prop(self, name: str) -> PropertyDecl | None:
        return next((p for p in self.properties if p.name == name), None)

    def assoc(self, role: str) -> Association | None:
        return next((a for a in self.associations if a.role == role), None)


@dataclass(frozen=True)
class BeliefAnnotation:
    degree: float
    description: str = ""


# -- action mini-language ---------------------------------------------------


@dataclass(frozen=True)
class SetStmt:
    target: Expr
    value: Expr


@dataclass(frozen=True)
class RandStmt:
    """Draw a value for ``target``; bounds default to the constraint ranges."""

    target: Expr
    low: Expr | None = None
    high: Expr | None = None


@dataclass(frozen=True)
class EmitStmt:
    signal: SignalKind


@dataclass(frozen=True)
class LogStmt:
    text: str


@dataclass(frozen=True)
class WaitStmt:
    ms: float


Statement = Union[SetStmt, RandStmt, EmitStmt, LogStmt, WaitStmt]


@dataclass(frozen=True)
class ActionBlock:
    statements: tuple[Statement, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.statements)


class StateKind(enum.Enum):
    INITIAL = "initial"
    SIMPLE = "simple"
    FINAL = "final"


BEHAVIOR_SLOTS = ("entry", "do", "exit")


@dataclass(frozen=True)
class State:
    name: str
    kind: StateKind = StateKind.SIMPLE
    stereotypes: tuple[Stereotype, ...] = ()
    entry: ActionBlock | None = None
    do: ActionBlock | None = None
    exit: ActionBlock | None = None
    submachine: str | None = None
    span: SourceSpan | None = _span()

    def behaviors(self) -> Iterator[tuple[str, ActionBlock]]:
        """Non-empty opaque behaviours in execution order."""
        for slot in BEHAVIOR_SLOTS:
            block = getattr(self, slot)
            if block:
                yield slot, block


@dataclass(frozen=True)
class Transition:
    name: str
    source: str
    target: str
    trigger: SignalKind | None = None
    belief: BeliefAnnotation | None = None
    dist: DistributionSpec | None = None
    span: SourceSpan | None = _span()

    @property
    def probability(self) -> float:
        """Belief degree, or 1 for a deterministic transition."""
        return 1.0 if self.belief is None else self.belief.degree


@dataclass(frozen=True)
class BehaviorMachine:
    name: str
    owner: str
    states: tuple[State, ...] = ()
    transitions: tuple[Transition, ...] = ()
    span: SourceSpan | None = _span()

    def state(self, name: str) -> State | None:
        return next((s for s in self.states if s.name == name), None)

    @property
    def initial(self) -> State | None:
        return next((s for s in self.states if s.kind is StateKind.INITIAL), None)

    def outgoing(self, state: str) -> tuple[Transition, ...]:
        return tuple(t for t in self.transitions if t.source == state)


@dataclass(frozen=True)
class Constraint:
    id: str
    context: str
    expr: Expr
    span: SourceSpan | None = _span()


@dataclass(frozen=True)
class EnvironmentModel:
    name: str
    classes: tuple[ComponentClass, ...] = ()
    machines: tuple[BehaviorMachine, ...] = ()
    constraints: tuple[Constraint, ...] = ()
    dt_class_names: frozenset[str] = frozenset()
    signals: tuple[SignalKind, ...] = ()
    root: str | None = None
    span: SourceSpan | None = _span()

    def cls(self, name: str) -> ComponentClass | None:
        return next((c for c in self.classes if c.name == name), None)

    def machine(self, name: str) -> BehaviorMachine | None:
        return next((m for m in self.machines if m.name == name), None)

    def constraints_mentioning(self, name: str) -> tuple[Constraint, ...]:
        """Constraints whose expression mentions ``name`` as a variable or member."""
        return self._mentions.get(name, ())

    @cached_property
    def _mentions(self) -> dict[str, tuple[Constraint, ...]]:
        out: dict[str, list[Constraint]] = {}
        for c in self.constraints:
            for n in names(c.expr):
                out.setdefault(n, []).append(c)
        return {n: tuple(cs) for n, cs in out.items()}

    @property
    def environment_classes(self) -> tuple[ComponentClass, ...]:
        return tuple(c for c in self.classes if c.name not in self.dt_class_names)

    @property
    def root_machine(self) -> BehaviorMachine | None:
        """The device machine: the declared root, else the first machine."""
        if self.root is not None:
            return self.machine(self.root)
        return self.machines[0] if self.machines else None


# -- element identities -----------------------------------------------------


def state_id(machine: str, state: str) -> str:
    return f"state:{machine}.{state}"


def transition_id(machine: str, transition: str) -> str:
    return f"transition:{machine}.{transition}"


def event_id(machine: str, transition: Transition) -> str:
    return f"event:{machine}.{transition.name}!{transition.trigger.name}"


def behavior_id(machine: str, state: str, slot: str) -> str:
    return f"behavior:{machine}.{state}/{slot}"


def element_kind(element: str) -> str:
    return element.split(":", 1)[0]


def flatten_elements(model: EnvironmentModel) -> list[str]:
    """Every coverable element: states, transitions, events, opaque behaviours.

    Pseudostates (initial/final) are markers, not elements.  Order follows
    declaration order within each kind.
    """
    states, transitions, events, behaviors = [], [], [], []
    for m in model.machines:
        for s in m.states:
            if s.kind is StateKind.SIMPLE:
                states.append(state_id(m.name, s.name))
            for slot, _ in s.behaviors():
                behaviors.append(behavior_id(m.name, s.name, slot))
        for t in m.transitions:
            transitions.append(transition_id(m.name, t.name))
            if t.trigger is not None:
                events.append(event_id(m.name, t))
    return states + transitions + events + behaviors


@dataclass(frozen=True)
class Census:
    classes: int = 0
    properties: int = 0
    class_stereotypes: int = 0
    receptions: int = 0
    constraints: int = 0
    machines: int = 0
    machine_stereotypes: int = 0
    states: int = 0
    transitions: int = 0
    all_events: int = 0
    uncertain_events: int = 0
    opaque_behaviors: int = 0

    @property
    def elements(self) -> int:
        return self.states + self.transitions + self.all_events + self.opaque_behaviors


def element_census(model: EnvironmentModel) -> Census:
    """Count model elements the way the case-study statistics table does.

    Structural counts cover environment classes only (twin-side classes are
    excluded).  Stereotype counts are unique kinds, not applications.
    """
    env = model.environment_classes
    class_stereos = {s for c in env for s in c.stereotypes}
    state_stereos = {s for m in model.machines for st in m.states for s in st.stereotypes}
    simple = [s for m in model.machines for s in m.states if s.kind is StateKind.SIMPLE]
    transitions = [t for m in model.machines for t in m.transitions]
    return Census(
        classes=len(env),
        properties=sum(len(c.properties) for c in env),
        class_stereotypes=len(class_stereos),
        receptions=sum(len(c.receptions) for c in env),
        constraints=len(model.constraints),
        machines=len(model.machines),
        machine_stereotypes=len(state_stereos),
        states=len(simple),
        transitions=len(transitions),
        all_events=sum(t.trigger is not None for t in transitions),
        uncertain_events=sum(t.trigger is not None and t.belief is not None for t in transitions),
        opaque_behaviors=sum(1 for m in model.machines for s in m.states for _ in s.behaviors()),
    )


# -- validation -------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    location: str
    message: str
    span: SourceSpan | None = field(default=None, compare=False)

    def __str__(self) -> str:
        where = f"{self.span}: " if self.span else ""
        return f"{where}{self.severity}: {self.location}: {self.message}"


ValidationReport = list  # list[Diagnostic]

DEFAULT_PARAMS = frozenset({"N"})


def has_errors(report: list[Diagnostic]) -> bool:
    return any(d.severity == "error" for d in report)


def validate_model(model: EnvironmentModel, params: frozenset[str] = DEFAULT_PARAMS) -> list[Diagnostic]:
    """Check every well-formedness rule; never raises, never mutates."""
    out: list[Diagnostic] = []

    def err(location: str, message: str, span: SourceSpan | None = None) -> None:
        out.append(Diagnostic("error", location, message, span))

    for name, n in Counter(c.name for c in model.classes).items():
        if n > 1:
            err(f"class {name}", "duplicate class name")
    for name, n in Counter(m.name for m in model.machines).items():
        if n > 1:
            err(f"machine {name}", "duplicate machine name")
    for name, n in Counter(c.id for c in model.constraints).items():
        if n > 1:
            err(f"constraint {name}", "duplicate constraint id")
    class_names = {c.name for c in model.classes}
    machine_names = {m.name for m in model.machines}
    for name in sorted(model.dt_class_names - class_names):
        err(f"twin {name}", "twin class is not declared")
    if model.root is not None and model.root not in machine_names:
        err("model", f"unknown start machine {model.root!r}", model.span)

    for c in model.classes:
        loc = f"class {c.name}"
        for name, n in Counter(p.name for p in c.properties).items():
            if n > 1:
                err(loc, f"duplicate property {name!r}", c.span)
        for p in c.properties:
            if p.type not in PRIMITIVE_TYPES:
                err(f"{loc}.{p.name}", f"unknown type {p.type!r}", p.span)
            if p.type == "enum" and not p.literals:
                err(f"{loc}.{p.name}", "enum property needs literals", p.span)
            if p.range is not None and p.range[0] > p.range[1]:
                err(f"{loc}.{p.name}", "empty range", p.span)
        for name, n in Counter(a.role for a in c.associations).items():
            if n > 1:
                err(loc, f"duplicate role {name!r}", c.span)
        for a in c.associations:
            if a.target not in class_names:
                err(f"{loc}.{a.role}", f"unknown association target {a.target!r}", a.span)
            if a.lower < 0 or (a.upper is not None and a.upper < a.lower):
                err(f"{loc}.{a.role}", "multiplicity must satisfy 0 <= lower <= upper", a.span)
        if c.behavior is not None and c.behavior not in machine_names:
            err(loc, f"unknown behavior machine {c.behavior!r}", c.span)

    for m in model.machines:
        _validate_machine(model, m, params, err)
    _check_submachine_cycles(model, err)

    for con in model.constraints:
        loc = f"constraint {con.id}"
        if model.cls(con.context) is None:
            err(loc, f"unknown context class {con.context!r}", con.span)
            continue
        for problem in _check_expr(model, con.context, con.expr, params):
            err(loc, problem, con.span)
    return out


def _validate_machine(model, m: BehaviorMachine, params, err) -> None:
    loc = f"machine {m.name}"
    if model.cls(m.owner) is None:
        err(loc, f"unknown owner class {m.owner!r}", m.span)
    for name, n in Counter(s.name for s in m.states).items():
        if n > 1:
            err(loc, f"duplicate state {name!r}", m.span)
    for name, n in Counter(t.name for t in m.transitions).items():
        if n > 1:
            err(loc, f"duplicate transition {name!r}", m.span)

    initials = [s for s in m.states if s.kind is StateKind.INITIAL]
    if len(initials) != 1:
        err(loc, f"machine must have exactly one initial state (found {len(initials)})", m.span)
    states = {s.name: s for s in m.states}
    machine_names = {x.name for x in model.machines}

    for s in m.states:
        sloc = f"{loc} / state {s.name}"
        if s.kind is not StateKind.SIMPLE:
            if any(getattr(s, slot) is not None for slot in BEHAVIOR_SLOTS) or s.submachine:
                err(sloc, f"{s.kind.value} state must be bare", s.span)
            continue
        if s.submachine is not None and s.submachine not in machine_names:
            err(sloc, f"unknown submachine {s.submachine!r}", s.span)
        for slot in BEHAVIOR_SLOTS:
            block = getattr(s, slot)
            if block:
                for problem in _check_block(model, m.owner, block, params):
                    err(f"{sloc}/{slot}", problem, s.span)

    for t in m.transitions:
        tloc = f"{loc} / transition {t.name}"
        src, dst = states.get(t.source), states.get(t.target)
        if src is None:
            err(tloc, f"unknown source state {t.source!r}", t.span)
        elif src.kind is StateKind.FINAL:
            err(tloc, "transition cannot leave a final state", t.span)
        if dst is None:
            err(tloc, f"unknown target state {t.target!r}", t.span)
        elif dst.kind is StateKind.INITIAL:
            err(tloc, "transition cannot enter the initial state", t.span)
        if t.belief is not None and not 0.0 <= t.belief.degree <= 1.0:
            err(tloc, "belief out of [0,1]", t.span)

    if len(initials) == 1:
        succ: dict[str, list[str]] = {name: [] for name in states}
        for t in m.transitions:
            if t.source in succ and t.target in states:
                succ[t.source].append(t.target)
        seen, stack = set(), [initials[0].name]
        while stack:
            cur = stack.pop()
            if cur in seen:
                continue
            seen.add(cur)
            stack.extend(succ[cur])
        for s in m.states:
            if s.name not in seen:
                err(f"{loc} / state {s.name}", "state unreachable from the initial state", s.span)
        has_final = any(s.kind is StateKind.FINAL for s in m.states)
        if not has_final and not _has_cycle(succ):
            err(loc, "machine needs a final state or a cycle", m.span)


def _has_cycle(succ: dict[str, list[str]]) -> bool:
    white, grey, black = 0, 1, 2
    color = {n: white for n in succ}

    def visit(n: str) -> bool:
        color[n] = grey
        for nxt in succ[n]:
            if color[nxt] == grey or (color[nxt] == white and visit(nxt)):
                return True
        color[n] = black
        return False

    return any(color[n] == white and visit(n) for n in succ)


def _check_submachine_cycles(model: EnvironmentModel, err) -> None:
    edges = {
        m.name: sorted({s.submachine for s in m.states if s.submachine and model.machine(s.submachine)})
        for m in model.machines
    }
    reported: set[frozenset[str]] = set()

    def dfs(node: str, path: list[str]) -> None:
        for nxt in edges.get(node, ()):
            if nxt in path:
                cycle = path[path.index(nxt):] + [nxt]
                key = frozenset(cycle)
                if key not in reported:
                    reported.add(key)
                    err(f"machine {nxt}", "submachine cycle: " + " -> ".join(cycle))
            else:
                dfs(nxt, path + [nxt])

    for m in model.machines:
        dfs(m.name, [m.name])


# -- static name resolution for expressions ---------------------------------

# a static type: ("obj", class name, many) or ("value", primitive type)


def _resolve_member(model: EnvironmentModel, cls_name: str, name: str):
    cls = model.cls(cls_name)
    if cls is None:
        return None
    prop = cls.prop(name)
    if prop is not None:
        return ("value", prop.type)
    assoc = cls.assoc(name)
    if assoc is not None:
        return ("obj", assoc.target, assoc.many)
    return None


def _check_expr(model: EnvironmentModel, context: str, e: Expr, params, env=None) -> list[str]:
    problems: list[str] = []
    env = dict(env or {})

    def typ(x: Expr, env: dict):
        if isinstance(x, Lit):
            return ("value", type(x.value).__name__)
        if isinstance(x, Var):
            if x.name in env:
                return env[x.name]
            if x.name == "self":
                return ("obj", context, False)
            if x.name in params:
                return ("value", "int")
            member = _resolve_member(model, context, x.name)
            if member is None:
                problems.append(f"unknown name {x.name!r} in {context}")
            return member
        if isinstance(x, Attr):
            base = typ(x.obj, env)
            if base is None:
                return None
            if base[0] != "obj":
                problems.append(f"cannot navigate {x.name!r} from a value")
                return None
            member = _resolve_member(model, base[1], x.name)
            if member is None:
                problems.append(f"unknown property or role {x.name!r} on {base[1]}")
            return member
        if isinstance(x, Arrow):
            base = typ(x.source, env)
            if x.body is not None:
                inner = dict(env)
                for v in x.iterators:
                    inner[v] = ("obj", base[1], False) if base and base[0] == "obj" else ("value", "any")
                typ(x.body, inner)
            return ("value", "int" if x.op == "size" else "bool")
        if isinstance(x, Unary):
            typ(x.operand, env)
            return ("value", "any")
        if isinstance(x, Binary):
            typ(x.left, env)
            typ(x.right, env)
            return ("value", "any")
        problems.append(f"unsupported expression {x!r}")
        return None

    typ(e, env)
    return problems


def _is_property_path(model: EnvironmentModel, context: str, e: Expr) -> bool:
    chain: list[str] = []
    x = e
    while isinstance(x, Attr):
        chain.append(x.name)
        x = x.obj
    if not isinstance(x, Var):
        return False
    chain.append(x.name)
    chain.reverse()
    if chain[0] == "self":
        chain = chain[1:]
    cls = context
    for i, name in enumerate(chain):
        member = _resolve_member(model, cls, name)
        if member is None:
            return False
        if i == len(chain) - 1:
            return member[0] == "value"
        if member[0] != "obj":
            return False
        cls = member[1]
    return False


def _check_block(model: EnvironmentModel, owner: str, block: ActionBlock, params) -> list[str]:
    problems: list[str] = []
    for stmt in block.statements:
        if isinstance(stmt, (SetStmt, RandStmt)):
            problems += _check_expr(model, owner, stmt.target, params)
            if not problems and not _is_property_path(model, owner, stmt.target):
                problems.append("assignment target must be a property path")
            for sub in (getattr(stmt, "value", None), getattr(stmt, "low", None), getattr(stmt, "high", None)):
                if sub is not None:
                    problems += _check_expr(model, owner, sub, params)
        elif isinstance(stmt, WaitStmt) and stmt.ms < 0:
            problems.append("wait must be non-negative")
    return problems


def target_property(model: EnvironmentModel, context: str, target: Expr) -> tuple[str, str]:
    """Resolve a property path statically to ``(class name, property)``."""
    chain: list[str] = []
    x = target
    while isinstance(x, Attr):
        chain.append(x.name)
        x = x.obj
    chain.append(x.name)
    chain.reverse()
    if chain[0] == "self":
        chain = chain[1:]
    cls = context
    for name in chain[:-1]:
        cls = _resolve_member(model, cls, name)[1]
    return cls, chain[-1]
