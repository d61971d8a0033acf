"""Textual ``.envdt`` modelling language: parser and canonical printer.

Example::

    model Karie;
    start DeviceSM;
    signal CheckRoll: Info;

    component Battery <<Power>> {
      property level: int;
      reception LowBattery;
      behavior BatterySM;
    }

    constraint C1 on Battery: self.level >= 0 and self.level <= 100;

    machine BatterySM for Battery {
      initial -> UsingBattery;
      state UsingBattery <<Power>> {
        entry { rand level; }
      }
      transition drained: UsingBattery -> Off on DeadBattery belief 0.1;
      final Off;
    }

``print_model`` emits the canonical layout (two-space indent, declaration
order, sections grouped) and ``parse_model(print_model(m)) == m`` holds for
every well-formed model.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .expr import (
    ARROW_OPS,
    NEG_PRECEDENCE,
    NOT_PRECEDENCE,
    PRECEDENCE,
    Arrow,
    Attr,
    Binary,
    Expr,
    Lit,
    Unary,
    Var,
    format_expr,
    format_number,
    format_string,
)
from .model import (
    BEHAVIOR_SLOTS,
    ActionBlock,
    Association,
    BehaviorMachine,
    BeliefAnnotation,
    Category,
    ComponentClass,
    Constraint,
    EmitStmt,
    EnvironmentModel,
    LogStmt,
    PropertyDecl,
    RandStmt,
    SetStmt,
    SignalKind,
    SIGNAL_LIBRARY,
    SourceSpan,
    Stereotype,
    State,
    StateKind,
    Transition,
    WaitStmt,
    stereotype_from_name,
)
from .stochastic import DistributionSpec, InvalidParameters, format_dist

__all__ = ["ModelSyntaxError", "ParseError", "parse_model", "print_model", "load_model"]


@dataclass(frozen=True)
class ParseError:
    span: SourceSpan
    expected: str
    found: str

    def __str__(self) -> str:
        return f"{self.span}: expected {self.expected}, found {self.found}"


class ModelSyntaxError(Exception):
    def __init__(self, errors: list[ParseError]):
        self.errors = errors
        super().__init__("\n".join(str(e) for e in errors))


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>//[^\n]*)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>->|<<|>>|<>|<=|>=|\.\.|[{}()\[\];:,.=<>+\-*/|])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # ident | number | string | op | eof
    text: str
    line: int
    col: int


def _tokenize(text: str, file: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            span = SourceSpan(file, line, pos - line_start + 1, pos - line_start + 1)
            raise ModelSyntaxError([ParseError(span, "a token", repr(text[pos]))])
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        newlines = m.group().count("\n")
        if newlines:
            line += newlines
            line_start = m.start() + m.group().rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


_KEYWORDS_IN_EXPR = {"and", "or", "not", "implies", "true", "false", "null"}


class _Parser:
    def __init__(self, text: str, file: str):
        self.file = file
        self.toks = _tokenize(text, file)
        self.i = 0
        self.resolution: list[ParseError] = []

    # -- token helpers ------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def span(self, tok: Token | None = None) -> SourceSpan:
        t = tok or self.tok
        return SourceSpan(self.file, t.line, t.col, t.col + max(len(t.text), 1) - 1)

    def fail(self, expected: str) -> None:
        found = "end of file" if self.tok.kind == "eof" else repr(self.tok.text)
        raise ModelSyntaxError([ParseError(self.span(), expected, found)])

    def at(self, text: str) -> bool:
        return self.tok.kind in ("op", "ident") and self.tok.text == text

    def accept(self, text: str) -> Token | None:
        if self.at(text):
            tok = self.tok
            self.i += 1
            return tok
        return None

    def expect(self, text: str) -> Token:
        tok = self.accept(text)
        if tok is None:
            self.fail(f"'{text}'")
        return tok

    def ident(self, what: str = "identifier") -> str:
        if self.tok.kind != "ident":
            self.fail(what)
        text = self.tok.text
        self.i += 1
        return text

    def number(self) -> float | int:
        neg = self.accept("-") is not None
        if self.tok.kind != "number":
            self.fail("number")
        text = self.tok.text
        self.i += 1
        value = float(text) if "." in text else int(text)
        return -value if neg else value

    def string(self) -> str:
        if self.tok.kind != "string":
            self.fail("string")
        raw = self.tok.text[1:-1]
        self.i += 1
        return re.sub(r"\\(.)", r"\1", raw)

    def resolve_error(self, span: SourceSpan, expected: str, found: str) -> None:
        self.resolution.append(ParseError(span, expected, found))

    # -- top level ------------------------------------------------------------

    def parse(self) -> EnvironmentModel:
        model_tok = self.tok
        self.expect("model")
        name = self.ident("model name")
        self.accept(";")
        root = None
        classes: list[ComponentClass] = []
        dt: set[str] = set()
        constraints: list[Constraint] = []
        machines: list = []
        self.signal_decls: dict[str, SignalKind] = {}
        self.pending_signals: list = []  # (name, span, setter)
        while self.tok.kind != "eof":
            if self.accept("start"):
                root = self.ident("machine name")
                self.accept(";")
            elif self.at("signal"):
                self.parse_signal_decl()
            elif self.at("component"):
                classes.append(self.parse_component())
            elif self.at("twin"):
                self.i += 1
                cls = self.parse_component()
                classes.append(cls)
                dt.add(cls.name)
            elif self.at("constraint"):
                constraints.append(self.parse_constraint())
            elif self.at("machine"):
                machines.append(self.parse_machine())
            else:
                self.fail("'start', 'signal', 'component', 'twin', 'constraint' or 'machine'")

        signals = {name: self.resolve_signal(name, span) for name, span in self.pending_signals}
        classes = [self.finish_class(c, signals) for c in classes]
        machines = [self.finish_machine(m, signals) for m in machines]
        if self.resolution:
            raise ModelSyntaxError(self.resolution)
        return EnvironmentModel(
            name=name,
            classes=tuple(classes),
            machines=tuple(machines),
            constraints=tuple(constraints),
            dt_class_names=frozenset(dt),
            signals=tuple(self.signal_decls.values()),
            root=root,
            span=self.span(model_tok),
        )

    def parse_signal_decl(self) -> None:
        self.expect("signal")
        tok = self.tok
        name = self.ident("signal name")
        self.expect(":")
        cat_tok = self.tok
        cat = self.ident("category")
        self.accept(";")
        try:
            category = Category(cat)
        except ValueError:
            self.resolve_error(self.span(cat_tok), "Info, Warning or Error", repr(cat))
            return
        if name in SIGNAL_LIBRARY:
            self.resolve_error(self.span(tok), "a user interaction name", f"library signal {name!r}")
            return
        if name in self.signal_decls:
            self.resolve_error(self.span(tok), "a new signal name", f"duplicate {name!r}")
            return
        self.signal_decls[name] = SignalKind.user_interaction(name, category)

    def signal_ref(self) -> tuple[str, SourceSpan]:
        span = self.span()
        name = self.ident("signal name")
        self.pending_signals.append((name, span))
        return name, span

    def resolve_signal(self, name: str, span: SourceSpan) -> SignalKind | None:
        if name in SIGNAL_LIBRARY:
            return SignalKind.library(name)
        if name in self.signal_decls:
            return self.signal_decls[name]
        self.resolve_error(span, "a library signal or declared user signal", repr(name))
        return None

    def stereotypes(self, profile_only: bool = False) -> tuple:
        out = []
        if not self.accept("<<"):
            return ()
        while True:
            tok = self.tok
            name = self.ident("stereotype")
            try:
                stereo = stereotype_from_name(name)
                if profile_only and not isinstance(stereo, Stereotype):
                    raise ValueError
                out.append(stereo)
            except ValueError:
                self.resolve_error(self.span(tok), "a profile stereotype", repr(name))
            if not self.accept(","):
                break
        self.expect(">>")
        return tuple(out)

    # -- structure ----------------------------------------------------------

    def parse_component(self) -> dict:
        tok = self.expect("component")
        name = self.ident("class name")
        stereos = self.stereotypes()
        props, receptions, assocs, behavior = [], [], [], None
        self.expect("{")
        while not self.accept("}"):
            if self.at("property"):
                props.append(self.parse_property())
            elif self.accept("reception"):
                receptions.append(self.signal_ref())
                self.accept(";")
            elif self.accept("behavior"):
                behavior = self.ident("machine name")
                self.accept(";")
            elif self.at("assoc"):
                assocs.append(self.parse_assoc())
            else:
                self.fail("'property', 'reception', 'behavior', 'assoc' or '}'")
        return dict(
            name=name, stereotypes=stereos, properties=tuple(props), receptions=receptions,
            behavior=behavior, associations=tuple(assocs), span=self.span(tok),
        )

    def finish_class(self, raw: dict, signals: dict) -> ComponentClass:
        receptions = tuple(signals[n] for n, _ in raw.pop("receptions") if signals.get(n))
        return ComponentClass(receptions=receptions, **raw)

    def parse_property(self) -> PropertyDecl:
        tok = self.expect("property")
        name = self.ident("property name")
        self.expect(":")
        type_tok = self.tok
        ptype = self.ident("type")
        literals: tuple[str, ...] = ()
        if ptype == "enum":
            self.expect("(")
            lits = [self.ident("enum literal")]
            while self.accept(","):
                lits.append(self.ident("enum literal"))
            self.expect(")")
            literals = tuple(lits)
        elif ptype not in ("int", "real", "bool", "string"):
            self.resolve_error(self.span(type_tok), "int, real, bool, string or enum", repr(ptype))
        rng = None
        if self.accept("in"):
            self.expect("[")
            lo = self.number()
            self.expect(",")
            hi = self.number()
            self.expect("]")
            rng = (lo, hi)
        unit = None
        if self.accept("unit"):
            unit = self.string()
        self.accept(";")
        return PropertyDecl(name, ptype, unit, literals, rng, span=self.span(tok))

    def parse_assoc(self) -> Association:
        tok = self.expect("assoc")
        role = self.ident("role name")
        self.expect("->")
        target = self.ident("class name")
        self.expect("[")
        lower = self.number()
        self.expect("..")
        upper = None if self.accept("*") else self.number()
        self.expect("]")
        self.accept(";")
        if not isinstance(lower, int) or not (upper is None or isinstance(upper, int)):
            self.resolve_error(self.span(tok), "integer multiplicity", "a real number")
        return Association(role, target, lower, upper, span=self.span(tok))

    def parse_constraint(self) -> Constraint:
        tok = self.expect("constraint")
        cid = self.ident("constraint id")
        self.expect("on")
        context = self.ident("class name")
        self.expect(":")
        expr = self.parse_expr()
        self.accept(";")
        return Constraint(cid, context, expr, span=self.span(tok))

    # -- behaviour ------------------------------------------------------------

    def parse_machine(self) -> dict:
        tok = self.expect("machine")
        name = self.ident("machine name")
        self.expect("for")
        owner = self.ident("class name")
        states: list[State] = []
        transitions: list = []
        self.expect("{")
        while not self.accept("}"):
            stok = self.tok
            if self.accept("initial"):
                if self.accept("->"):
                    target = self.ident("state name")
                    self.accept(";")
                    states.append(State("initial", StateKind.INITIAL, span=self.span(stok)))
                    transitions.append(dict(
                        name="initial", source="initial", target=target, trigger=None,
                        belief=None, dist=None, span=self.span(stok),
                    ))
                else:
                    sname = self.ident("state name")
                    stereos = self.stereotypes(profile_only=True)
                    self.accept(";")
                    states.append(State(sname, StateKind.INITIAL, stereos, span=self.span(stok)))
            elif self.accept("final"):
                sname = self.ident("state name")
                stereos = self.stereotypes(profile_only=True)
                self.accept(";")
                states.append(State(sname, StateKind.FINAL, stereos, span=self.span(stok)))
            elif self.at("state"):
                states.append(self.parse_state())
            elif self.at("transition"):
                transitions.append(self.parse_transition())
            else:
                self.fail("'initial', 'state', 'transition', 'final' or '}'")
        return dict(name=name, owner=owner, states=tuple(states), transitions=transitions, span=self.span(tok))

    def finish_machine(self, raw: dict, signals: dict) -> BehaviorMachine:
        def fix(block: ActionBlock | None) -> ActionBlock | None:
            if block is None:
                return None
            return ActionBlock(tuple(
                EmitStmt(signals[s.name]) if isinstance(s, _PendingEmit) else s for s in block.statements
            ))

        raw["states"] = tuple(
            State(s.name, s.kind, s.stereotypes, fix(s.entry), fix(s.do), fix(s.exit), s.submachine, span=s.span)
            for s in raw["states"]
        )
        transitions = []
        for t in raw.pop("transitions"):
            trig = t.pop("trigger")
            transitions.append(Transition(trigger=signals.get(trig[0]) if trig else None, **t))
        return BehaviorMachine(transitions=tuple(transitions), **raw)

    def parse_state(self) -> State:
        tok = self.expect("state")
        name = self.ident("state name")
        stereos = self.stereotypes(profile_only=True)
        blocks: dict = {}
        submachine = None
        if self.accept("{"):
            while not self.accept("}"):
                slot_tok = self.tok
                slot = self.tok.text if self.tok.kind == "ident" else None
                if slot in BEHAVIOR_SLOTS:
                    self.i += 1
                    if slot in blocks:
                        self.resolve_error(self.span(slot_tok), f"a single {slot} block", "a second one")
                    blocks[slot] = self.parse_block()
                elif self.accept("submachine"):
                    submachine = self.ident("machine name")
                    self.accept(";")
                else:
                    self.fail("'entry', 'do', 'exit', 'submachine' or '}'")
        else:
            self.accept(";")
        return State(name, StateKind.SIMPLE, stereos, submachine=submachine, span=self.span(tok), **blocks)

    def parse_transition(self) -> dict:
        tok = self.expect("transition")
        name = self.ident("transition name")
        self.expect(":")
        source = self.ident("state name")
        self.expect("->")
        target = self.ident("state name")
        trigger = belief = dist = None
        if self.accept("on"):
            trigger = self.signal_ref()
        if self.accept("belief"):
            degree = float(self.number())
            desc = self.string() if self.tok.kind == "string" else ""
            belief = BeliefAnnotation(degree, desc)
        if self.accept("dist"):
            dist = self.parse_dist()
        self.accept(";")
        return dict(name=name, source=source, target=target, trigger=trigger,
                    belief=belief, dist=dist, span=self.span(tok))

    def parse_dist(self) -> DistributionSpec | None:
        tok = self.tok
        kind = self.ident("distribution kind")
        overrides: dict[str, float] = {}
        if self.accept("("):
            if not self.at(")"):
                while True:
                    pname = self.ident("parameter name")
                    self.expect("=")
                    overrides[pname] = self.number()
                    if not self.accept(","):
                        break
            self.expect(")")
        try:
            return DistributionSpec.of(kind, **overrides)
        except InvalidParameters as exc:
            self.resolve_error(self.span(tok), "a valid distribution", str(exc))
            return None

    def parse_block(self) -> ActionBlock:
        self.expect("{")
        stmts = []
        while not self.accept("}"):
            stmts.append(self.parse_statement())
        return ActionBlock(tuple(stmts))

    def parse_statement(self):
        if self.accept("set"):
            target = self.parse_path()
            self.expect("=")
            stmt = SetStmt(target, self.parse_expr())
        elif self.accept("rand"):
            target = self.parse_path()
            low = high = None
            if self.accept("in"):
                self.expect("[")
                low = self.parse_expr()
                self.expect(",")
                high = self.parse_expr()
                self.expect("]")
            stmt = RandStmt(target, low, high)
        elif self.accept("emit"):
            stmt = _PendingEmit(self.signal_ref()[0])
        elif self.accept("log"):
            stmt = LogStmt(self.string())
        elif self.accept("wait"):
            stmt = WaitStmt(float(self.number()))
        else:
            self.fail("'set', 'rand', 'emit', 'log' or 'wait'")
        self.expect(";")
        return stmt

    def parse_path(self) -> Expr:
        e: Expr = Var(self.ident("property path"))
        while self.accept("."):
            e = Attr(e, self.ident("property name"))
        return e

    # -- expressions --------------------------------------------------------

    def binary_op(self) -> str | None:
        t = self.tok
        if t.kind == "op" and t.text in PRECEDENCE:
            return t.text
        if t.kind == "ident" and t.text in ("and", "or", "implies"):
            return t.text
        return None

    def parse_expr(self, min_prec: int = 0) -> Expr:
        left = self.parse_unary()
        while True:
            op = self.binary_op()
            if op is None or PRECEDENCE[op] < min_prec:
                return left
            self.i += 1
            right = self.parse_expr(PRECEDENCE[op] + 1)
            left = Binary(op, left, right)

    def parse_unary(self) -> Expr:
        if self.accept("not"):
            return Unary("not", self.parse_expr(NOT_PRECEDENCE + 1))
        if self.at("-"):
            self.i += 1
            if self.tok.kind == "number":
                # postfix binds tighter than negation: -2.x is -(2.x)
                operand = self.parse_postfix(self.parse_primary())
                if isinstance(operand, Lit):
                    return Lit(-operand.value)
                return Unary("-", operand)
            return Unary("-", self.parse_expr(NEG_PRECEDENCE))
        return self.parse_postfix(self.parse_primary())

    def parse_primary(self) -> Expr:
        t = self.tok
        if t.kind == "number":
            self.i += 1
            return Lit(float(t.text) if "." in t.text else int(t.text))
        if t.kind == "string":
            return Lit(self.string())
        if self.accept("("):
            e = self.parse_expr()
            self.expect(")")
            return e
        if t.kind == "ident":
            if t.text in ("true", "false"):
                self.i += 1
                return Lit(t.text == "true")
            if t.text == "null":
                self.i += 1
                return Lit(None)
            if t.text in _KEYWORDS_IN_EXPR:
                self.fail("an operand")
            self.i += 1
            return Var(t.text)
        self.fail("an operand")

    def parse_postfix(self, e: Expr) -> Expr:
        while True:
            if self.accept("."):
                e = Attr(e, self.ident("property name"))
            elif self.at("->"):
                self.i += 1
                op_tok = self.tok
                op = self.ident("collection operation")
                if op not in ARROW_OPS:
                    self.i -= 1
                    self.fail("size, isEmpty, notEmpty, forAll or exists")
                self.expect("(")
                if ARROW_OPS[op] == 0:
                    self.expect(")")
                    e = Arrow(e, op)
                    continue
                iters = [self.ident("iterator")]
                while self.accept(","):
                    iters.append(self.ident("iterator"))
                if len(iters) > ARROW_OPS[op]:
                    self.resolve_error(self.span(op_tok), f"at most {ARROW_OPS[op]} iterators", str(len(iters)))
                self.expect("|")
                body = self.parse_expr()
                self.expect(")")
                e = Arrow(e, op, tuple(iters), body)
            else:
                return e


@dataclass(frozen=True)
class _PendingEmit:
    """An ``emit`` whose signal resolves once all declarations are read."""

    name: str


def parse_model(text: str, file: str = "<input>") -> EnvironmentModel:
    """Parse ``.envdt`` source.

    Raises :class:`ModelSyntaxError` carrying the first syntax error, or every
    name-resolution error (unknown signals, stereotypes, bad distributions).
    Cross references between classes, machines and states are left to
    :func:`envdt.model.validate_model`.
    """
    return _Parser(text, file).parse()


def load_model(path) -> EnvironmentModel:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read(), str(path))


# -- printer ------------------------------------------------------------------


def _stereos(items) -> str:
    return f" <<{', '.join(s.value for s in items)}>>" if items else ""


def _statement(stmt) -> str:
    if isinstance(stmt, SetStmt):
        return f"set {format_expr(stmt.target)} = {format_expr(stmt.value)};"
    if isinstance(stmt, RandStmt):
        if stmt.low is None:
            return f"rand {format_expr(stmt.target)};"
        return f"rand {format_expr(stmt.target)} in [{format_expr(stmt.low)}, {format_expr(stmt.high)}];"
    if isinstance(stmt, EmitStmt):
        return f"emit {stmt.signal.name};"
    if isinstance(stmt, LogStmt):
        return f"log {format_string(stmt.text)};"
    if isinstance(stmt, WaitStmt):
        return f"wait {format_number(stmt.ms)};"
    raise TypeError(f"unknown statement {stmt!r}")


def _block(slot: str, block: ActionBlock, indent: str) -> list[str]:
    if not block.statements:
        return [f"{indent}{slot} {{ }}"]
    if len(block.statements) == 1:
        return [f"{indent}{slot} {{ {_statement(block.statements[0])} }}"]
    return [f"{indent}{slot} {{", *(f"{indent}  {_statement(s)}" for s in block.statements), f"{indent}}}"]


def _transition(t: Transition) -> str:
    text = f"transition {t.name}: {t.source} -> {t.target}"
    if t.trigger is not None:
        text += f" on {t.trigger.name}"
    if t.belief is not None:
        text += f" belief {format_number(float(t.belief.degree))}"
        if t.belief.description:
            text += f" {format_string(t.belief.description)}"
    if t.dist is not None:
        text += f" dist {format_dist(t.dist)}"
    return text + ";"


def _machine(m: BehaviorMachine) -> list[str]:
    lines = [f"machine {m.name} for {m.owner} {{"]
    states, transitions = list(m.states), list(m.transitions)
    if (
        states and transitions
        and states[0] == State("initial", StateKind.INITIAL)
        and transitions[0].name == "initial" and transitions[0].source == "initial"
        and transitions[0].trigger is None and transitions[0].belief is None and transitions[0].dist is None
    ):
        lines.append(f"  initial -> {transitions[0].target};")
        states, transitions = states[1:], transitions[1:]
    for s in states:
        if s.kind is not StateKind.SIMPLE:
            lines.append(f"  {s.kind.value} {s.name}{_stereos(s.stereotypes)};")
            continue
        head = f"  state {s.name}{_stereos(s.stereotypes)}"
        body: list[str] = []
        for slot in BEHAVIOR_SLOTS:
            block = getattr(s, slot)
            if block is not None:
                body += _block(slot, block, "    ")
        if s.submachine is not None:
            body.append(f"    submachine {s.submachine};")
        if body:
            lines += [head + " {", *body, "  }"]
        else:
            lines.append(head + ";")
    lines += [f"  {_transition(t)}" for t in transitions]
    lines.append("}")
    return lines


def _component(c: ComponentClass, twin: bool) -> list[str]:
    lines = [f"{'twin ' if twin else ''}component {c.name}{_stereos(c.stereotypes)} {{"]
    for p in c.properties:
        ptype = f"enum({', '.join(p.literals)})" if p.type == "enum" else p.type
        text = f"  property {p.name}: {ptype}"
        if p.range is not None:
            text += f" in [{format_number(p.range[0])}, {format_number(p.range[1])}]"
        if p.unit is not None:
            text += f" unit {format_string(p.unit)}"
        lines.append(text + ";")
    lines += [f"  reception {r.name};" for r in c.receptions]
    if c.behavior is not None:
        lines.append(f"  behavior {c.behavior};")
    for a in c.associations:
        upper = "*" if a.upper is None else str(a.upper)
        lines.append(f"  assoc {a.role} -> {a.target} [{a.lower}..{upper}];")
    lines.append("}")
    return lines


def print_model(model: EnvironmentModel) -> str:
    """Canonical source for ``model``; sections with no members are omitted."""
    sections: list[list[str]] = [[f"model {model.name};"]]
    if model.root is not None:
        sections[0].append(f"start {model.root};")
    if model.signals:
        sections.append([f"signal {s.name}: {s.category.value};" for s in model.signals])
    for c in model.classes:
        sections.append(_component(c, c.name in model.dt_class_names))
    if model.constraints:
        sections.append([f"constraint {c.id} on {c.context}: {format_expr(c.expr)};" for c in model.constraints])
    for m in model.machines:
        sections.append(_machine(m))
    return "\n\n".join("\n".join(s) for s in sections) + "\n"
