"""Constraint-driven instance models.

Constraints are written as expressions in the model; :func:`classify` sorts
each one into a shape the generator can use directly (ranges, positivity,
uniqueness, collection size) and falls back to a plain boolean check for
anything else.  Generation draws uniformly inside the resulting bounds and
re-draws the whole configuration when a check still fails.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Iterable, Union

from .expr import Arrow, Attr, Binary, EvalError, Expr, Lit, Ref, Var, evaluate
from .model import Constraint, EnvironmentModel, target_property
from .stochastic import RandomStream

MAX_ATTEMPTS = 1000


class UnsatisfiableConstraints(Exception):
    def __init__(self, constraint_ids: Iterable[str], reason: str):
        self.constraint_ids = sorted(set(constraint_ids))
        self.reason = reason
        super().__init__(f"{reason}: {', '.join(self.constraint_ids) or '-'}")


class ConstraintViolation(Exception):
    """An update was rejected; the instance model is unchanged."""

    def __init__(self, constraint_ids: Iterable[str], reason: str):
        self.constraint_ids = sorted(set(constraint_ids))
        self.reason = reason
        super().__init__(f"{reason} ({', '.join(self.constraint_ids)})" if self.constraint_ids else reason)


# -- constraint shapes ------------------------------------------------------


@dataclass(frozen=True)
class Range:
    path: Expr
    low: Expr | None
    high: Expr | None


@dataclass(frozen=True)
class Positive:
    path: Expr


@dataclass(frozen=True)
class Unique:
    role: str
    prop: str


@dataclass(frozen=True)
class Cardinality:
    role: str
    low: Expr | None
    high: Expr | None


@dataclass(frozen=True)
class BoolExpr:
    expr: Expr


ConstraintKind = Union[Range, Positive, Unique, Cardinality, BoolExpr]


def _is_path(e: Expr) -> bool:
    while isinstance(e, Attr):
        e = e.obj
    return isinstance(e, Var)


def _role_of(e: Expr) -> str | None:
    """``self.devices`` or ``devices`` -> ``"devices"``."""
    if isinstance(e, Var) and e.name != "self":
        return e.name
    if isinstance(e, Attr) and e.obj == Var("self"):
        return e.name
    return None


def _is_const(e: Expr) -> bool:
    if isinstance(e, Lit):
        return True
    if isinstance(e, Var):
        return e.name.isupper()  # parameters are upper-case by convention
    if isinstance(e, Binary) and e.op in "+-*/":
        return _is_const(e.left) and _is_const(e.right)
    return False


_FLIP = {"<": ">", "<=": ">=", ">": "<", ">=": "<=", "=": "="}


def _bound(e: Expr) -> tuple[str, Expr, Expr] | None:
    """Normalise ``subject op const`` so the subject is on the left."""
    if not isinstance(e, Binary) or e.op not in _FLIP:
        return None
    if _is_const(e.right) and not _is_const(e.left):
        return e.op, e.left, e.right
    if _is_const(e.left) and not _is_const(e.right):
        return _FLIP[e.op], e.right, e.left
    return None


def _plus_one(e: Expr) -> Expr:
    return Lit(e.value + 1) if isinstance(e, Lit) else Binary("+", e, Lit(1))


def _minus_one(e: Expr) -> Expr:
    return Lit(e.value - 1) if isinstance(e, Lit) else Binary("-", e, Lit(1))


def classify(con: Constraint) -> ConstraintKind:
    e = con.expr
    if isinstance(e, Arrow) and e.op == "forAll" and len(e.iterators) == 2:
        a, b = e.iterators
        role = _role_of(e.source)
        body = e.body
        if (
            role and isinstance(body, Binary) and body.op == "<>"
            and isinstance(body.left, Attr) and isinstance(body.right, Attr)
            and body.left.name == body.right.name
            and {body.left.obj, body.right.obj} == {Var(a), Var(b)}
        ):
            return Unique(role, body.left.name)
        return BoolExpr(e)

    parts = [e]
    if isinstance(e, Binary) and e.op == "and":
        parts = [e.left, e.right]
    bounds = [_bound(p) for p in parts]
    if any(b is None for b in bounds):
        return BoolExpr(e)
    subjects = {b[1] for b in bounds}
    if len(subjects) != 1:
        return BoolExpr(e)
    (subject,) = subjects
    low = high = None
    for op, _, const in bounds:
        if op == ">=":
            low = const
        elif op == ">":
            low = ("gt", const)
        elif op == "<=":
            high = const
        elif op == "<":
            high = ("lt", const)
        else:
            low = high = const

    if isinstance(subject, Arrow) and subject.op == "size":
        role = _role_of(subject.source)
        if role is None:
            return BoolExpr(e)
        if isinstance(low, tuple):
            low = _plus_one(low[1])
        if isinstance(high, tuple):
            high = _minus_one(high[1])
        return Cardinality(role, low, high)
    if not _is_path(subject):
        return BoolExpr(e)
    if low == ("gt", Lit(0)) and high is None:
        return Positive(subject)
    if isinstance(low, tuple) or isinstance(high, tuple):
        return BoolExpr(e)
    return Range(subject, low, high)


# -- instance model ---------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    id: str
    cls: str
    values: dict[str, Any]


@dataclass(frozen=True)
class Link:
    source: str
    role: str
    target: str


@dataclass(frozen=True)
class InstanceModel:
    """An immutable snapshot; updates return a new snapshot."""

    instances: tuple[Instance, ...]
    links: tuple[Link, ...]
    revision: int = 0
    model: EnvironmentModel | None = field(default=None, compare=False, repr=False)
    params: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    # lookup tables, built on first use; snapshots are immutable so they never go stale
    @cached_property
    def _by_id(self) -> dict[str, Instance]:
        return {i.id: i for i in self.instances}

    @cached_property
    def _by_class(self) -> dict[str, list[Instance]]:
        out: dict[str, list[Instance]] = {}
        for i in self.instances:
            out.setdefault(i.cls, []).append(i)
        return out

    @cached_property
    def _outgoing(self) -> dict[tuple[str, str], list[str]]:
        out: dict[tuple[str, str], list[str]] = {}
        for ln in self.links:
            out.setdefault((ln.source, ln.role), []).append(ln.target)
        return out

    def get(self, instance_id: str) -> Instance | None:
        return self._by_id.get(instance_id)

    def of_class(self, cls: str) -> list[Instance]:
        return list(self._by_class.get(cls, ()))

    def targets(self, source: str, role: str) -> list[str]:
        return list(self._outgoing.get((source, role), ()))

    def attribute(self, obj: Ref, name: str) -> Any:
        inst = self.get(obj.id)
        if inst is None:
            raise EvalError(f"no instance {obj.id!r}")
        if name in inst.values:
            return inst.values[name]
        cls = self.model.cls(inst.cls) if self.model else None
        assoc = cls.assoc(name) if cls else None
        if assoc is None:
            raise EvalError(f"{inst.cls} has no property or role {name!r}")
        refs = tuple(Ref(t) for t in self.targets(inst.id, name))
        if assoc.many:
            return refs
        return refs[0] if refs else None


@dataclass(frozen=True)
class Violation:
    constraint_id: str
    instance_id: str
    explanation: str


def check_constraints(
    instance: InstanceModel, constraints: Iterable[Constraint] | None = None
) -> list[Violation]:
    """Every (constraint, context instance) pair that does not hold."""
    if constraints is None:
        constraints = instance.model.constraints
    out = []
    for con in constraints:
        for inst in instance.of_class(con.context):
            try:
                ok = evaluate(con.expr, instance, Ref(inst.id), params=instance.params)
            except EvalError as exc:
                out.append(Violation(con.id, inst.id, str(exc)))
                continue
            if ok is not True:
                out.append(Violation(con.id, inst.id, f"{con.id} does not hold for {inst.id}"))
    return out


# -- value domains ----------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    type: str
    low: float | None = None
    high: float | None = None
    open_low: bool = False
    literals: tuple[str, ...] = ()
    constraint_ids: tuple[str, ...] = ()

    def empty(self) -> bool:
        if self.low is None or self.high is None:
            return False
        if self.type == "int":
            lo = math.floor(self.low) + 1 if self.open_low else math.ceil(self.low)
            return lo > math.floor(self.high)
        return self.low > self.high or (self.open_low and self.low >= self.high)


_DEFAULT_SPAN = {"int": (0, 100), "real": (0.0, 1.0)}


def _const(e: Expr | None, params: dict[str, Any]) -> float | None:
    if e is None:
        return None
    value = evaluate(e, _NoNav(), None, params=params)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise EvalError(f"bound is not a number: {value!r}")
    return value


class _NoNav:
    def attribute(self, obj: Ref, name: str) -> Any:
        raise EvalError("bounds must be constant")


def property_domains(model: EnvironmentModel, params: dict[str, Any]) -> dict[tuple[str, str], Domain]:
    """Value domain of every environment property after applying constraints."""
    doms: dict[tuple[str, str], Domain] = {}
    for cls in model.environment_classes:
        for p in cls.properties:
            lo, hi = p.range if p.range is not None else (None, None)
            doms[(cls.name, p.name)] = Domain(p.type, lo, hi, literals=p.literals)
    for con in model.constraints:
        kind = classify(con)
        if not isinstance(kind, (Range, Positive)):
            continue
        try:
            key = target_property(model, con.context, kind.path)
        except (TypeError, AttributeError, IndexError):
            continue
        if key not in doms:
            continue
        d = doms[key]
        lo, hi, open_low = d.low, d.high, d.open_low
        if isinstance(kind, Positive):
            if lo is None or lo <= 0:
                lo, open_low = 0, True
        else:
            clo, chi = _const(kind.low, params), _const(kind.high, params)
            if clo is not None and (lo is None or clo > lo or (clo == lo and open_low)):
                lo, open_low = clo, False
            if chi is not None and (hi is None or chi < hi):
                hi = chi
        doms[key] = replace(d, low=lo, high=hi, open_low=open_low, constraint_ids=d.constraint_ids + (con.id,))
    return doms


def draw_value(dom: Domain, stream: RandomStream, label: str = "") -> Any:
    """Uniform draw from a domain; consumes exactly one uniform."""
    u = stream.uniform()
    if dom.type == "bool":
        return u < 0.5
    if dom.type == "enum":
        return dom.literals[min(int(u * len(dom.literals)), len(dom.literals) - 1)]
    if dom.type == "string":
        return f"{label}-{int(u * 1_000_000):06d}"
    default_lo, default_hi = _DEFAULT_SPAN[dom.type]
    lo = dom.low if dom.low is not None else (default_lo if dom.high is None else min(default_lo, dom.high))
    hi = dom.high if dom.high is not None else max(default_hi, lo + (default_hi - default_lo))
    if dom.type == "int":
        lo = math.floor(lo) + 1 if dom.open_low else math.ceil(lo)
        hi = math.floor(hi)
        return min(lo + int(u * (hi - lo + 1)), hi)
    return lo + u * (hi - lo)


def _cardinalities(model: EnvironmentModel, params: dict[str, Any]) -> dict[tuple[str, str], tuple[int, int, tuple[str, ...]]]:
    out = {}
    for cls in model.environment_classes:
        for a in cls.associations:
            hi = a.upper if a.upper is not None else max(a.lower, 1)
            out[(cls.name, a.role)] = (a.lower, hi, ())
    for con in model.constraints:
        kind = classify(con)
        if not isinstance(kind, Cardinality) or (con.context, kind.role) not in out:
            continue
        lo, hi, ids = out[(con.context, kind.role)]
        clo, chi = _const(kind.low, params), _const(kind.high, params)
        assoc = model.cls(con.context).assoc(kind.role)
        if clo is not None:
            lo = max(lo, math.ceil(clo))
        if chi is not None:
            hi = math.floor(chi) if assoc.upper is None else min(assoc.upper, math.floor(chi))
        out[(con.context, kind.role)] = (lo, hi, ids + (con.id,))
    return out


# -- generation ---------------------------------------------------------------


def instantiate(model: EnvironmentModel, seed: int, params: dict[str, Any] | None = None) -> InstanceModel:
    """Create instances of every environment class, satisfying all constraints.

    Root classes (not the target of any association) get one instance each;
    association targets are created per owner with a count drawn uniformly
    from the allowed range.  Property values are drawn uniformly from their
    domains.  Deterministic for a fixed seed.
    """
    params = dict(params or {})
    if "N" in params and params["N"] < 1:
        raise ValueError("N must be at least 1")
    try:
        domains = property_domains(model, params)
        cards = _cardinalities(model, params)
    except EvalError as exc:
        raise UnsatisfiableConstraints([c.id for c in model.constraints], f"cannot evaluate bounds: {exc}") from exc
    bad = [cid for d in domains.values() if d.empty() for cid in d.constraint_ids]
    bad += [cid for lo, hi, ids in cards.values() if lo > hi for cid in ids]
    empty_without_ids = [k for k, d in domains.items() if d.empty() and not d.constraint_ids]
    if bad or empty_without_ids:
        raise UnsatisfiableConstraints(bad, "bounds conflict")

    stream = RandomStream(seed, "instantiate")
    last: list[Violation] = []
    for _ in range(MAX_ATTEMPTS):
        candidate = _generate(model, params, domains, cards, stream)
        last = check_constraints(candidate)
        if not last:
            return candidate
    raise UnsatisfiableConstraints([v.constraint_id for v in last], f"no satisfying draw in {MAX_ATTEMPTS} attempts")


def _generate(model, params, domains, cards, stream: RandomStream) -> InstanceModel:
    env = model.environment_classes
    env_names = {c.name for c in env}
    targeted = {a.target for c in env for a in c.associations}
    roots = [c for c in env if c.name not in targeted] or list(env[:1])
    counters: dict[str, int] = {}
    instances: list[Instance] = []
    links: list[Link] = []

    def create(cls_name: str, ancestors: dict[str, str]) -> str:
        counters[cls_name] = counters.get(cls_name, 0) + 1
        iid = f"{cls_name}#{counters[cls_name]}"
        cls = model.cls(cls_name)
        values = {p.name: draw_value(domains[(cls_name, p.name)], stream, f"{iid}.{p.name}") for p in cls.properties}
        instances.append(Instance(iid, cls_name, values))
        scope = {**ancestors, cls_name: iid}
        for a in cls.associations:
            if a.target not in env_names:
                continue
            if a.target in scope:
                links.append(Link(iid, a.role, scope[a.target]))
                continue
            lo, hi, _ = cards[(cls_name, a.role)]
            count = min(lo + int(stream.uniform() * (hi - lo + 1)), hi)
            for _ in range(count):
                links.append(Link(iid, a.role, create(a.target, scope)))
        return iid

    for root in roots:
        create(root.name, {})
    # every class gets at least one instance, even if nothing owns it
    for cls in env:
        if cls.name not in counters:
            create(cls.name, {})
    return InstanceModel(tuple(instances), tuple(links), 0, model, params)


# -- updates ------------------------------------------------------------------


@dataclass(frozen=True)
class SetProperty:
    instance_id: str
    prop: str
    value: Any


@dataclass(frozen=True)
class AddLink:
    source: str
    role: str
    target: str


@dataclass(frozen=True)
class RemoveLink:
    source: str
    role: str
    target: str


Update = Union[SetProperty, AddLink, RemoveLink]


def _type_ok(ptype: str, literals: tuple[str, ...], value: Any) -> bool:
    if ptype == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if ptype == "real":
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if ptype == "bool":
        return isinstance(value, bool)
    if ptype == "string":
        return isinstance(value, str)
    return value in literals


def apply_update(instance: InstanceModel, update: Update) -> InstanceModel:
    """Commit ``update`` if every constraint still holds, else raise.

    The input snapshot is assumed consistent, so only constraints that
    mention the changed property or role are re-checked.  Raises
    :class:`ConstraintViolation`; the input snapshot is never touched.
    """
    model = instance.model
    if isinstance(update, SetProperty):
        touched = update.prop
        inst = instance.get(update.instance_id)
        if inst is None:
            raise KeyError(update.instance_id)
        decl = model.cls(inst.cls).prop(update.prop)
        if decl is None:
            raise ConstraintViolation([], f"{inst.cls} has no property {update.prop!r}")
        value = update.value
        if decl.type == "real" and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not _type_ok(decl.type, decl.literals, value):
            raise ConstraintViolation([], f"{value!r} is not a valid {decl.type} for {inst.cls}.{decl.name}")
        if decl.range is not None and not decl.range[0] <= value <= decl.range[1]:
            raise ConstraintViolation([], f"{value!r} outside declared range of {inst.cls}.{decl.name}")
        new_inst = Instance(inst.id, inst.cls, {**inst.values, update.prop: value})
        candidate = replace(
            instance,
            instances=tuple(new_inst if i.id == inst.id else i for i in instance.instances),
            revision=instance.revision + 1,
        )
    else:
        touched = update.role
        src = instance.get(update.source)
        if src is None:
            raise KeyError(update.source)
        assoc = model.cls(src.cls).assoc(update.role)
        if assoc is None:
            raise ConstraintViolation([], f"{src.cls} has no role {update.role!r}")
        link = Link(update.source, update.role, update.target)
        current = instance.targets(update.source, update.role)
        if isinstance(update, AddLink):
            tgt = instance.get(update.target)
            if tgt is None or tgt.cls != assoc.target:
                raise ConstraintViolation([], f"{update.target!r} is not a {assoc.target}")
            if assoc.upper is not None and len(current) >= assoc.upper:
                raise ConstraintViolation([], f"multiplicity of {src.cls}.{update.role} exceeded")
            links = instance.links + (link,)
        else:
            if link not in instance.links:
                raise ConstraintViolation([], f"no link {update.source}.{update.role} -> {update.target}")
            if len(current) <= assoc.lower:
                raise ConstraintViolation([], f"multiplicity of {src.cls}.{update.role} below lower bound")
            links = tuple(ln for ln in instance.links if ln != link)
        candidate = replace(instance, links=links, revision=instance.revision + 1)
    violations = check_constraints(candidate, model.constraints_mentioning(touched))
    if violations:
        raise ConstraintViolation([v.constraint_id for v in violations], "update violates constraints")
    return candidate



# -- serialisation ----------------------------------------------------------


def dumps_instance(instance: InstanceModel) -> str:
    """Line-delimited records: a header, one per instance, one per link."""
    lines = [json.dumps({"record": "instance-model", "model": instance.model.name if instance.model else None,
                         "revision": instance.revision, "params": instance.params}, separators=(",", ":"))]
    for i in instance.instances:
        lines.append(json.dumps({"record": "instance", "id": i.id, "class": i.cls, "values": i.values},
                                separators=(",", ":")))
    for ln in instance.links:
        lines.append(json.dumps({"record": "link", "source": ln.source, "role": ln.role, "target": ln.target},
                                separators=(",", ":")))
    return "\n".join(lines) + "\n"


def loads_instance(text: str, model: EnvironmentModel | None = None) -> InstanceModel:
    instances, links, revision, params = [], [], 0, {}
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec["record"] == "instance-model":
            revision, params = rec["revision"], rec.get("params", {})
        elif rec["record"] == "instance":
            instances.append(Instance(rec["id"], rec["class"], rec["values"]))
        elif rec["record"] == "link":
            links.append(Link(rec["source"], rec["role"], rec["target"]))
    return InstanceModel(tuple(instances), tuple(links), revision, model, params)
