"""Expression trees shared by constraints and action blocks.

The language is a small OCL-flavoured subset: literals, dotted navigation,
arithmetic, comparisons, ``and``/``or``/``implies``/``not`` and collection
operations written with ``->`` (``size``, ``isEmpty``, ``notEmpty``,
``forAll``, ``exists``).
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Protocol, Union


class EvalError(Exception):
    """Raised when an expression cannot be evaluated against an instance."""


@dataclass(frozen=True)
class Lit:
    value: Any


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Attr:
    obj: Expr
    name: str


@dataclass(frozen=True)
class Arrow:
    """``source->op(iterators | body)``."""

    source: Expr
    op: str
    iterators: tuple[str, ...] = ()
    body: Expr | None = None


@dataclass(frozen=True)
class Unary:
    op: str
    operand: Expr


@dataclass(frozen=True)
class Binary:
    op: str
    left: Expr
    right: Expr


Expr = Union[Lit, Var, Attr, Arrow, Unary, Binary]

ARROW_OPS = {"size": 0, "isEmpty": 0, "notEmpty": 0, "forAll": 2, "exists": 1}

# binding power; higher binds tighter
PRECEDENCE = {
    "implies": 1,
    "or": 2,
    "and": 3,
    "=": 5, "<>": 5, "<": 5, "<=": 5, ">": 5, ">=": 5,
    "+": 6, "-": 6,
    "*": 7, "/": 7,
}
NOT_PRECEDENCE = 4
NEG_PRECEDENCE = 8
POSTFIX_PRECEDENCE = 9


@dataclass(frozen=True)
class Ref:
    """Reference to an instance in an instance model."""

    id: str


class Navigator(Protocol):
    def attribute(self, obj: Ref, name: str) -> Any: ...


def as_collection(value: Any) -> tuple:
    if value is None:
        return ()
    if isinstance(value, tuple):
        return value
    return (value,)


def evaluate(
    expr: Expr,
    nav: Navigator,
    self_obj: Ref | None,
    variables: dict[str, Any] | None = None,
    params: dict[str, Any] | None = None,
) -> Any:
    variables = variables or {}
    params = params or {}

    def ev(e: Expr, env: dict[str, Any]) -> Any:
        if isinstance(e, Lit):
            return e.value
        if isinstance(e, Var):
            if e.name in env:
                return env[e.name]
            if e.name == "self":
                return self_obj
            if e.name in params:
                return params[e.name]
            if self_obj is None:
                raise EvalError(f"unbound name {e.name!r}")
            return nav.attribute(self_obj, e.name)
        if isinstance(e, Attr):
            target = ev(e.obj, env)
            if not isinstance(target, Ref):
                raise EvalError(f"cannot read {e.name!r} of {target!r}")
            return nav.attribute(target, e.name)
        if isinstance(e, Arrow):
            items = as_collection(ev(e.source, env))
            if e.op == "size":
                return len(items)
            if e.op == "isEmpty":
                return not items
            if e.op == "notEmpty":
                return bool(items)
            if e.op == "exists":
                (v,) = e.iterators
                return any(_truth(ev(e.body, {**env, v: x})) for x in items)
            if e.op == "forAll":
                if len(e.iterators) == 1:
                    (v,) = e.iterators
                    return all(_truth(ev(e.body, {**env, v: x})) for x in items)
                a, b = e.iterators
                # pairs of distinct members; comparing an element with itself is vacuous
                return all(
                    _truth(ev(e.body, {**env, a: x, b: y}))
                    for i, x in enumerate(items)
                    for j, y in enumerate(items)
                    if i != j
                )
            raise EvalError(f"unknown collection operation {e.op!r}")
        if isinstance(e, Unary):
            value = ev(e.operand, env)
            if e.op == "not":
                return not _truth(value)
            if e.op == "-":
                return -_number(value)
            raise EvalError(f"unknown operator {e.op!r}")
        if isinstance(e, Binary):
            op = e.op
            if op == "and":
                return _truth(ev(e.left, env)) and _truth(ev(e.right, env))
            if op == "or":
                return _truth(ev(e.left, env)) or _truth(ev(e.right, env))
            if op == "implies":
                return (not _truth(ev(e.left, env))) or _truth(ev(e.right, env))
            left, right = ev(e.left, env), ev(e.right, env)
            if op == "=":
                return left == right
            if op == "<>":
                return left != right
            if op in ("<", "<=", ">", ">="):
                left, right = _number(left), _number(right)
                return {
                    "<": left < right,
                    "<=": left <= right,
                    ">": left > right,
                    ">=": left >= right,
                }[op]
            left, right = _number(left), _number(right)
            if op == "+":
                return left + right
            if op == "-":
                return left - right
            if op == "*":
                return left * right
            if op == "/":
                if right == 0:
                    raise EvalError("division by zero")
                result = left / right
                return int(result) if isinstance(left, int) and isinstance(right, int) and result.is_integer() else result
            raise EvalError(f"unknown operator {op!r}")
        raise EvalError(f"not an expression: {e!r}")

    return ev(expr, dict(variables))


def _truth(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    raise EvalError(f"expected a boolean, got {value!r}")


def _number(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise EvalError(f"expected a number, got {value!r}")
    return value


def names(e: Expr) -> frozenset[str]:
    """Every variable and member name an expression mentions."""
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Attr):
        return names(e.obj) | {e.name}
    if isinstance(e, Arrow):
        out = names(e.source)
        return out | names(e.body) if e.body is not None else out
    if isinstance(e, Unary):
        return names(e.operand)
    if isinstance(e, Binary):
        return names(e.left) | names(e.right)
    return frozenset()


def format_number(value: float | int) -> str:
    """Decimal rendering without exponents; round-trips through ``float``."""
    if isinstance(value, bool):
        raise TypeError("booleans are not numbers here")
    if isinstance(value, int):
        return str(value)
    text = repr(float(value))
    if "e" in text or "E" in text:
        text = format(Decimal(text), "f")
        if "." not in text:
            text += ".0"
    return text


def format_string(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def format_expr(e: Expr, parent: int = 0) -> str:
    if isinstance(e, Lit):
        if isinstance(e.value, bool):
            return "true" if e.value else "false"
        if isinstance(e.value, str):
            return format_string(e.value)
        if e.value is None:
            return "null"
        text = format_number(e.value)
        # a leading minus would otherwise bind looser than the postfix
        return f"({text})" if e.value < 0 and parent > NEG_PRECEDENCE else text
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Attr):
        return f"{format_expr(e.obj, POSTFIX_PRECEDENCE)}.{e.name}"
    if isinstance(e, Arrow):
        src = format_expr(e.source, POSTFIX_PRECEDENCE)
        if e.body is None:
            return f"{src}->{e.op}()"
        return f"{src}->{e.op}({', '.join(e.iterators)} | {format_expr(e.body)})"
    if isinstance(e, Unary):
        if e.op == "not":
            text, prec = f"not {format_expr(e.operand, NOT_PRECEDENCE)}", NOT_PRECEDENCE
        else:
            text, prec = f"-{format_expr(e.operand, NEG_PRECEDENCE)}", NEG_PRECEDENCE
        return f"({text})" if prec < parent else text
    if isinstance(e, Binary):
        prec = PRECEDENCE[e.op]
        # left-associative: the right operand needs parens at equal precedence
        text = f"{format_expr(e.left, prec)} {e.op} {format_expr(e.right, prec + 1)}"
        return f"({text})" if prec < parent else text
    raise TypeError(f"not an expression: {e!r}")

