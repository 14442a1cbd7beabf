"""
The condition language used by behaviour triggers, membership rules and
``AwaitState``/``Branch`` actions.

Surface syntax, loosest binding first::

    a or b
    a and b
    a > b, a is b, a in [1, 2], role has capability,
    sensation("A") BEFORE sensation("B"), sensation("A") DURING [3, 9]
    not a
    literals, dotted paths, COUNT/AVERAGE/SUM(collection[.field]), ( ... )

Comparison and temporal operators are left-associative. ``parse`` returns a
type-checked AST; ``to_source`` prints the canonical form and
``parse(to_source(ast)) == ast``. ``evaluate`` is total: it never raises for a
type-checked expression, whatever the context holds.
"""

import json
import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from lark import Lark, Transformer, v_args
from lark.exceptions import UnexpectedInput, VisitError

from .exceptions import ConditionError, ConditionSyntaxError, ConditionTypeError
from .values import Value, compare, is_numeric, is_value, tag_of, values_equal

logger = logging.getLogger(__name__)

CONDITION_GRAMMAR = r"""
    ?start: or_expr

    ?or_expr: and_expr
            | or_expr "or" and_expr             -> or_op

    ?and_expr: cmp_expr
             | and_expr "and" cmp_expr          -> and_op

    ?cmp_expr: unary
             | cmp_expr CMP_OP unary            -> cmp_op
             | cmp_expr IS unary                -> cmp_op
             | cmp_expr IN list_literal         -> cmp_op
             | cmp_expr "has" NAME              -> has_op
             | cmp_expr BEFORE unary            -> temporal_op
             | cmp_expr AFTER unary             -> temporal_op
             | cmp_expr DURING interval         -> temporal_op

    ?unary: atom
          | "not" unary                         -> not_op

    ?atom: literal
         | path
         | aggregate
         | event
         | "(" or_expr ")"

    ?literal: "true"                            -> true
            | "false"                           -> false
            | "null"                            -> null
            | NUMBER                            -> number
            | ESCAPED_STRING                    -> string

    path: NAME ("." NAME)*
    aggregate: (COUNT | AVERAGE | SUM) "(" NAME ("." NAME)* ")"
    event: NAME "(" ESCAPED_STRING ")"
    list_literal: "[" (literal ("," literal)*)? "]"
    interval: "[" NUMBER "," NUMBER "]"

    IS: "is"
    IN: "in"
    BEFORE: "BEFORE"
    AFTER: "AFTER"
    DURING: "DURING"
    COUNT: "COUNT"
    AVERAGE: "AVERAGE"
    SUM: "SUM"
    CMP_OP: /(>=|<=|==|!=|>|<)/
    NAME: /[A-Za-z_][A-Za-z0-9_]*/
    NUMBER: /-?\d+(\.\d+)?([eE][+-]?\d+)?/

    %import common.ESCAPED_STRING
    %import common.WS
    %ignore WS
"""

EVENT_SELECTOR = "sensation"

Position = tuple[int, int] | None


# AST


class Expr:
    """Base class of every condition node."""

    pos: Position


@dataclass(frozen=True, eq=False)
class Literal(Expr):
    value: Value
    pos: Position = field(default=None, compare=False, repr=False)

    def __eq__(self, other):
        if not isinstance(other, Literal):
            return NotImplemented
        return tag_of(self.value) is tag_of(other.value) and self.value == other.value

    def __hash__(self):
        return hash((tag_of(self.value), self.value))


@dataclass(frozen=True)
class Path(Expr):
    segments: tuple[str, ...]
    pos: Position = field(default=None, compare=False, repr=False)

    @property
    def dotted(self) -> str:
        return ".".join(self.segments)


@dataclass(frozen=True)
class ListLiteral(Expr):
    items: tuple[Literal, ...]
    pos: Position = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Interval(Expr):
    start: int
    end: int
    pos: Position = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class EventSelector(Expr):
    kind: str
    pos: Position = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Agg(Expr):
    op: str
    collection: str
    attribute: str | None = None
    pos: Position = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Not(Expr):
    operand: Expr
    pos: Position = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class And(Expr):
    left: Expr
    right: Expr
    pos: Position = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Or(Expr):
    left: Expr
    right: Expr
    pos: Position = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Cmp(Expr):
    op: str
    left: Expr
    right: Expr
    pos: Position = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Temporal(Expr):
    op: str
    left: Expr
    right: Expr
    pos: Position = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Has(Expr):
    subject: Expr
    capability: str
    pos: Position = field(default=None, compare=False, repr=False)


CMP_OPS = (">", "<", ">=", "<=", "==", "!=", "is", "in")
TEMPORAL_OPS = ("BEFORE", "AFTER", "DURING")
AGG_OPS = ("COUNT", "AVERAGE", "SUM")


def walk(expr: Expr) -> Iterator[Expr]:
    yield expr
    if isinstance(expr, Not):
        yield from walk(expr.operand)
    elif isinstance(expr, (And, Or, Cmp, Temporal)):
        yield from walk(expr.left)
        yield from walk(expr.right)
    elif isinstance(expr, Has):
        yield from walk(expr.subject)
    elif isinstance(expr, ListLiteral):
        yield from expr.items


def referenced_paths(expr: Expr) -> frozenset[str]:
    return frozenset(node.dotted for node in walk(expr) if isinstance(node, Path))


def referenced_roots(expr: Expr) -> frozenset[str]:
    roots = {node.segments[0] for node in walk(expr) if isinstance(node, Path)}
    roots |= {node.collection for node in walk(expr) if isinstance(node, Agg)}
    return frozenset(roots)


def referenced_events(expr: Expr) -> frozenset[str]:
    return frozenset(node.kind for node in walk(expr) if isinstance(node, EventSelector))


# parsing


def _pos(meta) -> Position:
    if getattr(meta, "empty", True):
        return None
    return (meta.line, meta.column)


def _number(token) -> int | float:
    text = str(token)
    if any(marker in text for marker in ".eE"):
        return float(text)
    return int(text)


@v_args(meta=True)
class ConditionTransformer(Transformer):
    """Turns the lark parse tree into the frozen AST above."""

    def or_op(self, meta, children):
        return Or(children[0], children[1], pos=_pos(meta))

    def and_op(self, meta, children):
        return And(children[0], children[1], pos=_pos(meta))

    def not_op(self, meta, children):
        return Not(children[0], pos=_pos(meta))

    def cmp_op(self, meta, children):
        left, op, right = children
        return Cmp(str(op), left, right, pos=_pos(meta))

    def has_op(self, meta, children):
        subject, name = children
        return Has(subject, str(name), pos=_pos(meta))

    def temporal_op(self, meta, children):
        left, op, right = children
        return Temporal(str(op), left, right, pos=_pos(meta))

    def true(self, meta, children):
        return Literal(True, pos=_pos(meta))

    def false(self, meta, children):
        return Literal(False, pos=_pos(meta))

    def null(self, meta, children):
        return Literal(None, pos=_pos(meta))

    def number(self, meta, children):
        return Literal(_number(children[0]), pos=_pos(meta))

    def string(self, meta, children):
        return Literal(json.loads(children[0]), pos=_pos(meta))

    def path(self, meta, children):
        return Path(tuple(str(name) for name in children), pos=_pos(meta))

    def aggregate(self, meta, children):
        op, collection, *rest = (str(child) for child in children)
        return Agg(op, collection, ".".join(rest) or None, pos=_pos(meta))

    def event(self, meta, children):
        name, kind = children
        if str(name) != EVENT_SELECTOR:
            raise ConditionSyntaxError(
                f"Unknown selector '{name}'", name.line, name.column, expected={EVENT_SELECTOR}
            )
        return EventSelector(json.loads(kind), pos=_pos(meta))

    def list_literal(self, meta, children):
        return ListLiteral(tuple(children), pos=_pos(meta))

    def interval(self, meta, children):
        start, end = (_number(child) for child in children)
        if not isinstance(start, int) or not isinstance(end, int) or start < 0 or start > end:
            raise ConditionSyntaxError(
                "Interval bounds must be ticks with start <= end", *(_pos(meta) or (None, None))
            )
        return Interval(start, end, pos=_pos(meta))


_parser = Lark(CONDITION_GRAMMAR, parser="lalr", propagate_positions=True)


def _syntax_tree(source: str) -> Expr:
    try:
        tree = _parser.parse(source)
        return ConditionTransformer().transform(tree)
    except VisitError as exc:
        if isinstance(exc.orig_exc, ConditionError):
            raise exc.orig_exc from None
        raise
    except UnexpectedInput as exc:
        expected = getattr(exc, "expected", None) or getattr(exc, "allowed", None) or ()
        line = exc.line if exc.line != -1 else None
        column = exc.column if exc.column != -1 else None
        raise ConditionSyntaxError(
            f"Unexpected input in condition {source!r}", line, column, expected=expected
        ) from None


def parse_expression(source: str) -> Expr:
    """Parse and type-check an expression of any type (used by SetShared values)."""
    expr = _syntax_tree(source)
    type_check(expr)
    return expr


def parse(source: str) -> Expr:
    """Parse a condition; its type must be boolean."""
    expr = _syntax_tree(source)
    result = type_check(expr)
    if result not in (ExprType.BOOLEAN, ExprType.ANY):
        line, column = expr.pos or (None, None)
        raise ConditionTypeError(f"Condition must be boolean, found {result.value}", line, column)
    return expr


# printing

_PREC_OR, _PREC_AND, _PREC_CMP, _PREC_NOT, _PREC_ATOM = 1, 2, 3, 4, 5


def _literal_source(value: Value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, int):
        return str(value)
    raise ConditionError(f"{value!r} has no literal form")


def _render(expr: Expr) -> tuple[str, int]:
    if isinstance(expr, Or):
        return f"{_wrap(expr.left, _PREC_OR)} or {_wrap(expr.right, _PREC_AND)}", _PREC_OR
    if isinstance(expr, And):
        return f"{_wrap(expr.left, _PREC_AND)} and {_wrap(expr.right, _PREC_CMP)}", _PREC_AND
    if isinstance(expr, (Cmp, Temporal)):
        return f"{_wrap(expr.left, _PREC_CMP)} {expr.op} {_wrap(expr.right, _PREC_NOT)}", _PREC_CMP
    if isinstance(expr, Has):
        return f"{_wrap(expr.subject, _PREC_CMP)} has {expr.capability}", _PREC_CMP
    if isinstance(expr, Not):
        return f"not {_wrap(expr.operand, _PREC_NOT)}", _PREC_NOT
    if isinstance(expr, Literal):
        return _literal_source(expr.value), _PREC_ATOM
    if isinstance(expr, Path):
        return expr.dotted, _PREC_ATOM
    if isinstance(expr, Agg):
        target = expr.collection if expr.attribute is None else f"{expr.collection}.{expr.attribute}"
        return f"{expr.op}({target})", _PREC_ATOM
    if isinstance(expr, EventSelector):
        return f"{EVENT_SELECTOR}({json.dumps(expr.kind)})", _PREC_ATOM
    if isinstance(expr, ListLiteral):
        return "[" + ", ".join(_literal_source(item.value) for item in expr.items) + "]", _PREC_ATOM
    if isinstance(expr, Interval):
        return f"[{expr.start}, {expr.end}]", _PREC_ATOM
    raise ConditionError(f"Cannot print {expr!r}")


def _wrap(expr: Expr, minimum: int) -> str:
    text, precedence = _render(expr)
    return text if precedence >= minimum else f"({text})"


def to_source(expr: Expr) -> str:
    """Canonical source text; used in traces and for normalization."""
    return _render(expr)[0]


# type checking


class ExprType(str, Enum):
    BOOLEAN = "boolean"
    NUMBER = "number"
    STRING = "string"
    NULL = "null"
    ANY = "any"
    EVENT = "event"
    INTERVAL = "interval"
    LIST = "list"


_NOT_A_VALUE = (ExprType.EVENT, ExprType.INTERVAL, ExprType.LIST)


def _fail(expr: Expr, message: str):
    line, column = expr.pos or (None, None)
    raise ConditionTypeError(message, line, column)


def _literal_type(value: Value) -> ExprType:
    if value is None:
        return ExprType.NULL
    if isinstance(value, bool):
        return ExprType.BOOLEAN
    if isinstance(value, str):
        return ExprType.STRING
    return ExprType.NUMBER


def type_check(expr: Expr) -> ExprType:
    """Infer the type of ``expr``; raises ConditionTypeError with the offending position."""
    if isinstance(expr, Literal):
        return _literal_type(expr.value)
    if isinstance(expr, Path):
        return ExprType.ANY
    if isinstance(expr, Agg):
        return ExprType.NUMBER
    if isinstance(expr, EventSelector):
        return ExprType.EVENT
    if isinstance(expr, Interval):
        return ExprType.INTERVAL
    if isinstance(expr, ListLiteral):
        return ExprType.LIST
    if isinstance(expr, (Not, And, Or)):
        operands = (expr.operand,) if isinstance(expr, Not) else (expr.left, expr.right)
        for operand in operands:
            found = type_check(operand)
            if found not in (ExprType.BOOLEAN, ExprType.ANY):
                _fail(operand, f"Logical operand must be boolean, found {found.value}")
        return ExprType.BOOLEAN
    if isinstance(expr, Cmp):
        left = type_check(expr.left)
        right = type_check(expr.right)
        if left in _NOT_A_VALUE:
            _fail(expr.left, f"'{expr.op}' cannot compare a {left.value}")
        if expr.op == "in":
            if right is not ExprType.LIST:
                _fail(expr.right, "'in' needs a list literal")
        elif right in _NOT_A_VALUE:
            _fail(expr.right, f"'{expr.op}' cannot compare a {right.value}")
        return ExprType.BOOLEAN
    if isinstance(expr, Temporal):
        left = type_check(expr.left)
        right = type_check(expr.right)
        if left is not ExprType.EVENT:
            _fail(expr.left, f"{expr.op} applies to event selectors, found {left.value}")
        wanted = ExprType.INTERVAL if expr.op == "DURING" else ExprType.EVENT
        if right is not wanted:
            _fail(expr.right, f"{expr.op} needs a {wanted.value} on the right, found {right.value}")
        return ExprType.BOOLEAN
    if isinstance(expr, Has):
        if not isinstance(expr.subject, Path):
            _fail(expr.subject, "'has' applies to a role or holon name")
        return ExprType.BOOLEAN
    raise ConditionTypeError(f"Unknown node {expr!r}")


# evaluation


@dataclass(frozen=True)
class EvalContext:
    """
    Read-only view handed to ``evaluate``.

    ``bindings`` maps names (roles, loop variables, ``sensation``,
    ``members``) to values, mappings, sequences or subjects exposing
    ``field(name)`` and ``has_capability(name)``. ``shared_state`` is the flat
    dotted-path map of a collaboration. Paths resolve against bindings first.
    """

    bindings: Mapping[str, Any] = field(default_factory=dict)
    shared_state: Mapping[str, Value] = field(default_factory=dict)
    event_log: Sequence[Any] = ()
    now: int = 0


def _descend(obj: Any, segments: Sequence[str]) -> Any:
    if not segments:
        return obj
    if hasattr(obj, "field") and callable(obj.field):
        return obj.field(".".join(segments))
    if isinstance(obj, Mapping):
        joined = ".".join(segments)
        if joined in obj:
            return obj[joined]
        if segments[0] in obj:
            return _descend(obj[segments[0]], segments[1:])
    return None


def resolve(segments: Sequence[str], ctx: EvalContext) -> Any:
    head = segments[0]
    if head in ctx.bindings:
        return _descend(ctx.bindings[head], segments[1:])
    return ctx.shared_state.get(".".join(segments))


def _as_value(obj: Any) -> Value:
    return obj if is_value(obj) else None


def _compare(op: str, left: Value, right: Value) -> bool:
    if left is None or right is None:
        return False
    if op in ("==", "is"):
        return values_equal(left, right)
    if op == "!=":
        return tag_of(left) is tag_of(right) and not values_equal(left, right)
    order = compare(left, right)
    if order is None:
        return False
    return {">": order > 0, "<": order < 0, ">=": order >= 0, "<=": order <= 0}[op]


def _aggregate(expr: Agg, ctx: EvalContext) -> Value:
    collection = ctx.bindings.get(expr.collection)
    if isinstance(collection, (str, bytes, Mapping)) or not isinstance(collection, Sequence):
        collection = ()
    if expr.attribute is None:
        values = list(collection)
    else:
        segments = expr.attribute.split(".")
        values = [_as_value(_descend(item, segments)) for item in collection]
        values = [value for value in values if value is not None]
    if expr.op == "COUNT":
        return len(values)
    numbers = [value for value in values if is_value(value) and is_numeric(value)]
    if expr.op == "SUM":
        if all(isinstance(number, int) for number in numbers):
            return sum(numbers)
        return math.fsum(numbers)
    if not numbers:
        return None
    return math.fsum(numbers) / len(numbers)


def _occurrences(kind: str, log: Sequence[Any], now: int) -> list[int]:
    return [entry.timestamp for entry in log if entry.kind == kind and entry.timestamp <= now]


def temporal_eval(op: str, a: EventSelector, b: EventSelector | Interval, log: Sequence[Any], now: int) -> bool:
    """
    BEFORE/AFTER compare the last occurrence of each selector; DURING holds
    when some occurrence of ``a`` lies inside the closed interval ``b``.
    Selectors that match nothing make the result false.
    """
    occurrences = _occurrences(a.kind, log, now)
    if not occurrences:
        return False
    if op == "DURING":
        return any(b.start <= tick <= b.end for tick in occurrences)
    others = _occurrences(b.kind, log, now)
    if not others:
        return False
    if op == "BEFORE":
        return max(occurrences) < max(others)
    return max(occurrences) > max(others)


def evaluate(expr: Expr, ctx: EvalContext) -> Value:
    if isinstance(expr, Literal):
        return expr.value
    if isinstance(expr, Path):
        return _as_value(resolve(expr.segments, ctx))
    if isinstance(expr, Not):
        return evaluate(expr.operand, ctx) is not True
    if isinstance(expr, And):
        return evaluate(expr.left, ctx) is True and evaluate(expr.right, ctx) is True
    if isinstance(expr, Or):
        return evaluate(expr.left, ctx) is True or evaluate(expr.right, ctx) is True
    if isinstance(expr, Cmp):
        left = evaluate(expr.left, ctx)
        if expr.op == "in":
            return left is not None and any(values_equal(left, item.value) for item in expr.right.items)
        return _compare(expr.op, left, evaluate(expr.right, ctx))
    if isinstance(expr, Has):
        subject = resolve(expr.subject.segments, ctx)
        checker = getattr(subject, "has_capability", None)
        return bool(checker(expr.capability)) if callable(checker) else False
    if isinstance(expr, Agg):
        return _aggregate(expr, ctx)
    if isinstance(expr, Temporal):
        if not isinstance(expr.left, EventSelector):
            return False
        return temporal_eval(expr.op, expr.left, expr.right, ctx.event_log, ctx.now)
    if isinstance(expr, EventSelector):
        return bool(_occurrences(expr.kind, ctx.event_log, ctx.now))
    return None


def holds(expr: Expr, ctx: EvalContext) -> bool:
    """Top-level trigger use: only a literal ``true`` result holds."""
    return evaluate(expr, ctx) is True
