"""
Declarative checks over a trace, one per line::

    # comment
    exists: TriggerFired{behaviour=wildfireResp}
    absent: TriggerFired{behaviour=rescue}
    count: VoteCast{proposal=p1} = 4
    order: CompositionFinalized BEFORE MediatorSelected BEFORE TriggerFired

A leading ``assert`` is accepted. Inside braces, ``key=value`` requires that
attribute; a bare value requires some attribute to equal it. Values with
spaces are written as JSON strings.
"""

import json
import logging
import operator
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from lark import Lark, Transformer
from lark.exceptions import UnexpectedInput, VisitError

from .exceptions import MalformedAssertion
from .trace import TraceEvent, TraceKind

logger = logging.getLogger(__name__)

ASSERTION_GRAMMAR = r"""
    start: "assert"? check
    ?check: exists | absent | count | order
    exists: "exists" ":"? selector
    absent: "absent" ":"? selector
    count: "count" ":"? selector COUNT_OP INT
    order: "order" ":"? selector ("BEFORE" selector)+

    selector: KIND ("{" [attr ("," attr)*] "}")?
    attr: WORD "=" value   -> pair
        | value            -> bare
    value: ESCAPED_STRING | WORD

    KIND: /[A-Z][A-Za-z]*/
    WORD: /[^\s{},="]+/
    COUNT_OP: "==" | "!=" | ">=" | "<=" | "=" | ">" | "<"

    %import common.ESCAPED_STRING
    %import common.INT
    %import common.WS
    %ignore WS
"""

COUNT_OPS = {
    "=": operator.eq,
    "==": operator.eq,
    "!=": operator.ne,
    ">=": operator.ge,
    "<=": operator.le,
    ">": operator.gt,
    "<": operator.lt,
}


@dataclass(frozen=True)
class Selector:
    kind: str
    attributes: tuple[tuple[str, str], ...] = ()
    bare: tuple[str, ...] = ()

    def matches(self, event: TraceEvent) -> bool:
        if not event.matches(self.kind, dict(self.attributes)):
            return False
        values = set(event.attributes.values())
        return all(value in values for value in self.bare)

    def __str__(self) -> str:
        parts = [f"{key}={value}" for key, value in self.attributes] + list(self.bare)
        return f"{self.kind}{{{', '.join(parts)}}}" if parts else self.kind


@dataclass(frozen=True)
class Assertion:
    line: int
    source: str

    def check(self, events: Sequence[TraceEvent]) -> tuple[bool, str]:
        raise NotImplementedError


@dataclass(frozen=True)
class Exists(Assertion):
    selector: Selector

    def check(self, events):
        found = sum(1 for event in events if self.selector.matches(event))
        return found > 0, f"{found} matching event(s)"


@dataclass(frozen=True)
class Absent(Assertion):
    selector: Selector

    def check(self, events):
        for event in events:
            if self.selector.matches(event):
                return False, f"found at t={event.tick}: {event.to_line()}"
        return True, "no matching event"


@dataclass(frozen=True)
class Count(Assertion):
    selector: Selector
    op: str
    expected: int

    def check(self, events):
        found = sum(1 for event in events if self.selector.matches(event))
        return COUNT_OPS[self.op](found, self.expected), f"counted {found}, expected {self.op} {self.expected}"


@dataclass(frozen=True)
class Order(Assertion):
    selectors: tuple[Selector, ...]

    def check(self, events):
        """Greedy subsequence match: each selector after the previous one's match."""
        position = 0
        for selector in self.selectors:
            while position < len(events) and not selector.matches(events[position]):
                position += 1
            if position == len(events):
                return False, f"no {selector} after the earlier steps"
            position += 1
        return True, "order holds"


class _AssertionTransformer(Transformer):
    def __init__(self, line: int, source: str):
        super().__init__()
        self.line = line
        self.source = source

    def value(self, children):
        token = children[0]
        return json.loads(token) if token.type == "ESCAPED_STRING" else str(token)

    def pair(self, children):
        return ("pair", str(children[0]), children[1])

    def bare(self, children):
        return ("bare", children[0])

    def selector(self, children):
        kind = str(children[0])
        try:
            TraceKind(kind)
        except ValueError:
            raise MalformedAssertion(self.line, f"unknown event kind '{kind}'") from None
        attrs = [child for child in children[1:] if child is not None]
        return Selector(
            kind,
            tuple(sorted((key, value) for tag, key, value in (a for a in attrs if a[0] == "pair"))),
            tuple(a[1] for a in attrs if a[0] == "bare"),
        )

    def exists(self, children):
        return Exists(self.line, self.source, children[0])

    def absent(self, children):
        return Absent(self.line, self.source, children[0])

    def count(self, children):
        selector, op, expected = children
        return Count(self.line, self.source, selector, str(op), int(expected))

    def order(self, children):
        return Order(self.line, self.source, tuple(children))

    def start(self, children):
        return children[0]


_parser = Lark(ASSERTION_GRAMMAR, parser="lalr")


def parse_assertion(source: str, line: int = 1) -> Assertion:
    try:
        tree = _parser.parse(source)
    except UnexpectedInput as exc:
        raise MalformedAssertion(line, f"cannot parse {source.strip()!r} (column {exc.column})") from None
    try:
        return _AssertionTransformer(line, source.strip()).transform(tree)
    except VisitError as exc:
        if isinstance(exc.orig_exc, MalformedAssertion):
            raise exc.orig_exc from None
        raise


def parse_assertions(text: str) -> list[Assertion]:
    assertions = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        assertions.append(parse_assertion(stripped, number))
    return assertions


@dataclass(frozen=True)
class AssertionResult:
    assertion: Assertion
    passed: bool
    detail: str

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} line {self.assertion.line}: {self.assertion.source} ({self.detail})"


@dataclass(frozen=True)
class VerificationReport:
    results: tuple[AssertionResult, ...]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    @property
    def failures(self) -> list[AssertionResult]:
        return [result for result in self.results if not result.passed]

    def render(self) -> str:
        lines = [str(result) for result in self.results]
        lines.append(f"{len(self.results) - len(self.failures)}/{len(self.results)} assertion(s) passed")
        return "\n".join(lines)


def verify(events: Sequence[TraceEvent], assertions: Iterable[Assertion]) -> VerificationReport:
    results = []
    for assertion in assertions:
        passed, detail = assertion.check(events)
        if not passed:
            logger.info(f"Assertion failed on line {assertion.line}: {assertion.source} ({detail})")
        results.append(AssertionResult(assertion, passed, detail))
    return VerificationReport(tuple(results))
