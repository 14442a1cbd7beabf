import itertools
import operator
import random

from django.test import SimpleTestCase

from core.conditions import (
    And,
    Cmp,
    EvalContext,
    Literal,
    Not,
    Or,
    Path,
    evaluate,
    holds,
    parse,
    parse_expression,
    referenced_paths,
    to_source,
)
from core.exceptions import ConditionSyntaxError, ConditionTypeError
from core.holons import Sensation
from core.values import Location

ATOMS = ("p", "q", "r", "s")


def shared(**entries) -> EvalContext:
    return EvalContext(shared_state=entries)


def sensation(kind: str, tick: int, number: int = 1) -> Sensation:
    return Sensation(f"s{number}", "C2", kind, {}, tick)


class Capable:
    def __init__(self, *capabilities: str):
        self.capabilities = set(capabilities)

    def has_capability(self, name: str) -> bool:
        return name in self.capabilities

    def field(self, name: str):
        return {"status": "on_site"}.get(name)


class ParsingTests(SimpleTestCase):
    def test_trigger_examples(self):
        ctx = shared(**{"sosCall.type": "wildfire", "sosCall.loc": Location(61.5, 23.8)})
        self.assertTrue(holds(parse('sosCall.type is "wildfire"'), ctx))
        self.assertFalse(holds(parse('sosCall.type is "landslide"'), ctx))
        self.assertFalse(holds(parse('sosCall.type in ["rescue", "stranded"]'), ctx))
        self.assertTrue(holds(parse('sosCall.type in ["wildfire", "stranded"]'), ctx))

    def test_precedence(self):
        self.assertEqual(
            parse("not a is b"),
            Cmp("is", Not(Path(("a",))), Path(("b",))),
        )
        self.assertEqual(
            parse("a or b and c"),
            Or(Path(("a",)), And(Path(("b",)), Path(("c",)))),
        )
        self.assertEqual(to_source(parse("(a and b) or c")), "a and b or c")
        self.assertEqual(to_source(parse("a and (b or c)")), "a and (b or c)")

    def test_literal_equality_respects_tags(self):
        self.assertNotEqual(Literal(1), Literal(True))
        self.assertNotEqual(Literal(1), Literal(1.0))
        self.assertEqual(Literal("x", pos=(1, 1)), Literal("x"))

    def test_positions_are_ignored_in_equality(self):
        self.assertEqual(parse("  a  is  1"), parse("a is 1"))

    def test_syntax_error_position(self):
        with self.assertRaises(ConditionSyntaxError) as caught:
            parse("a > > b")
        self.assertEqual(caught.exception.line, 1)
        self.assertEqual(caught.exception.column, 5)

    def test_unknown_selector(self):
        with self.assertRaises(ConditionSyntaxError):
            parse('event("A") BEFORE sensation("B")')

    def test_bad_interval(self):
        with self.assertRaises(ConditionSyntaxError):
            parse('sensation("A") DURING [9, 3]')

    def test_list_after_before_is_not_an_operand(self):
        with self.assertRaises(ConditionSyntaxError):
            parse('sensation("A") BEFORE [1, 2]')

    def test_type_errors(self):
        for source in (
            'sensation("SOS")',
            '1 BEFORE sensation("A")',
            'sensation("A") BEFORE 1',
            'sensation("A") > 1',
            '"a" and b',
            "1",
        ):
            with self.subTest(source=source), self.assertRaises(ConditionTypeError):
                parse(source)

    def test_parse_expression_accepts_values(self):
        self.assertEqual(evaluate(parse_expression('"rescue"'), EvalContext()), "rescue")
        self.assertEqual(evaluate(parse_expression("sosCall.loc"), shared(**{"sosCall.loc": 3})), 3)

    def test_referenced_paths(self):
        self.assertEqual(referenced_paths(parse("a.b is 1 and not c")), frozenset({"a.b", "c"}))


class EvaluationTests(SimpleTestCase):
    def test_absent_paths_make_comparisons_false(self):
        ctx = EvalContext()
        self.assertFalse(holds(parse('missing.path is "x"'), ctx))
        self.assertFalse(holds(parse("missing != 1"), ctx))
        self.assertFalse(holds(parse("missing"), ctx))
        self.assertTrue(holds(parse("not (missing is 1)"), ctx))

    def test_mixed_types_are_false(self):
        ctx = shared(a=1, b="1")
        self.assertFalse(holds(parse("a == b"), ctx))
        self.assertFalse(holds(parse("a != b"), ctx))
        self.assertFalse(holds(parse("a < b"), ctx))

    def test_only_literal_true_holds(self):
        self.assertFalse(holds(parse("flag"), shared(flag=1)))
        self.assertTrue(holds(parse("flag"), shared(flag=True)))

    def test_bindings_shadow_shared_state(self):
        ctx = EvalContext(bindings={"e": Capable()}, shared_state={"e.status": "alerted"})
        self.assertTrue(holds(parse('e.status is "on_site"'), ctx))

    def test_has(self):
        ctx = EvalContext(bindings={"carrier": Capable("waterTank")})
        self.assertTrue(holds(parse("carrier has waterTank"), ctx))
        self.assertFalse(holds(parse("carrier has transport"), ctx))
        self.assertFalse(holds(parse("nobody has transport"), ctx))

    def test_aggregates(self):
        members = [{"battery": 0.4, "id": "A"}, {"battery": 0.8, "id": "B"}, {"id": "C"}]
        ctx = EvalContext(bindings={"members": members})
        self.assertTrue(holds(parse("AVERAGE(members.battery) == 0.6"), ctx))
        self.assertTrue(holds(parse("COUNT(members) == 3"), ctx))
        self.assertTrue(holds(parse("COUNT(members.battery) == 2"), ctx))
        self.assertTrue(holds(parse("SUM(members.battery) > 1.1"), ctx))
        self.assertFalse(holds(parse("AVERAGE(nothing.battery) > 0"), ctx))
        self.assertTrue(holds(parse("COUNT(nothing) == 0"), ctx))

    def test_temporal_operators(self):
        log = (sensation("A", 3, 1), sensation("B", 5, 2))
        ctx = EvalContext(event_log=log, now=10)
        self.assertTrue(holds(parse('sensation("A") BEFORE sensation("B")'), ctx))
        self.assertFalse(holds(parse('sensation("A") AFTER sensation("B")'), ctx))
        self.assertTrue(holds(parse('sensation("A") DURING [0, 4]'), ctx))
        self.assertFalse(holds(parse('sensation("A") DURING [4, 9]'), ctx))
        self.assertFalse(holds(parse('sensation("C") BEFORE sensation("B")'), ctx))

    def test_temporal_operators_ignore_the_future(self):
        log = (sensation("A", 3, 1), sensation("B", 5, 2))
        self.assertFalse(holds(parse('sensation("A") BEFORE sensation("B")'), EvalContext(event_log=log, now=4)))

    def test_random_integer_comparisons(self):
        rng = random.Random(1234)
        oracle = {
            ">": operator.gt,
            "<": operator.lt,
            ">=": operator.ge,
            "<=": operator.le,
            "==": operator.eq,
            "!=": operator.ne,
            "is": operator.eq,
        }
        for _ in range(1000):
            left, right = rng.randint(-6, 6), rng.randint(-6, 6)
            op = rng.choice(sorted(oracle))
            if rng.random() < 0.5:
                expr, ctx = parse(f"{left} {op} {right}"), EvalContext()
            else:
                expr, ctx = parse(f"x {op} y"), shared(x=left, y=right)
            self.assertIs(holds(expr, ctx), oracle[op](left, right), f"{left} {op} {right}")


def formulas(depth: int) -> list:
    """Every boolean formula over ATOMS up to ``depth`` nested connectives."""
    every = [Path((atom,)) for atom in ATOMS]
    for _ in range(depth):
        previous = list(every)
        layer = [Not(f) for f in previous]
        layer += [And(a, b) for a, b in itertools.product(previous, repeat=2)]
        layer += [Or(a, b) for a, b in itertools.product(previous, repeat=2)]
        seen = set(previous)
        every = previous + [f for f in layer if f not in seen]
    return every


def truth(expr, assignment: dict) -> bool:
    if isinstance(expr, Path):
        return assignment[expr.segments[0]] is True
    if isinstance(expr, Not):
        return not truth(expr.operand, assignment)
    if isinstance(expr, And):
        return truth(expr.left, assignment) and truth(expr.right, assignment)
    return truth(expr.left, assignment) or truth(expr.right, assignment)


class TruthTableTests(SimpleTestCase):
    assignments = [dict(zip(ATOMS, bits)) for bits in itertools.product((True, False), repeat=len(ATOMS))]

    def check(self, expr):
        source = to_source(expr)
        reparsed = parse(source)
        self.assertEqual(reparsed, expr, source)
        for assignment in self.assignments:
            self.assertIs(holds(reparsed, EvalContext(shared_state=assignment)), truth(expr, assignment), source)

    def test_all_formulas_up_to_depth_two(self):
        for expr in formulas(2):
            self.check(expr)

    def test_sampled_formulas_of_depth_three(self):
        rng = random.Random(77)
        shallow = formulas(2)
        for _ in range(400):
            kind = rng.choice(("not", "and", "or"))
            if kind == "not":
                expr = Not(rng.choice(shallow))
            elif kind == "and":
                expr = And(rng.choice(shallow), rng.choice(shallow))
            else:
                expr = Or(rng.choice(shallow), rng.choice(shallow))
            self.check(expr)

    def test_missing_atoms_are_not_true(self):
        ctx = EvalContext(shared_state={"p": True})
        self.assertTrue(holds(parse("p and not q"), ctx))
        self.assertFalse(holds(parse("q or r"), ctx))
