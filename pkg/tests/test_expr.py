import math
import random

import pytest

from edgeflow.errors import (
    DivisionByZero,
    ExprSyntaxError,
    NonFiniteResult,
    UnboundVariable,
)
from edgeflow.expr import (
    BinOp,
    Neg,
    Num,
    Var,
    eval_expr,
    free_vars,
    parse_expr,
    print_expr,
)

from expr_fuzz import BINDINGS, random_expr
from naive_eval import naive_eval


class TestParse:
    def test_precedence_mul_over_add(self):
        assert parse_expr("1+2*3") == BinOp("+", Num(1.0), BinOp("*", Num(2.0), Num(3.0)))

    def test_negated_product(self):
        tree = parse_expr("-(cur.price * action.power)")
        assert tree == Neg(BinOp("*", Var("cur.price"), Var("action.power")))

    def test_unbalanced_call_reports_expected_paren(self):
        with pytest.raises(ExprSyntaxError, match="expected '\\)'"):
            parse_expr("if(cur.x > 0, 1, -1")

    def test_left_associativity(self):
        assert parse_expr("1-2-3") == BinOp("-", BinOp("-", Num(1.0), Num(2.0)), Num(3.0))

    def test_unary_binds_tighter_than_mul(self):
        assert parse_expr("-2*3") == BinOp("*", Neg(Num(2.0)), Num(3.0))

    def test_comparison_below_additive(self):
        assert parse_expr("1+1 < 3") == BinOp("<", BinOp("+", Num(1.0), Num(1.0)), Num(3.0))

    def test_parens_override(self):
        assert parse_expr("(1+2)*3") == BinOp("*", BinOp("+", Num(1.0), Num(2.0)), Num(3.0))

    def test_trailing_garbage_rejected(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("1+2 3")

    def test_empty_rejected(self):
        with pytest.raises(ExprSyntaxError):
            parse_expr("   ")

    def test_unknown_function_rejected(self):
        with pytest.raises(ExprSyntaxError, match="unknown function"):
            parse_expr("hypot(1,2)")

    def test_wrong_arity_rejected(self):
        with pytest.raises(ExprSyntaxError, match="takes 2 arguments"):
            parse_expr("min(1,2,3)")

    def test_exponent_literals(self):
        assert parse_expr("1e+30") == Num(1e30)
        assert parse_expr("2.5e-3") == Num(2.5e-3)


class TestEval:
    def test_arithmetic(self):
        assert eval_expr(parse_expr("1+2*3"), {}) == 7.0

    def test_clamp(self):
        assert eval_expr(parse_expr("clamp(5,0,3)"), {}) == 3.0

    def test_division_by_zero(self):
        with pytest.raises(DivisionByZero):
            eval_expr(parse_expr("1/0"), {})

    def test_unbound_variable(self):
        with pytest.raises(UnboundVariable):
            eval_expr(parse_expr("cur.ghost"), {})

    def test_comparisons_return_unit_floats(self):
        assert eval_expr(parse_expr("2 > 1"), {}) == 1.0
        assert eval_expr(parse_expr("2 < 1"), {}) == 0.0
        assert eval_expr(parse_expr("1 == 1"), {}) == 1.0
        assert eval_expr(parse_expr("1 != 1"), {}) == 0.0

    def test_if_short_circuits_untaken_branch(self):
        # the division by zero in the untaken branch must never run
        assert eval_expr(parse_expr("if(1, 42, 1/0)"), {}) == 42.0
        assert eval_expr(parse_expr("if(0, 1/0, 42)"), {}) == 42.0

    def test_overflow_is_typed_error(self):
        with pytest.raises(NonFiniteResult):
            eval_expr(parse_expr("1e308 * 1e308"), {})

    def test_variables_resolve(self):
        assert eval_expr(parse_expr("cur.a + next.a"), {"cur.a": 1.5, "next.a": 2.5}) == 4.0

    def test_deterministic(self):
        tree = parse_expr("-(cur.price * action.power)")
        env = {"cur.price": 0.2, "action.power": 2.0}
        assert eval_expr(tree, env) == eval_expr(tree, env) == -0.4


class TestFreeVars:
    def test_no_vars(self):
        assert free_vars(parse_expr("1+2")) == set()

    def test_two_vars(self):
        assert free_vars(parse_expr("cur.a + next.a")) == {"cur.a", "next.a"}

    def test_set_semantics(self):
        assert free_vars(parse_expr("if(action.p>0, cur.x, cur.x)")) == {"action.p", "cur.x"}


class TestPrinter:
    @pytest.mark.parametrize("text", [
        "1+2*3",
        "-(cur.price * action.power)",
        "if(cur.x > 0, 1, -1)",
        "clamp(cur.a, 0, 1) / max(next.b, 0.5)",
        "1e+30 - 2.5e-3",
        "-2*3 <= 4 == 0",
    ])
    def test_round_trip(self, text):
        tree = parse_expr(text)
        assert parse_expr(print_expr(tree)) == tree


class TestFuzzAgainstNaiveOracle:
    def test_thousand_random_expressions(self):
        rng = random.Random(20240901)
        checked = 0
        attempts = 0
        while checked < 1000:
            attempts += 1
            assert attempts < 20000, "generator starved"
            tree = random_expr(rng)
            try:
                expected = naive_eval(tree, BINDINGS)
            except (DivisionByZero, NonFiniteResult, UnboundVariable) as exc:
                with pytest.raises(type(exc)):
                    eval_expr(tree, BINDINGS)
                continue
            got = eval_expr(tree, BINDINGS)
            rel = abs(got - expected) / max(1.0, abs(expected))
            assert rel <= 1e-12, f"{print_expr(tree)}: {got} != {expected}"
            # printer round trip on the same corpus
            assert parse_expr(print_expr(tree)) == tree
            assert not math.isnan(got)
            checked += 1
