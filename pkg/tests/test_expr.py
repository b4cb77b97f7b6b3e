import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from divform.errors import EvaluationError, ExpressionSyntaxError
from divform.expr import Expression, ScalarField, evaluate, parse, render


def central_diff(fn, x, i):
    h = np.cbrt(np.finfo(float).eps) * max(1.0, abs(x[i]))
    hi = x.copy(); hi[i] += h
    lo = x.copy(); lo[i] -= h
    return (fn(hi) - fn(lo)) / (2 * h)


class TestParse:
    def test_polynomial_value(self):
        f = ScalarField.from_expression("x1^2 + x2^2", 2)
        assert f.value([3.0, 4.0]) == 25.0

    def test_out_of_range_coordinate(self):
        with pytest.raises(ExpressionSyntaxError, match="out of range"):
            parse("x3", 2)

    def test_tanh_at_origin(self):
        f = ScalarField.from_expression("tanh(x1 - x2^2/2)", 2)
        assert f.value([0.0, 0.0]) == 0.0

    def test_precedence(self):
        # ^ binds tighter than unary minus, which binds tighter than *
        f = ScalarField.from_expression("-x1^2", 1)
        assert f.value([3.0]) == -9.0
        g = ScalarField.from_expression("2*x1+1", 1)
        assert g.value([3.0]) == 7.0
        h = ScalarField.from_expression("2^-x1", 1)
        assert h.value([2.0]) == 0.25

    def test_power_right_associative(self):
        f = ScalarField.from_expression("x1^2^3", 1)
        assert f.value([2.0]) == 2.0 ** 8

    def test_syntax_error_position(self):
        with pytest.raises(ExpressionSyntaxError) as err:
            parse("x1 + * x2", 2)
        assert "position 5" in str(err.value)

    def test_arity_mismatch(self):
        with pytest.raises(ExpressionSyntaxError, match="arity"):
            parse("min(x1)", 1)
        with pytest.raises(ExpressionSyntaxError, match="arity"):
            parse("sin(x1, x1)", 1)

    def test_unknown_identifier(self):
        with pytest.raises(ExpressionSyntaxError, match="unknown"):
            parse("foo(x1)", 1)

    def test_empty_source(self):
        with pytest.raises(ExpressionSyntaxError):
            parse("   ", 1)

    def test_trailing_garbage(self):
        with pytest.raises(ExpressionSyntaxError, match="trailing"):
            parse("x1 x1", 1)

    def test_function_requires_parentheses(self):
        with pytest.raises(ExpressionSyntaxError):
            parse("sin x1", 1)


class TestEvaluate:
    def test_gradient_polynomial(self):
        f = ScalarField.from_expression("x1^2 + x2^2", 2)
        v, g = evaluate(f, [3.0, 4.0], True)
        assert v == 25.0
        assert np.allclose(g, [6.0, 8.0], atol=0)

    def test_log_domain_error(self):
        f = ScalarField.from_expression("log(x1)", 2)
        with pytest.raises(EvaluationError, match="log"):
            f.value([0.0, 1.0])

    def test_tanh_product_gradient(self):
        f = ScalarField.from_expression("tanh(x1*x2)", 2)
        _, g = evaluate(f, [1.0, 2.0], True)
        sech2 = 1.0 / np.cosh(2.0) ** 2
        assert np.allclose(g, [2 * sech2, sech2], rtol=1e-14)
        x = np.array([1.0, 2.0])
        for i in range(2):
            fd = central_diff(lambda p: f.value(p), x, i)
            assert abs(g[i] - fd) <= 1e-8 * max(1.0, abs(fd))

    def test_division_by_zero_reported(self):
        f = ScalarField.from_expression("1/x1", 1)
        with pytest.raises(EvaluationError, match="1/x1"):
            f.value([0.0])

    def test_batch_matches_pointwise(self):
        f = ScalarField.from_expression("sin(x1) * exp(x2/4)", 2)
        pts = np.random.default_rng(5).normal(size=(40, 2))
        batch = f.value(pts)
        single = np.array([f.value(p) for p in pts])
        assert np.array_equal(batch, single)


SMOOTH_FUNCS = ["sin", "cos", "tanh", "sech", "exp", "erfc"]
POSITIVE_FUNCS = ["log", "sqrt"]


class TestADCorrectness:
    @pytest.mark.parametrize("func", SMOOTH_FUNCS)
    def test_unary_matches_finite_differences(self, func):
        f = ScalarField.from_expression(f"{func}(x1)", 1)
        rng = np.random.default_rng(11)
        for x in rng.uniform(-2.5, 2.5, size=100):
            g = f.gradient([x])[0]
            fd = central_diff(lambda p: f.value(p), np.array([x]), 0)
            assert abs(g - fd) <= 1e-6 * max(1.0, abs(fd))

    @pytest.mark.parametrize("func", POSITIVE_FUNCS)
    def test_positive_domain_matches_finite_differences(self, func):
        f = ScalarField.from_expression(f"{func}(x1)", 1)
        rng = np.random.default_rng(12)
        for x in rng.uniform(0.2, 4.0, size=100):
            g = f.gradient([x])[0]
            fd = central_diff(lambda p: f.value(p), np.array([x]), 0)
            assert abs(g - fd) <= 1e-6 * max(1.0, abs(fd))

    @pytest.mark.parametrize("expr", ["min(x1, x2)", "max(x1, x2)", "abs(x1 - x2)"])
    def test_kinked_matches_finite_differences_off_kink(self, expr):
        f = ScalarField.from_expression(expr, 2)
        rng = np.random.default_rng(13)
        pts = rng.uniform(-3, 3, size=(100, 2))
        pts = pts[np.abs(pts[:, 0] - pts[:, 1]) > 1e-3]
        for p in pts:
            g = f.gradient(p)
            for i in range(2):
                fd = central_diff(lambda q: f.value(q), p, i)
                assert abs(g[i] - fd) <= 1e-6 * max(1.0, abs(fd))

    def test_abs_right_derivative_at_kink(self):
        f = ScalarField.from_expression("abs(x1)", 1)
        assert f.gradient([0.0])[0] == 1.0

    def test_min_max_tie_convention(self):
        # derivative at a tie follows (a+b-+|a-b|)/2 with abs'(0) = +1:
        # min picks the second argument, max the first
        fmin = ScalarField.from_expression("min(2*x1, x1)", 1)
        fmax = ScalarField.from_expression("max(2*x1, x1)", 1)
        assert fmin.gradient([0.0])[0] == 1.0
        assert fmax.gradient([0.0])[0] == 2.0

    def test_rotational_kink_field(self):
        # min(|x|, 1): constant branch outside the unit circle, radial inside
        f = ScalarField.from_expression("min(sqrt(x1^2+x2^2), 1)", 2)
        assert np.allclose(f.gradient([2.0, 0.0]), [0.0, 0.0], atol=0)
        g = f.gradient([0.3, 0.4])
        assert np.allclose(g, [0.6, 0.8], rtol=1e-12)

    def test_power_variable_exponent(self):
        f = ScalarField.from_expression("x1^x2", 2)
        p = np.array([1.7, 2.3])
        g = f.gradient(p)
        for i in range(2):
            fd = central_diff(lambda q: f.value(q), p, i)
            assert abs(g[i] - fd) <= 1e-6 * max(1.0, abs(fd))


def _leaf():
    return st.one_of(
        st.sampled_from(["x1", "x2"]),
        st.floats(min_value=-4.0, max_value=4.0, allow_nan=False).map(lambda v: repr(v)),
    )


def _combine(children):
    binop = st.tuples(children, st.sampled_from([" + ", " - ", "*", "/"]), children) \
        .map(lambda t: f"({t[0]}){t[1]}({t[2]})")
    unary = children.map(lambda c: f"-({c})")
    call1 = st.tuples(st.sampled_from(["sin", "cos", "tanh", "sech", "exp",
                                       "abs", "erfc", "log", "sqrt"]), children) \
        .map(lambda t: f"{t[0]}({t[1]})")
    call2 = st.tuples(st.sampled_from(["min", "max"]), children, children) \
        .map(lambda t: f"{t[0]}({t[1]}, {t[2]})")
    power = st.tuples(children, st.integers(min_value=0, max_value=3)) \
        .map(lambda t: f"({t[0]})^{t[1]}")
    return st.one_of(binop, unary, call1, call2, power)


expression_text = st.recursive(_leaf(), _combine, max_leaves=12)


class TestRoundTrip:
    @settings(max_examples=100, deadline=None)
    @given(expression_text)
    def test_parse_render_preserves_values(self, text):
        e = parse(text, 2)
        e2 = parse(render(e), 2)
        pts = np.random.default_rng(99).uniform(-3, 3, size=(20, 2))
        a = e.evaluate(pts)
        b = e2.evaluate(pts)
        assert np.array_equal(a, b, equal_nan=True)

    def test_round_trip_preserves_tree_semantics(self):
        e = parse("-x1^2*3 + 2^-x2/(x1 - 4) - min(x1, max(x2, 0.5))", 2)
        e2 = parse(render(e), 2)
        pts = np.random.default_rng(1).uniform(-2, 2, size=(50, 2))
        assert np.array_equal(e.evaluate(pts), e2.evaluate(pts))


class TestPurity:
    def test_bit_identical_repeated_evaluation(self):
        f = ScalarField.from_expression("sin(x1)*erfc(x2) + sqrt(abs(x1)+1)", 2)
        pts = np.random.default_rng(3).normal(size=(64, 2))
        v1, g1 = f.value(pts), f.gradient(pts)
        v2, g2 = f.value(pts), f.gradient(pts)
        assert np.array_equal(v1, v2) and np.array_equal(g1, g2)


class TestFieldAlgebra:
    def test_finite_difference_fallback(self):
        f = ScalarField.from_callable(lambda p: np.sin(p[:, 0]) * p[:, 1], 2,
                                      name="callable")
        assert not f.exact
        g = f.gradient([1.0, 2.0])
        assert np.allclose(g, [2 * np.cos(1.0), np.sin(1.0)], rtol=1e-9)

    def test_combinators_exact(self):
        k = ScalarField.from_expression("-x1^2/2", 1)
        j = ScalarField.from_expression("x1^2/2", 1)
        g = ScalarField.from_expression("tanh(x1)", 1)
        inner = k.embed(0, 2) + j.embed(1, 2)
        a12 = g.of(inner)
        assert a12.exact
        p = [1.0, 2.0]
        want = np.tanh(-0.5 + 2.0)
        assert abs(a12.value(p) - want) < 1e-15
        sech2 = 1.0 / np.cosh(1.5) ** 2
        assert np.allclose(a12.gradient(p), [-sech2, 2 * sech2], rtol=1e-14)

    def test_derivative_field(self):
        k = ScalarField.from_expression("-x1^2/2", 1)
        kp = k.derivative1()
        assert kp.value([3.0]) == -3.0

    def test_constant_detection(self):
        c = ScalarField.from_expression("2.0*3.0 + 1.0", 2)
        assert c.const == 7.0
        assert ScalarField.from_expression("x1", 1).const is None

    def test_product_rule(self):
        a = ScalarField.from_expression("x1^2", 2)
        b = ScalarField.from_expression("sin(x2)", 2)
        prod = a * b
        p = np.array([1.5, 0.7])
        assert np.allclose(prod.gradient(p),
                           [2 * 1.5 * np.sin(0.7), 1.5 ** 2 * np.cos(0.7)], rtol=1e-13)
