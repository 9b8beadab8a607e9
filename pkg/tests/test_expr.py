import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slfcert import expr as ex


def test_parse_linear_drift():
    e = ex.parse("-x1", 1)
    assert ex.eval_expr(e, [2.0]) == -2.0


def test_parse_square():
    e = ex.parse("x1^2", 1)
    assert ex.eval_expr(e, [3.0]) == 9.0


def test_parse_index_beyond_dimension():
    with pytest.raises(ex.ParseError):
        ex.parse("x1*x2 + sin(x3)", 2)


def test_parse_reports_position():
    with pytest.raises(ex.ParseError) as err:
        ex.parse("x1 + $", 1)
    assert "position" in str(err.value)


def test_parse_unknown_identifier():
    with pytest.raises(ex.ParseError):
        ex.parse("y + 1", 3)


def test_power_binds_tighter_than_unary_minus():
    assert ex.eval_expr(ex.parse("-x1^2", 1), [3.0]) == -9.0
    assert ex.eval_expr(ex.parse("(-x1)^2", 1), [3.0]) == 9.0


def test_power_right_associative():
    assert ex.eval_expr(ex.parse("x1^2^3", 1), [2.0]) == 2.0**8


def test_eval_abs():
    assert ex.eval_expr(ex.parse("abs(x1)", 1), [-3.0]) == 3.0


def test_eval_sgn_zero():
    assert ex.eval_expr(ex.parse("sgn(x1)", 1), [0.0]) == 0.0


def test_eval_log_domain_error():
    with pytest.raises(ex.DomainError):
        ex.eval_expr(ex.parse("log(x1)", 1), [-1.0])


def test_eval_division_by_zero():
    with pytest.raises(ex.DomainError):
        ex.eval_expr(ex.parse("1/x1", 1), [0.0])


def test_eval_negative_base_fractional_power():
    with pytest.raises(ex.DomainError):
        ex.eval_expr(ex.parse("x1^0.5", 1), [-2.0])


def test_jet_square_at_zero():
    jet = ex.eval_jet(ex.parse("x1^2", 1), [0.0])
    assert jet.value == 0.0
    assert jet.gradient[0] == 0.0
    assert jet.hessian[0, 0] == 2.0
    assert jet.smooth


def test_jet_abs_kink():
    jet = ex.eval_jet(ex.parse("abs(x1)", 1), [0.0])
    assert not jet.smooth


def test_jet_sqrt_kink():
    assert not ex.eval_jet(ex.parse("sqrt(x1)", 1), [0.0]).smooth


def test_jet_mixed_second_derivatives():
    jet = ex.eval_jet(ex.parse("x1^2*x2", 2), [1.0, 2.0])
    assert np.allclose(jet.gradient, [4.0, 1.0], atol=1e-12)
    assert np.allclose(jet.hessian, [[4.0, 2.0], [2.0, 0.0]], atol=1e-12)


def test_jet_hessian_exactly_symmetric():
    e = ex.parse("sin(x1*x2) + exp(x1/ (1 + x2^2))", 2)
    jet = ex.eval_jet(e, [0.7, -0.4])
    assert np.array_equal(jet.hessian, jet.hessian.T)


# ---------------------------------------------------------------------------
# random polynomial corpus: AD against central finite differences


def _random_polynomial(rng, n, depth=3):
    roll = rng.random()
    if depth == 0 or roll < 0.25:
        if rng.random() < 0.4:
            return ex.Num(round(rng.uniform(0.25, 2.0), 3))
        return ex.Var(int(rng.integers(1, n + 1)))
    if roll < 0.45:
        return ex.Bin("+", _random_polynomial(rng, n, depth - 1),
                      _random_polynomial(rng, n, depth - 1))
    if roll < 0.6:
        return ex.Bin("-", _random_polynomial(rng, n, depth - 1),
                      _random_polynomial(rng, n, depth - 1))
    if roll < 0.8:
        return ex.Bin("*", _random_polynomial(rng, n, depth - 1),
                      _random_polynomial(rng, n, depth - 1))
    if roll < 0.9:
        return ex.Neg(_random_polynomial(rng, n, depth - 1))
    return ex.Bin("^", _random_polynomial(rng, n, depth - 1),
                  ex.Num(float(rng.integers(2, 4))))


def _fd_jet(e, x, h=1e-5):
    n = len(x)
    x = np.asarray(x, dtype=float)

    def f(pt):
        return ex.eval_expr(e, pt)

    grad = np.empty(n)
    hess = np.empty((n, n))
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h
        grad[i] = (f(x + ei) - f(x - ei)) / (2 * h)
        hess[i, i] = (f(x + ei) - 2 * f(x) + f(x - ei)) / h**2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h
            hess[i, j] = hess[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * h**2)
    return grad, hess


def test_ad_matches_finite_differences_on_100_polynomials():
    rng = np.random.default_rng(1234)
    checked = 0
    while checked < 100:
        n = int(rng.integers(1, 4))
        e = _random_polynomial(rng, n)
        x = rng.uniform(-1.2, 1.2, size=n)
        jet = ex.eval_jet(e, x)
        if not jet.smooth:
            continue
        grad_fd, hess_fd = _fd_jet(e, x)
        scale = max(1.0, abs(jet.value), float(np.max(np.abs(jet.gradient))),
                    float(np.max(np.abs(jet.hessian))))
        assert np.max(np.abs(jet.gradient - grad_fd)) <= 1e-5 * scale
        assert np.max(np.abs(jet.hessian - hess_fd)) <= 1e-5 * scale
        checked += 1


def test_jet_value_bit_identical_with_eval():
    rng = np.random.default_rng(77)
    for _ in range(200):
        n = int(rng.integers(1, 4))
        e = _random_polynomial(rng, n)
        x = rng.uniform(-1.5, 1.5, size=n)
        assert ex.eval_jet(e, x).value == ex.eval_expr(e, x)


# ---------------------------------------------------------------------------
# parse/render round trip


def _random_ast(rng, n, depth):
    roll = rng.random()
    if depth == 0 or roll < 0.3:
        if rng.random() < 0.5:
            return ex.Num(abs(float(rng.standard_normal())) * 10.0)
        return ex.Var(int(rng.integers(1, n + 1)))
    if roll < 0.5:
        op = ("+", "-", "*", "/")[int(rng.integers(0, 4))]
        return ex.Bin(op, _random_ast(rng, n, depth - 1),
                      _random_ast(rng, n, depth - 1))
    if roll < 0.6:
        return ex.Bin("^", _random_ast(rng, n, depth - 1),
                      _random_ast(rng, n, depth - 1))
    if roll < 0.75:
        return ex.Neg(_random_ast(rng, n, depth - 1))
    fn = ex.FUNCTIONS[int(rng.integers(0, len(ex.FUNCTIONS)))]
    return ex.Call(fn, _random_ast(rng, n, depth - 1))


def test_round_trip_corpus_of_1000_asts():
    rng = np.random.default_rng(4321)
    for _ in range(1000):
        e = _random_ast(rng, 3, depth=int(rng.integers(1, 5)))
        assert ex.parse(ex.render(e), 3) == e


@st.composite
def ast_nodes(draw, n=2):
    return draw(st.recursive(
        st.one_of(
            st.floats(min_value=0.0, max_value=1e6, allow_nan=False).map(ex.Num),
            st.integers(min_value=1, max_value=n).map(ex.Var),
        ),
        lambda children: st.one_of(
            st.tuples(st.sampled_from("+-*/^"), children, children).map(
                lambda t: ex.Bin(*t)),
            children.map(ex.Neg),
            st.tuples(st.sampled_from(ex.FUNCTIONS), children).map(
                lambda t: ex.Call(*t)),
        ),
        max_leaves=12,
    ))


@settings(max_examples=300, deadline=None)
@given(ast_nodes())
def test_round_trip_property(e):
    assert ex.parse(ex.render(e), 2) == e


# ---------------------------------------------------------------------------
# vectorized compilation


def test_compile_array_matches_scalar_eval():
    rng = np.random.default_rng(9)
    e = ex.parse("x1^2*x2 - sin(x1) + exp(x2/4)", 2)
    f = ex.compile_array(e, 2)
    X = rng.uniform(-2.0, 2.0, size=(2, 64))
    got = f(X)
    want = np.array([ex.eval_expr(e, X[:, j]) for j in range(64)])
    assert np.allclose(got, want, rtol=1e-14, atol=1e-14)


def test_compile_array_domain_errors_yield_non_finite():
    f = ex.compile_array(ex.parse("log(x1)", 1), 1)
    with np.errstate(all="ignore"):
        out = f(np.array([[-1.0, 0.0, 1.0]]))
    assert not np.isfinite(out[0])
    assert not np.isfinite(out[1])
    assert out[2] == 0.0
