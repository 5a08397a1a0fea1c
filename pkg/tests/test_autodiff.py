import numpy as np
import pytest

from graphcondense import autodiff as ad


def rand(rng, r, c):
    return rng.standard_normal((r, c))


def test_relu_example():
    arena = ad.Arena()
    out = ad.relu(arena.leaf([[-1.0, 2.0]]))
    np.testing.assert_array_equal(out.value, [[0.0, 2.0]])


def test_masked_xent_uniform_logits_is_log_nclasses():
    arena = ad.Arena()
    logits = arena.leaf(np.zeros((4, 3)))
    loss = ad.masked_softmax_cross_entropy(logits, [0, 1, 2, 0], [True] * 4)
    assert abs(loss.value[0, 0] - np.log(3.0)) < 1e-12


def test_sum_scale_linearity():
    arena = ad.Arena()
    rng = np.random.default_rng(0)
    x = arena.leaf(rand(rng, 3, 4))
    lhs = ad.sum(ad.scale(2.0, x)).value
    rhs = 2.0 * ad.sum(x).value
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-14)


def test_grad_of_sum_is_ones():
    arena = ad.Arena()
    w = arena.leaf(np.random.default_rng(1).standard_normal((3, 4)))
    (g,) = ad.grad(ad.sum(w), [w])
    np.testing.assert_array_equal(g.value, np.ones((3, 4)))


def test_grad_of_quadratic_and_second_order():
    arena = ad.Arena()
    w0 = np.random.default_rng(2).standard_normal((3, 4))
    w = arena.leaf(w0)
    y = ad.sum(ad.hadamard(w, w))
    (g,) = ad.grad(y, [w], create_graph=True)
    np.testing.assert_allclose(g.value, 2 * w0, atol=1e-14)
    (h,) = ad.grad(ad.sum(g), [w])
    np.testing.assert_allclose(h.value, 2 * np.ones((3, 4)), atol=1e-14)


def test_unreachable_wrt_gives_zeros():
    arena = ad.Arena()
    a = arena.leaf(np.ones((2, 2)))
    b = arena.leaf(np.ones((2, 2)))
    (gb,) = ad.grad(ad.sum(a), [b])
    np.testing.assert_array_equal(gb.value, np.zeros((2, 2)))


def test_non_scalar_output_rejected():
    arena = ad.Arena()
    a = arena.leaf(np.ones((2, 2)))
    with pytest.raises(ValueError):
        ad.grad(a, [a])


def test_mixed_arena_rejected():
    a = ad.Arena().leaf(np.ones((2, 2)))
    b = ad.Arena().leaf(np.ones((2, 2)))
    with pytest.raises(ValueError):
        ad.add(a, b)


def test_empty_mask_rejected():
    arena = ad.Arena()
    logits = arena.leaf(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ad.masked_softmax_cross_entropy(logits, [0, 1], [False, False])


def test_create_graph_values_bit_identical():
    rng = np.random.default_rng(3)
    x0 = rand(rng, 3, 3)

    def build(create_graph):
        arena = ad.Arena()
        x = arena.leaf(x0)
        y = ad.sum(ad.hadamard(ad.sigmoid(x), x))
        (g,) = ad.grad(y, [x], create_graph=create_graph)
        return g.value

    assert np.array_equal(build(True), build(False))


def test_gradient_linearity_over_random_small_graphs():
    rng = np.random.default_rng(4)
    for _ in range(10):
        x0 = rand(rng, 2, 3)
        arena = ad.Arena()
        x = arena.leaf(x0)
        c = arena.constant(rand(rng, 2, 3))
        f1 = ad.sum(ad.hadamard(x, c))
        f2 = ad.sum(ad.relu(x))
        (g_sum,) = ad.grad(ad.add(f1, f2), [x])
        (g1,) = ad.grad(f1, [x])
        (g2,) = ad.grad(f2, [x])
        np.testing.assert_allclose(g_sum.value, g1.value + g2.value, atol=1e-14)


# --- finite-difference oracle over every primitive -------------------------

def _op_functions(rng):
    """Scalar-valued probes, one per primitive, each contracting the op's
    output against a fixed random weight so gradients are nontrivial."""
    B = rng.standard_normal((4, 3))
    W = rng.standard_normal((3, 3))
    W34 = rng.standard_normal((3, 4))
    W43 = rng.standard_normal((4, 3))
    W31 = rng.standard_normal((3, 1))
    M33 = rng.standard_normal((3, 3))
    L43 = rng.standard_normal((4, 3))
    labels = rng.integers(0, 3, size=3)
    mask = np.array([True, False, True])

    def contract(expr, weight):
        return ad.sum(ad.hadamard(expr, expr.arena.constant(weight)))

    return {
        "matmul": lambda x: contract(ad.matmul(x, x.arena.constant(B)), W),
        "transpose": lambda x: contract(ad.transpose(x), W43),
        "add": lambda x: contract(ad.add(x, x.arena.constant(W34)), W34),
        "subtract": lambda x: contract(ad.subtract(x.arena.constant(W34), x), W34),
        "scale": lambda x: contract(ad.scale(-1.7, x), W34),
        "hadamard": lambda x: contract(ad.hadamard(x, x.arena.constant(W34)), W34),
        "relu": lambda x: contract(ad.relu(x), W34),
        "sigmoid": lambda x: contract(ad.sigmoid(x), W34),
        "sqrt": lambda x: contract(ad.sqrt(ad.add(ad.hadamard(x, x),
                                                  x.arena.constant(np.ones((3, 4))))), W34),
        "reciprocal": lambda x: contract(
            ad.reciprocal(ad.add(ad.hadamard(x, x), x.arena.constant(np.ones((3, 4))))), W34),
        "row_l2_norms": lambda x: contract(ad.row_l2_norms(x), W31),
        "sum": lambda x: ad.scale(1.3, ad.sum(x)),
        "reshape": lambda x: contract(ad.reshape(x, 4, 3), W43),
        "softmax_rows": lambda x: contract(
            ad.softmax_rows(ad.matmul(x.arena.constant(M33), x)), W34),
        "masked_softmax_cross_entropy": lambda x: ad.masked_softmax_cross_entropy(
            ad.matmul(x, x.arena.constant(L43)), labels, mask),
    }


@pytest.mark.parametrize("opname", sorted(_op_functions(np.random.default_rng(0))))
def test_first_order_matches_finite_differences(opname):
    rng = np.random.default_rng(7)
    fns = _op_functions(rng)
    x0 = rng.standard_normal((3, 4))
    err = ad.finite_diff_check(fns[opname], x0, epsilon=1e-6)
    assert err <= 1e-5, f"{opname}: first-order rel err {err}"


@pytest.mark.parametrize("opname", sorted(_op_functions(np.random.default_rng(0))))
def test_second_order_matches_finite_differences(opname):
    rng = np.random.default_rng(11)
    fns = _op_functions(rng)
    x0 = rng.standard_normal((3, 4))
    v = rng.standard_normal((3, 4))

    def directional_grad(x):
        # <grad f(x), v>, differentiable again via create_graph
        (g,) = ad.grad(fns[opname](x), [x], create_graph=True)
        return ad.sum(ad.hadamard(g, x.arena.constant(v)))

    err = ad.finite_diff_check(directional_grad, x0, epsilon=1e-6)
    assert err <= 1e-4, f"{opname}: second-order rel err {err}"


def test_finite_diff_exact_for_linear():
    # Linear f has no truncation error; the wider step keeps rounding noise
    # in the difference quotient below the tolerance.
    x0 = np.random.default_rng(5).standard_normal((3, 4))
    err = ad.finite_diff_check(lambda x: ad.sum(x), x0, epsilon=1e-3)
    assert err <= 1e-10


def test_relu_second_order_contribution_is_zero():
    # The relu mask is a captured constant: differentiating sum(grad) again
    # yields the zero matrix.
    arena = ad.Arena()
    x = arena.leaf(np.array([[0.5, -0.5], [1.5, -2.0]]))
    (g,) = ad.grad(ad.sum(ad.relu(x)), [x], create_graph=True)
    (h,) = ad.grad(ad.sum(g), [x])
    np.testing.assert_array_equal(h.value, np.zeros((2, 2)))


def test_row_l2_norms_zero_row_subgradient():
    arena = ad.Arena()
    x = arena.leaf(np.array([[0.0, 0.0], [3.0, 4.0]]))
    (g,) = ad.grad(ad.sum(ad.row_l2_norms(x)), [x])
    np.testing.assert_allclose(g.value, [[0.0, 0.0], [0.6, 0.8]], atol=1e-12)
