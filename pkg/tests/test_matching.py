import numpy as np
import pytest

from graphcondense import autodiff as ad
from graphcondense.data import normalize_adjacency
from graphcondense.matching import (
    MatchConfig,
    column_distance,
    cosine_gap,
    l2_gap,
    layer_distance,
    magnitude_gap,
    match_loss,
)
from graphcondense.models import GradientSet, ModelSpec, class_loss_grad, init_params


def scalar(node):
    return float(node.value[0, 0])


def test_identical_vectors_zero():
    for beta in (0.0, 0.3, 1.0):
        cfg = MatchConfig(beta=beta)
        assert scalar(column_distance([3.0, 4.0], [3.0, 4.0], cfg)) < 1e-15


def test_hand_computed_orthogonal_case():
    cfg = MatchConfig(beta=0.5)
    val = scalar(column_distance([1.0, 0.0], [0.0, 1.0], cfg))
    assert abs(val - (0.5 * np.sqrt(2.0) + 0.5)) < 1e-12


def test_cosine_scale_invariance():
    cfg = MatchConfig(metric="cos")
    u = np.array([0.3, -1.2, 0.7])
    assert abs(scalar(column_distance(u, 7.0 * u, cfg))) < 1e-9


def test_beta_limits_reduce_to_pure_metrics():
    rng = np.random.default_rng(0)
    for _ in range(20):
        u_s, u_t = rng.standard_normal(5), rng.standard_normal(5)
        d_norm = scalar(column_distance(u_s, u_t, MatchConfig(metric="norm")))
        d_cos = scalar(column_distance(u_s, u_t, MatchConfig(metric="cos")))
        d_b1 = scalar(column_distance(u_s, u_t, MatchConfig(beta=1.0)))
        d_b0 = scalar(column_distance(u_s, u_t, MatchConfig(beta=0.0)))
        assert abs(d_b1 - d_norm) <= 1e-12
        assert abs(d_b0 - d_cos) <= 1e-12


def test_layer_distance_sums_columns():
    cfg = MatchConfig(beta=0.5)
    g_s = np.array([[1.0, 0.0], [0.0, 1.0]])
    g_t = np.array([[0.0, 1.0], [1.0, 0.0]])
    expected = 2 * (0.5 * np.sqrt(2.0) + 0.5)
    assert abs(scalar(layer_distance(g_s, g_t, cfg)) - expected) < 1e-12


def test_layer_distance_column_permutation_invariance():
    rng = np.random.default_rng(1)
    g_s, g_t = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    perm = rng.permutation(6)
    cfg = MatchConfig(beta=0.4)
    a = scalar(layer_distance(g_s, g_t, cfg))
    b = scalar(layer_distance(g_s[:, perm], g_t[:, perm], cfg))
    assert abs(a - b) < 1e-12


def test_match_loss_zero_on_identical_sets():
    rng = np.random.default_rng(2)
    layers = [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))]
    arena = ad.Arena()
    gs = GradientSet([arena.leaf(g) for g in layers])
    assert scalar(match_loss(gs, layers, MatchConfig())) < 1e-12


def test_threshold_limits():
    rng = np.random.default_rng(3)
    layers_s = [rng.standard_normal((3, 4))]
    layers_t = [rng.standard_normal((3, 4))]

    def loss(cfg):
        arena = ad.Arena()
        gs = GradientSet([arena.leaf(g) for g in layers_s])
        return scalar(match_loss(gs, layers_t, cfg))

    # tau below every column norm: every column matched on direction only
    near_zero = loss(MatchConfig(metric="ctrl", grad_threshold=1e-300))
    pure_cos = loss(MatchConfig(metric="cos"))
    assert abs(near_zero - pure_cos) < 1e-12

    # tau above every column norm: plain combined criterion
    huge = loss(MatchConfig(metric="ctrl", grad_threshold=1e12))
    plain = loss(MatchConfig(metric="ctrl"))
    assert abs(huge - plain) < 1e-12


def test_threshold_mixes_per_column():
    # one small and one large target column; only the small one keeps the
    # Euclidean term
    g_s = np.array([[1.0, 1.0], [0.0, 0.0]])
    g_t = np.array([[0.1, 10.0], [0.0, 0.0]])
    cfg = MatchConfig(beta=0.5, metric="ctrl", grad_threshold=1.0)
    got = scalar(layer_distance(g_s, g_t, cfg))
    col_small = scalar(column_distance([1.0, 0.0], [0.1, 0.0], cfg))
    col_big_cos = scalar(column_distance([1.0, 0.0], [10.0, 0.0], MatchConfig(metric="cos")))
    assert abs(got - (col_small + col_big_cos)) < 1e-12


def test_zero_synthetic_column_has_maximal_cosine_distance():
    cfg = MatchConfig(metric="cos")
    val = scalar(column_distance([0.0, 0.0], [1.0, 2.0], cfg))
    assert abs(val - 1.0) < 1e-9


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        MatchConfig(beta=1.5)
    with pytest.raises(ValueError):
        MatchConfig(metric="euclid")
    with pytest.raises(ValueError):
        MatchConfig(grad_threshold=-1.0)


def test_gaps_identical_sets():
    rng = np.random.default_rng(4)
    layers = [rng.standard_normal((3, 3))]
    assert magnitude_gap(layers, layers) == 0.0
    assert cosine_gap(layers, layers) < 1e-12
    assert l2_gap(layers, layers) == 0.0


def test_gaps_scaling_case():
    rng = np.random.default_rng(5)
    layers_t = [rng.standard_normal((3, 3)), rng.standard_normal((2, 4))]
    layers_s = [2.0 * g for g in layers_t]
    assert cosine_gap(layers_s, layers_t) < 1e-12
    expected = sum(np.linalg.norm(g) for g in layers_t)
    assert abs(magnitude_gap(layers_s, layers_t) - expected) < 1e-12


def test_gaps_against_direct_scalar_computation():
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
    # direct per-definition computation
    mag = abs(np.sqrt((a ** 2).sum()) - np.sqrt((b ** 2).sum()))
    cosd = np.mean([1 - (a[:, j] @ b[:, j]) /
                    (np.linalg.norm(a[:, j]) * np.linalg.norm(b[:, j]))
                    for j in range(2)])
    l2 = np.sqrt(((a - b) ** 2).sum())
    assert abs(magnitude_gap([a], [b]) - mag) < 1e-12
    assert abs(cosine_gap([a], [b]) - cosd) < 1e-12
    assert abs(l2_gap([a], [b]) - l2) < 1e-12


def test_match_loss_gradient_through_second_order_chain():
    # d(match_loss)/d(synthetic features) through model gradients taken with
    # create_graph, against central finite differences.
    rng = np.random.default_rng(7)
    n_orig, n_syn, d, c = 20, 6, 3, 2
    spec = ModelSpec("sgc", num_features=d, num_classes=c, k_hops=2)
    params = init_params(spec, seed=0)

    a_orig = (rng.random((n_orig, n_orig)) < 0.2)
    a_orig = np.triu(a_orig, 1)
    a_orig = normalize_adjacency((a_orig + a_orig.T).astype(float), True)
    x_orig = rng.standard_normal((n_orig, d))
    y_orig = rng.integers(0, c, size=n_orig)

    a_syn = (rng.random((n_syn, n_syn)) < 0.5)
    a_syn = np.triu(a_syn, 1)
    a_syn = normalize_adjacency((a_syn + a_syn.T).astype(float), True)
    x_syn0 = rng.standard_normal((n_syn, d))
    y_syn = np.array([0, 0, 0, 1, 1, 1])

    cfg = MatchConfig(beta=0.3, metric="ctrl")
    targets = [class_loss_grad(spec, params, a_orig, x_orig, y_orig,
                               y_orig == cls).values() for cls in range(c)]

    def total_loss(x_node):
        arena = x_node.arena
        loss = None
        for cls in range(c):
            gs = class_loss_grad(spec, params, a_syn, x_node, y_syn,
                                 y_syn == cls, create_graph=True, arena=arena)
            term = match_loss(gs, targets[cls], cfg)
            loss = term if loss is None else ad.add(loss, term)
        return loss

    err = ad.finite_diff_check(total_loss, x_syn0, epsilon=1e-6)
    assert err <= 1e-4, f"meta-gradient rel err {err}"
