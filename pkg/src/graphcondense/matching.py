"""Gradient-distance metrics and the differentiable matching loss.

Distances are taken column-wise over each layer's gradient matrix and
summed.  The combined criterion weighs an (unsquared) Euclidean term
against a cosine term with ``beta``; per-column thresholds on the target
gradient can drop the Euclidean term for large columns.  The target side
is always treated as constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .models import GradientSet

METRICS = ("cos", "norm", "cos_norm", "ctrl")


@dataclass(frozen=True)
class MatchConfig:
    beta: float = 0.3
    metric: str = "ctrl"
    grad_threshold: float | None = None   # per-column L2 cutoff on the target side
    cosine_epsilon: float = 1e-12

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.grad_threshold is not None and self.grad_threshold <= 0:
            raise ValueError("grad_threshold must be positive when set")


def _to_values(grads):
    if isinstance(grads, GradientSet):
        return grads.values()
    return [np.asarray(g, dtype=np.float64) for g in grads]


def layer_distance(g_s, g_t: np.ndarray, config: MatchConfig,
                   arena: ad.Arena | None = None) -> ad.DiffNode:
    """Sum over columns of the per-column distance; differentiable in g_s.

    ``g_s`` may be a DiffNode or an array; ``g_t`` is constant.  With a
    ``grad_threshold``, columns whose target L2 norm exceeds it contribute
    the cosine term only (applies to the ctrl and cos_norm metrics).
    """
    g_t = np.asarray(g_t, dtype=np.float64)
    if isinstance(g_s, ad.DiffNode):
        arena = g_s.arena
    else:
        arena = arena or ad.Arena()
        g_s = arena.leaf(np.asarray(g_s, dtype=np.float64))
    if g_s.value.shape != g_t.shape:
        raise ValueError(f"gradient shape mismatch: {g_s.value.shape} vs {g_t.shape}")

    d1, d2 = g_t.shape
    s_cols = ad.transpose(g_s)                      # (d2, d1): one column per row
    t_cols = arena.constant(g_t.T)
    t_norms = np.linalg.norm(g_t.T, axis=1, keepdims=True)

    need_norm = config.metric in ("norm", "cos_norm", "ctrl")
    need_cos = config.metric in ("cos", "cos_norm", "ctrl")

    norm_term = ad.row_l2_norms(ad.subtract(s_cols, t_cols)) if need_norm else None

    cos_term = None
    if need_cos:
        dots = ad.matmul(ad.hadamard(s_cols, t_cols), arena.ones(d1, 1))
        s_norms = ad.row_l2_norms(s_cols)
        prod = ad.hadamard(s_norms, arena.constant(t_norms))
        # epsilon floors the product only where it is degenerate, so the
        # cosine is exact on healthy columns (identical sets give 0) while a
        # zero column against a nonzero target still yields distance 1
        guard = np.where(prod.value < config.cosine_epsilon,
                         config.cosine_epsilon, 0.0)
        denom = ad.add(prod, arena.constant(guard))
        cos_term = ad.subtract(arena.ones(d2, 1),
                               ad.hadamard(dots, ad.reciprocal(denom)))

    if config.metric == "norm":
        per_col = norm_term
    elif config.metric == "cos":
        per_col = cos_term
    else:
        if config.metric == "ctrl":
            combined = ad.add(ad.scale(config.beta, norm_term),
                              ad.scale(1.0 - config.beta, cos_term))
        else:  # cos_norm: unweighted sum of both terms
            combined = ad.add(norm_term, cos_term)
        if config.grad_threshold is not None:
            big = (t_norms > config.grad_threshold).astype(np.float64)
            keep_cos = arena.constant(big)
            keep_full = arena.constant(1.0 - big)
            per_col = ad.add(ad.hadamard(keep_cos, cos_term),
                             ad.hadamard(keep_full, combined))
        else:
            per_col = combined
    return ad.sum(per_col)


def column_distance(u_s, u_t, config: MatchConfig,
                    arena: ad.Arena | None = None) -> ad.DiffNode:
    """Distance between two gradient columns (differentiable in u_s)."""
    u_t = np.asarray(u_t, dtype=np.float64).reshape(-1, 1)
    if isinstance(u_s, ad.DiffNode):
        if u_s.value.shape != u_t.shape:
            u_s = ad.reshape(u_s, u_t.shape[0], 1)
    else:
        u_s = np.asarray(u_s, dtype=np.float64).reshape(-1, 1)
    return layer_distance(u_s, u_t, config, arena=arena)


def match_loss(grads_s: GradientSet, grads_t, config: MatchConfig) -> ad.DiffNode:
    """Total matching loss: layer distances summed over all layers.

    ``grads_s`` must hold DiffNodes (the differentiable side); ``grads_t``
    is detached to constants.
    """
    t_values = _to_values(grads_t)
    if len(grads_s.layers) != len(t_values):
        raise ValueError("gradient sets have different layer counts")
    total = None
    for s_layer, t_layer in zip(grads_s.layers, t_values):
        term = layer_distance(s_layer, t_layer, config)
        total = term if total is None else ad.add(total, term)
    return total


# ---------------------------------------------------------------------------
# pure measurements (not differentiable)
# ---------------------------------------------------------------------------

def magnitude_gap(grads_s, grads_t) -> float:
    """Sum over layers of | ||G_s||_F - ||G_t||_F |."""
    s_vals, t_vals = _to_values(grads_s), _to_values(grads_t)
    return float(np.sum([abs(np.linalg.norm(a) - np.linalg.norm(b))
                         for a, b in zip(s_vals, t_vals)]))


def cosine_gap(grads_s, grads_t) -> float:
    """Mean column cosine distance across all layers.

    Zero-against-zero columns count as distance 0; zero-against-nonzero as
    the maximal 1.
    """
    dists = []
    for a, b in zip(_to_values(grads_s), _to_values(grads_t)):
        na = np.linalg.norm(a, axis=0)
        nb = np.linalg.norm(b, axis=0)
        prod = na * nb
        dots = np.sum(a * b, axis=0)
        for j in range(a.shape[1]):
            if prod[j] > 0:
                dists.append(1.0 - dots[j] / prod[j])
            elif na[j] == 0 and nb[j] == 0:
                dists.append(0.0)
            else:
                dists.append(1.0)
    return float(np.mean(dists))


def l2_gap(grads_s, grads_t) -> float:
    """Frobenius norm of the stacked gradient difference."""
    sq = 0.0
    for a, b in zip(_to_values(grads_s), _to_values(grads_t)):
        sq += float(np.sum((a - b) ** 2))
    return float(np.sqrt(sq))
