"""The small model zoo used for matching and evaluation: SGC, GCN, MLP.

All forwards run over the autodiff arena so losses are differentiable with
respect to both weights and inputs.  Models carry no biases and no
dropout; together with full-batch losses this keeps every gradient
identity in the test suite deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class ModelSpec:
    arch: str                  # 'sgc' | 'gcn' | 'mlp'
    num_features: int
    num_classes: int
    hidden_units: int = 64
    k_hops: int = 2            # sgc
    num_layers: int = 2        # gcn / mlp
    weight_decay: float = 0.0  # used by evaluator training

    def __post_init__(self):
        if self.arch not in ("sgc", "gcn", "mlp"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.arch in ("gcn", "mlp") and self.num_layers not in (2, 3):
            raise ValueError("num_layers must be 2 or 3")
        if self.hidden_units < 1:
            raise ValueError("hidden_units must be >= 1")

    def layer_shapes(self):
        if self.arch == "sgc":
            return [(self.num_features, self.num_classes)]
        dims = [self.num_features] + [self.hidden_units] * (self.num_layers - 1) \
            + [self.num_classes]
        return list(zip(dims[:-1], dims[1:]))


@dataclass(frozen=True)
class ModelParams:
    """Per-layer weight matrices; the canonical (numpy) parameter store."""
    weights: tuple

    def copy(self):
        return ModelParams(tuple(w.copy() for w in self.weights))

    def flatten(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights])


@dataclass
class GradientSet:
    """Per-layer gradient matrices of one class-restricted loss.

    ``layers`` holds DiffNodes; :meth:`values` strips them to arrays.
    """
    layers: list

    def values(self):
        return [g.value if isinstance(g, ad.DiffNode) else np.asarray(g)
                for g in self.layers]


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Glorot-uniform weights, W ~ U(-a, a) with a = sqrt(6/(fan_in+fan_out))."""
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in spec.layer_shapes():
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
    return ModelParams(tuple(weights))


def lift_params(arena: ad.Arena, params: ModelParams, requires_grad=True):
    return [arena.leaf(w, requires_grad=requires_grad) for w in params.weights]


def _ensure_node(arena, obj, requires_grad=False):
    if isinstance(obj, ad.DiffNode):
        return obj
    if requires_grad:
        return arena.leaf(obj)
    return arena.constant(obj)


def forward(spec: ModelSpec, weights, a_hat, x, arena=None) -> ad.DiffNode:
    """Logits (N x C) for the given architecture.

    ``weights`` may be a ModelParams or a list of DiffNodes; ``a_hat`` and
    ``x`` may be arrays or DiffNodes.  ``a_hat`` is the self-loop
    normalized operator for the graph models and is ignored by the MLP.
    """
    if arena is None:
        if isinstance(x, ad.DiffNode):
            arena = x.arena
        elif not isinstance(weights, ModelParams) and isinstance(weights[0], ad.DiffNode):
            arena = weights[0].arena
        else:
            arena = ad.Arena()
    if isinstance(weights, ModelParams):
        weights = lift_params(arena, weights, requires_grad=False)
    x = _ensure_node(arena, x)

    if spec.arch == "sgc":
        h = x
        if spec.k_hops > 0:
            a_hat = _ensure_node(arena, a_hat)
            for _ in range(spec.k_hops):
                h = ad.matmul(a_hat, h)
        return ad.matmul(h, weights[0])

    if spec.arch == "gcn":
        a_hat = _ensure_node(arena, a_hat)
        h = x
        for w in weights[:-1]:
            h = ad.relu(ad.matmul(ad.matmul(a_hat, h), w))
        return ad.matmul(ad.matmul(a_hat, h), weights[-1])

    h = x  # mlp
    for w in weights[:-1]:
        h = ad.relu(ad.matmul(h, w))
    return ad.matmul(h, weights[-1])


def masked_loss(logits: ad.DiffNode, labels, mask) -> ad.DiffNode:
    return ad.masked_softmax_cross_entropy(logits, labels, mask)


def class_loss_grad(spec: ModelSpec, params, a_hat, x, labels, class_mask,
                    create_graph=False, arena=None) -> GradientSet:
    """Per-layer gradients of the mean cross-entropy restricted to
    ``class_mask`` rows.

    ``params`` may be a ModelParams (weights become fresh leaves) or a
    list of weight DiffNodes already in ``arena``.
    """
    class_mask = np.asarray(class_mask, dtype=bool).reshape(-1)
    if not class_mask.any():
        raise ValueError("class_mask selects no nodes")
    if arena is None:
        arena = x.arena if isinstance(x, ad.DiffNode) else ad.Arena()
    if isinstance(params, ModelParams):
        weight_nodes = lift_params(arena, params, requires_grad=True)
    else:
        weight_nodes = list(params)
    logits = forward(spec, weight_nodes, a_hat, x, arena=arena)
    loss = masked_loss(logits, labels, class_mask)
    grads = ad.grad(loss, weight_nodes, create_graph=create_graph)
    return GradientSet(grads)
