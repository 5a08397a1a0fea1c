"""The condensation loop: a learnable synthetic graph is optimized so that
per-class model gradients on it track the gradients on the original graph.

Features and the adjacency generator alternate as the optimization target
while the matching backbone advances on the synthetic graph between steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .data import GraphDataset, make_dataset, normalize_adjacency
from .initfeat import derive_budget, init_features_kmeans, init_features_random
from .matching import MatchConfig, cosine_gap, l2_gap, magnitude_gap, match_loss
from .models import GradientSet, ModelSpec, forward, init_params, masked_loss
from .optim import Adam, sgd_step


class DivergenceError(RuntimeError):
    """Raised when the matching loss or a trajectory becomes non-finite."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


@dataclass
class AdjacencyGenerator:
    """3-layer MLP over node-feature pairs that emits edge probabilities.

    The first layer is stored split into the halves acting on the two
    endpoint features, so a pair never needs an explicit concatenation.
    """
    weights: list          # [W1_left (d,h), W1_right (d,h), W2 (h,h), W3 (h,1)]
    hidden_units: int

    @staticmethod
    def create(num_features, hidden_units, seed):
        rng = np.random.default_rng(seed)
        shapes = [(num_features, hidden_units), (num_features, hidden_units),
                  (hidden_units, hidden_units), (hidden_units, 1)]
        weights = []
        for fan_in, fan_out in shapes:
            a = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        # the split halves share one fan-in of 2d
        a = np.sqrt(6.0 / (2 * num_features + hidden_units))
        rng = np.random.default_rng(seed)
        weights[0] = rng.uniform(-a, a, size=(num_features, hidden_units))
        weights[1] = rng.uniform(-a, a, size=(num_features, hidden_units))
        return AdjacencyGenerator(weights, hidden_units)


def build_adjacency(phi, x, arena=None) -> ad.DiffNode:
    """Symmetric edge-probability matrix with unit diagonal.

    e_ij comes from the pair MLP; entries are sigmoid((e_ij + e_ji)/2), so
    the result is symmetric with off-diagonal values in (0, 1), and the
    diagonal is forced to exactly 1 (the self-loop convention).
    Differentiable with respect to both the MLP weights and ``x``.
    """
    if isinstance(x, ad.DiffNode):
        arena = x.arena
    else:
        arena = arena or ad.Arena()
        x = arena.constant(x)
    if isinstance(phi, AdjacencyGenerator):
        phi = [arena.constant(w) for w in phi.weights]
    w1l, w1r, w2, w3 = phi

    n = x.value.shape[0]
    left = arena.constant(np.repeat(np.eye(n), n, axis=0))
    right = arena.constant(np.tile(np.eye(n), (n, 1)))
    h = ad.relu(ad.add(ad.matmul(ad.matmul(left, x), w1l),
                       ad.matmul(ad.matmul(right, x), w1r)))
    h = ad.relu(ad.matmul(h, w2))
    e = ad.reshape(ad.matmul(h, w3), n, n)
    sym = ad.scale(0.5, ad.add(e, ad.transpose(e)))
    probs = ad.sigmoid(sym)
    off = arena.constant(1.0 - np.eye(n))
    return ad.add(ad.hadamard(probs, off), arena.constant(np.eye(n)))


def normalize_node(a: ad.DiffNode) -> ad.DiffNode:
    """Differentiable D^{-1/2} A D^{-1/2}; assumes strictly positive degrees
    (the generator's unit diagonal guarantees this)."""
    arena = a.arena
    n = a.value.shape[0]
    deg = ad.matmul(a, arena.ones(n, 1))
    inv = ad.reciprocal(ad.sqrt(deg))
    return ad.hadamard(a, ad.matmul(inv, ad.transpose(inv)))


def adjacency_values(gen: AdjacencyGenerator, x: np.ndarray) -> np.ndarray:
    return build_adjacency(gen, np.asarray(x), ad.Arena()).value


@dataclass(frozen=True)
class CondenseConfig:
    ratio: float
    outer_epochs: int = 600
    model_reinit_every: int = 20
    match_steps_per_epoch: int = 10
    inner_model_steps: int = 3
    lr_model: float = 0.01
    lr_feat: float = 0.01
    lr_adj: float = 0.01
    feat_steps: int = 10
    adj_steps: int = 10
    match: MatchConfig = field(default_factory=MatchConfig)
    backbone_arch: str = "sgc"
    backbone_hidden: int = 64
    backbone_k_hops: int = 2
    backbone_layers: int = 2
    adjgen_hidden: int = 128
    init_method: str = "kmeans"
    class_weighted: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("outer_epochs",):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("model_reinit_every", "match_steps_per_epoch",
                     "inner_model_steps", "feat_steps", "adj_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("lr_model", "lr_feat", "lr_adj"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.init_method not in ("kmeans", "random"):
            raise ValueError("init_method must be 'kmeans' or 'random'")

    def backbone_spec(self, num_features, num_classes) -> ModelSpec:
        return ModelSpec(self.backbone_arch, num_features, num_classes,
                         hidden_units=self.backbone_hidden,
                         k_hops=self.backbone_k_hops,
                         num_layers=self.backbone_layers)


@dataclass
class SyntheticGraph:
    features: np.ndarray
    adjgen: AdjacencyGenerator
    labels: np.ndarray
    config: CondenseConfig

    @property
    def num_nodes(self):
        return self.features.shape[0]

    def adjacency(self) -> np.ndarray:
        return adjacency_values(self.adjgen, self.features)


@dataclass
class TrajectoryRow:
    epoch: int
    step: int
    cls: int
    cos_gap: float
    mag_gap: float
    l2_gap: float
    match_loss: float


@dataclass
class TrajectoryLog:
    rows: list = field(default_factory=list)

    def append(self, **kw):
        self.rows.append(TrajectoryRow(**kw))

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("epoch,step,class,cos_gap,mag_gap,l2_gap,match_loss\n")
            for r in self.rows:
                fh.write(f"{r.epoch},{r.step},{r.cls},{r.cos_gap!r},"
                         f"{r.mag_gap!r},{r.l2_gap!r},{r.match_loss!r}\n")


def condense(dataset: GraphDataset, config: CondenseConfig):
    """Optimize a synthetic graph against the dataset's per-class gradients.

    Returns (SyntheticGraph, TrajectoryLog).  Deterministic per config and
    seed; raises DivergenceError if the matching loss goes non-finite.
    """
    ss = np.random.SeedSequence(config.seed)
    seed_feat, seed_phi, seed_theta = [int(s.generate_state(1)[0] % (2 ** 31))
                                       for s in ss.spawn(3)]

    budget = derive_budget(dataset, config.ratio)
    if config.init_method == "kmeans":
        x_syn, y_syn = init_features_kmeans(dataset, budget, seed_feat)
    else:
        x_syn, y_syn = init_features_random(dataset, budget, seed_feat)
    x_syn = x_syn.copy()
    gen = AdjacencyGenerator.create(dataset.num_features, config.adjgen_hidden,
                                    seed_phi)

    spec = config.backbone_spec(dataset.num_features, dataset.num_classes)
    theta_rng = np.random.default_rng(seed_theta)
    theta = None

    a_hat_orig = normalize_adjacency(dataset.adjacency, add_self_loops=True)
    x_orig = dataset.features
    classes = sorted(budget.counts)
    class_masks_orig = {c: dataset.train_mask & (dataset.labels == c)
                        for c in classes}
    n_train = int(dataset.train_mask.sum())
    class_weights = {c: class_masks_orig[c].sum() / n_train if config.class_weighted
                     else 1.0 for c in classes}

    opt_feat = Adam([x_syn.shape], config.lr_feat)
    opt_adj = Adam([w.shape for w in gen.weights], config.lr_adj)
    log = TrajectoryLog()
    cycle = config.feat_steps + config.adj_steps
    global_step = 0

    for epoch in range(config.outer_epochs):
        if epoch % config.model_reinit_every == 0:
            theta = [w.copy() for w in
                     init_params(spec, int(theta_rng.integers(2 ** 31))).weights]

        for step in range(config.match_steps_per_epoch):
            arena = ad.Arena()
            weight_nodes = [arena.leaf(w) for w in theta]

            logits_t = forward(spec, weight_nodes, a_hat_orig, x_orig, arena=arena)
            targets = {}
            for c in classes:
                loss_t = masked_loss(logits_t, dataset.labels, class_masks_orig[c])
                targets[c] = [g.value for g in
                              ad.grad(loss_t, weight_nodes, create_graph=False)]

            x_node = arena.leaf(x_syn)
            phi_nodes = [arena.leaf(w) for w in gen.weights]
            a_hat_syn = normalize_node(build_adjacency(phi_nodes, x_node))
            logits_s = forward(spec, weight_nodes, a_hat_syn, x_node, arena=arena)

            total = None
            for c in classes:
                loss_s = masked_loss(logits_s, y_syn, y_syn == c)
                grads_s = ad.grad(loss_s, weight_nodes, create_graph=True)
                term = match_loss(GradientSet(grads_s), targets[c], config.match)
                if config.class_weighted:
                    term = ad.scale(class_weights[c], term)
                total = term if total is None else ad.add(total, term)

                s_vals = [g.value for g in grads_s]
                log.append(epoch=epoch, step=step, cls=int(c),
                           cos_gap=cosine_gap(s_vals, targets[c]),
                           mag_gap=magnitude_gap(s_vals, targets[c]),
                           l2_gap=l2_gap(s_vals, targets[c]),
                           match_loss=float(term.value[0, 0]))

            if not np.isfinite(total.value[0, 0]):
                raise DivergenceError(
                    f"matching loss became non-finite at epoch {epoch}, step {step}",
                    epoch=epoch, step=step)

            if global_step % cycle < config.feat_steps:
                (gx,) = ad.grad(total, [x_node])
                opt_feat.step([x_syn], [gx.value])
            else:
                g_phi = ad.grad(total, phi_nodes)
                opt_adj.step(gen.weights, [g.value for g in g_phi])
            if not np.isfinite(x_syn).all():
                raise DivergenceError(
                    f"synthetic features non-finite at epoch {epoch}, step {step}",
                    epoch=epoch, step=step)
            global_step += 1

            # advance the backbone on the (updated) synthetic graph
            a_hat_val = normalize_node(
                build_adjacency(gen, x_syn, ad.Arena())).value
            for _ in range(config.inner_model_steps):
                inner = ad.Arena()
                w_nodes = [inner.leaf(w) for w in theta]
                logits = forward(spec, w_nodes, a_hat_val, x_syn, arena=inner)
                loss = masked_loss(logits, y_syn, np.ones(len(y_syn), dtype=bool))
                grads = ad.grad(loss, w_nodes)
                sgd_step(theta, [g.value for g in grads], config.lr_model)

    synth = SyntheticGraph(x_syn, gen, y_syn, config)
    return synth, log


def finalize(synth: SyntheticGraph, sparsify_threshold: float = 0.5) -> GraphDataset:
    """Threshold the generated adjacency and emit a standard dataset.

    Off-diagonal entries below the threshold are zeroed, the survivors
    become unit edges; the unit diagonal is left out of the stored graph
    because evaluation re-adds self-loops during normalization.  All nodes
    are marked train.
    """
    probs = synth.adjacency()
    n = synth.num_nodes
    adj = (probs >= sparsify_threshold).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    num_classes = int(synth.labels.max()) + 1
    return make_dataset(sp.csr_matrix(adj), synth.features, synth.labels,
                        np.ones(n, bool), np.zeros(n, bool), np.zeros(n, bool),
                        num_classes)
