"""Graph data model: validated datasets, adjacency normalization, feature
propagation, directory I/O, and seeded synthetic graph generators."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class GraphDataset:
    """An undirected node-classification graph.

    ``adjacency`` is a symmetric 0/1 CSR matrix with a zero diagonal;
    ``features`` is dense N x d; masks are pairwise disjoint boolean
    vectors.  Instances are immutable after construction and safe to share
    across workers.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def dense_adjacency(self) -> np.ndarray:
        return np.asarray(self.adjacency.todense(), dtype=np.float64)

    def class_train_indices(self, cls: int) -> np.ndarray:
        return np.where(self.train_mask & (self.labels == cls))[0]


def make_dataset(adjacency, features, labels, train_mask, val_mask, test_mask,
                 num_classes) -> GraphDataset:
    """Validate the pieces and assemble an immutable GraphDataset."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    train_mask = np.asarray(train_mask, dtype=bool).reshape(-1)
    val_mask = np.asarray(val_mask, dtype=bool).reshape(-1)
    test_mask = np.asarray(test_mask, dtype=bool).reshape(-1)
    n = features.shape[0]

    adjacency = sp.csr_matrix(adjacency, dtype=np.float64)
    if adjacency.shape != (n, n):
        raise ValueError(f"adjacency shape {adjacency.shape} does not match {n} nodes")
    if (adjacency != adjacency.T).nnz != 0:
        raise ValueError("adjacency is not symmetric")
    if adjacency.diagonal().any():
        raise ValueError("adjacency has self-loops")
    data = adjacency.data
    if data.size and not np.all((data == 0) | (data == 1)):
        raise ValueError("adjacency entries must be 0/1")
    adjacency.eliminate_zeros()

    for name, m in (("labels", labels), ("train", train_mask),
                    ("val", val_mask), ("test", test_mask)):
        if m.shape[0] != n:
            raise ValueError(f"{name} length {m.shape[0]} does not match {n} nodes")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= num_classes:
        bad = labels[(labels < 0) | (labels >= num_classes)][0]
        raise ValueError(f"label {bad} out of range [0, {num_classes})")
    if ((train_mask & val_mask) | (train_mask & test_mask) | (val_mask & test_mask)).any():
        raise ValueError("train/val/test masks overlap")
    present = np.unique(labels[train_mask])
    missing = sorted(set(range(num_classes)) - set(present.tolist()))
    if missing:
        raise ValueError(f"classes {missing} have no training nodes")

    features = features.copy()
    features.setflags(write=False)
    labels.setflags(write=False)
    for m in (train_mask, val_mask, test_mask):
        m.setflags(write=False)
    return GraphDataset(adjacency, features, labels, train_mask, val_mask,
                        test_mask, int(num_classes))


# ---------------------------------------------------------------------------
# normalization and propagation
# ---------------------------------------------------------------------------

def normalize_adjacency(adjacency, add_self_loops: bool) -> np.ndarray:
    """Symmetrically normalized adjacency as a dense matrix.

    With ``add_self_loops`` this is the standard propagation operator
    D~^{-1/2} (A + I) D~^{-1/2}; without, D^{-1/2} A D^{-1/2}.  Rows of
    isolated nodes (zero degree after the optional self-loop) are zero.
    """
    if sp.issparse(adjacency):
        dense = np.asarray(adjacency.todense(), dtype=np.float64)
    else:
        dense = np.asarray(adjacency, dtype=np.float64)
    if dense.shape[0] != dense.shape[1]:
        raise ValueError("adjacency must be square")
    if add_self_loops:
        dense = dense + np.eye(dense.shape[0])
    deg = dense.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return dense * inv_sqrt[:, None] * inv_sqrt[None, :]


def propagate(a_hat: np.ndarray, x: np.ndarray, k: int) -> np.ndarray:
    """k-step feature smoothing: a_hat^k @ x by repeated multiplication."""
    if k < 0:
        raise ValueError("k must be >= 0")
    a_hat = np.asarray(a_hat, dtype=np.float64)
    out = np.asarray(x, dtype=np.float64)
    if k > 0 and a_hat.shape[1] != out.shape[0]:
        raise ValueError(f"cannot propagate {a_hat.shape} over {out.shape}")
    for _ in range(k):
        out = a_hat @ out
    return out


# ---------------------------------------------------------------------------
# directory I/O
# ---------------------------------------------------------------------------
#
# Layout: meta.json, edges.csv (one undirected edge per line, src,dst),
# features.csv (N x d decimals), labels.csv (N integers), splits.json
# (three integer index arrays).

def save_dataset(dataset: GraphDataset, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    meta = {
        "num_nodes": dataset.num_nodes,
        "num_features": dataset.num_features,
        "num_classes": dataset.num_classes,
    }
    with open(os.path.join(path, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    coo = sp.triu(dataset.adjacency, k=1).tocoo()
    order = np.lexsort((coo.col, coo.row))
    with open(os.path.join(path, "edges.csv"), "w", newline="\n") as fh:
        for i in order:
            fh.write(f"{coo.row[i]},{coo.col[i]}\n")
    with open(os.path.join(path, "features.csv"), "w", newline="\n") as fh:
        for row in dataset.features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(os.path.join(path, "labels.csv"), "w", newline="\n") as fh:
        for v in dataset.labels:
            fh.write(f"{int(v)}\n")
    splits = {
        "train": np.where(dataset.train_mask)[0].tolist(),
        "val": np.where(dataset.val_mask)[0].tolist(),
        "test": np.where(dataset.test_mask)[0].tolist(),
    }
    with open(os.path.join(path, "splits.json"), "w") as fh:
        json.dump(splits, fh)


def load_dataset(path: str) -> GraphDataset:
    """Load and validate a dataset directory; errors name the offending file."""
    def _require(name):
        full = os.path.join(path, name)
        if not os.path.exists(full):
            raise ValueError(f"missing dataset file: {full}")
        return full

    with open(_require("meta.json")) as fh:
        meta = json.load(fh)
    n = int(meta["num_nodes"])
    d = int(meta["num_features"])
    num_classes = int(meta["num_classes"])

    pairs = set()
    rows, cols = [], []
    with open(_require("edges.csv")) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            src_s, dst_s = line.split(",")
            src, dst = int(src_s), int(dst_s)
            if src == dst:
                raise ValueError(f"edges.csv line {lineno}: self-loop ({src},{dst})")
            if not (0 <= src < n and 0 <= dst < n):
                raise ValueError(f"edges.csv line {lineno}: node index out of range")
            key = (min(src, dst), max(src, dst))
            if key in pairs:
                raise ValueError(
                    f"edges.csv line {lineno}: edge ({src},{dst}) duplicates its reverse/self")
            pairs.add(key)
            rows += [src, dst]
            cols += [dst, src]
    adjacency = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))

    features = np.loadtxt(_require("features.csv"), delimiter=",", ndmin=2)
    if features.shape != (n, d):
        raise ValueError(
            f"features.csv shape {features.shape} does not match meta ({n}, {d})")
    labels = np.loadtxt(_require("labels.csv"), dtype=np.int64, ndmin=1)
    if labels.shape[0] != n:
        raise ValueError(f"labels.csv has {labels.shape[0]} rows, expected {n}")

    with open(_require("splits.json")) as fh:
        splits = json.load(fh)
    masks = {}
    for name in ("train", "val", "test"):
        m = np.zeros(n, dtype=bool)
        idx = np.asarray(splits.get(name, []), dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError(f"splits.json: {name} index out of range")
        m[idx] = True
        masks[name] = m

    return make_dataset(adjacency, features, labels, masks["train"], masks["val"],
                        masks["test"], num_classes)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratorSpec:
    """Seeded synthetic graph description.

    ``model`` is one of er/ba/ws/sbm with the matching parameter fields.
    Features are i.i.d. Normal(feature_bias, feature_std^2).  SBM labels
    are block indices; the other models draw labels uniformly over
    ``num_classes`` (those labels only matter to experiments that use
    them).  All randomness comes from ``seed`` (PCG64).
    """

    model: str
    num_nodes: int
    num_features: int
    seed: int
    feature_bias: float = 0.0
    feature_std: float = 1.0
    num_classes: int = 2
    p: float = 0.1                      # er
    m_edges: int = 2                    # ba
    k_neighbors: int = 4                # ws
    p_rewire: float = 0.1               # ws
    block_sizes: tuple = ()             # sbm
    p_in: float = 0.3                   # sbm
    p_out: float = 0.05                 # sbm
    split_fractions: tuple = (0.6, 0.2, 0.2)


def _er_edges(n, p, rng):
    upper = np.triu(rng.random((n, n)) < p, 1)
    return upper | upper.T


def _ba_edges(n, m, rng):
    if m < 1 or m >= n:
        raise ValueError(f"barabasi-albert needs 1 <= m_edges < num_nodes, got {m}")
    adj = np.zeros((n, n), dtype=bool)
    # seed clique over the first m+1 nodes, then preferential attachment
    for i in range(m + 1):
        for j in range(i + 1, m + 1):
            adj[i, j] = adj[j, i] = True
    repeated = [i for i in range(m + 1) for _ in range(m)]
    for new in range(m + 1, n):
        targets = set()
        while len(targets) < m:
            targets.add(repeated[rng.integers(len(repeated))])
        for t in targets:
            adj[new, t] = adj[t, new] = True
            repeated += [new, t]
    return adj


def _ws_edges(n, k, p_rewire, rng):
    if k % 2 or k >= n:
        raise ValueError(f"watts-strogatz needs even k_neighbors < num_nodes, got {k}")
    adj = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for off in range(1, k // 2 + 1):
            adj[i, (i + off) % n] = adj[(i + off) % n, i] = True
    for i in range(n):
        for off in range(1, k // 2 + 1):
            j = (i + off) % n
            if adj[i, j] and rng.random() < p_rewire:
                choices = np.where(~adj[i] & (np.arange(n) != i))[0]
                if choices.size:
                    adj[i, j] = adj[j, i] = False
                    t = choices[rng.integers(choices.size)]
                    adj[i, t] = adj[t, i] = True
    return adj


def _sbm_edges(block_sizes, p_in, p_out, rng):
    n = int(np.sum(block_sizes))
    blocks = np.repeat(np.arange(len(block_sizes)), block_sizes)
    prob = np.where(blocks[:, None] == blocks[None, :], p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, 1)
    return (upper | upper.T), blocks


def generate_graph(spec: GeneratorSpec) -> GraphDataset:
    """Deterministic synthetic graph per spec and seed.

    Masks come from a per-class shuffle at ``split_fractions`` with at
    least one training node per class.
    """
    for prob in (spec.p, spec.p_rewire, spec.p_in, spec.p_out):
        if not 0.0 <= prob <= 1.0:
            raise ValueError(f"probability {prob} outside [0, 1]")
    if spec.num_nodes < 2:
        raise ValueError("num_nodes must be >= 2")
    rng = np.random.default_rng(spec.seed)

    model = spec.model.lower()
    if model == "er":
        adj = _er_edges(spec.num_nodes, spec.p, rng)
        labels = rng.integers(0, spec.num_classes, size=spec.num_nodes)
        num_classes = spec.num_classes
    elif model == "ba":
        adj = _ba_edges(spec.num_nodes, spec.m_edges, rng)
        labels = rng.integers(0, spec.num_classes, size=spec.num_nodes)
        num_classes = spec.num_classes
    elif model == "ws":
        adj = _ws_edges(spec.num_nodes, spec.k_neighbors, spec.p_rewire, rng)
        labels = rng.integers(0, spec.num_classes, size=spec.num_nodes)
        num_classes = spec.num_classes
    elif model == "sbm":
        if not spec.block_sizes:
            raise ValueError("sbm requires block_sizes")
        if int(np.sum(spec.block_sizes)) != spec.num_nodes:
            raise ValueError("block_sizes must sum to num_nodes")
        adj, labels = _sbm_edges(spec.block_sizes, spec.p_in, spec.p_out, rng)
        num_classes = len(spec.block_sizes)
    else:
        raise ValueError(f"unknown graph model {spec.model!r}")

    features = rng.normal(spec.feature_bias, spec.feature_std,
                          size=(spec.num_nodes, spec.num_features))

    # uniform labels can leave a class empty; fold empties into class 0
    present = np.unique(labels)
    if model != "sbm" and present.size < num_classes:
        remap = {c: i for i, c in enumerate(present)}
        labels = np.array([remap[c] for c in labels])
        num_classes = present.size

    f_train, f_val, _ = spec.split_fractions
    train = np.zeros(spec.num_nodes, dtype=bool)
    val = np.zeros(spec.num_nodes, dtype=bool)
    test = np.zeros(spec.num_nodes, dtype=bool)
    for c in range(num_classes):
        idx = np.where(labels == c)[0]
        idx = idx[rng.permutation(idx.size)]
        n_train = max(1, int(round(f_train * idx.size)))
        n_val = int(round(f_val * idx.size))
        train[idx[:n_train]] = True
        val[idx[n_train:n_train + n_val]] = True
        test[idx[n_train + n_val:]] = True

    return make_dataset(sp.csr_matrix(adj.astype(np.float64)), features, labels,
                        train, val, test, num_classes)
