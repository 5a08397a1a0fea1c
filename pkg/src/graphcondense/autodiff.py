"""Reverse-mode differentiation over dense float64 matrices.

Every node value is a 2-D float64 array; scalars are carried as 1x1
matrices.  Gradients produced by :func:`grad` are themselves nodes in the
same arena, built from the same primitive set, so a loss computed from
gradients can be differentiated again (``create_graph=True``).

The primitive set is closed under differentiation: each op's backward rule
is expressed with the ops below (plus constants captured at forward time),
and anything outside this set is rejected at construction.  ``relu`` uses
subgradient 0 at exactly 0; its mask is captured as a constant, so the
relu nonlinearity contributes a zero matrix to second-order paths.
"""

from __future__ import annotations

import numpy as np

_TINY = 1e-300  # additive guard inside safe reciprocals; never visible at float64 scale


def _as_matrix(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got array of ndim {arr.ndim}")
    return arr


class DiffNode:
    """One value in the computation graph.

    ``value`` is immutable once written; ``uid`` orders nodes by creation
    so that parents always precede children.
    """

    __slots__ = ("arena", "uid", "value", "op", "parents", "requires_grad", "_vjp")

    def __init__(self, arena, value, op, parents, requires_grad, vjp=None):
        self.arena = arena
        self.value = value
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._vjp = vjp
        self.uid = arena._register(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"DiffNode(op={self.op!r}, shape={self.value.shape}, grad={self.requires_grad})"


class Arena:
    """Append-only store of nodes for one differentiation episode.

    Arenas are independent; nodes from different arenas must not be mixed
    in one expression.  A single arena is not thread-safe, but separate
    arenas may run concurrently.
    """

    def __init__(self):
        self._nodes = []

    def _register(self, node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def __len__(self):
        return len(self._nodes)

    def constant(self, value) -> DiffNode:
        return DiffNode(self, _as_matrix(value), "const", (), False)

    def leaf(self, value, requires_grad=True) -> DiffNode:
        # leaves snapshot their input: parameter buffers keep being updated
        # in place by optimizers after the episode reads them
        return DiffNode(self, _as_matrix(value).copy(), "leaf", (), requires_grad)

    def ones(self, rows, cols) -> DiffNode:
        return self.constant(np.ones((rows, cols)))


def _same_arena(*nodes) -> Arena:
    arena = nodes[0].arena
    for n in nodes[1:]:
        if n.arena is not arena:
            raise ValueError("nodes belong to different arenas")
    return arena


def _any_grad(*nodes) -> bool:
    return any(n.requires_grad for n in nodes)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def matmul(a: DiffNode, b: DiffNode) -> DiffNode:
    arena = _same_arena(a, b)
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")

    def vjp(g, needs):
        ga = matmul(g, transpose(b)) if needs[0] else None
        gb = matmul(transpose(a), g) if needs[1] else None
        return ga, gb

    return DiffNode(arena, a.value @ b.value, "matmul", (a, b), _any_grad(a, b), vjp)


def transpose(a: DiffNode) -> DiffNode:
    def vjp(g, needs):
        return (transpose(g),)

    return DiffNode(a.arena, a.value.T.copy(), "transpose", (a,), a.requires_grad, vjp)


def add(a: DiffNode, b: DiffNode) -> DiffNode:
    arena = _same_arena(a, b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")

    def vjp(g, needs):
        return (g if needs[0] else None, g if needs[1] else None)

    return DiffNode(arena, a.value + b.value, "add", (a, b), _any_grad(a, b), vjp)


def subtract(a: DiffNode, b: DiffNode) -> DiffNode:
    arena = _same_arena(a, b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"subtract shape mismatch: {a.value.shape} vs {b.value.shape}")

    def vjp(g, needs):
        ga = g if needs[0] else None
        gb = scale(-1.0, g) if needs[1] else None
        return ga, gb

    return DiffNode(arena, a.value - b.value, "subtract", (a, b), _any_grad(a, b), vjp)


def scale(c: float, a: DiffNode) -> DiffNode:
    c = float(c)

    def vjp(g, needs):
        return (scale(c, g),)

    return DiffNode(a.arena, c * a.value, "scale", (a,), a.requires_grad, vjp)


def hadamard(a: DiffNode, b: DiffNode) -> DiffNode:
    arena = _same_arena(a, b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"hadamard shape mismatch: {a.value.shape} vs {b.value.shape}")

    def vjp(g, needs):
        ga = hadamard(g, b) if needs[0] else None
        gb = hadamard(g, a) if needs[1] else None
        return ga, gb

    return DiffNode(arena, a.value * b.value, "hadamard", (a, b), _any_grad(a, b), vjp)


def relu(a: DiffNode) -> DiffNode:
    # Subgradient 0 at exactly 0: the mask is a constant captured here, so
    # no second-order signal flows through the nonlinearity itself.
    mask = (a.value > 0).astype(np.float64)

    def vjp(g, needs):
        return (hadamard(g, a.arena.constant(mask)),)

    return DiffNode(a.arena, a.value * mask, "relu", (a,), a.requires_grad, vjp)


def sigmoid(a: DiffNode) -> DiffNode:
    val = np.empty_like(a.value)
    pos = a.value >= 0
    val[pos] = 1.0 / (1.0 + np.exp(-a.value[pos]))
    ez = np.exp(a.value[~pos])
    val[~pos] = ez / (1.0 + ez)

    def vjp(g, needs):
        ones = out.arena.ones(*out.value.shape)
        return (hadamard(g, hadamard(out, subtract(ones, out))),)

    out = DiffNode(a.arena, val, "sigmoid", (a,), a.requires_grad, vjp)
    return out


def sqrt(a: DiffNode) -> DiffNode:
    """Elementwise square root; entries are assumed strictly positive."""
    if np.any(a.value < 0):
        raise ValueError("sqrt of negative entry")

    def vjp(g, needs):
        return (hadamard(g, scale(0.5, reciprocal(out))),)

    out = DiffNode(a.arena, np.sqrt(a.value), "sqrt", (a,), a.requires_grad, vjp)
    return out


def reciprocal(a: DiffNode) -> DiffNode:
    """Elementwise 1/x; entries are assumed nonzero (callers guard)."""

    def vjp(g, needs):
        return (scale(-1.0, hadamard(g, hadamard(out, out))),)

    out = DiffNode(a.arena, 1.0 / a.value, "reciprocal", (a,), a.requires_grad, vjp)
    return out


def row_l2_norms(a: DiffNode) -> DiffNode:
    """Column vector of per-row L2 norms; subgradient 0 on all-zero rows."""
    val = np.linalg.norm(a.value, axis=1, keepdims=True)
    nonzero = (val > 0).astype(np.float64)

    def vjp(g, needs):
        arena = a.arena
        tiny = arena.constant(np.full(val.shape, _TINY))
        inv = hadamard(reciprocal(add(out, tiny)), arena.constant(nonzero))
        coeff = matmul(hadamard(g, inv), arena.ones(1, a.value.shape[1]))
        return (hadamard(coeff, a),)

    out = DiffNode(a.arena, val, "row_l2_norms", (a,), a.requires_grad, vjp)
    return out


def sum(a: DiffNode) -> DiffNode:  # noqa: A001 - op name mirrors the public API
    rows, cols = a.value.shape

    def vjp(g, needs):
        arena = a.arena
        return (matmul(matmul(arena.ones(rows, 1), g), arena.ones(1, cols)),)

    return DiffNode(a.arena, np.array([[a.value.sum()]]), "sum", (a,), a.requires_grad, vjp)


def reshape(a: DiffNode, rows: int, cols: int) -> DiffNode:
    if rows * cols != a.value.size:
        raise ValueError(f"cannot reshape {a.value.shape} to ({rows}, {cols})")
    orig = a.value.shape

    def vjp(g, needs):
        return (reshape(g, orig[0], orig[1]),)

    return DiffNode(a.arena, a.value.reshape(rows, cols).copy(), "reshape", (a,),
                    a.requires_grad, vjp)


def softmax_rows(a: DiffNode) -> DiffNode:
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g, needs):
        arena = a.arena
        n, c = a.value.shape
        pg = hadamard(out, g)
        rowsum = matmul(matmul(pg, arena.ones(c, 1)), arena.ones(1, c))
        return (hadamard(out, subtract(g, rowsum)),)

    out = DiffNode(a.arena, p, "softmax_rows", (a,), a.requires_grad, vjp)
    return out


def masked_softmax_cross_entropy(logits: DiffNode, labels, mask) -> DiffNode:
    """Mean cross-entropy of row-wise softmax over the masked rows.

    ``labels`` is an integer vector, ``mask`` a boolean vector; both are
    constants of the episode.  Fused forward (log-sum-exp) with a backward
    rule routed through :func:`softmax_rows`, which keeps the op
    twice-differentiable.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    n, c = logits.value.shape
    if labels.shape[0] != n or mask.shape[0] != n:
        raise ValueError("labels/mask length must match the number of logit rows")
    m = int(mask.sum())
    if m == 0:
        raise ValueError("empty mask in masked_softmax_cross_entropy")
    if labels[mask].min() < 0 or labels[mask].max() >= c:
        raise ValueError("label out of range for the logit width")

    z = logits.value
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    per_row = lse - z[np.arange(n), labels]
    val = np.array([[per_row[mask].mean()]])

    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    coeff = (mask.astype(np.float64) / m)[:, None] * np.ones((1, c))

    def vjp(g, needs):
        arena = logits.arena
        resid = subtract(softmax_rows(logits), arena.constant(onehot))
        gb = matmul(matmul(arena.ones(n, 1), g), arena.ones(1, c))
        return (hadamard(gb, hadamard(resid, arena.constant(coeff))),)

    return DiffNode(logits.arena, val, "masked_softmax_cross_entropy", (logits,),
                    logits.requires_grad, vjp)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def grad(output: DiffNode, wrt, create_graph=False):
    """Gradients of a scalar node with respect to each node in ``wrt``.

    With ``create_graph=True`` the results stay differentiable; otherwise
    they are detached constants holding the same values.  A ``wrt`` node
    that the output does not depend on yields a zero matrix (not an
    error).
    """
    if output.value.shape != (1, 1):
        raise ValueError(f"grad output must be scalar (1x1), got {output.value.shape}")
    wrt = list(wrt)
    for w in wrt:
        if not w.requires_grad:
            raise ValueError("every wrt node must have requires_grad=True")
        if w.arena is not output.arena:
            raise ValueError("wrt node from a different arena")

    # Nodes that can reach a differentiable leaf, found by DFS from the output.
    reach = []
    seen = set()
    stack = [output]
    while stack:
        node = stack.pop()
        if node.uid in seen or not node.requires_grad:
            continue
        seen.add(node.uid)
        reach.append(node)
        stack.extend(node.parents)
    reach.sort(key=lambda n: n.uid, reverse=True)

    arena = output.arena
    adjoint = {output.uid: arena.constant(np.ones((1, 1)))}
    for node in reach:
        g = adjoint.get(node.uid)
        if g is None or node._vjp is None:
            continue
        needs = tuple(p.requires_grad for p in node.parents)
        parent_grads = node._vjp(g, needs)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = adjoint.get(parent.uid)
            adjoint[parent.uid] = pg if prev is None else add(prev, pg)

    results = []
    for w in wrt:
        g = adjoint.get(w.uid)
        if g is None:
            g = arena.constant(np.zeros_like(w.value))
        results.append(g)
    if not create_graph:
        results = [arena.constant(g.value.copy()) for g in results]
    return results


def finite_diff_check(f, x0, epsilon=1e-6) -> float:
    """Max relative error between the analytic gradient of ``f`` and
    central finite differences at ``x0``.

    ``f`` maps one DiffNode to a scalar DiffNode and must be deterministic.
    The error metric is ``max |analytic - cd| / max(1, |cd|)`` over entries.
    """
    x0 = _as_matrix(x0)

    arena = Arena()
    x = arena.leaf(x0)
    (analytic,) = grad(f(x), [x])
    analytic = analytic.value

    numeric = np.zeros_like(x0)
    for i in range(x0.shape[0]):
        for j in range(x0.shape[1]):
            hi = x0.copy()
            hi[i, j] += epsilon
            lo = x0.copy()
            lo[i, j] -= epsilon
            f_hi = f(Arena().leaf(hi)).value[0, 0]
            f_lo = f(Arena().leaf(lo)).value[0, 0]
            numeric[i, j] = (f_hi - f_lo) / (2 * epsilon)

    denom = np.maximum(1.0, np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
