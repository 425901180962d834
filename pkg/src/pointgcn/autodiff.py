"""Reverse-mode differentiation over the small operator set used by the GCNs.

Values are numpy arrays with a leading batch axis where relevant:
features ``(B, N, d)``, neighbor tables ``(B, N, K)``, edge tensors
``(B, N, K, c)``. A :class:`Tape` records nodes in creation order, so it is
acyclic by construction and ``backward`` is a single reverse sweep.

Max reductions route the gradient to the first maximal position (lowest
neighbor / point index), the same tie rule as ``np.argmax`` in the forward.
"""

from dataclasses import dataclass, field

import numpy as np

from .graphconv import LEAKY_SLOPE


@dataclass(eq=False)
class Node:
    id: int
    op: str
    value: np.ndarray = field(repr=False)
    inputs: tuple = ()
    cache: dict = field(default_factory=dict, repr=False)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Append-only record of a forward computation."""

    def __init__(self):
        self.nodes = []
        self.params = {}
        self.loss = None

    def _push(self, op, value, inputs=(), **cache):
        node = Node(len(self.nodes), op, value, tuple(inputs), cache)
        self.nodes.append(node)
        return node

    # leaves

    def param(self, name, value):
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        node = self._push("param", np.asarray(value, dtype=np.float64))
        self.params[name] = node
        return node

    def const(self, value):
        return self._push("const", np.asarray(value))

    # arithmetic

    def matmul(self, a, w):
        return self._push("matmul", a.value @ w.value, (a, w))

    def add(self, a, b):
        return self._push("add", a.value + b.value, (a, b))

    def sub(self, a, b):
        return self._push("sub", a.value - b.value, (a, b))

    def add_bias(self, a, b):
        return self._push("add_bias", a.value + b.value, (a, b))

    def stack_rows(self, a, b):
        """Stack two matrices vertically, e.g. ``[theta; phi]``."""
        return self._push("stack_rows", np.vstack([a.value, b.value]), (a, b), split=a.value.shape[0])

    def leaky_relu(self, a, slope=LEAKY_SLOPE):
        mask = a.value > 0
        return self._push("leaky_relu", np.where(mask, a.value, slope * a.value), (a,),
                          mask=mask, slope=slope)

    # graph ops

    def gather(self, a, idx):
        """Rows of ``a`` (B, N, c) selected by ``idx`` (B, N, K) -> (B, N, K, c)."""
        idx = np.asarray(idx)
        batch = np.arange(a.value.shape[0])[:, None, None]
        return self._push("gather", a.value[batch, idx], (a,), idx=idx)

    def center_subtract(self, g, a):
        """``g[b, i, k] - a[b, i]``: neighbor features relative to their center."""
        return self._push("center_subtract", g.value - a.value[:, :, None, :], (g, a))

    def edge_concat(self, local, center):
        """``[local[b, i, k], center[b, i]]`` along the channel axis."""
        c = np.broadcast_to(center.value[:, :, None, :], local.value.shape[:-1] + center.value.shape[-1:])
        return self._push("edge_concat", np.concatenate([local.value, c], axis=-1), (local, center),
                          split=local.value.shape[-1])

    def max_neighbors(self, a):
        """Max over the neighbor axis of (B, N, K, c)."""
        arg = np.argmax(a.value, axis=2)
        out = np.take_along_axis(a.value, arg[:, :, None, :], axis=2)[:, :, 0, :]
        return self._push("max_neighbors", out, (a,), arg=arg)

    def sum_neighbors(self, a):
        """Sum over the neighbor axis of (B, N, K, c)."""
        return self._push("sum_neighbors", a.value.sum(axis=2), (a,), K=a.value.shape[2])

    def global_max_pool(self, a):
        """Max over the point axis of (B, N, c)."""
        arg = np.argmax(a.value, axis=1)
        out = np.take_along_axis(a.value, arg[:, None, :], axis=1)[:, 0, :]
        return self._push("global_max_pool", out, (a,), arg=arg)

    def softmax_xent(self, logits, labels):
        """Mean softmax cross-entropy of (B, C) logits against integer labels."""
        labels = np.asarray(labels, dtype=np.intp)
        z = logits.value - logits.value.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -logp[np.arange(len(labels)), labels].mean()
        node = self._push("softmax_xent", np.asarray(loss), (logits,), logp=logp, labels=labels)
        self.loss = node
        return node

    def signature(self):
        """Branch decisions: argmax choices, activation signs, neighbor tables."""
        parts = []
        for node in self.nodes:
            if node.op == "gather":
                parts.append(node.cache["idx"])
            elif node.op in ("max_neighbors", "global_max_pool"):
                parts.append(node.cache["arg"])
            elif node.op == "leaky_relu":
                parts.append(node.cache["mask"])
        return parts

    def backward(self):
        """Gradients of the recorded loss w.r.t. every registered parameter."""
        if self.loss is None:
            raise RuntimeError("backward() called before a loss was recorded")
        grads = {self.loss.id: np.ones_like(self.loss.value)}
        for node in reversed(self.nodes[: self.loss.id + 1]):
            g = grads.pop(node.id, None)
            if g is None or not node.inputs:
                if node.op == "param":
                    grads[node.id] = g if g is not None else np.zeros_like(node.value)
                continue
            try:
                rule = _BACKWARD[node.op]
            except KeyError:
                raise ValueError(f"unsupported op kind {node.op!r}") from None
            for inp, gi in zip(node.inputs, rule(node, g)):
                if gi is None or inp.op == "const":
                    continue
                if inp.id in grads:
                    grads[inp.id] = grads[inp.id] + gi
                else:
                    grads[inp.id] = gi
        return {
            name: grads.get(node.id, np.zeros_like(node.value)) for name, node in self.params.items()
        }


def _matmul_grad(node, g):
    a, w = node.inputs
    av, wv = a.value, w.value
    ga = g @ wv.T
    gw = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    return ga, gw


def _gather_grad(node, g):
    (a,) = node.inputs
    B, N, c = a.value.shape
    idx = node.cache["idx"]
    flat = (idx + (np.arange(B) * N)[:, None, None]).ravel()
    ga = np.zeros((B * N, c))
    np.add.at(ga, flat, g.reshape(-1, c))
    return (ga.reshape(B, N, c),)


def _edge_concat_grad(node, g):
    s = node.cache["split"]
    return g[..., :s], g[..., s:].sum(axis=2)


def _max_neighbors_grad(node, g):
    (a,) = node.inputs
    ga = np.zeros_like(a.value)
    np.put_along_axis(ga, node.cache["arg"][:, :, None, :], g[:, :, None, :], axis=2)
    return (ga,)


def _global_max_grad(node, g):
    (a,) = node.inputs
    ga = np.zeros_like(a.value)
    np.put_along_axis(ga, node.cache["arg"][:, None, :], g[:, None, :], axis=1)
    return (ga,)


def _xent_grad(node, g):
    logp, labels = node.cache["logp"], node.cache["labels"]
    p = np.exp(logp)
    p[np.arange(len(labels)), labels] -= 1.0
    return (g * p / len(labels),)


_BACKWARD = {
    "matmul": _matmul_grad,
    "add": lambda n, g: (_unbroadcast(g, n.inputs[0].value.shape), _unbroadcast(g, n.inputs[1].value.shape)),
    "sub": lambda n, g: (_unbroadcast(g, n.inputs[0].value.shape), -_unbroadcast(g, n.inputs[1].value.shape)),
    "add_bias": lambda n, g: (g, _unbroadcast(g, n.inputs[1].value.shape)),
    "stack_rows": lambda n, g: (g[: n.cache["split"]], g[n.cache["split"]:]),
    "leaky_relu": lambda n, g: (np.where(n.cache["mask"], g, n.cache["slope"] * g),),
    "gather": _gather_grad,
    "center_subtract": lambda n, g: (g, -g.sum(axis=2)),
    "edge_concat": _edge_concat_grad,
    "max_neighbors": _max_neighbors_grad,
    "sum_neighbors": lambda n, g: (np.repeat(g[:, :, None, :], n.cache["K"], axis=2),),
    "global_max_pool": _global_max_grad,
    "softmax_xent": _xent_grad,
}


def forward(expression, params, inputs):
    """Run ``expression(tape, param_nodes, inputs)`` on a fresh tape.

    ``expression`` must end in :meth:`Tape.softmax_xent`. Returns
    ``(tape, loss)`` with ``loss`` a float.
    """
    tape = Tape()
    nodes = {name: tape.param(name, value) for name, value in params.items()}
    expression(tape, nodes, inputs)
    if tape.loss is None:
        raise ValueError("expression did not record a loss")
    return tape, float(tape.loss.value)


def backward(tape):
    return tape.backward()


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    excluded: int
    tolerance: float
    worst: tuple = None

    @property
    def passed(self):
        return self.max_rel_error < self.tolerance


def _same_branches(sig_a, sig_b):
    return len(sig_a) == len(sig_b) and all(np.array_equal(x, y) for x, y in zip(sig_a, sig_b))


def finite_diff_check(expression, params, inputs, epsilon=1e-5, tolerance=1e-4, floor=1e-6):
    """Compare reverse-mode gradients with central differences.

    Entries whose ``+-epsilon`` perturbation changes any argmax, activation
    sign or data-dependent neighbor table are excluded, since the loss is not differentiable across them.
    Relative error per entry is ``|a - b| / max(|a|, |b|, floor)``.
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape, _ = forward(expression, params, inputs)
    base_sig = tape.signature()
    grads = tape.backward()

    worst, max_err, checked, excluded = None, 0.0, 0, 0
    for name, value in params.items():
        for pos in np.ndindex(value.shape):
            orig = value[pos]
            value[pos] = orig + epsilon
            tp, lp = forward(expression, params, inputs)
            value[pos] = orig - epsilon
            tm, lm = forward(expression, params, inputs)
            value[pos] = orig
            if not (_same_branches(base_sig, tp.signature()) and _same_branches(base_sig, tm.signature())):
                excluded += 1
                continue
            numeric = (lp - lm) / (2 * epsilon)
            analytic = grads[name][pos]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            checked += 1
            if err > max_err or worst is None:
                max_err = max(max_err, err)
                worst = (name, pos, analytic, numeric)
    return GradCheckReport(max_err, checked, excluded, tolerance, worst)
