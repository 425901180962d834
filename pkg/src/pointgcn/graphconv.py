"""Graph-convolution kernels on a single point cloud.

The edge convolution ``max_k <[theta, phi], [x_k - x_i, x_i]>`` can be
evaluated two ways:

* baseline: gather an (N, K, 2d) edge tensor, then apply the MLP per edge;
* shuffled: apply ``theta`` and ``psi = phi - theta`` to the N points first,
  then gather and reduce. Same result, ``2dMN`` instead of ``2dMKN`` multiplies,
  and no (N, K, d) intermediate.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_features, check_neighbors
from .geometry import PointCloud
from .knn import NeighborIndex

AGGREGATIONS = ("max", "sum")
LEAKY_SLOPE = 0.2

_tracker = None


@contextmanager
def track_allocations():
    """Record (label, scalar count) for every transient array a kernel creates.

    Yields the list that receives the records.
    """
    global _tracker
    previous, _tracker = _tracker, []
    try:
        yield _tracker
    finally:
        _tracker = previous


def _note(label, arr):
    if _tracker is not None:
        _tracker.append((label, int(arr.size)))
    return arr


@dataclass(frozen=True)
class ConvParams:
    """Weights of one edge-convolution layer.

    ``theta`` acts on the local term ``x_k - x_i``, ``phi`` on the center
    ``x_i``. ``psi = phi - theta`` is derived once at construction.
    """

    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    bias: np.ndarray = field(default=None, repr=False)
    psi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64, ndmin=2)
        phi = np.array(self.phi, dtype=np.float64, ndmin=2)
        if theta.shape != phi.shape or theta.ndim != 2:
            raise ValueError(f"theta {theta.shape} and phi {phi.shape} must share a 2-D shape")
        M = theta.shape[1]
        bias = np.zeros(M) if self.bias is None else np.array(self.bias, dtype=np.float64).reshape(-1)
        if bias.shape != (M,):
            raise ValueError(f"bias must have length {M}, got {bias.shape}")
        psi = phi - theta
        for arr in (theta, phi, bias, psi):
            arr.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "psi", psi)

    @property
    def d(self):
        return self.theta.shape[0]

    @property
    def M(self):
        return self.theta.shape[1]


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def _inputs(features, nbrs):
    X = features.points if isinstance(features, PointCloud) else check_features(features)
    idx = nbrs.indices if isinstance(nbrs, NeighborIndex) else nbrs
    return X, check_neighbors(idx, X.shape[0])


def _check_agg(agg):
    if agg not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {agg!r}")


def _check_width(X, W, what):
    if W.shape[0] != X.shape[1]:
        raise ValueError(f"{what} expects {W.shape[0]} input channels, features have {X.shape[1]}")


def _activate(out, activation):
    if activation is None:
        return out
    if activation == "leaky_relu":
        return leaky_relu(out)
    raise ValueError(f"unknown activation {activation!r}")


def gather_edge_features(features, nbrs):
    """Edge tensor of shape (N, K, 2d); slot (i, k) is ``[x_k - x_i, x_i]``."""
    X, idx = _inputs(features, nbrs)
    neigh = X[idx]
    center = np.broadcast_to(X[:, None, :], neigh.shape)
    return _note("edge_tensor", np.concatenate([neigh - center, center], axis=2))


def sum_conv(features, nbrs, theta):
    """``out[i, m] = sum_k <theta[:, m], x_{nbr(i, k)}>``."""
    X, idx = _inputs(features, nbrs)
    theta = np.asarray(theta, dtype=np.float64)
    _check_width(X, theta, "theta")
    return X[idx].sum(axis=1) @ theta


def edgeconv_baseline(features, nbrs, params, agg="max", activation=None):
    """Gather-then-MLP edge convolution.

    Materializes the (N, K, 2d) edge tensor, applies ``[theta; phi]`` to each
    edge, aggregates over neighbors, then adds the bias and applies the
    optional activation.
    """
    _check_agg(agg)
    X, idx = _inputs(features, nbrs)
    _check_width(X, params.theta, "params")
    edges = gather_edge_features(X, idx)
    W = np.vstack([params.theta, params.phi])
    resp = _note("edge_response", edges @ W)
    out = resp.max(axis=1) if agg == "max" else resp.sum(axis=1)
    return _activate(out + params.bias, activation)


def edgeconv_shuffled(features, nbrs, params, agg="max", activation=None):
    """MLP-then-gather edge convolution, equal to :func:`edgeconv_baseline`.

    Computes ``U = X theta`` and ``V = X psi`` once per point, then reduces
    ``U`` over each neighbor list one neighbor column at a time, so the
    transient footprint stays O(N max(M, d) + N K).
    """
    _check_agg(agg)
    X, idx = _inputs(features, nbrs)
    _check_width(X, params.theta, "params")
    U = _note("point_mlp_theta", X @ params.theta)
    V = _note("point_mlp_psi", X @ params.psi)
    acc = _note("reduce", U[idx[:, 0]].copy())
    for k in range(1, idx.shape[1]):
        if agg == "max":
            np.maximum(acc, U[idx[:, k]], out=acc)
        else:
            acc += U[idx[:, k]]
    if agg == "sum":
        V = V * idx.shape[1]
    acc += V
    acc += params.bias
    return _activate(acc, activation)


def generic_graph_conv(features, nbrs, per_slot_params, agg="sum"):
    """Slot-specific linear responses ``h(x_i^k; Theta_k)``, aggregated over k."""
    _check_agg(agg)
    X, idx = _inputs(features, nbrs)
    slots = [np.asarray(t, dtype=np.float64) for t in per_slot_params]
    if len(slots) != idx.shape[1]:
        raise ValueError(f"expected {idx.shape[1]} parameter slots, got {len(slots)}")
    for t in slots:
        _check_width(X, t, "slot parameters")
    resp = np.stack([X[idx[:, k]] @ slots[k] for k in range(len(slots))], axis=1)
    return resp.max(axis=1) if agg == "max" else resp.sum(axis=1)
