"""Brute-force KNN search, shared neighbor pools and progressive sampling.

A point is its own first neighbor. Ties in distance are broken by ascending
point index, after self. Pools are computed once per block of shareholder
layers; layer ``l`` samples ``K`` neighbors from the first ``K + (l-1) P``
pool columns.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_features, check_positive_int
from .geometry import PointCloud, pairwise_sq_distances, pairwise_sq_distances_fast
from .rng import counter_uniform

# Instrumentation: number of full KNN searches performed by this process.
CALL_COUNTS = {"knn_search": 0, "build_pool": 0}


def reset_call_counts():
    for key in CALL_COUNTS:
        CALL_COUNTS[key] = 0


@dataclass(frozen=True)
class NeighborIndex:
    """N x K table of neighbor indices, each row sorted by distance."""

    indices: np.ndarray = field(repr=False)

    @property
    def K(self):
        return self.indices.shape[1]

    @property
    def N(self):
        return self.indices.shape[0]


@dataclass(frozen=True)
class NeighborPool:
    """Widened neighbor table of width ``L`` plus its sampling metadata."""

    pool: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)
    K: int
    P: int
    n: int

    @property
    def L(self):
        return self.pool.shape[1]

    def window(self, layer):
        """Number of leading pool columns layer ``layer`` samples from."""
        return min(self.K + (layer - 1) * self.P, self.L)


def _distance_matrix(features, method):
    X = features.points if isinstance(features, PointCloud) else check_features(features)
    if method == "exact":
        return X, pairwise_sq_distances(X)
    if method == "fast":
        return X, pairwise_sq_distances_fast(X)
    raise ValueError(f"unknown distance method {method!r}")


def _sorted_topk(D, K, include_self=True):
    """Column indices of the K smallest entries per row, ordered (dist, self, index)."""
    n = D.shape[0]
    D = D.copy()
    rows = np.arange(n)
    if include_self:
        # self wins every tie, including duplicates at distance zero
        D[rows, rows] = -1.0
    else:
        D[rows, rows] = np.inf
    if K >= n:
        idx = np.argsort(D, axis=1, kind="stable")[:, :K]
        return idx, D
    part = np.argpartition(D, K - 1, axis=1)[:, :K]
    pd = np.take_along_axis(D, part, axis=1)
    order = np.lexsort((part, pd), axis=1)
    idx = np.take_along_axis(part, order, axis=1)
    # argpartition picks arbitrarily among entries tied with the K-th value
    kth = np.take_along_axis(D, idx[:, -1:], axis=1)
    tied = np.count_nonzero(D <= kth, axis=1) > K
    for r in np.flatnonzero(tied):
        idx[r] = np.argsort(D[r], kind="stable")[:K]
    return idx, D


def knn_search(features, K, *, method="exact", include_self=True):
    """K nearest neighbors of every point, self first.

    Args:
        features: (N, d) array or :class:`PointCloud`.
        K: neighbors per point, ``1 <= K <= N`` (``N - 1`` when self is excluded).
        method: ``"exact"`` uses direct differences; ``"fast"`` the expanded
            inner-product form (benchmarks only).

    Returns:
        NeighborIndex
    """
    X, D = _distance_matrix(features, method)
    K = check_positive_int(K, "K")
    limit = X.shape[0] if include_self else X.shape[0] - 1
    if K > limit:
        raise ValueError(f"K={K} exceeds the number of available neighbors ({limit})")
    CALL_COUNTS["knn_search"] += 1
    idx, _ = _sorted_topk(D, K, include_self)
    return NeighborIndex(idx)


def build_pool(features, K, P, n, *, method="exact", include_self=True):
    """One KNN search of width ``L = min(K + (n-1) P, N)`` for ``n`` layers."""
    X, D = _distance_matrix(features, method)
    K = check_positive_int(K, "K")
    P = check_positive_int(P, "P", minimum=0)
    n = check_positive_int(n, "n")
    N = X.shape[0]
    limit = N if include_self else N - 1
    if K > limit:
        raise ValueError(f"K={K} exceeds the number of available neighbors ({limit})")
    L = min(K + (n - 1) * P, limit)
    CALL_COUNTS["build_pool"] += 1
    idx, Dm = _sorted_topk(D, L, include_self)
    dist = np.take_along_axis(Dm, idx, axis=1)
    if include_self:
        dist[:, 0] = 0.0
    return NeighborPool(idx, dist, K, P, n)


def sample_neighbors(pool, layer, seed=0, *, keep_self=False):
    """Neighbors for shareholder layer ``layer`` (1-based).

    Layer 1 takes the first ``K`` pool columns. Deeper layers draw ``K``
    distinct columns uniformly from the first ``K + (layer-1) P`` columns,
    keyed by ``(seed, layer, point)``, and return them in distance order.
    With ``keep_self`` the first column is always retained.
    """
    layer = check_positive_int(layer, "layer")
    if layer > pool.n:
        raise ValueError(f"layer {layer} out of range 1..{pool.n}")
    K = pool.K
    W = pool.window(layer)
    if layer == 1 or W == K:
        return NeighborIndex(pool.pool[:, :K].copy())
    N = pool.pool.shape[0]
    points = np.arange(N, dtype=np.int64)[:, None]
    cols = np.arange(W, dtype=np.int64)[None, :]
    keys = counter_uniform(seed, layer, points, cols)
    if keep_self:
        keys[:, 0] = -1.0
    # the K smallest of W iid keys form a uniform K-subset of the window
    chosen = np.argpartition(keys, K - 1, axis=1)[:, :K]
    chosen.sort(axis=1)
    return NeighborIndex(np.take_along_axis(pool.pool, chosen, axis=1))
