"""Point containers and the two neighborhood metrics.

Both metrics pair the k-th neighbor of one point with the k-th neighbor of the
other, so the neighborhoods must be distance-sorted (see :mod:`pointgcn.knn`).
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_features

# Row block size for the direct-difference distance kernel, in scalars.
_CHUNK_SCALARS = 1 << 22


@dataclass(frozen=True)
class PointCloud:
    """An N x d matrix of finite coordinates or latent features."""

    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        pts = check_features(self.points, name="points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def N(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    def __len__(self):
        return self.N


FeatureMatrix = PointCloud


@dataclass(frozen=True)
class SortedNeighborhood:
    """Neighbor indices of ``center``, ordered by ascending distance."""

    center: int
    members: tuple

    def __post_init__(self):
        members = tuple(int(m) for m in self.members)
        if not members:
            raise ValueError("a neighborhood needs at least one member")
        if len(set(members)) != len(members):
            raise ValueError("neighborhood members must be distinct")
        object.__setattr__(self, "members", members)

    @property
    def K(self):
        return len(self.members)


def _as_points(features):
    if isinstance(features, PointCloud):
        return features.points
    return check_features(features)


def pairwise_sq_distances(pc):
    """Squared Euclidean distances between all pairs of rows.

    Uses explicit ``(x - y) . (x - y)`` per pair, processed in row blocks so
    memory stays bounded for wide features. The result is exactly symmetric
    with a zero diagonal.
    """
    X = _as_points(pc)
    n, d = X.shape
    out = np.empty((n, n), dtype=np.float64)
    step = max(1, _CHUNK_SCALARS // max(1, n * d))
    for start in range(0, n, step):
        stop = min(n, start + step)
        diff = X[start:stop, None, :] - X[None, :, :]
        out[start:stop] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def pairwise_sq_distances_fast(X):
    """Expanded-form distances ``|x|^2 + |y|^2 - 2 x.y``, clamped at zero.

    Only for benchmarking: rounding can reorder near-tied neighbors relative
    to :func:`pairwise_sq_distances`.
    """
    X = np.asarray(X, dtype=np.float64)
    sq = np.einsum("ij,ij->i", X, X)
    D = X @ X.T
    D *= -2.0
    D += sq[:, None]
    D += sq[None, :]
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _paired_members(features, ni, nj):
    X = _as_points(features)
    if ni.K != nj.K:
        raise ValueError(f"neighborhood sizes differ: {ni.K} != {nj.K}")
    for m in ni.members + nj.members:
        if not 0 <= m < X.shape[0]:
            raise IndexError(f"neighbor index {m} out of range")
    return X[list(ni.members)], X[list(nj.members)]


def neighborhood_distance(features, ni, nj):
    """Sum over k of the squared distance between the k-th neighbors."""
    A, B = _paired_members(features, ni, nj)
    diff = A - B
    return float(np.sum(diff * diff))


def neighborhood_centroid_distance(features, ni, nj):
    """Squared distance between the centroids of two neighborhoods."""
    A, B = _paired_members(features, ni, nj)
    diff = A.mean(axis=0) - B.mean(axis=0)
    return float(diff @ diff)
