"""Executable checks of the propagation bounds and the shuffle equivalence.

For the sum convolution ``x'_i = sum_k theta^T x_i^k`` with iid
``N(0, sigma^2)`` weights::

    sigma^2 K^2 D_NC  <=  E ||x'_i - x'_j||^2  <=  sigma^2 d K M D_N

``check_theorem1`` estimates the middle term by Monte Carlo and accepts if
the estimate lies within three standard errors of the interval.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from ._validation import check_features, check_positive_int
from .geometry import SortedNeighborhood, neighborhood_centroid_distance, neighborhood_distance
from .graphconv import ConvParams, edgeconv_baseline, edgeconv_shuffled, sum_conv
from .knn import knn_search
from .rng import derive_seed


@dataclass
class BoundReport:
    i: int
    j: int
    K: int
    M: int
    sigma: float
    samples: int
    lower: float
    upper: float
    mean: float
    stderr: float
    passed: bool

    def to_dict(self):
        return asdict(self)


def bound_terms(features, i, j, K, M, sigma):
    """``(lower, upper)`` for points ``i``, ``j`` with K-nearest neighborhoods."""
    X = check_features(features)
    nbrs = knn_search(X, K).indices
    ni = SortedNeighborhood(i, nbrs[i])
    nj = SortedNeighborhood(j, nbrs[j])
    d = X.shape[1]
    lower = sigma**2 * K**2 * neighborhood_centroid_distance(X, ni, nj)
    upper = sigma**2 * d * K * M * neighborhood_distance(X, ni, nj)
    return lower, upper, nbrs


def check_theorem1(features, i, j, K, M, sigma=0.1, samples=20000, seed=0, chunk=2000):
    """Monte-Carlo check of the expected output distance against both bounds.

    Each draw samples a fresh ``theta`` (d x M) and applies :func:`sum_conv`
    to the two neighborhoods. Draws are consumed in order from one Philox
    stream keyed by ``seed``, so the chunk size does not change results.
    """
    X = check_features(features)
    N, d = X.shape
    if not (0 <= i < N and 0 <= j < N):
        raise IndexError(f"point indices ({i}, {j}) out of range for N={N}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    samples = check_positive_int(samples, "samples", minimum=1000)
    M = check_positive_int(M, "M")
    lower, upper, nbrs = bound_terms(X, i, j, K, M, sigma)
    if lower > upper * (1 + 1e-12) + 1e-300:
        raise AssertionError(f"bound ordering violated: lower {lower} > upper {upper}")

    sub = X[nbrs[[i, j]].ravel()]
    # sub-cloud of the 2K neighbor points; rows 0 and K hold the two neighborhoods
    local = np.repeat(np.arange(2 * K).reshape(2, K), K, axis=0)
    sq = np.empty(samples)
    bitgen = np.random.Philox(key=derive_seed(seed))
    rng = np.random.Generator(bitgen)
    for start in range(0, samples, chunk):
        stop = min(samples, start + chunk)
        thetas = rng.normal(0.0, sigma, size=(stop - start, d, M))
        # one sum_conv over all draws in the chunk: columns are (draw, channel)
        wide = thetas.transpose(1, 0, 2).reshape(d, -1)
        out = sum_conv(sub, local, wide)[[0, K]].reshape(2, stop - start, M)
        diff = out[0] - out[1]
        sq[start:stop] = np.einsum("sm,sm->s", diff, diff)
    mean = float(np.mean(sq))
    stderr = float(np.std(sq, ddof=1) / np.sqrt(samples))
    passed = lower - 3 * stderr <= mean <= upper + 3 * stderr
    return BoundReport(i, j, K, M, sigma, samples, lower, upper, mean, stderr, bool(passed))


def relative_difference(a, b):
    """``max|a - b| / max(max|a|, max|b|)``; zero when both are zero."""
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(a - b)) / scale)


@dataclass
class EquivalenceReport:
    trials: int
    max_rel_diff: dict
    tolerance: float
    failures: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.failures

    def to_dict(self):
        return {"trials": self.trials, "max_rel_diff": self.max_rel_diff, "tolerance": self.tolerance,
                "failures": self.failures, "passed": self.passed}


def random_instance(rng, max_n=256, max_d=16, max_m=32, max_k=20, psi_zero=False):
    N = int(rng.integers(1, max_n + 1))
    d = int(rng.integers(1, max_d + 1))
    M = int(rng.integers(1, max_m + 1))
    K = int(rng.integers(1, min(max_k, N) + 1))
    X = rng.normal(size=(N, d)) * rng.uniform(0.1, 10.0)
    nbrs = knn_search(X, K).indices
    theta = rng.normal(size=(d, M))
    phi = theta.copy() if psi_zero else rng.normal(size=(d, M))
    params = ConvParams(theta, phi, rng.normal(size=M))
    return X, nbrs, params


def check_theorem2(trials=100, seed=0, max_n=256, max_d=16, max_m=32, max_k=20, tolerance=1e-9):
    """Compare gather-then-MLP and MLP-then-gather on random instances.

    Every tenth trial uses ``phi == theta`` (zero ``psi``). Both max and sum
    aggregation are checked on each instance.
    """
    trials = check_positive_int(trials, "trials")
    rng = np.random.default_rng(derive_seed(seed))
    worst = {"max": 0.0, "sum": 0.0}
    failures = []
    for t in range(trials):
        X, nbrs, params = random_instance(rng, max_n, max_d, max_m, max_k, psi_zero=(t % 10 == 9))
        for agg in ("max", "sum"):
            diff = relative_difference(edgeconv_baseline(X, nbrs, params, agg),
                                       edgeconv_shuffled(X, nbrs, params, agg))
            worst[agg] = max(worst[agg], diff)
            if not diff < tolerance:
                failures.append({"trial": t, "agg": agg, "rel_diff": diff, "shape": list(X.shape)})
    return EquivalenceReport(trials, worst, tolerance, failures)


@dataclass
class WeightStats:
    count: int
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    hist_counts: list
    hist_edges: list

    def to_dict(self):
        return asdict(self)


def weight_distribution_stats(params, bins=30):
    """Moments and histogram of all weights in ``params``.

    ``params`` may be a :class:`ConvParams`, an array, or a dict of arrays
    (bias vectors are skipped for dicts). Descriptive only; constant inputs
    report zero skewness and kurtosis.
    """
    if isinstance(params, ConvParams):
        values = np.concatenate([params.theta.ravel(), params.phi.ravel()])
    elif isinstance(params, dict):
        values = np.concatenate([np.ravel(v) for k, v in sorted(params.items()) if not k.endswith((".bias", ".b"))])
    else:
        values = np.ravel(np.asarray(params, dtype=np.float64))
    if values.size == 0:
        raise ValueError("no parameters to summarize")
    mean = float(values.mean())
    var = float(values.var())
    if var > 0:
        skew = float(stats.skew(values))
        kurt = float(stats.kurtosis(values))
    else:
        skew = kurt = 0.0
    counts, edges = np.histogram(values, bins=bins)
    return WeightStats(int(values.size), mean, var, skew, kurt, counts.tolist(), edges.tolist())


def feature_distance_map(spec, params, pc, layer, anchor, seed=None):
    """Squared distance from the anchor's layer-``layer`` feature to every point's.

    Layer 0 is the input cloud; layer ``l`` is the output of the l-th
    convolution. Returns an (N,) array.
    """
    from .network import forward

    X = check_features(getattr(pc, "points", pc))
    if not 0 <= layer <= spec.n_layers:
        raise ValueError(f"layer must be in 0..{spec.n_layers}, got {layer}")
    if not 0 <= anchor < X.shape[0]:
        raise IndexError(f"anchor {anchor} out of range")
    _, feats = forward(spec, params, X, seed=seed, return_features=True)
    F = feats[layer]
    diff = F - F[anchor]
    return np.einsum("ij,ij->i", diff, diff)
