"""Analytic multiply counts and activation-memory model.

Only multiplications are counted; additions, comparisons and indexing are
free. "FLOPs" in reports means this multiply count.
"""

from dataclasses import asdict, dataclass, field
from fractions import Fraction

from ._validation import check_positive_int

MODES = ("baseline", "shuffled")


def knn_cost(N, d):
    """Multiplies in the pairwise inner products ``X X^T``: ``d N^2``."""
    N = check_positive_int(N, "N")
    d = check_positive_int(d, "d")
    return d * N * N


def conv_cost(N, d, K, M, mode="baseline"):
    """Multiplies in one convolution over ``d``-wide inputs.

    ``baseline`` applies the MLP to every gathered neighbor (``d M K N``);
    ``shuffled`` applies two MLPs to the points themselves (``2 d M N``).
    """
    N, d, K, M = (check_positive_int(v, name) for v, name in ((N, "N"), (d, "d"), (K, "K"), (M, "M")))
    if mode == "baseline":
        return d * M * K * N
    if mode == "shuffled":
        return 2 * d * M * N
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def gamma(N, K, M):
    """KNN-to-convolution cost ratio ``N / (K M)``, as an exact fraction."""
    return Fraction(check_positive_int(N, "N"), check_positive_int(K, "K") * check_positive_int(M, "M"))


# -- reference counting interpreter ---------------------------------------


class MulCounter:
    """Scalar multiplier that counts its calls."""

    def __init__(self):
        self.count = 0

    def mul(self, a, b):
        self.count += 1
        return a * b


def counted_knn(X, counter):
    """Scalar-loop Gram matrix ``X X^T`` (the multiply-bearing part of KNN)."""
    n = len(X)
    G = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = 0.0
            for a, b in zip(X[i], X[j]):
                acc += counter.mul(a, b)
            G[i][j] = acc
    return G


def counted_conv(X, nbrs, W, counter, mode="baseline", W2=None):
    """Scalar-loop convolution mirroring the multiply structure of each mode.

    ``baseline`` multiplies every gathered neighbor row by ``W`` (d x M) and
    returns the (N, K, M) responses. ``shuffled`` multiplies every point by
    ``W`` and ``W2`` once, then only gathers, takes maxima and adds:
    ``out[i] = max_k (X W)[nbr(i, k)] + (X W2)[i]``.
    """
    n, d, M = len(X), len(W), len(W[0])

    def row_times(x, A):
        return [sum(counter.mul(x[c], A[c][m]) for c in range(d)) for m in range(M)]

    if mode == "baseline":
        return [[row_times(X[k], W) for k in nbrs[i]] for i in range(n)]
    if mode == "shuffled":
        W2 = W if W2 is None else W2
        U = [row_times(X[i], W) for i in range(n)]
        V = [row_times(X[i], W2) for i in range(n)]
        return [[max(U[k][m] for k in nbrs[i]) + V[i][m] for m in range(M)] for i in range(n)]
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def counted_edgeconv(X, nbrs, theta, phi, counter):
    """Scalar-loop gather-then-MLP edge convolution (max aggregation, no bias).

    Each edge carries ``[x_k - x_i, x_i]`` (2d wide), so this costs
    ``2d M K N`` multiplies.
    """
    W = [list(r) for r in theta] + [list(r) for r in phi]
    M = len(W[0])
    out = []
    for i, row in enumerate(nbrs):
        edges = [[a - b for a, b in zip(X[k], X[i])] + list(X[i]) for k in row]
        resp = [[sum(counter.mul(e[c], W[c][m]) for c in range(len(W))) for m in range(M)] for e in edges]
        out.append([max(r[m] for r in resp) for m in range(M)])
    return out


# -- network-level report -------------------------------------------------


@dataclass
class StageCost:
    name: str
    mults: int
    activation_scalars: int


@dataclass
class CostReport:
    """Per-stage multiply counts and modeled activation footprint."""

    N: int
    mode: str
    K: list
    in_widths: list
    out_widths: list
    stages: list = field(default_factory=list)
    bytes_per_scalar: int = 8

    @property
    def total_mults(self):
        return sum(s.mults for s in self.stages)

    def stage_mults(self, kind):
        return sum(s.mults for s in self.stages if s.name.split(":")[0] == kind)

    @property
    def peak_activation_bytes(self):
        return max((s.activation_scalars for s in self.stages), default=0) * self.bytes_per_scalar

    def to_dict(self):
        out = asdict(self)
        out["totals"] = {
            "mults": self.total_mults,
            "knn_mults": self.stage_mults("knn"),
            "conv_mults": self.stage_mults("conv"),
            "pointwise_mults": self.stage_mults("pointwise"),
            "peak_activation_bytes": self.peak_activation_bytes,
        }
        return out

    def table(self):
        lines = [f"{'stage':<22}{'mults':>16}{'act. bytes':>16}"]
        for s in self.stages:
            lines.append(f"{s.name:<22}{s.mults:>16,}{s.activation_scalars * self.bytes_per_scalar:>16,}")
        lines.append(f"{'total':<22}{self.total_mults:>16,}{self.peak_activation_bytes:>16,} (peak)")
        return "\n".join(lines)


def network_cost(spec, N=None, bytes_per_scalar=8):
    """Stage-by-stage cost of one forward pass of ``spec`` on ``N`` points.

    Baseline layers pay one KNN each and the gathered ``2d``-wide edge MLP.
    Accelerated blocks pay one pool search, and their layers the shuffled
    count. Activation scalars: KNN ``N^2 + N L``; gathered conv ``N K 2d``;
    shuffled conv ``max(N M, N d) + N K``.
    """
    N = check_positive_int(N if N is not None else spec.points, "N")
    spec.validate()
    shared = spec.mode in ("accelerated", "accel-s1")
    shuffled = spec.mode in ("accelerated", "accel-s2")
    report = CostReport(N=N, mode=spec.mode, K=[], in_widths=[], out_widths=[],
                        bytes_per_scalar=bytes_per_scalar)
    d = spec.in_dim
    layer = 0
    for b, block in enumerate(spec.blocks):
        K = min(block.K, N)
        if shared:
            L = min(block.K + (block.n - 1) * block.P, N)
            knn_d = d if block.dynamic else spec.in_dim
            report.stages.append(StageCost(f"knn:block{b}", knn_cost(N, knn_d), N * N + N * L))
        for M in block.widths:
            layer += 1
            if not shared:
                knn_d = d if block.dynamic else spec.in_dim
                report.stages.append(StageCost(f"knn:layer{layer}", knn_cost(N, knn_d), N * N + N * K))
            if shuffled:
                report.stages.append(
                    StageCost(f"conv:layer{layer}", conv_cost(N, d, K, M, "shuffled"), max(N * M, N * d) + N * K)
                )
            else:
                report.stages.append(
                    StageCost(f"conv:layer{layer}", conv_cost(N, 2 * d, K, M, "baseline"), N * K * 2 * d)
                )
            report.K.append(K)
            report.in_widths.append(d)
            report.out_widths.append(M)
            d = M
    if spec.head is None:
        return report
    widths = [d, *spec.head.hidden, spec.head.classes]
    for h, (a, c) in enumerate(zip(widths[:-1], widths[1:])):
        report.stages.append(StageCost(f"pointwise:head{h}", a * c, c))
    return report
