"""Wall-clock benchmark of baseline vs accelerated forward passes."""

import statistics
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .cost import network_cost
from .network import NetworkSpec, forward, init_params, sample_shape

COLUMNS = [
    "spec", "N", "K", "mode", "median_ms", "mults", "knn_mults", "modeled_bytes",
    "speedup", "mult_ratio", "bytes_ratio",
    "doubling_ms_ratio", "doubling_mults_ratio", "doubling_knn_ratio",
]


@dataclass
class BenchResult:
    spec: str
    N: int
    K: int
    mode: str
    median_ms: float
    mults: int
    knn_mults: int
    modeled_bytes: int
    samples_ms: list = None

    def row(self):
        return {c: getattr(self, c) for c in COLUMNS[:8]}


def median_time(fn, repetitions=10, warmup=2):
    """Median seconds of ``repetitions`` calls after ``warmup`` untimed calls."""
    if repetitions < 3:
        raise ValueError("at least 3 timed repetitions are required")
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples), samples


def scaled_spec(spec, N, ref_N):
    """Copy of ``spec`` with K and P scaled by ``N / ref_N`` (at least K=1)."""
    data = spec.to_dict()
    for block in data["blocks"]:
        block["K"] = max(1, min(N, round(block["K"] * N / ref_N)))
        block["P"] = round(block["P"] * N / ref_N)
    data["points"] = N
    return NetworkSpec.from_dict(data)


def bench_point(spec, N, *, name="spec", repetitions=10, warmup=2, seed=0, modes=("baseline", "accelerated")):
    rng = np.random.default_rng(seed)
    cloud = sample_shape("sphere", N, rng) + rng.normal(0, 0.01, (N, 3))
    params = init_params(spec, seed)
    out = []
    for mode in modes:
        s = spec.with_mode(mode)
        med, samples = median_time(lambda: forward(s, params, cloud, seed=seed), repetitions, warmup)
        report = network_cost(s, N)
        out.append(BenchResult(name, N, s.blocks[0].K, mode, med * 1e3, report.total_mults,
                               report.stage_mults("knn"), report.peak_activation_bytes,
                               [x * 1e3 for x in samples]))
    return out


def run_bench(specs, point_counts, *, repetitions=10, warmup=2, seed=0, k_scaling="proportional",
              knn_method="fast", parallel=False):
    """Benchmark every spec at every point count.

    Args:
        specs: mapping name -> NetworkSpec.
        point_counts: N values, ascending order recommended.
        k_scaling: ``"proportional"`` scales K and P with N relative to
            ``spec.points``; ``"fixed"`` keeps them.
        knn_method: distance kernel used by both modes.
        parallel: allow multi-threaded BLAS; timing is single-threaded otherwise.

    Returns:
        list of dict rows with the :data:`COLUMNS` keys.
    """
    point_counts = list(point_counts)
    if not point_counts:
        raise ValueError("at least one point count is required")
    results = []
    with threadpool_limits(None if parallel else 1):
        for name, spec in specs.items():
            ref = spec.points or max(point_counts)
            for N in point_counts:
                s = scaled_spec(spec, N, ref) if k_scaling == "proportional" else spec
                s = NetworkSpec.from_dict({**s.to_dict(), "knn_method": knn_method})
                results.extend(bench_point(s, N, name=name, repetitions=repetitions, warmup=warmup, seed=seed))
    return _derive_columns(results)


def _derive_columns(results):
    rows = [r.row() for r in results]
    by_key = {(r["spec"], r["mode"], r["N"]): r for r in rows}
    for r in rows:
        base = by_key[(r["spec"], "baseline", r["N"])]
        r["speedup"] = base["median_ms"] / r["median_ms"]
        r["mult_ratio"] = r["mults"] / base["mults"]
        r["bytes_ratio"] = r["modeled_bytes"] / base["modeled_bytes"]
        half = by_key.get((r["spec"], r["mode"], r["N"] // 2)) if r["N"] % 2 == 0 else None
        if half is not None:
            r["doubling_ms_ratio"] = r["median_ms"] / half["median_ms"]
            r["doubling_mults_ratio"] = r["mults"] / half["mults"]
            r["doubling_knn_ratio"] = r["knn_mults"] / half["knn_mults"]
        else:
            r["doubling_ms_ratio"] = r["doubling_mults_ratio"] = r["doubling_knn_ratio"] = None
    return rows
