"""Acceptance gate: each test checks one criterion at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v -s``; the PASS/FAIL
lines are also collected into the terminal summary.
"""

import json
import time
from fractions import Fraction

import numpy as np
import pytest

from oracles import knn_full_sort
from pointgcn import knn
from pointgcn.autodiff import finite_diff_check
from pointgcn.cli import main
from pointgcn.cost import MulCounter, conv_cost, counted_conv, counted_knn, gamma, knn_cost, network_cost
from pointgcn.estimator import default_spec
from pointgcn.io import read_table_csv
from pointgcn.network import (
    BlockSpec,
    HeadSpec,
    NetworkSpec,
    TrainConfig,
    dgcnn_like_spec,
    forward,
    init_params,
    network_expression,
    train_synthetic,
)

pytestmark = pytest.mark.slow


def run_cli(args, capsys):
    code = main(args)
    return code, capsys.readouterr().out


@pytest.fixture(scope="module")
def bench_rows(tmp_path_factory):
    """One single-threaded bench over 512/1024/2048 points, shared by two criteria."""
    out = tmp_path_factory.mktemp("bench") / "bench.csv"
    code = main(["bench", "--points", "512", "1024", "2048", "--repetitions", "10", "--warmup", "2",
                 "--out", str(out)])
    assert code == 0
    return read_table_csv(out)


def test_theorem2_exactness(capsys, criterion):
    t0 = time.perf_counter()
    code, out = run_cli(["verify-thm2", "--trials", "100", "--no-timestamp"], capsys)
    elapsed = time.perf_counter() - t0
    report = json.loads(out)
    worst = report["max_rel_diff"]
    passed = code == 0 and worst["max"] < 1e-9 and worst["sum"] < 1e-9 and report["trials"] == 100
    criterion(1, passed and elapsed < 10,
              f"max-agg {worst['max']:.2e}, sum-agg {worst['sum']:.2e} (< 1e-9), {elapsed:.1f}s")


def test_theorem1_bounds(capsys, criterion):
    t0 = time.perf_counter()
    code, out = run_cli(["verify-thm1", "--pairs", "100", "--samples", "20000", "--sigma", "0.1",
                         "--points", "128", "--dim", "3", "--k", "10", "--m", "16", "--no-timestamp"], capsys)
    elapsed = time.perf_counter() - t0
    report = json.loads(out)
    collapse = report["collapse_case"]
    passed = (code == 0 and report["pairs"] == 100 and report["passes"] >= 99
              and collapse["passed"] and collapse["lower"] == pytest.approx(collapse["upper"], rel=1e-12))
    criterion(2, passed and elapsed < 60,
              f"{report['passes']}/100 pairs contained, collapse lower={collapse['lower']:.6g} "
              f"upper={collapse['upper']:.6g}, {elapsed:.1f}s")


def test_cost_identities(criterion):
    rng = np.random.default_rng(2024)
    ok_gamma = ok_ratio = True
    for _ in range(1000):
        N, d, K, M = (int(v) for v in rng.integers(1, [100_000, 512, 128, 1024], endpoint=True))
        ok_gamma &= gamma(N, K, M) == Fraction(knn_cost(N, d), conv_cost(N, d, K, M, "baseline"))
        ok_ratio &= Fraction(conv_cost(N, d, K, M, "shuffled"), conv_cost(N, d, K, M, "baseline")) == Fraction(2, K)
    ok_count = True
    for _ in range(40):
        N, d, M = (int(v) for v in rng.integers(1, [64, 6, 6], endpoint=True))
        K = int(rng.integers(1, N + 1))
        X = rng.normal(size=(N, d))
        nbrs = knn_full_sort(X.tolist(), K)
        W, W2 = rng.normal(size=(d, M)), rng.normal(size=(d, M))
        for mode, extra in (("baseline", {}), ("shuffled", {"W2": W2})):
            c = MulCounter()
            counted_conv(X.tolist(), nbrs, W.tolist(), c, mode=mode, **{k: v.tolist() for k, v in extra.items()})
            ok_count &= c.count == conv_cost(N, d, K, M, mode)
        c = MulCounter()
        counted_knn(X.tolist(), c)
        ok_count &= c.count == knn_cost(N, d)
    criterion(3, ok_gamma and ok_ratio and ok_count,
              f"gamma identity {ok_gamma}, 2/K ratio {ok_ratio}, loop-oracle counts {ok_count}")


def test_dgcnn_like_ratios(bench_rows, criterion):
    base, accel = (network_cost(dgcnn_like_spec(mode, K=40), 2048) for mode in ("baseline", "accelerated"))
    mult_ratio = accel.total_mults / base.total_mults
    mem_ratio = accel.peak_activation_bytes / base.peak_activation_bytes
    row = next(r for r in bench_rows if r["N"] == 2048 and r["mode"] == "accelerated")
    assert row["K"] == 40
    passed = mult_ratio <= 0.30 and mem_ratio <= 0.50 and row["speedup"] >= 1.5
    criterion(4, passed, f"mult ratio {mult_ratio:.3f} (<= 0.30), memory ratio {mem_ratio:.3f} (<= 0.50), "
                         f"single-thread speedup {row['speedup']:.2f}x (>= 1.5x)")


def test_quadratic_growth(bench_rows, criterion):
    rows = sorted((r for r in bench_rows if r["mode"] == "baseline"), key=lambda r: r["N"])
    assert [r["N"] for r in rows] == [512, 1024, 2048]
    knn_ratios = [Fraction(b["knn_mults"], a["knn_mults"]) for a, b in zip(rows, rows[1:])]
    ms_ratios = [r["doubling_ms_ratio"] for r in rows[1:]]
    passed = all(k == 4 for k in knn_ratios) and all(m >= 3 for m in ms_ratios)
    criterion(5, passed, f"KNN mult growth {[str(k) for k in knn_ratios]} (== 4), "
                         f"wall-clock growth {[round(m, 2) for m in ms_ratios]} (>= 3)")


def test_training_parity(criterion):
    cfg = TrainConfig(classes=3, points=256, train_size=400, test_size=100, epochs=4, runs=5, seed=0)
    t0 = time.perf_counter()
    means = {mode: train_synthetic(default_spec(mode), cfg)["mean_test_accuracy"]
             for mode in ("baseline", "accelerated")}
    elapsed = time.perf_counter() - t0
    gap = abs(means["baseline"] - means["accelerated"])
    passed = min(means.values()) >= 0.90 and gap <= 0.05 and elapsed < 600
    criterion(6, passed, f"baseline {means['baseline']:.3f}, accelerated {means['accelerated']:.3f}, "
                         f"gap {gap:.3f} (<= 0.05), {elapsed:.0f}s")


def test_gradient_correctness(criterion):
    rng = np.random.default_rng(77)
    worst, checked, excluded = 0.0, 0, 0
    modes = ("baseline", "accelerated", "accel-s1", "accel-s2")
    for t in range(50):
        n = int(rng.integers(1, 3))
        spec = NetworkSpec(
            blocks=[BlockSpec(n=n, K=int(rng.integers(2, 5)), P=int(rng.integers(0, 3)),
                              widths=[int(w) for w in rng.integers(2, 5, n)], dynamic=bool(rng.integers(0, 2)))],
            head=HeadSpec(hidden=[int(rng.integers(2, 5))], classes=int(rng.integers(2, 4))),
            mode=modes[t % 4],
        )
        params = init_params(spec, t)
        B = 2
        X = rng.normal(size=(B, int(rng.integers(6, 12)), 3))
        y = rng.integers(0, spec.head.classes, B)
        report = finite_diff_check(network_expression(spec), params, (X, y, [t, t + 1]),
                                   epsilon=1e-5, tolerance=1e-4)
        worst = max(worst, report.max_rel_error)
        checked += report.checked
        excluded += report.excluded
    criterion(7, worst < 1e-4 and checked > 0,
              f"max relative error {worst:.2e} (< 1e-4) over {checked} entries, {excluded} tie-screened")


def test_knn_oracle(criterion):
    rng = np.random.default_rng(8)
    mismatches = 0
    for _ in range(200):
        N, d = int(rng.integers(2, 60)), int(rng.integers(1, 5))
        X = rng.integers(-3, 4, size=(N, d)).astype(float) if rng.random() < 0.5 else rng.normal(size=(N, d))
        dup = rng.integers(0, N, size=int(rng.integers(1, N + 1)))
        X[rng.integers(0, N, size=len(dup))] = X[dup]
        K = int(rng.integers(1, N + 1))
        got = knn.knn_search(X, K).indices
        mismatches += not np.array_equal(got, np.array(knn_full_sort(X.tolist(), K)))
    criterion(8, mismatches == 0, f"{200 - mismatches}/200 clouds match the full-sort oracle exactly")


def test_call_counts(criterion):
    spec = NetworkSpec(
        blocks=[BlockSpec(n=3, K=6, P=2, widths=[8, 8, 8]), BlockSpec(n=2, K=6, P=3, widths=[8, 8])],
        head=HeadSpec(hidden=[8], classes=3),
    )
    params = init_params(spec)
    cloud = np.random.default_rng(1).normal(size=(50, 3))
    counts = {}
    for mode in ("baseline", "accelerated"):
        knn.reset_call_counts()
        forward(spec.with_mode(mode), params, cloud)
        counts[mode] = dict(knn.CALL_COUNTS)
    passed = (counts["accelerated"] == {"knn_search": 0, "build_pool": 2}
              and counts["baseline"] == {"knn_search": 5, "build_pool": 0})
    criterion(9, passed, f"accelerated {counts['accelerated']} (one pool per block), "
                         f"baseline {counts['baseline']} (n searches per block)")
