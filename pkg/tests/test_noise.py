"""Seeded increment streams: determinism, statistics, bridge refinement,
stream independence, and scheduler independence."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from snls.noise import (
    SeedSpec,
    brownian_bridge_refine,
    coarsen,
    increments,
    path_increments,
)

DT = 1e-3


def test_increments_deterministic():
    spec = SeedSpec(42, 7)
    a = increments(spec, 5, DT, 4, 4)
    b = increments(spec, 5, DT, 4, 4)
    assert np.array_equal(a.dW1, b.dW1)
    assert np.array_equal(a.dW2, b.dW2)


def test_increments_match_path_block():
    spec = SeedSpec(99, 3)
    w1, w2 = path_increments(spec, 20, DT, 4, 2)
    for step in (0, 7, 19):
        inc = increments(spec, step, DT, 4, 2)
        assert np.array_equal(inc.dW1, w1[step])
        assert np.array_equal(inc.dW2, w2[step])


def test_distinct_paths_and_seeds_differ():
    w_a = path_increments(SeedSpec(1, 0), 10, DT, 4, 4)[0]
    w_b = path_increments(SeedSpec(1, 1), 10, DT, 4, 4)[0]
    w_c = path_increments(SeedSpec(2, 0), 10, DT, 4, 4)[0]
    assert not np.array_equal(w_a, w_b)
    assert not np.array_equal(w_a, w_c)


def test_mean_clt_bound():
    n = 10**5
    draws = np.array([increments(SeedSpec(7, p), 0, DT, 1, 0).dW1[0] for p in range(200)])
    # cheaper equivalent with the block API: one path, many steps
    w1, _ = path_increments(SeedSpec(7, 0), n, DT, 1, 0)
    mean = w1[:, 0].mean()
    assert abs(mean) <= 4.0 * np.sqrt(DT / n)
    assert draws.shape == (200,)


def test_variance_chi_square():
    n = 10**5
    _, w2 = path_increments(SeedSpec(11, 0), n, DT, 0, 1)
    var = w2[:, 0].var()
    assert abs(var - DT) <= 0.05 * DT


def test_stream_cross_correlation():
    n = 10**5
    w1, w2 = path_increments(SeedSpec(13, 0), n, DT, 1, 1)
    a = w1[:, 0] / np.sqrt(DT)
    b = w2[:, 0] / np.sqrt(DT)
    corr = np.mean(a * b)
    assert abs(corr) <= 4.0 / np.sqrt(n)


def test_bridge_pairwise_sums_exact():
    spec = SeedSpec(5, 2)
    block, _ = path_increments(spec, 50, DT, 3, 0)
    fine = brownian_bridge_refine(block, DT, spec, channel=1, level=0)
    assert fine.shape == (100, 3)
    assert np.max(np.abs(coarsen(fine) - block)) < 1e-15


def test_bridge_double_refine_then_coarsen():
    spec = SeedSpec(5, 2)
    block, _ = path_increments(spec, 16, DT, 2, 0)
    f1 = brownian_bridge_refine(block, DT, spec, channel=1, level=0)
    f2 = brownian_bridge_refine(f1, DT / 2, spec, channel=1, level=1)
    assert np.max(np.abs(coarsen(coarsen(f2)) - block)) < 1e-14


def test_bridge_fine_variance():
    spec = SeedSpec(21, 0)
    n = 20000
    block, _ = path_increments(spec, n, DT, 1, 0)
    fine = brownian_bridge_refine(block, DT, spec, channel=1, level=0)
    var = fine[:, 0].var()
    assert abs(var - DT / 2) <= 0.05 * (DT / 2)


def test_bridge_deterministic():
    spec = SeedSpec(5, 2)
    block, _ = path_increments(spec, 8, DT, 1, 0)
    a = brownian_bridge_refine(block, DT, spec, channel=1, level=0)
    b = brownian_bridge_refine(block, DT, spec, channel=1, level=0)
    assert np.array_equal(a, b)


def test_scheduler_independence():
    # generating path blocks under different thread layouts yields identical
    # per-path streams
    def gen(path):
        return path_increments(SeedSpec(77, path), 32, DT, 4, 4)

    serial = [gen(p) for p in range(16)]
    with ThreadPoolExecutor(max_workers=4) as ex:
        threaded = list(ex.map(gen, range(16)))
    for (a1, a2), (b1, b2) in zip(serial, threaded):
        assert np.array_equal(a1, b1)
        assert np.array_equal(a2, b2)


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        path_increments(SeedSpec(0, 0), 5, -1.0, 1, 1)
    with pytest.raises(ValueError):
        increments(SeedSpec(0, 0), -1, DT, 1, 1)
