"""Transforms, spatial norms, and the mixed space-time norm."""

import numpy as np
import pytest

from snls.grid import ComplexField, Grid, GridError, from_spectrum, inner, norm_l2, norm_lr, to_spectrum
from snls.trajectory import Trajectory, mixed_norm


@pytest.fixture
def grid():
    return Grid(d=1, n_per_dim=64, half_width=np.pi)


def random_field(grid, seed=0):
    rng = np.random.default_rng(seed)
    return ComplexField(grid, rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))


def test_grid_validation():
    with pytest.raises(GridError):
        Grid(d=4)
    with pytest.raises(GridError):
        Grid(n_per_dim=100)  # not a power of two
    with pytest.raises(GridError):
        Grid(n_per_dim=4)
    with pytest.raises(GridError):
        Grid(half_width=-1.0)


def test_wavenumbers_mode_zero_once(grid):
    assert np.sum(grid.k1d == 0.0) == 1
    # standard discrete spectrum for period 2L: integer multiples of pi/L
    assert np.allclose(np.sort(grid.k1d), np.arange(-32, 32) * np.pi / grid.half_width)


def test_field_size_mismatch(grid):
    with pytest.raises(GridError):
        ComplexField(grid, np.zeros(17))


def test_transform_zero(grid):
    z = grid.zeros()
    assert np.all(to_spectrum(z).data == 0.0)


def test_transform_roundtrip(grid):
    f = random_field(grid)
    back = from_spectrum(to_spectrum(f))
    rel = norm_l2(ComplexField(grid, back.data - f.data)) / norm_l2(f)
    assert rel < 1e-12


@pytest.mark.parametrize("n", [8, 32, 256])
def test_parseval_all_sizes(n):
    grid = Grid(d=1, n_per_dim=n, half_width=2.0)
    f = random_field(grid, seed=n)
    assert norm_l2(to_spectrum(f)) == pytest.approx(norm_l2(f), rel=1e-12)


def test_parseval_2d():
    grid = Grid(d=2, n_per_dim=16, half_width=3.0)
    f = random_field(grid, seed=5)
    assert norm_l2(to_spectrum(f)) == pytest.approx(norm_l2(f), rel=1e-12)


def test_norm_l2_zero_and_constant(grid):
    assert norm_l2(grid.zeros()) == 0.0
    c = 2.0 - 1.0j
    f = ComplexField(grid, np.full(grid.shape, c))
    assert norm_l2(f) == pytest.approx(abs(c) * np.sqrt(2 * grid.half_width), rel=1e-12)


def test_norm_l2_against_naive_sum(grid):
    f = random_field(grid, seed=1)
    # independent direct-sum oracle
    acc = 0.0
    for v in f.data.ravel():
        acc += (v.real**2 + v.imag**2) * grid.dx
    assert norm_l2(f) == pytest.approx(np.sqrt(acc), rel=1e-12)


def test_norm_lr_one_hot(grid):
    data = np.zeros(grid.shape, dtype=complex)
    data[5] = 1.0
    f = ComplexField(grid, data)
    for r in (2.0, 3.0, 4.0):
        assert norm_lr(f, r) == pytest.approx(grid.dx ** (1.0 / r), rel=1e-12)


def test_norm_lr_against_naive_sum(grid):
    f = random_field(grid, seed=2)
    r = 4.0
    acc = sum(abs(v) ** r * grid.dx for v in f.data.ravel())
    assert norm_lr(f, r) == pytest.approx(acc ** (1 / r), rel=1e-12)
    assert norm_lr(grid.zeros(), 3.0) == 0.0


def test_norm_lr_rejects_small_r(grid):
    with pytest.raises(GridError):
        norm_lr(random_field(grid), 1.5)


def test_norm_homogeneity(grid):
    f = random_field(grid, seed=3)
    c = -0.7 + 2.1j
    cf = ComplexField(grid, c * f.data)
    assert norm_l2(cf) == pytest.approx(abs(c) * norm_l2(f), rel=1e-12)
    assert norm_lr(cf, 4.0) == pytest.approx(abs(c) * norm_lr(f, 4.0), rel=1e-12)


def test_inner_product_conjugate_symmetry(grid):
    f, g = random_field(grid, 4), random_field(grid, 5)
    assert inner(f, g) == pytest.approx(np.conj(inner(g, f)), rel=1e-12)


# -- mixed norm -------------------------------------------------------------


def make_traj(grid, fields, dt=0.1):
    times = np.arange(len(fields)) * dt
    return Trajectory(grid, times, np.array(fields), r=4.0)


def test_mixed_norm_zero_trajectory(grid):
    traj = make_traj(grid, [np.zeros(grid.shape, complex)] * 5)
    assert traj.mixed_norm(0.4, p=8.0) == 0.0


def test_mixed_norm_time_constant(grid):
    phi = random_field(grid, seed=7).data
    n = 10
    dt = 0.05
    traj = make_traj(grid, [phi] * (n + 1), dt=dt)
    p = 8.0
    t = n * dt
    f = ComplexField(grid, phi)
    expect = norm_l2(f) + t ** (1 / p) * norm_lr(f, 4.0)
    assert traj.mixed_norm(t, p=p) == pytest.approx(expect, rel=1e-12)


def test_mixed_norm_monotone_in_time(grid):
    rng = np.random.default_rng(11)
    fields = rng.standard_normal((21,) + grid.shape) + 1j * rng.standard_normal((21,) + grid.shape)
    traj = make_traj(grid, fields, dt=0.02)
    vals = [traj.mixed_norm(i * 0.02, p=8.0) for i in range(21)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_mixed_norm_outside_range(grid):
    traj = make_traj(grid, [np.zeros(grid.shape, complex)] * 3)
    with pytest.raises(ValueError):
        traj.mixed_norm(5.0, p=8.0)


def test_cached_norms_match_recomputed(grid):
    rng = np.random.default_rng(13)
    fields = rng.standard_normal((6,) + grid.shape) + 1j * rng.standard_normal((6,) + grid.shape)
    traj = make_traj(grid, fields)
    for i in range(6):
        f = traj.field_at(i)
        assert traj.h_norms[i] == pytest.approx(norm_l2(f), rel=1e-13)
        assert traj.lr_norms[i] == pytest.approx(norm_lr(f, 4.0), rel=1e-13)


def test_mixed_norm_free_function(grid):
    rng = np.random.default_rng(17)
    fields = rng.standard_normal((4,) + grid.shape) + 1j * rng.standard_normal((4,) + grid.shape)
    traj = make_traj(grid, fields)
    assert mixed_norm(traj, 0.3, 8.0, 4.0) == traj.mixed_norm(0.3, 8.0, 4.0)
