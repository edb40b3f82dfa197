"""Probability estimation: trivial events, determinism, censoring, tally
merging, thread invariance, and the Gaussian closed-form oracle."""

import dataclasses

import numpy as np
import pytest
from scipy.stats import norm as ndist

from snls.grid import ComplexField, Grid
from snls.ldp import EventSpec
from snls.mc import epsilon_sweep, estimate_probability, merge_rows, wilson_interval
from snls.operators import ModelParams, NoiseModel

GRID = Grid(d=1, n_per_dim=64, half_width=np.pi)
T = 1.0
DT = 2e-3


def mode_field():
    x = GRID.coords()[0]
    return ComplexField(GRID, np.exp(1j * x))


def linear_params():
    return ModelParams(alpha=3.0, lam=0.0, beta=0.0, epsilon=0.1, d=1)


def g_noise():
    return NoiseModel(GRID, [], [{"kind": "cosine", "amplitude": 1.0, "harmonic": 2}], "linear")


def amp_event(level, direction="ge"):
    return EventSpec(
        "functional_threshold", T, observable="terminal_mode_amplitude",
        level=level, direction=direction, mode=-1,
    )


def norm_event(level, direction="ge"):
    return EventSpec("functional_threshold", T, observable="terminal_h_norm", level=level, direction=direction)


def no_wall(row):
    return dataclasses.replace(row, wall_time=0.0)


def test_whole_space_event():
    row = estimate_probability(
        mode_field(), None, linear_params(), g_noise(), norm_event(0.0), 0.1, 64, 1, DT, T
    )
    assert row.p_hat == 1.0
    assert row.hits == 64
    assert row.eps_log_p == 0.0
    assert row.ci_hi == 1.0


def test_empty_event_censored():
    row = estimate_probability(
        mode_field(), None, linear_params(), g_noise(), norm_event(1e9), 0.1, 64, 1, DT, T
    )
    assert row.p_hat == 0.0
    assert row.censored
    assert row.eps_log_p is None
    assert row.ci_lo == 0.0


def test_duplicate_eps_identical_rows():
    sweep = epsilon_sweep(
        mode_field(), None, linear_params(), g_noise(), amp_event(0.2), [0.1, 0.1], 128, 7, DT, T
    )
    assert no_wall(sweep.rows[0]) == no_wall(sweep.rows[1])


def test_thread_count_invariance():
    args = (mode_field(), None, linear_params(), g_noise(), amp_event(0.2), 0.1, 4100, 11, DT, T)
    a = estimate_probability(*args, threads=1)
    b = estimate_probability(*args, threads=4)
    assert no_wall(a) == no_wall(b)


def test_merge_disjoint_half_sweeps():
    args = (mode_field(), None, linear_params(), g_noise(), amp_event(0.2), 0.1)
    full = estimate_probability(*args, 4100, 13, DT, T)
    half_a = estimate_probability(*args, 2050, 13, DT, T, path_offset=0)
    half_b = estimate_probability(*args, 2050, 13, DT, T, path_offset=2050)
    merged = merge_rows(half_a, half_b)
    assert no_wall(merged) == no_wall(full)


def test_wilson_interval_basic():
    lo, hi = wilson_interval(5, 100)
    assert 0.0 < lo < 0.05 < hi < 1.0
    lo0, hi0 = wilson_interval(0, 100)
    assert lo0 == 0.0 and hi0 > 0.0


def test_gaussian_closed_form_oracle():
    # two-mode reduction: p = 2 Phi_bar(2 arcsin(z e^{-eps/8}) / sqrt(eps T))
    eps, z, n = 0.1, 0.26, 2048
    row = estimate_probability(
        mode_field(), None, linear_params(), g_noise(), amp_event(z), eps, n, 555, DT, T
    )
    z_eff = z * np.exp(-eps / 8.0)
    p_closed = 2 * ndist.sf(2 * np.arcsin(z_eff) / np.sqrt(eps * T))
    se = np.sqrt(p_closed * (1 - p_closed) / n)
    assert abs(row.p_hat - p_closed) <= 3 * se


def test_sweep_requires_descending_eps():
    with pytest.raises(ValueError):
        epsilon_sweep(
            mode_field(), None, linear_params(), g_noise(), amp_event(0.2), [0.05, 0.1], 8, 1, DT, T
        )


def test_estimate_rejects_bad_args():
    with pytest.raises(ValueError):
        estimate_probability(
            mode_field(), None, linear_params(), g_noise(), amp_event(0.2), 0.1, 0, 1, DT, T
        )


def test_csv_schema(tmp_path):
    sweep = epsilon_sweep(
        mode_field(), None, linear_params(), g_noise(), amp_event(0.2), [0.1], 32, 7, DT, T
    )
    path = tmp_path / "sweep.csv"
    sweep.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "epsilon,n_paths,hits,p_hat,ci_lo,ci_hi,eps_log_p,failed"
    assert len(lines) == 2
    fields = lines[1].split(",")
    assert int(fields[1]) == 32
