"""Stochastic integrators: deterministic reductions, pathwise conservation,
integrator-mode equivalence, truncation and stopping times, batching
invariance, and the mass-moment balance."""

import numpy as np
import pytest

from snls.grid import ComplexField, Grid, norm_l2
from snls.noise import SeedSpec, increments
from snls.operators import ModelParams, NoiseModel
from snls.skeleton import Control, solve_skeleton
from snls.stepping import Collect, TruncationSpec
from snls.stochastic import (
    mass_moment_balance,
    run_paths,
    solve_sde,
    solve_truncated,
    step_sde,
)

GRID = Grid(d=1, n_per_dim=128, half_width=10 * np.pi)
DT = 1e-3


def gaussian(width=2.0, amp=1.0):
    x = GRID.coords()[0]
    return ComplexField(GRID, amp * np.exp(-(x**2) / (2 * width**2)))


def params(beta=0.0, eps=0.1, lam=1.0):
    return ModelParams(alpha=3.0, lam=lam, beta=beta, epsilon=eps, d=1)


def test_zero_intensity_reduces_to_skeleton_step():
    noise = NoiseModel.default(GRID, 2, 2)
    pr = params(eps=0.0)
    u = gaussian()
    inc = increments(SeedSpec(3, 0), 0, DT, 2, 2)
    stepped = step_sde(u, np.zeros(2), np.zeros(2), inc, pr, noise, DT)
    skel = solve_skeleton(u, None, pr, noise, DT, DT)
    assert np.array_equal(stepped.data, skel.fields[-1])


def test_unitary_mode_per_step_mass():
    noise = NoiseModel.default(GRID, 4, 0)
    pr = params()
    u = gaussian()
    inc = increments(SeedSpec(5, 0), 0, DT, 4, 0)
    out = step_sde(u, np.zeros(4), np.zeros(0), inc, pr, noise, DT)
    drift = abs(norm_l2(out) ** 2 - norm_l2(u) ** 2) / norm_l2(u) ** 2
    assert drift <= 1e-12


def test_pathwise_mass_conservation_full_path():
    noise = NoiseModel.default(GRID, 4, 0)
    pr = params()
    traj = solve_sde(gaussian(), None, pr, noise, SeedSpec(7, 0), DT, 1.0)
    m0 = traj.h_norms[0] ** 2
    assert np.max(np.abs(traj.h_norms**2 - m0)) / m0 <= 1e-10


def test_zero_noise_model_matches_skeleton_bitwise():
    noise = NoiseModel(
        GRID,
        [{"kind": "constant", "amplitude": 0.0}] * 2,
        [{"kind": "constant", "amplitude": 0.0}] * 2,
        "linear",
    )
    pr = params()
    u0 = gaussian()
    sde = solve_sde(u0, None, pr, noise, SeedSpec(11, 0), DT, 0.2)
    skel = solve_skeleton(u0, None, pr, noise, DT, 0.2)
    assert np.array_equal(sde.fields, skel.fields)


def test_same_seed_reproducible():
    noise = NoiseModel.default(GRID, 4, 4)
    pr = params()
    a = solve_sde(gaussian(), None, pr, noise, SeedSpec(13, 5), DT, 0.2)
    b = solve_sde(gaussian(), None, pr, noise, SeedSpec(13, 5), DT, 0.2)
    assert np.array_equal(a.fields, b.fields)


def test_unitary_vs_literal_first_order_gap():
    from snls.diagnostics import ito_stratonovich_gap

    noise = NoiseModel.default(GRID, 4, 0)
    pr = params(eps=0.5)
    out = ito_stratonovich_gap(gaussian(), pr, noise, [4e-3, 2e-3, 1e-3, 5e-4], 0.5, seed=2)
    assert out["slope"] is not None
    assert 0.75 <= out["slope"] <= 1.25


def test_strong_self_convergence_order():
    from snls.diagnostics import sde_strong_self_convergence

    noise = NoiseModel.default(GRID, 4, 4)
    pr = params()
    fit = sde_strong_self_convergence(gaussian(), pr, noise, 4e-3, 0.256, n_paths=8, seed=4)
    assert fit["order"] is not None
    assert fit["order"] >= 0.4


def test_truncated_huge_radius_matches_sde_bitwise():
    noise = NoiseModel.default(GRID, 4, 4)
    pr = params()
    u0 = gaussian()
    plain = solve_sde(u0, None, pr, noise, SeedSpec(17, 0), DT, 0.2)
    trunc, report = solve_truncated(u0, None, pr, noise, SeedSpec(17, 0), DT, 0.2, TruncationSpec(1e6))
    assert np.array_equal(plain.fields, trunc.fields)
    assert not report.hit
    assert report.tau == pytest.approx(0.2)


def test_truncated_tiny_radius_is_linear_flow():
    noise = NoiseModel.default(GRID, 4, 4)
    pr = params()
    u0 = gaussian()
    trunc, report = solve_truncated(u0, None, pr, noise, SeedSpec(19, 0), DT, 0.2, TruncationSpec(1e-9))
    linear = solve_sde(u0, None, params(lam=0.0), noise, SeedSpec(19, 0), DT, 0.2)
    assert report.hit and report.tau == 0.0
    assert np.max(np.abs(trunc.fields - linear.fields)) < 1e-12


def test_truncation_levels_agree_before_stop():
    # for k <= n, paths on the same Brownian path agree up to tau_k
    noise = NoiseModel.default(GRID, 4, 4)
    pr = params()
    u0 = gaussian(amp=2.0)
    seed = SeedSpec(23, 0)
    mixed_final = solve_sde(u0, None, pr, noise, seed, DT, 0.5).mixed_norm(0.5, pr.p)
    k = 0.6 * mixed_final
    n = 0.9 * mixed_final
    tk, rk = solve_truncated(u0, None, pr, noise, seed, DT, 0.5, TruncationSpec(k))
    tn, rn = solve_truncated(u0, None, pr, noise, seed, DT, 0.5, TruncationSpec(n))
    assert rk.tau <= rn.tau
    ik = tk.index_of(rk.tau)
    assert np.array_equal(tk.fields[: ik + 1], tn.fields[: ik + 1])


def test_tau_monotone_in_level():
    noise = NoiseModel.default(GRID, 4, 4)
    pr = params()
    u0 = gaussian(amp=2.0)
    seed = SeedSpec(29, 0)
    taus = []
    for level in (1.0, 2.0, 4.0, 8.0):
        _, report = solve_truncated(u0, None, pr, noise, seed, DT, 0.3, TruncationSpec(level))
        taus.append(report.tau)
    assert all(b >= a for a, b in zip(taus, taus[1:]))


def test_batching_invariance():
    # per-path results identical whether paths run alone or in a batch
    noise = NoiseModel.default(GRID, 4, 4)
    pr = params()
    u0 = gaussian()
    batch = run_paths(u0, None, pr, noise, 31, range(6), DT, 0.1, collect=Collect(terminal=True))
    for p in (0, 3, 5):
        single = run_paths(u0, None, pr, noise, 31, [p], DT, 0.1, collect=Collect(terminal=True))
        assert np.array_equal(batch.terminal[p], single.terminal[0])


def test_mass_moment_balance_conservative():
    noise = NoiseModel.default(GRID, 4, 0)
    pr = params()
    out = mass_moment_balance(gaussian(), pr, noise, 101, 200, DT, 0.5, n_checkpoints=5)
    assert out["max_residual"] == 0.0  # increments at round-off on both sides
    m = out["mean_mass"]
    assert np.max(np.abs(m - m[0])) / m[0] <= 1e-12


def test_mass_moment_balance_damped_exponential():
    beta = 0.8
    noise = NoiseModel.default(GRID, 4, 0)
    pr = params(beta=beta)
    u0 = gaussian()
    out = mass_moment_balance(u0, pr, noise, 103, 200, DT, 0.5, n_checkpoints=5)
    # exact ODE oracle: E||u||^2 = exp(-2 beta t) ||u0||^2 (deterministic here)
    expect = np.exp(-2 * beta * out["times"]) * norm_l2(u0) ** 2
    assert np.max(np.abs(out["mean_mass"] - expect) / expect) < 1e-8


def test_mass_moment_balance_linear_g():
    noise = NoiseModel.default(GRID, 4, 4, g_shape="linear")
    pr = params()
    out = mass_moment_balance(gaussian(), pr, noise, 107, 2000, DT, 0.5, n_checkpoints=5)
    assert out["max_residual"] <= 0.05


def test_mass_moment_balance_rejects_tiny_samples():
    noise = NoiseModel.default(GRID, 2, 2)
    with pytest.raises(ValueError):
        mass_moment_balance(gaussian(), params(), noise, 1, 50, DT, 0.1)


def test_blowup_reported_with_step():
    from snls.stepping import BlowUpError

    # amplitude overflow in the nonlinear phase: |u|^2 overflows to inf and
    # the solver must report the offending step instead of clamping
    pr = ModelParams(alpha=3.0, lam=-1.0, beta=0.0, epsilon=0.0, d=1)
    x = GRID.coords()[0]
    u0 = ComplexField(GRID, 1e200 * np.exp(-(x**2) * 8.0))
    with pytest.raises(BlowUpError) as exc:
        solve_skeleton(u0, None, pr, NoiseModel.silent(GRID), 1e-2, 1.0)
    assert exc.value.step >= 0


def test_failed_paths_tallied_in_batch():
    pr = ModelParams(alpha=3.0, lam=-1.0, beta=0.0, epsilon=0.0, d=1)
    x = GRID.coords()[0]
    u0 = ComplexField(GRID, 1e200 * np.exp(-(x**2) * 8.0))
    res = run_paths(u0, None, pr, NoiseModel.silent(GRID), 1, range(3), 1e-2, 0.1)
    assert np.all(res.failed)
    assert np.all(res.blow_step >= 0)
