"""Deterministic controlled dynamics: exact reductions, conservation, the
integral map's fixed point and contraction, the regularized variant, and
continuous dependence on controls."""

import numpy as np
import pytest

from snls.grid import ComplexField, Grid, norm_l2
from snls.operators import ModelParams, NoiseModel
from snls.skeleton import (
    Control,
    choose_contraction_horizon,
    conservation_special_case,
    contraction_ratios,
    picard_iterate,
    picard_map,
    random_ball_trajectory,
    solve_skeleton,
    solve_skeleton_yosida,
)
from snls.trajectory import Trajectory, mixed_norm_of_difference

GRID = Grid(d=1, n_per_dim=256, half_width=10 * np.pi)
DT = 1e-3


def gaussian(width=2.0, amp=1.0, k0=0.0):
    x = GRID.coords()[0]
    return ComplexField(GRID, amp * np.exp(-(x**2) / (2 * width**2)) * np.exp(1j * k0 * x))


def params(lam=1.0, beta=0.0, alpha=3.0):
    return ModelParams(alpha=alpha, lam=lam, beta=beta, epsilon=0.1, d=1)


def silent():
    return NoiseModel.silent(GRID)


def d1_control(noise, segments=8, horizon=1.0, seed=0, budget=1.0):
    rng = np.random.default_rng(seed)
    rho1 = rng.standard_normal((noise.m1, segments))
    rho2 = rng.standard_normal((noise.m2, segments))
    ctrl = Control(rho1, rho2, horizon)
    from snls.ldp import control_cost

    c = control_cost(ctrl)
    if c > 0:
        ctrl = ctrl.scaled(np.sqrt(budget / (2 * c)))
    return ctrl


# -- exact reductions ---------------------------------------------------------


def test_free_flow_mass_and_dispersion():
    u0 = gaussian(width=2.0)
    traj = solve_skeleton(u0, None, params(lam=0.0), silent(), DT, 1.0)
    assert abs(traj.h_norms[-1] - traj.h_norms[0]) / traj.h_norms[0] < 1e-12
    # closed form: |u(x,t)|^2 = w^2/sqrt(w^4+4t^2) * exp(-x^2 w^2/(w^4+4t^2))
    x = GRID.coords()[0]
    w = 2.0
    t = 1.0
    denom = w**4 + 4 * t**2
    expect_dens = (w**2 / np.sqrt(denom)) * np.exp(-(x**2) * w**2 / denom)
    dens = np.abs(traj.fields[-1]) ** 2
    rel = np.linalg.norm(dens - expect_dens) / np.linalg.norm(expect_dens)
    assert rel < 1e-4


def test_damping_exact_decay():
    u0 = gaussian()
    beta = 0.7
    traj = solve_skeleton(u0, None, params(lam=0.0, beta=beta), silent(), DT, 1.0)
    expect = np.exp(-beta * traj.times) * traj.h_norms[0]
    assert np.max(np.abs(traj.h_norms - expect) / expect) < 1e-10


def test_full_equation_mass_conservation():
    u0 = gaussian()
    traj = solve_skeleton(u0, None, params(lam=1.0, beta=0.0), silent(), DT, 1.0)
    drift = np.abs(traj.h_norms**2 - traj.h_norms[0] ** 2) / traj.h_norms[0] ** 2
    assert drift.max() < 1e-10


def test_focusing_sign_supported():
    u0 = gaussian(amp=0.5)
    traj = solve_skeleton(u0, None, params(lam=-1.0), silent(), DT, 0.2)
    drift = np.abs(traj.h_norms**2 - traj.h_norms[0] ** 2) / traj.h_norms[0] ** 2
    assert drift.max() < 1e-10


def test_horizon_mismatch_rejected():
    u0 = gaussian()
    noise = NoiseModel.default(GRID, 2, 2)
    ctrl = Control.zeros(2, 2, 4, horizon=0.5)
    with pytest.raises(Exception):
        solve_skeleton(u0, ctrl, params(), noise, DT, 1.0)


# -- conservation in the special case ------------------------------------------


def test_conservation_zero_control():
    u0 = gaussian()
    noise = NoiseModel.default(GRID, 4, 0)
    ctrl = Control.zeros(4, 0, 8, 1.0)
    drift = conservation_special_case(u0, ctrl, params(), noise, DT, 1.0)
    assert drift <= 1e-12


def test_conservation_random_control_in_budget():
    u0 = gaussian()
    noise = NoiseModel.default(GRID, 4, 0)
    ctrl = d1_control(noise, seed=3, budget=1.0)
    drift = conservation_special_case(u0, ctrl, params(), noise, DT, 1.0)
    assert drift <= 1e-10


def test_conservation_amplitude_scaling():
    u0 = gaussian()
    noise = NoiseModel.default(GRID, 4, 0)
    ctrl = d1_control(noise, seed=4, budget=1.0).scaled(10.0)
    drift = conservation_special_case(u0, ctrl, params(), noise, DT, 1.0)
    assert drift <= 1e-10


def test_conservation_rejects_damping():
    u0 = gaussian()
    noise = NoiseModel.default(GRID, 2, 0)
    with pytest.raises(ValueError):
        conservation_special_case(u0, None, params(beta=0.5), noise, DT, 1.0)


# -- integral map --------------------------------------------------------------


def test_picard_map_constant_when_everything_off():
    u0 = gaussian()
    pr = params(lam=0.0)
    ns = 50
    rng = np.random.default_rng(0)
    fields = rng.standard_normal((ns + 1,) + GRID.shape) + 1j * rng.standard_normal((ns + 1,) + GRID.shape)
    junk = Trajectory(GRID, np.arange(ns + 1) * DT, fields, r=pr.r)
    out = picard_map(junk, u0, None, pr, silent())
    free = solve_skeleton(u0, None, pr, silent(), DT, ns * DT)
    err = mixed_norm_of_difference(out, free, pr.p, pr.r)
    assert err < 1e-10


def test_picard_fixed_point_residual():
    u0 = gaussian()
    pr = params()
    noise = NoiseModel.default(GRID, 2, 2)
    t0 = 0.064
    ctrl = d1_control(noise, horizon=t0, seed=5, budget=1.0)
    star = solve_skeleton(u0, ctrl, pr, noise, DT, t0)
    image = picard_map(star, u0, ctrl, pr, noise)
    res = mixed_norm_of_difference(image, star, pr.p, pr.r)
    assert res <= 10 * DT


def test_contraction_ratio_half():
    u0 = gaussian()
    pr = params()
    noise = NoiseModel.default(GRID, 2, 2)
    ctrl_full = d1_control(noise, horizon=1.0, seed=6, budget=1.0)
    t0, probe_worst = choose_contraction_horizon(
        u0, ctrl_full, pr, noise, DT, t_max=0.25, seed=0
    )
    assert probe_worst <= 0.4
    ratios = contraction_ratios(
        u0, ctrl_full.restricted(t0), pr, noise, DT, t0,
        ball_radius=2.0 * (1.0 + norm_l2(u0)), n_pairs=20, seed=123,
    )
    assert ratios.size == 20
    assert ratios.max() <= 0.5


def test_picard_iterate_trivial_data():
    pr = params()
    out = picard_iterate(GRID.zeros(), None, pr, silent(), DT, 0.016)
    assert out.meta["iterations"] <= 2
    assert np.all(out.h_norms < 1e-14)


def test_picard_iterate_matches_solver():
    u0 = gaussian()
    pr = params()
    noise = NoiseModel.default(GRID, 2, 2)
    t0, _ = choose_contraction_horizon(u0, None, pr, noise, DT, t_max=0.128, seed=1)
    ctrl = None
    fixed = picard_iterate(u0, ctrl, pr, noise, DT, t0, tol=1e-10)
    direct = solve_skeleton(u0, ctrl, pr, noise, DT, t0)
    err = mixed_norm_of_difference(fixed, direct, pr.p, pr.r)
    assert err <= 20 * DT
    # geometric residual decay
    res = fixed.meta["residuals"]
    ratios = [b / a for a, b in zip(res, res[1:]) if a > 1e-12]
    assert ratios and max(ratios) <= 0.6


# -- regularized variant ---------------------------------------------------------


def test_yosida_solution_converges_monotonically():
    u0 = gaussian()
    pr = params()
    noise = NoiseModel.default(GRID, 2, 2)
    ctrl = d1_control(noise, horizon=1.0, seed=8, budget=0.5)
    ref = solve_skeleton(u0, ctrl, pr, noise, DT, 1.0)
    dists = []
    for mu in (1e1, 1e2, 1e3, 1e4):
        ym = solve_skeleton_yosida(u0, ctrl, pr, noise, DT, 1.0, mu)
        dists.append(mixed_norm_of_difference(ym, ref, pr.p, pr.r))
    assert all(b < a for a, b in zip(dists, dists[1:]))
    assert dists[-1] <= 1e-3


def test_yosida_double_application_stability():
    u0 = gaussian()
    pr = params()
    noise = NoiseModel.default(GRID, 2, 2)
    mu = 1e4
    ref = solve_skeleton(u0, None, pr, noise, DT, 0.5)
    once = solve_skeleton_yosida(u0, None, pr, noise, DT, 0.5, mu)
    u0_twice = ComplexField(GRID, solve_skeleton_yosida(u0, None, pr, noise, DT, 0.5, mu).fields[0])
    # applying the smoother twice to the initial state changes the solution
    # by at most twice the single-application error
    from snls.operators import yosida

    twice = solve_skeleton_yosida(yosida(u0, mu), None, pr, noise, DT, 0.5, mu)
    e1 = mixed_norm_of_difference(once, ref, pr.p, pr.r)
    e2 = mixed_norm_of_difference(twice, ref, pr.p, pr.r)
    assert e2 <= 2 * e1 + 1e-12


def test_yosida_uniform_energy_bound():
    u0 = gaussian()
    pr = params(beta=0.3)
    noise = NoiseModel.default(GRID, 2, 2)
    ctrl = d1_control(noise, horizon=1.0, seed=9, budget=1.0)
    # Gronwall-type ceiling: ||u0||^2 exp((2 beta + C) T) with C from the
    # recorded linear-growth constants of the Lipschitz channel
    c2 = noise.linear_growth[1]
    rho2_l1 = np.sum(np.abs(ctrl.rho2)) * ctrl.seg_dt
    ceiling = norm_l2(u0) ** 2 * np.exp(2 * c2 * rho2_l1)  # beta only shrinks mass
    sup = 0.0
    for mu in (1e1, 1e2, 1e3, 1e4):
        ym = solve_skeleton_yosida(u0, ctrl, pr, noise, DT, 1.0, mu)
        sup = max(sup, float(np.max(ym.h_norms**2)))
    assert sup <= ceiling * (1 + 1e-6)


# -- self-convergence and continuous dependence ---------------------------------


def test_split_step_second_order():
    u0 = gaussian()
    pr = params()
    noise = silent()
    ref = solve_skeleton(u0, None, pr, noise, DT / 4, 0.25)
    e = []
    for dt in (2 * DT, DT):
        sol = solve_skeleton(u0, None, pr, noise, dt, 0.25)
        e.append(norm_l2(ComplexField(GRID, sol.fields[-1] - ref.fields[-1])))
    factor = e[0] / e[1]
    assert 3.5 <= factor <= 4.5


def test_continuous_dependence_on_controls():
    u0 = gaussian()
    pr = params()
    noise = NoiseModel.default(GRID, 2, 2)
    base = d1_control(noise, horizon=1.0, seed=10, budget=0.5)
    pert = d1_control(noise, horizon=1.0, seed=11, budget=0.5)
    ref = solve_skeleton(u0, base, pr, noise, DT, 1.0)
    dists = []
    for k in (1.0, 0.5, 0.25, 0.125):
        ctrl = Control(base.rho1 + k * pert.rho1, base.rho2 + k * pert.rho2, 1.0)
        sol = solve_skeleton(u0, ctrl, pr, noise, DT, 1.0)
        dists.append(mixed_norm_of_difference(sol, ref, pr.p, pr.r))
    assert all(b < a for a, b in zip(dists, dists[1:]))
