"""Cross-cutting numerical verification.

The dispersive-norm ratios measured here are empirical surrogates on the
discrete torus: they monitor boundedness of the free-flow mixed norms, they
do not certify the whole-space estimates.  Every routine is a pure function
of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ComplexField, Grid, fftn, ifftn, norm_l2
from .noise import SeedSpec, brownian_bridge_refine, path_increments
from .operators import ModelParams, NoiseModel
from .skeleton import Control, _steps_for, solve_skeleton
from .stepping import Collect, Stepper
from .stochastic import run_paths
from .trajectory import Trajectory, lp_time_integral, mixed_norm_of_difference

FIELD_PRESETS = {
    # band-limited Gaussian ensembles: spectral envelope exp(-(k/kc)^2)
    "smooth": 0.125,
    "medium": 0.25,
    "rough": 0.5,
}


def random_field(grid: Grid, rng: np.random.Generator, preset: str = "smooth") -> ComplexField:
    """Unit-H-norm random field with a decaying spectral envelope."""
    kc = FIELD_PRESETS[preset] * np.abs(grid.k1d).max()
    env = np.exp(-grid.k_sq / kc**2)
    spec = env * (rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape))
    f = ComplexField(grid, ifftn(spec, grid.d))
    n = norm_l2(f)
    return ComplexField(grid, f.data / n) if n > 0 else f


def boundary_mass_fraction(f: ComplexField, shell: float = 0.8) -> float:
    """Mass fraction in the outer shell |x|_inf > shell * L; wrap-around monitor."""
    grid = f.grid
    outer = np.zeros(grid.shape, dtype=bool)
    for x in grid.coords():
        outer |= np.abs(x) > shell * grid.half_width
    total = float(np.sum(np.abs(f.data) ** 2))
    if total == 0.0:
        return 0.0
    return float(np.sum(np.abs(f.data[outer]) ** 2) / total)


def free_flow_mixed_ratio(phi: ComplexField, p: float, r: float, t_final: float, dt: float) -> float:
    """||S(.)phi||_{L^p L^r} / ||phi||_H on [0, T] via exact spectral stepping."""
    grid = phi.grid
    ns = _steps_for(t_final, dt)
    sym = np.exp(-1j * grid.k_sq * dt)
    spec = fftn(phi.data, grid.d)
    lr = np.empty(ns + 1)

    def lr_norm(s):
        u = ifftn(s, grid.d)
        if np.isinf(r):
            return float(np.abs(u).max())
        return float((np.sum(np.abs(u) ** r) * grid.dx) ** (1.0 / r))

    lr[0] = lr_norm(spec)
    for n in range(ns):
        spec = sym * spec
        lr[n + 1] = lr_norm(spec)
    denom = norm_l2(phi)
    return lp_time_integral(lr, dt, p, ns) / denom


def strichartz_ratio_survey(
    grid: Grid,
    n_samples: int,
    p: float,
    r: float,
    t_final: float,
    dt: float = 1e-2,
    preset: str = "smooth",
    seed: int = 0,
) -> dict:
    """Max homogeneous free-flow ratio over random normalized fields."""
    rng = np.random.default_rng(seed)
    ratios = np.array(
        [
            free_flow_mixed_ratio(random_field(grid, rng, preset), p, r, t_final, dt)
            for _ in range(n_samples)
        ]
    )
    return {
        "n_samples": n_samples,
        "p": p,
        "r": r,
        "t_final": t_final,
        "grid_n": grid.n_per_dim,
        "max_ratio": float(ratios.max()),
        "mean_ratio": float(ratios.mean()),
        "finite": bool(np.all(np.isfinite(ratios))),
    }


def ito_stratonovich_gap(
    u0: ComplexField,
    params: ModelParams,
    noise: NoiseModel,
    dt_list,
    t_final: float,
    seed: int = 0,
    *,
    n_paths: int = 8,
    ablated: bool = False,
    eps: float | None = None,
) -> dict:
    """RMS terminal L2 distance between the unitary and explicit Ito
    integrators, per dt.  Each of the n_paths comparisons runs both schemes
    on the same Brownian path, held consistent across resolutions by bridge
    refinement from the coarsest level; the RMS over paths is the strong
    error, which scales at first order in dt for the drift-corrected
    integrator (a single path's gap is dominated by a zero-mean martingale
    and fits noisily).

    With ``ablated`` the explicit integrator drops the drift correction, so
    the gap converges to the correction's footprint instead of zero.
    """
    if noise.m2 != 0:
        raise ValueError("gap diagnostic expects a rotational-channel-only noise model")
    dt_list = sorted(float(d) for d in dt_list)  # ascending, refine downward
    grid = u0.grid
    coarsest = dt_list[-1]
    ns0 = _steps_for(t_final, coarsest)
    literal_mode = "ito_ablated" if ablated else "ito_literal"
    sq_gap = {dtv: 0.0 for dtv in dt_list}

    for path in range(n_paths):
        spec = SeedSpec(seed, path)
        blocks = {coarsest: path_increments(spec, ns0, coarsest, noise.m1, noise.m2)[0]}
        cur_dt, level = coarsest, 0
        while cur_dt / 2.0 >= dt_list[0] - 1e-15:
            blocks[cur_dt / 2.0] = brownian_bridge_refine(
                blocks[cur_dt], cur_dt, spec, channel=1, level=level
            )
            cur_dt /= 2.0
            level += 1
        for dtv in dt_list:
            key = min(blocks, key=lambda x: abs(x - dtv))
            if abs(key - dtv) > 1e-12 * dtv:
                raise ValueError(f"dt={dtv} is not reachable by halving from {coarsest}")
            dw1 = blocks[key][None]
            ns = dw1.shape[1]
            dw2 = np.zeros((1, ns, 0))
            term = {}
            for mode in ("unitary", literal_mode):
                st = Stepper(grid, params, noise, dtv, ns, mode=mode, eps=eps)
                res = st.run(u0.data[None], dW1=dw1, dW2=dw2)
                term[mode] = res.terminal[0]
            sq_gap[dtv] += np.sum(np.abs(term["unitary"] - term[literal_mode]) ** 2) * grid.dx

    rows = [{"dt": dtv, "gap": float(np.sqrt(sq_gap[dtv] / n_paths))} for dtv in dt_list]
    gaps = np.array([r["gap"] for r in rows])
    dts = np.array([r["dt"] for r in rows])
    slope = None
    if np.all(gaps > 0):
        slope = float(np.polyfit(np.log(dts), np.log(gaps), 1)[0])
    return {"rows": rows, "slope": slope, "ablated": ablated, "n_paths": n_paths}


def weak_convergence_probe(
    u0: ComplexField,
    base_ctrl: Control,
    perturbation: Control,
    params: ModelParams,
    noise: NoiseModel,
    eps_list,
    delta: float,
    n_paths: int,
    seed_base: int,
    dt: float,
    t_final: float,
) -> dict:
    """P(||u^{rho_eps, eps} - u^rho|| >= delta) per eps, for the deterministic
    family rho_eps = rho + sqrt(eps) * perturbation.

    The reference path solves the deterministic controlled equation with rho;
    probabilities should shrink as eps -> 0.
    """
    ref = solve_skeleton(u0, base_ctrl, params, noise, dt, t_final)
    rows = []
    for eps in eps_list:
        eps = float(eps)
        ctrl_eps = Control(
            base_ctrl.rho1 + np.sqrt(eps) * perturbation.rho1,
            base_ctrl.rho2 + np.sqrt(eps) * perturbation.rho2,
            base_ctrl.horizon,
        )
        if eps == 0.0:
            dist = mixed_norm_of_difference(
                solve_skeleton(u0, ctrl_eps, params, noise, dt, t_final), ref, params.p, params.r
            )
            rows.append({"eps": eps, "probability": float(dist >= delta), "distance": dist})
            continue
        hits = 0
        failed = 0
        from .mc import CHUNK

        for lo in range(0, n_paths, CHUNK):
            hi = min(lo + CHUNK, n_paths)
            res = run_paths(
                u0, ctrl_eps, params, noise, seed_base, range(lo, hi), dt, t_final,
                eps=eps, collect=Collect(terminal=False, reference=ref.fields),
            )
            ok = ~res.failed
            hits += int(np.sum((res.ref_mixed >= delta) & ok))
            failed += int(np.sum(~ok))
        rows.append({"eps": eps, "probability": hits / max(n_paths - failed, 1), "failed": failed})
    probs = [r["probability"] for r in rows]
    return {"rows": rows, "delta": delta, "monotone": all(b <= a for a, b in zip(probs, probs[1:]))}


def order_of_convergence(errors, dts) -> dict:
    """Log-log slope of terminal error against dt; flagged unreliable when the
    error ladder is not monotone."""
    errors = np.asarray(errors, dtype=float)
    dts = np.asarray(dts, dtype=float)
    if errors.size < 3:
        raise ValueError("need at least three rungs to fit an order")
    if np.any(errors <= 0):
        return {"order": None, "reliable": False, "reason": "zero error rung (exact integrator)"}
    idx = np.argsort(dts)
    e, d = errors[idx], dts[idx]
    monotone = bool(np.all(np.diff(e) > 0))
    order = float(np.polyfit(np.log(d), np.log(e), 1)[0])
    return {"order": order, "reliable": monotone, "reason": None if monotone else "non-monotone errors"}


def skeleton_self_convergence(
    u0: ComplexField,
    ctrl: Control | None,
    params: ModelParams,
    noise: NoiseModel,
    dt_coarse: float,
    t_final: float,
    n_rungs: int = 3,
) -> dict:
    """Terminal error of dt-ladder solves against a dt/2^n_rungs reference."""
    dts = [dt_coarse / 2**i for i in range(n_rungs)]
    dt_ref = dt_coarse / 2**n_rungs
    ref = solve_skeleton(u0, ctrl, params, noise, dt_ref, t_final)
    errs = []
    for dtv in dts:
        sol = solve_skeleton(u0, ctrl, params, noise, dtv, t_final)
        errs.append(float(np.sqrt(np.sum(np.abs(sol.fields[-1] - ref.fields[-1]) ** 2) * u0.grid.dx)))
    fit = order_of_convergence(errs, dts)
    fit["dts"] = dts
    fit["errors"] = errs
    return fit


def sde_strong_self_convergence(
    u0: ComplexField,
    params: ModelParams,
    noise: NoiseModel,
    dt_coarse: float,
    t_final: float,
    n_rungs: int = 3,
    n_paths: int = 16,
    seed: int = 0,
    mode: str = "unitary",
) -> dict:
    """Strong error ladder under bridge refinement of the same Brownian paths."""
    grid = u0.grid
    dts = [dt_coarse / 2**i for i in range(n_rungs)]
    dt_ref = dt_coarse / 2**n_rungs
    errs = np.zeros(n_rungs)
    for path in range(n_paths):
        spec = SeedSpec(seed, path)
        ns0 = _steps_for(t_final, dt_coarse)
        w1 = {dt_coarse: path_increments(spec, ns0, dt_coarse, noise.m1, noise.m2)[0]}
        w2 = {dt_coarse: path_increments(spec, ns0, dt_coarse, noise.m1, noise.m2)[1]}
        cur, level = dt_coarse, 0
        while cur > dt_ref * (1 + 1e-12):
            w1[cur / 2] = brownian_bridge_refine(w1[cur], cur, spec, channel=1, level=level)
            w2[cur / 2] = brownian_bridge_refine(w2[cur], cur, spec, channel=2, level=level)
            cur /= 2
            level += 1

        def terminal(dtv):
            ns = _steps_for(t_final, dtv)
            st = Stepper(grid, params, noise, dtv, ns, mode=mode)
            return st.run(u0.data[None], dW1=w1[dtv][None], dW2=w2[dtv][None]).terminal[0]

        ref = terminal(dt_ref)
        for i, dtv in enumerate(dts):
            diff = terminal(dtv) - ref
            errs[i] += np.sum(np.abs(diff) ** 2) * grid.dx
    errs = np.sqrt(errs / n_paths)
    fit = order_of_convergence(errs, dts)
    fit["dts"] = dts
    fit["errors"] = errs.tolist()
    return fit
