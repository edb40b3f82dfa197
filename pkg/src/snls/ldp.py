"""Rate-function machinery: quadratic control cost, budget membership,
event specifications, the penalty-method action minimizer, and the
rate-vs-probability gap probe.

The minimizer returns an upper bound on the infimum of the control cost over
controls whose skeleton solution realizes the event; it never claims to
certify the infimum.  Ties are broken by smallest cost, then lexicographic
coefficient order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .grid import ComplexField, fftn
from .operators import ModelParams, NoiseModel
from .skeleton import Control, _steps_for, solve_skeleton
from .stepping import Collect, RunResult, Stepper
from .trajectory import Trajectory


def control_cost(ctrl: Control) -> float:
    """(1/2) int_0^T (||rho1||^2 + ||rho2||^2) dt for piecewise-constant controls."""
    s1 = float(np.sum(ctrl.rho1**2)) if ctrl.rho1.size else 0.0
    s2 = float(np.sum(ctrl.rho2**2)) if ctrl.rho2.size else 0.0
    return 0.5 * (s1 + s2) * ctrl.seg_dt


def in_D_N(ctrl: Control, budget: float) -> bool:
    """True iff int ||rho1||^2 + int ||rho2||^2 <= budget (a closed set)."""
    return 2.0 * control_cost(ctrl) <= budget


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------

_OBSERVABLES = ("terminal_mode_amplitude", "terminal_h_norm", "terminal_mass", "sup_h_norm")


class EventSpec:
    """A measurable event of a solution path with a pure indicator.

    kinds:
      terminal_ball_exit   ||u(T) - center||_H >= radius
      terminal_target      ||u(T) - target||_H <= tol
      functional_threshold observable(path) >= level (direction 'ge') or <= ('le')
    """

    def __init__(self, kind: str, horizon: float, **kw):
        self.kind = kind
        self.horizon = float(horizon)
        self.kw = kw
        if kind == "terminal_ball_exit":
            self.center = np.asarray(kw["center"], dtype=complex)
            self.radius = float(kw["radius"])
        elif kind == "terminal_target":
            self.target = np.asarray(kw["target"], dtype=complex)
            self.tol = float(kw["tol"])
        elif kind == "functional_threshold":
            self.observable = kw["observable"]
            if self.observable not in _OBSERVABLES:
                raise ValueError(f"unknown observable {self.observable!r}; choose from {_OBSERVABLES}")
            self.level = float(kw["level"])
            self.direction = kw.get("direction", "ge")
            if self.direction not in ("ge", "le"):
                raise ValueError("direction must be 'ge' or 'le'")
            self.mode = kw.get("mode")
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    def needs(self) -> Collect:
        norms = self.kind == "functional_threshold" and self.observable == "sup_h_norm"
        return Collect(terminal=True, norms=norms)

    # -- evaluation ----------------------------------------------------------

    def _observe(self, res: RunResult, grid) -> np.ndarray:
        if self.kind == "terminal_ball_exit":
            diff = res.terminal - self.center
            return np.sqrt(np.sum(np.abs(diff) ** 2, axis=tuple(range(1, diff.ndim))) * grid.dx)
        if self.kind == "terminal_target":
            diff = res.terminal - self.target
            return np.sqrt(np.sum(np.abs(diff) ** 2, axis=tuple(range(1, diff.ndim))) * grid.dx)
        obs = self.observable
        if obs == "terminal_mode_amplitude":
            spec = fftn(res.terminal, grid.d)
            idx = np.unravel_index(self._mode_flat_index(grid), grid.shape)
            sl = (slice(None),) + idx
            return np.abs(spec[sl]) / np.sqrt(grid.size)  # physical amplitude
        flat_axes = tuple(range(1, res.terminal.ndim)) if res.terminal is not None else ()
        if obs == "terminal_h_norm":
            return np.sqrt(np.sum(np.abs(res.terminal) ** 2, axis=flat_axes) * grid.dx)
        if obs == "terminal_mass":
            return np.sum(np.abs(res.terminal) ** 2, axis=flat_axes) * grid.dx
        if obs == "sup_h_norm":
            return res.h_norms.max(axis=1)
        raise AssertionError(obs)

    def _mode_flat_index(self, grid) -> int:
        mode = self.mode
        if mode is None:
            raise ValueError("terminal_mode_amplitude requires a 'mode' index")
        modes = (mode,) * grid.d if np.isscalar(mode) else tuple(mode)
        flat = 0
        for j in modes:
            flat = flat * grid.n_per_dim + (int(j) % grid.n_per_dim)
        return flat

    def values(self, res: RunResult, grid) -> np.ndarray:
        return self._observe(res, grid)

    def indicator_batch(self, res: RunResult, grid) -> np.ndarray:
        v = self._observe(res, grid)
        if self.kind == "terminal_ball_exit":
            return v >= self.radius
        if self.kind == "terminal_target":
            return v <= self.tol
        return v >= self.level if self.direction == "ge" else v <= self.level

    def residual_batch(self, res: RunResult, grid) -> np.ndarray:
        """Feasibility residual: 0 exactly when the event holds."""
        v = self._observe(res, grid)
        if self.kind == "terminal_ball_exit":
            return np.maximum(0.0, self.radius - v)
        if self.kind == "terminal_target":
            return np.maximum(0.0, v - self.tol)
        if self.direction == "ge":
            return np.maximum(0.0, self.level - v)
        return np.maximum(0.0, v - self.level)

    def indicator(self, traj: Trajectory) -> bool:
        res = RunResult(
            n_steps=traj.n_steps,
            dt=traj.dt,
            terminal=traj.fields[-1][None],
            h_norms=traj.h_norms[None],
        )
        return bool(self.indicator_batch(res, traj.grid)[0])


# ---------------------------------------------------------------------------
# minimum-action optimization
# ---------------------------------------------------------------------------

@dataclass
class RateOptions:
    segments: int = 16
    penalty0: float = 10.0
    penalty_factor: float = 10.0
    rounds: int = 5
    feas_tol: float = 1e-3
    fd_step: float = 1e-4
    maxiter_inner: int = 200
    budget: float | None = None
    x0: np.ndarray | None = None


@dataclass
class RateResult:
    control: Control
    cost: float
    feasible: bool
    residual: float
    trace: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "cost": self.cost,
            "feasible": self.feasible,
            "residual": self.residual,
            "rho1": self.control.rho1.tolist(),
            "rho2": self.control.rho2.tolist(),
            "horizon": self.control.horizon,
            "trace": self.trace,
            "message": self.message,
        }


class _SkeletonObjective:
    """Batched skeleton solves for the penalty objective and its FD gradient."""

    def __init__(self, u0, event, params, noise, dt, t_final, opts):
        self.grid = u0.grid
        self.u0 = u0
        self.event = event
        self.params = params
        self.noise = noise
        self.dt = dt
        self.ns = _steps_for(t_final, dt)
        self.t_final = t_final
        self.opts = opts
        self.m1, self.m2 = noise.m1, noise.m2
        self.segments = opts.segments
        self.n_coef = (self.m1 + self.m2) * self.segments
        self.seg_dt = t_final / self.segments
        t = np.arange(self.ns) * dt
        self.seg_of_step = np.minimum((t / self.seg_dt).astype(int), self.segments - 1)
        self.collect = event.needs()
        self.n_solves = 0

    def unpack(self, x: np.ndarray) -> Control:
        k1 = self.m1 * self.segments
        rho1 = x[:k1].reshape(self.m1, self.segments)
        rho2 = x[k1:].reshape(self.m2, self.segments)
        return Control(rho1, rho2, self.t_final)

    def cost(self, x: np.ndarray) -> float:
        return 0.5 * float(np.sum(x**2)) * self.seg_dt

    def residual_many(self, xs: np.ndarray) -> np.ndarray:
        """Event residuals for a stack of coefficient vectors (K, n_coef)."""
        k = xs.shape[0]
        k1 = self.m1 * self.segments
        rho1 = xs[:, :k1].reshape(k, self.m1, self.segments)
        rho2 = xs[:, k1:].reshape(k, self.m2, self.segments)
        r1 = rho1[:, :, self.seg_of_step].transpose(0, 2, 1)  # (K, ns, M1)
        r2 = rho2[:, :, self.seg_of_step].transpose(0, 2, 1)
        stepper = Stepper(self.grid, self.params, self.noise, self.dt, self.ns, eps=0.0)
        start = np.broadcast_to(self.u0.data, (k,) + self.grid.shape)
        res = stepper.run(start, r1, r2, collect=self.collect)
        self.n_solves += k
        vals = self.event.residual_batch(res, self.grid)
        vals = np.where(res.failed, np.inf, vals)
        return vals

    def residual(self, x: np.ndarray) -> float:
        return float(self.residual_many(x[None])[0])

    def value_and_grad(self, x: np.ndarray, kappa: float) -> tuple[float, np.ndarray]:
        h = self.opts.fd_step * np.maximum(1.0, np.abs(x))
        stack = [x]
        for i in range(self.n_coef):
            xp = x.copy()
            xp[i] += h[i]
            xm = x.copy()
            xm[i] -= h[i]
            stack.append(xp)
            stack.append(xm)
        res = self.residual_many(np.array(stack))
        r0 = res[0]
        f = self.cost(x) + kappa * r0 * r0
        grad = x * self.seg_dt
        rp = res[1::2]
        rm = res[2::2]
        grad = grad + kappa * (rp * rp - rm * rm) / (2.0 * h)
        return f, grad


def minimize_action(
    u0: ComplexField,
    event: EventSpec,
    params: ModelParams,
    noise: NoiseModel,
    dt: float,
    t_final: float,
    opts: RateOptions | None = None,
) -> RateResult:
    """Penalty-method quasi-Newton upper bound for the minimal control cost.

    Minimizes cost + kappa * residual^2 with L-BFGS over the piecewise
    constant coefficients, central-difference gradients on the penalty term,
    and a geometric kappa schedule.  The reported cost is an upper bound on
    the true infimum.
    """
    opts = opts or RateOptions()
    if abs(event.horizon - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"event horizon {event.horizon} does not match solve horizon {t_final}")
    obj = _SkeletonObjective(u0, event, params, noise, dt, t_final, opts)

    x = np.zeros(obj.n_coef) if opts.x0 is None else np.array(opts.x0, dtype=float)
    r_zero = obj.residual(np.zeros(obj.n_coef))
    if r_zero <= opts.feas_tol:
        ctrl = obj.unpack(np.zeros(obj.n_coef))
        return RateResult(ctrl, 0.0, True, r_zero, [], "event already realized by the uncontrolled path")

    if np.all(x == 0.0):
        # deterministic symmetry-breaking start; zero is a stationary point
        # of the penalty term for amplitude-type events
        x = np.full(obj.n_coef, 1e-2)

    trace = []
    best = None  # (cost, x, residual)
    kappa = opts.penalty0
    for rnd in range(opts.rounds):
        out = scipy.optimize.minimize(
            obj.value_and_grad,
            x,
            args=(kappa,),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": opts.maxiter_inner, "ftol": 1e-14, "gtol": 1e-10},
        )
        x = out.x
        r = obj.residual(x)
        c = obj.cost(x)
        trace.append(
            {
                "round": rnd,
                "kappa": kappa,
                "cost": c,
                "residual": r,
                "inner_iterations": int(out.nit),
                "grad_norm": float(np.max(np.abs(out.jac))),
            }
        )
        if r <= opts.feas_tol and (best is None or (c, tuple(x)) < (best[0], tuple(best[1]))):
            best = (c, x.copy(), r)
        kappa *= opts.penalty_factor

    if best is None:
        ctrl = obj.unpack(x)
        return RateResult(
            ctrl,
            obj.cost(x),
            False,
            obj.residual(x),
            trace,
            "no feasible control found within the penalty schedule",
        )
    c, xb, r = best
    ctrl = obj.unpack(xb)
    msg = "upper bound on the minimal action"
    if opts.budget is not None and 2.0 * c > opts.budget:
        return RateResult(ctrl, c, False, r, trace, f"feasible control exceeds the quadratic budget {opts.budget}")
    return RateResult(ctrl, c, True, r, trace, msg)


def grid_search_action(
    u0: ComplexField,
    event: EventSpec,
    params: ModelParams,
    noise: NoiseModel,
    dt: float,
    t_final: float,
    *,
    segments: int = 3,
    values: np.ndarray | None = None,
) -> RateResult:
    """Exhaustive search over piecewise-constant controls on a coefficient grid.

    Brute-force oracle for low-dimensional reductions; refuses more than four
    coefficient dimensions.
    """
    m_total = noise.m1 + noise.m2
    n_coef = m_total * segments
    if n_coef == 0:
        raise ValueError("no control modes to search over")
    if n_coef > 4:
        raise ValueError(f"grid search limited to <= 4 coefficients; got {n_coef}")
    if values is None:
        values = np.linspace(-0.8, 0.8, 21)
    grids = np.meshgrid(*([values] * n_coef), indexing="ij")
    xs = np.stack([g.ravel() for g in grids], axis=1)  # (K, n_coef)

    opts = RateOptions(segments=segments)
    obj = _SkeletonObjective(u0, event, params, noise, dt, t_final, opts)
    res = obj.residual_many(xs)
    feasible = res <= opts.feas_tol
    if not np.any(feasible):
        return RateResult(
            obj.unpack(xs[int(np.argmin(res))]),
            float("inf"),
            False,
            float(res.min()),
            [],
            "no grid point realizes the event",
        )
    costs = 0.5 * np.sum(xs**2, axis=1) * obj.seg_dt
    costs[~feasible] = np.inf
    i = int(np.argmin(costs))
    return RateResult(obj.unpack(xs[i]), float(costs[i]), True, float(res[i]), [], "grid-search oracle")


def ldp_bounds_probe(istar: float, sweep_rows) -> dict:
    """Gap between -eps log p_hat and the optimizer's rate bound, per epsilon.

    Expects sweep rows ordered by descending epsilon.  The trend is judged
    consistent with convergence when the absolute gap shrinks monotonically
    or successive gaps overlap within the Wilson interval widths.
    """
    if not sweep_rows:
        raise ValueError("empty sweep table")
    rows = []
    gaps = []
    for row in sweep_rows:
        eps = row.epsilon
        if row.eps_log_p is None:
            rows.append({"epsilon": eps, "censored": True})
            continue
        gap = row.eps_log_p - istar
        lo = -eps * math.log(row.ci_hi) - istar if row.ci_hi > 0 else float("-inf")
        hi = -eps * math.log(row.ci_lo) - istar if row.ci_lo > 0 else float("inf")
        rows.append(
            {"epsilon": eps, "gap": gap, "gap_ci": [lo, hi], "censored": False}
        )
        gaps.append((abs(gap), max(abs(hi - gap), abs(gap - lo))))
    monotone = all(gaps[i + 1][0] <= gaps[i][0] for i in range(len(gaps) - 1))
    within_noise = all(
        gaps[i + 1][0] <= gaps[i][0] + gaps[i][1] + gaps[i + 1][1] for i in range(len(gaps) - 1)
    )
    return {
        "istar": istar,
        "rows": rows,
        "gap_monotone": monotone,
        "consistent_with_convergence": monotone or within_noise,
    }
