"""Shared split-step engine for the deterministic and stochastic solvers.

One Strang step is: half-step of the exact linear+damping flow in spectrum;
exact pointwise phase rotation for the power nonlinearity (optionally scaled
by the running-norm cutoff); the rotational noise/control substep; the
Lipschitz-channel substep; second linear half-step.

The rotational channel is realized as an exact commuting unitary phase
(real multipliers commute pointwise), which makes its Ito-form drift
correction implicit.  The ``ito_literal`` mode instead multiplies by the
second-order Taylor polynomial of that phase factor (the explicit
drift-corrected integrator with the pathwise second-order term; the drift
cancels against the mean of the quadratic term, so the multiplier is
1 - iX - X^2/2).  ``ito_ablated`` omits the drift correction, leaving the
spurious term +(eps*dt/2)*sum_m B_m^2 as a regression guard.

All state arrays carry a leading batch axis; paths in a batch never interact
(transforms act on trailing axes only and are bitwise independent of batch
layout), so chunked and threaded sweeps reproduce single-path results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, fftn, ifftn
from .operators import ModelParams, NoiseModel, yosida_symbol
from .trajectory import lp_time_integral

MODES = ("unitary", "ito_literal", "ito_ablated")


class BlowUpError(RuntimeError):
    def __init__(self, step: int, t: float):
        super().__init__(f"solution blew up (non-finite values) at step {step}, t = {t:.6g}")
        self.step = step
        self.t = t


@dataclass(frozen=True)
class TruncationSpec:
    """Smooth cutoff of the nonlinearity by the running mixed norm.

    theta(y) = 1 on [-1, 1], 0 outside (-2, 2), smooth and monotone between;
    theta_R(y) = theta(y/R).
    """

    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"truncation radius must be > 0; got {self.radius}")

    def theta(self, y) -> np.ndarray:
        y = np.abs(np.asarray(y, dtype=float)) / self.radius
        out = np.ones_like(y)
        out[y >= 2.0] = 0.0
        mid = (y > 1.0) & (y < 2.0)
        if np.any(mid):
            s = y[mid]
            with np.errstate(over="ignore", under="ignore"):
                a = np.exp(-1.0 / (2.0 - s))
                b = np.exp(-1.0 / (s - 1.0))
            out[mid] = a / (a + b)
        return out


@dataclass
class Collect:
    terminal: bool = True
    norms: bool = False
    snapshots: bool = False
    checkpoints: tuple[int, ...] | None = None
    reference: np.ndarray | None = None  # (n_steps+1, *grid.shape)


@dataclass
class RunResult:
    n_steps: int
    dt: float
    terminal: np.ndarray | None = None
    h_norms: np.ndarray | None = None
    lr_norms: np.ndarray | None = None
    mixed_final: np.ndarray | None = None
    snapshots: np.ndarray | None = None
    tau: np.ndarray | None = None
    tau_hit: np.ndarray | None = None
    failed: np.ndarray | None = None
    blow_step: np.ndarray | None = None
    cp_mass: np.ndarray | None = None
    cp_gsq: np.ndarray | None = None
    ref_mixed: np.ndarray | None = None


class Stepper:
    def __init__(
        self,
        grid: Grid,
        params: ModelParams,
        noise: NoiseModel,
        dt: float,
        n_steps: int,
        *,
        mode: str = "unitary",
        eps: float | None = None,
        mu: float | None = None,
        trunc: TruncationSpec | None = None,
        dealias: bool = False,
    ):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}; got {mode!r}")
        if dt <= 0 or n_steps < 1:
            raise ValueError(f"need dt > 0 and n_steps >= 1; got dt={dt}, n_steps={n_steps}")
        self.grid = grid
        self.params = params
        self.noise = noise
        self.dt = float(dt)
        self.n_steps = int(n_steps)
        self.mode = mode
        self.eps = params.epsilon if eps is None else float(eps)
        self.mu = mu
        self.trunc = trunc
        self.dealias = dealias
        self.p = params.p
        self.r = params.r

        self.half_sym = np.exp((-1j * grid.k_sq - params.beta) * (self.dt / 2.0))
        self.j_sym = yosida_symbol(grid, mu) if mu is not None else None
        self.sqrt_eps = np.sqrt(self.eps)
        self._need_running = trunc is not None

    # -- substeps -----------------------------------------------------------

    def _half_linear(self, u):
        return ifftn(self.half_sym * fftn(u, self.grid.d), self.grid.d)

    def _power(self, u):
        # |u|^(alpha-1), avoiding the sqrt for the cubic case
        if self.params.alpha == 3.0:
            return u.real**2 + u.imag**2
        return np.abs(u) ** (self.params.alpha - 1.0)

    def _nonlinear(self, u, theta):
        lam = self.params.lam
        if lam == 0.0:
            return u
        if self.mu is not None:
            v = ifftn(self.j_sym * fftn(u, self.grid.d), self.grid.d)
            phi = (lam * self.dt) * self._power(v)
            if theta is not None:
                phi *= theta.reshape((-1,) + (1,) * self.grid.d)
            delta = v * (np.cos(phi) - 1j * np.sin(phi) - 1.0)
            u = u + ifftn(self.j_sym * fftn(delta, self.grid.d), self.grid.d)
        else:
            phi = (lam * self.dt) * self._power(u)
            if theta is not None:
                phi *= theta.reshape((-1,) + (1,) * self.grid.d)
            u = u * (np.cos(phi) - 1j * np.sin(phi))
        if self.dealias:
            u = ifftn(self.grid.dealias_mask * fftn(u, self.grid.d), self.grid.d)
        return u

    def _b_substep(self, u, rho1_col, dw1_row):
        noise = self.noise
        if noise.m1 == 0:
            return u
        ctrl_phase = self._mode_sum(rho1_col, noise.b_fields) * self.dt
        if self.mode == "unitary":
            phi = self.sqrt_eps * self._mode_sum(dw1_row, noise.b_fields) + ctrl_phase
            return u * (np.cos(phi) - 1j * np.sin(phi))
        x = self.sqrt_eps * self._mode_sum(dw1_row, noise.b_fields)
        mult = 1.0 - 1j * x - 0.5 * x * x
        if self.mode == "ito_ablated":
            mult = mult + (0.5 * self.eps * self.dt) * noise.sum_b_sq
        u = u * mult
        return u * (np.cos(ctrl_phase) - 1j * np.sin(ctrl_phase))

    def _g_substep(self, u, rho2_col, dw2_row):
        noise = self.noise
        if noise.m2 == 0:
            return u
        w = self.sqrt_eps * self._mode_sum(dw2_row, noise.g_fields) + self._mode_sum(
            rho2_col, noise.g_fields
        ) * self.dt
        if self.mu is not None:
            v = ifftn(self.j_sym * fftn(u, self.grid.d), self.grid.d)
            kick = -1j * w * noise.sigma(v)
            return u + ifftn(self.j_sym * fftn(kick, self.grid.d), self.grid.d)
        return u - 1j * w * noise.sigma(u)

    def _mode_sum(self, coef, fields):
        """coef (M,) or (B, M) against fields (M, *shape) -> (*shape) or (B, *shape).

        Accumulated mode by mode rather than via matmul: BLAS kernels round
        differently for different batch shapes, which would break bitwise
        batch-layout independence of per-path results.
        """
        coef = np.asarray(coef, dtype=float)
        m = fields.shape[0]
        if coef.ndim == 1:
            out = np.zeros(fields.shape[1:])
            for j in range(m):
                out += coef[j] * fields[j]
            return out
        out = np.zeros((coef.shape[0],) + fields.shape[1:])
        cview = coef.reshape(coef.shape + (1,) * (fields.ndim - 1))
        for j in range(m):
            out += cview[:, j] * fields[j]
        return out

    # -- main loop ----------------------------------------------------------

    def run(
        self,
        u0: np.ndarray,
        rho1_steps: np.ndarray | None = None,
        rho2_steps: np.ndarray | None = None,
        dW1: np.ndarray | None = None,
        dW2: np.ndarray | None = None,
        collect: Collect | None = None,
        raise_on_blowup: bool = False,
    ) -> RunResult:
        """Advance a batch of states through n_steps.

        u0: (B, *shape).  rho*_steps: (n_steps, M) shared or (B, n_steps, M)
        per row; None means zero control.  dW*: (B, n_steps, M) or None.
        """
        grid, noise = self.grid, self.noise
        collect = collect or Collect()
        u = np.array(u0, dtype=complex)
        if u.shape[1:] != grid.shape:
            raise ValueError(f"u0 trailing shape {u.shape[1:]} != grid shape {grid.shape}")
        b = u.shape[0]
        ns = self.n_steps

        if dW1 is None:
            dW1 = np.zeros((b, ns, noise.m1))
        if dW2 is None:
            dW2 = np.zeros((b, ns, noise.m2))
        if rho1_steps is None:
            rho1_steps = np.zeros((ns, noise.m1))
        if rho2_steps is None:
            rho2_steps = np.zeros((ns, noise.m2))
        if dW1.shape != (b, ns, noise.m1) or dW2.shape != (b, ns, noise.m2):
            raise ValueError("noise increment blocks do not match (batch, n_steps, modes)")
        if rho1_steps.shape not in ((ns, noise.m1), (b, ns, noise.m1)) or rho2_steps.shape not in (
            (ns, noise.m2),
            (b, ns, noise.m2),
        ):
            raise ValueError("control step arrays do not match (n_steps, modes) or (batch, n_steps, modes)")

        need_norms = collect.norms or self._need_running
        track_lr = need_norms
        spatial_axes = tuple(range(1, 1 + grid.d))

        h_norms = np.empty((b, ns + 1)) if need_norms else None
        lr_norms = np.empty((b, ns + 1)) if track_lr else None
        snapshots = np.empty((ns + 1, b) + grid.shape, dtype=complex) if collect.snapshots else None
        cp_set = set(collect.checkpoints or ())
        cp_list = sorted(cp_set)
        cp_mass = np.empty((len(cp_list), b)) if cp_list else None
        cp_gsq = np.empty((len(cp_list), b)) if cp_list else None
        ref = collect.reference
        if ref is not None and ref.shape != (ns + 1,) + grid.shape:
            raise ValueError("reference path shape does not match (n_steps+1,)+grid.shape")

        failed = np.zeros(b, dtype=bool)
        blow_step = np.full(b, -1, dtype=int)
        run_sup_h = None
        run_int_lr = np.zeros(b)
        tau = np.full(b, ns * self.dt)
        tau_hit = np.zeros(b, dtype=bool)

        ref_sup = np.zeros(b) if ref is not None else None
        ref_int = np.zeros(b) if ref is not None else None

        def spatial_h(x):
            return np.sqrt(np.sum(np.abs(x) ** 2, axis=spatial_axes) * grid.dx)

        def spatial_lr(x):
            return (np.sum(np.abs(x) ** self.r, axis=spatial_axes) * grid.dx) ** (1.0 / self.r)

        def record(idx, ucur):
            nonlocal run_sup_h
            hs = spatial_h(ucur)
            bad = ~np.isfinite(hs) & ~failed
            if np.any(bad):
                failed[bad] = True
                blow_step[bad] = idx
                if raise_on_blowup:
                    raise BlowUpError(idx, idx * self.dt)
            if need_norms:
                h_norms[:, idx] = hs
            if track_lr:
                lr_norms[:, idx] = spatial_lr(ucur)
            if run_sup_h is None:
                run_sup_h = hs.copy()
            else:
                run_sup_h = np.maximum(run_sup_h, hs)
            if snapshots is not None:
                snapshots[idx] = ucur
            if idx in cp_set:
                j = cp_list.index(idx)
                cp_mass[j] = hs**2
                if noise.m2:
                    sig = noise.sigma(ucur)
                    gs = np.zeros(b)
                    for gm in noise.g_fields:
                        gs += np.sum(np.abs(gm * sig) ** 2, axis=spatial_axes) * grid.dx
                    cp_gsq[j] = gs
                elif cp_gsq is not None:
                    cp_gsq[j] = 0.0
            if ref is not None:
                diff = ucur - ref[idx]
                ref_sup[:] = np.maximum(ref_sup, spatial_h(diff))
                if idx < ns:  # left endpoint of the next step
                    ref_int[:] = ref_int + spatial_lr(diff) ** self.p * self.dt
            return hs

        # overflow/NaN in a blown-up row is the detection mechanism, not an
        # anomaly; failed rows keep stepping as NaN and are reported at the end
        with np.errstate(over="ignore", invalid="ignore"):
            record(0, u)
            if self._need_running:
                mixed = run_sup_h + run_int_lr ** (1.0 / self.p)
                over = mixed > self.trunc.radius
                tau[over] = 0.0
                tau_hit[over] = True

            for n in range(ns):
                theta = None
                if self._need_running:
                    mixed = run_sup_h + (run_int_lr ** (1.0 / self.p) if np.isfinite(self.p) else 0.0)
                    theta = self.trunc.theta(mixed)
                if track_lr:
                    run_int_lr = run_int_lr + lr_norms[:, n] ** self.p * self.dt

                u = self._half_linear(u)
                u = self._nonlinear(u, theta)
                r1 = rho1_steps[n] if rho1_steps.ndim == 2 else rho1_steps[:, n, :]
                r2 = rho2_steps[n] if rho2_steps.ndim == 2 else rho2_steps[:, n, :]
                u = self._b_substep(u, r1, dW1[:, n, :])
                u = self._g_substep(u, r2, dW2[:, n, :])
                u = self._half_linear(u)

                record(n + 1, u)
                if self._need_running:
                    mixed = run_sup_h + run_int_lr ** (1.0 / self.p)
                    newly = (mixed > self.trunc.radius) & ~tau_hit
                    tau[newly] = (n + 1) * self.dt
                    tau_hit[newly] = True

        mixed_final = None
        if need_norms:
            mixed_final = np.array(
                [
                    h_norms[i].max() + lp_time_integral(lr_norms[i], self.dt, self.p, ns)
                    if not failed[i]
                    else np.nan
                    for i in range(b)
                ]
            )

        ref_mixed = None
        if ref is not None:
            ref_mixed = ref_sup + (ref_int ** (1.0 / self.p) if np.isfinite(self.p) else 0.0)

        return RunResult(
            n_steps=ns,
            dt=self.dt,
            terminal=u if collect.terminal else None,
            h_norms=h_norms if collect.norms else None,
            lr_norms=lr_norms if collect.norms else None,
            mixed_final=mixed_final,
            snapshots=snapshots,
            tau=tau if self.trunc is not None else None,
            tau_hit=tau_hit if self.trunc is not None else None,
            failed=failed,
            blow_step=blow_step,
            cp_mass=cp_mass,
            cp_gsq=cp_gsq,
            ref_mixed=ref_mixed,
        )
