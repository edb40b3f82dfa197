"""Time-indexed solution paths and the mixed space-time norm.

The solution space norm is the sum of the sup-in-time H norm and the
L^p-in-time L^r-in-space norm; time integrals use left-endpoint rectangles on
the solver's step sequence, which makes t -> norm(t) nondecreasing (the
property the stopping-time machinery relies on).
"""

from __future__ import annotations

import struct

import numpy as np

from .grid import ComplexField, Grid

_DUMP_MAGIC = b"SNLSFLD1"


def lp_time_integral(values: np.ndarray, dt: float, p: float, upto: int) -> float:
    """(sum_{i<upto} values_i^p dt)^(1/p); sup over i <= upto for p = inf."""
    if np.isinf(p):
        return float(values[: upto + 1].max()) if upto >= 0 else 0.0
    if upto <= 0:
        return 0.0
    return float((np.sum(values[:upto] ** p) * dt) ** (1.0 / p))


class Trajectory:
    """Uniform-step path of fields with cached per-step spatial norms."""

    def __init__(self, grid: Grid, times: np.ndarray, fields: np.ndarray, r: float, meta: dict | None = None):
        times = np.asarray(times, dtype=float)
        fields = np.asarray(fields, dtype=complex)
        if fields.shape != (times.size,) + grid.shape:
            raise ValueError(
                f"fields shape {fields.shape} does not match ({times.size},) + {grid.shape}"
            )
        if times.size < 2:
            raise ValueError("a trajectory needs at least two time points")
        steps = np.diff(times)
        if not np.all(steps > 0):
            raise ValueError("times must be strictly increasing")
        if not np.allclose(steps, steps[0], rtol=1e-12, atol=1e-15):
            raise ValueError("times must be uniformly spaced")
        self.grid = grid
        self.times = times
        self.fields = fields
        self.dt = float(steps[0])
        self.r = float(r)
        self.meta = dict(meta or {})
        flat = fields.reshape(times.size, -1)
        self.h_norms = np.sqrt(np.sum(np.abs(flat) ** 2, axis=1) * grid.dx)
        self.lr_norms = (np.sum(np.abs(flat) ** self.r, axis=1) * grid.dx) ** (1.0 / self.r)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def field_at(self, i: int) -> ComplexField:
        return ComplexField(self.grid, self.fields[i])

    def terminal(self) -> ComplexField:
        return self.field_at(-1)

    def index_of(self, t: float) -> int:
        if t < -1e-12 or t > self.horizon + 1e-12:
            raise ValueError(f"time {t} outside stored range [0, {self.horizon}]")
        return int(round(t / self.dt))

    def mixed_norm(self, t: float, p: float, r: float | None = None) -> float:
        """sup_{s<=t} ||u(s)||_H + (int_0^t ||u(s)||_r^p ds)^(1/p)."""
        j = self.index_of(t)
        if r is None or r == self.r:
            lr = self.lr_norms
        else:
            flat = self.fields.reshape(self.times.size, -1)
            lr = (np.sum(np.abs(flat) ** r, axis=1) * self.grid.dx) ** (1.0 / r)
        sup_h = float(self.h_norms[: j + 1].max())
        return sup_h + lp_time_integral(lr, self.dt, p, j)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,h_norm,lr_norm\n")
            for t, h, lr in zip(self.times, self.h_norms, self.lr_norms):
                fh.write(f"{t:.17g},{h:.17g},{lr:.17g}\n")

    def dump_fields(self, path) -> None:
        """Binary dump: magic, u32 d, u32 n_per_dim, f64 half_width,
        u64 n_times, then times (f64) and fields (complex128, row-major)."""
        g = self.grid
        with open(path, "wb") as fh:
            fh.write(_DUMP_MAGIC)
            fh.write(struct.pack("<IIdQ", g.d, g.n_per_dim, g.half_width, self.times.size))
            fh.write(self.times.astype("<f8").tobytes())
            fh.write(np.ascontiguousarray(self.fields, dtype="<c16").tobytes())


def load_fields(path) -> Trajectory:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _DUMP_MAGIC:
            raise ValueError("not a field dump file")
        d, n, hw, n_times = struct.unpack("<IIdQ", fh.read(24))
        grid = Grid(d=d, n_per_dim=n, half_width=hw)
        times = np.frombuffer(fh.read(8 * n_times), dtype="<f8")
        raw = np.frombuffer(fh.read(), dtype="<c16")
    fields = raw.reshape((n_times,) + grid.shape)
    return Trajectory(grid, times, fields, r=2.0)


def mixed_norm(traj: Trajectory, t: float, p: float, r: float) -> float:
    return traj.mixed_norm(t, p, r)


def mixed_norm_of_difference(a: Trajectory, b: Trajectory, p: float, r: float) -> float:
    """Mixed norm of the pathwise difference over the common horizon."""
    if a.times.size != b.times.size or abs(a.dt - b.dt) > 1e-12 * a.dt:
        raise ValueError("trajectories are not on the same time grid")
    diff = a.fields - b.fields
    flat = diff.reshape(a.times.size, -1)
    h = np.sqrt(np.sum(np.abs(flat) ** 2, axis=1) * a.grid.dx)
    lr = (np.sum(np.abs(flat) ** r, axis=1) * a.grid.dx) ** (1.0 / r)
    return float(h.max()) + lp_time_integral(lr, a.dt, p, a.n_steps)
