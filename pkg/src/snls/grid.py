"""Periodic grid, complex-valued fields, spectral transforms, and spatial norms.

The continuum problem lives on all of R^d; here it is truncated to the
periodic torus [-L, L)^d with L chosen large relative to the support of the
initial state, so the free Schrodinger flow is exact in the discrete spectral
basis and boundary wrap-around stays negligible (monitored by
`diagnostics.boundary_mass_fraction`).

Transforms are unitary ("ortho" normalization), so Parseval holds exactly
between the cell-volume-weighted field norm and the spectral norm.
"""

from __future__ import annotations

import numpy as np
import scipy.fft

# Worker count only affects speed; scipy.fft output is bitwise independent of
# it (asserted in the test suite), so determinism is unaffected.
_FFT_WORKERS = 1


def set_fft_workers(n: int) -> None:
    global _FFT_WORKERS
    _FFT_WORKERS = max(1, int(n))


def fftn(a: np.ndarray, d: int) -> np.ndarray:
    """Forward transform over the last `d` axes, unitary normalization."""
    axes = tuple(range(a.ndim - d, a.ndim))
    return scipy.fft.fftn(a, axes=axes, norm="ortho", workers=_FFT_WORKERS)


def ifftn(a: np.ndarray, d: int) -> np.ndarray:
    """Inverse transform over the last `d` axes, unitary normalization."""
    axes = tuple(range(a.ndim - d, a.ndim))
    return scipy.fft.ifftn(a, axes=axes, norm="ortho", workers=_FFT_WORKERS)


class GridError(ValueError):
    pass


class Grid:
    """Uniform periodic grid on [-L, L)^d.

    Parameters
    ----------
    d : spatial dimension, 1 <= d <= 3.
    n_per_dim : points per dimension; power of two, >= 8.
    half_width : L > 0; the domain is [-L, L)^d.
    """

    def __init__(self, d: int = 1, n_per_dim: int = 256, half_width: float = 10.0 * np.pi):
        if not 1 <= int(d) <= 3:
            raise GridError(f"grid.d: dimension must be 1, 2 or 3; got {d}")
        n = int(n_per_dim)
        if n < 8 or (n & (n - 1)) != 0:
            raise GridError(f"grid.n: n_per_dim must be a power of two >= 8; got {n_per_dim}")
        L = float(half_width)
        if not (L > 0.0 and np.isfinite(L)):
            raise GridError(f"grid.half_width: must be a positive finite real; got {half_width}")

        self.d = int(d)
        self.n_per_dim = n
        self.half_width = L
        self.shape = (n,) * self.d
        self.size = n**self.d
        self.spacing = 2.0 * L / n
        # cell volume used to weight all discrete norms
        self.dx = self.spacing**self.d

        self.x1d = -L + self.spacing * np.arange(n)
        # standard discrete spectrum for period 2L, mode 0 exactly once
        self.k1d = 2.0 * np.pi * np.fft.fftfreq(n, d=self.spacing)
        self.k_sq = self._build_k_sq()
        self.dealias_mask = self._build_dealias_mask()

    def _build_k_sq(self) -> np.ndarray:
        k2 = np.zeros(self.shape)
        for axis in range(self.d):
            sh = [1] * self.d
            sh[axis] = self.n_per_dim
            k2 = k2 + (self.k1d**2).reshape(sh)
        return k2

    def _build_dealias_mask(self) -> np.ndarray:
        cut = (2.0 / 3.0) * np.abs(self.k1d).max()
        mask = np.ones(self.shape, dtype=bool)
        for axis in range(self.d):
            sh = [1] * self.d
            sh[axis] = self.n_per_dim
            mask &= (np.abs(self.k1d) <= cut).reshape(sh)
        return mask

    def coords(self) -> tuple[np.ndarray, ...]:
        """Meshgrid coordinate arrays, one per dimension."""
        axes = [self.x1d] * self.d
        return tuple(np.meshgrid(*axes, indexing="ij"))

    def radius_sq(self) -> np.ndarray:
        r2 = np.zeros(self.shape)
        for x in self.coords():
            r2 = r2 + x**2
        return r2

    def field(self, data) -> "ComplexField":
        return ComplexField(self, data)

    def zeros(self) -> "ComplexField":
        return ComplexField(self, np.zeros(self.shape, dtype=complex))

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Grid)
            and self.d == other.d
            and self.n_per_dim == other.n_per_dim
            and self.half_width == other.half_width
        )

    def __repr__(self) -> str:
        return f"Grid(d={self.d}, n_per_dim={self.n_per_dim}, half_width={self.half_width})"


class ComplexField:
    """Complex field sampled on a grid. Data is read-only after construction."""

    __slots__ = ("grid", "data")

    def __init__(self, grid: Grid, data):
        arr = np.asarray(data, dtype=complex)
        if arr.shape != grid.shape:
            if arr.size == grid.size:
                arr = arr.reshape(grid.shape)
            else:
                raise GridError(
                    f"field data has {arr.size} entries; grid has {grid.size} points"
                )
        arr = np.array(arr, copy=True)
        arr.setflags(write=False)
        self.grid = grid
        self.data = arr

    def copy_data(self) -> np.ndarray:
        return np.array(self.data, copy=True)

    def __add__(self, other: "ComplexField") -> "ComplexField":
        return ComplexField(self.grid, self.data + other.data)

    def __sub__(self, other: "ComplexField") -> "ComplexField":
        return ComplexField(self.grid, self.data - other.data)

    def __mul__(self, c) -> "ComplexField":
        return ComplexField(self.grid, self.data * c)

    __rmul__ = __mul__


class SpectralField:
    """Spectral coefficients of a ComplexField (unitary FFT ordering)."""

    __slots__ = ("grid", "data")

    def __init__(self, grid: Grid, data):
        arr = np.asarray(data, dtype=complex)
        if arr.shape != grid.shape:
            raise GridError(
                f"spectrum data shape {arr.shape} does not match grid shape {grid.shape}"
            )
        arr = np.array(arr, copy=True)
        arr.setflags(write=False)
        self.grid = grid
        self.data = arr


def to_spectrum(f: ComplexField) -> SpectralField:
    return SpectralField(f.grid, fftn(f.data, f.grid.d))


def from_spectrum(s: SpectralField) -> ComplexField:
    return ComplexField(s.grid, ifftn(s.data, s.grid.d))


def norm_l2(f: ComplexField | SpectralField) -> float:
    """Cell-volume weighted L2 norm; identical for a field and its spectrum."""
    return float(np.sqrt(np.sum(np.abs(f.data) ** 2) * f.grid.dx))


def norm_lr(f: ComplexField, r: float) -> float:
    """(sum |f|^r dx)^(1/r) for r >= 2; sup-norm for r = inf."""
    if not r >= 2.0:
        raise GridError(f"norm_lr: exponent r must satisfy r >= 2; got {r}")
    a = np.abs(f.data)
    if np.isinf(r):
        return float(a.max()) if a.size else 0.0
    return float((np.sum(a**r) * f.grid.dx) ** (1.0 / r))


def inner(f: ComplexField, g: ComplexField) -> complex:
    """Discrete H inner product <f, g> = sum conj(f) g dx."""
    if f.grid is not g.grid and f.grid != g.grid:
        raise GridError("inner: fields live on different grids")
    return complex(np.sum(np.conj(f.data) * g.data) * f.grid.dx)
