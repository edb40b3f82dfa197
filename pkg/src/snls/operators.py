"""Deterministic operators of the equation.

Covers the linear part (spectral multiplication by |k|^2), the power
nonlinearity, the smoothing resolvent operator, the finite families of real
multiplier fields driving the rotational (Stratonovich-type) noise channel and
the Lipschitz noise channel, the drift correction that converts the
rotational channel to Ito form, and admissible exponent-pair arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .grid import ComplexField, Grid, fftn, ifftn


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# admissible exponent pairs: 2/p = d/2 - d/r
# ---------------------------------------------------------------------------

def _r_range_ok(d: int, r: float) -> bool:
    if np.isinf(r):
        return d == 1
    if r < 2.0:
        return False
    if d == 1:
        return True
    if d == 2:
        return True  # r < inf already guaranteed
    return r <= 2.0 * d / (d - 2.0)


def admissible_p(d: int, r: float) -> float:
    """The unique p with 2/p = d/2 - d/r; p = inf when r = 2."""
    if not _r_range_ok(d, r):
        raise ModelError(f"r={r} is outside the admissible range for d={d}")
    if r == 2.0:
        return float("inf")
    if np.isinf(r):
        if d == 2:
            raise ModelError("(p, r) = (2, inf) is excluded in dimension 2")
        return 4.0 / d  # limit of 4r/(d(r-2)) as r -> inf
    fr = Fraction(r).limit_denominator(10**9)
    p = Fraction(4) * fr / (Fraction(d) * (fr - 2))
    return float(p)


@dataclass(frozen=True)
class AdmissiblePair:
    """Exponent pair (p, r) with 2/p = d/2 - d/r in dimension d."""

    p: float
    r: float
    d: int

    def __post_init__(self):
        if not _r_range_ok(self.d, self.r):
            raise ModelError(f"r={self.r} is outside the admissible range for d={self.d}")
        p_expect = admissible_p(self.d, self.r)
        if np.isinf(p_expect) != np.isinf(self.p) or (
            not np.isinf(p_expect) and abs(self.p - p_expect) > 1e-9 * max(1.0, p_expect)
        ):
            raise ModelError(
                f"(p, r) = ({self.p}, {self.r}) violates 2/p = d/2 - d/r at d={self.d}; "
                f"expected p = {p_expect}"
            )
        if (self.p, self.r, self.d) == (2.0, float("inf"), 2):
            raise ModelError("(p, r, d) = (2, inf, 2) is excluded")

    @classmethod
    def for_r(cls, d: int, r: float) -> "AdmissiblePair":
        return cls(admissible_p(d, r), float(r), int(d))


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Nonlinearity exponent, focusing sign, damping, and noise intensity.

    ``lam`` may be +1 (defocusing), -1 (focusing), or 0 to disable the
    nonlinearity entirely (used by the linear reductions).
    """

    alpha: float = 3.0
    lam: float = 1.0
    beta: float = 0.0
    epsilon: float = 0.1
    d: int = 1

    def __post_init__(self):
        if self.lam not in (-1.0, 0.0, 1.0):
            raise ModelError(f"model.lambda: must be -1, 0 or +1; got {self.lam}")
        if not (1.0 < self.alpha < 1.0 + 4.0 / self.d):
            raise ModelError(
                f"model.alpha: subcritical range requires 1 < alpha < 1 + 4/d "
                f"= {1.0 + 4.0 / self.d}; got {self.alpha} at d={self.d}"
            )
        if self.beta < 0.0:
            raise ModelError(f"model.beta: damping must be >= 0; got {self.beta}")
        if not (0.0 <= self.epsilon <= 1.0):
            raise ModelError(f"model.epsilon: noise intensity must lie in [0, 1]; got {self.epsilon}")

    @property
    def r(self) -> float:
        return self.alpha + 1.0

    @property
    def p(self) -> float:
        return admissible_p(self.d, self.r)

    def pair(self) -> AdmissiblePair:
        return AdmissiblePair.for_r(self.d, self.r)


# ---------------------------------------------------------------------------
# noise coefficient operators
# ---------------------------------------------------------------------------

def build_profile(grid: Grid, spec: dict) -> np.ndarray:
    """Real multiplier field from a profile spec.

    kinds: ``bump`` c*exp(-|x|^2/w^2), ``constant`` c,
    ``cosine`` c*cos(j * pi/L * x_1).
    """
    kind = spec.get("kind", "bump")
    c = float(spec.get("amplitude", 1.0))
    if kind == "constant":
        return np.full(grid.shape, c)
    if kind == "bump":
        w = float(spec.get("width", grid.half_width / 2.0))
        if w <= 0:
            raise ModelError(f"profile width must be > 0; got {w}")
        return c * np.exp(-grid.radius_sq() / w**2)
    if kind == "cosine":
        j = int(spec.get("harmonic", 1))
        x = grid.coords()[0]
        return c * np.cos(j * np.pi / grid.half_width * x)
    raise ModelError(f"unknown profile kind {kind!r}")


def default_mode_specs(grid: Grid, m: int) -> list[dict]:
    # amplitudes 2^-m give sum_m ||B_m||_inf^2 = (1 - 4^-m)/3 < 1/3
    return [
        {"kind": "bump", "amplitude": 2.0 ** -(j + 1), "width": grid.half_width / (j + 2)}
        for j in range(m)
    ]


class NoiseModel:
    """Finite families of real multiplier fields for the two noise channels.

    ``b_fields`` drive the rotational channel (each induces a self-adjoint
    multiplication operator); ``g_fields`` combine with the pointwise shape
    ``sigma`` (linear u or saturated u/(1+|u|^2)) to form the Lipschitz
    channel.
    """

    def __init__(self, grid: Grid, b_specs: list[dict], g_specs: list[dict], g_shape: str = "saturated"):
        if g_shape not in ("linear", "saturated"):
            raise ModelError(f"noise.g_shape: must be 'linear' or 'saturated'; got {g_shape!r}")
        self.grid = grid
        self.b_specs = [dict(s) for s in b_specs]
        self.g_specs = [dict(s) for s in g_specs]
        self.g_shape = g_shape
        self.b_fields = np.array([build_profile(grid, s) for s in b_specs]).reshape(
            (len(b_specs),) + grid.shape
        )
        self.g_fields = np.array([build_profile(grid, s) for s in g_specs]).reshape(
            (len(g_specs),) + grid.shape
        )
        # recorded constants: discrete analogue of the summability assumption
        self.b_sup_norms = np.array([np.abs(f).max() for f in self.b_fields])
        self.g_sup_norms = np.array([np.abs(f).max() for f in self.g_fields])
        self.sum_b_sup_sq = float(np.sum(self.b_sup_norms**2))
        # sup |sigma'| = 1 for both shapes; aggregate Lipschitz constant of G
        self.lipschitz_bound = float(np.sqrt(np.sum(self.g_sup_norms**2)))
        self.linear_growth = (0.0, self.lipschitz_bound)  # (C1, C2); sigma(0) = 0
        self.sum_b_sq = np.sum(self.b_fields**2, axis=0) if len(b_specs) else np.zeros(grid.shape)

    @property
    def m1(self) -> int:
        return len(self.b_specs)

    @property
    def m2(self) -> int:
        return len(self.g_specs)

    @classmethod
    def default(cls, grid: Grid, m1: int = 4, m2: int = 4, g_shape: str = "saturated") -> "NoiseModel":
        return cls(grid, default_mode_specs(grid, m1), default_mode_specs(grid, m2), g_shape)

    @classmethod
    def silent(cls, grid: Grid) -> "NoiseModel":
        return cls(grid, [], [], "linear")

    def to_config(self) -> dict:
        return {"b_modes": self.b_specs, "g_modes": self.g_specs, "g_shape": self.g_shape}

    @classmethod
    def from_config(cls, grid: Grid, cfg: dict) -> "NoiseModel":
        return cls(grid, cfg.get("b_modes", []), cfg.get("g_modes", []), cfg.get("g_shape", "saturated"))

    def sigma(self, u: np.ndarray) -> np.ndarray:
        if self.g_shape == "linear":
            return u
        return u / (1.0 + np.abs(u) ** 2)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def apply_A(f: ComplexField) -> ComplexField:
    """Negative Laplacian: spectral multiplication by |k|^2."""
    g = f.grid
    return ComplexField(g, ifftn(g.k_sq * fftn(f.data, g.d), g.d))


def nonlinearity(f: ComplexField, params: ModelParams) -> ComplexField:
    """Pointwise lam * |u|^(alpha-1) * u."""
    u = f.data
    return ComplexField(f.grid, params.lam * np.abs(u) ** (params.alpha - 1.0) * u)


def yosida_symbol(grid: Grid, mu: float) -> np.ndarray:
    if not mu > 0.0:
        raise ModelError(f"yosida: mu must be > 0; got {mu}")
    return mu / (mu + grid.k_sq)


def yosida(f: ComplexField, mu: float) -> ComplexField:
    """Smoothing resolvent mu*(mu*I - Laplacian)^(-1); an L2 contraction."""
    g = f.grid
    return ComplexField(g, ifftn(yosida_symbol(g, mu) * fftn(f.data, g.d), g.d))


def apply_B(f: ComplexField, noise: NoiseModel, m: int) -> ComplexField:
    if not 0 <= m < noise.m1:
        raise ModelError(f"B mode index {m} out of range [0, {noise.m1})")
    return ComplexField(f.grid, noise.b_fields[m] * f.data)


def apply_B_full(f: ComplexField, noise: NoiseModel, y) -> ComplexField:
    """Sum_m y_m * B_m(x) * u; linear in both the field and y."""
    y = np.asarray(y, dtype=float)
    if y.shape != (noise.m1,):
        raise ModelError(f"coefficient vector must have length {noise.m1}; got shape {y.shape}")
    phase = np.tensordot(y, noise.b_fields, axes=(0, 0)) if noise.m1 else np.zeros(f.grid.shape)
    return ComplexField(f.grid, phase * f.data)


def apply_G(f: ComplexField, noise: NoiseModel, m: int) -> ComplexField:
    if not 0 <= m < noise.m2:
        raise ModelError(f"G mode index {m} out of range [0, {noise.m2})")
    return ComplexField(f.grid, noise.g_fields[m] * noise.sigma(f.data))


def apply_G_full(f: ComplexField, noise: NoiseModel, y) -> ComplexField:
    y = np.asarray(y, dtype=float)
    if y.shape != (noise.m2,):
        raise ModelError(f"coefficient vector must have length {noise.m2}; got shape {y.shape}")
    w = np.tensordot(y, noise.g_fields, axes=(0, 0)) if noise.m2 else np.zeros(f.grid.shape)
    return ComplexField(f.grid, w * noise.sigma(f.data))


def stratonovich_correction(f: ComplexField, noise: NoiseModel) -> ComplexField:
    """Drift (1/2) sum_m B_m(x)^2 u converting the rotational channel to Ito form."""
    return ComplexField(f.grid, 0.5 * noise.sum_b_sq * f.data)
