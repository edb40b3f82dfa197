"""Self-describing run configuration: defaults, validation, round-tripping,
and construction of solver objects from a config dict.

`load` produces a fully populated canonical dict (user values deep-merged
over defaults) so that parse(serialize(cfg)) == cfg holds exactly; every
cross-field constraint is checked at load time with a message naming the
offending key.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .grid import ComplexField, Grid, GridError
from .ldp import EventSpec
from .operators import ModelError, ModelParams, NoiseModel, default_mode_specs
from .skeleton import Control
from .stepping import MODES, TruncationSpec


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "grid": {"d": 1, "n": 256, "half_width": 10.0 * math.pi},
    "model": {"alpha": 3.0, "lambda": 1.0, "beta": 0.0, "epsilon": 0.1},
    "noise": {"m1": 4, "m2": 4, "b_modes": None, "g_modes": None, "g_shape": "saturated"},
    "solver": {"dt": 1e-3, "t_final": 1.0, "mode": "unitary", "dealias": False},
    "initial": {"kind": "gaussian", "amplitude": 1.0, "width": 2.0, "center": 0.0, "velocity": 0.0, "mode": 1},
    "control": {"segments": 16, "rho1": None, "rho2": None},
    "event": None,
    "truncation": {"radius": 100.0},
    "sweep": {"epsilons": [0.1], "n_paths": 100},
    "rate": {
        "segments": None,
        "penalty0": 10.0,
        "penalty_factor": 10.0,
        "rounds": 5,
        "feas_tol": 1e-3,
        "fd_step": 1e-4,
        "maxiter_inner": 200,
        "budget": None,
    },
    "diagnostics": {
        "strichartz": {"n_samples": 20, "p": None, "r": None, "t_final": 0.5, "dt": 0.01, "preset": "smooth", "max_ratio": 25.0},
        "ito_strat": {"dts": [4e-3, 2e-3, 1e-3, 5e-4], "t_final": 0.5, "slope_range": [0.75, 1.25]},
        "skeleton_order": {"dt_coarse": 4e-3, "t_final": 0.256, "range": [1.7, 2.3]},
        "sde_order": {"dt_coarse": 4e-3, "t_final": 0.256, "n_paths": 8, "range": [0.4, 0.7]},
        "weak": {"epsilons": [0.2, 0.1, 0.05], "delta": 0.1, "n_paths": 200},
        "yosida": {"mus": [1e1, 1e2, 1e3, 1e4], "tail_tol": 1e-3},
    },
    "seed": 12345,
    "threads": 1,
    "output": {"fields": False},
}


def _deep_merge(base, override, path=""):
    if override is None and isinstance(base, dict):
        # explicit null replaces an entire optional block (e.g. event)
        return None
    if not isinstance(base, dict):
        return copy.deepcopy(override)
    if not isinstance(override, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(override).__name__}")
    out = copy.deepcopy(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"{path + '.' if path else ''}{k}: unknown config key")
        out[k] = _deep_merge(base[k], v, f"{path + '.' if path else ''}{k}")
    return out


def merge_defaults(user: dict) -> dict:
    return _deep_merge(DEFAULTS, user or {})


def parse(text: str) -> dict:
    try:
        user = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    cfg = merge_defaults(user)
    validate(cfg)
    return cfg


def serialize(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def load(path) -> dict:
    with open(path) as fh:
        return parse(fh.read())


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(serialize(cfg).encode()).hexdigest()[:10]


def apply_override(cfg: dict, dotted_key: str, raw_value: str) -> dict:
    """--set key=value: dotted path, value parsed as JSON when possible."""
    try:
        value = json.loads(raw_value)
    except json.JSONDecodeError:
        value = raw_value
    out = copy.deepcopy(cfg)
    node = out
    parts = dotted_key.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"{dotted_key}: no such config key")
        if node[part] is None:
            node[part] = {}
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict) or (leaf not in node and dotted_key.split(".")[0] != "event"):
        raise ConfigError(f"{dotted_key}: no such config key")
    node[leaf] = value
    return out


def validate(cfg: dict) -> None:
    g = cfg["grid"]
    if g["d"] not in (1, 2, 3):
        raise ConfigError(f"grid.d: must be 1, 2 or 3; got {g['d']}")
    n = g["n"]
    if not isinstance(n, int) or n < 8 or (n & (n - 1)) != 0:
        raise ConfigError(f"grid.n: must be a power of two >= 8; got {n}")
    if not g["half_width"] > 0:
        raise ConfigError(f"grid.half_width: must be > 0; got {g['half_width']}")

    m = cfg["model"]
    d = g["d"]
    if not 1.0 < m["alpha"] < 1.0 + 4.0 / d:
        raise ConfigError(
            f"model.alpha: subcritical well-posedness requires 1 < alpha < 1 + 4/d = {1.0 + 4.0 / d}; "
            f"got {m['alpha']} at d={d}"
        )
    if m["lambda"] not in (-1, -1.0, 0, 0.0, 1, 1.0):
        raise ConfigError(f"model.lambda: must be -1, 0 or 1; got {m['lambda']}")
    if m["beta"] < 0:
        raise ConfigError(f"model.beta: must be >= 0; got {m['beta']}")
    if not 0.0 <= m["epsilon"] <= 1.0:
        raise ConfigError(f"model.epsilon: must lie in [0, 1]; got {m['epsilon']}")

    s = cfg["solver"]
    if not s["dt"] > 0:
        raise ConfigError(f"solver.dt: must be > 0; got {s['dt']}")
    if not s["t_final"] > 0:
        raise ConfigError(f"solver.t_final: must be > 0; got {s['t_final']}")
    ns = s["t_final"] / s["dt"]
    if abs(ns - round(ns)) > 1e-9 or round(ns) < 1:
        raise ConfigError(
            f"solver.t_final: must be a positive integer multiple of solver.dt; got {s['t_final']} / {s['dt']}"
        )
    if s["mode"] not in MODES:
        raise ConfigError(f"solver.mode: must be one of {MODES}; got {s['mode']!r}")

    nz = cfg["noise"]
    for key in ("m1", "m2"):
        if not isinstance(nz[key], int) or nz[key] < 0:
            raise ConfigError(f"noise.{key}: must be a non-negative integer; got {nz[key]}")
    if nz["g_shape"] not in ("linear", "saturated"):
        raise ConfigError(f"noise.g_shape: must be 'linear' or 'saturated'; got {nz['g_shape']!r}")

    c = cfg["control"]
    if not isinstance(c["segments"], int) or c["segments"] < 1:
        raise ConfigError(f"control.segments: must be a positive integer; got {c['segments']}")

    sw = cfg["sweep"]
    eps = sw["epsilons"]
    if not eps or any(not e > 0 for e in eps):
        raise ConfigError(f"sweep.epsilons: must be a non-empty list of positive reals; got {eps}")
    if any(b > a for a, b in zip(eps, eps[1:])):
        raise ConfigError("sweep.epsilons: must be in descending order")
    if not isinstance(sw["n_paths"], int) or sw["n_paths"] < 1:
        raise ConfigError(f"sweep.n_paths: must be a positive integer; got {sw['n_paths']}")

    if not cfg["truncation"]["radius"] > 0:
        raise ConfigError(f"truncation.radius: must be > 0; got {cfg['truncation']['radius']}")

    seed = cfg["seed"]
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed: must be an integer in [0, 2^64); got {seed}")
    th = cfg["threads"]
    if th is not None and (not isinstance(th, int) or th < 1):
        raise ConfigError(f"threads: must be a positive integer or null; got {th}")

    ev = cfg["event"]
    if ev is not None:
        kind = ev.get("kind")
        if kind not in ("terminal_ball_exit", "terminal_target", "functional_threshold"):
            raise ConfigError(f"event.kind: unknown kind {kind!r}")
        if kind == "terminal_ball_exit" and not ev.get("radius", 0) > 0:
            raise ConfigError("event.radius: must be > 0 for terminal_ball_exit")
        if kind == "terminal_target" and not ev.get("tol", 0) > 0:
            raise ConfigError("event.tol: must be > 0 for terminal_target")
        if kind == "functional_threshold" and "level" not in ev:
            raise ConfigError("event.level: required for functional_threshold")

    init = cfg["initial"]
    if init["kind"] not in ("gaussian", "fourier_mode"):
        raise ConfigError(f"initial.kind: must be 'gaussian' or 'fourier_mode'; got {init['kind']!r}")
    if init["kind"] == "gaussian" and not init["width"] > 0:
        raise ConfigError(f"initial.width: must be > 0; got {init['width']}")

    # cross-checks that require model arithmetic (admissibility of (p, r))
    try:
        ModelParams(alpha=float(m["alpha"]), lam=float(m["lambda"]), beta=float(m["beta"]),
                    epsilon=float(m["epsilon"]), d=d)
    except ModelError as e:
        raise ConfigError(f"model: {e}") from e


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

@dataclass
class Setup:
    cfg: dict
    grid: Grid
    params: ModelParams
    noise: NoiseModel
    u0: ComplexField
    control: Control
    event: EventSpec | None
    trunc: TruncationSpec
    dt: float
    t_final: float
    mode: str
    seed: int
    threads: int


def initial_field(grid: Grid, init: dict) -> ComplexField:
    if init["kind"] == "gaussian":
        a, w, c, v = init["amplitude"], init["width"], init["center"], init["velocity"]
        r2 = np.zeros(grid.shape)
        for x in grid.coords():
            r2 = r2 + (x - c) ** 2
        data = a * np.exp(-r2 / (2.0 * w**2))
        if v:
            data = data * np.exp(1j * v * grid.coords()[0])
        return ComplexField(grid, data)
    j = init["mode"]
    modes = (j,) * grid.d if np.isscalar(j) else tuple(j)
    phase = np.zeros(grid.shape)
    for axis, (jm, x) in enumerate(zip(modes, grid.coords())):
        phase = phase + (np.pi * jm / grid.half_width) * x
    return ComplexField(grid, init["amplitude"] * np.exp(1j * phase))


def named_field(grid: Grid, name, setup_u0: ComplexField, t_final: float) -> np.ndarray:
    """Fields nameable inside event specs: zero, the initial state, or its
    exact free-flow image at the horizon."""
    if isinstance(name, str):
        if name == "zero":
            return np.zeros(grid.shape, dtype=complex)
        if name == "initial":
            return setup_u0.data.copy()
        if name == "free":
            from .grid import fftn, ifftn

            return ifftn(np.exp(-1j * grid.k_sq * t_final) * fftn(setup_u0.data, grid.d), grid.d)
        raise ConfigError(f"event field name {name!r} not recognized (zero|initial|free)")
    arr = np.asarray(name, dtype=complex)
    if arr.shape != grid.shape:
        raise ConfigError("explicit event field does not match the grid shape")
    return arr


def build_event(cfg: dict, grid: Grid, u0: ComplexField) -> EventSpec | None:
    ev = cfg["event"]
    if ev is None:
        return None
    t_final = cfg["solver"]["t_final"]
    kind = ev["kind"]
    if kind == "terminal_ball_exit":
        return EventSpec(kind, t_final, center=named_field(grid, ev.get("center", "free"), u0, t_final),
                         radius=ev["radius"])
    if kind == "terminal_target":
        return EventSpec(kind, t_final, target=named_field(grid, ev.get("target", "free"), u0, t_final),
                         tol=ev["tol"])
    return EventSpec(
        kind,
        t_final,
        observable=ev["observable"],
        level=ev["level"],
        direction=ev.get("direction", "ge"),
        mode=ev.get("mode"),
    )


def build_setup(cfg: dict) -> Setup:
    validate(cfg)
    g = cfg["grid"]
    grid = Grid(d=g["d"], n_per_dim=g["n"], half_width=g["half_width"])
    m = cfg["model"]
    params = ModelParams(alpha=float(m["alpha"]), lam=float(m["lambda"]), beta=float(m["beta"]),
                         epsilon=float(m["epsilon"]), d=g["d"])
    nz = cfg["noise"]
    b_specs = nz["b_modes"] if nz["b_modes"] is not None else default_mode_specs(grid, nz["m1"])
    g_specs = nz["g_modes"] if nz["g_modes"] is not None else default_mode_specs(grid, nz["m2"])
    noise = NoiseModel(grid, b_specs, g_specs, nz["g_shape"])
    u0 = initial_field(grid, cfg["initial"])
    s = cfg["solver"]
    c = cfg["control"]
    segs = c["segments"]
    rho1 = np.asarray(c["rho1"], dtype=float) if c["rho1"] is not None else np.zeros((noise.m1, segs))
    rho2 = np.asarray(c["rho2"], dtype=float) if c["rho2"] is not None else np.zeros((noise.m2, segs))
    if rho1.shape != (noise.m1, segs):
        raise ConfigError(
            f"control.rho1: expected shape ({noise.m1}, {segs}); got {list(rho1.shape)}"
        )
    if rho2.shape != (noise.m2, segs):
        raise ConfigError(
            f"control.rho2: expected shape ({noise.m2}, {segs}); got {list(rho2.shape)}"
        )
    control = Control(rho1, rho2, s["t_final"])
    event = build_event(cfg, grid, u0)
    trunc = TruncationSpec(cfg["truncation"]["radius"])
    threads = cfg["threads"] if cfg["threads"] is not None else 1
    return Setup(
        cfg=cfg,
        grid=grid,
        params=params,
        noise=noise,
        u0=u0,
        control=control,
        event=event,
        trunc=trunc,
        dt=float(s["dt"]),
        t_final=float(s["t_final"]),
        mode=s["mode"],
        seed=int(cfg["seed"]),
        threads=int(threads),
    )
