"""Monte Carlo estimation of event probabilities across a noise-intensity
grid, with Wilson intervals and -eps*log(p) tables.

Paths are addressed by (seed_base, path_index) through counter-based streams,
generated and stepped in fixed-size chunks; threads only distribute whole
chunks and results are folded in ascending chunk order, so the tally is
independent of the thread count and of how a sweep is split across runs.
Zero-hit rows are censored (no extrapolation).
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .grid import ComplexField
from .ldp import EventSpec
from .operators import ModelParams, NoiseModel
from .skeleton import Control
from .stochastic import run_paths

log = logging.getLogger(__name__)

CHUNK = 2048  # fixed: chunk layout must not depend on thread count


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    n_paths: int
    hits: int
    failed: int
    p_hat: float
    ci_lo: float
    ci_hi: float
    eps_log_p: float | None
    wall_time: float

    @property
    def censored(self) -> bool:
        return self.eps_log_p is None


@dataclass(frozen=True)
class SweepResult:
    rows: tuple

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epsilon,n_paths,hits,p_hat,ci_lo,ci_hi,eps_log_p,failed\n")
            for r in self.rows:
                elp = "" if r.eps_log_p is None else f"{r.eps_log_p:.17g}"
                fh.write(
                    f"{r.epsilon:.17g},{r.n_paths},{r.hits},{r.p_hat:.17g},"
                    f"{r.ci_lo:.17g},{r.ci_hi:.17g},{elp},{r.failed}\n"
                )


def wilson_interval(hits: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval; stays informative in the rare-event regime."""
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = (z / denom) * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    lo = 0.0 if hits == 0 else max(0.0, center - half)  # analytically exact endpoints
    hi = 1.0 if hits == n else min(1.0, center + half)
    return lo, hi


def _row_from_tally(eps: float, n_paths: int, hits: int, failed: int, wall: float) -> SweepRow:
    n_valid = n_paths - failed
    p_hat = hits / n_valid if n_valid else 0.0
    ci_lo, ci_hi = wilson_interval(hits, n_valid) if n_valid else (0.0, 1.0)
    elp = -eps * math.log(p_hat) if hits > 0 else None
    return SweepRow(eps, n_paths, hits, failed, p_hat, ci_lo, ci_hi, elp, wall)


def estimate_probability(
    u0: ComplexField,
    ctrl: Control | None,
    params: ModelParams,
    noise: NoiseModel,
    event: EventSpec,
    eps: float,
    n_paths: int,
    seed_base: int,
    dt: float,
    t_final: float,
    *,
    mode: str = "unitary",
    threads: int = 1,
    path_offset: int = 0,
    reference: np.ndarray | None = None,
    ref_threshold: float | None = None,
) -> SweepRow:
    """Hit frequency of the event over independent seeded paths at one eps.

    Paths use indices path_offset .. path_offset + n_paths - 1, so disjoint
    half-sweeps tile a full sweep exactly.  With `reference`/`ref_threshold`
    set, the event is instead mixed-norm-distance-to-reference >= threshold
    (used by the weak convergence probe).
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if reference is not None and ref_threshold is None:
        raise ValueError("ref_threshold is required with a reference path")
    t0 = time.perf_counter()
    starts = list(range(0, n_paths, CHUNK))

    def work(lo: int):
        hi = min(lo + CHUNK, n_paths)
        from .stepping import Collect

        if reference is not None:
            coll = Collect(terminal=False, reference=reference)
        else:
            coll = event.needs()
        res = run_paths(
            u0, ctrl, params, noise, seed_base,
            range(path_offset + lo, path_offset + hi), dt, t_final,
            mode=mode, eps=eps, collect=coll,
        )
        ok = ~res.failed
        if reference is not None:
            ind = res.ref_mixed >= ref_threshold
        else:
            ind = event.indicator_batch(res, u0.grid)
        return int(np.sum(ind & ok)), int(np.sum(~ok))

    if threads and threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(lo) for lo in starts]
    hits = sum(p[0] for p in parts)
    failed = sum(p[1] for p in parts)
    if failed > 0.001 * n_paths:
        log.warning("%.2f%% of paths blew up and were excluded", 100.0 * failed / n_paths)
    return _row_from_tally(eps, n_paths, hits, failed, time.perf_counter() - t0)


def epsilon_sweep(
    u0: ComplexField,
    ctrl: Control | None,
    params: ModelParams,
    noise: NoiseModel,
    event: EventSpec,
    eps_list,
    n_paths: int,
    seed_base: int,
    dt: float,
    t_final: float,
    *,
    mode: str = "unitary",
    threads: int = 1,
) -> SweepResult:
    """One row per eps; rows are independent (paths reuse the same indices)."""
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list):
        raise ValueError("eps values must be positive")
    if any(b > a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be in descending order")
    rows = tuple(
        estimate_probability(
            u0, ctrl, params, noise, event, e, n_paths, seed_base, dt, t_final,
            mode=mode, threads=threads,
        )
        for e in eps_list
    )
    return SweepResult(rows)


def merge_rows(a: SweepRow, b: SweepRow) -> SweepRow:
    """Fold two disjoint half-sweeps of the same eps into one tally."""
    if a.epsilon != b.epsilon:
        raise ValueError("cannot merge rows with different eps")
    return _row_from_tally(
        a.epsilon, a.n_paths + b.n_paths, a.hits + b.hits, a.failed + b.failed, a.wall_time + b.wall_time
    )
