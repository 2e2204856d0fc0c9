"""Event-driven Monte Carlo for the Poisson-switched Riccati equation.

Between switches the state follows one deterministic flow, so a trajectory
only needs the waiting times: draw ``tau ~ Exp(lam)``; if it exceeds the
current mode's escape time the sample escapes then, otherwise move the state
along the flow by ``tau`` and toggle the mode.  There is no time stepping in
the switching layer.

Every trial owns a generator seeded with ``(rng_seed, trial_index)``, so a
trial's draws do not depend on how many other trials run alongside it or in
which batch.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .mean_escape import SwitchedSystem
from .rde import DEFAULT_TOL, NoEscapePossibleFromLinearPart, advance, escape_times

__all__ = ["EscapeSample", "EstimatorReport", "simulate_escape", "estimate_mean_escape", "simulate_batch"]

_DRAW_CHUNK = 8
_BATCH = 50_000


@dataclass(frozen=True)
class EscapeSample:
    """One switched trajectory.

    ``modes[i]`` is the active subsystem before ``jump_times[i]``; the last
    entry of ``modes`` is the mode the sample escapes (or is capped) in.
    """

    jump_times: tuple
    modes: tuple
    escape_time: float
    capped: bool


@dataclass(frozen=True)
class EstimatorReport:
    """Mean and standard error over the samples that escaped before the cap."""

    mean: float
    stderr: float
    n: int
    capped_fraction: float
    n_trials: int

    def as_dict(self):
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n": self.n,
            "capped_fraction": self.capped_fraction,
            "n_trials": self.n_trials,
        }


def _mode_flag(z0) -> bool:
    if z0 in ("A", 1, True):
        return True
    if z0 in ("B", 0, False):
        return False
    raise ValueError(f"mode must be 'A'/'B' (or z = 1/0), got {z0!r}")


class _Waits:
    """Per-trial exponential waiting times, drawn lazily in chunks."""

    def __init__(self, seeds, lam):
        self.gens = [np.random.default_rng(s) for s in seeds]
        self.scale = 1.0 / lam
        self.buf = np.array([g.exponential(self.scale, _DRAW_CHUNK) for g in self.gens])

    def column(self, j, rows):
        if j >= self.buf.shape[1]:
            extra = np.full((len(self.gens), _DRAW_CHUNK), np.nan)
            for r in rows:
                extra[r] = self.gens[r].exponential(self.scale, _DRAW_CHUNK)
            self.buf = np.concatenate([self.buf, extra], axis=1)
        return self.buf[rows, j]


def _escape_or_inf(sys, Ys, caps, tol):
    if len(Ys) == 0:
        return np.empty(0)
    try:
        return escape_times(sys, Ys, tol=tol, t_cap=caps)
    except NoEscapePossibleFromLinearPart:
        return np.full(len(Ys), np.inf)


def simulate_batch(sw: SwitchedSystem, Y0, z0, seeds, t_cap: float = 1e3, tol: float = DEFAULT_TOL, record=False):
    """Run one trial per seed, vectorized across trials.

    Returns ``(escape_time, capped)`` arrays, plus per-trial jump records
    when `record` is true.
    """
    sysA, sysB = sw.sysA, sw.sysB
    Y0 = sysA.state(Y0)
    n = len(seeds)
    waits = _Waits(seeds, sw.lam)
    Y = np.repeat(Y0[None], n, axis=0)
    in_a = np.full(n, _mode_flag(z0))
    acc = np.zeros(n)
    out = np.full(n, np.nan)
    capped = np.zeros(n, dtype=bool)
    jumps = [[] for _ in range(n)] if record else None
    modes = [["A" if in_a[0] else "B"] for _ in range(n)] if record else None
    active = np.arange(n)
    j = 0
    while active.size:
        t_esc = np.empty(active.size)
        caps = t_cap - acc[active]
        if j == 0:
            # every trial starts from the same state and mode
            t_esc[:] = _escape_or_inf(sw.mode("A" if in_a[0] else "B"), Y0[None], caps[:1], tol)[0]
        else:
            for flag, sys in ((True, sysA), (False, sysB)):
                sel = in_a[active] == flag
                t_esc[sel] = _escape_or_inf(sys, Y[active[sel]], caps[sel], tol)
        tau = waits.column(j, active)
        esc = tau >= t_esc
        end = acc[active] + np.where(esc, t_esc, tau)
        over = end >= t_cap
        stop = esc | over
        done = active[stop]
        out[done] = np.minimum(end[stop], t_cap)
        capped[done] = over[stop]
        go = ~stop
        idx = active[go]
        if idx.size:
            for flag, sys in ((True, sysA), (False, sysB)):
                sel = in_a[idx] == flag
                if sel.any():
                    Y[idx[sel]] = advance(sys, Y[idx[sel]], tau[go][sel])
            acc[idx] += tau[go]
            in_a[idx] = ~in_a[idx]
            if record:
                for i in idx:
                    jumps[i].append(float(acc[i]))
                    modes[i].append("A" if in_a[i] else "B")
        active = idx
        j += 1
    if record:
        return out, capped, jumps, modes
    return out, capped


def simulate_escape(sw: SwitchedSystem, Y0, z0="A", rng_seed=0, t_cap: float = 1e3, tol: float = DEFAULT_TOL) -> EscapeSample:
    """Simulate a single switched trajectory until it escapes or reaches `t_cap`.

    `rng_seed` may be an int or a tuple of ints; trial ``i`` of
    :func:`estimate_mean_escape` uses ``(rng_seed, i)``.
    """
    out, capped, jumps, modes = simulate_batch(sw, Y0, z0, [rng_seed], t_cap, tol, record=True)
    return EscapeSample(tuple(jumps[0]), tuple(modes[0]), float(out[0]), bool(capped[0]))


def estimate_mean_escape(
    sw: SwitchedSystem,
    Y0,
    z0="A",
    n_trials: int = 10_000,
    rng_seed: int = 0,
    t_cap: float = 1e3,
    tol: float = DEFAULT_TOL,
    threads: int = 1,
) -> EstimatorReport:
    """Monte Carlo mean escape time from ``(Y0, z0)``.

    Capped samples are left out of the mean and reported through
    ``capped_fraction``.  With a single uncapped sample the standard error
    is reported as 0.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    starts = range(0, n_trials, _BATCH)

    def run(start):
        seeds = [(rng_seed, i) for i in range(start, min(start + _BATCH, n_trials))]
        return simulate_batch(sw, Y0, z0, seeds, t_cap, tol)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    times = np.concatenate([p[0] for p in parts])
    capped = np.concatenate([p[1] for p in parts])
    kept = times[~capped]
    n = kept.size
    mean = float(np.mean(kept)) if n else math.nan
    stderr = float(np.std(kept, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return EstimatorReport(mean, stderr, n, float(capped.mean()), n_trials)
