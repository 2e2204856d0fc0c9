"""Deterministic Riccati flows and their escape times.

A system is a d x d matrix ``A`` with block size ``k``.  Its Riccati equation

    dY/dt = A21 + A22 Y - Y A11 - Y A12 Y

is the chart expression of the linear flow ``exp(A t)`` acting on
k-dimensional subspaces, so ``Y(t) = V(t) U(t)^{-1}`` with
``[U; V] = exp(A t) [I; Y0]`` and the solution escapes exactly when ``U``
first becomes singular.

Escape times come from the guaranteed-existence step sequence
``t_{n+1} = t_n + Delta(t_n)`` where ``Delta`` is built from the principal
Lambert W function; once the steps drop below a tolerance the sign change of
``det U`` is bracketed and refined by regula falsi.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .numerics import (
    DimensionError,
    lambert_w0,
    matrix_exp,
    min_singular_value,
    spectral_norm,
)

__all__ = [
    "NoEscapePossibleFromLinearPart",
    "RiccatiSystem",
    "FlowState",
    "EscapeResult",
    "EscapedBefore",
    "rde_rhs",
    "lift",
    "advance",
    "flow",
    "delta_step",
    "step_sequence",
    "escape_time",
    "escape_times",
    "escape_profile",
    "box_sampler",
    "angle_sampler",
    "DEFAULT_TOL",
    "DEFAULT_T_CAP",
    "DEFAULT_N_MAX",
]

DEFAULT_TOL = 1e-8
DEFAULT_T_CAP = 50.0
DEFAULT_N_MAX = 10_000

_EPS = np.finfo(float).eps


class NoEscapePossibleFromLinearPart(ArithmeticError):
    """The top block row ``[I 0] A`` vanishes, so ``U(t) = I`` for all t."""


@dataclass(frozen=True, eq=False)
class RiccatiSystem:
    """One deterministic Riccati equation, given by its matrix and block size."""

    A: np.ndarray
    k: int = 1

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("A has non-finite entries")
        k = int(self.k)
        if not 0 < k < A.shape[0]:
            raise DimensionError(f"block size k={k} must satisfy 0 < k < d={A.shape[0]}")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "k", k)

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def state_shape(self) -> tuple[int, int]:
        return (self.d - self.k, self.k)

    @property
    def A11(self):
        return self.A[: self.k, : self.k]

    @property
    def A12(self):
        return self.A[: self.k, self.k :]

    @property
    def A21(self):
        return self.A[self.k :, : self.k]

    @property
    def A22(self):
        return self.A[self.k :, self.k :]

    @cached_property
    def norm(self) -> float:
        return spectral_norm(self.A)

    @cached_property
    def top_norm(self) -> float:
        """Spectral norm of the top block row ``[I 0] A``."""
        return spectral_norm(self.A[: self.k])

    @property
    def can_escape(self) -> bool:
        return self.top_norm > 0.0

    def state(self, Y) -> np.ndarray:
        """Coerce `Y` into a (d-k) x k state, accepting scalars and vectors when unambiguous."""
        Y = np.asarray(Y, dtype=float)
        m, k = self.state_shape
        if Y.ndim < 2 and Y.size == m * k and (k == 1 or m == 1):
            Y = Y.reshape(m, k)
        if Y.shape != (m, k):
            raise DimensionError(f"state must have shape {(m, k)}, got {Y.shape}")
        if not np.all(np.isfinite(Y)):
            raise ValueError("state has non-finite entries")
        return Y

    def states(self, Ys) -> np.ndarray:
        """Stack of states with shape (n, d-k, k)."""
        Ys = np.asarray(Ys, dtype=float)
        m, k = self.state_shape
        if Ys.ndim == 1 and m * k == 1:
            Ys = Ys.reshape(-1, 1, 1)
        elif Ys.ndim == 2 and Ys.shape[1] == m * k and (k == 1 or m == 1):
            Ys = Ys.reshape(-1, m, k)
        if Ys.ndim != 3 or Ys.shape[1:] != (m, k):
            raise DimensionError(f"states must have shape (n, {m}, {k}), got {Ys.shape}")
        return Ys


@dataclass(frozen=True)
class FlowState:
    """Linear lift ``[U; V] = exp(A t) [I; Y0]`` of a Riccati trajectory."""

    U: np.ndarray
    V: np.ndarray
    t: float

    @property
    def Y(self) -> np.ndarray:
        return np.linalg.solve(self.U.T, self.V.T).T


@dataclass(frozen=True)
class EscapeResult:
    """Outcome of an escape-time computation.

    ``finite`` results carry the escape time, the raw step sequence and the
    final bisection bracket.  Otherwise the solution was certified to exist
    on ``[0, t_cap]`` and ``t_escape`` is ``inf``.
    """

    t_escape: float
    steps: tuple = ()
    t_cap: float | None = None
    bracket: tuple = ()

    @property
    def finite(self) -> bool:
        return math.isfinite(self.t_escape)

    @property
    def certified_horizon(self) -> float:
        """Largest time up to which existence is certified by the step sequence."""
        if self.finite:
            return self.bracket[0] if self.bracket else self.steps[-1]
        return self.t_cap


@dataclass(frozen=True)
class EscapedBefore:
    """Returned by :func:`flow` when the trajectory leaves the chart first."""

    t_escape: float


def rde_rhs(sys: RiccatiSystem, Y) -> np.ndarray:
    """Right-hand side ``A21 + A22 Y - Y A11 - Y A12 Y``."""
    Y = sys.state(Y)
    return sys.A21 + sys.A22 @ Y - Y @ sys.A11 - Y @ sys.A12 @ Y


def lift(sys: RiccatiSystem, Y0, t: float) -> FlowState:
    """Return the blocks ``U(t), V(t)`` of ``exp(A t) [I; Y0]``."""
    Y0 = sys.state(Y0)
    E = matrix_exp(sys.A, t)
    UV = E[:, : sys.k] + E[:, sys.k :] @ Y0
    return FlowState(UV[: sys.k], UV[sys.k :], float(t))


def _lift_batch(sys, Ys, s):
    """Blocks U (n,k,k) and V (n,m,k) of exp(A s_i) [I; Y_i]."""
    E = matrix_exp(sys.A, s)
    UV = E[..., : sys.k] + E[..., sys.k :] @ Ys
    return UV[..., : sys.k, :], UV[..., sys.k :, :]


def _det(U):
    if U.shape[-1] == 1:
        return U[..., 0, 0]
    return np.linalg.det(U)


def _chart(U, V):
    if U.shape[-1] == 1:
        return V / U
    return np.swapaxes(np.linalg.solve(np.swapaxes(U, -1, -2), np.swapaxes(V, -1, -2)), -1, -2)


def advance(sys: RiccatiSystem, Ys, s) -> np.ndarray:
    """Move a stack of states along the flow by times `s` without any existence check.

    Callers must already know each time lies below the corresponding escape time.
    """
    Ys = sys.states(Ys)
    s = np.broadcast_to(np.asarray(s, dtype=float), Ys.shape[:1])
    U, V = _lift_batch(sys, Ys, s)
    return _chart(U, V)


def _state_norms(Ys):
    if Ys.shape[-1] == 1 or Ys.shape[-2] == 1:
        return np.sqrt(np.sum(Ys * Ys, axis=(-2, -1)))
    return np.linalg.svd(Ys, compute_uv=False)[..., 0]


def _deltas(sys, Ys):
    # ||[I; Y]|| = sqrt(1 + ||Y||^2)
    arg = sys.norm / (sys.top_norm * np.sqrt(1.0 + _state_norms(Ys) ** 2))
    return lambert_w0(arg) / sys.norm


def _check_can_escape(sys):
    if not sys.can_escape:
        raise NoEscapePossibleFromLinearPart(
            "top block row of A is zero; U(t) stays the identity and no escape occurs"
        )


def delta_step(sys: RiccatiSystem, Y) -> float:
    """Guaranteed existence step from state `Y`.

    ``W(||A|| / (||[I 0] A|| * ||[I; Y]||)) / ||A||``; the flow from `Y` stays
    on the chart over the closed interval ``[0, delta]``.
    """
    _check_can_escape(sys)
    Y = sys.state(Y)
    return float(_deltas(sys, Y[None])[0])


def step_sequence(sys: RiccatiSystem, Y0, n_steps: int, t_cap: float = math.inf):
    """Raw iterates ``t_0 = 0, ..., t_N`` and the matching deltas.

    Stops early if the steps underflow (no more progress in floating point)
    or the next iterate would pass `t_cap`.

    Returns
    -------
    times : ndarray, shape (N+1,)
    deltas : ndarray, shape (N+1,)
        ``deltas[n]`` is the step taken from ``times[n]``.
    """
    _check_can_escape(sys)
    Y = sys.state(Y0)[None]
    times = [0.0]
    deltas = []
    t = 0.0
    for _ in range(int(n_steps)):
        dt = float(_deltas(sys, Y)[0])
        deltas.append(dt)
        if t + dt == t or t + dt > t_cap:
            break
        Y = advance(sys, Y, dt)
        t += dt
        times.append(t)
    else:
        deltas.append(float(_deltas(sys, Y)[0]))
    return np.array(times), np.array(deltas[: len(times)])


# status codes for the batched sequence
_CONVERGED, _CAPPED, _EXHAUSTED = 0, 1, 2


def _iterate_batch(sys, Ys, t_cap, tol, n_max, record=False):
    n = Ys.shape[0]
    t = np.zeros(n)
    Y = Ys.copy()
    last = np.zeros(n)
    status = np.full(n, _EXHAUSTED)
    active = np.arange(n)
    history = [0.0] if record else None
    for _ in range(int(n_max)):
        if active.size == 0:
            break
        dt = _deltas(sys, Y[active])
        last[active] = dt
        conv = dt < tol
        capped = ~conv & (t[active] + dt >= t_cap[active])
        status[active[conv]] = _CONVERGED
        status[active[capped]] = _CAPPED
        go = ~(conv | capped)
        idx = active[go]
        if idx.size:
            Y[idx] = advance(sys, Y[idx], dt[go])
            t[idx] += dt[go]
            if record:
                history.append(float(t[0]))
        active = idx
    return t, Y, last, status, history


def _bracket_batch(sys, Y, last, remaining):
    """Find s_hi > 0 with det U(s_hi) <= 0 by doubling from the last certified step.

    Returns (lo, hi, found); `lo` is the largest tried step with det > 0.
    """
    n = Y.shape[0]
    lo = last.copy()
    hi = np.full(n, np.nan)
    found = np.zeros(n, dtype=bool)
    todo = np.arange(n)
    for _ in range(80):
        if todo.size == 0:
            break
        s = np.minimum(2.0 * lo[todo], remaining[todo])
        U, _ = _lift_batch(sys, Y[todo], s)
        neg = _det(U) <= 0
        hi[todo[neg]] = s[neg]
        found[todo[neg]] = True
        pos = ~neg
        lo[todo[pos]] = s[pos]
        # stop once the remaining horizon is exhausted
        keep = pos & (s < remaining[todo])
        todo = todo[keep]
    return lo, hi, found


def _bisect_batch(sys, Y, lo, hi, t0):
    """Shrink ``[lo, hi]`` around the sign change of det U to a few ulps.

    Illinois-modified regula falsi with a bisection fallback; the bracket
    invariant ``det U(lo) > 0 >= det U(hi)`` holds throughout.
    """
    lo = lo.copy()
    hi = hi.copy()
    flo = _det(_lift_batch(sys, Y, lo)[0])
    fhi = _det(_lift_batch(sys, Y, hi)[0])
    side = np.zeros(lo.shape, dtype=int)
    for it in range(200):
        open_ = (hi - lo) > 4 * _EPS * (t0 + hi)
        if not open_.any():
            break
        idx = np.flatnonzero(open_)
        a, b, fa, fb = lo[idx], hi[idx], flo[idx], fhi[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = b - fb * (b - a) / (fb - fa)
        mid = 0.5 * (a + b)
        bad = ~((x > a) & (x < b)) | (it % 4 == 3)
        x = np.where(bad, mid, x)
        fx = _det(_lift_batch(sys, Y[idx], x)[0])
        neg = fx <= 0
        # Illinois: halve the stale end's value when the same side moves twice
        stale_a = neg & (side[idx] == 1)
        stale_b = ~neg & (side[idx] == -1)
        flo[idx[stale_a]] *= 0.5
        fhi[idx[stale_b]] *= 0.5
        hi[idx[neg]] = x[neg]
        fhi[idx[neg]] = fx[neg]
        lo[idx[~neg]] = x[~neg]
        flo[idx[~neg]] = fx[~neg]
        side[idx] = np.where(neg, 1, -1)
    return lo, hi


def _touch_search(sys, Y, last, remaining):
    """Escape through a singular U where det U touches zero without changing sign.

    Looks for an interior minimum of ``sigma_min(U) / ||[U; V]||`` along
    doubling steps; returns the step to it, or None.
    """

    def ratio(s):
        U, V = _lift_batch(sys, Y[None], np.array([s]))
        UV = np.concatenate([U[0], V[0]], axis=0)
        return min_singular_value(U[0]) / spectral_norm(UV)

    ss = [last]
    while ss[-1] < remaining and len(ss) < 80:
        ss.append(min(2 * ss[-1], remaining))
    vals = [ratio(s) for s in ss]
    j = int(np.argmin(vals))
    if j == len(ss) - 1:
        return None
    a = ss[j - 1] if j > 0 else 0.0
    b = ss[j + 1]
    res = minimize_scalar(ratio, bounds=(a, b), method="bounded", options={"xatol": 1e-14})
    if res.fun < 1e-6:
        return float(res.x)
    return None


def escape_times(
    sys: RiccatiSystem,
    Ys,
    tol: float = DEFAULT_TOL,
    t_cap=DEFAULT_T_CAP,
    n_max: int = DEFAULT_N_MAX,
) -> np.ndarray:
    """Escape times for a stack of initial states.

    Vectorized form of :func:`escape_time` returning only the times;
    ``inf`` marks states certified not to escape before their cap.
    `t_cap` may be an array, one cap per state.
    """
    _check_can_escape(sys)
    Ys = sys.states(Ys)
    n = Ys.shape[0]
    out = np.full(n, np.inf)
    if n == 0:
        return out
    caps = np.broadcast_to(np.asarray(t_cap, dtype=float), (n,)).copy()
    t, Y, last, status, _ = _iterate_batch(sys, Ys, caps, tol, n_max)
    cand = np.flatnonzero(status != _CAPPED)
    if cand.size == 0:
        return out
    remaining = caps[cand] - t[cand]
    lo, hi, found = _bracket_batch(sys, Y[cand], last[cand], remaining)
    if found.any():
        f = np.flatnonzero(found)
        blo, bhi = _bisect_batch(sys, Y[cand[f]], lo[f], hi[f], t[cand[f]])
        out[cand[f]] = t[cand[f]] + 0.5 * (blo + bhi)
    for j in np.flatnonzero(~found):
        i = cand[j]
        s = _touch_search(sys, Y[i], last[i], remaining[j])
        if s is not None:
            out[i] = t[i] + s
    return out


def escape_time(
    sys: RiccatiSystem,
    Y0,
    n_max: int = DEFAULT_N_MAX,
    t_cap: float = DEFAULT_T_CAP,
    tol: float = DEFAULT_TOL,
) -> EscapeResult:
    """Escape time of the Riccati solution started at `Y0`.

    Iterates ``t_{n+1} = t_n + Delta(t_n)`` from ``t_0 = 0`` until the step
    falls below `tol`, then brackets the sign change of ``det U`` and bisects
    it down to a few ulps.  If the iterates pass `t_cap` first the result is
    ``inf`` with ``t_cap`` recorded.  Running out of `n_max` steps without a
    sign change also yields ``inf``, with the certified horizon as ``t_cap``.

    Raises
    ------
    NoEscapePossibleFromLinearPart
        If ``[I 0] A`` is zero.
    """
    _check_can_escape(sys)
    Y0 = sys.state(Y0)
    caps = np.array([float(t_cap)])
    t, Y, last, status, hist = _iterate_batch(sys, Y0[None], caps, tol, n_max, record=True)
    steps = tuple(hist)
    if status[0] == _CAPPED:
        return EscapeResult(math.inf, steps, float(t_cap))
    remaining = caps - t
    lo, hi, found = _bracket_batch(sys, Y, last, remaining)
    if found[0]:
        blo, bhi = _bisect_batch(sys, Y, lo, hi, t)
        a, b = float(t[0] + blo[0]), float(t[0] + bhi[0])
        return EscapeResult(0.5 * (a + b), steps, None, (a, b))
    s = _touch_search(sys, Y[0], float(last[0]), float(remaining[0]))
    if s is not None:
        te = float(t[0] + s)
        return EscapeResult(te, steps, None, (te, te))
    horizon = float(t_cap) if status[0] == _CONVERGED else float(t[0])
    return EscapeResult(math.inf, steps, horizon)


def flow(sys: RiccatiSystem, Y0, t: float, tol: float = DEFAULT_TOL):
    """State at time `t`, or :class:`EscapedBefore` if the solution leaves the chart first.

    Existence on ``[0, t]`` is certified with the step sequence before the
    endpoint ``V(t) U(t)^{-1}`` is evaluated.
    """
    if t < 0 or not math.isfinite(t):
        raise ValueError("flow time must be finite and nonnegative")
    Y0 = sys.state(Y0)
    if t == 0:
        return Y0.copy()
    if sys.can_escape:
        res = escape_time(sys, Y0, t_cap=t, tol=tol)
        if res.finite and res.t_escape <= t:
            return EscapedBefore(res.t_escape)
    return advance(sys, Y0[None], t)[0]


def box_sampler(shape, half_width: float = 5.0) -> Callable:
    """Uniform initial states on ``[-half_width, half_width]`` entrywise."""

    def sample(rng):
        return rng.uniform(-half_width, half_width, size=shape)

    return sample


def angle_sampler(low: float = -math.pi / 2, high: float = math.pi / 2) -> Callable:
    """Uniform line angle on P(R^2), mapped to the slope chart (d=2, k=1)."""

    def sample(rng):
        return np.array([[math.tan(rng.uniform(low, high))]])

    return sample


def _profile_one(sys, Y0, n_steps, t_cap, tol):
    res = escape_time(sys, Y0, t_cap=t_cap, tol=tol)
    times, _ = step_sequence(sys, Y0, n_steps, t_cap=t_cap)
    if not res.finite:
        states = np.concatenate([Y0[None], advance(sys, np.repeat(Y0[None], len(times) - 1, 0), times[1:])])
        return [(Y, math.inf) for Y in states]
    tN = times[-1]
    shifts = tN - times
    U, V = _lift_batch(sys, np.repeat(Y0[None], len(times), 0), shifts)
    # the last iterates can sit within rounding of the pole; drop any state
    # whose top block has already changed sign
    keep = np.linalg.det(U) > 0
    states = _chart(U[keep], V[keep])
    return [(Y, float(tn)) for Y, tn in zip(states, times[keep])]


def escape_profile(
    sys: RiccatiSystem,
    sampler: Callable,
    n_seeds: int,
    n_steps: int = 40,
    t_cap: float = DEFAULT_T_CAP,
    seed: int | None = 0,
    tol: float = DEFAULT_TOL,
    threads: int = 1,
) -> list:
    """Escape time as a function of the initial state, one seed labelling many states.

    For each sampled ``Y0`` with iterates ``t_0, ..., t_N`` this emits the
    pairs ``(Y(t_N - t_n; Y0), t_n)``; the shifted states have escape time
    ``t_n`` up to the residual ``t_escape(Y0) - t_N``.  Seeds that do not
    escape before `t_cap` contribute the iterates' states labelled ``inf``.

    Returns a list of ``(state, escape_time)`` pairs ordered by seed index.
    """
    rng = np.random.default_rng(seed)
    seeds = [sys.state(sampler(rng)) for _ in range(int(n_seeds))]
    work = lambda Y0: _profile_one(sys, Y0, n_steps, t_cap, tol)  # noqa: E731
    if threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(work, seeds))
    else:
        chunks = [work(Y0) for Y0 in seeds]
    return [pair for chunk in chunks for pair in chunk]
