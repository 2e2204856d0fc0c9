"""Mean escape time of a Riccati equation switched by a Poisson signal.

With ``t_A, t_B`` the deterministic escape times and ``f`` the exponential
density of the switching law, the mean escape times solve

    T_A = g_A + M_A T_B,    T_B = g_B + M_B T_A,

where ``g(Y) = E[min(tau, t(Y))]`` and ``(M T)(Y) = int_0^{t(Y)} f(tau) T(flow(Y, tau)) dtau``.
Both operators have norm at most ``F(t0) < 1`` when escape times are bounded
by ``t0``, so the Neumann series converges.  This module discretizes the
operators on a grid of line angles in P(R^2) two ways:

* :func:`solve_power_series` uses Simpson quadrature in time and linear
  interpolation in angle, and sums the series term by term;
* :func:`build_transfer_matrices` uses the piecewise-constant time cells and
  nearest-net-point quantization, and solves the finite block system directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .grassmann import build_net, line_angle, nearest_index
from .numerics import DimensionError, matrix_exp
from .rde import NoEscapePossibleFromLinearPart, RiccatiSystem, escape_times

__all__ = [
    "Assumption1Violation",
    "SwitchedSystem",
    "PoissonLaw",
    "ChartGrid",
    "BoundedCheck",
    "TransferMatrices",
    "g_value",
    "check_bounded",
    "make_grid",
    "operator_matrix",
    "apply_M",
    "solve_power_series",
    "build_transfer_matrices",
    "solve_transfer",
    "interpolate",
    "DEFAULT_SPACING",
    "DEFAULT_TERMS",
]

DEFAULT_SPACING = 0.005
DEFAULT_TERMS = 21
DEFAULT_MIN_NODES = 64

HALF_PI = 0.5 * math.pi


class Assumption1Violation(ValueError):
    """Some grid state has no finite escape time below the cap in one of the modes."""

    def __init__(self, message, offenders=()):
        super().__init__(message)
        self.offenders = list(offenders)


@dataclass(frozen=True, eq=False)
class SwitchedSystem:
    """Two Riccati systems on the same Grassmannian and a Poisson switching rate."""

    sysA: RiccatiSystem
    sysB: RiccatiSystem
    lam: float

    def __post_init__(self):
        if (self.sysA.d, self.sysA.k) != (self.sysB.d, self.sysB.k):
            raise DimensionError("switched subsystems must share (d, k)")
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError("switching rate must be positive and finite")

    @property
    def law(self) -> "PoissonLaw":
        return PoissonLaw(self.lam)

    def mode(self, z: str) -> RiccatiSystem:
        return {"A": self.sysA, "B": self.sysB}[z]


@dataclass(frozen=True)
class PoissonLaw:
    """Exponential waiting time between switches, rate `lam`."""

    lam: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError("rate must be positive and finite")

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.lam * np.exp(-self.lam * np.maximum(t, 0)), 0.0)

    def cdf(self, t):
        t = np.asarray(t, dtype=float)
        return -np.expm1(-self.lam * np.maximum(t, 0))

    def sf(self, t):
        return np.exp(-self.lam * np.maximum(np.asarray(t, dtype=float), 0))


def g_value(t_escape, law: PoissonLaw):
    """Mean of ``min(tau, T)`` for ``tau ~ Exp(lam)``: ``(1 - exp(-lam T)) / lam``.

    ``T = inf`` gives ``1 / lam``.
    """
    T = np.asarray(t_escape, dtype=float)
    if np.any(np.isnan(T)) or np.any(T < 0):
        raise ValueError("escape time must be nonnegative")
    out = -np.expm1(-law.lam * T) / law.lam
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BoundedCheck:
    t0: float
    ok: bool
    offenders: list
    tA: np.ndarray
    tB: np.ndarray


@dataclass(frozen=True, eq=False)
class ChartGrid:
    """Grid of line angles with deterministic and mean escape times.

    ``TA``/``TB`` are ``nan`` until a solver fills them; ``residual`` is the
    sup-norm of the last series term (or of the linear-solve residual).
    """

    points: np.ndarray
    tA: np.ndarray
    tB: np.ndarray
    TA: np.ndarray = None
    TB: np.ndarray = None
    residual: float = math.nan
    t0: float = math.nan
    term_norms: tuple = ()
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.points)
        for name in ("TA", "TB"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, np.full(n, np.nan))

    @property
    def spacing(self) -> float:
        return math.pi / len(self.points)

    def TA_at(self, theta):
        return interpolate(self.points, self.TA, theta)

    def TB_at(self, theta):
        return interpolate(self.points, self.TB, theta)


@dataclass(frozen=True, eq=False)
class TransferMatrices:
    NA: np.ndarray
    NB: np.ndarray
    gA: np.ndarray
    gB: np.ndarray
    h: float

    def psi(self) -> np.ndarray:
        L = len(self.gA)
        eye = np.eye(L)
        return np.block([[eye, -self.NA], [-self.NB, eye]])


def _require_projective_line(sw: SwitchedSystem):
    if (sw.sysA.d, sw.sysA.k) != (2, 1):
        raise DimensionError("grid-based mean escape is implemented for d=2, k=1 only")


def _mode_escape_times(sys, points, t_cap):
    y = np.tan(points)
    try:
        return escape_times(sys, y, t_cap=t_cap)
    except NoEscapePossibleFromLinearPart:
        return np.full(len(points), np.inf)


def check_bounded(sw: SwitchedSystem, points, t_cap: float = 50.0) -> BoundedCheck:
    """Escape times of both modes on the grid and whether they are all below `t_cap`.

    Offenders are ``(mode, angle)`` pairs without a finite escape time.
    """
    _require_projective_line(sw)
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        return BoundedCheck(0.0, True, [], np.array([]), np.array([]))
    tA = _mode_escape_times(sw.sysA, points, t_cap)
    tB = _mode_escape_times(sw.sysB, points, t_cap)
    offenders = [("A", float(p)) for p in points[~np.isfinite(tA)]]
    offenders += [("B", float(p)) for p in points[~np.isfinite(tB)]]
    both = np.concatenate([tA, tB])
    finite = both[np.isfinite(both)]
    t0 = float(finite.max()) if finite.size else 0.0
    if offenders:
        t0 = math.inf
    return BoundedCheck(t0, not offenders, offenders, tA, tB)


def make_grid(sw: SwitchedSystem, spacing: float = DEFAULT_SPACING, t_cap: float = 50.0) -> ChartGrid:
    """Cell-centred angle grid with ``ceil(pi / spacing)`` points and its escape times.

    Raises :class:`Assumption1Violation` if any grid state fails to escape
    before `t_cap` in either mode.
    """
    if not spacing > 0:
        raise ValueError("grid spacing must be positive")
    points = build_net(spacing, n=math.ceil(math.pi / spacing))
    chk = check_bounded(sw, points, t_cap)
    if not chk.ok:
        raise Assumption1Violation(
            f"{len(chk.offenders)} grid states do not escape before t_cap={t_cap}", chk.offenders
        )
    return ChartGrid(points, chk.tA, chk.tB, t0=chk.t0)


def interpolate(points, values, theta):
    """Piecewise-linear interpolation in angle, extrapolating linearly past the end points."""
    points = np.asarray(points)
    i, w = _interp_weights(points, np.asarray(theta, dtype=float))
    out = (1 - w) * values[i - 1] + w * values[i]
    return float(out) if out.ndim == 0 else out


def _interp_weights(points, theta):
    i = np.clip(np.searchsorted(points, theta), 1, len(points) - 1)
    w = (theta - points[i - 1]) / (points[i] - points[i - 1])
    return i, w


def _flowed_angles(sys, points, taus):
    """Unwrapped line angles of exp(A tau) applied to each grid line; taus has shape (L, J)."""
    x = np.stack([np.cos(points), np.sin(points)], axis=-1)  # (L, 2)
    E = matrix_exp(sys.A, taus)  # (L, J, 2, 2)
    uv = np.einsum("ljab,lb->lja", E, x)
    th = line_angle(uv[..., 0], uv[..., 1])
    th = np.concatenate([points[:, None], th[:, 1:]], axis=1)
    th = np.unwrap(th, period=math.pi, axis=1)
    return np.clip(th, -HALF_PI, HALF_PI)


def operator_matrix(
    sys: RiccatiSystem,
    t_esc,
    law: PoissonLaw,
    points,
    min_nodes: int = DEFAULT_MIN_NODES,
) -> np.ndarray:
    """Matrix ``W`` with ``(M T)(s_l) ~ (W @ T)_l`` for grid functions ``T``.

    Composite Simpson in time over ``[0, t_esc(s_l)]``; the integrand's
    ``T(flow(s_l, tau))`` is interpolated linearly in angle.
    """
    points = np.asarray(points, dtype=float)
    t_esc = np.asarray(t_esc, dtype=float)
    L = len(points)
    if not np.all(np.isfinite(t_esc)):
        raise Assumption1Violation("operator needs finite escape times at every grid point")
    tmax = float(t_esc.max())
    spacing = math.pi / L
    n = max(
        min_nodes,
        math.ceil(16 * law.lam * tmax),
        math.ceil(0.5 * sys.norm * tmax / spacing),
    )
    n += n % 2
    frac = np.arange(n + 1) / n
    simpson = np.ones(n + 1)
    simpson[1:-1:2] = 4.0
    simpson[2:-1:2] = 2.0
    taus = t_esc[:, None] * frac[None, :]
    q = (t_esc[:, None] / (3 * n)) * simpson[None, :] * law.pdf(taus)
    th = _flowed_angles(sys, points, taus)
    i, w = _interp_weights(points, th)
    rows = np.repeat(np.arange(L), n + 1)
    W = np.bincount(rows * L + (i - 1).ravel(), weights=(q * (1 - w)).ravel(), minlength=L * L)
    W += np.bincount(rows * L + i.ravel(), weights=(q * w).ravel(), minlength=L * L)
    return W.reshape(L, L)


def apply_M(T, sys: RiccatiSystem, t_esc, law: PoissonLaw, points) -> np.ndarray:
    """One application of the integral operator to the grid function `T`."""
    return operator_matrix(sys, t_esc, law, points) @ np.asarray(T, dtype=float)


def _check_grid(grid: ChartGrid):
    bad = [("A", float(p)) for p in grid.points[~np.isfinite(grid.tA)]]
    bad += [("B", float(p)) for p in grid.points[~np.isfinite(grid.tB)]]
    if bad:
        raise Assumption1Violation("grid has states without finite escape time", bad)


def solve_power_series(
    sw: SwitchedSystem,
    grid: ChartGrid,
    K: int = DEFAULT_TERMS,
    tol: float = 0.0,
    min_nodes: int = DEFAULT_MIN_NODES,
) -> ChartGrid:
    """Partial sum of ``sum_k M^k [g_A; g_B]`` with at most `K` terms.

    Stops early when the sup-norm of the newest term drops below `tol`.
    The returned grid records the per-term sup-norms and, in ``info``, the
    contraction bound ``residual * F(t0) / (1 - F(t0))`` on the truncation error.
    """
    _require_projective_line(sw)
    _check_grid(grid)
    if K < 1:
        raise ValueError("need at least one series term")
    law = sw.law
    WA = operator_matrix(sw.sysA, grid.tA, law, grid.points, min_nodes)
    WB = operator_matrix(sw.sysB, grid.tB, law, grid.points, min_nodes)
    a = g_value(grid.tA, law)
    b = g_value(grid.tB, law)
    TA, TB = a.copy(), b.copy()
    norms = [max(np.abs(a).max(), np.abs(b).max())]
    for _ in range(K - 1):
        if norms[-1] < tol:
            break
        a, b = WA @ b, WB @ a
        TA += a
        TB += b
        norms.append(max(np.abs(a).max(), np.abs(b).max()))
    t0 = float(max(grid.tA.max(), grid.tB.max()))
    F0 = float(law.cdf(t0))
    info = dict(grid.info)
    info.update(
        method="power-series",
        terms=len(norms),
        F_t0=F0,
        truncation_bound=norms[-1] * F0 / (1 - F0),
    )
    return replace(grid, TA=TA, TB=TB, residual=norms[-1], t0=t0, term_norms=tuple(norms), info=info)


def build_transfer_matrices(sw: SwitchedSystem, grid: ChartGrid, h: float | None = None) -> TransferMatrices:
    """Finite-rank surrogates ``N_A, N_B`` of the integral operators on the grid.

    ``N_A[l, m]`` adds up the Poisson mass of the time cells ``[n h, (n+1) h)``
    below ``t_A(s_l)`` whose left end point ``flow_A(s_l, n h)`` is quantized to
    net point ``s_m``.  Row sums equal ``F(t_A(s_l))``.  The default `h` is the
    grid spacing divided by the fastest angular speed ``max(||A||, ||B||)``.
    """
    _require_projective_line(sw)
    _check_grid(grid)
    if h is None:
        h = grid.spacing / max(sw.sysA.norm, sw.sysB.norm)
    if not h > 0:
        raise ValueError("time cell h must be positive")
    law = sw.law

    def transfer(sys, t_esc):
        L = len(grid.points)
        n_cells = int(math.ceil(t_esc.max() / h))
        starts = h * np.arange(n_cells)
        x = np.stack([np.cos(grid.points), np.sin(grid.points)], axis=-1)
        E = matrix_exp(sys.A, starts)  # (N, 2, 2)
        uv = np.einsum("nab,lb->nla", E, x)
        idx = nearest_index(line_angle(uv[..., 0], uv[..., 1]), grid.points)  # (N, L)
        lo = np.minimum(starts[:, None], t_esc[None, :])
        hi = np.minimum(starts[:, None] + h, t_esc[None, :])
        xi = law.cdf(hi) - law.cdf(lo)
        rows = np.broadcast_to(np.arange(L)[None, :], idx.shape)
        N = np.bincount((rows * L + idx).ravel(), weights=xi.ravel(), minlength=L * L)
        return N.reshape(L, L)

    return TransferMatrices(
        transfer(sw.sysA, grid.tA),
        transfer(sw.sysB, grid.tB),
        g_value(grid.tA, law),
        g_value(grid.tB, law),
        float(h),
    )


def solve_transfer(tm: TransferMatrices):
    """Solve ``Psi [T_A; T_B] = [g_A; g_B]`` with ``Psi = [[I, -N_A], [-N_B, I]]``."""
    rows = max(tm.NA.sum(axis=1).max(), tm.NB.sum(axis=1).max())
    if not rows < 1:
        raise ArithmeticError(f"transfer matrix row sum {rows} >= 1; Psi may be singular")
    x = np.linalg.solve(tm.psi(), np.concatenate([tm.gA, tm.gB]))
    L = len(tm.gA)
    return x[:L], x[L:]
