"""Canonical chart on the Grassmannian, its projection metric, and nets on P(R^2).

The chart sends a (d-k) x k matrix ``Y`` to the column space of ``[I; Y]``.
Its image is the set of subspaces complementary to ``Sp [0; I]``; leaving it
is what a Riccati solution does when it escapes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, is_singular, spectral_norm

__all__ = [
    "SubspacePoint",
    "ProjectiveAngle",
    "OffChart",
    "OFF_CHART",
    "chart_embed",
    "chart_retract",
    "grassmann_distance",
    "build_net",
    "net_spacing",
    "line_angle",
    "angle_to_state",
    "nearest_index",
]

HALF_PI = 0.5 * math.pi


@dataclass(frozen=True, eq=False)
class SubspacePoint:
    """A k-dimensional subspace of R^d held as an orthonormal d x k basis."""

    basis: np.ndarray

    def __post_init__(self):
        B = np.array(self.basis, dtype=float)
        if B.ndim != 2 or B.shape[1] == 0 or B.shape[1] >= B.shape[0] + 1:
            raise DimensionError(f"basis must be d x k with 0 < k <= d, got {B.shape}")
        if np.abs(B.T @ B - np.eye(B.shape[1])).max() > 1e-10:
            raise ValueError("basis columns are not orthonormal")
        B.setflags(write=False)
        object.__setattr__(self, "basis", B)

    @classmethod
    def span(cls, M) -> "SubspacePoint":
        """Column space of a full-rank matrix `M`."""
        Q, R = np.linalg.qr(np.asarray(M, dtype=float))
        if np.min(np.abs(np.diag(R))) < 1e-12 * max(1.0, np.abs(R).max()):
            raise ValueError("matrix is rank deficient")
        return cls(Q)

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T


@dataclass(frozen=True)
class ProjectiveAngle:
    """A line through the origin of R^2 by its angle, normalized to [-pi/2, pi/2).

    ``-pi/2`` is the vertical line, the single boundary point of the chart.
    """

    theta: float

    def __post_init__(self):
        th = (float(self.theta) + HALF_PI) % math.pi - HALF_PI
        object.__setattr__(self, "theta", th)

    @property
    def on_chart(self) -> bool:
        return self.theta != -HALF_PI

    def point(self) -> SubspacePoint:
        return SubspacePoint(np.array([[math.cos(self.theta)], [math.sin(self.theta)]]))


class OffChart:
    """Marker for subspaces outside the canonical chart."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "OFF_CHART"


OFF_CHART = OffChart()


def chart_embed(Y) -> SubspacePoint:
    """Subspace spanned by the columns of ``[I; Y]``."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 0:
        Y = Y.reshape(1, 1)
    if Y.ndim != 2:
        raise DimensionError(f"state must be 2-D, got shape {Y.shape}")
    k = Y.shape[1]
    M = np.vstack([np.eye(k), Y])
    Q, _ = np.linalg.qr(M)
    return SubspacePoint(Q)


def chart_retract(P: SubspacePoint):
    """Inverse chart: the unique ``Y`` with ``Sp [I; Y] = P``, or ``OFF_CHART``."""
    B = P.basis
    k = P.k
    B1, B2 = B[:k], B[k:]
    if is_singular(B1):
        return OFF_CHART
    return np.linalg.solve(B1.T, B2.T).T


def grassmann_distance(P1: SubspacePoint, P2: SubspacePoint) -> float:
    """Spectral norm of the difference of the orthogonal projectors."""
    if P1.basis.shape != P2.basis.shape:
        raise DimensionError("subspaces live in different Grassmannians")
    return spectral_norm(P1.projector() - P2.projector())


def line_angle(U, V):
    """Angle in [-pi/2, pi/2) of the line spanned by (U, V); elementwise."""
    th = np.arctan2(V, U)
    return (th + HALF_PI) % math.pi - HALF_PI


def angle_to_state(theta):
    """Slope-chart coordinate of the line at angle `theta` (``tan``)."""
    return np.tan(theta)


def net_spacing(n: int) -> float:
    return math.pi / n


def build_net(epsilon: float, n: int | None = None) -> np.ndarray:
    """Finite epsilon-net of the on-chart part of P(R^2), as sorted angles.

    Uses ``ceil(pi / epsilon) + 1`` cell-centred angles on (-pi/2, pi/2), so
    every line lies within half a spacing of a net point and the vertical
    line is never a member.  Passing `n` overrides the point count.
    """
    if n is None:
        if not epsilon > 0:
            raise ValueError("epsilon must be positive")
        n = math.ceil(math.pi / epsilon) + 1
    h = math.pi / n
    return -HALF_PI + h * (np.arange(n) + 0.5)


def nearest_index(theta, net: np.ndarray):
    """Index of the closest net angle in the projective metric ``|sin(dtheta)|``.

    `net` must be the uniform cell-centred grid from :func:`build_net`.
    """
    n = len(net)
    h = math.pi / n
    th = (np.asarray(theta, dtype=float) + HALF_PI) % math.pi
    return np.minimum((th // h).astype(int), n - 1)
