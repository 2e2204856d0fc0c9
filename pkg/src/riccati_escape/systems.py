"""Ready-made systems used in the examples, tests and CLI presets."""

import numpy as np

from .mean_escape import SwitchedSystem
from .rde import RiccatiSystem


def rotation(omega: float = 1.0) -> RiccatiSystem:
    """``dy/dt = omega (1 + y^2)``: lines rotating counterclockwise at speed `omega`."""
    return RiccatiSystem([[0.0, -omega], [omega, 0.0]], 1)


def counter_rotation(gamma: float = 1.0) -> RiccatiSystem:
    """``dy/dt = -gamma (1 + y^2)``: clockwise rotation at speed `gamma`."""
    return RiccatiSystem([[0.0, gamma], [-gamma, 0.0]], 1)


def rotation_switch(omega: float = 1.0, gamma: float = 1.0, lam: float = 1.0) -> SwitchedSystem:
    """Opposite rotations switched at Poisson rate `lam`.

    Escape times are ``(pi/2 - theta) / omega`` and ``(theta + pi/2) / gamma``.
    """
    return SwitchedSystem(rotation(omega), counter_rotation(gamma), lam)


def quadratic_growth() -> RiccatiSystem:
    """``dy/dt = y^2 + 2 y``; from ``y0 = 1`` it escapes at ``log(3) / 2``."""
    return RiccatiSystem([[-1.0, -1.0], [0.0, 1.0]], 1)


def three_dim_vector() -> RiccatiSystem:
    """A 3 x 3 system with a 2-vector state and real eigenvalues 1.4605, -0.7609, -2.6996."""
    return RiccatiSystem([[-1.0, 2.0, -1.0], [0.0, 2.0, -1.0], [-1.0, 3.0, -3.0]], 1)


def transcendental_escape() -> RiccatiSystem:
    """Conjugated rotation plus growth; from ``Y0 = [1; 1]`` it escapes at the
    first root of ``2 cos t + sin t - e^t``."""
    R = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    T = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return RiccatiSystem(np.linalg.solve(T, R @ T), 1)
