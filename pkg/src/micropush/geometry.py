"""Planar geometry shared by every other module.

Conventions: positions in micrometers, angles in radians, time in seconds.
The pair state tracks the unactuated object center x_u and the actuated
robot center x_a; downstream code depends on the relative position
x_r = x_u - x_a only through the local frame and the normalized distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Normalized distance at which the surfaces are declared touching. The
# controller's working band (s_r in [2.25, 4] by default) sits just outside.
CONTACT_S_R = 2.0


def vec2(x: float, y: float) -> np.ndarray:
    """Build a float 2-vector."""
    return np.array([float(x), float(y)])


@dataclass
class SystemState:
    """Object and robot centers plus their radii.

    x_u: object center [um], x_a: robot center [um],
    r_a / r_u: robot / object radius [um].
    """

    x_u: np.ndarray
    x_a: np.ndarray
    r_a: float = 5.0
    r_u: float = 5.0

    def __post_init__(self):
        self.x_u = np.asarray(self.x_u, dtype=float)
        self.x_a = np.asarray(self.x_a, dtype=float)
        if not (self.r_a > 0 and self.r_u > 0):
            raise ValueError("radii must be strictly positive")

    @property
    def x_r(self) -> np.ndarray:
        """Relative position, object minus robot."""
        return self.x_u - self.x_a

    @property
    def s_r(self) -> float:
        return normalized_distance(self.x_r, self.r_a, self.r_u)

    def copy(self) -> "SystemState":
        return SystemState(self.x_u.copy(), self.x_a.copy(), self.r_a, self.r_u)


def relative(state: SystemState) -> np.ndarray:
    """Object position relative to the robot, x_u - x_a."""
    return state.x_u - state.x_a


def normalized_distance(x_r, r_a: float, r_u: float, divisor: float | None = None) -> float:
    """Center distance divided by the radius normalizer.

    The default normalizer is r_a + r_u, under which the touching threshold
    used throughout this package is s_r = 2 (see CONTACT_S_R); pass an
    explicit divisor to use a different convention.
    """
    if divisor is None:
        divisor = r_a + r_u
    if divisor <= 0:
        raise ValueError("radius normalizer must be positive")
    x_r = np.asarray(x_r, dtype=float)
    return float(np.hypot(x_r[0], x_r[1])) / divisor


def local_frame(x_r) -> np.ndarray:
    """Rotation R with R @ x_r = (|x_r|, 0).

    Axis 1 is the center-line (normal) direction, axis 2 the tangential one.
    Raises ValueError for the zero vector, where the frame is undefined.
    """
    x_r = np.asarray(x_r, dtype=float)
    n = float(np.hypot(x_r[0], x_r[1]))
    if n == 0.0:
        raise ValueError("local frame undefined for zero relative position")
    c = x_r[0] / n
    s = x_r[1] / n
    return np.array([[c, s], [-s, c]])


def rotation(angle: float) -> np.ndarray:
    """Counterclockwise rotation matrix for the given angle."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])
