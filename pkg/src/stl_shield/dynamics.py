"""Concrete plants and fixed-step zero-order-hold integration.

The true system is a unicycle (state px, py, theta; input v, omega); experts
are generated by a planar single integrator.  Both are drift-free control
affine systems, stepped here with the input held constant over each interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .barrier import ControlAffineSystem

UNICYCLE_INPUT_BOX = ((-0.2, 0.2), (-math.pi / 4, math.pi / 4))


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    return ((theta - math.pi) % (-2.0 * math.pi)) + math.pi


@dataclass(frozen=True)
class UnicycleState:
    px: float
    py: float
    theta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.theta], dtype=float)

    @classmethod
    def from_array(cls, x: np.ndarray) -> "UnicycleState":
        return cls(float(x[0]), float(x[1]), float(x[2]))


@dataclass(frozen=True)
class SimConfig:
    duration: float
    dt: float = 1.0 / 30.0
    integrator: str = "rk4"

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.duration < self.dt:
            raise ValueError("duration must cover at least one step")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator '{self.integrator}'")


def _unicycle_g(x: np.ndarray) -> np.ndarray:
    theta = x[2]
    return np.array([[math.cos(theta), 0.0], [math.sin(theta), 0.0], [0.0, 1.0]])


def _wrap_unicycle(x: np.ndarray) -> np.ndarray:
    out = np.array(x, dtype=float)
    out[2] = wrap_angle(out[2])
    return out


def unicycle_system() -> ControlAffineSystem:
    """Drift-free unicycle with the standard speed and turn-rate box."""
    return ControlAffineSystem(
        n=3,
        m=2,
        f=lambda x: np.zeros(3),
        g=_unicycle_g,
        input_box=np.asarray(UNICYCLE_INPUT_BOX),
        wrap_state=_wrap_unicycle,
    )


def single_integrator(speed_cap: float = 0.2) -> ControlAffineSystem:
    """Planar single integrator xdot = u with per-axis speed bounds."""
    if speed_cap <= 0:
        raise ValueError("speed_cap must be positive")
    return ControlAffineSystem(
        n=2,
        m=2,
        f=lambda x: np.zeros(2),
        g=lambda x: np.eye(2),
        input_box=np.array([[-speed_cap, speed_cap], [-speed_cap, speed_cap]]),
    )


def step(
    sys: ControlAffineSystem,
    x: np.ndarray,
    u: np.ndarray,
    dt: float,
    integrator: str = "rk4",
) -> np.ndarray:
    """One zero-order-hold integration step; u is assumed already admissible."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)

    def xdot(state: np.ndarray) -> np.ndarray:
        return np.asarray(sys.f(state), dtype=float) + np.asarray(sys.g(state), dtype=float) @ u

    if integrator == "euler":
        nxt = x + dt * xdot(x)
    elif integrator == "rk4":
        k1 = xdot(x)
        k2 = xdot(x + 0.5 * dt * k1)
        k3 = xdot(x + 0.5 * dt * k2)
        k4 = xdot(x + dt * k3)
        nxt = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        raise ValueError(f"unknown integrator '{integrator}'")
    if not np.all(np.isfinite(nxt)):
        raise FloatingPointError("non-finite state after integration step")
    if sys.wrap_state is not None:
        nxt = sys.wrap_state(nxt)
    return nxt


def lyapunov_nominal(
    x: np.ndarray,
    target: np.ndarray,
    target_rate: np.ndarray,
    gain: float = 2.0,
) -> np.ndarray:
    """Tracking input for the unicycle: least-squares realisation of the
    contraction xdot = sdot - gain * (x - s), which gives Vdot = -gain * V for
    V = ||x - s|| whenever the desired rate lies in the range of g.

    The heading residual is wrapped so the contraction never commands the long
    way around the circle.
    """
    if gain <= 0:
        raise ValueError("gain must be positive")
    x = np.asarray(x, dtype=float)
    target = np.asarray(target, dtype=float)
    residual = x - target
    residual[2] = wrap_angle(residual[2])
    desired = np.asarray(target_rate, dtype=float) - gain * residual
    g = _unicycle_g(x)
    return np.linalg.pinv(g) @ desired
