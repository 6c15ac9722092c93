"""Time-varying barrier around one expert signal and the input safety filter.

Given an expert trajectory s with robustness rho0 >= 0 under a Lipschitz
certificate (L, window, Q), the barrier

    h(x, t) = rho0^2 - L^2 * (x - s(t))^T Q (x - s(t))

is non-negative exactly on the tube of states within weighted distance rho0/L
of the expert.  Keeping h >= 0 keeps the trajectory inside the tube, which by
the Lipschitz bound keeps its robustness non-negative.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .signals import Signal, WeightMatrix, read_signal_csv
from .stl import LipschitzCertificate


@dataclass(frozen=True)
class ControlAffineSystem:
    """xdot = f(x) + g(x) u with a box of admissible inputs.

    wrap_state, when set, normalises states after integration (e.g. wrapping a
    heading angle); it must be the identity on already-normalised states.
    """

    n: int
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    input_box: np.ndarray  # shape (m, 2) of [lo, hi]
    wrap_state: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        box = np.asarray(self.input_box, dtype=float).reshape(self.m, 2)
        if np.any(box[:, 0] > box[:, 1]):
            raise ValueError("input box has lo > hi")
        box = box.copy()
        box.setflags(write=False)
        object.__setattr__(self, "input_box", box)

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.clip(u, self.input_box[:, 0], self.input_box[:, 1])


def finite_difference_rate(s: Signal) -> Signal:
    """Sample-wise derivative: central differences, one-sided at the endpoints."""
    rate = np.empty_like(s.samples)
    rate[1:-1] = (s.samples[2:] - s.samples[:-2]) / (2.0 * s.dt)
    rate[0] = (s.samples[1] - s.samples[0]) / s.dt
    rate[-1] = (s.samples[-1] - s.samples[-2]) / s.dt
    return Signal(s.t0, s.dt, rate)


@dataclass(frozen=True)
class TimeVaryingBarrier:
    """Shrinking tube barrier h(x, t) = rho0^2 - L^2 ||x - s(t)||_Q^2."""

    expert: Signal
    rho0: float
    lipschitz: float
    weights: WeightMatrix
    expert_rate: Signal

    def value(self, x: np.ndarray, t: float) -> float:
        e = np.asarray(x, dtype=float) - self.expert.sample_at(t)
        q = float(np.dot(self.weights.diag, e * e))
        return self.rho0 ** 2 - self.lipschitz ** 2 * q

    def gradients(self, x: np.ndarray, t: float) -> tuple[np.ndarray, float]:
        """(dh/dx, dh/dt) at (x, t); dh/dt uses the stored expert rate."""
        e = np.asarray(x, dtype=float) - self.expert.sample_at(t)
        coeff = 2.0 * self.lipschitz ** 2
        dh_dx = -coeff * self.weights.diag * e
        rate = self.expert_rate.sample_at(t)
        dh_dt = coeff * float(np.dot(self.weights.diag * e, rate))
        return dh_dx, dh_dt

    def filter_input(
        self,
        sys: ControlAffineSystem,
        x: np.ndarray,
        t: float,
        u_nom: np.ndarray,
        alpha_gain: float = 2.0,
        clamp: bool = True,
    ) -> tuple[np.ndarray, bool]:
        """Minimal deviation from u_nom subject to hdot(x, t, u) >= -alpha_gain * h.

        The constraint is a single halfspace a.u + c >= 0, so the solution is
        the closed-form projection of u_nom onto it.  With a = 0 (only at the
        tube centre under the weighted norm) any input satisfies the barrier
        inequality and u_nom passes through.  The result is clamped to the
        input box afterwards unless clamp=False.
        """
        x = np.asarray(x, dtype=float)
        u_nom = np.asarray(u_nom, dtype=float)
        if alpha_gain <= 0:
            raise ValueError("alpha_gain must be positive")
        fx = np.asarray(sys.f(x), dtype=float)
        gx = np.asarray(sys.g(x), dtype=float)
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(gx))):
            raise FloatingPointError("non-finite dynamics evaluation in safety filter")
        dh_dx, dh_dt = self.gradients(x, t)
        a = gx.T @ dh_dx
        c = float(dh_dx @ fx) + dh_dt + alpha_gain * self.value(x, t)
        residual = float(a @ u_nom) + c
        norm_sq = float(a @ a)
        if residual >= 0.0 or norm_sq == 0.0:
            u, active = u_nom, False
        else:
            u = u_nom - (residual / norm_sq) * a
            active = True
        if not np.all(np.isfinite(u)):
            raise FloatingPointError("non-finite filtered input")
        if clamp:
            u = sys.clamp(u)
        return u, active


def synthesize(
    expert: Signal, rho0: float, cert: LipschitzCertificate
) -> TimeVaryingBarrier:
    """Build the tube barrier for an expert signal with robustness rho0.

    rho0 must be the robustness of the target specification on the expert at
    time 0; non-satisfying experts (rho0 < 0) are refused.
    """
    rho0 = float(rho0)
    if not math.isfinite(rho0):
        raise ValueError("rho0 must be finite")
    if rho0 < 0.0:
        raise ValueError(
            f"expert does not satisfy specification: robustness {rho0} < 0"
        )
    if cert.weights.dim != expert.dim:
        raise ValueError(
            f"certificate weights dim {cert.weights.dim} does not match expert dim {expert.dim}"
        )
    return TimeVaryingBarrier(
        expert=expert,
        rho0=rho0,
        lipschitz=float(cert.constant),
        weights=cert.weights,
        expert_rate=finite_difference_rate(expert),
    )


def barrier_to_json(b: TimeVaryingBarrier, expert_csv_path: str) -> str:
    """Serialise barrier metadata; the expert signal lives in a CSV side file."""
    return json.dumps(
        {
            "rho0": b.rho0,
            "L": b.lipschitz,
            "weights": [float(w) for w in b.weights.diag],
            "expert": expert_csv_path,
        },
        sort_keys=True,
    )


def barrier_from_json(text: str, base_dir: str = ".") -> TimeVaryingBarrier:
    meta = json.loads(text)
    path = meta["expert"]
    if not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    expert = read_signal_csv(path)
    cert = LipschitzCertificate(
        float(meta["L"]), (0.0, expert.horizon - expert.t0), WeightMatrix(np.asarray(meta["weights"]))
    )
    return synthesize(expert, float(meta["rho0"]), cert)
