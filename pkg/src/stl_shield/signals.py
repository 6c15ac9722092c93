"""Finite-horizon sampled signals with linear interpolation and weighted semi-norms.

A signal is a uniform grid of vector samples; evaluation is defined exactly on
[t0, horizon].  The windowed semi-norm sup_t ||s(t)||_Q is the measuring stick
every Lipschitz robustness bound in this package is stated against.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

# Absolute slack, in seconds, used when deciding whether a query time is on the
# grid or inside the horizon.  Times in this package are O(10) s.
TIME_TOL = 1e-9


class HorizonClampWarning(UserWarning):
    """An evaluation window reached past the signal horizon and was clamped."""


class SignalDomainError(ValueError):
    """A time query fell outside the signal's horizon."""


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled trajectory in R^n on [t0, t0 + (len-1)*dt].

    Immutable: the sample array is made read-only so signals can be shared
    across concurrent trial workers.
    """

    t0: float
    dt: float
    samples: np.ndarray  # shape (n_samples, dim)

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"samples must be a (n_samples, dim) array, got ndim={arr.ndim}")
        if arr.shape[0] < 2:
            raise ValueError(f"a signal needs at least 2 samples, got {arr.shape[0]}")
        if not arr.shape[1] >= 1:
            raise ValueError("signal dimension must be at least 1")
        if not (float(self.dt) > 0.0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal samples must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "samples", arr)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def horizon(self) -> float:
        return self.t0 + (self.n_samples - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_samples)

    def _locate(self, t: float) -> tuple[int, float]:
        """Map t to (left index, fractional offset); snaps to grid within TIME_TOL."""
        u = (t - self.t0) / self.dt
        k = int(round(u))
        if 0 <= k < self.n_samples and abs(t - (self.t0 + k * self.dt)) <= TIME_TOL:
            return k, 0.0
        if t < self.t0 - TIME_TOL or t > self.horizon + TIME_TOL:
            raise SignalDomainError(
                f"time {t} outside signal horizon [{self.t0}, {self.horizon}]"
            )
        u = min(max(u, 0.0), self.n_samples - 1.0)
        k = min(int(math.floor(u)), self.n_samples - 2)
        return k, u - k

    def sample_at(self, t: float) -> np.ndarray:
        """Value at time t: exact sample on grid points, linear interpolation between."""
        k, frac = self._locate(t)
        if frac == 0.0:
            return self.samples[k].copy()
        return (1.0 - frac) * self.samples[k] + frac * self.samples[k + 1]

    def sample_many(self, ts: np.ndarray) -> np.ndarray:
        """Vectorised sample_at over an array of times, shape (len(ts), dim)."""
        ts = np.asarray(ts, dtype=float)
        if np.any(ts < self.t0 - TIME_TOL) or np.any(ts > self.horizon + TIME_TOL):
            bad = ts[(ts < self.t0 - TIME_TOL) | (ts > self.horizon + TIME_TOL)][0]
            raise SignalDomainError(
                f"time {bad} outside signal horizon [{self.t0}, {self.horizon}]"
            )
        u = np.clip((ts - self.t0) / self.dt, 0.0, self.n_samples - 1.0)
        k = np.minimum(u.astype(int), self.n_samples - 2)
        frac = (u - k)[:, None]
        return (1.0 - frac) * self.samples[k] + frac * self.samples[k + 1]

    def grid_indices_in(self, a: float, b: float) -> tuple[int, int]:
        """Inclusive index range of grid samples inside [a, b]; empty if lo > hi."""
        lo = int(math.ceil((a - self.t0) / self.dt - 1e-9))
        hi = int(math.floor((b - self.t0) / self.dt + 1e-9))
        return max(lo, 0), min(hi, self.n_samples - 1)

    def shifted(self, offset: float) -> "Signal":
        return Signal(self.t0 + offset, self.dt, self.samples)


@dataclass(frozen=True)
class WeightMatrix:
    """Diagonal non-negative weight matrix Q defining ||x||_Q = sqrt(x^T Q x)."""

    diag: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.diag, dtype=float).ravel()
        if d.size == 0 or np.any(d < 0.0) or not np.any(d > 0.0):
            raise ValueError("weights must be non-negative with at least one positive entry")
        d = d.copy()
        d.setflags(write=False)
        object.__setattr__(self, "diag", d)

    @property
    def dim(self) -> int:
        return self.diag.size

    @classmethod
    def identity(cls, n: int) -> "WeightMatrix":
        return cls(np.ones(n))

    @classmethod
    def planar(cls, n: int = 3) -> "WeightMatrix":
        """Weights selecting the first two coordinates, e.g. diag(1, 1, 0)."""
        d = np.zeros(n)
        d[:2] = 1.0
        return cls(d)


def weighted_norm(v: np.ndarray, weights: WeightMatrix) -> float:
    """sqrt(sum_i Q_i v_i^2); raises on dimension mismatch."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size != weights.dim:
        raise ValueError(f"vector dim {v.size} does not match weights dim {weights.dim}")
    return float(np.sqrt(np.dot(weights.diag, v * v)))


def semi_norm(s: Signal, window: tuple[float, float], weights: WeightMatrix) -> float:
    """Supremum of ||s(t)||_Q over the window, on the grid plus interpolated endpoints.

    Windows reaching past the horizon are clamped to it (HorizonClampWarning);
    a window starting before t0 or entirely past the horizon is an error.
    """
    a, b = float(window[0]), float(window[1])
    if a > b + TIME_TOL:
        raise ValueError(f"window start {a} exceeds window end {b}")
    if weights.dim != s.dim:
        raise ValueError(f"weights dim {weights.dim} does not match signal dim {s.dim}")
    if a < s.t0 - TIME_TOL or a > s.horizon + TIME_TOL:
        raise SignalDomainError(
            f"window [{a}, {b}] outside signal horizon [{s.t0}, {s.horizon}]"
        )
    a = max(a, s.t0)
    if b > s.horizon + TIME_TOL:
        warnings.warn(
            f"window end {b} clamped to signal horizon {s.horizon}", HorizonClampWarning
        )
        b = s.horizon
    b = min(b, s.horizon)

    lo, hi = s.grid_indices_in(a, b)
    best = -math.inf
    if lo <= hi:
        block = s.samples[lo : hi + 1]
        vals = np.sqrt((block * block) @ weights.diag)
        best = float(vals.max())
    for endpoint in (a, b):
        k = int(round((endpoint - s.t0) / s.dt))
        on_grid = abs(endpoint - (s.t0 + k * s.dt)) <= TIME_TOL and lo <= k <= hi
        if not on_grid:
            best = max(best, weighted_norm(s.sample_at(endpoint), weights))
    return best


def signal_difference(s: Signal, z: Signal) -> Signal:
    """Pointwise s - z on the overlap of their horizons, at the finer grid spacing."""
    if s.dim != z.dim:
        raise ValueError(f"signal dims differ: {s.dim} vs {z.dim}")
    start = max(s.t0, z.t0)
    end = min(s.horizon, z.horizon)
    dt = min(s.dt, z.dt)
    if end - start < dt - TIME_TOL:
        raise ValueError(
            f"signal horizons [{s.t0}, {s.horizon}] and [{z.t0}, {z.horizon}] "
            "do not overlap by at least one sample step"
        )
    n = int(math.floor((end - start) / dt + 1e-9)) + 1
    ts = start + dt * np.arange(n)
    return Signal(start, dt, s.sample_many(ts) - z.sample_many(ts))


def read_signal_csv(path: str) -> Signal:
    """Read a signal from CSV with header ``t,x1,...,xn``.

    Rows must be strictly increasing in t with uniform spacing (tolerance
    1e-9 * dt); anything else is rejected.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "t" or len(header) < 2:
            raise ValueError(f"{path}: expected header 't,x1,...,xn', got {header}")
        rows = [[float(cell) for cell in row] for row in reader if row]
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least 2 samples")
    data = np.asarray(rows, dtype=float)
    ts = data[:, 0]
    diffs = np.diff(ts)
    if np.any(diffs <= 0):
        raise ValueError(f"{path}: timestamps must be strictly increasing")
    dt = float(diffs[0])
    if np.any(np.abs(diffs - dt) > 1e-9 * dt):
        raise ValueError(f"{path}: non-uniform sample spacing (dt={dt})")
    return Signal(float(ts[0]), dt, data[:, 1:])


def write_signal_csv(s: Signal, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(s.dim)])
        for t, row in zip(s.times, s.samples):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
