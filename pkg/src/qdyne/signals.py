"""Oscillating field sources that drive the sensor.

All amplitudes are in angular-frequency units (rad/s), i.e. the coefficient
``k`` multiplying ``sigma_z`` in the coupling Hamiltonian.  A source is any
object with an ``evaluate(t)`` method accepting scalars or arrays.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TWO_PI = 2.0 * math.pi

# Electron gyromagnetic ratio, rad s^-1 T^-1.
GAMMA_ELECTRON = TWO_PI * 28.024951e9
# Half of it is used so that a resonant XY8 phase 2 k T_s / pi matches the
# usual B-field convention for the |0> <-> |-1> transition.
DEFAULT_GYROMAGNETIC_SCALE = 0.5 * GAMMA_ELECTRON


class TraceRangeError(ValueError):
    """A sampled trace was evaluated outside the time span it covers."""


@dataclass(frozen=True)
class Tone:
    """Single tone ``k sin(2 pi nu t + Phi)``.

    Parameters
    ----------
    amplitude : float
        Coupling amplitude k in rad/s, must be >= 0.
    frequency : float
        Frequency nu in Hz, must be > 0.
    phase : float
        Phase Phi in rad. Stored normalized to [0, 2 pi).
    """

    amplitude: float
    frequency: float
    phase: float = 0.0

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise ValueError(f"tone amplitude must be >= 0, got {self.amplitude}")
        if not self.frequency > 0:
            raise ValueError(f"tone frequency must be > 0, got {self.frequency}")
        object.__setattr__(self, "phase", float(np.mod(self.phase, TWO_PI)))

    @property
    def tones(self) -> tuple[Tone, ...]:
        return (self,)

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        return self.amplitude * np.sin(TWO_PI * self.frequency * t + self.phase)

    def __add__(self, other):
        return ToneList(self.tones + other.tones)


@dataclass(frozen=True)
class ToneList:
    """Sum of independent tones (e.g. several signal generators)."""

    tones: tuple[Tone, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tones", tuple(self.tones))

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for tone in self.tones:
            out = out + tone.evaluate(t)
        return out

    def __add__(self, other):
        return ToneList(self.tones + other.tones)


@dataclass(frozen=True, eq=False)
class SampledTrace:
    """Real field trace sampled on a uniform grid, linearly interpolated.

    Sample ``i`` sits at ``t0 + i * period``.
    """

    period: float
    values: np.ndarray
    t0: float = 0.0
    _cumulative: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("sampled trace needs at least two samples")
        if not self.period > 0:
            raise ValueError("sample period must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        # running integral of the linear interpolant at the sample points
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * self.period)))
        object.__setattr__(self, "_cumulative", cum)

    @property
    def t_end(self) -> float:
        return self.t0 + (self.values.size - 1) * self.period

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        span_tol = 1e-9 * self.period
        if np.any(t < self.t0 - span_tol) or np.any(t > self.t_end + span_tol):
            raise TraceRangeError(
                f"time outside sampled span [{self.t0}, {self.t_end}]"
            )
        u = np.clip((t - self.t0) / self.period, 0.0, self.values.size - 1)
        i = np.minimum(np.floor(u).astype(np.int64), self.values.size - 2)
        return i, u - i

    def evaluate(self, t):
        i, frac = self._locate(t)
        v = self.values
        return v[i] + frac * (v[i + 1] - v[i])

    def integral_to(self, t):
        """Integral of the interpolant from ``t0`` to ``t`` (exact)."""
        i, frac = self._locate(t)
        v = self.values
        h = frac * self.period
        return self._cumulative[i] + v[i] * h + 0.5 * (v[i + 1] - v[i]) * frac * h


@dataclass(frozen=True, eq=False)
class ModulatedCarrier:
    """Carrier at ``frequency`` with a slowly varying complex envelope.

    The field is ``Im(E(t) exp(i 2 pi f t))`` where ``E`` is linearly
    interpolated from samples at ``t0 + i * period``.  Used for stochastic
    nuclear-spin signals, whose envelope varies on timescales much longer
    than the carrier period.
    """

    frequency: float
    period: float
    envelope: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        env = np.ascontiguousarray(self.envelope, dtype=complex)
        if env.ndim != 1 or env.size < 2:
            raise ValueError("envelope needs at least two samples")
        if not (self.period > 0 and self.frequency > 0):
            raise ValueError("period and frequency must be positive")
        env.setflags(write=False)
        object.__setattr__(self, "envelope", env)

    @property
    def t_end(self) -> float:
        return self.t0 + (self.envelope.size - 1) * self.period

    def envelope_at(self, t):
        t = np.asarray(t, dtype=float)
        tol = 1e-9 * self.period
        if np.any(t < self.t0 - tol) or np.any(t > self.t_end + tol):
            raise TraceRangeError(
                f"time outside envelope span [{self.t0}, {self.t_end}]"
            )
        u = np.clip((t - self.t0) / self.period, 0.0, self.envelope.size - 1)
        i = np.minimum(np.floor(u).astype(np.int64), self.envelope.size - 2)
        frac = u - i
        e = self.envelope
        return e[i] + frac * (e[i + 1] - e[i])

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        return np.imag(self.envelope_at(t) * np.exp(1j * TWO_PI * self.frequency * t))


def evaluate(source, t):
    """Field value of ``source`` at time(s) ``t`` in rad/s."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("evaluation time must be >= 0")
    return source.evaluate(t)


@dataclass(frozen=True)
class FieldUnitConversion:
    """Linear map from field amplitude in tesla to coupling k in rad/s."""

    gyromagnetic_scale: float = DEFAULT_GYROMAGNETIC_SCALE

    def __post_init__(self):
        if not self.gyromagnetic_scale > 0:
            raise ValueError("gyromagnetic scale must be strictly positive")


def field_to_k(b_tesla: float, conv: FieldUnitConversion = FieldUnitConversion()) -> float:
    if b_tesla < 0:
        raise ValueError(f"field amplitude must be >= 0, got {b_tesla}")
    return conv.gyromagnetic_scale * b_tesla


def load_trace_csv(path) -> SampledTrace:
    """Read a two-column ``time_s,k_rad_per_s`` CSV with a one-line header."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2 or data.shape[0] < 2:
        raise ValueError(f"{path}: expected two columns and at least two rows")
    t, v = data[:, 0], data[:, 1]
    steps = np.diff(t)
    period = (t[-1] - t[0]) / (t.size - 1)
    if np.any(np.abs(steps - period) > 1e-6 * period):
        raise ValueError(f"{path}: sample times are not uniformly spaced")
    return SampledTrace(period=period, values=v, t0=t[0])


def save_trace_csv(trace: SampledTrace, path) -> None:
    t = trace.t0 + np.arange(trace.values.size) * trace.period
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["time_s", "k_rad_per_s"])
        for ti, vi in zip(t, trace.values):
            writer.writerow([format(float(ti), ".17g"), format(float(vi), ".17g")])
