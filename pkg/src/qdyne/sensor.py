"""Two-level sensor under an XY8 dynamical-decoupling train.

Timing convention: ``t_start`` is the time of the first pi pulse.  Free
evolution begins half an interpulse delay earlier and the train closes with
another half delay, so the toggling function relative to ``t_start`` is
``sign(sin(pi * s / tau))`` on ``[-tau/2, n * tau - tau/2]``.  With this
reference a resonant tone ``k sin(2 pi nu t + Phi)`` with ``tau = 1/(2 nu)``
gives the phase ``2 k T_s cos(Phi) / pi``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .signals import ModulatedCarrier, SampledTrace, Tone, ToneList

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PulseSequence:
    """XY8-N train with ideal, zero-width pi pulses.

    Parameters
    ----------
    tau : float
        Interpulse delay in seconds.
    order : int
        Number of XY8 blocks (8 pi pulses each).
    """

    tau: float
    order: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"interpulse delay must be positive, got {self.tau}")
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"XY8 order must be a positive integer, got {self.order}")

    @property
    def n_pulses(self) -> int:
        return 8 * int(self.order)

    @property
    def interaction_time(self) -> float:
        return self.n_pulses * self.tau

    @property
    def resonance_frequency(self) -> float:
        return 1.0 / (2.0 * self.tau)

    def segments(self):
        """Segment edges relative to the first pi pulse and the sign on each."""
        n = self.n_pulses
        edges = np.concatenate(([-0.5], np.arange(n, dtype=float), [n - 0.5])) * self.tau
        signs = np.where(np.arange(n + 1) % 2 == 0, -1.0, 1.0)
        return edges, signs

    def response(self, nu):
        """Complex response ``G(nu) = integral f(s) exp(i 2 pi nu s) ds``.

        For a tone, the accumulated phase is ``k Im(exp(i(2 pi nu t_start + Phi)) G(nu))``.
        """
        nu = np.asarray(nu, dtype=float)
        edges, signs = self.segments()
        lengths = np.diff(edges)
        mids = 0.5 * (edges[1:] + edges[:-1])
        nu_ = nu[..., None]
        # np.sinc keeps the nu -> 0 limit exact
        terms = signs * lengths * np.sinc(nu_ * lengths) * np.exp(1j * TWO_PI * nu_ * mids)
        return terms.sum(axis=-1)


@dataclass(frozen=True)
class SensorParams:
    """Coherence and optical readout properties of the sensor.

    ``mean_photons_bright`` is the mean detected photon number per readout
    for the bright state; the dark state gives ``(1 - contrast)`` of that.
    """

    t2: float = 100e-6
    decay_exponent: float = 1.0
    contrast: float = 0.3
    mean_photons_bright: float = 0.03
    readout_dead_time: float = 5e-6

    def __post_init__(self):
        if not self.t2 > 0:
            raise ValueError("t2 must be positive")
        if not 0 < self.contrast <= 1:
            raise ValueError("contrast must be in (0, 1]")
        if not self.mean_photons_bright > 0:
            raise ValueError("mean_photons_bright must be positive")
        if self.readout_dead_time < 0:
            raise ValueError("readout_dead_time must be >= 0")
        if not self.decay_exponent > 0:
            raise ValueError("decay exponent must be positive")

    def coherence(self, interaction_time: float) -> float:
        return math.exp(-((interaction_time / self.t2) ** self.decay_exponent))


@dataclass(frozen=True)
class ReadoutAxis:
    """Phase of the closing pi/2 rotation.

    0 maps the sensor phase onto ``sin(phi)`` (Qdyne default), pi/2 onto
    ``cos(phi)`` (population readout used by swept spectroscopy).
    """

    final_pulse_phase: float = 0.0


def _segment_windows(seq: PulseSequence, t_start):
    edges, signs = seq.segments()
    t_start = np.asarray(t_start, dtype=float)
    return t_start[..., None] + edges, signs


def accumulated_phase(source, seq: PulseSequence, t_start, phase_offset: float = 0.0):
    """Sensor phase acquired over one XY8 train starting at ``t_start``.

    Tones are integrated in closed form, sampled traces piecewise (exact for
    their linear interpolant).  ``phase_offset`` is added to the phase of
    every tone, which is how randomized signal phases are applied without
    moving the time origin.  Vectorized over ``t_start``.
    """
    if isinstance(source, (Tone, ToneList)):
        t_start = np.asarray(t_start, dtype=float)
        out = np.zeros(t_start.shape)
        for tone in source.tones:
            if tone.amplitude == 0:
                continue
            g = seq.response(tone.frequency)
            carrier = np.exp(1j * (TWO_PI * tone.frequency * t_start + tone.phase + phase_offset))
            out += tone.amplitude * np.imag(carrier * g)
        return out
    if isinstance(source, SampledTrace):
        if phase_offset:
            raise ValueError("phase_offset is only defined for tone sources")
        bounds, signs = _segment_windows(seq, t_start)
        cum = source.integral_to(bounds)
        return (np.diff(cum, axis=-1) * signs).sum(axis=-1)
    if isinstance(source, ModulatedCarrier):
        # envelope is frozen over each segment (correlation time >> tau)
        bounds, signs = _segment_windows(seq, t_start)
        lengths = np.diff(bounds, axis=-1)
        mids = 0.5 * (bounds[..., 1:] + bounds[..., :-1])
        env = source.envelope_at(mids)
        f = source.frequency
        seg = lengths * np.sinc(f * lengths) * np.exp(1j * (TWO_PI * f * mids + phase_offset))
        return (signs * np.imag(env * seg)).sum(axis=-1)
    raise TypeError(f"unsupported source type {type(source).__name__}")


def resonance_phase_amplitude(k: float, seq: PulseSequence) -> float:
    """Peak phase ``2 k T_s / pi`` for a resonant tone."""
    return 2.0 * k * seq.interaction_time / math.pi


def filter_weight(nu, seq: PulseSequence):
    """Phase response to a unit tone at ``nu``, maximized over its phase.

    Normalized to 1 at ``nu = 1/(2 tau)``.  The maximum over Phi is the
    quadrature sum of the Phi = 0 and Phi = pi/2 responses, i.e. ``|G(nu)|``.
    """
    g = seq.response(nu)
    norm = 2.0 * seq.interaction_time / math.pi
    return np.hypot(g.real, g.imag) / norm


def export_filter_csv(path, seq: PulseSequence, frequencies) -> None:
    w = filter_weight(np.asarray(frequencies, dtype=float), seq)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["nu_hz", "weight"])
        for f, wi in zip(np.atleast_1d(frequencies), np.atleast_1d(w)):
            writer.writerow([repr(float(f)), repr(float(wi))])


def bright_probability(phi, axis: ReadoutAxis = ReadoutAxis(), coherence=1.0):
    """Probability of reading the bright state after the closing pi/2 pulse."""
    p = 0.5 + 0.5 * np.asarray(coherence) * np.sin(np.asarray(phi) + axis.final_pulse_phase)
    return np.clip(p, 0.0, 1.0)


def mean_photons(p_bright, params: SensorParams):
    p = np.asarray(p_bright, dtype=float)
    return params.mean_photons_bright * (p + (1.0 - p) * (1.0 - params.contrast))


def sample_photons(p_bright, params: SensorParams, rng: np.random.Generator):
    """Poisson photon counts for one or many readouts."""
    return rng.poisson(mean_photons(p_bright, params))
