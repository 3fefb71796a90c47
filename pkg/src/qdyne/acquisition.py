"""Measurement protocols: Qdyne time-tag acquisition and swept XY8 spectroscopy."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import clock as clock_mod
from .clock import ClockModel
from .sensor import (PulseSequence, ReadoutAxis, SensorParams, accumulated_phase,
                     bright_probability, mean_photons, resonance_phase_amplitude)
from .signals import ModulatedCarrier, SampledTrace, Tone, ToneList

TWO_PI = 2.0 * math.pi
CHUNK = 1 << 20


class UnsupportedConfiguration(ValueError):
    pass


def _floor_ratio(a: float, b: float) -> int:
    # tolerate representation error in e.g. 9e-3 / 9e-6
    r = a / b
    return int(math.floor(r + 1e-9 * max(1.0, abs(r))))


@dataclass(frozen=True)
class QdyneConfig:
    source: Any
    sequence: PulseSequence
    sensor: SensorParams
    clock: ClockModel
    total_time: float
    axis: ReadoutAxis = ReadoutAxis()
    seed: int = 0

    def __post_init__(self):
        t_l = self.measurement_period
        if not math.isclose(t_l, self.clock.nominal_period, rel_tol=1e-9):
            raise ValueError(
                f"interaction + dead time = {t_l!r} s does not match the clock "
                f"period {self.clock.nominal_period!r} s"
            )
        if self.n_measurements < 16:
            raise ValueError(f"need at least 16 measurements, got {self.n_measurements}")

    @property
    def measurement_period(self) -> float:
        return self.sequence.interaction_time + self.sensor.readout_dead_time

    @property
    def n_measurements(self) -> int:
        return _floor_ratio(self.total_time, self.clock.nominal_period)


@dataclass(eq=False)
class AcquisitionTrace:
    """Per-measurement photon counts of one Qdyne run.

    Record ``n`` (0-based) started its interaction window at ``t_start[n]``.
    """

    t_start: np.ndarray
    photons: np.ndarray
    period: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t_start = np.asarray(self.t_start, dtype=float)
        self.photons = np.asarray(self.photons, dtype=np.uint32)
        if self.t_start.shape != self.photons.shape or self.t_start.ndim != 1:
            raise ValueError("t_start and photons must be 1-D arrays of equal length")

    @property
    def n_records(self) -> int:
        return self.photons.size

    @property
    def index(self):
        return np.arange(self.n_records, dtype=np.uint64)

    @property
    def duration(self) -> float:
        return self.n_records * self.period

    def truncated(self, n: int) -> AcquisitionTrace:
        meta = dict(self.metadata, n_records=int(n), truncated_from=self.n_records)
        return AcquisitionTrace(self.t_start[:n].copy(), self.photons[:n].copy(), self.period, meta)

    def check_integrity(self) -> None:
        bad = np.flatnonzero(np.diff(self.t_start) <= 0)
        if bad.size:
            raise ValueError(f"start times not increasing at record {int(bad[0]) + 1}")


def _streams(seed: int):
    clock_ss, photon_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(clock_ss), np.random.default_rng(photon_ss)


def run_qdyne(cfg: QdyneConfig, rng: np.random.Generator | None = None,
              clock_rng: np.random.Generator | None = None, first_tick: int = 0,
              n_measurements: int | None = None) -> AcquisitionTrace:
    """Simulate a Qdyne run: one XY8 train per clock tick, photons per readout.

    The signal keeps evolving between measurements; nothing is reset.  Each
    interaction window opens at its tick, so the first pi pulse sits half a
    delay later.  Passing explicit generators and ``first_tick`` lets a run
    be continued seamlessly by a second call.
    """
    n = cfg.n_measurements if n_measurements is None else int(n_measurements)
    default_clock_rng, default_rng = _streams(cfg.seed)
    rng = default_rng if rng is None else rng
    clock_rng = default_clock_rng if clock_rng is None else clock_rng

    ticks = clock_mod.tick_times(cfg.clock, n, clock_rng, first_tick=first_tick)
    seq = cfg.sequence
    coherence = cfg.sensor.coherence(seq.interaction_time)
    photons = np.empty(n, dtype=np.uint32)
    for lo in range(0, n, CHUNK):
        hi = min(lo + CHUNK, n)
        phi = accumulated_phase(cfg.source, seq, ticks[lo:hi] + 0.5 * seq.tau)
        p = bright_probability(phi, cfg.axis, coherence)
        photons[lo:hi] = rng.poisson(mean_photons(p, cfg.sensor))
    meta = {
        "protocol": "qdyne",
        "seed": cfg.seed,
        "n_records": n,
        "period_s": cfg.clock.nominal_period,
        "tau_s": seq.tau,
        "xy8_order": seq.order,
        "interaction_time_s": seq.interaction_time,
        "coherence": coherence,
        "readout_axis_phase": cfg.axis.final_pulse_phase,
        "clock_white_jitter_s": cfg.clock.white_jitter,
        "clock_frequency_random_walk": cfg.clock.frequency_random_walk,
        "first_tick": first_tick,
    }
    return AcquisitionTrace(ticks, photons, cfg.clock.nominal_period, meta)


def expected_phase_series(cfg: QdyneConfig):
    """Closed-form sensor phases ``A cos(2 pi s delta (T_n - T_L) + Phi_1)``.

    ``A = 2 k T_s / pi`` assumes the resonant filter, ``delta, s`` come from
    :func:`qdyne.spectral.alias_offset` and ``Phi_1`` is the signal phase at
    the first pi pulse of the first measurement.
    """
    from .spectral import alias_offset

    tones = getattr(cfg.source, "tones", None)
    if tones is None or len(tones) != 1:
        raise UnsupportedConfiguration("expected_phase_series needs a single-tone source")
    if not cfg.clock.is_perfect:
        raise UnsupportedConfiguration("expected_phase_series assumes a perfect clock")
    tone = tones[0]
    t_l = cfg.clock.nominal_period
    delta, sign = alias_offset(tone.frequency, t_l)
    ticks = clock_mod.tick_times(cfg.clock, cfg.n_measurements)
    phi1 = TWO_PI * tone.frequency * (t_l + 0.5 * cfg.sequence.tau) + tone.phase
    amp = resonance_phase_amplitude(tone.amplitude, cfg.sequence)
    return amp * np.cos(TWO_PI * sign * delta * (ticks - t_l) + phi1)


@dataclass(frozen=True)
class SweepConfig:
    """Conventional XY8 spectroscopy: step tau, average fluorescence.

    Every point uses ``repetitions`` readouts; with ``random_phase`` each
    readout sees an independent uniformly random signal phase.
    """

    source: Any
    sensor: SensorParams
    taus: tuple
    repetitions: int
    order: int = 1
    axis: ReadoutAxis = ReadoutAxis(math.pi / 2)
    random_phase: bool = True
    seed: int = 0

    def __post_init__(self):
        taus = tuple(float(t) for t in self.taus)
        if len(taus) < 1 or np.any(np.diff(taus) <= 0):
            raise ValueError("tau grid must be strictly increasing")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        object.__setattr__(self, "taus", taus)


@dataclass(eq=False)
class SweepResult:
    taus: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    reference: np.ndarray | None = None  # expected zero-field level per point

    @property
    def frequencies(self):
        """Filter centre frequency ``1/(2 tau)`` of each point."""
        return 0.5 / self.taus


def _random_phase_readouts(source, seq, reps, rng):
    if isinstance(source, (Tone, ToneList)):
        phi = np.zeros(reps)
        for tone in source.tones:
            offsets = rng.uniform(0.0, TWO_PI, reps)
            g = seq.response(tone.frequency)
            phi += tone.amplitude * np.imag(np.exp(1j * offsets) * g)
        return phi
    if isinstance(source, (SampledTrace, ModulatedCarrier)):
        lo = source.t0 + 0.5 * seq.tau
        hi = source.t_end - seq.interaction_time + 0.5 * seq.tau
        if hi <= lo:
            raise ValueError("sampled source shorter than one interaction window")
        return accumulated_phase(source, seq, rng.uniform(lo, hi, reps))
    raise TypeError(f"unsupported source type {type(source).__name__}")


def run_sweep(cfg: SweepConfig) -> SweepResult:
    rng = np.random.default_rng(cfg.seed)
    means, errs, refs = [], [], []
    for tau in cfg.taus:
        seq = PulseSequence(tau, cfg.order)
        coherence = cfg.sensor.coherence(seq.interaction_time)
        refs.append(float(mean_photons(bright_probability(0.0, cfg.axis, coherence), cfg.sensor)))
        if cfg.random_phase:
            phi = _random_phase_readouts(cfg.source, seq, cfg.repetitions, rng)
        else:
            phi = np.full(cfg.repetitions, float(accumulated_phase(cfg.source, seq, 0.5 * tau)))
        p = bright_probability(phi, cfg.axis, coherence)
        counts = rng.poisson(mean_photons(p, cfg.sensor))
        means.append(counts.mean())
        errs.append(counts.std(ddof=1) / math.sqrt(counts.size) if counts.size > 1 else math.nan)
    return SweepResult(np.array(cfg.taus), np.array(means), np.array(errs), np.array(refs))
