"""Local-oscillator model that times the measurements."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np


class ClockConfigurationError(ValueError):
    """Noise settings produced a non-positive measurement period."""


@dataclass(frozen=True)
class ClockModel:
    """Tick generator with white period jitter and random-walk frequency noise.

    Period ``i`` is ``nominal_period * (1 + f_i) + w_i`` where ``w_i`` is
    white with std ``white_jitter`` (s) and ``f_i`` is a random walk in
    fractional frequency with per-tick step std ``frequency_random_walk``.
    ``stability_horizon`` is only carried along for the analytic precision
    models; it does not feed the noise.
    """

    nominal_period: float
    white_jitter: float = 0.0
    frequency_random_walk: float = 0.0
    stability_horizon: float = math.inf

    def __post_init__(self):
        if not self.nominal_period > 0:
            raise ValueError("nominal period must be positive")
        if self.white_jitter < 0 or self.frequency_random_walk < 0:
            raise ValueError("clock noise sigmas must be >= 0")

    @property
    def is_perfect(self) -> bool:
        return self.white_jitter == 0 and self.frequency_random_walk == 0


def tick_times(model: ClockModel, n_ticks: int, rng: np.random.Generator | None = None,
               first_tick: int = 0):
    """Start times ``T_1 ... T_n`` of consecutive measurements.

    Ticks are offset by ``first_tick`` periods, so a perfect clock gives
    ``(first_tick + n) * nominal_period`` for the n-th returned tick.  The
    deviation from the nominal comb is accumulated separately to keep
    long series accurate.
    """
    if n_ticks < 1:
        raise ValueError("need at least one tick")
    n = np.arange(first_tick + 1, first_tick + n_ticks + 1, dtype=float)
    nominal = n * model.nominal_period
    if model.is_perfect:
        return nominal
    if rng is None:
        raise ValueError("a noisy clock needs a random generator")
    deviation = np.zeros(n_ticks)
    if model.frequency_random_walk > 0:
        frac = np.cumsum(rng.standard_normal(n_ticks)) * model.frequency_random_walk
        deviation += model.nominal_period * frac
    if model.white_jitter > 0:
        deviation += rng.standard_normal(n_ticks) * model.white_jitter
    if np.any(model.nominal_period + deviation <= 0):
        raise ClockConfigurationError(
            "clock noise produced a non-positive period; reduce the noise sigmas"
        )
    return nominal + np.cumsum(deviation)


class AllanResult(NamedTuple):
    taus: np.ndarray
    adev: np.ndarray
    omitted: np.ndarray  # requested taus skipped for lack of data


def allan_deviation(ticks, taus) -> AllanResult:
    """Overlapping Allan deviation of the fractional frequency of a tick series.

    The clock time error ``x_k = T_k - k * Tbar`` is used as phase data, with
    ``Tbar`` the mean period.  Taus are rounded to whole multiples of Tbar.
    """
    ticks = np.asarray(ticks, dtype=float)
    if ticks.size < 3:
        raise ValueError("need at least 3 ticks")
    k = np.arange(ticks.size)
    tbar = (ticks[-1] - ticks[0]) / (ticks.size - 1)
    x = (ticks - ticks[0]) - k * tbar
    out_tau, out_adev, omitted = [], [], []
    for tau in np.atleast_1d(taus):
        m = int(round(tau / tbar))
        if m < 1 or x.size - 2 * m < 1:
            omitted.append(tau)
            continue
        d2 = x[2 * m:] - 2.0 * x[m:-m] + x[:-2 * m]
        tau_m = m * tbar
        out_tau.append(tau_m)
        out_adev.append(math.sqrt(np.mean(d2 * d2) / (2.0 * tau_m * tau_m)))
    return AllanResult(np.array(out_tau), np.array(out_adev), np.array(omitted))


def export_ticks_csv(path, ticks) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t_s"])
        for t in ticks:
            writer.writerow([repr(float(t))])
