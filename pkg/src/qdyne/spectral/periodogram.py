"""Periodograms of photon-count records and alias arithmetic."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def alias_offset(nu: float, period: float) -> tuple[float, int]:
    """Beat frequency between ``nu`` and the nearest harmonic of ``1/period``.

    Returns ``(delta, sign)`` with ``delta`` in ``[0, f_s/2]`` and
    ``nu = m f_s + sign * delta`` for an integer ``m``.
    """
    if not (nu > 0 and period > 0):
        raise ValueError("frequency and period must be positive")
    fs = 1.0 / period
    # work in units of f_s so exact harmonics come out exactly
    r = math.fmod(nu * period, 1.0)
    if r <= 0.5:
        return r * fs, 1
    return (1.0 - r) * fs, -1


@dataclass(eq=False)
class Spectrum:
    """One-sided power spectrum on the grid ``j * bin_width / zero_pad``.

    ``power = c |X|^2 / N`` with ``c = 2`` except for the DC and Nyquist
    bins, so the unpadded full spectrum sums to the windowed energy.
    ``band_limited`` marks zoomed spectra that cover only part of
    ``[0, 1/(2 period)]``.  ``segments`` is the number of periodograms
    averaged into each bin.
    """

    frequencies: np.ndarray
    power: np.ndarray
    n_records: int
    period: float
    window: str = "rect"
    zero_pad: int = 1
    band_limited: bool = False
    segments: int = 1

    @property
    def bin_width(self) -> float:
        return 1.0 / (self.n_records * self.period)

    @property
    def grid_step(self) -> float:
        return self.bin_width / self.zero_pad

    def band(self, lo: float, hi: float) -> Spectrum:
        sel = (self.frequencies >= lo) & (self.frequencies <= hi)
        return Spectrum(self.frequencies[sel], self.power[sel], self.n_records, self.period,
                        self.window, self.zero_pad, True, self.segments)

    def total_energy(self) -> float:
        """Sum of power divided by the padding factor (Parseval side)."""
        if self.band_limited:
            raise ValueError("energy of a band-limited spectrum is not defined")
        return float(self.power.sum() / self.zero_pad)


def _window(name: str, n: int):
    if name == "rect":
        return None
    if name == "hann":
        return np.hanning(n)
    raise ValueError(f"unknown window {name!r}")


def prepared_series(counts, window: str = "rect"):
    """Mean-subtracted, windowed count series."""
    x = np.asarray(counts, dtype=float)
    x = x - x.mean()
    w = _window(window, x.size)
    return x if w is None else x * w


class SampleSeries:
    """A plain uniformly sampled real series usable wherever a trace is."""

    def __init__(self, values, period: float):
        self.photons = np.asarray(values, dtype=float)
        self.period = float(period)
        self.metadata = {}

    @property
    def n_records(self) -> int:
        return self.photons.size


def _check_trace(trace):
    if trace.n_records < 16:
        raise ValueError("need at least 16 records")
    if "index" in trace.metadata:
        idx = np.asarray(trace.metadata["index"])
        if np.any(np.diff(idx) != 1):
            raise ValueError("record indices have gaps; periodogram needs a dense record")


def periodogram(trace, window: str = "rect", zero_pad: int = 1) -> Spectrum:
    """Full one-sided periodogram of a trace's photon counts."""
    _check_trace(trace)
    if zero_pad < 1 or int(zero_pad) != zero_pad:
        raise ValueError("zero_pad must be a positive integer")
    return periodogram_of(trace.photons, trace.period, window, int(zero_pad))


def periodogram_of(counts, period: float, window: str = "rect", zero_pad: int = 1) -> Spectrum:
    x = prepared_series(counts, window)
    n = x.size
    nfft = n * zero_pad
    spec = np.fft.rfft(x, n=nfft)
    power = np.abs(spec) ** 2 / n
    power[1:] *= 2.0
    if nfft % 2 == 0:
        power[-1] /= 2.0
    freqs = np.arange(power.size) / (nfft * period)
    return Spectrum(freqs, power, n, period, window, zero_pad)


def zoom_periodogram(trace, f_lo: float, f_hi: float, zero_pad: int = 16,
                     window: str = "rect") -> Spectrum:
    """Zero-padded periodogram restricted to ``[f_lo, f_hi]``.

    Values are exact samples of the windowed DTFT, scaled as in
    :func:`periodogram`.  The grid step is ``1/(M zero_pad T_L)`` with ``M``
    the record count rounded up to whole summation blocks, so it equals the
    padded FFT grid whenever ``M == N``.  The long transform is never formed.
    """
    _check_trace(trace)
    return zoom_periodogram_of(trace.photons, trace.period, f_lo, f_hi, zero_pad, window)


_TAYLOR_TERMS = 12


def zoom_periodogram_of(counts, period: float, f_lo: float, f_hi: float,
                        zero_pad: int = 16, window: str = "rect") -> Spectrum:
    x = prepared_series(counts, window)
    n = x.size
    # Downconvert to the band centre, X(fc + e) = sum_n y_n exp(-i 2 pi e n T),
    # then sum blocks of length L using a Taylor series of the residual phase
    # about each block centre.  L is chosen so that phase stays below 1/4 rad.
    approx_step = 1.0 / (n * zero_pad * period)
    half_span = 0.5 * (f_hi - f_lo) + 2 * approx_step
    block = int(max(1, min(n, 0.5 / (TWO_PI * half_span * period))))
    n_blocks = -(-n // block)
    n_padded = n_blocks * block  # extra zeros leave the transform unchanged
    nfft = n_padded * zero_pad
    step = 1.0 / (nfft * period)
    j_lo = max(0, math.ceil(f_lo / step - 1e-9))
    j_hi = min(math.floor(f_hi / step + 1e-9), nfft // 2)
    if j_hi < j_lo:
        raise ValueError("band contains no grid points")
    j_c = (j_lo + j_hi) // 2

    k = np.arange(n, dtype=np.int64)
    # exact carrier phase in cycles via integer arithmetic
    cycles = ((k * j_c) % nfft) / nfft
    y = np.zeros(n_padded, dtype=complex)
    y[:n] = x * np.exp(-1j * TWO_PI * cycles)
    centre = 0.5 * (block - 1)
    r = np.arange(block) - centre
    powers = r[:, None] ** np.arange(_TAYLOR_TERMS)[None, :]
    z = y.reshape(n_blocks, block) @ powers

    g = np.arange(j_lo, j_hi + 1) - j_c
    theta = TWO_PI * g * step * period
    m_fft = zero_pad * n_blocks
    out = np.zeros(g.size, dtype=complex)
    fact = 1.0
    for order in range(_TAYLOR_TERMS):
        if order:
            fact *= order
        # sum_m Z[m] exp(-i theta L m) with theta L = 2 pi g / m_fft
        col = np.fft.fft(z[:, order], n=m_fft)
        out += ((-1j * theta) ** order / fact) * col[np.mod(g, m_fft)]
    out *= np.exp(-1j * theta * centre)
    power = 2.0 * np.abs(out) ** 2 / n
    j = np.arange(j_lo, j_hi + 1)
    power[(j == 0) | (2 * j == nfft)] /= 2.0
    return Spectrum(j * step, power, n, period, window, zero_pad, band_limited=True)


def averaged_periodogram(trace, n_segments: int, window: str = "hann") -> Spectrum:
    """Bartlett average of periodograms over consecutive equal segments."""
    seg = trace.n_records // n_segments
    if n_segments < 1 or seg < 16:
        raise ValueError("segments must hold at least 16 records")
    counts = np.asarray(trace.photons[: seg * n_segments], dtype=float).reshape(n_segments, seg)
    acc = None
    for row in counts:
        s = periodogram_of(row, trace.period, window)
        acc = s.power if acc is None else acc + s.power
    return Spectrum(s.frequencies, acc / n_segments, seg, trace.period, window, 1,
                    segments=n_segments)
