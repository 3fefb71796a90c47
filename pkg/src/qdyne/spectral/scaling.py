"""Monte-Carlo harness for linewidth, SNR and precision versus total time."""
from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..acquisition import QdyneConfig, SweepConfig, run_qdyne, run_sweep
from .fitting import NoPeakError, PeakFit, fit_lorentzian, fit_peak, half_power_width, snr
from .periodogram import Spectrum, alias_offset, periodogram, zoom_periodogram


@dataclass
class TrialResult:
    center: float = math.nan
    fwhm: float = math.nan
    snr: float = math.nan
    center_ci: float = math.nan
    converged: bool = False


def _smoothed(spec, bins: int):
    """Boxcar average over ``bins`` independent bins (no-op below 2)."""
    if bins < 2:
        return spec
    n = bins * spec.zero_pad
    if n >= spec.power.size // 2:
        return spec
    power = np.convolve(spec.power, np.ones(n) / n, mode="same")
    return Spectrum(spec.frequencies, power, spec.n_records, spec.period, spec.window,
                    spec.zero_pad, True, spec.segments)


def _seed_line(spec):
    """Centre, width, amplitude and floor estimates from integrated excess power."""
    f, p = spec.frequencies, spec.power
    floor = float(np.median(p)) / math.log(2.0)
    excess = np.clip(p - floor, 0.0, None)
    # restrict to the neighbourhood of the strongest smoothed feature
    smooth = np.convolve(p, np.ones(5) / 5.0, mode="same")
    i = int(np.argmax(smooth))
    cum = np.cumsum(excess)
    total = cum[-1]
    if not total > 0:
        return float(f[i]), 4 * spec.grid_step, float(p[i]), floor
    q25, q50, q75 = np.interp([0.25, 0.5, 0.75], cum / total, f)
    width = max(float(q75 - q25), 2 * spec.grid_step)
    centre = float(q50) if abs(q50 - f[i]) < 2 * width else float(f[i])
    amplitude = max(float(smooth[i]) - floor, float(p[i]) - floor, 1e-300)
    return centre, width, amplitude, floor


BAND_RATIO = 1.71  # fit half-band in units of the fitted FWHM


def locate_line(trace, expected: float, search_halfwidth: float, zero_pad: int = 16,
                max_iter: int = 8, window: str = "rect"):
    """Fit the line nearest ``expected`` in a Qdyne trace.

    The coarse spectrum over ``expected +- search_halfwidth`` seeds the
    centre and width from the quartiles of the integrated excess power,
    which for a Lorentzian are exactly ``centre +- FWHM/2`` and which are
    insensitive to the speckle of a single periodogram of a broadened line.
    A line resolved over many independent bins is boxcar-averaged over half
    its seed width before fitting.  The Lorentzian is then refitted on a
    zero-padded grid with the half-band pinned at ``BAND_RATIO`` fitted
    widths until the width settles; for a Lorentzian line this is
    self-consistent, for the sinc^2 line of a coherent tone it settles near
    0.88 / T.
    Returns ``(PeakFit, coarse spectrum)``.
    """
    nyq = 0.5 / trace.period
    lo = max(0.0, expected - search_halfwidth)
    hi = min(nyq, expected + search_halfwidth)
    coarse = zoom_periodogram(trace, lo, hi, zero_pad=2, window=window)
    centre, width, amplitude, floor = _seed_line(coarse)
    seed_width = width
    # a line resolved over many independent bins is speckled; average over half of it
    smooth_bins = int(seed_width / (2.0 * coarse.bin_width))
    min_width = seed_width if smooth_bins >= 2 else 0.0

    def grid(c, half_band):
        f_lo, f_hi = max(0.0, c - half_band), min(nyq, c + half_band)
        return zoom_periodogram(trace, f_lo, f_hi, zero_pad, window)

    span = 4.0 * BAND_RATIO * width
    fine = _smoothed(grid(centre, span), smooth_bins)
    fit = None
    for _ in range(max_iter):
        # for speckled lines never narrower than the seed, so spikes cannot shrink the band
        half_band = BAND_RATIO * max(width, min_width)
        if half_band > span or abs(centre - fine.frequencies.mean()) + half_band > span:
            span = 2.0 * max(half_band, span)
            fine = _smoothed(grid(centre, span), smooth_bins)
        band = fine.band(centre - half_band, centre + half_band)
        if band.frequencies.size < 24:
            pad = int(math.ceil(zero_pad * 24 / max(band.frequencies.size, 1)))
            band = zoom_periodogram(trace, max(0.0, centre - half_band),
                                    min(nyq, centre + half_band), pad, window)
        p0 = (amplitude, centre, width, floor)
        fit = fit_peak(band, false_alarm=None, p0=p0)
        if not fit.converged or not fit.fwhm > 0:
            break
        done = abs(fit.fwhm - width) <= 1e-3 * width or fit.fwhm < min_width
        width, centre = fit.fwhm, fit.center
        amplitude, floor = fit.amplitude, fit.floor
        if done:
            break
    return fit, coarse


def qdyne_trial(cfg: QdyneConfig, search_halfwidth: float | None = None) -> TrialResult:
    """Simulate one Qdyne run and fit the line at the alias of the first tone."""
    tone = cfg.source.tones[0]
    expected, _ = alias_offset(tone.frequency, cfg.clock.nominal_period)
    T = cfg.n_measurements * cfg.clock.nominal_period
    if search_halfwidth is None:
        search_halfwidth = 20.0 / T
    trace = run_qdyne(cfg)
    try:
        fit, coarse = locate_line(trace, expected, search_halfwidth)
    except (NoPeakError, ValueError):
        return TrialResult()
    try:
        # full band: the zoom window is dominated by the line's own sidelobes
        s = snr(periodogram(trace), fit)
    except ValueError:
        s = math.nan
    return TrialResult(fit.center, fit.fwhm, s, fit.center_ci, fit.converged)


def sweep_fit(result, max_iter: int = 8) -> PeakFit:
    """Lorentzian fit of the fluorescence dip on the filter-frequency axis.

    The fit is seeded at the deepest point and restricted to a band of
    +-BAND_RATIO FWHM around the current estimate, iterated to a fixed point,
    so harmonic responses and decohered long-tau points stay out of the fit.
    """
    f = result.frequencies
    order = np.argsort(f)
    ref = result.reference if result.reference is not None else 0.0
    # deficit below the zero-field level, so the decoherence roll-off at long tau is not a dip
    x, y = f[order], (ref - result.mean)[order]
    floor = float(np.median(y))
    ys = np.convolve(y, np.ones(3) / 3.0, mode="same") if y.size >= 8 else y
    i = int(np.argmax(ys))
    step = float(np.median(np.diff(x)))
    width = half_power_width(x, ys, i, floor)
    if not np.isfinite(width) or width < 3.0 * step:
        width = 3.0 * step
    p0 = (ys[i] - floor, x[i], width, floor)
    fit = None
    for _ in range(max_iter):
        half = BAND_RATIO * p0[2]
        sel = np.abs(x - p0[1]) <= half
        if sel.sum() < 8:
            sel = np.sort(np.argsort(np.abs(x - p0[1]))[:8])
        prev = p0[2]
        fit = fit_lorentzian(x[sel], y[sel], p0=p0)
        if not (np.isfinite(fit.fwhm) and fit.fwhm > 0 and x[0] <= fit.center <= x[-1]):
            fit.converged = False
            break
        p0 = (fit.amplitude, fit.center, fit.fwhm, fit.floor)
        if abs(fit.fwhm - prev) <= 1e-3 * prev:
            break
    return fit


def sweep_trial(cfg: SweepConfig) -> TrialResult:
    res = run_sweep(cfg)
    fit = sweep_fit(res)
    dip = fit.amplitude
    noise = float(np.median(res.stderr))
    s = math.sqrt(abs(dip) / noise) if noise > 0 else math.inf
    return TrialResult(fit.center, fit.fwhm, s, fit.center_ci, fit.converged)


def _cell_seed(base_seed: int, i: int, j: int) -> int:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(i, j))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _sweep_repetitions(cfg: SweepConfig, T: float, dead_time: float) -> int:
    mean_period = float(np.mean([8 * cfg.order * t for t in cfg.taus])) + dead_time
    return max(1, int(T / (len(cfg.taus) * mean_period)))


def _run_cell(args):
    kind, base, T, seed, kwargs = args
    if kind == "qdyne":
        cfg = dataclasses.replace(base, total_time=T, seed=seed)
        return qdyne_trial(cfg, **kwargs)
    reps = _sweep_repetitions(base, T, base.sensor.readout_dead_time)
    cfg = dataclasses.replace(base, repetitions=reps, seed=seed)
    return sweep_trial(cfg)


@dataclass
class ScalingResult:
    times: np.ndarray
    fwhm: np.ndarray
    snr: np.ndarray
    precision: np.ndarray
    excluded: np.ndarray
    valid: np.ndarray
    slopes: dict = field(default_factory=dict)
    centers: list = field(default_factory=list)

    def slope(self, column: str) -> tuple[float, float]:
        return self.slopes[column]

    def rows(self):
        for i in range(self.times.size):
            yield (float(self.times[i]), float(self.fwhm[i]), float(self.snr[i]),
                   float(self.precision[i]))


def loglog_slope(x, y) -> tuple[float, float]:
    """Slope and its standard error of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    if ok.sum() < 3:
        raise ValueError("need at least three valid points for a slope")
    fit = stats.linregress(np.log(x[ok]), np.log(y[ok]))
    return float(fit.slope), float(fit.stderr)


def scaling_harness(base, times, trials: int, seed: int = 0, workers: int = 1,
                    **trial_kwargs) -> ScalingResult:
    """Run ``trials`` seeded simulations per total time and fit scaling slopes.

    Precision is the cross-trial standard deviation of the fitted centres.
    Trials whose fit fails are excluded and counted; a time point with more
    than 20% exclusions is marked invalid and left out of the slope fits.
    """
    times = np.sort(np.asarray(times, dtype=float))
    if times.size < 2 or math.log10(times[-1] / times[0]) < 1.5:
        raise ValueError("time grid must span at least 1.5 decades")
    if trials < 10:
        raise ValueError("need at least 10 trials per point")
    if isinstance(base, QdyneConfig):
        kind = "qdyne"
    elif isinstance(base, SweepConfig):
        kind = "sweep"
    else:
        raise TypeError(f"unsupported base configuration {type(base).__name__}")

    cells = [(i, j) for i in range(times.size) for j in range(trials)]
    jobs = [(kind, base, float(times[i]), _cell_seed(seed, i, j), trial_kwargs) for i, j in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]

    fwhm, snrs, prec, excluded, valid, centers = [], [], [], [], [], []
    for i in range(times.size):
        cell = [results[k] for k, (ii, _) in enumerate(cells) if ii == i]
        good = [r for r in cell if r.converged and np.isfinite(r.center)]
        n_bad = len(cell) - len(good)
        excluded.append(n_bad)
        valid.append(n_bad <= 0.2 * len(cell) and len(good) >= 2)
        c = np.array([r.center for r in good])
        centers.append(c)
        fwhm.append(np.mean([r.fwhm for r in good]) if good else math.nan)
        snrs.append(np.mean([r.snr for r in good]) if good else math.nan)
        prec.append(np.std(c, ddof=1) if len(good) >= 2 else math.nan)
    out = ScalingResult(times, np.array(fwhm), np.array(snrs), np.array(prec),
                        np.array(excluded), np.array(valid), centers=centers)
    v = out.valid
    for name in ("fwhm", "snr", "precision"):
        try:
            out.slopes[name] = loglog_slope(times[v], getattr(out, name)[v])
        except ValueError:
            out.slopes[name] = (math.nan, math.nan)
    return out
