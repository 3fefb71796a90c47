"""Least-squares Lorentzian line fits with linearized confidence intervals."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize, stats


class NoPeakError(ValueError):
    """No significant local maximum inside the search band."""


@dataclass
class PeakFit:
    center: float
    fwhm: float
    amplitude: float
    floor: float
    center_ci: float
    fwhm_ci: float
    amplitude_ci: float
    floor_ci: float
    converged: bool
    residual_norm: float
    line_shape: str = "lorentzian"

    @property
    def area(self) -> float:
        """Integrated power of the fitted line (above the floor)."""
        return 0.5 * math.pi * self.amplitude * self.fwhm

    def to_dict(self) -> dict:
        return asdict(self)


def lorentzian(f, amplitude, center, fwhm, floor):
    return amplitude / (1.0 + ((f - center) / (0.5 * fwhm)) ** 2) + floor


def half_power_width(x, y, i_peak: int | None = None, floor: float | None = None):
    """Width between the half-maximum crossings around ``i_peak`` (linear interp.)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if i_peak is None:
        i_peak = int(np.argmax(y))
    if floor is None:
        floor = float(np.min(y))
    half = floor + 0.5 * (y[i_peak] - floor)

    def crossing(direction):
        i = i_peak
        while 0 <= i + direction < y.size and y[i + direction] > half:
            i += direction
        j = i + direction
        if not 0 <= j < y.size:
            return x[i]
        # interpolate between i (above) and j (at or below)
        return x[i] + (x[j] - x[i]) * (y[i] - half) / (y[i] - y[j])

    return crossing(+1) - crossing(-1)


def fit_lorentzian(x, y, sigma=None, p0=None) -> PeakFit:
    """Fit ``A / (1 + ((x - x0)/(w/2))^2) + c`` by nonlinear least squares.

    Starts from the maximum sample and its half-power crossings.  The 95%
    intervals come from the linearized covariance at the optimum scaled by
    the residual variance (Student t quantile).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 8:
        raise ValueError("need at least 8 points to fit a line")
    scale_y = float(np.max(np.abs(y))) or 1.0
    x0 = float(x[np.argmax(y)])
    if p0 is None:
        floor0 = float(np.median(y)) if x.size > 16 else float(np.min(y))
        floor0 = min(floor0, float(np.min(y)) + 0.5 * (float(np.max(y)) - float(np.min(y))))
        width0 = half_power_width(x, y, floor=floor0)
        dx = float(np.min(np.diff(x))) if x.size > 1 else 1.0
        width0 = max(width0, dx)
        p0 = (float(np.max(y)) - floor0, x0, width0, floor0)
    # work in scaled units so that the solver sees O(1) numbers
    xs = float(p0[2]) or 1.0
    u = (x - x0) / xs
    v = y / scale_y
    s = None if sigma is None else np.asarray(sigma, dtype=float) / scale_y
    q0 = np.array([p0[0] / scale_y, (p0[1] - x0) / xs, p0[2] / xs, p0[3] / scale_y])

    def resid(q):
        r = lorentzian(u, q[0], q[1], q[2], q[3]) - v
        return r if s is None else r / s

    def jac(q):
        a, c, w, _ = q
        d = (u - c) / (0.5 * w)
        den = 1.0 + d * d
        j = np.empty((u.size, 4))
        j[:, 0] = 1.0 / den
        j[:, 1] = a * 2.0 * d / (den * den) / (0.5 * w)
        j[:, 2] = a * 2.0 * d * d / (den * den) / w
        j[:, 3] = 1.0
        return j if s is None else j / s[:, None]

    try:
        sol = optimize.least_squares(resid, q0, jac=jac, method="lm", xtol=1e-14,
                                     ftol=1e-14, gtol=1e-14, max_nfev=2000)
        q, converged = sol.x, bool(sol.success)
    except (ValueError, np.linalg.LinAlgError):
        q, converged = q0, False
    r = resid(q)
    dof = max(1, u.size - 4)
    jm = jac(q)
    try:
        cov = np.linalg.inv(jm.T @ jm)
        if sigma is None:
            cov *= float(r @ r) / dof
        half = stats.t.ppf(0.975, dof) * np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        half = np.full(4, np.inf)
        converged = False
    amp, cen, wid, flo = q
    wid = abs(wid)
    if not (np.all(np.isfinite(q)) and wid > 0):
        converged = False
    return PeakFit(
        center=x0 + cen * xs,
        fwhm=wid * xs,
        amplitude=amp * scale_y,
        floor=flo * scale_y,
        center_ci=float(half[1] * xs),
        fwhm_ci=float(half[2] * xs),
        amplitude_ci=float(half[0] * scale_y),
        floor_ci=float(half[3] * scale_y),
        converged=converged,
        residual_norm=float(np.linalg.norm(r) * scale_y),
    )


def detection_threshold(spec, false_alarm: float = 1e-3) -> float:
    """Power a noise-only bin of ``spec`` exceeds with total probability ``false_alarm``.

    The noise mean comes from the median over the whole spectrum.  Noise
    bins of a K-segment average are gamma(K) distributed (exponential for
    K = 1), and the look-elsewhere count is the number of independent bins.
    """
    k = getattr(spec, "segments", 1)
    noise = np.median(spec.power) / stats.gamma.median(k, scale=1.0 / k)
    independent = max(1, int(spec.power.size / getattr(spec, "zero_pad", 1)))
    return float(noise * stats.gamma.isf(false_alarm / independent, k, scale=1.0 / k))


def fit_peak(spec, band: tuple[float, float] | None = None,
             false_alarm: float | None = 1e-3, p0=None) -> PeakFit:
    """Lorentzian-plus-constant fit to the spectrum bins inside ``band``.

    Raises :class:`NoPeakError` when the strongest bin sits on the band edge
    or, with ``false_alarm`` set, when it is not significant against the
    noise level estimated from the median of the whole spectrum (so the
    spectrum should extend well beyond the line).
    """
    f, p = spec.frequencies, spec.power
    if band is not None:
        lo, hi = band
        if lo < f[0] - 1e-12 or hi > f[-1] + 1e-12:
            raise ValueError("search band extends beyond the spectrum")
        sel = (f >= lo) & (f <= hi)
        f, p = f[sel], p[sel]
    if f.size < 8:
        raise ValueError(f"need at least 8 bins in band, got {f.size}")
    i = int(np.argmax(p))
    if p0 is None and (i == 0 or i == p.size - 1) or not p[i] > 0:
        raise NoPeakError("no local maximum inside the search band")
    if false_alarm is not None:
        threshold = detection_threshold(spec, false_alarm)
        if not p[i] > threshold:
            raise NoPeakError(
                f"strongest bin {p[i]:.3g} below detection threshold {threshold:.3g}"
            )
    fit = fit_lorentzian(f, p, p0=p0)
    if fit.converged and not (f[0] <= fit.center <= f[-1]):
        fit.converged = False
    return fit


def snr(spec, peak: PeakFit, exclusion: float = 5.0) -> float:
    """Amplitude-domain signal-to-noise ratio of a fitted line.

    ``sqrt(peak amplitude / std of off-peak power)``; bins within
    ``exclusion`` FWHM of the centre are excluded.  Returns ``inf`` for a
    spectrum with no off-peak fluctuation.
    """
    off = np.abs(spec.frequencies - peak.center) > exclusion * peak.fwhm
    resid = spec.power[off] - peak.floor
    if resid.size < 16:
        raise ValueError("fewer than 16 off-peak bins for the noise estimate")
    sd = float(np.std(resid))
    if peak.amplitude <= 0:
        return 0.0
    if sd == 0:
        return math.inf
    return math.sqrt(peak.amplitude / sd)
