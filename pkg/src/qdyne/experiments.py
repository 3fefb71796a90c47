"""Experiment pipelines assembled from normalized configuration mappings.

Builders turn config sections into domain objects (raising
:class:`ConfigError` on inconsistent values); runners execute one
experiment kind and return plain results for the CLI to persist.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .acquisition import QdyneConfig, SweepConfig, run_qdyne, run_sweep
from .clock import ClockModel
from .config import ConfigError
from .nanonmr import BathCapacityError, BathConfig, NoCorrelationCrossing, correlation_time, simulate_bath
from .sensor import PulseSequence, ReadoutAxis, SensorParams, filter_weight
from .signals import FieldUnitConversion, Tone, ToneList, field_to_k, load_trace_csv
from .spectral import (NoPeakError, PeakFit, Spectrum, alias_offset, averaged_periodogram,
                       detection_threshold, fit_peak, locate_line, periodogram, scaling_harness,
                       snr, sweep_fit, zoom_periodogram)


def _build(path, factory, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError, BathCapacityError) as exc:
        raise ConfigError(path, str(exc)) from exc


def build_tones(signal: dict):
    conv = _build("signal.gyromagnetic_scale", FieldUnitConversion, signal["gyromagnetic_scale"])
    tones = []
    for i, t in enumerate(signal["tones"]):
        path = f"signal.tones[{i}]"
        k = t["amplitude"]
        if k is None:
            k = _build(f"{path}.field_nT", field_to_k, t["field_nT"] * 1e-9, conv)
        tones.append(_build(path, Tone, k, t["frequency"], t["phase"]))
    return tones[0] if len(tones) == 1 else ToneList(tuple(tones))


def build_source(signal: dict):
    if signal["trace_csv"]:
        return _build("signal.trace_csv", load_trace_csv, signal["trace_csv"])
    return build_tones(signal)


def build_sensor(section: dict, dead_time: float) -> SensorParams:
    return _build("sensor", SensorParams, section["t2"], section["decay_exponent"],
                  section["contrast"], section["mean_photons_bright"], dead_time)


def _timing(cfg: dict, tau: float):
    """Resolve the sequence, dead time and clock period, one of which may be derived."""
    seq = _build("sequence", PulseSequence, tau, cfg["sequence"]["order"])
    dead = cfg["sensor"]["readout_dead_time"]
    period = cfg["clock"]["nominal_period"]
    if dead is None and period is None:
        raise ConfigError("sensor.readout_dead_time", "give it or clock.nominal_period")
    if dead is None:
        dead = period - seq.interaction_time
        if not dead >= 0:
            raise ConfigError("clock.nominal_period", "shorter than the interaction time")
    if period is None:
        period = seq.interaction_time + dead
    return seq, dead, period


def build_clock(section: dict, period: float) -> ClockModel:
    horizon = section["stability_horizon"]
    return _build("clock", ClockModel, period, section["white_jitter"],
                  section["frequency_random_walk"], math.inf if horizon is None else horizon)


def build_qdyne(cfg: dict, source=None, tau: float | None = None,
                total_time: float | None = None) -> tuple[QdyneConfig, dict]:
    """QdyneConfig plus the derived values worth recording in a manifest."""
    if source is None:
        source = build_source(cfg["signal"])
    tau = cfg["sequence"]["tau"] if tau is None else tau
    if tau is None:
        raise ConfigError("sequence.tau", "required")
    seq, dead, period = _timing(cfg, tau)
    total = cfg["acquisition"]["total_time"] if total_time is None else total_time
    if total is None:
        raise ConfigError("acquisition.total_time", "required")
    q = _build("acquisition", QdyneConfig, source, seq, build_sensor(cfg["sensor"], dead),
               build_clock(cfg["clock"], period), total,
               ReadoutAxis(cfg["readout"]["final_pulse_phase"]), cfg["seed"])
    derived = {
        "tau_s": seq.tau,
        "interaction_time_s": seq.interaction_time,
        "readout_dead_time_s": dead,
        "measurement_period_s": period,
        "total_time_s": total,
        "n_measurements": q.n_measurements,
    }
    if isinstance(source, (Tone, ToneList)):
        derived["tones"] = [
            {"k_rad_per_s": t.amplitude, "frequency_hz": t.frequency,
             "alias_hz": alias_offset(t.frequency, period)[0]}
            for t in source.tones
        ]
    return q, derived


def sweep_taus(section: dict) -> np.ndarray:
    c, span, n = section["center_frequency"], section["span"], section["points"]
    f = np.linspace(c - span, c + span, n)
    if not f[0] > 0:
        raise ConfigError("sweep.span", "grid reaches zero frequency")
    return np.sort(0.5 / f)


def build_sweep(cfg: dict) -> SweepConfig:
    s = cfg["sweep"]
    dead = cfg["sensor"]["readout_dead_time"]
    return _build("sweep", SweepConfig, build_source(cfg["signal"]),
                  build_sensor(cfg["sensor"], 5e-6 if dead is None else dead),
                  tuple(sweep_taus(s)), s["repetitions"], s["order"],
                  ReadoutAxis(s["final_pulse_phase"]), s["random_phase"], cfg["seed"])


def build_bath(cfg: dict) -> BathConfig:
    b = cfg["bath"]
    return _build("bath", BathConfig, tuple(b["box"]), b["depth"], b["n_spins"], b["density"],
                  b["diffusion"], b["t1p"], b["larmor_frequency"], b["bandwidth"],
                  b["timestep"], b["duration"], b["kappa"], cfg["seed"],
                  max_spins=b["max_spins"])


# ---------------------------------------------------------------- analysis

@dataclass
class LineResult:
    expected: float
    halfwidth: float
    fit: PeakFit | None = None
    snr: float = math.nan
    reason: str = ""

    @property
    def found(self) -> bool:
        return self.fit is not None

    def to_dict(self) -> dict:
        out = {"expected_hz": self.expected, "search_halfwidth_hz": self.halfwidth,
               "no_peak": not self.found}
        if self.found:
            out.update(self.fit.to_dict())
            out["area"] = self.fit.area
            out["snr"] = self.snr
        else:
            out["reason"] = self.reason
        return out


def full_spectrum(trace, analysis: dict) -> Spectrum:
    if analysis["segments"] > 1:
        return averaged_periodogram(trace, analysis["segments"], analysis["window"])
    return periodogram(trace, analysis["window"])


def default_halfwidth(trace, analysis: dict) -> float:
    if analysis["search_halfwidth"] is not None:
        return analysis["search_halfwidth"]
    return 20.0 * analysis["segments"] / (trace.n_records * trace.period)


def blind_expected(spec: Spectrum) -> float:
    p = spec.power.copy()
    p[:2] = 0.0  # skip DC and its leakage
    return float(spec.frequencies[int(np.argmax(p))])


def fit_line(trace, spec: Spectrum, expected: float | None, halfwidth: float,
             analysis: dict) -> LineResult:
    """Detect and fit one line near ``expected`` (strongest line when None)."""
    blind = expected is None
    if blind:
        expected = blind_expected(spec)
    nyq = 0.5 / trace.period
    lo, hi = max(0.0, expected - halfwidth), min(nyq, expected + halfwidth)
    out = LineResult(expected, halfwidth)
    band = spec.band(lo, hi)
    if band.power.size < 8:
        out.reason = "search band holds fewer than 8 bins"
        return out
    # a blind search pays the look-elsewhere cost of the whole spectrum
    threshold = detection_threshold(spec if blind else band, analysis["false_alarm"])
    if not band.power.max() > threshold:
        out.reason = f"strongest bin {band.power.max():.6g} below threshold {threshold:.6g}"
        return out
    try:
        if analysis["segments"] > 1:
            fit = fit_peak(band, false_alarm=None)
        else:
            fit, _ = locate_line(trace, expected, halfwidth, analysis["zero_pad"],
                                 window=analysis["window"])
    except NoPeakError as exc:
        out.reason = str(exc)
        return out
    if fit is None or not fit.converged:
        out.reason = "line fit did not converge"
        return out
    out.fit = fit
    try:
        out.snr = snr(spec, fit)
    except ValueError:
        out.snr = math.nan
    return out


def band_spectrum(trace, spec: Spectrum, lo: float, hi: float, analysis: dict) -> Spectrum:
    """Plot-ready spectrum over ``[lo, hi]``: zero-padded zoom, or the averaged bins."""
    lo, hi = max(0.0, lo), min(0.5 / trace.period, hi)
    if analysis["segments"] > 1:
        return spec.band(lo, hi)
    return zoom_periodogram(trace, lo, hi, analysis["zero_pad"], analysis["window"])


def analyze_trace(trace, analysis: dict, expected: float | None = None):
    """Spectrum around the line and its fit; ``expected`` None searches blindly."""
    spec = full_spectrum(trace, analysis)
    hw = default_halfwidth(trace, analysis)
    line = fit_line(trace, spec, expected, hw, analysis)
    return band_spectrum(trace, spec, line.expected - hw, line.expected + hw, analysis), line


def expected_line(cfg: dict, period: float) -> float | None:
    """Where a config says the line should be: explicit, tone alias or Larmor alias."""
    analysis = cfg.get("analysis") or {}
    if analysis.get("expected") is not None:
        return analysis["expected"]
    if "bath" in cfg:
        return alias_offset(cfg["bath"]["larmor_frequency"], period)[0]
    signal = cfg.get("signal")
    if signal and not signal["trace_csv"]:
        return alias_offset(build_tones(signal).tones[0].frequency, period)[0]
    return None


# ---------------------------------------------------------------- kinds

def multitone_lines(trace, frequencies, analysis: dict):
    """Fit every tone's line in disjoint bands around the aliases."""
    aliases = sorted(alias_offset(f, trace.period)[0] for f in frequencies)
    hw = default_halfwidth(trace, analysis)
    if len(aliases) > 1:
        hw = min(hw, 0.45 * float(np.min(np.diff(aliases))))
    if not hw > 0:
        raise ValueError("tones share an alias; bands cannot be disjoint")
    spec = full_spectrum(trace, analysis)
    lines = [fit_line(trace, spec, a, hw, analysis) for a in aliases]
    shown = band_spectrum(trace, spec, aliases[0] - hw, aliases[-1] + hw, analysis)
    return shown, lines


@dataclass
class BandwidthResult:
    detuning: np.ndarray
    frequency: np.ndarray
    alias: np.ndarray
    area: np.ndarray
    fwhm: np.ndarray
    weight_sq: np.ndarray
    main_lobe: float
    scale: float = math.nan
    rms_deviation: float = math.nan
    excluded: int = 0
    extra: dict = field(default_factory=dict)


def bandwidth_scan(cfg: dict) -> BandwidthResult:
    """Fitted Qdyne line area against detuning from the filter resonance.

    Detunings are ``linspace(-span, span, points) + offset`` about the first
    tone's frequency.  The areas are compared with ``filter_weight^2`` by a
    least-squares scale over the main lobe ``|detuning| < 0.96 / T_s``; the
    deviation is the rms residual relative to the scaled peak.
    """
    b = cfg["bandwidth"]
    base = build_tones(cfg["signal"])
    tone = base.tones[0]
    ds = np.linspace(-b["span"], b["span"], b["points"]) + b["offset"]
    rows = {k: [] for k in ("frequency", "alias", "area", "fwhm", "weight_sq")}
    analysis = {"window": "rect", "zero_pad": 16, "segments": 1, "false_alarm": 1e-3,
                "search_halfwidth": b["search_halfwidth"]}
    seq = None
    for i, d in enumerate(ds):
        nu = tone.frequency + d
        ss = np.random.SeedSequence(cfg["seed"], spawn_key=(i,))
        q, _ = build_qdyne(cfg, source=Tone(tone.amplitude, nu, tone.phase))
        q = dataclasses.replace(q, seed=int(ss.generate_state(1)[0]))
        seq = q.sequence
        al = alias_offset(nu, q.clock.nominal_period)[0]
        trace = run_qdyne(q)
        try:
            fit, _ = locate_line(trace, al, b["search_halfwidth"])
            ok = fit.converged and fit.fwhm > 0
        except (NoPeakError, ValueError):
            ok = False
        rows["frequency"].append(nu)
        rows["alias"].append(al)
        rows["area"].append(fit.area if ok else math.nan)
        rows["fwhm"].append(fit.fwhm if ok else math.nan)
        rows["weight_sq"].append(float(filter_weight(nu, seq)) ** 2)
    arr = {k: np.array(v) for k, v in rows.items()}
    main_lobe = 0.96 / seq.interaction_time
    res = BandwidthResult(ds, arr["frequency"], arr["alias"], arr["area"], arr["fwhm"],
                          arr["weight_sq"], main_lobe)
    sel = (np.abs(ds) < main_lobe) & np.isfinite(res.area)
    res.excluded = int(np.sum((np.abs(ds) < main_lobe) & ~np.isfinite(res.area)))
    if sel.sum() >= 2:
        w, a = res.weight_sq[sel], res.area[sel]
        res.scale = float(a @ w / (w @ w))
        res.rms_deviation = float(np.sqrt(np.mean((a - res.scale * w) ** 2))
                                  / (res.scale * w.max()))
    return res


def run_scaling(cfg: dict, workers: int = 1):
    s = cfg["scaling"]
    if s["method"] == "qdyne":
        base, _ = build_qdyne(cfg, total_time=max(s["times"]))
        kwargs = {}
        if cfg["analysis"]["search_halfwidth"] is not None:
            kwargs["search_halfwidth"] = cfg["analysis"]["search_halfwidth"]
    else:
        base = build_sweep(cfg)
        kwargs = {}
    return scaling_harness(base, s["times"], s["trials"], seed=cfg["seed"], workers=workers,
                           **kwargs)


def run_sweep_experiment(cfg: dict):
    sc = build_sweep(cfg)
    res = run_sweep(sc)
    try:
        fit = sweep_fit(res)
    except (ValueError, NoPeakError):
        fit = None
    return res, fit


@dataclass
class NmrResult:
    bath: object
    trace: object
    spectrum: Spectrum
    line: LineResult
    stats: dict


def run_nmr(cfg: dict) -> NmrResult:
    bc = build_bath(cfg)
    bath = simulate_bath(bc)
    tau = cfg["sequence"]["tau"]
    if tau is None:
        tau = 0.5 / bc.larmor_frequency
    period = cfg["clock"]["nominal_period"]
    total = cfg["acquisition"]["total_time"]
    if total is None:
        if period is None:
            raise ConfigError("clock.nominal_period", "required when total_time is derived")
        total = bath.duration - period
    q, derived = build_qdyne(cfg, source=bath.to_source(), tau=tau, total_time=total)
    trace = run_qdyne(q)
    al = alias_offset(bc.larmor_frequency, q.clock.nominal_period)[0]
    spec, line = analyze_trace(trace, cfg["analysis"], al)
    stats = dict(derived)
    stats.update(spin_count=bath.n_spins, envelope_rms_rad_per_s=bath.rms,
                 expected_correlation_time_s=0.5 * bc.t1p, alias_hz=al)
    try:
        stats["correlation_time_s"] = correlation_time(bath)
    except NoCorrelationCrossing:
        stats["correlation_time_s"] = None
    return NmrResult(bath, trace, spec, line, stats)
