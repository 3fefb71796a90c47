"""On-disk formats: binary trace records, CSV tables and JSON sidecars.

Binary trace: packed little-endian records ``u64 index, f64 t_start_s,
u32 photons`` (20 bytes each) plus ``<file>.json`` holding the metadata.
Floats in machine artifacts use 17 significant digits.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .acquisition import AcquisitionTrace

RECORD_DTYPE = np.dtype([("index", "<u8"), ("t_start_s", "<f8"), ("photons", "<u4")])
assert RECORD_DTYPE.itemsize == 20


class TraceIntegrityError(ValueError):
    def __init__(self, message: str, record: int | None = None):
        super().__init__(message)
        self.record = record


def fmt(x) -> str:
    """Locale-independent float formatting with 17 significant digits."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return str(obj)


def _clean(obj):
    """Replace non-finite floats by null so the JSON stays standard."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dumps(payload) -> str:
    return json.dumps(_clean(payload), indent=2, sort_keys=True, default=_json_default,
                      allow_nan=False) + "\n"


def write_json(path, payload) -> None:
    Path(path).write_text(dumps(payload), encoding="utf-8", newline="\n")


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_trace(trace: AcquisitionTrace, path) -> None:
    rec = np.empty(trace.n_records, dtype=RECORD_DTYPE)
    rec["index"] = trace.index
    rec["t_start_s"] = trace.t_start
    rec["photons"] = trace.photons
    Path(path).write_bytes(rec.tobytes())
    meta = dict(trace.metadata)
    meta.update(n_records=trace.n_records, period_s=trace.period,
                record_format="u64 index, f64 t_start_s, u32 photons; little-endian")
    write_json(sidecar(path), meta)


def read_trace(path) -> AcquisitionTrace:
    """Load a binary trace, checking dense indices and increasing times."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) % RECORD_DTYPE.itemsize:
        n_ok = len(raw) // RECORD_DTYPE.itemsize
        raise TraceIntegrityError(f"truncated record after record {n_ok}", n_ok)
    rec = np.frombuffer(raw, dtype=RECORD_DTYPE)
    try:
        meta = json.loads(sidecar(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise TraceIntegrityError(f"corrupt metadata sidecar: {exc}") from exc
    if rec.size < 2:
        raise TraceIntegrityError("trace holds fewer than two records", 0)
    bad = np.flatnonzero(rec["index"] != np.arange(rec.size, dtype=np.uint64))
    if bad.size:
        i = int(bad[0])
        raise TraceIntegrityError(f"record {i}: index {int(rec['index'][i])}, expected {i}", i)
    t = rec["t_start_s"]
    bad = np.flatnonzero(~np.isfinite(t))
    if bad.size:
        raise TraceIntegrityError(f"record {int(bad[0])}: non-finite start time", int(bad[0]))
    bad = np.flatnonzero(np.diff(t) <= 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise TraceIntegrityError(f"record {i}: start time not increasing", i)
    announced = int(meta.get("n_records", rec.size))
    if announced != rec.size:
        i = min(announced, rec.size)
        raise TraceIntegrityError(
            f"record {i}: metadata announces {announced} records, file holds {rec.size}", i)
    period = float(meta["period_s"])
    return AcquisitionTrace(t.copy(), rec["photons"].copy(), period, meta)


def write_csv(path, header, columns) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([v if isinstance(v, (int, np.integer)) else fmt(v) for v in row])


def export_trace_csv(trace: AcquisitionTrace, path) -> None:
    write_csv(path, ["n", "t_start_s", "photons"],
              [trace.index.astype(int).tolist(), trace.t_start, trace.photons.astype(int).tolist()])


def export_spectrum_csv(spec, path) -> None:
    write_csv(path, ["freq_hz", "power"], [spec.frequencies, spec.power])


def export_sweep_csv(result, path) -> None:
    write_csv(path, ["tau_s", "mean", "stderr"], [result.taus, result.mean, result.stderr])


def export_scaling(result, csv_path, json_path) -> None:
    write_csv(csv_path, ["total_time_s", "fwhm_hz", "snr", "precision_hz", "excluded", "valid"],
              [result.times, result.fwhm, result.snr, result.precision,
               result.excluded.astype(int).tolist(), result.valid.astype(int).tolist()])
    write_json(json_path, {
        "slopes": {k: {"slope": v[0], "stderr": v[1]} for k, v in result.slopes.items()},
        "excluded": result.excluded.astype(int).tolist(),
        "valid": result.valid.astype(bool).tolist(),
    })
