"""Command-line front end.

    qdyne run <config> [--seed N] [--threads N] [--out-dir DIR] [--format csv|json]
    qdyne analyze <trace> <config> [...]
    qdyne validate <config>

Exit codes: 0 success (including a structured no-peak result), 2 schema
violation, 3 numerical failure, 4 I/O error, 5 corrupt trace.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import experiments as ex
from . import io
from .config import ConfigError
from .sensor import filter_weight

EXIT_OK, EXIT_SCHEMA, EXIT_NUMERIC, EXIT_IO, EXIT_CORRUPT = 0, 2, 3, 4, 5

log = logging.getLogger("qdyne")


class Artifacts:
    """Writes result files stamped with the config hash and seed."""

    def __init__(self, out_dir, fmt: str, config_hash: str, seed: int):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.fmt = fmt
        self.stamp = {"config_hash": config_hash, "seed": seed}
        self.files: list[Path] = []

    def _add(self, path: Path) -> Path:
        self.files.append(path)
        return path

    def table(self, name: str, columns: dict) -> None:
        if self.fmt == "json":
            payload = dict(self.stamp, columns={k: np.asarray(v).tolist()
                                                for k, v in columns.items()})
            io.write_json(self._add(self.dir / f"{name}.json"), payload)
            return
        path = self._add(self.dir / f"{name}.csv")
        io.write_csv(path, list(columns), list(columns.values()))
        io.write_json(self._add(io.sidecar(path)), dict(self.stamp, columns=list(columns)))

    def json(self, name: str, payload: dict) -> None:
        io.write_json(self._add(self.dir / f"{name}.json"), dict(payload, **self.stamp))

    def trace(self, trace, export_csv: bool = False) -> None:
        trace.metadata.update(self.stamp)
        path = self._add(self.dir / "trace.bin")
        io.write_trace(trace, path)
        self._add(io.sidecar(path))
        if export_csv:
            io.export_trace_csv(trace, self._add(self.dir / "trace.csv"))

    def digests(self) -> dict:
        return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in self.files}


def _spectrum_columns(spec) -> dict:
    return {"freq_hz": spec.frequencies, "power": spec.power}


def write_analysis(trace, cfg: dict, art: Artifacts) -> dict:
    """Spectrum and line fits for a trace; shared by ``run`` and ``analyze``."""
    analysis = cfg["analysis"]
    if cfg["kind"] == "multitone" and analysis["expected"] is None:
        tones = ex.build_tones(cfg["signal"]).tones
        spec, lines = ex.multitone_lines(trace, [t.frequency for t in tones], analysis)
        art.table("spectrum", _spectrum_columns(spec))
        art.json("peaks", {"peaks": [line.to_dict() for line in lines],
                           "no_peak": not all(line.found for line in lines)})
        return {"peaks": [_summary(line) for line in lines]}
    spec, line = ex.analyze_trace(trace, analysis, ex.expected_line(cfg, trace.period))
    art.table("spectrum", _spectrum_columns(spec))
    art.json("peak", line.to_dict())
    return {"peak": _summary(line)}


def _summary(line) -> str:
    if not line.found:
        return f"no peak near {line.expected:.6g} Hz ({line.reason})"
    f = line.fit
    return f"centre {f.center:.6g} Hz, FWHM {f.fwhm:.6g} Hz, SNR {line.snr:.6g}"


# ------------------------------------------------------------------ kinds

def _run_qdyne(cfg, art, threads):
    q, derived = ex.build_qdyne(cfg)
    trace = ex.run_qdyne(q)
    art.trace(trace, cfg["acquisition"]["export_csv"])
    return derived, write_analysis(trace, cfg, art)


def _run_sweep(cfg, art, threads):
    res, fit = ex.run_sweep_experiment(cfg)
    art.table("sweep", {"tau_s": res.taus, "mean": res.mean, "stderr": res.stderr})
    payload = {"no_peak": fit is None}
    if fit is not None:
        payload.update(fit.to_dict(), axis="filter_frequency_hz")
    art.json("sweep_fit", payload)
    summary = "no dip found" if fit is None else f"dip FWHM {fit.fwhm:.6g} Hz"
    return {"taus_s": res.taus.tolist()}, {"sweep": summary}


def _run_scaling(cfg, art, threads):
    res = ex.run_scaling(cfg, workers=threads)
    art.table("scaling", {
        "total_time_s": res.times, "fwhm_hz": res.fwhm, "snr": res.snr,
        "precision_hz": res.precision, "excluded": res.excluded.astype(int),
        "valid": res.valid.astype(int)})
    slopes = {k: {"slope": v[0], "stderr": v[1]} for k, v in res.slopes.items()}
    art.json("scaling_slopes", {"slopes": slopes})
    return {}, {k: f"{v[0]:.6g} +- {v[1]:.3g}" for k, v in res.slopes.items()}


def _run_bandwidth(cfg, art, threads):
    res = ex.bandwidth_scan(cfg)
    art.table("bandwidth", {
        "detuning_hz": res.detuning, "frequency_hz": res.frequency, "alias_hz": res.alias,
        "area": res.area, "fwhm_hz": res.fwhm, "filter_weight_sq": res.weight_sq})
    q, derived = ex.build_qdyne(cfg)
    centre = cfg["signal"]["tones"][0]["frequency"]
    span = 1.5 * cfg["bandwidth"]["span"]
    nu = np.linspace(centre - span, centre + span, 601)
    art.table("filter", {"frequency_hz": nu, "filter_weight": filter_weight(nu, q.sequence)})
    art.json("bandwidth_summary", {"scale": res.scale, "rms_deviation": res.rms_deviation,
                                   "main_lobe_halfwidth_hz": res.main_lobe,
                                   "excluded": res.excluded})
    return derived, {"rms_deviation": f"{res.rms_deviation:.6g}"}


def _run_nmr(cfg, art, threads):
    res = ex.run_nmr(cfg)
    path = art._add(art.dir / "bath.csv")
    res.bath.export_csv(path)
    side = io.sidecar(path)
    io.write_json(side, dict(res.bath.config, **art.stamp))
    art._add(side)
    art.trace(res.trace, cfg["acquisition"]["export_csv"])
    art.table("spectrum", _spectrum_columns(res.spectrum))
    art.json("peak", res.line.to_dict())
    art.json("nmr_stats", res.stats)
    return res.stats, {"peak": _summary(res.line)}


def _run_analyze(cfg, art, threads):
    path = cfg["analysis"]["trace"]
    if path is None:
        raise ConfigError("analysis.trace", "required when running an analyze config")
    trace = io.read_trace(path)
    return {"trace": path}, write_analysis(trace, cfg, art)


RUNNERS = {
    "qdyne": _run_qdyne, "multitone": _run_qdyne, "sweep": _run_sweep,
    "scaling": _run_scaling, "bandwidth": _run_bandwidth, "nmr": _run_nmr,
    "analyze": _run_analyze,
}


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("qdyne", "numpy", "scipy", "PyYAML"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _load(args) -> dict:
    cfg = cfgmod.load(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed", "expected a nonnegative integer")
        cfg["seed"] = args.seed
    if args.out_dir is not None:
        cfg["output_dir"] = args.out_dir
    return cfg


def _execute(cfg, runner, args) -> int:
    chash = cfgmod.config_hash(cfg)
    art = Artifacts(cfg["output_dir"], args.format, chash, cfg["seed"])
    start = time.perf_counter()
    derived, summary = runner(cfg, art, args.threads)
    manifest = {
        "kind": cfg["kind"],
        "config_hash": chash,
        "seed": cfg["seed"],
        "effective_config": cfg,
        "derived": derived,
        "threads": args.threads,
        "format": args.format,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - start,
        "artifacts": art.digests(),
    }
    io.write_json(art.dir / "manifest.json", manifest)
    for key, value in summary.items():
        print(f"{key}: {value}")
    print(f"wrote {len(art.files)} artifacts to {art.dir} (config {chash[:12]})")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    return _execute(cfg, RUNNERS[cfg["kind"]], args)


def cmd_analyze(args) -> int:
    cfg = _load(args)
    if "analysis" not in cfg:
        raise ConfigError("analysis", f"kind {cfg['kind']!r} has no analysis section")
    trace = io.read_trace(args.trace)

    def runner(cfg, art, threads):
        return {"trace": str(args.trace)}, write_analysis(trace, cfg, art)

    return _execute(cfg, runner, args)


def cmd_validate(args) -> int:
    cfg = _load(args)
    kind = cfg["kind"]
    if kind in ("qdyne", "multitone", "bandwidth"):
        ex.build_qdyne(cfg)
    elif kind == "sweep" or (kind == "scaling" and cfg["scaling"]["method"] == "sweep"):
        ex.build_sweep(cfg)
    elif kind == "scaling":
        ex.build_qdyne(cfg, total_time=max(cfg["scaling"]["times"]))
    elif kind == "nmr":
        ex.build_bath(cfg)
    print(f"valid {kind} config {cfgmod.config_hash(cfg)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker processes for Monte-Carlo harnesses")
    common.add_argument("--out-dir", help="override the config output directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="format of tabular artifacts")
    parser = argparse.ArgumentParser(prog="qdyne", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="run the experiment a config describes")
    p.add_argument("config")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("analyze", parents=[common], help="analyze a stored binary trace")
    p.add_argument("trace")
    p.add_argument("config")
    p.set_defaults(func=cmd_analyze)
    p = sub.add_parser("validate", parents=[common], help="check a config against its schema")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        log.error("--threads must be >= 1")
        return EXIT_SCHEMA
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_SCHEMA
    except io.TraceIntegrityError as exc:
        log.error("corrupt trace: %s", exc)
        return EXIT_CORRUPT
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO
    except (ValueError, ArithmeticError, np.linalg.LinAlgError, MemoryError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
