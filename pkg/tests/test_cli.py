import csv
import json
import re

import numpy as np
import pytest
import yaml

from qdyne import config as cfgmod
from qdyne import io
from qdyne.acquisition import AcquisitionTrace
from qdyne.cli import main
from qdyne.config import ConfigError

QDYNE = {
    "kind": "qdyne",
    "seed": 4,
    "signal": {"tones": [{"amplitude": 117809.7, "frequency": 1000002.0}]},
    "sensor": {"mean_photons_bright": 5.0},
    "acquisition": {"total_time": 4.0},
}
NUMBER = re.compile(r"^-?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$|^(nan|inf|-inf)$")


def write_cfg(path, cfg):
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def run(tmp_path, cfg, name="out", *extra):
    out = tmp_path / name
    code = main(["run", write_cfg(tmp_path / f"{name}.yaml", cfg), "--out-dir", str(out), *extra])
    return code, out


def read_json(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def qdyne_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("q")
    code, out = run(tmp, QDYNE)
    assert code == 0
    return tmp, out


# ------------------------------------------------------------ config schema

def test_defaults_filled_in():
    cfg = cfgmod.normalize({"kind": "qdyne"})
    assert cfg["seed"] == 0
    assert cfg["sequence"] == {"tau": 500e-9, "order": 1}
    assert cfg["sensor"]["readout_dead_time"] == 5e-6
    assert cfg["analysis"]["window"] == "rect"
    assert cfg == cfgmod.normalize({"kind": "qdyne", "sensor": None, "analysis": {}})
    nmr = cfgmod.normalize({"kind": "nmr"})
    assert nmr["analysis"]["segments"] == 50 and nmr["clock"]["nominal_period"] == 9e-6


@pytest.mark.parametrize("raw, path", [
    ({"kind": "qdyne", "sensor": {"contrsat": 0.3}}, "sensor.contrsat"),
    ({"kind": "qdyne", "bogus": 1}, "bogus"),
    ({"kind": "teleport"}, "kind"),
    ({"kind": "qdyne", "seed": -1}, "seed"),
    ({"kind": "qdyne", "seed": True}, "seed"),
    ({"kind": "sweep", "clock": {}}, "clock"),
    ({"kind": "qdyne", "sensor": {"t2": "long"}}, "sensor.t2"),
    ({"kind": "qdyne", "analysis": {"window": "kaiser"}}, "analysis.window"),
    ({"kind": "qdyne", "sequence": {"order": 1.5}}, "sequence.order"),
    ({"kind": "qdyne", "signal": {"tones": [{"frequency": 1e6}]}}, "signal.tones[0]"),
    ({"kind": "qdyne", "signal": {"tones": [{"amplitude": 1, "field_nT": 1, "frequency": 1}]}},
     "signal.tones[0]"),
    ({"kind": "scaling", "scaling": {"trials": 5}}, "scaling.trials"),
])
def test_schema_violations_name_the_field(raw, path):
    with pytest.raises(ConfigError) as err:
        cfgmod.normalize(raw)
    assert err.value.path == path


def test_yaml_exponent_strings(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("kind: nmr\nbath: {kappa: 3e6}\n")
    assert cfgmod.load(p)["bath"]["kappa"] == 3e6


def test_hash_ignores_output_dir_only():
    a = cfgmod.normalize({"kind": "qdyne", "output_dir": "a"})
    b = cfgmod.normalize({"kind": "qdyne", "output_dir": "b"})
    c = cfgmod.normalize({"kind": "qdyne", "seed": 1})
    assert cfgmod.config_hash(a) == cfgmod.config_hash(b) != cfgmod.config_hash(c)


# ------------------------------------------------------------ binary traces

def small_trace(n=50):
    t = (np.arange(n) + 1) * 9e-6
    return AcquisitionTrace(t, np.arange(n) % 3, 9e-6, {"seed": 1})


def test_trace_round_trip(tmp_path):
    tr = small_trace()
    path = tmp_path / "t.bin"
    io.write_trace(tr, path)
    assert path.stat().st_size == 20 * tr.n_records
    raw = path.read_bytes()
    # little-endian u64 index, f64 time, u32 count
    assert int.from_bytes(raw[20:28], "little") == 1
    assert int.from_bytes(raw[36:40], "little") == 1
    back = io.read_trace(path)
    assert np.array_equal(back.t_start, tr.t_start)
    assert np.array_equal(back.photons, tr.photons)
    assert back.period == tr.period and back.metadata["n_records"] == tr.n_records


def setting(field, i, value):
    def mutate(rec):
        rec[field][i] = value
        return rec.tobytes()
    return mutate


def corrupt(tmp_path, mutate):
    path = tmp_path / "t.bin"
    io.write_trace(small_trace(), path)
    rec = np.frombuffer(path.read_bytes(), dtype=io.RECORD_DTYPE).copy()
    path.write_bytes(mutate(rec))
    return path


@pytest.mark.parametrize("mutate, record", [
    (lambda r: r.tobytes()[:-7], 49),
    (setting("index", 7, 9), 7),
    (setting("t_start_s", 12, 0.0), 12),
    (lambda r: r[:30].tobytes(), 30),
])
def test_corrupt_traces_name_first_bad_record(tmp_path, mutate, record):
    path = corrupt(tmp_path, mutate)
    with pytest.raises(io.TraceIntegrityError) as err:
        io.read_trace(path)
    assert err.value.record == record
    assert f"record {record}" in str(err.value)


def test_cli_corrupt_trace_exit_code(tmp_path, caplog):
    path = corrupt(tmp_path, setting("t_start_s", 5, 1.0))
    cfg = write_cfg(tmp_path / "a.yaml", {"kind": "analyze"})
    assert main(["analyze", str(path), cfg, "--out-dir", str(tmp_path / "o")]) == 5
    assert "record 6" in caplog.text


# ------------------------------------------------------------ CLI

def test_exit_codes(tmp_path):
    assert main(["validate", write_cfg(tmp_path / "ok.yaml", QDYNE)]) == 0
    assert main(["validate", write_cfg(tmp_path / "bad.yaml", {"kind": "qdyne", "x": 1})]) == 2
    assert main(["validate", str(tmp_path / "missing.yaml")]) == 4
    (tmp_path / "broken.yaml").write_text("kind: [qdyne\n")
    assert main(["validate", str(tmp_path / "broken.yaml")]) == 2
    # timing inconsistent with the clock period is a schema problem
    bad_timing = dict(QDYNE, clock={"nominal_period": 7e-6})
    assert main(["validate", write_cfg(tmp_path / "t.yaml", bad_timing)]) == 2
    # clock noise large enough to reverse time fails at run time
    noisy = dict(QDYNE, clock={"white_jitter": 2e-5}, acquisition={"total_time": 0.01})
    assert run(tmp_path, noisy, "noisy")[0] == 3
    assert main(["analyze", str(tmp_path / "nope.bin"), write_cfg(tmp_path / "a.yaml", {"kind": "analyze"}),
                 "--out-dir", str(tmp_path / "x")]) == 4


def test_validate_all_default_kinds(tmp_path):
    for kind in cfgmod.KIND_SECTIONS:
        assert main(["validate", write_cfg(tmp_path / f"{kind}.yaml", {"kind": kind})]) == 0


def test_run_artifacts_and_manifest(qdyne_run):
    _, out = qdyne_run
    names = {p.name for p in out.iterdir()}
    assert {"trace.bin", "trace.bin.json", "spectrum.csv", "spectrum.csv.json", "peak.json",
            "manifest.json"} <= names
    man = read_json(out / "manifest.json")
    effective = cfgmod.normalize(dict(QDYNE, output_dir=str(out)))
    assert man["effective_config"] == effective
    assert man["config_hash"] == cfgmod.config_hash(effective)
    assert man["seed"] == 4
    assert man["derived"]["n_measurements"] == 444444
    assert set(man["versions"]) >= {"python", "qdyne", "numpy", "scipy"}
    assert man["wall_time_s"] > 0
    assert set(man["artifacts"]) == names - {"manifest.json"}
    peak = read_json(out / "peak.json")
    assert peak["config_hash"] == man["config_hash"] and peak["seed"] == 4
    assert peak["no_peak"] is False
    assert peak["center"] == pytest.approx(2.0, abs=0.01)
    assert read_json(out / "spectrum.csv.json")["columns"] == ["freq_hz", "power"]


def test_manifest_records_every_default(qdyne_run):
    _, out = qdyne_run
    effective = read_json(out / "manifest.json")["effective_config"]
    for section in cfgmod.KIND_SECTIONS["qdyne"]:
        assert set(effective[section]) == set(cfgmod.SECTIONS[section])


def test_csv_is_strict(qdyne_run):
    _, out = qdyne_run
    raw = (out / "spectrum.csv").read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(raw.decode("ascii").split("\n")[:-1], strict=True))
    assert rows[0] == ["freq_hz", "power"]
    for row in rows[1:]:
        assert len(row) == 2 and all(NUMBER.match(v) for v in row)


def test_determinism(qdyne_run):
    tmp, first = qdyne_run
    code, second = run(tmp, QDYNE, "again")
    assert code == 0
    for p in first.iterdir():
        if p.name == "manifest.json":
            continue
        assert (second / p.name).read_bytes() == p.read_bytes(), p.name
    a, b = read_json(first / "manifest.json"), read_json(second / "manifest.json")
    for m in (a, b):
        m.pop("wall_time_s")
        m["effective_config"].pop("output_dir")
    assert a == b


def test_seed_flag_changes_results(tmp_path, qdyne_run):
    _, base = qdyne_run
    code, out = run(tmp_path, QDYNE, "s", "--seed", "5")
    assert code == 0
    assert read_json(out / "manifest.json")["seed"] == 5
    assert (out / "trace.bin").read_bytes() != (base / "trace.bin").read_bytes()


def test_analyze_round_trip(tmp_path, qdyne_run):
    _, out = qdyne_run
    cfg = write_cfg(tmp_path / "a.yaml", QDYNE)
    assert main(["analyze", str(out / "trace.bin"), cfg, "--out-dir", str(tmp_path / "re")]) == 0
    for name in ("spectrum.csv", "peak.json"):
        assert (tmp_path / "re" / name).read_bytes() == (out / name).read_bytes()


def test_truncation_doubles_linewidth(tmp_path, qdyne_run):
    _, out = qdyne_run
    tr = io.read_trace(out / "trace.bin")
    half = tr.truncated(tr.n_records // 2)
    io.write_trace(half, tmp_path / "half.bin")
    cfg = write_cfg(tmp_path / "a.yaml", {"kind": "analyze", "analysis": {"expected": 2.0}})
    assert main(["analyze", str(tmp_path / "half.bin"), cfg, "--out-dir", str(tmp_path / "h")]) == 0
    full = read_json(out / "peak.json")["fwhm"]
    assert read_json(tmp_path / "h" / "peak.json")["fwhm"] / full == pytest.approx(2.0, rel=0.25)


def test_zero_signal_reports_no_peak(tmp_path):
    cfg = dict(QDYNE, signal={"tones": [{"amplitude": 0.0, "frequency": 1000002.0}]},
               acquisition={"total_time": 1.0})
    code, out = run(tmp_path, cfg)
    assert code == 0
    peak = read_json(out / "peak.json")
    assert peak["no_peak"] is True and peak["reason"]
    # same through analyze with a blind search
    acfg = write_cfg(tmp_path / "a.yaml", {"kind": "analyze"})
    assert main(["analyze", str(out / "trace.bin"), acfg, "--out-dir", str(tmp_path / "b")]) == 0
    assert read_json(tmp_path / "b" / "peak.json")["no_peak"] is True


def test_json_format(tmp_path):
    cfg = dict(QDYNE, acquisition={"total_time": 0.5, "export_csv": True})
    code, out = run(tmp_path, cfg, "j", "--format", "json")
    assert code == 0
    spec = read_json(out / "spectrum.json")
    assert set(spec["columns"]) == {"freq_hz", "power"}
    assert not (out / "spectrum.csv").exists()
    rows = (out / "trace.csv").read_text().splitlines()
    assert rows[0] == "n,t_start_s,photons" and rows[1].startswith("0,")


@pytest.mark.parametrize("cfg, files", [
    ({"kind": "sweep", "sweep": {"repetitions": 2000}}, ["sweep.csv", "sweep_fit.json"]),
    ({"kind": "bandwidth", "bandwidth": {"points": 5}, "acquisition": {"total_time": 0.5}},
     ["bandwidth.csv", "filter.csv", "bandwidth_summary.json"]),
    ({"kind": "multitone", "acquisition": {"total_time": 3.0}}, ["spectrum.csv", "peaks.json"]),
    ({"kind": "nmr", "bath": {"duration": 0.05, "kappa": 3.7e6},
      "sensor": {"mean_photons_bright": 20.0}, "analysis": {"segments": 10}},
     ["bath.csv", "bath.csv.json", "trace.bin", "spectrum.csv", "peak.json", "nmr_stats.json"]),
    ({"kind": "scaling", "signal": QDYNE["signal"], "sensor": {"mean_photons_bright": 5.0},
      "scaling": {"times": [0.1, 0.3, 1.0, 3.5], "trials": 10}},
     ["scaling.csv", "scaling_slopes.json"]),
])
def test_other_kinds_run(tmp_path, cfg, files):
    code, out = run(tmp_path, cfg, "k", "--threads", "1")
    assert code == 0
    for name in files + ["manifest.json"]:
        assert (out / name).exists(), name
    man = read_json(out / "manifest.json")
    assert set(man["artifacts"]) == {p.name for p in out.iterdir()} - {"manifest.json"}


def test_multitone_reports_three_lines(tmp_path):
    code, out = run(tmp_path, {"kind": "multitone", "acquisition": {"total_time": 5.0}})
    assert code == 0
    peaks = read_json(out / "peaks.json")["peaks"]
    centres = sorted(p["center"] for p in peaks)
    np.testing.assert_allclose(centres, [10.0, 35.0, 57.0], atol=0.1)
