import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdyne.signals import (DEFAULT_GYROMAGNETIC_SCALE, FieldUnitConversion, ModulatedCarrier,
                           SampledTrace, Tone, ToneList, TraceRangeError, evaluate, field_to_k,
                           load_trace_csv, save_trace_csv)

amplitudes = st.floats(0.0, 1e7)
freqs = st.floats(1.0, 1e7)
phases = st.floats(-20.0, 20.0)
times = st.floats(0.0, 1e-2)


def test_zero_amplitude_is_silent():
    assert evaluate(Tone(0.0, 1e6), 0.3e-6) == 0.0


def test_quarter_period():
    assert evaluate(Tone(1000.0, 1e6), 0.25e-6) == pytest.approx(1000.0, rel=1e-12)


def test_tone_validation():
    with pytest.raises(ValueError):
        Tone(-1.0, 1e6)
    with pytest.raises(ValueError):
        Tone(1.0, 0.0)
    assert Tone(1.0, 1.0, -math.pi / 2).phase == pytest.approx(1.5 * math.pi)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        evaluate(Tone(1.0, 1.0), -1.0)


@given(st.lists(st.tuples(amplitudes, freqs, phases), min_size=1, max_size=5), times)
def test_tone_list_is_linear(specs, t):
    tones = [Tone(*s) for s in specs]
    total = evaluate(ToneList(tuple(tones)), t)
    parts = sum(evaluate(x, t) for x in tones)
    scale = sum(x.amplitude for x in tones) or 1.0
    assert abs(total - parts) <= 1e-12 * scale


@given(amplitudes, freqs, phases, times)
def test_periodicity(k, nu, phi, t):
    tone = Tone(k, nu, phi)
    # compare at the precision the phase argument itself carries
    tol = 1e-9 * k + 8 * np.finfo(float).eps * k * 2 * math.pi * nu * (t + 1 / nu)
    assert abs(evaluate(tone, t + 1.0 / nu) - evaluate(tone, t)) <= tol


@given(amplitudes, freqs, phases, times)
def test_phase_shift_negates(k, nu, phi, t):
    a = evaluate(Tone(k, nu, phi + math.pi), t)
    b = evaluate(Tone(k, nu, phi), t)
    assert a == pytest.approx(-b, abs=1e-9 * max(k, 1.0))


def test_field_conversion():
    assert field_to_k(0.0) == 0.0
    assert field_to_k(1.0, FieldUnitConversion(123.0)) == 123.0
    assert field_to_k(880e-9) == pytest.approx(DEFAULT_GYROMAGNETIC_SCALE * 880e-9, rel=1e-15)
    with pytest.raises(ValueError):
        field_to_k(-1e-9)
    with pytest.raises(ValueError):
        FieldUnitConversion(0.0)


def test_sampled_trace_interpolates_and_integrates():
    tr = SampledTrace(0.5, np.array([0.0, 2.0, -2.0, 4.0]), t0=1.0)
    assert tr.evaluate(1.25) == pytest.approx(1.0)
    assert tr.evaluate(2.5) == pytest.approx(4.0)
    # trapezoid areas 0.5, 0, 0.5
    assert tr.integral_to(2.5) == pytest.approx(1.0)
    assert tr.integral_to(1.25) == pytest.approx(0.125)
    with pytest.raises(TraceRangeError):
        tr.evaluate(0.9)
    with pytest.raises(TraceRangeError):
        tr.evaluate(2.6)


def test_modulated_carrier_matches_tone():
    # a constant envelope E = k reproduces k sin(2 pi f t)
    mc = ModulatedCarrier(1e3, 1e-3, np.full(11, 5.0 + 0j))
    t = np.linspace(0.0, 1e-2, 37)
    np.testing.assert_allclose(mc.evaluate(t), Tone(5.0, 1e3).evaluate(t), atol=1e-12)
    with pytest.raises(TraceRangeError):
        mc.evaluate(0.02)


def test_trace_csv_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    tr = SampledTrace(4.5e-6, rng.standard_normal(200) * 1e5, t0=0.0)
    path = tmp_path / "trace.csv"
    save_trace_csv(tr, path)
    back = load_trace_csv(path)
    np.testing.assert_array_equal(back.values, tr.values)
    assert back.period == pytest.approx(tr.period, rel=1e-12)
    assert path.read_text().splitlines()[0] == "time_s,k_rad_per_s"


def test_trace_csv_rejects_uneven_grid(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time_s,k_rad_per_s\n0,1\n1,2\n3,4\n")
    with pytest.raises(ValueError):
        load_trace_csv(path)
