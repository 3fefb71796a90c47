import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, optimize

from qdyne.sensor import (PulseSequence, ReadoutAxis, SensorParams, accumulated_phase,
                          bright_probability, export_filter_csv, filter_weight, mean_photons,
                          resonance_phase_amplitude, sample_photons)
from qdyne.signals import SampledTrace, Tone, ToneList


def quad_phase(tone, seq, t_start):
    """Independent oracle: integrate f(t) s(t) piece by piece."""
    edges, signs = seq.segments()
    total = 0.0
    for a, b, sgn in zip(edges[:-1], edges[1:], signs):
        val, _ = integrate.quad(lambda t: tone.evaluate(t_start + t), a, b,
                                epsabs=1e-16, epsrel=1e-12, limit=200)
        total += sgn * val
    return total


def test_sequence_timing():
    seq = PulseSequence(500e-9, 2)
    assert seq.n_pulses == 16
    assert seq.interaction_time == pytest.approx(8e-6)
    assert seq.resonance_frequency == pytest.approx(1e6)
    with pytest.raises(ValueError):
        PulseSequence(0.0)
    with pytest.raises(ValueError):
        PulseSequence(1e-7, 0)


def test_resonant_phase_matches_quadrature():
    seq = PulseSequence(500e-9)
    tone = Tone(1000.0, 1e6, 0.0)
    # 2 k T_s / pi with T_s = 4 us
    assert resonance_phase_amplitude(1000.0, seq) == pytest.approx(2.5464790894703255e-3, rel=1e-12)
    phi = float(accumulated_phase(tone, seq, 0.0))
    assert phi == pytest.approx(quad_phase(tone, seq, 0.0), rel=1e-9)
    assert phi == pytest.approx(2.546e-3, rel=1e-3)


def test_quadrature_phase_vanishes():
    seq = PulseSequence(500e-9)
    tone = Tone(1000.0, 1e6, math.pi / 2)
    assert abs(float(accumulated_phase(tone, seq, 0.0))) < 1e-12
    assert abs(quad_phase(tone, seq, 0.0)) < 1e-12


def test_off_resonant_phase_matches_quadrature():
    seq = PulseSequence(437e-9, 2)
    tone = Tone(3e4, 1.31e6, 0.7)
    for t0 in (0.0, 3.3e-6, 1.7e-3):
        assert float(accumulated_phase(tone, seq, t0)) == pytest.approx(
            quad_phase(tone, seq, t0), rel=1e-9, abs=1e-15)


def test_finely_sampled_trace_tracks_tone():
    seq = PulseSequence(500e-9)
    tone = Tone(2e4, 1e6, 0.4)
    t = np.arange(4001) * 2.5e-9
    tr = SampledTrace(2.5e-9, tone.evaluate(t))
    # a fine sampled copy of the tone gives nearly the same phase
    assert float(accumulated_phase(tr, seq, 1e-6)) == pytest.approx(
        float(accumulated_phase(tone, seq, 1e-6)), rel=1e-4)


@given(st.floats(1.0, 1e6), st.floats(0, 2 * math.pi), st.floats(0, 1e-3))
def test_phase_is_linear_in_amplitude(k, phi, t0):
    seq = PulseSequence(500e-9)
    a = accumulated_phase(Tone(k, 1.02e6, phi), seq, t0)
    b = accumulated_phase(Tone(2 * k, 1.02e6, phi), seq, t0)
    assert float(b) == pytest.approx(2 * float(a), rel=1e-12, abs=1e-300)


def test_tone_list_phase_adds():
    seq = PulseSequence(500e-9)
    a, b = Tone(1e3, 1e6, 0.1), Tone(2e3, 0.9e6, 1.1)
    ts = np.linspace(0, 1e-4, 7)
    np.testing.assert_allclose(accumulated_phase(ToneList((a, b)), seq, ts),
                               accumulated_phase(a, seq, ts) + accumulated_phase(b, seq, ts),
                               rtol=1e-12)


def test_filter_weight_normalization_and_dc():
    seq = PulseSequence(500e-9)
    assert float(filter_weight(1e6, seq)) == pytest.approx(1.0, rel=1e-12)
    assert float(filter_weight(1e-3, seq)) < 1e-6
    assert float(filter_weight(0.0, seq)) == 0.0


def test_filter_first_zero_near_250khz():
    seq = PulseSequence(500e-9)
    # main lobe edge of an 8-pulse train sits 1/T_s = 250 kHz from resonance
    zero = optimize.minimize_scalar(lambda f: float(filter_weight(f, seq)),
                                    bounds=(1.15e6, 1.4e6), method="bounded").x
    assert zero - 1e6 == pytest.approx(250e3, rel=0.05)


@given(st.floats(1e5, 3e6), st.floats(0, 1e-2))
def test_filter_weight_independent_of_time_origin(nu, shift):
    seq = PulseSequence(500e-9)
    tone = Tone(1.0, nu)
    norm = 2 * seq.interaction_time / math.pi
    # maximize over the signal phase by quadrature sum of two phases at a shifted origin
    a = accumulated_phase(tone, seq, shift)
    b = accumulated_phase(Tone(1.0, nu, math.pi / 2), seq, shift)
    assert math.hypot(a, b) / norm == pytest.approx(float(filter_weight(nu, seq)), rel=1e-6, abs=1e-12)


def test_bright_probability_examples():
    assert float(bright_probability(0.0)) == 0.5
    assert float(bright_probability(math.pi / 2)) == pytest.approx(1.0)
    p = float(bright_probability(0.01))
    assert abs(p - (0.5 + 0.005)) < 0.01 ** 3
    assert p == pytest.approx(0.5 + 0.5 * math.sin(0.01), rel=1e-15)
    # population readout
    assert float(bright_probability(0.0, ReadoutAxis(math.pi / 2))) == pytest.approx(1.0)


@given(st.floats(-100, 100), st.floats(0, 1), st.floats(-10, 10))
def test_bright_probability_bounded(phi, coh, axis):
    p = float(bright_probability(phi, ReadoutAxis(axis), coh))
    assert 0.0 <= p <= 1.0


def test_sensor_validation_and_coherence():
    s = SensorParams(t2=100e-6)
    assert s.coherence(4e-6) == pytest.approx(math.exp(-0.04))
    assert SensorParams(t2=1e-4, decay_exponent=2).coherence(1e-4) == pytest.approx(math.exp(-1))
    for bad in ({"contrast": 0.0}, {"contrast": 1.5}, {"t2": 0.0}, {"mean_photons_bright": 0.0},
                {"readout_dead_time": -1.0}):
        with pytest.raises(ValueError):
            SensorParams(**bad)


def test_photon_means():
    assert float(mean_photons(0.5, SensorParams())) == pytest.approx(0.0255)
    assert float(mean_photons(1.0, SensorParams())) == pytest.approx(0.03)
    rng = np.random.default_rng(0)
    assert not sample_photons(np.zeros(1000), SensorParams(contrast=1.0), rng).any()


def test_photon_sampler_statistics():
    rng = np.random.default_rng(11)
    n = 10**6
    c = sample_photons(np.full(n, 0.5), SensorParams(), rng)
    assert abs(c.mean() - 0.0255) < 3 * math.sqrt(0.0255 / n)
    big = sample_photons(np.full(10**7, 0.5), SensorParams(mean_photons_bright=5.0), rng)
    assert big.var() / big.mean() == pytest.approx(1.0, abs=0.01)


def test_filter_csv(tmp_path):
    path = tmp_path / "f.csv"
    export_filter_csv(path, PulseSequence(500e-9), [0.9e6, 1e6])
    lines = path.read_text().splitlines()
    assert lines[0] == "nu_hz,weight"
    assert float(lines[2].split(",")[1]) == pytest.approx(1.0)
