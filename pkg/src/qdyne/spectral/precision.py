"""Closed-form frequency-precision models and the single-tone Cramer-Rao bound."""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PrecisionModel:
    """Parameters of the analytic precision estimates.

    k : coupling amplitude (rad/s); t2 : sensor coherence time (s);
    memory_time : memory-qubit lifetime T_M (s); clock_time : local
    oscillator stability horizon T_LO (s).
    """

    k: float
    t2: float
    memory_time: float
    clock_time: float

    def __post_init__(self):
        for name in ("k", "t2", "memory_time", "clock_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def weak_signal(self) -> bool:
        return self.k * self.t2 < 0.1


def predict_precision_dd(model: PrecisionModel, T: float) -> float:
    """Swept dynamical decoupling: ``1 / (k T2 sqrt(T T2))``."""
    return 1.0 / (model.k * model.t2 * math.sqrt(T * model.t2))


def predict_precision_memory(model: PrecisionModel, T: float) -> float:
    """Memory-assisted spectroscopy: ``1 / (k T2 sqrt(T T_M))``."""
    return 1.0 / (model.k * model.t2 * math.sqrt(T * model.memory_time))


def predict_precision_qdyne(model: PrecisionModel, T: float) -> float:
    """Qdyne: ``1/(k T sqrt(T T2))`` up to ``T_LO``, ``1/(k T_LO sqrt(T T2))`` beyond."""
    resolution_time = min(T, model.clock_time)
    return 1.0 / (model.k * resolution_time * math.sqrt(T * model.t2))


def crb_tone_frequency(amplitude_over_noise: float, sample_period: float, n_samples: int) -> float:
    """Cramer-Rao bound on the std of a tone frequency estimate (Hz).

    ``amplitude_over_noise`` is the rms tone amplitude over the white-noise
    std, i.e. ``A / (sqrt(2) sigma)`` for ``A cos(2 pi f t + p)``.
    """
    if n_samples < 3:
        raise ValueError("need at least 3 samples")
    n = float(n_samples)
    var = 12.0 / ((2.0 * math.pi) ** 2 * amplitude_over_noise ** 2
                  * sample_period ** 2 * n * (n * n - 1.0))
    return math.sqrt(var)
