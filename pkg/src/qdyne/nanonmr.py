"""Statistically polarized, diffusing nuclear spins above a shallow sensor.

Geometry: the sensor sits at the origin, the surface at ``z = depth`` and
spins fill the box ``|x| <= Lx/2, |y| <= Ly/2, depth <= z <= depth + Lz``
(lengths in nm).  The sensing axis is z.  Spin ``i`` couples with
``c_i = kappa (3 cos^2 theta_i - 1) / r_i^3`` and carries a telegraph
polarization ``s_i(t) = +-1``; the detected field is
``Im(sum_i c_i s_i(t) exp(i psi_i) exp(i 2 pi f_L t))``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .signals import DEFAULT_GYROMAGNETIC_SCALE, ModulatedCarrier, SampledTrace

MU0_OVER_4PI = 1e-7
PROTON_MOMENT = 1.41060679736e-26  # J/T
# coupling constant of a proton in rad/s * nm^3 for the default field scale
DEFAULT_KAPPA = DEFAULT_GYROMAGNETIC_SCALE * MU0_OVER_4PI * PROTON_MOMENT * 1e27
M2_TO_NM2 = 1e18
STEP_CHUNK = 4096


class BathCapacityError(MemoryError):
    """Requested spin count exceeds the configured memory budget."""


@dataclass(frozen=True)
class BathConfig:
    box: tuple = (6.0, 6.0, 6.0)
    depth: float = 5.0
    n_spins: int | None = 300
    density: float | None = None  # spins per nm^3, overrides n_spins when set
    diffusion: float = 1e-15  # m^2/s
    t1p: float = 0.32e-3
    larmor_frequency: float = 1.025e6
    bandwidth: float = 10e3  # envelope bandwidth the trace must resolve
    timestep: float = 4.5e-6
    duration: float = 10e-3
    kappa: float = DEFAULT_KAPPA
    seed: int = 0
    positions: tuple | None = None  # explicit initial positions, nm
    max_spins: int = 200_000

    def __post_init__(self):
        if len(self.box) != 3 or min(self.box) <= 0:
            raise ValueError("box dimensions must be three positive lengths")
        if not self.depth > 0:
            raise ValueError("depth must be positive")
        if self.diffusion < 0 or not self.t1p > 0:
            raise ValueError("diffusion must be >= 0 and t1p > 0")
        if not self.timestep < self.t1p / 10:
            raise ValueError("timestep must be below t1p / 10")
        if not self.timestep < 1.0 / (10.0 * self.bandwidth):
            raise ValueError("timestep must be below 1 / (10 * bandwidth)")
        if not self.duration >= 2 * self.timestep:
            raise ValueError("duration must cover at least two timesteps")
        if self.spin_count > self.max_spins:
            raise BathCapacityError(
                f"{self.spin_count} spins exceed the budget of {self.max_spins}; shrink the box"
            )

    @property
    def volume(self) -> float:
        return float(np.prod(self.box))

    @property
    def spin_count(self) -> int:
        if self.positions is not None:
            return len(self.positions)
        if self.density is not None:
            return int(round(self.density * self.volume))
        if self.n_spins is None:
            raise ValueError("give n_spins, density or positions")
        return int(self.n_spins)

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.duration / self.timestep + 1e-9)) + 1

    def bounds(self):
        lx, ly, lz = self.box
        lo = np.array([-lx / 2, -ly / 2, self.depth])
        return lo, lo + np.array([lx, ly, lz])


def couplings(positions, kappa: float):
    """Secular dipolar coupling ``kappa (3 cos^2 theta - 1) / r^3`` per spin."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    r2 = np.einsum("ij,ij->i", pos, pos)
    r = np.sqrt(r2)
    cos2 = pos[:, 2] ** 2 / r2
    return kappa * (3.0 * cos2 - 1.0) / (r2 * r)


def _fold(x, lo, hi):
    """Map free coordinates into [lo, hi] as if reflected at the walls."""
    span = hi - lo
    u = np.mod(x - lo, 2.0 * span)
    return lo + np.where(u <= span, u, 2.0 * span - u)


def initial_state(cfg: BathConfig, rng: np.random.Generator):
    n = cfg.spin_count
    lo, hi = cfg.bounds()
    if cfg.positions is not None:
        pos = np.asarray(cfg.positions, dtype=float).reshape(n, 3)
    else:
        pos = lo + rng.random((n, 3)) * (hi - lo)
    spins = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    phases = rng.uniform(0.0, 2.0 * math.pi, n)
    return pos, spins, phases


@dataclass(eq=False)
class BathTrace:
    """Sampled bath signal.

    ``envelope`` is the real secular field ``sum c_i s_i(t)`` (rad/s);
    ``complex_envelope`` includes the random Larmor phases and drives the
    carrier.
    """

    period: float
    envelope: np.ndarray
    complex_envelope: np.ndarray
    larmor_frequency: float
    n_spins: int
    config: dict = field(default_factory=dict)

    @property
    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.envelope ** 2)))

    @property
    def duration(self) -> float:
        return (self.envelope.size - 1) * self.period

    def to_source(self) -> ModulatedCarrier:
        return ModulatedCarrier(self.larmor_frequency, self.period, self.complex_envelope)

    def to_sampled_trace(self) -> SampledTrace:
        return SampledTrace(self.period, self.envelope)

    def export_csv(self, path) -> None:
        """Envelope as ``time_s,k_rad_per_s`` plus a sidecar JSON with the config."""
        path = Path(path)
        t = np.arange(self.envelope.size) * self.period
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["time_s", "k_rad_per_s"])
            for ti, vi in zip(t, self.envelope):
                writer.writerow([format(float(ti), ".17g"), format(float(vi), ".17g")])
        side = path.with_suffix(path.suffix + ".json")
        side.write_text(json.dumps(self.config, indent=2, sort_keys=True, default=str) + "\n")


def simulate_bath(cfg: BathConfig) -> BathTrace:
    """Evolve the bath and record the envelope at every timestep.

    Diffusion is a Gaussian random walk with per-axis variance ``2 D dt``
    folded back into the box (reflecting walls).  Polarizations flip with
    probability ``(1 - exp(-2 dt / t1p)) / 2`` per step, which gives a
    single-spin autocorrelation of exactly ``exp(-2 t / t1p)``.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.spin_count
    steps = cfg.n_steps
    env = np.zeros(steps)
    cenv = np.zeros(steps, dtype=complex)
    meta = {k: v for k, v in asdict(cfg).items() if k != "positions"}
    meta["spin_count"] = n
    if n == 0:
        return BathTrace(cfg.timestep, env, cenv, cfg.larmor_frequency, 0, meta)

    pos, spins, phases = initial_state(cfg, rng)
    lo, hi = cfg.bounds()
    free = pos.copy()  # unfolded coordinates
    step_sd = math.sqrt(2.0 * cfg.diffusion * M2_TO_NM2 * cfg.timestep)
    p_flip = 0.0 if math.isinf(cfg.t1p) else 0.5 * (1.0 - math.exp(-2.0 * cfg.timestep / cfg.t1p))
    rot = np.exp(1j * phases)

    c = couplings(pos, cfg.kappa)
    env[0] = c @ spins
    cenv[0] = (c * spins) @ rot
    done = 1
    while done < steps:
        m = min(STEP_CHUNK, steps - done)
        if p_flip > 0:
            flips = rng.random((m, n)) < p_flip
            parity = np.cumsum(flips, axis=0) & 1
            s = spins * np.where(parity == 1, -1.0, 1.0)
            spins = s[-1].copy()
        else:
            s = np.broadcast_to(spins, (m, n))
        if step_sd > 0:
            walk = free + np.cumsum(rng.standard_normal((m, n, 3)) * step_sd, axis=0)
            free = walk[-1].copy()
            cm = couplings(_fold(walk, lo, hi), cfg.kappa).reshape(m, n)
        else:
            cm = np.broadcast_to(c, (m, n))
        weighted = cm * s
        env[done:done + m] = weighted.sum(axis=1)
        cenv[done:done + m] = weighted @ rot
        done += m
    return BathTrace(cfg.timestep, env, cenv, cfg.larmor_frequency, n, meta)


def bath_rms(cfg: BathConfig, n_realizations: int) -> float:
    """Ensemble rms of the envelope at t = 0 over seeded realizations."""
    if n_realizations < 10:
        raise ValueError("need at least 10 realizations")
    seeds = np.random.SeedSequence(cfg.seed).spawn(n_realizations)
    acc = 0.0
    for ss in seeds:
        pos, spins, _ = initial_state(cfg, np.random.default_rng(ss))
        e0 = couplings(pos, cfg.kappa) @ spins if len(spins) else 0.0
        acc += e0 * e0
    return math.sqrt(acc / n_realizations)


def continuum_rms_squared(cfg: BathConfig) -> float:
    """Expected envelope variance for uniformly distributed spins.

    ``N / V * kappa^2 * integral over the box of ((3 cos^2 theta - 1) / r^3)^2``,
    computed by adaptive cubature.
    """
    from scipy import integrate

    lo, hi = cfg.bounds()

    def f(z, y, x):
        r2 = x * x + y * y + z * z
        g = (3.0 * z * z / r2 - 1.0) / r2 ** 1.5
        return g * g

    val, _ = integrate.tplquad(f, lo[0], hi[0], lo[1], hi[1], lo[2], hi[2], epsrel=1e-8)
    return cfg.spin_count / cfg.volume * cfg.kappa ** 2 * val


class NoCorrelationCrossing(ValueError):
    pass


def correlation_time(trace: BathTrace) -> float:
    """Lag at which the normalized envelope autocorrelation first drops below 1/e."""
    x = trace.envelope - trace.envelope.mean()
    var = float(x @ x)
    if var <= 1e-24 * max(1.0, float(trace.envelope @ trace.envelope)):
        raise NoCorrelationCrossing("envelope has no fluctuations")
    n = x.size
    spec = np.fft.rfft(x, n=2 * n)
    acf = np.fft.irfft(spec * np.conj(spec))[:n]
    acf = acf / acf[0]
    below = np.flatnonzero(acf < math.exp(-1.0))
    if below.size == 0:
        raise NoCorrelationCrossing("autocorrelation never crosses 1/e within the trace")
    j = int(below[0])
    a0, a1 = acf[j - 1], acf[j]
    frac = (a0 - math.exp(-1.0)) / (a0 - a1)
    return (j - 1 + frac) * trace.period
