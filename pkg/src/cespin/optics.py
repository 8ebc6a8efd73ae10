"""Rate-equation model of the optical spin cycle.

Levels are ordered ``(4f down, 4f up, 5d down, 5d up)``.  Under sigma+ light
the strong transition pumps 4f down -> 5d up at rate R and the weak one pumps
4f up -> 5d down at R / beta.  A fraction ``leakage`` of the light has the
opposite helicity and swaps the two strengths.  Each 5d level decays to
both 4f levels at Gamma / 2, and the 4f sublevels exchange population at
1 / (2 T1) in each direction.  Rates are in 1/us, times in us.

Each laser pulse of a train is coarse-grained to an on-window of constant
pump rate followed by a dark window.  Photons emitted during both windows are
attributed to that pulse, and detected counts are emitted photons times a
collection efficiency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .curves import CoherenceCurve
from .errors import PhysicsError

DOWN, UP, EXC_DOWN, EXC_UP = range(4)
THERMAL = np.array([0.5, 0.5, 0.0, 0.0])


@dataclass(frozen=True)
class OpticalParams:
    pump_rate: float = 0.5  # 1/us on the strong transition during a laser pulse
    branching_ratio: float = 396.0
    radiative_lifetime: float = 0.065  # us
    t1: float = 3800.0  # us; np.inf disables spin flips
    ellipticity_leakage: float = 0.0
    saturated_count_rate: float = 65e3  # detected photons/s with the ion fully excited

    def __post_init__(self):
        if self.pump_rate < 0 or self.branching_ratio <= 0 or self.radiative_lifetime <= 0:
            raise PhysicsError("pump rate must be >= 0, branching ratio and lifetime > 0")
        if not self.t1 > 0:
            raise PhysicsError("T1 must be positive")
        if not 0 <= self.ellipticity_leakage <= 1:
            raise PhysicsError("ellipticity leakage must lie in [0, 1]")
        if self.saturated_count_rate < 0:
            raise PhysicsError("saturated count rate must be non-negative")

    @property
    def radiative_rate(self) -> float:
        return 1.0 / self.radiative_lifetime

    @property
    def spin_flip_rate(self) -> float:
        return 0.0 if np.isinf(self.t1) else 1.0 / (2 * self.t1)

    @property
    def collection_efficiency(self) -> float:
        """Detected photons per emitted photon."""
        return self.saturated_count_rate / (self.radiative_rate * 1e6)


@dataclass(frozen=True)
class LevelSystem:
    populations: np.ndarray
    params: OpticalParams = field(default_factory=OpticalParams)

    def __post_init__(self):
        p = np.asarray(self.populations, dtype=float)
        if p.shape != (4,) or np.any(p < -1e-12) or abs(p.sum() - 1) > 1e-9:
            raise PhysicsError("populations must be a probability vector over 4 levels")
        object.__setattr__(self, "populations", p)

    @property
    def ground_polarization(self) -> float:
        return ground_polarization(self.populations)


def ground_polarization(populations) -> float:
    """p_up / (p_up + p_down) of the 4f doublet."""
    p = np.asarray(populations)
    return float(p[UP] / (p[UP] + p[DOWN]))


def _leakage(polarization, params: OpticalParams) -> float:
    if polarization == "sigma_plus":
        return params.ellipticity_leakage
    if polarization == "linear":
        return 0.5
    if isinstance(polarization, (tuple, list)) and polarization[0] == "elliptical":
        return float(polarization[1]) ** 2
    raise PhysicsError(f"unknown polarization {polarization!r}")


def channel_rates(params: OpticalParams, leakage: float | None = None):
    """Pump rates (strong 4f down -> 5d up, weak 4f up -> 5d down)."""
    e = params.ellipticity_leakage if leakage is None else leakage
    inv = 1.0 / params.branching_ratio
    return params.pump_rate * ((1 - e) + e * inv), params.pump_rate * (e + (1 - e) * inv)


def rate_matrix(params: OpticalParams, pump: bool = True, leakage: float | None = None,
                mw_rate: float = 0.0) -> np.ndarray:
    """Generator M of dp/dt = M p; columns sum to zero."""
    m = np.zeros((4, 4))

    def flow(src, dst, rate):
        m[dst, src] += rate
        m[src, src] -= rate

    if pump:
        strong, weak = channel_rates(params, leakage)
        flow(DOWN, EXC_UP, strong)
        flow(UP, EXC_DOWN, weak)
    half = params.radiative_rate / 2
    for exc in (EXC_DOWN, EXC_UP):
        flow(exc, DOWN, half)
        flow(exc, UP, half)
    k = params.spin_flip_rate + mw_rate
    flow(DOWN, UP, k)
    flow(UP, DOWN, k)
    return m


def steady_state(m: np.ndarray) -> np.ndarray:
    a = np.vstack([m, np.ones(4)])
    b = np.zeros(5)
    b[-1] = 1.0
    p, *_ = np.linalg.lstsq(a, b, rcond=None)
    return np.clip(p, 0.0, None) / np.clip(p, 0.0, None).sum()


def evolve_rates(system: LevelSystem, duration: float, pump: bool = True,
                 polarization="sigma_plus", mw_rate: float = 0.0) -> LevelSystem:
    """Exact propagation of the populations by the matrix exponential of the rate matrix."""
    if duration < 0:
        raise PhysicsError("duration must be non-negative")
    m = rate_matrix(system.params, pump, _leakage(polarization, system.params), mw_rate)
    p = expm(m * duration) @ system.populations
    p = np.clip(p, 0.0, None)
    return LevelSystem(p / p.sum(), system.params)


def ideal_fidelity(branching_ratio: float) -> float:
    return branching_ratio / (branching_ratio + 1)


def steady_state_fidelity(params: OpticalParams, leakage: float | None = None) -> float:
    """Ground-state polarization into the dark (up) level under continuous pumping."""
    return ground_polarization(steady_state(rate_matrix(params, True, leakage)))


def leakage_for_fidelity(target: float, branching_ratio: float = 396.0) -> float:
    """Leakage at which the spin-flip-free steady state reaches ``target`` fidelity."""
    inv = 1.0 / branching_ratio
    e = (1 - target * (1 + inv)) / (1 - inv)
    if not 0 <= e <= 0.5:
        raise PhysicsError(f"fidelity {target} is not reachable for branching ratio {branching_ratio}")
    return e


def fluorescence_rate(populations, params: OpticalParams, leakage: float | None = None) -> float:
    """Instantaneous detected count rate (photons/s): excitation flux times collection efficiency."""
    strong, weak = channel_rates(params, leakage)
    p = np.asarray(populations)
    return params.collection_efficiency * (strong * p[DOWN] + weak * p[UP]) * 1e6


def population_contrast(params: OpticalParams, leakage: float | None = None) -> float:
    """Fluorescence at thermal populations over that at the pumped steady state."""
    ss = steady_state(rate_matrix(params, True, leakage))
    return fluorescence_rate(THERMAL, params, leakage) / fluorescence_rate(ss, params, leakage)


def _window(m, duration):
    """Propagator and time-integral of the propagator over ``duration`` (Van Loan block)."""
    big = np.zeros((8, 8))
    big[:4, :4] = m
    big[4:, :4] = np.eye(4)
    e = expm(big * duration)
    return e[:4, :4], e[4:, :4]


@dataclass(frozen=True)
class PulseTrainProtocol:
    pulses_per_train: int = 50
    pulse_duration: float = 1.0  # us, laser on
    pulse_spacing: float = 2.0  # us, laser off after each pulse
    gap: float = 0.0  # us between the initialization and readout trains
    readout_pulses: int = 5
    polarization: object = "sigma_plus"

    def __post_init__(self):
        if self.pulses_per_train < 1 or self.readout_pulses < 0:
            raise PhysicsError("pulse counts must be >= 1 (readout >= 0)")
        if self.pulse_duration <= 0 or self.pulse_spacing < 0 or self.gap < 0:
            raise PhysicsError("durations must be positive and gaps non-negative")


class _PulseMap:
    """Linear maps for one laser pulse: population transfer and detected counts."""

    def __init__(self, protocol: PulseTrainProtocol, params: OpticalParams, mw_rate: float = 0.0):
        leak = _leakage(protocol.polarization, params)
        on, on_int = _window(rate_matrix(params, True, leak, mw_rate), protocol.pulse_duration)
        off, off_int = _window(rate_matrix(params, False, leak, mw_rate), protocol.pulse_spacing)
        self.transfer = off @ on
        excited = np.zeros(4)
        excited[[EXC_DOWN, EXC_UP]] = 1.0
        scale = params.collection_efficiency * params.radiative_rate
        self.counts = scale * excited @ (on_int + off_int @ on)
        self.dark = rate_matrix(params, False)

    def run(self, p, n):
        counts = np.empty(n)
        for k in range(n):
            counts[k] = self.counts @ p
            p = self.transfer @ p
        return p, counts

    def readout_functional(self, n):
        """Row vector giving summed counts of an n-pulse train for any starting populations."""
        total = np.zeros(4)
        acc = np.eye(4)
        for _ in range(n):
            total += self.counts @ acc
            acc = self.transfer @ acc
        return total


@dataclass
class FluorescenceTrace:
    times: np.ndarray  # us, start of each pulse
    counts: np.ndarray  # detected photons per pulse
    rates: np.ndarray  # photons/s averaged over the pulse period
    train: np.ndarray  # 0 initialization, 1 readout
    final_populations: np.ndarray
    metadata: dict = field(default_factory=dict)


def simulate_protocol(protocol: PulseTrainProtocol, params: OpticalParams = OpticalParams(),
                      initial=THERMAL) -> FluorescenceTrace:
    """Initialization train, dark gap, then readout train; photon counts per pulse."""
    pm = _PulseMap(protocol, params)
    p = np.asarray(initial, dtype=float)
    period = protocol.pulse_duration + protocol.pulse_spacing
    p, init_counts = pm.run(p, protocol.pulses_per_train)
    t_init = np.arange(protocol.pulses_per_train) * period
    p = expm(pm.dark * protocol.gap) @ p
    p, read_counts = pm.run(p, protocol.readout_pulses)
    t_read = t_init[-1] + period + protocol.gap + np.arange(protocol.readout_pulses) * period
    counts = np.concatenate([init_counts, read_counts])
    return FluorescenceTrace(
        np.concatenate([t_init, t_read]),
        counts,
        counts / (period * 1e-6),
        np.concatenate([np.zeros(len(init_counts), int), np.ones(len(read_counts), int)]),
        p,
        {"polarization": str(protocol.polarization), "gap_us": protocol.gap},
    )


def fluorescence_contrast(trace: FluorescenceTrace) -> float:
    """First initialization pulse over the last one."""
    init = trace.counts[trace.train == 0]
    return float(init[0] / init[-1])


def estimate_fidelity(trace: FluorescenceTrace, branching_ratio: float = 396.0) -> float:
    """Dark-state fidelity inferred from the first pulse versus the asymptote of the train.

    Assumes counts proportional to ``p_down + p_up / beta`` and a thermal start.
    """
    inv = 1.0 / branching_ratio
    ratio = 1.0 / fluorescence_contrast(trace)
    p_down = (ratio * (1 + inv) / 2 - inv) / (1 - inv)
    return 1.0 - p_down


def t1_protocol_curve(gaps, params: OpticalParams = OpticalParams(),
                      protocol: PulseTrainProtocol = PulseTrainProtocol()) -> CoherenceCurve:
    """Summed readout-train counts after each dark gap following initialization."""
    gaps = np.asarray(gaps, dtype=float)
    if np.any(gaps < 0):
        raise PhysicsError("gaps must be non-negative")
    pm = _PulseMap(protocol, params)
    p0, _ = pm.run(THERMAL.copy(), protocol.pulses_per_train)
    read = pm.readout_functional(protocol.readout_pulses)
    values = np.array([read @ (expm(pm.dark * g) @ p0) for g in gaps])
    return CoherenceCurve(gaps, values, {"t1_us": params.t1}, "gap", "us", "readout_counts")


def inject_poisson_noise(values, relative: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson resampling with the mean count chosen so the average relative spread is ``relative``."""
    values = np.asarray(values, dtype=float)
    scale = 1.0 / (relative ** 2 * values.mean())
    return rng.poisson(values * scale) / scale


def _mw_rate(freqs, center, width, peak_rate):
    x = 2 * (np.asarray(freqs, dtype=float) - center) / width
    return peak_rate / (1 + x * x)


def odmr_sweep(freqs, center: float, linewidth: float, params: OpticalParams = OpticalParams(),
               mw_rate: float = 0.005) -> CoherenceCurve:
    """Steady-state count rate (photons/s) under continuous pumping versus MW frequency.

    The MW spin-flip rate is Lorentzian in detuning.  The steady-state signal is
    then exactly Lorentzian, broadened by sqrt(1 + s) with ``s`` fixed by the
    peak rate; the intrinsic width is reduced by that factor so the observed
    FWHM equals ``linewidth``.
    """
    if not linewidth > 0:
        raise PhysicsError("linewidth must be positive")
    if mw_rate < 0:
        raise PhysicsError("MW rate must be non-negative")
    scale = params.collection_efficiency * params.radiative_rate * 1e6

    def signal(w):
        p = steady_state(rate_matrix(params, True, mw_rate=w))
        return scale * (p[EXC_DOWN] + p[EXC_UP])

    freqs = np.asarray(freqs, dtype=float)
    if mw_rate == 0:
        return CoherenceCurve(freqs, np.full(freqs.shape, signal(0.0)), {}, "frequency", "MHz", "count_rate")
    f0, f_peak, f_inf = signal(0.0), signal(mw_rate), signal(1e6 * (1 + mw_rate))
    s = (f0 - f_peak) / (f_peak - f_inf)
    intrinsic = linewidth / np.sqrt(1 + s)
    values = np.array([signal(w) for w in _mw_rate(freqs, center, intrinsic, mw_rate)])
    meta = {"center_MHz": center, "fwhm_MHz": linewidth, "saturation": s}
    return CoherenceCurve(freqs, values, meta, "frequency", "MHz", "count_rate")


def rabi_frequency(power: float, calibration: float) -> float:
    """Omega = c sqrt(P), MHz."""
    if power < 0:
        raise PhysicsError("MW power must be non-negative")
    return calibration * np.sqrt(power)


def transfer_probability(durations, rabi: float, detuning_sigma: float = 0.0, n_detunings: int = 2001):
    """Population moved by a resonant MW pulse, averaged over a Gaussian detuning spread (MHz)."""
    t = np.asarray(durations, dtype=float)
    if detuning_sigma == 0:
        return np.sin(np.pi * rabi * t) ** 2
    delta = np.linspace(-6 * detuning_sigma, 6 * detuning_sigma, n_detunings)
    w = np.exp(-0.5 * (delta / detuning_sigma) ** 2)
    w /= w.sum()
    eff2 = rabi ** 2 + delta ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        amp = np.where(eff2 > 0, rabi ** 2 / np.where(eff2 > 0, eff2, 1.0), 0.0)
    return (np.sin(np.pi * np.sqrt(eff2)[None, :] * t[:, None]) ** 2 * amp) @ w


def rabi_trace(power: float, durations, calibration: float = 1.0, detuning_sigma: float = 0.0,
               params: OpticalParams = OpticalParams(),
               protocol: PulseTrainProtocol = PulseTrainProtocol()) -> CoherenceCurve:
    """Readout counts after initialization and a MW pulse of each duration."""
    omega = rabi_frequency(power, calibration)
    pm = _PulseMap(protocol, params)
    p0, _ = pm.run(THERMAL.copy(), protocol.pulses_per_train)
    read = pm.readout_functional(protocol.readout_pulses)
    moved = transfer_probability(durations, omega, detuning_sigma)
    diff = p0[UP] - p0[DOWN]
    values = []
    for m in moved:
        p = p0.copy()
        p[DOWN] += diff * m
        p[UP] -= diff * m
        values.append(read @ p)
    meta = {"rabi_MHz": omega, "power": power, "detuning_sigma_MHz": detuning_sigma}
    return CoherenceCurve(np.asarray(durations, dtype=float), np.array(values), meta,
                          "duration", "us", "readout_counts")

