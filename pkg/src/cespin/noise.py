"""Semiclassical coherence under Gaussian phase noise.

Coherence is ``W(t) = exp(-chi(t))`` with

    chi(t) = integral_0^inf S(omega) F(omega, t) / omega^2 d omega,

``S`` normalized two-sided (so the Lorentzian integrates to Delta^2 / 2 over
omega >= 0) and ``F`` from :func:`cespin.pulses.filter_function`.  Free
evolution of a Lorentzian with t >> tau_c then decays at rate Delta^2 tau_c.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .curves import CoherenceCurve
from .errors import BracketError, PhysicsError, QuadratureError
from .pulses import PulseSequence, build_sequence, filter_function, filter_mean

log = logging.getLogger(__name__)

#: Relative tolerance of every chi integral.
QUAD_RTOL = 1e-6
#: Integration runs to this multiple of the largest relevant frequency; beyond, F is replaced by its mean.
OMEGA_MAX_FACTOR = 100.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class Lorentzian:
    delta2: float  # rad^2/us^2
    tau_c: float  # us

    def __post_init__(self):
        if not (self.delta2 > 0 and self.tau_c > 0):
            raise PhysicsError("Lorentzian parameters must be positive")

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        return self.delta2 * self.tau_c / (np.pi * (1 + (w * self.tau_c) ** 2))

    @property
    def frequencies(self):
        return (1 / self.tau_c,)


@dataclass(frozen=True)
class HardCutoff:
    amplitude: float
    omega_c: float  # rad/us
    power: float = 6.0

    def __post_init__(self):
        if not (self.amplitude > 0 and self.omega_c > 0 and self.power > 0):
            raise PhysicsError("hard-cutoff parameters must be positive")

    def __call__(self, omega):
        w = np.abs(np.asarray(omega, dtype=float))
        with np.errstate(divide="ignore"):
            tail = self.amplitude * (self.omega_c / np.where(w > 0, w, 1.0)) ** self.power
        return np.where(w <= self.omega_c, self.amplitude, tail)

    @property
    def frequencies(self):
        return (self.omega_c,)


@dataclass(frozen=True)
class SpectrumSum:
    components: tuple = ()

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        total = np.zeros(w.shape)
        for c in self.components:
            total = total + c(w)
        return total

    @property
    def frequencies(self):
        return tuple(f for c in self.components for f in c.frequencies)


def make_spectrum(kind: str, **params):
    if kind == "lorentzian":
        return Lorentzian(params["delta2"], params["tau_c"])
    if kind == "hard_cutoff":
        return HardCutoff(params["amplitude"], params["omega_c"], params.get("power", 6.0))
    raise PhysicsError(f"unknown spectrum kind {kind!r}")


def cpmg_filter(omega, t, n):
    """Closed-form F for n evenly spaced pi pulses (n = 0 is free evolution)."""
    w = np.asarray(omega, dtype=float)
    if n == 0:
        return 4 * np.sin(w * t / 2) ** 2
    half = w * t / (2 * n)
    cos_half = np.cos(half)
    outer = np.sin(w * t / 2) if n % 2 == 0 else np.cos(w * t / 2)
    near = np.abs(cos_half) < 1e-2
    safe = np.where(near, 1.0, cos_half)
    out = 16 * np.sin(half / 2) ** 4 * (outer / safe) ** 2
    if np.any(near):
        seq = build_sequence("cpmg", n, t)
        out[near] = filter_function(seq, w[near], t)
    return out


def _filter(seq: PulseSequence, t):
    if seq.n_pulses == 0 or seq.is_cpmg:
        return lambda w: cpmg_filter(w, t, seq.n_pulses)
    return lambda w: filter_function(seq, w, t)


def _panel_sum(f, edges):
    a, b = edges[:-1], edges[1:]
    mid, half = (a + b) / 2, (b - a) / 2
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    return float(np.sum(half[:, None] * _GL_WEIGHTS[None, :] * f(nodes)))


def decoherence_integral(spectrum, seq: PulseSequence, t: float, rtol: float = QUAD_RTOL,
                         max_refine: int = 8) -> float:
    """chi(t) by Gauss-Legendre panels sized to the filter oscillation, refined by halving.

    Panels have width pi / t (half the fastest F period) up to
    ``omega_max = 100 * max(pi n / t, spectral frequencies)``, with a
    geometric grading near zero down to 1e-4 of the smallest scale.  The tail
    beyond ``omega_max`` uses the mean of F.
    """
    if not t > 0:
        raise PhysicsError("t must be positive")
    freqs = tuple(getattr(spectrum, "frequencies", ()))
    if isinstance(spectrum, SpectrumSum) and not spectrum.components:
        return 0.0
    filt = _filter(seq, t)

    def integrand(w):
        return spectrum(w) * filt(w) / w ** 2

    n = max(seq.n_pulses, 1)
    w_max = OMEGA_MAX_FACTOR * max([np.pi * n / t, *freqs])
    step = np.pi / t
    w_low = 1e-4 * min([step, *freqs])
    grade = np.geomspace(w_low, min(step, w_max), 40)
    breaks = sorted({0.0, *grade, *(f for f in freqs if f < w_max), w_max})
    base = np.unique(np.concatenate([np.array(breaks), np.arange(step, w_max, step)]))
    tail, _ = integrate.quad(lambda w: spectrum(w) / w ** 2, w_max, np.inf, limit=200)
    tail *= filter_mean(seq)
    prev = _panel_sum(integrand, base) + tail
    edges = base
    err = np.inf
    for _ in range(max_refine):
        edges = np.sort(np.concatenate([edges, (edges[:-1] + edges[1:]) / 2]))
        cur = _panel_sum(integrand, edges) + tail
        err = abs(cur - prev) / max(abs(cur), 1e-300)
        if err <= rtol or cur == 0:
            return cur
        prev = cur
    raise QuadratureError(f"chi integral did not reach rtol {rtol}", err)


def _sequence(kind, n, t=1.0):
    return build_sequence(kind, n, t) if kind != "ramsey" else build_sequence("ramsey", total_time=t)


def coherence_from_spectrum(spectrum, kind: str, n: int, times, rtol: float = QUAD_RTOL) -> CoherenceCurve:
    seq = _sequence(kind, n)
    times = np.asarray(times, dtype=float)
    if np.any(times < 0):
        raise PhysicsError("times must be non-negative")
    chi = np.array([decoherence_integral(spectrum, seq, t, rtol) if t > 0 else 0.0 for t in times])
    return CoherenceCurve(times, np.exp(-chi), {"sequence": seq.describe(), "spectrum": repr(spectrum)})


def spectrum_coherence_time(spectrum, kind: str, n: int, level: float = np.exp(-1),
                            rtol: float = 1e-3, t_start: float = 1.0, max_doublings: int = 60) -> float:
    """Time at which W falls to ``level``, bracketed by doubling and then bisected in t."""
    seq = _sequence(kind, n)
    target = -np.log(level)

    def chi(t):
        return decoherence_integral(spectrum, seq, t)

    lo = hi = t_start
    if chi(t_start) < target:
        for _ in range(max_doublings):
            lo, hi = hi, hi * 2
            if chi(hi) >= target:
                break
        else:
            raise BracketError(f"W stays above {level:.4g} up to t = {hi:g} us")
    else:
        for _ in range(max_doublings):
            hi, lo = lo, lo / 2
            if chi(lo) < target:
                break
        else:
            raise BracketError(f"W below {level:.4g} already at t = {lo:g} us")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if chi(mid) >= target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass
class ScanResult:
    n_values: np.ndarray
    t2: np.ndarray
    alpha: float
    prefactor: float


def scaling_exponent_scan(spectrum, n_values, kind: str = "cpmg", level: float = np.exp(-1)) -> ScanResult:
    """T2(N) at each N and the exponent of a log-log line through them."""
    from .fitting import fit_power_law

    n_values = np.asarray(n_values, dtype=int)
    if len(n_values) < 2:
        raise PhysicsError("need at least two N values to fit a scaling exponent")
    t2 = []
    guess = 1.0
    for n in n_values:
        guess = spectrum_coherence_time(spectrum, kind, int(n), level, t_start=guess)
        t2.append(guess)
    t2 = np.array(t2)
    fit = fit_power_law(n_values, t2)
    return ScanResult(n_values, t2, fit.values["alpha"], fit.values["prefactor"])
