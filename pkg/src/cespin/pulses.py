"""Instantaneous pi-pulse sequences and their filter functions.

A sequence is stored as fractions of the total evolution time at which ideal
pi pulses act.  The framing pi/2 pulses are implicit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import SequenceError

KINDS = ("ramsey", "hahn", "cpmg")


@dataclass(frozen=True)
class PulseSequence:
    total_time: float  # us
    pi_pulse_fractions: tuple = ()
    axes: tuple = ()
    name: str = ""
    angles: tuple = ()  # rotation angle per pulse, rad; empty means all pi

    def __post_init__(self):
        f = np.asarray(self.pi_pulse_fractions, dtype=float)
        if np.any(f <= 0) or np.any(f >= 1) or np.any(np.diff(f) <= 0):
            raise SequenceError("pulse fractions must be strictly increasing inside (0, 1)")
        if self.axes and len(self.axes) != len(f):
            raise SequenceError("one axis label per pulse")
        if self.angles and len(self.angles) != len(f):
            raise SequenceError("one angle per pulse")
        if not self.total_time > 0:
            raise SequenceError("total_time must be positive")

    @property
    def n_pulses(self) -> int:
        return len(self.pi_pulse_fractions)

    @property
    def is_cpmg(self) -> bool:
        """True for the evenly spaced (2j - 1) / 2N layout (Hahn included)."""
        n = self.n_pulses
        if n == 0:
            return False
        ideal = (2 * np.arange(1, n + 1) - 1) / (2 * n)
        return np.allclose(self.pi_pulse_fractions, ideal, rtol=0, atol=1e-12)

    def with_total_time(self, total_time) -> "PulseSequence":
        return replace(self, total_time=float(total_time))

    def switch_times(self, total_time=None) -> np.ndarray:
        """Segment boundaries ``[0, t_1, ..., t_n, t]`` in us."""
        t = self.total_time if total_time is None else total_time
        return np.concatenate(([0.0], np.asarray(self.pi_pulse_fractions) * t, [t]))

    def reversed(self) -> "PulseSequence":
        f = tuple(1.0 - x for x in reversed(self.pi_pulse_fractions))
        return replace(self, pi_pulse_fractions=f, axes=tuple(reversed(self.axes)),
                       angles=tuple(reversed(self.angles)))

    def describe(self) -> dict:
        return {"name": self.name, "n_pulses": self.n_pulses, "axes": "".join(self.axes)}


def build_sequence(kind: str, n: int = 1, total_time: float = 1.0) -> PulseSequence:
    """Ramsey (no pulses), Hahn (one pulse at t/2) or CPMG(n) with Y pulses at (2j-1)t/2n."""
    if kind == "ramsey":
        return PulseSequence(total_time, (), (), "ramsey")
    if kind == "hahn":
        n = 1
    elif kind != "cpmg":
        raise SequenceError(f"unknown sequence kind {kind!r}; expected one of {KINDS}")
    if n < 1:
        raise SequenceError("CPMG needs at least one pulse")
    fractions = tuple((2 * j - 1) / (2 * n) for j in range(1, n + 1))
    name = "hahn" if n == 1 else f"cpmg{n}"
    return PulseSequence(total_time, fractions, ("Y",) * n, name)


def _coefficients(n_pulses):
    # sum_j (-1)^j (e^{i w t_{j+1}} - e^{i w t_j}) = sum_k c_k e^{i w t_k}
    c = np.empty(n_pulses + 2)
    c[0] = -1.0
    c[1:-1] = 2.0 * (-1.0) ** np.arange(n_pulses)
    c[-1] = (-1.0) ** n_pulses
    return c


def filter_function(seq: PulseSequence, omega, t: float | None = None) -> np.ndarray:
    """F(omega, t) = |sum_j (-1)^j (exp(i omega t_{j+1}) - exp(i omega t_j))|^2.

    ``omega`` in rad/us.  Coherence follows W = exp(-chi) with
    chi = integral_0^inf S(omega) F(omega, t) / omega^2 d omega.
    """
    omega = np.asarray(omega, dtype=float)
    times = seq.switch_times(t)
    c = _coefficients(seq.n_pulses)
    flat = omega.reshape(-1)
    out = np.empty(flat.shape)
    step = max(1, 2_000_000 // len(times))
    for s in range(0, len(flat), step):
        phase = np.outer(flat[s:s + step], times)
        re = np.cos(phase) @ c
        im = np.sin(phase) @ c
        out[s:s + step] = re * re + im * im
    return out.reshape(omega.shape)


def filter_mean(seq: PulseSequence) -> float:
    """Average of F over a fast oscillation, sum of squared coefficients."""
    return float(np.sum(_coefficients(seq.n_pulses) ** 2))


def ramsey_filter(omega, t):
    return 4 * np.sin(np.asarray(omega) * t / 2) ** 2


def hahn_filter(omega, t):
    return 16 * np.sin(np.asarray(omega) * t / 4) ** 4
