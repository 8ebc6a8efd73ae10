import numpy as np
import pytest
from scipy import integrate

from cespin.errors import BracketError, PhysicsError, QuadratureError
from cespin.fitting import fit_stretched_exponential
from cespin.noise import (HardCutoff, Lorentzian, SpectrumSum, coherence_from_spectrum, cpmg_filter,
                          decoherence_integral, make_spectrum, scaling_exponent_scan,
                          spectrum_coherence_time)
from cespin.pulses import PulseSequence, build_sequence, filter_function, hahn_filter


def test_spectra_shapes():
    lor = Lorentzian(2.0, 0.5)
    assert lor(0.0) == pytest.approx(2.0 * 0.5 / np.pi)
    assert lor(2.0) == pytest.approx(lor(0.0) / 2)
    hc = HardCutoff(3.0, 1.5, 6)
    assert hc(1.0) == 3.0 and hc(-1.5) == 3.0
    assert hc(3.0) == pytest.approx(3.0 / 2 ** 6)
    assert make_spectrum("hard_cutoff", amplitude=1, omega_c=1) == HardCutoff(1, 1, 6.0)
    with pytest.raises(PhysicsError):
        make_spectrum("gaussian")
    with pytest.raises(PhysicsError):
        Lorentzian(-1, 1)


def test_lorentzian_normalization():
    # two-sided normalized: integral over the real line equals delta^2
    lor = Lorentzian(1.7, 3.0)
    total, _ = integrate.quad(lor, -np.inf, np.inf)
    assert total == pytest.approx(1.7, rel=1e-9)


def test_zero_spectrum_gives_unit_coherence():
    curve = coherence_from_spectrum(SpectrumSum(), "hahn", 1, [0.0, 1.0, 5.0])
    assert np.array_equal(curve.values, [1.0, 1.0, 1.0])


@pytest.mark.parametrize("n", [1, 2, 3, 8, 33])
def test_cpmg_closed_form_matches_sum(n):
    t = 4.0
    # include the points where the closed form has a removable singularity
    omega = np.concatenate([np.linspace(1e-3, 50, 3001), np.pi * n / t * np.arange(1, 8, 2)])
    seq = build_sequence("cpmg", n, t)
    assert np.allclose(cpmg_filter(omega, t, n), filter_function(seq, omega), rtol=1e-9, atol=1e-9)


def test_motional_narrowing_rate():
    lor = Lorentzian(1.0, 0.01)
    t = 50.0
    chi = decoherence_integral(lor, build_sequence("ramsey", total_time=t), t)
    # free decay rate delta^2 tau_c, corrected by the initial quadratic transient
    assert chi / t == pytest.approx(1.0 * 0.01, rel=0.02)


def test_white_spectrum_gives_n_independent_t2():
    # flat S = A makes chi = pi A t for every sequence
    # so W reaches 1/e at t = 1 / (pi A) for every N; chi is linear in t, so a 2 %
    # spread in chi at that time is a 2 % spread in T2
    amp = 0.02
    white = HardCutoff(amp, 100.0, 6)
    t = 1 / (np.pi * amp)
    chi = [decoherence_integral(white, build_sequence("cpmg", n, t), t) for n in (1, 2, 4, 8)]
    assert np.allclose(chi, 1.0, rtol=0.02)


def test_hahn_matches_direct_quadrature():
    lor = Lorentzian(0.8, 2.0)
    for t in (0.5, 2.0, 6.0):
        def f(w):
            return lor(w) * hahn_filter(w, t) / w ** 2
        # one period of F per panel; beyond 2000 rad/us the integrand is below 1e-12
        edges = np.concatenate([np.arange(0, 2000, 4 * np.pi / t), [2000]])
        parts = [integrate.quad(f, a, b, epsabs=0, epsrel=1e-12)[0] for a, b in zip(edges[:-1], edges[1:])]
        w = coherence_from_spectrum(lor, "hahn", 1, [t]).values[0]
        assert w == pytest.approx(np.exp(-sum(parts)), rel=1e-6)


def test_time_reversal_gives_same_chi():
    seq = PulseSequence(3.0, (0.1, 0.25, 0.7), ("Y",) * 3)
    lor = Lorentzian(1.0, 1.0)
    assert decoherence_integral(lor, seq, 3.0) == pytest.approx(
        decoherence_integral(lor, seq.reversed(), 3.0), rel=1e-9)


def test_chi_is_additive():
    a, b = Lorentzian(1.0, 2.0), HardCutoff(0.5, 1.0, 6)
    seq = build_sequence("cpmg", 4, 5.0)
    total = decoherence_integral(SpectrumSum((a, b)), seq, 5.0)
    assert total == pytest.approx(decoherence_integral(a, seq, 5.0) + decoherence_integral(b, seq, 5.0),
                                  rel=1e-5)


def test_coherence_monotone_and_starts_at_one():
    curve = coherence_from_spectrum(Lorentzian(1.0, 10.0), "cpmg", 4, np.linspace(0, 6, 13))
    assert curve.values[0] == 1.0
    assert np.all(np.diff(curve.values) <= 0)


def test_hard_cutoff_decay_is_steep():
    spec = HardCutoff(10.0, 1.0, 6)
    n = 16
    t2 = spectrum_coherence_time(spec, "cpmg", n)
    t_end = 2 * t2
    assert np.pi * n / t_end > spec.omega_c
    curve = coherence_from_spectrum(spec, "cpmg", n, np.linspace(0.05, t_end, 30))
    assert fit_stretched_exponential(curve).values["k"] > 3


def test_coherence_time_hits_level():
    lor = Lorentzian(1.0, 100.0)
    t2 = spectrum_coherence_time(lor, "hahn", 1)
    w = coherence_from_spectrum(lor, "hahn", 1, [t2]).values[0]
    assert w == pytest.approx(np.exp(-1), rel=5e-3)


def test_errors():
    lor = Lorentzian(1.0, 1.0)
    with pytest.raises(PhysicsError):
        scaling_exponent_scan(lor, [4])
    with pytest.raises(QuadratureError) as info:
        decoherence_integral(lor, build_sequence("hahn", total_time=1.0), 1.0, max_refine=0)
    assert info.value.achieved_tolerance is not None
    with pytest.raises(BracketError):
        spectrum_coherence_time(Lorentzian(1e-30, 1.0), "hahn", 1, max_doublings=5)
    with pytest.raises(PhysicsError):
        coherence_from_spectrum(lor, "hahn", 1, [-1.0])


def test_scan_reports_power_law():
    res = scaling_exponent_scan(HardCutoff(10.0, 1.0, 6), [1, 4, 16])
    assert np.all(np.diff(res.t2) > 0)
    assert res.prefactor * 4 ** res.alpha == pytest.approx(res.t2[1], rel=0.1)
