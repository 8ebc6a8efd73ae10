import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import null_space

from cespin.errors import PhysicsError
from cespin.fitting import fit_exponential_recovery, fit_lorentzian
from cespin.optics import (DOWN, THERMAL, UP, LevelSystem, OpticalParams, PulseTrainProtocol,
                           estimate_fidelity, evolve_rates, fluorescence_contrast, ideal_fidelity,
                           inject_poisson_noise, leakage_for_fidelity, odmr_sweep,
                           population_contrast, rabi_trace, rate_matrix, simulate_protocol,
                           steady_state, steady_state_fidelity, t1_protocol_curve,
                           transfer_probability)

NO_FLIPS = OpticalParams(t1=np.inf)


def test_rate_matrix_conserves_probability():
    for pump in (True, False):
        m = rate_matrix(OpticalParams(ellipticity_leakage=0.1), pump, mw_rate=0.01)
        assert np.allclose(m.sum(axis=0), 0, atol=1e-15)
        off = m - np.diag(np.diag(m))
        assert np.all(off >= 0)


def test_steady_state_matches_null_space():
    m = rate_matrix(OpticalParams(ellipticity_leakage=0.02))
    ns = null_space(m)[:, 0]
    assert np.allclose(steady_state(m), ns / ns.sum(), atol=1e-12)


def test_evolution_matches_ode_integration():
    params = OpticalParams(ellipticity_leakage=0.05, t1=50.0)
    m = rate_matrix(params)
    sol = solve_ivp(lambda t, p: m @ p, (0, 3.0), THERMAL, method="LSODA", rtol=1e-11, atol=1e-13)
    out = evolve_rates(LevelSystem(THERMAL, params), 3.0)
    assert np.allclose(out.populations, sol.y[:, -1], atol=1e-8)


def test_no_pump_keeps_thermal():
    out = evolve_rates(LevelSystem(THERMAL), 1e4, pump=False)
    assert np.allclose(out.populations, THERMAL, atol=1e-12)


@pytest.mark.parametrize("beta", [10.0, 396.0, 1e4])
def test_ideal_fidelity_closed_form(beta):
    params = OpticalParams(branching_ratio=beta, t1=np.inf)
    assert steady_state_fidelity(params) == pytest.approx(beta / (beta + 1), abs=1e-12)
    long = evolve_rates(LevelSystem(THERMAL, params), 2e5)
    assert long.ground_polarization == pytest.approx(beta / (beta + 1), abs=1e-9)


def test_ideal_fidelity_value():
    assert ideal_fidelity(396) == pytest.approx(0.99748, abs=1e-5)


def test_leakage_reproduces_target_fidelity():
    e = leakage_for_fidelity(0.975)
    assert steady_state_fidelity(NO_FLIPS, e) == pytest.approx(0.975, abs=1e-12)
    with pytest.raises(PhysicsError):
        leakage_for_fidelity(0.999)


def test_linear_polarization_gives_flat_fluorescence():
    trace = simulate_protocol(PulseTrainProtocol(polarization="linear"))
    assert np.allclose(trace.counts, trace.counts[0], rtol=1e-9)


def test_sigma_plus_trace_decreases():
    trace = simulate_protocol(PulseTrainProtocol())
    init = trace.counts[trace.train == 0]
    assert np.all(np.diff(init) < 0)
    assert np.all(trace.rates >= 0)
    assert abs(trace.final_populations.sum() - 1) < 1e-9 and np.all(trace.final_populations >= -1e-12)


def test_population_contrast_near_99():
    beta = 396.0
    # tiny pump keeps the excited state empty: ratio (beta + 1)^2 / (4 beta)
    assert population_contrast(OpticalParams(pump_rate=1e-6, t1=np.inf)) == pytest.approx(
        (beta + 1) ** 2 / (4 * beta), rel=1e-5)
    assert population_contrast(NO_FLIPS) == pytest.approx(99.5, rel=1e-3)


def test_contrast_monotonicity():
    by_beta = [population_contrast(OpticalParams(branching_ratio=b)) for b in (50, 100, 396, 1000)]
    by_leak = [population_contrast(OpticalParams(), e) for e in (0, 0.005, 0.02, 0.1)]
    assert np.all(np.diff(by_beta) > 0) and np.all(np.diff(by_leak) < 0)
    traces = [fluorescence_contrast(simulate_protocol(PulseTrainProtocol(), OpticalParams(ellipticity_leakage=e)))
              for e in (0, 0.01, 0.05)]
    assert np.all(np.diff(traces) < 0)


def test_fidelity_estimator_close_to_truth():
    params = OpticalParams(t1=np.inf)
    est = estimate_fidelity(simulate_protocol(PulseTrainProtocol(pulses_per_train=200), params))
    assert est == pytest.approx(steady_state_fidelity(params), abs=2e-3)


def test_gap_zero_and_long_gap():
    proto = PulseTrainProtocol(pulses_per_train=50)
    longer = simulate_protocol(PulseTrainProtocol(pulses_per_train=51, readout_pulses=0))
    gap0 = simulate_protocol(proto)
    assert gap0.counts[50] == pytest.approx(longer.counts[50], rel=1e-12)
    relaxed = simulate_protocol(PulseTrainProtocol(gap=20 * 3800.0))
    assert relaxed.counts[50] == pytest.approx(relaxed.counts[0], rel=1e-6)


def test_t1_curve_shape_and_limits():
    params = OpticalParams()
    proto = PulseTrainProtocol()
    gaps = np.linspace(0, 3 * params.t1, 60)
    curve = t1_protocol_curve(gaps, params, proto)
    assert np.all(np.diff(curve.values) > 0)
    far = t1_protocol_curve([10 * params.t1], params, proto).values[0]
    thermal = t1_protocol_curve([1e3 * params.t1], params, proto).values[0]
    assert far == pytest.approx(thermal, rel=5e-5)
    polarized = simulate_protocol(proto, params).counts[proto.pulses_per_train:].sum()
    assert curve.values[0] == pytest.approx(polarized, rel=1e-12)
    fit = fit_exponential_recovery(curve)
    assert fit.values["t1"] == pytest.approx(params.t1, rel=1e-6)
    with pytest.raises(PhysicsError):
        t1_protocol_curve([-1.0])


def test_poisson_noise_level(rng):
    values = np.full(20000, 7.0)
    noisy = inject_poisson_noise(values, 0.05, rng)
    assert np.std(noisy) / 7.0 == pytest.approx(0.05, rel=0.05)
    again = inject_poisson_noise(values, 0.05, np.random.default_rng(20240607))
    assert np.array_equal(noisy, again)


def test_odmr_round_trip():
    freqs = np.linspace(590, 710, 241)
    curve = odmr_sweep(freqs, 650.0, 12.0)
    fit = fit_lorentzian(curve)
    assert fit.values["center"] == pytest.approx(650.0, abs=0.1)
    assert fit.values["fwhm"] == pytest.approx(12.0, abs=0.2)
    assert fit.values["height"] > 0


def test_odmr_baseline_and_zero_drive():
    far = odmr_sweep([650.0 + 1200.0], 650.0, 12.0).values[0]
    base = odmr_sweep([650.0], 650.0, 12.0, mw_rate=0.0).values[0]
    assert far == pytest.approx(base, rel=1e-3)
    flat = odmr_sweep(np.linspace(600, 700, 11), 650.0, 12.0, mw_rate=0.0).values
    assert np.all(flat == flat[0])
    heights = [odmr_sweep([650.0], 650.0, 12.0, mw_rate=r).values[0] - base for r in (1e-3, 1e-5, 1e-7)]
    assert heights[0] > heights[1] > heights[2] > 0 and heights[2] < 1e-3 * heights[0]
    with pytest.raises(PhysicsError):
        odmr_sweep([650.0], 650.0, 0.0)


def test_rabi_frequency_ratio_and_pi_pulse():
    p0 = simulate_protocol(PulseTrainProtocol(readout_pulses=0)).final_populations
    t = np.linspace(0, 2, 4001)
    a = rabi_trace(100.0, t).values
    b = rabi_trace(400.0, t).values
    # the first maximum sits at the pi pulse 1 / (2 Omega)
    assert t[np.argmax(a[:1500])] == pytest.approx(1 / 20, rel=1e-2)
    assert t[np.argmax(b[:1500])] == pytest.approx(1 / 40, rel=1e-2)
    assert transfer_probability([1 / 20], 10.0)[0] == pytest.approx(1.0, abs=1e-12)
    assert p0[UP] > p0[DOWN]


def test_detuning_spread_decays_slower_than_free_dephasing():
    sigma, rabi = 1.0, 20.0
    t_fid = 3 / (2 * np.pi * sigma)  # free-induction envelope exp(-4.5) here
    window = np.linspace(t_fid, t_fid + 1 / rabi, 400)
    p = transfer_probability(window, rabi, sigma)
    assert p.max() - p.min() > 0.5
    assert np.exp(-0.5 * (2 * np.pi * sigma * t_fid) ** 2) < 0.02


def test_parameter_validation():
    with pytest.raises(PhysicsError):
        OpticalParams(branching_ratio=0)
    with pytest.raises(PhysicsError):
        LevelSystem(np.array([0.5, 0.6, 0, 0]))
    with pytest.raises(PhysicsError):
        PulseTrainProtocol(pulses_per_train=0)
    with pytest.raises(PhysicsError):
        evolve_rates(LevelSystem(THERMAL), 1.0, polarization="circular")
