import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from nvscc.magnetometry import (
    ALPHA,
    P_CONVENTIONAL,
    P_SCC,
    T2_ECHO,
    T_REVIVAL,
    TAU_OPT_REVIVAL,
    CoherenceModel,
    SensitivityScenario,
    coherence_envelope,
    echo_signal,
    fringe_period,
    optimal_tau,
    postselected_sensitivity,
    postselection_improvement,
    readout_time_scan,
    revival_comb,
    sensitivity,
    sensitivity_scan,
    single_shot_uncertainty,
)
from nvscc.scc_protocol import POSTSELECTION_SCENARIO, ProtocolTimings, postselection_scan

MU_B = 9.2740100783e-24
HBAR = 1.054571817e-34
SCC_MODEL = CoherenceModel(p=P_SCC)
CONV_MODEL = CoherenceModel(p=P_CONVENTIONAL)
NO_OVERHEAD = ProtocolTimings(0.0, 1e-4, 0.0)


def eta_formula(s, tau, T2, p, t_init, t_ro):
    return s * math.exp((tau / T2) ** p) / (2 * MU_B / (math.pi * HBAR) * math.sqrt(tau)) * math.sqrt(
        (t_init + tau + t_ro) / tau
    )


def test_alpha_value():
    assert ALPHA == pytest.approx(2 * MU_B / (math.pi * HBAR), rel=1e-8)
    assert ALPHA == pytest.approx(5.598e10, rel=1e-3)


def test_coherence_model_defaults_and_validation():
    m = CoherenceModel()
    assert m.T2 == T2_ECHO and m.t_rev == T_REVIVAL and m.w_rev == T_REVIVAL / 8
    with pytest.raises(ValueError):
        CoherenceModel(T2=0.0)
    with pytest.raises(ValueError):
        CoherenceModel(p=-1.0)


def test_coherence_envelope_examples():
    assert coherence_envelope(0.0, SCC_MODEL) == 1.0
    c = coherence_envelope(8 * T_REVIVAL, SCC_MODEL)
    assert c == pytest.approx(math.exp(-((210.24 / 461.5) ** 1.01)), abs=1e-4)
    assert c == pytest.approx(0.635, abs=2e-3)
    mid = 8.5 * T_REVIVAL
    assert revival_comb(mid, SCC_MODEL) < 0.002
    assert coherence_envelope(mid, SCC_MODEL) < 0.002
    with pytest.raises(ValueError):
        coherence_envelope(-1e-6, SCC_MODEL)


def test_coherence_envelope_vectorized():
    taus = np.array([0.0, 8 * T_REVIVAL, 8.5 * T_REVIVAL])
    out = coherence_envelope(taus, SCC_MODEL)
    assert out.shape == (3,)
    assert out[0] == 1.0


def test_echo_signal_examples():
    tau = 232e-6
    C = coherence_envelope(tau, SCC_MODEL)
    pt = echo_signal(0.0, tau, SCC_MODEL)
    assert pt.p0 == pytest.approx((1 + C) / 2)
    flip = echo_signal(math.pi / (ALPHA * tau), tau, SCC_MODEL)
    assert flip.p0 == pytest.approx((1 - C) / 2)
    assert pt.sigma_spn == pytest.approx(math.sqrt(pt.p0 * (1 - pt.p0)))
    assert fringe_period(tau, SCC_MODEL) == pytest.approx(0.48e-6, abs=0.01e-6)
    with pytest.raises(ValueError):
        echo_signal(0.0, 0.0, SCC_MODEL)


def test_sensitivity_examples():
    t = ProtocolTimings(30e-6, 232e-6, 40e-6)
    r = sensitivity(5.0, 232e-6, t, SCC_MODEL)
    assert r.eta == pytest.approx(eta_formula(5, 232e-6, 461.5e-6, 1.01, 30e-6, 40e-6), rel=1e-9)
    assert r.eta == pytest.approx(11.0e-9, abs=0.05e-9)
    bare = sensitivity(5.0, 232e-6, NO_OVERHEAD, SCC_MODEL)
    assert bare.eta == pytest.approx(9.66e-9, abs=0.01e-9)
    conv = sensitivity(60.0, 232e-6, NO_OVERHEAD, CONV_MODEL)
    assert conv.eta == pytest.approx(105e-9, abs=0.5e-9)
    double = sensitivity(10.0, 232e-6, t, SCC_MODEL)
    assert double.eta == pytest.approx(2 * r.eta, rel=1e-14)
    assert r.p_used == P_SCC and r.t_init == 30e-6
    with pytest.raises(ValueError):
        sensitivity(0.5, 232e-6, t, SCC_MODEL)


def test_conventional_overhead_is_negligible():
    with_overhead = sensitivity(53.94, 232e-6, ProtocolTimings(2e-6, 232e-6, 0.35e-6), CONV_MODEL).eta
    without = sensitivity(53.94, 232e-6, NO_OVERHEAD, CONV_MODEL).eta
    assert with_overhead / without - 1 < 0.01


def test_optimal_tau_examples():
    model = CoherenceModel(p=1.0)
    grid = np.linspace(1e-6, 3 * T2_ECHO, 20001)
    tau, _ = optimal_tau(5.0, NO_OVERHEAD, model, tau_grid=grid)
    assert abs(tau - T2_ECHO / 2) <= grid[1] - grid[0]
    tau_r, _ = optimal_tau(5.0, NO_OVERHEAD, SCC_MODEL, restrict_to_revivals=True)
    assert tau_r == pytest.approx(8 * T_REVIVAL) or tau_r == pytest.approx(9 * T_REVIVAL)
    long = ProtocolTimings(0.0, 1e-4, 10 * T2_ECHO)
    tau_l, _ = optimal_tau(5.0, long, model, tau_grid=grid)
    assert tau_l > T2_ECHO / 2
    assert TAU_OPT_REVIVAL == pytest.approx(223.34e-6)


def test_optimal_tau_errors():
    with pytest.raises(ValueError):
        optimal_tau(5.0, NO_OVERHEAD, SCC_MODEL, tau_grid=[])
    with pytest.raises(ValueError):
        optimal_tau(5.0, NO_OVERHEAD, SCC_MODEL, restrict_to_revivals=True, tau_grid=[1e-6, 2e-6])


def calibrated_scenarios():
    scc = SensitivityScenario("scc", 4.94, ProtocolTimings(30e-6, 50e-6, 1.65e-3), SCC_MODEL)
    conv = SensitivityScenario("conventional", 53.94, ProtocolTimings(2e-6, 50e-6, 0.35e-6), CONV_MODEL)
    return scc, conv


def test_gain_near_two_at_fifty_microseconds():
    scc, conv = calibrated_scenarios()
    table = sensitivity_scan([50e-6, 232e-6], [scc, conv], "conventional", "scc")
    g50 = table.gain[0][1]
    assert 1.5 <= g50 <= 2.5
    assert table.gain[0][1] == pytest.approx(1.7997, abs=1e-3)
    assert len(table.rows) == 4
    assert table.eta("scc").shape == (2,)


def test_gain_approaches_noise_ratio_for_long_tau():
    # with the same coherence model the decay factor cancels in the gain
    scc, conv = calibrated_scenarios()
    conv = SensitivityScenario(conv.name, conv.sigma_R, conv.timings, SCC_MODEL)
    tau = 50 * scc.timings.t_ro
    g = sensitivity_scan([tau], [scc, conv], "conventional", "scc").gain[0][1]
    assert g == pytest.approx(53.94 / 4.94, rel=0.02)


def test_conventional_curve_minimum():
    # zero-overhead optimum: p (tau/T2)^p = 1/2
    _, conv = calibrated_scenarios()
    taus = np.linspace(50e-6, 700e-6, 651)
    table = sensitivity_scan(taus, [conv])
    best = taus[np.argmin(table.eta("conventional"))]
    analytic = T2_ECHO * (1 / (2 * P_CONVENTIONAL)) ** (1 / P_CONVENTIONAL)
    assert abs(best - analytic) <= 2 * (taus[1] - taus[0])
    assert abs(best - T2_ECHO / 2) < 0.05 * T2_ECHO


def test_sensitivity_scan_validation():
    scc, _ = calibrated_scenarios()
    with pytest.raises(ValueError):
        sensitivity_scan([], [scc])


def test_readout_time_scan_rows():
    rows = readout_time_scan([1e-3, 2e-3], lambda t: math.nan if t > 1.5e-3 else 5.0, 232e-6, 30e-6, SCC_MODEL)
    assert rows[0][2] == pytest.approx(eta_formula(5, 232e-6, T2_ECHO, P_SCC, 30e-6, 1e-3), rel=1e-9)
    assert math.isnan(rows[1][2])


def test_single_shot_examples():
    tau = 232e-6
    C = math.exp(-((tau / T2_ECHO) ** P_SCC))
    assert C == pytest.approx(0.607, abs=1e-3)
    dB = single_shot_uncertainty(2.4, tau, SCC_MODEL)
    assert dB == pytest.approx(304e-9, abs=1e-9)
    assert abs(dB - 307e-9) <= 29e-9
    assert single_shot_uncertainty(1.0, tau, SCC_MODEL, coherence=1.0) == pytest.approx(1 / (ALPHA * tau))
    a = single_shot_uncertainty(2.0, 1e-4, SCC_MODEL, coherence=0.5)
    b = single_shot_uncertainty(2.0, 2e-4, SCC_MODEL, coherence=0.5)
    assert a == pytest.approx(2 * b)
    with pytest.raises(ValueError):
        single_shot_uncertainty(2.0, tau, SCC_MODEL, coherence=0.0)


def test_postselected_sensitivity():
    rows = postselection_scan()
    timings = POSTSELECTION_SCENARIO.timings
    base = next(r for r in rows if r.threshold == -1)
    unselected = sensitivity(base.sigma_R, timings.tau, ProtocolTimings(0.0, timings.tau, timings.sequence_time - timings.tau), SCC_MODEL)
    assert postselected_sensitivity(base, timings, SCC_MODEL) == pytest.approx(unselected.eta, rel=1e-12)
    imp = postselection_improvement(rows, timings, SCC_MODEL)
    best_th, _, best = max(imp, key=lambda x: x[2])
    assert 0.02 <= best <= 0.10 and best_th <= 6
    assert best == pytest.approx(0.0467722725, abs=1e-6)
    # positive improvement exactly when sigma_R falls faster than sqrt(t_eff) grows
    for r, (_, _, g) in zip(rows, imp):
        faster = r.sigma_R / base.sigma_R < math.sqrt(base.t_effective / r.t_effective)
        assert (g > 0) == faster or r.threshold == -1


# -- properties -------------------------------------------------------------

taus = st.floats(0.0, 3e-3)
models = st.builds(
    CoherenceModel,
    T2=st.floats(50e-6, 2e-3),
    p=st.floats(0.5, 3.0),
    t_rev=st.floats(5e-6, 100e-6),
    w_rev=st.none(),
)


@given(taus, models)
def test_envelope_in_unit_interval(tau, model):
    c = coherence_envelope(tau, model)
    assert 0.0 <= c <= 1.0


@given(st.integers(0, 60), models, st.floats(0.05, 1 / 6))
def test_envelope_at_revival_centres(k, model, width):
    m = CoherenceModel(model.T2, model.p, model.t_rev, width * model.t_rev)
    tau = k * m.t_rev
    assert abs(coherence_envelope(tau, m) - float(m.decay(tau))) < 1e-4


@given(st.floats(-1e-5, 1e-5), st.floats(1e-6, 1e-3), models)
def test_echo_half_period_antisymmetry(B, tau, model):
    a = echo_signal(B, tau, model).p0
    b = echo_signal(B + math.pi / (model.alpha * tau), tau, model).p0
    assert a + b == pytest.approx(1.0, abs=1e-9)


@given(st.floats(1.0, 100.0), st.floats(1e-6, 1e-3), models, st.floats(0.01, 1.0))
def test_single_shot_identity(s, tau, model, C):
    dB = single_shot_uncertainty(s, tau, model, coherence=C)
    assert dB * C * model.alpha * tau == pytest.approx(s, rel=1e-12)


@given(st.floats(1.0, 100.0), st.floats(1.0, 100.0), st.floats(1e-3, 3.0), models)
def test_sensitivity_monotone_in_sigma(s1, s2, frac, model):
    assume(abs(s1 - s2) > 1e-9)
    tau = frac * model.T2
    t = ProtocolTimings(30e-6, tau, 1e-3)
    lo, hi = sorted((s1, s2))
    assert sensitivity(lo, tau, t, model).eta < sensitivity(hi, tau, t, model).eta


@given(st.floats(20e-6, 2e-3))
def test_optimal_tau_is_half_T2(T2):
    model = CoherenceModel(T2=T2, p=1.0)
    grid = np.linspace(T2 / 1000, 3 * T2, 4001)
    tau, eta = optimal_tau(3.0, NO_OVERHEAD, model, tau_grid=grid)
    assert abs(tau - T2 / 2) <= grid[1] - grid[0]
