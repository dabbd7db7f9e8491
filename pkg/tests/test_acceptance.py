"""Acceptance gate: one test per criterion, each reporting PASS/FAIL."""

import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE
from nvscc.charge_dynamics import APPENDIX_B_RATES, RateSet, count_distribution, sample_window_counts, simulate_trace
from nvscc.discrimination import CONVENTIONAL_READOUT, sigma_R_conventional, sigma_R_scc
from nvscc.estimation import fit_rates
from nvscc.magnetometry import ALPHA, CoherenceModel, optimal_tau, postselection_improvement, sensitivity, single_shot_uncertainty
from nvscc.scc_protocol import (
    CALIBRATED_PARAMS,
    CALIBRATED_SCENARIO,
    POSTSELECTION_SCENARIO,
    ProtocolTimings,
    Spin,
    empirical_errors,
    first_readout_degradation,
    postselection_scan,
    simulate_scc_shots,
)
from oracles import total_variation

import test_charge_dynamics as charge_props
import test_discrimination as disc_props
import test_magnetometry as mag_props
import test_scc_protocol as scc_props

T2 = 461.5e-6


def check(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_01_sigma_R_formula():
    s = sigma_R_scc((0.14, 0.69))
    check(1, abs(s - 4.913) <= 0.001, f"sigma_R_scc(0.14, 0.69) = {s:.5f}")


def test_criterion_02_conventional_noise():
    s = sigma_R_conventional(CONVENTIONAL_READOUT)
    check(2, abs(s - 53.94) <= 0.01, f"sigma_R_conventional(0.25, 0.022) = {s:.4f}")


def test_criterion_03_calibrated_monte_carlo():
    b0 = simulate_scc_shots(Spin.MS0, 100_000, CALIBRATED_SCENARIO, seed=1)
    b1 = simulate_scc_shots(Spin.MS1, 100_000, CALIBRATED_SCENARIO, seed=2)
    e = empirical_errors(b0, b1, threshold=5)
    s = sigma_R_scc(e)
    m0, m1 = b0.n_final.mean(), b1.n_final.mean()
    ok = (
        abs(e.eps0 - 0.14) <= 0.03
        and abs(e.eps1 - 0.69) <= 0.03
        and 4.4 <= s <= 5.4
        and abs(m0 / 2.4 - 1) <= 0.15
        and abs(m1 / 3.8 - 1) <= 0.15
    )
    check(3, ok, f"eps=({e.eps0:.4f}, {e.eps1:.4f}) sigma_R={s:.3f} means=({m0:.3f}, {m1:.3f})")


def test_criterion_04_sensitivity_and_ratio():
    model = CoherenceModel(T2=T2, p=1.01, alpha=ALPHA)
    tau = 232e-6
    eta = sensitivity(5.0, tau, ProtocolTimings(30e-6, tau, 40e-6), model).eta
    conv = sensitivity(
        sigma_R_conventional(CONVENTIONAL_READOUT), tau, ProtocolTimings(2e-6, tau, 0.35e-6), CoherenceModel(T2=T2, p=1.33)
    ).eta
    ratio = conv / eta
    ok = 6e-9 <= eta <= 14e-9 and 4 <= ratio <= 12
    check(4, ok, f"eta_SCC={eta * 1e9:.2f} nT/sqrtHz, conventional/SCC={ratio:.2f}")


def test_criterion_05_optimum_evolution_time():
    model = CoherenceModel(T2=T2, p=1.0)
    grid = np.linspace(T2 / 1000, 3 * T2, 4001)
    step = grid[1] - grid[0]
    tau, _ = optimal_tau(5.0, ProtocolTimings(0.0, 1e-4, 0.0), model, tau_grid=grid)
    # d eta / d tau = 0  <=>  tau = T2 / 2 for p = 1 and zero overhead
    check(5, abs(tau - T2 / 2) <= step, f"tau*={tau * 1e6:.2f} us vs T2/2={T2 / 2 * 1e6:.2f} us (step {step * 1e6:.3f} us)")


def test_criterion_06_single_shot():
    dB = single_shot_uncertainty(2.4, 232e-6, CoherenceModel(T2=T2, p=1.01))
    ok = abs(dB - 304e-9) <= 1e-9 and abs(dB - 307e-9) <= 29e-9
    check(6, ok, f"delta_B={dB * 1e9:.1f} nT")


def test_criterion_07_master_equation_vs_gillespie():
    d = count_distribution(APPENDIX_B_RATES, 10e-3, "stationary")
    counts, _ = sample_window_counts(APPENDIX_B_RATES, 10e-3, 1_000_000, "stationary", seed=7)
    tv = total_variation(d.probs, np.bincount(counts) / counts.size)
    check(7, tv < 0.005, f"TV={tv:.5f}")


def test_criterion_08_rate_fit_round_trip():
    r = APPENDIX_B_RATES
    trace = simulate_trace(r, 60.0, 10e-3, "stationary", seed=0)
    guess = RateSet(3 * r.gamma_minus, 3 * r.gamma_zero, 3 * r.g_ion, 3 * r.g_rec)
    e = fit_rates(trace, guess).estimate
    rel = {
        "gamma_minus": e.gamma_minus / r.gamma_minus,
        "gamma_zero": e.gamma_zero / r.gamma_zero,
        "g_ion": e.g_ion / r.g_ion,
        "g_rec": e.g_rec / r.g_rec,
    }
    ok = all(abs(v - 1) <= 0.20 for v in rel.values())
    check(8, ok, "fit/truth " + " ".join(f"{k}={v:.3f}" for k, v in rel.items()))


def test_criterion_09_postselection():
    rows = postselection_scan(POSTSELECTION_SCENARIO, range(-1, 13))
    by = {r.threshold: r for r in rows}
    sig = [by[t].sigma_R for t in range(-1, 7)]
    non_increasing = all(b <= a for a, b in zip(sig, sig[1:]))
    ks_up = all(r.ks > by[-1].ks for r in rows if r.threshold >= 0 and r.status == "ok")
    imp = postselection_improvement(rows, POSTSELECTION_SCENARIO.timings, CoherenceModel(T2=T2, p=1.01))
    th_best, _, best = max((x for x in imp if math.isfinite(x[2])), key=lambda x: x[2])
    t_seq = POSTSELECTION_SCENARIO.timings.sequence_time
    exact_t = all(r.t_effective == t_seq / r.acceptance for r in rows if r.acceptance > 0)
    ok = non_increasing and ks_up and 0.02 <= best <= 0.10 and exact_t
    check(
        9,
        ok,
        f"sigma_R(-1..6) non-increasing={non_increasing}, KS {by[-1].ks:.3f}->{by[6].ks:.3f}, "
        f"best improvement {best:.2%} at theta={th_best}, t_eff exact={exact_t}",
    )


def test_criterion_10_first_readout_degradation():
    timings = replace(CALIBRATED_SCENARIO.timings, t_ro_first=10e-3)
    s = sigma_R_scc(first_readout_degradation(timings, APPENDIX_B_RATES, CALIBRATED_PARAMS))
    check(10, 6 <= s <= 10, f"sigma_R with 10 ms first readout = {s:.3f}")


PROPERTIES = [
    charge_props.test_distribution_is_normalized,
    charge_props.test_no_switching_gives_exact_poisson,
    charge_props.test_stationary_mean,
    charge_props.test_trace_is_reproducible,
    disc_props.test_sigma_R_symmetric,
    disc_props.test_sigma_R_at_least_one,
    disc_props.test_sigma_R_increasing_in_eps0,
    disc_props.test_errors_monotone_in_threshold,
    disc_props.test_ks_bounded_and_shift_invariant,
    disc_props.test_optimal_threshold_matches_exhaustive_scan,
    mag_props.test_echo_half_period_antisymmetry,
    mag_props.test_envelope_in_unit_interval,
    mag_props.test_single_shot_identity,
    scc_props.test_scc_shots_reproducible,
    scc_props.test_conversion_probabilities_bounded_and_ordered,
]


def test_criterion_11_property_suite():
    failures = []
    for prop in PROPERTIES:
        assert prop.hypothesis.inner_test  # a hypothesis property
        try:
            prop()
        except Exception as exc:  # report every failing property, not just the first
            failures.append(f"{prop.__name__}: {type(exc).__name__}")
    from hypothesis import settings

    cases = settings.default.max_examples
    detail = f"{len(PROPERTIES) - len(failures)}/{len(PROPERTIES)} properties hold at {cases} cases each"
    if failures:
        detail += "; failing: " + ", ".join(failures)
    check(11, not failures and cases >= 200, detail)
