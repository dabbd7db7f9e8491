"""Monte Carlo and semi-analytic models of the SCC readout sequence.

One shot runs: green charge initialization, an optional first charge
readout, spin preparation, the shelve + ionize spin-to-charge mapping and
a final yellow charge readout. The shelve and ionize pulses are treated
as instantaneous probabilistic branches.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Union

import numpy as np

from ._random import derive_rng, map_chunks
from .charge_dynamics import (
    APPENDIX_B_RATES,
    ChargeLabel,
    RateSet,
    count_distribution,
    evolve_populations,
    propagate_window,
)
from .discrimination import (
    ConventionalReadoutModel,
    ReadoutDivergenceError,
    ReadoutErrorPair,
    ks_distance,
    sigma_R_scc,
    spin_errors_from_distributions,
)


class EmptySelectionError(ValueError):
    """No shot passed the post-selection threshold."""


class Spin(enum.Enum):
    MS0 = "ms0"
    MS1 = "ms1"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, value) -> "Spin":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("=", "")
        if key in ("ms0", "0"):
            return cls.MS0
        if key in ("ms1", "1"):
            return cls.MS1
        raise ValueError(f"unknown spin state {value!r}")


# A prepared spin is either a definite state or the probability of m_s=0.
PreparedSpin = Union[Spin, str, float]


def _p_ms0(spin: PreparedSpin) -> float:
    if isinstance(spin, (float, int)) and not isinstance(spin, bool):
        p = float(spin)
        if not 0.0 <= p <= 1.0:
            raise ValueError("superposition weight p0 must lie in [0, 1]")
        return p
    return 1.0 if Spin.parse(spin) is Spin.MS0 else 0.0


def _check_prob(obj, names):
    for name in names:
        v = getattr(obj, name)
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v!r}")


def _check_nonneg(obj, names):
    for name in names:
        v = getattr(obj, name)
        if not (math.isfinite(v) and v >= 0):
            raise ValueError(f"{name} must be >= 0, got {v!r}")


@dataclass(frozen=True)
class SccParams:
    p_init_minus: float
    p_shelf: float
    p_ion_triplet: float
    p_ion_singlet: float
    t_shelf: float = 50e-9
    t_ion: float = 10e-9

    def __post_init__(self):
        _check_prob(self, ("p_init_minus", "p_shelf", "p_ion_triplet", "p_ion_singlet"))
        _check_nonneg(self, ("t_shelf", "t_ion"))


@dataclass(frozen=True)
class ProtocolTimings:
    t_init: float
    tau: float
    t_ro: float
    t_ro_first: float = 0.0
    t_overhead: float = 0.0

    def __post_init__(self):
        _check_nonneg(self, ("t_init", "tau", "t_ro", "t_ro_first", "t_overhead"))

    @property
    def sequence_time(self) -> float:
        return self.t_init + self.t_ro_first + self.tau + self.t_ro + self.t_overhead


# Yellow readout at low power: NV- gives about 5 detected photons per ms, the
# NV0/NV- brightness ratio and the switching rates are those of APPENDIX_B_RATES.
READOUT_RATES = RateSet(
    gamma_minus=5000.0,
    gamma_zero=5000.0 * 200.0 / 1300.0,
    g_ion=45.0,
    g_rec=6.0,
    power_tag="5 uW",
)

# p_init_minus from the green-initialization statistics, p_ion_singlet = 0
# (the singlet is not excited by the red pulse); p_shelf, p_ion_triplet and
# the final readout window are tuned so that the threshold-5 error pair is
# close to (0.14, 0.69) with class means near 2.4 and 3.8 photons.
CALIBRATED_PARAMS = SccParams(
    p_init_minus=0.70, p_shelf=0.40, p_ion_triplet=0.76, p_ion_singlet=0.0
)
CALIBRATED_TIMINGS = ProtocolTimings(
    t_init=30e-6, tau=232e-6, t_ro=1.65e-3, t_ro_first=0.0, t_overhead=60e-9
)
CALIBRATED_THRESHOLD = 5
FIRST_READOUT_TIME = 10e-3


@dataclass(frozen=True)
class SccScenario:
    """Everything needed to simulate or evaluate one SCC readout setup."""

    params: SccParams = CALIBRATED_PARAMS
    timings: ProtocolTimings = CALIBRATED_TIMINGS
    readout_rates: RateSet = READOUT_RATES
    first_readout_rates: RateSet = APPENDIX_B_RATES
    threshold: int = CALIBRATED_THRESHOLD

    def with_first_readout(self, t_ro_first: float = FIRST_READOUT_TIME) -> "SccScenario":
        return replace(self, timings=replace(self.timings, t_ro_first=t_ro_first))


CALIBRATED_SCENARIO = SccScenario()
POSTSELECTION_SCENARIO = CALIBRATED_SCENARIO.with_first_readout()


# --------------------------------------------------------------------------
# Probability tree
# --------------------------------------------------------------------------


def conversion_probabilities(
    params: SccParams, p_init_minus: float | None = None
) -> tuple[float, float]:
    """P(NV- after conversion | m_s=0) and P(NV- after conversion | m_s=1).

    ``p_init_minus`` overrides the green-initialization probability, e.g.
    after a first readout has changed the charge population.
    """
    p_init = params.p_init_minus if p_init_minus is None else p_init_minus
    survive_triplet = 1.0 - params.p_ion_triplet
    p0 = p_init * survive_triplet
    p1 = p_init * (
        params.p_shelf * (1.0 - params.p_ion_singlet)
        + (1.0 - params.p_shelf) * survive_triplet
    )
    return p0, p1


# --------------------------------------------------------------------------
# Monte Carlo shots
# --------------------------------------------------------------------------


@dataclass
class ShotRecord:
    spin_prepared: Spin | float
    n_first: int | None
    n_final: int
    charge_detected: ChargeLabel
    accepted: bool | None
    spin_measured: Spin | None = None


@dataclass
class ShotBatch:
    """Column-oriented record of many shots.

    ``spin`` holds the projected spin of each shot (0 for m_s=0, 1 for
    m_s=1). ``n_first`` and ``accepted`` are None without a first readout.
    """

    spin_prepared: Spin | float
    spin: np.ndarray
    n_first: np.ndarray | None
    n_final: np.ndarray
    threshold: int
    threshold_first: int | None = None
    attempts: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return int(self.n_final.size)

    @property
    def charge_minus(self) -> np.ndarray:
        return self.n_final > self.threshold

    @property
    def accepted(self) -> np.ndarray | None:
        if self.n_first is None or self.threshold_first is None:
            return None
        return self.n_first > self.threshold_first

    def subset(self, mask: np.ndarray) -> "ShotBatch":
        return replace(
            self,
            spin=self.spin[mask],
            n_first=None if self.n_first is None else self.n_first[mask],
            n_final=self.n_final[mask],
            attempts=None if self.attempts is None else self.attempts[mask],
        )

    def records(self) -> list[ShotRecord]:
        acc = self.accepted
        out = []
        for i in range(len(self)):
            out.append(
                ShotRecord(
                    spin_prepared=self.spin_prepared,
                    n_first=None if self.n_first is None else int(self.n_first[i]),
                    n_final=int(self.n_final[i]),
                    charge_detected=ChargeLabel.NV_MINUS
                    if self.n_final[i] > self.threshold
                    else ChargeLabel.NV_ZERO,
                    accepted=None if acc is None else bool(acc[i]),
                    spin_measured=Spin.MS1 if self.spin[i] else Spin.MS0,
                )
            )
        return out


def _sample_shots(
    size: int,
    rng: np.random.Generator,
    p_ms0: float,
    scenario: SccScenario,
    threshold_first: int | None,
    try_till_success: bool,
    max_attempts: int,
) -> dict[str, np.ndarray]:
    params, timings = scenario.params, scenario.timings
    minus = rng.random(size) < params.p_init_minus
    n_first = np.full(size, -1, dtype=np.int64)
    attempts = np.ones(size, dtype=np.int64)
    if timings.t_ro_first > 0:
        n_first, minus = propagate_window(
            scenario.first_readout_rates, timings.t_ro_first, minus, rng
        )
        if try_till_success:
            cut = -1 if threshold_first is None else threshold_first
            redo = np.flatnonzero(n_first <= cut)
            while redo.size and attempts.max() < max_attempts:
                fresh = rng.random(redo.size) < params.p_init_minus
                n_new, m_new = propagate_window(
                    scenario.first_readout_rates, timings.t_ro_first, fresh, rng
                )
                n_first[redo] = n_new
                minus[redo] = m_new
                attempts[redo] += 1
                redo = redo[n_new <= cut]

    ms1 = rng.random(size) >= p_ms0
    shelved = ms1 & (rng.random(size) < params.p_shelf)
    p_ion = np.where(shelved, params.p_ion_singlet, params.p_ion_triplet)
    minus &= ~(rng.random(size) < p_ion)

    n_final, _ = propagate_window(scenario.readout_rates, timings.t_ro, minus, rng)
    return {
        "spin": ms1.astype(np.int8),
        "n_first": n_first,
        "n_final": n_final,
        "attempts": attempts,
    }


def simulate_scc_shots(
    spin: PreparedSpin,
    n_shots: int,
    scenario: SccScenario = CALIBRATED_SCENARIO,
    seed: int = 0,
    threshold_first: int | None = None,
    try_till_success: bool = False,
    max_attempts: int = 1000,
) -> ShotBatch:
    """Simulate ``n_shots`` independent SCC shots.

    With ``try_till_success`` the green initialization and first readout
    repeat until the first count exceeds ``threshold_first``.
    """
    p_ms0 = _p_ms0(spin)
    if try_till_success and scenario.timings.t_ro_first <= 0:
        raise ValueError("try_till_success needs a first readout (t_ro_first > 0)")

    def sample(size, rng):
        return _sample_shots(
            size, rng, p_ms0, scenario, threshold_first, try_till_success, max_attempts
        )

    out = map_chunks(n_shots, seed, sample)
    has_first = scenario.timings.t_ro_first > 0
    prepared = spin if isinstance(spin, float) else Spin.parse(spin)
    return ShotBatch(
        spin_prepared=prepared,
        spin=out["spin"],
        n_first=out["n_first"] if has_first else None,
        n_final=out["n_final"],
        threshold=scenario.threshold,
        threshold_first=threshold_first if has_first else None,
        attempts=out["attempts"] if try_till_success else None,
    )


def simulate_scc_shot(
    spin: PreparedSpin,
    params: SccParams,
    timings: ProtocolTimings,
    rates: RateSet,
    seed: int,
    first_rates: RateSet = APPENDIX_B_RATES,
    threshold: int = CALIBRATED_THRESHOLD,
    threshold_first: int | None = None,
) -> ShotRecord:
    """Single SCC shot; ``rates`` governs the final charge readout."""
    scenario = SccScenario(params, timings, rates, first_rates, threshold)
    rng = derive_rng(seed, 0)
    out = _sample_shots(1, rng, _p_ms0(spin), scenario, threshold_first, False, 1)
    batch = ShotBatch(
        spin_prepared=spin if isinstance(spin, float) else Spin.parse(spin),
        spin=out["spin"],
        n_first=out["n_first"] if timings.t_ro_first > 0 else None,
        n_final=out["n_final"],
        threshold=threshold,
        threshold_first=threshold_first if timings.t_ro_first > 0 else None,
    )
    return batch.records()[0]


def simulate_conventional_shots(
    spin: PreparedSpin, model: ConventionalReadoutModel, n_shots: int, seed: int = 0
) -> np.ndarray:
    """Photon counts of conventional fluorescence readout.

    m_s=0 emits Poisson(n_bar) and m_s=1 emits Poisson(n_bar (1 - V)).
    """
    p_ms0 = _p_ms0(spin)

    def sample(size, rng):
        ms1 = rng.random(size) >= p_ms0
        mean = np.where(ms1, model.n_bar * (1.0 - model.V), model.n_bar)
        return {"n": rng.poisson(mean)}

    return map_chunks(n_shots, seed, sample)["n"]


def simulate_conventional_shot(
    spin: PreparedSpin, model: ConventionalReadoutModel, seed: int
) -> int:
    return int(simulate_conventional_shots(spin, model, 1, seed)[0])


# --------------------------------------------------------------------------
# Semi-analytic readout statistics
# --------------------------------------------------------------------------


@functools.lru_cache(maxsize=256)
def _charge_conditioned(rates: RateSet, window: float) -> tuple[np.ndarray, np.ndarray]:
    dm = count_distribution(rates, window, ChargeLabel.NV_MINUS)
    dz = count_distribution(rates, window, ChargeLabel.NV_ZERO, n_max=dm.n_max)
    return dm.probs, dz.probs


@functools.lru_cache(maxsize=256)
def _first_readout_joint(rates: RateSet, window: float, p_init: float) -> np.ndarray:
    return count_distribution(rates, window, p_init).joint


def readout_distributions(
    scenario: SccScenario = CALIBRATED_SCENARIO, p_init_minus: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Final-readout count distributions for m_s=0 and m_s=1."""
    p0, p1 = conversion_probabilities(scenario.params, p_init_minus)
    dm, dz = _charge_conditioned(scenario.readout_rates, scenario.timings.t_ro)
    return p0 * dm + (1 - p0) * dz, p1 * dm + (1 - p1) * dz


def semi_analytic_errors(
    scenario: SccScenario = CALIBRATED_SCENARIO,
    threshold: int | None = None,
    p_init_minus: float | None = None,
) -> ReadoutErrorPair:
    """Error pair from the probability tree and the master equation."""
    d0, d1 = readout_distributions(scenario, p_init_minus)
    th = scenario.threshold if threshold is None else threshold
    return spin_errors_from_distributions(d0, d1, th)


def first_readout_degradation(
    timings: ProtocolTimings,
    rates: RateSet,
    params: SccParams,
    readout_rates: RateSet = READOUT_RATES,
    threshold: int = CALIBRATED_THRESHOLD,
) -> ReadoutErrorPair:
    """Error pair when a first charge readout precedes the spin sequence.

    The NV- population left by green initialization relaxes under ``rates``
    for ``t_ro_first`` before the conversion; ``readout_rates`` governs the
    final readout.
    """
    p_init = evolve_populations(rates, timings.t_ro_first, params.p_init_minus)
    scenario = SccScenario(params, timings, readout_rates, rates, threshold)
    return semi_analytic_errors(scenario, p_init_minus=p_init)


# --------------------------------------------------------------------------
# Post-selection
# --------------------------------------------------------------------------


def postselect(records, threshold_first: int):
    """Keep shots whose first-readout count exceeds ``threshold_first``.

    Accepts a ShotBatch or a sequence of ShotRecord and returns the kept
    shots in the same form together with the acceptance probability.
    """
    if isinstance(records, ShotBatch):
        if records.n_first is None:
            raise ValueError("shots carry no first-readout count")
        mask = records.n_first > threshold_first
        kept = int(mask.sum())
        if kept == 0:
            raise EmptySelectionError(f"no shot has n_first > {threshold_first}")
        out = records.subset(mask)
        out.threshold_first = threshold_first
        return out, kept / len(records)

    records = list(records)
    if not records:
        raise EmptySelectionError("no shots to select from")
    if any(r.n_first is None for r in records):
        raise ValueError("every record needs n_first")
    kept = []
    for r in records:
        ok = r.n_first > threshold_first
        if ok:
            kept.append(replace(r, accepted=True))
    if not kept:
        raise EmptySelectionError(f"no shot has n_first > {threshold_first}")
    return kept, len(kept) / len(records)


@dataclass
class PostselectionRow:
    threshold: int
    sigma_R: float
    acceptance: float
    t_effective: float
    eps0: float
    eps1: float
    ks: float
    status: str = "ok"


def _row(theta, d0, d1, acceptance, t_seq, threshold):
    if acceptance <= 0:
        nan = math.nan
        return PostselectionRow(theta, nan, 0.0, math.inf, nan, nan, nan, "empty")
    errs = spin_errors_from_distributions(d0, d1, threshold)
    try:
        s = sigma_R_scc(errs)
        status = "ok"
    except ReadoutDivergenceError:
        s, status = math.nan, "divergent"
    return PostselectionRow(
        threshold=theta,
        sigma_R=s,
        acceptance=acceptance,
        t_effective=t_seq / acceptance,
        eps0=errs.eps0,
        eps1=errs.eps1,
        ks=ks_distance(d0, d1),
        status=status,
    )


def postselection_scan(
    scenario: SccScenario = POSTSELECTION_SCENARIO,
    thresholds: Iterable[int] = range(-1, 13),
    n_shots: int | None = None,
    seed: int = 0,
) -> list[PostselectionRow]:
    """Readout noise, acceptance and effective sequence time per threshold.

    Without ``n_shots`` the scan is exact: the joint (count, final charge)
    distribution of the first readout gives the NV- population of the
    accepted shots. With ``n_shots`` it uses that many Monte Carlo shots
    per spin class.
    """
    if scenario.timings.t_ro_first <= 0:
        raise ValueError("post-selection needs t_ro_first > 0")
    t_seq = scenario.timings.sequence_time
    rows = []
    if n_shots is None:
        joint = _first_readout_joint(
            scenario.first_readout_rates,
            scenario.timings.t_ro_first,
            scenario.params.p_init_minus,
        )
        # Counts beyond the truncation bound pass every threshold.
        tail = max(0.0, 1.0 - float(joint.sum()))
        for theta in thresholds:
            sel = joint[:, max(theta + 1, 0) :]
            kept = float(sel.sum())
            acceptance = 1.0 if theta < 0 else min(1.0, kept + tail)
            if kept <= 0:
                rows.append(_row(theta, None, None, 0.0, t_seq, scenario.threshold))
                continue
            q = min(1.0, float(sel[0].sum()) / kept)
            d0, d1 = readout_distributions(scenario, p_init_minus=q)
            rows.append(_row(theta, d0, d1, acceptance, t_seq, scenario.threshold))
        return rows

    b0 = simulate_scc_shots(Spin.MS0, n_shots, scenario, seed=derive_seed(seed, 0))
    b1 = simulate_scc_shots(Spin.MS1, n_shots, scenario, seed=derive_seed(seed, 1))
    for theta in thresholds:
        m0 = b0.n_first > theta
        m1 = b1.n_first > theta
        acceptance = (m0.sum() + m1.sum()) / (2 * n_shots)
        if not (m0.any() and m1.any()):
            rows.append(_row(theta, None, None, 0.0, t_seq, scenario.threshold))
            continue
        d0 = np.bincount(b0.n_final[m0]) / m0.sum()
        d1 = np.bincount(b1.n_final[m1]) / m1.sum()
        rows.append(_row(theta, d0, d1, float(acceptance), t_seq, scenario.threshold))
    return rows


def derive_seed(seed: int, index: int) -> int:
    return int(derive_rng(seed, index).integers(0, 2**63 - 1))


def empirical_errors(b0: ShotBatch, b1: ShotBatch, threshold: int | None = None) -> ReadoutErrorPair:
    """Error pair measured from simulated m_s=0 and m_s=1 shots."""
    th = b0.threshold if threshold is None else threshold
    eps0 = float(np.mean(b0.n_final > th))
    eps1 = float(np.mean(b1.n_final <= th))
    return ReadoutErrorPair(eps0, eps1)
