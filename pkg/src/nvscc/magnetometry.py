"""Hahn-echo AC magnetometry: signal model, sensitivity and scans.

The echo phase is ``alpha * B * tau`` with ``alpha = 2 mu_B / (pi hbar)``.
Sensitivities are in T/sqrt(Hz), fields in T, times in s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import constants

from .scc_protocol import PostselectionRow, ProtocolTimings

ALPHA = 2.0 * constants.physical_constants["Bohr magneton"][0] / (math.pi * constants.hbar)

T2_ECHO = 461.5e-6
T_REVIVAL = 26.28e-6
# Optimum evolution time quoted for the revival-restricted measurement.
TAU_OPT_REVIVAL = 223.34e-6
P_SCC = 1.01
P_CONVENTIONAL = 1.33


@dataclass(frozen=True)
class CoherenceModel:
    """Stretched-exponential echo decay modulated by 13C revivals.

    ``w_rev`` defaults to ``t_rev / 8``.
    """

    T2: float = T2_ECHO
    p: float = P_SCC
    t_rev: float = T_REVIVAL
    w_rev: float | None = None
    alpha: float = ALPHA

    def __post_init__(self):
        if self.w_rev is None:
            object.__setattr__(self, "w_rev", self.t_rev / 8.0)
        for name in ("T2", "p", "t_rev", "w_rev", "alpha"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")

    def decay(self, tau):
        """exp(-(tau/T2)^p), the envelope without revivals."""
        return np.exp(-((np.asarray(tau, dtype=float) / self.T2) ** self.p))


@dataclass(frozen=True)
class EchoSignalPoint:
    B: float
    tau: float
    p0: float
    sigma_spn: float


@dataclass(frozen=True)
class SensitivityResult:
    eta: float
    tau: float
    sigma_R: float
    t_init: float
    t_ro: float
    p_used: float


def revival_comb(tau, model: CoherenceModel):
    """Sum of Gaussians centred on multiples of ``t_rev``, clamped to 1."""
    tau = np.asarray(tau, dtype=float)
    k_hi = int(np.max(tau) / model.t_rev) + 2 if tau.size else 2
    k = np.arange(k_hi + 1)
    shifted = (tau[..., None] - k * model.t_rev) / model.w_rev
    return np.minimum(np.exp(-(shifted**2)).sum(axis=-1), 1.0)


def coherence_envelope(tau, model: CoherenceModel):
    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr < 0):
        raise ValueError("tau must be >= 0")
    out = model.decay(tau_arr) * revival_comb(tau_arr, model)
    return float(out) if out.ndim == 0 else out


def echo_signal(B: float, tau: float, model: CoherenceModel) -> EchoSignalPoint:
    if not tau > 0:
        raise ValueError("tau must be positive")
    C = coherence_envelope(tau, model)
    p0 = 0.5 * (1.0 + C * math.cos(model.alpha * B * tau))
    p0 = min(1.0, max(0.0, p0))
    return EchoSignalPoint(B=B, tau=tau, p0=p0, sigma_spn=math.sqrt(p0 * (1.0 - p0)))


def fringe_period(tau: float, model: CoherenceModel) -> float:
    """Field period of the echo fringe, 2 pi / (alpha tau)."""
    return 2.0 * math.pi / (model.alpha * tau)


def _eta(sigma_R, tau, cycle_time, model):
    tau = np.asarray(tau, dtype=float)
    # far beyond T2 the decay factor overflows; eta is then inf
    with np.errstate(over="ignore"):
        return (
            sigma_R
            * np.exp((tau / model.T2) ** model.p)
            / (model.alpha * np.sqrt(tau))
            * np.sqrt(cycle_time / tau)
        )


def sensitivity(
    sigma_R: float, tau: float, timings: ProtocolTimings, model: CoherenceModel
) -> SensitivityResult:
    """AC field sensitivity for one readout noise and evolution time.

    ``eta = sigma_R exp((tau/T2)^p) / (alpha sqrt(tau)) *
    sqrt((t_init + tau + t_ro) / tau)``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if sigma_R < 1:
        raise ValueError("sigma_R cannot be below the projection limit of 1")
    eta = float(_eta(sigma_R, tau, timings.t_init + tau + timings.t_ro, model))
    return SensitivityResult(eta, tau, sigma_R, timings.t_init, timings.t_ro, model.p)


def default_tau_grid(model: CoherenceModel, points: int = 4001) -> np.ndarray:
    return np.linspace(model.T2 / 1000, 3 * model.T2, points)


def optimal_tau(
    sigma_R: float,
    timings: ProtocolTimings,
    model: CoherenceModel,
    restrict_to_revivals: bool = False,
    tau_grid: Sequence[float] | None = None,
) -> tuple[float, float]:
    """Grid minimum of the sensitivity over evolution time.

    With ``restrict_to_revivals`` only multiples of ``t_rev`` inside the
    grid span are considered.
    """
    grid = default_tau_grid(model) if tau_grid is None else np.asarray(tau_grid, float)
    if grid.size == 0:
        raise ValueError("empty tau grid")
    if restrict_to_revivals:
        k = np.arange(max(1, math.ceil(grid.min() / model.t_rev)),
                      math.floor(grid.max() / model.t_rev) + 1)
        if k.size == 0:
            raise ValueError("no revival inside the tau grid")
        grid = k * model.t_rev
    eta = _eta(sigma_R, grid, timings.t_init + grid + timings.t_ro, model)
    i = int(np.argmin(eta))
    return float(grid[i]), float(eta[i])


@dataclass
class SensitivityScenario:
    name: str
    sigma_R: float
    timings: ProtocolTimings
    model: CoherenceModel = field(default_factory=CoherenceModel)


@dataclass
class ScanTable:
    """Rows of (tau_s, sigma_R, eta, scenario) plus an optional gain curve."""

    rows: list[tuple[float, float, float, str]]
    gain: list[tuple[float, float]] = field(default_factory=list)

    def eta(self, scenario: str) -> np.ndarray:
        return np.array([r[2] for r in self.rows if r[3] == scenario])

    def taus(self, scenario: str) -> np.ndarray:
        return np.array([r[0] for r in self.rows if r[3] == scenario])


def sensitivity_scan(
    tau_range: Iterable[float],
    scenarios: Sequence[SensitivityScenario],
    reference: str | None = None,
    improved: str | None = None,
) -> ScanTable:
    """Sensitivity versus tau for each scenario.

    When ``reference`` and ``improved`` name two scenarios the table also
    carries the gain ``eta_reference / eta_improved``.
    """
    taus = np.asarray(list(tau_range), dtype=float)
    if taus.size == 0 or not scenarios:
        raise ValueError("need a non-empty tau range and at least one scenario")
    rows = []
    per = {}
    for sc in scenarios:
        eta = _eta(sc.sigma_R, taus, sc.timings.t_init + taus + sc.timings.t_ro, sc.model)
        per[sc.name] = eta
        rows.extend((float(t), float(sc.sigma_R), float(e), sc.name) for t, e in zip(taus, eta))
    table = ScanTable(rows)
    if reference is not None and improved is not None:
        g = per[reference] / per[improved]
        table.gain = [(float(t), float(x)) for t, x in zip(taus, g)]
    return table


def readout_time_scan(
    t_ro_range: Iterable[float],
    sigma_R_of_t_ro: Callable[[float], float],
    tau: float,
    t_init: float,
    model: CoherenceModel,
) -> list[tuple[float, float, float]]:
    """Rows of (t_ro, sigma_R, eta) at fixed evolution time.

    ``sigma_R_of_t_ro`` may return nan for readouts with no spin contrast;
    those rows carry nan sensitivity.
    """
    rows = []
    for t_ro in t_ro_range:
        s = float(sigma_R_of_t_ro(t_ro))
        eta = float(_eta(s, tau, t_init + tau + t_ro, model)) if math.isfinite(s) else math.nan
        rows.append((float(t_ro), s, eta))
    return rows


def single_shot_uncertainty(
    sigma_R: float,
    tau: float,
    model: CoherenceModel,
    coherence: float | None = None,
) -> float:
    """Field uncertainty of one shot at the maximum-slope bias point.

    ``sigma_R / (C alpha tau)`` where ``C`` defaults to the decay factor
    ``exp(-(tau/T2)^p)`` used by the sensitivity formula.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    C = float(model.decay(tau)) if coherence is None else coherence
    if not 0 < C <= 1:
        raise ValueError("coherence must lie in (0, 1]")
    return sigma_R / (C * model.alpha * tau)


def postselected_sensitivity(
    row: PostselectionRow, timings: ProtocolTimings, model: CoherenceModel
) -> float:
    """Sensitivity with the cycle time stretched to ``row.t_effective``."""
    if not math.isfinite(row.sigma_R) or row.acceptance <= 0:
        return math.nan
    return float(_eta(row.sigma_R, timings.tau, row.t_effective, model))


def postselection_improvement(
    rows: Sequence[PostselectionRow], timings: ProtocolTimings, model: CoherenceModel
) -> list[tuple[int, float, float]]:
    """(threshold, eta, 1 - eta / eta_unselected) per row.

    The unselected reference is the row with threshold -1, or the row with
    the highest acceptance if -1 is absent.
    """
    base = next((r for r in rows if r.threshold < 0), None)
    if base is None:
        base = max(rows, key=lambda r: r.acceptance)
    eta0 = postselected_sensitivity(base, timings, model)
    out = []
    for r in rows:
        eta = postselected_sensitivity(r, timings, model)
        out.append((r.threshold, eta, 1.0 - eta / eta0))
    return out
