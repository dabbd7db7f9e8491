"""Two-state NV charge dynamics with state-dependent photon emission.

The NV center hops between NV- and NV0 with ionization rate ``g_ion``
(NV- -> NV0) and recombination rate ``g_rec`` (NV0 -> NV-). While in a
charge state it emits detected photons as a Poisson process with rate
``gamma_minus`` or ``gamma_zero``. All times are in seconds and all rates
in Hz.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Union

import numba
import numpy as np
from scipy import stats

from ._random import map_chunks

TAIL_TOL = 1e-6
# n_max is chosen from a dominating Poisson bound at this tail, well below
# TAIL_TOL, so that means computed from the truncated vector stay accurate.
_BOUND_TAIL = 1e-10
N_MAX_CAP = 4096
# RK4 step is at most 1 / (STEPS_PER_RATE * fastest decay rate).
STEPS_PER_RATE = 100
_DENSE_LIMIT = 600


class ChargeLabel(enum.Enum):
    NV_MINUS = "NV-"
    NV_ZERO = "NV0"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, value: "ChargeLabel | str") -> "ChargeLabel":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace(" ", "")
        if key in ("nv-", "nvminus", "minus", "-"):
            return cls.NV_MINUS
        if key in ("nv0", "nvzero", "zero", "0"):
            return cls.NV_ZERO
        raise ValueError(f"unknown charge label {value!r}")


class DegenerateChainError(ValueError):
    """Raised when both switching rates vanish and no steady state exists."""


class TruncationError(RuntimeError):
    """Raised when the photon-number truncation loses too much probability."""


@dataclass(frozen=True)
class RateSet:
    """Charge switching and detected-photon rates (Hz)."""

    gamma_minus: float
    gamma_zero: float
    g_ion: float
    g_rec: float
    power_tag: str | None = None

    def __post_init__(self):
        for name in ("gamma_minus", "gamma_zero", "g_ion", "g_rec"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite rate >= 0, got {value!r}")
        if not self.gamma_minus > self.gamma_zero:
            raise ValueError("gamma_minus must exceed gamma_zero")

    @property
    def switching_rate(self) -> float:
        return self.g_ion + self.g_rec

    @property
    def emission(self) -> np.ndarray:
        return np.array([self.gamma_minus, self.gamma_zero])


# Shallow-NV rates under continuous 594 nm illumination at 280 uW.
APPENDIX_B_RATES = RateSet(
    gamma_minus=1300.0, gamma_zero=200.0, g_ion=45.0, g_rec=6.0, power_tag="280 uW"
)

Initial = Union[ChargeLabel, str, float]


def stationary_distribution(rates: RateSet) -> tuple[float, float]:
    """Steady-state occupation ``(pi_minus, pi_zero)`` of the two-state chain."""
    total = rates.switching_rate
    if total <= 0:
        raise DegenerateChainError("g_ion + g_rec must be positive for a steady state")
    pi_minus = rates.g_rec / total
    return pi_minus, 1.0 - pi_minus


def evolve_populations(rates: RateSet, t: float, p_minus_initial: float) -> float:
    """NV- population after time ``t`` starting from ``p_minus_initial``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if not 0.0 <= p_minus_initial <= 1.0:
        raise ValueError("p_minus_initial must be a probability")
    total = rates.switching_rate
    if total == 0:
        return float(p_minus_initial)
    pi_minus = rates.g_rec / total
    return pi_minus + (p_minus_initial - pi_minus) * math.exp(-total * t)


def initial_p_minus(rates: RateSet, initial: Initial) -> float:
    """Resolve an initial-state argument to a probability of starting in NV-.

    ``initial`` may be a ChargeLabel (or its string form), ``"stationary"``
    or a probability.
    """
    if isinstance(initial, str) and initial.strip().lower() == "stationary":
        return stationary_distribution(rates)[0]
    if isinstance(initial, (float, int)) and not isinstance(initial, bool):
        p = float(initial)
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"initial probability out of range: {p}")
        return p
    label = ChargeLabel.parse(initial)
    return 1.0 if label is ChargeLabel.NV_MINUS else 0.0


# --------------------------------------------------------------------------
# Trajectory sampling
# --------------------------------------------------------------------------


@dataclass
class BinnedTrace:
    bin_duration: float
    counts: np.ndarray
    seed: int | None
    rates_used: RateSet | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not self.bin_duration > 0:
            raise ValueError("bin_duration must be positive")
        if self.counts.ndim != 1 or self.counts.size < 1:
            raise ValueError("counts must be a non-empty 1-d sequence")
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def duration(self) -> float:
        return self.bin_duration * self.counts.size


def _jump_times(rates, duration, minus, rng):
    """Switching times of one Gillespie path on [0, duration]."""
    times = []
    t = 0.0
    while True:
        rate = rates.g_ion if minus else rates.g_rec
        if rate <= 0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= duration:
            break
        times.append(t)
        minus = not minus
    return np.asarray(times)


def simulate_trace(
    rates: RateSet,
    duration: float,
    bin: float,
    initial: Initial = ChargeLabel.NV_MINUS,
    seed: int = 0,
) -> BinnedTrace:
    """Sample a binned fluorescence trace with charge-state jumps.

    Charge jumps follow the Gillespie algorithm. Conditional on the charge
    path, the count in each bin is Poisson with mean equal to the emission
    rate integrated over the bin.
    """
    if not bin > 0:
        raise ValueError("bin must be positive")
    if duration < bin:
        raise ValueError("duration must be at least one bin")
    rng = np.random.default_rng(seed)
    n_bins = int(math.floor(duration / bin + 1e-9))
    total = n_bins * bin
    minus0 = rng.random() < initial_p_minus(rates, initial)
    jumps = _jump_times(rates, total, minus0, rng)

    # Cumulative time spent in NV- at each jump and at the end.
    knots = np.concatenate([[0.0], jumps, [total]])
    seg_minus = (np.arange(knots.size - 1) % 2 == 0) == minus0
    cum_minus = np.concatenate([[0.0], np.cumsum(np.diff(knots) * seg_minus)])
    edges = np.arange(n_bins + 1) * bin
    t_minus = np.diff(np.interp(edges, knots, cum_minus))
    t_minus = np.clip(t_minus, 0.0, bin)
    mean = rates.gamma_minus * t_minus + rates.gamma_zero * (bin - t_minus)
    counts = rng.poisson(mean)
    return BinnedTrace(bin_duration=bin, counts=counts, seed=seed, rates_used=rates)


def propagate_window(
    rates: RateSet, window: float, minus: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Run each shot through one illumination window.

    ``minus`` is the boolean NV- indicator at the start of the window.
    Returns the photon counts and the NV- indicator at the end.
    """
    minus = np.array(minus, dtype=bool, copy=True)
    size = minus.size
    t_minus = np.zeros(size)
    t_left = np.full(size, float(window))
    active = np.arange(size)
    while active.size:
        m = minus[active]
        rate = np.where(m, rates.g_ion, rates.g_rec)
        with np.errstate(divide="ignore"):
            dwell = rng.exponential(1.0, active.size) / rate
        left = t_left[active]
        dt = np.minimum(dwell, left)
        t_minus[active] += dt * m
        jumped = dwell < left
        t_left[active] = left - dt
        minus[active[jumped]] = ~m[jumped]
        active = active[jumped]
    mean = rates.gamma_minus * t_minus + rates.gamma_zero * (window - t_minus)
    return rng.poisson(mean), minus


def sample_window_counts(
    rates: RateSet,
    window: float,
    n_shots: int,
    initial: Initial = "stationary",
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo photon counts for ``n_shots`` independent windows.

    Returns ``(counts, final_is_minus)``. Shots are drawn in seeded chunks,
    so the output is reproducible and independent of thread count.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    p_minus = initial_p_minus(rates, initial)

    def sample(size, rng):
        counts, minus = propagate_window(rates, window, rng.random(size) < p_minus, rng)
        return {"counts": counts, "minus": minus}

    out = map_chunks(n_shots, seed, sample)
    return out["counts"], out["minus"]


# --------------------------------------------------------------------------
# Photon-number-resolved master equation
# --------------------------------------------------------------------------


@dataclass
class CountDistribution:
    """Distribution of detected photons in a window of length ``window``.

    ``joint[0]`` and ``joint[1]`` split ``probs`` by final charge state
    (NV- and NV0) when available.
    """

    probs: np.ndarray
    n_max: int
    window: float
    joint: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.size != self.n_max + 1:
            raise ValueError("probs must have n_max + 1 entries")

    @property
    def tail_mass(self) -> float:
        return max(0.0, 1.0 - float(self.probs.sum()))

    def mean(self) -> float:
        return float(np.arange(self.n_max + 1) @ self.probs)

    def prob_above(self, threshold: int) -> float:
        """P(n > threshold), counting truncated tail mass as above."""
        if threshold < 0:
            return float(self.probs.sum()) + self.tail_mass
        if threshold >= self.n_max:
            return self.tail_mass
        return float(self.probs[threshold + 1 :].sum()) + self.tail_mass


def _adaptive_n_max(rates: RateSet, window: float) -> int:
    # Photon counts are stochastically dominated by Poisson(gamma_max * window).
    mu = max(rates.gamma_minus, rates.gamma_zero) * window
    if mu == 0:
        return 0
    n = int(stats.poisson.isf(_BOUND_TAIL, mu))
    while n < N_MAX_CAP and stats.poisson.sf(n, mu) >= _BOUND_TAIL:
        n += 1
    # One more bin bounds the first moment of the dropped tail as well:
    # E[N; N > n] = mu * P(N >= n) for a Poisson count.
    return min(max(n + 1, 0), N_MAX_CAP)


def photon_generator(
    gamma_minus: float, gamma_zero: float, g_ion: float, g_rec: float, size: int
) -> np.ndarray:
    """Dense generator on the state vector [P_-(0..N-1), P_0(0..N-1)].

    Probability leaving photon number N-1 is dropped (truncation).
    """
    n = size
    A = np.zeros((2 * n, 2 * n))
    blocks = ((0, gamma_minus, g_ion), (1, gamma_zero, g_rec))
    idx = np.arange(n)
    for s, gamma, out in blocks:
        o = s * n
        A[o + idx, o + idx] = -(gamma + out)
        A[o + idx[1:], o + idx[:-1]] = gamma
        other = (1 - s) * n
        A[other + idx, o + idx] += out
    return A


def _rk4_solve(rates: RateSet, window: float, p0: np.ndarray, steps: int) -> np.ndarray:
    size = p0.shape[1]
    h = window / steps
    if 2 * size <= _DENSE_LIMIT:
        hA = h * photon_generator(
            rates.gamma_minus, rates.gamma_zero, rates.g_ion, rates.g_rec, size
        )
        # One classical RK4 step of a linear autonomous system.
        step = np.eye(2 * size)
        term = np.eye(2 * size)
        for k in range(1, 5):
            term = term @ hA / k
            step = step + term
        P = np.linalg.matrix_power(step, steps) @ p0.reshape(-1)
        return P.reshape(2, size)

    return _rk4_banded(
        p0.copy(), h, steps, rates.gamma_minus, rates.gamma_zero, rates.g_ion, rates.g_rec
    )


@numba.njit(cache=True)
def _rk4_banded(P, h, steps, gm, gz, gi, gr):
    # RK4 on the (2, N) array exploiting the bidiagonal photon ladder.
    size = P.shape[1]
    k = np.empty((4, 2, size))
    tmp = np.empty((2, size))
    gam = (gm, gz)
    loss = (gm + gi, gz + gr)
    coef = (0.5 * h, 0.5 * h, h, 0.0)
    for _ in range(steps):
        src = P
        for stage in range(4):
            d = k[stage]
            for s in range(2):
                g = gam[s]
                lo = loss[s]
                inflow = gr if s == 0 else gi
                for n in range(size):
                    v = -lo * src[s, n] + inflow * src[1 - s, n]
                    if n > 0:
                        v += g * src[s, n - 1]
                    d[s, n] = v
            if stage < 3:
                c = coef[stage]
                for s in range(2):
                    for n in range(size):
                        tmp[s, n] = P[s, n] + c * d[s, n]
                src = tmp
        for s in range(2):
            for n in range(size):
                P[s, n] += (h / 6.0) * (k[0, s, n] + 2.0 * k[1, s, n] + 2.0 * k[2, s, n] + k[3, s, n])
    return P


def count_distribution(
    rates: RateSet,
    window: float,
    initial: Initial = "stationary",
    n_max: int | None = None,
) -> CountDistribution:
    """Photon-count distribution in a window from the master equation.

    Integrates ``dP_s(n)/dt = -(gamma_s + out_s) P_s(n) + gamma_s P_s(n-1)
    + in_s P_s'(n)`` with fixed-step RK4 from the given initial charge
    state. Probability that would move past ``n_max`` is dropped and
    reported as ``tail_mass``.

    Raises
    ------
    TruncationError
        If the dropped tail exceeds 1e-6.
    """
    if not window > 0:
        raise ValueError("window must be positive")
    if n_max is None:
        n_max = _adaptive_n_max(rates, window)
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    p_minus = initial_p_minus(rates, initial)

    size = n_max + 1
    p0 = np.zeros((2, size))
    p0[0, 0] = p_minus
    p0[1, 0] = 1.0 - p_minus
    fastest = max(rates.gamma_minus + rates.g_ion, rates.gamma_zero + rates.g_rec)
    steps = max(1, math.ceil(window * fastest * STEPS_PER_RATE))
    joint = _rk4_solve(rates, window, p0, steps)
    joint = np.clip(joint, 0.0, None)
    probs = joint.sum(axis=0)
    tail = 1.0 - probs.sum()
    if tail >= TAIL_TOL:
        raise TruncationError(
            f"tail mass {tail:.3g} beyond n_max={n_max} exceeds {TAIL_TOL:g}"
        )
    return CountDistribution(probs=probs, n_max=n_max, window=window, joint=joint)


def stationary_mean_rate(rates: RateSet) -> float:
    pi_minus, pi_zero = stationary_distribution(rates)
    return pi_minus * rates.gamma_minus + pi_zero * rates.gamma_zero
