"""Charge classification from photon counts and spin readout noise.

Spin mapping convention: m_s=0 -> NV0 (ionized) and m_s=1 -> NV- (shelved,
protected). A count strictly above the threshold is classified as NV-.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .charge_dynamics import ChargeLabel, CountDistribution


class ReadoutDivergenceError(ValueError):
    """eps0 + eps1 >= 1: the readout carries no spin information."""


@dataclass(frozen=True)
class ReadoutErrorPair:
    eps0: float
    eps1: float

    def __post_init__(self):
        for name in ("eps0", "eps1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")

    @property
    def sigma_R(self) -> float:
        return sigma_R_scc(self)


@dataclass(frozen=True)
class ConventionalReadoutModel:
    """Fluorescence readout: contrast V, mean photons per window n_bar."""

    V: float
    n_bar: float
    window: float = 250e-9

    def __post_init__(self):
        if not 0.0 < self.V <= 1.0:
            raise ValueError("V must lie in (0, 1]")
        if not self.n_bar > 0:
            raise ValueError("n_bar must be positive")


CONVENTIONAL_READOUT = ConventionalReadoutModel(V=0.25, n_bar=0.022)


@dataclass
class PhotonHistogram:
    counts: dict[int, int]

    def __post_init__(self):
        self.counts = {int(k): int(v) for k, v in self.counts.items() if v}
        if any(k < 0 for k in self.counts) or any(v < 0 for v in self.counts.values()):
            raise ValueError("photon numbers and occurrences must be non-negative")
        if self.total_shots <= 0:
            raise ValueError("histogram is empty")

    @classmethod
    def from_samples(cls, samples: Iterable[int]) -> "PhotonHistogram":
        return cls(dict(Counter(int(n) for n in np.asarray(samples).ravel())))

    @property
    def total_shots(self) -> int:
        return sum(self.counts.values())

    @property
    def n_max(self) -> int:
        return max(self.counts)

    def probs(self, n_max: int | None = None) -> np.ndarray:
        size = (self.n_max if n_max is None else n_max) + 1
        p = np.zeros(size)
        for n, c in self.counts.items():
            if n < size:
                p[n] += c
        return p / self.total_shots

    def mean(self) -> float:
        return sum(n * c for n, c in self.counts.items()) / self.total_shots


@dataclass(frozen=True)
class ComparisonReport:
    ks_statistic: float
    contrast: float
    mean0: float
    mean1: float


Distribution = Union[CountDistribution, PhotonHistogram, Sequence[float], np.ndarray]


def _as_probs(dist: Distribution) -> np.ndarray:
    if isinstance(dist, CountDistribution):
        return dist.probs
    if isinstance(dist, PhotonHistogram):
        return dist.probs()
    if isinstance(dist, Mapping):
        return PhotonHistogram(dict(dist)).probs()
    p = np.asarray(dist, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0):
        raise ValueError("distribution must be a non-empty non-negative vector")
    return p


def _prob_above(p: np.ndarray, threshold: int) -> float:
    # Truncated tail mass (1 - sum) lies above any represented threshold.
    tail = 1.0 - float(p.sum())
    # Below 1e-9 the missing mass is integration residue: adaptive n_max
    # already keeps the genuine truncated tail under 1e-10.
    if tail < 1e-9:
        tail = 0.0
    if threshold < 0:
        return 1.0
    return float(p[threshold + 1 :].sum()) + tail


def classify_charge(n: int, threshold: int) -> ChargeLabel:
    if n < 0:
        raise ValueError("photon count must be non-negative")
    return ChargeLabel.NV_MINUS if n > threshold else ChargeLabel.NV_ZERO


def classify_counts(counts: np.ndarray, threshold: int) -> np.ndarray:
    """Vectorized ``classify_charge``; True marks NV-."""
    return np.asarray(counts) > threshold


def _pair(errors) -> tuple[float, float]:
    if isinstance(errors, ReadoutErrorPair):
        return errors.eps0, errors.eps1
    eps0, eps1 = errors
    return float(eps0), float(eps1)


def sigma_R_scc(errors: ReadoutErrorPair | tuple[float, float]) -> float:
    """Spin readout noise per shot for a charge readout with errors (eps0, eps1).

    Raises
    ------
    ReadoutDivergenceError
        When eps0 + eps1 >= 1.
    """
    eps0, eps1 = _pair(errors)
    denom = 1.0 - (eps0 + eps1)
    if denom <= 0:
        raise ReadoutDivergenceError(
            f"eps0 + eps1 = {eps0 + eps1:.6g} >= 1, readout carries no spin information"
        )
    return math.sqrt(1.0 - (eps0 - eps1) ** 2) / denom


def sigma_R_conventional(model: ConventionalReadoutModel) -> float:
    """Shot-noise-limited readout noise 2 / (V sqrt(n_bar))."""
    return 2.0 / (model.V * math.sqrt(model.n_bar))


def empirical_sigma_R_conventional(counts0: np.ndarray, counts1: np.ndarray) -> float:
    """Readout noise from photon counts of the two spin classes.

    Propagates the count noise of an equal superposition (p0 = 1/2) through
    the mean-count slope: ``sqrt(1 + 2 (var0 + var1) / (mean0 - mean1)**2)``.
    For Poisson counts this equals ``2/(V sqrt(n_bar)) * sqrt(1 - V/2)`` to
    leading order.
    """
    c0 = np.asarray(counts0, dtype=float)
    c1 = np.asarray(counts1, dtype=float)
    diff = c0.mean() - c1.mean()
    if diff == 0:
        return math.inf
    return math.sqrt(1.0 + 2.0 * (c0.var() + c1.var()) / diff**2)


def spin_errors_from_distributions(
    dist0: Distribution, dist1: Distribution, threshold: int
) -> ReadoutErrorPair:
    """(eps0, eps1) = (P(n > threshold | m_s=0), P(n <= threshold | m_s=1))."""
    p0 = _as_probs(dist0)
    p1 = _as_probs(dist1)
    eps0 = min(1.0, max(0.0, _prob_above(p0, threshold)))
    eps1 = min(1.0, max(0.0, 1.0 - _prob_above(p1, threshold)))
    return ReadoutErrorPair(eps0, eps1)


def optimal_threshold(
    dist0: Distribution, dist1: Distribution, thresholds: Iterable[int]
) -> tuple[int, float]:
    """Threshold minimizing sigma_R; ties go to the smaller threshold."""
    thresholds = sorted(int(t) for t in thresholds)
    if not thresholds:
        raise ValueError("threshold range is empty")
    best = None
    for t in thresholds:
        try:
            s = sigma_R_scc(spin_errors_from_distributions(dist0, dist1, t))
        except ReadoutDivergenceError:
            continue
        if best is None or s < best[1]:
            best = (t, s)
    if best is None:
        raise ReadoutDivergenceError("every threshold gives eps0 + eps1 >= 1")
    return best


def ks_distance(p: Distribution, q: Distribution) -> float:
    """Maximum absolute difference between the two count CDFs."""
    a = _as_probs(p)
    b = _as_probs(q)
    size = max(a.size, b.size)
    a = np.pad(a, (0, size - a.size))
    b = np.pad(b, (0, size - b.size))
    return float(min(1.0, np.abs(np.cumsum(a) - np.cumsum(b)).max()))


def compare_histograms(h0: PhotonHistogram, h1: PhotonHistogram) -> ComparisonReport:
    mean0, mean1 = h0.mean(), h1.mean()
    contrast = (mean1 - mean0) / mean1 if mean1 else 0.0
    return ComparisonReport(
        ks_statistic=ks_distance(h0, h1), contrast=contrast, mean0=mean0, mean1=mean1
    )
