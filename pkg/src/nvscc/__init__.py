"""Spin-to-charge conversion readout of NV centres: simulation and analysis."""

from .charge_dynamics import APPENDIX_B_RATES, BinnedTrace, ChargeLabel, RateSet
from .discrimination import ReadoutErrorPair, sigma_R_conventional, sigma_R_scc
from .magnetometry import CoherenceModel, sensitivity
from .scc_protocol import CALIBRATED_SCENARIO, SccParams, SccScenario, ProtocolTimings

__version__ = "0.1.0"
