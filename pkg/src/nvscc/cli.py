"""Command-line front end.

Usage::

    nvscc <command> --config <path> [--seed N] [--out <dir>]

Each command reads one JSON config, writes CSV/JSON tables into the output
directory and prints a one-line JSON summary. Numeric keys carry their
unit as a suffix (``_s``, ``_hz``, ``_t``, ``_w``). Exit status is 0 on
success, 1 for an invalid config and 2 for a runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from . import charge_dynamics as cd
from . import discrimination as disc
from . import estimation as est
from . import magnetometry as mag
from . import scc_protocol as scc


class ConfigError(ValueError):
    """Invalid configuration; exit status 1."""


# --------------------------------------------------------------------------
# Schema
# --------------------------------------------------------------------------

NUM = {"type": "number"}
INT = {"type": "integer"}
PROB = {"type": "number", "minimum": 0, "maximum": 1}


def _obj(props: dict, required: tuple = ()) -> dict:
    return {
        "type": "object",
        "properties": props,
        "required": list(required),
        "additionalProperties": False,
    }


RATES = _obj(
    {
        "gamma_minus_hz": NUM,
        "gamma_zero_hz": NUM,
        "g_ion_hz": NUM,
        "g_rec_hz": NUM,
        "power_tag": {"type": "string"},
    },
    ("gamma_minus_hz", "gamma_zero_hz", "g_ion_hz", "g_rec_hz"),
)
SCC_PARAMS = _obj(
    {
        "p_init_minus": PROB,
        "p_shelf": PROB,
        "p_ion_triplet": PROB,
        "p_ion_singlet": PROB,
        "t_shelf_s": NUM,
        "t_ion_s": NUM,
    },
    ("p_init_minus", "p_shelf", "p_ion_triplet", "p_ion_singlet"),
)
TIMINGS = _obj(
    {
        "t_init_s": NUM,
        "tau_s": NUM,
        "t_ro_s": NUM,
        "t_ro_first_s": NUM,
        "t_overhead_s": NUM,
    },
    ("t_init_s", "tau_s", "t_ro_s"),
)
COHERENCE = _obj(
    {
        "T2_s": NUM,
        "p": NUM,
        "t_rev_s": NUM,
        "w_rev_s": NUM,
        "alpha_rad_per_s_t": NUM,
    }
)
GRID_S = _obj({"min_s": NUM, "max_s": NUM, "points": INT}, ("min_s", "max_s", "points"))
INT_RANGE = {"type": "array", "items": INT, "minItems": 2, "maxItems": 2}
COMMON = {"master_seed": INT, "output_path": {"type": "string"}}
SCC_GROUPS = {
    "scc_params": SCC_PARAMS,
    "timings": TIMINGS,
    "readout_rates": RATES,
    "first_readout_rates": RATES,
    "threshold": INT,
}

SCHEMAS: dict[str, dict] = {
    "simulate-trace": _obj(
        {
            **COMMON,
            "rates": RATES,
            "duration_s": NUM,
            "bin_s": NUM,
            "initial": {"type": "string"},
        },
        ("rates", "duration_s", "bin_s"),
    ),
    "fit-rates": _obj(
        {
            **COMMON,
            "trace_path": {"type": "string"},
            "initial_guess": RATES,
            "likelihood": {"enum": ["exact", "hmm"]},
            "true_rates": RATES,
        },
        ("trace_path", "initial_guess"),
    ),
    "simulate-scc": _obj(
        {
            **COMMON,
            **SCC_GROUPS,
            "shots": INT,
            "threshold_first": INT,
            "try_till_success": {"type": "boolean"},
        },
        ("shots",),
    ),
    "readout-errors": _obj({**COMMON, **SCC_GROUPS, "threshold_range": INT_RANGE}),
    "sensitivity-scan": _obj(
        {
            **COMMON,
            "tau_grid": GRID_S,
            "scenarios": {
                "type": "array",
                "minItems": 1,
                "items": _obj(
                    {
                        "name": {"type": "string"},
                        "sigma_R": NUM,
                        "t_init_s": NUM,
                        "t_ro_s": NUM,
                        "coherence": COHERENCE,
                    },
                    ("name", "sigma_R", "t_init_s", "t_ro_s"),
                ),
            },
            "reference": {"type": "string"},
            "improved": {"type": "string"},
        },
        ("tau_grid", "scenarios"),
    ),
    "readout-time-scan": _obj(
        {
            **COMMON,
            **SCC_GROUPS,
            "t_ro_grid": GRID_S,
            "coherence": COHERENCE,
            "optimize_threshold": {"type": "boolean"},
        },
        ("t_ro_grid",),
    ),
    "postselect-scan": _obj(
        {
            **COMMON,
            **SCC_GROUPS,
            "coherence": COHERENCE,
            "threshold_range": INT_RANGE,
            "shots": INT,
        },
    ),
    "single-shot": _obj(
        {
            **COMMON,
            "sigma_R": NUM,
            "tau_s": NUM,
            "coherence": COHERENCE,
            "coherence_value": NUM,
        },
        ("sigma_R", "tau_s"),
    ),
    "fit-decoherence": _obj(
        {
            **COMMON,
            "samples_path": {"type": "string"},
            "samples": {
                "type": "array",
                "items": _obj({"tau_s": NUM, "coherence": NUM}, ("tau_s", "coherence")),
            },
            "initial_guess": _obj({"T2_s": NUM, "p": NUM}, ("T2_s", "p")),
            "fix_p": NUM,
        },
    ),
}

UNIT_SUFFIXES = ("_s", "_hz", "_t", "_w")


def _validation_message(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        extra = [k for k in err.instance if k not in allowed]
        msgs = []
        for key in extra:
            where = f"{path}.{key}" if path else key
            hint = [key + suf for suf in UNIT_SUFFIXES if key + suf in allowed]
            if hint:
                msgs.append(f"key '{where}' needs a unit suffix (expected '{hint[0]}')")
            else:
                msgs.append(f"unknown key '{where}'")
        return "; ".join(msgs)
    if err.validator == "required":
        return f"{path or 'config'}: {err.message}"
    return f"key '{path}': {err.message}"


def validate(command: str, config: Any) -> None:
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    # Unknown or unsuffixed keys are reported ahead of the missing keys they
    # usually explain.
    errors = sorted(
        validator.iter_errors(config),
        key=lambda e: (e.validator != "additionalProperties", [str(p) for p in e.absolute_path]),
    )
    if errors:
        raise ConfigError(_validation_message(errors[0]))


# --------------------------------------------------------------------------
# Config -> domain objects
# --------------------------------------------------------------------------


def _build(key: str, factory: Callable, *args, **kwargs):
    try:
        return factory(*args, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"key '{key}': {exc}") from exc


def rates_from(cfg: dict | None, key: str, default: cd.RateSet) -> cd.RateSet:
    if cfg is None:
        return default
    return _build(
        key,
        cd.RateSet,
        gamma_minus=cfg["gamma_minus_hz"],
        gamma_zero=cfg["gamma_zero_hz"],
        g_ion=cfg["g_ion_hz"],
        g_rec=cfg["g_rec_hz"],
        power_tag=cfg.get("power_tag"),
    )


def rates_to(rates: cd.RateSet) -> dict:
    out = {
        "gamma_minus_hz": rates.gamma_minus,
        "gamma_zero_hz": rates.gamma_zero,
        "g_ion_hz": rates.g_ion,
        "g_rec_hz": rates.g_rec,
    }
    if rates.power_tag is not None:
        out["power_tag"] = rates.power_tag
    return out


def scenario_from(config: dict) -> scc.SccScenario:
    base = scc.CALIBRATED_SCENARIO
    p = config.get("scc_params")
    params = base.params
    if p is not None:
        params = _build(
            "scc_params",
            scc.SccParams,
            p_init_minus=p["p_init_minus"],
            p_shelf=p["p_shelf"],
            p_ion_triplet=p["p_ion_triplet"],
            p_ion_singlet=p["p_ion_singlet"],
            t_shelf=p.get("t_shelf_s", 50e-9),
            t_ion=p.get("t_ion_s", 10e-9),
        )
    t = config.get("timings")
    timings = base.timings
    if t is not None:
        timings = _build(
            "timings",
            scc.ProtocolTimings,
            t_init=t["t_init_s"],
            tau=t["tau_s"],
            t_ro=t["t_ro_s"],
            t_ro_first=t.get("t_ro_first_s", 0.0),
            t_overhead=t.get("t_overhead_s", 0.0),
        )
    return scc.SccScenario(
        params=params,
        timings=timings,
        readout_rates=rates_from(config.get("readout_rates"), "readout_rates", base.readout_rates),
        first_readout_rates=rates_from(
            config.get("first_readout_rates"), "first_readout_rates", base.first_readout_rates
        ),
        threshold=config.get("threshold", base.threshold),
    )


def coherence_from(cfg: dict | None, key: str = "coherence") -> mag.CoherenceModel:
    cfg = cfg or {}
    return _build(
        key,
        mag.CoherenceModel,
        T2=cfg.get("T2_s", mag.T2_ECHO),
        p=cfg.get("p", mag.P_SCC),
        t_rev=cfg.get("t_rev_s", mag.T_REVIVAL),
        w_rev=cfg.get("w_rev_s"),
        alpha=cfg.get("alpha_rad_per_s_t", mag.ALPHA),
    )


def grid_from(cfg: dict, key: str) -> np.ndarray:
    lo, hi, n = cfg["min_s"], cfg["max_s"], cfg["points"]
    if not (0 < lo <= hi) or n < 1:
        raise ConfigError(f"key '{key}': need 0 < min_s <= max_s and points >= 1")
    return np.linspace(lo, hi, n)


def range_from(cfg: list | None, key: str, default: tuple[int, int]) -> range:
    lo, hi = cfg if cfg is not None else default
    if hi < lo:
        raise ConfigError(f"key '{key}': upper bound below lower bound")
    return range(lo, hi + 1)


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.9g}"
    return str(value)


def _round(obj):
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(f"{v:.9g}") if math.isfinite(v) else None
    return obj


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header: list[str], rows, preamble: str | None = None) -> str:
    buf = io.StringIO()
    if preamble:
        buf.write(preamble + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(_round(obj), indent=2, sort_keys=True) + "\n"


class Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.paths: list[str] = []

    def write(self, name: str, text: str) -> None:
        path = self.root / name
        atomic_write(path, text)
        self.paths.append(str(path))


# --------------------------------------------------------------------------
# Trace file I/O
# --------------------------------------------------------------------------


def trace_csv(trace: cd.BinnedTrace) -> str:
    return csv_text(
        ["bin_index", "count"],
        enumerate(trace.counts.tolist()),
        preamble=f"# bin_duration_s={fmt(trace.bin_duration)}",
    )


def read_trace(path: str | Path) -> cd.BinnedTrace:
    """Read a trace CSV: ``# bin_duration_s=<value>`` then bin_index,count."""
    bin_duration = None
    counts: list[int] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("bin_duration_s="):
                    bin_duration = float(body.split("=", 1)[1])
                continue
            if line.startswith("bin_index"):
                continue
            try:
                _, count = line.split(",")
                counts.append(int(count))
            except ValueError as exc:
                raise ConfigError(f"trace file {path}: malformed row {line!r}") from exc
    if bin_duration is None:
        raise ConfigError(f"trace file {path} lacks a '# bin_duration_s=' header")
    return cd.BinnedTrace(bin_duration=bin_duration, counts=np.array(counts), seed=None)


def histogram_csv(counts: np.ndarray) -> str:
    h = np.bincount(np.asarray(counts, dtype=np.int64))
    return csv_text(["n", "count"], ((n, int(c)) for n, c in enumerate(h)))


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_simulate_trace(config: dict, seed: int, out: Outputs) -> dict:
    rates = rates_from(config["rates"], "rates", cd.APPENDIX_B_RATES)
    initial = config.get("initial", "NV-")
    try:
        cd.initial_p_minus(rates, initial)
    except ValueError as exc:
        raise ConfigError(f"key 'initial': {exc}") from exc
    if not 0 < config["bin_s"] <= config["duration_s"]:
        raise ConfigError("key 'bin_s': need 0 < bin_s <= duration_s")
    trace = cd.simulate_trace(rates, config["duration_s"], config["bin_s"], initial, seed)
    out.write("trace.csv", trace_csv(trace))
    out.write("histogram.csv", histogram_csv(trace.counts))
    return {"bins": int(trace.counts.size), "mean_rate_hz": float(trace.counts.mean() / trace.bin_duration)}


def cmd_fit_rates(config: dict, seed: int, out: Outputs) -> dict:
    path = Path(config["trace_path"])
    if not path.exists():
        raise ConfigError(f"key 'trace_path': file {path} not found")
    trace = read_trace(path)
    guess = rates_from(config["initial_guess"], "initial_guess", cd.APPENDIX_B_RATES)
    fit = est.fit_rates(trace, guess, likelihood=config.get("likelihood", "exact"))
    result = {
        "estimate": rates_to(fit.estimate),
        "log_likelihood": fit.goodness,
        "initial_log_likelihood": fit.initial_goodness,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "bins": int(trace.counts.size),
        "bin_duration_s": trace.bin_duration,
    }
    if "true_rates" in config:
        truth = rates_from(config["true_rates"], "true_rates", cd.APPENDIX_B_RATES)
        result["relative_error"] = {
            k: (getattr(fit.estimate, a) - getattr(truth, a)) / getattr(truth, a)
            for k, a in (
                ("gamma_minus_hz", "gamma_minus"),
                ("gamma_zero_hz", "gamma_zero"),
                ("g_ion_hz", "g_ion"),
                ("g_rec_hz", "g_rec"),
            )
        }
    out.write("fit_rates.json", json_text(result))
    return {"converged": fit.converged}


def _shot_rows(batches):
    idx = 0
    for batch in batches:
        acc = batch.accepted
        for i in range(len(batch)):
            yield (
                idx,
                "ms1" if batch.spin[i] else "ms0",
                None if batch.n_first is None else int(batch.n_first[i]),
                int(batch.n_final[i]),
                "NV-" if batch.n_final[i] > batch.threshold else "NV0",
                None if acc is None else bool(acc[i]),
            )
            idx += 1


def cmd_simulate_scc(config: dict, seed: int, out: Outputs) -> dict:
    scenario = scenario_from(config)
    shots = config["shots"]
    if shots < 1:
        raise ConfigError("key 'shots': must be >= 1")
    th_first = config.get("threshold_first")
    tts = config.get("try_till_success", False)
    if tts and scenario.timings.t_ro_first <= 0:
        raise ConfigError("key 'try_till_success': needs timings.t_ro_first_s > 0")
    batches = [
        scc.simulate_scc_shots(
            spin, shots, scenario, seed=scc.derive_seed(seed, i),
            threshold_first=th_first, try_till_success=tts,
        )
        for i, spin in enumerate((scc.Spin.MS0, scc.Spin.MS1))
    ]
    out.write(
        "shots.csv",
        csv_text(["shot_index", "spin", "n_first", "n_final", "charge", "accepted"], _shot_rows(batches)),
    )
    out.write("histogram_ms0.csv", histogram_csv(batches[0].n_final))
    out.write("histogram_ms1.csv", histogram_csv(batches[1].n_final))
    errs = scc.empirical_errors(*batches)
    h0 = disc.PhotonHistogram.from_samples(batches[0].n_final)
    h1 = disc.PhotonHistogram.from_samples(batches[1].n_final)
    report = disc.compare_histograms(h0, h1)
    try:
        sigma = disc.sigma_R_scc(errs)
    except disc.ReadoutDivergenceError:
        sigma = math.inf
    summary = {
        "shots_per_spin": shots,
        "threshold": scenario.threshold,
        "eps0": errs.eps0,
        "eps1": errs.eps1,
        "sigma_R": sigma,
        "mean_ms0": report.mean0,
        "mean_ms1": report.mean1,
        "contrast": report.contrast,
        "ks_statistic": report.ks_statistic,
    }
    if th_first is not None and scenario.timings.t_ro_first > 0 and not tts:
        acc = np.concatenate([b.accepted for b in batches])
        summary["acceptance"] = float(acc.mean())
    out.write("summary.json", json_text(summary))
    return {"sigma_R": sigma}


def cmd_readout_errors(config: dict, seed: int, out: Outputs) -> dict:
    scenario = scenario_from(config)
    d0, d1 = scc.readout_distributions(scenario)
    rows = []
    for th in range_from(config.get("threshold_range"), "threshold_range", (0, 15)):
        e = disc.spin_errors_from_distributions(d0, d1, th)
        try:
            s = disc.sigma_R_scc(e)
        except disc.ReadoutDivergenceError:
            s = math.nan
        rows.append((th, e.eps0, e.eps1, s))
    out.write("thresholds.csv", csv_text(["threshold", "eps0", "eps1", "sigma_R"], rows))
    e = disc.spin_errors_from_distributions(d0, d1, scenario.threshold)
    result = {
        "threshold": scenario.threshold,
        "eps0": e.eps0,
        "eps1": e.eps1,
        "sigma_R": disc.sigma_R_scc(e),
        "mean_ms0": float(np.arange(d0.size) @ d0),
        "mean_ms1": float(np.arange(d1.size) @ d1),
        "ks_statistic": disc.ks_distance(d0, d1),
    }
    th_opt, s_opt = disc.optimal_threshold(d0, d1, [r[0] for r in rows])
    result["optimal_threshold"] = th_opt
    result["optimal_sigma_R"] = s_opt
    if scenario.timings.t_ro_first > 0:
        ef = scc.first_readout_degradation(
            scenario.timings, scenario.first_readout_rates, scenario.params,
            scenario.readout_rates, scenario.threshold,
        )
        result["with_first_readout"] = {"eps0": ef.eps0, "eps1": ef.eps1, "sigma_R": disc.sigma_R_scc(ef)}
    out.write("readout_errors.json", json_text(result))
    return {"sigma_R": result["sigma_R"]}


def cmd_sensitivity_scan(config: dict, seed: int, out: Outputs) -> dict:
    taus = grid_from(config["tau_grid"], "tau_grid")
    scenarios = []
    for i, s in enumerate(config["scenarios"]):
        key = f"scenarios.{i}"
        if s["sigma_R"] < 1:
            raise ConfigError(f"key '{key}.sigma_R': must be >= 1")
        timings = _build(key, scc.ProtocolTimings, t_init=s["t_init_s"], tau=float(taus[0]), t_ro=s["t_ro_s"])
        scenarios.append(
            mag.SensitivityScenario(s["name"], s["sigma_R"], timings, coherence_from(s.get("coherence"), f"{key}.coherence"))
        )
    names = [s.name for s in scenarios]
    ref, imp = config.get("reference"), config.get("improved")
    for key, name in (("reference", ref), ("improved", imp)):
        if name is not None and name not in names:
            raise ConfigError(f"key '{key}': no scenario named {name!r}")
    table = mag.sensitivity_scan(taus, scenarios, ref, imp)
    out.write("scan.csv", csv_text(["tau_s", "sigma_R", "eta_T_per_sqrtHz", "scenario"], table.rows))
    summary = {"rows": len(table.rows)}
    if table.gain:
        out.write("gain.csv", csv_text(["tau_s", "gain"], table.gain))
        summary["gain_first"] = table.gain[0][1]
    return summary


def cmd_readout_time_scan(config: dict, seed: int, out: Outputs) -> dict:
    scenario = scenario_from(config)
    model = coherence_from(config.get("coherence"))
    grid = grid_from(config["t_ro_grid"], "t_ro_grid")
    optimize_th = config.get("optimize_threshold", True)
    thresholds = {}

    def sigma_of(t_ro):
        sc = scc.SccScenario(
            scenario.params,
            scc.ProtocolTimings(scenario.timings.t_init, scenario.timings.tau, t_ro),
            scenario.readout_rates,
            scenario.first_readout_rates,
            scenario.threshold,
        )
        d0, d1 = scc.readout_distributions(sc)
        try:
            if optimize_th:
                th, s = disc.optimal_threshold(d0, d1, range(0, d0.size))
            else:
                th = scenario.threshold
                s = disc.sigma_R_scc(disc.spin_errors_from_distributions(d0, d1, th))
        except disc.ReadoutDivergenceError:
            th, s = None, math.nan
        thresholds[t_ro] = th
        return s

    rows = mag.readout_time_scan(grid, sigma_of, scenario.timings.tau, scenario.timings.t_init, model)
    out.write(
        "readout_scan.csv",
        csv_text(
            ["t_ro_s", "threshold", "sigma_R", "eta_T_per_sqrtHz"],
            ((t, thresholds[t], s, e) for t, s, e in rows),
        ),
    )
    finite = [r for r in rows if math.isfinite(r[2])]
    best = min(finite, key=lambda r: r[2]) if finite else None
    return {"best_t_ro_s": best[0] if best else None}


def cmd_postselect_scan(config: dict, seed: int, out: Outputs) -> dict:
    scenario = scenario_from(config)
    if scenario.timings.t_ro_first <= 0:
        scenario = scenario.with_first_readout()
    model = coherence_from(config.get("coherence"))
    ths = range_from(config.get("threshold_range"), "threshold_range", (-1, 12))
    n = config.get("shots")
    if n is not None and n < 1:
        raise ConfigError("key 'shots': must be >= 1")
    rows = scc.postselection_scan(scenario, ths, n_shots=n, seed=seed)
    imp = mag.postselection_improvement(rows, scenario.timings, model)
    out.write(
        "postselect.csv",
        csv_text(
            ["threshold", "sigma_R", "acceptance", "t_effective_s", "eta_T_per_sqrtHz",
             "improvement", "eps0", "eps1", "ks", "status"],
            (
                (r.threshold, r.sigma_R, r.acceptance, r.t_effective, eta, gain, r.eps0, r.eps1, r.ks, r.status)
                for r, (_, eta, gain) in zip(rows, imp)
            ),
        ),
    )
    finite = [(t, g) for t, _, g in imp if math.isfinite(g)]
    best = max(finite, key=lambda x: x[1]) if finite else (None, math.nan)
    return {"best_threshold": best[0], "best_improvement": best[1]}


def cmd_single_shot(config: dict, seed: int, out: Outputs) -> dict:
    model = coherence_from(config.get("coherence"))
    C = config.get("coherence_value")
    try:
        dB = mag.single_shot_uncertainty(config["sigma_R"], config["tau_s"], model, C)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    C_used = float(model.decay(config["tau_s"])) if C is None else C
    out.write(
        "single_shot.json",
        json_text({"delta_B_t": dB, "sigma_R": config["sigma_R"], "tau_s": config["tau_s"], "coherence": C_used}),
    )
    return {"delta_B_t": dB}


def read_samples(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.genfromtxt(path, delimiter=",", names=True, comments="#")
    try:
        tau, C = np.atleast_1d(data["tau_s"]), np.atleast_1d(data["coherence"])
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"samples file {path} needs columns tau_s, coherence") from exc
    if np.isnan(tau).any() or np.isnan(C).any():
        raise ConfigError(f"samples file {path} has non-numeric entries")
    return tau, C


def cmd_fit_decoherence(config: dict, seed: int, out: Outputs) -> dict:
    if "samples_path" in config:
        path = Path(config["samples_path"])
        if not path.exists():
            raise ConfigError(f"key 'samples_path': file {path} not found")
        tau, C = read_samples(path)
    elif "samples" in config:
        tau = np.array([s["tau_s"] for s in config["samples"]])
        C = np.array([s["coherence"] for s in config["samples"]])
    else:
        raise ConfigError("config needs 'samples_path' or 'samples'")
    g = config.get("initial_guess", {"T2_s": 400e-6, "p": 1.0})
    try:
        fit = est.fit_decoherence(tau, C, (g["T2_s"], g["p"]), fix_p=config.get("fix_p"))
    except ValueError as exc:
        raise ConfigError(f"key 'samples': {exc}") from exc
    T2, p = fit.estimate
    out.write(
        "fit_decoherence.json",
        json_text({"T2_s": T2, "p": p, "residual_ss": fit.goodness, "converged": fit.converged, "evaluations": fit.iterations}),
    )
    return {"T2_s": T2, "p": p}


COMMANDS: dict[str, Callable[[dict, int, Outputs], dict]] = {
    "simulate-trace": cmd_simulate_trace,
    "fit-rates": cmd_fit_rates,
    "simulate-scc": cmd_simulate_scc,
    "readout-errors": cmd_readout_errors,
    "sensitivity-scan": cmd_sensitivity_scan,
    "readout-time-scan": cmd_readout_time_scan,
    "postselect-scan": cmd_postselect_scan,
    "single-shot": cmd_single_shot,
    "fit-decoherence": cmd_fit_decoherence,
}


def load_config(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    return config


def run(command: str, config: dict, seed: int | None = None, out_dir: str | None = None) -> dict:
    """Validate ``config`` and execute ``command``; returns the summary dict.

    Raises ConfigError for invalid input; any other exception is a runtime
    failure.
    """
    validate(command, config)
    seed = int(config.get("master_seed", 0) if seed is None else seed)
    root = Path(out_dir if out_dir is not None else config.get("output_path", "."))
    out = Outputs(root)
    start = time.perf_counter()
    extra = COMMANDS[command](config, seed, out)
    return {
        "command": command,
        "seed": seed,
        "outputs": out.paths,
        "wall_time_s": round(time.perf_counter() - start, 6),
        **_round(extra),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nvscc", description="NV spin-to-charge readout toolkit")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override master_seed")
    parser.add_argument("--out", default=None, help="output directory (overrides output_path)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        summary = run(args.command, config, args.seed, args.out)
    except ConfigError as exc:
        print(f"nvscc: invalid config: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to status 2
        print(f"nvscc: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
