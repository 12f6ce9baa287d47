"""Subcommand bodies behind the command line.

Every command returns a report dict and writes it (JSON) next to or at its
output path. Reports have three sections: ``inputs`` (config digest, dataset
digests, options), ``results`` (named entries, every number carrying its
standard error and sample count) and ``provenance`` (tool version, seed,
timestamp, and a determinism hash that leaves the timestamp out).
"""
from __future__ import annotations

import dataclasses
import datetime as _dt
import hashlib
import json
import math
from importlib import metadata as _metadata
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import io as tio
from .calibration import estimate_eta1, fit_nrf_linear
from .conditioning import (ConditioningSpec, conditional_fano, sweep_center, sweep_q,
                           theoretical_conditional_fano)
from .errors import ConfigParseError, MissingCalibrationError, ParameterError, ValidityError
from .model import Dataset, Kind, pump_power_to_n_mode, simulate_run
from .stats import (DEFAULT_BOOTSTRAP, Estimate, balancing_k, bootstrap_replicates,
                    check_noise_validity, fano_from_moments, shot_noise_variance, wmean, wvar)

DEFAULT_Q = 20.0
DEFAULT_Q_VALUES = (1, 2, 4, 8, 12, 16, 20, 30, 40)
DEFAULT_DELTAS = (-0.5, -0.25, 0.0, 0.25, 0.5)

PUMP_COLUMNS = ["n_m", "pump_mW", "nrf", "nrf_se", "f1", "f1_se", "f2", "f2_se",
                "f1_cond", "f1_cond_se", "f1_cond_theory", "f1_cond_theory_se", "k", "n_pulses"]
COND_COLUMNS = ["fano", "fano_se", "mean", "mean_se", "success_rate", "n_selected",
                "window_lo", "window_hi", "error"]


def tool_version() -> str:
    try:
        return _metadata.version("twinbeam")
    except _metadata.PackageNotFoundError:
        return "unknown"


# -- reports ----------------------------------------------------------------

def _clean(obj):
    # JSON has no NaN; keep the report strict and map it to null
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.floating):
        return _clean(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def determinism_hash(report: dict) -> str:
    """sha256 over the report with the timestamp and the hash itself removed."""
    r = json.loads(json.dumps(report))
    prov = r.get("provenance", {})
    prov.pop("timestamp", None)
    prov.pop("determinism_hash", None)
    return hashlib.sha256(tio.canonical_json(r).encode()).hexdigest()


def make_report(command, inputs, results, seed, timestamp=None) -> dict:
    report = _clean({
        "inputs": dict(inputs, command=command),
        "results": results,
        "provenance": {"tool": "twinbeam", "version": tool_version(), "seed": seed},
    })
    report["provenance"]["timestamp"] = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat()
    report["provenance"]["determinism_hash"] = determinism_hash(report)
    return report


def report_bytes(report: dict) -> bytes:
    return (json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n").encode("utf-8")


def write_report(path, report: dict):
    tio.atomic_write(path, report_bytes(report))


def load_report(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigParseError(f"{path}: not a JSON report: {exc}") from exc


def sibling_report_path(out) -> Path:
    out = Path(out)
    if out.suffix == ".json":
        return out.with_name(out.stem + ".report.json")
    return out.with_suffix(".json")


def _est(value, se, n):
    return Estimate(float(value), float(se), int(n)).to_dict()


# -- simulate ---------------------------------------------------------------

def simulate_from_config(cfg: tio.ExperimentConfig, kind=None, source=None, seed=None) -> Dataset:
    kind = Kind(kind or cfg.kind)
    return simulate_run(kind, cfg.detectors, cfg.n_pulses, cfg.seed if seed is None else seed,
                        source=None if kind is Kind.DARK else (source or cfg.source))


def cmd_simulate(cfg: tio.ExperimentConfig, out_path, kind=None) -> dict:
    """Simulate one run from ``cfg`` and persist it; the report goes alongside."""
    ds = simulate_from_config(cfg, kind)
    tio.save_dataset(out_path, ds)
    results = {
        "mean_s1": _est(np.mean(ds.s1), np.std(ds.s1, ddof=1) / math.sqrt(len(ds)), len(ds)),
        "mean_s2": _est(np.mean(ds.s2), np.std(ds.s2, ddof=1) / math.sqrt(len(ds)), len(ds)),
        "clamp_events": ds.clamp_events,
    }
    inputs = {"config_digest": cfg.digest(), "kind": ds.kind.value,
              "dataset_digest": tio.dataset_digest(ds)}
    report = make_report("simulate", inputs, results, cfg.seed)
    write_report(sibling_report_path(out_path), report)
    return report


# -- analyze ----------------------------------------------------------------

def _by_kind(datasets: Sequence[Dataset]) -> Dict[Kind, Dataset]:
    found = {}
    for ds in datasets:
        if ds.kind in found:
            raise ParameterError("datasets", f"more than one {ds.kind.value} run supplied")
        found[ds.kind] = ds
    return found


def _noisy(ds: Dataset) -> bool:
    return any(d.noise_var > 0 or d.noise_mean != 0 for d in ds.detectors)


def _need_dark(ds: Dataset, dark: Optional[Dataset], hint: str):
    if dark is None and _noisy(ds):
        raise MissingCalibrationError(
            "dark",
            f"the {ds.kind.value} run was taken with electronic noise, so a dark run is needed; "
            f"generate one with `twinbeam simulate --kind dark {hint}`")


def _fano_w(run, dark, ch):
    x, w = run.channel(ch), getattr(run, "weights", None)
    if dark is None:
        return fano_from_moments(wvar(x, w), wmean(x, w))
    d, wd = dark.channel(ch), getattr(dark, "weights", None)
    return fano_from_moments(wvar(x, w), wmean(x, w), wvar(d, wd), wmean(d, wd))


def _twin_values(t, c, d, k):
    # (nrf_raw, nrf_est, f1, f2, f1_cond_theory) for data or one resample
    wt, wc = getattr(t, "weights", None), getattr(c, "weights", None)
    var_t = wvar(t.s1 - k * t.s2, wt)
    var_c = wvar(c.s1 - k * c.s2, wc)
    noise = 0.0
    if d is not None:
        wd = getattr(d, "weights", None)
        noise = wvar(d.s1, wd) + k * k * wvar(d.s2, wd)
    raw = var_t / var_c if var_c > 0 else math.nan
    den = var_c - noise
    est = (var_t - noise) / den if den > 0 else math.nan
    f1, f2 = _fano_w(t, d, 1), _fano_w(t, d, 2)
    th = theoretical_conditional_fano(f1, f2, est) if f2 > 0 and math.isfinite(est) else math.nan
    return raw, est, f1, f2, th


_TWIN_NAMES = ("nrf_raw", "nrf_est", "fano1_est", "fano2_est", "fano1_conditional_theory")


def analyze_twin(twin: Dataset, coh: Dataset, dark: Optional[Dataset], B=DEFAULT_BOOTSTRAP,
                 seed=0, conditioning: Sequence[ConditioningSpec] = ()) -> dict:
    """Unconditional and heralded statistics of a twin-beam run.

    All unconditional entries share one joint bootstrap over the twin,
    coherent and dark runs, so their errors are mutually consistent.
    """
    _need_dark(twin, dark, "--config <same config>")
    _need_dark(coh, dark, "--config <same config>")
    k = balancing_k(twin)
    if dark is not None:
        check_noise_validity(coh, dark, dark)
    values = _twin_values(twin, coh, dark, k)
    if math.isnan(values[1]):
        raise ValidityError("noise-corrected shot-noise variance is not positive")
    stat = lambda t, c, d=None: _twin_values(t, c, d, k)
    reps = bootstrap_replicates(stat, [twin, coh, dark], B=B, seed=seed)
    ses = np.nanstd(reps, axis=0, ddof=1)
    n = len(twin)
    results = {name: _est(v, se, n) for name, v, se in zip(_TWIN_NAMES, values, ses)}
    results["k"] = _est(k, 0.0, n)
    nrf, nrf_se = values[1], ses[1]
    if nrf > 0:
        results["squeezing_db"] = _est(-10 * math.log10(nrf), 10 / math.log(10) * nrf_se / nrf, n)
    for i, spec in enumerate(conditioning):
        r = conditional_fano(twin, spec, dark, control=2, B=B, seed=seed)
        results[f"conditional[{i}]"] = dict(r.to_dict(), spec=spec.to_dict())
    return results


def _coh_values(c, d=None):
    w = getattr(c, "weights", None)
    m1, m2 = wmean(c.s1, w), wmean(c.s2, w)
    k = m1 / m2
    var = wvar(c.s1 - k * c.s2, w)
    noise, dm1, dm2 = 0.0, 0.0, 0.0
    if d is not None:
        wd = getattr(d, "weights", None)
        noise = wvar(d.s1, wd) + k * k * wvar(d.s2, wd)
        dm1, dm2 = wmean(d.s1, wd), wmean(d.s2, wd)
    analytic = shot_noise_variance(m1 - dm1, m2 - dm2, k)
    return ((var - noise) / analytic, _fano_w(c, d, 1), _fano_w(c, d, 2),
            var - noise, analytic)


_COH_NAMES = ("nrf", "fano1", "fano2", "shot_noise_empirical", "shot_noise_analytic")


def analyze_coherent(coh: Dataset, dark: Optional[Dataset], B=DEFAULT_BOOTSTRAP, seed=0) -> dict:
    """Shot-noise calibration check: a coherent run should sit at NRF = F = 1."""
    _need_dark(coh, dark, "--config <same config>")
    if coh.s2.mean() <= 0:
        raise ValidityError("coherent run has non-positive channel-2 mean")
    values = _coh_values(coh, dark)
    reps = bootstrap_replicates(_coh_values, [coh, dark], B=B, seed=seed)
    ses = np.nanstd(reps, axis=0, ddof=1)
    return {name: _est(v, se, len(coh)) for name, v, se in zip(_COH_NAMES, values, ses)}


def cmd_analyze(paths: Sequence, out_path, B=DEFAULT_BOOTSTRAP, seed=0,
                cfg: Optional[tio.ExperimentConfig] = None) -> dict:
    """Analyze persisted runs. A twin-beam run needs a coherent run, and a dark
    run whenever the detectors are noisy; a coherent run alone is checked
    against the shot-noise level."""
    datasets = [tio.load_dataset(p) for p in paths]
    return analyze_datasets(datasets, out_path, B=B, seed=seed, cfg=cfg)


def analyze_datasets(datasets, out_path=None, B=DEFAULT_BOOTSTRAP, seed=0, cfg=None) -> dict:
    runs = _by_kind(datasets)
    twin, coh, dark = runs.get(Kind.TWIN_BEAM), runs.get(Kind.COHERENT), runs.get(Kind.DARK)
    if twin is not None:
        if coh is None:
            raise MissingCalibrationError(
                "coherent", "a twin-beam analysis needs a shot-noise calibration run; generate "
                            "one with `twinbeam simulate --kind coherent --config <same config>`")
        specs = cfg.conditioning if cfg is not None else ()
        results = analyze_twin(twin, coh, dark, B=B, seed=seed, conditioning=specs)
    elif coh is not None:
        results = analyze_coherent(coh, dark, B=B, seed=seed)
    else:
        raise MissingCalibrationError(
            "twin_beam", "nothing to analyze: supply a twin_beam or coherent run "
                         "(`twinbeam simulate --config <config>`)")
    inputs = {"datasets": [{"kind": d.kind.value, "digest": tio.dataset_digest(d)}
                           for d in datasets],
              "bootstrap": int(B),
              "config_digest": None if cfg is None else cfg.digest()}
    report = make_report("analyze", inputs, results, seed)
    if out_path is not None:
        write_report(out_path, report)
    return report


# -- condition --------------------------------------------------------------

def _split_twin_dark(datasets):
    runs = _by_kind(datasets)
    twin = runs.get(Kind.TWIN_BEAM) or runs.get(Kind.COHERENT)
    if twin is None:
        raise MissingCalibrationError("twin_beam", "conditioning needs a twin_beam (or coherent) run")
    dark = runs.get(Kind.DARK)
    _need_dark(twin, dark, "--config <same config>")
    return twin, dark


def cmd_condition(paths: Sequence, specs: Sequence[ConditioningSpec], out_path,
                  B=DEFAULT_BOOTSTRAP, seed=0) -> dict:
    """Heralded Fano factor of channel 1 for each conditioning spec."""
    if not specs:
        raise ParameterError("conditioning", "at least one conditioning spec is required")
    datasets = [tio.load_dataset(p) for p in paths]
    twin, dark = _split_twin_dark(datasets)
    results = {}
    for i, spec in enumerate(specs):
        r = conditional_fano(twin, spec, dark, control=2, B=B, seed=seed)
        results[f"conditional[{i}]"] = dict(r.to_dict(), spec=spec.to_dict())
    inputs = {"datasets": [{"kind": d.kind.value, "digest": tio.dataset_digest(d)} for d in datasets],
              "bootstrap": int(B)}
    report = make_report("condition", inputs, results, seed)
    write_report(out_path, report)
    return report


# -- sweeps -----------------------------------------------------------------

def _point_seed(seed, i):
    return int(np.random.SeedSequence(seed, spawn_key=(i,)).generate_state(1, np.uint32)[0])


def pump_sweep_rows(cfg: tio.ExperimentConfig, B=DEFAULT_BOOTSTRAP, spec=None):
    """One row of :data:`PUMP_COLUMNS` per pump power, plus per-point results."""
    if cfg.pump_sweep is None:
        raise ParameterError("pump_sweep", "the config has no pump_sweep section")
    spec = spec or (cfg.conditioning[0] if cfg.conditioning else ConditioningSpec(DEFAULT_Q))
    rows, points = [], []
    for i, power in enumerate(cfg.pump_sweep.powers_mW):
        n_m = pump_power_to_n_mode(power, cfg.pump_sweep.gain_coeff)
        src = dataclasses.replace(cfg.source, n_mean_per_mode=n_m)
        s = _point_seed(cfg.seed, i)
        twin = simulate_from_config(cfg, Kind.TWIN_BEAM, src, s)
        coh = simulate_from_config(cfg, Kind.COHERENT, src, s)
        dark = simulate_from_config(cfg, Kind.DARK, src, s) if _noisy(twin) else None
        res = analyze_twin(twin, coh, dark, B=B, seed=s, conditioning=(spec,))
        cond = res["conditional[0]"]["fano_target"]
        rows.append([n_m, power, res["nrf_est"]["value"], res["nrf_est"]["std_error"],
                     res["fano1_est"]["value"], res["fano1_est"]["std_error"],
                     res["fano2_est"]["value"], res["fano2_est"]["std_error"],
                     cond["value"], cond["std_error"],
                     res["fano1_conditional_theory"]["value"],
                     res["fano1_conditional_theory"]["std_error"],
                     res["k"]["value"], len(twin)])
        points.append(dict(res, n_m=n_m, pump_mW=power, seed=s))
    return rows, points


def _cond_rows(points):
    rows, entries = [], []
    for p in points:
        if p.ok:
            r = p.result
            rows.append([float(p.param), r.fano_target.value, r.fano_target.std_error,
                         r.mean_target.value, r.mean_target.std_error, r.success_rate,
                         r.n_selected, r.window[0], r.window[1], ""])
            entries.append(dict(r.to_dict(), param=float(p.param)))
        else:
            rows.append([float(p.param)] + [None] * 8 + [p.error.replace(",", ";")])
            entries.append({"param": float(p.param), "error": p.error})
    return rows, entries


def cmd_sweep(cfg: tio.ExperimentConfig, out_path, mode="pump", B=DEFAULT_BOOTSTRAP,
              q_values=None, deltas=None, q=None) -> dict:
    """Pump, condition-strength or window-center sweep.

    ``out_path`` receives the CSV table; the report goes alongside. The pump
    table is directly usable as ``fit`` input.
    """
    inputs = {"config_digest": cfg.digest(), "mode": mode, "bootstrap": int(B)}
    if mode == "pump":
        rows, points = pump_sweep_rows(cfg, B=B)
        columns, results = PUMP_COLUMNS, {"points": points}
    elif mode in ("q", "center"):
        twin = simulate_from_config(cfg, Kind.TWIN_BEAM)
        dark = simulate_from_config(cfg, Kind.DARK) if _noisy(twin) else None
        if mode == "q":
            q_values = tuple(q_values or DEFAULT_Q_VALUES)
            pts = sweep_q(twin, q_values, dark, B=B, seed=cfg.seed)
            columns = ["q"] + COND_COLUMNS
            inputs["q_values"] = list(q_values)
        else:
            deltas = tuple(DEFAULT_DELTAS if deltas is None else deltas)
            q = q or (cfg.conditioning[0].q if cfg.conditioning else DEFAULT_Q)
            pts = sweep_center(twin, deltas, q, dark, B=B, seed=cfg.seed)
            columns = ["delta_sd"] + COND_COLUMNS
            inputs.update(deltas_sd=list(deltas), q=q)
        rows, entries = _cond_rows(pts)
        results = {"points": entries}
    else:
        raise ParameterError("mode", f"must be pump, q or center, got {mode!r}")
    tio.write_table(out_path, columns, rows)
    report = make_report("sweep", inputs, results, cfg.seed)
    write_report(sibling_report_path(out_path), report)
    return report


# -- fit --------------------------------------------------------------------

def cmd_fit(points_path, out_path, k_ratio=None, seed=0) -> dict:
    """Straight-line fit of a pump-sweep table and the efficiency read-out."""
    table = tio.read_table(points_path)
    for col in ("n_m", "nrf", "nrf_se"):
        if col not in table:
            raise ParameterError(col, f"points table {points_path} lacks the {col!r} column")
    n = table.get("n_pulses")
    points = []
    for i in range(len(table["n_m"])):
        if not (math.isfinite(table["nrf"][i]) and math.isfinite(table["nrf_se"][i])):
            continue
        ni = int(n[i]) if n is not None else 0
        points.append((table["n_m"][i], Estimate(table["nrf"][i], table["nrf_se"][i], ni)))
    fit = fit_nrf_linear(points)
    if k_ratio is None:
        if "k" not in table:
            raise ParameterError("k_ratio", "table has no k column; pass --k-ratio")
        k_ratio = float(np.nanmean(table["k"]))
    eta = estimate_eta1(fit.alpha, k_ratio)
    results = {"fit": fit.to_dict(), "alpha": fit.alpha.to_dict(), "beta": fit.beta.to_dict(),
               "eta1": eta.to_dict()}
    with open(points_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    report = make_report("fit", {"points_digest": digest, "n_points": len(points),
                                 "k_ratio": k_ratio}, results, seed)
    write_report(out_path, report)
    return report


# -- report -----------------------------------------------------------------

def flatten_estimates(prefix, obj, rows):
    if isinstance(obj, dict):
        if {"value", "std_error", "n_samples"} <= obj.keys():
            rows.append((prefix, obj["value"], obj["std_error"], obj["n_samples"]))
            return
        for key in sorted(obj):
            flatten_estimates(f"{prefix}.{key}" if prefix else key, obj[key], rows)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            flatten_estimates(f"{prefix}[{i}]", v, rows)


def render_report(report: dict, fmt="json") -> str:
    """The report as pretty JSON, or as a ``name,value,std_error,n_samples`` CSV."""
    if fmt == "json":
        return report_bytes(report).decode("utf-8")
    if fmt == "csv":
        rows: List[tuple] = []
        flatten_estimates("", report.get("results", {}), rows)
        lines = ["name,value,std_error,n_samples"]
        for name, v, se, n in rows:
            cells = ["" if x is None else ("%.17g" % x if isinstance(x, float) else str(x))
                     for x in (v, se, n)]
            lines.append(",".join([name] + cells))
        return "\n".join(lines) + "\n"
    raise ParameterError("format", f"must be json or csv, got {fmt!r}")


def cmd_report(report_path, fmt="json", out_path=None) -> str:
    text = render_report(load_report(report_path), fmt)
    if out_path is not None:
        tio.atomic_write(out_path, text.encode("utf-8"))
    return text
