"""Declarative, file-based workflow from measurement records to a physics report.

Each stage reads the files written by earlier stages (or explicit input
paths) and writes plain-text outputs under ``output_dir/<stage>/``, so any
downstream stage can be rerun on its own.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import time
import traceback
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import io as qio
from .averaging import fixed_window_average, gaussian_average
from .emulator import (
    ExperimentPlan,
    NoiseSchedule,
    RtnProcessSpec,
    emulate_experiment,
    reconstruct_timestamps,
    rtn_hierarchy_detuning,
)
from .hdfa.hierarchy import HierarchyConfig, run_hierarchy
from .hdfa.rates import switching_rates
from .noisefit import FitConfig, fit_series
from .physics import (
    TransmonSpec,
    charge_dispersion_analytic,
    charge_dispersion_numerical,
    charge_jump_statistics,
    extract_charge_offset,
    tls_parameter_ranges,
)
from .spectral import fit_psd_model, welch_psd

STAGES = ("emulate", "ingest", "average", "fit", "segment", "rates", "psd", "physics", "report")
CACHE_ENV = "QFLUCT_CACHE_DIR"


class ConfigError(ValueError):
    """The configuration is invalid."""


class NumericalError(RuntimeError):
    """A numerical stage failed."""


def default_cache_dir() -> Path:
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "qfluct"


def _defaults() -> dict:
    return {
        "stages": list(STAGES),
        "output_dir": None,
        "seed": 0,
        "emulate": {
            "qubits": [0],
            "plan": {
                "idle_times": {"start": 0.0, "stop": 68.3e-6, "num": 33},
                "bases": ["X", "Y", "Z"],
                "n_repetitions": 20000,
                "n_scripts": 1,
                "t_other": 12.3e-6,
                "script_start_times": None,
                "script_durations": None,
            },
            "noise": {
                "delta_f": -13e3,
                "gamma_1": 8e3,
                "gamma_phi": 8e3,
                "rtn": [
                    {"mode": "probability", "switch_probability": 0.05, "amplitude": 30e3},
                ],
            },
        },
        "ingest": {"records": None, "meta": None},
        "average": {"kind": "gaussian", "width": 2.0},
        "fit": {**FitConfig().to_dict(), "seed": None, "bootstrap": True},
        "hdfa": {
            "lam": "auto",
            "l_min": "auto",
            "l_min_candidates": [2, 3, 4, 5, 6, 8, 10, 12, 16, 20],
            "n_lambda_candidates": 40,
            "min_transitions": 10,
            "rate_windows": [200.0, 2000.0],
            "max_levels": 6,
            "spread": True,
            "trace": None,
        },
        "psd": {"parameters": ["gamma_1", "delta_f_hz"], "segment_length": "auto"},
        "physics": {
            "qubits": {"0": {"f0": 5.030e9, "alpha": -0.336e9}},
            "f_delta_max": None,
            "x_range": [1e-9, 2e-9],
            "temperature_range": [0.01, 0.1],
        },
    }


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(base[k], dict) and k not in ("qubits",) and isinstance(v, dict) and base[k]:
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class PipelineConfig:
    """Complete workflow configuration.

    ``data`` mirrors the JSON document; :meth:`defaults` lists every key.
    """

    data: dict = field(default_factory=_defaults)

    @classmethod
    def defaults(cls) -> "PipelineConfig":
        return cls(_defaults())

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        cfg = cls(_merge(_defaults(), d))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(qio._jsonable(self.data), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        """Hash of the settings that affect numerical results.

        The output location and the stage selection are left out, so a run
        split over several invocations reports one hash.
        """
        d = {k: v for k, v in self.data.items() if k not in ("output_dir", "stages")}
        return hashlib.sha256(json.dumps(qio._jsonable(d), sort_keys=True).encode()).hexdigest()

    def set(self, dotted: str, value) -> None:
        """Override one key, e.g. ``set("average.width", 3)``."""
        keys = dotted.split(".")
        d = self.data
        ref = _defaults()
        for k in keys[:-1]:
            if k not in d or not isinstance(d[k], dict):
                raise ConfigError(f"unknown config key {dotted!r}")
            d = d[k]
            ref = ref.get(k, {}) if isinstance(ref, dict) else {}
        if keys[-1] not in d and keys[-1] not in ref and not (keys[0] == "physics" and keys[1] == "qubits"):
            raise ConfigError(f"unknown config key {dotted!r}")
        d[keys[-1]] = value

    @property
    def output_dir(self) -> Path:
        od = self.data.get("output_dir")
        return Path(od) if od else default_cache_dir() / self.digest()[:12]

    def validate(self) -> None:
        d = self.data
        bad = [s for s in d["stages"] if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages {bad}; choose from {list(STAGES)}")
        if d["average"]["kind"] not in ("gaussian", "fixed"):
            raise ConfigError("average.kind must be 'gaussian' or 'fixed'")
        w = d["average"]["width"]
        widths = w.values() if isinstance(w, dict) else [w]
        if any(not isinstance(x, (int, float)) or x < 0 for x in widths):
            raise ConfigError("average.width must be a non-negative number or a per-qubit mapping")
        try:
            self.fit_config()
            self.hierarchy_config()
            if "emulate" in d["stages"]:
                self.plan()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        sl = d["psd"]["segment_length"]
        if sl != "auto" and (not isinstance(sl, int) or sl < 8):
            raise ConfigError("psd.segment_length must be 'auto' or an integer >= 8")

    # Typed views ----------------------------------------------------------

    def plan(self) -> ExperimentPlan:
        p = dict(self.data["emulate"]["plan"])
        tau = p["idle_times"]
        if isinstance(tau, dict):
            tau = np.linspace(tau["start"], tau["stop"], int(tau["num"]))
        p["idle_times"] = np.asarray(tau, dtype=float)
        return ExperimentPlan.from_dict(p)

    def fit_config(self) -> FitConfig:
        f = {k: v for k, v in self.data["fit"].items() if k != "bootstrap"}
        if f.get("seed") is None:
            f["seed"] = int(self.data["seed"])
        for k in ("delta_f_bounds", "gamma_1_bounds", "gamma_phi_bounds"):
            if k in f:
                f[k] = tuple(f[k])
        return FitConfig(**f)

    def hierarchy_config(self) -> HierarchyConfig:
        h = self.data["hdfa"]

        def per_level(v):
            if v == "auto" or v is None:
                return None
            return list(v) if isinstance(v, (list, tuple)) else [v]

        return HierarchyConfig(
            lam=per_level(h["lam"]),
            l_min=per_level(h["l_min"]),
            l_min_candidates=tuple(h["l_min_candidates"]),
            n_lambda_candidates=int(h["n_lambda_candidates"]),
            min_transitions=int(h["min_transitions"]),
            rate_windows=tuple(h["rate_windows"]),
            max_levels=int(h["max_levels"]),
            spread_factors=HierarchyConfig().spread_factors if h["spread"] else (1.0,),
        )

    def width(self, qubit: int) -> float:
        w = self.data["average"]["width"]
        if isinstance(w, dict):
            return float(w.get(str(qubit), w.get("default", 2.0)))
        return float(w)


@dataclass
class StageRecord:
    name: str
    status: str = "pending"
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_s: float = 0.0
    warnings: list = field(default_factory=list)
    error: str | None = None


@dataclass
class RunManifest:
    """Provenance of one pipeline run."""

    config_hash: str
    version: str
    stages: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    error: Exception | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return all(s.status in ("ok", "skipped") for s in self.stages)

    def output_digests(self) -> dict:
        return {k: v for s in self.stages for k, v in s.outputs.items()}

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "version": self.version,
            "warnings": self.warnings,
            "stages": [s.__dict__ for s in self.stages],
        }


class _Context:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.root = config.output_dir
        self.record: StageRecord | None = None

    def path(self, stage: str, name: str) -> Path:
        p = self.root / stage / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def need(self, path: Path, producer: str) -> Path:
        if not Path(path).exists():
            raise qio.DataError(f"{path} not found; run the '{producer}' stage first or pass an explicit path")
        self.record.inputs[str(path)] = qio.file_digest(path)
        return Path(path)

    def wrote(self, *paths) -> None:
        for p in paths:
            p = Path(p)
            self.record.outputs[str(p)] = qio.file_digest(p)
            for side in (qio.schema_path(p), qio.meta_path(p)):
                if side.exists():
                    self.record.outputs[str(side)] = qio.file_digest(side)

    def qubits(self) -> list[int]:
        f = self.root / "ingest" / "summary.json"
        if f.exists():
            return [int(q) for q in qio.read_json(f)["qubits"]]
        return [int(q) for q in self.config.data["emulate"]["qubits"]]


# Stages -------------------------------------------------------------------

def _emulate(ctx: _Context) -> None:
    cfg = ctx.config
    plan = cfg.plan()
    noise = cfg.data["emulate"]["noise"]
    seed = int(cfg.data["seed"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        times, _ = reconstruct_timestamps(plan)
    n = plan.total_repetitions
    tables = {}
    truth_frames = []
    for q in cfg.data["emulate"]["qubits"]:
        q = int(q)
        specs = []
        for lvl, r in enumerate(noise.get("rtn", [])):
            r = dict(r)
            r.setdefault("seed", int(np.random.SeedSequence([seed, q, lvl]).generate_state(1)[0]))
            specs.append(RtnProcessSpec(**r))
        det, states = rtn_hierarchy_detuning(specs, n, times, centre=float(noise["delta_f"]))
        sched = NoiseSchedule(det, np.full(n, float(noise["gamma_1"])), np.full(n, float(noise["gamma_phi"])))
        q_seed = int(np.random.SeedSequence([seed, q]).generate_state(1)[0])
        tables[q] = emulate_experiment(plan, sched, q_seed)
        tf = pd.DataFrame({"qubit": q, "t_s": times, "delta_f_hz": det,
                           "gamma_1": sched.gamma_1, "gamma_phi": sched.gamma_phi})
        for lvl, s in enumerate(states):
            tf[f"s_level{lvl + 1}"] = s
        truth_frames.append(tf)
    rec = ctx.path("emulate", "records.csv")
    qio.write_records(tables, rec)
    tru = ctx.path("emulate", "truth.csv")
    qio.write_table(pd.concat(truth_frames, ignore_index=True), tru,
                    {"t_s": "s", "delta_f_hz": "Hz", "gamma_1": "1/s", "gamma_phi": "1/s"},
                    "emulator ground truth")
    ctx.wrote(rec, tru)


def _records_path(ctx: _Context) -> Path:
    explicit = ctx.config.data["ingest"]["records"]
    return Path(explicit) if explicit else ctx.root / "emulate" / "records.csv"


def _load_records(ctx: _Context) -> dict:
    path = ctx.need(_records_path(ctx), "emulate")
    meta = ctx.config.data["ingest"]["meta"]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        tables = qio.read_records(path, meta)
    ctx.record.warnings.extend(str(w.message) for w in caught)
    return tables


def _ingest(ctx: _Context) -> None:
    tables = _load_records(ctx)
    summary = {
        "qubits": sorted(tables),
        "n_repetitions": {q: int(t.outcomes.shape[0]) for q, t in tables.items()},
        "timestamp_fallback": any(t.timestamp_fallback for t in tables.values()),
        "plan": next(iter(tables.values())).plan.to_dict(),
    }
    out = qio.write_json(summary, ctx.path("ingest", "summary.json"))
    ctx.wrote(out)


def _average(ctx: _Context) -> None:
    tables = _load_records(ctx)
    kind = ctx.config.data["average"]["kind"]
    for q, tab in sorted(tables.items()):
        w = ctx.config.width(q)
        series = gaussian_average(tab, w) if kind == "gaussian" else fixed_window_average(tab, int(w))
        ctx.wrote(qio.write_probability_series(series, ctx.path("average", f"q{q}.csv")))


def _fit(ctx: _Context) -> None:
    fc = ctx.config.fit_config()
    boot = bool(ctx.config.data["fit"].get("bootstrap", True))
    for q in ctx.qubits():
        series = qio.read_probability_series(ctx.need(ctx.root / "average" / f"q{q}.csv", "average"))
        trace = fit_series(series, fc, bootstrap=boot)
        if not np.all(np.isfinite(trace.delta_f)):
            raise NumericalError(f"qubit {q}: non-finite fitted detuning")
        ctx.wrote(qio.write_noise_trace(trace, ctx.path("fit", f"q{q}_trace.csv")))


def _trace_path(ctx: _Context, q: int) -> Path:
    explicit = ctx.config.data["hdfa"]["trace"]
    if explicit:
        return Path(str(explicit).format(qubit=q))
    return ctx.root / "fit" / f"q{q}_trace.csv"


def _segment(ctx: _Context) -> None:
    hc = ctx.config.hierarchy_config()
    for q in ctx.qubits():
        trace = qio.read_noise_trace(ctx.need(_trace_path(ctx, q), "fit"))
        sigma = np.where(trace.sigma_delta_f > 0, trace.sigma_delta_f, np.nan)
        if np.all(np.isnan(sigma)):
            sigma = np.ones_like(trace.delta_f)
            ctx.record.warnings.append(f"qubit {q}: no detuning uncertainties; using 1 Hz")
        else:
            sigma = np.where(np.isnan(sigma), np.nanmedian(sigma), sigma)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            levels = run_hierarchy(trace.delta_f, sigma, trace.times, hc)
        ctx.record.warnings.extend(f"qubit {q}: {w.message}" for w in caught)
        summary = {"qubit": q, "levels": []}
        for lv in levels:
            stem = f"q{q}_level{lv.level}"
            seg = qio.write_table(lv.segments_frame(), ctx.path("segment", f"{stem}_segments.csv"),
                                  {"start_t": "s", "end_t": "s", "f_c": "Hz", "f_Delta": "Hz",
                                   "sigma_f_c": "Hz", "sigma_f_Delta": "Hz"}, "segments")
            st = qio.write_table(lv.states_frame(), ctx.path("segment", f"{stem}_states.csv"),
                                 {"t_s": "s", "f_c": "Hz", "f_Delta": "Hz", "sigma_f_c": "Hz",
                                  "sigma_f_Delta": "Hz"}, "per-step state and level parameters")
            ctx.wrote(seg, st)
            entry = {
                "level": lv.level,
                "active": lv.active,
                "lambda_ll": lv.lam,
                "l_min": lv.l_min,
                "n_segments": len(lv.segments),
                "n_transitions": lv.n_transitions,
                "zero_magnitude_fraction": float(lv.zero_magnitude.mean()),
                "f_c_mean": float(np.mean(lv.f_c)),
                "f_delta_mean": _masked_mean(lv.f_delta, ~lv.zero_magnitude),
                "median_step_s": float(np.median(np.diff(lv.times))) if lv.times.size > 1 else 0.0,
            }
            if lv.lambda_selection is not None:
                entry["lambda_grid"] = lv.lambda_selection.grid
                entry["n_change_points"] = lv.lambda_selection.n_change_points
                entry["lambda_plateau"] = lv.lambda_selection.plateau
            if lv.l_min_selection is not None:
                entry["l_min_candidates"] = lv.l_min_selection.candidates
                entry["l_min_rmse"] = lv.l_min_selection.rmse
            summary["levels"].append(entry)
        ctx.wrote(qio.write_json(summary, ctx.path("segment", f"q{q}_hierarchy.json")))


def _masked_mean(v, keep) -> float | None:
    keep = np.asarray(keep, dtype=bool)
    return float(np.mean(v[keep])) if keep.any() else None


def _rate_dict(r) -> dict:
    return {
        "n_transitions": r.n_transitions, "dwell_time_s": r.dwell_time,
        "raw": r.raw, "raw_ci": list(r.raw_ci), "corrected": r.corrected,
        "corrected_ci": list(r.corrected_ci), "uncorrectable": r.uncorrectable,
    }


def _rates(ctx: _Context) -> None:
    hc = ctx.config.hierarchy_config()
    for q in ctx.qubits():
        summ = qio.read_json(ctx.need(ctx.root / "segment" / f"q{q}_hierarchy.json", "segment"))
        out = {"qubit": q, "levels": []}
        for entry in summ["levels"]:
            n = entry["level"]
            st = qio.read_table(ctx.need(ctx.root / "segment" / f"q{q}_level{n}_states.csv", "segment"))
            sg = qio.read_table(ctx.need(ctx.root / "segment" / f"q{q}_level{n}_segments.csv", "segment"))
            t = st["t_s"].to_numpy(float)
            keep = ~(st["f_Delta"].to_numpy(float) < 2.0 * st["sigma_f_Delta"].to_numpy(float))
            tau_min = entry["median_step_s"] * entry["l_min"]
            r = switching_rates(st["s"].to_numpy(), t, tau_min, window=hc.window(n - 1), mask=keep,
                                breaks=sg["start_index"].to_numpy()[1:])
            p = qio.write_table(r.to_frame(), ctx.path("rates", f"q{q}_level{n}_rates.csv"),
                                {"t_s": "s", "raw_nu01": "1/s", "raw_nu10": "1/s", "nu01": "1/s",
                                 "nu10": "1/s", "nu01_lo": "1/s", "nu01_hi": "1/s",
                                 "nu10_lo": "1/s", "nu10_hi": "1/s"}, "running switching rates")
            ctx.wrote(p)
            out["levels"].append({"level": n, "active": entry["active"], "tau_min_s": tau_min,
                                  "nu01": _rate_dict(r.nu01), "nu10": _rate_dict(r.nu10)})
        ctx.wrote(qio.write_json(out, ctx.path("rates", f"q{q}_rates.json")))


def _psd(ctx: _Context) -> None:
    sl = ctx.config.data["psd"]["segment_length"]
    for q in ctx.qubits():
        df = qio.read_table(ctx.need(_trace_path(ctx, q), "fit"))
        t = df["t_s"].to_numpy(float)
        width = ctx.config.width(q) if ctx.config.data["average"]["kind"] == "gaussian" else 0.0
        models = {}
        for param in ctx.config.data["psd"]["parameters"]:
            x = df[param].to_numpy(float)
            nseg = sl if sl != "auto" else int(min(2**16, 2 ** np.floor(np.log2(max(8, x.size // 8)))))
            est = welch_psd(x, times=t, segment_length=nseg)
            p = qio.write_table(est.to_frame(), ctx.path("psd", f"q{q}_{param}_psd.csv"),
                                {"f_hz": "Hz"}, f"Welch PSD of {param}")
            ctx.wrote(p)
            entry = {"segment_length": est.segment_length, "window": est.window,
                     "n_segments": est.n_segments, "parseval_ratio": est.parseval_ratio}
            try:
                entry["model"] = fit_psd_model(est, width).to_dict()
            except ValueError as exc:
                entry["model"] = None
                ctx.record.warnings.append(f"qubit {q} {param}: {exc}")
            models[param] = entry
        ctx.wrote(qio.write_json(models, ctx.path("psd", f"q{q}_psd_model.json")))


def _physics(ctx: _Context) -> None:
    ph = ctx.config.data["physics"]
    report = {"transmon": {}, "tls": {}, "inputs": {}}
    for key, spec in sorted(ph["qubits"].items()):
        q = int(key)
        tr = TransmonSpec.calibrated(float(spec["f0"]), float(spec["alpha"]))
        d_num = charge_dispersion_numerical(tr.E_C, tr.E_J)
        report["transmon"][key] = {
            "E_C_hz": tr.E_C, "E_J_hz": tr.E_J, "xi": tr.xi,
            "delta_cp_numerical_hz": d_num,
            "delta_cp_analytic_hz": charge_dispersion_analytic(tr.E_C, tr.xi),
            "n01": tr.matrix_element(),
        }
        report["inputs"][key] = {"f0_hz": tr.f0, "alpha_hz": tr.alpha, "source": "config"}
        summ_path = ctx.root / "segment" / f"q{q}_hierarchy.json"
        rates_path = ctx.root / "rates" / f"q{q}_rates.json"
        if not (summ_path.exists() and rates_path.exists()):
            report["tls"][key] = {"available": False, "reason": "no hierarchy for this qubit"}
            continue
        summ = qio.read_json(ctx.need(summ_path, "segment"))
        rates = qio.read_json(ctx.need(rates_path, "rates"))
        active = [e for e in summ["levels"] if e["active"]]
        fdmax = ph["f_delta_max"] or {}
        f_delta_max = float(fdmax.get(key, d_num)) if isinstance(fdmax, dict) else float(fdmax)
        entry = {"available": False, "f_delta_max_hz": f_delta_max}
        st1 = qio.read_table(ctx.need(ctx.root / "segment" / f"q{q}_level1_states.csv", "segment"))
        ng, clipped = extract_charge_offset(st1["f_Delta"].to_numpy(float), f_delta_max)
        entry["n_g_clipped_fraction"] = float(clipped.mean())
        if len(active) < 2:
            entry["reason"] = "fewer than two active levels"
            report["tls"][key] = entry
            continue
        st2 = qio.read_table(ctx.need(ctx.root / "segment" / f"q{q}_level2_states.csv", "segment"))
        s2 = st2["s"].to_numpy()
        jumps = charge_jump_statistics(ng, np.flatnonzero(np.diff(s2)) + 1)
        lvl2 = next(e for e in rates["levels"] if e["level"] == 2)
        nu10, nu01 = lvl2["nu10"]["corrected"], lvl2["nu01"]["corrected"]
        entry.update({"delta_ng": jumps.to_dict(), "f_delta_2_hz": active[1]["f_delta_mean"],
                      "nu10": nu10, "nu01": nu01})
        if jumps.estimate > 0 and entry["f_delta_2_hz"] and nu10 > 0 and nu01 > 0:
            entry["ranges"] = tls_parameter_ranges(jumps.estimate, entry["f_delta_2_hz"], nu10, nu01, tr,
                                                   ph["x_range"], ph["temperature_range"])
            entry["available"] = True
        else:
            entry["reason"] = "degenerate inputs for the TLS inversion"
        report["tls"][key] = entry
    ctx.wrote(qio.write_json(report, ctx.path("physics", "physics_report.json")))


def _report(ctx: _Context) -> None:
    root = ctx.root
    rep = {"version": __version__, "config_hash": ctx.config.digest(), "qubits": {}}
    for q in ctx.qubits():
        entry = {}
        hp = root / "segment" / f"q{q}_hierarchy.json"
        if hp.exists():
            summ = qio.read_json(ctx.need(hp, "segment"))
            entry["hierarchy"] = [
                {k: e[k] for k in ("level", "active", "lambda_ll", "l_min", "n_segments",
                                   "n_transitions", "f_c_mean", "f_delta_mean")}
                for e in summ["levels"]
            ]
            entry["n_active_levels"] = sum(e["active"] for e in summ["levels"])
            for e in summ["levels"]:
                n = e["level"]
                sg = qio.read_table(ctx.need(root / "segment" / f"q{q}_level{n}_segments.csv", "segment"))
                rows = []
                for col in ("f_c", "f_Delta"):
                    v = sg[col].to_numpy(float)
                    if v.size:
                        counts, edges = np.histogram(v, bins="auto")
                        rows.append(pd.DataFrame({"quantity": col, "bin_lo": edges[:-1],
                                                  "bin_hi": edges[1:], "count": counts}))
                if rows:
                    p = qio.write_table(pd.concat(rows, ignore_index=True),
                                        ctx.path("report", f"q{q}_level{n}_histograms.csv"),
                                        {"bin_lo": "Hz", "bin_hi": "Hz"}, "segment value histograms")
                    ctx.wrote(p)
        rp = root / "rates" / f"q{q}_rates.json"
        if rp.exists():
            entry["rates"] = qio.read_json(ctx.need(rp, "rates"))["levels"]
        pp = root / "psd" / f"q{q}_psd_model.json"
        if pp.exists():
            entry["psd"] = qio.read_json(ctx.need(pp, "psd"))
        tp = _trace_path(ctx, q)
        if tp.exists():
            tr = qio.read_noise_trace(ctx.need(tp, "fit"))
            entry["trace_summary"] = {
                "n": len(tr),
                "delta_f_median_hz": float(np.median(tr.delta_f)),
                "sigma_delta_f_median_hz": float(np.median(tr.sigma_delta_f)),
                "gamma_1_median": float(np.median(tr.gamma_1)),
                "gamma_phi_median": float(np.median(tr.gamma_phi)),
                "flagged_fraction": float(np.mean(tr.flags != 0)),
            }
        rep["qubits"][str(q)] = entry
    php = root / "physics" / "physics_report.json"
    if php.exists():
        rep["physics"] = qio.read_json(ctx.need(php, "physics"))
    ctx.wrote(qio.write_json(rep, ctx.path("report", "report.json")))


_STAGE_FUNCS = {
    "emulate": _emulate, "ingest": _ingest, "average": _average, "fit": _fit,
    "segment": _segment, "rates": _rates, "psd": _psd, "physics": _physics, "report": _report,
}


def run_pipeline(config: PipelineConfig) -> RunManifest:
    """Run the configured stages in dependency order.

    A failing stage halts the run; outputs written so far are kept and the
    manifest marks the failure. The manifest is written to
    ``output_dir/manifest.json`` and returned.
    """
    config.validate()
    ctx = _Context(config)
    manifest = RunManifest(config.digest(), __version__)
    selected = [s for s in STAGES if s in config.data["stages"]]
    failed = None
    for name in selected:
        rec = StageRecord(name)
        manifest.stages.append(rec)
        if failed is not None:
            rec.status = "skipped"
            rec.error = f"upstream stage '{failed}' failed"
            continue
        ctx.record = rec
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                _STAGE_FUNCS[name](ctx)
            rec.warnings.extend(str(w.message) for w in caught)
            rec.status = "ok"
        except Exception as exc:  # noqa: BLE001 - recorded in the manifest, re-raised below
            rec.status = "failed"
            rec.error = f"{type(exc).__name__}: {exc}"
            rec.warnings.append(traceback.format_exc(limit=3))
            failed = name
            manifest.error = exc
        rec.wall_s = time.perf_counter() - t0
        manifest.warnings.extend(f"{name}: {w}" for w in rec.warnings if not w.startswith("Traceback"))
    ctx.root.mkdir(parents=True, exist_ok=True)
    qio.write_json(manifest.to_dict(), ctx.root / "manifest.json")
    qio.write_json(json.loads(config.to_json()), ctx.root / "config.json")
    return manifest
