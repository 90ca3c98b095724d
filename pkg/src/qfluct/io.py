"""Plain-text table and document formats.

Every table is a CSV file with a header row and a sidecar
``<name>.schema.json`` listing column names, dtypes and units. Measurement
records additionally carry a ``<name>.meta.json`` document holding the
experiment plan.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from .averaging import ProbabilitySeries
from .emulator import ExperimentPlan, RecordTable, reconstruct_timestamps
from .noisefit import NoiseTrace

SCHEMA_SUFFIX = ".schema.json"
META_SUFFIX = ".meta.json"
RECORD_COLUMNS = ("qubit", "script", "repetition", "tau_index", "tau_s", "basis", "outcome", "t_s")
REQUIRED_RECORD_COLUMNS = ("repetition", "tau_index", "basis", "outcome")


class DataError(ValueError):
    """Input data violate the documented format."""


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(obj, path) -> Path:
    """Write a JSON document with sorted keys; NaN and inf become null."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def schema_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + SCHEMA_SUFFIX)


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + META_SUFFIX)


def _dtype_name(s: pd.Series) -> str:
    if pd.api.types.is_bool_dtype(s):
        return "bool"
    if pd.api.types.is_integer_dtype(s):
        return "int"
    if pd.api.types.is_float_dtype(s):
        return "float"
    return "str"


def write_table(frame: pd.DataFrame, path, units: dict | None = None,
                description: str = "") -> Path:
    """Write ``frame`` as CSV plus a schema sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    units = units or {}
    schema = {
        "format": "csv",
        "description": description,
        "n_rows": int(len(frame)),
        "columns": [
            {"name": c, "dtype": _dtype_name(frame[c]), "unit": units.get(c, "")}
            for c in frame.columns
        ],
    }
    write_json(schema, schema_path(path))
    return path


def read_table(path, required=()) -> pd.DataFrame:
    """Read a CSV table, checking it against its schema sidecar if present."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    sp = schema_path(path)
    if sp.exists():
        schema = read_json(sp)
        for col in schema["columns"]:
            name, kind = col["name"], col["dtype"]
            if name not in df.columns:
                raise DataError(f"{path}: column {name!r} declared in schema is missing")
            if kind in ("int", "float") and not pd.api.types.is_numeric_dtype(df[name]):
                bad = pd.to_numeric(df[name], errors="coerce").isna().to_numpy()
                line = int(np.argmax(bad)) + 2
                raise DataError(f"{path}: line {line}: column {name!r} is not numeric")
    return df


# Measurement records ------------------------------------------------------

def write_records(tables, path) -> Path:
    """Write one or several qubits' records as a long CSV plus plan metadata.

    Parameters
    ----------
    tables : RecordTable or dict of {int: RecordTable}
        Qubits must share the plan.
    """
    if isinstance(tables, RecordTable):
        tables = {0: tables}
    plans = [t.plan.to_dict() for t in tables.values()]
    if any(p != plans[0] for p in plans[1:]):
        raise ValueError("all qubits must share one experiment plan")
    frames = []
    for q, tab in tables.items():
        df = tab.to_frame()
        df.insert(0, "qubit", int(q))
        frames.append(df)
    df = pd.concat(frames, ignore_index=True)
    write_table(df, path, {"tau_s": "s", "t_s": "s"}, "single-shot measurement records")
    first = next(iter(tables.values()))
    write_json({"plan": plans[0], "qubits": [int(q) for q in tables],
                "timestamp_fallback": bool(first.timestamp_fallback)}, meta_path(path))
    return Path(path)


def _validate_records(df: pd.DataFrame, plan: ExperimentPlan, path) -> None:
    def fail(mask, what):
        line = int(np.argmax(mask)) + 2
        raise DataError(f"{path}: line {line}: {what}")

    for c in ("repetition", "tau_index", "outcome"):
        if not pd.api.types.is_integer_dtype(df[c]):
            fail(pd.to_numeric(df[c], errors="coerce").isna().to_numpy()
                 | (pd.to_numeric(df[c], errors="coerce") % 1 != 0).to_numpy(),
                 f"{c} must be an integer")
    out = df["outcome"].to_numpy()
    if np.any((out != 0) & (out != 1)):
        fail((out != 0) & (out != 1), "outcome must be 0 or 1")
    ti = df["tau_index"].to_numpy()
    if np.any((ti < 0) | (ti >= plan.n_tau)):
        fail((ti < 0) | (ti >= plan.n_tau), f"tau_index outside 0..{plan.n_tau - 1}")
    b = df["basis"].astype(str).to_numpy()
    okb = np.isin(b, plan.bases)
    if not okb.all():
        fail(~okb, f"basis must be one of {plan.bases}")
    rep = df["repetition"].to_numpy()
    if np.any((rep < 0) | (rep >= plan.total_repetitions)):
        fail((rep < 0) | (rep >= plan.total_repetitions),
             f"repetition outside 0..{plan.total_repetitions - 1}")
    if "tau_s" in df.columns:
        tau = df["tau_s"].to_numpy(dtype=float)
        bad = ~np.isclose(tau, plan.idle_times[ti], rtol=1e-9, atol=1e-15)
        if bad.any():
            fail(bad, "tau_s does not match the plan's idle time for tau_index")


def read_records(path, meta=None) -> dict:
    """Validated records per qubit.

    Parameters
    ----------
    path : path-like
        Records CSV.
    meta : path-like or dict, optional
        Plan metadata; defaults to the ``.meta.json`` sidecar.

    Returns
    -------
    dict of {int: RecordTable}
        Timestamps are rebuilt from the script start times and durations in
        the metadata; without them repetitions are spaced uniformly and
        ``timestamp_fallback`` is set.
    """
    df = read_table(path, REQUIRED_RECORD_COLUMNS)
    if meta is None:
        mp = meta_path(path)
        if not mp.exists():
            raise DataError(f"{path}: metadata document {mp.name} not found")
        meta = read_json(mp)
    elif not isinstance(meta, dict):
        meta = read_json(meta)
    try:
        plan = ExperimentPlan.from_dict(meta["plan"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: invalid plan metadata: {exc}") from exc
    _validate_records(df, plan, path)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        times, fallback = reconstruct_timestamps(plan)
    for w in caught:
        warnings.warn(w.message, w.category, stacklevel=2)
    qubits = df["qubit"].to_numpy() if "qubit" in df.columns else np.zeros(len(df), dtype=int)
    code = {b: k for k, b in enumerate(plan.bases)}
    out = {}
    for q in np.unique(qubits):
        sub = df[qubits == q]
        rep = sub["repetition"].to_numpy()
        if np.any(np.diff(rep) < 0):
            line = int(np.argmax(np.r_[False, np.diff(rep) < 0])) + 2
            warnings.warn(f"{path}: qubit {q}: repetitions not monotone (first at row {line}); "
                          "records are placed by repetition index", stacklevel=2)
        ti = sub["tau_index"].to_numpy()
        bk = sub["basis"].astype(str).map(code).to_numpy()
        n_cells = plan.total_repetitions * plan.n_tau * len(plan.bases)
        flat = (rep * plan.n_tau + ti) * len(plan.bases) + bk
        if flat.size != n_cells or np.unique(flat).size != n_cells:
            raise DataError(
                f"{path}: qubit {q}: expected one record for each of {n_cells} "
                f"(repetition, tau_index, basis) cells, found {flat.size} rows "
                f"covering {np.unique(flat).size}"
            )
        outcomes = np.empty(n_cells, dtype=np.uint8)
        outcomes[flat] = sub["outcome"].to_numpy()
        out[int(q)] = RecordTable(plan, outcomes.reshape(plan.total_repetitions, plan.n_tau,
                                                         len(plan.bases)), times, fallback)
    return out


# Derived series -----------------------------------------------------------

def write_probability_series(series: ProbabilitySeries, path) -> Path:
    write_table(series.to_frame(), path, {"t_s": "s"}, f"{series.kind} moving average, W={series.width}")
    write_json({"kind": series.kind, "width": series.width,
                "idle_times": series.idle_times, "bases": list(series.bases)}, meta_path(path))
    return Path(path)


def read_probability_series(path) -> ProbabilitySeries:
    df = read_table(path, ("repetition", "t_s", "tau_index", "basis", "p", "n_eff", "edge"))
    meta = read_json(meta_path(path))
    bases = tuple(meta["bases"])
    tau = np.asarray(meta["idle_times"], dtype=float)
    n_tau, n_b = tau.size, len(bases)
    if len(df) % (n_tau * n_b):
        raise DataError(f"{path}: row count is not a multiple of {n_tau * n_b}")
    n = len(df) // (n_tau * n_b)
    code = {b: k for k, b in enumerate(bases)}
    flat = (df["repetition"].to_numpy() * n_tau + df["tau_index"].to_numpy()) * n_b \
        + df["basis"].map(code).to_numpy()
    p = np.empty(len(df))
    p[flat] = df["p"].to_numpy(dtype=float)
    first = df.groupby("repetition", sort=True).first()
    return ProbabilitySeries(p.reshape(n, n_tau, n_b), first["n_eff"].to_numpy(dtype=float),
                             first["t_s"].to_numpy(dtype=float), first["edge"].to_numpy(dtype=bool),
                             meta["kind"], float(meta["width"]), tau, bases)


def write_noise_trace(trace: NoiseTrace, path) -> Path:
    units = {"t_s": "s", "delta_f_hz": "Hz", "sigma_delta_f_hz": "Hz", "gamma_1": "1/s",
             "sigma_gamma_1": "1/s", "gamma_phi": "1/s", "sigma_gamma_phi": "1/s"}
    return write_table(trace.to_frame(), path, units, "fitted noise parameters")


def read_noise_trace(path) -> NoiseTrace:
    return NoiseTrace.from_frame(read_table(path, NoiseTrace.COLUMNS))

