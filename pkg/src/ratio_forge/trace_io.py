"""File formats: JSONL traces, filtered traces, CSV reports and TOML run config.

This is the only module that touches the filesystem.

Trace records (one JSON object per line)::

    {"schema_version": 1, "sample_id": "...", "group_id": "...",
     "tokens": [..], "logp_old": [..], "logp_new": [..], "mask": [..], "score": 1.0}

Filtered records append ``rho_post``, ``p_post``, ``gain``, ``innovation`` and
``filtered_ratio``.  Floats are written with Python's shortest round-trip
representation, so write -> read -> write is byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .diagnostics import DEFAULT_WINDOW, DynamicsReport, PairedDynamicsReport
from .errors import (
    ConfigError,
    InputError,
    ParameterError,
    SchemaVersionError,
    TraceParseError,
    TraceValidationError,
    UnknownConfigKeyError,
)
from .objectives import ClipConfig
from .ratio_filter import FilteredSeries, KalmanParams, TokenTrace
from .toy_sim import TrainConfig, TrainMetrics

__all__ = [
    "SCHEMA_VERSION",
    "TRACE_FIELDS",
    "FILTERED_FIELDS",
    "DYNAMICS_COLUMNS",
    "METRICS_COLUMNS",
    "RunConfig",
    "trace_to_record",
    "record_to_trace",
    "dumps_record",
    "read_traces",
    "read_filtered",
    "write_traces",
    "write_filtered",
    "write_report_csv",
    "write_rows_csv",
    "read_rows_csv",
    "load_config",
]

SCHEMA_VERSION = 1
TRACE_FIELDS = ("schema_version", "sample_id", "group_id", "tokens", "logp_old", "logp_new", "mask", "score")
FILTERED_FIELDS = ("rho_post", "p_post", "gain", "innovation", "filtered_ratio")
DYNAMICS_COLUMNS = (
    "series", "up_prop", "down_prop", "on_prop", "up_rl", "down_rl", "on_rl",
    "switch_freq", "lfr", "glob_var", "win_var",
)
METRICS_COLUMNS = ("step", "reward_mean", "entropy", "clip_fraction", "pg_loss")


def _float_list(values, name):
    out = [float(v) for v in values]
    if not all(math.isfinite(v) for v in out):
        raise InputError(f"{name} contains non-finite values; refusing to serialize", field=name)
    return out


def trace_to_record(trace: TokenTrace) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "sample_id": trace.sample_id,
        "group_id": trace.group_id,
        "tokens": [int(t) for t in trace.tokens],
        "logp_old": _float_list(trace.logp_old, "logp_old"),
        "logp_new": _float_list(trace.logp_new, "logp_new"),
        "mask": [bool(m) for m in trace.mask],
        "score": float(trace.score),
    }


def dumps_record(record: dict) -> str:
    return json.dumps(record, allow_nan=False, ensure_ascii=False, separators=(", ", ": "))


def _require(cond, message, line, field_name):
    if not cond:
        raise TraceValidationError(message, line=line, field=field_name)


def record_to_trace(record, line=None) -> TokenTrace:
    """Validate one decoded JSON object and build a `TokenTrace`."""
    if not isinstance(record, dict):
        raise TraceValidationError("record must be a JSON object", line=line)
    if "schema_version" not in record:
        raise TraceValidationError("missing field 'schema_version'", line=line, field="schema_version")
    version = record["schema_version"]
    if version != SCHEMA_VERSION or isinstance(version, bool):
        raise SchemaVersionError(f"unsupported schema_version {version!r}", line=line, field="schema_version")
    unknown = set(record) - set(TRACE_FIELDS) - set(FILTERED_FIELDS)
    _require(not unknown, f"unknown field(s) {sorted(unknown)}", line, sorted(unknown)[0] if unknown else None)
    for name in TRACE_FIELDS:
        _require(name in record, f"missing field {name!r}", line, name)
    for name in ("sample_id", "group_id"):
        _require(isinstance(record[name], str), f"{name} must be a string", line, name)
    tokens = record["tokens"]
    _require(isinstance(tokens, list) and all(isinstance(t, int) and not isinstance(t, bool) for t in tokens),
             "tokens must be a list of integers", line, "tokens")
    for name in ("logp_old", "logp_new"):
        vals = record[name]
        _require(isinstance(vals, list) and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals),
                 f"{name} must be a list of numbers", line, name)
    _require(isinstance(record["mask"], list) and all(isinstance(m, bool) for m in record["mask"]),
             "mask must be a list of booleans", line, "mask")
    score = record["score"]
    _require(isinstance(score, (int, float)) and not isinstance(score, bool), "score must be a number", line, "score")
    for name in ("logp_old", "logp_new", "mask"):
        _require(len(record[name]) == len(tokens),
                 f"{name} has length {len(record[name])}, expected {len(tokens)}", line, name)
    try:
        return TokenTrace(
            sample_id=record["sample_id"],
            tokens=np.array(tokens, dtype=np.int64),
            logp_old=np.array(record["logp_old"], dtype=np.float64),
            logp_new=np.array(record["logp_new"], dtype=np.float64),
            mask=np.array(record["mask"], dtype=bool),
            score=score,
            group_id=record["group_id"],
        )
    except InputError as exc:
        raise TraceValidationError(str(exc), line=line, field=exc.field) from exc


def _reject_constant(name):
    raise ValueError(f"non-finite number {name} not allowed")


def _iter_records(path):
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            for lineno, text in enumerate(fh, start=1):
                if not text.strip():
                    continue
                try:
                    record = json.loads(text, parse_constant=_reject_constant)
                except json.JSONDecodeError as exc:
                    raise TraceParseError(f"malformed JSON ({exc.msg})", line=lineno) from exc
                except ValueError as exc:
                    raise TraceParseError(str(exc), line=lineno) from exc
                yield lineno, record
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc


def read_traces(path):
    """Read a JSONL trace file (raw or filtered records) into `TokenTrace` objects."""
    return [record_to_trace(rec, line) for line, rec in _iter_records(path)]


def read_filtered(path):
    """Read records that may carry filter output.

    Returns a list of ``(trace, filtered)`` pairs where ``filtered`` is a dict
    of per-token arrays (``rho_post``, ``p_post``, ``gain``, ``innovation``,
    ``filtered_ratio``) or ``None`` for raw records.
    """
    out = []
    for line, rec in _iter_records(path):
        trace = record_to_trace(rec, line)
        present = [k for k in FILTERED_FIELDS if k in rec]
        if not present:
            out.append((trace, None))
            continue
        filtered = {}
        for name in FILTERED_FIELDS:
            vals = rec.get(name)
            _require(isinstance(vals, list) and len(vals) == len(trace), f"{name} missing or wrong length", line, name)
            _require(all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in vals),
                     f"{name} must be a list of numbers", line, name)
            filtered[name] = np.array(vals, dtype=np.float64)
        out.append((trace, filtered))
    return out


def _write_lines(path, lines):
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as fh:
            for text in lines:
                fh.write(text)
                fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_traces(path, traces):
    _write_lines(path, [dumps_record(trace_to_record(t)) for t in traces])


def filtered_record(trace: TokenTrace, filtered: FilteredSeries, ratios) -> dict:
    if len(filtered) != len(trace):
        raise InputError(f"trace {trace.sample_id}: filtered length {len(filtered)} != trace length {len(trace)}")
    record = trace_to_record(trace)
    record["rho_post"] = _float_list(filtered.rho_post, "rho_post")
    record["p_post"] = _float_list(filtered.p_post, "p_post")
    record["gain"] = _float_list(filtered.gain, "gain")
    record["innovation"] = _float_list(filtered.innovation, "innovation")
    record["filtered_ratio"] = _float_list(ratios, "filtered_ratio")
    return record


def write_filtered(path, traces, filtered, ratios=None):
    """Write one filtered record per trace, preserving order.

    ``ratios`` defaults to ``exp(rho_post)`` of each filtered series.
    """
    traces, filtered = list(traces), list(filtered)
    if len(traces) != len(filtered):
        raise InputError(f"{len(traces)} traces but {len(filtered)} filtered series")
    if ratios is None:
        ratios = [np.exp(f.rho_post) for f in filtered]
    _write_lines(path, [dumps_record(filtered_record(t, f, r)) for t, f, r in zip(traces, filtered, ratios)])


def _cell(value):
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        values = [row[c] for c in columns] if isinstance(row, dict) else list(row)
        writer.writerow([_cell(v) for v in values])
    return buf.getvalue()


def write_rows_csv(path, columns, rows):
    """Write a header row and ``rows`` (dicts keyed by column, or sequences)."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(_csv_text(list(columns), rows))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_rows_csv(path):
    """Return ``(columns, rows)`` of a CSV file; rows are lists of strings."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise InputError(f"{path}: empty CSV (missing header)") from None
            return header, [row for row in reader]
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc


def dynamics_row(label, report: DynamicsReport):
    up, down, on = report.proportions
    up_rl, down_rl, on_rl = report.mean_run_lengths
    return {
        "series": label, "up_prop": up, "down_prop": down, "on_prop": on,
        "up_rl": up_rl, "down_rl": down_rl, "on_rl": on_rl,
        "switch_freq": report.switch_frequency, "lfr": report.lfr,
        "glob_var": report.global_variance, "win_var": report.windowed_local_variance,
    }


def write_report_csv(path, report):
    """Write a dynamics or training report as CSV.

    Accepts a `PairedDynamicsReport` (rows ``before``/``after``), a single
    `DynamicsReport`, a list of ``(label, DynamicsReport)`` pairs, or
    `TrainMetrics` (one row per step).
    """
    if isinstance(report, TrainMetrics):
        rows = [{c: getattr(r, c) for c in METRICS_COLUMNS} for r in report.records]
        return write_rows_csv(path, METRICS_COLUMNS, rows)
    if isinstance(report, PairedDynamicsReport):
        pairs = [("before", report.before), ("after", report.after)]
    elif isinstance(report, DynamicsReport):
        pairs = [("all", report)]
    else:
        pairs = list(report)
    write_rows_csv(path, DYNAMICS_COLUMNS, [dynamics_row(label, r) for label, r in pairs])


@dataclass(frozen=True)
class AnalysisConfig:
    window: int = DEFAULT_WINDOW
    kc: int | None = None
    representation: str = "ratio"
    raw_exact: bool = False


@dataclass(frozen=True)
class RunConfig:
    """Everything a CLI run needs; each section maps to a TOML table."""

    kalman: KalmanParams = field(default_factory=KalmanParams)
    clip: ClipConfig | None = None
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_CLIP_KEYS = ("eps_lo", "eps_hi")
_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name not in ("kalman", "clip"))


def _section(data, name, allowed):
    table = data.get(name, {})
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    for key in table:
        if key not in allowed:
            raise UnknownConfigKeyError(f"{name}.{key}")
    return table


def build_config(data: dict, overrides: dict | None = None) -> RunConfig:
    """Build a `RunConfig` from a parsed mapping plus dotted-key overrides.

    ``overrides`` maps ``"section.key"`` to values and wins over ``data``.
    """
    data = {k: dict(v) if isinstance(v, dict) else v for k, v in data.items()}
    for key in data:
        if key not in ("kalman", "clip", "analysis", "train"):
            raise UnknownConfigKeyError(key)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        data.setdefault(section, {})[key] = value
    kalman_t = _section(data, "kalman", ("q", "v", "rho0", "p0"))
    clip_t = _section(data, "clip", _CLIP_KEYS)
    analysis_t = _section(data, "analysis", tuple(f.name for f in fields(AnalysisConfig)))
    train_t = _section(data, "train", _TRAIN_KEYS)
    try:
        kalman = KalmanParams(**kalman_t)
        clip = None
        if clip_t:
            if set(clip_t) != set(_CLIP_KEYS):
                missing = sorted(set(_CLIP_KEYS) - set(clip_t))
                raise ConfigError(f"clip needs both eps_lo and eps_hi (missing {missing})")
            clip = ClipConfig(clip_t["eps_lo"], clip_t["eps_hi"])
        analysis = AnalysisConfig(**analysis_t)
        if analysis.window < 1:
            raise ConfigError("analysis.window must be >= 1")
        if analysis.representation not in ("ratio", "log_ratio"):
            raise ConfigError("analysis.representation must be 'ratio' or 'log_ratio'")
        train = TrainConfig(kalman=kalman, clip=clip, **train_t)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(kalman=kalman, clip=clip, analysis=analysis, train=train)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Load a TOML run configuration.

    Missing keys take the built-in defaults (``kalman.q = 1e-6``,
    ``kalman.v = 1``, clip band chosen per method, window 50).  Unknown
    sections or keys raise `UnknownConfigKeyError`.  ``path=None`` means no
    file.
    """
    data = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return build_config(data, overrides)


def env_config_path():
    value = os.environ.get("RATIO_FORGE_CONFIG")
    return value or None
