"""Metrics and run reports: estimation error, utility, mode usage, CSV/JSON export."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .agent.learner import METRIC_COLUMNS
from .env import N_MODES

SCHEMA_VERSION = 1
SERIES_COLUMNS = METRIC_COLUMNS
INT_COLUMNS = frozenset({"seed", "episode", "tx_v2i", "tx_v2s", "tx_v2v"})
MODE_NAMES = {0: "V2I", 1: "V2S", 2: "V2V"}


class ReportError(OSError):
    pass


@dataclass(frozen=True)
class EstimationMetrics:
    mse: float
    rmse: float
    mae: float
    r2: float | None
    accuracy: float

    def as_dict(self) -> dict[str, float | None]:
        return {"mse": self.mse, "rmse": self.rmse, "mae": self.mae, "r2": self.r2, "accuracy": self.accuracy}


def estimation_metrics(predictions, targets, tol: float = 0.5) -> EstimationMetrics:
    """Error statistics over all entries of ``predictions`` vs ``targets``.

    Accuracy is the share of entries whose standardized prediction lies within
    ``tol`` of the standardized target, both scaled by the target mean and std.
    R^2 is None when the targets are constant.
    """
    p = np.asarray(predictions, float).ravel()
    t = np.asarray(targets, float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"predictions {p.shape} and targets {t.shape} differ")
    if len(t) < 2:
        raise ValueError("need at least two samples")
    err = p - t
    mse = float(np.mean(err ** 2))
    mae = float(np.mean(np.abs(err)))
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    r2 = None if ss_tot == 0 else 1.0 - float(np.sum(err ** 2)) / ss_tot
    sd = float(t.std())
    scaled = np.abs(err) / sd if sd > 0 else np.abs(err)
    return EstimationMetrics(mse, math.sqrt(mse), mae, r2, float(np.mean(scaled <= tol)))


def utility_summary(utilities) -> float:
    u = np.asarray(utilities, float)
    if u.size == 0:
        raise ValueError("no utilities to summarize")
    return float(u.mean())


def mode_histogram(modes) -> np.ndarray:
    return np.bincount(np.asarray(modes, dtype=np.int64).ravel(), minlength=N_MODES)[:N_MODES]


def action_distribution(modes=None, counts=None) -> dict[str, float]:
    """Percentage of transmission slots per mode, from a mode trace or from per-mode counts."""
    c = mode_histogram(modes) if counts is None else np.asarray(counts, dtype=np.int64)
    total = int(c.sum())
    if total == 0:
        raise ValueError("no transmission slots")
    return {MODE_NAMES[m]: 100.0 * float(c[m]) / total for m in range(N_MODES)}


@dataclass
class RunReport:
    kind: str
    config_hash: str
    config: dict[str, Any]
    seeds: list[int]
    series: list[dict[str, float]] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, list[dict[str, Any]]] = field(default_factory=dict)


def summarize_series(series: list[dict], final_window: int) -> dict[str, Any]:
    """Headline numbers recomputed from per-episode rows alone."""
    if not series:
        return {}
    by_seed: dict[int, list[dict]] = {}
    for row in series:
        by_seed.setdefault(int(row["seed"]), []).append(row)
    per_seed, counts = {}, np.zeros(N_MODES, dtype=np.int64)
    for s, rows in sorted(by_seed.items()):
        rows = sorted(rows, key=lambda r: r["episode"])[-final_window:]
        per_seed[str(s)] = utility_summary([r["utility"] for r in rows])
        counts += [sum(int(r[c]) for r in rows) for c in ("tx_v2i", "tx_v2s", "tx_v2v")]
    out = {"final_utility": float(np.mean(list(per_seed.values()))), "final_utility_per_seed": per_seed,
           "final_window": final_window}
    if counts.sum():
        out["mode_distribution"] = action_distribution(counts=counts)
    return out


def _clean(x):
    """Convert numpy scalars and non-finite floats to JSON-safe values."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def summary_document(report: RunReport) -> dict[str, Any]:
    return _clean({"schema_version": SCHEMA_VERSION, "kind": report.kind, "config_hash": report.config_hash,
                   "config": report.config, "seeds": list(report.seeds), "summary": report.summary,
                   "tables": report.tables})


def summary_json(report: RunReport) -> str:
    return json.dumps(summary_document(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def load_schema() -> dict:
    return json.loads(resources.files("satv2x").joinpath("schemas/summary.schema.json").read_text())


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def export_report(report: RunReport, out_dir) -> dict[str, Path]:
    """Write ``metrics.csv``, one CSV per table and ``summary.json`` into ``out_dir``."""
    out = Path(out_dir)
    paths = {"series": out / "metrics.csv", "summary": out / "summary.json"}
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(paths["series"], SERIES_COLUMNS, report.series)
        for name, rows in sorted(report.tables.items()):
            cols = list(rows[0]) if rows else []
            paths[name] = out / f"{name}.csv"
            _write_csv(paths[name], cols, rows)
        paths["summary"].write_text(summary_json(report))
    except OSError as e:
        raise ReportError(f"cannot write report to {out}: {e}") from e
    return paths


def _parse_cell(col: str, raw: str):
    if col in INT_COLUMNS:
        return int(raw)
    return float(raw)


def read_report(out_dir) -> RunReport:
    out = Path(out_dir)
    try:
        doc = json.loads((out / "summary.json").read_text())
        with open(out / "metrics.csv", newline="") as fh:
            reader = csv.DictReader(fh)
            series = [{c: _parse_cell(c, row[c]) for c in SERIES_COLUMNS} for row in reader]
    except OSError as e:
        raise ReportError(f"cannot read report from {out}: {e}") from e
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ReportError(f"{out}: schema version {doc.get('schema_version')} != {SCHEMA_VERSION}")
    return RunReport(doc["kind"], doc["config_hash"], doc["config"], doc["seeds"], series, doc["summary"],
                     doc["tables"])
