"""
Report Storage: CSV and JSON outputs (metrics, training curves, SCA traces, plot data).
"""

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Sequence, Union

from src.models import MetricsRow, ScaTraceRecord, TrainReport

METRICS_COLUMNS = ["sample_id", "method", "wsr", "active_pairs", "runtime_ms"]
SCA_TRACE_COLUMNS = ["iteration", "outer", "surrogate", "objective", "theta", "delta", "max_violation"]


def _write_rows(path: Union[str, Path], fieldnames: Sequence[str], rows: List[Dict[str, Any]]) -> str:
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(fieldnames))
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        raise OSError(f"Failed to write {file_path}: {e}")
    return str(file_path.absolute())


def write_metrics_csv(rows: List[MetricsRow], path: Union[str, Path]) -> str:
    """
    Write metrics rows with a fixed column order.

    The ``ra`` column is included when any row carries a ratio; ``status``
    is always last.
    """
    columns = list(METRICS_COLUMNS)
    if any(row.ra is not None for row in rows):
        columns.append("ra")
    columns.append("status")
    records = []
    for row in rows:
        data = row.model_dump()
        records.append({key: ("" if data[key] is None else data[key]) for key in columns})
    return _write_rows(path, columns, records)


def read_metrics_csv(path: Union[str, Path]) -> List[MetricsRow]:
    """Read rows written by write_metrics_csv."""
    file_path = Path(path)
    try:
        with open(file_path, "r", newline="", encoding="utf-8") as f:
            raw_rows = list(csv.DictReader(f))
    except OSError as e:
        raise OSError(f"Failed to read {file_path}: {e}")
    rows = []
    for raw in raw_rows:
        rows.append(MetricsRow(
            sample_id=int(raw["sample_id"]),
            method=raw["method"],
            wsr=float(raw["wsr"]),
            active_pairs=int(raw["active_pairs"]),
            runtime_ms=float(raw["runtime_ms"]),
            ra=float(raw["ra"]) if raw.get("ra") else None,
            status=raw.get("status") or "ok",
        ))
    return rows


def write_train_report_csv(report: TrainReport, path: Union[str, Path]) -> str:
    """Epoch, loss, wsr, five violation means and five multiplier norms per row."""
    rows = []
    for record in report.records:
        row = {"epoch": record.epoch, "loss": record.loss, "wsr": record.wsr}
        row.update({f"viol_{key}": value for key, value in record.violations.items()})
        row.update({f"dual_{key}": value for key, value in record.dual_norms.items()})
        rows.append(row)
    columns = ["epoch", "loss", "wsr"]
    columns += [f"viol_{k}" for k in ("binary_tx", "binary_rx", "row_tx", "row_rx", "coupling")]
    columns += [f"dual_{k}" for k in ("lambda", "mu", "nu", "xi", "rho")]
    return _write_rows(path, columns, rows)


def write_sca_trace_csv(trace: List[ScaTraceRecord], path: Union[str, Path]) -> str:
    return _write_rows(path, SCA_TRACE_COLUMNS, [record.model_dump() for record in trace])


def write_json(data: Any, path: Union[str, Path]) -> str:
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2)
    except OSError as e:
        raise OSError(f"Failed to write {file_path}: {e}")
    return str(file_path.absolute())
