"""Tabular (CSV) and structured (JSON) rendering of sweep results."""

from __future__ import annotations

import csv
import io
import json
from typing import Sequence

from .quality import QualityAnchors, frontier_mask, points_from_sweep
from .simulator import SweepRow

SWEEP_COLUMNS = [
    "budget_bytes", "n4", "n_gpu", "throughput_tps", "hit_rate",
    "bytes_transferred", "ppl_estimate", "on_frontier", "feasible",
]


def sweep_records(rows: Sequence[SweepRow], anchors: QualityAnchors, num_e: int) -> list[dict]:
    """One flat record per row; infeasible rows keep budget and target only."""
    points = points_from_sweep(rows, anchors, num_e)
    marks = iter(zip(points, frontier_mask(points)))
    records = []
    for row in rows:
        if not row.feasible:
            records.append({
                "budget_bytes": row.budget_bytes, "n4": row.n4_target, "n_gpu": None,
                "throughput_tps": None, "hit_rate": None, "bytes_transferred": None,
                "ppl_estimate": None, "on_frontier": False, "feasible": False,
            })
            continue
        point, on_front = next(marks)
        records.append({
            "budget_bytes": row.budget_bytes,
            "n4": row.summary.n4,
            "n_gpu": row.summary.n_gpu,
            "throughput_tps": row.report.throughput_tps,
            "hit_rate": row.report.hit_rate,
            "bytes_transferred": row.report.bytes_transferred,
            "ppl_estimate": point.ppl_estimate,
            "on_frontier": on_front,
            "feasible": True,
        })
    return records


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def to_csv(records: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (records[0].keys() if records else SWEEP_COLUMNS))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for rec in records:
        writer.writerow([_cell(rec.get(c)) for c in columns])
    return buf.getvalue()


def to_json(records: Sequence[dict], **meta) -> str:
    return json.dumps({**meta, "rows": list(records)}, indent=2, sort_keys=True) + "\n"
