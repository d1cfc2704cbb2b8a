"""JSON and aligned plain-text renderings of metric reports."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Mapping

from ..metrics import MetricReport

TABLE_COLUMNS = ("pr_auc", "roc_auc", "ece10", "brier", "cost_at_tau", "cost_mean", "auto_rate", "n")


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.4f}" if abs(v) < 10 else f"{v:.1f}"


def format_table(rows: Mapping[str, MetricReport], columns=TABLE_COLUMNS) -> str:
    header = ["method", *columns]
    body = [[name, *(_fmt(getattr(r, c)) for c in columns)] for name, r in rows.items()]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = []
    for row in [header, *body]:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(obj: Mapping, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def write_table(rows: Mapping[str, MetricReport], path) -> Path:
    path = Path(path)
    path.write_text(format_table(rows))
    return path
