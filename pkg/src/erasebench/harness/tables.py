"""Result tables: one row per (model, algorithm), ``mean ± std`` over seeds.

Column order: Model, Algorithm, then nDCG@k, Recall@k, Hit@k for each k,
then Sensitive@k and RelItems@k (sensitive scenario only), RelEff@k, and
finally Avg/Req (s) and Status. Diverged rows print ``div.`` and inapplicable
rows ``n/a`` in every metric cell.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from ..evaluation import MetricsReport, aggregate


@dataclass
class TableRow:
    model: str
    algorithm: str
    reports: list[MetricsReport]


def _status(reports: list[MetricsReport]) -> str:
    statuses = {r.status for r in reports}
    for s in ("div.", "n/a"):
        if s in statuses:
            return s
    return "ok"


def _columns(ks, sensitive: bool) -> list[tuple[str, str, int | None]]:
    cols = []
    for name, label in (("ndcg", "nDCG"), ("recall", "Recall"), ("hit", "Hit")):
        cols += [(name, f"{label}@{k}", k) for k in ks]
    if sensitive:
        cols += [("sensitive", f"Sensitive@{k}", k) for k in ks]
        cols += [("rel_items", f"RelItems@{k}", k) for k in ks]
    cols += [("rel_eff", f"RelEff@{k}", k) for k in ks]
    cols.append(("avg_req", "Avg/Req (s)", None))
    return cols


def _value(rep: MetricsReport, metric: str, k):
    if metric in ("ndcg", "recall", "hit"):
        return rep.utility.get(k, {}).get(metric)
    if metric == "sensitive":
        return rep.sensitive_at_k.get(k)
    if metric == "rel_items":
        return rep.rel_items_at_k.get(k)
    if metric == "rel_eff":
        return rep.rel_eff_at_k.get(k)
    if metric == "avg_req":
        return rep.timing.get("unlearn_avg_per_request_s")
    raise KeyError(metric)


def table_data(rows: list[TableRow]) -> tuple[list[str], list[list]]:
    """Header plus one list of cells per row; numeric cells are ``(mean, std)`` or a status string."""
    if not rows:
        raise ValueError("no rows to render")
    ks = list(rows[0].reports[0].ks)
    for row in rows:
        for rep in row.reports:
            if list(rep.ks) != ks:
                raise ValueError("reports use different k lists")
    sensitive = any(rep.sensitive_retrained for row in rows for rep in row.reports)
    cols = _columns(ks, sensitive)
    header = ["Model", "Algorithm"] + [c[1] for c in cols] + ["Status"]
    body = []
    for row in rows:
        status = _status(row.reports)
        cells: list = [row.model, row.algorithm]
        for metric, _, k in cols:
            if status != "ok" and metric != "avg_req":
                cells.append(status)
            else:
                cells.append(aggregate(_value(rep, metric, k) for rep in row.reports))
        cells.append(status)
        body.append(cells)
    return header, body


def _fmt(cell) -> str:
    if isinstance(cell, tuple):
        mean, std = cell
        if math.isnan(mean):
            return "-"
        return f"{mean:.4f} ± {std:.4f}"
    return str(cell)


def emit_table(rows: list[TableRow], format: str = "text") -> str:
    header, body = table_data(rows)
    if format == "text":
        grid = [header] + [[_fmt(c) for c in r] for r in body]
        widths = [max(len(line[j]) for line in grid) for j in range(len(header))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(line, widths)).rstrip() for line in grid]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        out_header = header[:2]
        for h in header[2:-1]:
            out_header += [f"{h} mean", f"{h} std"]
        writer.writerow(out_header + ["Status"])
        for r in body:
            line = r[:2]
            for c in r[2:-1]:
                line += [repr(c[0]), repr(c[1])] if isinstance(c, tuple) else [c, c]
            writer.writerow(line + [r[-1]])
        return buf.getvalue()
    raise ValueError(f"unknown table format {format!r}")


def read_table_csv(text: str) -> list[dict]:
    """Parse a CSV table back; numeric cells become floats, status cells stay strings."""
    out = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {}
        for key, value in rec.items():
            try:
                row[key] = float(value) if key not in ("Model", "Algorithm", "Status") else value
            except ValueError:
                row[key] = value
        out.append(row)
    return out
