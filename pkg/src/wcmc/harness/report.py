"""Summaries of result CSVs: per (scheme, sweep point) mean and 5/95 percentiles."""

from __future__ import annotations

import csv

import numpy as np

GROUP_COLUMNS = ("scheme", "snr_db", "t", "k", "zeta")


def load_rows(path: str) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: list[dict]) -> list[dict]:
    """Group rows by scheme and sweep point; report mean and the 5th/95th
    percentiles of err2 (and of kl when present)."""
    groups: dict[tuple, dict[str, list[float]]] = {}
    for row in rows:
        key = tuple(row[c] for c in GROUP_COLUMNS)
        bucket = groups.setdefault(key, {"err2": [], "kl": []})
        bucket["err2"].append(float(row["err2"]))
        if row.get("kl") not in ("", None):
            bucket["kl"].append(float(row["kl"]))

    out = []
    for key in sorted(groups):
        bucket = groups[key]
        err = np.asarray(bucket["err2"])
        entry = dict(zip(GROUP_COLUMNS, key))
        entry.update(
            n=err.size,
            err2_mean=float(err.mean()),
            err2_p5=float(np.percentile(err, 5)),
            err2_p95=float(np.percentile(err, 95)),
        )
        if bucket["kl"]:
            kl = np.asarray(bucket["kl"])
            entry.update(
                kl_mean=float(kl.mean()),
                kl_p5=float(np.percentile(kl, 5)),
                kl_p95=float(np.percentile(kl, 95)),
            )
        out.append(entry)
    return out


def format_summary(summary: list[dict]) -> str:
    if not summary:
        return "no rows"
    has_kl = any("kl_mean" in entry for entry in summary)
    headers = ["scheme", "snr_db", "t", "k", "zeta", "n", "err2_mean", "err2_p5", "err2_p95"]
    if has_kl:
        headers += ["kl_mean", "kl_p5", "kl_p95"]
    lines = []
    table = []
    for entry in summary:
        row = []
        for h in headers:
            value = entry.get(h, "")
            if isinstance(value, float):
                row.append(f"{value:.6g}")
            else:
                row.append(str(value))
        table.append(row)
    widths = [max(len(h), *(len(r[i]) for r in table)) for i, h in enumerate(headers)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    for row in table:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines)
