"""Merge eval and sweep CSVs from earlier runs into one summary table."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

from .errors import ContractViolation
from .evaluation import REPORT_COLUMNS
from .experiments import SWEEP_COLUMNS

SUMMARY_COLUMNS = ["source", "kind", "key", "mean_auc", "detail"]


def _csv_files(inputs: Iterable) -> list[Path]:
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files += sorted(p.rglob("*.csv"))
        elif p.exists():
            files.append(p)
        else:
            raise ContractViolation(f"report input {p} does not exist")
    return files


def summarize(inputs: Iterable) -> tuple[list[dict], str]:
    """Rows from every recognised CSV (eval reports and sweep trends) plus a fixed-width text table."""
    rows = []
    for f in _csv_files(inputs):
        with open(f, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            data = list(reader)
        if header == REPORT_COLUMNS:
            per_suite = " ".join(f"{r['suite']}={float(r['auc']):.3f}" for r in data if r["suite"] != "mean")
            mean = [r for r in data if r["suite"] == "mean"]
            if mean:
                rows.append({"source": str(f), "kind": "eval", "key": f.stem, "mean_auc": float(mean[0]["auc"]),
                             "detail": per_suite})
        elif header == SWEEP_COLUMNS:
            for r in data:
                rows.append({"source": str(f), "kind": "sweep", "key": f"{r['factor']}={r['value']} seed={r['seed']}",
                             "mean_auc": float(r["mean_auc"]), "detail": ""})
    if not rows:
        return rows, "no eval or sweep CSVs found\n"
    width = max(len(r["key"]) for r in rows)
    lines = [f"{'kind':6} {'key':{width}} {'mean AUC':>9}  detail"]
    for r in rows:
        lines.append(f"{r['kind']:6} {r['key']:{width}} {r['mean_auc']:9.4f}  {r['detail']}")
    return rows, "\n".join(lines) + "\n"


def write_summary_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({**r, "mean_auc": repr(r["mean_auc"])})
