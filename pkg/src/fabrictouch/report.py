"""Text tables and CSV files for experiment results."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

from .dataset import PROPERTY_LEVELS
from .stats import WilcoxonResult
from .train import AblationRow

CHECK = "x"


def pct(mean: float, sd: float | None = None) -> str:
    if math.isnan(mean):
        return "--"
    if sd is None or math.isnan(sd):
        return f"{100 * mean:.2f}"
    return f"{100 * mean:.2f} ± {100 * sd:.2f}"


def format_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h)) for i, h in enumerate(header)]
    line = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    rule = "-" * len(line(header))
    return "\n".join([line(header), rule, *(line(r) for r in rows)]) + "\n"


def modality_table(rows: Sequence[AblationRow]) -> str:
    header = ["Backbone", "Image", "Flow", "Internal", "External", "Proprio", "Test Accuracy [%]"]
    body = []
    for r in rows:
        d = r.as_dict()
        body.append([
            "Transformer" if d["backbone"] == "attention" else "TCN",
            *(CHECK if d[k] else "" for k in ("image", "flow", "internal", "external", "proprio")),
            pct(d["test_mean"], d["test_sd"]),
        ])
    return format_table(header, body)


def bandwidth_table(rows: Sequence[AblationRow]) -> str:
    header = ["Bandwidth [kHz]", "Validation Accuracy [%]", "Test Accuracy [%]"]
    body = []
    for r in rows:
        d = r.as_dict()
        body.append([f"{d['bandwidth_khz']:g}", pct(d["val_mean"], d["val_sd"]), pct(d["test_mean"], d["test_sd"])])
    return format_table(header, body)


def format_p(p: WilcoxonResult | None) -> str:
    if p is None:
        return "--"
    return "< 0.0001" if p.pvalue < 1e-4 else f"{p.pvalue:.4f}"


def noise_table(rows: Sequence[AblationRow], pvalues: Sequence[WilcoxonResult | None]) -> str:
    header = ["Internal", "Proprio", "External", "Test Accuracy [%]", "p-value"]
    body = []
    for r, p in zip(rows, pvalues):
        d = r.as_dict()
        body.append([*(CHECK if d[k] else "" for k in ("internal", "proprio", "external")),
                     pct(d["test_mean"], d["test_sd"]), format_p(p)])
    return format_table(header, body)


def property_table(results: dict[str, dict[str, dict[str, float]]]) -> str:
    """``results[model_label][property]`` -> {"chance", "training", "holdout"} (means over seeds)."""
    labels = list(results)
    header = ["Property", "Chance", *(f"Train:{m}" for m in labels), *(f"Holdout:{m}" for m in labels)]
    body = []
    for prop in PROPERTY_LEVELS:
        first = results[labels[0]][prop]
        body.append([prop.capitalize(), pct(first["chance"]),
                     *(pct(results[m][prop]["training"]) for m in labels),
                     *(pct(results[m][prop]["holdout"]) for m in labels)])
    return format_table(header, body)


def write_rows_csv(path: str | Path, rows: Sequence[AblationRow]) -> None:
    dicts = [r.as_dict() for r in rows]
    fields = list(dicts[0]) if dicts else ["backbone", "test_mean", "test_sd"]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for d in dicts:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in d.items()})
