"""Systematic samples of evaluation rows as CSV and SVG line charts."""
from __future__ import annotations

import csv
import math
import os
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

PREDICTIONS_COLUMNS = ("tx_hash", "timestamp", "actual", "estimated", "predicted")


def systematic_sample(n_rows: int, size: int = 100) -> list[int]:
    """Every ``ceil(n / size)``-th index starting at 0."""
    if n_rows <= 0:
        return []
    step = max(1, math.ceil(n_rows / size))
    return list(range(0, n_rows, step))[:size]


def write_predictions(path: str | os.PathLike, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=PREDICTIONS_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in PREDICTIONS_COLUMNS})


def read_predictions(path: str | os.PathLike) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            out.append({
                "tx_hash": r["tx_hash"],
                "timestamp": int(float(r["timestamp"])),
                "actual": float(r["actual"]),
                "estimated": float(r["estimated"]) if r["estimated"] not in ("", "nan") else math.nan,
                "predicted": float(r["predicted"]),
            })
    return out


def _polyline(xs, ys, color: str, dashed: bool) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys) if math.isfinite(y))
    dash = ' stroke-dasharray="6,4"' if dashed else ""
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{pts}"/>'


def line_chart_svg(series: dict[str, Sequence[float]], title: str = "", y_label: str = "",
                   width: int = 900, height: int = 420) -> str:
    """SVG line chart; series named ``actual`` are solid, the rest dashed."""
    colors = {"actual": "#1f4e9c", "estimated": "#c0392b", "predicted": "#27ae60"}
    left, right, top, bottom = 70, 20, 40, 50
    n = max((len(v) for v in series.values()), default=0)
    finite = [y for v in series.values() for y in v if math.isfinite(y)]
    lo, hi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    pw, ph = width - left - right, height - top - bottom

    def sx(i):
        return left + (pw * i / (n - 1) if n > 1 else pw / 2)

    def sy(v):
        return top + ph * (1.0 - (v - lo) / (hi - lo))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2:.0f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
             f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        parts.append(f'<text x="{left - 6}" y="{sy(v) + 4:.1f}" text-anchor="end" font-size="10">{v:.4g}</text>')
    parts.append(f'<text x="{left + pw / 2:.0f}" y="{height - 12}" text-anchor="middle" font-size="12">'
                 f'sampled transaction</text>')
    if y_label:
        parts.append(f'<text x="16" y="{top + ph / 2:.0f}" font-size="12" text-anchor="middle" '
                     f'transform="rotate(-90 16 {top + ph / 2:.0f})">{escape(y_label)}</text>')
    for j, (name, ys) in enumerate(series.items()):
        color = colors.get(name, "#555555")
        xs = [sx(i) for i in range(len(ys))]
        parts.append(_polyline(xs, [sy(y) if math.isfinite(y) else math.nan for y in ys],
                               color, dashed=name != "actual"))
        lx = left + 10 + 130 * j
        dash = ' stroke-dasharray="6,4"' if name != "actual" else ""
        parts.append(f'<line x1="{lx}" y1="{top - 8}" x2="{lx + 24}" y2="{top - 8}" stroke="{color}"'
                     f' stroke-width="1.5"{dash}/>')
        parts.append(f'<text x="{lx + 30}" y="{top - 4}" font-size="11">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(rows: Sequence[dict], out_dir: str | os.PathLike, sample: int = 100,
                 title: str = "", y_label: str = "") -> dict:
    """Write ``sample.csv`` and ``chart.svg`` for a systematic sample of ``rows``."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    picked = [rows[i] for i in systematic_sample(len(rows), sample)]
    write_predictions(d / "sample.csv", picked)
    series = {"actual": [r["actual"] for r in picked],
              "estimated": [r["estimated"] for r in picked],
              "predicted": [r["predicted"] for r in picked]}
    (d / "chart.svg").write_text(line_chart_svg(series, title, y_label), encoding="utf-8")
    return {"rows": len(picked), "csv": "sample.csv", "svg": "chart.svg"}
