"""Report tables and chart emission.

Outputs are deterministic byte-for-byte: stable column order, repr-based
float formatting, hand-written SVG with fixed geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from ..engine import MetricTrace, relative_accuracy
from ..errors import ConfigError


@dataclass
class ReportTable:
    title: str = ""
    columns: list[str] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_csv_text(self) -> str:
        def cell(v) -> str:
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(cell(row.get(c)) for c in self.columns))
        for note in self.notes:
            lines.append(f"# {note}")
        return "\n".join(lines) + "\n"

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_csv_text())


def checkpoint_table(
    traces: dict[tuple[str, float], MetricTrace],
    checkpoints: Sequence[int],
    reference: Optional[float] = None,
) -> ReportTable:
    """Relative accuracy of the best-so-far model at round checkpoints.

    Rows are keyed (method, alpha); one column per "@N rounds" checkpoint,
    mirroring the comparison-table layout.  Checkpoints must be evaluated
    rounds of every trace.
    """
    columns = ["method", "alpha"] + [f"@{n}" for n in checkpoints]
    table = ReportTable(title="Relative accuracy @N rounds", columns=columns)
    for (method, alpha), trace in traces.items():
        evaluated = {r.round for r in trace.records}
        missing = [n for n in checkpoints if (n - 1) not in evaluated]
        if missing:
            raise ConfigError(f"checkpoints {missing} not evaluated for {method}", "checkpoints")
        ref = reference or trace.reference_accuracy
        row: dict = {"method": method, "alpha": alpha}
        accs = trace.val_accuracies()
        for n in checkpoints:
            best = float(accs[:n].max())
            row[f"@{n}"] = relative_accuracy(best, ref) if ref else best
        table.rows.append(row)
    return table


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def svg_line_chart(
    series: dict[str, tuple[Sequence[float], Sequence[float]]],
    *,
    title: str = "",
    x_label: str = "round",
    y_label: str = "accuracy",
    width: int = 640,
    height: int = 400,
) -> str:
    """Minimal deterministic SVG: axes, one polyline per labeled series."""
    margin = 50
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    x_min, x_max = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    y_min, y_max = (min(ys_all), max(ys_all)) if ys_all else (0.0, 1.0)
    if x_max == x_min:
        x_max = x_min + 1.0
    if y_max == y_min:
        y_max = y_min + 1.0

    def px(x: float) -> float:
        return margin + plot_w * (x - x_min) / (x_max - x_min)

    def py(y: float) -> float:
        return height - margin - plot_h * (y - y_min) / (y_max - y_min)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" '
        f'font-size="12">{x_label}</text>',
        f'<text x="15" y="{height / 2:.1f}" font-size="12" '
        f'transform="rotate(-90 15 {height / 2:.1f})" text-anchor="middle">{y_label}</text>',
        f'<text x="{margin}" y="{height - margin + 16}" font-size="10" '
        f'text-anchor="middle">{x_min:.3g}</text>',
        f'<text x="{width - margin}" y="{height - margin + 16}" font-size="10" '
        f'text-anchor="middle">{x_max:.3g}</text>',
        f'<text x="{margin - 6}" y="{height - margin}" font-size="10" '
        f'text-anchor="end">{y_min:.3g}</text>',
        f'<text x="{margin - 6}" y="{margin + 4}" font-size="10" text-anchor="end">{y_max:.3g}</text>',
    ]
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        points = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')
        ly = margin + 16 * i
        parts.append(f'<line x1="{width - margin - 110}" y1="{ly}" x2="{width - margin - 90}" '
                     f'y2="{ly}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{width - margin - 84}" y="{ly + 4}" font-size="11">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_report(
    tables: dict[str, ReportTable],
    traces: dict[str, Optional[MetricTrace]],
    out_dir: Union[str, Path],
) -> list[Path]:
    """Write each table as CSV and a combined accuracy-vs-round SVG chart.

    ``traces`` entries that are None (missing files, failed runs) are
    listed in the chart-side notes file; the report is still produced.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in tables.items():
        path = out / f"{name}.csv"
        table.write(path)
        written.append(path)
    series = {}
    missing = []
    for label in sorted(traces):
        trace = traces[label]
        if trace is None or not trace.records:
            missing.append(label)
            continue
        xs = [float(r.round) for r in trace.records]
        ys = [float(r.val_acc) for r in trace.records]
        series[label] = (xs, ys)
    chart = out / "accuracy_vs_round.svg"
    chart.write_text(svg_line_chart(series, title="validation accuracy by round"))
    written.append(chart)
    if missing:
        notes = out / "missing_traces.txt"
        notes.write_text("\n".join(missing) + "\n")
        written.append(notes)
    return written
