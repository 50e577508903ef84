"""CSV and SVG emission for experiment results.

Floats are serialized with 17 significant digits and always carry a decimal
point or exponent, so re-reading a CSV reproduces the in-memory values (and
their types) exactly.  The SVG writer is a dependency-free polyline chart for
post-hoc inspection of sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence


@dataclass
class SweepResult:
    """Tabular experiment output: a header, rows, and reproducibility metadata."""

    columns: tuple[str, ...]
    rows: list[tuple]
    metadata: dict[str, str] = field(default_factory=dict)


def format_value(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        text = format(value, ".17g")
        if not any(ch in text for ch in ".enai"):  # e/inf/nan markers keep floatness
            text += ".0"
        return text
    return str(value)


def parse_value(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(path: str | Path, result: SweepResult) -> None:
    lines = [f"# {key} = {value}" for key, value in sorted(result.metadata.items())]
    lines.append(",".join(result.columns))
    for row in result.rows:
        lines.append(",".join(format_value(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path: str | Path) -> SweepResult:
    metadata: dict[str, str] = {}
    columns: tuple[str, ...] | None = None
    rows: list[tuple] = []
    for raw in Path(path).read_text().splitlines():
        if not raw.strip():
            continue
        if raw.startswith("#"):
            key, _, value = raw[1:].partition("=")
            metadata[key.strip()] = value.strip()
            continue
        if columns is None:
            columns = tuple(raw.split(","))
            continue
        rows.append(tuple(parse_value(cell) for cell in raw.split(",")))
    if columns is None:
        raise ValueError(f"{path}: no header row found")
    return SweepResult(columns=columns, rows=rows, metadata=metadata)


def write_line_chart_svg(
    path: str | Path,
    title: str,
    x_label: str,
    y_label: str,
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    width: int = 640,
    height: int = 420,
) -> None:
    """Plot one or more (label, xs, ys) series as polylines with auto-scaled axes."""
    margin = 60
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    if not xs_all:
        raise ValueError("nothing to plot")
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x: float) -> float:
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - 2 * margin)

    def sy(y: float) -> float:
        return height - margin - (y - y_lo) / (y_hi - y_lo) * (height - 2 * margin)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="15">{title}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 16}" text-anchor="middle" font-size="12">'
        f"{x_label}</text>",
        f'<text x="18" y="{height / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 18 {height / 2})">{y_label}</text>',
    ]
    for tick in range(5):
        frac = tick / 4
        x_val = x_lo + frac * (x_hi - x_lo)
        y_val = y_lo + frac * (y_hi - y_lo)
        parts.append(
            f'<text x="{sx(x_val):.1f}" y="{height - margin + 16}" text-anchor="middle" '
            f'font-size="10">{x_val:.3g}</text>'
        )
        parts.append(
            f'<text x="{margin - 6}" y="{sy(y_val):.1f}" text-anchor="end" '
            f'font-size="10">{y_val:.3g}</text>'
        )
    for idx, (label, xs, ys) in enumerate(series):
        color = palette[idx % len(palette)]
        points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        parts.append(
            f'<text x="{width - margin + 4}" y="{margin + 14 * idx}" font-size="11" '
            f'fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
