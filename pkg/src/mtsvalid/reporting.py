"""Heatmaps of reconstruction error and machine-readable anomaly reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .autoencoder import ReconstructionReport
from .causal import CausalGraph, graph_to_csv, graph_to_dot
from .errors import InvalidArgumentError, ReportWriteError
from .verdicts import AnomalyVerdict, Kind, Label, Level

VERDICTS_FILE = "verdicts.jsonl"
SUMMARY_FILE = "summary.json"
GRAPH_CSV_FILE = "graph.csv"
GRAPH_DOT_FILE = "graph.dot"


@dataclass(frozen=True)
class HeatmapSpec:
    bucket_len: int = 60  # one hour of minute samples
    sensor_order: tuple[int, ...] | None = None
    clamp_max: float = 20.0
    low_color: str = "#2c7bb6"
    high_color: str = "#d7191c"
    missing_color: str = "#bdbdbd"
    cell_width: int = 12
    cell_height: int = 16

    def __post_init__(self):
        if self.bucket_len < 1:
            raise InvalidArgumentError("bucket_len must be >= 1")
        if self.clamp_max <= 0:
            raise InvalidArgumentError("clamp_max must be > 0")

    def order(self, S: int) -> tuple[int, ...]:
        if self.sensor_order is None:
            return tuple(range(S))
        if sorted(self.sensor_order) != list(range(S)):
            raise InvalidArgumentError(f"sensor_order {self.sensor_order} is not a permutation of 0..{S - 1}")
        return tuple(self.sensor_order)


@dataclass(frozen=True, eq=False)
class HeatmapMatrix:
    """Mean percentage error per (sensor row, time bucket); NaN where a bucket has no coverage."""

    values: np.ndarray
    bucket_starts: np.ndarray
    sensor_order: tuple[int, ...]


def heatmap_matrix(report: ReconstructionReport, spec: HeatmapSpec = HeatmapSpec()) -> HeatmapMatrix:
    order = spec.order(report.S)
    T, B = report.T, spec.bucket_len
    starts = np.arange(0, T, B)
    perr = np.where(report.coverage, report.perr, 0.0)
    sums = np.add.reduceat(perr, starts, axis=0) if T else np.zeros((0, report.S))
    counts = np.add.reduceat(report.coverage.astype(np.int64), starts, axis=0) if T else np.zeros((0, report.S))
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return HeatmapMatrix(means.T[list(order)], starts, order)


def _hex(c: str) -> np.ndarray:
    c = c.lstrip("#")
    return np.array([int(c[k : k + 2], 16) for k in (0, 2, 4)], dtype=float)


def cell_color(value: float, spec: HeatmapSpec) -> str:
    frac = min(max(value, 0.0), spec.clamp_max) / spec.clamp_max
    rgb = _hex(spec.low_color) + frac * (_hex(spec.high_color) - _hex(spec.low_color))
    return "#" + "".join(f"{int(round(v)):02x}" for v in rgb)


def render_heatmap(
    matrix: HeatmapMatrix,
    spec: HeatmapSpec = HeatmapSpec(),
    names: Sequence[str] | None = None,
    timestamps: Sequence[float] | None = None,
) -> str:
    """SVG document with one rectangle per cell; output is byte-stable for equal inputs."""
    vals = matrix.values
    rows, cols = vals.shape
    cw, ch = spec.cell_width, spec.cell_height
    left, top = 90, 20
    width = left + cols * cw + 20
    height = top + rows * ch + 50
    low, high = spec.low_color.lower(), spec.high_color.lower()
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        "<defs>",
        '<pattern id="hatch" patternUnits="userSpaceOnUse" width="4" height="4">',
        f'<path d="M0,4 L4,0" stroke="{spec.missing_color}" stroke-width="1"/>',
        "</pattern>",
        '<linearGradient id="scale">'
        f'<stop offset="0" stop-color="{low}"/><stop offset="1" stop-color="{high}"/></linearGradient>',
        "</defs>",
        '<g class="cells">',
    ]
    for r in range(rows):
        for c in range(cols):
            x, y = left + c * cw, top + r * ch
            v = vals[r, c]
            if np.isnan(v):
                out.append(
                    f'<rect class="cell missing" x="{x}" y="{y}" width="{cw}" height="{ch}" '
                    f'fill="url(#hatch)" stroke="{spec.missing_color}" stroke-width="0.5"/>'
                )
            else:
                out.append(
                    f'<rect class="cell" x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{cell_color(v, spec)}">'
                    f"<title>{v:.3f}%</title></rect>"
                )
    out.append("</g>")
    out.append('<g class="labels" font-family="sans-serif" font-size="10">')
    for r, s in enumerate(matrix.sensor_order):
        label = names[s] if names is not None else f"s{s}"
        out.append(f'<text x="{left - 4}" y="{top + r * ch + ch * 0.7:.1f}" text-anchor="end">{escape(label)}</text>')
    step = max(1, cols // 10)
    for c in range(0, cols, step):
        start = int(matrix.bucket_starts[c])
        tick = f"{timestamps[start]:g}" if timestamps is not None else str(start)
        out.append(f'<text x="{left + c * cw}" y="{top + rows * ch + 12}">{escape(tick)}</text>')
    out.append("</g>")
    ly = top + rows * ch + 22
    out.append(f'<rect class="legend" x="{left}" y="{ly}" width="120" height="8" style="fill:url(#scale)"/>')
    out.append(
        f'<text x="{left + 124}" y="{ly + 8}" font-family="sans-serif" font-size="10">'
        f"0 .. {spec.clamp_max:g}% reconstruction error</text>"
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap_to_csv(matrix: HeatmapMatrix, names: Sequence[str], timestamps: Sequence[float] | None = None) -> str:
    """Unclamped matrix, one row per sensor; header carries bucket start timestamps."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    starts = [float(timestamps[int(b)]) if timestamps is not None else float(b) for b in matrix.bucket_starts]
    w.writerow(["sensor", *[repr(s) for s in starts]])
    for r, s in enumerate(matrix.sensor_order):
        w.writerow([names[s], *["" if np.isnan(v) else repr(float(v)) for v in matrix.values[r]]])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# verdict and graph files
# ---------------------------------------------------------------------------


def verdicts_to_jsonl(verdicts: Sequence[AnomalyVerdict]) -> str:
    return "".join(json.dumps(v.to_dict(), sort_keys=True) + "\n" for v in verdicts)


def verdicts_from_jsonl(text: str) -> list[AnomalyVerdict]:
    return [AnomalyVerdict.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def read_verdicts(path: str | Path) -> list[AnomalyVerdict]:
    return verdicts_from_jsonl(Path(path).read_text())


def summarize(verdicts: Sequence[AnomalyVerdict]) -> dict:
    def count(attr, enum):
        return {e.value: sum(1 for v in verdicts if getattr(v, attr) is e) for e in enum}

    return {
        "total": len(verdicts),
        "by_level": count("level", Level),
        "by_kind": count("kind", Kind),
        "by_label": count("label", Label),
    }


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise ReportWriteError(path, exc.strerror or str(exc)) from exc


def write_report(
    verdicts: Sequence[AnomalyVerdict],
    graph: CausalGraph | None,
    out_dir: str | Path,
    names: Sequence[str] | None = None,
) -> dict[str, Path]:
    """Write verdicts (JSON lines), a count summary and, if given, the causal graph (CSV + DOT)."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportWriteError(out, exc.strerror or str(exc)) from exc
    paths = {"verdicts": out / VERDICTS_FILE, "summary": out / SUMMARY_FILE}
    _write(paths["verdicts"], verdicts_to_jsonl(verdicts))
    _write(paths["summary"], json.dumps(summarize(verdicts), indent=2, sort_keys=True) + "\n")
    if graph is not None:
        paths["graph_csv"] = out / GRAPH_CSV_FILE
        paths["graph_dot"] = out / GRAPH_DOT_FILE
        _write(paths["graph_csv"], graph_to_csv(graph))
        _write(paths["graph_dot"], graph_to_dot(graph, names))
    return paths
