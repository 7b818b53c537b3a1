"""Command-line entry point and end-to-end pipeline.

Offline steps (autoencoder training, causal discovery) use the historical
dataset; online checks (levels II-V) run on the evaluation dataset.
Exit status: 0 = no verdicts, 1 = verdicts emitted, 2 = error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autoencoder import TrainConfig, flag_contextual, load_model, save_model, score, train
from .basic import check_bounds, detect_drift, detect_spikes, detect_stuck
from .causal import CausalGraph, discover, graph_to_csv, graph_to_dot
from .config import ALL_LEVELS, PipelineConfig, load_config
from .core import (
    CouplingSpec,
    SensorMeta,
    TimeSeriesFrame,
    couple,
    fit_normalization,
    gen_coupled_process,
    noise_for_fraction,
)
from .errors import ConfigurationError, FormatError, SchemaError, ValidationError
from .reasoning import ReasoningConfig, classify
from .reporting import (
    HeatmapSpec,
    heatmap_matrix,
    heatmap_to_csv,
    read_verdicts,
    render_heatmap,
    summarize,
    write_report,
)
from .simcheck import crosscheck, read_simulation_csv, reference_simulator, simulation_to_csv

log = logging.getLogger("mtsvalid")

META_COLUMNS = ("name", "unit", "min_bound", "max_bound", "asset_tag")
HEATMAP_CSV = "heatmap.csv"
HEATMAP_SVG = "heatmap.svg"


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _num(x: float) -> str:
    return repr(float(x))


def read_meta(meta_path: str | Path) -> tuple[SensorMeta, ...]:
    """Sensor metadata CSV: one row per sensor, columns among name, unit, min_bound, max_bound, asset_tag."""
    with open(meta_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
        header = rows[0].keys() if rows else []
    if not rows:
        raise FormatError(f"{meta_path}: no sensors listed")
    extra = sorted(set(header) - set(META_COLUMNS))
    if extra or "name" not in header:
        raise SchemaError(f"{meta_path}: meta columns must include 'name' and be among {META_COLUMNS}, got {list(header)}")
    sensors, seen = [], set()
    for k, r in enumerate(rows):
        name = (r.get("name") or "").strip()
        if not name or name in seen:
            raise SchemaError(f"{meta_path}: missing or duplicated sensor name {name!r} on line {k + 2}")
        seen.add(name)
        try:
            lo = float(r["min_bound"]) if r.get("min_bound") else -np.inf
            hi = float(r["max_bound"]) if r.get("max_bound") else np.inf
        except ValueError as exc:
            raise FormatError(f"{meta_path} line {k + 2}: {exc}") from exc
        sensors.append(SensorMeta(k, name, r.get("unit") or "", lo, hi, r.get("asset_tag") or ""))
    return tuple(sensors)


def meta_to_csv(sensors: Sequence[SensorMeta]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(META_COLUMNS)
    for m in sensors:
        lo = _num(m.min_bound) if np.isfinite(m.min_bound) else ""
        hi = _num(m.max_bound) if np.isfinite(m.max_bound) else ""
        w.writerow([m.name, m.unit, lo, hi, m.asset_tag])
    return buf.getvalue()


def frame_to_csv(frame: TimeSeriesFrame) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", *frame.names])
    for t in range(frame.T):
        row = ["" if frame.missing[t, s] else _num(frame.values[t, s]) for s in range(frame.S)]
        w.writerow([_num(frame.timestamps[t]), *row])
    return buf.getvalue()


def ingest(csv_path: str | Path, meta_path: str | Path) -> TimeSeriesFrame:
    """Load a data CSV (timestamp column, then one column per sensor) against its metadata.

    Empty cells become missing samples. Columns may come in any order but
    must match the metadata names exactly.
    """
    sensors = read_meta(meta_path)
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{csv_path}: empty file")
    header = rows[0]
    names = [m.name for m in sensors]
    index = {n: i for i, n in enumerate(names)}
    cols = header[1:]
    for c in cols:
        if c not in index:
            raise SchemaError(f"{csv_path}: unknown column {c!r}")
    if len(set(cols)) != len(cols) or len(cols) != len(names):
        absent = sorted(set(names) - set(cols))
        raise SchemaError(f"{csv_path}: columns do not match sensor metadata (missing {absent})")
    order = [cols.index(n) for n in names]
    body = rows[1:]
    ts = np.empty(len(body))
    vals = np.full((len(body), len(names)), np.nan)
    for t, r in enumerate(body):
        if len(r) != len(header):
            raise FormatError(f"{csv_path}: row {t} has {len(r)} fields, expected {len(header)}")
        try:
            ts[t] = float(r[0])
            for s, c in enumerate(order):
                cell = r[c + 1].strip()
                if cell:
                    vals[t, s] = float(cell)
        except ValueError as exc:
            raise FormatError(f"{csv_path}: row {t}: {exc}") from exc
    missing = np.isnan(vals)
    try:
        return TimeSeriesFrame(ts, vals, missing, sensors)
    except FormatError as exc:
        raise FormatError(f"{csv_path}: {exc}") from exc


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


# ---------------------------------------------------------------------------
# steps
# ---------------------------------------------------------------------------


def generate(config: PipelineConfig) -> dict[str, Path]:
    """Write a synthetic historical/evaluation pair, metadata and reference simulation."""
    g, d = config.gen, config.data
    if config.seed is None:
        raise ConfigurationError("seed is required for synthetic generation")
    targets = {"historical": d.historical, "evaluation": d.evaluation, "meta": d.meta}
    for k, v in targets.items():
        if v is None:
            raise ConfigurationError(f"data.{k} is required for gen")
    if not 0 < g.split < 1:
        raise ConfigurationError("gen.split must lie in (0, 1)")
    spec = noise_for_fraction(config.seed, g.T, CouplingSpec.default(g.S), g.noise_fraction)
    frame, driver = gen_coupled_process(config.seed, g.T, g.S, spec)
    clean = couple(driver, spec)
    lo, hi = clean.min(axis=0), clean.max(axis=0)
    pad = g.bound_margin * (hi - lo)
    sensors = tuple(SensorMeta(s, f"s{s}", "u", float(lo[s] - pad[s]), float(hi[s] + pad[s])) for s in range(g.S))
    frame = frame.with_sensors(sensors)
    cut = int(round(g.T * g.split))
    hist, ev = frame.slice(0, cut), frame.slice(cut, g.T)
    if g.inject != "none":
        ev = inject(ev, g.inject, g.inject_sensor, g.inject_start, g.inject_len, hi[g.inject_sensor] - lo[g.inject_sensor])
    paths = {
        "historical": _write_text(config.path(d.historical), frame_to_csv(hist)),
        "evaluation": _write_text(config.path(d.evaluation), frame_to_csv(ev)),
        "meta": _write_text(config.path(d.meta), meta_to_csv(sensors)),
    }
    if d.simulation is not None:
        band = g.valid_band if g.valid_band is not None else (-np.inf, np.inf)
        sim = reference_simulator(ev, range(g.S), spec, driver[cut:], band)
        paths["simulation"] = _write_text(config.path(d.simulation), simulation_to_csv(sim, ev.names))
    return paths


def inject(frame: TimeSeriesFrame, kind: str, sensor: int, start: int, length: int, span: float) -> TimeSeriesFrame:
    """Return a copy with a synthetic fault on one channel.

    ``flatline`` holds the value at ``start``, ``dropout`` reads 0, and
    ``trend`` adds a ramp reaching 15% of ``span``.
    """
    if not (0 <= sensor < frame.S and 0 <= start and start + length <= frame.T and length > 0):
        raise ConfigurationError(f"injection {kind} at sensor {sensor}, [{start}, {start + length}) is out of range")
    v = frame.values.copy()
    seg = slice(start, start + length)
    if kind == "flatline":
        v[seg, sensor] = v[start, sensor]
    elif kind == "dropout":
        v[seg, sensor] = 0.0
    elif kind == "trend":
        v[seg, sensor] += np.linspace(0.0, 0.15 * span, length)
    else:
        raise ConfigurationError(f"unknown injection {kind!r}")
    return frame.with_values(v)


def train_step(config: PipelineConfig, historical: TimeSeriesFrame):
    c = config.level4
    tc = TrainConfig(
        W=c.window_len,
        L=c.latent_dim,
        hidden_dims=tuple(c.hidden_dims),
        epochs=c.epochs,
        batch_size=c.batch_size,
        learning_rate=c.learning_rate,
        input_dropout_rate=c.input_dropout_rate,
        input_shift_rate=c.input_shift_rate,
        seed=config.seed,
    )
    log.info("training autoencoder on %d samples", historical.T)
    return train([historical], tc)


def _model_path(config: PipelineConfig) -> Path:
    return config.path(config.data.model) if config.data.model else config.out_dir / "model.npz"


def discover_step(config: PipelineConfig, historical: TimeSeriesFrame) -> CausalGraph:
    c = config.level6
    log.info("discovering causal graph (max_lag=%d, alpha=%g)", c.max_lag, c.alpha)
    return discover(historical, max_lag=c.max_lag, alpha=c.alpha, conditioning=c.conditioning)


def heatmap_spec(config: PipelineConfig) -> HeatmapSpec:
    h = config.heatmap
    return HeatmapSpec(h.bucket_len, None, h.clamp_max, h.low_color, h.high_color, h.missing_color)


@dataclass
class PipelineResult:
    status: int
    verdicts: list = field(default_factory=list)
    paths: dict = field(default_factory=dict)
    error: Exception | None = None


def _run(config: PipelineConfig) -> PipelineResult:
    config.check()
    if not config.levels:
        return PipelineResult(0)
    d = config.data
    hist = ingest(config.path(d.historical), config.path(d.meta)) if d.historical else None
    ev = ingest(config.path(d.evaluation), config.path(d.meta)) if d.evaluation else None
    out = config.out_dir
    paths: dict[str, Path] = {}
    verdicts = []
    stats = fit_normalization(hist) if hist is not None else None

    if config.enabled(2):
        verdicts += check_bounds(ev)
    if config.enabled(3):
        c = config.level3
        verdicts += detect_spikes(ev, c.spike_window, c.z_threshold)
        verdicts += detect_stuck(ev, c.stuck_min_run, c.stuck_epsilon)
        verdicts += detect_drift(ev, c.drift_window, c.slope_threshold, stats)

    report = None
    if config.enabled(4):
        if config.level4.train:
            model = train_step(config, hist)
            paths["model"] = _model_path(config)
            paths["model"].parent.mkdir(parents=True, exist_ok=True)
            save_model(model, paths["model"])
        else:
            model = load_model(config.path(d.model))
        if model.norm_stats.train_min.shape[0] != ev.S:
            raise ConfigurationError(f"model covers {model.S} sensors, evaluation data has {ev.S}")
        stats = model.norm_stats
        report = score(model, ev)
        verdicts += flag_contextual(report, config.level4.perr_threshold, config.level4.min_run)

    if config.enabled(5):
        sim = read_simulation_csv(config.path(d.simulation), ev.names)
        verdicts += crosscheck(ev, sim, config.level5.rel_tolerance, config.level5.min_run, stats)

    nodes = tuple(range((ev or hist).S))
    graph = discover_step(config, hist) if config.enabled(6) else None

    r = config.reasoning
    rc = ReasoningConfig(r.coincidence_window, r.neighbor_perr_ratio, r.min_corroborating_neighbors)
    verdicts = classify(verdicts, report, graph if graph is not None else CausalGraph.empty(nodes), rc)

    names = (ev or hist).names
    paths.update(write_report(verdicts, graph, out, names))
    if report is not None:
        spec = heatmap_spec(config)
        matrix = heatmap_matrix(report, spec)
        paths["heatmap_csv"] = _write_text(out / HEATMAP_CSV, heatmap_to_csv(matrix, names, ev.timestamps))
        paths["heatmap_svg"] = _write_text(out / HEATMAP_SVG, render_heatmap(matrix, spec, names, ev.timestamps))
    log.info("%d verdict(s) written to %s", len(verdicts), out)
    return PipelineResult(1 if verdicts else 0, verdicts, paths)


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Run the enabled levels, fuse, and write reports. Errors yield status 2 instead of raising."""
    try:
        return _run(config)
    except (ValidationError, OSError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return PipelineResult(2, error=exc)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _levels(values: list[str] | None) -> tuple[int, ...] | None:
    if not values:
        return None
    if "all" in values:
        return ALL_LEVELS
    return tuple(sorted({int(v) for v in values}))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="pipeline TOML file")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument(
        "--level",
        action="append",
        choices=[*(str(lv) for lv in ALL_LEVELS), "all"],
        help="level to run; repeat for several (overrides config levels)",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mtsvalid", description="Multi-level validation of multivariate sensor data.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write a synthetic coupled-process dataset")
    sub.add_parser("train", parents=[common], help="train the level IV autoencoder on historical data")
    sub.add_parser("validate", parents=[common], help="run the enabled levels, fusion and reporting")
    sub.add_parser("discover", parents=[common], help="learn the causal graph from historical data")
    sub.add_parser("report", parents=[common], help="rebuild summary and heatmap from an existing run")
    return p


def _apply_overrides(config: PipelineConfig, args) -> PipelineConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    lv = _levels(args.level)
    if lv is not None:
        changes["levels"] = lv
    if args.out is not None:
        changes["output"] = type(config.output)(dir=str(Path(args.out).resolve()))
    return config.replace(**changes) if changes else config


def _cmd_train(config: PipelineConfig) -> int:
    if config.seed is None:
        raise ConfigurationError("seed is required for training")
    if config.data.historical is None or config.data.meta is None:
        raise ConfigurationError("train needs data.historical and data.meta")
    hist = ingest(config.path(config.data.historical), config.path(config.data.meta))
    model = train_step(config, hist)
    path = _model_path(config)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    print(path)
    return 0


def _cmd_discover(config: PipelineConfig) -> int:
    if config.level6.alpha is None:
        raise ConfigurationError("level6.alpha is required for discovery")
    if config.data.historical is None or config.data.meta is None:
        raise ConfigurationError("discover needs data.historical and data.meta")
    hist = ingest(config.path(config.data.historical), config.path(config.data.meta))
    graph = discover_step(config, hist)
    out = config.out_dir
    _write_text(out / "graph.csv", graph_to_csv(graph))
    _write_text(out / "graph.dot", graph_to_dot(graph, hist.names))
    print(f"{len(graph.edges)} edge(s) written to {out}")
    return 0


def _cmd_report(config: PipelineConfig) -> int:
    """Re-summarize verdicts from a previous run and, with a model at hand, redraw the heatmap."""
    out = config.out_dir
    verdicts = read_verdicts(out / "verdicts.jsonl")
    _write_text(out / "summary.json", json.dumps(summarize(verdicts), indent=2, sort_keys=True) + "\n")
    model_path = _model_path(config)
    if config.data.evaluation and config.data.meta and model_path.is_file():
        ev = ingest(config.path(config.data.evaluation), config.path(config.data.meta))
        spec = heatmap_spec(config)
        matrix = heatmap_matrix(score(load_model(model_path), ev), spec)
        _write_text(out / HEATMAP_CSV, heatmap_to_csv(matrix, ev.names, ev.timestamps))
        _write_text(out / HEATMAP_SVG, render_heatmap(matrix, spec, ev.names, ev.timestamps))
    return 1 if verdicts else 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _apply_overrides(load_config(args.config), args)
        if args.command == "validate":
            return run_pipeline(config).status
        if args.command == "gen":
            for k, p in generate(config).items():
                print(f"{k}: {p}")
            return 0
        if args.command == "train":
            return _cmd_train(config)
        if args.command == "discover":
            return _cmd_discover(config)
        return _cmd_report(config)
    except (ValidationError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
