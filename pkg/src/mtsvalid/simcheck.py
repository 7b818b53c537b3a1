"""Cross-checking measured signals against simulation-model predictions."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import CouplingSpec, NormStats, TimeSeriesFrame, couple
from .errors import AlignmentError, FormatError, InvalidArgumentError, SchemaError
from .verdicts import AnomalyVerdict, Kind, Level, runs

VALID_COLUMN = "valid"


@dataclass(frozen=True, eq=False)
class SimulationResult:
    """Model predictions for some sensors, plus where the model's assumptions hold."""

    sensor_ids: tuple[int, ...]
    predicted: np.ndarray
    validity_mask: np.ndarray
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        pred = np.asarray(self.predicted, dtype=float)
        if pred.ndim == 1:
            pred = pred[:, None]
        mask = np.asarray(self.validity_mask, dtype=bool)
        ids = tuple(int(s) for s in self.sensor_ids)
        if pred.shape[1] != len(ids):
            raise AlignmentError(f"{pred.shape[1]} predicted columns for {len(ids)} sensors")
        if mask.shape != (pred.shape[0],):
            raise AlignmentError(f"validity mask of length {mask.shape} for {pred.shape[0]} predictions")
        object.__setattr__(self, "predicted", pred)
        object.__setattr__(self, "validity_mask", mask)
        object.__setattr__(self, "sensor_ids", ids)
        if self.timestamps is not None:
            object.__setattr__(self, "timestamps", np.asarray(self.timestamps, dtype=float))

    @property
    def T(self) -> int:
        return self.predicted.shape[0]


def _check_alignment(frame: TimeSeriesFrame, sim: SimulationResult):
    if sim.T != frame.T:
        raise AlignmentError(f"simulation has {sim.T} samples, frame has {frame.T}")
    if sim.timestamps is not None and not np.array_equal(sim.timestamps, frame.timestamps):
        raise AlignmentError("simulation timestamps do not match the measured frame")
    for s in sim.sensor_ids:
        if not 0 <= s < frame.S:
            raise SchemaError(f"simulation covers unknown sensor {s}")


def _scales(frame: TimeSeriesFrame, sim: SimulationResult, stats: NormStats | None) -> np.ndarray:
    if stats is not None:
        return np.asarray([stats.range[s] for s in sim.sensor_ids])
    spans = np.asarray([frame.sensors[s].span for s in sim.sensor_ids])
    if not np.all(np.isfinite(spans)):
        bad = frame.sensors[sim.sensor_ids[int(np.argmax(~np.isfinite(spans)))]].name
        raise InvalidArgumentError(f"sensor {bad!r} needs finite bounds (or training stats) to scale residuals")
    return spans


def residuals(frame: TimeSeriesFrame, sim: SimulationResult, stats: NormStats | None = None) -> np.ndarray:
    """``|measured - predicted|`` over the sensor range, one column per simulated sensor.

    The range is the sensor's bound span, or the training range when
    ``stats`` is given.
    """
    _check_alignment(frame, sim)
    measured = frame.values[:, list(sim.sensor_ids)]
    return np.abs(measured - sim.predicted) / _scales(frame, sim, stats)


def crosscheck(
    frame: TimeSeriesFrame,
    sim: SimulationResult,
    rel_tolerance: float = 0.05,
    min_run: int = 10,
    stats: NormStats | None = None,
) -> list[AnomalyVerdict]:
    """Runs of at least ``min_run`` valid-mode samples whose residual exceeds ``rel_tolerance``.

    Samples outside the model's valid operating mode are never flagged.
    """
    if rel_tolerance <= 0:
        raise InvalidArgumentError("rel_tolerance must be > 0")
    r = residuals(frame, sim, stats)
    out = []
    for k, s in enumerate(sim.sensor_ids):
        with np.errstate(invalid="ignore"):
            hot = sim.validity_mask & ~frame.missing[:, s] & (r[:, k] > rel_tolerance)
        for a, b in runs(hot, min_len=max(min_run, 1)):
            out.append(AnomalyVerdict(Level.L5, (s,), a, b, float(r[a : b + 1, k].mean()), Kind.SIMULATION_MISMATCH))
    return out


def coverage_summary(
    frame: TimeSeriesFrame,
    sim: SimulationResult,
    rel_tolerance: float = 0.05,
    stats: NormStats | None = None,
) -> dict:
    """How much of the frame the simulation could check, and how much deviated outside its valid mode."""
    r = residuals(frame, sim, stats)
    valid = sim.validity_mask
    per_sensor = {}
    for k, s in enumerate(sim.sensor_ids):
        observed = ~frame.missing[:, s]
        with np.errstate(invalid="ignore"):
            off = observed & ~valid & (r[:, k] > rel_tolerance)
        per_sensor[frame.sensors[s].name] = {
            "checked": int(np.count_nonzero(observed & valid)),
            "unchecked": int(np.count_nonzero(observed & ~valid)),
            "deviating_unchecked": int(np.count_nonzero(off)),
        }
    return {
        "samples": frame.T,
        "checked_fraction": float(valid.mean()) if frame.T else 0.0,
        "sensors": per_sensor,
    }


def reference_simulator(
    frame: TimeSeriesFrame,
    sensor_subset: Sequence[int],
    coupling_spec: CouplingSpec,
    driver: np.ndarray,
    band: tuple[float, float] = (-np.inf, np.inf),
) -> SimulationResult:
    """Noiseless coupled-process equations as a stand-in process model.

    ``driver`` is the latent driver returned by the generator (with its
    history prefix). The model is deemed valid while the driver at frame
    time ``t`` stays inside ``band``.
    """
    subset = [int(s) for s in sensor_subset]
    for s in subset:
        if not (0 <= s < frame.S and s < coupling_spec.S):
            raise SchemaError(f"unknown sensor {s}")
    if len(driver) != frame.T + coupling_spec.lead:
        raise AlignmentError(
            f"driver has {len(driver)} samples, expected T + lead = {frame.T + coupling_spec.lead}"
        )
    predicted = couple(np.asarray(driver, dtype=float), coupling_spec, subset)
    d = np.asarray(driver)[coupling_spec.lead :]
    valid = (d >= band[0]) & (d <= band[1])
    return SimulationResult(tuple(subset), predicted, valid, frame.timestamps)


def simulation_to_csv(sim: SimulationResult, names: Sequence[str]) -> str:
    ts = sim.timestamps if sim.timestamps is not None else np.arange(sim.T, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", *[names[s] for s in sim.sensor_ids], VALID_COLUMN])
    for t in range(sim.T):
        w.writerow([repr(float(ts[t])), *[repr(float(v)) for v in sim.predicted[t]], int(sim.validity_mask[t])])
    return buf.getvalue()


def simulation_from_csv(text: str, names: Sequence[str]) -> SimulationResult:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError("empty simulation CSV")
    header = rows[0]
    if len(header) < 3 or header[0] != "timestamp" or header[-1] != VALID_COLUMN:
        raise FormatError(f"simulation CSV header must be timestamp,<sensors...>,{VALID_COLUMN}")
    index = {n: i for i, n in enumerate(names)}
    ids = []
    for col in header[1:-1]:
        if col not in index:
            raise SchemaError(f"simulation CSV column {col!r} is not a known sensor")
        ids.append(index[col])
    body = [r for r in rows[1:] if r]
    try:
        ts = np.array([float(r[0]) for r in body])
        pred = np.array([[float(v) for v in r[1:-1]] for r in body]).reshape(len(body), len(ids))
        valid = np.array([int(r[-1]) for r in body], dtype=int)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"malformed simulation CSV: {exc}") from exc
    if np.any((valid != 0) & (valid != 1)):
        raise FormatError(f"{VALID_COLUMN} column must hold 0 or 1")
    return SimulationResult(tuple(ids), pred, valid.astype(bool), ts)


def read_simulation_csv(path: str | Path, names: Sequence[str]) -> SimulationResult:
    return simulation_from_csv(Path(path).read_text(), names)
