"""
Time-series data model, windowing, normalization and synthetic generators.

Every frame is uniformly sampled. Missing samples are carried in a boolean
mask alongside the value matrix; their entries in ``values`` are NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateChannelError,
    EmptyInputError,
    FormatError,
    InstabilityError,
    InvalidArgumentError,
    ShapeError,
)

DEFAULT_STEP = 60.0  # seconds; minute granularity


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SensorMeta:
    id: int
    name: str
    unit: str = ""
    min_bound: float = -np.inf
    max_bound: float = np.inf
    asset_tag: str = ""

    def __post_init__(self):
        if not self.min_bound < self.max_bound:
            raise InvalidArgumentError(
                f"sensor {self.name!r}: min_bound {self.min_bound} must be < max_bound {self.max_bound}"
            )

    @property
    def span(self) -> float:
        return self.max_bound - self.min_bound


@dataclass(frozen=True, eq=False)
class TimeSeriesFrame:
    """Uniformly sampled ``T x S`` matrix of sensor values.

    Parameters
    ----------
    timestamps : array of shape (T,)
        Strictly increasing, constant step (seconds).
    values : array of shape (T, S)
        Process units. NaN wherever ``missing`` is true.
    missing : bool array of shape (T, S)
    sensors : tuple of SensorMeta
        ``sensors[s].id == s`` for every column.
    """

    timestamps: np.ndarray
    values: np.ndarray
    missing: np.ndarray
    sensors: tuple[SensorMeta, ...]

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ShapeError(f"values must be 2-D, got shape {vals.shape}")
        miss = np.asarray(self.missing, dtype=bool)
        if miss.shape != vals.shape:
            raise ShapeError(f"missing mask shape {miss.shape} != values shape {vals.shape}")
        if ts.shape != (vals.shape[0],):
            raise ShapeError(f"{ts.shape[0] if ts.ndim else 0} timestamps for {vals.shape[0]} rows")
        sensors = tuple(self.sensors)
        if len(sensors) != vals.shape[1]:
            raise ShapeError(f"{len(sensors)} sensors for {vals.shape[1]} columns")
        for s, meta in enumerate(sensors):
            if meta.id != s:
                raise ShapeError(f"sensor {meta.name!r} has id {meta.id} but sits in column {s}")
        if len(ts) > 1:
            steps = np.diff(ts)
            if np.any(steps <= 0):
                row = int(np.argmax(steps <= 0)) + 1
                raise FormatError(f"timestamps not strictly increasing at row {row}")
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
                row = int(np.argmax(~np.isclose(steps, steps[0], rtol=1e-9, atol=0.0))) + 1
                raise FormatError(f"non-uniform sampling at row {row}")
        bad = ~np.isfinite(vals) & ~miss
        if bad.any():
            t, s = map(int, np.argwhere(bad)[0])
            raise InvalidArgumentError(f"non-finite value at row {t}, sensor {sensors[s].name!r}")
        vals = np.where(miss, np.nan, vals)
        object.__setattr__(self, "timestamps", _frozen(ts))
        object.__setattr__(self, "values", _frozen(vals))
        object.__setattr__(self, "missing", _frozen(miss))
        object.__setattr__(self, "sensors", sensors)

    @classmethod
    def from_values(
        cls,
        values,
        sensors: Sequence[SensorMeta] | None = None,
        timestamps=None,
        missing=None,
        step: float = DEFAULT_STEP,
    ) -> "TimeSeriesFrame":
        vals = np.asarray(values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if missing is None:
            missing = np.isnan(vals)
        if timestamps is None:
            timestamps = np.arange(vals.shape[0]) * step
        if sensors is None:
            sensors = default_sensors(vals.shape[1])
        return cls(timestamps, vals, missing, tuple(sensors))

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def S(self) -> int:
        return self.values.shape[1]

    @property
    def step(self) -> float:
        return float(self.timestamps[1] - self.timestamps[0]) if self.T > 1 else DEFAULT_STEP

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.sensors]

    def with_values(self, values, missing=None) -> "TimeSeriesFrame":
        vals = np.asarray(values, dtype=float)
        if missing is None:
            missing = np.isnan(vals)
        return TimeSeriesFrame(self.timestamps, vals, missing, self.sensors)

    def slice(self, start: int, stop: int) -> "TimeSeriesFrame":
        return TimeSeriesFrame(
            self.timestamps[start:stop], self.values[start:stop], self.missing[start:stop], self.sensors
        )

    def select(self, columns: Sequence[int]) -> "TimeSeriesFrame":
        """Sub-frame over ``columns``, re-indexed so ids match the new positions."""
        cols = list(columns)
        sensors = tuple(replace(self.sensors[c], id=i) for i, c in enumerate(cols))
        return TimeSeriesFrame(self.timestamps, self.values[:, cols], self.missing[:, cols], sensors)

    def with_sensors(self, sensors: Sequence[SensorMeta]) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.timestamps, self.values, self.missing, tuple(sensors))


def default_sensors(S: int, min_bound: float = -np.inf, max_bound: float = np.inf) -> tuple[SensorMeta, ...]:
    return tuple(SensorMeta(s, f"s{s}", min_bound=min_bound, max_bound=max_bound) for s in range(S))


@dataclass(frozen=True, eq=False)
class Window:
    start_index: int
    length: int
    data: np.ndarray


def _window_starts(missing: np.ndarray, W: int, stride: int) -> np.ndarray:
    T = missing.shape[0]
    row_bad = missing.any(axis=1).astype(np.int64)
    # bad rows in [t, t+W) via prefix sums
    csum = np.concatenate([[0], np.cumsum(row_bad)])
    starts = np.arange(0, T - W + 1, stride)
    return starts[(csum[starts + W] - csum[starts]) == 0]


def extract_windows(frame: TimeSeriesFrame, W: int, stride: int = 1) -> list[Window]:
    """Complete windows of length ``W`` starting at ``0, stride, 2*stride, ...``.

    Windows overlapping any missing sample are skipped.
    """
    if stride < 1:
        raise InvalidArgumentError(f"stride must be >= 1, got {stride}")
    if W < 1:
        raise InvalidArgumentError(f"window length must be >= 1, got {W}")
    if W > frame.T:
        raise EmptyInputError(f"window length {W} exceeds series length {frame.T}")
    return [
        Window(int(t), W, frame.values[t : t + W])
        for t in _window_starts(frame.missing, W, stride)
    ]


def window_array(frame: TimeSeriesFrame, W: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Stacked complete windows as an ``(N, W, S)`` array plus their start indices."""
    if stride < 1:
        raise InvalidArgumentError(f"stride must be >= 1, got {stride}")
    if W > frame.T:
        raise EmptyInputError(f"window length {W} exceeds series length {frame.T}")
    starts = _window_starts(frame.missing, W, stride)
    view = np.lib.stride_tricks.sliding_window_view(frame.values, W, axis=0)  # (T-W+1, S, W)
    return np.ascontiguousarray(view[starts].transpose(0, 2, 1)), starts


@dataclass(frozen=True, eq=False)
class NormStats:
    train_min: np.ndarray
    train_max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.train_min, dtype=float)
        hi = np.asarray(self.train_max, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ShapeError("train_min and train_max must be 1-D of equal length")
        if np.any(hi <= lo):
            s = int(np.argmax(hi <= lo))
            raise DegenerateChannelError(str(s))
        object.__setattr__(self, "train_min", _frozen(lo))
        object.__setattr__(self, "train_max", _frozen(hi))

    @property
    def range(self) -> np.ndarray:
        return self.train_max - self.train_min

    def __len__(self) -> int:
        return len(self.train_min)


def fit_normalization(frame: TimeSeriesFrame) -> NormStats:
    """Per-sensor min and max over non-missing samples."""
    for s, meta in enumerate(frame.sensors):
        if np.count_nonzero(~frame.missing[:, s]) < 2:
            raise EmptyInputError(f"sensor {meta.name!r} has fewer than 2 observed samples")
    lo = np.nanmin(frame.values, axis=0)
    hi = np.nanmax(frame.values, axis=0)
    for s, meta in enumerate(frame.sensors):
        if hi[s] <= lo[s]:
            raise DegenerateChannelError(meta.name)
    return NormStats(lo, hi)


def _check_stats(frame: TimeSeriesFrame, stats: NormStats):
    if len(stats) != frame.S:
        raise ShapeError(f"normalization covers {len(stats)} sensors, frame has {frame.S}")


def normalize(frame: TimeSeriesFrame, stats: NormStats) -> TimeSeriesFrame:
    _check_stats(frame, stats)
    return frame.with_values((frame.values - stats.train_min) / stats.range, frame.missing)


def denormalize(frame: TimeSeriesFrame, stats: NormStats) -> TimeSeriesFrame:
    _check_stats(frame, stats)
    return frame.with_values(frame.values * stats.range + stats.train_min, frame.missing)


# ---------------------------------------------------------------------------
# Synthetic coupled process (stand-in for the plant data)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CouplingSpec:
    """Sensor j reads ``gain[j] * d(t - delay[j]) + offset[j] + N(0, noise[j])``.

    The latent driver ``d`` is a random walk reflected at ``+-walk_bound``
    plus a sinusoid. ``walk_reversion < 1`` adds mean reversion and
    ``walk_bound = inf`` removes the reflecting barriers.
    """

    gains: tuple[float, ...]
    offsets: tuple[float, ...]
    delays: tuple[int, ...]
    noise: tuple[float, ...]
    walk_step: float = 0.05
    walk_reversion: float = 1.0
    walk_bound: float = 1.0
    sin_amplitude: float = 1.0
    sin_period: float = 250.0

    def __post_init__(self):
        n = len(self.gains)
        for name in ("offsets", "delays", "noise"):
            if len(getattr(self, name)) != n:
                raise ShapeError(f"coupling spec: {name} has {len(getattr(self, name))} entries, expected {n}")
        if any(d < 0 for d in self.delays):
            raise InvalidArgumentError("coupling delays must be >= 0")
        if any(s < 0 for s in self.noise):
            raise InvalidArgumentError("noise levels must be >= 0")

    @property
    def S(self) -> int:
        return len(self.gains)

    @property
    def lead(self) -> int:
        return max(self.delays) if self.delays else 0

    @classmethod
    def default(cls, S: int, noise: float | Sequence[float] = 0.0) -> "CouplingSpec":
        gains = tuple((1.0 + 0.25 * (j % 4)) * (-1.0 if j % 3 == 2 else 1.0) for j in range(S))
        delays = tuple((3 * j) % 11 for j in range(S))
        # keeps every channel positive with raw zero a little below its range
        offsets = tuple(5.0 * abs(g) for g in gains)
        if np.isscalar(noise):
            noise = (float(noise),) * S
        return cls(gains, offsets, delays, tuple(float(n) for n in noise))

    def with_noise(self, noise: Sequence[float]) -> "CouplingSpec":
        return replace(self, noise=tuple(float(n) for n in noise))


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def gen_driver(seed: int, n: int, spec: CouplingSpec) -> np.ndarray:
    rng = _streams(seed, 2)[0]
    eps = rng.standard_normal(n)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    walk = np.empty(n)
    w = 0.0
    r, step, bound = spec.walk_reversion, spec.walk_step, spec.walk_bound
    for t in range(n):
        w = r * w + step * eps[t]
        if w > bound:
            w = 2.0 * bound - w
        elif w < -bound:
            w = -2.0 * bound - w
        walk[t] = w
    return walk + spec.sin_amplitude * np.sin(2.0 * np.pi * np.arange(n) / spec.sin_period + phase)


def couple(driver: np.ndarray, spec: CouplingSpec, sensors: Sequence[int] | None = None) -> np.ndarray:
    """Noiseless sensor readings from a driver that carries ``spec.lead`` samples of history.

    ``driver[spec.lead + t]`` is the driver at frame time ``t``.
    """
    sensors = range(spec.S) if sensors is None else sensors
    lead = spec.lead
    T = len(driver) - lead
    out = np.empty((T, len(sensors)))
    for k, j in enumerate(sensors):
        d = spec.delays[j]
        out[:, k] = spec.gains[j] * driver[lead - d : lead - d + T] + spec.offsets[j]
    return out


def gen_coupled_process(
    seed: int,
    T: int,
    S: int,
    coupling_spec: CouplingSpec | None = None,
    sensors: Sequence[SensorMeta] | None = None,
) -> tuple[TimeSeriesFrame, np.ndarray]:
    """Sensors driven by one shared latent process with per-sensor gain, offset, delay and noise.

    Returns the frame and the latent driver, which has ``spec.lead`` extra
    samples of history in front (see :func:`couple`).
    """
    spec = coupling_spec if coupling_spec is not None else CouplingSpec.default(S)
    if T < 200 or S < 3:
        raise InvalidArgumentError(f"need T >= 200 and S >= 3, got T={T}, S={S}")
    if spec.S != S:
        raise ShapeError(f"coupling spec describes {spec.S} sensors, S={S}")
    if spec.lead >= T:
        raise InvalidArgumentError(f"delay {spec.lead} must be < T={T}")
    driver = gen_driver(seed, T + spec.lead, spec)
    clean = couple(driver, spec)
    noise_rng = _streams(seed, 2)[1]
    values = clean + noise_rng.standard_normal((T, S)) * np.asarray(spec.noise)
    return TimeSeriesFrame.from_values(values, sensors=sensors), driver


def noise_for_fraction(seed: int, T: int, spec: CouplingSpec, fraction: float) -> CouplingSpec:
    """Copy of ``spec`` with each channel's noise set to ``fraction`` of its noiseless range."""
    clean = couple(gen_driver(seed, T + spec.lead, spec), spec)
    return spec.with_noise(fraction * (clean.max(axis=0) - clean.min(axis=0)))


# ---------------------------------------------------------------------------
# Linear vector-autoregressive process with known lagged edges
# ---------------------------------------------------------------------------


class VarEdge(NamedTuple):
    source: int
    target: int
    delay: int
    coefficient: float


def companion_radius(S: int, adjacency: Sequence[VarEdge], rho: float = 0.0) -> float:
    edges = [VarEdge(*e) for e in adjacency]
    p = max([e.delay for e in edges] + [1])
    A = np.zeros((S * p, S * p))
    for e in edges:
        A[e.target, (e.delay - 1) * S + e.source] += e.coefficient
    for j in range(S):
        A[j, j] += rho
    if p > 1:
        A[S:, :-S] = np.eye(S * (p - 1))
    return float(np.max(np.abs(np.linalg.eigvals(A))))


def gen_var_process(
    seed: int,
    T: int,
    S: int,
    adjacency: Sequence[VarEdge | tuple],
    noise_sigma: float,
    rho: float = 0.0,
    burn_in: int = 100,
) -> TimeSeriesFrame:
    """``x_j(t) = sum(coef * x_i(t - delay)) + rho * x_j(t - 1) + N(0, noise_sigma)``.

    The first ``max_delay`` rows of the underlying recursion are standard
    normal draws so that a zero-noise process is not identically zero.
    """
    edges = [VarEdge(*e) for e in adjacency]
    for e in edges:
        if not (0 <= e.source < S and 0 <= e.target < S):
            raise InvalidArgumentError(f"edge {e} references a node outside 0..{S - 1}")
        if e.delay < 1:
            raise InvalidArgumentError(f"edge {e} needs delay >= 1")
    radius = companion_radius(S, edges, rho)
    if radius >= 1.0:
        raise InstabilityError(f"companion spectral radius {radius:.4f} >= 1")
    p = max([e.delay for e in edges] + [1])
    rng = np.random.default_rng(seed)
    n = p + burn_in + T
    x = np.zeros((n, S))
    x[:p] = rng.standard_normal((p, S))
    eps = rng.standard_normal((n, S)) * noise_sigma
    src = np.array([e.source for e in edges], dtype=int)
    tgt = np.array([e.target for e in edges], dtype=int)
    lag = np.array([e.delay for e in edges], dtype=int)
    coef = np.array([e.coefficient for e in edges], dtype=float)
    for t in range(p, n):
        row = rho * x[t - 1] + eps[t]
        if len(edges):
            np.add.at(row, tgt, coef * x[t - lag, src])
        x[t] = row
    return TimeSeriesFrame.from_values(x[p + burn_in :])


def random_var_adjacency(
    seed: int,
    S: int,
    n_edges: int,
    delays: Sequence[int] = (1, 2, 3),
    coef_range: tuple[float, float] = (0.5, 0.9),
) -> list[VarEdge]:
    """Random acyclic edge set; each coefficient has magnitude in ``coef_range`` and random sign."""
    if n_edges > S * (S - 1) // 2:
        raise InvalidArgumentError(f"an acyclic graph on {S} nodes has at most {S * (S - 1) // 2} edges")
    rng = np.random.default_rng(seed)
    order = rng.permutation(S)
    pairs = [(int(order[a]), int(order[b])) for a in range(S) for b in range(a + 1, S)]
    chosen = rng.choice(len(pairs), size=n_edges, replace=False)
    edges = []
    for k in sorted(int(c) for c in chosen):
        src, tgt = pairs[k]
        mag = rng.uniform(*coef_range)
        sign = rng.choice([-1.0, 1.0])
        edges.append(VarEdge(src, tgt, int(rng.choice(delays)), float(sign * mag)))
    return edges
