"""
Static amplitude limits and univariate detectors.

Each detector looks at one sensor at a time; the only context is the
signal itself.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import NormStats, TimeSeriesFrame
from .errors import EmptyInputError, InvalidArgumentError
from .verdicts import AnomalyVerdict, Kind, Level, runs

MAD_SCALE = 1.4826


def check_bounds(frame: TimeSeriesFrame) -> list[AnomalyVerdict]:
    """One verdict per contiguous run of samples outside ``[min_bound, max_bound]``.

    Bounds are inclusive. The score is the largest excess in the run divided
    by the bound span.
    """
    out = []
    for s, meta in enumerate(frame.sensors):
        x = frame.values[:, s]
        with np.errstate(invalid="ignore"):
            excess = np.maximum(x - meta.max_bound, meta.min_bound - x)
        excess = np.where(frame.missing[:, s], 0.0, excess)
        span = meta.span
        for a, b in runs(excess > 0):
            score = float(excess[a : b + 1].max() / span) if np.isfinite(span) else float("inf")
            out.append(AnomalyVerdict(Level.L2, (s,), a, b, score, Kind.BOUND_VIOLATION))
    return out


def robust_zscores(x: np.ndarray, window_len: int) -> np.ndarray:
    """Robust z-score of each sample against the median/MAD of the preceding ``window_len`` samples.

    The first ``window_len`` samples and missing samples (NaN) score 0.
    A zero MAD gives 0 for a zero deviation and ``inf`` otherwise.
    """
    z = np.zeros(len(x))
    if len(x) <= window_len:
        return z
    hist = sliding_window_view(x, window_len)[:-1]  # hist[k] precedes x[k + window_len]
    cur = x[window_len:]
    ok = ~np.isnan(cur) & (np.count_nonzero(~np.isnan(hist), axis=1) >= 3)
    if not ok.any():
        return z
    h = hist[ok]
    med = np.nanmedian(h, axis=1)
    mad = MAD_SCALE * np.nanmedian(np.abs(h - med[:, None]), axis=1)
    dev = np.abs(cur[ok] - med)
    with np.errstate(divide="ignore", invalid="ignore"):
        zz = np.where(mad > 0, dev / mad, np.where(dev > 0, np.inf, 0.0))
    z[window_len:][ok] = zz
    return z


def detect_spikes(frame: TimeSeriesFrame, window_len: int = 50, z_threshold: float = 6.0) -> list[AnomalyVerdict]:
    if window_len < 5:
        raise InvalidArgumentError(f"window_len must be >= 5, got {window_len}")
    if z_threshold <= 0:
        raise InvalidArgumentError("z_threshold must be > 0")
    if window_len > frame.T:
        raise EmptyInputError(f"window_len {window_len} exceeds series length {frame.T}")
    out = []
    for s in range(frame.S):
        z = robust_zscores(frame.values[:, s], window_len)
        for a, b in runs(z > z_threshold):
            out.append(AnomalyVerdict(Level.L3, (s,), a, b, float(z[a : b + 1].max()), Kind.SPIKE))
    return out


def detect_stuck(frame: TimeSeriesFrame, min_run: int = 30, epsilon: float = 0.0) -> list[AnomalyVerdict]:
    """Runs of at least ``min_run`` samples whose successive changes are all within ``epsilon``."""
    if min_run < 2:
        raise InvalidArgumentError(f"min_run must be >= 2, got {min_run}")
    if epsilon < 0:
        raise InvalidArgumentError("epsilon must be >= 0")
    out = []
    for s in range(frame.S):
        x = frame.values[:, s]
        with np.errstate(invalid="ignore"):
            flat = np.abs(np.diff(x)) <= epsilon  # NaN compares false, so gaps break runs
        # a run of k flat steps covers k + 1 samples
        for a, b in runs(flat, min_len=min_run - 1):
            n = b - a + 2
            out.append(AnomalyVerdict(Level.L3, (s,), a, b + 1, n / min_run, Kind.STUCK))
    return out


def _channel_scale(frame: TimeSeriesFrame, s: int, stats: NormStats | None) -> float:
    if stats is not None:
        return float(stats.range[s])
    span = frame.sensors[s].span
    if np.isfinite(span):
        return float(span)
    if np.all(frame.missing[:, s]):
        return 1.0
    observed = float(np.nanmax(frame.values[:, s]) - np.nanmin(frame.values[:, s]))
    return observed if observed > 0 else 1.0


def rolling_slopes(x: np.ndarray, window_len: int) -> np.ndarray:
    """Least-squares slope of each length-``window_len`` window; NaN where the window has gaps."""
    t = np.arange(window_len) - (window_len - 1) / 2.0
    denom = float(t @ t)
    view = sliding_window_view(x, window_len)
    return view @ t / denom


def detect_drift(
    frame: TimeSeriesFrame,
    window_len: int = 60,
    slope_threshold: float = 0.002,
    stats: NormStats | None = None,
) -> list[AnomalyVerdict]:
    """Windows whose fitted slope exceeds ``slope_threshold`` in normalized units per sample.

    Channels are scaled by ``stats`` when given, else by the sensor bound
    span, else by the observed range. Flagged windows are merged into runs.
    """
    if window_len < 10:
        raise InvalidArgumentError(f"window_len must be >= 10, got {window_len}")
    if window_len > frame.T:
        raise EmptyInputError(f"window_len {window_len} exceeds series length {frame.T}")
    out = []
    for s in range(frame.S):
        slopes = np.abs(rolling_slopes(frame.values[:, s], window_len)) / _channel_scale(frame, s, stats)
        with np.errstate(invalid="ignore"):
            hot = slopes > slope_threshold
        if not hot.any():
            continue
        # per sample: largest flagged slope among windows that contain it
        hot_slopes = np.where(hot, slopes, 0.0)
        pad = np.zeros(window_len - 1)
        best = sliding_window_view(np.concatenate([pad, hot_slopes, pad]), window_len).max(axis=1)[: frame.T]
        mask = best > 0
        for a, b in runs(mask):
            out.append(AnomalyVerdict(Level.L3, (s,), a, b, float(best[a : b + 1].max()), Kind.DRIFT))
    return out
