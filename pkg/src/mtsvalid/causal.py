"""
Temporal causal graph discovery by lagged least-squares regression.

Assumes no hidden confounders, so a significant lagged predictive relation
is read as a causal edge. For each ordered pair ``i -> j`` the lags of
``x_i`` are tested as a block (F-test) in a regression of ``x_j`` on the
lagged past; p-values are corrected with Benjamini-Hochberg across all
pairs. By default every other series is conditioned on as well, which
keeps indirect (chain) and common-driver relations out of the graph.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy import stats

from .core import CouplingSpec, TimeSeriesFrame
from .errors import ConditioningError, EmptyInputError, FormatError, InvalidArgumentError, SchemaError

GRAPH_CSV_HEADER = ["source", "target", "delay", "strength", "p_value"]


@dataclass(frozen=True)
class CausalEdge:
    source: int
    target: int
    delay: int
    strength: float
    p_value: float = 0.0

    def __post_init__(self):
        if self.source == self.target:
            raise InvalidArgumentError(f"self-edge on node {self.source}")
        if self.delay < 1:
            raise InvalidArgumentError(f"edge {self.source}->{self.target} has delay {self.delay} < 1")
        if not 0.0 <= self.p_value <= 1.0:
            raise InvalidArgumentError(f"p_value {self.p_value} outside [0, 1]")


@dataclass(frozen=True)
class CausalGraph:
    nodes: tuple[int, ...]
    edges: tuple[CausalEdge, ...] = ()
    alpha: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(int(n) for n in self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        known = set(self.nodes)
        for e in self.edges:
            if e.source not in known or e.target not in known:
                raise SchemaError(f"edge {e.source}->{e.target} references an unknown node")
            if self.alpha is not None and e.p_value > self.alpha:
                raise InvalidArgumentError(f"edge {e.source}->{e.target} has p={e.p_value} above alpha={self.alpha}")

    @classmethod
    def empty(cls, nodes: Iterable[int]) -> "CausalGraph":
        return cls(tuple(nodes))

    def edge(self, source: int, target: int) -> CausalEdge | None:
        for e in self.edges:
            if e.source == source and e.target == target:
                return e
        return None

    def pairs(self) -> set[tuple[int, int]]:
        return {(e.source, e.target) for e in self.edges}


def benjamini_hochberg(pvalues: Sequence[float]) -> np.ndarray:
    """BH-adjusted p-values (step-up, monotone, capped at 1)."""
    p = np.asarray(pvalues, dtype=float)
    m = len(p)
    if m == 0:
        return p
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out


def _lag_design(z: np.ndarray, max_lag: int) -> np.ndarray:
    """Column ``(lag - 1) * S + i`` holds ``z[t - lag, i]`` for ``t = max_lag .. T-1``."""
    T, S = z.shape
    return np.hstack([z[max_lag - lag : T - lag] for lag in range(1, max_lag + 1)])


def _fit(X: np.ndarray, y: np.ndarray, pair: tuple[int, int]) -> tuple[np.ndarray, float]:
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= sv[0] * 1e-10:
        raise ConditioningError(*pair)
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    return beta, float(resid @ resid)


@dataclass(frozen=True)
class PairTest:
    source: int
    target: int
    f_stat: float
    p_raw: float
    p_adjusted: float
    delay: int
    coefficient: float


def _pair_tests(
    frame: TimeSeriesFrame, max_lag: int, conditioning: Literal["all", "none"]
) -> tuple[list[PairTest], np.ndarray]:
    T, S = frame.T, frame.S
    x = frame.values
    sd = x.std(axis=0)
    for s in range(S):
        if sd[s] == 0:
            other = (s + 1) % S
            raise ConditioningError(other, s)
    z = (x - x.mean(axis=0)) / sd
    lags = _lag_design(z, max_lag)
    n = T - max_lag
    ones = np.ones((n, 1))
    tests = []
    unexplained = np.empty(S)
    for j in range(S):
        y = z[max_lag:, j]
        if conditioning == "all":
            full_cols = list(range(S * max_lag))
            X_full = np.hstack([ones, lags])
            _, rss_full = _fit(X_full, y, (j, j) if S == 1 else ((j + 1) % S, j))
            unexplained[j] = rss_full / float(y @ y)
        else:
            own = [(lag - 1) * S + j for lag in range(1, max_lag + 1)]
            X_own = np.hstack([ones, lags[:, own]])
            _, rss_own = _fit(X_own, y, (j, j))
            unexplained[j] = rss_own / float(y @ y)
        for i in range(S):
            if i == j:
                continue
            block = [(lag - 1) * S + i for lag in range(1, max_lag + 1)]
            if conditioning == "all":
                keep = [c for c in full_cols if c not in block]
                X_r = np.hstack([ones, lags[:, keep]])
                X_f = X_full
                beta, rss_f = _fit(X_f, y, (i, j))
                _, rss_r = _fit(X_r, y, (i, j))
                coefs = beta[1:][block]
            else:
                X_r = X_own
                X_f = np.hstack([X_own, lags[:, block]])
                beta, rss_f = _fit(X_f, y, (i, j))
                rss_r = rss_own
                coefs = beta[-max_lag:]
            df2 = n - X_f.shape[1]
            if df2 <= 0:
                raise EmptyInputError(f"not enough samples to test {i}->{j} at max_lag={max_lag}")
            f_stat = max((rss_r - rss_f) / max_lag, 0.0) / (rss_f / df2) if rss_f > 0 else np.inf
            p = float(stats.f.sf(f_stat, max_lag, df2)) if np.isfinite(f_stat) else 0.0
            k = int(np.argmax(np.abs(coefs)))  # first maximum, i.e. smallest lag, on ties
            tests.append(PairTest(i, j, float(f_stat), p, p, k + 1, float(coefs[k])))
    adj = benjamini_hochberg([t.p_raw for t in tests])
    tests = [
        PairTest(t.source, t.target, t.f_stat, t.p_raw, float(a), t.delay, t.coefficient)
        for t, a in zip(tests, adj)
    ]
    return tests, unexplained


def discover(
    frame: TimeSeriesFrame,
    max_lag: int = 5,
    alpha: float = 0.01,
    conditioning: Literal["all", "none"] = "all",
) -> CausalGraph:
    """Lagged causal graph over the frame's sensors.

    Parameters
    ----------
    max_lag : int
        Largest delay (in samples) considered.
    alpha : float
        Significance level applied to Benjamini-Hochberg adjusted p-values.
    conditioning : {"all", "none"}
        ``"all"`` conditions every test on the lags of all series;
        ``"none"`` runs bivariate tests (target's own lags only).

    Raises
    ------
    EmptyInputError
        If ``T < 20 * max_lag * S``.
    ConditioningError
        If a lagged regression is singular (e.g. collinear or constant series).
    """
    if max_lag < 1:
        raise InvalidArgumentError(f"max_lag must be >= 1, got {max_lag}")
    if not 0 < alpha < 1:
        raise InvalidArgumentError(f"alpha must lie in (0, 1), got {alpha}")
    if conditioning not in ("all", "none"):
        raise InvalidArgumentError(f"unknown conditioning {conditioning!r}")
    T, S = frame.T, frame.S
    nodes = tuple(range(S))
    if S < 2:
        return CausalGraph(nodes, (), alpha)
    if frame.missing.any():
        raise InvalidArgumentError("causal discovery needs a frame without missing values")
    if T < 20 * max_lag * S:
        raise EmptyInputError(f"need at least {20 * max_lag * S} samples for max_lag={max_lag}, S={S}; got {T}")
    tests, _ = _pair_tests(frame, max_lag, conditioning)
    edges = tuple(
        CausalEdge(t.source, t.target, t.delay, t.coefficient, t.p_adjusted)
        for t in sorted(tests, key=lambda t: (t.source, t.target))
        if t.p_adjusted < alpha
    )
    return CausalGraph(nodes, edges, alpha)


@dataclass(frozen=True)
class DatasetValidationReport:
    graph: CausalGraph
    tests: tuple[PairTest, ...]
    unexplained_variance: tuple[float, ...]
    isolated: tuple[int, ...]
    no_incoming: tuple[int, ...]
    no_outgoing: tuple[int, ...]
    expected: CausalGraph | None = None
    missing_edges: tuple[CausalEdge, ...] = ()
    unexpected_edges: tuple[CausalEdge, ...] = ()
    delay_mismatches: tuple[tuple[CausalEdge, CausalEdge], ...] = ()

    @property
    def has_bias_section(self) -> bool:
        return self.expected is not None


def validate_dataset(
    frame: TimeSeriesFrame,
    expected: CausalGraph | None = None,
    max_lag: int = 5,
    alpha: float = 0.01,
    conditioning: Literal["all", "none"] = "all",
) -> DatasetValidationReport:
    """Discover the graph and compare it with an expert's expected graph, if any.

    Expected edges absent from the data are reported as missing (possible
    dataset bias); discovered edges absent from the expectation are listed
    for expert review.
    """
    graph = discover(frame, max_lag, alpha, conditioning)
    if frame.S >= 2:
        tests, unexplained = _pair_tests(frame, max_lag, conditioning)
    else:
        tests, unexplained = [], np.ones(frame.S)
    has_in = {e.target for e in graph.edges}
    has_out = {e.source for e in graph.edges}
    report = dict(
        graph=graph,
        tests=tuple(tests),
        unexplained_variance=tuple(float(u) for u in unexplained),
        isolated=tuple(n for n in graph.nodes if n not in has_in and n not in has_out),
        no_incoming=tuple(n for n in graph.nodes if n not in has_in),
        no_outgoing=tuple(n for n in graph.nodes if n not in has_out),
    )
    if expected is None:
        return DatasetValidationReport(**report)
    found = {(e.source, e.target): e for e in graph.edges}
    wanted = {(e.source, e.target): e for e in expected.edges}
    return DatasetValidationReport(
        **report,
        expected=expected,
        missing_edges=tuple(wanted[k] for k in sorted(wanted) if k not in found),
        unexpected_edges=tuple(found[k] for k in sorted(found) if k not in wanted),
        delay_mismatches=tuple(
            (wanted[k], found[k]) for k in sorted(wanted) if k in found and wanted[k].delay != found[k].delay
        ),
    )


def graph_neighbors(
    graph: CausalGraph,
    sensor: int,
    direction: Literal["parents", "children"],
    max_delay: int | None = None,
) -> list[tuple[int, int]]:
    """``(neighbor, delay)`` pairs, strongest edge first (by absolute strength)."""
    if sensor not in graph.nodes:
        raise SchemaError(f"unknown sensor {sensor}")
    if direction == "parents":
        hits = [(e, e.source) for e in graph.edges if e.target == sensor]
    elif direction == "children":
        hits = [(e, e.target) for e in graph.edges if e.source == sensor]
    else:
        raise InvalidArgumentError(f"direction must be 'parents' or 'children', got {direction!r}")
    if max_delay is not None:
        hits = [(e, n) for e, n in hits if e.delay <= max_delay]
    hits.sort(key=lambda h: (-abs(h[0].strength), h[1]))
    return [(n, e.delay) for e, n in hits]


def coupling_graph(spec: CouplingSpec) -> CausalGraph:
    """Ground-truth lagged relations of a coupled process: earlier sensors drive later ones.

    Sensors sharing the same delay are not connected (their relation is
    instantaneous).
    """
    edges = []
    for i in range(spec.S):
        for j in range(spec.S):
            lag = spec.delays[j] - spec.delays[i]
            if lag >= 1:
                edges.append(CausalEdge(i, j, lag, spec.gains[j] / spec.gains[i], 0.0))
    return CausalGraph(tuple(range(spec.S)), tuple(edges))


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------


def graph_to_csv(graph: CausalGraph) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRAPH_CSV_HEADER)
    for e in graph.edges:
        w.writerow([e.source, e.target, e.delay, repr(float(e.strength)), repr(float(e.p_value))])
    return buf.getvalue()


def graph_from_csv(text: str, nodes: Iterable[int] | None = None) -> CausalGraph:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != GRAPH_CSV_HEADER:
        raise FormatError(f"graph CSV must start with header {','.join(GRAPH_CSV_HEADER)}")
    edges = []
    for k, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            src, tgt, delay, strength, p = row
            edges.append(CausalEdge(int(src), int(tgt), int(delay), float(strength), float(p)))
        except ValueError as exc:
            raise FormatError(f"graph CSV line {k}: {exc}") from exc
    if nodes is None:
        nodes = sorted({e.source for e in edges} | {e.target for e in edges})
    return CausalGraph(tuple(nodes), tuple(edges))


def read_graph_csv(path: str | Path, nodes: Iterable[int] | None = None) -> CausalGraph:
    return graph_from_csv(Path(path).read_text(), nodes)


def graph_to_dot(graph: CausalGraph, names: Sequence[str] | None = None) -> str:
    label = (lambda n: names[n]) if names is not None else str
    lines = ["digraph causal {", "  rankdir=LR;"]
    for n in graph.nodes:
        lines.append(f'  n{n} [label="{label(n)}"];')
    for e in graph.edges:
        lines.append(f'  n{e.source} -> n{e.target} [label="d={e.delay}, {e.strength:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
