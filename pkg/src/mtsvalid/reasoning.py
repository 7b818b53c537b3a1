"""
Rule-based reasoning: is a detected deviation a faulty sensor or the process itself?

Rules are tried in order and the first that applies sets the label:

* univariate faults (bound violation, stuck, spike) are sensor faults;
* a contextual deviation whose causal neighbours deviate too, over the
  delay-shifted span, is a process event;
* a contextual deviation with quiet neighbours is a sensor fault;
* a simulation mismatch inside the model's valid operating mode is a
  process event, left for expert review.

Anything else keeps the ``unclassified`` label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autoencoder import ReconstructionReport
from .causal import CausalGraph
from .errors import InvalidArgumentError, SchemaError
from .verdicts import AnomalyVerdict, Kind, Label


@dataclass(frozen=True)
class ReasoningConfig:
    coincidence_window: int = 5
    neighbor_perr_ratio: float = 0.5
    min_corroborating_neighbors: int = 2

    def __post_init__(self):
        if self.coincidence_window < 1:
            raise InvalidArgumentError("coincidence_window must be >= 1")
        if not 0 < self.neighbor_perr_ratio <= 1:
            raise InvalidArgumentError("neighbor_perr_ratio must lie in (0, 1]")
        if self.min_corroborating_neighbors < 1:
            raise InvalidArgumentError("min_corroborating_neighbors must be >= 1")


def neighbor_spans(verdict: AnomalyVerdict, graph: CausalGraph, window: int) -> list[tuple[int, int, int]]:
    """``(neighbor, start, end)`` where a causally linked deviation should show up.

    A parent acting with delay ``d`` deviates ``d`` samples earlier, a child
    ``d`` samples later; both spans are widened by ``window`` each side.
    """
    sensor = verdict.sensor_ids[0]
    out = []
    for e in graph.edges:
        if e.target == sensor:
            out.append((e.source, verdict.start_index - e.delay - window, verdict.end_index - e.delay + window))
        elif e.source == sensor:
            out.append((e.target, verdict.start_index + e.delay - window, verdict.end_index + e.delay + window))
    return out


def corroborating_neighbors(
    verdict: AnomalyVerdict, report: ReconstructionReport, graph: CausalGraph, config: ReasoningConfig
) -> list[int]:
    hits = set()
    T = report.T
    for n, a, b in neighbor_spans(verdict, graph, config.coincidence_window):
        a, b = max(a, 0), min(b, T - 1)
        if a > b:
            continue
        cov = report.coverage[a : b + 1, n]
        if not cov.any():
            continue
        mean = float(report.perr[a : b + 1, n][cov].mean())
        if mean >= config.neighbor_perr_ratio * verdict.score:
            hits.add(n)
    return sorted(hits)


Rule = Callable[[AnomalyVerdict, ReconstructionReport | None, CausalGraph, ReasoningConfig], "Label | None"]


def rule_univariate_fault(v, report, graph, config):
    if v.kind in (Kind.BOUND_VIOLATION, Kind.STUCK, Kind.SPIKE):
        return Label.SENSOR_FAULT
    return None


def rule_corroborated_context(v, report, graph, config):
    if v.kind is not Kind.CONTEXTUAL_DEVIATION or report is None:
        return None
    if len(corroborating_neighbors(v, report, graph, config)) >= config.min_corroborating_neighbors:
        return Label.PROCESS_EVENT
    return None


def rule_isolated_context(v, report, graph, config):
    if v.kind is Kind.CONTEXTUAL_DEVIATION:
        return Label.SENSOR_FAULT
    return None


def rule_simulation_mismatch(v, report, graph, config):
    if v.kind is Kind.SIMULATION_MISMATCH:
        return Label.PROCESS_EVENT
    return None


DEFAULT_RULES: tuple[Rule, ...] = (
    rule_univariate_fault,
    rule_corroborated_context,
    rule_isolated_context,
    rule_simulation_mismatch,
)


def classify(
    verdicts: Sequence[AnomalyVerdict],
    report: ReconstructionReport | None,
    graph: CausalGraph,
    config: ReasoningConfig = ReasoningConfig(),
    rules: Sequence[Rule] = DEFAULT_RULES,
) -> list[AnomalyVerdict]:
    """Labelled copies of ``verdicts``; the inputs are left untouched."""
    nodes = set(graph.nodes)
    out = []
    for v in verdicts:
        for s in v.sensor_ids:
            if s not in nodes or (report is not None and not 0 <= s < report.S):
                raise SchemaError(f"verdict references unknown sensor {s}")
        label = Label.UNCLASSIFIED
        for rule in rules:
            got = rule(v, report, graph, config)
            if got is not None:
                label = got
                break
        out.append(v.relabel(label))
    return out
