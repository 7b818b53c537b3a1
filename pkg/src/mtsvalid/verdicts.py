"""Anomaly verdict record shared by detectors, reasoning and reporting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InvalidArgumentError


class Level(str, Enum):
    L2 = "L2"
    L3 = "L3"
    L4 = "L4"
    L5 = "L5"


class Kind(str, Enum):
    BOUND_VIOLATION = "bound_violation"
    SPIKE = "spike"
    STUCK = "stuck"
    DRIFT = "drift"
    CONTEXTUAL_DEVIATION = "contextual_deviation"
    SIMULATION_MISMATCH = "simulation_mismatch"


class Label(str, Enum):
    UNCLASSIFIED = "unclassified"
    SENSOR_FAULT = "sensor_fault"
    PROCESS_EVENT = "process_event"
    OUT_OF_MODEL_DOMAIN = "out_of_model_domain"


@dataclass(frozen=True)
class AnomalyVerdict:
    level: Level
    sensor_ids: tuple[int, ...]
    start_index: int
    end_index: int  # inclusive
    score: float
    kind: Kind
    label: Label = Label.UNCLASSIFIED

    def __post_init__(self):
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "sensor_ids", tuple(int(s) for s in self.sensor_ids))
        object.__setattr__(self, "start_index", int(self.start_index))
        object.__setattr__(self, "end_index", int(self.end_index))
        object.__setattr__(self, "score", float(self.score))
        if self.start_index > self.end_index:
            raise InvalidArgumentError(f"verdict span {self.start_index}..{self.end_index} is reversed")
        if not self.score >= 0:
            raise InvalidArgumentError(f"verdict score must be >= 0, got {self.score}")

    @property
    def length(self) -> int:
        return self.end_index - self.start_index + 1

    def relabel(self, label: Label) -> "AnomalyVerdict":
        return replace(self, label=Label(label))

    def to_dict(self) -> dict:
        return {
            "level": self.level.value,
            "sensor_ids": list(self.sensor_ids),
            "start_index": self.start_index,
            "end_index": self.end_index,
            "score": self.score,
            "kind": self.kind.value,
            "label": self.label.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnomalyVerdict":
        return cls(
            Level(d["level"]),
            tuple(d["sensor_ids"]),
            d["start_index"],
            d["end_index"],
            d["score"],
            Kind(d["kind"]),
            Label(d.get("label", Label.UNCLASSIFIED)),
        )


def runs(mask: np.ndarray, min_len: int = 1) -> list[tuple[int, int]]:
    """Maximal runs of true values as inclusive ``(start, end)`` pairs."""
    m = np.asarray(mask, dtype=bool)
    if m.size == 0:
        return []
    padded = np.concatenate([[False], m, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, stops = edges[::2], edges[1::2]
    return [(int(a), int(b) - 1) for a, b in zip(starts, stops) if b - a >= min_len]
