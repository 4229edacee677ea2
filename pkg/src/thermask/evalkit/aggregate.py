"""Mean / standard deviation over repeated runs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass
class AggregateReport:
    kind: str
    runs: dict[str, list[float]]
    mean: dict[str, float]
    std: dict[str, float]

    @property
    def repetitions(self) -> int:
        return len(next(iter(self.runs.values()))) if self.runs else 0

    def to_dict(self) -> dict:
        return {
            "schema": "v1",
            "kind": self.kind,
            "repetitions": self.repetitions,
            "runs": self.runs,
            "mean": self.mean,
            "std": self.std,
        }


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def aggregate_runs(reports: Sequence) -> AggregateReport:
    if not reports:
        raise ValueError("aggregate_runs needs at least one report")
    kinds = {r.kind for r in reports}
    if len(kinds) != 1:
        raise ValueError(f"cannot mix report kinds: {sorted(kinds)}")
    per_run = [r.metrics() for r in reports]
    keys = list(per_run[0])
    runs = {k: [float(m[k]) for m in per_run] for k in keys}
    mean, std = {}, {}
    for k, values in runs.items():
        mean[k], std[k] = mean_std(values)
    return AggregateReport(kinds.pop(), runs, mean, std)
