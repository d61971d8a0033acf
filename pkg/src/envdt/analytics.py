"""Coverage, diversity and cross-run aggregation.

Coverage counts the behavioural elements (states, transitions, events,
opaque behaviours) a trace touched, over everything the model declares.
Diversity is Simpson's index over how often each uncertain signal fired.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .engine import ELEMENT_KINDS, TraceRecord
from .model import EnvironmentModel, flatten_elements


class TraceModelMismatch(Exception):
    pass


@dataclass(frozen=True)
class CoverageReport:
    run_id: str
    covered: frozenset[str]
    total: int
    percent: float
    instances_updated: int = 0
    updates: int = 0


@dataclass(frozen=True)
class DiversityReport:
    run_id: str
    event_counts: dict[str, int]
    n: int
    simpson: float


def coverage(records: Iterable[TraceRecord], model: EnvironmentModel, run_id: str = "") -> CoverageReport:
    elements = flatten_elements(model)
    known = set(elements)
    covered: set[str] = set()
    updated: set[str] = set()
    updates = 0
    for rec in records:
        if rec.kind in ELEMENT_KINDS:
            if rec.element not in known:
                raise TraceModelMismatch(f"record {rec.seq}: {rec.element} is not in model {model.name}")
            covered.add(rec.element)
        elif rec.kind == "update":
            updates += 1
            updated.add(rec.detail["instance"])
    total = len(elements)
    percent = 100.0 * len(covered) / total if total else 0.0
    return CoverageReport(run_id, frozenset(covered), total, percent, len(updated), updates)


def simpson(counts: Iterable[int]) -> float:
    """Unbiased Simpson diversity, 1 - sum n(n-1) / (N(N-1)); 0 when N < 2."""
    counts = [c for c in counts if c > 0]
    n = sum(counts)
    if n < 2:
        return 0.0
    return 1.0 - sum(c * (c - 1) for c in counts) / (n * (n - 1))


def simpson_plugin(counts: Iterable[int]) -> float:
    """The 1 - sum p^2 form, for comparison; 0 for an empty sample."""
    counts = [c for c in counts if c > 0]
    n = sum(counts)
    if n == 0:
        return 0.0
    return 1.0 - sum((c / n) ** 2 for c in counts)


def diversity(records: Iterable[TraceRecord], run_id: str = "") -> DiversityReport:
    """Simpson diversity of the uncertain events in a trace, keyed by signal."""
    counts = Counter(
        rec.detail["signal"] for rec in records if rec.kind == "event" and rec.detail.get("uncertain")
    )
    counts = dict(sorted(counts.items()))
    return DiversityReport(run_id, counts, sum(counts.values()), simpson(counts.values()))


# -- aggregation --------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    mean: float
    std: float
    n: int

    @property
    def degenerate(self) -> bool:
        return self.n < 2


def summarize(values: Iterable[float]) -> Cell:
    """Mean and sample (n-1) standard deviation; std is 0 for one value."""
    xs = list(values)
    if not xs:
        raise ValueError("no values")
    n = len(xs)
    mean = math.fsum(xs) / n
    if n < 2:
        return Cell(mean, 0.0, n)
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return Cell(mean, math.sqrt(var), n)


@dataclass
class AggregateTable:
    metric: str
    devices: list[str]
    distributions: list[str]
    cells: dict[tuple[str, str], Cell] = field(default_factory=dict)

    def to_csv(self, digits: int = 4) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        header = ["distribution"]
        for d in self.devices:
            header += [f"{d}_mean", f"{d}_std", f"{d}_n"]
        w.writerow(header)
        for dist in self.distributions:
            row = [dist]
            for dev in self.devices:
                cell = self.cells.get((dev, dist))
                if cell is None:
                    row += ["", "", "0"]
                else:
                    row += [f"{cell.mean:.{digits}f}", f"{cell.std:.{digits}f}", str(cell.n)]
            w.writerow(row)
        return out.getvalue()


def aggregate(
    values: Mapping[tuple[str, str, int], float],
    metric: str,
    devices: list[str] | None = None,
    distributions: list[str] | None = None,
) -> AggregateTable:
    """Group per-run values keyed by (device, distribution, repetition)."""
    groups: dict[tuple[str, str], list[tuple[int, float]]] = {}
    for (dev, dist, rep), v in values.items():
        groups.setdefault((dev, dist), []).append((rep, v))
    if devices is None:
        devices = list(dict.fromkeys(dev for dev, _ in groups))
    if distributions is None:
        distributions = list(dict.fromkeys(dist for _, dist in groups))
    table = AggregateTable(metric, devices, distributions)
    for key, items in groups.items():
        table.cells[key] = summarize(v for _, v in sorted(items))
    return table
