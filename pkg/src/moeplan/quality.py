"""Perplexity surrogate and the throughput/quality/memory Pareto frontier.

The surrogate interpolates linearly between the measured all-16-bit and
all-4-bit-expert perplexities of each dataset.  The measured curve is not
monotone in the number of quantized experts; this is an estimate only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

from .profiles import ProfileError


@dataclass(frozen=True)
class QualityAnchors:
    dataset: str
    ppl_all16: float
    ppl_all4: float

    def __post_init__(self) -> None:
        if not (self.ppl_all16 > 1 and self.ppl_all4 > 1):
            raise ProfileError(f"{self.dataset}: perplexities must be > 1")
        if self.ppl_all4 < self.ppl_all16:
            raise ProfileError(f"{self.dataset}: ppl_all4 must be >= ppl_all16")


BUILTIN_ANCHORS: dict[str, QualityAnchors] = {
    a.dataset: a for a in (
        QualityAnchors("wikitext2", 3.81, 4.00),
        QualityAnchors("ptb", 13.59, 14.17),
        QualityAnchors("c4", 7.24, 7.40),
    )
}


def load_anchors(doc: Mapping[str, Any] | None) -> dict[str, QualityAnchors]:
    """Built-in anchors updated with a config's ``quality`` section."""
    anchors = dict(BUILTIN_ANCHORS)
    section = (doc or {}).get("quality") or {}
    if not isinstance(section, Mapping):
        raise ProfileError("section 'quality' must be a mapping")
    for name, values in section.items():
        try:
            anchors[name] = QualityAnchors(name, float(values["ppl_all16"]),
                                           float(values["ppl_all4"]))
        except (KeyError, TypeError, ValueError):
            raise ProfileError(f"quality.{name} needs numeric ppl_all16 and ppl_all4") from None
    return anchors


def ppl_estimate(n4: int, anchors: QualityAnchors, num_e: int) -> float:
    if not 0 <= n4 <= num_e:
        raise ProfileError(f"n4={n4} outside [0, {num_e}]")
    if n4 == num_e:
        return anchors.ppl_all4
    return anchors.ppl_all16 + (anchors.ppl_all4 - anchors.ppl_all16) * n4 / num_e


def n4_for_budget(ppl_budget: float, anchors: QualityAnchors, num_e: int) -> int:
    """Most quantized experts whose estimated perplexity stays within budget."""
    if ppl_budget < anchors.ppl_all16:
        raise ProfileError(f"perplexity {ppl_budget} is below the 16-bit "
                           f"floor {anchors.ppl_all16} of {anchors.dataset}")
    span = anchors.ppl_all4 - anchors.ppl_all16
    if span <= 0 or ppl_budget >= anchors.ppl_all4:
        return num_e
    # slack absorbs float rounding of decimal anchors
    n = math.floor((ppl_budget - anchors.ppl_all16) * num_e / span + 1e-9)
    return max(0, min(num_e, n))


@dataclass(frozen=True)
class ParetoPoint:
    budget: int
    n4: int
    throughput_tps: float
    ppl_estimate: float
    gpu_bytes: int


def dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    """``a`` is at least as good as ``b`` on all three objectives and better on one."""
    no_worse = (a.throughput_tps >= b.throughput_tps and a.ppl_estimate <= b.ppl_estimate
                and a.gpu_bytes <= b.gpu_bytes)
    better = (a.throughput_tps > b.throughput_tps or a.ppl_estimate < b.ppl_estimate
              or a.gpu_bytes < b.gpu_bytes)
    return no_worse and better


def pareto_frontier(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated points, highest throughput first, input order among ties.

    A dominating point sorts strictly earlier in (-throughput, ppl, bytes)
    order, and dominance is transitive, so each point only has to be checked
    against the frontier found so far.
    """
    order = sorted(range(len(points)), key=lambda i: (
        -points[i].throughput_tps, points[i].ppl_estimate, points[i].gpu_bytes))
    kept: list[int] = []
    for i in order:
        if not any(dominates(points[j], points[i]) for j in kept):
            kept.append(i)
    kept.sort(key=lambda i: (-points[i].throughput_tps, i))
    return [points[i] for i in kept]


def frontier_mask(points: Sequence[ParetoPoint]) -> list[bool]:
    front = {id(p) for p in pareto_frontier(points)}
    return [id(p) in front for p in points]


def points_from_sweep(rows: Iterable, anchors: QualityAnchors, num_e: int) -> list[ParetoPoint]:
    """ParetoPoints for the feasible rows of a memory sweep."""
    points = []
    for row in rows:
        if not row.feasible:
            continue
        points.append(ParetoPoint(
            budget=row.budget_bytes,
            n4=row.summary.n4,
            throughput_tps=row.report.throughput_tps,
            ppl_estimate=ppl_estimate(row.summary.n4, anchors, num_e),
            gpu_bytes=row.summary.gpu_bytes,
        ))
    return points
