"""Serial miss-stall simulation of token generation under a placement plan.

Each token walks every layer; every selected expert either hits (GPU copy
present) and only computes, or misses and first waits for its transfer over
the CPU->GPU link.  Transfers never overlap compute and nothing is
prefetched.  Time is accumulated in integer nanoseconds so runs are
bit-reproducible; reports expose seconds.

Policies:

``static``
    The plan's GPU set is fixed.  A missed expert lands in the single swap
    slot, serves that one activation and is overwritten by the next miss, so
    every activation of a CPU-resident expert misses.
``lru:N``
    The plan's GPU experts stay pinned; CPU-resident experts are cached in N
    expert-sized slots with least-recently-used eviction.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .gating import GatingTrace, generate_trace
from .planner import (
    Location,
    PlacementPlan,
    PlanningError,
    PlanSummary,
    make_plan,
    summarize,
)
from .profiles import HardwareProfile, ModelProfile, Precision, TaskRequest, expert_size


class SimulationError(ValueError):
    """Trace, plan and profile disagree."""


@dataclass(frozen=True)
class ResidencyPolicy:
    kind: str = "static"
    capacity_slots: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("static", "lru"):
            raise ValueError(f"unknown residency policy {self.kind!r}")
        if self.kind == "lru" and self.capacity_slots < 1:
            raise ValueError("LRU capacity must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "ResidencyPolicy":
        """``static`` or ``lru:<slots>``."""
        name, _, arg = text.strip().lower().partition(":")
        if name == "static" and not arg:
            return cls("static")
        if name == "lru" and arg.isdigit():
            return cls("lru", int(arg))
        raise ValueError(f"policy must be 'static' or 'lru:<slots>', got {text!r}")

    def __str__(self) -> str:
        return self.kind if self.kind == "static" else f"lru:{self.capacity_slots}"


STATIC = ResidencyPolicy()


@dataclass(frozen=True)
class SimReport:
    tokens: int
    activations: int
    hits: int
    bytes_transferred: int
    transfer_time_ns: int
    compute_time_ns: int
    nonexpert_time_ns: int

    @property
    def total_time_ns(self) -> int:
        return self.transfer_time_ns + self.compute_time_ns + self.nonexpert_time_ns

    @property
    def total_time_s(self) -> float:
        return self.total_time_ns / 1e9

    @property
    def transfer_time_s(self) -> float:
        return self.transfer_time_ns / 1e9

    @property
    def compute_time_s(self) -> float:
        return self.compute_time_ns / 1e9

    @property
    def nonexpert_time_s(self) -> float:
        return self.nonexpert_time_ns / 1e9

    @property
    def throughput_tps(self) -> float:
        return self.tokens * 1e9 / self.total_time_ns if self.total_time_ns else float("inf")

    @property
    def hit_rate(self) -> float:
        return self.hits / self.activations

    def as_row(self) -> dict:
        return {
            "tokens": self.tokens,
            "total_time_s": f"{self.total_time_s:.9f}",
            "throughput_tps": f"{self.throughput_tps:.6f}",
            "activations": self.activations,
            "hits": self.hits,
            "hit_rate": f"{self.hit_rate:.6f}",
            "bytes_transferred": self.bytes_transferred,
            "transfer_time_s": f"{self.transfer_time_s:.9f}",
            "compute_time_s": f"{self.compute_time_s:.9f}",
            "nonexpert_time_s": f"{self.nonexpert_time_s:.9f}",
        }

    def to_json(self) -> str:
        doc = asdict(self)
        doc.update(total_time_ns=self.total_time_ns, throughput_tps=self.throughput_tps,
                   hit_rate=self.hit_rate)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class _CostTable:
    resident: np.ndarray      # bool per expert
    compute_ns: np.ndarray    # int64 per expert
    transfer_ns: np.ndarray   # int64 per expert
    size: np.ndarray          # int64 bytes per expert
    nonexpert_ns: int


def _costs(plan: PlacementPlan, profile: ModelProfile, hw: HardwareProfile) -> _CostTable:
    compute16 = profile.compute_latency16_s * 1e9
    by_precision = {
        Precision.P16: (round(compute16), expert_size(profile, Precision.P16)),
        Precision.P4: (round(compute16 * profile.compute_penalty4),
                       expert_size(profile, Precision.P4)),
    }
    compute = [by_precision[e.precision][0] for e in plan.entries]
    size = [by_precision[e.precision][1] for e in plan.entries]
    transfer = [round(s * 1e9 / hw.transfer_bw_bytes_per_s) for s in size]
    return _CostTable(
        resident=np.array([e.location is Location.GPU for e in plan.entries]),
        compute_ns=np.array(compute, dtype=np.int64),
        transfer_ns=np.array(transfer, dtype=np.int64),
        size=np.array(size, dtype=np.int64),
        nonexpert_ns=round(profile.nonexpert_latency_s * 1e9),
    )


def _check_inputs(plan: PlacementPlan, trace: GatingTrace, profile: ModelProfile) -> None:
    if not trace.matches(profile):
        raise SimulationError("trace shape (layers, experts_per_layer, top_k) "
                              "does not match the model profile")
    if plan.profile_fingerprint != profile.fingerprint():
        raise SimulationError("plan was built for a different model profile")
    if len(plan.entries) != profile.num_experts:
        raise SimulationError("plan does not cover every expert")


def _simulate_static(trace: GatingTrace, costs: _CostTable) -> SimReport:
    idx = trace.expert_index().ravel()
    miss = ~costs.resident[idx]
    return SimReport(
        tokens=trace.tokens,
        activations=idx.size,
        hits=int(idx.size - miss.sum()),
        bytes_transferred=int(costs.size[idx][miss].sum()),
        transfer_time_ns=int(costs.transfer_ns[idx][miss].sum()),
        compute_time_ns=int(costs.compute_ns[idx].sum()),
        nonexpert_time_ns=trace.tokens * costs.nonexpert_ns,
    )


def _simulate_lru(trace: GatingTrace, costs: _CostTable, capacity: int) -> SimReport:
    resident = costs.resident.tolist()
    compute, transfer, size = (a.tolist() for a in
                               (costs.compute_ns, costs.transfer_ns, costs.size))
    cache: OrderedDict[int, None] = OrderedDict()
    hits = moved = transfer_ns = compute_ns = 0
    for token in trace.expert_index().tolist():
        for layer in token:
            for e in layer:
                if resident[e]:
                    hits += 1
                elif e in cache:
                    cache.move_to_end(e)
                    hits += 1
                else:
                    transfer_ns += transfer[e]
                    moved += size[e]
                    cache[e] = None
                    if len(cache) > capacity:
                        cache.popitem(last=False)
                compute_ns += compute[e]
    return SimReport(
        tokens=trace.tokens,
        activations=trace.slots.size,
        hits=hits,
        bytes_transferred=moved,
        transfer_time_ns=transfer_ns,
        compute_time_ns=compute_ns,
        nonexpert_time_ns=trace.tokens * costs.nonexpert_ns,
    )


def simulate(plan: PlacementPlan, trace: GatingTrace, profile: ModelProfile,
             hw: HardwareProfile, policy: ResidencyPolicy = STATIC) -> SimReport:
    _check_inputs(plan, trace, profile)
    costs = _costs(plan, profile, hw)
    if policy.kind == "static":
        # order-independent sum of the per-activation costs
        return _simulate_static(trace, costs)
    return _simulate_lru(trace, costs, policy.capacity_slots)


def expected_throughput(plan: PlacementPlan, profile: ModelProfile, hw: HardwareProfile) -> float:
    """Closed-form tokens/s under uniform gating and the static policy."""
    k, E = profile.top_k, profile.experts_per_layer
    token_s = profile.nonexpert_latency_s
    for layer in range(profile.num_layers):
        entries = plan.entries[layer * E:(layer + 1) * E]
        compute = sum(profile.compute_latency16_s
                      * (profile.compute_penalty4 if e.precision is Precision.P4 else 1.0)
                      for e in entries)
        transfer = sum(expert_size(profile, e.precision) / hw.transfer_bw_bytes_per_s
                       for e in entries if e.location is Location.CPU)
        token_s += k * (compute + transfer) / E
    return 1.0 / token_s


@dataclass(frozen=True)
class SweepRow:
    budget_bytes: int
    n4_target: int | None
    summary: PlanSummary | None
    report: SimReport | None

    @property
    def feasible(self) -> bool:
        return self.report is not None


def sweep_memory(budgets: Sequence[int], task: TaskRequest, profile: ModelProfile,
                 hw: HardwareProfile, tokens: int, seed: int,
                 policy: ResidencyPolicy = STATIC,
                 trace: GatingTrace | None = None) -> list[SweepRow]:
    """Plan and simulate at each budget; infeasible budgets get empty rows.

    Every budget replays the same trace generated from ``seed``.
    """
    if not budgets:
        raise ValueError("budgets must be non-empty")
    if trace is None:
        trace = generate_trace(profile, tokens, seed)
    rows = []
    for budget in budgets:
        try:
            plan = make_plan(task, hw.with_memory(budget), profile)
        except PlanningError:
            rows.append(SweepRow(budget, task.n4_target, None, None))
            continue
        report = simulate(plan, trace, profile, hw.with_memory(budget), policy)
        rows.append(SweepRow(budget, task.n4_target, summarize(plan, profile), report))
    return rows
