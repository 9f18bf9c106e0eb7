"""Expert partitioning: precision and CPU/GPU placement for every expert."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

from .profiles import (
    HardwareProfile,
    ModelProfile,
    Precision,
    Preference,
    ProfileError,
    TaskRequest,
    expert_size,
)
from .rng import SplitMix64

PLAN_FORMAT = "moeplan.placement/1"


class PlanningError(ValueError):
    """Raised when no plan satisfies the memory budget."""


class PlanFormatError(ValueError):
    """Malformed or mismatched plan document."""


class Location(str, enum.Enum):
    GPU = "GPU"
    CPU = "CPU"


class ExpertId(NamedTuple):
    layer: int
    slot: int


class Entry(NamedTuple):
    precision: Precision
    location: Location


def expert_ids(profile: ModelProfile) -> list[ExpertId]:
    """All experts in (layer, slot) order."""
    return [ExpertId(l, s) for l in range(profile.num_layers)
            for s in range(profile.experts_per_layer)]


@dataclass(frozen=True)
class PlacementPlan:
    """Per-expert (precision, location) table plus the swap reservation.

    ``entries`` is stored flat in (layer, slot) order; index it with
    ``plan[ExpertId(layer, slot)]``.
    """

    entries: tuple[Entry, ...]
    experts_per_layer: int
    swap_slot_bytes: int
    seed: int
    budget_bytes: int
    profile_fingerprint: str
    preference: Preference | None = None
    n4_target: int | None = None

    def __getitem__(self, eid: ExpertId) -> Entry:
        return self.entries[eid.layer * self.experts_per_layer + eid.slot]

    def items(self) -> Iterator[tuple[ExpertId, Entry]]:
        for i, entry in enumerate(self.entries):
            yield ExpertId(*divmod(i, self.experts_per_layer)), entry

    @property
    def n4(self) -> int:
        return sum(e.precision is Precision.P4 for e in self.entries)

    @property
    def n_gpu(self) -> int:
        return sum(e.location is Location.GPU for e in self.entries)


@dataclass(frozen=True)
class PlanSummary:
    n4: int
    n16: int
    n_gpu: int
    n_cpu: int
    gpu_bytes: int
    headroom_bytes: int
    swap_slot_bytes: int

    def as_row(self) -> dict[str, int]:
        return dict(vars(self))


def num_experts_16(mem_gpu: int, profile: ModelProfile) -> int:
    """Number of experts that can stay 16-bit on a fully resident model.

    Zero unless the non-expert layers plus every expert at 4 bit fit; above
    that, each upgrade costs ``(quant_ratio - 1)`` 4-bit sizes of headroom.
    Clamped to the number of experts.
    """
    s4 = profile.size_expert4_bytes
    excess = mem_gpu - profile.size_nonexpert_bytes - profile.num_experts * s4
    if excess <= 0:
        return 0
    per_upgrade = (profile.quant_ratio - 1) * s4
    if per_upgrade <= 0:
        return profile.num_experts
    return min(profile.num_experts, math.floor(excess / per_upgrade))


def assign_quantization(n4: int, profile: ModelProfile, seed: int) -> set[ExpertId]:
    """Uniformly random ``n4``-subset of experts, reproducible from ``seed``.

    Fisher-Yates over (layer, slot)-ordered ids; the first ``n4`` of the
    permutation are quantized, so subsets for one seed are nested in ``n4``.
    """
    if not 0 <= n4 <= profile.num_experts:
        raise ProfileError(f"n4={n4} outside [0, {profile.num_experts}]")
    order = expert_ids(profile)
    SplitMix64(seed).shuffle(order)
    return set(order[:n4])


def _swap_for(sizes: Iterable[int]) -> int:
    return max(sizes, default=0)


def assign_locations(
    precisions: dict[ExpertId, Precision],
    hw: HardwareProfile,
    profile: ModelProfile,
    *,
    seed: int = 0,
    task: TaskRequest | None = None,
) -> PlacementPlan:
    """Place experts on GPU greedily: every 4-bit expert before any 16-bit one.

    Residency is the longest priority-ordered prefix whose bytes plus the swap
    slot for the experts left behind fit the budget.  That cost is
    non-decreasing in prefix length, so the first failing prefix ends the scan.
    """
    ids = expert_ids(profile)
    if set(precisions) != set(ids):
        raise PlanningError("precision map must cover every expert exactly once")
    order = ([e for e in ids if precisions[e] is Precision.P4]
             + [e for e in ids if precisions[e] is not Precision.P4])
    sizes = [expert_size(profile, precisions[e]) for e in order]
    # suffix_max[k] = largest size among order[k:]
    suffix_max = [0] * (len(order) + 1)
    for k in range(len(order) - 1, -1, -1):
        suffix_max[k] = max(sizes[k], suffix_max[k + 1])

    room = hw.gpu_mem_bytes - profile.size_nonexpert_bytes
    if suffix_max[0] > room:
        raise PlanningError(
            f"budget {hw.gpu_mem_bytes} B cannot hold non-expert layers "
            f"({profile.size_nonexpert_bytes} B) plus a swap slot of {suffix_max[0]} B")
    resident, used = 0, 0
    while resident < len(order) and used + sizes[resident] + suffix_max[resident + 1] <= room:
        used += sizes[resident]
        resident += 1

    on_gpu = set(order[:resident])
    entries = tuple(
        Entry(Precision(precisions[e]), Location.GPU if e in on_gpu else Location.CPU)
        for e in ids)
    return PlacementPlan(
        entries=entries,
        experts_per_layer=profile.experts_per_layer,
        swap_slot_bytes=suffix_max[resident],
        seed=seed,
        budget_bytes=hw.gpu_mem_bytes,
        profile_fingerprint=profile.fingerprint(),
        preference=task.preference if task else None,
        n4_target=task.n4_target if task else None,
    )


def _precision_map(profile: ModelProfile, n4: int, seed: int) -> dict[ExpertId, Precision]:
    quantized = assign_quantization(n4, profile, seed)
    return {e: Precision.P4 if e in quantized else Precision.P16 for e in expert_ids(profile)}


def plan_throughput(task: TaskRequest, hw: HardwareProfile, profile: ModelProfile) -> PlacementPlan:
    if task.preference is not Preference.THROUGHPUT:
        raise ValueError("plan_throughput needs a throughput request")
    n16 = num_experts_16(hw.gpu_mem_bytes, profile)
    s4, s16 = profile.size_expert4_bytes, profile.size_expert16_bytes
    base = profile.size_nonexpert_bytes + profile.num_experts * s4
    # per-upgrade estimate uses (ratio-1)*s4, which can undercut s16-s4 after
    # rounding; trim until the fully resident footprint really fits
    while n16 > 0 and base + n16 * (s16 - s4) > hw.gpu_mem_bytes:
        n16 -= 1
    precisions = _precision_map(profile, profile.num_experts - n16, task.seed)
    return assign_locations(precisions, hw, profile, seed=task.seed, task=task)


def plan_quality(task: TaskRequest, hw: HardwareProfile, profile: ModelProfile) -> PlacementPlan:
    if task.preference is not Preference.QUALITY:
        raise ValueError("plan_quality needs a quality request")
    if not 0 <= task.n4_target <= profile.num_experts:
        raise ProfileError(f"n4_target={task.n4_target} outside [0, {profile.num_experts}]")
    precisions = _precision_map(profile, task.n4_target, task.seed)
    return assign_locations(precisions, hw, profile, seed=task.seed, task=task)


def make_plan(task: TaskRequest, hw: HardwareProfile, profile: ModelProfile) -> PlacementPlan:
    if task.preference is Preference.THROUGHPUT:
        return plan_throughput(task, hw, profile)
    return plan_quality(task, hw, profile)


def gpu_footprint(plan: PlacementPlan, profile: ModelProfile) -> int:
    resident = sum(expert_size(profile, e.precision)
                   for e in plan.entries if e.location is Location.GPU)
    return profile.size_nonexpert_bytes + resident + plan.swap_slot_bytes


def expected_swap(plan: PlacementPlan, profile: ModelProfile) -> int:
    return _swap_for(expert_size(profile, e.precision)
                     for e in plan.entries if e.location is Location.CPU)


def summarize(plan: PlacementPlan, profile: ModelProfile) -> PlanSummary:
    gpu_bytes = gpu_footprint(plan, profile)
    n4, n_gpu = plan.n4, plan.n_gpu
    return PlanSummary(
        n4=n4, n16=len(plan.entries) - n4,
        n_gpu=n_gpu, n_cpu=len(plan.entries) - n_gpu,
        gpu_bytes=gpu_bytes, headroom_bytes=plan.budget_bytes - gpu_bytes,
        swap_slot_bytes=plan.swap_slot_bytes,
    )


def validate_plan(plan: PlacementPlan, hw: HardwareProfile, profile: ModelProfile) -> list[str]:
    """Every violated plan invariant, as messages; empty means valid."""
    problems = []
    if plan.profile_fingerprint != profile.fingerprint():
        problems.append(f"profile fingerprint {plan.profile_fingerprint} "
                        f"!= {profile.fingerprint()}")
    if len(plan.entries) != profile.num_experts:
        problems.append(f"plan has {len(plan.entries)} entries, "
                        f"expected {profile.num_experts}")
        return problems
    if plan.experts_per_layer != profile.experts_per_layer:
        problems.append("experts_per_layer does not match profile")
    for eid, entry in plan.items():
        if not isinstance(entry.precision, Precision) or entry.precision is Precision.P8:
            problems.append(f"expert {tuple(eid)} has unsupported precision {entry.precision}")
        if not isinstance(entry.location, Location):
            problems.append(f"expert {tuple(eid)} has unknown location {entry.location}")
    if problems:
        return problems
    swap = expected_swap(plan, profile)
    if plan.swap_slot_bytes != swap:
        if swap == 0:
            problems.append(f"swap slot {plan.swap_slot_bytes} B reserved "
                            "but no expert is CPU-resident")
        else:
            problems.append(f"swap slot {plan.swap_slot_bytes} B; CPU-resident experts "
                            f"need {swap} B")
    footprint = gpu_footprint(plan, profile)
    if footprint > hw.gpu_mem_bytes:
        problems.append(f"GPU footprint {footprint} B exceeds budget "
                        f"{hw.gpu_mem_bytes} B by {footprint - hw.gpu_mem_bytes} B")
    return problems


def plan_to_dict(plan: PlacementPlan) -> dict:
    return {
        "format": PLAN_FORMAT,
        "profile_fingerprint": plan.profile_fingerprint,
        "seed": plan.seed,
        "budget_bytes": plan.budget_bytes,
        "preference": plan.preference.value if plan.preference else None,
        "n4_target": plan.n4_target,
        "experts_per_layer": plan.experts_per_layer,
        "swap_slot_bytes": plan.swap_slot_bytes,
        "experts": [[eid.layer, eid.slot, e.precision.value, e.location.value]
                    for eid, e in plan.items()],
    }


def dump_plan(plan: PlacementPlan) -> str:
    doc = plan_to_dict(plan)
    experts = doc.pop("experts")
    head = json.dumps(doc, indent=2)[:-2]
    rows = ",\n".join("    " + json.dumps(row) for row in experts)
    return f'{head},\n  "experts": [\n{rows}\n  ]\n}}\n'


def plan_from_dict(doc: dict) -> PlacementPlan:
    if not isinstance(doc, dict) or doc.get("format") != PLAN_FORMAT:
        raise PlanFormatError(f"not a {PLAN_FORMAT} document")
    try:
        per_layer = int(doc["experts_per_layer"])
        rows = doc["experts"]
        entries = []
        for i, (layer, slot, precision, location) in enumerate(rows):
            if (layer, slot) != divmod(i, per_layer):
                raise PlanFormatError(f"expert row {i} out of (layer, slot) order")
            entries.append(Entry(Precision(precision), Location(location)))
        pref = doc.get("preference")
        return PlacementPlan(
            entries=tuple(entries),
            experts_per_layer=per_layer,
            swap_slot_bytes=int(doc["swap_slot_bytes"]),
            seed=int(doc["seed"]),
            budget_bytes=int(doc["budget_bytes"]),
            profile_fingerprint=str(doc["profile_fingerprint"]),
            preference=Preference(pref) if pref else None,
            n4_target=doc.get("n4_target"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, PlanFormatError):
            raise
        raise PlanFormatError(f"malformed plan document: {exc}") from None


def load_plan(text: str) -> PlacementPlan:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PlanFormatError(f"plan is not valid JSON: {exc}") from None
    return plan_from_dict(doc)
