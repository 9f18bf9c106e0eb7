"""Partial reconfiguration between two placement plans.

Cost model: the CPU always keeps a 16-bit master copy of every expert.
Quantizing is local and offloading just drops the GPU copy, so neither moves
bytes toward the GPU.  A fetch moves the expert at the precision it arrives
in; dequantizing a GPU-resident expert re-sends its 16-bit weights.
Downtime is CPU->GPU bytes over the single link; quantization compute time
is not modelled.
"""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, replace
from typing import NamedTuple

from .planner import Entry, ExpertId, Location, PlacementPlan, expected_swap
from .profiles import HardwareProfile, ModelProfile, Precision, Preference, expert_size

RECONFIG_FORMAT = "moeplan.reconfig/1"


class ReconfigError(ValueError):
    """Inconsistent action, budget overrun, or mismatched plans."""


class ActionKind(str, enum.Enum):
    OFFLOAD = "offload"
    QUANTIZE = "quantize"
    DEQUANTIZE = "dequantize"
    FETCH = "fetch"


RELEASING = (ActionKind.OFFLOAD, ActionKind.QUANTIZE)
_OPPOSITE = {
    ActionKind.OFFLOAD: ActionKind.FETCH, ActionKind.FETCH: ActionKind.OFFLOAD,
    ActionKind.QUANTIZE: ActionKind.DEQUANTIZE, ActionKind.DEQUANTIZE: ActionKind.QUANTIZE,
}


class ReconfigAction(NamedTuple):
    """One step; ``precision``/``location`` describe the expert after it."""

    kind: ActionKind
    expert: ExpertId
    precision: Precision
    location: Location


@dataclass(frozen=True)
class ReconfigPlan:
    actions: tuple[ReconfigAction, ...]
    bytes_moved: int
    est_downtime_s: float
    budget_bytes: int
    profile_fingerprint: str
    # identity of the target plan, so a replay reproduces it exactly
    target_seed: int = 0
    target_preference: Preference | None = None
    target_n4: int | None = None


def action_bytes(action: ReconfigAction, profile: ModelProfile) -> int:
    if action.kind is ActionKind.FETCH:
        return expert_size(profile, action.precision)
    if action.kind is ActionKind.DEQUANTIZE and action.location is Location.GPU:
        return profile.size_expert16_bytes
    return 0


def estimate_cost(actions: ReconfigPlan | tuple[ReconfigAction, ...] | list,
                  profile: ModelProfile, hw: HardwareProfile) -> tuple[int, float]:
    """(CPU->GPU bytes, seconds) recomputed from the action list alone."""
    if isinstance(actions, ReconfigPlan):
        actions = actions.actions
    moved = sum(action_bytes(a, profile) for a in actions)
    return moved, moved / hw.transfer_bw_bytes_per_s


def diff_plans(old: PlacementPlan, new: PlacementPlan,
               profile: ModelProfile, hw: HardwareProfile) -> ReconfigPlan:
    if old.profile_fingerprint != new.profile_fingerprint:
        raise ReconfigError("plans were built for different model profiles")
    if old.profile_fingerprint != profile.fingerprint():
        raise ReconfigError("plans do not match the given model profile")

    releasing, consuming = [], []
    for (eid, before), after in zip(old.items(), new.entries):
        if before == after:
            continue
        precision, location = before
        if location is Location.GPU and after.location is Location.CPU:
            location = Location.CPU
            releasing.append(ReconfigAction(ActionKind.OFFLOAD, eid, precision, location))
        if precision is Precision.P16 and after.precision is Precision.P4:
            precision = Precision.P4
            releasing.append(ReconfigAction(ActionKind.QUANTIZE, eid, precision, location))
        if precision is Precision.P4 and after.precision is Precision.P16:
            precision = Precision.P16
            consuming.append(ReconfigAction(ActionKind.DEQUANTIZE, eid, precision, location))
        if location is Location.CPU and after.location is Location.GPU:
            location = Location.GPU
            consuming.append(ReconfigAction(ActionKind.FETCH, eid, precision, location))

    # entries iterate in (layer, slot) order, so each group is already sorted
    actions = tuple(releasing + consuming)
    moved, seconds = estimate_cost(actions, profile, hw)
    return ReconfigPlan(actions=actions, bytes_moved=moved, est_downtime_s=seconds,
                        budget_bytes=new.budget_bytes,
                        profile_fingerprint=new.profile_fingerprint,
                        target_seed=new.seed, target_preference=new.preference,
                        target_n4=new.n4_target)


class _Tracker:
    """Incremental GPU footprint while replaying actions."""

    def __init__(self, plan: PlacementPlan, profile: ModelProfile) -> None:
        self.profile = profile
        self.entries = list(plan.entries)
        self.gpu_bytes = 0
        self.cpu_sizes: Counter[int] = Counter()
        for entry in self.entries:
            self._add(entry, +1)

    def _add(self, entry: Entry, sign: int) -> None:
        size = expert_size(self.profile, entry.precision)
        if entry.location is Location.GPU:
            self.gpu_bytes += sign * size
        else:
            self.cpu_sizes[size] += sign
            if self.cpu_sizes[size] == 0:
                del self.cpu_sizes[size]

    def set(self, index: int, entry: Entry) -> None:
        self._add(self.entries[index], -1)
        self.entries[index] = entry
        self._add(entry, +1)

    def footprint(self) -> int:
        swap = max(self.cpu_sizes, default=0)
        return self.profile.size_nonexpert_bytes + self.gpu_bytes + swap


def _step(entry: Entry, action: ReconfigAction) -> Entry:
    kind = action.kind
    if kind is ActionKind.OFFLOAD and entry.location is Location.GPU:
        return entry._replace(location=Location.CPU)
    if kind is ActionKind.FETCH and entry.location is Location.CPU:
        return entry._replace(location=Location.GPU)
    if kind is ActionKind.QUANTIZE and entry.precision is Precision.P16:
        return entry._replace(precision=Precision.P4)
    if kind is ActionKind.DEQUANTIZE and entry.precision is Precision.P4:
        return entry._replace(precision=Precision.P16)
    raise ReconfigError(f"cannot {kind.value} expert {tuple(action.expert)} "
                        f"in state {entry.precision.value}/{entry.location.value}")


def apply(plan: PlacementPlan, actions: ReconfigPlan, profile: ModelProfile) -> PlacementPlan:
    """Replay ``actions`` on ``plan``.

    Releasing actions only shrink the footprint, so the target budget is
    enforced from the end of the releasing group onward, after every step.
    """
    if actions.profile_fingerprint != plan.profile_fingerprint:
        raise ReconfigError("action list was computed for a different profile")
    per_layer = plan.experts_per_layer
    tracker = _Tracker(plan, profile)
    kinds: dict[ExpertId, set[ActionKind]] = {}
    enforcing = False
    for n, action in enumerate(actions.actions):
        eid = action.expert
        if not (0 <= eid.layer < profile.num_layers and 0 <= eid.slot < per_layer):
            raise ReconfigError(f"action {n}: expert {tuple(eid)} out of range")
        done = kinds.setdefault(eid, set())
        if action.kind in done or _OPPOSITE[action.kind] in done:
            raise ReconfigError(f"action {n}: {action.kind.value} conflicts with an "
                                f"earlier action on expert {tuple(eid)}")
        done.add(action.kind)
        if action.kind not in RELEASING and not enforcing:
            enforcing = True
            _check_budget(tracker, actions.budget_bytes, n)
        index = eid.layer * per_layer + eid.slot
        updated = _step(tracker.entries[index], action)
        if updated != (action.precision, action.location):
            raise ReconfigError(f"action {n}: recorded state does not follow "
                                f"from the source plan")
        tracker.set(index, updated)
        if enforcing:
            _check_budget(tracker, actions.budget_bytes, n)
    _check_budget(tracker, actions.budget_bytes, len(actions.actions) - 1)
    result = replace(plan, entries=tuple(tracker.entries), budget_bytes=actions.budget_bytes,
                     seed=actions.target_seed, preference=actions.target_preference,
                     n4_target=actions.target_n4)
    return replace(result, swap_slot_bytes=expected_swap(result, profile))


def _check_budget(tracker: _Tracker, budget: int, n: int) -> None:
    footprint = tracker.footprint()
    if footprint > budget:
        where = f"after action {n}" if n >= 0 else "initially"
        raise ReconfigError(f"{where}: GPU footprint {footprint} B exceeds "
                            f"budget {budget} B")


def full_reload_bytes(plan: PlacementPlan, profile: ModelProfile) -> int:
    return sum(expert_size(profile, e.precision)
               for e in plan.entries if e.location is Location.GPU)


def dump_reconfig(plan: ReconfigPlan) -> str:
    head = {
        "format": RECONFIG_FORMAT,
        "profile_fingerprint": plan.profile_fingerprint,
        "budget_bytes": plan.budget_bytes,
        "bytes_moved": plan.bytes_moved,
        "est_downtime_s": plan.est_downtime_s,
        "target_seed": plan.target_seed,
        "target_preference": plan.target_preference.value if plan.target_preference else None,
        "target_n4": plan.target_n4,
    }
    text = json.dumps(head, indent=2)[:-2]
    rows = ",\n".join(
        "    " + json.dumps([a.kind.value, a.expert.layer, a.expert.slot,
                             a.precision.value, a.location.value])
        for a in plan.actions)
    body = f"\n{rows}\n  " if rows else ""
    return f'{text},\n  "actions": [{body}]\n}}\n'


def load_reconfig(text: str) -> ReconfigPlan:
    try:
        doc = json.loads(text)
        if doc.get("format") != RECONFIG_FORMAT:
            raise ReconfigError(f"not a {RECONFIG_FORMAT} document")
        actions = tuple(
            ReconfigAction(ActionKind(kind), ExpertId(int(layer), int(slot)),
                           Precision(precision), Location(location))
            for kind, layer, slot, precision, location in doc["actions"])
        return ReconfigPlan(actions=actions, bytes_moved=int(doc["bytes_moved"]),
                            est_downtime_s=float(doc["est_downtime_s"]),
                            budget_bytes=int(doc["budget_bytes"]),
                            profile_fingerprint=str(doc["profile_fingerprint"]),
                            target_seed=int(doc.get("target_seed", 0)),
                            target_preference=(Preference(doc["target_preference"])
                                               if doc.get("target_preference") else None),
                            target_n4=doc.get("target_n4"))
    except ReconfigError:
        raise
    except (json.JSONDecodeError, AttributeError, KeyError, TypeError, ValueError) as exc:
        raise ReconfigError(f"malformed reconfiguration document: {exc}") from None
