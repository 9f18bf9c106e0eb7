import dataclasses
import random

import pytest
from hypothesis import given, settings, strategies as st

from moeplan.planner import (
    Entry,
    ExpertId,
    Location,
    PlacementPlan,
    PlanningError,
    expected_swap,
    plan_quality,
    plan_throughput,
)
from moeplan.profiles import MIXTRAL_SEC41, HardwareProfile, Precision, TaskRequest
from moeplan.reconfig import (
    ActionKind,
    ReconfigAction,
    ReconfigError,
    ReconfigPlan,
    apply,
    diff_plans,
    dump_reconfig,
    estimate_cost,
    full_reload_bytes,
    load_reconfig,
)

from conftest import GB, MB

P4, P16 = Precision.P4, Precision.P16
GPU, CPU = Location.GPU, Location.CPU
HW = HardwareProfile()


def hand_plan(entries, budget=80 * GB, profile=MIXTRAL_SEC41):
    plan = PlacementPlan(entries=tuple(entries), experts_per_layer=profile.experts_per_layer,
                         swap_slot_bytes=0, seed=0, budget_bytes=budget,
                         profile_fingerprint=profile.fingerprint())
    return dataclasses.replace(plan, swap_slot_bytes=expected_swap(plan, profile))


def first_on_gpu(n, precision=P4, budget=80 * GB):
    return hand_plan([Entry(precision, GPU if i < n else CPU) for i in range(256)], budget)


def test_identity_diff_is_empty(sec41):
    a = first_on_gpu(196)
    d = diff_plans(a, a, sec41, HW)
    assert d.actions == () and d.bytes_moved == 0 and d.est_downtime_s == 0
    assert apply(a, d, sec41) == a


def test_budget_shrink_offloads_only(sec41):
    old, new = first_on_gpu(196), first_on_gpu(100, budget=11_700 * MB)
    d = diff_plans(old, new, sec41, HW)
    assert len(d.actions) == 96
    assert all(a.kind is ActionKind.OFFLOAD for a in d.actions)
    assert d.bytes_moved == 0 and d.est_downtime_s == 0
    assert apply(old, d, sec41) == new


def test_single_dequantize_costs_one_transfer(sec41):
    old = first_on_gpu(256)
    entries = list(old.entries)
    entries[5] = Entry(P16, GPU)
    new = hand_plan(entries)
    d = diff_plans(old, new, sec41, HW)
    assert [(a.kind, a.expert) for a in d.actions] == [(ActionKind.DEQUANTIZE, ExpertId(0, 5))]
    assert d.bytes_moved == 336 * MB
    assert d.est_downtime_s == pytest.approx(0.02735, rel=1e-12)


def test_estimate_cost_examples(sec41):
    assert estimate_cost((), sec41, HW) == (0, 0)
    fetches = [ReconfigAction(ActionKind.FETCH, ExpertId(i // 8, i % 8), P4, GPU)
               for i in range(96)]
    moved, seconds = estimate_cost(fetches, sec41, HW)
    assert moved == 8_064_000_000
    assert seconds == pytest.approx(8.064e9 / 12.285e9, rel=1e-4)
    deq = [ReconfigAction(ActionKind.DEQUANTIZE, ExpertId(0, 0), P16, GPU)]
    assert estimate_cost(deq, sec41, HW) == (336 * MB, pytest.approx(0.02735))


def test_action_ordering_and_both_changes(sec41):
    old = hand_plan([Entry(P16, GPU), Entry(P4, CPU)] + [Entry(P4, GPU)] * 254)
    new = hand_plan([Entry(P4, CPU), Entry(P16, GPU)] + [Entry(P4, GPU)] * 254)
    d = diff_plans(old, new, sec41, HW)
    assert [a.kind for a in d.actions] == [ActionKind.OFFLOAD, ActionKind.QUANTIZE,
                                           ActionKind.DEQUANTIZE, ActionKind.FETCH]
    # dequantize happens on the CPU copy, the fetch carries the 16-bit weights
    assert d.bytes_moved == 336 * MB
    assert apply(old, d, sec41) == new


def test_apply_rejects_inconsistent_action(sec41):
    a = first_on_gpu(10)
    bad = ReconfigPlan((ReconfigAction(ActionKind.FETCH, ExpertId(0, 0), P4, GPU),),
                       84 * MB, 0.0, a.budget_bytes, a.profile_fingerprint)
    with pytest.raises(ReconfigError, match="cannot fetch"):
        apply(a, bad, sec41)


def test_apply_rejects_opposite_pair(sec41):
    a = first_on_gpu(10)
    e = ExpertId(0, 0)
    bad = ReconfigPlan((ReconfigAction(ActionKind.OFFLOAD, e, P4, CPU),
                        ReconfigAction(ActionKind.FETCH, e, P4, GPU)),
                       0, 0.0, a.budget_bytes, a.profile_fingerprint)
    with pytest.raises(ReconfigError, match="conflicts"):
        apply(a, bad, sec41)


def test_apply_rejects_budget_overrun(sec41):
    a = first_on_gpu(10)
    e = ExpertId(3, 0)
    tight = ReconfigPlan((ReconfigAction(ActionKind.FETCH, e, P4, GPU),),
                         84 * MB, 0.0, 4 * GB, a.profile_fingerprint)
    with pytest.raises(ReconfigError, match="exceeds budget"):
        apply(a, tight, sec41)


def test_profile_mismatch(sec41, table1):
    a = first_on_gpu(10)
    other = dataclasses.replace(a, profile_fingerprint=table1.fingerprint())
    with pytest.raises(ReconfigError):
        diff_plans(a, other, sec41, HW)


def test_reconfig_document_round_trip(sec41):
    old = plan_throughput(TaskRequest("throughput", seed=4), HW.with_memory(30 * GB), sec41)
    new = plan_quality(TaskRequest("quality", 200, 4), HW.with_memory(18 * GB), sec41)
    d = diff_plans(old, new, sec41, HW)
    text = dump_reconfig(d)
    assert load_reconfig(text) == d
    assert apply(old, load_reconfig(text), sec41) == new
    assert load_reconfig(dump_reconfig(diff_plans(old, old, sec41, HW))).actions == ()


def test_load_reconfig_errors():
    with pytest.raises(ReconfigError):
        load_reconfig("[]")
    with pytest.raises(ReconfigError):
        load_reconfig('{"format": "moeplan.reconfig/1", "actions": [["warp", 0, 0, "P4", "GPU"]]}')


# ----- properties ---------------------------------------------------------

def random_plan(rng: random.Random):
    mem = rng.randint(3_300 * MB, 95 * GB)
    seed = rng.getrandbits(64)
    try:
        if rng.random() < 0.5:
            return plan_throughput(TaskRequest("throughput", seed=seed), HW.with_memory(mem),
                                   MIXTRAL_SEC41)
        return plan_quality(TaskRequest("quality", rng.randint(0, 256), seed),
                            HW.with_memory(mem), MIXTRAL_SEC41)
    except PlanningError:
        return random_plan(rng)


def check_pair(a, b, profile=MIXTRAL_SEC41):
    d = diff_plans(a, b, profile, HW)
    assert apply(a, d, profile) == b
    differing = sum(x != y for x, y in zip(a.entries, b.entries))
    assert len(d.actions) <= 2 * differing
    touched = {act.expert for act in d.actions}
    assert len(touched) == differing
    assert (d.bytes_moved, d.est_downtime_s) == estimate_cost(d, profile, HW)
    reload = full_reload_bytes(b, profile)
    assert d.bytes_moved <= reload
    if d.bytes_moved == reload and reload > 0:
        # nothing already on the GPU in the state B wants was reused
        assert not any(x == y and y.location is GPU for x, y in zip(a.entries, b.entries))
    kinds = [act.kind for act in d.actions]
    releasing = [k in (ActionKind.OFFLOAD, ActionKind.QUANTIZE) for k in kinds]
    assert releasing == sorted(releasing, reverse=True)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32))
def test_property_composition_and_minimality(seed):
    rng = random.Random(seed)
    check_pair(random_plan(rng), random_plan(rng))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.integers(3_500 * MB, 95 * GB), st.integers(3_500 * MB, 95 * GB))
def test_property_same_task_across_budgets(seed, m1, m2):
    task = TaskRequest("quality", seed % 257, seed)
    a = plan_quality(task, HW.with_memory(m1), MIXTRAL_SEC41)
    b = plan_quality(task, HW.with_memory(m2), MIXTRAL_SEC41)
    d = diff_plans(a, b, MIXTRAL_SEC41, HW)
    # same seed, same precisions: only moves
    assert {act.kind for act in d.actions} <= {ActionKind.OFFLOAD, ActionKind.FETCH}
    check_pair(a, b)


def test_metadata_only_change_replays(sec41):
    a = first_on_gpu(256, budget=30 * GB)
    b = dataclasses.replace(a, seed=99, budget_bytes=29 * GB)
    d = diff_plans(a, b, sec41, HW)
    assert d.actions == ()
    assert apply(a, d, sec41) == b
