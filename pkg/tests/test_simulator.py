import dataclasses
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moeplan.gating import GatingTrace, generate_trace
from moeplan.planner import Entry, Location, PlacementPlan, plan_quality
from moeplan.profiles import (
    MIXTRAL_SEC41,
    HardwareProfile,
    ModelProfile,
    Precision,
    TaskRequest,
    expert_size,
)
from moeplan.simulator import (
    ResidencyPolicy,
    SimulationError,
    expected_throughput,
    simulate,
    sweep_memory,
)

from conftest import GB, MB

P4, P16 = Precision.P4, Precision.P16
GPU, CPU = Location.GPU, Location.CPU
HW = HardwareProfile()
LRU = ResidencyPolicy.parse

TOY = ModelProfile(num_layers=1, experts_per_layer=2, top_k=1, size_nonexpert_bytes=1000,
                   size_expert16_bytes=336 * MB, compute_latency16_s=0.0,
                   nonexpert_latency_s=0.0)


def uniform_plan(profile, precision, location, budget=100 * GB):
    swap = expert_size(profile, precision) if location is CPU else 0
    return PlacementPlan(tuple(Entry(precision, location) for _ in range(profile.num_experts)),
                         profile.experts_per_layer, swap, 0, budget, profile.fingerprint())


def brute_force_static(plan, trace, profile, hw):
    """Serial walk in seconds, independent of the vectorised ns path."""
    total = hits = moved = 0.0
    for t in range(trace.tokens):
        total += profile.nonexpert_latency_s
        for layer in range(trace.num_layers):
            for slot in trace.slots[t, layer]:
                entry = plan.entries[layer * profile.experts_per_layer + int(slot)]
                if entry.location is GPU:
                    hits += 1
                else:
                    size = expert_size(profile, entry.precision)
                    moved += size
                    total += size / hw.transfer_bw_bytes_per_s
                penalty = profile.compute_penalty4 if entry.precision is P4 else 1.0
                total += profile.compute_latency16_s * penalty
    return total, hits, moved


def check_report(r):
    assert r.total_time_ns == r.transfer_time_ns + r.compute_time_ns + r.nonexpert_time_ns
    assert r.total_time_s == pytest.approx(r.transfer_time_s + r.compute_time_s
                                           + r.nonexpert_time_s, rel=1e-12)
    assert r.throughput_tps == pytest.approx(r.tokens / r.total_time_s, rel=1e-12)
    assert 0 <= r.hit_rate <= 1 and r.hit_rate == r.hits / r.activations


def test_toy_all_miss():
    plan = uniform_plan(TOY, P4, CPU)
    r = simulate(plan, generate_trace(TOY, 10, 0), TOY, HW)
    check_report(r)
    assert r.hits == 0 and r.activations == 10
    assert r.bytes_transferred == 10 * 84 * MB
    assert r.total_time_s == pytest.approx(10 * 84e6 / HW.transfer_bw_bytes_per_s, rel=1e-9)
    assert r.total_time_s == pytest.approx(0.068375, rel=1e-6)
    assert r.throughput_tps == pytest.approx(10 / 0.068375, rel=1e-6)
    assert round(r.throughput_tps, 1) == 146.3
    assert expected_throughput(plan, TOY, HW) == pytest.approx(r.throughput_tps, rel=1e-9)


def test_calibrated_ceiling(sec41):
    plan = uniform_plan(sec41, P16, GPU)
    r = simulate(plan, generate_trace(sec41, 100, 3), sec41, HW)
    check_report(r)
    assert abs(r.throughput_tps - 13.00) <= 0.01
    assert r.hit_rate == 1 and r.bytes_transferred == 0
    assert 1 / expected_throughput(plan, sec41, HW) == pytest.approx(1 / 13, rel=1e-12)


def test_transfer_bound_floor(sec41):
    r = simulate(uniform_plan(sec41, P16, CPU), generate_trace(sec41, 100, 3), sec41, HW)
    check_report(r)
    per_token = 64 * (0.02735 + sec41.compute_latency16_s) + sec41.nonexpert_latency_s
    assert per_token == pytest.approx(1.827, abs=5e-4)
    assert r.throughput_tps == pytest.approx(1 / per_token, rel=1e-6)
    assert 0.5 <= r.throughput_tps <= 0.65


def test_four_bit_compute_penalty(sec41):
    trace = generate_trace(sec41, 50, 1)
    t16 = simulate(uniform_plan(sec41, P16, GPU), trace, sec41, HW).throughput_tps
    t4 = simulate(uniform_plan(sec41, P4, GPU), trace, sec41, HW).throughput_tps
    assert t4 < t16


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 256), st.integers(3_600 * MB, 95 * GB))
def test_static_matches_brute_force(seed, n4, mem):
    plan = plan_quality(TaskRequest("quality", n4, seed), HW.with_memory(mem), MIXTRAL_SEC41)
    trace = generate_trace(MIXTRAL_SEC41, 5, seed)
    r = simulate(plan, trace, MIXTRAL_SEC41, HW)
    check_report(r)
    total, hits, moved = brute_force_static(plan, trace, MIXTRAL_SEC41, HW)
    assert r.hits == hits and r.bytes_transferred == moved
    assert r.total_time_s == pytest.approx(total, rel=1e-6)


def test_oracle_agreement_statistical(sec41):
    rng = random.Random(5)
    trace = generate_trace(sec41, 10_000, 17)
    for _ in range(5):
        plan = plan_quality(TaskRequest("quality", rng.randint(0, 256), rng.getrandbits(32)),
                            HW.with_memory(rng.randint(4 * GB, 60 * GB)), sec41)
        sim = simulate(plan, trace, sec41, HW).throughput_tps
        assert abs(sim - expected_throughput(plan, sec41, HW)) / sim <= 0.02


def test_expected_throughput_monotone_in_residency(sec41):
    plan = uniform_plan(sec41, P4, CPU)
    entries = list(plan.entries)
    previous = expected_throughput(plan, sec41, HW)
    for i in random.Random(2).sample(range(256), 256):
        entries[i] = Entry(P4, GPU)
        current = expected_throughput(dataclasses.replace(plan, entries=tuple(entries)), sec41, HW)
        assert current >= previous
        previous = current


def test_lru_every_expert_misses_once(sec41):
    plan = uniform_plan(sec41, P4, CPU)
    trace = generate_trace(sec41, 200, 4)
    r = simulate(plan, trace, sec41, HW, LRU("lru:256"))
    check_report(r)
    distinct = len(np.unique(trace.expert_index()))
    assert r.activations - r.hits == distinct
    assert r.bytes_transferred == distinct * 84 * MB


def test_lru_small_cache_and_eviction_order():
    profile = ModelProfile(num_layers=1, experts_per_layer=3, top_k=1, size_nonexpert_bytes=1,
                           size_expert16_bytes=4, compute_latency16_s=0.0,
                           nonexpert_latency_s=0.0)
    plan = uniform_plan(profile, P16, CPU)
    slots = np.array([0, 1, 0, 2, 1, 0], dtype=np.int16).reshape(6, 1, 1)
    trace = GatingTrace(slots, 3)
    # capacity 2: 0m 1m 0h 2m(evict 1) 1m(evict 0) 0m
    r = simulate(plan, trace, profile, HW, LRU("lru:2"))
    assert r.hits == 1
    assert simulate(plan, trace, profile, HW, LRU("lru:1")).hits == 0
    assert simulate(plan, trace, profile, HW).hits == 0


def test_lru_pins_gpu_experts(sec41):
    plan = plan_quality(TaskRequest("quality", 256, 1), HW.with_memory(15 * GB), sec41)
    trace = generate_trace(sec41, 100, 2)
    static = simulate(plan, trace, sec41, HW)
    lru = simulate(plan, trace, sec41, HW, LRU("lru:1"))
    assert lru.hits >= static.hits


def test_policy_parsing():
    assert str(LRU("LRU:4")) == "lru:4" and str(LRU("static")) == "static"
    for bad in ("lru", "lru:0", "fifo", "static:3"):
        with pytest.raises(ValueError):
            LRU(bad)


def test_mismatched_inputs(sec41, table1):
    trace = generate_trace(table1, 2, 0)
    with pytest.raises(SimulationError):
        simulate(uniform_plan(sec41, P4, GPU), generate_trace(TOY, 2, 0), sec41, HW)
    with pytest.raises(SimulationError):
        simulate(uniform_plan(sec41, P4, GPU), trace, table1, HW)


def test_sweep_single_budget_matches_direct(sec41):
    task = TaskRequest("quality", 128, 6)
    [row] = sweep_memory([20 * GB], task, sec41, HW, 50, 8)
    plan = plan_quality(task, HW.with_memory(20 * GB), sec41)
    assert row.report == simulate(plan, generate_trace(sec41, 50, 8), sec41, HW)
    assert row.summary.n4 == 128


def test_sweep_marks_infeasible(sec41):
    rows = sweep_memory([2 * GB, 30 * GB], TaskRequest("throughput"), sec41, HW, 10, 0)
    assert [r.feasible for r in rows] == [False, True]
    with pytest.raises(ValueError):
        sweep_memory([], TaskRequest("throughput"), sec41, HW, 10, 0)


def test_throughput_sweep_non_decreasing(sec41):
    budgets = list(range(24 * GB, 91 * GB, 2 * GB))
    rows = sweep_memory(budgets, TaskRequest("throughput", seed=3), sec41, HW, 500, 1)
    tps = [r.report.throughput_tps for r in rows]
    # upgrading to 16 bit trades a little speed for quality once fully resident
    resident = [r.summary.n_gpu == 256 for r in rows]
    partial = [t for t, full in zip(tps, resident) if not full]
    assert partial == sorted(partial)
    assert min(t for t, full in zip(tps, resident) if full) >= max(partial, default=0)


def test_report_json_is_stable(sec41):
    r = simulate(uniform_plan(sec41, P4, GPU), generate_trace(sec41, 5, 0), sec41, HW)
    assert r.to_json() == r.to_json() and '"throughput_tps"' in r.to_json()
