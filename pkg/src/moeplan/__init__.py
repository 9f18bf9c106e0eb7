"""Adaptive partitioning, reconfiguration and simulation for partially
quantized Mixture-of-Experts serving on a single GPU."""

from .gating import GatingTrace, generate_trace, read_trace, write_trace
from .planner import (
    Entry,
    ExpertId,
    Location,
    PlacementPlan,
    PlanningError,
    assign_locations,
    assign_quantization,
    gpu_footprint,
    make_plan,
    num_experts_16,
    plan_quality,
    plan_throughput,
    summarize,
    validate_plan,
)
from .profiles import (
    MIXTRAL_SEC41,
    MIXTRAL_TABLE1,
    HardwareProfile,
    ModelProfile,
    Precision,
    Preference,
    TaskRequest,
    expert_size,
    load_profiles,
    model_size,
)
from .quality import QualityAnchors, n4_for_budget, pareto_frontier, ppl_estimate
from .reconfig import apply, diff_plans, estimate_cost
from .simulator import ResidencyPolicy, SimReport, expected_throughput, simulate, sweep_memory

__version__ = "0.1.0"
