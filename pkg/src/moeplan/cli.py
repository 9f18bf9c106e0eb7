"""``moeplan`` command line.

Exit codes: 0 success, 2 usage error, 3 validation error (bad config, plan,
trace or profile mismatch), 4 infeasible memory budget.

The configuration file comes from ``--config`` or ``$MOEPLAN_CONFIG``;
without either, the built-in ``mixtral-sec41`` profile is used.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import yaml

from . import figures
from .gating import TraceError, generate_trace, read_trace, write_trace
from .planner import (
    PlanFormatError,
    PlanningError,
    dump_plan,
    load_plan,
    make_plan,
    summarize,
    validate_plan,
)
from .profiles import (
    HardwareProfile,
    ModelProfile,
    Preference,
    ProfileError,
    TaskRequest,
    parse_size,
    profiles_from_mapping,
)
from .quality import load_anchors
from .reconfig import ReconfigError, diff_plans, dump_reconfig
from .report import SWEEP_COLUMNS, sweep_records, to_csv, to_json
from .simulator import ResidencyPolicy, SimulationError, sweep_memory, simulate

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_INFEASIBLE = 4
CONFIG_ENV = "MOEPLAN_CONFIG"


class UsageError(Exception):
    pass


def parse_range(text: str) -> list[int]:
    """``24GB:90GB:2GB`` (inclusive) or a single size, as byte values."""
    parts = text.split(":")
    if len(parts) == 1:
        return [parse_size(parts[0])]
    if len(parts) != 3:
        raise UsageError(f"range must be start:stop:step, got {text!r}")
    start, stop, step = (parse_size(p) for p in parts)
    if step <= 0 or stop < start:
        raise UsageError(f"empty or backwards range {text!r}")
    return list(range(start, stop + 1, step))


def parse_int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise UsageError("grid must be non-empty")
    return values


def _load_config(path: str | None) -> tuple[ModelProfile, HardwareProfile, dict]:
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        doc = {"profile": "mixtral-sec41"}
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ProfileError(f"parse error in {path}: {exc}") from None
    model, hw = profiles_from_mapping(doc)
    return model, hw, doc


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)


def _emit(records: list[dict], fmt: str, **meta) -> str:
    return to_json(records, **meta) if fmt == "json" else to_csv(records)


def _task(args, default: TaskRequest | None = None) -> TaskRequest:
    preference = args.preference or (default.preference.value if default else None)
    if preference is None:
        raise UsageError("--preference is required")
    n4 = args.n4 if args.n4 is not None else (default.n4_target if default else None)
    if preference == Preference.QUALITY.value and n4 is None:
        raise UsageError("--preference quality requires --n4")
    seed = args.seed if args.seed is not None else (default.seed if default else 0)
    return TaskRequest(Preference(preference), n4 if preference == "quality" else None, seed)


def _load_checked_plan(path: str, model: ModelProfile):
    plan = load_plan(_read(path))
    if plan.profile_fingerprint != model.fingerprint():
        raise PlanFormatError(f"{path}: plan fingerprint {plan.profile_fingerprint} does not "
                              f"match configured profile {model.fingerprint()}")
    return plan


def cmd_plan(args) -> int:
    model, hw, _ = _load_config(args.config)
    if args.mem is not None:
        hw = hw.with_memory(parse_size(args.mem))
    plan = make_plan(_task(args), hw, model)
    _write(args.out, dump_plan(plan))
    sys.stdout.write(_emit([summarize(plan, model).as_row()], args.format))
    return EXIT_OK


def cmd_simulate(args) -> int:
    model, hw, _ = _load_config(args.config)
    plan = _load_checked_plan(args.plan, model)
    hw = hw.with_memory(plan.budget_bytes)
    problems = validate_plan(plan, hw, model)
    if problems:
        raise PlanFormatError("; ".join(problems))
    if args.trace:
        if args.tokens is not None:
            raise UsageError("--trace and --tokens are mutually exclusive")
        trace = read_trace(_read(args.trace))
    else:
        trace = generate_trace(model, args.tokens or 100, args.seed or 0)
    report = simulate(plan, trace, model, hw, ResidencyPolicy.parse(args.policy))
    text = report.to_json() if args.format == "json" else to_csv([report.as_row()])
    _write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_reconfigure(args) -> int:
    model, hw, _ = _load_config(args.config)
    old = _load_checked_plan(args.source, model)
    if (args.to_mem is None) == (args.to_plan is None):
        raise UsageError("give exactly one of --to-mem or --to-plan")
    if args.to_plan:
        new = _load_checked_plan(args.to_plan, model)
    else:
        default = (TaskRequest(old.preference, old.n4_target, old.seed)
                   if old.preference else None)
        new = make_plan(_task(args, default), hw.with_memory(parse_size(args.to_mem)), model)
        _write(args.plan_out, dump_plan(new))
    actions = diff_plans(old, new, model, hw)
    _write(args.out, dump_reconfig(actions))
    counts = {kind: 0 for kind in ("offload", "quantize", "dequantize", "fetch")}
    for action in actions.actions:
        counts[action.kind.value] += 1
    row = {"actions": len(actions.actions), **counts,
           "bytes_moved": actions.bytes_moved,
           "est_downtime_s": f"{actions.est_downtime_s:.6f}"}
    sys.stdout.write(_emit([row], args.format))
    return EXIT_OK


def cmd_pareto(args) -> int:
    model, hw, doc = _load_config(args.config)
    anchors = load_anchors(doc)
    if args.dataset not in anchors:
        raise UsageError(f"unknown dataset {args.dataset!r}; have {sorted(anchors)}")
    budgets = parse_range(args.mem_range)
    grid = parse_int_list(args.n4_grid)
    trace = generate_trace(model, args.tokens, args.seed)
    rows = []
    for n4 in grid:
        task = TaskRequest(Preference.QUALITY, n4, args.seed)
        rows.extend(sweep_memory(budgets, task, model, hw, args.tokens, args.seed,
                                 trace=trace))
    records = sweep_records(rows, anchors[args.dataset], model.num_experts)
    text = (to_json(records, dataset=args.dataset, tokens=args.tokens, seed=args.seed)
            if args.format == "json" else to_csv(records, SWEEP_COLUMNS))
    if args.out:
        _write(args.out, text)
        if args.figures:
            for path in figures.render_sweep_figures(records, Path(args.out)):
                print(f"wrote {path}", file=sys.stderr)
    else:
        if args.figures:
            raise UsageError("--figures needs --out")
        sys.stdout.write(text)
    return EXIT_OK


def cmd_trace(args) -> int:
    model, _, _ = _load_config(args.config)
    if args.action == "generate":
        trace = generate_trace(model, args.tokens, args.seed)
        text = write_trace(trace)
        if args.out:
            _write(args.out, text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    trace = read_trace(_read(args.input))
    if not trace.matches(model):
        raise TraceError("trace shape does not match the configured profile")
    print(f"ok: {trace.tokens} tokens x {trace.num_layers} layers, top_k={trace.top_k}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moeplan",
        description="Plan, simulate and reconfigure partially quantized MoE serving.")
    parser.add_argument("--config", help=f"YAML config (default: ${CONFIG_ENV} "
                                         "or built-in mixtral-sec41)")
    sub = parser.add_subparsers(dest="command", required=True)

    def task_flags(p, required: bool) -> None:
        p.add_argument("--preference", choices=[p.value for p in Preference],
                       required=required)
        p.add_argument("--n4", type=int, help="4-bit expert count (quality preference)")
        p.add_argument("--seed", type=int)

    def fmt_flag(p) -> None:
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("plan", help="build a placement plan")
    task_flags(p, required=True)
    p.add_argument("--mem", help="GPU memory budget, e.g. 30GB")
    p.add_argument("--out", help="write the plan document here")
    fmt_flag(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", help="simulate token generation for a plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--trace", help="replay a trace file")
    p.add_argument("--tokens", type=int, help="synthetic trace length (default 100)")
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", default="static", help="static | lru:<slots>")
    p.add_argument("--out")
    fmt_flag(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconfigure", help="minimal actions between two plans")
    p.add_argument("--from", dest="source", required=True)
    p.add_argument("--to-mem")
    p.add_argument("--to-plan")
    task_flags(p, required=False)
    p.add_argument("--out", help="write the action list here")
    p.add_argument("--plan-out", help="write the re-planned target here")
    fmt_flag(p)
    p.set_defaults(func=cmd_reconfigure)

    p = sub.add_parser("pareto", help="memory x n4 sweep with frontier marking")
    p.add_argument("--mem-range", required=True, help="start:stop:step, e.g. 24GB:90GB:2GB")
    p.add_argument("--n4-grid", required=True, help="comma-separated, e.g. 0,64,128")
    p.add_argument("--tokens", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset", default="wikitext2")
    p.add_argument("--out")
    p.add_argument("--figures", action="store_true",
                   help="also render PNG figures next to --out")
    fmt_flag(p)
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("trace", help="generate or validate gating traces")
    p.add_argument("action", choices=("generate", "validate"))
    p.add_argument("--tokens", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--in", dest="input")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "trace" and args.action == "validate" and not args.input:
        parser.error("trace validate needs --in")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"moeplan: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PlanningError as exc:
        print(f"moeplan: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ProfileError, PlanFormatError, TraceError, SimulationError,
            ReconfigError, ValueError) as exc:
        print(f"moeplan: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
