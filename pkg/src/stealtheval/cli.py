"""Command-line runner: attack matrices over samples, trace verification,
and report emission (CSV plus rendered figures).

The run verb is config-driven: a JSON RunSpec names the oracle, the attacks
(with per-attack config overrides), the sample source, budgets, and cost
models. Flags override spec fields. Every run writes one trace file per
(sample, attack) pair plus a manifest that pins seeds and config digests, so
an identical spec reproduces byte-identical event sequences.

Exit codes: 0 success, 1 runtime failure (all runs failed, verification
found problems), 2 invalid spec or arguments.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import glob
import json
import os
import sys
from dataclasses import fields as dataclass_fields

import numpy as np

from .attacks import REGISTRY, run_attack
from .attacks.common import AttackConfig
from .costlab import (CostModel, config_digest, check_trace, median_curve,
                      lower_median, read_trace, write_costs_csv, write_trace,
                      write_curves_csv)
from .figures import render_curves, render_frontier
from .oracles import DecisionOracle, make_oracle
from .search import SearchStrategy, egg_drop_plan
from .wire import OracleServer, RemoteOracle, connect_remote

DEFAULT_COST_MODELS = [{"c0": 0.0, "c_flagged": 1.0},
                       {"c0": 1e-3, "c_flagged": 1.0},
                       {"c0": 1.0, "c_flagged": 1.0}]
SAMPLE_TRIES_PER_POINT = 1000

_CONFIG_FIELDS = {f.name for f in dataclass_fields(AttackConfig)}


class SpecError(Exception):
    """Invalid RunSpec; carries every problem found, not just the first."""

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def _log_budgets(flagged_budget: int) -> list[int]:
    ladder = [1, 2, 5]
    budgets = []
    scale = 1
    while True:
        for step in ladder:
            b = step * scale
            if b >= flagged_budget:
                budgets.append(flagged_budget)
                return budgets
            budgets.append(b)
        scale *= 10


def build_oracle(spec: dict) -> DecisionOracle:
    if spec.get("kind") == "remote":
        oracle, _ = connect_remote(spec["endpoint"])
        return oracle
    return make_oracle(spec)


def load_runspec(path: str, overrides: dict) -> dict:
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise SpecError([f"cannot read spec: {exc}"]) from None
    except json.JSONDecodeError as exc:
        raise SpecError([f"spec is not valid JSON: {exc}"]) from None
    if not isinstance(spec, dict):
        raise SpecError(["spec must be a JSON object"])
    spec = {**spec, **{k: v for k, v in overrides.items() if v is not None}}
    validate_runspec(spec)
    return spec


def validate_runspec(spec: dict) -> None:
    problems = []
    oracle = spec.get("oracle")
    if not isinstance(oracle, dict) or "kind" not in oracle:
        problems.append("oracle: must be an object with a 'kind'")
    elif oracle["kind"] not in ("linear", "sphere", "mlp", "remote"):
        problems.append(f"oracle: unknown kind {oracle['kind']!r}")

    attacks = spec.get("attacks")
    if not attacks:
        problems.append("attacks: at least one attack required")
    else:
        for i, entry in enumerate(attacks):
            name = entry["name"] if isinstance(entry, dict) else entry
            if name not in REGISTRY:
                known = ", ".join(sorted(REGISTRY))
                problems.append(f"attacks[{i}]: unknown attack {name!r}"
                                f" (valid: {known})")
                continue
            cfg_overrides = (entry.get("overrides", {})
                             if isinstance(entry, dict) else {})
            bad = set(cfg_overrides) - _CONFIG_FIELDS
            if bad:
                problems.append(
                    f"attacks[{i}]: unknown config fields {sorted(bad)}")

    samples = spec.get("samples", {})
    if "points_file" in samples:
        if not os.path.exists(samples["points_file"]):
            problems.append(f"samples: no such file {samples['points_file']!r}")
    elif int(samples.get("count", 0)) < 1:
        problems.append("samples: count must be >= 1")

    budgets = spec.get("budgets")
    if budgets is not None:
        if list(budgets) != sorted(budgets) or any(b < 0 for b in budgets):
            problems.append("budgets: must be non-negative and ascending")

    for i, m in enumerate(spec.get("cost_models", [])):
        try:
            CostModel(float(m["c0"]), float(m["c_flagged"]))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"cost_models[{i}]: {exc}")

    if problems:
        raise SpecError(problems)


def _sample_points(oracle: DecisionOracle, samples: dict) -> list[np.ndarray]:
    if "points_file" in samples:
        with open(samples["points_file"]) as fh:
            rows = json.load(fh)
        return [np.asarray(r, dtype=np.float64) for r in rows]
    count = int(samples["count"])
    rng = np.random.default_rng(int(samples.get("seed", 0)))
    dim = oracle.descriptor.dimension
    points = []
    for _ in range(count * SAMPLE_TRIES_PER_POINT):
        cand = rng.uniform(0.0, 1.0, dim)
        if oracle.descriptor.grid is not None:
            from .vectors import quantize
            cand = quantize(cand, oracle.descriptor.grid)
        if oracle.decide(cand):
            points.append(cand)
            if len(points) == count:
                return points
    raise RuntimeError(
        f"found only {len(points)}/{count} flagged sample points")


def _attack_entries(spec: dict) -> list[tuple[str, dict]]:
    entries = []
    for entry in spec["attacks"]:
        if isinstance(entry, dict):
            entries.append((entry["name"], dict(entry.get("overrides", {}))))
        else:
            entries.append((entry, {}))
    return entries


def _build_config(spec: dict, overrides: dict, seed: int) -> AttackConfig:
    merged: dict = {"flagged_budget": int(spec.get("flagged_budget", 1000))}
    if spec.get("target_distance") is not None:
        merged["target_distance"] = float(spec["target_distance"])
    merged.update(overrides)
    merged.setdefault("seed", seed)
    if isinstance(merged.get("strategy"), dict):
        merged["strategy"] = SearchStrategy.from_dict(merged["strategy"])
    return AttackConfig(**merged)


def _run_one(spec: dict, attack: str, label: str, overrides: dict,
             sample_idx: int, point: np.ndarray, out_dir: str,
             seed: int) -> dict:
    row = {"attack": attack, "sample": sample_idx, "seed": seed}
    trace_path = os.path.join(out_dir, "traces",
                              f"{label}-s{sample_idx:03d}.jsonl")
    oracle = None
    try:
        oracle = build_oracle(spec["oracle"])
        cfg = _build_config(spec, overrides, seed)
        trace, ledger = run_attack(oracle, point, attack, cfg)
        config = {"attack": attack, "seed": cfg.seed,
                  "flagged_budget": cfg.flagged_budget, **overrides}
        if isinstance(config.get("strategy"), SearchStrategy):
            config["strategy"] = config["strategy"].to_dict()
        write_trace(trace_path, trace, spec["oracle"], config, cfg.seed,
                    final_point=trace.best_point)
        row.update(status="ok", trace=os.path.relpath(trace_path, out_dir),
                   config_digest=config_digest(config),
                   final_distance=trace.best_distance,
                   flagged=ledger.flagged, total=ledger.total)
    except Exception as exc:  # per-run isolation: one failure never aborts the matrix
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
    finally:
        # Free the connection so the next run's dial is answered; the wire
        # server handles one connection at a time.
        if isinstance(oracle, RemoteOracle):
            oracle.close()
    return row


def _write_json_atomic(path: str, obj) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def emit_reports(trace_dir: str, out_dir: str, budgets: list[int] | None,
                 cost_models: list[CostModel],
                 targets: dict[str, float] | None = None) -> list[str]:
    """Aggregate trace files into curve/cost CSVs and figures, per norm.

    Returns the list of files written. Targets map norm name to the target
    distance for cost ranking; missing norms default to the lower median of
    that group's final distances.
    """
    records = [read_trace(p)
               for p in sorted(glob.glob(os.path.join(trace_dir, "*.jsonl")))]
    if not records:
        raise RuntimeError(f"no trace files in {trace_dir}")
    written = []
    by_norm: dict[str, dict[str, list]] = {}
    for rec in records:
        norm = rec.header.get("norm", "l2")
        by_norm.setdefault(norm, {}).setdefault(rec.attack, []).append(
            rec.to_trace())
    all_curves: dict[str, list] = {}
    for norm, groups in sorted(by_norm.items()):
        if budgets is None:
            flagged_seen = [tr.events[-1][0] for traces in groups.values()
                            for tr in traces if tr.events]
            budgets_norm = _log_budgets(max(max(flagged_seen, default=1), 1))
        else:
            budgets_norm = budgets
        curves = {attack: median_curve(traces, budgets_norm)
                  for attack, traces in sorted(groups.items())}
        all_curves.update(curves)
        if targets and norm in targets:
            target = targets[norm]
        else:
            finals = [tr.best_distance for traces in groups.values()
                      for tr in traces]
            target = lower_median(finals)
        costs_path = os.path.join(out_dir, f"costs_{norm}.csv")
        write_costs_csv(costs_path, curves, cost_models, target)
        written.append(costs_path)
        curves_png = os.path.join(out_dir, f"curves_{norm}.png")
        render_curves(curves_png, curves, norm)
        written.append(curves_png)
        frontier_png = os.path.join(out_dir, f"frontier_{norm}.png")
        render_frontier(frontier_png, curves, target)
        written.append(frontier_png)
    curves_path = os.path.join(out_dir, "curves.csv")
    write_curves_csv(curves_path, all_curves)
    written.insert(0, curves_path)
    return written


# -- verbs --------------------------------------------------------------------


def cmd_run(args) -> int:
    overrides = {"flagged_budget": args.flagged_budget,
                 "out_dir": args.out}
    try:
        spec = load_runspec(args.spec, overrides)
    except SpecError as exc:
        for p in exc.problems:
            print(f"spec error: {p}", file=sys.stderr)
        return 2

    out_dir = spec.get("out_dir") or "runs"
    os.makedirs(os.path.join(out_dir, "traces"), exist_ok=True)

    oracle = build_oracle(spec["oracle"])
    points = _sample_points(oracle, spec.get("samples", {"count": 1}))
    if isinstance(oracle, RemoteOracle):
        oracle.close()
    entries = _attack_entries(spec)
    base_seed = int(spec.get("seed", 0))

    # A repeated attack name (different overrides) gets a suffixed filename.
    names = [name for name, _ in entries]
    labels = [name if names.count(name) == 1 else f"{name}-v{i}"
              for i, name in enumerate(names)]

    jobs = []
    for sample_idx, point in enumerate(points):
        for attack_idx, (attack, cfg_overrides) in enumerate(entries):
            seed = base_seed + 7919 * sample_idx + attack_idx
            jobs.append((attack, labels[attack_idx], cfg_overrides,
                         sample_idx, point, seed))

    # A remote oracle is served one connection at a time, so its runs must
    # dial one after another.
    workers = 1 if spec["oracle"]["kind"] == "remote" else args.workers

    rows = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_one, spec, attack, label, cfg_overrides,
                               sample_idx, point, out_dir, seed)
                   for attack, label, cfg_overrides, sample_idx, point, seed
                   in jobs]
        for fut in futures:
            rows.append(fut.result())
    rows.sort(key=lambda r: (r["attack"], r["sample"]))

    ok = [r for r in rows if r["status"] == "ok"]
    for r in rows:
        if r["status"] != "ok":
            print(f"run failed: {r['attack']} sample {r['sample']}: "
                  f"{r['error']}", file=sys.stderr)

    manifest = {"spec": spec, "runs": rows, "version": 1}
    _write_json_atomic(os.path.join(out_dir, "manifest.json"), manifest)

    if ok:
        cost_models = [CostModel(float(m["c0"]), float(m["c_flagged"]))
                       for m in spec.get("cost_models", DEFAULT_COST_MODELS)]
        files = emit_reports(os.path.join(out_dir, "traces"), out_dir,
                             spec.get("budgets"), cost_models)
        for f in files:
            print(f)
    print(f"{len(ok)}/{len(rows)} runs succeeded; manifest in {out_dir}")
    return 0 if ok else 1


def cmd_verify(args) -> int:
    paths = sorted(glob.glob(os.path.join(args.trace_dir, "*.jsonl")))
    if not paths:
        print(f"no trace files in {args.trace_dir}", file=sys.stderr)
        return 2
    failures = 0
    for path in paths:
        try:
            rec = read_trace(path)
            problems = check_trace(rec)
            oracle_spec = rec.header.get("oracle", {})
            final_point = rec.summary.get("final_point")
            if final_point is not None and oracle_spec.get("kind") != "remote":
                oracle = make_oracle(oracle_spec)
                if oracle.decide(np.asarray(final_point, dtype=np.float64)):
                    problems.append("final point re-queries as flagged")
        except (ValueError, OSError) as exc:
            problems = [f"corrupt trace: {exc}"]
        name = os.path.basename(path)
        if problems:
            failures += 1
            for p in problems:
                print(f"FAIL {name}: {p}")
        else:
            print(f"ok   {name}")
    print(f"{len(paths) - failures}/{len(paths)} traces pass")
    return 1 if failures else 0


def cmd_report(args) -> int:
    cost_models = [CostModel(c0, cf) for c0, cf in args.cost_model] \
        or [CostModel(float(m["c0"]), float(m["c_flagged"]))
            for m in DEFAULT_COST_MODELS]
    targets = {}
    if args.target_l2 is not None:
        targets["l2"] = args.target_l2
    if args.target_linf is not None:
        targets["linf"] = args.target_linf
    os.makedirs(args.out, exist_ok=True)
    try:
        files = emit_reports(args.trace_dir, args.out, args.budgets or None,
                             cost_models, targets)
    except RuntimeError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    for f in files:
        print(f)
    return 0


def cmd_plan_eggdrop(args) -> int:
    if args.n < 1 or args.k < 1:
        print("n and k must be >= 1", file=sys.stderr)
        return 2
    plan = egg_drop_plan(args.n, args.k)
    print(f"n={args.n} sub-intervals, k={args.k} flagged probes allowed")
    print(f"worst-case probes: {plan.worst_case_trials}")
    ladder = ", ".join(str(p) for p in plan.first_probe_schedule)
    print(f"first-stage ladder: {ladder}")
    return 0


def cmd_serve_synthetic(args) -> int:
    try:
        oracle_spec = json.loads(args.oracle)
    except json.JSONDecodeError:
        try:
            with open(args.oracle) as fh:
                oracle_spec = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"oracle spec: {exc}", file=sys.stderr)
            return 2
    if oracle_spec.get("kind") == "remote":
        print("serve-synthetic hosts local oracles only", file=sys.stderr)
        return 2
    try:
        oracle = make_oracle(oracle_spec)
    except (KeyError, ValueError) as exc:
        print(f"oracle spec: {exc}", file=sys.stderr)
        return 2
    server = OracleServer(oracle, host=args.host, port=args.port)
    host, port = server.address
    print(f"serving {oracle_spec.get('kind')} oracle on {host}:{port}",
          flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


def _cost_model_arg(text: str) -> tuple[float, float]:
    try:
        c0, cf = text.split(":")
        return float(c0), float(cf)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected c0:c_flagged, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stealtheval",
        description="Run decision-based attacks against query oracles and "
                    "report flagged-query costs.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run an attack matrix from a RunSpec")
    p_run.add_argument("spec", help="JSON RunSpec file")
    p_run.add_argument("--out", help="output directory (overrides spec)")
    p_run.add_argument("--workers", type=int, default=4,
                       help="parallel runs (remote oracles always run one "
                            "at a time)")
    p_run.add_argument("--flagged-budget", type=int, dest="flagged_budget",
                       help="flagged query budget (overrides spec)")
    p_run.set_defaults(fn=cmd_run)

    p_verify = sub.add_parser("verify", help="re-check trace invariants")
    p_verify.add_argument("trace_dir")
    p_verify.set_defaults(fn=cmd_verify)

    p_report = sub.add_parser("report",
                              help="aggregate traces into CSVs and figures")
    p_report.add_argument("trace_dir")
    p_report.add_argument("--out", default="reports")
    p_report.add_argument("--budgets", type=int, nargs="*")
    p_report.add_argument("--cost-model", type=_cost_model_arg,
                          action="append", default=[],
                          metavar="C0:CF")
    p_report.add_argument("--target-l2", type=float, dest="target_l2")
    p_report.add_argument("--target-linf", type=float, dest="target_linf")
    p_report.set_defaults(fn=cmd_report)

    p_plan = sub.add_parser("plan-eggdrop",
                            help="print the optimal probe ladder")
    p_plan.add_argument("n", type=int, help="sub-interval count")
    p_plan.add_argument("k", type=int, help="flagged probes allowed")
    p_plan.set_defaults(fn=cmd_plan_eggdrop)

    p_serve = sub.add_parser("serve-synthetic",
                             help="host a synthetic oracle on TCP")
    p_serve.add_argument("oracle",
                         help="oracle spec: inline JSON or a file path")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=0)
    p_serve.set_defaults(fn=cmd_serve_synthetic)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
