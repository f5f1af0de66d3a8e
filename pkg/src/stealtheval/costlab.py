"""Asymmetric cost evaluation and trace aggregation.

Everything here is a pure function over recorded traces: pricing a ledger,
collapsing many runs into median-distance curves, estimating how many
throwaway accounts a flagged budget burns, and ranking attacks by cost at a
target distance. Trace files are JSON lines (header, events, summary) so
every report number is recomputable offline.

Medians are lower medians (sorted[(n-1)//2]) and quartiles are the order
statistics q25 = sorted[floor(0.25*(n-1))], q75 = sorted[ceil(0.75*(n-1))],
which keeps q25 <= median <= q75 on every input without interpolation.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .attacks.common import AttackTrace
from .oracles import QueryLedger


@dataclass(frozen=True)
class CostModel:
    """Per-query price c0 plus an extra c_flagged for each flagged query."""

    c0: float
    c_flagged: float

    def __post_init__(self) -> None:
        if self.c0 < 0.0 or self.c_flagged < 0.0:
            raise ValueError("query costs must be non-negative")


@dataclass(frozen=True)
class ModerationPolicy:
    """How many flagged queries one account survives before it is banned."""

    violations_per_account: int
    benign_limit_per_account: int | None = None

    def __post_init__(self) -> None:
        if self.violations_per_account < 1:
            raise ValueError("violations_per_account must be >= 1")


@dataclass(frozen=True)
class CurvePoint:
    """Median attained distance (with quartiles) at one flagged budget.

    median_flagged/median_total are the medians of the per-trace counts
    actually spent to attain the per-trace distance at this budget; they make
    the point priceable under any CostModel and appear in no CSV.
    """

    flagged_budget: int
    median_distance: float
    q25: float
    q75: float
    median_flagged: int
    median_total: int


@dataclass(frozen=True)
class FrontierEntry:
    attack: str
    cost: float
    flagged_budget: int | None
    attained: bool


def cost_of(ledger: QueryLedger, m: CostModel) -> float:
    return ledger.total * m.c0 + ledger.flagged * m.c_flagged


def accounts_needed(flagged: int, policy: ModerationPolicy) -> int:
    if flagged < 0:
        raise ValueError("flagged count must be non-negative")
    return -(-flagged // policy.violations_per_account)


def lower_median(values: Sequence[float]):
    if not values:
        raise ValueError("median of an empty sequence")
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def _quartiles(values: Sequence[float]) -> tuple[float, float]:
    ordered = sorted(values)
    n = len(ordered)
    q25 = ordered[math.floor(0.25 * (n - 1))]
    q75 = ordered[math.ceil(0.75 * (n - 1))]
    return q25, q75


def _at_budget(events: Sequence[tuple[int, int, float]],
               budget: int) -> tuple[int, int, float]:
    """Last event with flagged <= budget; before any, the initial event."""
    best = events[0]
    for ev in events:
        if ev[0] > budget:
            break
        best = ev
    return best


def median_curve(traces: Sequence[AttackTrace],
                 budgets: Sequence[int]) -> list[CurvePoint]:
    """Collapse per-trace best-distance histories into one curve.

    For each budget, each trace contributes the best distance it attained
    with at most that many flagged queries (its initial distance when even
    the first event exceeds the budget); the curve is the across-trace
    lower median with quartiles.
    """
    if not traces:
        raise ValueError("median_curve needs at least one trace")
    if list(budgets) != sorted(budgets):
        raise ValueError("budgets must be sorted ascending")
    for tr in traces:
        if not tr.events:
            raise ValueError("trace has no events")
    points = []
    for b in budgets:
        rows = [_at_budget(tr.events, b) for tr in traces]
        dists = [r[2] for r in rows]
        q25, q75 = _quartiles(dists)
        points.append(CurvePoint(
            flagged_budget=int(b),
            median_distance=lower_median(dists),
            q25=q25,
            q75=q75,
            median_flagged=int(lower_median([r[0] for r in rows])),
            median_total=int(lower_median([r[1] for r in rows])),
        ))
    return points


def cost_frontier(curves: dict[str, list[CurvePoint]], m: CostModel,
                  target_distance: float) -> list[FrontierEntry]:
    """Cheapest cost per attack, under m, to reach the target median distance.

    Sorted by cost, attained entries first; attacks whose curve never
    reaches the target are marked unattained with infinite cost.
    """
    entries = []
    for attack, points in curves.items():
        best: FrontierEntry | None = None
        for p in points:
            if p.median_distance > target_distance:
                continue
            cost = p.median_total * m.c0 + p.median_flagged * m.c_flagged
            if best is None or cost < best.cost:
                best = FrontierEntry(attack, cost, p.flagged_budget, True)
        entries.append(best or FrontierEntry(attack, math.inf, None, False))
    return sorted(entries, key=lambda e: (not e.attained, e.cost, e.attack))


# -- trace files -------------------------------------------------------------


@dataclass
class TraceRecord:
    """One trace file parsed back: header dict, event rows, summary dict."""

    header: dict
    events: list[tuple[int, int, float]]
    summary: dict
    path: str | None = None

    @property
    def attack(self) -> str:
        return self.header["attack"]

    @property
    def final_distance(self) -> float:
        return self.events[-1][2] if self.events else math.inf

    def to_trace(self) -> AttackTrace:
        from .vectors import NormKind
        return AttackTrace(attack=self.attack,
                           norm=NormKind(self.header.get("norm", "l2")),
                           events=list(self.events),
                           best_distance=self.final_distance,
                           summary=dict(self.summary))


def config_digest(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def write_trace(path: str, trace: AttackTrace, oracle_spec: dict,
                config: dict, seed: int,
                final_point: Sequence[float] | None = None) -> None:
    """One JSON-lines file: header record, {"f","t","d"} events, summary.

    Written atomically (temp file + rename) so readers never see a partial
    trace. Event lines carry exactly the three short keys; header and
    summary records are tagged with a "record" field.
    """
    header = {
        "record": "header",
        "attack": trace.attack,
        "norm": trace.norm.value,
        "config_digest": config_digest(config),
        "config": config,
        "oracle": oracle_spec,
        "seed": seed,
    }
    summary = {"record": "summary", **trace.summary}
    if final_point is not None:
        summary["final_point"] = [float(v) for v in final_point]
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for f, t, d in trace.events:
            fh.write(json.dumps({"f": f, "t": t, "d": d}) + "\n")
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_trace(path: str) -> TraceRecord:
    header: dict | None = None
    summary: dict | None = None
    events: list[tuple[int, int, float]] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: not JSON: {exc}") from None
            kind = obj.get("record")
            if kind == "header":
                header = obj
            elif kind == "summary":
                summary = obj
            elif set(obj) == {"f", "t", "d"}:
                events.append((int(obj["f"]), int(obj["t"]), float(obj["d"])))
            else:
                raise ValueError(f"{path}:{line_no}: unrecognized record")
    if header is None or summary is None:
        raise ValueError(f"{path}: missing header or summary record")
    return TraceRecord(header=header, events=events, summary=summary,
                       path=path)


def check_trace(record: TraceRecord) -> list[str]:
    """Invariant violations in one parsed trace; empty means clean.

    Checks counter monotonicity, flagged <= total per event, monotone
    non-increasing best distance, and summary/event agreement.
    """
    problems = []
    prev_f = prev_t = -1
    prev_d = math.inf
    for i, (f, t, d) in enumerate(record.events):
        if f > t:
            problems.append(f"event {i}: flagged {f} > total {t}")
        if f < prev_f or t < prev_t:
            problems.append(f"event {i}: counters decreased")
        if d > prev_d:
            problems.append(f"event {i}: best distance increased")
        prev_f, prev_t, prev_d = f, t, d
    if not record.events:
        problems.append("no events")
    summary = record.summary
    if record.events and "flagged" in summary:
        last_f, last_t, _ = record.events[-1]
        if summary["flagged"] < last_f or summary["total"] < last_t:
            problems.append("summary counters below last event")
        if summary["flagged"] > summary["total"]:
            problems.append("summary flagged exceeds total")
    by_phase = summary.get("by_phase")
    if by_phase is not None:
        total = sum(t for t, _ in by_phase.values())
        flagged = sum(f for _, f in by_phase.values())
        if total != summary.get("total") or flagged != summary.get("flagged"):
            problems.append("per-phase sums disagree with summary totals")
    return problems


# -- CSV reports -------------------------------------------------------------

CURVE_COLUMNS = ["attack", "budget", "median", "q25", "q75"]
COST_COLUMNS = ["attack", "c0", "c_flagged", "cost_at_target"]


def write_curves_csv(path: str, curves: dict[str, list[CurvePoint]]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for attack in sorted(curves):
            for p in curves[attack]:
                writer.writerow([attack, p.flagged_budget, p.median_distance,
                                 p.q25, p.q75])
    os.replace(tmp, path)


def write_costs_csv(path: str, curves: dict[str, list[CurvePoint]],
                    models: Iterable[CostModel],
                    target_distance: float) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COST_COLUMNS)
        for m in models:
            for entry in cost_frontier(curves, m, target_distance):
                cost = entry.cost if entry.attained else ""
                writer.writerow([entry.attack, m.c0, m.c_flagged, cost])
    os.replace(tmp, path)
