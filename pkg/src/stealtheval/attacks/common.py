"""Shared attack plumbing: configuration, trace recording, initialization.

An attack run is a loop of primitives (single probes and boundary searches)
against one instrumented oracle. The recorder owns the stop conditions and
the improvement log; budget checks run between primitive calls, so a run
can overshoot its budget by at most one primitive's worst case (documented
per attack).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from ..oracles import InstrumentedOracle, Phase
from ..search import (SearchOutcome, SearchStrategy, path_binary_search,
                      path_march_search, probe_point, ray_path)
from ..vectors import Array, NormKind, norm, unit

SAFE_START = 0.01  # half-width of the relative search windows
FLAGGED_BUDGET_DEFAULT = 1000


class InitializationError(Exception):
    """No safe starting point/direction found within the allowance."""


@dataclass(frozen=True)
class AttackConfig:
    """Knobs shared by every attack; attack-specific defaults fill in None.

    strategy drives every boundary-distance search the attack issues; the
    per-attack default is bisection for base attacks and a full line search
    for stealthy variants. grad_samples overrides the gradient batch size.
    signopt_shrink divides the stealthy sign-gradient batch (n/k).
    rays_early_stop is the gamma for early-stopped direction searches.
    """

    flagged_budget: int = FLAGGED_BUDGET_DEFAULT
    total_budget: int | None = None
    target_distance: float | None = None
    strategy: SearchStrategy | None = None
    seed: int = 0
    n_init: int = 100
    grad_samples: int | None = None
    safe_start: float = SAFE_START
    rays_early_stop: float | None = 0.9
    signopt_shrink: float = 2.5
    max_iterations: int | None = None

    def __post_init__(self) -> None:
        if self.flagged_budget < 1:
            raise ValueError("flagged_budget must be >= 1")
        if self.total_budget is not None and self.total_budget < 1:
            raise ValueError("total_budget must be >= 1")
        if not (0.0 < self.safe_start < 0.5):
            raise ValueError("safe_start must lie in (0, 0.5)")
        if self.signopt_shrink < 1.0:
            raise ValueError("signopt_shrink must be >= 1")

    def with_overrides(self, **kw) -> "AttackConfig":
        return replace(self, **kw)


@dataclass
class AttackTrace:
    """One attack run: improvement events plus a closing summary.

    events are (flagged_so_far, total_so_far, best_distance) rows sampled
    whenever the best distance improves; counts are cumulative ledger
    values, so both are non-decreasing down the list.
    """

    attack: str
    norm: NormKind
    events: list[tuple[int, int, float]] = field(default_factory=list)
    best_distance: float = math.inf
    best_point: Array | None = None
    summary: dict = field(default_factory=dict)


class TraceRecorder:
    """Tracks best distance, stop conditions, and routine-level counts."""

    def __init__(self, session: InstrumentedOracle, cfg: AttackConfig,
                 attack: str, norm_kind: NormKind):
        self.session = session
        self.cfg = cfg
        self.trace = AttackTrace(attack, norm_kind)
        self.checkadv = [0, 0]
        self.getdist = [0, 0]
        self.getdist_calls = 0
        self.step_trials = 0
        self.stop_reason: str | None = None

    # -- routine accounting ------------------------------------------------
    def note_checkadv(self, safe: bool, count: int = 1) -> None:
        self.checkadv[0] += count
        if not safe:
            self.checkadv[1] += count

    def note_getdist(self, outcome: SearchOutcome) -> None:
        self.getdist_calls += 1
        self.getdist[0] += outcome.total_spent
        self.getdist[1] += outcome.flagged_spent

    # -- progress ----------------------------------------------------------
    def improved(self, distance: float, point: Array | None) -> bool:
        if not distance < self.trace.best_distance:
            return False
        self.trace.best_distance = distance
        if point is not None:
            self.trace.best_point = point.copy()
        self.trace.events.append(
            (self.session.flagged, self.session.total, float(distance)))
        target = self.cfg.target_distance
        if target is not None and distance <= target \
                and self.stop_reason is None:
            self.stop_reason = "target_distance"
        return True

    def should_stop(self) -> bool:
        if self.stop_reason is not None:
            return True
        if self.session.flagged >= self.cfg.flagged_budget:
            self.stop_reason = "flagged_budget"
            return True
        total_budget = self.cfg.total_budget
        if total_budget is not None and self.session.total >= total_budget:
            self.stop_reason = "total_budget"
            return True
        return False

    def finish(self, iterations: int, **extra) -> AttackTrace:
        ledger = self.session.snapshot()
        self.trace.summary = {
            "stopped": self.stop_reason or "iterations",
            "iterations": iterations,
            "total": ledger.total,
            "flagged": ledger.flagged,
            "by_phase": {p.value: list(ledger.by_phase.get(p, (0, 0)))
                         for p in Phase},
            "checkadv": list(self.checkadv),
            "getdist": list(self.getdist),
            "getdist_calls": self.getdist_calls,
            "step_trials": self.step_trials,
            **extra,
        }
        return self.trace


def require_flagged_input(session: InstrumentedOracle, x: Array,
                          rec: TraceRecorder) -> None:
    """Attacks start from a flagged point; one Init query verifies it."""
    safe = probe_point(session, x, Phase.INIT)
    rec.note_checkadv(safe)
    if safe:
        raise ValueError("input point is not flagged; nothing to attack")


def init_direction(session: InstrumentedOracle, x: Array, rng,
                   rec: TraceRecorder, n_init: int,
                   eta: float = 1e-3,
                   strategy: SearchStrategy | None = None) -> tuple[Array, float, Array]:
    """Best of n_init Gaussian directions: one probe at x + theta each,
    then a boundary search capped by the best distance so far on the safe
    ones. The search bisects by default; passing a strategy routes it
    through a marching search instead (at most one flagged probe each,
    early-stopped against the best distance so far when configured).

    Returns (unit direction, boundary distance, realized safe point).
    """
    d = x.shape[0]
    best_dir: Array | None = None
    best_dist = math.inf
    best_point: Array | None = None
    for _ in range(n_init):
        if rec.should_stop():
            break
        theta = rng.standard_normal(d)
        raw_len = norm(theta)
        if raw_len == 0.0:
            continue
        u = theta / raw_len
        # Screen and prune probes are the first probes of this candidate's
        # capped distance measurement, so they land in the getDist bucket.
        safe = probe_point(session, x + theta, Phase.INIT)
        rec.getdist[0] += 1
        rec.getdist[1] += 0 if safe else 1
        if not safe:
            continue
        hi = raw_len
        if best_dist < hi:
            safe_at_best = probe_point(session, x + best_dist * u, Phase.INIT)
            rec.getdist[0] += 1
            rec.getdist[1] += 0 if safe_at_best else 1
            if not safe_at_best:
                continue
            hi = best_dist
        if strategy is None:
            out = path_binary_search(session, ray_path(x, u), 0.0, hi, eta,
                                     Phase.INIT)
        else:
            ref = best_dist if math.isfinite(best_dist) else None
            out = path_march_search(session, ray_path(x, u), 0.0, hi,
                                    strategy, Phase.INIT, reference=ref)
        rec.note_getdist(out)
        if out.distance < best_dist:
            best_dist = out.distance
            best_dir = u
            best_point = out.point
    if best_dir is None:
        raise InitializationError(
            f"no safe direction among {n_init} samples")
    return best_dir, best_dist, best_point


def init_blend(session: InstrumentedOracle, x: Array, rng,
               rec: TraceRecorder, strategy: SearchStrategy,
               max_tries: int = 10000) -> SearchOutcome:
    """Uniform noise until a safe point appears, then project it onto the
    segment toward x with one boundary search."""
    d = x.shape[0]
    y = None
    for _ in range(max_tries):
        if rec.should_stop():
            break
        cand = rng.uniform(0.0, 1.0, d)
        safe = probe_point(session, cand, Phase.INIT)
        rec.note_checkadv(safe)
        if safe:
            y = cand
            break
    if y is None:
        raise InitializationError("no safe point found by uniform sampling")
    out = path_march_search(session, ray_path(x, unit(y - x)), 0.0,
                            norm(y - x), strategy, Phase.INIT)
    rec.note_getdist(out)
    if out.point is None:
        # The search never realized a probed safe point; fall back to y.
        out.point = y
        out.distance = norm(y - x)
    return out


def window_around_search(session: InstrumentedOracle, x: Array, u: Array,
                         ref: float, strategy: SearchStrategy, gamma: float,
                         phase: Phase, rec: TraceRecorder) -> SearchOutcome:
    """Stealthy distance estimate along u around a reference distance.

    Probes (1+gamma)*ref first; if that is already flagged the boundary
    moved out past the window and the approximation (1+2*gamma)*ref is
    returned with exact=False. Otherwise marches down to (1-gamma)*ref.
    """
    out = path_march_search(session, ray_path(x, u), (1.0 - gamma) * ref,
                            (1.0 + gamma) * ref, strategy, phase,
                            top_known_safe=False, bottom_known_flagged=False)
    rec.note_getdist(out)
    if math.isinf(out.distance):
        out.distance = (1.0 + 2.0 * gamma) * ref
    return out


def window_below_search(session: InstrumentedOracle, x: Array, u: Array,
                        ref: float, strategy: SearchStrategy, gamma: float,
                        phase: Phase, rec: TraceRecorder) -> SearchOutcome:
    """Stealthy improvement test along u: search [ (1-gamma)*ref, ref ].

    A flagged probe at ref means no improvement within the window; the
    outcome keeps distance=inf so step searches reject the candidate.
    """
    out = path_march_search(session, ray_path(x, u), (1.0 - gamma) * ref,
                            ref, strategy, phase,
                            top_known_safe=False, bottom_known_flagged=False)
    rec.note_getdist(out)
    return out


