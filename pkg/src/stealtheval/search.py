"""Boundary-distance searches with flagged-query accounting.

Every search walks a monotone path from a flagged anchor toward a safe
point. Bisection finds the crossing fastest but spends about half its
probes on the flagged side; marching searches (line and k-stage) approach
from the safe side and spend at most one flagged probe per stage, which is
the whole point when flagged queries carry the cost. All probes are clipped
to the unit cube and, when the oracle declares a grid, quantized onto it;
consecutive duplicate quantized probes are answered from memory and never
charged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .oracles import InstrumentedOracle, Phase
from .vectors import Array, quantize, unit

Path = Callable[[float], Array]


@dataclass(frozen=True)
class Binary:
    """Bisection to a relative tolerance of the search interval."""

    tolerance: float = 1e-3

    def __post_init__(self) -> None:
        if not (0.0 < self.tolerance < 1.0):
            raise ValueError("tolerance must lie in (0, 1)")


@dataclass(frozen=True)
class Line:
    """Single-stage march from the safe side; at most one flagged probe.

    step is relative to the interval, so Line(step=1/n) probes the same
    positions as KStage(stages=1, subintervals=n).
    """

    step: float = 1e-4

    def __post_init__(self) -> None:
        if not (0.0 < self.step < 1.0):
            raise ValueError("step must lie in (0, 1)")


@dataclass(frozen=True)
class KStage:
    """Multi-stage march; at most `stages` flagged probes.

    schedule "uniform" uses stage widths ceil(n^((k-i)/k)); "dp" follows the
    optimal worst-case trial ladder (see egg_drop_plan).
    """

    stages: int = 2
    subintervals: int = 10000
    schedule: str = "uniform"

    def __post_init__(self) -> None:
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if self.subintervals < 1:
            raise ValueError("subintervals must be >= 1")
        if self.schedule not in ("uniform", "dp"):
            raise ValueError("schedule must be 'uniform' or 'dp'")


StrategyKind = Binary | Line | KStage


@dataclass(frozen=True)
class SearchStrategy:
    """A getDist flavor plus an optional early-stop factor.

    early_stop ends a marching search as soon as a safe probe lands at or
    below early_stop * reference while no flagged query has been spent yet.
    """

    kind: StrategyKind
    early_stop: float | None = None

    def __post_init__(self) -> None:
        if self.early_stop is not None and not (0.0 < self.early_stop < 1.0):
            raise ValueError("early_stop must lie in (0, 1)")

    def to_dict(self) -> dict:
        name = type(self.kind).__name__.lower()
        out: dict = {"kind": name, "early_stop": self.early_stop}
        if isinstance(self.kind, Binary):
            out["tolerance"] = self.kind.tolerance
        elif isinstance(self.kind, Line):
            out["step"] = self.kind.step
        else:
            out.update(stages=self.kind.stages,
                       subintervals=self.kind.subintervals,
                       schedule=self.kind.schedule)
        return out

    @staticmethod
    def from_dict(d: dict) -> "SearchStrategy":
        name = d.get("kind")
        if name == "binary":
            kind: StrategyKind = Binary(float(d.get("tolerance", 1e-3)))
        elif name == "line":
            kind = Line(float(d.get("step", 1e-4)))
        elif name == "kstage":
            kind = KStage(int(d.get("stages", 2)),
                          int(d.get("subintervals", 10000)),
                          str(d.get("schedule", "uniform")))
        else:
            raise ValueError(f"unknown strategy kind: {name!r}")
        es = d.get("early_stop")
        return SearchStrategy(kind, None if es is None else float(es))


@dataclass
class SearchOutcome:
    """Result of one boundary search.

    distance is the path-parameter distance times the caller's scale;
    distance == inf means the search was rejected at its upper end (the
    first probe was already flagged). exact is False for early stops,
    window-floor hits, and rejections. point is the realized safe probe
    backing the distance, when one exists.
    """

    distance: float
    ray_length: float
    point: Array | None
    exact: bool
    flagged_spent: int
    total_spent: int


class DegenerateDirectionError(Exception):
    """A step-size backtrack underflowed: the direction never turns safe."""


class _Prober:
    """Charges probes along one path; handles clipping, grids, and dedup."""

    __slots__ = ("session", "path", "phase", "grid", "flagged_spent",
                 "total_spent", "_last_key", "_last_flagged",
                 "best_t", "best_point")

    def __init__(self, session: InstrumentedOracle, path: Path, phase: Phase):
        self.session = session
        self.path = path
        self.phase = phase
        self.grid = session.descriptor.grid
        self.flagged_spent = 0
        self.total_spent = 0
        self._last_key: bytes | None = None
        self._last_flagged = False
        self.best_t = math.inf
        self.best_point: Array | None = None

    def probe(self, t: float) -> bool:
        pt = self.path(t)
        if self.grid is not None:
            pt = quantize(pt, self.grid)
            key = pt.tobytes()
            if key == self._last_key:
                flagged = self._last_flagged
            else:
                flagged = self.session.query_is_flagged(pt, self.phase)
                self.total_spent += 1
                if flagged:
                    self.flagged_spent += 1
                self._last_key = key
                self._last_flagged = flagged
        else:
            flagged = self.session.query_is_flagged(pt, self.phase)
            self.total_spent += 1
            if flagged:
                self.flagged_spent += 1
        if not flagged and t < self.best_t:
            self.best_t = t
            self.best_point = pt.copy()
        return flagged


def ray_path(origin: Array, direction: Array) -> Path:
    """Path t -> clip(origin + t * direction). Pass a unit direction for
    the parameter to read as ambient distance."""

    def path(t: float) -> Array:
        return np.clip(origin + t * direction, 0.0, 1.0)

    return path


def segment_path(x: Array, x_safe: Array) -> Path:
    """Straight blend from x (t = 0) to x_safe (t = 1)."""
    delta = x_safe - x

    def path(t: float) -> Array:
        return x + t * delta

    return path


def clamp_path(x: Array, x_safe: Array) -> Path:
    """Sup-norm projection path: t is the radius of the box around x into
    which x_safe is clamped. Monotone like a ray but moves per-coordinate."""

    def path(t: float) -> Array:
        return np.clip(x_safe, x - t, x + t)

    return path


def check_adv(session: InstrumentedOracle, x: Array, theta: Array,
              dist: float, phase: Phase) -> bool:
    """One probe at clip(x + dist * theta / ||theta||_2). True iff safe.

    The cheap primitive: a single query answering "is this far enough".
    """
    n = math.sqrt(float(theta @ theta))
    if n == 0.0:
        raise ValueError("direction must be nonzero")
    pt = np.clip(x + (dist / n) * theta, 0.0, 1.0)
    grid = session.descriptor.grid
    if grid is not None:
        pt = quantize(pt, grid)
    return not session.query_is_flagged(pt, phase)


def probe_point(session: InstrumentedOracle, point: Array, phase: Phase) -> bool:
    """One probe at an explicit point (clipped, grid-aligned). True iff safe."""
    pt = np.clip(point, 0.0, 1.0)
    grid = session.descriptor.grid
    if grid is not None:
        pt = quantize(pt, grid)
    return not session.query_is_flagged(pt, phase)


def _resolution_floor(lo: float, hi: float, scale: float,
                      grid: float | None) -> float:
    # A declared grid bounds how finely the path can move, so searching
    # below grid/scale in parameter units only re-probes identical points.
    if grid is None:
        return 0.0
    return grid / scale if scale > 0.0 else 0.0


def path_binary_search(session: InstrumentedOracle, path: Path, lo: float,
                       hi: float, tolerance: float, phase: Phase, *,
                       scale: float = 1.0,
                       top_known_safe: bool = True,
                       bottom_known_flagged: bool = True) -> SearchOutcome:
    """Bisect [lo, hi] down to tolerance * (hi - lo).

    With both endpoints pre-established the probe count is exactly
    ceil(log2(1/tolerance)), tolerance floored at the grid resolution.
    Returns the safe end of the final bracket.
    """
    prober = _Prober(session, path, phase)
    width = hi - lo
    if width <= 0.0:
        raise ValueError("empty search interval")
    if not top_known_safe:
        if prober.probe(hi):
            return SearchOutcome(math.inf, hi, None, False,
                                 prober.flagged_spent, prober.total_spent)
    if not bottom_known_flagged:
        if not prober.probe(lo):
            return SearchOutcome(lo * scale, lo,
                                 prober.best_point, False,
                                 prober.flagged_spent, prober.total_spent)
    res = max(tolerance * width, _resolution_floor(lo, hi, scale, prober.grid))
    while hi - lo > res:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if prober.probe(mid):
            lo = mid
        else:
            hi = mid
    point = prober.best_point
    if point is None and top_known_safe:
        point = path(hi)
        if prober.grid is not None:
            point = quantize(point, prober.grid)
    return SearchOutcome(hi * scale, hi, point, True,
                         prober.flagged_spent, prober.total_spent)


def _uniform_widths(n: int, k: int) -> list[int]:
    widths = []
    for i in range(1, k + 1):
        w = int(math.ceil(n ** ((k - i) / k)))
        widths.append(max(1, min(w, n)))
    widths[-1] = 1
    # Widths must not increase from one stage to the next.
    for i in range(1, k):
        widths[i] = min(widths[i], widths[i - 1])
    return widths


def path_march_search(session: InstrumentedOracle, path: Path, lo: float,
                      hi: float, strategy: SearchStrategy, phase: Phase, *,
                      scale: float = 1.0,
                      top_known_safe: bool = True,
                      bottom_known_flagged: bool = True,
                      reference: float | None = None) -> SearchOutcome:
    """March [hi -> lo] from the safe side, localizing the crossing to one
    sub-interval. Line spends at most 1 flagged probe, KStage at most k
    (plus one if the top probe itself comes back flagged).

    Early stopping (strategy.early_stop) requires a reference distance and
    triggers only while the search has spent zero flagged probes. Reaching
    the bottom of the interval without a flagged probe returns the bottom
    with exact=False (the crossing lies at or below it).
    """
    kind = strategy.kind
    if isinstance(kind, Binary):
        return path_binary_search(session, path, lo, hi, kind.tolerance,
                                  phase, scale=scale,
                                  top_known_safe=top_known_safe,
                                  bottom_known_flagged=bottom_known_flagged)
    if isinstance(kind, Line):
        n = max(1, round(1.0 / kind.step))
        stages = 1
        use_dp = False
    else:
        n = kind.subintervals
        stages = kind.stages
        use_dp = kind.schedule == "dp"
    width = hi - lo
    if width <= 0.0:
        raise ValueError("empty search interval")
    floor_res = _resolution_floor(lo, hi, scale, session.descriptor.grid)
    if floor_res > 0.0:
        n = max(1, min(n, int(width / floor_res)))
    step = width / n
    gamma = strategy.early_stop
    es_cut = gamma * reference / scale \
        if gamma is not None and reference is not None else None

    prober = _Prober(session, path, phase)

    def t_of(j: int) -> float:
        return lo if j == n else hi - j * step

    def outcome(t: float, pt: Array | None, exact: bool) -> SearchOutcome:
        return SearchOutcome(t * scale, t, pt, exact,
                             prober.flagged_spent, prober.total_spent)

    if not top_known_safe:
        if prober.probe(t_of(0)):
            return SearchOutcome(math.inf, hi, None, False,
                                 prober.flagged_spent, prober.total_spent)
        if es_cut is not None and hi <= es_cut:
            return outcome(hi, prober.best_point, False)

    # Floor-space state: floor 0 is the safe top, floor n the flagged
    # bottom; safe_j tracks the lowest known-safe floor and flagged_j the
    # first flagged floor once one is found.
    safe_j = 0
    flagged_j: int | None = None
    widths = None if use_dp else _uniform_widths(n, stages)
    eggs = stages
    trials_left = plan_worst_case(n, stages) if use_dp else 0
    stage = 0

    while flagged_j is None or flagged_j - safe_j > 1:
        hi_j = n if flagged_j is None else flagged_j
        if use_dp:
            if eggs <= 1:
                w = 1
            else:
                w = plan_coverage(max(trials_left - 1, 0), eggs - 1) + 1
        else:
            w = widths[min(stage, stages - 1)]
        j = min(safe_j + w, hi_j if flagged_j is None else hi_j - 1)
        if j <= safe_j:
            j = safe_j + 1
        if j >= n and flagged_j is None and bottom_known_flagged:
            flagged_j = n
            stage += 1
            continue
        flagged = prober.probe(t_of(j))
        if use_dp:
            trials_left -= 1
        if flagged:
            flagged_j = j
            eggs -= 1
            stage += 1
        else:
            safe_j = j
            if es_cut is not None and prober.flagged_spent == 0 \
                    and t_of(j) <= es_cut:
                return outcome(t_of(j), prober.best_point, False)
            if j == n:
                # Window floor reached with nothing flagged: the crossing
                # sits below the interval.
                return outcome(t_of(n), prober.best_point, False)

    t_safe = t_of(safe_j)
    point = prober.best_point
    if point is None and safe_j == 0 and top_known_safe:
        point = path(hi)
        if prober.grid is not None:
            point = quantize(point, prober.grid)
    return outcome(t_safe, point, True)


def plan_coverage(trials: int, stages: int) -> int:
    """Floors distinguishable with `trials` probes and `stages` flagged
    probes allowed: sum of C(trials, i) for i = 1..stages. Satisfies the
    recurrence f(t, k) = f(t-1, k-1) + f(t-1, k) + 1."""
    total = 0
    term = 1
    for i in range(1, min(stages, trials) + 1):
        term = term * (trials - i + 1) // i
        total += term
    return total


def plan_worst_case(n: int, stages: int) -> int:
    """Minimal worst-case probe count to localize among n floors with at
    most `stages` flagged probes."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if stages < 1:
        raise ValueError("stages must be >= 1")
    if stages == 1:
        return n
    t = 0
    while plan_coverage(t, stages) < n:
        t += 1
    return t


@dataclass(frozen=True)
class EggDropPlan:
    worst_case_trials: int
    first_probe_schedule: tuple[int, ...]


def egg_drop_plan(n: int, k: int) -> EggDropPlan:
    """Optimal worst-case plan to localize a crossing among n sub-intervals
    spending at most k flagged probes.

    The schedule lists the probe ladder while nothing comes back flagged:
    position i+1 sits f(t-1-i, k-1) + 1 floors above position i, capped at
    n. plan_coverage supplies f.
    """
    t = plan_worst_case(n, k)
    schedule: list[int] = []
    pos = 0
    i = 0
    while pos < n:
        pos += plan_coverage(max(t - 1 - i, 0), k - 1) + 1
        pos = min(pos, n)
        schedule.append(pos)
        i += 1
        if i > n:
            break
    return EggDropPlan(t, tuple(schedule))


def get_dist_binary(session: InstrumentedOracle, x: Array, x_safe: Array,
                    eta: float = 1e-3,
                    phase: Phase = Phase.PROJ_BOUNDARY) -> SearchOutcome:
    """Bisect the segment from x (flagged) to x_safe (safe); both endpoints
    pre-established by the caller and never re-queried. distance is ambient
    along the segment; probe count is exactly ceil(log2(1/eta)) above the
    grid floor."""
    delta = x_safe - x
    scale = math.sqrt(float(delta @ delta))
    if scale == 0.0:
        raise ValueError("x and x_safe coincide")
    return path_binary_search(session, segment_path(x, x_safe), 0.0, 1.0,
                              eta, phase, scale=scale)


def get_dist_line(session: InstrumentedOracle, x: Array, x_safe: Array,
                  strategy: SearchStrategy,
                  reference: float | None = None,
                  phase: Phase = Phase.PROJ_BOUNDARY) -> SearchOutcome:
    """March the segment from the safe end; endpoints pre-established.

    Spends at most one flagged probe per stage (one total for Line).
    With strategy.early_stop and a reference, ends flagged-free as soon as
    a safe probe reaches early_stop * reference."""
    delta = x_safe - x
    scale = math.sqrt(float(delta @ delta))
    if scale == 0.0:
        raise ValueError("x and x_safe coincide")
    return path_march_search(session, segment_path(x, x_safe), 0.0, 1.0,
                             strategy, phase, scale=scale,
                             reference=reference)


def local_ray_search(session: InstrumentedOracle, origin: Array,
                     direction: Array, reference: float, eta: float,
                     phase: Phase, growth: float = 0.01,
                     cap: float | None = None) -> SearchOutcome:
    """Reference-anchored bisection along a unit ray.

    Probes at the reference first; while flagged, grows the radius by
    (1+growth), while safe, shrinks by (1-growth), then bisects the
    resulting bracket to the absolute resolution eta. The base attacks'
    getDist flavor for re-measuring nearby directions. Growing past the
    cap (default: the cube diagonal) rejects the direction with
    distance=inf.
    """
    if cap is None:
        cap = math.sqrt(float(origin.shape[0]))
    prober = _Prober(session, ray_path(origin, direction), phase)

    def done(distance: float, t: float, exact: bool) -> SearchOutcome:
        return SearchOutcome(distance, t, prober.best_point, exact,
                             prober.flagged_spent, prober.total_spent)

    if prober.probe(reference):
        hi = reference
        while True:
            hi *= (1.0 + growth)
            if hi > cap:
                return done(math.inf, math.inf, False)
            if not prober.probe(hi):
                break
        lo = hi / (1.0 + growth)
    else:
        lo = reference
        while True:
            lo *= (1.0 - growth)
            if lo < 1e-12:
                # Safe the whole way down within resolution.
                return done(lo, lo, False)
            if prober.probe(lo):
                break
        hi = lo / (1.0 - growth)
    res = max(eta, _resolution_floor(lo, hi, 1.0, prober.grid))
    while hi - lo > res:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if prober.probe(mid):
            lo = mid
        else:
            hi = mid
    return done(hi, hi, True)


@dataclass
class StepOutcome:
    """Result of a step-size search along candidate update directions."""

    alpha: float
    direction: Array | None
    distance: float
    point: Array | None
    trials: int
    flagged_spent: int
    total_spent: int


Measure = Callable[[Array, float], SearchOutcome]


def geometric_expand_search(theta: Array, delta: Array, alpha0: float,
                            reference: float, measure: Measure,
                            max_doublings: int = 15,
                            should_stop: Callable[[], bool] | None = None) -> StepOutcome:
    """Double the step while the measured boundary distance keeps improving.

    measure(candidate_direction, best_so_far) runs one getDist; each
    doubling spends exactly one such call. Returns the largest tested step
    that improved, with the accumulated accounting."""
    alpha = alpha0
    best = StepOutcome(0.0, None, reference, None, 0, 0, 0)
    for _ in range(max_doublings):
        if should_stop is not None and should_stop():
            break
        cand = unit(theta + alpha * delta)
        out = measure(cand, best.distance)
        best.trials += 1
        best.flagged_spent += out.flagged_spent
        best.total_spent += out.total_spent
        if out.distance < best.distance:
            best.alpha = alpha
            best.direction = cand
            best.distance = out.distance
            best.point = out.point
            alpha *= 2.0
        else:
            break
    return best


def geometric_backtrack_search(session: InstrumentedOracle, x_b: Array,
                               update: Array, alpha0: float, phase: Phase,
                               min_factor: float = 1e-12) -> StepOutcome:
    """Halve the step until x_b + alpha * update is safe.

    Every unsafe probe is flagged, so k halvings cost exactly k flagged
    queries. Underflow below min_factor * alpha0 means the direction never
    reaches the safe side: DegenerateDirectionError."""
    alpha = alpha0
    flagged_spent = 0
    total_spent = 0
    while True:
        pt = np.clip(x_b + alpha * update, 0.0, 1.0)
        grid = session.descriptor.grid
        if grid is not None:
            pt = quantize(pt, grid)
        total_spent += 1
        if not session.query_is_flagged(pt, phase):
            return StepOutcome(alpha, update, math.nan, pt,
                               total_spent, flagged_spent, total_spent)
        flagged_spent += 1
        alpha *= 0.5
        if alpha < min_factor * alpha0:
            raise DegenerateDirectionError(
                f"step underflow: no safe step above {min_factor:g} * alpha0")
