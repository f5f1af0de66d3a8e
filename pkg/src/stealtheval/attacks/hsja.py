"""Boundary-walking attack with gradient-direction estimation (L2/Linf).

Each round: estimate the boundary normal from single probes scattered at a
shrinking radius around the current boundary point, jump along it with a
geometrically backtracked step, then re-project onto the boundary with one
search along the segment (L2) or the per-coordinate clamp toward the input
(Linf).

The stealthy variant replaces the probe cloud with a handful of distance
re-measurements in narrow safe-started windows and combines them with the
distance-difference weighting, so the gradient stage spends close to zero
flagged queries.

Budget overshoot bound: one boundary search plus one backtracking descent.
"""

from __future__ import annotations

import math

import numpy as np

from ..oracles import InstrumentedOracle, Phase
from ..search import (Binary, DegenerateDirectionError, Line, SearchStrategy,
                      clamp_path, geometric_backtrack_search,
                      path_march_search, probe_point, ray_path)
from ..vectors import Array, NormKind, norm, unit
from .common import (AttackConfig, AttackTrace, TraceRecorder, init_blend,
                     require_flagged_input, window_around_search)

GAMMA_SCALE = 1e4     # tolerance / sampling-radius scale knob
N0 = 100              # gradient probes in round 1 (grows with sqrt(t))
N_CAP = 10000
BETA_DIR = 0.01       # direction perturbation for windowed re-measurement
GRAD_DIVISOR = 20     # windowed getDists per round: n_t // 20
STEALTHY_STEP = 1e-4


def _theta_tolerance(d: int, norm_kind: NormKind) -> float:
    raw = GAMMA_SCALE / d ** 1.5 if norm_kind is NormKind.L2 \
        else GAMMA_SCALE / d ** 2
    # The published scaling targets image-sized inputs; clamp it so small
    # and huge dimensions both get a workable projection tolerance.
    return min(max(raw, 1e-6), 1e-3)


def _distance(point: Array, x: Array, norm_kind: NormKind) -> float:
    return norm(point - x, norm_kind)


def _project(session: InstrumentedOracle, x: Array, y_safe: Array,
             norm_kind: NormKind, strategy: SearchStrategy,
             rec: TraceRecorder) -> tuple[Array, float]:
    """Pull the safe point toward x along the norm's natural path; the safe
    end is pre-established, x itself is known flagged."""
    if norm_kind is NormKind.L2:
        hi = norm(y_safe - x)
        path = ray_path(x, (y_safe - x) / hi)
    else:
        hi = norm(y_safe - x, NormKind.LINF)
        path = clamp_path(x, y_safe)
    out = path_march_search(session, path, 0.0, hi, strategy,
                            Phase.PROJ_BOUNDARY)
    rec.note_getdist(out)
    point = out.point if out.point is not None else y_safe
    return point, _distance(point, x, norm_kind)


def _grad_probe_cloud(session: InstrumentedOracle, x_b: Array, radius: float,
                      n_t: int, norm_kind: NormKind, rng,
                      rec: TraceRecorder) -> Array | None:
    """Monte-Carlo normal estimate from single probes at x_b + radius*u."""
    d = x_b.shape[0]
    dirs: list[Array] = []
    vals: list[float] = []
    for _ in range(n_t):
        if rec.should_stop():
            break
        u = unit(rng.standard_normal(d))
        safe = probe_point(session, x_b + radius * u, Phase.UPDATE_DIR)
        rec.note_checkadv(safe)
        dirs.append(u)
        vals.append(1.0 if safe else -1.0)
    if not vals:
        return None
    rv = np.asarray(dirs)
    fv = np.asarray(vals)
    mean_val = fv.mean()
    if mean_val == 1.0:
        g = rv.mean(axis=0)
    elif mean_val == -1.0:
        g = -rv.mean(axis=0)
    else:
        # Baseline subtraction keeps the estimate unbiased to the offset.
        g = ((fv - mean_val)[:, None] * rv).mean(axis=0)
    return g


def _grad_windowed(session: InstrumentedOracle, x: Array, x_b: Array,
                   dist_l2: float, n_g: int, strategy: SearchStrategy,
                   gamma: float, rng, rec: TraceRecorder) -> Array | None:
    """Distance-difference estimate around the current direction, each
    sample a safe-started window search instead of a probe cloud."""
    d = x.shape[0]
    theta = unit(x_b - x)
    acc = np.zeros(d)
    used = 0
    for _ in range(n_g):
        if rec.should_stop():
            break
        u = unit(rng.standard_normal(d))
        cand = unit(theta + BETA_DIR * u)
        out = window_around_search(session, x, cand, dist_l2, strategy,
                                   gamma, Phase.UPDATE_DIR, rec)
        acc += ((dist_l2 - out.distance) / BETA_DIR) * u
        used += 1
    return acc / used if used else None


def _attack_hsja(session: InstrumentedOracle, x: Array, cfg: AttackConfig,
                 name: str, norm_kind: NormKind, stealthy: bool) -> AttackTrace:
    rng = np.random.default_rng(cfg.seed)
    rec = TraceRecorder(session, cfg, name, norm_kind)
    require_flagged_input(session, x, rec)
    d = x.shape[0]
    strategy = cfg.strategy or (
        SearchStrategy(Line(STEALTHY_STEP)) if stealthy
        else SearchStrategy(Binary(_theta_tolerance(d, norm_kind))))
    n0 = cfg.grad_samples or N0

    out = init_blend(session, x, rng, rec, strategy)
    x_b = out.point
    dist = _distance(x_b, x, norm_kind)
    rec.improved(dist, x_b)

    t = 0
    while not rec.should_stop():
        if cfg.max_iterations is not None and t >= cfg.max_iterations:
            break
        t += 1
        n_t = int(min(n0 * math.sqrt(t), N_CAP))

        if stealthy:
            n_g = max(n_t // GRAD_DIVISOR, 1)
            g = _grad_windowed(session, x, x_b, norm(x_b - x), n_g,
                               strategy, cfg.safe_start, rng, rec)
        else:
            radius = 0.1 if t == 1 else min(GAMMA_SCALE / d, 0.1) * dist
            g = _grad_probe_cloud(session, x_b, radius, n_t, norm_kind,
                                  rng, rec)
        if rec.should_stop():
            break
        if g is None or not np.isfinite(g).all() or not g.any():
            continue
        v = np.sign(g) if norm_kind is NormKind.LINF else unit(g)

        eps = dist / math.sqrt(t)
        try:
            step = geometric_backtrack_search(session, x_b, eps * v, 1.0,
                                              Phase.STEP_SIZE)
        except DegenerateDirectionError:
            continue
        rec.step_trials += step.trials
        rec.checkadv[0] += step.total_spent
        rec.checkadv[1] += step.flagged_spent

        x_b, dist = _project(session, x, step.point, norm_kind, strategy, rec)
        rec.improved(dist, x_b)

    return rec.finish(t)


def attack_hsja(session: InstrumentedOracle, x: Array,
                cfg: AttackConfig) -> AttackTrace:
    return _attack_hsja(session, x, cfg, "hsja", NormKind.L2, stealthy=False)


def attack_hsja_linf(session: InstrumentedOracle, x: Array,
                     cfg: AttackConfig) -> AttackTrace:
    return _attack_hsja(session, x, cfg, "hsja_linf", NormKind.LINF,
                        stealthy=False)


def attack_stealthy_hsja(session: InstrumentedOracle, x: Array,
                         cfg: AttackConfig) -> AttackTrace:
    return _attack_hsja(session, x, cfg, "stealthy_hsja", NormKind.L2,
                        stealthy=True)


def attack_stealthy_hsja_linf(session: InstrumentedOracle, x: Array,
                              cfg: AttackConfig) -> AttackTrace:
    return _attack_hsja(session, x, cfg, "stealthy_hsja_linf", NormKind.LINF,
                        stealthy=True)
