"""Distance-minimizing direction search (L2).

Treats the boundary distance along a direction as a black-box function and
descends it: estimate a gradient from finitely many re-measured nearby
directions, then line-search the step size geometrically. Every gradient
sample and every step trial is a full boundary search, so almost all
queries are getDist queries.

The stealthy variant re-measures directions with marching searches inside
narrow relative windows around the current distance: one flagged query
when the crossing sits inside the window, zero when the window floor is
reached, one for the safe-start rejection otherwise.

Budget overshoot bound: one boundary search (bisection: bracket growth
plus about log2(1/eta) probes; marching: up to one window of probes, at
most one flagged).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..oracles import InstrumentedOracle, Phase
from ..search import (Binary, Line, SearchOutcome, SearchStrategy,
                      geometric_expand_search, local_ray_search)
from ..vectors import Array, NormKind, unit
from .common import (AttackConfig, AttackTrace, TraceRecorder,
                     init_direction, require_flagged_input,
                     window_around_search, window_below_search)

GRAD_SAMPLES = 10
GRAD_SAMPLES_SIGN = 200
BETA0 = 0.01          # direction perturbation radius
ALPHA0 = 0.2          # initial step scale
ETA_LOCAL = BETA0 / 500.0
STEALTHY_STEP = 1e-4  # full line search: 10000 sub-intervals
MAX_SHRINKS = 15


@dataclass
class GradEstimate:
    """Gradient direction plus the best sample seen while estimating it.

    The best sample is only populated by estimators that measure real
    distances; it lets the attack fall back on the best measured direction
    when the step search fails to do better."""

    delta: Array | None
    best_dist: float = math.inf
    best_dir: Array | None = None
    best_point: Array | None = None


def _attack_opt_family(session: InstrumentedOracle, x: Array,
                       cfg: AttackConfig, name: str, stealthy: bool,
                       grad_fn, n_default: int) -> AttackTrace:
    rng = np.random.default_rng(cfg.seed)
    rec = TraceRecorder(session, cfg, name, NormKind.L2)
    require_flagged_input(session, x, rec)
    strategy = cfg.strategy or (SearchStrategy(Line(STEALTHY_STEP)) if stealthy
                                else SearchStrategy(Binary(ETA_LOCAL)))
    gamma = cfg.safe_start
    n = cfg.grad_samples or n_default

    theta, dist, point = init_direction(session, x, rng, rec, cfg.n_init,
                                        strategy=strategy if stealthy else None)
    rec.improved(dist, point)

    def measure_step(u: Array, ref: float) -> SearchOutcome:
        if stealthy:
            return window_below_search(session, x, u, ref, strategy, gamma,
                                       Phase.STEP_SIZE, rec)
        out = local_ray_search(session, x, u, ref, ETA_LOCAL,
                               Phase.STEP_SIZE)
        rec.note_getdist(out)
        return out

    alpha = ALPHA0
    beta = BETA0
    iterations = 0
    while not rec.should_stop():
        if cfg.max_iterations is not None and iterations >= cfg.max_iterations:
            break
        iterations += 1

        est = grad_fn(session, x, theta, dist, beta, n, rng, rec,
                      strategy, gamma, stealthy)
        if est.delta is None or rec.should_stop():
            break
        delta = est.delta
        dnorm = math.sqrt(float(delta @ delta))
        if dnorm == 0.0 or not math.isfinite(dnorm):
            beta *= 0.1
            if beta < 1e-8:
                rec.stop_reason = rec.stop_reason or "converged"
                break
            continue

        expand = geometric_expand_search(theta, delta, alpha, dist,
                                         measure_step,
                                         should_stop=rec.should_stop)
        rec.step_trials += expand.trials
        if expand.alpha > 0.0:
            theta = expand.direction
            dist = expand.distance
            rec.improved(dist, expand.point)
            alpha = expand.alpha * 2.0
        else:
            for _ in range(MAX_SHRINKS):
                if rec.should_stop():
                    break
                alpha *= 0.25
                cand = unit(theta + alpha * delta)
                out = measure_step(cand, dist)
                rec.step_trials += 1
                if out.distance < dist:
                    theta = cand
                    dist = out.distance
                    rec.improved(dist, out.point)
                    break
        if alpha < 1e-4:
            # Step size collapsed: take fresh large steps with a finer
            # perturbation radius, stopping once that bottoms out too.
            alpha = 1.0
            beta *= 0.1
            if beta < 1e-8:
                rec.stop_reason = rec.stop_reason or "converged"
                break
        if est.best_dist < dist and est.best_dir is not None:
            # A direction sampled for the gradient beat the step result.
            theta = est.best_dir
            dist = est.best_dist
            rec.improved(dist, est.best_point)

    return rec.finish(iterations, beta=beta, alpha=alpha, grad_samples=n)


def _grad_finite_difference(session, x, theta, dist, beta, n, rng, rec,
                            strategy, gamma, stealthy) -> GradEstimate:
    """Distance-difference estimate: sample directions u_i, re-measure the
    boundary along normalize(theta + beta*u_i), and average
    (dist - d_i)/beta * u_i. Larger d_i push away, smaller pull in."""
    d = x.shape[0]
    acc = np.zeros(d)
    used = 0
    est = GradEstimate(None)
    for _ in range(n):
        if rec.should_stop():
            break
        u = unit(rng.standard_normal(d))
        cand = unit(theta + beta * u)
        if stealthy:
            out = window_around_search(session, x, cand, dist, strategy,
                                       gamma, Phase.UPDATE_DIR, rec)
            d_i = out.distance
        else:
            out = local_ray_search(session, x, cand, dist, ETA_LOCAL,
                                   Phase.UPDATE_DIR)
            rec.note_getdist(out)
            if not math.isfinite(out.distance):
                continue  # direction rejected: no usable measurement
            d_i = out.distance
        acc += ((dist - d_i) / beta) * u
        used += 1
        if out.point is not None and d_i < est.best_dist:
            est.best_dist = d_i
            est.best_dir = cand
            est.best_point = out.point
    if used:
        est.delta = acc / used
    return est


def attack_opt(session: InstrumentedOracle, x: Array,
               cfg: AttackConfig) -> AttackTrace:
    return _attack_opt_family(session, x, cfg, "opt", stealthy=False,
                              grad_fn=_grad_finite_difference,
                              n_default=GRAD_SAMPLES)


def attack_stealthy_opt(session: InstrumentedOracle, x: Array,
                        cfg: AttackConfig) -> AttackTrace:
    return _attack_opt_family(session, x, cfg, "stealthy_opt", stealthy=True,
                              grad_fn=_grad_finite_difference,
                              n_default=GRAD_SAMPLES)
