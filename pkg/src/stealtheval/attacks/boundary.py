"""Random-walk attack along the decision boundary (L2).

Every candidate costs exactly one query: an orthogonal move sampled on the
sphere of the current distance around the target, then, when that is safe,
a contraction step toward the target. No boundary searches at all, which
also means roughly half of all queries land on the flagged side.

Budget overshoot bound: one probe (every primitive here is a single query).
"""

from __future__ import annotations

from collections import deque

import numpy as np

from ..oracles import InstrumentedOracle, Phase
from ..search import probe_point
from ..vectors import Array, NormKind, norm, unit
from .common import (AttackConfig, AttackTrace, InitializationError,
                     TraceRecorder, require_flagged_input)

ORTH_STEP0 = 0.01
SRC_STEP0 = 0.01
ADAPT_WINDOW = 30  # trials per step-size adaptation decision
ADAPT_UP = 1.1
ADAPT_DOWN = 0.9
STEP_MIN, STEP_MAX = 1e-9, 1e2
INIT_TRIES = 10_000


def _sample_safe_start(session: InstrumentedOracle, x: Array, rng,
                       rec: TraceRecorder) -> Array:
    """Uniform noise until a safe point appears; the walk does the rest."""
    for _ in range(INIT_TRIES):
        if rec.should_stop():
            break
        cand = rng.uniform(0.0, 1.0, x.shape[0])
        safe = probe_point(session, cand, Phase.INIT)
        rec.note_checkadv(safe)
        if safe:
            return cand
    raise InitializationError("no safe point found by uniform sampling")


def attack_boundary(session: InstrumentedOracle, x: Array,
                    cfg: AttackConfig) -> AttackTrace:
    rng = np.random.default_rng(cfg.seed)
    rec = TraceRecorder(session, cfg, "boundary", NormKind.L2)
    require_flagged_input(session, x, rec)
    x_t = _sample_safe_start(session, x, rng, rec)
    dist = norm(x_t - x)
    rec.improved(dist, x_t)

    d = x.shape[0]
    orth_step = ORTH_STEP0
    src_step = SRC_STEP0
    orth_window: deque[bool] = deque(maxlen=ADAPT_WINDOW)
    src_window: deque[bool] = deque(maxlen=ADAPT_WINDOW)
    iterations = 0

    def adapt(window: deque[bool], step: float) -> float:
        if len(window) < ADAPT_WINDOW:
            return step
        rate = sum(window) / len(window)
        step *= ADAPT_UP if rate > 0.5 else ADAPT_DOWN
        window.clear()
        return float(np.clip(step, STEP_MIN, STEP_MAX))

    while not rec.should_stop():
        if cfg.max_iterations is not None and iterations >= cfg.max_iterations:
            break
        iterations += 1

        # Orthogonal candidate: perturb on the sphere of radius dist
        # around x, staying at the current distance.
        radial = x_t - x
        eta = rng.standard_normal(d)
        eta -= (eta @ radial) / (radial @ radial) * radial
        eta_len = norm(eta)
        if eta_len == 0.0:
            continue
        eta *= orth_step * dist / eta_len
        cand_orth = x + dist * unit(radial + eta)
        cand_orth = np.clip(cand_orth, 0.0, 1.0)
        safe_orth = probe_point(session, cand_orth, Phase.PROJ_BOUNDARY)
        rec.note_checkadv(safe_orth)
        orth_window.append(safe_orth)
        orth_step = adapt(orth_window, orth_step)
        if not safe_orth:
            continue
        dist_orth = norm(cand_orth - x)
        if dist_orth <= dist * (1.0 + 1e-9):
            x_t = cand_orth
            dist = dist_orth
            rec.improved(dist, x_t)
        if rec.should_stop():
            break

        # Contraction candidate: pull toward x by the source step.
        cand_src = cand_orth + src_step * (x - cand_orth)
        cand_src = np.clip(cand_src, 0.0, 1.0)
        safe_src = probe_point(session, cand_src, Phase.STEP_SIZE)
        rec.note_checkadv(safe_src)
        src_window.append(safe_src)
        src_step = adapt(src_window, src_step)
        if safe_src:
            dist_src = norm(cand_src - x)
            if dist_src < dist:
                x_t = cand_src
                dist = dist_src
                rec.improved(dist, x_t)

    return rec.finish(iterations, orth_step=orth_step, src_step=src_step)
