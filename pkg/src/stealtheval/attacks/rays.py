"""Ray search over signed directions (sup-norm).

Directions are sign vectors refined hierarchically: flip the whole vector,
then halves, quarters, and so on. Each candidate direction costs one probe
at the current ray length; only when that probe is safe does a boundary
search re-measure the ray. The stealthy variant swaps bisection for a
marching search with early stopping, so accepted directions usually cost
zero flagged queries.

Budget overshoot bound: one boundary search (about log2(1/eta) probes for
bisection, at most one stage worth of probes when marching).
"""

from __future__ import annotations

import math

import numpy as np

from ..oracles import InstrumentedOracle, Phase
from ..search import (Binary, Line, SearchStrategy, path_march_search,
                      probe_point, ray_path)
from ..vectors import Array, NormKind
from .common import AttackConfig, AttackTrace, TraceRecorder, require_flagged_input

ETA_DEFAULT = 1e-3


def _default_strategy(stealthy: bool, cfg: AttackConfig) -> SearchStrategy:
    if stealthy:
        return SearchStrategy(Line(ETA_DEFAULT), early_stop=cfg.rays_early_stop)
    return SearchStrategy(Binary(ETA_DEFAULT))


def _attack_rays(session: InstrumentedOracle, x: Array, cfg: AttackConfig,
                 name: str, stealthy: bool) -> AttackTrace:
    rng = np.random.default_rng(cfg.seed)  # unused; directions are deterministic
    del rng
    rec = TraceRecorder(session, cfg, name, NormKind.LINF)
    require_flagged_input(session, x, rec)
    strategy = cfg.strategy or _default_strategy(stealthy, cfg)

    d = x.shape[0]
    sgn = np.ones(d)
    d_t = math.inf  # ray length in units of the L2-normalized sign vector
    saturation = math.sqrt(d)  # beyond this every coordinate has clipped
    max_level = max(1, math.ceil(math.log2(d)))
    level = 0
    block_ind = 0
    iterations = 0

    while not rec.should_stop():
        if cfg.max_iterations is not None and iterations >= cfg.max_iterations:
            break
        iterations += 1

        block_num = 2 ** level
        size = math.ceil(d / block_num)
        start = block_ind * size
        end = min(start + size, d)
        attempt = sgn.copy()
        attempt[start:end] *= -1.0
        u = attempt / saturation  # unit vector: all entries +-1/sqrt(d)

        if math.isinf(d_t):
            # No anchor yet: probe where the ray saturates the cube.
            safe = probe_point(session, x + saturation * u, Phase.INIT)
            rec.note_checkadv(safe)
            accepted = safe
            hi = saturation
        else:
            safe = probe_point(session, x + d_t * u, Phase.STEP_SIZE)
            rec.note_checkadv(safe)
            accepted = safe
            hi = d_t

        if accepted:
            out = path_march_search(session, ray_path(x, u), 0.0, hi,
                                    strategy, Phase.PROJ_BOUNDARY,
                                    reference=hi if math.isfinite(hi) else None)
            rec.note_getdist(out)
            if out.point is not None and out.distance < hi * (1.0 + 1e-12):
                sgn = attempt
                d_t = out.ray_length
                linf = float(np.max(np.abs(out.point - x)))
                rec.improved(linf, out.point)

        block_ind += 1
        if block_ind == block_num or block_ind * size >= d:
            block_ind = 0
            if level < max_level:
                level += 1

    return rec.finish(iterations, final_ray_length=d_t, block_level=level)


def attack_rays(session: InstrumentedOracle, x: Array,
                cfg: AttackConfig) -> AttackTrace:
    return _attack_rays(session, x, cfg, "rays", stealthy=False)


def attack_stealthy_rays(session: InstrumentedOracle, x: Array,
                         cfg: AttackConfig) -> AttackTrace:
    return _attack_rays(session, x, cfg, "stealthy_rays", stealthy=True)
