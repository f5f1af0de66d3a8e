"""Sign-based variant of the direction-search attack (L2).

Replaces distance differences with their signs: each gradient sample is a
single probe at the current distance along a perturbed direction, +1 when
the probe is safe (the perturbed direction reaches farther) and -1 when it
is flagged. Much cheaper per sample, so a larger sample count is used.

The stealthy variant shrinks the per-iteration sample count (each flagged
sample still costs one bad query) and moves the step-size searches into
safe-start marching windows.
"""

from __future__ import annotations

import numpy as np

from ..oracles import InstrumentedOracle, Phase
from ..search import check_adv
from ..vectors import Array, unit
from .common import AttackConfig, AttackTrace
from .opt import GRAD_SAMPLES_SIGN, GradEstimate, _attack_opt_family


def _grad_sign(session, x, theta, dist, beta, n, rng, rec,
               strategy, gamma, stealthy) -> GradEstimate:
    d = x.shape[0]
    acc = np.zeros(d)
    used = 0
    for _ in range(n):
        if rec.should_stop():
            break
        u = unit(rng.standard_normal(d))
        cand = unit(theta + beta * u)
        safe = check_adv(session, x, cand, dist, Phase.UPDATE_DIR)
        rec.note_checkadv(safe)
        acc += u if safe else -u
        used += 1
    # Sign probes never measure a distance, so there is nothing to harvest.
    return GradEstimate(acc / used if used else None)


def attack_signopt(session: InstrumentedOracle, x: Array,
                   cfg: AttackConfig) -> AttackTrace:
    return _attack_opt_family(session, x, cfg, "signopt", stealthy=False,
                              grad_fn=_grad_sign,
                              n_default=GRAD_SAMPLES_SIGN)


def attack_stealthy_signopt(session: InstrumentedOracle, x: Array,
                            cfg: AttackConfig) -> AttackTrace:
    cfg_n = cfg.grad_samples
    if cfg_n is None:
        cfg_n = max(int(round(GRAD_SAMPLES_SIGN / cfg.signopt_shrink)), 1)
        cfg = cfg.with_overrides(grad_samples=cfg_n)
    return _attack_opt_family(session, x, cfg, "stealthy_signopt",
                              stealthy=True, grad_fn=_grad_sign,
                              n_default=cfg_n)
