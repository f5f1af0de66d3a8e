"""Decision-only attacks and the registry the CLI and tests run them by."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..oracles import DecisionOracle, InstrumentedOracle, QueryLedger
from ..vectors import Array, NormKind
from .boundary import attack_boundary
from .common import (AttackConfig, AttackTrace, InitializationError,
                     TraceRecorder)
from .hsja import (attack_hsja, attack_hsja_linf, attack_stealthy_hsja,
                   attack_stealthy_hsja_linf)
from .opt import attack_opt, attack_stealthy_opt
from .rays import attack_rays, attack_stealthy_rays
from .signopt import attack_signopt, attack_stealthy_signopt

AttackFn = Callable[[InstrumentedOracle, Array, AttackConfig], AttackTrace]


@dataclass(frozen=True)
class AttackInfo:
    name: str
    fn: AttackFn
    norm: NormKind
    stealthy: bool


REGISTRY: dict[str, AttackInfo] = {
    info.name: info for info in (
        AttackInfo("boundary", attack_boundary, NormKind.L2, False),
        AttackInfo("rays", attack_rays, NormKind.LINF, False),
        AttackInfo("stealthy_rays", attack_stealthy_rays, NormKind.LINF,
                   True),
        AttackInfo("opt", attack_opt, NormKind.L2, False),
        AttackInfo("stealthy_opt", attack_stealthy_opt, NormKind.L2, True),
        AttackInfo("signopt", attack_signopt, NormKind.L2, False),
        AttackInfo("stealthy_signopt", attack_stealthy_signopt, NormKind.L2,
                   True),
        AttackInfo("hsja", attack_hsja, NormKind.L2, False),
        AttackInfo("hsja_linf", attack_hsja_linf, NormKind.LINF, False),
        AttackInfo("stealthy_hsja", attack_stealthy_hsja, NormKind.L2, True),
        AttackInfo("stealthy_hsja_linf", attack_stealthy_hsja_linf,
                   NormKind.LINF, True),
    )
}


def get_attack(name: str) -> AttackInfo:
    try:
        return REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(REGISTRY))
        raise ValueError(f"unknown attack {name!r}; known: {known}") from None


def run_attack(oracle: DecisionOracle, x: Array, name: str,
               cfg: AttackConfig) -> tuple[AttackTrace, QueryLedger]:
    """Run one attack on a fresh instrumented session and return its trace
    together with the session's final query ledger."""
    info = get_attack(name)
    session = InstrumentedOracle(oracle)
    trace = info.fn(session, x, cfg)
    return trace, session.snapshot()


__all__ = [
    "AttackConfig", "AttackFn", "AttackInfo", "AttackTrace",
    "InitializationError", "REGISTRY", "TraceRecorder", "get_attack",
    "run_attack",
]
