"""Vector helpers shared by every attack: norms, unit-cube clipping, grid quantization.

Points live in the unit cube [0, 1]^d as float64 arrays. Directions are
unconstrained float64 arrays of the same dimension.
"""

from __future__ import annotations

import enum

import numpy as np

Array = np.ndarray


class NormKind(str, enum.Enum):
    L2 = "l2"
    LINF = "linf"


def as_vector(values, dim: int | None = None) -> Array:
    """Validate and convert to a float64 vector, optionally checking dimension."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected dimension {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite components")
    return v


def norm(v: Array, kind: NormKind = NormKind.L2) -> float:
    if kind is NormKind.L2:
        return float(np.sqrt(v @ v))
    if kind is NormKind.LINF:
        return float(np.max(np.abs(v))) if v.size else 0.0
    raise ValueError(f"unknown norm kind: {kind!r}")


def unit(v: Array) -> Array:
    """L2-normalize. Zero vectors have no direction and are rejected."""
    n = float(np.sqrt(v @ v))
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / n


def clip_unit(p: Array) -> Array:
    return np.clip(p, 0.0, 1.0)


def quantize(p: Array, grid: float) -> Array:
    """Round each component to the nearest multiple of grid, ties away from zero.

    np.round would round ties to even; the tie rule here is fixed so that
    0.5 with grid 1/255 lands on 128/255, not 127/255.
    """
    if grid <= 0.0:
        raise ValueError(f"grid must be positive, got {grid}")
    scaled = p / grid
    return np.copysign(np.floor(np.abs(scaled) + 0.5), scaled) * grid


def on_grid(p: Array, grid: float, tol: float = 1e-9) -> bool:
    scaled = p / grid
    return bool(np.all(np.abs(scaled - np.rint(scaled)) <= tol * np.maximum(1.0, np.abs(scaled))))
