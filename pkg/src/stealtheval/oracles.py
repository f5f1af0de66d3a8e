"""Decision oracles and query accounting.

An oracle answers one question about a point in [0, 1]^d: flagged or safe.
Attacks never see scores or labels, only the verdict, and every query they
issue is charged to a ledger with a phase tag so runs can be priced under
asymmetric query-cost models afterwards.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .vectors import Array, as_vector, on_grid


class Verdict(enum.Enum):
    FLAGGED = "flagged"
    SAFE = "safe"


class Phase(str, enum.Enum):
    """Where in an attack a query was spent."""

    INIT = "init"
    PROJ_BOUNDARY = "proj_boundary"
    UPDATE_DIR = "update_dir"
    STEP_SIZE = "step_size"


class OracleError(Exception):
    pass


class DimensionMismatchError(OracleError):
    pass


class OffGridError(OracleError):
    """A quantized oracle saw a query off its grid. Hard error, never a silent snap."""


@dataclass(frozen=True)
class OracleDescriptor:
    dimension: int
    grid: float | None = None
    protocol_version: int = 1

    def __post_init__(self) -> None:
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if self.grid is not None and not (0.0 < self.grid <= 1.0):
            raise ValueError("grid must lie in (0, 1]")


class DecisionOracle:
    """Base class: subclasses implement _decide on validated points."""

    descriptor: OracleDescriptor

    def decide(self, x: Array) -> bool:
        """True iff x is flagged. Validates dimension and grid alignment."""
        d = self.descriptor
        if x.shape != (d.dimension,):
            raise DimensionMismatchError(
                f"expected shape ({d.dimension},), got {x.shape}"
            )
        if d.grid is not None and not on_grid(x, d.grid):
            raise OffGridError(f"query is off the declared grid of {d.grid}")
        return self._decide(x)

    def _decide(self, x: Array) -> bool:
        raise NotImplementedError


class LinearOracle(DecisionOracle):
    """Halfspace rule: flagged iff w.x + b >= 0."""

    def __init__(self, w, b: float, grid: float | None = None):
        self.w = as_vector(w)
        self.b = float(b)
        self.descriptor = OracleDescriptor(self.w.shape[0], grid)

    def _decide(self, x: Array) -> bool:
        return float(self.w @ x) + self.b >= 0.0


class SphereOracle(DecisionOracle):
    """Ball rule: flagged inside (or outside) a sphere."""

    def __init__(self, center, radius: float, flagged_inside: bool = True,
                 grid: float | None = None):
        if radius <= 0.0:
            raise ValueError("radius must be positive")
        self.center = as_vector(center)
        self.radius = float(radius)
        self.flagged_inside = bool(flagged_inside)
        self.descriptor = OracleDescriptor(self.center.shape[0], grid)

    def _decide(self, x: Array) -> bool:
        diff = x - self.center
        inside = float(diff @ diff) <= self.radius * self.radius
        return inside if self.flagged_inside else not inside


class MlpOracle(DecisionOracle):
    """Small feed-forward net with a scalar logit; flagged iff logit >= threshold.

    weights[i] has shape (layer_sizes[i+1], layer_sizes[i]); the final layer
    must produce a single output. Hidden activation is relu or tanh.
    """

    ACTIVATIONS = ("relu", "tanh")

    def __init__(self, weights: list[Array], biases: list[Array],
                 activation: str = "relu", threshold: float = 0.0,
                 grid: float | None = None):
        if activation not in self.ACTIVATIONS:
            raise ValueError(f"activation must be one of {self.ACTIVATIONS}")
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias vector per weight matrix")
        for w, b in zip(weights, biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError("layer shapes are inconsistent")
        for prev, nxt in zip(weights, weights[1:]):
            if nxt.shape[1] != prev.shape[0]:
                raise ValueError("layer shapes do not chain")
        if weights[-1].shape[0] != 1:
            raise ValueError("final layer must emit a single logit")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.activation = activation
        self.threshold = float(threshold)
        self.descriptor = OracleDescriptor(self.weights[0].shape[1], grid)

    def _decide(self, x: Array) -> bool:
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = w @ h + b
            if i < last:
                h = np.maximum(h, 0.0) if self.activation == "relu" else np.tanh(h)
        return float(h[0]) >= self.threshold


def save_mlp(path: str, oracle: MlpOracle) -> None:
    """Write the documented text format (see docs/oracle_formats.md)."""
    buf = io.StringIO()
    sizes = [oracle.weights[0].shape[1]] + [w.shape[0] for w in oracle.weights]
    buf.write("mlp\n")
    buf.write("dims " + " ".join(str(s) for s in sizes) + "\n")
    buf.write(f"activation {oracle.activation}\n")
    buf.write(f"threshold {oracle.threshold!r}\n")
    for i, (w, b) in enumerate(zip(oracle.weights, oracle.biases)):
        buf.write(f"layer {i}\n")
        for row in w:
            buf.write(" ".join(repr(float(v)) for v in row) + "\n")
        buf.write("bias " + " ".join(repr(float(v)) for v in b) + "\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def load_mlp(path: str, grid: float | None = None) -> MlpOracle:
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh
                 if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0] != "mlp":
        raise ValueError("not an mlp oracle file (missing 'mlp' header)")
    pos = 1

    def take(prefix: str) -> str:
        nonlocal pos
        if pos >= len(lines) or not lines[pos].startswith(prefix):
            raise ValueError(f"expected '{prefix} ...' at line {pos + 1}")
        out = lines[pos][len(prefix):].strip()
        pos += 1
        return out

    sizes = [int(s) for s in take("dims").split()]
    if len(sizes) < 2:
        raise ValueError("dims needs at least input and output sizes")
    activation = take("activation")
    threshold = float(take("threshold"))
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        rows, cols = sizes[i + 1], sizes[i]
        if take("layer") != str(i):
            raise ValueError(f"expected layer {i}")
        w = np.empty((rows, cols))
        for r in range(rows):
            vals = [float(v) for v in lines[pos].split()]
            pos += 1
            if len(vals) != cols:
                raise ValueError(f"layer {i} row {r}: expected {cols} values")
            w[r] = vals
        b = np.array([float(v) for v in take("bias").split()])
        if b.shape[0] != rows:
            raise ValueError(f"layer {i}: expected {rows} bias values")
        weights.append(w)
        biases.append(b)
    return MlpOracle(weights, biases, activation, threshold, grid=grid)


@dataclass(frozen=True)
class QueryLedger:
    """Immutable snapshot of query counts, overall and per phase."""

    total: int
    flagged: int
    by_phase: dict[Phase, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (0 <= self.flagged <= self.total):
            raise ValueError("flagged count must lie in [0, total]")
        t = sum(v[0] for v in self.by_phase.values())
        f = sum(v[1] for v in self.by_phase.values())
        if (t, f) != (self.total, self.flagged):
            raise ValueError("per-phase counts do not sum to the totals")


class InstrumentedOracle:
    """Charges every query to a ledger keyed by phase. One increment per query.

    On quantized oracles a query identical to the immediately preceding one
    is answered from memory: the platform never sees it, so nothing is
    charged. Off-grid sessions skip the comparison (repeats need exact float
    equality, which the continuous probes never produce).
    """

    def __init__(self, oracle: DecisionOracle):
        self._oracle = oracle
        self.descriptor = oracle.descriptor
        self.total = 0
        self.flagged = 0
        self._counts: dict[Phase, list[int]] = {p: [0, 0] for p in Phase}
        self._last_key: bytes | None = None
        self._last_flagged = False

    def query(self, x: Array, phase: Phase) -> Verdict:
        key = np.asarray(x).tobytes() if self.descriptor.grid is not None \
            else None
        if key is not None and key == self._last_key:
            return Verdict.FLAGGED if self._last_flagged else Verdict.SAFE
        flagged = self._oracle.decide(x)
        c = self._counts[phase]
        c[0] += 1
        self.total += 1
        if flagged:
            c[1] += 1
            self.flagged += 1
        if key is not None:
            self._last_key = key
            self._last_flagged = flagged
        return Verdict.FLAGGED if flagged else Verdict.SAFE

    def query_is_flagged(self, x: Array, phase: Phase) -> bool:
        """Hot-path variant of query(); identical accounting."""
        return self.query(x, phase) is Verdict.FLAGGED

    def snapshot(self) -> QueryLedger:
        return QueryLedger(
            total=self.total,
            flagged=self.flagged,
            by_phase={p: (c[0], c[1]) for p, c in self._counts.items()},
        )


def make_oracle(spec: dict) -> DecisionOracle:
    """Build a synthetic oracle from a config mapping (see the CLI docs).

    Kinds: linear {dim, seed | w+b, grid}, sphere {dim, seed | center+radius,
    flagged_inside, grid}, mlp {path, grid}.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    grid = spec.pop("grid", None)
    if kind == "linear":
        if "w" in spec:
            return LinearOracle(spec["w"], spec.get("b", 0.0), grid=grid)
        dim = int(spec["dim"])
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        w = rng.standard_normal(dim)
        w /= np.sqrt(w @ w)
        # Bias keeps the cube center flagged with a modest margin, so random
        # flagged samples near the center have a boundary within reach.
        b = float(spec.get("b", 0.1 - float(w @ np.full(dim, 0.5))))
        return LinearOracle(w, b, grid=grid)
    if kind == "sphere":
        if "center" in spec:
            return SphereOracle(spec["center"], float(spec["radius"]),
                                bool(spec.get("flagged_inside", True)), grid=grid)
        dim = int(spec["dim"])
        radius = float(spec.get("radius", 0.3))
        return SphereOracle(np.full(dim, 0.5), radius,
                            bool(spec.get("flagged_inside", True)), grid=grid)
    if kind == "mlp":
        return load_mlp(spec["path"], grid=grid)
    raise ValueError(f"unknown oracle kind: {kind!r} (expected linear, sphere, or mlp)")
