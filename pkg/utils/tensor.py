"""
tensor.py
---------
Minimal reverse-mode differentiation over float64 numpy arrays.

Every op takes the active ComputeTape first, computes its value eagerly and
records a closure mapping the output gradient to input gradients. One tape
holds one forward pass over one mini-batch; row b of every 2-D array is
sample b of that batch.

Main pieces:
- Tensor / Parameter        values, gradient accumulators, stable ids
- ComputeTape               ordered record list + reverse replay
- op functions              affine, activation, gather, concat, ...
- finite_difference_check   central-difference verification of gradients
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CE_EPS = 1e-7          # log clamp for cross-entropy
_SQRT_FLOOR = 1e-12    # keeps d sqrt(x)/dx finite at x = 0


# ===============================================================
# TENSORS
# ===============================================================
class Tensor:
    """A float64 array plus an optional gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad", "name", "produced")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.produced = False  # True once an op on a tape created it

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ValueError(
                f"❌ Gradient shape {g.shape} does not match tensor shape {self.value.shape} ({self.name})"
            )
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


class Parameter(Tensor):
    """Trainable leaf with a persistent, same-shape gradient accumulator."""

    __slots__ = ()

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=np.float64, order="C", copy=True), True, name)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def assign(self, value: np.ndarray) -> None:
        """Overwrite values in place; the shape is fixed for life."""
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.value.shape:
            raise ValueError(f"❌ Cannot assign shape {value.shape} to parameter '{self.name}' of shape {self.shape}")
        self.value[...] = value


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


# ===============================================================
# TAPE
# ===============================================================
@dataclass(frozen=True)
class _Record:
    op: str
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class ComputeTape:
    """Ordered op records for one forward pass.

    With ``debug=True`` every recorded output is checked for NaN/Inf and the
    first offender raises immediately.
    """

    debug: bool = False
    records: list[_Record] = field(default_factory=list)

    def record(self, op: str, output: Tensor, inputs: Sequence[Tensor], backward) -> Tensor:
        if self.debug and not np.all(np.isfinite(output.value)):
            raise FloatingPointError(f"❌ Non-finite output from '{op}' (record #{len(self.records)}, shape {output.shape})")
        output.requires_grad = any(t.requires_grad for t in inputs)
        output.produced = True
        self.records.append(_Record(op, output, tuple(inputs), backward))
        return output

    def first_non_finite(self) -> str | None:
        """Describe the earliest record whose output holds NaN/Inf."""
        for i, rec in enumerate(self.records):
            if not np.all(np.isfinite(rec.output.value)):
                return f"record #{i} '{rec.op}' with shape {rec.output.shape}"
        return None

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        """Replay records in exact reverse order of creation.

        Leaf tensors (parameters and tracked inputs) accumulate; intermediate
        outputs get their gradient written to ``.grad`` for introspection.
        """
        if loss.value.size != 1:
            raise ValueError(f"❌ backward() needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        pending: dict[int, np.ndarray] = {id(loss): np.full(loss.shape, float(seed))}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            rec.output.grad = g
            for inp, ig in zip(rec.inputs, rec.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                if inp.produced:
                    key = id(inp)
                    pending[key] = pending[key] + ig if key in pending else ig
                else:
                    inp.accumulate(ig)


# ===============================================================
# PRIMITIVE OPS
# ===============================================================
def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"❌ {op}: shape mismatch {a.shape} vs {b.shape}")


def affine(tape: ComputeTape, x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """Wx + b for a vector x, or row-wise x Wᵀ + b for a batch."""
    if W.value.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ValueError(f"❌ affine: input shape {x.shape} incompatible with weight shape {W.shape}")
    if b.shape != (W.shape[0],):
        raise ValueError(f"❌ affine: bias shape {b.shape} incompatible with weight shape {W.shape}")
    x2 = x.value.reshape(-1, W.shape[1])
    out = x2 @ W.value.T + b.value
    if x.value.ndim == 1:
        out = out[0]

    def backward(g):
        g2 = g.reshape(-1, W.shape[0])
        return (g2 @ W.value).reshape(x.shape), g2.T @ x2, g2.sum(axis=0)

    return tape.record("affine", Tensor(out), (x, W, b), backward)


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def relu(tape: ComputeTape, x: Tensor) -> Tensor:
    active = x.value > 0
    return tape.record("relu", Tensor(np.where(active, x.value, 0.0)), (x,), lambda g: (g * active,))


def sigmoid(tape: ComputeTape, x: Tensor) -> Tensor:
    s = stable_sigmoid(x.value)
    return tape.record("sigmoid", Tensor(s), (x,), lambda g: (g * s * (1.0 - s),))


def softmax(tape: ComputeTape, x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return tape.record("softmax", Tensor(s), (x,), backward)


_ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "softmax": softmax}


def activation(tape: ComputeTape, x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"❌ Unknown activation '{kind}' (expected one of {sorted(_ACTIVATIONS)})") from None
    return fn(tape, x)


def add(tape: ComputeTape, a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return tape.record("add", Tensor(a.value + b.value), (a, b), lambda g: (g, g))


def add_bias(tape: ComputeTape, x: Tensor, bias: Tensor) -> Tensor:
    """x (B, m) + bias (m,) broadcast over rows."""
    if x.value.ndim != 2 or bias.shape != (x.shape[1],):
        raise ValueError(f"❌ add_bias: shape mismatch {x.shape} vs {bias.shape}")
    return tape.record("add_bias", Tensor(x.value + bias.value), (x, bias), lambda g: (g, g.sum(axis=0)))


def mul(tape: ComputeTape, a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    return tape.record("mul", Tensor(a.value * b.value), (a, b), lambda g: (g * b.value, g * a.value))


def scale_rows(tape: ComputeTape, x: Tensor, w: Tensor) -> Tensor:
    """Scale every row of x (B, d) by the matching scalar in w (B, 1)."""
    if x.value.ndim != 2 or w.shape != (x.shape[0], 1):
        raise ValueError(f"❌ scale_rows: shape mismatch {x.shape} vs {w.shape}")

    def backward(g):
        return g * w.value, (g * x.value).sum(axis=1, keepdims=True)

    return tape.record("scale_rows", Tensor(x.value * w.value), (x, w), backward)


def take_column(tape: ComputeTape, x: Tensor, i: int) -> Tensor:
    if x.value.ndim != 2 or not 0 <= i < x.shape[1]:
        raise IndexError(f"❌ take_column: column {i} out of range for shape {x.shape}")

    def backward(g):
        full = np.zeros_like(x.value)
        full[:, i] = g[:, 0]
        return (full,)

    return tape.record("take_column", Tensor(x.value[:, i : i + 1]), (x,), backward)


def concat(tape: ComputeTape, parts: Sequence[Tensor]) -> Tensor:
    """Concatenate (B, d_k) blocks along the last axis."""
    if not parts:
        raise ValueError("❌ concat: nothing to concatenate")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.value.ndim != 2 for p in parts):
        raise ValueError(f"❌ concat: incompatible shapes {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    cuts = np.cumsum(widths)[:-1]
    out = np.concatenate([p.value for p in parts], axis=1)
    return tape.record("concat", Tensor(out), tuple(parts), lambda g: tuple(np.split(g, cuts, axis=1)))


def rowdot(tape: ComputeTape, a: Tensor, b: Tensor) -> Tensor:
    """Row-wise inner product, (B, d) x (B, d) -> (B, 1)."""
    _check_same("rowdot", a, b)
    out = (a.value * b.value).sum(axis=1, keepdims=True)
    return tape.record("rowdot", Tensor(out), (a, b), lambda g: (g * b.value, g * a.value))


def gather(tape: ComputeTape, table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup: table (V, d), idx (B,) -> (B, d)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= table.shape[0])):
        raise IndexError(f"❌ gather: indices out of range for table {table.name} of shape {table.shape}")

    def backward(g):
        dt = np.zeros_like(table.value)
        np.add.at(dt, idx, g)
        return (dt,)

    return tape.record("gather", Tensor(table.value[idx]), (table,), backward)


def pooled_gather(tape: ComputeTape, table: Tensor, idx: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted sum of looked-up rows: out[b] = Σ_l weights[b, l] · table[idx[b, l]]."""
    idx = np.asarray(idx, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if idx.shape != weights.shape or idx.ndim != 2:
        raise ValueError(f"❌ pooled_gather: index shape {idx.shape} vs weight shape {weights.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"❌ pooled_gather: indices out of range for table {table.name} of shape {table.shape}")
    out = np.einsum("bl,bld->bd", weights, table.value[idx])

    def backward(g):
        dt = np.zeros_like(table.value)
        contrib = weights[:, :, None] * g[:, None, :]
        np.add.at(dt, idx.reshape(-1), contrib.reshape(-1, table.shape[1]))
        return (dt,)

    return tape.record("pooled_gather", Tensor(out), (table,), backward)


def where_rows(tape: ComputeTape, flags: np.ndarray, replacement: Tensor, x: Tensor) -> Tensor:
    """Rows of x where flags is False, the single replacement row (1, d) elsewhere."""
    flags = np.asarray(flags, dtype=bool)
    if x.value.ndim != 2 or replacement.shape != (1, x.shape[1]) or flags.shape != (x.shape[0],):
        raise ValueError(f"❌ where_rows: shape mismatch x={x.shape} replacement={replacement.shape} flags={flags.shape}")
    out = np.where(flags[:, None], replacement.value, x.value)

    def backward(g):
        return g[flags].sum(axis=0, keepdims=True), np.where(flags[:, None], 0.0, g)

    return tape.record("where_rows", Tensor(out), (replacement, x), backward)


def l2_norm_rows(tape: ComputeTape, x: Tensor) -> Tensor:
    """Euclidean norm of every row, (B, d) -> (B, 1); gradient is zero at the origin."""
    n = np.sqrt((x.value * x.value).sum(axis=1, keepdims=True))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * x.value / safe, 0.0),)

    return tape.record("l2_norm", Tensor(n), (x,), backward)


def log1p(tape: ComputeTape, x: Tensor) -> Tensor:
    return tape.record("log1p", Tensor(np.log1p(x.value)), (x,), lambda g: (g / (1.0 + x.value),))


def sqrt(tape: ComputeTape, x: Tensor) -> Tensor:
    r = np.sqrt(x.value)
    return tape.record("sqrt", Tensor(r), (x,), lambda g: (g * 0.5 / np.sqrt(np.maximum(x.value, _SQRT_FLOOR)),))


def square(tape: ComputeTape, x: Tensor) -> Tensor:
    return tape.record("square", Tensor(x.value * x.value), (x,), lambda g: (g * 2.0 * x.value,))


def detach(x: Tensor) -> Tensor:
    """Same values, cut from the tape."""
    return Tensor(x.value)


def weighted_sum(tape: ComputeTape, x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar Σ weights ⊙ x; lets tests inject an arbitrary upstream gradient."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != x.shape:
        raise ValueError(f"❌ weighted_sum: shape mismatch {x.shape} vs {weights.shape}")
    out = np.array((weights * x.value).sum())
    return tape.record("weighted_sum", Tensor(out), (x,), lambda g: (g * weights,))


def linear_combination(tape: ComputeTape, terms: Sequence[tuple[float, Tensor]]) -> Tensor:
    """Scalar Σ c_k · t_k over scalar tensors."""
    for _, t in terms:
        if t.value.size != 1:
            raise ValueError(f"❌ linear_combination expects scalars, got shape {t.shape}")
    total = 0.0
    for c, t in terms:
        total = total + c * float(t.value)
    coefs = [c for c, _ in terms]

    def backward(g):
        return tuple(g * c for c in coefs)

    return tape.record("linear_combination", Tensor(np.array(total)), tuple(t for _, t in terms), backward)


# ===============================================================
# LOSSES
# ===============================================================
def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("❌ Labels must be in {0, 1}")
    return y


def cross_entropy(y_hat, y) -> float:
    """−y·log ŷ − (1−y)·log(1−ŷ) with ŷ clamped into [ε, 1−ε]."""
    yv = _check_labels(np.asarray(y))[0]
    p = float(np.clip(y_hat, CE_EPS, 1.0 - CE_EPS))
    return float(-yv * np.log(p) - (1.0 - yv) * np.log(1.0 - p))


def bce_with_logits(tape: ComputeTape, logits: Tensor, labels: np.ndarray) -> Tensor:
    """Batch-mean cross-entropy of sigmoid(logits) against labels.

    The value is log(1 + e^z) − y·z, unclamped, so it stays the exact
    antiderivative of the gradient (ŷ − y) / B even for saturated logits.
    """
    y = _check_labels(labels)
    z = logits.value.reshape(-1)
    if z.shape != y.shape:
        raise ValueError(f"❌ bce_with_logits: {z.shape[0]} logits vs {y.shape[0]} labels")
    s = stable_sigmoid(z)
    losses = np.logaddexp(0.0, z) - y * z
    batch = y.shape[0]

    def backward(g):
        return ((g * (s - y) / batch).reshape(logits.shape),)

    return tape.record("bce_with_logits", Tensor(np.array(losses.mean())), (logits,), backward)


# ===============================================================
# GRADIENT VERIFICATION
# ===============================================================
@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: str | None
    checked: int
    per_parameter: dict[str, float]

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def _pick_coordinates(analytic: np.ndarray, max_coords: int, rng: np.random.Generator) -> np.ndarray:
    size = analytic.size
    if size <= max_coords:
        return np.arange(size)
    # favour coordinates that actually carry gradient; untouched rows give 0 vs 0
    nonzero = np.flatnonzero(analytic)
    take = min(len(nonzero), max_coords // 2)
    chosen = rng.choice(nonzero, size=take, replace=False) if take else np.empty(0, dtype=np.int64)
    rest = np.setdiff1d(np.arange(size), chosen)
    filler = rng.choice(rest, size=max_coords - take, replace=False)
    return np.sort(np.concatenate([chosen, filler]))


def finite_difference_check(
    f: Callable[[ComputeTape], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
    perturb_analytic: Callable[[dict[str, np.ndarray]], None] | None = None,
) -> GradCheckReport:
    """Compare tape gradients with central differences (f(θ+ε) − f(θ−ε)) / 2ε.

    ``f`` builds the scalar objective on the tape it is given and must be
    deterministic. Parameters larger than ``max_coords`` are checked on a
    random subset of that many coordinates. ``perturb_analytic`` is a test
    hook that may corrupt the analytic gradients before comparison.
    """

    def evaluate() -> float:
        return float(f(ComputeTape()).value)

    first, second = evaluate(), evaluate()
    if first != second:
        raise RuntimeError(f"❌ Objective is not deterministic ({first!r} vs {second!r}); finite differences are meaningless")

    zero_grad(params)
    tape = ComputeTape()
    tape.backward(f(tape))
    analytic = {p.name: p.grad.copy() for p in params}
    if perturb_analytic is not None:
        perturb_analytic(analytic)

    rng = np.random.default_rng(seed)
    worst, worst_name, checked = 0.0, None, 0
    per_parameter: dict[str, float] = {}
    for p in params:
        grad = analytic[p.name]
        p_worst = 0.0
        for flat in _pick_coordinates(grad.reshape(-1), max_coords, rng):
            pos = np.unravel_index(flat, p.shape)
            original = p.value[pos]
            p.value[pos] = original + eps
            f_plus = evaluate()
            p.value[pos] = original - eps
            f_minus = evaluate()
            p.value[pos] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = grad[pos]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            p_worst = max(p_worst, err)
            checked += 1
        per_parameter[p.name] = p_worst
        if worst_name is None or p_worst > worst:
            worst, worst_name = p_worst, p.name
    logger.debug("🔬 Gradient check: %d coordinates, worst %.3e (%s)", checked, worst, worst_name)
    return GradCheckReport(worst, worst_name, checked, per_parameter)
