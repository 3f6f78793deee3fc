"""Minimal reverse-mode automatic differentiation for small dense networks.

All values are float64 numpy arrays. A :class:`Tape` records every derived
value in creation order; :func:`backward` replays the records in reverse,
which is a valid reverse-topological order because an operation can only
consume values that already exist. A tape is single-use: replaying it twice
raises :class:`~praffl.errors.TapeConsumedError`.

The op functions below (``matmul``, ``log``, ``maximum``, ...) accept either
:class:`Var` nodes or plain numpy arrays. When no operand is a Var they
reduce to the plain numpy computation, so loss code can be written once and
used both for taped training and for pure evaluation.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, TapeConsumedError, UsageError

Array = np.ndarray

HIDDEN_ACTIVATIONS = ("relu", "tanh")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


# ---------------------------------------------------------------------------
# Parameter layout and flat parameter vectors


@dataclass(frozen=True)
class LayoutEntry:
    """One affine-layer block inside a flat parameter vector.

    Biases are stored as 1-row matrices so that every entry is 2-D and the
    text serialization header stays uniform (name, rows, cols).
    """

    name: str
    rows: int
    cols: int

    def __post_init__(self) -> None:
        if not self.name or any(ch.isspace() for ch in self.name):
            raise ConfigurationError(f"layout entry name {self.name!r} must be non-empty without spaces")
        if self.rows < 1 or self.cols < 1:
            raise ConfigurationError(f"layout entry {self.name!r} has non-positive shape")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class ParamLayout:
    entries: tuple[LayoutEntry, ...]

    def __post_init__(self) -> None:
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ConfigurationError("duplicate layout entry names")
        spans = []
        offset = 0
        for entry in self.entries:
            spans.append((entry, offset, offset + entry.size))
            offset += entry.size
        object.__setattr__(self, "_spans", tuple(spans))
        object.__setattr__(self, "_size", offset)

    @property
    def size(self) -> int:
        return self._size

    def segments(self) -> tuple[tuple[LayoutEntry, int, int], ...]:
        """(entry, start, stop) offsets into the flat value array."""
        return self._spans


class ParamVector:
    """A flat float64 parameter vector plus the layout that decomposes it.

    Identity-hashed on purpose: gradients returned by :func:`backward` are
    keyed by the ParamVector objects that were touched, and distinct
    parameter sets must never alias.
    """

    __slots__ = ("layout", "values")

    def __init__(self, layout: ParamLayout, values) -> None:
        values = np.ascontiguousarray(values, dtype=np.float64)
        if values.ndim != 1 or values.size != layout.size:
            raise ConfigurationError(
                f"parameter vector length {values.size} does not match layout size {layout.size}"
            )
        if not np.isfinite(values).all():
            raise DataError("parameter vector contains non-finite values")
        self.layout = layout
        self.values = values

    def __len__(self) -> int:
        return self.values.size

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.values.copy())

    def entry_view(self, name: str) -> Array:
        for entry, start, stop in self.layout.segments():
            if entry.name == name:
                return self.values[start:stop].reshape(entry.shape)
        raise ConfigurationError(f"no layout entry named {name!r}")

    def assert_finite(self, context: str = "") -> None:
        if not np.isfinite(self.values).all():
            raise DataError(f"non-finite parameter values {context}".strip())

    @classmethod
    def zeros(cls, layout: ParamLayout) -> "ParamVector":
        return cls(layout, np.zeros(layout.size))


# ---------------------------------------------------------------------------
# Tape and recorded values


class Var:
    """A recorded value on a tape. Construct through the op functions."""

    __slots__ = ("value", "grad", "_tape", "_backward")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, value, tape: "Tape", backward=None) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self._tape = tape
        self._backward = backward
        tape._record(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __float__(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape})"

    # arithmetic sugar, all routed through the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    @property
    def T(self):
        return transpose(self)


class Tape:
    """Single-use record of one forward/loss evaluation."""

    def __init__(self) -> None:
        self._nodes: list[Var] = []
        self._leaves: dict[int, tuple[ParamVector, dict[str, Var]]] = {}
        self._consumed = False

    def _record(self, var: Var) -> None:
        if self._consumed:
            raise TapeConsumedError("tape already consumed by backward()")
        self._nodes.append(var)

    def leaf(self, params: ParamVector) -> dict[str, Var]:
        """Register a parameter set as differentiable leaves (idempotent)."""
        cached = self._leaves.get(id(params))
        if cached is not None:
            return cached[1]
        pieces = {}
        for entry, start, stop in params.layout.segments():
            pieces[entry.name] = Var(params.values[start:stop].reshape(entry.shape).copy(), self)
        self._leaves[id(params)] = (params, pieces)
        return pieces


def backward(tape: Tape, seed_gradient) -> dict[ParamVector, ParamVector]:
    """Reverse-accumulate gradients from the tape's final value.

    Returns one gradient ParamVector per parameter set registered on the
    tape; sets the loss never touched get an all-zero gradient.
    """
    if tape._consumed:
        raise TapeConsumedError("tape already consumed by backward()")
    if not tape._nodes:
        raise UsageError("backward() on an empty tape")
    root = tape._nodes[-1]
    seed = np.asarray(seed_gradient, dtype=np.float64)
    if seed.shape != root.value.shape:
        raise UsageError(f"seed gradient shape {seed.shape} != output shape {root.value.shape}")
    tape._consumed = True
    root.grad = seed.copy()
    for node in reversed(tape._nodes):
        if node.grad is not None and node._backward is not None:
            node._backward(node.grad)
    out: dict[ParamVector, ParamVector] = {}
    for params, pieces in tape._leaves.values():
        flat = np.zeros(params.layout.size)
        for entry, start, stop in params.layout.segments():
            grad = pieces[entry.name].grad
            if grad is not None:
                flat[start:stop] = grad.ravel()
        out[params] = ParamVector(params.layout, flat)
    return out


# ---------------------------------------------------------------------------
# Primitive ops (Var-or-ndarray generic)


def _value(x) -> Array:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*operands) -> Tape | None:
    tape = None
    for x in operands:
        if isinstance(x, Var):
            if tape is None:
                tape = x._tape
            elif tape is not x._tape:
                raise UsageError("operands were recorded on different tapes")
    return tape


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _accumulate(var, grad) -> None:
    if not isinstance(var, Var):
        return
    grad = _unbroadcast(np.asarray(grad, dtype=np.float64), var.value.shape)
    if var.grad is None:
        var.grad = grad.copy()
    else:
        var.grad += grad


def add(a, b):
    tape = _tape_of(a, b)
    out = _value(a) + _value(b)
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return Var(out, tape, bw)


def sub(a, b):
    tape = _tape_of(a, b)
    out = _value(a) - _value(b)
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return Var(out, tape, bw)


def mul(a, b):
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = av * bv
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g * bv)
        _accumulate(b, g * av)

    return Var(out, tape, bw)


def div(a, b):
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    out = av / bv
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g / bv)
        _accumulate(b, -g * av / (bv * bv))

    return Var(out, tape, bw)


def neg(a):
    tape = _tape_of(a)
    out = -_value(a)
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, -g)

    return Var(out, tape, bw)


def matmul(a, b):
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise UsageError("matmul expects 2-D operands")
    out = av @ bv
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g @ bv.T)
        _accumulate(b, av.T @ g)

    return Var(out, tape, bw)


def transpose(a):
    tape = _tape_of(a)
    out = _value(a).T
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g.T)

    return Var(out, tape, bw)


def reshape(a, shape):
    tape = _tape_of(a)
    av = _value(a)
    out = av.reshape(shape)
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g.reshape(av.shape))

    return Var(out, tape, bw)


def take(a, key):
    """Basic indexing/slicing with scatter-add backward."""
    tape = _tape_of(a)
    av = _value(a)
    out = av[key]
    if tape is None:
        return out

    def bw(g):
        buf = np.zeros_like(av)
        np.add.at(buf, key, g)
        _accumulate(a, buf)

    return Var(out, tape, bw)


def log(a):
    tape = _tape_of(a)
    av = _value(a)
    out = np.log(av)
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g / av)

    return Var(out, tape, bw)


def _sigmoid_value(x: Array) -> Array:
    # exp only of non-positive arguments, so it never overflows
    with np.errstate(over="ignore"):
        z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a):
    tape = _tape_of(a)
    out = _sigmoid_value(_value(a))
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g * out * (1.0 - out))

    return Var(out, tape, bw)


def tanh(a):
    tape = _tape_of(a)
    out = np.tanh(_value(a))
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g * (1.0 - out * out))

    return Var(out, tape, bw)


def relu(a):
    tape = _tape_of(a)
    av = _value(a)
    out = np.maximum(av, 0.0)
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g * (av > 0.0))

    return Var(out, tape, bw)


def clip(a, lo: float, hi: float):
    tape = _tape_of(a)
    av = _value(a)
    out = np.clip(av, lo, hi)
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g * ((av >= lo) & (av <= hi)))

    return Var(out, tape, bw)


def absolute(a):
    tape = _tape_of(a)
    av = _value(a)
    out = np.abs(av)
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g * np.sign(av))

    return Var(out, tape, bw)


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first operand."""
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    first = av >= bv
    out = np.where(first, av, bv)
    if tape is None:
        return out

    def bw(g):
        _accumulate(a, g * first)
        _accumulate(b, g * ~first)

    return Var(out, tape, bw)


def reduce_sum(a, axis: int | None = None):
    tape = _tape_of(a)
    av = _value(a)
    out = av.sum(axis=axis)
    if tape is None:
        return out

    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, av.shape))
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), av.shape))

    return Var(out, tape, bw)


def reduce_mean(a, axis: int | None = None):
    av = _value(a)
    count = av.size if axis is None else av.shape[axis]
    return div(reduce_sum(a, axis=axis), float(count))


# ---------------------------------------------------------------------------
# Dense networks


@dataclass(frozen=True)
class DenseNetSpec:
    """Architecture of a fully-connected network with affine layers."""

    input_dim: int
    hidden_dims: tuple[int, ...] = ()
    output_dim: int = 1
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self) -> None:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ConfigurationError(f"all layer dims must be positive, got {dims}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigurationError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    def layout(self) -> ParamLayout:
        return _layout_for(self)

    def param_count(self) -> int:
        return self.layout().size


@functools.lru_cache(maxsize=None)
def _layout_for(spec: DenseNetSpec) -> ParamLayout:
    entries = []
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims()):
        entries.append(LayoutEntry(f"w{i}", fan_in, fan_out))
        entries.append(LayoutEntry(f"b{i}", 1, fan_out))
    return ParamLayout(tuple(entries))


def forward(spec: DenseNetSpec, params, batch, tape: Tape | None = None):
    """Apply the network to a batch of rows.

    ``params`` may be a ParamVector (registered as tape leaves when a tape
    is supplied) or a flat Var already on a tape, e.g. a hypernetwork's
    output. ``batch`` may likewise be a plain matrix or a taped Var.
    Without any taped operand this is a pure numpy evaluation.
    """
    batch_value = _value(batch)
    if batch_value.ndim != 2 or batch_value.shape[1] != spec.input_dim:
        raise ConfigurationError(
            f"batch shape {batch_value.shape} incompatible with input_dim {spec.input_dim}"
        )
    if not isinstance(batch, Var) and not np.isfinite(batch_value).all():
        raise DataError("batch contains non-finite values")

    layout = spec.layout()
    if isinstance(params, ParamVector):
        if params.layout != layout:
            raise ConfigurationError("parameter layout does not match network spec")
        if tape is not None:
            pieces = tape.leaf(params)
            piece = pieces.__getitem__
        else:
            piece = params.entry_view
    else:  # flat Var emitted by another network
        if _value(params).shape != (layout.size,):
            raise ConfigurationError(
                f"flat parameter value of length {_value(params).size} does not match spec ({layout.size})"
            )
        offsets = {entry.name: (entry, start, stop) for entry, start, stop in layout.segments()}

        def piece(name):
            entry, start, stop = offsets[name]
            return reshape(take(params, slice(start, stop)), entry.shape)

    h = batch
    last = len(spec.layer_dims()) - 1
    for i in range(last + 1):
        h = add(matmul(h, piece(f"w{i}")), piece(f"b{i}"))
        if i < last:
            h = relu(h) if spec.hidden_activation == "relu" else tanh(h)
        elif spec.output_activation == "sigmoid":
            h = sigmoid(h)
    return h


def finite_diff_gradient(loss_fn, params: ParamVector, step: float) -> ParamVector:
    """Central-difference gradient estimate, one coordinate at a time."""
    if step <= 0:
        raise ConfigurationError("finite-difference step must be positive")
    work = params.values.copy()
    grad = np.empty_like(work)
    for i in range(work.size):
        origin = work[i]
        work[i] = origin + step
        up = float(loss_fn(ParamVector(params.layout, work)))
        work[i] = origin - step
        down = float(loss_fn(ParamVector(params.layout, work)))
        work[i] = origin
        if not (np.isfinite(up) and np.isfinite(down)):
            raise DataError("loss evaluated to a non-finite value during finite differencing")
        grad[i] = (up - down) / (2.0 * step)
    return ParamVector(params.layout, grad)


# ---------------------------------------------------------------------------
# Serialization: text header (name rows cols per line), blank line, then
# the flat values as little-endian float64.


def write_param_vector(fh, params: ParamVector) -> None:
    for entry in params.layout.entries:
        fh.write(f"{entry.name} {entry.rows} {entry.cols}\n".encode("ascii"))
    fh.write(b"\n")
    fh.write(params.values.astype("<f8").tobytes())


def read_param_vector(fh) -> ParamVector:
    entries = []
    while True:
        line = fh.readline()
        if not line:
            raise DataError("truncated parameter header")
        if line == b"\n":
            break
        parts = line.decode("ascii").split()
        if len(parts) != 3:
            raise DataError(f"malformed layout line {line!r}")
        entries.append(LayoutEntry(parts[0], int(parts[1]), int(parts[2])))
    layout = ParamLayout(tuple(entries))
    raw = fh.read(8 * layout.size)
    if len(raw) != 8 * layout.size:
        raise DataError("truncated parameter values")
    return ParamVector(layout, np.frombuffer(raw, dtype="<f8").astype(np.float64))
