"""Dense tensor core with tape-based reverse-mode differentiation.

Float32 is the working precision for training and inference; float64 is used
by the gradient-check harness so finite-difference tolerances are meaningful.
Elementwise arithmetic is strict about shapes: there is no implicit
broadcasting anywhere in this library, reshapes and tiles must be explicit.

Reductions and accumulations run in a fixed order, so forward results are
bit-identical across runs and replays of the same tape produce identical
gradients.

Concurrency: forward/backward over one parameter set is single-writer (no
concurrent mutation of Params or an active Tape); pure tensor math on
distinct tensors is safe to run in parallel, and tensors may be handed
between threads freely.
"""

from __future__ import annotations

import struct
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "F32",
    "F64",
    "ShapeError",
    "TapeError",
    "NumericalError",
    "CheckpointFormatError",
    "Tensor",
    "Param",
    "Tape",
    "Module",
    "FlopCounter",
    "KinkProbe",
    "elementwise",
    "add",
    "sub",
    "mul",
    "gelu",
    "reshape",
    "transpose",
    "reduce_sum",
    "backward",
    "zero_grads",
    "save_checkpoint",
    "load_checkpoint",
]

F32 = np.float32
F64 = np.float64
_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class ShapeError(ValueError):
    """Operand shapes (or dtypes) violate an operation's contract."""


class TapeError(RuntimeError):
    """backward() was called with a loss the tape cannot differentiate."""


class NumericalError(RuntimeError):
    """A non-finite value appeared where the pipeline requires finite math."""


class CheckpointFormatError(ValueError):
    """A checkpoint file does not match the DDCNCKPT format."""


# ---------------------------------------------------------------------------
# Value carriers
# ---------------------------------------------------------------------------


class Tensor:
    """Dense N-rank float array, the universal value carrier.

    ``data`` is a row-major numpy array (last axis fastest) of dtype float32
    or float64. Construction validates the carrier invariants: every
    dimension size is at least 1, and every element is finite.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in _SUPPORTED_DTYPES else np.float32
        arr = np.ascontiguousarray(arr, dtype=dtype)
        if arr.dtype not in _SUPPORTED_DTYPES:
            raise ShapeError(f"unsupported dtype {arr.dtype}; expected float32 or float64")
        if any(s < 1 for s in arr.shape):
            raise ShapeError(f"all dimension sizes must be >= 1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericalError("tensor construction requires finite values")
        self.data = arr
        self.grad = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Fast path for op outputs: validation already holds by construction.
        out = object.__new__(cls)
        out.data = arr
        out.grad = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


class Param(Tensor):
    """Named tensor with a paired gradient buffer and a trainability flag.

    The gradient buffer is zero-initialized and accumulated into by
    ``backward``; callers (optimizers) zero it between steps.
    """

    __slots__ = ("name", "trainable")

    def __init__(self, value, name: str = "", trainable: bool = True, dtype=None):
        super().__init__(value, dtype=dtype)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param(name={self.name!r}, shape={self.shape}, trainable={self.trainable})"


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class _TapeEntry:
    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs, output, vjp):
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered record of executed primitives.

    Used as a context manager: primitives executed inside the ``with`` block
    are recorded; ``backward`` replays the record in exact reverse execution
    order. With no active tape, primitives are pure forward computations.
    """

    def __init__(self):
        self._entries: list[_TapeEntry] = []
        self._output_ids: set[int] = set()

    def __len__(self) -> int:
        return len(self._entries)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def record(self, inputs: Sequence[Tensor], output: Tensor, vjp: Callable):
        self._entries.append(_TapeEntry(tuple(inputs), output, vjp))
        self._output_ids.add(id(output))


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(inputs: Sequence[Tensor], output: Tensor, vjp: Callable):
    """Record a primitive on the active tape, if any.

    ``vjp(out_grad)`` must return one gradient array (or None) per input, in
    input order.
    """
    tape = _active_tape()
    if tape is not None:
        tape.record(inputs, output, vjp)


def backward(loss: Tensor, tape: Tape):
    """Accumulate d(loss)/d(leaf) into every leaf tensor reachable on the tape.

    The tape is walked in exact reverse execution order. Leaf tensors (those
    not produced by a taped primitive, i.e. Params and inputs) receive
    accumulated gradients in ``.grad``; intermediate gradients live only for
    the duration of the call, so repeated backward calls add identical
    contributions (callers zero Param grads between optimizer steps).
    """
    if loss.size != 1:
        raise TapeError(f"loss must be a single-element tensor, got shape {loss.shape}")
    if id(loss) not in tape._output_ids:
        raise TapeError("loss was not produced by an operation recorded on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for entry in reversed(tape._entries):
        out_grad = grads.pop(id(entry.output), None)
        if out_grad is None:
            continue
        in_grads = entry.vjp(out_grad)
        for tensor, g in zip(entry.inputs, in_grads):
            if g is None:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                holders[key] = tensor

    for key, g in grads.items():
        if key in tape._output_ids:
            continue
        leaf = holders[key]
        if leaf.grad is None:
            leaf.grad = np.array(g, copy=True)
        else:
            leaf.grad = leaf.grad + g


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad[...] = 0.0


# ---------------------------------------------------------------------------
# Instrumentation: FLOP counting and kink probing
# ---------------------------------------------------------------------------


class FlopCounter:
    """Counts the floating-point cost of every primitive executed in scope.

    Conventions (shared with the analytic profiler): one multiply-accumulate
    is 2 FLOPs, conv bias adds are excluded, elementwise ops cost 1 FLOP per
    output element, GELU costs 8, data movement (reshape/transpose/shuffle)
    costs 0.
    """

    def __init__(self):
        self.flops = 0

    def __enter__(self) -> "FlopCounter":
        _COUNTER_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _COUNTER_STACK.pop()
        return False


_COUNTER_STACK: list[FlopCounter] = []


def add_flops(n: int):
    for counter in _COUNTER_STACK:
        counter.flops += int(n)


class KinkProbe:
    """Collects distances to non-smooth points seen during a forward pass.

    The gradient-check harness uses this to reject instances whose sampling
    coordinates (bilinear lattice crossings) or loss ties (L1 at zero) sit
    too close to a kink for central finite differences to be valid.
    """

    def __init__(self):
        self.margins: dict[str, float] = {}

    def __enter__(self) -> "KinkProbe":
        _PROBE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _PROBE_STACK.pop()
        return False

    def report(self, kind: str, margin: float):
        prev = self.margins.get(kind)
        if prev is None or margin < prev:
            self.margins[kind] = float(margin)


_PROBE_STACK: list[KinkProbe] = []


def probe_kink(kind: str, margin: float):
    for probe in _PROBE_STACK:
        probe.report(kind, margin)


def probing_active() -> bool:
    return bool(_PROBE_STACK)


# ---------------------------------------------------------------------------
# Elementwise primitives
# ---------------------------------------------------------------------------


def _check_binary(op: str, a: Tensor, b: Tensor):
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError(f"{op}: operands must be Tensors")
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: operand shapes differ: {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: operand dtypes differ: {a.data.dtype} vs {b.data.dtype}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b. Shapes must match exactly (no broadcasting)."""
    _check_binary("add", a, b)
    out = Tensor._wrap(a.data + b.data)
    add_flops(out.data.size)
    record((a, b), out, lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a - b. Shapes must match exactly (no broadcasting)."""
    _check_binary("sub", a, b)
    out = Tensor._wrap(a.data - b.data)
    add_flops(out.data.size)
    record((a, b), out, lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise Hadamard product. Shapes must match exactly."""
    _check_binary("mul", a, b)
    out = Tensor._wrap(a.data * b.data)
    add_flops(out.data.size)
    ad, bd = a.data, b.data
    record((a, b), out, lambda g: (g * bd, g * ad))
    return out


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Dispatch an elementwise binary op by name: one of add, sub, mul."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}")
    return fn(a, b)


def gelu(x: Tensor) -> Tensor:
    """GELU activation x * Phi(x), with Phi the exact normal CDF via erf."""
    xd = x.data
    phi = 0.5 * (1.0 + erf(xd * xd.dtype.type(_INV_SQRT2)))
    out = Tensor._wrap(xd * phi)
    add_flops(8 * out.data.size)

    def vjp(g):
        pdf = np.exp(-0.5 * xd * xd) * xd.dtype.type(_INV_SQRT_2PI)
        return (g * (phi + xd * pdf),)

    record((x,), out, vjp)
    return out


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Reinterpret the row-major buffer under a new shape (explicit, checked)."""
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"reshape: all dimension sizes must be >= 1, got {shape}")
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"reshape: cannot view {x.data.shape} as {shape}")
    out = Tensor._wrap(x.data.reshape(shape))
    in_shape = x.data.shape
    record((x,), out, lambda g: (g.reshape(in_shape),))
    return out


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    """Permute axes (materialized contiguous)."""
    axes = tuple(int(a) for a in axes)
    out = Tensor._wrap(np.ascontiguousarray(np.transpose(x.data, axes)))
    inverse = tuple(np.argsort(axes))
    record((x,), out, lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),))
    return out


def reduce_sum(x: Tensor) -> Tensor:
    """Sum all elements into a shape-(1,) tensor."""
    out = Tensor._wrap(np.array([x.data.sum()], dtype=x.data.dtype))
    add_flops(x.data.size)
    shape = x.data.shape
    record((x,), out, lambda g: (np.full(shape, g[0], dtype=g.dtype),))
    return out


# ---------------------------------------------------------------------------
# Module: a composite of Params and sub-Modules
# ---------------------------------------------------------------------------


class Module:
    """Base for layers/models: hierarchical Param discovery by attribute path."""

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for key, val in vars(self).items():
            if isinstance(val, Param):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_params(prefix + key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{prefix}{key}.{i}.")

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def bind_param_names(self):
        """Assign each Param its attribute path as name; names must be unique."""
        seen = set()
        for name, p in self.named_params():
            if name in seen:
                raise ValueError(f"duplicate parameter name {name!r}")
            seen.add(name)
            p.name = name

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params()}

    def load_state(self, state: dict[str, np.ndarray]):
        own = dict(self.named_params())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise CheckpointFormatError(
                f"parameter set mismatch: missing={missing} unexpected={extra}"
            )
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise CheckpointFormatError(
                    f"shape mismatch for {name!r}: checkpoint {arr.shape} vs model {p.data.shape}"
                )
            p.data[...] = arr.astype(p.data.dtype)


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DDCNCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_params):
    """Write params to the DDCNCKPT v1 container.

    Layout: magic "DDCNCKPT", version u32, count u32, then per param:
    name length u32 + UTF-8 name, rank u32, dims u32 each, payload
    little-endian float32 row-major.
    """
    if isinstance(named_params, dict):
        items = list(named_params.items())
    else:
        items = list(named_params)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(items)))
        for name, p in items:
            data = p.data if isinstance(p, Tensor) else np.asarray(p)
            arr = np.ascontiguousarray(data, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            if arr.ndim:
                f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a DDCNCKPT v1 container into a name -> float32 array mapping."""
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", _read_exact(f, 8, "header"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims")) if rank else ()
            n_elem = 1
            for d in dims:
                n_elem *= d
            payload = _read_exact(f, 4 * n_elem, f"payload of {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        return out
