"""Dense tensors (rank <= 3, float32) and a reverse-mode differentiation tape.

Tensors are immutable value objects. Every arithmetic helper in this module
works on plain values; when any input lives on a :class:`Tape`, the output is
recorded there together with a backward rule, and :func:`backward` replays the
rules in reverse to produce parameter gradients.

Dot products accumulate in float64 and are cast back to float32 to keep
drift bounded without leaving the 32-bit storage format.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericalError

DTYPE = np.float32

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "matmul",
    "add",
    "scale",
    "mul",
    "relu",
    "sigmoid",
    "sum_all",
    "mean_axis",
    "concat",
    "slice_axis",
    "gather_rows",
    "conv1d_temporal",
    "deconv1d_temporal",
    "record",
    "dump_tensor",
    "load_tensor",
]


class Tensor:
    """An immutable dense array of 32-bit reals, rank 0 through 3."""

    __slots__ = ("data", "tape", "tid")

    def __init__(self, data, tape: Optional["Tape"] = None, tid: Optional[int] = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim > 3:
            raise DimensionError(f"rank {arr.ndim} exceeds the supported maximum of 3")
        if not np.all(np.isfinite(arr)):
            raise NumericalError("non-finite value in tensor")
        if arr is data:
            arr = arr.view()  # freeze a view, not the caller's buffer
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "tape", tape)
        object.__setattr__(self, "tid", tid)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, taped={self.tape is not None})"


class Tape:
    """Records operations so that :func:`backward` can replay them in reverse.

    A tape is single-use: after one backward pass it must be reset (or
    discarded) before recording again.
    """

    def __init__(self):
        self._records: list = []  # (out_id, [input ids or None], grad_fn)
        self._param_ids: dict = {}  # tid -> shape
        self._next_id = 0
        self._consumed = False

    def _fresh_id(self) -> int:
        tid = self._next_id
        self._next_id += 1
        return tid

    def watch(self, data) -> Tensor:
        """Register ``data`` as a trainable parameter and return its tensor."""
        t = Tensor(data, tape=self, tid=self._fresh_id())
        self._param_ids[t.tid] = t.data.shape
        return t

    def reset(self) -> None:
        """Clear all records, parameters and the consumed flag."""
        self._records.clear()
        self._param_ids.clear()
        self._next_id = 0
        self._consumed = False


def record(
    out_data: np.ndarray,
    inputs: Sequence[Tensor],
    grad_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
) -> Tensor:
    """Wrap ``out_data`` in a Tensor, recording ``grad_fn`` if any input is taped.

    ``grad_fn`` receives the upstream gradient and returns one gradient array
    per input (``None`` for inputs that need none).
    """
    tapes = {x.tape for x in inputs if x.tape is not None}
    if len(tapes) > 1:
        raise ContractError("inputs belong to different tapes")
    if not tapes:
        return Tensor(out_data)
    tape = tapes.pop()
    out = Tensor(out_data, tape=tape, tid=tape._fresh_id())
    input_ids = [x.tid if x.tape is tape else None for x in inputs]
    tape._records.append((out.tid, input_ids, grad_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> dict:
    """Gradient of a scalar ``loss`` with respect to every watched parameter.

    Returns a map from parameter id to gradient array; parameters the loss
    does not depend on get exact zeros. A tape supports one backward pass
    until reset.
    """
    if loss.tape is not tape:
        raise ContractError("loss was not produced on this tape")
    if loss.data.ndim != 0:
        raise ContractError("loss must be a scalar")
    if tape._consumed:
        raise ContractError("backward already called on this tape; reset first")
    tape._consumed = True

    grads: dict = {loss.tid: np.ones((), dtype=DTYPE)}
    for out_id, input_ids, grad_fn in reversed(tape._records):
        gout = grads.get(out_id)
        if gout is None:
            continue
        contribs = grad_fn(gout)
        for tid, g in zip(input_ids, contribs):
            if tid is None or g is None:
                continue
            g = np.asarray(g, dtype=DTYPE)
            if tid in grads:
                grads[tid] = grads[tid] + g
            else:
                grads[tid] = g
    return {
        pid: grads.get(pid, np.zeros(shape, dtype=DTYPE))
        for pid, shape in tape._param_ids.items()
    }


# ---------------------------------------------------------------------------
# primitive operations


def _mm64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with float64 accumulation, cast back to float32."""
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(DTYPE)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects rank-2 tensors")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(gout):
        return [_mm64(gout, bd.T), _mm64(ad.T, gout)]

    return record(_mm64(ad, bd), [a, b], grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be rank-1 and broadcast over the last axis."""
    if a.shape == b.shape:
        def grad_fn(gout):
            return [gout, gout]
    elif b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        lead = tuple(range(a.data.ndim - 1))

        def grad_fn(gout):
            return [gout, gout.sum(axis=lead, dtype=np.float64).astype(DTYPE)]
    else:
        raise DimensionError(f"incompatible shapes for add: {a.shape} + {b.shape}")
    return record(a.data + b.data, [a, b], grad_fn)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def grad_fn(gout):
        return [gout * DTYPE(c)]

    return record(x.data * DTYPE(c), [x], grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"elementwise mul needs equal shapes: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(gout):
        return [gout * bd, gout * ad]

    return record(ad * bd, [a, b], grad_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def grad_fn(gout):
        return [np.where(mask, gout, 0).astype(DTYPE)]

    return record(np.where(mask, x.data, 0).astype(DTYPE), [x], grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def grad_fn(gout):
        return [(gout * out * (1.0 - out)).astype(DTYPE)]

    return record(out, [x], grad_fn)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape

    def grad_fn(gout):
        return [np.full(shape, gout, dtype=DTYPE)]

    return record(np.asarray(x.data.sum(dtype=np.float64), dtype=DTYPE), [x], grad_fn)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {x.data.ndim}")
    axis = axis % x.data.ndim
    n = x.shape[axis]

    def grad_fn(gout):
        return [np.repeat(np.expand_dims(gout / n, axis), n, axis=axis).astype(DTYPE)]

    return record(x.data.mean(axis=axis, dtype=np.float64).astype(DTYPE), [x], grad_fn)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not xs:
        raise DimensionError("concat needs at least one input")
    sizes = [x.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(gout):
        sl = [slice(None)] * gout.ndim
        pieces = []
        for i in range(len(sizes)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(gout[tuple(sl)])
        return pieces

    return record(np.concatenate([x.data for x in xs], axis=axis), list(xs), grad_fn)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    shape = x.shape
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def grad_fn(gout):
        gx = np.zeros(shape, dtype=DTYPE)
        gx[sl] = gout
        return [gx]

    return record(x.data[sl], [x], grad_fn)


def gather_rows(x: Tensor, indices: Iterable[int]) -> Tensor:
    """Select rows of a rank-2 tensor by index; duplicates allowed."""
    if x.data.ndim != 2:
        raise DimensionError("gather_rows expects a rank-2 tensor")
    idx = np.asarray(list(indices), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DimensionError("row index out of range")
    shape = x.shape

    def grad_fn(gout):
        gx = np.zeros(shape, dtype=DTYPE)
        np.add.at(gx, idx, gout)
        return [gx]

    return record(x.data[idx], [x], grad_fn)


def conv1d_temporal(x: Tensor, kernel: Tensor, stride: int) -> Tensor:
    """Valid (no-padding) strided 1-D convolution along the leading axis.

    ``x`` is T x d_in, ``kernel`` is k x d_in x d_out; output has
    ceil((T-k+1)/stride) steps.
    """
    if stride < 1:
        raise DimensionError("stride must be positive")
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise DimensionError("conv1d_temporal expects x rank 2 and kernel rank 3")
    t_in, d_in = x.shape
    k, kd_in, d_out = kernel.shape
    if kd_in != d_in:
        raise DimensionError(f"kernel input width {kd_in} != feature width {d_in}")
    if t_in < k:
        raise DimensionError(f"temporal extent {t_in} shorter than kernel {k}")
    n_out = (t_in - k) // stride + 1
    xd = x.data.astype(np.float64)
    kd = kernel.data.astype(np.float64)
    out = np.zeros((n_out, d_out), dtype=np.float64)
    for j in range(k):
        out += xd[j : j + (n_out - 1) * stride + 1 : stride] @ kd[j]

    def grad_fn(gout):
        g64 = gout.astype(np.float64)
        gx = np.zeros((t_in, d_in), dtype=np.float64)
        gk = np.zeros((k, d_in, d_out), dtype=np.float64)
        for j in range(k):
            rows = slice(j, j + (n_out - 1) * stride + 1, stride)
            gx[rows] += g64 @ kd[j].T
            gk[j] = xd[rows].T @ g64
        return [gx.astype(DTYPE), gk.astype(DTYPE)]

    return record(out.astype(DTYPE), [x, kernel], grad_fn)


def deconv1d_temporal(x: Tensor, kernel: Tensor, stride: int) -> Tensor:
    """Transposed 1-D convolution; output has (T-1)*stride + k steps."""
    if stride < 1:
        raise DimensionError("stride must be positive")
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise DimensionError("deconv1d_temporal expects x rank 2 and kernel rank 3")
    t_in, d_in = x.shape
    k, kd_in, d_out = kernel.shape
    if kd_in != d_in:
        raise DimensionError(f"kernel input width {kd_in} != feature width {d_in}")
    t_out = (t_in - 1) * stride + k
    xd = x.data.astype(np.float64)
    kd = kernel.data.astype(np.float64)
    out = np.zeros((t_out, d_out), dtype=np.float64)
    for j in range(k):
        out[j : j + (t_in - 1) * stride + 1 : stride] += xd @ kd[j]

    def grad_fn(gout):
        g64 = gout.astype(np.float64)
        gx = np.zeros((t_in, d_in), dtype=np.float64)
        gk = np.zeros((k, d_in, d_out), dtype=np.float64)
        for j in range(k):
            rows = g64[j : j + (t_in - 1) * stride + 1 : stride]
            gx += rows @ kd[j].T
            gk[j] = xd.T @ rows
        return [gx.astype(DTYPE), gk.astype(DTYPE)]

    return record(out.astype(DTYPE), [x, kernel], grad_fn)


# ---------------------------------------------------------------------------
# serialization: rank then extents as little-endian uint32, then float32 data


def dump_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=DTYPE)
    fh.write(struct.pack("<I", arr.ndim))
    for ext in arr.shape:
        fh.write(struct.pack("<I", ext))
    fh.write(arr.astype("<f4").tobytes(order="C"))


def load_tensor(fh: BinaryIO) -> np.ndarray:
    raw = fh.read(4)
    if len(raw) != 4:
        raise ValueError("truncated tensor header")
    (rank,) = struct.unpack("<I", raw)
    if rank > 3:
        raise DimensionError(f"serialized rank {rank} exceeds 3")
    shape = []
    for _ in range(rank):
        (ext,) = struct.unpack("<I", fh.read(4))
        shape.append(ext)
    count = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(fh.read(4 * count), dtype="<f4", count=count)
    return data.reshape(shape).astype(DTYPE)
