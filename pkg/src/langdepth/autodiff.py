"""Reverse-mode automatic differentiation on dense numpy arrays.

A Tensor wraps one ndarray and remembers how it was produced; backward()
walks the tape in reverse topological order and accumulates gradients.
The primitive set is exactly what the depth model needs: elementwise math,
affine layers, SAME-padded square convolution at stride 1 or 2, nearest
upsampling, channel concatenation, spatial tiling, reductions, slicing and
detach. float32 is the training precision, float64 the verification
precision; the two never mix inside one graph.

Every primitive checks its output for NaN/inf and raises NumericError
naming the offending node, so failures surface at the op that produced
them rather than downstream.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, NumericError

_ALLOWED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# Softplus switches to the identity above this input; exp would overflow
# float32 long before the bound matters.
SOFTPLUS_LINEAR_ABOVE = 30.0


def _as_array(data, dtype):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _ALLOWED_DTYPES:
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """One tape node: a value plus the recipe for its gradient."""

    __slots__ = ("data", "grad", "name", "_parents", "_backward")

    def __init__(self, data, name: str = "input", dtype=None):
        self.data = _as_array(data, dtype)
        if not np.isfinite(self.data).all():
            raise NumericError(f"non-finite values in tensor '{name}'")
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None

    @classmethod
    def _from_op(cls, data, name, parents, backward):
        if not np.isfinite(data).all():
            raise NumericError(f"non-finite output at node '{name}'")
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.name = name
        t._parents = parents
        t._backward = backward
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def backward(self) -> None:
        """Seed this scalar with gradient 1 and sweep the tape in reverse.

        Gradients accumulate into .grad of every reachable node; leaves
        behind detach nodes are never reached and keep grad None (zero).
        """
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar seed, got shape {self.data.shape} "
                f"at node '{self.name}'"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; python scalars are lifted to constants of our dtype.
    def __add__(self, other):
        return add(self, _lift(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _lift(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_lift(other, self.dtype)))

    def __rsub__(self, other):
        return add(_lift(other, self.dtype), neg(self))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division is only supported by python scalars")
        return mul(self, _lift(1.0 / float(other), self.dtype))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def detach(self):
        return detach(self)

    def __repr__(self):
        return f"Tensor(name={self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


def _lift(x, dtype, name: str = "const") -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), name=name)


def constant(data, dtype=np.float32, name: str = "const") -> Tensor:
    """Wrap raw data as a graph leaf (gradients accumulate but go unused)."""
    return Tensor(np.asarray(data, dtype=dtype), name=name)


def _check_same_dtype(name, *tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ContractError(
                f"mixed dtypes at node '{name}': {dt} vs {t.data.dtype}"
            )
    return dt


def _accum(t: Tensor, g: np.ndarray) -> None:
    # Copy on first write: closures may hand us views or shared arrays.
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor, name: str = "add") -> Tensor:
    _check_same_dtype(name, a, b)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor._from_op(out_data, name, (a, b), backward)


def mul(a: Tensor, b: Tensor, name: str = "mul") -> Tensor:
    _check_same_dtype(name, a, b)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return Tensor._from_op(out_data, name, (a, b), backward)


def neg(a: Tensor, name: str = "neg") -> Tensor:
    def backward(g):
        _accum(a, -g)

    return Tensor._from_op(-a.data, name, (a,), backward)


def exp(a: Tensor, name: str = "exp") -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return Tensor._from_op(out_data, name, (a,), backward)


def log(a: Tensor, name: str = "log") -> Tensor:
    """Natural log. Non-positive inputs produce the NumericError directly."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return Tensor._from_op(out_data, name, (a,), backward)


def sqrt(a: Tensor, name: str = "sqrt") -> Tensor:
    out_data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g * (0.5 / out_data))

    return Tensor._from_op(out_data, name, (a,), backward)


def softplus(a: Tensor, name: str = "softplus") -> Tensor:
    """log(1 + exp(x)), switching to the identity for x > 30."""
    x = a.data
    big = x > SOFTPLUS_LINEAR_ABOVE
    out_data = np.where(big, x, np.log1p(np.exp(np.minimum(x, SOFTPLUS_LINEAR_ABOVE))))

    def backward(g):
        sig = 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))
        _accum(a, g * np.where(big, np.asarray(1.0, dtype=x.dtype), sig))

    return Tensor._from_op(out_data.astype(x.dtype, copy=False), name, (a,), backward)


def relu(a: Tensor, name: str = "relu") -> Tensor:
    out_data = np.maximum(a.data, 0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return Tensor._from_op(out_data, name, (a,), backward)


def clamp(a: Tensor, lo=None, hi=None, name: str = "clamp") -> Tensor:
    """Clip to [lo, hi]; gradient passes only where the input is inside."""
    if lo is None and hi is None:
        raise ContractError(f"clamp at node '{name}' needs at least one bound")
    out_data = np.clip(a.data, lo, hi)

    def backward(g):
        inside = np.ones_like(a.data, dtype=bool)
        if lo is not None:
            inside &= a.data >= lo
        if hi is not None:
            inside &= a.data <= hi
        _accum(a, g * inside)

    return Tensor._from_op(out_data, name, (a,), backward)


def affine(x: Tensor, w: Tensor, b: Tensor, name: str = "affine") -> Tensor:
    """x @ w + b for x of shape (batch, n) or (n,), w (n, m), b (m,)."""
    _check_same_dtype(name, x, w, b)
    squeeze = x.data.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    if xd.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ContractError(f"bad ranks at node '{name}'")
    if xd.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise ContractError(
            f"shape mismatch at node '{name}': x {x.data.shape}, "
            f"w {w.data.shape}, b {b.data.shape}"
        )
    out_data = xd @ w.data + b.data
    if squeeze:
        out_data = out_data[0]

    def backward(g):
        gd = g[None, :] if squeeze else g
        _accum(x, (gd @ w.data.T)[0] if squeeze else gd @ w.data.T)
        _accum(w, xd.T @ gd)
        _accum(b, gd.sum(axis=0))

    return Tensor._from_op(out_data, name, (x, w, b), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           name: str = "conv2d") -> Tensor:
    """SAME-padded square convolution.

    x is (batch, in_ch, h, w); w is (out_ch, in_ch, k, k) with k in {1, 3};
    stride 1 or 2; zero padding (k-1)//2 on each side so the output spatial
    size is ceil(in/stride).
    """
    if b is None:
        _check_same_dtype(name, x, w)
    else:
        _check_same_dtype(name, x, w, b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ContractError(f"conv2d at node '{name}' needs 4-d x and w")
    kout, kin, kh, kw = w.data.shape
    if kh != kw or kh not in (1, 3):
        raise ContractError(f"unsupported kernel {kh}x{kw} at node '{name}'")
    if kin != x.data.shape[1]:
        raise ContractError(
            f"channel mismatch at node '{name}': x has {x.data.shape[1]}, "
            f"w expects {kin}"
        )
    if stride not in (1, 2):
        raise ContractError(f"unsupported stride {stride} at node '{name}'")
    if b is not None and b.data.shape != (kout,):
        raise ContractError(f"bias shape {b.data.shape} at node '{name}'")

    pad = (kh - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kh), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (batch, in_ch, oh, ow, k, k)
    out_data = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3]))
    out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))
    if b is not None:
        out_data += b.data[None, :, None, None]

    def backward(g):
        if b is not None:
            _accum(b, g.sum(axis=(0, 2, 3)))
        _accum(w, np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])))
        gcols = np.tensordot(g, w.data, axes=([1], [0]))  # (b, oh, ow, c, k, k)
        gxp = np.zeros_like(xp)
        oh, ow = g.shape[2], g.shape[3]
        for i in range(kh):
            for j in range(kh):
                gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        if pad:
            _accum(x, gxp[:, :, pad:-pad, pad:-pad])
        else:
            _accum(x, gxp)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out_data, name, parents, backward)


def upsample2x(x: Tensor, name: str = "upsample2x") -> Tensor:
    """Nearest-neighbour doubling of both spatial axes of (b, c, h, w)."""
    if x.data.ndim != 4:
        raise ContractError(f"upsample2x at node '{name}' needs a 4-d input")
    out_data = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        bsz, ch, h2, w2 = g.shape
        _accum(x, g.reshape(bsz, ch, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)))

    return Tensor._from_op(out_data, name, (x,), backward)


def concat(tensors, axis: int = 1, name: str = "concat") -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ContractError(f"concat at node '{name}' got no inputs")
    _check_same_dtype(name, *tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, stop)
            _accum(t, g[tuple(idx)])

    return Tensor._from_op(out_data, name, tensors, backward)


def tile_to_grid(v: Tensor, h: int, w: int, name: str = "tile_to_grid") -> Tensor:
    """Broadcast a (batch, ch) vector to (batch, ch, h, w)."""
    if v.data.ndim != 2:
        raise ContractError(f"tile_to_grid at node '{name}' needs a 2-d input")
    bsz, ch = v.data.shape
    out_data = np.broadcast_to(v.data[:, :, None, None], (bsz, ch, h, w)).copy()

    def backward(g):
        _accum(v, g.sum(axis=(2, 3)))

    return Tensor._from_op(out_data, name, (v,), backward)


def tsum(x: Tensor, axis=None, keepdims: bool = False, name: str = "sum") -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(gg, x.data.shape))

    return Tensor._from_op(np.asarray(out_data), name, (x,), backward)


def tmean(x: Tensor, axis=None, keepdims: bool = False, name: str = "mean") -> Tensor:
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else x.data.size // np.asarray(out_data).size

    def backward(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(gg, x.data.shape) / count)

    return Tensor._from_op(np.asarray(out_data), name, (x,), backward)


def reshape(x: Tensor, shape, name: str = "reshape") -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(g):
        _accum(x, g.reshape(x.data.shape))

    return Tensor._from_op(out_data, name, (x,), backward)


def narrow(x: Tensor, axis: int, start: int, length: int, name: str = "narrow") -> Tensor:
    """Slice [start, start+length) along one axis."""
    if start < 0 or start + length > x.data.shape[axis]:
        raise ContractError(
            f"narrow at node '{name}' out of range: axis {axis}, "
            f"[{start}, {start + length}) of {x.data.shape[axis]}"
        )
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = x.data[idx].copy()

    def backward(g):
        buf = np.zeros_like(x.data)
        buf[idx] = g
        _accum(x, buf)

    return Tensor._from_op(out_data, name, (x,), backward)


# ---------------------------------------------------------------------------
# detach and the record/replay hook used by finite differencing.
#
# A detach node copies its input's value and has no parents, so backward
# gives its upstream exactly zero. During a gradient check the reference
# forward runs in "record" mode (capturing each detach output in call
# order) and every perturbed re-evaluation runs in "replay" mode, which
# substitutes the recorded values so detached subgraphs stay fixed.


class _DetachState:
    __slots__ = ("mode", "values", "cursor")

    def __init__(self):
        self.mode = None
        self.values = []
        self.cursor = 0


_DETACH = _DetachState()


def detach(x: Tensor, name: str = "detach") -> Tensor:
    st = _DETACH
    if st.mode == "record":
        st.values.append(x.data.copy())
        data = x.data.copy()
    elif st.mode == "replay":
        if st.cursor >= len(st.values):
            raise ContractError("detach replay ran past the recorded tape")
        data = st.values[st.cursor].copy()
        st.cursor += 1
    else:
        data = x.data.copy()
    return Tensor._from_op(data, name, (), None)


@contextmanager
def record_detach():
    """Capture every detach() output of the enclosed forward, in call order."""
    st = _DETACH
    if st.mode is not None:
        raise ContractError("nested detach record/replay is not supported")
    st.mode = "record"
    st.values = []
    try:
        yield st.values
    finally:
        st.mode = None


@contextmanager
def replay_detach(values):
    """Make detach() return the given recorded values, in call order."""
    st = _DETACH
    if st.mode is not None:
        raise ContractError("nested detach record/replay is not supported")
    st.mode = "replay"
    st.values = values
    st.cursor = 0
    try:
        yield
    finally:
        st.mode = None
        st.values = []
        st.cursor = 0
