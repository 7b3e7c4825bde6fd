"""Small reverse-mode autodiff engine covering exactly what a UNet needs.

Tensors are NCHW numpy arrays (float32 by default; float64 input gives a
float64 graph, which the gradient checks rely on). Every op checks its
output for NaN/Inf and raises :class:`NumericalError` naming itself.

Checkpoint format (``.nncp``, little-endian)::

    b"NNCP" | u32 version | u32 count |
    count x ( u32 name_len | name utf-8 | u32 ndim | u32[ndim] shape | f32[prod(shape)] )
"""
from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "AdamState",
    "NumericalError",
    "ShapeError",
    "no_grad",
    "conv2d",
    "maxpool2",
    "upsample_nearest2",
    "relu",
    "concat_channels",
    "mse_loss",
    "backward",
    "zero_grads",
    "adam_step",
    "he_normal",
    "save_checkpoint",
    "read_checkpoint",
    "load_checkpoint",
]

_state = {"grad_enabled": True}


class NumericalError(FloatingPointError):
    def __init__(self, op):
        super().__init__(f"non-finite values produced by {op}")
        self.op = op


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph (inference, validation)."""
    prev = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            dtype = data.dtype if isinstance(data, np.ndarray) and data.dtype == np.float64 else np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn, op):
    if not np.isfinite(data).all():
        raise NumericalError(op)
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if _state["grad_enabled"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
    return out


def conv2d(x, weight, bias):
    """3x3 cross-correlation, stride 1, zero padding 1, plus per-channel bias.

    The padded input is flattened so each of the nine taps becomes one
    matmul against a shifted contiguous slice.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got shape {x.shape}")
    n, c, h, w = x.shape
    if weight.data.ndim != 4 or weight.shape[1:] != (c, 3, 3):
        raise ShapeError(f"conv2d weight shape {weight.shape} incompatible with input shape {x.shape}")
    co = weight.shape[0]
    if bias.shape != (co,):
        raise ShapeError(f"conv2d bias shape {bias.shape} does not match {co} output channels")
    dtype = x.data.dtype
    hp, wp = h + 2, w + 2
    length = n * hp * wp
    tail = 2 * wp + 2
    xp = np.zeros((c, length + tail), dtype=dtype)
    xp[:, :length].reshape(c, n, hp, wp)[:, :, 1:-1, 1:-1] = x.data.transpose(1, 0, 2, 3)
    taps = np.ascontiguousarray(weight.data.transpose(2, 3, 0, 1), dtype=dtype)
    offsets = [ky * wp + kx for ky in range(3) for kx in range(3)]

    y = taps[0, 0] @ xp[:, :length]
    for k in range(1, 9):
        y += taps[k // 3, k % 3] @ xp[:, offsets[k]:offsets[k] + length]
    out = y.reshape(co, n, hp, wp)[:, :, :h, :w] + bias.data.astype(dtype)[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))

    def backward_fn(g):
        dy = np.zeros((co, length), dtype=dtype)
        dy.reshape(co, n, hp, wp)[:, :, :h, :w] = g.transpose(1, 0, 2, 3)
        dx = dw = db = None
        if weight.requires_grad:
            dtaps = np.empty((3, 3, co, c), dtype=dtype)
            for k in range(9):
                dtaps[k // 3, k % 3] = dy @ xp[:, offsets[k]:offsets[k] + length].T
            dw = dtaps.transpose(2, 3, 0, 1)
        if x.requires_grad:
            dxp = np.zeros((c, length + tail), dtype=dtype)
            for k in range(9):
                dxp[:, offsets[k]:offsets[k] + length] += taps[k // 3, k % 3].T @ dy
            dx = dxp[:, :length].reshape(c, n, hp, wp)[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3)
        if bias.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        return dx, dw, db

    return _result(out, (x, weight, bias), backward_fn, "conv2d")


def maxpool2(x):
    """2x2 max pool, stride 2. Ties route the gradient to the first cell in row-major order."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    windows = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        gw = np.zeros(windows.shape, dtype=g.dtype)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gw,)

    return _result(np.ascontiguousarray(out), (x,), backward_fn, "maxpool2")


def upsample_nearest2(x):
    x = _as_tensor(x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward_fn(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _result(out, (x,), backward_fn, "upsample_nearest2")


def relu(x):
    """max(0, x); the subgradient at exactly 0 is taken as 0."""
    x = _as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.data.dtype)

    def backward_fn(g):
        return (g * mask,)

    return _result(out, (x,), backward_fn, "relu")


def concat_channels(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError(f"concat_channels needs NCHW tensors, got {a.shape} and {b.shape}")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeError(f"concat_channels shape mismatch: {a.shape} vs {b.shape}")
    c1 = a.shape[1]
    out = np.concatenate([a.data, b.data.astype(a.data.dtype)], axis=1)

    def backward_fn(g):
        return g[:, :c1], g[:, c1:]

    return _result(out, (a, b), backward_fn, "concat_channels")


def mse_loss(pred, target):
    """Mean of squared differences over every element; returns a 0-d tensor."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data.astype(pred.data.dtype)
    size = diff.size
    loss = np.asarray(np.mean(np.square(diff, dtype=np.float64)), dtype=pred.data.dtype)

    def backward_fn(g):
        d = (2.0 / size) * g * diff
        return d, -d

    return _result(loss, (pred, target), backward_fn, "mse_loss")


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it.

    Repeated calls add up; clear with :func:`zero_grads`.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype).reshape(parent.shape)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


@dataclass
class Parameter:
    name: str
    tensor: Tensor

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad


def zero_grads(params):
    for p in params:
        p.tensor.grad = None


def he_normal(rng, c_out, c_in, dtype=np.float32):
    std = np.sqrt(2.0 / (c_in * 9))
    return (rng.standard_normal((c_out, c_in, 3, 3)) * std).astype(dtype)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state: AdamState):
    """One bias-corrected Adam update of every parameter in place."""
    for p in params:
        if p.tensor.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.tensor.grad.astype(np.float64)
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros(p.data.shape)
            v = np.zeros(p.data.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[p.name], state.v[p.name] = m, v
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.tensor.data = (p.data - step).astype(p.data.dtype)


NNCP_MAGIC = b"NNCP"
NNCP_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(params, path):
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise CheckpointError("parameter names are not unique")
    chunks = [struct.pack("<4sII", NNCP_MAGIC, NNCP_VERSION, len(params))]
    for p in params:
        name = p.name.encode("utf-8")
        shape = p.data.shape
        chunks.append(struct.pack(f"<I{len(name)}sI{len(shape)}I", len(name), name, len(shape), *shape))
        chunks.append(p.data.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path):
    """Return ``{name: float32 array}`` in file order."""
    raw = Path(path).read_bytes()
    try:
        magic, version, count = struct.unpack_from("<4sII", raw, 0)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if magic != NNCP_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != NNCP_VERSION:
        raise CheckpointError(f"{path}: unsupported NNCP version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if off + 4 * size > len(raw):
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(raw, "<f4", size, off).reshape(shape).astype(np.float32)
            off += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated record") from exc
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return out


def load_checkpoint(path, params):
    """Copy checkpoint values into ``params``; names and shapes must match exactly."""
    stored = read_checkpoint(path)
    expected = [p.name for p in params]
    if list(stored) != expected:
        raise CheckpointError(f"{path}: parameter names differ from the model's")
    for p in params:
        if stored[p.name].shape != p.data.shape:
            raise CheckpointError(
                f"{path}: shape {stored[p.name].shape} for {p.name!r}, model expects {p.data.shape}"
            )
        p.tensor.data = stored[p.name].astype(p.data.dtype)
