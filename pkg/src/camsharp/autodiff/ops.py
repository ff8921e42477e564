"""Graph builders and forward kernels for the closed op set.

Public ops: add, sub, mul, div, neg, log, exp, sum, mean, max, min, relu,
matmul, conv2d, global_avg_pool, reshape, slice_, softmax_cross_entropy.

The remaining kinds (scale, step, extremum_mask, transpose, broadcast_to,
sum_to, unslice, conv2d_input_grad, conv2d_kernel_grad, log_softmax) exist so
that every adjoint can itself be expressed as graph nodes.
"""

from __future__ import annotations

import builtins
from typing import Sequence

import numpy as np

from . import conv as _conv
from .graph import DTYPE, DomainError, Graph, Node, ShapeError


def _graph_of(*xs) -> Graph:
    for x in xs:
        if isinstance(x, Node):
            return x.graph
    raise TypeError("at least one operand must be a graph Node")


def as_node(x, graph: Graph) -> Node:
    if isinstance(x, Node):
        return x
    return graph.const(x)


def _axes(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for a in axis:
        if not -ndim <= a < ndim:
            raise ShapeError(f"axis {a} out of range for rank {ndim}")
        out.append(a % ndim)
    return tuple(sorted(set(out)))


def _reduced_shape(shape, axes, keepdims):
    if keepdims:
        return tuple(1 if i in axes else s for i, s in enumerate(shape))
    return tuple(s for i, s in enumerate(shape) if i not in axes)


# -- elementwise -----------------------------------------------------------

def _binary(kind, a, b):
    g = _graph_of(a, b)
    a, b = as_node(a, g), as_node(b, g)
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None
    if a.shape != shape:
        a = broadcast_to(a, shape)
    if b.shape != shape:
        b = broadcast_to(b, shape)
    return g.add(kind, (a, b), None, shape)


def add(a, b) -> Node:
    return _binary("add", a, b)


def sub(a, b) -> Node:
    return _binary("sub", a, b)


def mul(a, b) -> Node:
    return _binary("mul", a, b)


def div(a, b) -> Node:
    return _binary("div", a, b)


def neg(x: Node) -> Node:
    return x.graph.add("neg", (x,), None, x.shape)


def log(x: Node, eps: float = 0.0) -> Node:
    """Natural log; with ``eps > 0`` evaluates log(x + eps) (safe-log)."""
    return x.graph.add("log", (x,), {"eps": float(eps)}, x.shape)


def exp(x: Node) -> Node:
    return x.graph.add("exp", (x,), None, x.shape)


def scale(x: Node, factor: float) -> Node:
    return x.graph.add("scale", (x,), {"factor": float(factor)}, x.shape)


def relu(x: Node) -> Node:
    return x.graph.add("relu", (x,), None, x.shape)


def step(x: Node) -> Node:
    """Indicator of x > 0 (so the relu subgradient at 0 is 0)."""
    return x.graph.add("step", (x,), None, x.shape)


# -- reductions ------------------------------------------------------------

def sum(x: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    axes = _axes(axis, x.ndim)
    return x.graph.add("sum", (x,), {"axes": axes, "keepdims": keepdims},
                       _reduced_shape(x.shape, axes, keepdims))


def mean(x: Node, axis=None, keepdims: bool = False) -> Node:
    axes = _axes(axis, x.ndim)
    return x.graph.add("mean", (x,), {"axes": axes, "keepdims": keepdims},
                       _reduced_shape(x.shape, axes, keepdims))


def max(x: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    axes = _axes(axis, x.ndim)
    return x.graph.add("max", (x,), {"axes": axes, "keepdims": keepdims},
                       _reduced_shape(x.shape, axes, keepdims))


def min(x: Node, axis=None, keepdims: bool = False) -> Node:  # noqa: A001
    axes = _axes(axis, x.ndim)
    return x.graph.add("min", (x,), {"axes": axes, "keepdims": keepdims},
                       _reduced_shape(x.shape, axes, keepdims))


def extremum_mask(x: Node, axes: tuple[int, ...], which: str) -> Node:
    """Indicator of the arg-extremum positions, split evenly between ties."""
    return x.graph.add("extremum_mask", (x,), {"axes": axes, "which": which}, x.shape)


# -- shape manipulation ----------------------------------------------------

def reshape(x: Node, shape: Sequence[int]) -> Node:
    shape = tuple(int(s) for s in shape)
    if -1 in shape:
        known = int(np.prod([s for s in shape if s != -1]))
        shape = tuple(int(np.prod(x.shape)) // known if s == -1 else s for s in shape)
    if int(np.prod(shape)) != int(np.prod(x.shape)):
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    return x.graph.add("reshape", (x,), {"shape": shape}, shape)


def transpose(x: Node, axes: Sequence[int] | None = None) -> Node:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for rank {x.ndim}")
    return x.graph.add("transpose", (x,), {"axes": axes}, tuple(x.shape[a] for a in axes))


def _fits(src, dst) -> bool:
    try:
        return np.broadcast_shapes(src, dst) == tuple(dst)
    except ValueError:
        return False


def broadcast_to(x: Node, shape: Sequence[int]) -> Node:
    shape = tuple(shape)
    if not _fits(x.shape, shape):
        raise ShapeError(f"cannot broadcast {x.shape} to {shape}")
    return x.graph.add("broadcast_to", (x,), {"shape": shape}, shape)


def sum_to(x: Node, shape: Sequence[int]) -> Node:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcast_to)."""
    shape = tuple(shape)
    if not _fits(shape, x.shape):
        raise ShapeError(f"cannot sum {x.shape} down to {shape}")
    return x.graph.add("sum_to", (x,), {"shape": shape}, shape)


def _norm_index(index, shape):
    if not isinstance(index, tuple):
        index = (index,)
    if len(index) > len(shape):
        raise ShapeError(f"too many indices for shape {shape}")
    index = index + (builtins.slice(None),) * (len(shape) - len(index))
    norm, drop = [], []
    for ax, (ix, dim) in enumerate(zip(index, shape)):
        if isinstance(ix, (int, np.integer)):
            i = int(ix) + dim if ix < 0 else int(ix)
            if not 0 <= i < dim:
                raise ShapeError(f"index {ix} out of range for axis {ax} of size {dim}")
            norm.append((i, i + 1, 1))
            drop.append(ax)
        elif isinstance(ix, builtins.slice):
            if ix.step is not None and ix.step < 1:
                raise ShapeError("only positive slice steps are supported")
            norm.append(ix.indices(dim))
        else:
            raise TypeError(f"unsupported index {ix!r}")
    return tuple(norm), drop


def slice_(x: Node, index) -> Node:
    """Basic slicing; integer indices drop their axis."""
    norm, drop = _norm_index(index, x.shape)
    shape = tuple(len(range(*s)) for s in norm)
    if any(s == 0 for s in shape):
        raise ShapeError(f"empty slice {index} of shape {x.shape}")
    out = x.graph.add("slice", (x,), {"index": norm}, shape)
    if drop:
        out = reshape(out, [s for i, s in enumerate(shape) if i not in drop])
    return out


def unslice(x: Node, index: tuple, shape: Sequence[int]) -> Node:
    """Embed ``x`` at ``index`` inside zeros of ``shape`` (the adjoint of slice)."""
    return x.graph.add("unslice", (x,), {"index": index, "shape": tuple(shape)}, tuple(shape))


Node.__getitem__ = lambda self, index: slice_(self, index)


# -- linear algebra / convolution ------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    g = _graph_of(a, b)
    a, b = as_node(a, g), as_node(b, g)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return g.add("matmul", (a, b), None, (a.shape[0], b.shape[1]))


def conv2d(x: Node, w: Node, stride: int = 1, padding: str = "valid") -> Node:
    """Cross-correlation of NCHW input with an OIHW kernel."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OIHW kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels, kernel expects {w.shape[1]}")
    if stride < 1:
        raise ShapeError(f"stride must be positive, got {stride}")
    try:
        pt, pb, oh = _conv.resolve_padding(x.shape[2], w.shape[2], stride, padding)
        pl, pr, ow = _conv.resolve_padding(x.shape[3], w.shape[3], stride, padding)
    except ValueError as e:
        raise ShapeError(str(e)) from None
    attrs = {"stride": int(stride), "pads": (pt, pb, pl, pr)}
    return x.graph.add("conv2d", (x, w), attrs, (x.shape[0], w.shape[0], oh, ow))


def _conv_out(x_shape, w_shape, stride, pads) -> tuple[int, int, int, int]:
    pt, pb, pl, pr = pads
    oh = (x_shape[2] + pt + pb - w_shape[2]) // stride + 1
    ow = (x_shape[3] + pl + pr - w_shape[3]) // stride + 1
    return (x_shape[0], w_shape[0], oh, ow)


def conv2d_input_grad(g: Node, w: Node, x_shape, stride: int, pads) -> Node:
    if g.shape != _conv_out(x_shape, w.shape, stride, pads) or x_shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d_input_grad: gradient {g.shape} inconsistent with input {tuple(x_shape)}")
    attrs = {"stride": stride, "pads": tuple(pads), "x_shape": tuple(x_shape)}
    return g.graph.add("conv2d_input_grad", (g, w), attrs, tuple(x_shape))


def conv2d_kernel_grad(x: Node, g: Node, w_shape, stride: int, pads) -> Node:
    if g.shape != _conv_out(x.shape, w_shape, stride, pads) or x.shape[1] != w_shape[1]:
        raise ShapeError(f"conv2d_kernel_grad: gradient {g.shape} inconsistent with kernel {tuple(w_shape)}")
    attrs = {"stride": stride, "pads": tuple(pads), "w_shape": tuple(w_shape)}
    return x.graph.add("conv2d_kernel_grad", (x, g), attrs, tuple(w_shape))


def global_avg_pool(x: Node) -> Node:
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {x.shape}")
    return x.graph.add("global_avg_pool", (x,), None, x.shape[:2])


# -- softmax / loss --------------------------------------------------------

def log_softmax(x: Node) -> Node:
    """Log-softmax over the last axis."""
    return x.graph.add("log_softmax", (x,), None, x.shape)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be a 1-D array of class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    out = np.zeros((labels.size, n_classes), dtype=DTYPE)
    out[np.arange(labels.size), labels] = 1.0
    return out


def softmax_cross_entropy(logits: Node, labels) -> Node:
    """Batch-mean cross-entropy; ``labels`` is an index array or an (N, C) target node."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (N, C), got {logits.shape}")
    if not isinstance(labels, Node):
        labels = logits.graph.const(one_hot(labels, logits.shape[1]))
    if labels.shape != logits.shape:
        raise ShapeError(f"targets {labels.shape} do not match logits {logits.shape}")
    return logits.graph.add("softmax_cross_entropy", (logits, labels), None, ())


# -- forward kernels -------------------------------------------------------

def _log(attrs, x):
    eps = attrs["eps"]
    if eps == 0.0 and np.any(x <= 0):
        raise DomainError("log of non-positive value (use eps for safe-log)")
    return np.log(x + eps) if eps else np.log(x)


def _red(fn):
    def kernel(attrs, x):
        return np.asarray(fn(x, axis=attrs["axes"], keepdims=attrs["keepdims"]), dtype=DTYPE)
    return kernel


def _extremum_mask(attrs, x):
    ref = (np.max if attrs["which"] == "max" else np.min)(x, axis=attrs["axes"], keepdims=True)
    hit = (x == ref).astype(DTYPE)
    return hit / np.sum(hit, axis=attrs["axes"], keepdims=True)


def _sum_to(attrs, x):
    shape = attrs["shape"]
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(lead + i for i, s in enumerate(shape) if s == 1 and x.shape[lead + i] != 1)
    return np.sum(x, axis=axes, keepdims=True).reshape(shape) if axes else x.reshape(shape)


def _slice(attrs, x):
    return x[tuple(builtins.slice(*s) for s in attrs["index"])]


def _unslice(attrs, x):
    out = np.zeros(attrs["shape"], dtype=DTYPE)
    out[tuple(builtins.slice(*s) for s in attrs["index"])] = x
    return out


def _log_softmax(attrs, x):
    m = np.max(x, axis=-1, keepdims=True)
    z = x - m
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def _sce(attrs, logits, targets):
    return np.asarray(-np.sum(targets * _log_softmax(None, logits)) / logits.shape[0])


FORWARD = {
    "add": lambda a, x, y: x + y,
    "sub": lambda a, x, y: x - y,
    "mul": lambda a, x, y: x * y,
    "div": lambda a, x, y: x / y,
    "neg": lambda a, x: -x,
    "log": _log,
    "exp": lambda a, x: np.exp(x),
    "scale": lambda a, x: x * a["factor"],
    "relu": lambda a, x: np.maximum(x, 0.0),
    "step": lambda a, x: (x > 0).astype(DTYPE),
    "sum": _red(np.sum),
    "mean": _red(np.mean),
    "max": _red(np.max),
    "min": _red(np.min),
    "extremum_mask": _extremum_mask,
    "reshape": lambda a, x: x.reshape(a["shape"]),
    "transpose": lambda a, x: np.transpose(x, a["axes"]),
    "broadcast_to": lambda a, x: np.broadcast_to(x, a["shape"]),
    "sum_to": _sum_to,
    "slice": _slice,
    "unslice": _unslice,
    "matmul": lambda a, x, y: x @ y,
    "conv2d": lambda a, x, w: _conv.conv2d_forward(x, w, a["stride"], a["pads"]),
    "conv2d_input_grad": lambda a, g, w: _conv.conv2d_input_grad(g, w, a["x_shape"], a["stride"], a["pads"]),
    "conv2d_kernel_grad": lambda a, x, g: _conv.conv2d_kernel_grad(x, g, a["w_shape"], a["stride"], a["pads"]),
    "global_avg_pool": lambda a, x: x.mean(axis=(2, 3)),
    "log_softmax": _log_softmax,
    "softmax_cross_entropy": _sce,
}
