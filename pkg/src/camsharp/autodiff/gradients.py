"""Reverse-mode differentiation that emits ordinary graph nodes.

Because every adjoint is built from registered ops, the nodes returned by
``build_gradient_graph`` can themselves be differentiated again.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ops
from .graph import Graph, Node, ShapeError, UnsupportedOpError, ancestors

Adjoint = Callable[[Node, Node, tuple[bool, ...]], list]


def _expand(g: Node, x: Node, axes) -> Node:
    """Broadcast a reduced adjoint back over the reduced axes of ``x``."""
    kd = tuple(1 if i in axes else s for i, s in enumerate(x.shape))
    if g.shape != kd:
        g = ops.reshape(g, kd)
    return ops.broadcast_to(g, x.shape)


def _inputs(node: Node) -> list[Node]:
    return [Node(node.graph, i) for i in node.record.inputs]


def _add(node, g, need):
    return [g, g]


def _sub(node, g, need):
    return [g, ops.neg(g) if need[1] else None]


def _mul(node, g, need):
    a, b = _inputs(node)
    return [g * b if need[0] else None, g * a if need[1] else None]


def _div(node, g, need):
    _, b = _inputs(node)
    return [g / b if need[0] else None, ops.neg(g * node / b) if need[1] else None]


def _log(node, g, need):
    (x,) = _inputs(node)
    eps = node.record.attrs["eps"]
    return [g / (x + eps) if eps else g / x]


def _sum(node, g, need):
    (x,) = _inputs(node)
    return [_expand(g, x, node.record.attrs["axes"])]


def _mean(node, g, need):
    (x,) = _inputs(node)
    axes = node.record.attrs["axes"]
    count = int(np.prod([x.shape[a] for a in axes]))
    return [ops.scale(_expand(g, x, axes), 1.0 / count)]


def _extremum(which):
    def rule(node, g, need):
        (x,) = _inputs(node)
        axes = node.record.attrs["axes"]
        return [_expand(g, x, axes) * ops.extremum_mask(x, axes, which)]
    return rule


def _matmul(node, g, need):
    a, b = _inputs(node)
    return [
        ops.matmul(g, ops.transpose(b)) if need[0] else None,
        ops.matmul(ops.transpose(a), g) if need[1] else None,
    ]


def _transpose(node, g, need):
    inv = tuple(int(i) for i in np.argsort(node.record.attrs["axes"]))
    return [ops.transpose(g, inv)]


def _slice(node, g, need):
    (x,) = _inputs(node)
    return [ops.unslice(g, node.record.attrs["index"], x.shape)]


def _unslice(node, g, need):
    return [ops.slice_(g, tuple(slice(*s) for s in node.record.attrs["index"]))]


def _conv2d(node, g, need):
    x, w = _inputs(node)
    s, p = node.record.attrs["stride"], node.record.attrs["pads"]
    return [
        ops.conv2d_input_grad(g, w, x.shape, s, p) if need[0] else None,
        ops.conv2d_kernel_grad(x, g, w.shape, s, p) if need[1] else None,
    ]


def _conv2d_input_grad(node, h, need):
    # node = B(g, w), linear in each; <B(g, w), h> = <g, conv(h, w)>
    g, w = _inputs(node)
    s, p = node.record.attrs["stride"], node.record.attrs["pads"]
    return [
        _conv_same_pads(h, w, s, p) if need[0] else None,
        ops.conv2d_kernel_grad(h, g, w.shape, s, p) if need[1] else None,
    ]


def _conv2d_kernel_grad(node, h, need):
    # node = K(x, g); <K(x, g), h> = <g, conv(x, h)> = <x, B(g, h)>
    x, g = _inputs(node)
    s, p = node.record.attrs["stride"], node.record.attrs["pads"]
    return [
        ops.conv2d_input_grad(g, h, x.shape, s, p) if need[0] else None,
        _conv_same_pads(x, h, s, p) if need[1] else None,
    ]


def _conv_same_pads(x: Node, w: Node, stride, pads) -> Node:
    kh, kw = w.shape[2:]
    oh = (x.shape[2] + pads[0] + pads[1] - kh) // stride + 1
    ow = (x.shape[3] + pads[2] + pads[3] - kw) // stride + 1
    attrs = {"stride": stride, "pads": tuple(pads)}
    return x.graph.add("conv2d", (x, w), attrs, (x.shape[0], w.shape[0], oh, ow))


def _gap(node, g, need):
    (x,) = _inputs(node)
    n, c, h, w = x.shape
    return [ops.scale(ops.broadcast_to(ops.reshape(g, (n, c, 1, 1)), x.shape), 1.0 / (h * w))]


def _log_softmax(node, g, need):
    total = ops.broadcast_to(ops.sum(g, axis=-1, keepdims=True), g.shape)
    return [g - ops.exp(node) * total]


def _sce(node, g, need):
    logits, targets = _inputs(node)
    n = logits.shape[0]
    gb = ops.broadcast_to(g, logits.shape)
    ls = ops.log_softmax(logits)
    out = [None, None]
    if need[0]:
        rows = ops.broadcast_to(ops.sum(targets, axis=-1, keepdims=True), logits.shape)
        out[0] = ops.scale(ops.exp(ls) * rows - targets, 1.0 / n) * gb
    if need[1]:
        out[1] = ops.scale(ops.neg(ls), 1.0 / n) * gb
    return out


_ZERO = lambda node, g, need: [None] * len(node.record.inputs)  # noqa: E731

ADJOINTS: dict[str, Adjoint] = {
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "div": _div,
    "neg": lambda node, g, need: [ops.neg(g)],
    "log": _log,
    "exp": lambda node, g, need: [g * node],
    "scale": lambda node, g, need: [ops.scale(g, node.record.attrs["factor"])],
    "relu": lambda node, g, need: [g * ops.step(_inputs(node)[0])],
    "step": _ZERO,
    "extremum_mask": _ZERO,
    "sum": _sum,
    "mean": _mean,
    "max": _extremum("max"),
    "min": _extremum("min"),
    "reshape": lambda node, g, need: [ops.reshape(g, _inputs(node)[0].shape)],
    "transpose": _transpose,
    "broadcast_to": lambda node, g, need: [ops.sum_to(g, _inputs(node)[0].shape)],
    "sum_to": lambda node, g, need: [ops.broadcast_to(g, _inputs(node)[0].shape)],
    "slice": _slice,
    "unslice": _unslice,
    "matmul": _matmul,
    "conv2d": _conv2d,
    "conv2d_input_grad": _conv2d_input_grad,
    "conv2d_kernel_grad": _conv2d_kernel_grad,
    "global_avg_pool": _gap,
    "log_softmax": _log_softmax,
    "softmax_cross_entropy": _sce,
}


def build_gradient_graph(graph: Graph, output: Node, wrt: Sequence[Node]) -> list[Node]:
    """Append nodes computing d(output)/d(w) for each ``w`` in ``wrt``.

    ``output`` must be a scalar (shape () or (1,)). Existing nodes are never
    modified; the returned nodes may be differentiated again.
    """
    if output.shape not in ((), (1,)):
        raise ShapeError(f"gradient output must be scalar, got shape {output.shape}")
    wrt_ids = {w.id for w in wrt}
    anc = sorted(ancestors(graph, [output.id]))

    # nodes on a path from some wrt node to the output
    live: set[int] = set()
    for nid in anc:
        if nid in wrt_ids or any(i in live for i in graph.nodes[nid].inputs):
            live.add(nid)

    contribs: dict[int, list[Node]] = {output.id: [graph.const(np.ones(output.shape))]} if output.id in live else {}
    for nid in reversed(anc):
        parts = contribs.get(nid)
        if not parts:
            continue
        rec = graph.nodes[nid]
        if rec.kind in ("input", "const") or not any(i in live for i in rec.inputs):
            continue
        rule = ADJOINTS.get(rec.kind)
        if rule is None:
            raise UnsupportedOpError(rec.kind)
        g = _accumulate(parts)
        contribs[nid] = [g]
        need = tuple(i in live for i in rec.inputs)
        for inp, gi, ok in zip(rec.inputs, rule(Node(graph, nid), g, need), need):
            if ok and gi is not None:
                contribs.setdefault(inp, []).append(gi)

    out = []
    for w in wrt:
        parts = contribs.get(w.id)
        out.append(_accumulate(parts) if parts else graph.const(np.zeros(w.shape)))
    return out


def _accumulate(parts: list[Node]) -> Node:
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def gradients(output: Node, wrt: Sequence[Node]) -> list[Node]:
    return build_gradient_graph(output.graph, output, wrt)
