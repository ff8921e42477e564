"""Static computation graph, node handles and forward evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

DTYPE = np.float64


class GraphError(Exception):
    """Base class for engine errors."""


class ShapeError(GraphError):
    pass


class UnboundInputError(GraphError):
    pass


class NonFiniteError(GraphError):
    def __init__(self, node_id: int, kind: str):
        super().__init__(f"non-finite value produced by node {node_id} ({kind})")
        self.node_id = node_id
        self.kind = kind


class DomainError(GraphError):
    pass


class UnsupportedOpError(GraphError):
    def __init__(self, kind: str):
        super().__init__(f"unsupported operation kind: {kind!r}")
        self.kind = kind


@dataclass(frozen=True)
class Tensor:
    """Immutable float64 value, optionally tagged with the node that produced it."""

    data: np.ndarray
    node: int | None = None

    def __post_init__(self):
        arr = np.array(self.data, dtype=DTYPE, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def elements(self) -> np.ndarray:
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])


@dataclass(frozen=True)
class _Record:
    kind: str
    inputs: tuple[int, ...]
    attrs: Mapping[str, Any]
    shape: tuple[int, ...]


@dataclass
class Graph:
    """Append-only node list. Inputs of a node always precede it."""

    nodes: list[_Record] = field(default_factory=list)
    values: dict[int, np.ndarray] = field(default_factory=dict)
    _bindings: dict[int, np.ndarray] = field(default_factory=dict)
    _plans: dict[tuple[int, ...], list[int]] = field(default_factory=dict)

    def add(self, kind: str, inputs: Sequence["Node"] = (), attrs: Mapping[str, Any] | None = None,
            shape: Sequence[int] = ()) -> "Node":
        ids = []
        for x in inputs:
            if x.graph is not self:
                raise GraphError("cannot mix nodes from different graphs")
            ids.append(x.id)
        rec = _Record(kind, tuple(ids), dict(attrs or {}), tuple(int(s) for s in shape))
        self.nodes.append(rec)
        return Node(self, len(self.nodes) - 1)

    def input(self, shape: Sequence[int], name: str | None = None) -> "Node":
        if any(int(s) <= 0 for s in shape):
            raise ShapeError(f"input dimensions must be positive, got {tuple(shape)}")
        return self.add("input", (), {"name": name}, shape)

    def const(self, value) -> "Node":
        arr = np.array(value, dtype=DTYPE)
        arr.setflags(write=False)
        return self.add("const", (), {"value": arr}, arr.shape)

    def node(self, node_id: int) -> "Node":
        return Node(self, node_id)

    def __len__(self):
        return len(self.nodes)

    def bind(self, inputs: Mapping[Any, Any]) -> None:
        """Bind leaf values; cached results are dropped only if a binding changed."""
        changed = False
        for key, value in inputs.items():
            nid = key.id if isinstance(key, Node) else int(key)
            rec = self.nodes[nid]
            if rec.kind != "input":
                raise GraphError(f"node {nid} ({rec.kind}) is not an input")
            arr = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=DTYPE)
            if arr.shape != rec.shape:
                raise ShapeError(f"input {rec.attrs.get('name') or nid}: expected shape {rec.shape}, got {arr.shape}")
            prev = self._bindings.get(nid)
            if prev is not None and (prev is arr or np.array_equal(prev, arr)):
                continue
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(nid, "input")
            self._bindings[nid] = np.array(arr, dtype=DTYPE)
            changed = True
        if changed:
            self.values = {k: v for k, v in self.values.items() if self.nodes[k].kind == "const"}

    def _plan(self, outputs: tuple[int, ...]) -> list[int]:
        plan = self._plans.get(outputs)
        if plan is None:
            plan = sorted(ancestors(self, outputs))
            self._plans[outputs] = plan
        return plan

    def evaluate(self, outputs: Iterable["Node"]) -> list[np.ndarray]:
        from .ops import FORWARD

        out_ids = tuple(n.id for n in outputs)
        vals = self.values
        for nid in self._plan(out_ids):
            if nid in vals:
                continue
            rec = self.nodes[nid]
            if rec.kind == "input":
                if nid not in self._bindings:
                    raise UnboundInputError(f"input {rec.attrs.get('name') or nid} is not bound")
                vals[nid] = self._bindings[nid]
                continue
            if rec.kind == "const":
                vals[nid] = rec.attrs["value"]
                continue
            fn = FORWARD.get(rec.kind)
            if fn is None:
                raise UnsupportedOpError(rec.kind)
            # non-finite results are reported below as NonFiniteError
            with np.errstate(all="ignore"):
                out = fn(rec.attrs, *[vals[i] for i in rec.inputs])
            if not np.all(np.isfinite(out)):
                raise NonFiniteError(nid, rec.kind)
            if isinstance(out, np.ndarray):
                out.setflags(write=False)
            vals[nid] = out
        return [vals[i] for i in out_ids]


def ancestors(graph: Graph, roots: Iterable[int]) -> set[int]:
    seen: set[int] = set()
    stack = list(roots)
    while stack:
        nid = stack.pop()
        if nid in seen:
            continue
        seen.add(nid)
        stack.extend(graph.nodes[nid].inputs)
    return seen


class Node:
    """Handle on one graph node; arithmetic operators build new nodes."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def record(self) -> _Record:
        return self.graph.nodes[self.id]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.graph.nodes[self.id].shape

    @property
    def kind(self) -> str:
        return self.graph.nodes[self.id].kind

    @property
    def ndim(self) -> int:
        return len(self.shape)

    def __repr__(self):
        return f"Node({self.id}, {self.kind}, shape={self.shape})"

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def eval_forward(graph: Graph, outputs: Sequence[Node], inputs: Mapping[Any, Any] | None = None) -> list[Tensor]:
    """Evaluate ``outputs`` after binding ``inputs`` (placeholder -> value)."""
    if inputs:
        graph.bind(inputs)
    return [Tensor(v, n.id) for v, n in zip(graph.evaluate(outputs), outputs)]
