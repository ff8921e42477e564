"""Small strided-conv classifier exposing a GradCAM target layer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Graph, Node, ShapeError, ops


@dataclass(frozen=True)
class ConvBlock:
    channels: int
    kernel: int = 3
    stride: int = 2


@dataclass(frozen=True)
class Architecture:
    """Conv blocks (conv + bias + relu, "same" padding) followed by dense layers.

    ``head`` joins the two stacks: "gap" global-average-pools the last conv
    output, "flatten" feeds every spatial position to the first dense layer.
    The last dense size is the number of classes; every dense layer but the
    last is followed by relu.
    """

    input_shape: tuple[int, int, int] = (1, 32, 32)
    conv: tuple[ConvBlock, ...] = (ConvBlock(8), ConvBlock(16), ConvBlock(32))
    dense: tuple[int, ...] = (64, 4)
    head: str = "gap"
    dense_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "conv", tuple(b if isinstance(b, ConvBlock) else ConvBlock(*b) for b in self.conv))
        object.__setattr__(self, "dense", tuple(int(d) for d in self.dense))
        if not self.conv or not self.dense:
            raise ValueError("architecture needs at least one conv block and one dense layer")
        if len(self.input_shape) != 3 or min(self.input_shape) <= 0:
            raise ValueError(f"input_shape must be three positive ints, got {self.input_shape}")
        for b in self.conv:
            if min(b.channels, b.kernel, b.stride) <= 0:
                raise ValueError(f"non-positive conv block dimension: {b}")
        if min(self.dense) <= 0:
            raise ValueError(f"non-positive dense size: {self.dense}")
        if self.head not in ("gap", "flatten"):
            raise ValueError(f"head must be 'gap' or 'flatten', got {self.head!r}")

    @property
    def n_classes(self) -> int:
        return self.dense[-1]

    def conv_output_shapes(self) -> list[tuple[int, int, int]]:
        c, h, w = self.input_shape
        shapes = []
        for b in self.conv:
            h, w = -(-h // b.stride), -(-w // b.stride)
            shapes.append((b.channels, h, w))
        return shapes

    def param_shapes(self) -> list[tuple[str, tuple[int, ...], int]]:
        """(name, shape, layer index) for every parameter, in canonical order."""
        out = []
        c_in = self.input_shape[0]
        for i, b in enumerate(self.conv):
            out.append((f"conv{i}.kernel", (b.channels, c_in, b.kernel, b.kernel), i))
            out.append((f"conv{i}.bias", (b.channels,), i))
            c_in = b.channels
        c, h, w = self.conv_output_shapes()[-1]
        fan_in = c if self.head == "gap" else c * h * w
        for j, d in enumerate(self.dense):
            layer = len(self.conv) + j
            out.append((f"dense{j}.weight", (fan_in, d), layer))
            if self.dense_bias:
                out.append((f"dense{j}.bias", (d,), layer))
            fan_in = d
        return out

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for _, s, _ in self.param_shapes())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv"] = [[b["channels"], b["kernel"], b["stride"]] for b in d["conv"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(tuple(d["input_shape"]), tuple(ConvBlock(*b) for b in d["conv"]), tuple(d["dense"]),
                   d.get("head", "gap"), d.get("dense_bias", True))

    @classmethod
    def default(cls, n_classes: int = 4, image_size: int = 32, channels: int = 1,
                head: str = "gap") -> "Architecture":
        return cls((channels, image_size, image_size), (ConvBlock(8), ConvBlock(16), ConvBlock(32)),
                   (64, n_classes), head)


@dataclass
class ModelParams:
    arch: Architecture
    seed: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    layers: dict[str, int] = field(default_factory=dict)

    def names(self) -> list[str]:
        return list(self.tensors)

    def count(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.seed, {k: v.copy() for k, v in self.tensors.items()}, dict(self.layers))

    def replace(self, tensors: dict[str, np.ndarray]) -> "ModelParams":
        return ModelParams(self.arch, self.seed, dict(tensors), dict(self.layers))


def init_params(arch: Architecture, seed: int) -> ModelParams:
    """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    tensors, layers = {}, {}
    for name, shape, layer in arch.param_shapes():
        if name.endswith("bias"):
            tensors[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
            limit = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        layers[name] = layer
    return ModelParams(arch, seed, tensors, layers)


@dataclass
class ForwardTrace:
    """Symbolic forward pass for a fixed batch size.

    ``logits`` is pre-softmax (N, C); ``activations`` is the target conv
    layer's post-relu output (N, K, h, w). Parameters and images are graph
    inputs, so a trace is built once and re-bound for every batch.
    """

    graph: Graph
    images: Node
    params: dict[str, Node]
    logits: Node
    activations: Node
    target_layer: int
    arch: Architecture

    @property
    def batch_size(self) -> int:
        return self.images.shape[0]

    def bind(self, params: ModelParams, images) -> None:
        images = np.asarray(images, dtype=np.float64)
        if images.shape != self.images.shape:
            raise ShapeError(f"images: expected shape {self.images.shape}, got {images.shape}")
        binding = {self.images: images}
        for name, node in self.params.items():
            binding[node] = params.tensors[name]
        self.graph.bind(binding)

    def evaluate(self, *nodes: Node) -> list[np.ndarray]:
        return self.graph.evaluate(nodes)


def _resolve_layer(arch: Architecture, target_layer: int) -> int:
    n = len(arch.conv)
    if not -n <= target_layer < n:
        raise ValueError(f"target_layer {target_layer} out of range for {n} conv blocks")
    return target_layer % n


def build_forward(arch: Architecture, batch_size: int, target_layer: int = -1) -> ForwardTrace:
    graph = Graph()
    layer = _resolve_layer(arch, target_layer)
    images = graph.input((batch_size, *arch.input_shape), "images")
    params = {name: graph.input(shape, name) for name, shape, _ in arch.param_shapes()}

    x, target = images, None
    for i, b in enumerate(arch.conv):
        x = ops.conv2d(x, params[f"conv{i}.kernel"], stride=b.stride, padding="same")
        x = ops.relu(x + ops.reshape(params[f"conv{i}.bias"], (1, b.channels, 1, 1)))
        if i == layer:
            target = x
    x = ops.global_avg_pool(x) if arch.head == "gap" else ops.reshape(x, (batch_size, -1))
    for j in range(len(arch.dense)):
        x = ops.matmul(x, params[f"dense{j}.weight"])
        if arch.dense_bias:
            x = x + params[f"dense{j}.bias"]
        if j < len(arch.dense) - 1:
            x = ops.relu(x)
    return ForwardTrace(graph, images, params, x, target, layer, arch)


def forward(params: ModelParams, images, target_layer: int = -1) -> ForwardTrace:
    """Build a trace for ``images`` (N, C, H, W) and bind it to ``params``."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1:] != params.arch.input_shape:
        raise ShapeError(f"images must be (N, {', '.join(map(str, params.arch.input_shape))}), got {images.shape}")
    trace = build_forward(params.arch, images.shape[0], target_layer)
    trace.bind(params, images)
    return trace


def tiny_architecture(n_classes: int = 3, image_size: int = 8, channels: Sequence[int] = (3, 4),
                      head: str = "gap") -> Architecture:
    """A sub-2k-parameter model with a 4x4 target map, for gradient checks."""
    blocks = tuple(ConvBlock(c, 3, 1) for c in channels[:-1]) + (ConvBlock(channels[-1], 3, image_size // 4),)
    return Architecture((1, image_size, image_size), blocks, (8, n_classes), head)
