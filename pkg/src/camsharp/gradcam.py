"""GradCAM weights and maps as differentiable graph expressions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, build_gradient_graph, ops
from .network import ForwardTrace


@dataclass(frozen=True)
class CamMap:
    values: np.ndarray
    class_index: int
    node: Node | None = None

    @property
    def differentiable(self) -> bool:
        return self.node is not None

    def detach(self) -> "CamMap":
        return CamMap(np.array(self.values), self.class_index)


@dataclass(frozen=True)
class CamRangeStats:
    max: float
    min: float
    absolute_range: float
    relative_range: float | None


def _check(trace: ForwardTrace, class_index: int, sample_index: int) -> None:
    n, c = trace.logits.shape
    if not 0 <= class_index < c:
        raise ValueError(f"class index {class_index} out of range [0, {c})")
    if not 0 <= sample_index < n:
        raise ValueError(f"sample index {sample_index} out of range [0, {n})")


def batch_gradcam(trace: ForwardTrace, targets: Node) -> tuple[Node, Node]:
    """Per-sample alpha (N, K) and relu map (N, h, w) for one-hot ``targets`` (N, C).

    Summing the selected logits gives, for each sample, the gradient of its
    own class score: samples never interact in the forward pass.
    """
    acts = trace.activations
    n, k, h, w = acts.shape
    score = ops.sum(trace.logits * targets)
    (grad,) = build_gradient_graph(trace.graph, score, [acts])
    alpha = ops.mean(grad, axis=(2, 3))
    weighted = ops.broadcast_to(ops.reshape(alpha, (n, k, 1, 1)), acts.shape) * acts
    return alpha, ops.relu(ops.sum(weighted, axis=1))


def alpha_weights(trace: ForwardTrace, class_index: int, sample_index: int) -> Node:
    """Spatial mean of d y^c / d A^k for one sample; a (K,) node."""
    _check(trace, class_index, sample_index)
    sel = np.zeros(trace.logits.shape)
    sel[sample_index, class_index] = 1.0
    score = ops.sum(trace.logits * sel)
    (grad,) = build_gradient_graph(trace.graph, score, [trace.activations])
    return ops.mean(grad[sample_index], axis=(1, 2))


def gradcam_map(trace: ForwardTrace, class_index: int, sample_index: int) -> CamMap:
    """relu(sum_k alpha_k A^k) for one sample, attached to the trace's graph."""
    alpha = alpha_weights(trace, class_index, sample_index)
    acts = trace.activations[sample_index]
    k, h, w = acts.shape
    cam = ops.relu(ops.sum(ops.broadcast_to(ops.reshape(alpha, (k, 1, 1)), acts.shape) * acts, axis=0))
    (values,) = trace.evaluate(cam)
    return CamMap(np.array(values), class_index, cam)


def visual_normalize(cam) -> tuple[np.ndarray, bool]:
    """Min-max rescale to [0, 1]. Returns (image, is_constant); constant maps give zeros."""
    m = np.asarray(getattr(cam, "values", cam), dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m), True
    return (m - lo) / (hi - lo), False


def cam_range_stats(cam) -> CamRangeStats:
    m = np.asarray(getattr(cam, "values", cam), dtype=np.float64)
    hi, lo = float(m.max()), float(m.min())
    spread = hi - lo
    if spread == 0.0:
        rel = 0.0
    elif lo > 0.0:
        rel = spread / lo
    else:
        rel = None
    return CamRangeStats(hi, lo, spread, rel)
