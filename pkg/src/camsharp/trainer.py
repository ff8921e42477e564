"""Entropy-regularized loss, Adam, the training loop and metric logging."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, fields
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .autodiff import Node, NonFiniteError, build_gradient_graph, ops
from .dataset import Dataset, Split, epoch_batches
from .gradcam import batch_gradcam
from .measures import entropy_node, measure_all
from .network import Architecture, ForwardTrace, ModelParams, build_forward, init_params

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "split", "accuracy", "ce", "ca", "cd", "loss")


class ConfigError(ValueError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"non-finite loss at step {step}" + (f": {detail}" if detail else ""))
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.0
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 20
    seed: int = 0
    target_layer: int = -1
    log_every: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    # penalize CAMs of non-true classes; not implemented, must stay off
    negative_class_term: bool = False

    def validate(self) -> "TrainConfig":
        if not self.beta >= 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ConfigError(f"seed must be unsigned, got {self.seed}")
        if self.log_every < 1:
            raise ConfigError(f"log_every must be >= 1, got {self.log_every}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")
        if not self.adam_epsilon > 0:
            raise ConfigError(f"adam epsilon must be > 0, got {self.adam_epsilon}")
        if self.negative_class_term:
            raise ConfigError("negative_class_term is not supported")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class MetricsRow:
    step: int
    split: str
    accuracy: float
    ce_mean: float
    ca_mean: float
    cd_mean: float
    loss: float

    def csv_fields(self) -> list[str]:
        return [str(self.step), self.split] + [_fmt(v) for v in
                                               (self.accuracy, self.ce_mean, self.ca_mean, self.cd_mean, self.loss)]


def _fmt(x: float) -> str:
    return f"{x:.12g}"


# -- loss -------------------------------------------------------------------

def combined_loss(trace: ForwardTrace, labels, beta: float, cam_term: bool = True) -> Node:
    """Cross-entropy plus ``beta`` times the batch-mean entropy of true-class GradCAM maps.

    ``labels`` is an index array or an (N, C) one-hot node. The entropy term is
    differentiated through the GradCAM weights, so its gradient involves second
    derivatives of the logits. ``cam_term=False`` omits the term from the graph.
    """
    if beta < 0:
        raise ConfigError(f"beta must be >= 0, got {beta}")
    if not isinstance(labels, Node):
        labels = trace.graph.const(ops.one_hot(labels, trace.logits.shape[1]))
    loss = ops.softmax_cross_entropy(trace.logits, labels)
    if not cam_term:
        return loss
    _, cam = batch_gradcam(trace, labels)
    return loss + ops.scale(ops.mean(entropy_node(cam)), beta)


@dataclass
class LossGraph:
    """Training graph for one batch size: loss and parameter gradients."""

    trace: ForwardTrace
    targets: Node
    loss: Node
    grads: dict[str, Node]

    def run(self, params: ModelParams, images, labels) -> tuple[float, dict[str, np.ndarray]]:
        self.trace.bind(params, images)
        self.trace.graph.bind({self.targets: ops.one_hot(labels, self.targets.shape[1])})
        names = list(self.grads)
        loss, *gs = self.trace.graph.evaluate([self.loss, *(self.grads[n] for n in names)])
        return float(loss), dict(zip(names, gs))


def build_loss_graph(arch: Architecture, batch_size: int, beta: float, target_layer: int = -1,
                     cam_term: bool = True) -> LossGraph:
    trace = build_forward(arch, batch_size, target_layer)
    targets = trace.graph.input((batch_size, arch.n_classes), "targets")
    loss = combined_loss(trace, targets, beta, cam_term)
    names = list(trace.params)
    grads = build_gradient_graph(trace.graph, loss, [trace.params[n] for n in names])
    return LossGraph(trace, targets, loss, dict(zip(names, grads)))


# -- optimizer --------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, tensors: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in tensors.items()}, {k: np.zeros_like(a) for k, a in tensors.items()})


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, t: int,
              config: TrainConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays, inputs are untouched."""
    if t < 1:
        raise ValueError(f"adam step index must be >= 1, got {t}")
    b1, b2, eps, lr = config.adam_beta1, config.adam_beta2, config.adam_epsilon, config.learning_rate
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ValueError(f"shape mismatch for {k}: param {p.shape}, grad {g.shape}, moment {state.m[k].shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        new_p[k] = p - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v)


# -- evaluation -------------------------------------------------------------

@lru_cache(maxsize=16)
def _eval_graph(arch: Architecture, batch_size: int, target_layer: int):
    trace = build_forward(arch, batch_size, target_layer)
    targets = trace.graph.input((batch_size, arch.n_classes), "targets")
    _, cam = batch_gradcam(trace, targets)
    return trace, targets, cam


def forward_cams(params: ModelParams, images: np.ndarray, labels: np.ndarray, target_layer: int = -1,
                 chunk: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Logits (N, C) and true-class GradCAM maps (N, h, w), detached."""
    logits, cams = [], []
    for start in range(0, len(labels), chunk):
        x, y = images[start : start + chunk], labels[start : start + chunk]
        trace, targets, cam = _eval_graph(params.arch, len(y), target_layer)
        trace.bind(params, x)
        trace.graph.bind({targets: ops.one_hot(y, params.arch.n_classes)})
        lg, cm = trace.graph.evaluate([trace.logits, cam])
        logits.append(np.array(lg))
        cams.append(np.array(cm))
    return np.concatenate(logits), np.concatenate(cams)


def accuracy_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels)) if len(labels) else 0.0


def cross_entropy_np(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(len(labels)), labels]))


def evaluate(params: ModelParams, split: Split, step: int = 0, name: str = "test", beta: float = 0.0,
             target_layer: int = -1) -> MetricsRow:
    """Accuracy, mean CAM measures over true-class maps, and loss on ``split``."""
    logits, cams = forward_cams(params, split.images, split.labels, target_layer)
    records = [measure_all(c) for c in cams]
    ce = float(np.mean([r.ce for r in records]))
    return MetricsRow(
        step=step,
        split=name,
        accuracy=accuracy_from_logits(logits, split.labels),
        ce_mean=ce,
        ca_mean=float(np.mean([r.ca for r in records])),
        cd_mean=float(np.mean([r.cd for r in records])),
        loss=cross_entropy_np(logits, split.labels) + beta * ce,
    )


# -- training loop ----------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    rows: list[MetricsRow]
    steps: int


def train(config: TrainConfig, dataset: Dataset, arch: Architecture | None = None, cam_term: bool = True,
          max_steps: int | None = None, on_step: Callable[[int, float, ModelParams], None] | None = None
          ) -> TrainResult:
    """Adam training on the combined loss, logging both splits every ``log_every`` steps.

    A baseline row per split is logged at step 0 and a final row after the
    last step. ``max_steps`` caps the step budget independently of epochs.
    """
    config.validate()
    if len(dataset.train) == 0 or len(dataset.test) == 0:
        raise ConfigError("dataset splits must be nonempty")
    if config.batch_size > len(dataset.train):
        raise ConfigError(f"batch size {config.batch_size} exceeds training split size {len(dataset.train)}")
    arch = arch or Architecture.default(dataset.n_classes, dataset.image_shape[1], dataset.image_shape[0])
    if arch.input_shape != dataset.image_shape or arch.n_classes != dataset.n_classes:
        raise ConfigError("architecture does not match the dataset")

    params = init_params(arch, config.seed)
    rows = _log_rows(params, dataset, 0, config)
    if config.epochs == 0 or max_steps == 0:
        return TrainResult(params, rows, 0)

    graph = build_loss_graph(arch, config.batch_size, config.beta, config.target_layer, cam_term)
    state = AdamState.zeros_like(params.tensors)
    rng = np.random.default_rng([config.seed, 1])
    step = 0
    for epoch in range(config.epochs):
        for images, labels in epoch_batches(dataset.train, config.batch_size, rng):
            try:
                loss, grads = graph.run(params, images, labels)
            except NonFiniteError as e:
                raise NonFiniteLossError(step + 1, str(e)) from e
            step += 1
            tensors, state = adam_step(params.tensors, grads, state, step, config)
            params = params.replace(tensors)
            if on_step is not None:
                on_step(step, loss, params)
            if step % config.log_every == 0:
                rows += _log_rows(params, dataset, step, config)
                log.info("step %d epoch %d loss %.4f", step, epoch, loss)
            if max_steps is not None and step >= max_steps:
                break
        if max_steps is not None and step >= max_steps:
            break
    if step % config.log_every != 0:
        rows += _log_rows(params, dataset, step, config)
    return TrainResult(params, rows, step)


def _log_rows(params, dataset, step, config) -> list[MetricsRow]:
    try:
        return [
            evaluate(params, dataset.train, step, "train", config.beta, config.target_layer),
            evaluate(params, dataset.test, step, "test", config.beta, config.target_layer),
        ]
    except NonFiniteError as e:
        raise NonFiniteLossError(step, str(e)) from e


# -- metrics CSV --------------------------------------------------------------

def write_metrics_csv(rows: Iterable[MetricsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow(r.csv_fields())


def read_metrics_records(path) -> list[list[str]]:
    """Validated raw CSV records (strings as written); ValueError names the offending line."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_HEADER:
            raise ValueError(f"line 1: expected header {','.join(METRICS_HEADER)}")
        for rec in reader:
            if not rec:
                continue
            try:
                if len(rec) != len(METRICS_HEADER):
                    raise ValueError(f"expected {len(METRICS_HEADER)} fields, got {len(rec)}")
                if rec[1] not in ("train", "test"):
                    raise ValueError(f"unknown split {rec[1]!r}")
                int(rec[0])
                for v in rec[2:]:
                    float(v)
            except ValueError as e:
                raise ValueError(f"line {reader.line_num}: {e}") from None
            records.append(rec)
    return records


def read_metrics_csv(path) -> list[MetricsRow]:
    return [MetricsRow(int(r[0]), r[1], *(float(v) for v in r[2:])) for r in read_metrics_records(path)]


def metrics_path(out_dir) -> Path:
    return Path(out_dir) / "metrics.csv"
