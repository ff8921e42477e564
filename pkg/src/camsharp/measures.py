"""CAM interpretability measures: entropy, ellipsoidal area and dispersion.

Detached versions work on numpy arrays (or ``CamMap``); ``entropy_node``
builds the differentiable entropy used as a training-loss term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Node, ops

SAFE_LOG_EPS = 1e-12
DEGENERATE_SUM = 1e-9
EIG_CLAMP = 1e-12


@dataclass(frozen=True)
class MeasureRecord:
    ce: float
    ca: float
    cd: float
    degenerate: bool = False


def _values(cam) -> np.ndarray:
    arr = np.asarray(getattr(cam, "values", cam), dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"CAM map must be 2-D, got shape {arr.shape}")
    return arr


def normalize_map(cam) -> tuple[np.ndarray, bool]:
    """Return (M / sum M, degenerate). A near-zero map falls back to uniform."""
    m = _values(cam)
    total = m.sum()
    if total < DEGENERATE_SUM:
        return np.full(m.shape, 1.0 / m.size), True
    return m / total, False


def _entropy_of(p: np.ndarray) -> float:
    # 0 ln 0 = 0 taken literally; the graph version needs the safe-log offset
    # for finite gradients, which biases a uniform map low by about h*w*eps
    q = p[p > 0]
    return max(0.0, float(-np.sum(q * np.log(q))))


def cam_entropy(cam):
    """Shannon entropy (nats) of the normalized map.

    Returns a graph node when given a ``Node`` (or a CamMap attached to a
    graph), a float otherwise.
    """
    node = cam if isinstance(cam, Node) else getattr(cam, "node", None)
    if node is not None:
        return entropy_node(node)
    p, _ = normalize_map(cam)
    return _entropy_of(p)


def _covariance(p: np.ndarray) -> tuple[float, float, float, float]:
    """Covariance entries (a, b, d) of the pixel coordinates under ``p``, plus its determinant.

    The determinant uses det = 1/2 sum_ij p_i p_j (u_i v_j - u_j v_i)^2 over
    centered coordinates, a sum of nonnegative terms that keeps the small
    eigenvalue accurate for nearly collinear maps.
    """
    i, j = np.indices(p.shape, dtype=np.float64)
    mi, mj = np.sum(p * i), np.sum(p * j)
    di, dj = i - mi, j - mj
    a, b, d = float(np.sum(p * di * di)), float(np.sum(p * di * dj)), float(np.sum(p * dj * dj))
    on = p > 0
    w, u, v = p[on], di[on], dj[on]
    uv = np.outer(u, v)
    cross = uv - uv.T
    det = 0.5 * float(np.sum(np.outer(w, w) * cross * cross))
    return a, b, d, det


def eig2x2_sym(a: float, b: float, d: float) -> tuple[float, float]:
    """Eigenvalues (ascending) of [[a, b], [b, d]] in closed form."""
    mid = 0.5 * (a + d)
    rad = math.hypot(0.5 * (a - d), b)
    return mid - rad, mid + rad


def cam_ellipsoidal_area(cam) -> float:
    """sqrt(l1 * l2) of the pixel-coordinate covariance under the normalized map."""
    p, _ = normalize_map(cam)
    a, b, d, det = _covariance(p)
    lo, hi = eig2x2_sym(a, b, d)
    if hi > 0.0:
        lo = det / hi  # same eigenvalue, without the cancellation in mid - rad
    lo = 0.0 if abs(lo) < EIG_CLAMP else lo
    hi = 0.0 if abs(hi) < EIG_CLAMP else hi
    return math.sqrt(max(lo * hi, 0.0))


def cam_dispersion(cam) -> float:
    """Population variance over squared mean of the raw map values."""
    m = _values(cam).ravel()
    if m.sum() < DEGENERATE_SUM:
        return 0.0
    m = m / m.max()  # the ratio is scale-free; this keeps var() from overflowing
    mu = m.mean()
    return float(m.var() / (mu * mu))


def measure_all(cam) -> MeasureRecord:
    p, degenerate = normalize_map(cam)
    return MeasureRecord(
        ce=_entropy_of(p),
        ca=cam_ellipsoidal_area(cam),
        cd=cam_dispersion(cam),
        degenerate=degenerate,
    )


def entropy_node(cam: Node) -> Node:
    """Differentiable CAM entropy over the last two axes of ``cam``.

    ``cam`` has shape (..., h, w); the result has the leading shape. Maps whose
    sum is below the degeneracy threshold contribute the uniform entropy
    ln(h*w) with zero gradient.
    """
    if cam.ndim < 2:
        raise ValueError(f"CAM node must have at least 2 dims, got {cam.shape}")
    h, w = cam.shape[-2:]
    total = ops.sum(cam, axis=(-2, -1), keepdims=True)
    # 1 where the map is degenerate, else 0 (piecewise constant, no gradient)
    degen = ops.step(ops.sub(DEGENERATE_SUM, total))
    keep = ops.sub(1.0, degen)
    # dividing by total + degen keeps the quotient exact and finite in both branches
    p = ops.broadcast_to(keep, cam.shape) * cam / ops.broadcast_to(total + degen, cam.shape)
    p = p + ops.broadcast_to(ops.scale(degen, 1.0 / (h * w)), cam.shape)
    return ops.neg(ops.sum(p * ops.log(p, eps=SAFE_LOG_EPS), axis=(-2, -1)))
