"""Central finite differences and error metrics for gradient checks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|), falling back to the absolute error where both are below ``floor``."""
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    return np.where(scale < floor, diff, diff / np.where(scale < floor, 1.0, scale))


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of one array."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def numeric_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian with shape out.shape + x.shape."""
    x = np.array(x, dtype=np.float64)
    cols = []
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = np.asarray(f(x), dtype=np.float64)
        x[idx] = orig - h
        fm = np.asarray(f(x), dtype=np.float64)
        x[idx] = orig
        cols.append((fp - fm) / (2.0 * h))
    out_shape = cols[0].shape if cols else ()
    return np.stack(cols, axis=-1).reshape(out_shape + x.shape)


@dataclass(frozen=True)
class CheckReport:
    count: int
    worst: float
    failures: int

    @property
    def ok(self) -> bool:
        return self.failures == 0


def compare(analytic, numeric, tol: float, floor: float = 1e-8) -> CheckReport:
    err = relative_error(analytic, numeric, floor)
    return CheckReport(int(err.size), float(err.max()) if err.size else 0.0, int(np.sum(err > tol)))
