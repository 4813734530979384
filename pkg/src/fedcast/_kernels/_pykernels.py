"""Numpy fallback for the compiled kernels.

``np.add.accumulate`` is a strictly sequential scan, unlike ``np.sum`` which
uses pairwise summation, so these match the C loops bit for bit.
"""

import numpy as np


def _seqsum(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    return float(np.add.accumulate(x)[-1])


def l1_norm(x: np.ndarray) -> float:
    return _seqsum(np.abs(x))


def l1_distance(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape[0] != b.shape[0]:
        raise ValueError("length mismatch")
    return _seqsum(np.abs(a - b))


def deviation_norms(curr: np.ndarray, prev: np.ndarray) -> tuple[float, float]:
    """Return ``(|curr - prev|_1, |prev|_1)``."""
    return l1_distance(curr, prev), l1_norm(prev)


def axpy(out: np.ndarray, x: np.ndarray, w: float) -> None:
    """In place ``out += w * x``."""
    if out.shape[0] != x.shape[0]:
        raise ValueError("length mismatch")
    out += w * x
