# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled reduction kernels.

Every loop accumulates strictly in flat index order so the results are
bit-identical to the numpy fallback in ``_pykernels``.
"""

from libc.math cimport fabs


def l1_norm(const double[::1] x):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double s = 0.0
    for i in range(n):
        s += fabs(x[i])
    return s


def l1_distance(const double[::1] a, const double[::1] b):
    cdef Py_ssize_t i, n = a.shape[0]
    cdef double s = 0.0
    if b.shape[0] != n:
        raise ValueError("length mismatch")
    for i in range(n):
        s += fabs(a[i] - b[i])
    return s


def deviation_norms(const double[::1] curr, const double[::1] prev):
    """Return ``(|curr - prev|_1, |prev|_1)`` in a single pass."""
    cdef Py_ssize_t i, n = curr.shape[0]
    cdef double num = 0.0, den = 0.0
    if prev.shape[0] != n:
        raise ValueError("length mismatch")
    for i in range(n):
        num += fabs(curr[i] - prev[i])
        den += fabs(prev[i])
    return num, den


def axpy(double[::1] out, const double[::1] x, double w):
    """In place ``out += w * x``."""
    cdef Py_ssize_t i, n = out.shape[0]
    if x.shape[0] != n:
        raise ValueError("length mismatch")
    for i in range(n):
        out[i] += w * x[i]
