"""Truncated Taylor arithmetic on coefficient arrays.

A jet is an array ``a`` of shape ``(n + 1, ...)`` holding *ordinary* Taylor
coefficients, ``a[k]`` multiplying ``e**k``.  Trailing axes are grid points
and are carried along elementwise.  All operations truncate at the order of
their first argument.
"""
from __future__ import annotations

import math

import numpy as np


def constant(value, order: int) -> np.ndarray:
    value = np.asarray(value, dtype=float)
    out = np.zeros((order + 1,) + value.shape)
    out[0] = value
    return out


def variable(center, order: int, slope=1.0) -> np.ndarray:
    """Jet of ``center + slope * e``."""
    out = constant(center, order)
    if order >= 1:
        out[1] = slope
    return out


def _pad(a: np.ndarray, n: int) -> np.ndarray:
    if a.shape[0] >= n:
        return a[:n]
    out = np.zeros((n,) + a.shape[1:])
    out[: a.shape[0]] = a
    return out


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    b = _pad(np.asarray(b, dtype=float), n)
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape)
    for k in range(n):
        out[k] = np.einsum("i...,i...->...", a[: k + 1], b[k::-1])
    return out


def reciprocal(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    out = np.zeros_like(a, dtype=float)
    out[0] = 1.0 / a[0]
    for k in range(1, n):
        acc = np.einsum("i...,i...->...", a[1 : k + 1], out[k - 1 :: -1])
        out[k] = -acc / a[0]
    return out


def div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    b = _pad(np.asarray(b, dtype=float), n)
    a, b = np.broadcast_arrays(a, b)
    out = np.empty(a.shape)
    for k in range(n):
        acc = a[k] - np.einsum("i...,i...->...", b[1 : k + 1], out[k - 1 :: -1]) if k else a[0]
        out[k] = acc / b[0]
    return out


def exp(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    out = np.zeros_like(a, dtype=float)
    out[0] = np.exp(a[0])
    idx = np.arange(n, dtype=float)
    for k in range(1, n):
        w = idx[1 : k + 1].reshape((-1,) + (1,) * (a.ndim - 1))
        out[k] = np.einsum("i...,i...->...", w * a[1 : k + 1], out[k - 1 :: -1]) / k
    return out


def log(a: np.ndarray) -> np.ndarray:
    """Logarithm of a jet with positive constant term."""
    if np.any(a[0] <= 0):
        raise ValueError("log of a jet requires a positive constant term")
    n = a.shape[0]
    out = np.zeros_like(a, dtype=float)
    out[0] = np.log(a[0])
    idx = np.arange(n, dtype=float)
    for k in range(1, n):
        acc = a[k].copy()
        if k > 1:
            w = idx[1:k].reshape((-1,) + (1,) * (a.ndim - 1))
            acc = acc - np.einsum("i...,i...->...", w * out[1:k], a[k - 1 : 0 : -1]) / k
        out[k] = acc / a[0]
    return out


def power(a: np.ndarray, r: float) -> np.ndarray:
    """``a**r``.  Integer ``r`` uses repeated squaring (any sign of ``a[0]``);
    other exponents go through ``exp(r * log a)``."""
    if float(r).is_integer():
        r = int(r)
        if r < 0:
            return reciprocal(power(a, -r))
        out = constant(np.ones(a.shape[1:]), a.shape[0] - 1)
        base = a
        while r:
            if r & 1:
                out = mul(out, base)
            r >>= 1
            if r:
                base = mul(base, base)
        return out
    return exp(r * log(a))


def sqrt(a: np.ndarray) -> np.ndarray:
    return power(a, 0.5)


def sin_cos(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = a.shape[0]
    s = np.zeros_like(a, dtype=float)
    c = np.zeros_like(a, dtype=float)
    s[0], c[0] = np.sin(a[0]), np.cos(a[0])
    idx = np.arange(n, dtype=float)
    for k in range(1, n):
        w = idx[1 : k + 1].reshape((-1,) + (1,) * (a.ndim - 1)) * a[1 : k + 1]
        s[k] = np.einsum("i...,i...->...", w, c[k - 1 :: -1]) / k
        c[k] = -np.einsum("i...,i...->...", w, s[k - 1 :: -1]) / k
    return s, c


def tanh(a: np.ndarray) -> np.ndarray:
    # sign folded in so that exp never overflows
    sign = np.where(a[0] >= 0, 1.0, -1.0)
    e = exp(-2.0 * sign * a)
    one = constant(np.ones(a.shape[1:]), a.shape[0] - 1)
    return sign * (one - 2.0 * div(e, one + e))


def compose(outer: np.ndarray, inner: np.ndarray) -> np.ndarray:
    """Jet of ``outer(inner(e) - inner(0))`` given ``outer`` expanded about
    ``inner(0)``.  Horner scheme in truncated arithmetic."""
    n = inner.shape[0]
    d = inner.copy()
    d[0] = 0.0
    out = constant(outer[min(n, outer.shape[0]) - 1], n - 1)
    for k in range(min(n, outer.shape[0]) - 2, -1, -1):
        out = mul(out, d)
        out[0] = out[0] + outer[k]
    return out


def derivative(a: np.ndarray) -> np.ndarray:
    """Jet of the derivative, one order shorter."""
    k = np.arange(1, a.shape[0], dtype=float).reshape((-1,) + (1,) * (a.ndim - 1))
    return a[1:] * k


def to_derivatives(a: np.ndarray) -> np.ndarray:
    """Ordinary coefficients to derivative values ``k! a[k]``."""
    f = np.array([math.factorial(k) for k in range(a.shape[0])], dtype=float)
    return a * f.reshape((-1,) + (1,) * (a.ndim - 1))


def from_derivatives(d: np.ndarray) -> np.ndarray:
    f = np.array([math.factorial(k) for k in range(d.shape[0])], dtype=float)
    return d / f.reshape((-1,) + (1,) * (d.ndim - 1))


def evaluate(a: np.ndarray, e) -> np.ndarray:
    """Horner evaluation of the polynomial at offset ``e`` (broadcast)."""
    out = np.zeros(np.broadcast_shapes(a.shape[1:], np.shape(e)))
    for k in range(a.shape[0] - 1, -1, -1):
        out = out * e + a[k]
    return out
