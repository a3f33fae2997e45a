"""Forward-mode dual numbers over numpy arrays.

A :class:`Dual` carries a primal part and a tangent part, either of which may
itself be a :class:`Dual`; nesting two levels gives exact second derivatives.
Leaves are floats or ndarrays and broadcast like numpy values.
"""

from __future__ import annotations

import numpy as np


class Dual:
    __slots__ = ("re", "du")
    # let numpy hand mixed ndarray/Dual arithmetic back to us
    __array_ufunc__ = None

    def __init__(self, re, du=0.0):
        self.re = re
        self.du = du

    def __repr__(self) -> str:
        return f"Dual({self.re!r}, {self.du!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re + other.re, self.du + other.du)
        return Dual(self.re + other, self.du)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re - other.re, self.du - other.du)
        return Dual(self.re - other, self.du)

    def __rsub__(self, other):
        return Dual(other - self.re, -self.du)

    def __neg__(self):
        return Dual(-self.re, -self.du)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re * other.re, self.re * other.du + self.du * other.re)
        return Dual(self.re * other, self.du * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.re / other.re
            return Dual(q, (self.du - q * other.du) / other.re)
        return Dual(self.re / other, self.du / other)

    def __rtruediv__(self, other):
        q = other / self.re
        return Dual(q, -q * self.du / self.re)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.re @ other.re, self.re @ other.du + self.du @ other.re)
        return Dual(self.re @ other, self.du @ other)

    def __rmatmul__(self, other):
        return Dual(other @ self.re, other @ self.du)

    @property
    def T(self):
        return Dual(transpose(self.re), transpose(self.du))


def transpose(a):
    if isinstance(a, Dual):
        return a.T
    return np.swapaxes(a, -1, -2) if np.ndim(a) >= 2 else a


def primal(a):
    """Innermost real value of a possibly nested dual."""
    while isinstance(a, Dual):
        a = a.re
    return a


def tangent(a):
    """Tangent part, or 0 for a plain value."""
    return a.du if isinstance(a, Dual) else 0.0


def exp(a):
    if isinstance(a, Dual):
        e = exp(a.re)
        return Dual(e, e * a.du)
    return np.exp(a)


def log(a):
    if isinstance(a, Dual):
        return Dual(log(a.re), a.du / a.re)
    return np.log(a)


def sqrt(a):
    if isinstance(a, Dual):
        s = sqrt(a.re)
        return Dual(s, a.du / (2.0 * s))
    return np.sqrt(a)


def sin(a):
    if isinstance(a, Dual):
        return Dual(sin(a.re), cos(a.re) * a.du)
    return np.sin(a)


def cos(a):
    if isinstance(a, Dual):
        return Dual(cos(a.re), -sin(a.re) * a.du)
    return np.cos(a)


def tanh(a):
    if isinstance(a, Dual):
        th = tanh(a.re)
        return Dual(th, (1.0 - th * th) * a.du)
    return np.tanh(a)


def where(cond, a, b):
    """Elementwise select that threads through both parts of a dual."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        return Dual(
            where(cond, a.re if isinstance(a, Dual) else a, b.re if isinstance(b, Dual) else b),
            where(cond, tangent(a), tangent(b)),
        )
    return np.where(cond, a, b)


def absolute(a):
    return where(np.asarray(primal(a)) < 0, -a, a)


def minimum(a, b):
    return where(np.asarray(primal(a)) <= np.asarray(primal(b)), a, b)


def maximum(a, b):
    return where(np.asarray(primal(a)) >= np.asarray(primal(b)), a, b)


def ipow(a, n: int):
    """a**n for integer n by binary exponentiation (repeated multiplication)."""
    if n < 0:
        return 1.0 / ipow(a, -n)
    result = None
    base = a
    while n:
        if n & 1:
            result = base if result is None else result * base
        n >>= 1
        if n:
            base = base * base
    return 1.0 if result is None else result
