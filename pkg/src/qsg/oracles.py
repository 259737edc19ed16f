"""Brute-force reference evaluations used to cross-check the spectral kernels.

These integrate the defining formulas directly with Gauss-Legendre rules and
``scipy.linalg.expm``; they share no code with the eigenbasis path.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm


def _unit_interval_rule(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _m(op):
    return np.asarray(getattr(op, "entries", op), dtype=complex)


def partition_function(theta) -> float:
    return float(np.trace(expm(_m(theta))).real)


def thermal_average(theta, a) -> float:
    t = _m(theta)
    e = expm(t)
    return float((np.trace(_m(a) @ e) / np.trace(e)).real)


def duhamel_two_point(theta, a, b, order: int = 64) -> complex:
    """``int_0^1 Tr(A e^{u Theta} B e^{(1-u) Theta}) du / Tr e^Theta``."""
    t, am, bm = _m(theta), _m(a), _m(b)
    u, w = _unit_interval_rule(order)
    total = 0.0j
    for uk, wk in zip(u, w):
        total += wk * np.trace(am @ expm(uk * t) @ bm @ expm((1.0 - uk) * t))
    return total / np.trace(expm(t))


def duhamel_three_point(theta, a, b, c, order: int = 32) -> complex:
    """``int int u Tr(A e^{s u Theta} B e^{(1-s) u Theta} C e^{(1-u) Theta}) ds du / Z``."""
    t, am, bm, cm = _m(theta), _m(a), _m(b), _m(c)
    x, w = _unit_interval_rule(order)
    total = 0.0j
    for uk, wu in zip(x, w):
        tail = cm @ expm((1.0 - uk) * t)
        for sk, ws in zip(x, w):
            total += wu * ws * uk * np.trace(
                am @ expm(sk * uk * t) @ bm @ expm((1.0 - sk) * uk * t) @ tail
            )
    return total / np.trace(expm(t))
