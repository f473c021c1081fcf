"""Closed-form familywise adjustments: Bonferroni, Holm, Hochberg, Hommel.

Ties in the sort are broken by original position so results are deterministic.
"""
from __future__ import annotations

from enum import Enum

import numpy as np


class AdjustmentMethod(str, Enum):
    BONFERRONI = "bonferroni"
    HOLM = "holm"
    HOCHBERG = "hochberg"
    HOMMEL = "hommel"
    RANDOMIZATION = "randomization"


ALL_METHODS = tuple(m.value for m in AdjustmentMethod)
CLOSED_FORM = ("bonferroni", "holm", "hochberg", "hommel")


def _as_pvalues(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("expected a 1-D vector of p-values")
    if p.size and (np.isnan(p).any() or p.min() < 0 or p.max() > 1):
        raise ValueError("p-values must lie in [0, 1]")
    return p


def bonferroni(p) -> np.ndarray:
    p = _as_pvalues(p)
    return np.minimum(1.0, p.size * p)


def holm(p) -> np.ndarray:
    """Step-down: running max of ``(J - k + 1) p_(k)`` over the sorted p-values."""
    p = _as_pvalues(p)
    J = p.size
    order = np.argsort(p, kind="stable")
    scaled = np.minimum(1.0, (J - np.arange(J)) * p[order])
    out = np.empty(J)
    out[order] = np.maximum.accumulate(scaled)
    return out


def hochberg(p) -> np.ndarray:
    """Step-up: running min from the largest p-value down."""
    p = _as_pvalues(p)
    J = p.size
    order = np.argsort(p, kind="stable")
    scaled = np.minimum(1.0, (J - np.arange(J)) * p[order])
    out = np.empty(J)
    out[order] = np.minimum.accumulate(scaled[::-1])[::-1]
    return out


def hommel(p) -> np.ndarray:
    """Hommel's closed Simes procedure, the usual O(J^2) adjusted p-values."""
    p = _as_pvalues(p)
    n = p.size
    if n == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    ps = p[order]
    i = np.arange(1, n + 1)
    q = np.full(n, np.min(n * ps / i))
    pa = q.copy()
    for m in range(n - 1, 1, -1):
        i1 = np.arange(n - m + 1)
        i2 = np.arange(n - m + 1, n)
        q1 = np.min(m * ps[i2] / np.arange(2, m + 1))
        q[i1] = np.minimum(m * ps[i1], q1)
        q[i2] = q[n - m]
        pa = np.maximum(pa, q)
    adj = np.maximum(pa, ps)
    # same quantity as Hochberg's bound up to rounding; keep the ordering exact
    adj = np.minimum(adj, hochberg(ps))
    out = np.empty(n)
    out[order] = np.minimum(adj, 1.0)
    return out


_FUNCS = {"bonferroni": bonferroni, "holm": holm, "hochberg": hochberg, "hommel": hommel}


def adjust(p, method: AdjustmentMethod | str) -> np.ndarray:
    method = AdjustmentMethod(method)
    if method is AdjustmentMethod.RANDOMIZATION:
        raise ValueError("randomization adjustment needs the joint null distribution; "
                         "use engine.adjust_randomization")
    return _FUNCS[method.value](p)
