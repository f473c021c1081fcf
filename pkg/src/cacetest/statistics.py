"""ITT and CACE test statistics per estimand (covariate cell x outcome)."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .data import ObservedDataset

# Two extremity values closer than this are treated as tied.
TIE_TOL = 1e-9


class StatisticKind(str, Enum):
    """``cace`` is the constrained maximum-likelihood CACE, ``cace_iv`` the IV ratio."""

    ITT = "itt"
    CACE = "cace"
    CACE_IV = "cace_iv"

    @property
    def uses_compliance(self) -> bool:
        return self is not StatisticKind.ITT


class Tail(str, Enum):
    TWO_SIDED_ABS = "two"
    RIGHT = "right"
    LEFT = "left"

    @classmethod
    def parse(cls, value) -> "Tail":
        if isinstance(value, cls):
            return value
        aliases = {"two_sided_abs": cls.TWO_SIDED_ABS, "both": cls.TWO_SIDED_ABS,
                   "right_tail": cls.RIGHT, "left_tail": cls.LEFT}
        return aliases.get(value) or cls(value)


class DegenerateStatistic(ArithmeticError):
    """CACE denominator is not positive: no identified compliers in the subgroup."""


class EmptyArm(ValueError):
    """A subgroup has no treated or no control units."""


@dataclass(frozen=True)
class EstimandDef:
    label: str
    outcome_index: int
    cell_filter: int | None = None

    def mask(self, cell: np.ndarray) -> np.ndarray:
        if self.cell_filter is None:
            return np.ones(cell.shape[0], dtype=bool)
        return cell == self.cell_filter


def default_estimands(obs: ObservedDataset, cell_names: Sequence[str] | None = None,
                      outcome_names: Sequence[str] | None = None) -> list[EstimandDef]:
    """Cell x outcome cross product (cell-major), or one estimand per outcome if there is one cell."""
    outs = outcome_names or [f"y{j + 1}" for j in range(obs.J)]
    if obs.cell_count <= 1:
        return [EstimandDef(outs[j], j) for j in range(obs.J)]
    cells = cell_names or [f"cell{c}" for c in range(obs.cell_count)]
    return [EstimandDef(f"{cells[c]}/{outs[j]}", j, c)
            for c in range(obs.cell_count) for j in range(obs.J)]


def _check_estimand(obs: ObservedDataset, e: EstimandDef) -> None:
    if not 0 <= e.outcome_index < obs.J:
        raise ValueError(f"{e.label}: outcome index {e.outcome_index} out of range for J={obs.J}")


def itt(obs: ObservedDataset, e: EstimandDef) -> float:
    """Difference in mean outcome score between assigned arms within the subgroup."""
    _check_estimand(obs, e)
    m = e.mask(obs.cell)
    y = obs.y[m, e.outcome_index].astype(float)
    z = obs.z[m]
    if not (z == 1).any() or not (z == 0).any():
        raise EmptyArm(f"{e.label}: empty arm after filtering")
    return float(y[z == 1].mean() - y[z == 0].mean())


def cace_mle_counts(c1, n1, n0) -> np.ndarray:
    """Maximum-likelihood CACE from outcome-category counts.

    Parameters
    ----------
    c1, n1, n0 : array_like, shape (..., K)
        Counts per outcome category of treated compliers, treated never-takers
        and control units.

    Returns
    -------
    ndarray, shape (...)
        Complier mean score under treatment minus the maximum-likelihood
        complier mean under control, NaN without treated compliers or controls.

    Notes
    -----
    The control distribution is a mixture ``q = a + b`` of never-taker mass
    ``a`` and complier mass ``b`` with ``0 <= a <= q``. The likelihood is
    concave with linear constraints, so the KKT point is the maximum. The
    constraint ``a_k = q_k`` binds on the categories with the largest ratio
    ``n1_k / n0_k``; with free totals ``A`` (treated never-takers) and ``B``
    (controls) the complier control mass on a free category is proportional
    to ``(A + nc1) n0_k / B - n1_k``. With nothing binding this reduces to
    the IV ratio.
    """
    c1, n1, n0 = (np.asarray(x, dtype=float) for x in (c1, n1, n0))
    K = c1.shape[-1]
    k = np.arange(K, dtype=float)
    nc1 = c1.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(n0 > 0, n1 / np.where(n0 > 0, n0, 1), np.where(n1 > 0, np.inf, 0.0))
    order = np.argsort(-ratio, axis=-1, kind="stable")
    n1s = np.take_along_axis(n1, order, axis=-1)
    n0s = np.take_along_axis(n0, order, axis=-1)
    zero = np.zeros(n1.shape[:-1] + (1,))
    # free totals when the first m sorted categories bind, m = 0..K
    A = n1.sum(axis=-1, keepdims=True) - np.concatenate([zero, np.cumsum(n1s, axis=-1)], axis=-1)
    B = n0.sum(axis=-1, keepdims=True) - np.concatenate([zero, np.cumsum(n0s, axis=-1)], axis=-1)
    An = A + nc1[..., None]
    pad = np.zeros_like(zero)
    last_bound = np.concatenate([pad, n0s], axis=-1) * An <= np.concatenate([pad, n1s], axis=-1) * B
    first_free = np.concatenate([n1s, pad], axis=-1) * B <= np.concatenate([n0s, pad], axis=-1) * An
    valid = last_bound & first_free & (B > 0)
    m = np.argmax(valid, axis=-1)
    ok = valid.any(axis=-1) & (nc1 > 0)
    A_m = np.take_along_axis(An, m[..., None], axis=-1)[..., 0]
    B_m = np.take_along_axis(B, m[..., None], axis=-1)[..., 0]
    rank = np.argsort(order, axis=-1, kind="stable")
    free = rank >= m[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        mean_c1 = (c1 @ k) / nc1
        mean_c0 = (A_m / B_m * ((free * n0) @ k) - (free * n1) @ k) / nc1
        out = mean_c1 - mean_c0
    return np.where(ok, out, np.nan)


def _counts(obs: ObservedDataset, e: EstimandDef):
    m = e.mask(obs.cell)
    y, z, d = obs.y[m, e.outcome_index], obs.z[m], obs.d[m]
    K = max(int(obs.y.max()) + 1, 2)
    count = lambda sel: np.bincount(y[sel], minlength=K).astype(float)
    return count((z == 1) & (d == 1)), count((z == 1) & (d == 0)), count(z == 0)


def cace(obs: ObservedDataset, e: EstimandDef) -> float:
    """Constrained maximum-likelihood CACE within the subgroup.

    Equals :func:`cace_iv` whenever the IV moment estimate of the complier
    outcome distribution under control is a proper distribution.
    """
    itt(obs, e)
    c1, n1, n0 = _counts(obs, e)
    if not c1.sum() > 0:
        raise DegenerateStatistic(f"{e.label}: no identified compliers")
    return float(cace_mle_counts(c1, n1, n0))


def cace_iv(obs: ObservedDataset, e: EstimandDef) -> float:
    """Wald/IV ratio ITT_Y / ITT_D within the subgroup."""
    num = itt(obs, e)
    m = e.mask(obs.cell)
    z, d = obs.z[m], obs.d[m].astype(float)
    denom = d[z == 1].mean() - d[z == 0].mean()
    if not denom > 0:
        raise DegenerateStatistic(f"{e.label}: no identified compliers (ITT_D = {denom:g})")
    return float(num / denom)


def statistic(obs: ObservedDataset, kind: StatisticKind | str, e: EstimandDef) -> float:
    fn = {StatisticKind.ITT: itt, StatisticKind.CACE: cace, StatisticKind.CACE_IV: cace_iv}
    return fn[StatisticKind(kind)](obs, e)


def statistic_vector(obs: ObservedDataset, kind: StatisticKind | str,
                     estimands: Sequence[EstimandDef], on_degenerate: str = "raise") -> np.ndarray:
    """One statistic per estimand; degenerate CACE entries raise or become NaN."""
    out = np.empty(len(estimands))
    for i, e in enumerate(estimands):
        try:
            out[i] = statistic(obs, kind, e)
        except DegenerateStatistic:
            if on_degenerate != "nan":
                raise
            out[i] = np.nan
    return out


def extremity(t, convention: Tail | str = Tail.TWO_SIDED_ABS):
    """Map statistics so that larger means more extreme; NaN (degenerate) maps to -inf."""
    conv = Tail.parse(convention)
    t = np.asarray(t, dtype=float)
    if conv is Tail.TWO_SIDED_ABS:
        out = np.abs(t)
    elif conv is Tail.RIGHT:
        out = t.copy()
    else:
        out = -t
    out = np.where(np.isnan(out), -np.inf, out)
    return out if out.ndim else float(out)


class BatchStatistics:
    """Vectorised statistics for many assignments of one fixed table.

    Outcomes, cells and estimands are fixed at construction; :meth:`compute`
    takes a ``(B, N)`` assignment stack and, for CACE, the ``(B, N)`` or ``(N,)``
    complier indicators, returning a ``(B, E)`` matrix with NaN where the
    statistic is undefined.
    """

    def __init__(self, y: np.ndarray, cell: np.ndarray, estimands: Sequence[EstimandDef]):
        masks = np.stack([e.mask(cell) for e in estimands], axis=1).astype(float)
        scores = np.stack([y[:, e.outcome_index] for e in estimands], axis=1)
        self.masks = masks
        self.masked_y = masks * scores
        self.n = masks.sum(axis=0)
        self.total = self.masked_y.sum(axis=0)
        self.K = max(int(np.max(y)) + 1, 2)
        onehot = scores[:, :, None] == np.arange(self.K)
        # (N, E*K) indicator of estimand membership and outcome category
        self.cat = (masks[:, :, None] * onehot).reshape(y.shape[0], -1)
        self.cat_total = self.cat.sum(axis=0)

    def itt(self, Z: np.ndarray) -> np.ndarray:
        Zf = np.asarray(Z, dtype=float)
        if Zf.ndim == 1:
            Zf = Zf[None]
        n1 = Zf @ self.masks
        s1 = Zf @ self.masked_y
        n0 = self.n - n1
        with np.errstate(divide="ignore", invalid="ignore"):
            out = s1 / n1 - (self.total - s1) / n0
        out[(n1 == 0) | (n0 == 0)] = np.nan
        return out

    def compute(self, Z: np.ndarray, kind: StatisticKind | str,
                complier: np.ndarray | None = None) -> np.ndarray:
        kind = StatisticKind(kind)
        if kind is StatisticKind.CACE:
            return self.cace_mle(Z, complier)
        out = self.itt(Z)
        if kind is StatisticKind.ITT:
            return out
        Zf = np.asarray(Z, dtype=float)
        if Zf.ndim == 1:
            Zf = Zf[None]
        D = Zf * np.asarray(complier, dtype=float)
        n1 = Zf @ self.masks
        d1 = D @ self.masks
        with np.errstate(divide="ignore", invalid="ignore"):
            rate = d1 / n1
            out = np.where(rate > 0, out / rate, np.nan)
        return out

    def cace_mle(self, Z: np.ndarray, complier: np.ndarray) -> np.ndarray:
        Zf = np.asarray(Z, dtype=float)
        if Zf.ndim == 1:
            Zf = Zf[None]
        shape = (Zf.shape[0], self.masks.shape[1], self.K)
        t1 = (Zf @ self.cat).reshape(shape)
        c1 = ((Zf * np.asarray(complier, dtype=float)) @ self.cat).reshape(shape)
        n0 = self.cat_total.reshape(shape[1:]) - t1
        out = cace_mle_counts(c1, t1 - c1, n0)
        n1 = Zf @ self.masks
        out[(n1 == 0) | (n1 == self.n)] = np.nan
        return out
