"""Imputation-randomization loop, posterior predictive p-values and minP adjustment.

Randomness is organised in fixed blocks of iterations. Block ``b`` owns the
Philox substream keyed by ``(seed, b)``; within it, assignment draws and
compliance imputation use separate child streams. Blocks never depend on how
many workers process them, so results are identical for any worker count.
"""
from __future__ import annotations

import math
import os
import secrets
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import adjusters
from .assignment import AssignmentMechanism, CompleteRandomization
from .data import CompleteNullTable, ComplianceStatus, ObservedDataset, ScienceTable
from .imputation import CompliancePrior, GroupedSampler
from .statistics import (TIE_TOL, BatchStatistics, DegenerateStatistic, EstimandDef,
                         StatisticKind, Tail, extremity)

BLOCK_SIZE = 500
DEFAULT_M = 10_000
DEFAULT_BURN_IN = 50
WORKERS_ENV = "CACETEST_WORKERS"


def resolve_seed(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if seed is None:
        seed = secrets.randbits(63)
    return np.random.SeedSequence(int(seed))


def substream(seed, *key: int) -> np.random.SeedSequence:
    """Child seed sequence addressed by ``key`` (no hidden spawn counter)."""
    parent = resolve_seed(seed)
    return np.random.SeedSequence(parent.entropy, spawn_key=parent.spawn_key + tuple(key))


def philox(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seq))


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True, eq=False)
class IterationMatrix:
    """Hypothetical statistics, one row per imputation-randomization set."""

    t_hyp: np.ndarray
    convention: Tail = Tail.TWO_SIDED_ABS
    block_seeds: tuple = ()

    @property
    def M(self) -> int:
        return self.t_hyp.shape[0]

    @property
    def degenerate(self) -> np.ndarray:
        return np.isnan(self.t_hyp)

    def extremity(self) -> np.ndarray:
        return extremity(self.t_hyp, self.convention)


@dataclass
class AnalysisResult:
    labels: list
    t_obs: np.ndarray
    nominal_p: np.ndarray
    adjusted_p: dict
    cutoff: float
    M: int
    alpha: float
    metadata: dict = field(default_factory=dict)

    def rejections(self, method: str = "randomization") -> np.ndarray:
        return np.asarray(self.adjusted_p[method]) <= self.alpha

    def rows(self):
        for j, label in enumerate(self.labels):
            row = {"label": label, "effect": float(self.t_obs[j]),
                   "p_nominal": float(self.nominal_p[j])}
            for method, p in self.adjusted_p.items():
                row[f"p_{method}"] = float(p[j])
            yield row


# ----------------------------------------------------------------- iterations


def _run_block(obs, kind, batch, mech, prior, burn_in, size, seq, known, order, sampler):
    if order == "draw_first":
        # single shared stream, assignment consumed before imputation
        rng = philox(seq)
        Z = mech.draw(rng, size)
        comp = _compliance_block(kind, known, sampler, size, burn_in, rng)
    else:
        assign_seq, impute_seq = seq.spawn(2)
        comp = _compliance_block(kind, known, sampler, size, burn_in, philox(impute_seq))
        Z = mech.draw(philox(assign_seq), size)
    complier = None if comp is None else comp == ComplianceStatus.COMPLIER
    return batch.compute(Z, kind, complier)


def _compliance_block(kind, known, sampler, size, burn_in, rng):
    if not kind.uses_compliance:
        return None
    if known is not None:
        return known[None, :]
    return sampler.run(size, burn_in, rng)


def run_iterations(obs: ObservedDataset, kind: StatisticKind | str,
                   estimands: Sequence[EstimandDef], prior: CompliancePrior = CompliancePrior(),
                   mech: AssignmentMechanism | None = None, M: int = DEFAULT_M, seed=None,
                   burn_in: int = DEFAULT_BURN_IN, convention: Tail | str = Tail.TWO_SIDED_ABS,
                   workers: int | None = None, compliance: np.ndarray | None = None,
                   order: str = "impute_first") -> IterationMatrix:
    """Steps 2-6 repeated ``M`` times.

    For CACE each iteration imputes compliance under the null, re-observes the
    sharp-null table under a fresh hypothetical assignment and records the
    statistics. ITT ignores compliance and skips the imputation. Passing known
    ``compliance`` (e.g. the simulated truth) replaces the imputation.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if order not in ("impute_first", "draw_first"):
        raise ValueError(f"unknown order {order!r}")
    kind = StatisticKind(kind)
    mech = CompleteRandomization.from_observed(obs) if mech is None else mech
    seq = resolve_seed(seed)
    batch = BatchStatistics(obs.y, obs.cell, estimands)
    known = None
    if compliance is not None:
        known = np.asarray(compliance, dtype=np.int8)
        if known.shape != (obs.N,) or (known == ComplianceStatus.UNKNOWN).any():
            raise ValueError("known compliance must be a complete length-N vector")
    sampler = GroupedSampler(obs, prior) if kind.uses_compliance and known is None else None

    sizes = [min(BLOCK_SIZE, M - start) for start in range(0, M, BLOCK_SIZE)]
    seqs = [substream(seq, b) for b in range(len(sizes))]
    jobs = [(obs, kind, batch, mech, prior, burn_in, s, q, known, order, sampler)
            for s, q in zip(sizes, seqs)]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        from joblib import Parallel, delayed
        blocks = Parallel(n_jobs=workers, prefer="threads")(delayed(_run_block)(*j) for j in jobs)
    else:
        blocks = [_run_block(*j) for j in jobs]
    t_hyp = np.concatenate(blocks, axis=0)
    return IterationMatrix(t_hyp, Tail.parse(convention), tuple(q.spawn_key for q in seqs))


# ----------------------------------------------------------------- p-values


def _counts_at_least(sorted_ext: np.ndarray, values: np.ndarray) -> np.ndarray:
    """#{sorted_ext >= value - TIE_TOL} for each value."""
    M = sorted_ext.shape[0]
    return M - np.searchsorted(sorted_ext, values - TIE_TOL, side="left")


def nominal_pvalues(t_obs, it: IterationMatrix) -> np.ndarray:
    """Share of iterations at least as extreme as the observed statistic."""
    t_obs = np.atleast_1d(np.asarray(t_obs, dtype=float))
    if np.isnan(t_obs).any():
        raise DegenerateStatistic("observed statistic is undefined")
    ext = it.extremity()
    ext_obs = extremity(t_obs, it.convention)
    out = np.empty(ext.shape[1])
    for j in range(ext.shape[1]):
        out[j] = _counts_at_least(np.sort(ext[:, j]), np.array([ext_obs[j]]))[0] / it.M
    return out


def hypothetical_pvalue_matrix(it: IterationMatrix) -> np.ndarray:
    """Self-inclusive p-value of every hypothetical statistic within its column.

    Degenerate cells never count as extreme and get p = 1.
    """
    ext = it.extremity()
    out = np.empty_like(ext)
    for j in range(ext.shape[1]):
        col = ext[:, j]
        out[:, j] = _counts_at_least(np.sort(col), col) / it.M
    return out


def adjust_randomization(nominal, p_hyp: np.ndarray) -> np.ndarray:
    """Share of iterations whose minimum hypothetical p is <= each nominal p."""
    mins = np.sort(np.asarray(p_hyp).min(axis=1))
    nominal = np.asarray(nominal, dtype=float)
    return np.searchsorted(mins, nominal, side="right") / mins.shape[0]


def familywise_cutoff(p_hyp: np.ndarray, alpha: float) -> float:
    """Lower empirical alpha-quantile of the per-iteration minimum p-values."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    mins = np.sort(np.asarray(p_hyp).min(axis=1))
    k = max(math.ceil(alpha * mins.shape[0] - 1e-9), 1)
    return float(mins[k - 1])


def observed_statistics(obs: ObservedDataset, kind: StatisticKind | str,
                        estimands: Sequence[EstimandDef]) -> np.ndarray:
    """Statistics on the actual data, through the same arithmetic as the loop."""
    batch = BatchStatistics(obs.y, obs.cell, estimands)
    t = batch.compute(obs.z, kind, obs.d == 1)[0]
    bad = [e.label for e, v in zip(estimands, t) if np.isnan(v)]
    if bad:
        raise DegenerateStatistic(f"observed statistic undefined for: {', '.join(bad)}")
    return t


def analyze(obs: ObservedDataset, kind: StatisticKind | str, estimands: Sequence[EstimandDef],
            prior: CompliancePrior = CompliancePrior(), M: int = DEFAULT_M, alpha: float = 0.05,
            seed=None, convention: Tail | str = Tail.TWO_SIDED_ABS, burn_in: int = DEFAULT_BURN_IN,
            mech: AssignmentMechanism | None = None, workers: int | None = None,
            methods: Sequence[str] = adjusters.ALL_METHODS, compliance=None,
            order: str = "impute_first") -> AnalysisResult:
    """Full combined procedure: observed statistics through adjusted p-values."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    kind = StatisticKind(kind)
    convention = Tail.parse(convention)
    seq = resolve_seed(seed)
    t_obs = observed_statistics(obs, kind, estimands)
    it = run_iterations(obs, kind, estimands, prior, mech, M, seq, burn_in, convention,
                        workers, compliance, order)
    nominal = nominal_pvalues(t_obs, it)
    p_hyp = hypothetical_pvalue_matrix(it)
    adjusted = {}
    for method in methods:
        method = adjusters.AdjustmentMethod(method)
        if method is adjusters.AdjustmentMethod.RANDOMIZATION:
            adjusted[method.value] = adjust_randomization(nominal, p_hyp)
        else:
            adjusted[method.value] = adjusters.adjust(nominal, method)
    cutoff = familywise_cutoff(p_hyp, alpha)
    mins = p_hyp.min(axis=1)
    metadata = {
        "seed": int(seq.entropy), "spawn_key": list(seq.spawn_key), "statistic": kind.value,
        "tail": convention.value, "M": M, "alpha": alpha, "burn_in": burn_in,
        "block_size": BLOCK_SIZE, "prior": [prior.omega_a, prior.omega_b, prior.dirichlet_weight],
        "degenerate_cells": int(it.degenerate.sum()), "N": obs.N, "n_treated": obs.n1,
        "achieved_level": float((mins <= cutoff).mean()),
    }
    return AnalysisResult(
        labels=[e.label for e in estimands], t_obs=t_obs, nominal_p=nominal,
        adjusted_p=adjusted, cutoff=cutoff, M=M, alpha=alpha, metadata=metadata,
    )


# ----------------------------------------------------------------- exact oracle


def exact_pvalue(complete: ScienceTable, t_obs, kind: StatisticKind | str,
                 estimands: Sequence[EstimandDef], mech: CompleteRandomization,
                 convention: Tail | str = Tail.TWO_SIDED_ABS, limit: int = 10**6) -> np.ndarray:
    """Exact randomization p-values by enumerating every assignment.

    ``complete`` must satisfy the sharp null and carry known compliance.
    """
    if not np.array_equal(complete.y0, complete.y1):
        raise ValueError("exact p-values need a sharp-null table (y0 == y1)")
    Z = mech.enumerate_matrix(limit)
    batch = BatchStatistics(complete.y0, complete.cell, estimands)
    t = batch.compute(Z, kind, complete.compliance == ComplianceStatus.COMPLIER)
    ext = extremity(t, convention)
    ext_obs = extremity(np.atleast_1d(np.asarray(t_obs, dtype=float)), convention)
    return (ext >= ext_obs[None, :] - TIE_TOL).mean(axis=0)


def known_null_table(obs: ObservedDataset, compliance) -> CompleteNullTable:
    return CompleteNullTable(compliance=compliance, y0=obs.y, y1=obs.y, cell=obs.cell,
                             K=obs.K, cell_count=obs.cell_count, ids=obs.ids)
