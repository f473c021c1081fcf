"""Synthetic Science tables and replication grids for the simulation studies.

Three scenario families share one generator:

* ``noncompliance_single``: one 3-category outcome, compliers and never-takers.
* ``multiple_no_compliance``: three outcomes, everyone complies.
* ``combined``: three outcomes with one-sided non-compliance.

Outcomes in each arm are generated independently of the other arm.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import adjusters
from .assignment import CompleteRandomization
from .data import ComplianceStatus, ObservedDataset, ScienceTable, reobserve
from .engine import (DEFAULT_BURN_IN, analyze, default_workers, philox, resolve_seed,
                     substream)
from .imputation import CompliancePrior
from .statistics import StatisticKind, Tail, default_estimands


class Family(str, Enum):
    NONCOMPLIANCE_SINGLE = "noncompliance_single"
    MULTIPLE_NO_COMPLIANCE = "multiple_no_compliance"
    COMBINED = "combined"


class Hypothesis(str, Enum):
    NULL = "null"
    ALT = "alt"
    ALT1 = "alt1"
    ALT2 = "alt2"
    ALT3 = "alt3"


class Correlation(str, Enum):
    ZERO = "zero"
    PARTIAL = "partial"
    PERFECT = "perfect"


BASE_CONTROL = (0.45, 0.45, 0.10)
NEVER_TAKER = (0.02, 0.02, 0.96)
COMPLIER_TREATED_ALT = (0.80, 0.10, 0.10)
MULTIPLE_TREATED_ALT = (0.50, 0.45, 0.05)
COMBINED_COMPLIER_CONTROL = {
    Hypothesis.NULL: BASE_CONTROL,
    Hypothesis.ALT1: BASE_CONTROL,
    Hypothesis.ALT2: (0.30, 0.60, 0.10),
    Hypothesis.ALT3: (0.25, 0.55, 0.20),
}

_LEGAL = {
    Family.NONCOMPLIANCE_SINGLE: {Hypothesis.NULL, Hypothesis.ALT},
    Family.MULTIPLE_NO_COMPLIANCE: {Hypothesis.NULL, Hypothesis.ALT},
    Family.COMBINED: {Hypothesis.NULL, Hypothesis.ALT1, Hypothesis.ALT2, Hypothesis.ALT3},
}
_DEFAULT_OMEGA = {Family.NONCOMPLIANCE_SINGLE: 0.1, Family.MULTIPLE_NO_COMPLIANCE: 1.0,
                  Family.COMBINED: 0.1}
_DEFAULT_J = {Family.NONCOMPLIANCE_SINGLE: 1, Family.MULTIPLE_NO_COMPLIANCE: 3,
              Family.COMBINED: 3}


@dataclass(frozen=True)
class ScenarioSpec:
    family: Family
    hypothesis: Hypothesis = Hypothesis.NULL
    correlation: Correlation = Correlation.ZERO
    omega_c: float | None = None
    N: int = 1000
    n_treated: int | None = None
    J: int | None = None

    def __post_init__(self):
        fam = Family(self.family)
        hyp = Hypothesis(self.hypothesis)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "hypothesis", hyp)
        object.__setattr__(self, "correlation", Correlation(self.correlation))
        if hyp not in _LEGAL[fam]:
            raise ValueError(f"hypothesis {hyp.value!r} is not defined for family {fam.value!r}")
        if self.omega_c is None:
            object.__setattr__(self, "omega_c", _DEFAULT_OMEGA[fam])
        if self.J is None:
            object.__setattr__(self, "J", _DEFAULT_J[fam])
        if self.n_treated is None:
            object.__setattr__(self, "n_treated", self.N // 2)
        if not 0 < self.omega_c <= 1:
            raise ValueError("omega_c must lie in (0, 1]")
        if fam is Family.MULTIPLE_NO_COMPLIANCE and self.omega_c != 1:
            raise ValueError("multiple_no_compliance has full compliance (omega_c = 1)")
        if self.J == 1 and self.correlation is not Correlation.ZERO:
            raise ValueError("correlation structures need J > 1")
        if self.J not in (1, 3) and self.correlation is Correlation.PARTIAL:
            raise ValueError("partial correlation is defined for three outcomes")
        if not 0 <= self.n_treated <= self.N:
            raise ValueError("n_treated must lie in 0..N")

    @property
    def name(self) -> str:
        return f"{self.family.value}/{self.hypothesis.value}/{self.correlation.value}/omega={self.omega_c:g}"


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse ``family/hypothesis[/correlation][/omega=x][/N=n]`` tokens."""
    parts = [p for p in text.strip().split("/") if p]
    if not parts:
        raise ValueError("empty scenario name")
    kwargs: dict = {"family": Family(parts[0])}
    for tok in parts[1:]:
        m = re.fullmatch(r"(omega|N|n_treated|J)=(.+)", tok)
        if m:
            key, val = m.groups()
            kwargs["omega_c" if key == "omega" else key] = float(val) if key == "omega" else int(val)
        elif tok in Hypothesis._value2member_map_:
            kwargs["hypothesis"] = Hypothesis(tok)
        elif tok in Correlation._value2member_map_:
            kwargs["correlation"] = Correlation(tok)
        else:
            raise ValueError(f"unknown scenario token {tok!r}")
    return ScenarioSpec(**kwargs)


def marginal(klass: ComplianceStatus, z: int, hypothesis: Hypothesis | str,
             family: Family | str) -> tuple:
    """Outcome category probabilities for one class in one arm."""
    family, hypothesis = Family(family), Hypothesis(hypothesis)
    if hypothesis not in _LEGAL[family]:
        raise ValueError(f"hypothesis {hypothesis.value!r} is not defined for {family.value!r}")
    klass = ComplianceStatus(klass)
    if klass not in (ComplianceStatus.COMPLIER, ComplianceStatus.NEVER_TAKER):
        raise ValueError(f"no outcome model for {klass.name}")
    if family is Family.MULTIPLE_NO_COMPLIANCE:
        if klass is not ComplianceStatus.COMPLIER:
            raise ValueError("multiple_no_compliance has no never-takers")
        if z == 1 and hypothesis is Hypothesis.ALT:
            return MULTIPLE_TREATED_ALT
        return BASE_CONTROL
    if klass is ComplianceStatus.NEVER_TAKER:
        return NEVER_TAKER
    if z == 1 and hypothesis is not Hypothesis.NULL:
        return COMPLIER_TREATED_ALT
    if family is Family.COMBINED:
        return COMBINED_COMPLIER_CONTROL[hypothesis]
    return BASE_CONTROL


def draw_marginal(klass, z, hypothesis, family, rng: np.random.Generator, size=None):
    probs = marginal(klass, z, hypothesis, family)
    return rng.choice(len(probs), size=size, p=probs)


def apply_correlation(first: np.ndarray, second_fresh: np.ndarray, third_fresh: np.ndarray,
                      mode: Correlation | str, rng: np.random.Generator) -> np.ndarray:
    """Combine a first draw with independent fresh draws into three correlated outcomes.

    ``partial``: the second copies the first with probability 1/2; the third
    copies the first or the second with probability 1/3 each.
    """
    mode = Correlation(mode)
    first = np.asarray(first)
    if mode is Correlation.ZERO:
        return np.stack([first, second_fresh, third_fresh], axis=-1)
    if mode is Correlation.PERFECT:
        return np.stack([first, first, first], axis=-1)
    second = np.where(rng.random(first.shape) < 0.5, first, second_fresh)
    u = rng.random(first.shape)
    third = np.where(u < 1 / 3, first, np.where(u < 2 / 3, second, third_fresh))
    return np.stack([first, second, third], axis=-1)


def _arm_outcomes(spec: ScenarioSpec, compliance: np.ndarray, z: int, rng) -> np.ndarray:
    N = compliance.shape[0]
    draws = np.empty((spec.J, N), dtype=np.int64)
    for klass in (ComplianceStatus.COMPLIER, ComplianceStatus.NEVER_TAKER):
        idx = np.flatnonzero(compliance == klass)
        if idx.size:
            probs = marginal(klass, z, spec.hypothesis, spec.family)
            draws[:, idx] = rng.choice(len(probs), size=(spec.J, idx.size), p=probs)
    if spec.J == 1:
        return draws.T
    if spec.J == 3:
        return apply_correlation(draws[0], draws[1], draws[2], spec.correlation, rng)
    if spec.correlation is Correlation.PERFECT:
        return np.repeat(draws[:1].T, spec.J, axis=1)
    return draws.T


def generate(spec: ScenarioSpec, rng: np.random.Generator) -> ScienceTable:
    """Sample ``N`` units from the super-population and fill in both arms."""
    if spec.omega_c >= 1:
        compliance = np.full(spec.N, ComplianceStatus.COMPLIER, dtype=np.int8)
    else:
        compliance = np.where(rng.random(spec.N) < spec.omega_c,
                              ComplianceStatus.COMPLIER, ComplianceStatus.NEVER_TAKER).astype(np.int8)
    y0 = _arm_outcomes(spec, compliance, 0, rng)
    y1 = _arm_outcomes(spec, compliance, 1, rng)
    return ScienceTable(compliance=compliance, y0=y0, y1=y1, cell=np.zeros(spec.N, dtype=np.int64),
                        K=3, cell_count=1)


def simulate_observed(spec: ScenarioSpec, rng: np.random.Generator):
    """Generate a Science table and observe it under a fresh actual assignment."""
    table = generate(spec, rng)
    z = CompleteRandomization(spec.N, spec.n_treated).draw(rng)
    return table, reobserve(table, z)


# ----------------------------------------------------------------- replication


@dataclass
class ReplicationResult:
    spec: ScenarioSpec
    reps: int
    alpha: float
    rejections: dict
    pvalues: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def rate(self, kind: str, method: str) -> float:
        return float(np.mean(self.rejections[(kind, method)]))

    def se(self, kind: str, method: str) -> float:
        r = self.rate(kind, method)
        return float(np.sqrt(r * (1 - r) / self.reps))

    def table(self):
        for (kind, method), hits in self.rejections.items():
            yield {"statistic": kind, "method": method, "rate": self.rate(kind, method),
                   "se": self.se(kind, method), "rejections": int(np.sum(hits))}


def _one_rep(spec, kinds, methods, M, alpha, seq, burn_in, convention, prior, order):
    rng = philox(substream(seq, 0))
    _, obs = simulate_observed(spec, rng)
    estimands = default_estimands(obs)
    out = {}
    for k_i, kind in enumerate(kinds):
        res = analyze(obs, kind, estimands, prior=prior, M=M, alpha=alpha,
                      seed=substream(seq, 1, k_i), convention=convention, burn_in=burn_in,
                      methods=[m for m in methods if m != "nominal"], workers=1, order=order)
        for method in methods:
            p = res.nominal_p if method == "nominal" else res.adjusted_p[method]
            out[(kind, method)] = (bool(np.min(p) <= alpha), np.asarray(p).tolist())
    return out


def replicate(spec: ScenarioSpec, kinds: Sequence[str] = ("itt", "cace"),
              methods: Sequence[str] = adjusters.ALL_METHODS, reps: int = 1000, M: int = 2000,
              alpha: float = 0.05, seed=None, burn_in: int = DEFAULT_BURN_IN,
              convention: Tail | str = Tail.TWO_SIDED_ABS, prior: CompliancePrior = CompliancePrior(),
              workers: int | None = None, order: str = "impute_first") -> ReplicationResult:
    """Rejection rates of each (statistic, method) over ``reps`` simulated experiments.

    A replication rejects when the smallest adjusted p-value is <= ``alpha``;
    the pseudo-method ``"nominal"`` uses the unadjusted p-values.
    """
    kinds = [StatisticKind(k).value for k in kinds]
    methods = list(methods)
    seq = resolve_seed(seed)
    workers = default_workers() if workers is None else workers
    args = [(spec, kinds, methods, M, alpha, substream(seq, r), burn_in, convention, prior, order)
            for r in range(reps)]
    if workers > 1:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=workers)(delayed(_one_rep)(*a) for a in args)
    else:
        results = [_one_rep(*a) for a in args]
    rejections = {(k, m): np.array([r[(k, m)][0] for r in results]) for k in kinds for m in methods}
    pvalues = {(k, m): np.array([r[(k, m)][1] for r in results]) for k in kinds for m in methods}
    config = {"scenario": spec.name, "reps": reps, "M": M, "alpha": alpha,
              "seed": int(seq.entropy), "burn_in": burn_in, "tail": Tail.parse(convention).value}
    return ReplicationResult(spec, reps, alpha, rejections, pvalues, config)


# ----------------------------------------------------------------- JTPA-shaped fixture


def jtpa_like(rng: np.random.Generator, n_treated: int = 5009, n_control: int = 2395,
              treated_compliers: int = 3316, female_share: float = 0.58) -> ObservedDataset:
    """Synthetic dataset shaped like the restricted JTPA extract.

    Two cells (0 = female, 1 = male), three binary employment outcomes, one-sided
    non-compliance and roughly a 2:1 assignment ratio. Compliers are employed
    more often than never-takers and receipt adds a small lift for women in the
    later periods. Outcome levels are illustrative, not fitted to the study.
    """
    N = n_treated + n_control
    z = np.zeros(N, dtype=np.int8)
    z[rng.permutation(N)[:n_treated]] = 1
    cell = (rng.random(N) >= female_share).astype(np.int64)
    omega = treated_compliers / n_treated
    complier = rng.random(N) < omega
    treated_idx = np.flatnonzero(z == 1)
    complier[treated_idx] = False
    complier[rng.choice(treated_idx, treated_compliers, replace=False)] = True
    # latent employability shared across periods gives correlated outcomes
    base = np.where(complier, 0.80, 0.66) + np.where(cell == 1, 0.03, 0.0)
    latent = np.clip(base + rng.normal(0, 0.18, N), 0.02, 0.98)
    lift = np.array([0.005, 0.035, 0.05])
    receives = (z == 1) & complier
    y = np.empty((N, 3), dtype=np.int64)
    for t in range(3):
        p = latent + np.where(receives & (cell == 0), lift[t], 0.0) - 0.03 * (t == 2)
        y[:, t] = rng.random(N) < np.clip(p, 0, 1)
    return ObservedDataset(z=z, d=receives.astype(np.int8), y=y, cell=cell, K=2, cell_count=2,
                           ids=np.arange(1, N + 1))
