"""Null posterior predictive imputation of missing compliance statuses.

Under the null the outcome vector is a covariate, so each (cell, class) pair has
one Multinomial distribution over the ``K**J`` joint outcome patterns. Priors
are Beta on the complier share and Dirichlet on every pattern distribution;
the sampler alternates (a) compliance draws for control units by Bayes' rule
and (b) conjugate parameter draws. A single outcome is the ``J = 1`` case.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .data import ComplianceStatus, ObservedDataset

_TINY = np.finfo(float).tiny
C = int(ComplianceStatus.COMPLIER)
NT = int(ComplianceStatus.NEVER_TAKER)


@dataclass(frozen=True)
class CompliancePrior:
    omega_a: float = 1.0
    omega_b: float = 1.0
    dirichlet_weight: float = 1.0

    def __post_init__(self):
        if min(self.omega_a, self.omega_b, self.dirichlet_weight) <= 0:
            raise ValueError("prior hyperparameters must be positive")


@dataclass(frozen=True, eq=False)
class ComplianceModelState:
    """Complier share ``omega_c`` and pattern distributions ``eta[cell, class]``.

    ``eta`` has shape ``(cell_count, 2, K**J)``; the class axis is indexed by
    ``ComplianceStatus.NEVER_TAKER`` (0) and ``ComplianceStatus.COMPLIER`` (1).
    """

    omega_c: float
    eta: np.ndarray

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        if eta.ndim != 3 or eta.shape[1] != 2:
            raise ValueError("eta must have shape (cells, 2, patterns)")
        if not 0 < self.omega_c < 1 and self.omega_c not in (0.0, 1.0):
            raise ValueError("omega_c must be a probability")
        if (eta < 0).any() or not np.allclose(eta.sum(axis=-1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("each eta vector must be a probability vector")
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)


def pattern_index(y, K: int):
    """Mixed-radix code of an outcome vector, first outcome most significant.

    Works on a single vector or on an ``(N, J)`` array (one code per row).
    """
    y = np.asarray(y, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"outcome category out of range 0..{K - 1}")
    J = y.shape[-1]
    weights = K ** np.arange(J - 1, -1, -1, dtype=np.int64)
    out = y @ weights
    return int(out) if out.ndim == 0 else out


def n_patterns(K: int, J: int) -> int:
    return K**J


def complier_posterior_prob(unit, state: ComplianceModelState, K: int) -> float:
    """P(complier | y, cell) for a control unit by Bayes' rule."""
    if unit.z != 0:
        raise ValueError("only control units have unknown compliance")
    p = pattern_index(unit.y_obs, K)
    w = state.omega_c
    gc = state.eta[unit.cell, C, p]
    gn = state.eta[unit.cell, NT, p]
    num = w * gc
    den = num + (1.0 - w) * gn
    if den <= 0:
        raise FloatingPointError("both class densities vanish at the observed pattern")
    return float(num / den)


def draw_prior_state(prior: CompliancePrior, cell_count: int, P: int,
                     rng: np.random.Generator) -> ComplianceModelState:
    omega = rng.beta(prior.omega_a, prior.omega_b)
    eta = rng.dirichlet(np.full(P, prior.dirichlet_weight), size=(cell_count, 2))
    return ComplianceModelState(float(omega), eta)


def _pattern_codes(obs: ObservedDataset) -> np.ndarray:
    return pattern_index(obs.y, obs.K)


def gibbs_sweep(state: ComplianceModelState, obs: ObservedDataset, compliance: np.ndarray,
                rng: np.random.Generator, prior: CompliancePrior = CompliancePrior()):
    """One unit-level sweep of a single chain: (a) control statuses, (b) parameters.

    Returns ``(new_state, new_compliance)``. Treated units keep their observed status.
    """
    comp = np.array(compliance, dtype=np.int8, copy=True)
    codes = _pattern_codes(obs)
    control = np.flatnonzero(obs.z == 0)
    if control.size:
        cells = obs.cell[control]
        pc = codes[control]
        w = state.omega_c
        num = w * state.eta[cells, C, pc]
        p = num / (num + (1.0 - w) * state.eta[cells, NT, pc])
        comp[control] = np.where(rng.random(control.size) < p, C, NT)
    treated = obs.z == 1
    comp[treated] = obs.compliance()[treated]

    P = obs.K**obs.J
    is_c = comp == C
    omega = rng.beta(prior.omega_a + is_c.sum(), prior.omega_b + (~is_c).sum())
    eta = np.empty((obs.cell_count, 2, P))
    for cell in range(obs.cell_count):
        in_cell = obs.cell == cell
        for klass, sel in ((C, is_c), (NT, ~is_c)):
            counts = np.bincount(codes[in_cell & sel], minlength=P)
            eta[cell, klass] = rng.dirichlet(prior.dirichlet_weight + counts)
    return ComplianceModelState(float(omega), eta), comp


class GroupedSampler:
    """Data augmentation on per-(cell, pattern) complier counts for many chains.

    Control units sharing a cell and an outcome pattern are exchangeable given
    the parameters, so step (a) reduces to one Binomial draw per group and the
    parameter draws only need the group counts. Only the last step (a) is done
    per unit, which gives the same joint law as running every sweep per unit.
    """

    def __init__(self, obs: ObservedDataset, prior: CompliancePrior = CompliancePrior()):
        self.obs = obs
        self.prior = prior
        self.P = obs.K**obs.J
        self.G = obs.cell_count * self.P
        codes = _pattern_codes(obs)
        group = obs.cell * self.P + codes
        z, d = obs.z, obs.d
        self.control = np.flatnonzero(z == 0)
        self.control_group = group[self.control]
        self.n0 = np.bincount(self.control_group, minlength=self.G).astype(np.int64)
        self.c1 = np.bincount(group[(z == 1) & (d == 1)], minlength=self.G).astype(float)
        self.nt1 = np.bincount(group[(z == 1) & (d == 0)], minlength=self.G).astype(float)
        n1 = int((z == 1).sum())
        self.init_rate = float(d[z == 1].mean()) if n1 else 0.5
        self.base = obs.compliance().copy()

        self.active = np.flatnonzero(self.n0 > 0)
        self.active_cell = self.active // self.P
        self.active_onehot = np.zeros((self.active.size, obs.cell_count))
        self.active_onehot[np.arange(self.active.size), self.active_cell] = 1.0
        inactive = self.n0 == 0
        group_cell = np.arange(self.G) // self.P
        self.pooled_cells = np.unique(group_cell[inactive])
        self.pool_matrix = np.zeros((self.G, self.pooled_cells.size))
        for j, c in enumerate(self.pooled_cells):
            self.pool_matrix[inactive & (group_cell == c), j] = 1.0
        n_inactive = self.pool_matrix.sum(axis=0)
        self.pooled_shape_c = prior.dirichlet_weight * n_inactive
        self.pooled_shape_n = prior.dirichlet_weight * n_inactive

    def _draw_params(self, k: np.ndarray, rng: np.random.Generator):
        """Step (b) for every chain; returns log-odds of being a complier per group."""
        prior = self.prior
        cc = self.c1 + k
        nn = self.nt1 + (self.n0 - k)
        omega = rng.beta(prior.omega_a + cc.sum(axis=1), prior.omega_b + nn.sum(axis=1))
        B = k.shape[0]
        w = prior.dirichlet_weight
        # Only groups holding control units need their own Gamma draw; the rest
        # enter the Dirichlet normaliser through one pooled Gamma per cell.
        act = self.active
        gc = np.maximum(rng.standard_gamma(w + cc[:, act]), _TINY)
        gn = np.maximum(rng.standard_gamma(w + nn[:, act]), _TINY)
        sc = gc @ self.active_onehot
        sn = gn @ self.active_onehot
        if self.pooled_cells.size:
            pc = self.pooled_shape_c + cc @ self.pool_matrix
            pn = self.pooled_shape_n + nn @ self.pool_matrix
            sc[:, self.pooled_cells] += rng.standard_gamma(pc)
            sn[:, self.pooled_cells] += rng.standard_gamma(pn)
        log_ratio = np.log(gc / gn) + np.log(sn / sc)[:, self.active_cell]
        with np.errstate(divide="ignore"):
            log_odds_w = np.log(omega) - np.log1p(-omega)
        out = np.full((B, self.G), -np.inf)
        out[:, act] = log_odds_w[:, None] + log_ratio
        return out

    def run(self, n_chains: int, burn_in: int, rng: np.random.Generator) -> np.ndarray:
        """Final compliance draw of ``n_chains`` fresh chains, shape ``(n_chains, N)``."""
        if burn_in < 1:
            raise ValueError("burn_in must be at least 1")
        act, n0 = self.active, self.n0[self.active]
        k = np.zeros((n_chains, self.G))
        k[:, act] = rng.binomial(np.broadcast_to(n0, (n_chains, act.size)), self.init_rate)
        log_odds = self._draw_params(k, rng)
        for _ in range(burn_in - 1):
            k[:, act] = rng.binomial(n0, expit(log_odds[:, act]))
            log_odds = self._draw_params(k, rng)
        p_unit = expit(log_odds[:, self.control_group])
        out = np.broadcast_to(self.base, (n_chains, self.obs.N)).copy()
        out[:, self.control] = np.where(rng.random(p_unit.shape) < p_unit, C, NT)
        return out


def impute_compliance(obs: ObservedDataset, prior: CompliancePrior = CompliancePrior(),
                      burn_in: int = 50, rng: np.random.Generator | None = None,
                      n_chains: int | None = None) -> np.ndarray:
    """Draw missing compliance statuses from their null posterior predictive.

    Each chain starts with control statuses drawn at the observed treated-arm
    compliance rate and runs ``burn_in`` sweeps; the last draw is returned.
    Returns shape ``(N,)``, or ``(n_chains, N)`` when ``n_chains`` is given.
    """
    rng = np.random.default_rng() if rng is None else rng
    draws = GroupedSampler(obs, prior).run(1 if n_chains is None else n_chains, burn_in, rng)
    return draws[0] if n_chains is None else draws
