import numpy as np
import pytest

from cacetest import simgen
from cacetest.data import ComplianceStatus, ObservedDataset, ObservedUnit
from cacetest.engine import philox, substream
from cacetest.imputation import (ComplianceModelState, CompliancePrior, GroupedSampler,
                                 complier_posterior_prob, gibbs_sweep, impute_compliance,
                                 n_patterns, pattern_index)

C, NT = int(ComplianceStatus.COMPLIER), int(ComplianceStatus.NEVER_TAKER)


def scenario_state(omega=0.1):
    eta = np.empty((1, 2, 3))
    eta[0, C] = (0.45, 0.45, 0.10)
    eta[0, NT] = (0.02, 0.02, 0.96)
    return ComplianceModelState(omega, eta)


def control_unit(y, cell=0):
    return ObservedUnit(0, cell, 0, 0, tuple(y))


class TestPatternIndex:
    def test_binary_corners(self):
        assert pattern_index((0, 0, 0), 2) == 0
        assert pattern_index((1, 1, 1), 2) == 7
        assert pattern_index((0, 0, 1), 2) == 1

    def test_single_outcome(self):
        assert pattern_index((2,), 3) == 2

    def test_bijective(self):
        ys = np.array(np.meshgrid(*[range(3)] * 3, indexing="ij")).reshape(3, -1).T
        codes = pattern_index(ys, 3)
        assert sorted(codes.tolist()) == list(range(n_patterns(3, 3)))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            pattern_index((0, 2), 2)


class TestPosteriorProb:
    def test_bayes_rule_example(self):
        # .1 * .45 / (.1 * .45 + .9 * .02)
        expected = 0.045 / 0.063
        p = complier_posterior_prob(control_unit((0,)), scenario_state(), 3)
        assert p == pytest.approx(expected, rel=1e-12)
        assert round(p, 4) == 0.7143

    def test_equal_densities_give_omega(self):
        eta = np.full((1, 2, 3), 1 / 3)
        assert complier_posterior_prob(control_unit((1,)), ComplianceModelState(0.37, eta), 3) \
            == pytest.approx(0.37)

    def test_omega_one(self):
        for y in range(3):
            assert complier_posterior_prob(control_unit((y,)), scenario_state(1.0), 3) == 1.0

    def test_monotone_in_omega(self):
        probs = [complier_posterior_prob(control_unit((2,)), scenario_state(w), 3)
                 for w in np.linspace(0.01, 0.99, 25)]
        assert np.all(np.diff(probs) > 0)

    def test_sum_rule(self):
        state = scenario_state(0.3)
        for y in range(3):
            pc = complier_posterior_prob(control_unit((y,)), state, 3)
            num_n = 0.7 * state.eta[0, NT, y]
            pn = num_n / (0.3 * state.eta[0, C, y] + num_n)
            assert pc + pn == pytest.approx(1.0, abs=1e-15)

    def test_treated_unit_rejected(self):
        with pytest.raises(ValueError):
            complier_posterior_prob(ObservedUnit(0, 0, 1, 1, (0,)), scenario_state(), 3)

    def test_state_validation(self):
        with pytest.raises(ValueError):
            ComplianceModelState(0.5, np.full((1, 2, 3), 0.5))


def single_null_data(seed=7, omega=0.1):
    spec = simgen.ScenarioSpec("noncompliance_single", "null", omega_c=omega)
    return simgen.simulate_observed(spec, philox(substream(seed)))


class TestGibbs:
    def test_no_controls(self):
        obs = ObservedDataset(z=[1, 1, 1], d=[1, 0, 1], y=[0, 1, 2], K=3)
        rng = np.random.default_rng(0)
        state, comp = gibbs_sweep(scenario_state(), obs, obs.compliance(), rng)
        assert comp.tolist() == [C, NT, C]
        assert impute_compliance(obs, rng=rng).tolist() == [C, NT, C]

    def test_degenerate_prior_imputes_compliers(self):
        _, obs = single_null_data()
        prior = CompliancePrior(omega_a=1e7, omega_b=1e-3)
        draws = impute_compliance(obs, prior, burn_in=20, rng=np.random.default_rng(1), n_chains=20)
        assert (draws[:, obs.z == 0] == C).mean() > 0.999

    def test_omega_posterior_mean(self):
        _, obs = single_null_data(seed=8)
        rng = np.random.default_rng(2)
        comp = obs.compliance()
        comp[obs.z == 0] = np.where(rng.random((obs.z == 0).sum()) < 0.5, C, NT)
        state = scenario_state(0.5)
        omegas = []
        for sweep in range(200):
            state, comp = gibbs_sweep(state, obs, comp, rng)
            if sweep >= 50:
                omegas.append(state.omega_c)
        assert abs(np.mean(omegas) - 0.10) <= 0.04

    def test_two_unit_symmetry(self):
        obs = ObservedDataset(z=[0, 0], d=[0, 0], y=[0, 1], K=2)
        draws = impute_compliance(obs, burn_in=10, rng=np.random.default_rng(3), n_chains=10_000)
        share = (draws == C).mean(axis=0)
        assert np.all(np.abs(share - 0.5) <= 0.02)

    def test_treated_statuses_fixed(self):
        _, obs = single_null_data(seed=9)
        draws = impute_compliance(obs, burn_in=5, rng=np.random.default_rng(4), n_chains=50)
        treated = obs.z == 1
        assert (draws[:, treated] == obs.compliance()[treated]).all()
        assert np.isin(draws, (C, NT)).all()

    def test_burn_in_validation(self):
        _, obs = single_null_data()
        with pytest.raises(ValueError):
            impute_compliance(obs, burn_in=0)


class TestGroupedSampler:
    def two_cell_data(self):
        rng = np.random.default_rng(10)
        N = 120
        z = (rng.random(N) < 0.5).astype(int)
        cell = rng.integers(0, 2, N)
        comp = rng.random(N) < 0.4
        y = np.column_stack([rng.random(N) < np.where(comp, 0.7, 0.3),
                             rng.random(N) < np.where(comp, 0.6, 0.4)]).astype(int)
        return ObservedDataset(z=z, d=z * comp, y=y, cell=cell, K=2)

    def test_matches_unit_level_sampler(self):
        """Stationary complier shares agree between the collapsed and unit-level chains."""
        obs = self.two_cell_data()
        control = obs.z == 0
        grouped = GroupedSampler(obs).run(4000, 30, np.random.default_rng(11))
        share_grouped = (grouped[:, control] == C).mean(axis=0)

        rng = np.random.default_rng(12)
        P = obs.K ** obs.J
        hits = np.zeros(control.sum())
        n_chains = 1500
        for _ in range(n_chains):
            comp = obs.compliance()
            comp[control] = np.where(rng.random(control.sum()) < 0.5, C, NT)
            eta = rng.dirichlet(np.ones(P), size=(obs.cell_count, 2))
            state = ComplianceModelState(0.5, eta)
            for _ in range(30):
                state, comp = gibbs_sweep(state, obs, comp, rng)
            hits += comp[control] == C
        share_unit = hits / n_chains
        # pooled comparison plus per-unit agreement within MC noise
        assert abs(share_grouped.mean() - share_unit.mean()) < 0.015
        se = np.sqrt(0.25 / 4000 + 0.25 / n_chains)
        assert np.mean(np.abs(share_grouped - share_unit) < 4 * se) > 0.97

    def test_sufficient_statistics_ignore_control_order(self):
        obs = self.two_cell_data()
        perm = np.arange(obs.N)
        control = np.flatnonzero(obs.z == 0)
        perm[control] = np.random.default_rng(13).permutation(control)
        shuffled = ObservedDataset(z=obs.z[perm], d=obs.d[perm], y=obs.y[perm],
                                   cell=obs.cell[perm], K=2)
        a, b = GroupedSampler(obs), GroupedSampler(shuffled)
        assert np.array_equal(a.n0, b.n0) and np.array_equal(a.c1, b.c1)
        assert np.array_equal(a.nt1, b.nt1)
        # group-level draws consume the stream identically
        ka = a._draw_params(np.zeros((3, a.G)), np.random.default_rng(14))
        kb = b._draw_params(np.zeros((3, b.G)), np.random.default_rng(14))
        assert np.array_equal(ka, kb)

    def test_single_outcome_is_special_case(self):
        _, obs = single_null_data(seed=15)
        s = GroupedSampler(obs)
        assert s.P == 3 and s.G == 3
