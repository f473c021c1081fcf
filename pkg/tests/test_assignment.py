import itertools
import math

import numpy as np
import pytest
from scipy import stats

from cacetest.assignment import CompleteRandomization, EnumerationLimitError
from cacetest.data import ObservedDataset


class TestCompleteRandomization:
    def test_from_observed(self):
        z = np.r_[np.ones(500), np.zeros(500)]
        obs = ObservedDataset(z=z, d=np.zeros(1000), y=np.zeros(1000, int))
        mech = CompleteRandomization.from_observed(obs)
        assert (mech.n_total, mech.n_treated) == (1000, 500)

    def test_empty(self):
        obs = ObservedDataset(z=np.zeros(0), d=np.zeros(0), y=np.zeros((0, 1), int))
        mech = CompleteRandomization.from_observed(obs)
        assert (mech.n_total, mech.n_treated) == (0, 0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            CompleteRandomization(3, 4)

    @pytest.mark.parametrize("n, k, expected", [(3, 0, [0, 0, 0]), (3, 3, [1, 1, 1])])
    def test_edge_draws(self, n, k, expected):
        rng = np.random.default_rng(1)
        mech = CompleteRandomization(n, k)
        for _ in range(5):
            assert mech.draw(rng).tolist() == expected

    def test_draws_have_fixed_count(self):
        Z = CompleteRandomization(50, 17).draw(np.random.default_rng(2), size=200)
        assert Z.shape == (200, 50) and (Z.sum(axis=1) == 17).all()

    def test_uniform_over_six(self):
        Z = CompleteRandomization(4, 2).draw(np.random.default_rng(3), size=60_000)
        codes = Z @ (1 << np.arange(4))
        freq = np.array([np.mean(codes == c) for c in np.unique(codes)])
        assert freq.size == 6
        assert np.all(np.abs(freq - 1 / 6) < 0.01)

    @pytest.mark.parametrize("n, k", [(5, 2), (6, 3)])
    def test_chi_square(self, n, k):
        mech = CompleteRandomization(n, k)
        space = {tuple(v) for v in mech.enumerate_matrix().tolist()}
        Z = mech.draw(np.random.default_rng(4), size=30_000)
        index = {v: i for i, v in enumerate(sorted(space))}
        counts = np.bincount([index[tuple(r)] for r in Z.tolist()], minlength=len(space))
        assert stats.chisquare(counts).pvalue > 0.001


class TestEnumerate:
    @pytest.mark.parametrize("n, k", [(4, 2), (6, 3), (5, 0), (5, 5)])
    def test_counts_and_distinct(self, n, k):
        rows = [tuple(v) for v in CompleteRandomization(n, k).enumerate()]
        assert len(rows) == math.comb(n, k) == len(set(rows))
        assert all(sum(r) == k for r in rows)

    def test_matches_itertools(self):
        got = {tuple(np.flatnonzero(v)) for v in CompleteRandomization(6, 3).enumerate()}
        assert got == set(itertools.combinations(range(6), 3))

    def test_colex_order(self):
        rows = [tuple(np.flatnonzero(v)) for v in CompleteRandomization(4, 2).enumerate()]
        assert rows == [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)]

    def test_limit(self):
        with pytest.raises(EnumerationLimitError, match="enumeration limit exceeded"):
            list(CompleteRandomization(30, 15).enumerate(limit=10**6))
