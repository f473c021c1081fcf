import numpy as np
import pandas as pd
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cacetest import CACERandomizationTest, simgen
from cacetest.engine import analyze, philox, substream
from cacetest.estimator import check_alpha, check_dataset
from cacetest.statistics import default_estimands


@pytest.fixture(scope="module")
def obs():
    spec = simgen.parse_scenario("combined/alt1/zero/omega=.3")
    return simgen.simulate_observed(spec, philox(substream(21)))[1]


class TestParams:
    def test_get_set_clone(self):
        est = CACERandomizationTest(n_iter=500, random_state=3)
        params = est.get_params()
        assert params["n_iter"] == 500 and params["statistic"] == "cace"
        est.set_params(statistic="itt")
        assert clone(est).get_params() == est.get_params()

    def test_repr(self):
        assert repr(CACERandomizationTest(n_iter=10)) == "CACERandomizationTest(n_iter=10)"


class TestFit:
    def test_matches_engine(self, obs):
        est = CACERandomizationTest(n_iter=300, burn_in=5, random_state=4).fit(obs)
        res = analyze(obs, "cace", default_estimands(obs), M=300, burn_in=5, seed=4)
        assert np.array_equal(est.nominal_pvalues_, res.nominal_p)
        assert np.array_equal(est.adjusted_pvalues_["randomization"], res.adjusted_p["randomization"])
        assert est.n_features_in_ == 3 and est.cutoff_ == res.cutoff

    def test_predict_and_summary(self, obs):
        est = CACERandomizationTest(statistic="itt", n_iter=200, random_state=5, adjust="bonferroni").fit(obs)
        assert est.predict().dtype == bool and est.predict().shape == (3,)
        rows = est.summary()
        assert set(rows[0]) == {"label", "effect", "p_nominal", "p_bonferroni"}

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            CACERandomizationTest().predict()

    def test_array_and_frame_inputs(self, obs):
        arr = np.column_stack([obs.z, obs.d, obs.cell, obs.y])
        a = CACERandomizationTest(statistic="itt", n_iter=100, random_state=6).fit(arr)
        frame = pd.DataFrame(arr, columns=["z", "d", "g", "a", "b", "c"])
        b = CACERandomizationTest(statistic="itt", n_iter=100, random_state=6).fit(
            frame, schema={"z": "z", "d": "d", "cell": "g", "y": ["a", "b", "c"]})
        assert np.array_equal(a.nominal_pvalues_, b.nominal_pvalues_)

    def test_validation(self, obs):
        with pytest.raises(ValueError):
            CACERandomizationTest(alpha=0).fit(obs)
        with pytest.raises(ValueError):
            CACERandomizationTest(n_iter=0).fit(obs)
        with pytest.raises(ValueError):
            check_dataset(np.zeros((3, 2)))
        with pytest.raises(ValueError):
            check_dataset(np.full((3, 4), 0.5))
        assert check_alpha("0.1") == 0.1
