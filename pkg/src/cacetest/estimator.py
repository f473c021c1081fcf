"""scikit-learn style front end for the randomization test."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import adjusters
from .data import ObservedDataset
from .engine import DEFAULT_BURN_IN, DEFAULT_M, AnalysisResult, analyze
from .imputation import CompliancePrior
from .statistics import EstimandDef, StatisticKind, Tail, default_estimands


def check_dataset(X, schema: dict | None = None, K: int | None = None) -> ObservedDataset:
    """Coerce ``X`` to an :class:`ObservedDataset`.

    Accepts an ``ObservedDataset``, a pandas DataFrame with a ``schema``
    (keys ``z``, ``d``, ``y`` and optional ``cell``/``id``), or a 2-D integer
    array with columns ``z, d, cell, y_1 .. y_J``.
    """
    if isinstance(X, ObservedDataset):
        return X
    if hasattr(X, "columns"):
        if schema is None:
            raise ValueError("a DataFrame input needs a schema mapping")
        if X.isna().to_numpy().any():
            raise ValueError("missing values are not permitted")
        y = X[list(schema["y"])].to_numpy()
        cell = X[schema["cell"]].to_numpy() if "cell" in schema else None
        ids = X[schema["id"]].to_numpy() if "id" in schema else None
        y = y.astype(np.int64)
        return ObservedDataset(z=X[schema["z"]].to_numpy(), d=X[schema["d"]].to_numpy(),
                               y=y, cell=cell, ids=ids,
                               K=K if K is not None else max(int(y.max()) + 1, 2))
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] < 4:
        raise ValueError("array input must be 2-D with columns z, d, cell, y_1..y_J")
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.isfinite(arr)) or not np.array_equal(arr, np.round(arr)):
            raise ValueError("array input must hold integer codes")
        arr = arr.astype(np.int64)
    y = arr[:, 3:]
    return ObservedDataset(z=arr[:, 0], d=arr[:, 1], cell=arr[:, 2], y=y,
                           K=K if K is not None else max(int(y.max()) + 1, 2))


def check_alpha(alpha) -> float:
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return alpha


class CACERandomizationTest(BaseEstimator):
    """Posterior predictive randomization test with familywise adjustment.

    Parameters
    ----------
    statistic : {'cace', 'cace_iv', 'itt'}
        Test statistic per estimand: maximum-likelihood CACE, IV-ratio CACE
        or ITT.
    n_iter : int
        Number of imputation-randomization sets ``M``.
    alpha : float
        Familywise level used for :attr:`cutoff_` and :meth:`predict`.
    tail : {'two', 'right', 'left'}
        Which statistics count as extreme.
    burn_in : int
        Gibbs sweeps per compliance imputation.
    adjust : sequence of str or 'all'
        Adjustment methods to report.
    prior_omega, dirichlet_weight :
        Beta prior on the complier share and Dirichlet weight per pattern.
    estimands : sequence of EstimandDef, optional
        Defaults to every (cell, outcome) pair.
    random_state : int, optional
        Master seed; drawn at random (and recorded) when omitted.
    n_jobs : int, optional
        Worker threads; results do not depend on it.

    Attributes
    ----------
    statistic_ : ndarray of shape (n_estimands,)
    nominal_pvalues_ : ndarray of shape (n_estimands,)
    adjusted_pvalues_ : dict of method -> ndarray
    cutoff_ : float
    result_ : AnalysisResult
    """

    def __init__(self, statistic="cace", n_iter=DEFAULT_M, alpha=0.05, tail="two",
                 burn_in=DEFAULT_BURN_IN, adjust="all", prior_omega=(1.0, 1.0),
                 dirichlet_weight=1.0, estimands=None, random_state=None, n_jobs=None):
        self.statistic = statistic
        self.n_iter = n_iter
        self.alpha = alpha
        self.tail = tail
        self.burn_in = burn_in
        self.adjust = adjust
        self.prior_omega = prior_omega
        self.dirichlet_weight = dirichlet_weight
        self.estimands = estimands
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _methods(self) -> Sequence[str]:
        if self.adjust == "all":
            return adjusters.ALL_METHODS
        if isinstance(self.adjust, str):
            return [m.strip() for m in self.adjust.split(",") if m.strip()]
        return list(self.adjust)

    def fit(self, X, y=None, schema=None):
        obs = check_dataset(X, schema)
        if int(self.n_iter) < 1:
            raise ValueError("n_iter must be at least 1")
        estimands = self.estimands or default_estimands(obs)
        for e in estimands:
            if not isinstance(e, EstimandDef):
                raise TypeError("estimands must be EstimandDef instances")
        a, b = self.prior_omega
        result = analyze(
            obs, StatisticKind(self.statistic), estimands,
            prior=CompliancePrior(a, b, self.dirichlet_weight), M=int(self.n_iter),
            alpha=check_alpha(self.alpha), seed=self.random_state, convention=Tail.parse(self.tail),
            burn_in=int(self.burn_in), workers=self.n_jobs, methods=self._methods(),
        )
        self.result_ = result
        self.statistic_ = result.t_obs
        self.nominal_pvalues_ = result.nominal_p
        self.adjusted_pvalues_ = result.adjusted_p
        self.cutoff_ = result.cutoff
        self.n_features_in_ = obs.J
        return self

    def _check_fitted(self) -> AnalysisResult:
        if not hasattr(self, "result_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")
        return self.result_

    def predict(self, X=None, method: str | None = None) -> np.ndarray:
        """Familywise rejection decision per estimand at level ``alpha``.

        ``method`` defaults to ``'randomization'`` when it was computed, else
        the first requested adjustment. ``X`` is ignored: the decision belongs
        to the fitted dataset.
        """
        result = self._check_fitted()
        if method is None:
            method = "randomization" if "randomization" in result.adjusted_p else next(iter(result.adjusted_p))
        return result.rejections(method)

    def summary(self):
        """One dict per estimand: observed effect, nominal and adjusted p-values."""
        return list(self._check_fitted().rows())
