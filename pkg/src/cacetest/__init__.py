"""Posterior predictive randomization tests for complier effects with familywise adjustment."""
from .adjusters import AdjustmentMethod, bonferroni, hochberg, holm, hommel
from .assignment import CompleteRandomization, EnumerationLimitError
from .data import (CompleteNullTable, ComplianceStatus, DataError, ObservedDataset,
                   ObservedUnit, ScienceTable, impute_sharp_null, load_dataset, reobserve)
from .engine import (AnalysisResult, IterationMatrix, adjust_randomization, analyze,
                     exact_pvalue, familywise_cutoff, hypothetical_pvalue_matrix,
                     nominal_pvalues, run_iterations)
from .estimator import CACERandomizationTest
from .imputation import CompliancePrior, ComplianceModelState, impute_compliance
from .statistics import EstimandDef, StatisticKind, Tail, cace, cace_iv, itt, statistic_vector

__version__ = "0.1.0"
