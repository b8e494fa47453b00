"""Testing models that relate confirmed case counts to epidemic prevalence."""

from .testing_models import KINDS, TestingModel, eval_f, estimate_prevalence
from .timeseries import DailySeries

__all__ = ["KINDS", "DailySeries", "TestingModel", "eval_f", "estimate_prevalence"]
__version__ = "0.1.0"
