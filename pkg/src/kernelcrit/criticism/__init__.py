"""Latent model-criticism tests."""
from .adtest import ad_cdf, ad_sf, ad_statistic, anderson_darling
from .base import TESTS, TestReport
from .ilr import ilr_pvalue, ilr_residuals, ilr_test, link_intervals
from .llrt import MLEFailure, exceedance, llrt_pvalue_mean, log_T
from .mle import MLEResult, maximize_loglik

__all__ = [
    "TESTS", "MLEFailure", "MLEResult", "TestReport", "ad_cdf", "ad_sf", "ad_statistic", "anderson_darling",
    "exceedance", "ilr_pvalue", "ilr_residuals", "ilr_test", "link_intervals", "llrt_pvalue_mean",
    "log_T", "maximize_loglik",
]
