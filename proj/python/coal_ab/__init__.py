"""Two-species coalescing random walks (A+A->A, B+A->A) on a periodic lattice."""

from ._core import (
    BudgetError,
    NumericalError,
    UsageError,
    mixture,
    covariance_test,
    derive_constants,
    factorial_moment_test,
    fit_a_constant,
    fit_b_exponent,
    gamma_escape,
    kernel,
    mz_ratio_check,
    pair_survival,
    rate_eq,
    simulate,
    site_counts,
    tail_product_test,
)

__all__ = [
    "BudgetError",
    "NumericalError",
    "UsageError",
    "mixture",
    "covariance_test",
    "derive_constants",
    "factorial_moment_test",
    "fit_a_constant",
    "fit_b_exponent",
    "gamma_escape",
    "kernel",
    "mz_ratio_check",
    "pair_survival",
    "rate_eq",
    "simulate",
    "site_counts",
    "tail_product_test",
]
