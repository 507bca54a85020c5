"""Numerical laboratory for replica symmetry of the SK model below the AT line."""

from .quadrature import QuadratureRule, build_rule, default_rule, gauss_expect, trapezoid_rule
from .rs import (
    Case,
    ContractViolation,
    ConvergenceError,
    ModelParams,
    RSFixedPoint,
    alpha_param,
    at_line,
    case_classifier,
    m_sigma,
    mmse_check,
    phi_rs,
    sech_moments,
    solve_q,
)

__version__ = "0.1.0"
