"""Replica-symmetric fixed point and the scalar quantities built on it."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .quadrature import (
    QuadratureRule,
    default_rule,
    gauss_expect,
    log_cosh,
    sech2,
    sech4,
    tanh2,
)

LOG2 = math.log(2.0)
RESIDUAL_TOL = 1e-12
AT_LINE_H_MAX = 10.0


class ConvergenceError(RuntimeError):
    """A root finder failed; the message carries the last bracket."""


class ContractViolation(AssertionError):
    """A numerically evaluated statement contradicts a proven inequality."""


@dataclass(frozen=True)
class ModelParams:
    beta: float
    h: float

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not (math.isfinite(self.h) and self.h >= 0):
            raise ValueError(f"h must be nonnegative and finite, got {self.h}")


@dataclass(frozen=True)
class RSFixedPoint:
    params: ModelParams
    q: float
    alpha: float
    sigma2: float
    residual: float

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def lambda_max(self) -> float:
        return self.params.beta**2 * (1.0 - self.q)


class Case(enum.Enum):
    CaseI = "CaseI"
    CaseII = "CaseII"


def _tanh2_mean(beta: float, h: float, q: float, rule: QuadratureRule) -> float:
    return gauss_expect(rule, tanh2, h, beta * math.sqrt(max(q, 0.0)))


def fixed_point_map(params: ModelParams, q: float, rule: QuadratureRule | None = None) -> float:
    """q -> E[tanh^2(beta sqrt(q) Z + h)]."""
    return _tanh2_mean(params.beta, params.h, q, rule or default_rule())


def solve_q(params: ModelParams, rule: QuadratureRule | None = None) -> RSFixedPoint:
    """Solve q = E[tanh^2(beta sqrt(q) Z + h)].

    For h > 0 the root is unique and bracketed by [0, 1].  At h = 0 the
    point q = 0 always solves the equation; it is returned for beta <= 1 and
    the positive root (the attractor of the iteration started at 1/2) for
    beta > 1.
    """
    rule = rule or default_rule()
    beta, h = params.beta, params.h

    def defect(q):
        return q - _tanh2_mean(beta, h, q, rule)

    lo, hi = 0.0, 1.0
    if h == 0.0:
        if beta <= 1.0:
            return _make_fixed_point(params, 0.0, rule)
        lo = 1e-300
        if defect(lo) >= 0 or defect(hi) <= 0:
            return _make_fixed_point(params, 0.0, rule)
    try:
        q = brentq(defect, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    except (RuntimeError, ValueError) as exc:
        raise ConvergenceError(f"fixed point for {params} not found in bracket [{lo}, {hi}]: {exc}") from exc
    fp = _make_fixed_point(params, q, rule)
    if abs(fp.residual) > RESIDUAL_TOL:
        raise ConvergenceError(f"fixed point for {params} has residual {fp.residual:.3e} near q={q!r}")
    return fp


def _make_fixed_point(params: ModelParams, q: float, rule: QuadratureRule) -> RSFixedPoint:
    beta, h = params.beta, params.h
    residual = q - _tanh2_mean(beta, h, q, rule)
    alpha = beta**2 * gauss_expect(rule, sech4, h, beta * math.sqrt(q))
    return RSFixedPoint(params, float(q), float(alpha), beta**2 * q, float(residual))


def alpha_param(fp: RSFixedPoint, rule: QuadratureRule | None = None) -> float:
    """AT parameter beta^2 E[sech^4(beta sqrt(q) Z + h)]."""
    beta, h = fp.params.beta, fp.params.h
    return beta**2 * gauss_expect(rule, sech4, h, beta * math.sqrt(fp.q))


def phi_rs(fp: RSFixedPoint, rule: QuadratureRule | None = None) -> float:
    """Replica-symmetric free energy log 2 + E[log cosh] + beta^2 (1-q)^2 / 4."""
    beta, h, q = fp.params.beta, fp.params.h, fp.q
    return LOG2 + gauss_expect(rule, log_cosh, h, beta * math.sqrt(q)) + 0.25 * beta**2 * (1.0 - q) ** 2


def sech_moments(fp: RSFixedPoint, rule: QuadratureRule | None = None) -> tuple[float, float]:
    """(E[S], E[S^2]) for S = sech^2(beta sqrt(q) Z + h)."""
    beta, h = fp.params.beta, fp.params.h
    std = beta * math.sqrt(fp.q)
    return gauss_expect(rule, sech2, h, std), gauss_expect(rule, sech4, h, std)


def mmse_check(sigma: float, rule: QuadratureRule | None = None) -> tuple[float, float]:
    """(E[sech^2(sigma^2 + sigma Z)], 1 / (1 + sigma^2)); the first never exceeds the second."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return gauss_expect(rule, sech2, sigma**2, sigma), 1.0 / (1.0 + sigma**2)


def m_sigma(sigma: float, h: float, rule: QuadratureRule | None = None) -> float:
    """E[sech^2(h + sigma Z)], strictly decreasing in h >= 0."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return gauss_expect(rule, sech2, h, sigma)


def alpha_of(beta: float, h: float, rule: QuadratureRule | None = None) -> float:
    return solve_q(ModelParams(beta, h), rule).alpha


def at_line(beta: float, rule: QuadratureRule | None = None, h_max: float = AT_LINE_H_MAX) -> float:
    """Field h >= 0 with alpha(beta, h) = 1.

    Returns 0 for beta <= 1.  For beta > 1, alpha is decreasing in h along
    the branch of positive q, so the root is bracketed on [0, h_max].
    """
    if beta <= 1.0:
        return 0.0
    rule = rule or default_rule()

    def excess(h):
        return alpha_of(beta, h, rule) - 1.0

    lo, hi = 0.0, h_max
    f_lo, f_hi = excess(lo), excess(hi)
    if f_lo <= 0.0:
        return 0.0
    if f_hi > 0.0:
        raise ConvergenceError(
            f"AT line for beta={beta} not bracketed on h in [{lo}, {hi}]: alpha-1 = {f_lo:.3e}, {f_hi:.3e}"
        )
    return brentq(excess, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)


def case_classifier(fp: RSFixedPoint) -> Case:
    """Split on beta^2 (1 - q) <= 1; in Case II also check h < beta^2 q."""
    beta, h = fp.params.beta, fp.params.h
    if beta**2 * (1.0 - fp.q) <= 1.0:
        return Case.CaseI
    if h >= fp.sigma2:
        raise ContractViolation(
            f"Case II point {fp.params} has h={h} >= beta^2 q={fp.sigma2}"
        )
    return Case.CaseII
