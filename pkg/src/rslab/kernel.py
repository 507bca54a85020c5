"""Kernel, reference measure and likelihood-ratio machinery on [q, 1].

With S = sech^2(X_q), X_q ~ N(h, sigma^2) and lambda = beta^2 (t - q), the
second conditional moment of v = sech^2(X_t) is S^2 F_lambda(S), where

    F_lambda(s) = e^{-lambda/2} E[cosh(sqrt(lambda) G) Phi(s, sinh^2(sqrt(lambda) G))],
    Phi(s, u)   = (1 + (4 - 3 s) u) / (1 + s u)^3.

The reference measure nu(ds) = ds / (2 sqrt(1 - s)) makes every F_lambda
mean-one, and r = s^2 rho_S / (d nu / ds) is the density of S^2-weighted
mass with respect to nu.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import erfc

from .diffusion import Curve
from .quadrature import QuadratureRule, default_rule, sech2
from .rs import ContractViolation, RSFixedPoint

SQRT_2PI = math.sqrt(2.0 * math.pi)
ARCOSH_SERIES_CUTOFF = 1e-8
NU_PANEL_NODES = 16
NU_MIN_DELTA_EXP = 134  # panels reach 1 - r = 2**-134, i.e. s ~ 1e-40
MBAR_CELL_NODES = 8


def phi_kernel(s, u):
    """Phi(s, u) = (1 + (4 - 3s) u) / (1 + s u)^3."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    return (1.0 + (4.0 - 3.0 * s) * u) / (1.0 + s * u) ** 3


def dphi_ds(s, u):
    """Partial derivative of Phi in s: -6 u (1 + 2u - s u) / (1 + s u)^4."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    return -6.0 * u * (1.0 + 2.0 * u - s * u) / (1.0 + s * u) ** 4


def F_lambda(lam: float, s, rule: QuadratureRule | None = None):
    """Kernel F_lambda(s), vectorized over s.

    The cosh tilt is absorbed into a Gaussian mean shift:
    e^{-lambda/2} E[cosh(sqrt(lambda) G) f(G^2)] = E[f((G + sqrt(lambda))^2)],
    so F_lambda(s) = E[Phi(s, sinh^2(lambda + sqrt(lambda) G))].
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    s_arr = np.asarray(s, dtype=float)
    if np.any((s_arr < 0) | (s_arr > 1)):
        raise ValueError("s must lie in [0, 1]")
    if lam == 0:
        return np.ones_like(s_arr) if s_arr.ndim else 1.0
    rule = rule or default_rule()
    u = np.sinh(lam + math.sqrt(lam) * rule.nodes) ** 2
    out = phi_kernel(s_arr[..., None], u) @ rule.weights
    return out if s_arr.ndim else float(out)


def J_integral(u: float, n: int = 64) -> float:
    """J(u) = int_0^1 (1 + (1 + 3 r^2) u) / (1 + (1 - r^2) u)^3 dr by Gauss-Legendre.

    The integrand is a rational function with poles at r^2 = 1 + 1/u, outside
    [0, 1]; the interval is split geometrically toward r = 1 where they
    approach as u grows.
    """
    if u < 0:
        raise ValueError("u must be nonnegative")
    x, w = np.polynomial.legendre.leggauss(n)
    edges = [0.0] + [1.0 - 2.0**-k for k in range(1, 40)] + [1.0]
    total = 0.0
    for a, b in zip(edges, edges[1:]):
        r = 0.5 * (b - a) * x + 0.5 * (a + b)
        val = (1.0 + (1.0 + 3.0 * r**2) * u) / (1.0 + (1.0 - r**2) * u) ** 3
        total += 0.5 * (b - a) * float(w @ val)
    return total


@lru_cache(maxsize=None)
def _nu_nodes() -> tuple[np.ndarray, np.ndarray]:
    """Nodes in s and weights for int_0^1 phi(s) nu(ds) = int_0^1 phi(1 - r^2) dr.

    Gauss-Legendre panels in delta = 1 - r, halving toward delta = 0 so that
    boundary layers of phi near s = 0 are resolved; s = delta (2 - delta) is
    formed without cancellation.
    """
    x, w = np.polynomial.legendre.leggauss(NU_PANEL_NODES)
    edges = [0.0] + [2.0**-k for k in range(NU_MIN_DELTA_EXP, -1, -1)]
    s_nodes, weights = [], []
    for a, b in zip(edges, edges[1:]):
        delta = 0.5 * (b - a) * x + 0.5 * (a + b)
        s_nodes.append(delta * (2.0 - delta))
        weights.append(0.5 * (b - a) * w)
    s_all = np.concatenate(s_nodes)
    w_all = np.concatenate(weights)
    s_all.setflags(write=False)
    w_all.setflags(write=False)
    return s_all, w_all


def nu_expect(phi: Callable[[np.ndarray], np.ndarray], s_lo: float = 0.0, s_hi: float = 1.0) -> float:
    """int phi dnu over (s_lo, s_hi) with nu(ds) = ds / (2 sqrt(1 - s)).

    The full interval uses the cached panel rule; a proper subinterval uses the
    same geometric panels in delta = 1 - sqrt(1 - s), clipped to its range.
    """
    if not 0.0 <= s_lo < s_hi <= 1.0:
        raise ValueError("need 0 <= s_lo < s_hi <= 1")
    if s_lo == 0.0 and s_hi == 1.0:
        s, w = _nu_nodes()
        return float(w @ np.asarray(phi(s), dtype=float))
    # delta = s / (1 + sqrt(1 - s)) avoids cancellation for small s
    d_lo = s_lo / (1.0 + math.sqrt(1.0 - s_lo))
    d_hi = s_hi / (1.0 + math.sqrt(1.0 - s_hi))
    inner = [2.0**-k for k in range(NU_MIN_DELTA_EXP, -1, -1) if d_lo < 2.0**-k < d_hi]
    edges = [d_lo, *inner, d_hi]
    x, w = np.polynomial.legendre.leggauss(NU_PANEL_NODES)
    delta = np.concatenate([0.5 * (b - a) * x + 0.5 * (a + b) for a, b in zip(edges, edges[1:])])
    weights = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges, edges[1:])])
    return float(weights @ np.asarray(phi(delta * (2.0 - delta)), dtype=float))


def y_of_s(s) -> np.ndarray:
    """arcosh(s^{-1/2}) for s in (0, 1], switching to sqrt(2 (1 - sqrt(s))) near s = 1."""
    s = np.asarray(s, dtype=float)
    w = 1.0 / np.sqrt(s)
    d = w - 1.0
    direct = np.log(w + np.sqrt(np.maximum(w * w - 1.0, 0.0)))
    series = np.sqrt(2.0 * np.maximum(1.0 - np.sqrt(s), 0.0))
    return np.where(d < ARCOSH_SERIES_CUTOFF, series, direct)


@dataclass(frozen=True)
class KernelContext:
    """Kernel quantities at one fixed point."""

    fp: RSFixedPoint
    rule: QuadratureRule | None = None

    def __post_init__(self):
        if self.lambda_max <= 0:
            raise ValueError("lambda_max = beta^2 (1 - q) must be positive")
        if self.params.h > 0 and self.sigma <= 0:
            raise ValueError("sigma must be positive when h > 0")

    @property
    def params(self):
        return self.fp.params

    @property
    def lambda_max(self) -> float:
        return self.fp.lambda_max

    @property
    def sigma(self) -> float:
        return self.fp.sigma

    @property
    def h_le_sigma2(self) -> bool:
        return self.params.h <= self.fp.sigma2

    def _folded_gauss(self, y):
        sig, h = self.sigma, self.params.h
        return (np.exp(-((y - h) ** 2) / (2 * sig**2)) + np.exp(-((y + h) ** 2) / (2 * sig**2))) / (sig * SQRT_2PI)

    @staticmethod
    def _check_open(s):
        s = np.asarray(s, dtype=float)
        if np.any((s <= 0) | (s >= 1)):
            raise ValueError("s must lie strictly inside (0, 1)")
        return s

    def rho_S(self, s):
        """Density of S = sech^2(h + sigma Z) on (0, 1)."""
        s = self._check_open(s)
        return self._folded_gauss(y_of_s(s)) / (2.0 * s * np.sqrt(1.0 - s))

    def cdf_S(self, s):
        """P(S <= s) = P(|h + sigma Z| >= y(s)), the integral of rho_S from 0 to s."""
        s = np.asarray(s, dtype=float)
        y = y_of_s(np.clip(s, np.finfo(float).tiny, 1.0))
        sig, h = self.sigma, self.params.h
        c = 0.5 * (erfc((y - h) / (sig * math.sqrt(2))) + erfc((y + h) / (sig * math.sqrt(2))))
        return np.where(s <= 0, 0.0, np.where(s >= 1, 1.0, c))

    def density_moment(self, phi: Callable[[np.ndarray], np.ndarray], n: int = 64) -> float:
        """int_0^1 phi(s) rho_S(s) ds through s = sech^2(y), ds-mass rho_S ds = folded Gaussian dy.

        The y-range [0, h + 14 sigma] is split into unit-sigma panels.
        """
        sig, h = self.sigma, self.params.h
        x, w = np.polynomial.legendre.leggauss(n)
        edges = np.unique(np.concatenate([np.arange(0.0, h + 14 * sig, sig), [h, h + 14 * sig]]))
        total = 0.0
        for a, b in zip(edges, edges[1:]):
            y = 0.5 * (b - a) * x + 0.5 * (a + b)
            total += 0.5 * (b - a) * float(w @ (phi(sech2(y)) * self._folded_gauss(y)))
        return total

    def r_ratio(self, s):
        """Likelihood ratio r(s) = s^2 rho_S(s) / (d nu / ds), finite on [0, 1]."""
        s = np.asarray(s, dtype=float)
        safe = np.clip(s, np.finfo(float).tiny, 1.0)
        return np.where(s <= 0, 0.0, s * self._folded_gauss(y_of_s(safe)))

    def log_r_derivative(self, y):
        """d/dy log r(s(y)) with s = sech^2 y."""
        y = np.asarray(y, dtype=float)
        sig2, h = self.fp.sigma2, self.params.h
        return -2.0 * np.tanh(y) - y / sig2 + (h / sig2) * np.tanh(h * y / sig2)

    def _s_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        rule = self.rule or default_rule()
        return sech2(self.params.h + self.sigma * rule.nodes), rule.weights

    def a2_kernel(self, lam: float) -> float:
        """a_2(lambda) = E[S^2 F_lambda(S)] with the expectation taken over Z."""
        self._check_lambda(lam)
        s, w = self._s_nodes()
        return float(w @ (s**2 * F_lambda(lam, s, self.rule)))

    def covariance_gap(self, lam: float) -> float:
        """int (F_lambda - 1) r dnu, which equals a_2(lambda) - a_2(0) and is <= 0 when h <= sigma^2."""
        if not self.h_le_sigma2:
            raise ValueError(f"covariance gap needs h <= sigma^2; h={self.params.h}, sigma^2={self.fp.sigma2}")
        self._check_lambda(lam)
        return nu_expect(lambda s: (F_lambda(lam, s, self.rule) - 1.0) * self.r_ratio(s))

    def _check_lambda(self, lam: float) -> None:
        if not 0.0 <= lam <= self.lambda_max * (1 + 1e-12):
            raise ValueError(f"lambda={lam} outside [0, {self.lambda_max}]")

    def lambda_grid(self, n: int = 64) -> np.ndarray:
        return np.linspace(0.0, self.lambda_max, n)

    def mbar_curve(self, lambda_grid=None, check: bool = True) -> Curve:
        """Mean of v = sech^2(X_t) as a function of t = q + lambda / beta^2.

        Mbar(lambda) = (1 - q) - int_0^lambda a_2, integrated cell by cell with
        Gauss-Legendre.  When alpha <= 1 and h <= sigma^2 the lower bound
        Mbar(lambda) >= 1 - q - lambda / beta^2 is enforced.
        """
        lam = self.lambda_grid() if lambda_grid is None else np.asarray(lambda_grid, dtype=float)
        if np.any(np.diff(lam) <= 0) or lam[0] < 0:
            raise ValueError("lambda grid must be increasing and nonnegative")
        self._check_lambda(float(lam[-1]))
        x, w = np.polynomial.legendre.leggauss(MBAR_CELL_NODES)
        edges = np.concatenate([[0.0], lam]) if lam[0] > 0 else lam
        pieces = [0.0]
        for a, b in zip(edges, edges[1:]):
            nodes = 0.5 * (b - a) * x + 0.5 * (a + b)
            pieces.append(0.5 * (b - a) * sum(wi * self.a2_kernel(float(n)) for wi, n in zip(w, nodes)))
        cum = np.cumsum(pieces)
        if lam[0] > 0:
            cum = cum[1:]
        q, beta2 = self.fp.q, self.params.beta**2
        mbar = (1.0 - q) - cum
        if check and self.fp.alpha <= 1.0 and self.h_le_sigma2:
            bound = 1.0 - q - lam / beta2
            worst = int(np.argmin(mbar - bound))
            if mbar[worst] < bound[worst] - 1e-8:
                raise ContractViolation(
                    f"Mbar({lam[worst]}) = {mbar[worst]} falls below 1 - q - lambda/beta^2 = {bound[worst]}"
                )
        times = np.minimum(q + lam / beta2, 1.0)
        return Curve(times, mbar, np.zeros_like(mbar))
