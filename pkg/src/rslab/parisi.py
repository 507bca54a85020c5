"""Parisi PDE and functional for finitely atomic order parameters.

On every interval where m = mu([0, t]) is constant the Parisi PDE is solved
exactly by one Gaussian smoothing: the Cole-Hopf transform for m > 0, the
heat semigroup for m = 0.  Nothing is stepped in time; slices at requested
times are recomputed from the right end of their interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize, minimize_scalar

from .quadrature import QuadratureRule, default_rule, gauss_expect_many, log_cosh, sech2, trapezoid_rule
from .rs import LOG2, ModelParams, RSFixedPoint, solve_q

SLICE_ATOL = 1e-12


class GridOverflowError(ValueError):
    """A query point lies beyond the grid plus its linear tail band."""


@dataclass(frozen=True)
class AtomicMeasure:
    """Probability measure sum_i w_i delta_{q_i} on [0, 1].

    Zero weights are allowed; such atoms leave the cdf unchanged.
    """

    atoms: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        atoms = tuple(float(a) for a in self.atoms)
        weights = tuple(float(w) for w in self.weights)
        if not atoms or len(atoms) != len(weights):
            raise ValueError("atoms and weights must be nonempty and of equal length")
        if any(not 0.0 <= a <= 1.0 for a in atoms):
            raise ValueError(f"atoms must lie in [0, 1], got {atoms}")
        if any(b <= a for a, b in zip(atoms, atoms[1:])):
            raise ValueError(f"atoms must be strictly increasing, got {atoms}")
        if any(w < 0 or not math.isfinite(w) for w in weights):
            raise ValueError(f"weights must be nonnegative, got {weights}")
        if abs(math.fsum(weights) - 1.0) > 1e-14:
            raise ValueError(f"weights must sum to 1, got {math.fsum(weights)!r}")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def delta(cls, q: float) -> "AtomicMeasure":
        return cls((q,), (1.0,))

    def cdf(self, t: float) -> float:
        return min(1.0, math.fsum(w for a, w in zip(self.atoms, self.weights) if a <= t))

    def intervals(self) -> list[tuple[float, float, float]]:
        """Maximal intervals [a, b) of [0, 1] on which the cdf is constant, as (a, b, m)."""
        cuts = sorted({a for a, w in zip(self.atoms, self.weights) if w > 0 and 0.0 < a < 1.0})
        edges = [0.0, *cuts, 1.0]
        out = []
        for a, b in zip(edges, edges[1:]):
            m = self.cdf(a)
            if out and out[-1][2] == m:
                out[-1] = (out[-1][0], b, m)
            else:
                out.append((a, b, m))
        return out

    def breakpoints(self) -> list[float]:
        return [a for a, _, _ in self.intervals()[1:]]

    def penalty_integral(self) -> float:
        """Closed form of int_0^1 s mu([0, s]) ds."""
        return math.fsum(m * (b * b - a * a) / 2.0 for a, b, m in self.intervals())

    @property
    def is_single_atom(self) -> bool:
        return sum(1 for w in self.weights if w > 0) == 1


@dataclass(frozen=True)
class GridConfig:
    """Spatial grid and quadrature for the PDE solve.

    ``x_max=None`` selects |h| + 8 beta + 4.  ``times`` lists extra slices to
    keep; 0 and the measure's breakpoints are always kept.
    """

    x_max: float | None = None
    dx: float = 2e-3
    times: tuple[float, ...] = ()
    rule: QuadratureRule | None = None

    def resolve_x_max(self, params: ModelParams) -> float:
        x_max = self.x_max if self.x_max is not None else abs(params.h) + 8.0 * params.beta + 4.0
        return math.ceil(x_max / self.dx - 1e-9) * self.dx


class _Slice:
    """Cubic interpolant of a slice sampled on [0, x_max], extended by parity and linear tails.

    ``kind`` is "u" (even, slope-1 tail), "ux" (odd, tail +-1) or "uxx" (even, tail 0).
    """

    _BC = {"u": ((1, 0.0), (1, 1.0)), "ux": ((2, 0.0), (1, 0.0)), "uxx": ((1, 0.0), (1, 0.0))}

    def __init__(self, xgrid: np.ndarray, values: np.ndarray, kind: str, band: float):
        self.kind = kind
        self.dx = xgrid[1] - xgrid[0]
        self.x_max = xgrid[-1]
        self.band = band
        self.last = values[-1]
        self.coef = CubicSpline(xgrid, values, bc_type=self._BC[kind]).c
        self.xgrid = xgrid

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        ay = np.abs(y)
        if ay.size and ay.max() > self.x_max + self.band:
            raise GridOverflowError(
                f"query |x|={ay.max():.6g} beyond x_max={self.x_max:.6g} plus tail band {self.band:.6g}"
            )
        inside = np.minimum(ay, self.x_max)
        i = np.minimum((inside / self.dx).astype(np.intp), len(self.xgrid) - 2)
        d = inside - self.xgrid[i]
        c = self.coef
        val = ((c[0, i] * d + c[1, i]) * d + c[2, i]) * d + c[3, i]
        beyond = ay > self.x_max
        if self.kind == "u":
            return np.where(beyond, self.last + (ay - self.x_max), val)
        if self.kind == "ux":
            return np.sign(y) * np.where(beyond, 1.0, val)
        return np.where(beyond, 0.0, val)


def _smooth(
    xgrid: np.ndarray,
    prev: tuple[np.ndarray, ...],
    m: float,
    var: float,
    rule: QuadratureRule,
    band: float,
    chunk: int = 2048,
) -> tuple[np.ndarray, ...]:
    """One exact constant-coefficient step of the Parisi PDE.

    u = (1/m) log E[exp(m f(x + sqrt(var) Z))] (E[f] when m = 0).  If ``prev``
    also carries f' and f'', the derivatives follow from the tilted law
    with weights proportional to exp(m f):  u_x = E~[f'],
    u_xx = E~[f''] + m Var~[f'].
    """
    if var <= 0:
        return tuple(p.copy() for p in prev)
    kinds = ("u", "ux", "uxx")[: len(prev)]
    interps = [_Slice(xgrid, p, k, band) for p, k in zip(prev, kinds)]
    w = rule.weights
    offsets = math.sqrt(var) * rule.nodes
    out = [np.empty_like(xgrid) for _ in prev]
    for lo in range(0, len(xgrid), chunk):
        sl = slice(lo, lo + chunk)
        y = xgrid[sl, None] + offsets[None, :]
        f = interps[0](y)
        mean = f @ w
        if m == 0.0:
            out[0][sl] = mean
            for j in range(1, len(prev)):
                out[j][sl] = interps[j](y) @ w
            continue
        # shift by the weighted mean: sum w e^{a} >= 1, so log1p stays accurate for tiny m
        a = m * (f - mean[:, None])
        z = np.expm1(a) @ w
        out[0][sl] = mean + np.log1p(z) / m
        if len(prev) > 1:
            tilt = np.exp(a) * w
            tilt /= tilt.sum(axis=1, keepdims=True)
            fx = interps[1](y)
            ux = np.sum(tilt * fx, axis=1)
            out[1][sl] = ux
            out[2][sl] = np.sum(tilt * interps[2](y), axis=1) + m * np.sum(tilt * (fx - ux[:, None]) ** 2, axis=1)
    return tuple(out)


def finite_differences(u: np.ndarray, dx: float) -> tuple[np.ndarray, np.ndarray]:
    """Centered differences of an even slice stored on x >= 0 (one-sided at x_max)."""
    ux = np.empty_like(u)
    uxx = np.empty_like(u)
    ux[1:-1] = (u[2:] - u[:-2]) / (2 * dx)
    uxx[1:-1] = (u[2:] - 2 * u[1:-1] + u[:-2]) / dx**2
    ux[0] = 0.0
    uxx[0] = 2 * (u[1] - u[0]) / dx**2
    ux[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * dx)
    uxx[-1] = (2 * u[-1] - 5 * u[-2] + 4 * u[-3] - u[-4]) / dx**2
    return ux, uxx


@dataclass
class ValueGrid:
    """u(t, x), u_x and u_xx at the stored slices, on x >= 0 (u is even in x)."""

    times: np.ndarray
    xgrid: np.ndarray
    u: np.ndarray
    ux: np.ndarray | None
    uxx: np.ndarray | None
    tail_band: float
    measure: AtomicMeasure | None = None
    params: ModelParams | None = None
    _interps: dict = field(default_factory=dict, repr=False)

    @property
    def x_max(self) -> float:
        return float(self.xgrid[-1])

    def index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > SLICE_ATOL:
            raise KeyError(f"no slice stored at t={t!r}")
        return i

    def interp(self, t: float, x, which: str = "u") -> np.ndarray:
        """Evaluate u, ux or uxx at slice t using even/odd reflection and linear tails."""
        if which not in ("u", "ux", "uxx"):
            raise ValueError(f"unknown field {which!r}")
        i = self.index(t)
        key = (i, which)
        if key not in self._interps:
            values = getattr(self, which)
            if values is None:
                raise ValueError("this grid was solved without derivatives")
            self._interps[key] = _Slice(self.xgrid, values[i], which, self.tail_band)
        return self._interps[key](x)


def solve_u(
    measure: AtomicMeasure,
    params: ModelParams,
    config: GridConfig | None = None,
    derivatives: bool = True,
) -> ValueGrid:
    """Backward solve of the Parisi PDE from u(1, x) = log cosh x."""
    config = config or GridConfig()
    rule = config.rule or default_rule()
    beta = params.beta
    x_max = config.resolve_x_max(params)
    n = int(round(x_max / config.dx)) + 1
    xgrid = np.linspace(0.0, x_max, n)
    band = float(np.max(np.abs(rule.nodes))) * beta + 1e-9

    intervals = measure.intervals()
    requested = sorted({0.0, 1.0, *(float(t) for t in config.times), *measure.breakpoints()})
    if requested[0] < 0 or requested[-1] > 1:
        raise ValueError("requested times must lie in [0, 1]")

    terminal = (log_cosh(xgrid), np.tanh(xgrid), sech2(xgrid))
    current = terminal if derivatives else terminal[:1]
    right_vals = {1.0: current}
    for a, b, m in reversed(intervals):
        current = _smooth(xgrid, current, m, beta**2 * (b - a), rule, band)
        right_vals[a] = current

    slices = []
    for t in requested:
        if t in right_vals:
            slices.append(right_vals[t])
            continue
        a, b, m = next(iv for iv in intervals if iv[0] <= t < iv[1])
        slices.append(_smooth(xgrid, right_vals[b], m, beta**2 * (b - t), rule, band))
    fields = [np.vstack([s[j] for s in slices]) for j in range(len(slices[0]))]
    if not derivatives:
        fields += [None, None]
    return ValueGrid(np.array(requested), xgrid, *fields, band, measure, params)


def u_delta_q_explicit(params: ModelParams, fp: RSFixedPoint, t: float, x, rule: QuadratureRule | None = None):
    """Closed-form (u, ux, uxx) for mu = delta_q at time t."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    beta, q = params.beta, fp.q
    x = np.asarray(x, dtype=float)
    if t >= q:
        return 0.5 * beta**2 * (1.0 - t) + log_cosh(x), np.tanh(x), sech2(x)
    s = beta * math.sqrt(q - t)
    u = 0.5 * beta**2 * (1.0 - q) + gauss_expect_many(rule, log_cosh, x, s)
    ux = gauss_expect_many(rule, np.tanh, x, s)
    uxx = gauss_expect_many(rule, sech2, x, s)
    return u, ux, uxx


def parisi_functional(measure: AtomicMeasure, params: ModelParams, config: GridConfig | None = None) -> float:
    """log 2 + u(0, h) - (beta^2 / 2) int_0^1 s mu([0, s]) ds."""
    vg = solve_u(measure, params, config, derivatives=False)
    u0h = float(vg.interp(0.0, params.h))
    return LOG2 + u0h - 0.5 * params.beta**2 * measure.penalty_integral()


# ---------------------------------------------------------------------------
# search over k-atom measures


@dataclass
class SearchResult:
    best_measure: AtomicMeasure
    best_value: float
    rs_value: float
    evaluations: int
    exhausted: bool

    @property
    def improvement(self) -> float:
        return self.rs_value - self.best_value


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def _logit(p):
    p = np.clip(p, 1e-12, 1 - 1e-12)
    return np.log(p / (1 - p))


def decode_measure(theta: Sequence[float], k: int) -> AtomicMeasure:
    """Unconstrained parameters -> k-atom measure (sorted sigmoid atoms, softmax weights)."""
    theta = np.asarray(theta, dtype=float)
    locs = np.sort(_sigmoid(theta[:k]))
    logits = np.concatenate([[0.0], theta[k:]])
    w = np.exp(logits - logits.max())
    w = w / w.sum()
    # merge coincident atoms so strict ordering holds
    atoms, weights = [], []
    for a, wi in zip(locs, w):
        if atoms and a <= atoms[-1]:
            weights[-1] += wi
        else:
            atoms.append(float(a))
            weights.append(float(wi))
    weights = np.array(weights)
    weights[-1] = 1.0 - math.fsum(weights[:-1])
    return AtomicMeasure(tuple(atoms), tuple(weights))


def encode_measure(atoms: Sequence[float], weights: Sequence[float]) -> np.ndarray:
    atoms = np.asarray(atoms, dtype=float)
    weights = np.maximum(np.asarray(weights, dtype=float), 1e-300)
    return np.concatenate([_logit(atoms), np.log(weights[1:] / weights[0])])


# coarse grid and a 201-node rule; the winner is re-scored on the full grid
SEARCH_CONFIG = GridConfig(dx=1e-2, rule=trapezoid_rule(0.1, 10.0))


def rsb_search(
    params: ModelParams,
    k: int = 2,
    budget: int = 600,
    config: GridConfig | None = None,
    search_config: GridConfig | None = SEARCH_CONFIG,
    seed: int = 0,
    n_starts: int = 4,
) -> SearchResult:
    """Minimize the Parisi functional over measures with at most k atoms.

    Candidates are scored on ``search_config`` (a coarser grid) and the
    winner is re-scored on ``config``.  The returned value never exceeds
    P(delta_q) on ``config``.
    """
    if k not in (1, 2, 3):
        raise ValueError("k must be 1, 2 or 3")
    fp = solve_q(params)
    rs_measure = AtomicMeasure.delta(fp.q)
    rs_value = parisi_functional(rs_measure, params, config)
    search_config = search_config or config
    evals = 0

    def objective_measure(mu):
        nonlocal evals
        evals += 1
        return parisi_functional(mu, params, search_config)

    if k == 1:
        res = minimize_scalar(
            lambda a: objective_measure(AtomicMeasure.delta(float(a))),
            bounds=(0.0, 1.0),
            method="bounded",
            options={"xatol": 1e-7, "maxiter": budget},
        )
        candidates = [AtomicMeasure.delta(float(res.x))]
        exhausted = not res.success
    else:
        rng = np.random.default_rng(seed)
        candidates, exhausted = [], False
        starts = []
        for j in range(n_starts):
            spread = 0.15 * (j + 1) / n_starts
            atoms = np.clip(fp.q + spread * np.linspace(-1, 1, k) + 0.01 * rng.standard_normal(k), 0.02, 0.98)
            atoms = np.sort(atoms)
            weights = rng.dirichlet(np.ones(k))
            starts.append(encode_measure(atoms, weights))
        for theta0 in starts:
            res = minimize(
                lambda th: objective_measure(decode_measure(th, k)),
                theta0,
                method="Nelder-Mead",
                options={"maxfev": budget // n_starts, "xatol": 1e-6, "fatol": 1e-12},
            )
            exhausted |= not res.success
            candidates.append(decode_measure(res.x, k))

    best_measure, best_value = rs_measure, rs_value
    for mu in candidates:
        value = parisi_functional(mu, params, config)
        if value < best_value:
            best_measure, best_value = mu, value
    return SearchResult(best_measure, best_value, rs_value, evals, exhausted)
