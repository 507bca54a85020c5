"""The optimally controlled diffusion X_t and the curves built from it.

dX_t = beta^2 mu([0, t]) u_x(t, X_t) dt + beta dW_t,  X_0 = h.

Intervals with mu([0, t]) = 0 carry no drift and are sampled exactly;
elsewhere the scheme is Euler-Maruyama with antithetic Brownian increments.
Paths are simulated in blocks, each with its own child seed, so results
depend only on (seed, n_paths, dt, block_size) and not on the worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .parisi import AtomicMeasure, GridConfig, ValueGrid, solve_u
from .quadrature import QuadratureRule, default_rule, gauss_expect_many, log_cosh, sech2
from .rs import ModelParams, RSFixedPoint

DEFAULT_PATHS = 200_000
DEFAULT_DT = 1e-3
BLOCK_SIZE = 1 << 15
TIME_ATOL = 1e-12


def default_workers() -> int:
    return max(1, int(os.environ.get("RSLAB_THREADS", "1")))


@dataclass(frozen=True)
class Curve:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or np.any(np.diff(times) <= 0):
            raise ValueError("curve times must be strictly increasing")
        if times.size and (times[0] < -TIME_ATOL or times[-1] > 1 + TIME_ATOL):
            raise ValueError("curve times must lie in [0, 1]")
        values = np.asarray(self.values, dtype=float)
        stderr = np.zeros_like(values) if self.stderr is None else np.asarray(self.stderr, dtype=float)
        if values.shape != times.shape or stderr.shape != times.shape:
            raise ValueError("times, values and stderr must have equal length")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "stderr", stderr)

    def at(self, t: float) -> tuple[float, float]:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > TIME_ATOL:
            raise KeyError(f"curve has no point at t={t!r}")
        return float(self.values[i]), float(self.stderr[i])


@dataclass
class PathEnsemble:
    """Recorded states of an antithetic path ensemble.

    Paths 2i and 2i+1 are driven by opposite Brownian increments, so
    standard errors are computed from pair averages.
    """

    n_paths: int
    dt: float
    seed: int
    times: np.ndarray
    states: np.ndarray
    measure: AtomicMeasure
    params: ModelParams

    def state(self, t: float) -> np.ndarray:
        return self.states[self.index(t)]

    def index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > TIME_ATOL:
            raise KeyError(f"no recorded state at t={t!r}")
        return i


def pair_mean_stderr(values: np.ndarray) -> tuple[float, float]:
    """Mean and standard error of per-path values, averaging antithetic pairs first."""
    pairs = values.reshape(-1, 2).mean(axis=1)
    return float(pairs.mean()), float(pairs.std(ddof=1) / math.sqrt(len(pairs)))


def step_grid(measure: AtomicMeasure, dt: float, record: Sequence[float] = ()) -> np.ndarray:
    """Step times on [0, 1]: breakpoints and record times included, drifted intervals cut to <= dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    must = sorted({0.0, 1.0, *measure.breakpoints(), *(float(t) for t in record)})
    grid = [0.0]
    for a, b in zip(must, must[1:]):
        if b - a <= TIME_ATOL:
            continue
        m = measure.cdf(a)
        n = 1 if m == 0.0 else max(1, math.ceil((b - a) / dt - 1e-9))
        grid.extend(a + (b - a) * np.arange(1, n + 1) / n)
        grid[-1] = b
    return np.array(grid)


def _check_alignment(times: np.ndarray, measure: AtomicMeasure) -> None:
    for a in measure.breakpoints():
        if np.min(np.abs(times - a)) > TIME_ATOL:
            raise ValueError(f"time grid has no point at atom {a!r}; an Euler step would straddle it")


def _drift_function(
    measure: AtomicMeasure, vg: ValueGrid | None, drift_times: Sequence[float]
) -> Callable[[float, np.ndarray], np.ndarray]:
    if measure.is_single_atom:
        # cdf is 0 before the atom and 1 after it, where u_x = tanh
        return lambda t, x: np.tanh(x)
    if vg is None:
        raise ValueError("a solved ValueGrid is required to simulate multi-atom measures")
    missing = [t for t in drift_times if np.min(np.abs(vg.times - t)) > TIME_ATOL]
    if missing:
        raise ValueError(
            f"ValueGrid lacks slices at {len(missing)} step times (first {missing[0]!r}); "
            "solve it with value_grid_for_simulation"
        )
    return lambda t, x: vg.interp(t, x, "ux")


def value_grid_for_simulation(
    measure: AtomicMeasure, params: ModelParams, dt: float = DEFAULT_DT, config: GridConfig | None = None
) -> ValueGrid:
    """Solve the PDE with a slice at every step time of ``step_grid(measure, dt)``."""
    config = config or GridConfig()
    times = tuple(float(t) for t in step_grid(measure, dt))
    return solve_u(measure, params, replace(config, times=times))


def _simulate_block(
    x0: float,
    beta: float,
    steps: list[tuple[float, float, float]],
    record_after: np.ndarray,
    drift: Callable,
    n_half: int,
    seed_seq: np.random.SeedSequence,
) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    x = np.full(2 * n_half, float(x0))
    dw = np.empty(2 * n_half)
    out = np.empty((int(record_after.sum()) + 1, 2 * n_half))
    out[0] = x
    k = 1
    for (t, step, m), rec in zip(steps, record_after):
        xi = rng.standard_normal(n_half) * math.sqrt(step)
        dw[0::2] = xi
        dw[1::2] = -xi
        if m > 0.0:
            x = x + (beta**2 * m * step) * drift(t, x) + beta * dw
        else:
            x = x + beta * dw
        if rec:
            out[k] = x
            k += 1
    return out


def simulate(
    measure: AtomicMeasure,
    params: ModelParams,
    vg: ValueGrid | None = None,
    n_paths: int = DEFAULT_PATHS,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    record: Sequence[float] | None = None,
    times: Sequence[float] | None = None,
    x0: float | None = None,
    t0: float = 0.0,
    workers: int | None = None,
    block_size: int = BLOCK_SIZE,
) -> PathEnsemble:
    """Simulate the controlled diffusion for ``measure``.

    ``record`` lists the times at which states are kept (default: 0, the
    breakpoints, and 1).  ``times`` overrides the step grid and must contain
    every breakpoint.  ``x0``/``t0`` start the paths elsewhere than (h, 0);
    this is used for conditional checks started at the atom.
    """
    if n_paths < 2 or n_paths % 2:
        raise ValueError("n_paths must be an even integer >= 2 (antithetic pairs)")
    if block_size % 2:
        raise ValueError("block_size must be even")
    record = sorted({float(t) for t in (record if record is not None else (0.0, *measure.breakpoints(), 1.0))})
    if times is None:
        grid = step_grid(measure, dt, record)
    else:
        grid = np.asarray(sorted(float(t) for t in times))
        _check_alignment(grid, measure)
    grid = grid[grid >= t0 - TIME_ATOL]
    if abs(grid[0] - t0) > TIME_ATOL:
        grid = np.concatenate([[t0], grid])
    for t in record:
        if t < t0 - TIME_ATOL:
            raise ValueError(f"record time {t} precedes the start time {t0}")
        if np.min(np.abs(grid - t)) > TIME_ATOL:
            raise ValueError(f"record time {t} is not on the step grid")

    rec_mask = np.array([np.min(np.abs(np.array(record) - t)) <= TIME_ATOL for t in grid[1:]])
    steps = [(float(a), float(b - a), measure.cdf(a)) for a, b in zip(grid[:-1], grid[1:])]
    drift = _drift_function(measure, vg, [t for t, _, m in steps if m > 0.0])
    start = params.h if x0 is None else float(x0)

    sizes = [min(block_size, n_paths - lo) for lo in range(0, n_paths, block_size)]
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(start, params.beta, steps, rec_mask, drift, size // 2, child) for size, child in zip(sizes, children)]
    workers = workers or default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda job: _simulate_block(*job), jobs))
    else:
        blocks = [_simulate_block(*job) for job in jobs]
    states = np.concatenate(blocks, axis=1)
    rec_times = np.concatenate([[grid[0]], grid[1:][rec_mask]])
    keep = np.array([np.min(np.abs(np.array(record) - t)) <= TIME_ATOL for t in rec_times])
    return PathEnsemble(n_paths, dt, seed, rec_times[keep], states[keep], measure, params)


# ---------------------------------------------------------------------------
# curves


def g_curve(ensemble: PathEnsemble, vg: ValueGrid) -> Curve:
    """Monte Carlo estimate of g(t) = E[u_x(t, X_t)^2] at every recorded time."""
    vals, errs = [], []
    for t, x in zip(ensemble.times, ensemble.states):
        ux = vg.interp(float(t), x, "ux")
        mean, se = pair_mean_stderr(ux**2)
        if np.ptp(x) == 0.0:
            se = 0.0
        vals.append(mean)
        errs.append(se)
    return Curve(ensemble.times, np.array(vals), np.array(errs))


def _soft_check(fp: RSFixedPoint, t: float) -> None:
    if not -TIME_ATOL <= t <= fp.q + TIME_ATOL:
        raise ValueError(f"t={t} is outside [0, q={fp.q}]")


def g_curve_quadrature(params: ModelParams, fp: RSFixedPoint, t: float, rule: QuadratureRule | None = None) -> float:
    """E[(E[tanh(X_t + beta sqrt(q-t) Z) | X_t])^2] with X_t ~ N(h, beta^2 t), by nested quadrature."""
    _soft_check(fp, t)
    rule = rule or default_rule()
    beta, q = params.beta, fp.q
    t = min(max(t, 0.0), q)
    outer = params.h + beta * math.sqrt(t) * rule.nodes
    inner = gauss_expect_many(rule, np.tanh, outer, beta * math.sqrt(q - t))
    return float(rule.weights @ inner**2)


def g_prime_quadrature(params: ModelParams, fp: RSFixedPoint, t: float, rule: QuadratureRule | None = None) -> float:
    """beta^2 E[u_xx(t, X_t)^2] on [0, q], the derivative of g there."""
    _soft_check(fp, t)
    rule = rule or default_rule()
    beta, q = params.beta, fp.q
    t = min(max(t, 0.0), q)
    outer = params.h + beta * math.sqrt(t) * rule.nodes
    inner = gauss_expect_many(rule, sech2, outer, beta * math.sqrt(q - t))
    return float(beta**2 * (rule.weights @ inner**2))


def doob_conditional(
    params: ModelParams,
    x: float,
    lam: float,
    psi: Callable[[np.ndarray], np.ndarray],
    rule: QuadratureRule | None = None,
    fp: RSFixedPoint | None = None,
) -> float:
    """E[psi(X_t) | X_q = x] at t = q + lam / beta^2, as a cosh-tilted Gaussian average."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if fp is not None and lam > fp.lambda_max * (1 + 1e-12):
        raise ValueError(f"lambda={lam} exceeds beta^2 (1 - q) = {fp.lambda_max}")
    if lam == 0:
        return float(np.asarray(psi(np.array([float(x)])))[0])
    rule = rule or default_rule()
    y = x + math.sqrt(lam) * rule.nodes
    tilt = rule.weights * np.exp(log_cosh(y) - log_cosh(x))
    return float(tilt @ psi(y) / tilt.sum())


def g_curve_kernel(params: ModelParams, fp: RSFixedPoint, t: float, rule: QuadratureRule | None = None) -> float:
    """E[tanh^2(X_t)] on [q, 1] through the conditional law of X_t given X_q."""
    if not fp.q - TIME_ATOL <= t <= 1 + TIME_ATOL:
        raise ValueError(f"t={t} is outside [q={fp.q}, 1]")
    rule = rule or default_rule()
    lam = max(params.beta**2 * (t - fp.q), 0.0)
    xq = params.h + params.beta * math.sqrt(fp.q) * rule.nodes
    if lam == 0:
        return float(rule.weights @ np.tanh(xq) ** 2)
    y = xq[:, None] + math.sqrt(lam) * rule.nodes[None, :]
    tilt = rule.weights[None, :] * np.exp(log_cosh(y) - log_cosh(xq)[:, None])
    cond = (tilt * np.tanh(y) ** 2).sum(axis=1) / tilt.sum(axis=1)
    return float(rule.weights @ cond)


def f_curve(
    params: ModelParams,
    fp: RSFixedPoint,
    t_grid: Sequence[float],
    n_paths: int = DEFAULT_PATHS,
    seed: int = 0,
    dt: float = DEFAULT_DT,
    workers: int | None = None,
    control_variate: bool = False,
) -> Curve:
    """Monte Carlo f(t) = E[tanh^2(X_t)] - t for mu = delta_q on [q, 1].

    With ``control_variate`` the estimator averages tanh^2(X_t) - tanh^2(X_q)
    and adds back the exact E[tanh^2(X_q)] = q, which removes the sampling
    error shared by all times near q.
    """
    t_grid = np.asarray(sorted(float(t) for t in t_grid))
    if t_grid[0] < fp.q - TIME_ATOL or t_grid[-1] > 1 + TIME_ATOL:
        raise ValueError("f_curve grid must lie within [q, 1]")
    record = np.array(sorted({*t_grid.tolist(), fp.q})) if control_variate else t_grid
    ens = simulate(AtomicMeasure.delta(fp.q), params, None, n_paths, dt, seed, record=record, workers=workers)
    base = np.tanh(ens.state(fp.q)) ** 2 - fp.q if control_variate else 0.0
    vals, errs = [], []
    for t in t_grid:
        mean, se = pair_mean_stderr(np.tanh(ens.state(t)) ** 2 - base)
        vals.append(mean - t)
        errs.append(se)
    return Curve(t_grid, np.array(vals), np.array(errs))


def G_curve(
    params: ModelParams,
    fp: RSFixedPoint,
    t_grid: Sequence[float],
    sources: str = "quadrature",
    n_paths: int = DEFAULT_PATHS,
    seed: int = 0,
    dt: float = DEFAULT_DT,
    rule: QuadratureRule | None = None,
) -> Curve:
    """G(t) = int_t^1 (beta^2/2)(g(s) - s) ds for mu = delta_q, by the trapezoid rule.

    The integrand comes from nested quadrature on [0, q]; on [q, 1] it comes
    from the conditional (kernel) formula when ``sources="quadrature"`` or
    from a Monte Carlo f_curve with the X_q control variate when
    ``sources="mc"``.  q is always added to the grid; the result is reported
    on the merged grid, with Monte Carlo standard errors of the integral
    propagated as if independent.
    """
    q = fp.q
    grid = np.array(sorted({*(float(t) for t in t_grid), q, 1.0}))
    grid = grid[np.concatenate([[True], np.diff(grid) > TIME_ATOL])]
    if grid[0] < 0 or grid[-1] > 1:
        raise ValueError("t_grid must lie in [0, 1]")
    left = grid[grid <= q + TIME_ATOL]
    right = grid[grid >= q - TIME_ATOL]
    g_left = np.array([g_curve_quadrature(params, fp, t, rule) for t in left])
    se_left = np.zeros_like(g_left)
    if sources == "quadrature":
        g_right = np.array([g_curve_kernel(params, fp, t, rule) for t in right])
        se_right = np.zeros_like(g_right)
    elif sources == "mc":
        fc = f_curve(params, fp, right, n_paths, seed, dt, control_variate=True)
        g_right = fc.values + fc.times
        se_right = fc.stderr
    else:
        raise ValueError(f"unknown sources {sources!r}")
    # both sides contain q; keep the left (quadrature) value there
    g = np.concatenate([g_left, g_right[1:]])
    se = np.concatenate([se_left, se_right[1:]])
    integrand = 0.5 * params.beta**2 * (g - grid)
    dtau = np.diff(grid)
    pieces = 0.5 * (integrand[:-1] + integrand[1:]) * dtau
    G = np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    piece_se = 0.25 * params.beta**2 * np.sqrt((se[:-1] * dtau) ** 2 + (se[1:] * dtau) ** 2)
    G_se = np.concatenate([np.sqrt(np.cumsum((piece_se**2)[::-1]))[::-1], [0.0]])
    return Curve(grid, G, G_se)


# ---------------------------------------------------------------------------
# conditional simulation and pathwise diagnostics


def simulate_from_atom(
    params: ModelParams,
    x: float,
    lam: float,
    n_paths: int = DEFAULT_PATHS,
    seed: int = 0,
    dt: float = DEFAULT_DT,
    workers: int | None = None,
) -> np.ndarray:
    """Terminal states of dY = beta^2 tanh(Y) dt + beta dW run for time lam / beta^2 from Y_0 = x."""
    duration = lam / params.beta**2
    if duration <= 0:
        return np.full(n_paths, float(x))
    # the drifted stretch of delta_0 is [0, 1]; run it over [0, duration]
    measure = AtomicMeasure.delta(0.0)
    grid = np.linspace(0.0, duration, max(1, math.ceil(duration / dt - 1e-9)) + 1)
    ens = simulate(measure, params, None, n_paths, dt, seed, record=[duration], times=grid, x0=x, workers=workers)
    return ens.state(duration)


def martingale_regression(ensemble: PathEnsemble, vg: ValueGrid, t_max: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Regress increments of u_x(t, X_t) on (1, u_x, u_x^2) at t between recorded times up to t_max.

    Returns one (coefficients, standard errors) pair per increment; increments
    starting from a deterministic state (t = 0) carry no regressor and are skipped.
    """
    times = [t for t in ensemble.times if t <= t_max + TIME_ATOL]
    out = []
    for t0, t1 in zip(times, times[1:]):
        if np.ptp(ensemble.state(t0)) == 0.0:
            continue
        m0 = vg.interp(t0, ensemble.state(t0), "ux")
        m1 = vg.interp(t1, ensemble.state(t1), "ux")
        out.append(_ols(np.column_stack([np.ones_like(m0), m0, m0**2]), m1 - m0))
    return out


def drift_regression(ensemble: PathEnsemble, t_min: float) -> list[tuple[np.ndarray, np.ndarray, float]]:
    """Regress increments of m_t = tanh(X_t) on (1, m, m^2) between recorded times after t_min.

    Returns (coefficients, standard errors, step) per increment.
    """
    times = [t for t in ensemble.times if t >= t_min - TIME_ATOL]
    out = []
    for t0, t1 in zip(times, times[1:]):
        m0 = np.tanh(ensemble.state(t0))
        m1 = np.tanh(ensemble.state(t1))
        coef, se = _ols(np.column_stack([np.ones_like(m0), m0, m0**2]), m1 - m0)
        out.append((coef, se, t1 - t0))
    return out


def _ols(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = len(y) - design.shape[1]
    cov = np.linalg.inv(design.T @ design) * (resid @ resid) / dof
    return coef, np.sqrt(np.diag(cov))
