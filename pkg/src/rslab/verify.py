"""Deterministic suite of numerical checks across all modules.

Every check reduces to a scalar ``defect`` compared with a ``tolerance``:
the check passes when defect <= tolerance (or defect < tolerance for strict
inequalities).  Defects are signed where the statement is one-sided, so a
negative defect means the inequality holds with room to spare.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .diffusion import (
    G_curve,
    doob_conditional,
    f_curve,
    g_curve_kernel,
    g_curve_quadrature,
    g_prime_quadrature,
    pair_mean_stderr,
    simulate_from_atom,
)
from .kernel import F_lambda, J_integral, KernelContext, dphi_ds, nu_expect
from .parisi import AtomicMeasure, GridConfig, parisi_functional, solve_u, u_delta_q_explicit
from .quadrature import QuadratureRule, sech4
from .rs import (
    ModelParams,
    at_line,
    case_classifier,
    m_sigma,
    mmse_check,
    phi_rs,
    sech_moments,
    solve_q,
    Case,
)
from .sk import DisorderSample, free_energy_one


@dataclass(frozen=True)
class CheckRecord:
    id: str
    anchor: str
    defect: float
    tolerance: float
    passed: bool

    def as_json(self) -> dict:
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d


@dataclass(frozen=True)
class VerifyConfig:
    beta: float = 1.5
    h: float = 0.5
    seed: int = 0
    n_paths: int = 50_000
    dt: float = 1e-3
    tolerance_scale: float = 1.0
    rule: QuadratureRule | None = None


class _Suite:
    def __init__(self, cfg: VerifyConfig):
        self.cfg = cfg
        self.records: list[CheckRecord] = []

    def add(self, id_: str, anchor: str, defect: float, tolerance: float, strict: bool = False) -> None:
        tol = tolerance * self.cfg.tolerance_scale
        defect = float(defect)
        ok = defect < tol if strict else defect <= tol
        self.records.append(CheckRecord(id_, anchor, defect, float(tol), bool(ok and math.isfinite(defect))))


def run_suite(cfg: VerifyConfig | None = None) -> list[CheckRecord]:
    cfg = cfg or VerifyConfig()
    suite = _Suite(cfg)
    rule = cfg.rule
    params = ModelParams(cfg.beta, cfg.h)
    fp = solve_q(params, rule)

    # scalar replica-symmetric statements
    suite.add("fixed_point_residual", "q = E[tanh^2(beta sqrt(q) Z + h)]", abs(fp.residual), 1e-12)
    gaps, mean_err = [], []
    for b in np.linspace(0.2, 3.0, 20):
        for h in np.linspace(0.1, 3.0, 20):
            f = solve_q(ModelParams(float(b), float(h)), rule)
            m1, m2 = sech_moments(f, rule)
            gaps.append(m2 - m1)
            mean_err.append(abs(m1 - (1.0 - f.q)))
    suite.add("sech_moment_gap", "E[S^2] < E[S] on a 20x20 grid with h > 0", max(gaps), 0.0, strict=True)
    suite.add("sech_mean", "E[S] = 1 - q on a 20x20 grid", max(mean_err), 1e-12)
    suite.add(
        "mmse_bound",
        "E[sech^2(sigma^2 + sigma Z)] <= 1/(1 + sigma^2)",
        max(lhs - rhs for lhs, rhs in (mmse_check(s, rule) for s in np.linspace(0.0, 5.0, 51))),
        1e-12,
    )
    hs = np.linspace(0.0, 5.0, 100)
    suite.add(
        "m_sigma_decreasing",
        "h -> E[sech^2(h + sigma Z)] strictly decreasing",
        max(float(np.max(np.diff([m_sigma(s, h, rule) for h in hs]))) for s in (0.0, 0.5, 1.0, 2.0)),
        0.0,
        strict=True,
    )
    at_defects, bigb, hsig = [], [], []
    for b in (1.1, 1.5, 2.0, 3.0):
        h_at = at_line(b, rule)
        f = solve_q(ModelParams(b, h_at), rule)
        at_defects.append(abs(f.alpha - 1.0))
        bigb.append(1.0 - b**2 * (1.0 - f.q))
        hsig.append(h_at - f.sigma2)
        if case_classifier(f) is not Case.CaseII:
            bigb.append(math.inf)
    suite.add("at_line_alpha", "alpha = 1 on the AT line", max(at_defects), 1e-9)
    suite.add("at_line_case_ii", "alpha = 1 implies beta^2 (1 - q) > 1", max(bigb), 0.0, strict=True)
    suite.add("at_line_h_below_sigma2", "Case II implies h < beta^2 q", max(hsig), 0.0, strict=True)

    # Parisi PDE and functional for delta_q
    mu = AtomicMeasure.delta(fp.q)
    times = tuple(np.linspace(0.0, 1.0, 11))
    config = GridConfig(times=times, rule=rule)
    vg = solve_u(mu, params, config)
    suite.add(
        "rs_identity",
        "P(delta_q) = Phi_RS",
        abs(parisi_functional(mu, params, config) - phi_rs(fp, rule)),
        1e-8,
    )
    penalty = 0.5 * params.beta**2 * mu.penalty_integral()
    suite.add(
        "rs_penalty",
        "(beta^2/2) int s mu([0,s]) ds = (beta^2/4)(1 - q^2)",
        abs(penalty - 0.25 * params.beta**2 * (1 - fp.q**2)),
        1e-14,
    )
    x = vg.xgrid[vg.xgrid <= 6.0]
    err_u = err_d = 0.0
    for t in vg.times:
        u, ux, uxx = u_delta_q_explicit(params, fp, float(t), x, rule)
        err_u = max(err_u, float(np.max(np.abs(vg.interp(t, x, "u") - u))))
        err_d = max(
            err_d,
            float(np.max(np.abs(vg.interp(t, x, "ux") - ux))),
            float(np.max(np.abs(vg.interp(t, x, "uxx") - uxx))),
        )
    suite.add("explicit_u", "PDE solution matches the closed form for delta_q (u)", err_u, 2e-6)
    suite.add("explicit_derivatives", "PDE solution matches the closed form for delta_q (ux, uxx)", err_d, 1e-4)
    suite.add(
        "derivative_bounds",
        "|ux| <= 1 and 0 <= uxx <= 1",
        max(float(np.max(np.abs(vg.ux))) - 1.0, float(np.max(vg.uxx)) - 1.0, -float(np.min(vg.uxx))),
        1e-8,
    )

    # diffusion curves
    q, alpha = fp.q, fp.alpha
    ts = np.linspace(0.0, q, 50)
    g = np.array([g_curve_quadrature(params, fp, t, rule) for t in ts])
    suite.add(
        "left_interval_sign",
        "g(t) - t >= (1 - alpha)(q - t) on [0, q]",
        float(np.max((1 - alpha) * (q - ts) - (g - ts))),
        1e-8,
    )
    eps = 1e-4
    fd = []
    for t in np.linspace(0.1 * q, 0.9 * q, 5):
        slope = (g_curve_quadrature(params, fp, t + eps, rule) - g_curve_quadrature(params, fp, t - eps, rule)) / (2 * eps)
        fd.append(abs(slope - g_prime_quadrature(params, fp, t, rule)))
    suite.add("g_prime", "g'(t) = beta^2 E[uxx(t, X_t)^2] on [0, q]", max(fd), 1e-6)
    suite.add(
        "interface_continuity",
        "g(q) = q from both sides of q",
        max(abs(g_curve_quadrature(params, fp, q, rule) - q), abs(g_curve_kernel(params, fp, q, rule) - q)),
        1e-10,
    )
    G = G_curve(params, fp, np.linspace(0.0, 1.0, 200), rule=rule)
    cell = float(np.max(np.diff(G.times)))
    suite.add(
        "G_argmin",
        "G attains its minimum at q (distance beyond one cell)",
        abs(G.times[int(np.argmin(G.values))] - q) - cell,
        0.0,
    )
    fc = f_curve(params, fp, [q], cfg.n_paths, cfg.seed, cfg.dt)
    suite.add("f_at_q", "f(q) = 0 (standard errors)", abs(fc.values[0]) / fc.stderr[0], 4.0)

    # kernel machinery
    suite.add(
        "F_mean_one",
        "int F_lambda dnu = 1",
        max(abs(nu_expect(lambda s, lam=lam: F_lambda(lam, s, rule)) - 1.0) for lam in (0.1, 0.5, 1.0, 2.0, 5.0)),
        1e-9,
    )
    suite.add("J_identity", "J(u) = 1", max(abs(J_integral(u) - 1.0) for u in (0.0, 0.5, 1.0, 5.0, 50.0)), 1e-10)
    sgrid = np.linspace(0.0, 1.0, 200)
    suite.add(
        "F_decreasing",
        "F_lambda strictly decreasing in s for lambda > 0",
        max(float(np.max(np.diff(F_lambda(lam, sgrid, rule)))) for lam in (0.1, 1.0, 5.0)),
        0.0,
        strict=True,
    )
    ss, uu = np.meshgrid(np.linspace(0, 1, 41), np.linspace(0.01, 50, 60))
    suite.add("dphi_ds_negative", "dPhi/ds < 0 for u > 0", float(np.max(dphi_ds(ss, uu))), 0.0, strict=True)
    cond = []
    for xv in (0.2, 1.0, 3.0):
        s = float(1.0 / np.cosh(xv) ** 2)
        for lam in (0.3, 1.0):
            cond.append(abs(doob_conditional(params, xv, lam, sech4, rule) - s**2 * F_lambda(lam, s, rule)))
    suite.add("kernel_conditional", "E[sech^4(X_t) | X_q = x] = s^2 F_lambda(s)", max(cond), 1e-9)

    kc = KernelContext(fp, rule)
    suite.add(
        "rho_normalization",
        "int rho_S = 1 and int s rho_S = 1 - q",
        max(
            abs(kc.density_moment(np.ones_like) - 1.0),
            abs(kc.density_moment(lambda s: s) - (1.0 - q)),
        ),
        1e-8,
    )
    suite.add(
        "r_mass",
        "int r dnu = alpha / beta^2",
        abs(nu_expect(kc.r_ratio) - alpha / params.beta**2),
        1e-8,
    )
    if kc.h_le_sigma2:
        sg = np.linspace(1e-3, 1 - 1e-3, 500)
        suite.add("r_increasing", "r increasing when h <= sigma^2", -float(np.min(np.diff(kc.r_ratio(sg)))), 0.0, strict=True)
        yg = np.linspace(1e-3, 10.0, 400)
        suite.add(
            "log_r_slope",
            "d/dy log r <= -tanh y - y / sigma^2",
            float(np.max(kc.log_r_derivative(yg) + np.tanh(yg) + yg / fp.sigma2)),
            0.0,
        )
        lams = kc.lambda_grid(64)
        a2 = np.array([kc.a2_kernel(lam) for lam in lams])
        suite.add("a2_decreasing", "a2(lambda) <= a2(0)", float(np.max(a2 - a2[0])), 1e-9)
        mid = kc.lambda_max / 2
        suite.add(
            "covariance_identity",
            "int (F_lambda - 1) r dnu = a2(lambda) - a2(0)",
            abs(kc.covariance_gap(mid) - (kc.a2_kernel(mid) - a2[0])),
            1e-9,
        )
        if alpha <= 1.0:
            curve = kc.mbar_curve(lams, check=False)
            suite.add(
                "mbar_lower_bound",
                "Mbar(lambda) >= 1 - q - lambda / beta^2",
                float(np.max((1 - q - lams / params.beta**2) - curve.values)),
                1e-8,
            )
    suite.add("a2_at_zero", "a2(0) = alpha / beta^2", abs(kc.a2_kernel(0.0) - alpha / params.beta**2), 1e-9)

    # Monte Carlo cross-check of the conditional law
    lam = min(0.5, fp.lambda_max)
    y = simulate_from_atom(params, 0.8, lam, cfg.n_paths, cfg.seed, cfg.dt)
    mc, se = pair_mean_stderr(sech4(y))
    suite.add(
        "doob_vs_sde",
        "tilted Gaussian formula matches the drifted SDE (standard errors)",
        abs(mc - doob_conditional(params, 0.8, lam, sech4, rule)) / se,
        3.0,
    )

    # exact enumeration anchor
    two = DisorderSample(2, np.array([1.0]))
    exact = 0.5 * math.log(2 * math.exp(1 / math.sqrt(2)) + 2 * math.exp(-1 / math.sqrt(2)))
    suite.add("sk_two_spins", "N=2 enumeration by hand", abs(free_energy_one(two, ModelParams(1.0, 0.0)) - exact), 1e-14)
    return suite.records
