"""Command-line entry point.

Every subcommand accepts ``--config FILE`` holding ``key = value`` lines
(``#`` starts a comment); keys are the long option names with dashes or
underscores.  Values given on the command line win over the file.

Exit codes: 0 success, 1 failed check, 2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from . import __version__
from .diffusion import DEFAULT_DT, f_curve, g_curve, g_curve_quadrature, simulate, Curve
from .kernel import KernelContext
from .parisi import AtomicMeasure, GridConfig, GridOverflowError, parisi_functional, rsb_search, solve_u
from .quadrature import QuadratureError, build_rule
from .rs import ContractViolation, ConvergenceError, ModelParams, at_line, case_classifier, phi_rs, solve_q
from .sk import disorder_average
from .verify import VerifyConfig, run_suite

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# serialization


def fmt_float(x: float) -> str:
    return "%.17g" % x


def _cell(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    return str(v)


def to_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _plain(v: Any) -> Any:
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def to_json(obj: Any) -> str:
    """JSON with shortest round-trip float repr, stable key order and a trailing newline."""
    return json.dumps(_plain(obj), indent=2) + "\n"


def table_to_json(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    return to_json([dict(zip(header, row)) for row in rows])


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Option:
    name: str
    type: Any
    default: Any
    help: str
    positive: bool = False
    nonneg: bool = False


COMMON = [
    Option("beta", float, 1.5, "inverse temperature", positive=True),
    Option("h", float, 0.5, "external field", nonneg=True),
    Option("seed", int, 0, "master seed", nonneg=True),
    Option("format", str, "csv", "output format: csv or json"),
    Option("output", str, "-", "output path ('-' for stdout)"),
    Option("order", int, None, "use a Gauss-Hermite rule of this order instead of the default rule", positive=True),
    Option("threads", int, None, "worker threads for Monte Carlo blocks and disorder samples", positive=True),
]

SPECIFIC = {
    "fixed-point": [
        Option("beta_grid", str, None, "lo:hi:n sweep of beta (overrides --beta)"),
        Option("h_grid", str, None, "lo:hi:n sweep of h (overrides --h)"),
    ],
    "at-line": [
        Option("betas", str, "1.0,1.1,1.5,2.0,3.0", "comma-separated beta values"),
        Option("beta_grid", str, None, "lo:hi:n sweep of beta (overrides --betas)"),
    ],
    "parisi-eval": [
        Option("atoms", str, None, "comma-separated atom locations (default: q)"),
        Option("weights", str, None, "comma-separated weights (default: uniform)"),
        Option("x_max", float, None, "x-grid half-width", positive=True),
        Option("dx", float, 2e-3, "x-grid spacing", positive=True),
    ],
    "g-curve": [
        Option("t_points", int, 50, "number of points on [0, q]", positive=True),
        Option("source", str, "quadrature", "quadrature or mc"),
        Option("n_paths", int, 200_000, "Monte Carlo paths (mc source)", positive=True),
        Option("dt", float, DEFAULT_DT, "Euler step (mc source)", positive=True),
        Option("dx", float, 2e-3, "x-grid spacing (mc source)", positive=True),
    ],
    "f-curve": [
        Option("t_points", int, 21, "number of points on [q, 1]", positive=True),
        Option("n_paths", int, 200_000, "Monte Carlo paths", positive=True),
        Option("dt", float, DEFAULT_DT, "Euler step", positive=True),
    ],
    "kernel": [
        Option("lambda_points", int, 64, "number of lambda points on [0, beta^2 (1 - q)]", positive=True),
    ],
    "verify-lemmas": [
        Option("n_paths", int, 50_000, "Monte Carlo paths for stochastic checks", positive=True),
        Option("dt", float, DEFAULT_DT, "Euler step for stochastic checks", positive=True),
        Option("tolerance_scale", float, 1.0, "multiply every tolerance by this factor", nonneg=True),
    ],
    "rsb-search": [
        Option("k", int, 2, "maximum number of atoms (1, 2 or 3)", positive=True),
        Option("budget", int, 600, "functional evaluations", positive=True),
    ],
    "sk-enum": [
        Option("n", str, "8,12,16", "comma-separated system sizes"),
        Option("samples", int, 200, "disorder samples per size", positive=True),
    ],
}


def parse_config_file(path: str) -> dict[str, str]:
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def resolve(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults < config file < flags and validate."""
    options = {o.name: o for o in COMMON + SPECIFIC[command]}
    values = {name: o.default for name, o in options.items()}
    if ns.config:
        for key, raw in parse_config_file(ns.config).items():
            if key not in options:
                raise UsageError(f"unknown config key {key!r} for {command}")
            try:
                values[key] = options[key].type(raw)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {raw!r}") from exc
    for name in options:
        flag = getattr(ns, name, None)
        if flag is not None:
            values[name] = flag
    for name, o in options.items():
        v = values[name]
        if v is None or not isinstance(v, (int, float)):
            continue
        if (o.positive and not v > 0) or (o.nonneg and not v >= 0) or not math.isfinite(v):
            raise UsageError(f"{name} must be {'positive' if o.positive else 'nonnegative'}, got {v}")
    if values["format"] not in ("csv", "json"):
        raise UsageError("format must be csv or json")
    return values


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _grid(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        return np.linspace(float(lo), float(hi), int(n))
    except ValueError as exc:
        raise UsageError(f"expected lo:hi:n, got {text!r}") from exc


def _rule(cfg):
    return build_rule(cfg["order"]) if cfg["order"] else None


def _make_params(beta, h) -> ModelParams:
    try:
        return ModelParams(float(beta), float(h))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _params(cfg) -> ModelParams:
    return _make_params(cfg["beta"], cfg["h"])


def _table(cfg, header, rows) -> str:
    return to_csv(header, rows) if cfg["format"] == "csv" else table_to_json(header, rows)


def _curve_table(cfg, curve: Curve) -> str:
    return _table(cfg, ["t", "value", "stderr"], list(zip(curve.times, curve.values, curve.stderr)))


# ---------------------------------------------------------------------------
# subcommands


def cmd_fixed_point(cfg) -> tuple[str, int]:
    rule = _rule(cfg)
    betas = _grid(cfg["beta_grid"]) if cfg["beta_grid"] else [cfg["beta"]]
    hs = _grid(cfg["h_grid"]) if cfg["h_grid"] else [cfg["h"]]
    header = ["beta", "h", "q", "alpha", "sigma2", "phi_rs", "residual", "case"]
    rows = []
    for b in betas:
        for h in hs:
            fp = solve_q(_make_params(b, h), rule)
            rows.append([float(b), float(h), fp.q, fp.alpha, fp.sigma2, phi_rs(fp, rule), fp.residual, case_classifier(fp).value])
    return _table(cfg, header, rows), EXIT_OK


def cmd_at_line(cfg) -> tuple[str, int]:
    rule = _rule(cfg)
    betas = _grid(cfg["beta_grid"]) if cfg["beta_grid"] else _floats(cfg["betas"])
    rows, code = [], EXIT_OK
    for b in betas:
        _make_params(b, 0.0)
        try:
            h_at = at_line(float(b), rule)
            alpha = solve_q(ModelParams(float(b), h_at), rule).alpha
            ok = b <= 1.0 or abs(alpha - 1.0) <= 1e-9
        except ConvergenceError:
            h_at, alpha, ok = math.nan, math.nan, False
        if not ok:
            code = EXIT_NUMERIC
        rows.append([float(b), h_at, alpha, ok])
    return _table(cfg, ["beta", "h_at", "alpha", "ok"], rows), code


def cmd_parisi_eval(cfg) -> tuple[str, int]:
    params, rule = _params(cfg), _rule(cfg)
    fp = solve_q(params, rule)
    atoms = _floats(cfg["atoms"]) if cfg["atoms"] else [fp.q]
    weights = _floats(cfg["weights"]) if cfg["weights"] else [1.0 / len(atoms)] * len(atoms)
    try:
        mu = AtomicMeasure(tuple(atoms), tuple(weights))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    value = parisi_functional(mu, params, GridConfig(x_max=cfg["x_max"], dx=cfg["dx"], rule=rule))
    rs = phi_rs(fp, rule)
    header = ["beta", "h", "atoms", "weights", "value", "phi_rs", "difference"]
    row = [params.beta, params.h, " ".join(map(fmt_float, atoms)), " ".join(map(fmt_float, weights)), value, rs, value - rs]
    return _table(cfg, header, [row]), EXIT_OK


def cmd_g_curve(cfg) -> tuple[str, int]:
    params, rule = _params(cfg), _rule(cfg)
    fp = solve_q(params, rule)
    ts = np.linspace(0.0, fp.q, cfg["t_points"])
    if cfg["source"] == "quadrature":
        curve = Curve(ts, [g_curve_quadrature(params, fp, t, rule) for t in ts], None)
    elif cfg["source"] == "mc":
        mu = AtomicMeasure.delta(fp.q)
        vg = solve_u(mu, params, GridConfig(dx=cfg["dx"], times=tuple(ts), rule=rule))
        ens = simulate(mu, params, vg, cfg["n_paths"], cfg["dt"], cfg["seed"], record=ts, workers=cfg["threads"])
        curve = g_curve(ens, vg)
    else:
        raise UsageError("source must be quadrature or mc")
    return _curve_table(cfg, curve), EXIT_OK


def cmd_f_curve(cfg) -> tuple[str, int]:
    params, rule = _params(cfg), _rule(cfg)
    fp = solve_q(params, rule)
    ts = np.linspace(fp.q, 1.0, cfg["t_points"])
    curve = f_curve(params, fp, ts, cfg["n_paths"], cfg["seed"], cfg["dt"], workers=cfg["threads"])
    return _curve_table(cfg, curve), EXIT_OK


def cmd_kernel(cfg) -> tuple[str, int]:
    params, rule = _params(cfg), _rule(cfg)
    fp = solve_q(params, rule)
    kc = KernelContext(fp, rule)
    lams = kc.lambda_grid(cfg["lambda_points"])
    mbar = kc.mbar_curve(lams, check=False)
    header = ["lambda", "t", "a2", "mbar", "mbar_lower_bound", "covariance_gap"]
    rows = []
    for lam, t, m in zip(lams, mbar.times, mbar.values):
        gap = kc.covariance_gap(float(lam)) if kc.h_le_sigma2 else math.nan
        rows.append([float(lam), float(t), kc.a2_kernel(float(lam)), float(m), 1 - fp.q - lam / params.beta**2, gap])
    return _table(cfg, header, rows), EXIT_OK


def cmd_verify(cfg) -> tuple[str, int]:
    vc = VerifyConfig(
        beta=cfg["beta"],
        h=cfg["h"],
        seed=cfg["seed"],
        n_paths=cfg["n_paths"],
        dt=cfg["dt"],
        tolerance_scale=cfg["tolerance_scale"],
        rule=_rule(cfg),
    )
    records = run_suite(vc)
    report = {
        "version": __version__,
        "beta": vc.beta,
        "h": vc.h,
        "seed": vc.seed,
        "checks": [r.as_json() for r in records],
        "all_pass": all(r.passed for r in records),
    }
    return to_json(report), EXIT_OK if report["all_pass"] else EXIT_CHECK


def cmd_rsb_search(cfg) -> tuple[str, int]:
    params = _params(cfg)
    if cfg["k"] not in (1, 2, 3):
        raise UsageError("k must be 1, 2 or 3")
    res = rsb_search(params, cfg["k"], cfg["budget"], GridConfig(rule=_rule(cfg)), seed=cfg["seed"])
    mu = res.best_measure
    header = ["beta", "h", "atoms", "weights", "best_value", "rs_value", "improvement", "evaluations", "exhausted"]
    row = [
        params.beta,
        params.h,
        " ".join(map(fmt_float, mu.atoms)),
        " ".join(map(fmt_float, mu.weights)),
        res.best_value,
        res.rs_value,
        res.improvement,
        res.evaluations,
        res.exhausted,
    ]
    return _table(cfg, header, [row]), EXIT_OK


def cmd_sk_enum(cfg) -> tuple[str, int]:
    params = _params(cfg)
    rs = phi_rs(solve_q(params, _rule(cfg)), _rule(cfg))
    sizes = [int(n) for n in _floats(cfg["n"])]
    if any(n < 1 or n > 24 for n in sizes):
        raise UsageError("sizes must lie in [1, 24]")
    if cfg["samples"] < 2:
        raise UsageError("samples must be at least 2")
    rows = []
    for n in sizes:
        est = disorder_average(n, params, cfg["samples"], cfg["seed"], workers=cfg["threads"])
        rows.append([n, est.mean, est.stderr, rs, est.mean - rs])
    return _table(cfg, ["n", "mean", "stderr", "phi_rs", "gap"], rows), EXIT_OK


COMMANDS = {
    "fixed-point": (cmd_fixed_point, "replica-symmetric fixed point, alpha, Phi_RS and case"),
    "at-line": (cmd_at_line, "AT line h(beta) with alpha = 1"),
    "parisi-eval": (cmd_parisi_eval, "Parisi functional of an atomic measure"),
    "g-curve": (cmd_g_curve, "g(t) = E[u_x(t, X_t)^2] on [0, q]"),
    "f-curve": (cmd_f_curve, "f(t) = E[tanh^2(X_t)] - t on [q, 1] by simulation"),
    "kernel": (cmd_kernel, "a2(lambda), Mbar(lambda) and covariance gap on a lambda grid"),
    "verify-lemmas": (cmd_verify, "run the numerical check suite and emit a JSON report"),
    "rsb-search": (cmd_rsb_search, "minimize the Parisi functional over k-atom measures"),
    "sk-enum": (cmd_sk_enum, "finite-N free energy by exact enumeration"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rslab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="key = value file; command-line flags take precedence")
        for o in COMMON + SPECIFIC[name]:
            # defaults are applied in resolve() so the config file can sit between them and the flags
            p.add_argument("--" + o.name.replace("_", "-"), dest=o.name, type=o.type, default=None,
                           help=f"{o.help} (default: {o.default})")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    func = COMMANDS[ns.command][0]
    try:
        cfg = resolve(ns.command, ns)
        text, code = func(cfg)
    except UsageError as exc:
        print(f"rslab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ContractViolation as exc:
        print(f"rslab: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (ConvergenceError, QuadratureError, GridOverflowError, FloatingPointError) as exc:
        print(f"rslab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if cfg["output"] == "-":
        sys.stdout.write(text)
    else:
        with open(cfg["output"], "w") as fh:
            fh.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
