"""Scenario-driven experiment runner.

Scenarios are INI files with sections [structure], [gevrey], [chi], [u],
[run] (and optionally [poincare], [trace]).  Verbs:

    validate   Lipschitz normalization + phase-decay radius report
    sweep      operator convergence sweep (mode from the scenario)
    poincare   approximate primitive solve with residual CSV
    trace      spectral trace consistency and regularity checks
    report     validate + the scenario's mode, with a combined summary

Exit codes: 0 pass, 2 validation failure, 3 numeric failure, 4 config error.
All outputs (CSV + key=value summary) are deterministic for a fixed scenario.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np
import sympy as sp

from .approx import (
    ApproxConfig,
    DistributionData,
    PointFunctional,
    convergence_sweep,
    default_chi,
)
from .multiindex import MultiIndex
from .poincare import FormPQ, L_operator, approximate_solve
from .quadrature import QuadratureRule
from .sampled import Box, ExprFunction, ParameterError
from .structure import (
    BUILTIN_STRUCTURES,
    DomainRadii,
    StructureMap,
    builtin_structure,
    find_T,
    validate_lipschitz,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_CONFIG = 4

_MODES = {
    "validate": None,
    "g-sweep": "G_to_chi_u",
    "r-sweep": "R_decay",
    "e-sweep": "E_to_u",
    "poincare": None,
    "trace": None,
}

_ALLOWED_FUNCS = {sp.exp, sp.sin, sp.cos}


class ConfigError(ValueError):
    pass


_ALLOWED_NAMES = {"exp", "sin", "cos", "I", "pi"}


def _safe_expr(text: str, table: dict):
    import io
    import tokenize

    # whitelist tokens before handing the string to the symbolic parser:
    # only known symbols, a few functions, numbers and arithmetic operators
    try:
        tokens = list(tokenize.generate_tokens(io.StringIO(text).readline))
    except tokenize.TokenError as e:
        raise ConfigError(f"cannot tokenize expression {text!r}: {e}") from None
    for tok in tokens:
        if tok.type == tokenize.NAME:
            if tok.string not in table and tok.string not in _ALLOWED_NAMES:
                raise ConfigError(
                    f"unknown name {tok.string!r} in expression {text!r}"
                )
        elif tok.type == tokenize.OP:
            if tok.string not in {"+", "-", "*", "/", "**", "(", ")", ","}:
                raise ConfigError(
                    f"operator {tok.string!r} not in the scenario grammar"
                )
        elif tok.type not in (tokenize.NUMBER, tokenize.NEWLINE,
                              tokenize.NL, tokenize.ENDMARKER,
                              tokenize.INDENT, tokenize.DEDENT):
            raise ConfigError(f"token {tok.string!r} not allowed in {text!r}")
    try:
        expr = sp.sympify(text, locals=dict(table))
    except (sp.SympifyError, SyntaxError, TypeError) as e:
        raise ConfigError(f"cannot parse expression {text!r}: {e}") from None
    for f in expr.atoms(sp.Function):
        if f.func not in _ALLOWED_FUNCS:
            raise ConfigError(f"function {f.func} not in the scenario grammar")
    extra = expr.free_symbols - set(table.values())
    if extra:
        raise ConfigError(f"unknown symbols in {text!r}: {sorted(map(str, extra))}")
    return expr


def _load_scenario(path: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"scenario file not found: {path}")
    if "structure" not in cp:
        raise ConfigError("scenario needs a [structure] section")
    return cp


def _build_structure(cp) -> StructureMap:
    sec = cp["structure"]
    if "name" in sec:
        name = sec["name"].strip()
        if name not in BUILTIN_STRUCTURES:
            raise ConfigError(f"unknown structure {name!r}")
        return builtin_structure(name)
    if "phi" in sec:
        m = sec.getint("m", 1)
        n = sec.getint("n", 1)
        probe = StructureMap(m, n, [sp.Integer(0)] * m, label="probe")
        table = {str(s): s for s in probe.syms}
        if m == 1:
            table["x"] = probe.x_syms[0]
        if n == 1:
            table["t"] = probe.t_syms[0]
        exprs = [
            _safe_expr(part.strip(), table)
            for part in sec["phi"].split(";")
        ]
        return StructureMap(m, n, exprs, label="custom")
    raise ConfigError("[structure] needs either name or phi")


def _build_radii(cp, S: StructureMap) -> DomainRadii:
    R = cp["structure"].getfloat("R", 0.4)
    check = validate_lipschitz(S, R)
    if not check["ok"]:
        raise _ValidationFailure(check["worst_ratio"])
    T = find_T(S, R)
    T_req = cp["structure"].getfloat("T", fallback=None)
    if T_req is not None:
        if T_req <= 0.0 or T_req > T + 1e-12:
            raise ConfigError(
                f"requested T={T_req} outside the admissible range (0, {T:.6g}]"
            )
        T = T_req
    return DomainRadii(R=R, T=T)


class _ValidationFailure(RuntimeError):
    def __init__(self, worst):
        super().__init__(f"Lipschitz normalization violated: {worst}")
        self.worst = worst


def _build_u(cp, S: StructureMap):
    if "u" not in cp:
        raise ConfigError("scenario needs a [u] section for this mode")
    sec = cp["u"]
    if "expr" in sec:
        return ExprFunction(
            _safe_expr(sec["expr"], S.symbol_table()), S.syms, S.domain
        )
    if sec.get("kind", "").strip() == "point":
        loc = tuple(float(v) for v in sec.get("location", "0").split(","))
        order = MultiIndex(
            int(v) for v in sec.get("order", "0").split(",")
        )
        weight = complex(sec.get("weight", "1"))
        t_syms = sp.symbols(f"t1:{S.n + 1}")
        table = {str(s): s for s in t_syms}
        if S.n == 1:
            table["t"] = t_syms[0]
        prof_expr = _safe_expr(sec.get("t_profile", "1"), table)
        prof = ExprFunction(prof_expr, t_syms, Box.cube(4.0, S.n))
        return DistributionData(points=(
            PointFunctional(loc, order, weight, prof),
        ))
    raise ConfigError("[u] needs expr or kind=point")


def _build_cfg(cp, S, radii, tau: float) -> ApproxConfig:
    chi_s = cp["chi"].getfloat("s", 2.0) if "chi" in cp else 2.0
    rule_pts = cp["run"].getint("quad_points", 64) if "run" in cp else 64
    chi = default_chi(radii, S.m, chi_s)
    return ApproxConfig(tau, chi, QuadratureRule(points_per_axis=rule_pts),
                        S, radii)


def _tau_grid(cp):
    if "run" not in cp or "tau_grid" not in cp["run"]:
        raise ConfigError("scenario needs [run] tau_grid")
    return [float(v) for v in cp["run"]["tau_grid"].split(",")]


def _write_summary(path, entries: dict):
    with open(path, "w") as fh:
        for k in sorted(entries):
            fh.write(f"{k}={entries[k]}\n")


def _run_validate(cp, out_dir, args) -> dict:
    S = _build_structure(cp)
    R = cp["structure"].getfloat("R", 0.4)
    check = validate_lipschitz(S, R)
    entries = {
        "structure": S.label,
        "R": f"{R:.17g}",
        "worst_ratio": f"{check['worst_ratio']:.17g}",
        "lipschitz_ok": str(check["ok"]).lower(),
    }
    if check["ok"]:
        T = find_T(S, R)
        entries["T"] = f"{T:.17g}"
    _write_summary(os.path.join(out_dir, "validate.txt"), entries)
    if not check["ok"]:
        raise _ValidationFailure(check["worst_ratio"])
    return entries


def _run_sweep(cp, out_dir, args) -> dict:
    mode_key = cp["run"].get("mode", "g-sweep").strip()
    mode = _MODES.get(mode_key)
    if mode is None:
        raise ConfigError(f"mode {mode_key!r} is not a sweep mode")
    S = _build_structure(cp)
    radii = _build_radii(cp, S)
    taus = _tau_grid(cp)
    u = _build_u(cp, S)
    cfg = _build_cfg(cp, S, radii, taus[0])
    report = convergence_sweep(
        u, cfg, taus, mode,
        grid=args.grid, gevrey_cap=min(args.order_cap, 1),
        threads=args.threads,
    )
    csv_path = os.path.join(out_dir, f"{mode_key}.csv")
    report.to_csv(csv_path)
    entries = {
        "mode": mode_key,
        "fitted_slope": f"{report.fitted_slope:.17g}",
        "fitted_exp_rate": f"{report.fitted_exp_rate:.17g}",
        "monotone_tail": str(report.monotone_tail).lower(),
        "sup_error_final": f"{report.sup_errors[-1]:.17g}",
        "bound_dominates": str(all(
            e <= b * (1 + 1e-9)
            for e, b in zip(report.sup_errors, report.bound_values)
        )).lower(),
    }
    _write_summary(os.path.join(out_dir, f"{mode_key}_summary.txt"), entries)
    return entries


def _run_poincare(cp, out_dir, args) -> dict:
    if "poincare" not in cp:
        raise ConfigError("scenario needs a [poincare] section")
    S = _build_structure(cp)
    radii = _build_radii(cp, S)
    sec = cp["poincare"]
    table = S.symbol_table()
    if "primitive" in sec:
        g0 = ExprFunction(_safe_expr(sec["primitive"], table), S.syms, S.domain)
        zero_form = FormPQ(0, 0, S.m, S.n, {((), ()): g0})
        f = L_operator(zero_form, S)
    else:
        coeffs = {}
        for key, val in sec.items():
            if not key.startswith("f_"):
                continue
            J = tuple(int(c) for c in key[2:])
            coeffs[((), J)] = ExprFunction(
                _safe_expr(val, table), S.syms, S.domain
            )
        if not coeffs:
            raise ConfigError("[poincare] needs primitive or f_<J> entries")
        q = len(next(iter(coeffs))[1])
        f = FormPQ(0, q, S.m, S.n, coeffs)
    taus = _tau_grid(cp)
    cfg = _build_cfg(cp, S, radii, taus[0])
    _, report = approximate_solve(f, cfg, taus, grid=max(3, min(args.grid, 7)))
    report.to_csv(os.path.join(out_dir, "poincare.csv"))
    decreasing = all(
        b < a for a, b in zip(report.residuals, report.residuals[1:])
    )
    entries = {
        "residual_final": f"{report.residuals[-1]:.17g}",
        "residuals_decreasing": str(decreasing).lower(),
    }
    _write_summary(os.path.join(out_dir, "poincare_summary.txt"), entries)
    return entries


def _run_trace(cp, out_dir, args) -> dict:
    from .gevrey import gevrey_bump
    from .trace import default_cutoff, trace_consistency, trace_t_regularity

    if "trace" not in cp:
        raise ConfigError("scenario needs a [trace] section")
    sec = cp["trace"]
    m = sec.getint("m", 1)
    n = sec.getint("n", 1)
    half = sec.getfloat("box", 5.0)
    grid = sec.getint("grid", 256)
    padding = sec.getint("padding", 4)
    xs = sp.symbols(f"x1:{m + 1}")
    ts = sp.symbols(f"t1:{n + 1}")
    table = {str(s): s for s in xs + ts}
    if m == 1:
        table["x"] = xs[0]
    if n == 1:
        table["t"] = ts[0]
    u = DistributionData(
        density=ExprFunction(
            _safe_expr(sec.get("density", "exp(-x**2-t**2)"), table),
            xs + ts, Box.cube(half, m + n),
        )
    )
    cutoff = default_cutoff(half, m + n, plateau=0.6 * half, grid=grid,
                            padding=padding)
    phi = gevrey_bump(2.0, 0.5, 1.0, m)
    psi = gevrey_bump(2.0, 0.5, 1.0, n)
    cons = trace_consistency(u, cutoff, phi, psi)
    reg = trace_t_regularity(
        u, cutoff, phi,
        t_grid=[np.zeros(n), 0.3 * np.ones(n)],
        order_cap=min(args.order_cap, 4),
    )
    entries = {
        "consistency_residual": f"{cons['residual']:.17g}",
        "gevrey_certificate": str(reg["gevrey_certificate"]).lower(),
        "certificate_b": f"{reg['b']:.17g}",
    }
    _write_summary(os.path.join(out_dir, "trace_summary.txt"), entries)
    return entries


def _run_report(cp, out_dir, args) -> dict:
    entries = _run_validate(cp, out_dir, args)
    mode_key = cp["run"].get("mode", "validate").strip() if "run" in cp else "validate"
    if mode_key in ("g-sweep", "r-sweep", "e-sweep"):
        entries.update(_run_sweep(cp, out_dir, args))
    elif mode_key == "poincare":
        entries.update(_run_poincare(cp, out_dir, args))
    elif mode_key == "trace":
        entries.update(_run_trace(cp, out_dir, args))
    _write_summary(os.path.join(out_dir, "summary.txt"), entries)
    return entries


_VERBS = {
    "validate": _run_validate,
    "sweep": _run_sweep,
    "poincare": _run_poincare,
    "trace": _run_trace,
    "report": _run_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gevreylab",
        description="scenario runner for the Gaussian approximation laboratory",
    )
    parser.add_argument("verb", choices=sorted(_VERBS))
    parser.add_argument("--scenario", required=True, help="scenario INI file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--grid", type=int, default=17,
                        help="evaluation grid points per axis")
    parser.add_argument("--order-cap", type=int, default=1, dest="order_cap")
    args = parser.parse_args(argv)

    try:
        cp = _load_scenario(args.scenario)
    except (ConfigError, configparser.Error) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(args.out, exist_ok=True)
    try:
        _VERBS[args.verb](cp, args.out, args)
    except (ConfigError, ParameterError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except _ValidationFailure as e:
        print(f"validation failure: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # numeric failures surface here
        print(f"numeric failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
