"""End-to-end acceptance checks: closed-form witnesses, convergence rates,
solver residuals and pipeline determinism, each with an explicit runtime
budget and, for the quadrature-backed results, a point-doubling
self-consistency check."""

import itertools
import math
import textwrap
import time

import numpy as np
import pytest
import sympy as sp

from gevreylab.approx import (
    ApproxConfig,
    DistributionData,
    E_tau_values,
    G_tau,
    PointFunctional,
    R_tau_direct,
    R_tau_stokes,
    convergence_sweep,
    default_chi,
    evaluation_grid,
    polynomial_approximant,
    vanishing_trace_check,
)
from gevreylab.cli import EXIT_OK, main
from gevreylab.gevrey import (
    compose_derivative,
    faa_di_bruno_terms,
    gevrey_bump,
)
from gevreylab.multiindex import MultiIndex, iter_multiindices
from gevreylab.poincare import (
    FormPQ,
    L_operator,
    approximate_solve,
    homotopy_check,
)
from gevreylab.quadrature import QuadratureRule, tensor_nodes
from gevreylab.sampled import Box, ExprFunction, constant_function
from gevreylab.structure import (
    DomainRadii,
    builtin_structure,
    dual_frame,
    find_T,
)
from gevreylab.trace import (
    TraceProfile,
    default_cutoff,
    trace_at,
    trace_consistency,
    trace_t_regularity,
)


def _config(name, tau, R=0.4, points=64, T=None):
    S = builtin_structure(name)
    radii = DomainRadii(R=R, T=T if T is not None else find_T(S, R))
    return ApproxConfig(
        tau=tau,
        chi=default_chi(radii, S.m),
        rule=QuadratureRule(points_per_axis=points),
        structure=S,
        radii=radii,
    )


class Budget:
    """Context manager asserting a wall-clock budget in seconds."""

    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.monotonic()
        return self

    def __exit__(self, *exc):
        if exc[0] is None:
            assert time.monotonic() - self.start < self.seconds


# ---------------------------------------------------------------------------
# 1. frame duality


def test_acceptance_frame_duality():
    with Budget(5.0):
        for name in ("translation", "mizohata", "shear", "cr2"):
            S = builtin_structure(name)
            pts = Box.cube(0.4, S.N).grid(17)
            worst = 0.0
            for p in pts:
                fc = dual_frame(S, p)
                g1 = fc.Zx @ fc.Zx_inv - np.eye(S.m)
                g2 = fc.Zt - fc.Zx @ fc.Zx_inv @ fc.Zt
                worst = max(
                    worst,
                    float(np.max(np.abs(g1))),
                    float(np.max(np.abs(g2))),
                )
            assert worst < 1e-12


# ---------------------------------------------------------------------------
# 2. chain-rule engine against independent symbolic differentiation


def _random_expr(rng, syms, depth=2):
    choices = [sp.sin, sp.cos, sp.exp]
    expr = sp.Integer(0)
    for _ in range(depth):
        term = sp.Rational(rng.integers(-3, 4), rng.integers(1, 4))
        for s in syms:
            term *= s ** int(rng.integers(0, 3))
        if rng.random() < 0.4:
            fn = choices[int(rng.integers(0, 3))]
            term *= fn(sum(
                sp.Rational(rng.integers(-2, 3), 4) * s for s in syms
            ))
        expr += term
    return expr + sp.Rational(1, 2)


def test_acceptance_compose_derivative_oracle():
    with Budget(10.0):
        # concrete witness: (exp(x^2))''' at x = 1 is 20 e
        x = sp.symbols("x")
        f = ExprFunction(sp.exp(x), (x,), Box((-1.0,), (5.0,)))
        g = ExprFunction(x**2, (x,), Box((-2.0,), (2.0,)))
        assert abs(
            compose_derivative(f, g, (3,), (1.0,)) - 20.0 * math.e
        ) < 1e-10 * math.e

        rng = np.random.default_rng(7)
        checked = 0
        while checked < 30:
            d = int(rng.integers(1, 3))
            p = int(rng.integers(1, 3))
            xs = sp.symbols(f"x1:{d + 1}")
            ys = sp.symbols(f"y1:{p + 1}")
            inner = [_random_expr(rng, xs) for _ in range(p)]
            outer = _random_expr(rng, ys)
            order = int(rng.integers(1, 7 - d))
            alpha = MultiIndex(
                np.bincount(rng.integers(0, d, order), minlength=d)
            )
            if alpha.order == 0:
                continue
            point = rng.uniform(-0.5, 0.5, d)
            got = compose_derivative(
                ExprFunction(outer, ys, Box.cube(50.0, p)),
                [ExprFunction(e, xs, Box.cube(1.0, d)) for e in inner],
                alpha,
                point,
            )
            composed = outer.subs(dict(zip(ys, inner)), simultaneous=True)
            for s, k in zip(xs, alpha):
                if k:
                    composed = sp.diff(composed, s, k)
            want = complex(composed.subs(dict(zip(xs, point))).evalf())
            assert abs(got - want) / max(1.0, abs(want)) < 1e-8
            checked += 1


# ---------------------------------------------------------------------------
# 3. partition weight identity, exact integer arithmetic


def test_acceptance_partition_weights_exact():
    cases = [MultiIndex((k,)) for k in range(1, 9)]
    cases += [a for a in iter_multiindices(2, 8) if a.order >= 1]
    for alpha in cases:
        for term in faa_di_bruno_terms(alpha, 1):
            weighted = sum(
                d.order * b.order for d, b in zip(term.deltas, term.betas)
            )
            assert weighted == alpha.order
            kappa = MultiIndex.zero(1)
            for b in term.betas:
                kappa = kappa + b
            assert kappa == term.kappa


# ---------------------------------------------------------------------------
# 4. same-slice operator convergence with the closed-form second moment


def test_acceptance_G_tau_rate():
    with Budget(30.0):
        taus = [1e2, 1e3, 1e4, 1e5]
        errors = []
        for tau in taus:
            cfg = _config("translation", tau)
            S = cfg.structure
            u = S.expr_function(S.x_syms[0] ** 2)
            # chi u vanishes at the origin, so the error there is the
            # Gaussian second moment 1/(2 tau) exactly, up to the cutoff tail
            err = abs(G_tau(u, cfg, np.array([0.0, 0.0])))
            tail = np.exp(-tau * (cfg.radii.R / 2.0) ** 2)
            assert abs(err - 1.0 / (2.0 * tau)) < 1e-8 + 10.0 * tail
            errors.append(err)
        slope = np.polyfit(np.log(taus), np.log(errors), 1)[0]
        assert slope <= -0.45
        C = errors[0] * math.sqrt(taus[0])
        assert all(
            e <= C / math.sqrt(t) * (1.0 + 1e-9)
            for t, e in zip(taus, errors)
        )
        # self-consistency: doubling the rule changes the result by less
        # than ten times the stated tolerance
        cfg2 = _config("translation", 1e3, points=128)
        u2 = cfg2.structure.expr_function(cfg2.structure.x_syms[0] ** 2)
        a = G_tau(u2, _config("translation", 1e3), np.array([0.0, 0.0]))
        b = G_tau(u2, cfg2, np.array([0.0, 0.0]))
        assert abs(a - b) <= 10.0 * 1e-8


# ---------------------------------------------------------------------------
# 5. Stokes path form of the remainder


def test_acceptance_stokes_identity():
    with Budget(60.0):
        p = np.array([0.05, 0.1])
        for tau in (50.0, 200.0):
            cfg = _config("mizohata", tau, points=256)
            S = cfg.structure
            Z = S.symbol_table()["Z"]
            for expr in (sp.Integer(1), Z, Z**2):
                u = S.expr_function(expr)
                direct = R_tau_direct(u, cfg, p)
                stokes = R_tau_stokes(u, cfg, p)
                scale = max(abs(direct), 1e-14)
                assert abs(direct - stokes) / scale < 1e-6
        # self-consistency under point doubling for one representative case
        cfg = _config("mizohata", 50.0, points=256)
        u = cfg.structure.expr_function(cfg.structure.symbol_table()["Z"] ** 2)
        a = R_tau_stokes(u, cfg, p)
        b = R_tau_stokes(u, _config("mizohata", 50.0, points=512), p)
        assert abs(a - b) <= 10.0 * 1e-6 * max(abs(a), 1e-14)


# ---------------------------------------------------------------------------
# 6. remainder decay sweep


def test_acceptance_R_tau_decay():
    with Budget(120.0):
        cfg = _config("mizohata", 1.0)
        S = cfg.structure
        u = S.expr_function(S.symbol_table()["Z"] ** 2)
        taus = [100.0, 200.0, 400.0, 800.0]
        rep = convergence_sweep(u, cfg, taus, "R_decay", grid=9)
        assert all(b < a for a, b in zip(rep.sup_errors, rep.sup_errors[1:]))
        assert rep.fitted_exp_rate < 0.0
        assert all(
            e <= b * (1.0 + 1e-9)
            for e, b in zip(rep.sup_errors, rep.bound_values)
        )
        # explicit bound shape tau^{m/2} e^{s tau^{1/s} - tau R^2 / 33},
        # constant fitted at the first tau
        s, R, m = 2.0, cfg.radii.R, S.m

        def shape(t):
            return t ** (m / 2.0) * math.exp(s * t ** (1.0 / s) - t * R * R / 33.0)

        C = rep.sup_errors[0] / shape(taus[0])
        assert all(
            e <= C * shape(t) * (1.0 + 1e-9)
            for t, e in zip(taus, rep.sup_errors)
        )


# ---------------------------------------------------------------------------
# 7. polynomial approximants of the entire operator


def test_acceptance_polynomial_approximants():
    cfg = _config("translation", 1.0)
    S = cfg.structure
    prof = constant_function(1.0, Box.cube(4.0, S.n))
    delta = DistributionData(points=(
        PointFunctional((0.0,), MultiIndex((0,)), 1.0, prof),
    ))
    # point mass: the entire average is (1/pi)^{1/2} e^{-Z^2} at tau = 1,
    # whose Taylor coefficients are (1/pi)^{1/2} (-1)^k / k! on Z^{2k}
    P = polynomial_approximant(delta, cfg, degree=10)
    for gamma, c in P.coeffs.items():
        k = gamma[0]
        if k % 2 == 1:
            assert abs(c) < 1e-10
        else:
            want = (-1.0) ** (k // 2) / (
                math.sqrt(math.pi) * math.factorial(k // 2)
            )
            assert abs(c - want) < 1e-10

    cfg = _config("translation", 4.0)
    S = cfg.structure
    u = S.expr_function(1 + S.x_syms[0] ** 2)
    pts = evaluation_grid(cfg.radii, S.m, S.n, 5)
    ref = E_tau_values(u, cfg, pts)
    z = S.Z(pts)
    sups = []
    for D in (2, 6, 10, 14):
        P = polynomial_approximant(u, cfg, degree=D)
        vals = np.array([P.evaluate(zz) for zz in z])
        sup = float(np.max(np.abs(vals - ref)))
        assert sup <= P.tail_bound * (1.0 + 1e-9)
        sups.append(sup)
    assert all(b <= a * (1.0 + 1e-12) for a, b in zip(sups, sups[1:]))


# ---------------------------------------------------------------------------
# 8. homotopy identity on a random polynomial corpus


def _random_polynomial_form(rng, n, q):
    ts = sp.symbols(f"t1:{n + 1}")
    box = Box.cube(1.0, n)
    coeffs = {}
    for J in itertools.combinations(range(1, n + 1), q):
        expr = sp.Integer(0)
        for _ in range(3):
            term = sp.Rational(rng.integers(-4, 5), rng.integers(1, 4))
            for s in ts:
                term *= s ** int(rng.integers(0, 3))
            expr += term
        coeffs[((), J)] = ExprFunction(expr, ts, box)
    return FormPQ(0, q, 0, n, coeffs)


def test_acceptance_homotopy_identity():
    with Budget(10.0):
        rng = np.random.default_rng(23)
        cases = [(n, q) for n in (1, 2, 3) for q in range(1, n + 1)]
        for count in range(20):
            n, q = cases[count % len(cases)]
            F = _random_polynomial_form(rng, n, q)
            point = rng.uniform(-0.8, 0.8, n)
            assert homotopy_check(F, point) < 1e-8


# ---------------------------------------------------------------------------
# 9. approximate primitive solver with a manufactured right-hand side


def test_acceptance_poincare_solver():
    with Budget(180.0):
        S = builtin_structure("radial2")
        radii = DomainRadii(R=0.4, T=0.25)
        cfg = ApproxConfig(
            tau=1.0,
            chi=default_chi(radii, S.m),
            rule=QuadratureRule(points_per_axis=64),
            structure=S,
            radii=radii,
        )
        prim = FormPQ(0, 0, S.m, S.n, {((), ()): ExprFunction(
            S.Z_exprs()[0] * S.t_syms[0], S.syms, S.domain)})
        f = L_operator(prim, S)
        _, report = approximate_solve(f, cfg, [1e2, 1e3, 1e4], grid=5)
        res = report.residuals
        assert all(b < a for a, b in zip(res, res[1:]))
        assert res[-1] <= 1e-3


# ---------------------------------------------------------------------------
# 10. trace pipeline


def test_acceptance_trace_pipeline():
    with Budget(60.0):
        X, T = sp.symbols("x t")
        box = Box.cube(6.0, 2)
        gauss = ExprFunction(sp.exp(-X**2 - T**2), (X, T), box)
        data = DistributionData(density=gauss, points=())
        cut = default_cutoff(6.0, 2, plateau=4.0, grid=512, padding=4)
        phi = gevrey_bump(2.0, 0.8, 1.6, 1)
        psi = gevrey_bump(2.0, 0.7, 1.4, 1)

        rule = QuadratureRule(points_per_axis=96)
        nodes, wts = tensor_nodes(rule, [(-phi.r_outer, phi.r_outer)])
        for t_val in (0.0, 0.3, -0.7):
            got = trace_at(data, cut, [t_val], phi)
            pts = np.concatenate([nodes, np.full_like(nodes, t_val)], axis=1)
            want = complex(np.sum(
                np.asarray(gauss.value(pts))
                * np.asarray(phi.value(nodes)) * wts
            ))
            assert abs(got - want) < 1e-5

        alt = default_cutoff(6.0, 2, plateau=4.5, s=3.0, grid=512, padding=4)
        out = trace_consistency(data, cut, phi, psi, alt_cutoff=alt)
        assert out["residual"] <= 1e-5
        assert out["lambda_residual"] <= 1e-5

        reg = trace_t_regularity(data, cut, phi, [[0.0], [0.3], [-0.5]],
                                 order_cap=4, s=2.0)
        assert reg["gevrey_certificate"]


# ---------------------------------------------------------------------------
# 11. vanishing trace


def test_acceptance_vanishing_trace():
    cfg = _config("mizohata", 200.0)
    S = cfg.structure
    t1 = sp.symbols("t1")
    prof = ExprFunction(t1, (t1,), Box.cube(4.0, S.n))
    u = DistributionData(points=(
        PointFunctional((0.0,), MultiIndex((0,)), 1.0, prof),
    ))
    assert vanishing_trace_check(u, cfg) == 0.0
    pts = evaluation_grid(cfg.radii, S.m, S.n, 9)
    assert float(np.max(np.abs(E_tau_values(u, cfg, pts)))) < 1e-14


# ---------------------------------------------------------------------------
# 12. scenario suite determinism


SCENARIOS = {
    "sweep": ("g-sweep.csv", """
        [structure]
        name = mizohata
        R = 0.4

        [u]
        expr = Z**2 + 1

        [run]
        mode = g-sweep
        tau_grid = 50, 100, 200, 400
        """),
    "poincare": ("poincare.csv", """
        [structure]
        name = radial2
        R = 0.4
        T = 0.25

        [poincare]
        primitive = Z*t1

        [run]
        mode = poincare
        tau_grid = 100, 1000
        """),
}


def test_acceptance_determinism(tmp_path):
    for verb, (csv_name, text) in SCENARIOS.items():
        scen = tmp_path / f"{verb}.ini"
        scen.write_text(textwrap.dedent(text))
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / f"{verb}_{run}"
            code = main([verb, "--scenario", str(scen), "--out", str(out),
                         "--grid", "5" if verb == "sweep" else "3"])
            assert code == EXIT_OK
            outputs.append((out / csv_name).read_bytes())
        assert outputs[0] == outputs[1]
