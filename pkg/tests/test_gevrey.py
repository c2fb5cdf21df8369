"""Faa di Bruno engine, Gevrey seminorms and bump functions."""

import math

import numpy as np
import pytest
import sympy as sp

from gevreylab.gevrey import (
    BumpFunction,
    compose_derivative,
    exp_phase_derivative,
    faa_di_bruno_terms,
    fdb_moment_sum,
    gevrey_bump,
    gevrey_seminorm,
)
from gevreylab.multiindex import MultiIndex, iter_multiindices
from gevreylab.sampled import (
    Box,
    ExprFunction,
    GevreyParams,
    ParameterError,
)


# ---------------------------------------------------------------------------
# partition enumeration


def test_partition_identity_exact():
    # every chain-rule term satisfies sum_i |delta_i| * |beta_i| = |alpha|
    # and kappa = sum_i beta_i, checked in exact integer arithmetic
    cases = [MultiIndex((k,)) for k in range(1, 9)]
    cases += [a for a in iter_multiindices(2, 5) if a.order >= 1]
    for alpha in cases:
        for p in (1, 2):
            for term in faa_di_bruno_terms(alpha, p):
                weighted = sum(
                    d.order * b.order
                    for d, b in zip(term.deltas, term.betas)
                )
                assert weighted == alpha.order
                kappa = MultiIndex.zero(p)
                for b in term.betas:
                    kappa = kappa + b
                assert kappa == term.kappa
                assert all(b.order >= 1 for b in term.betas)


def test_partition_counts_1d():
    # scalar chain rule: number of terms = number of integer partitions
    partitions = {1: 1, 2: 2, 3: 3, 4: 5, 5: 7, 6: 11, 7: 15, 8: 22}
    for k, count in partitions.items():
        assert len(faa_di_bruno_terms(MultiIndex((k,)), 1)) == count


def test_partition_enumeration_deterministic():
    a = faa_di_bruno_terms(MultiIndex((3, 1)), 2)
    b = faa_di_bruno_terms(MultiIndex((3, 1)), 2)
    assert a == b
    lengths = [t.length for t in a]
    assert lengths == sorted(lengths)


def test_faa_di_bruno_requires_positive_order():
    with pytest.raises(ParameterError):
        faa_di_bruno_terms(MultiIndex((0, 0)), 1)


# ---------------------------------------------------------------------------
# compose_derivative against independent symbolic differentiation


def test_compose_witness_20e():
    # f = exp, g = x^2, alpha = 3, x = 1:
    # (exp(x^2))''' = exp(x^2) (8x^3 + 12x) -> 20 e
    x = sp.symbols("x")
    f = ExprFunction(sp.exp(x), (x,), Box((-1.0,), (5.0,)))
    g = ExprFunction(x**2, (x,), Box((-2.0,), (2.0,)))
    val = compose_derivative(f, g, (3,), (1.0,))
    assert abs(val - 20.0 * math.e) < 1e-10 * math.e


def _random_expr(rng, syms, depth=2):
    choices = [sp.sin, sp.cos, sp.exp]
    expr = sp.Integer(0)
    for _ in range(depth):
        term = sp.Rational(rng.integers(-3, 4), rng.integers(1, 4))
        for s in syms:
            k = int(rng.integers(0, 3))
            term *= s**k
        if rng.random() < 0.4:
            fn = choices[int(rng.integers(0, 3))]
            arg = sum(
                sp.Rational(rng.integers(-2, 3), 4) * s for s in syms
            )
            term *= fn(arg)
        expr += term
    return expr + sp.Rational(1, 2)


def test_compose_random_pairs_match_sympy():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 30:
        d = int(rng.integers(1, 3))       # inner dimension
        p = int(rng.integers(1, 3))       # outer dimension
        xs = sp.symbols(f"x1:{d + 1}")
        ys = sp.symbols(f"y1:{p + 1}")
        inner_exprs = [_random_expr(rng, xs) for _ in range(p)]
        outer_expr = _random_expr(rng, ys)
        order = int(rng.integers(1, 7 - d))
        alpha = MultiIndex(
            np.bincount(rng.integers(0, d, order), minlength=d)
        )
        if alpha.order == 0:
            continue
        point = rng.uniform(-0.5, 0.5, d)

        g = [
            ExprFunction(e, xs, Box.cube(1.0, d)) for e in inner_exprs
        ]
        f = ExprFunction(outer_expr, ys, Box.cube(50.0, p))
        got = compose_derivative(f, g, alpha, point)

        composed = outer_expr.subs(
            dict(zip(ys, inner_exprs)), simultaneous=True
        )
        for s, k in zip(xs, alpha):
            if k:
                composed = sp.diff(composed, s, k)
        want = complex(composed.subs(dict(zip(xs, point))).evalf())
        scale = max(1.0, abs(want))
        assert abs(got - want) / scale < 1e-8
        checked += 1


# ---------------------------------------------------------------------------
# exponential phase derivatives and moment sums


def test_exp_phase_matches_sympy():
    x = sp.symbols("x")
    phi = -(x**2) / 2 + x / 4
    f = ExprFunction(
        phi, (x,), Box.cube(2.0, 1), GevreyParams(s=2.0, h=1.0, order_cap=6)
    )
    tau = 30.0
    for k in (1, 2, 3, 4):
        got = exp_phase_derivative(tau, f, (k,), (0.3,))
        want = complex(
            sp.diff(sp.exp(tau * phi), x, k).subs(x, 0.3).evalf()
        )
        assert abs(got - want) < 1e-8 * max(1.0, abs(want))


def test_exp_phase_bound_certificate():
    x = sp.symbols("x")
    f = ExprFunction(
        -(x**2), (x,), Box.cube(1.0, 1), GevreyParams(s=2.0, h=2.0, order_cap=6)
    )
    for k in (1, 2, 3):
        _, ok = exp_phase_derivative(50.0, f, (k,), (0.2,), check_bound=True)
        assert ok


def test_moment_sum_values():
    # Bell-polynomial moment sums at A = 1 and the binomial-type value at A = 2
    assert fdb_moment_sum(MultiIndex((1,)), 1) == 1.0
    assert fdb_moment_sum(MultiIndex((2,)), 1) == 2.0
    assert fdb_moment_sum(MultiIndex((3,)), 1) == 4.0
    assert fdb_moment_sum(MultiIndex((2,)), 2) == 6.0


def test_moment_sum_growth_ratio():
    # the moment sums grow at most geometrically times factorial:
    # B_{k+1} <= 2 (k+1) (1 + A) B_k for the 1d sums
    A = 1.5
    prev = fdb_moment_sum(MultiIndex((1,)), A)
    for k in range(2, 9):
        cur = fdb_moment_sum(MultiIndex((k,)), A)
        assert cur <= 2.0 * k * (1.0 + A) * prev
        prev = cur


# ---------------------------------------------------------------------------
# seminorm


def test_seminorm_exponential_witness():
    # f = e^x on [0, 1], s = 1, h = 1/2, cap 4: max_k e / (2^-k k!) = 2e
    x = sp.symbols("x")
    f = ExprFunction(sp.exp(x), (x,), Box((-1.0,), (2.0,)))
    val = gevrey_seminorm(
        f, GevreyParams(s=1.0, h=0.5, order_cap=4), Box((0.0,), (1.0,))
    )
    assert abs(val - 2.0 * math.e) < 1e-10


def test_seminorm_monotonicity():
    x, t = sp.symbols("x t")
    f = ExprFunction(sp.cos(3 * x) * sp.exp(t), (x, t), Box.cube(2.0, 2))
    K = Box.cube(1.0, 2)
    lo = gevrey_seminorm(f, GevreyParams(2.0, 1.0, 2), K)
    hi = gevrey_seminorm(f, GevreyParams(2.0, 1.0, 4), K)
    assert hi >= lo                      # nondecreasing in the order cap
    wide = gevrey_seminorm(f, GevreyParams(2.0, 2.0, 4), K)
    assert wide <= hi                    # nonincreasing in h


# ---------------------------------------------------------------------------
# bump functions


def test_bump_plateau_and_support():
    chi = gevrey_bump(2.0, 0.2, 0.38, 1)
    inside = np.linspace(-0.2, 0.2, 11)[:, None]
    outside = np.array([[0.38], [0.5], [-0.45]])
    assert np.max(np.abs(chi.value(inside) - 1.0)) == 0.0
    assert np.max(np.abs(chi.value(outside))) == 0.0


def test_bump_midpoint_half():
    chi = gevrey_bump(2.0, 0.2, 0.4, 1)
    assert abs(chi.value(np.array([0.3])) - 0.5) < 1e-12


def test_bump_derivatives_vanish_at_edges():
    chi = gevrey_bump(2.0, 0.2, 0.4, 1)
    for k in (1, 2):
        edge = np.abs(chi.derivative(MultiIndex((k,)), np.array([[0.399]])))
        assert float(edge[0]) < 1e-4


def test_bump_2d_radial():
    chi = gevrey_bump(2.0, 0.3, 0.6, 2)
    r = 0.45
    ring = np.array(
        [[r * np.cos(a), r * np.sin(a)] for a in np.linspace(0, 2 * np.pi, 7)]
    )
    vals = chi.value(ring)
    assert np.max(np.abs(vals - vals[0])) < 1e-12


def test_bump_requires_s_above_one():
    with pytest.raises(ParameterError):
        BumpFunction(1.0, 0.2, 0.4, 1)
    with pytest.raises(ParameterError):
        BumpFunction(2.0, 0.5, 0.4, 1)
