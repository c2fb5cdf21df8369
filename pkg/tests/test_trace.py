"""Spectral traces: transforms, slice values and consistency checks."""

import numpy as np
import pytest
import sympy as sp

from gevreylab.approx import DistributionData, PointFunctional
from gevreylab.gevrey import gevrey_bump
from gevreylab.multiindex import MultiIndex
from gevreylab.quadrature import QuadratureRule, tensor_nodes
from gevreylab.sampled import Box, ExprFunction, ParameterError
from gevreylab.trace import (
    ResolutionError,
    SpectralCutoff,
    TensorTest,
    TraceProfile,
    default_cutoff,
    fourier_gevrey_decay_check,
    fourier_of,
    trace_at,
    trace_consistency,
    trace_deriv_at,
    trace_t_regularity,
)

X, T = sp.symbols("x t")
BOX = Box.cube(6.0, 2)
GAUSS = ExprFunction(sp.exp(-X**2 - T**2), (X, T), BOX)
DATA = DistributionData(density=GAUSS, points=())
CUT = default_cutoff(6.0, 2, plateau=4.0, grid=384, padding=4)
PHI = gevrey_bump(2.0, 0.8, 1.6, 1)


def _restriction(t_val, phi=PHI, density=GAUSS):
    rule = QuadratureRule(points_per_axis=96)
    nodes, wts = tensor_nodes(rule, [(-phi.r_outer, phi.r_outer)])
    pts = np.concatenate([nodes, np.full_like(nodes, t_val)], axis=1)
    return complex(np.sum(
        np.asarray(density.value(pts)) * np.asarray(phi.value(nodes)) * wts
    ))


def test_gaussian_transform_closed_form():
    # F(e^{-x^2-t^2}) = pi e^{-(sigma^2+theta^2)/4}, e^{-i<.,xi>} convention
    spec = fourier_of(DATA, CUT, 1, 1)
    sig, th = spec.axes
    si = np.where(np.abs(sig) <= 4.0)[0]
    ti = np.where(np.abs(th) <= 4.0)[0]
    S2, T2 = np.meshgrid(sig[si], th[ti], indexing="ij")
    exact = np.pi * np.exp(-(S2**2 + T2**2) / 4.0)
    got = spec.values[np.ix_(si, ti)]
    assert np.max(np.abs(got - exact)) < 1e-6


def test_trace_equals_restriction():
    for t_val in (0.0, 0.3, -0.7):
        got = trace_at(DATA, CUT, [t_val], PHI)
        assert abs(got - _restriction(t_val)) < 1e-5


def test_point_data_trace():
    # delta_{x0} (x) g: trace at t is weight * g(t) * phi(x0)
    g = ExprFunction(sp.exp(-T**2), (T,), Box.cube(6.0, 1))
    u = DistributionData(density=None, points=(
        PointFunctional((0.3,), MultiIndex((0,)), 1.5, g),
    ))
    prof = TraceProfile(u, CUT, PHI, m=1)
    for t_val in (0.0, 0.5):
        want = 1.5 * np.exp(-t_val**2) * complex(PHI.value(np.array([0.3])))
        assert abs(prof([t_val]) - want) < 1e-6


def test_trace_derivative_insertion():
    # d_t of the slice pairing of the gaussian: -2t times the pairing
    got = trace_deriv_at(DATA, CUT, [0.3], PHI, (1,))
    want = -0.6 * _restriction(0.3)
    assert abs(got - want) < 1e-5


def test_second_derivative_closed_form():
    # delta_0 (x) cos(t): d_t^2 trace at 0 = -phi(0)
    g = ExprFunction(sp.cos(T), (T,), Box.cube(6.0, 1))
    u = DistributionData(density=None, points=(
        PointFunctional((0.0,), MultiIndex((0,)), 1.0, g),
    ))
    prof = TraceProfile(u, CUT, PHI, m=1)
    want = -complex(PHI.value(np.array([0.0])))
    assert abs(prof([0.0], MultiIndex((2,))) - want) < 1e-4


def test_zero_trace_data():
    # odd-in-t density has vanishing trace at t = 0
    odd = ExprFunction(T * sp.exp(-X**2 - T**2), (X, T), BOX)
    u = DistributionData(density=odd, points=())
    assert abs(TraceProfile(u, CUT, PHI, m=1)([0.0])) < 1e-8


def test_conjugate_symmetry_real_density():
    spec = fourier_of(DATA, CUT, 1, 1)
    v = spec.values
    # fftshifted even-length axes: xi[i] = -xi[n-i] for i >= 1
    sym = v[1:, 1:][::-1, ::-1]
    assert np.max(np.abs(v[1:, 1:] - np.conj(sym))) < 1e-12


def test_leibniz_through_tensor_test():
    # derivatives of phi(x) psi(t) split multiplicatively
    psi = gevrey_bump(2.0, 0.7, 1.4, 1)
    test = TensorTest(PHI, psi)
    pts = np.array([[0.3, 0.2], [0.9, -0.5]])
    for ax, at in [((1,), (0,)), ((0,), (2,)), ((2,), (1,)), ((1,), (2,))]:
        got = test.derivative(MultiIndex(ax + at), pts)
        want = np.asarray(PHI.derivative(MultiIndex(ax), pts[:, :1])) * \
            np.asarray(psi.derivative(MultiIndex(at), pts[:, 1:]))
        assert np.max(np.abs(got - want)) < 1e-5


def test_trace_consistency_and_lambda_independence():
    psi = gevrey_bump(2.0, 0.7, 1.4, 1)
    alt = default_cutoff(6.0, 2, plateau=4.5, s=3.0, grid=384, padding=4)
    out = trace_consistency(DATA, CUT, PHI, psi, alt_cutoff=alt)
    assert out["residual"] < 1e-5
    assert out["lambda_residual"] < 1e-5


def test_trace_consistency_mixed_data():
    g = ExprFunction(sp.exp(-T**2), (T,), Box.cube(6.0, 1))
    mixed = DistributionData(density=GAUSS, points=(
        PointFunctional((0.3,), MultiIndex((0,)), 1.5, g),
    ))
    psi = gevrey_bump(2.0, 0.7, 1.4, 1)
    out = trace_consistency(mixed, CUT, PHI, psi)
    assert out["residual"] < 1e-5


def test_regularity_certificate():
    reg = trace_t_regularity(DATA, CUT, PHI, [[0.0], [0.3], [-0.5]],
                             order_cap=4, s=2.0)
    assert reg["gevrey_certificate"]
    assert reg["worst_ratio"] <= 1.0 + 1e-9
    # d_t^2 at 0 for the gaussian: (4t^2-2) factor -> -2 * order-zero value
    a0 = reg["table"][MultiIndex((0,))][0]
    a2 = reg["table"][MultiIndex((2,))][0]
    assert abs(a2 + 2.0 * a0) < 1e-8


def test_decay_check():
    out = fourier_gevrey_decay_check(
        PHI, np.linspace(0.5, 40.0, 30).reshape(-1, 1)
    )
    assert out["ok"]
    assert out["slack"] <= 10.0
    assert out["slope"] < 0.0


def test_decay_check_requires_declared_constants():
    f = ExprFunction(sp.exp(-X**2), (X,), Box.cube(3.0, 1))
    with pytest.raises(ParameterError):
        fourier_gevrey_decay_check(f, np.array([[1.0]]))


def test_resolution_error_on_coarse_grid():
    # an insufficiently wide box leaves mass at the frequency boundary
    rough = ExprFunction(sp.exp(-50 * X**2 - 50 * T**2), (X, T), Box.cube(0.3, 2))
    cut = SpectralCutoff(
        gevrey_bump(2.0, 0.2, 0.28, 2), Box.cube(0.3, 2), grid=32, padding=1
    )
    with pytest.raises(ResolutionError):
        fourier_of(DistributionData(density=rough, points=()), cut, 1, 1)


def test_cutoff_validation():
    with pytest.raises(ParameterError):
        SpectralCutoff(PHI, Box.cube(2.0, 2), grid=16)
    cut = default_cutoff(6.0, 2, plateau=4.0)
    assert cut.validate_plateau(2.0)
