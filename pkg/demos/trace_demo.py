"""Spectral traces of a Gaussian density and a point mass.

Compares the Fourier-side trace of a smooth density with the direct slice
restriction, then traces a point functional whose slice values have a
closed form.
"""

import numpy as np
import sympy as sp

from gevreylab.approx import DistributionData, PointFunctional
from gevreylab.gevrey import gevrey_bump
from gevreylab.multiindex import MultiIndex
from gevreylab.quadrature import QuadratureRule, tensor_nodes
from gevreylab.sampled import Box, ExprFunction
from gevreylab.trace import TraceProfile, default_cutoff, trace_at


def main():
    X, T = sp.symbols("x t")
    box = Box.cube(6.0, 2)
    gauss = ExprFunction(sp.exp(-X**2 - T**2), (X, T), box)
    data = DistributionData(density=gauss, points=())
    cut = default_cutoff(6.0, 2, plateau=4.0, grid=384, padding=4)
    phi = gevrey_bump(2.0, 0.8, 1.6, 1)

    rule = QuadratureRule(points_per_axis=96)
    nodes, wts = tensor_nodes(rule, [(-phi.r_outer, phi.r_outer)])
    print("gaussian density: trace vs direct restriction")
    for t_val in (0.0, 0.3, -0.7):
        got = trace_at(data, cut, [t_val], phi)
        pts = np.concatenate([nodes, np.full_like(nodes, t_val)], axis=1)
        want = complex(np.sum(
            np.asarray(gauss.value(pts)) * np.asarray(phi.value(nodes)) * wts
        ))
        print(f"  t={t_val:+.1f}  trace={got.real:+.6f}  "
              f"restriction={want.real:+.6f}  diff={abs(got - want):.2e}")

    g = ExprFunction(sp.exp(-T**2), (T,), Box.cube(6.0, 1))
    u = DistributionData(density=None, points=(
        PointFunctional((0.3,), MultiIndex((0,)), 1.5, g),
    ))
    prof = TraceProfile(u, cut, phi, m=1)
    print("point mass at x = 0.3 with profile 1.5 e^{-t^2}")
    for t_val in (0.0, 0.5):
        got = prof([t_val])
        want = 1.5 * np.exp(-t_val**2) * complex(phi.value(np.array([0.3])))
        print(f"  t={t_val:+.1f}  trace={got.real:+.6f}  "
              f"closed form={want.real:+.6f}  diff={abs(got - want):.2e}")


if __name__ == "__main__":
    main()
