"""Convergence of the Gaussian slice averages on the Mizohata structure.

Runs a same-slice sweep for u = Z^2 + 1 and a remainder-decay sweep for
u = Z^2, printing the error columns together with the fitted rates.
"""

import numpy as np

from gevreylab.approx import ApproxConfig, convergence_sweep, default_chi
from gevreylab.quadrature import QuadratureRule
from gevreylab.structure import DomainRadii, builtin_structure, find_T


def main():
    S = builtin_structure("mizohata")
    R = 0.4
    radii = DomainRadii(R=R, T=find_T(S, R))
    cfg = ApproxConfig(
        tau=1.0,
        chi=default_chi(radii, S.m),
        rule=QuadratureRule(points_per_axis=64),
        structure=S,
        radii=radii,
    )
    Z = S.symbol_table()["Z"]

    print("same-slice sweep, u = Z^2 + 1")
    rep = convergence_sweep(
        S.expr_function(Z**2 + 1), cfg,
        [50.0, 100.0, 200.0, 400.0], "G_to_chi_u", grid=9,
    )
    for tau, err, bound in zip(rep.tau_grid, rep.sup_errors, rep.bound_values):
        print(f"  tau={tau:7.0f}  sup_error={err:.3e}  bound={bound:.3e}")
    print(f"  fitted log-log slope: {rep.fitted_slope:.3f}")

    print("remainder decay, u = Z^2")
    rep = convergence_sweep(
        S.expr_function(Z**2), cfg,
        [100.0, 200.0, 400.0, 800.0], "R_decay", grid=9,
    )
    for tau, err in zip(rep.tau_grid, rep.sup_errors):
        print(f"  tau={tau:7.0f}  sup_error={err:.3e}")
    print(f"  fitted exponential rate: {rep.fitted_exp_rate:.4f}")


if __name__ == "__main__":
    main()
