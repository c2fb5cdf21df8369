"""Approximate primitives for a manufactured closed one-form.

Builds f = L(Z t1) on the m=1, n=2 radial structure, solves for an
approximate primitive at increasing concentration parameters and prints
the residuals, which should drop by several orders of magnitude.
"""

from gevreylab.approx import ApproxConfig, default_chi
from gevreylab.poincare import FormPQ, L_operator, approximate_solve
from gevreylab.quadrature import QuadratureRule
from gevreylab.sampled import ExprFunction
from gevreylab.structure import DomainRadii, builtin_structure


def main():
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
    print("manufactured right-hand side f = L(Z t1) on radial2")
    for tau, res in zip(report.tau_grid, report.residuals):
        print(f"  tau={tau:8.0f}  residual={res:.3e}")


if __name__ == "__main__":
    main()
