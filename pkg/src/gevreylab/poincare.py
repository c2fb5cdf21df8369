"""(p,q)-forms over the structure and the approximate Poincare lemma.

Forms are stored sparsely as maps (I, J) -> coefficient oracle, I and J
strictly increasing index tuples (1-based, matching dZ_I and dt_J).  All
wedge reordering routes through epsilon_sign so each orientation is stored
exactly once.

The homotopy operator K^(q) integrates along the ray sigma t with weight
sigma^(q-1); combined with the holomorphic Gaussian average it yields
approximate primitives g_tau whose residual L g_tau - f decays in tau.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .approx import (
    ApproxConfig,
    _kernel,
    _prefactor,
    _product_t_derivative,
    _slice_average,
)
from .multiindex import MultiIndex
from .quadrature import tensor_nodes
from .sampled import (
    Box,
    ExprFunction,
    NumericFunction,
    ParameterError,
    SampledFunction,
)
from .structure import StructureMap, dual_frame

__all__ = [
    "FormPQ",
    "epsilon_sign",
    "insert_index",
    "L_operator",
    "d_t",
    "K_q",
    "homotopy_check",
    "G_tau_form",
    "approximate_solve",
    "SolveReport",
    "certify_closed",
]


def epsilon_sign(j: int, J: tuple) -> int:
    """Sign of the permutation sorting (j, J) into increasing order."""
    J = tuple(J)
    if j in J:
        raise ParameterError(f"index {j} already in {J}")
    return -1 if sum(1 for jp in J if jp < j) % 2 else 1


def insert_index(j: int, J: tuple):
    """(sign, sorted tuple) for dt_j wedged in front of dt_J."""
    sign = epsilon_sign(j, J)
    return sign, tuple(sorted(J + (j,)))


def _check_increasing(K: tuple, bound: int, name: str):
    K = tuple(int(v) for v in K)
    if any(not 1 <= v <= bound for v in K):
        raise ParameterError(f"{name} indices must lie in 1..{bound}: {K}")
    if any(a >= b for a, b in zip(K, K[1:])):
        raise ParameterError(f"{name} must be strictly increasing: {K}")
    return K


@dataclass
class FormPQ:
    """Sparse (p,q)-form: coeffs maps (I, J) to a coefficient oracle.

    Missing keys are zero.  Coefficients live either on W-bar (dimension
    m+n) or on the t-ball alone (dimension n) for the pure-homotopy
    operations.
    """

    p: int
    q: int
    m: int
    n: int
    coeffs: dict = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (I, J), fn in self.coeffs.items():
            I = _check_increasing(I, self.m, "I")
            J = _check_increasing(J, self.n, "J")
            if len(I) != self.p or len(J) != self.q:
                raise ParameterError(
                    f"key ({I},{J}) inconsistent with degree ({self.p},{self.q})"
                )
            clean[(I, J)] = fn
        self.coeffs = clean

    def keys(self):
        return sorted(self.coeffs.keys())

    def coefficient(self, I, J):
        return self.coeffs.get((tuple(I), tuple(J)))

    def evaluate(self, point) -> dict:
        """All coefficients at one point, as {(I,J): complex}."""
        return {k: complex(fn.value(np.asarray(point, dtype=float)))
                for k, fn in self.coeffs.items()}


# ---------------------------------------------------------------------------
# coefficient oracles built from other oracles


class SumCoeff(SampledFunction):
    def __init__(self, parts, weights=None):
        parts = list(parts)
        super().__init__(parts[0].domain)
        self.parts = parts
        self.weights = list(weights) if weights is not None else [1.0] * len(parts)

    def _value_batch(self, pts):
        out = np.zeros(pts.shape[0], dtype=complex)
        for w, f in zip(self.weights, self.parts):
            out += w * np.asarray(f.value(pts))
        return out

    def _derivative_batch(self, alpha, pts):
        out = np.zeros(pts.shape[0], dtype=complex)
        for w, f in zip(self.weights, self.parts):
            out += w * np.asarray(f.derivative(alpha, pts))
        return out


class MonomialTimes(SampledFunction):
    """t_axis * f(t), with the Leibniz rule for derivatives."""

    def __init__(self, axis: int, f: SampledFunction):
        super().__init__(f.domain)
        self.axis = axis
        self.f = f

    def _value_batch(self, pts):
        return pts[:, self.axis] * np.asarray(self.f.value(pts))

    def _derivative_batch(self, alpha, pts):
        out = pts[:, self.axis] * np.asarray(self.f.derivative(alpha, pts))
        if alpha[self.axis] >= 1:
            lower = alpha - MultiIndex.unit(len(alpha), self.axis)
            out = out + alpha[self.axis] * np.asarray(
                self.f.derivative(lower, pts)
            )
        return out


class RadialIntegralCoeff(SampledFunction):
    """t |-> int_0^1 f(sigma t) sigma^(q-1) dsigma; derivatives pick up an
    extra sigma^|beta| under the integral."""

    def __init__(self, f: SampledFunction, q: int, points: int = 64):
        super().__init__(f.domain)
        self.f = f
        self.q = q
        self.sigma, self.wts = np.polynomial.legendre.leggauss(points)
        self.sigma = 0.5 * (self.sigma + 1.0)
        self.wts = 0.5 * self.wts

    def _batch(self, alpha, pts):
        P = pts.shape[0]
        S = len(self.sigma)
        big = (self.sigma[None, :, None] * pts[:, None, :]).reshape(P * S, -1)
        vals = np.asarray(self.f.derivative(alpha, big)).reshape(P, S)
        weight = self.wts * self.sigma ** (self.q - 1 + alpha.order)
        return vals @ weight

    def _value_batch(self, pts):
        return self._batch(MultiIndex.zero(self.dim), pts)

    def _derivative_batch(self, alpha, pts):
        return self._batch(alpha, pts)


def t_deriv(f: SampledFunction, axis: int) -> SampledFunction:
    """d/dt_axis of a coefficient oracle, staying an oracle."""
    if isinstance(f, ExprFunction):
        return ExprFunction(
            sp.diff(f.expr, f.symbols[axis]), f.symbols, f.domain
        )

    class _Deriv(SampledFunction):
        def __init__(self):
            super().__init__(f.domain)

        def _value_batch(self, pts):
            return np.asarray(
                f.derivative(MultiIndex.unit(f.dim, axis), pts)
            )

        def _derivative_batch(self, alpha, pts):
            return np.asarray(
                f.derivative(alpha + MultiIndex.unit(f.dim, axis), pts)
            )

    return _Deriv()


# ---------------------------------------------------------------------------
# exterior operators


def d_t(F: FormPQ) -> FormPQ:
    """Exterior derivative in t of a form with t-only coefficients."""
    out: dict = {}
    acc: dict = {}
    for (I, J), fn in F.coeffs.items():
        for j in range(1, F.n + 1):
            if j in J:
                continue
            sign, Jn = insert_index(j, J)
            acc.setdefault((I, Jn), []).append((sign, t_deriv(fn, j - 1)))
    for key, parts in acc.items():
        out[key] = SumCoeff([p for _, p in parts], [s for s, _ in parts])
    return FormPQ(F.p, F.q + 1, F.m, F.n, out)


def K_q(F: FormPQ, sigma_points: int = 64) -> FormPQ:
    """Homotopy operator on t-forms:

        K F = sum_J { int_0^1 F_J(sigma t) sigma^(q-1) dsigma } omega_J,

    omega_J = t_J for q = 1 and sum_{j in J} eps(j, J without j) t_j
    dt_{J without j} for q >= 2.
    """
    if F.q < 1:
        raise ParameterError("K_q needs q >= 1")
    acc: dict = {}
    for (I, J), fn in F.coeffs.items():
        radial = RadialIntegralCoeff(fn, F.q, sigma_points)
        for j in J:
            rest = tuple(v for v in J if v != j)
            sign = epsilon_sign(j, rest)
            acc.setdefault((I, rest), []).append(
                (sign, MonomialTimes(j - 1, radial))
            )
    out = {
        key: SumCoeff([p for _, p in parts], [s for s, _ in parts])
        for key, parts in acc.items()
    }
    return FormPQ(F.p, F.q - 1, F.m, F.n, out)


def homotopy_check(F: FormPQ, point) -> float:
    """Max coefficient deviation of F = d_t K F + K d_t F at a point."""
    if not 1 <= F.q <= F.n:
        raise ParameterError("homotopy identity needs 1 <= q <= n")
    point = np.asarray(point, dtype=float)
    lhs = F.evaluate(point)
    a = d_t(K_q(F)).evaluate(point)
    b = K_q(d_t(F)).evaluate(point)
    keys = set(lhs) | set(a) | set(b)
    worst = 0.0
    for k in keys:
        worst = max(
            worst,
            abs(lhs.get(k, 0.0) - (a.get(k, 0.0) + b.get(k, 0.0))),
        )
    return worst


def _frame_coeff(S: StructureMap, fn: SampledFunction, j: int):
    """L_j applied to a W-bar coefficient, returned as an oracle."""
    if isinstance(fn, ExprFunction) and set(fn.symbols) == set(S.syms):
        return ExprFunction(
            sp.expand(S.apply_L(j, fn.expr)), S.syms, fn.domain
        )

    def apply(pts):
        out = np.zeros(pts.shape[0], dtype=complex)
        for i, p in enumerate(pts):
            fc = dual_frame(S, p)
            dt_val = fn.derivative(MultiIndex.unit(S.N, S.m + j), p[None, :])[0]
            Mk = [
                sum(
                    fc.Zx_inv[l, k]
                    * fn.derivative(MultiIndex.unit(S.N, l), p[None, :])[0]
                    for l in range(S.m)
                )
                for k in range(S.m)
            ]
            out[i] = dt_val - sum(fc.Zt[k, j] * Mk[k] for k in range(S.m))
        return out

    return NumericFunction(apply, fn.domain, max_order=4)


def L_operator(f: FormPQ, S: StructureMap) -> FormPQ:
    """The structure operator: Lf = sum L_j f_IJ dt_j wedge dZ_I wedge dt_J,
    reindexed into the increasing basis (carrying the (-1)^p crossing sign)."""
    acc: dict = {}
    psign = (-1) ** f.p
    for (I, J), fn in f.coeffs.items():
        for j in range(1, f.n + 1):
            if j in J:
                continue
            sign, Jn = insert_index(j, J)
            acc.setdefault((I, Jn), []).append(
                (psign * sign, _frame_coeff(S, fn, j - 1))
            )
    out = {
        key: SumCoeff([p for _, p in parts], [s for s, _ in parts])
        for key, parts in acc.items()
    }
    return FormPQ(f.p, f.q + 1, f.m, f.n, out)


def certify_closed(f: FormPQ, S: StructureMap, radii, tol: float = 1e-8,
                   grid: int = 5):
    """Sampled sup of the coefficients of Lf on V-bar; (ok, worst)."""
    Lf = L_operator(f, S)
    pts = Box.cube(radii.R, S.N).grid(grid)
    worst = 0.0
    for fn in Lf.coeffs.values():
        worst = max(worst, float(np.max(np.abs(fn.value(pts)))))
    return worst <= tol, worst


# ---------------------------------------------------------------------------
# the Gaussian average on forms and the approximate solver


def G_tau_form(f: FormPQ, cfg: ApproxConfig, z, t_val) -> dict:
    """Coefficientwise holomorphic Gaussian average at a free argument z:

        {(I,J): pref * int exp(-tau<z - Z(x',t)>^2) chi f_IJ(x',t) detZx dx'}.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex)).reshape(1, -1)
    t_val = np.asarray(t_val, dtype=float).reshape(cfg.structure.n)
    out = {}
    for key, fn in f.coeffs.items():
        out[key] = complex(
            _slice_average(cfg, z, t_val, lambda pts: fn.value(pts))[0]
        )
    return out


class PullbackKCoeff(SampledFunction):
    """One coefficient of lambda* K^(q) G_tau^chi [f]:

        (x,t) |-> int_0^1 G_tau^chi[f_J](Z(x,t), sigma t) sigma^(q-1) dsigma,

    a quadrature-backed function of (x,t).  First-order derivatives (all the
    residual check needs) are exact: differentiation under the integral,
    with the sigma-chain rule on the second slot.  Higher orders fall back
    to finite differences.
    """

    def __init__(self, fn: SampledFunction, q: int, cfg: ApproxConfig,
                 sigma_points: int = 64):
        S = cfg.structure
        super().__init__(Box.cube(cfg.radii.R, S.N))
        self.fn = fn
        self.q = q
        self.cfg = cfg
        sig, wts = np.polynomial.legendre.leggauss(sigma_points)
        self.sigma = 0.5 * (sig + 1.0)
        self.swts = 0.5 * wts * self.sigma ** (q - 1)
        # frozen slice ingredients that do not depend on t
        window = [(-cfg.chi_radius, cfg.chi_radius)] * S.m \
            if cfg.chi_compact else None
        if window is None:
            raise ParameterError("approximate_solve needs a compact cutoff")
        self.y, self.ywts = tensor_nodes(cfg.rule, window, cfg.tau)
        self.chi = cfg.chi.value(self.y)
        self._dF_cache: dict = {}

    def _dF(self, j: int):
        """d_{t_j}(f * det Zx) on the slice, cached per axis."""
        if j not in self._dF_cache:
            self._dF_cache[j] = _product_t_derivative(
                self.fn, self.cfg.structure, j
            )
        return self._dF_cache[j]

    def _value_batch(self, pts):
        S = self.cfg.structure
        cfg = self.cfg
        Ny = self.y.shape[0]
        Ns = len(self.sigma)
        out = np.zeros(pts.shape[0], dtype=complex)
        z_all = S.Z(pts)
        y_tiled = np.tile(self.y, (Ns, 1))
        chi_tiled = np.tile(self.chi, Ns)
        wts_tiled = np.repeat(self.swts, Ny) * np.tile(self.ywts, Ns)
        for i, p in enumerate(pts):
            t = p[S.m:]
            t_scaled = np.repeat(self.sigma[:, None] * t[None, :], Ny, axis=0)
            big = np.concatenate([y_tiled, t_scaled], axis=1)
            w = S.Z(big)
            F = chi_tiled * np.asarray(self.fn.value(big)) * S.det_Zx(big)
            ker = _kernel(cfg, z_all[i][None, :], w)[0]
            out[i] = _prefactor(cfg) * np.sum(ker * F * wts_tiled)
        return out

    def _derivative_batch(self, alpha, pts):
        if alpha.order != 1:
            from .sampled import fd_derivative

            return fd_derivative(self._value_batch, alpha, pts,
                                 float(np.max(self.domain.widths)))
        S = self.cfg.structure
        cfg = self.cfg
        tau = cfg.tau
        axis = next(i for i, k in enumerate(alpha) if k)
        Ny = self.y.shape[0]
        Ns = len(self.sigma)
        out = np.zeros(pts.shape[0], dtype=complex)
        z_all = S.Z(pts)
        Zx_all = S.Zx(pts)
        Zt_all = S.Zt(pts)
        y_tiled = np.tile(self.y, (Ns, 1))
        chi_tiled = np.tile(self.chi, Ns)
        wts_tiled = np.repeat(self.swts, Ny) * np.tile(self.ywts, Ns)
        sig_tiled = np.repeat(self.sigma, Ny)
        j = axis - S.m
        for i, p in enumerate(pts):
            t = p[S.m:]
            t_scaled = np.repeat(self.sigma[:, None] * t[None, :], Ny, axis=0)
            big = np.concatenate([y_tiled, t_scaled], axis=1)
            w = S.Z(big)
            F = chi_tiled * np.asarray(self.fn.value(big)) * S.det_Zx(big)
            ker = _kernel(cfg, z_all[i][None, :], w)[0]
            dz = z_all[i][None, :] - w
            if axis < S.m:
                # only the first slot z = Z(x,t) depends on x_axis
                fac = -2.0 * tau * (dz @ Zx_all[i][:, axis])
                integrand = fac * ker * F
            else:
                fac_z = -2.0 * tau * (dz @ Zt_all[i][:, j])
                Zt_w = S.Zt(big)[:, :, j]
                fac_w = 2.0 * tau * np.sum(dz * Zt_w, axis=1)
                dF = chi_tiled * np.asarray(self._dF(j)(big))
                integrand = ker * (fac_z * F + sig_tiled * (fac_w * F + dF))
            out[i] = _prefactor(cfg) * np.sum(integrand * wts_tiled)
        return out


@dataclass
class SolveReport:
    tau_grid: list
    residuals: list
    per_coefficient: list  # list of {key: residual} dicts, one per tau
    keys: list

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            header = ["tau", "residual"] + [
                "res_" + "".join(map(str, I)) + "_" + "".join(map(str, J))
                for (I, J) in self.keys
            ]
            wr.writerow(header)
            for tau, res, per in zip(self.tau_grid, self.residuals,
                                     self.per_coefficient):
                row = [f"{tau:.17g}", f"{res:.17g}"]
                row += [f"{per.get(k, 0.0):.17g}" for k in self.keys]
                wr.writerow(row)


def _residual_points(cfg: ApproxConfig, grid: int) -> np.ndarray:
    from .approx import evaluation_grid

    pts = evaluation_grid(cfg.radii, cfg.structure.m, cfg.structure.n, grid)
    # keep t away from the origin edge cases but include it once
    return pts


def _phase_floor(cfg: ApproxConfig, pts: np.ndarray) -> float:
    """Worst (most negative) Re <Z(x,t) - Z(y, sigma t)>^2 over the residual
    grid, the cutoff support and the homotopy ray.

    The kernel magnitude along the ray is exp(-tau * Re<.>^2); a negative
    floor of size c means the quadrature must resolve a cancellation of
    relative size exp(tau c), which bounds the usable tau for a given T.
    """
    S = cfg.structure
    r = cfg.chi_radius if cfg.chi_compact else cfg.radii.R
    y = Box.cube(r, S.m).grid(9)
    floor = np.inf
    for sigma in np.linspace(0.0, 1.0, 5):
        for p in pts:
            z = S.Z(p[None, :])[0]
            big = np.concatenate(
                [y, np.repeat(sigma * p[None, S.m:], y.shape[0], axis=0)],
                axis=1,
            )
            dz = z[None, :] - S.Z(big)
            floor = min(floor, float(np.min(np.real(np.sum(dz * dz, axis=1)))))
    return floor


def approximate_solve(f: FormPQ, cfg_template: ApproxConfig, tau_grid,
                      grid: int = 5, tol_closed: float = 1e-8):
    """Approximate primitives of an L-closed (p,q)-form, 1 <= q <= n.

    Builds g_tau = lambda* (-1)^p K^(q) G_tau^chi [f] (the pullback
    substitutes z = Z(x,t); the second slot runs along sigma t) and reports
    the residual sup |L g_tau - f| on the U grid, coefficientwise, per tau.
    """
    S = cfg_template.structure
    if not 1 <= f.q <= f.n:
        raise ParameterError("solver needs 1 <= q <= n")
    ok, worst = certify_closed(f, S, cfg_template.radii, tol_closed)
    if not ok:
        raise ParameterError(
            f"input form is not L-closed: sampled residual {worst:.3g}"
        )
    pts = _residual_points(cfg_template, grid)
    floor = _phase_floor(cfg_template, pts)
    worst_cancel = max(float(t) for t in tau_grid) * max(0.0, -floor)
    if worst_cancel > 45.0:
        raise ParameterError(
            f"kernel cancellation exp({worst_cancel:.1f}) along the homotopy "
            "ray exceeds double precision; shrink T (radii.T) or the largest "
            "tau"
        )
    psign = (-1) ** f.p
    residuals = []
    per_coefficient = []
    g_family = []
    all_keys = set()
    for tau in tau_grid:
        cfg = cfg_template.with_tau(float(tau))
        acc: dict = {}
        for (I, J), fn in f.coeffs.items():
            radial = PullbackKCoeff(fn, f.q, cfg)
            for j in J:
                rest = tuple(v for v in J if v != j)
                sign = psign * epsilon_sign(j, rest)
                acc.setdefault((I, rest), []).append(
                    (sign, MonomialTimes(S.m + j - 1, radial))
                )
        g = FormPQ(f.p, f.q - 1, f.m, f.n, {
            key: SumCoeff([p for _, p in parts], [s for s, _ in parts])
            for key, parts in acc.items()
        })
        g_family.append(g)
        Lg = L_operator(g, S)
        per = {}
        for key in set(Lg.coeffs) | set(f.coeffs):
            gfn = Lg.coeffs.get(key)
            ffn = f.coeffs.get(key)
            gv = np.asarray(gfn.value(pts)) if gfn is not None else 0.0
            fv = np.asarray(ffn.value(pts)) if ffn is not None else 0.0
            per[key] = float(np.max(np.abs(gv - fv)))
            all_keys.add(key)
        per_coefficient.append(per)
        residuals.append(max(per.values()) if per else 0.0)
    report = SolveReport(
        tau_grid=[float(t) for t in tau_grid],
        residuals=residuals,
        per_coefficient=per_coefficient,
        keys=sorted(all_keys),
    )
    return g_family, report
