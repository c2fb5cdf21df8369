"""Normalized locally integrable structures Z(x,t) = x + i*phi(x,t).

Holds the map phi with exact derivative oracles, the dual frame of vector
fields (M_k dual to dZ_k, L_j spanning the structure), the Lipschitz
normalization check, and the phase-decay radius search that fixes the
working neighborhoods V = B_R x B_R and U = B_{R/4} x B_T.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

from .multiindex import MultiIndex
from .sampled import (
    Box,
    CapabilityError,
    DomainError,
    ExprFunction,
    ParameterError,
    SampledFunction,
)

__all__ = [
    "StructureMap",
    "DomainRadii",
    "FrameCoefficients",
    "DegeneracyError",
    "validate_lipschitz",
    "dual_frame",
    "apply_vector_fields",
    "find_T",
    "builtin_structure",
    "BUILTIN_STRUCTURES",
]

PHASE_DECAY_DENOM = 33.0  # Re<Z(x,t)-Z(y,t')>^2 >= R^2/33 on the U-vs-annulus region


class DegeneracyError(RuntimeError):
    """Z_x singular: the structure is not in normal form at the point."""


class InfeasibilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class DomainRadii:
    """Radii of the working sets: V = B_R x B_R, U = B_{R/4} x B_T."""

    R: float
    T: float
    W_margin: float = 0.25

    def __post_init__(self):
        if self.R <= 0:
            raise ParameterError(f"R must be > 0, got {self.R}")
        if not 0 < self.T <= self.R:
            raise ParameterError(f"T must lie in (0, R], got {self.T}")
        if self.W_margin <= 0:
            raise ParameterError("W_margin must be > 0")


@dataclass(frozen=True)
class FrameCoefficients:
    """Pointwise frame data: Z_x, its inverse, Z_t and det Z_x."""

    Zx: np.ndarray
    Zx_inv: np.ndarray
    Zt: np.ndarray
    detZx: complex


class StructureMap:
    """The map Z(x,t) = x + i phi(x,t) with phi given by sympy expressions.

    phi_exprs is a length-m sequence of expressions in the symbols
    x1..xm, t1..tn.  All evaluators are vectorized over (N, m+n) point
    arrays and cached per derivative multi-index.
    """

    def __init__(self, m: int, n: int, phi_exprs, label: str, domain: Box | None = None):
        if m < 1 or n < 1:
            raise ParameterError("need m >= 1 and n >= 1")
        self.m = m
        self.n = n
        self.label = label
        self.x_syms = sp.symbols(f"x1:{m + 1}")
        self.t_syms = sp.symbols(f"t1:{n + 1}")
        self.syms = tuple(self.x_syms) + tuple(self.t_syms)
        self.phi_exprs = tuple(sp.sympify(e) for e in phi_exprs)
        if len(self.phi_exprs) != m:
            raise ParameterError(f"expected {m} phi components, got {len(self.phi_exprs)}")
        self.domain = domain or Box.cube(4.0, m + n)
        self.phi = tuple(
            ExprFunction(e, self.syms, self.domain) for e in self.phi_exprs
        )
        self._check_normalization()
        self._fn_cache: dict = {}

    @property
    def N(self) -> int:
        return self.m + self.n

    def _check_normalization(self):
        origin = np.zeros(self.N)
        for k, phik in enumerate(self.phi):
            if abs(phik.value(origin)) > 1e-10:
                raise ParameterError(f"phi_{k + 1}(0,0) != 0")
            for l in range(self.m):
                if abs(phik.derivative(MultiIndex.unit(self.N, l), origin)) > 1e-10:
                    raise ParameterError(f"d_x phi_{k + 1}(0,0) != 0")

    # -- vectorized evaluators ------------------------------------------------

    def phi_deriv(self, k: int, alpha: MultiIndex, pts: np.ndarray) -> np.ndarray:
        """d^alpha phi_k on an (N, m+n) point array (real output)."""
        return self.phi[k].derivative(alpha, pts).real

    def split(self, point):
        point = np.asarray(point, dtype=float)
        return point[..., : self.m], point[..., self.m :]

    def Z(self, pts) -> np.ndarray:
        """Z on (N, m+n) points (or a single point), shape (N, m) complex."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x = pts[:, : self.m]
        phi = np.stack(
            [self.phi_deriv(k, MultiIndex.zero(self.N), pts) for k in range(self.m)],
            axis=-1,
        )
        return x + 1j * phi

    def Zx(self, pts) -> np.ndarray:
        """(N, m, m) complex Jacobian d Z / d x."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        n_pts = pts.shape[0]
        out = np.zeros((n_pts, self.m, self.m), dtype=complex)
        for k in range(self.m):
            for l in range(self.m):
                d = self.phi_deriv(k, MultiIndex.unit(self.N, l), pts)
                out[:, k, l] = (1.0 if k == l else 0.0) + 1j * d
        return out

    def Zt(self, pts) -> np.ndarray:
        """(N, m, n) complex Jacobian d Z / d t = i d phi / d t."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.zeros((pts.shape[0], self.m, self.n), dtype=complex)
        for k in range(self.m):
            for j in range(self.n):
                out[:, k, j] = 1j * self.phi_deriv(
                    k, MultiIndex.unit(self.N, self.m + j), pts
                )
        return out

    def det_Zx(self, pts) -> np.ndarray:
        return np.linalg.det(self.Zx(pts))

    def dx_phi_norm(self, pts) -> np.ndarray:
        """Spectral norm of d_x phi at each point (the Lipschitz density)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        jac = np.zeros((pts.shape[0], self.m, self.m))
        for k in range(self.m):
            for l in range(self.m):
                jac[:, k, l] = self.phi_deriv(k, MultiIndex.unit(self.N, l), pts)
        return np.linalg.norm(jac, ord=2, axis=(1, 2))

    # -- symbolic frame -------------------------------------------------------

    @property
    def Zx_sym(self) -> sp.Matrix:
        Zx = sp.eye(self.m) + sp.I * sp.Matrix(
            [[sp.diff(self.phi_exprs[k], self.x_syms[l]) for l in range(self.m)]
             for k in range(self.m)]
        )
        return Zx

    @property
    def Zt_sym(self) -> sp.Matrix:
        return sp.I * sp.Matrix(
            [[sp.diff(self.phi_exprs[k], self.t_syms[j]) for j in range(self.n)]
             for k in range(self.m)]
        )

    @lru_cache(maxsize=None)
    def _frame_syms(self):
        Zx = self.Zx_sym
        Zx_inv = sp.simplify(Zx.inv())
        Zt = self.Zt_sym
        return Zx, Zx_inv, Zt

    def apply_M(self, k: int, expr):
        """Symbolic M_k expr = sum_l (Zx^-1)_{lk} d_{x_l} expr."""
        _, Zx_inv, _ = self._frame_syms()
        return sum(
            Zx_inv[l, k] * sp.diff(expr, self.x_syms[l]) for l in range(self.m)
        )

    def apply_L(self, j: int, expr):
        """Symbolic L_j expr = d_{t_j} expr - sum_k (Zt)_{kj} M_k expr."""
        _, _, Zt = self._frame_syms()
        return sp.diff(expr, self.t_syms[j]) - sum(
            Zt[k, j] * self.apply_M(k, expr) for k in range(self.m)
        )

    def apply_word(self, expr, word):
        """Apply a sequence of frame fields symbolically; word entries are
        ('M', k) or ('L', j) with 0-based indices."""
        out = sp.sympify(expr)
        for kind, idx in word:
            if kind == "M":
                out = self.apply_M(idx, out)
            elif kind == "L":
                out = self.apply_L(idx, out)
            else:
                raise ParameterError(f"unknown field kind {kind!r}")
        return out

    def Z_exprs(self):
        return tuple(
            self.x_syms[k] + sp.I * self.phi_exprs[k] for k in range(self.m)
        )

    def expr_function(self, expr, domain: Box | None = None) -> ExprFunction:
        """Wrap an expression in the structure's coordinates; the symbol Z (or
        Z1..Zm) is substituted by x + i phi."""
        expr = sp.sympify(expr, locals=self.symbol_table())
        return ExprFunction(expr, self.syms, domain or self.domain)

    def symbol_table(self):
        tab = {f"x{k+1}": self.x_syms[k] for k in range(self.m)}
        tab.update({f"t{j+1}": self.t_syms[j] for j in range(self.n)})
        Zs = self.Z_exprs()
        tab.update({f"Z{k+1}": Zs[k] for k in range(self.m)})
        if self.m == 1:
            tab["Z"] = Zs[0]
            tab["x"] = self.x_syms[0]
        if self.n == 1:
            tab["t"] = self.t_syms[0]
        return tab


def validate_lipschitz(S: StructureMap, R: float, grid: int = 17):
    """Check |phi(x,t) - phi(y,t)| <= |x - y| / 2 on V-bar by sampling the
    sup of the x-Jacobian norm; ok iff the sampled sup is <= 1/2."""
    if R <= 0:
        raise ParameterError(f"R must be > 0, got {R}")
    if grid < 8:
        raise ParameterError("grid must be >= 8 points per axis")
    pts = Box.cube(R, S.N).grid(grid)
    x, t = pts[:, : S.m], pts[:, S.m :]
    keep = (np.linalg.norm(x, axis=1) <= R + 1e-12) & (
        np.linalg.norm(t, axis=1) <= R + 1e-12
    )
    pts = pts[keep]
    if not S.domain.contains(Box.cube(R, S.N)):
        raise DomainError("V-bar exceeds the domain of phi")
    worst = float(np.max(S.dx_phi_norm(pts)))
    return {"ok": worst <= 0.5 + 1e-12, "worst_ratio": worst}


def dual_frame(S: StructureMap, point) -> FrameCoefficients:
    """Frame data at a point; M_k = sum_l (Zx^-1)_{lk} d_{x_l} and
    L_j = d_{t_j} - sum_k (Zt)_{kj} M_k satisfy the four duality pairings."""
    point = np.asarray(point, dtype=float)
    Zx = S.Zx(point[None, :])[0]
    det = complex(np.linalg.det(Zx))
    if abs(det) < 1e-12:
        raise DegeneracyError(f"Z_x singular at {point}")
    Zx_inv = np.linalg.inv(Zx)
    Zt = S.Zt(point[None, :])[0]
    return FrameCoefficients(Zx=Zx, Zx_inv=Zx_inv, Zt=Zt, detZx=det)


def apply_vector_fields(S: StructureMap, u, word, point):
    """Apply the composition of frame fields given by `word` to u at `point`.

    For expression-backed u the application is symbolic (exact); otherwise
    each application costs one derivative order of u's oracle and first-order
    coefficients from dual_frame, with finite differences for the outer
    layers.
    """
    point = np.asarray(point, dtype=float)
    word = tuple(word)
    if isinstance(u, ExprFunction) and set(u.symbols) <= set(S.syms) and len(u.symbols) == S.N:
        expr = S.apply_word(u.expr, word)
        fn = ExprFunction(expr, S.syms, u.domain)
        return fn.value(point)
    return _apply_numeric(S, u, word, point)


def _apply_numeric(S: StructureMap, u: SampledFunction, word, point):
    if not word:
        return u.value(point)
    first, rest = word[0], word[1:]

    def one_application(fn_deriv, pts):
        out = np.zeros(pts.shape[0], dtype=complex)
        for i, p in enumerate(pts):
            fc = dual_frame(S, p)
            kind, idx = first
            if kind == "M":
                coeffs = fc.Zx_inv[:, idx]
                out[i] = sum(
                    coeffs[l] * fn_deriv(MultiIndex.unit(S.N, l), p[None, :])[0]
                    for l in range(S.m)
                )
            else:
                out[i] = fn_deriv(MultiIndex.unit(S.N, S.m + idx), p[None, :])[0]
                Mk = [
                    sum(
                        fc.Zx_inv[l, k]
                        * fn_deriv(MultiIndex.unit(S.N, l), p[None, :])[0]
                        for l in range(S.m)
                    )
                    for k in range(S.m)
                ]
                out[i] -= sum(fc.Zt[k, idx] * Mk[k] for k in range(S.m))
        return out

    if not rest:
        return complex(one_application(lambda a, p: u.derivative(a, p), point[None, :])[0])

    from .sampled import NumericFunction

    inner = NumericFunction(
        lambda pts: one_application(lambda a, p: u.derivative(a, p), pts),
        u.domain,
        max_order=6,
    )
    return _apply_numeric(S, inner, rest, point)


def _directions(dim: int, count: int) -> np.ndarray:
    if dim == 1:
        return np.array([[-1.0], [1.0]])
    if dim == 2:
        ang = np.linspace(0.0, 2 * np.pi, count, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    # deterministic low-discrepancy directions for dim >= 3
    rng = np.random.default_rng(12345)
    v = rng.normal(size=(count * dim, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _ball_grid(dim: int, radius: float, grid: int) -> np.ndarray:
    """Polar sampling of the closed ball, boundary included exactly."""
    radii = np.linspace(0.0, radius, grid)
    dirs = _directions(dim, 4 * grid)
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    return np.unique(np.round(pts, 14), axis=0)


def _annulus_grid(dim: int, r_in: float, r_out: float, grid: int) -> np.ndarray:
    """Polar sampling of the closed annulus, both boundary spheres included."""
    radii = np.linspace(r_in, r_out, grid)
    dirs = _directions(dim, 4 * grid)
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, dim)
    return np.unique(np.round(pts, 14), axis=0)


def phase_re_square(S: StructureMap, xt_pts: np.ndarray, ys_pts: np.ndarray):
    """Re <Z(x,t) - Z(y,t')>^2 for paired rows of (x,t) and (y,t') points."""
    dz = S.Z(xt_pts) - S.Z(ys_pts)
    return np.sum(dz.real**2 - dz.imag**2, axis=1)


def find_T(S: StructureMap, R: float, grid: int = 9) -> float:
    """Largest T (bisection, tolerance R/100) with sampled
    Re <Z(x,t) - Z(y,t')>^2 >= R^2/33 for |x| <= R/4, R/2 <= |y| <= R and
    |t|, |t'| <= T.  Guarantees |exp(-tau <.>^2)| <= exp(-tau R^2/33) there."""
    check = validate_lipschitz(S, R, max(8, grid))
    if not check["ok"]:
        raise InfeasibilityError(
            f"Lipschitz normalization fails at R={R}: ratio {check['worst_ratio']:.4f}"
        )
    target = R * R / PHASE_DECAY_DENOM

    x_grid = _ball_grid(S.m, R / 4.0, grid)
    y_grid = _annulus_grid(S.m, R / 2.0, R, grid)

    def min_phase(T: float) -> float:
        t_grid = _ball_grid(S.n, T, grid)
        xs = np.repeat(x_grid, len(t_grid), axis=0)
        ts = np.tile(t_grid, (len(x_grid), 1))
        xt = np.concatenate([xs, ts], axis=1)
        ys = np.repeat(y_grid, len(t_grid), axis=0)
        tps = np.tile(t_grid, (len(y_grid), 1))
        ytp = np.concatenate([ys, tps], axis=1)
        zx = S.Z(xt)
        zy = S.Z(ytp)
        dz = zx[:, None, :] - zy[None, :, :]
        re = np.sum(dz.real**2 - dz.imag**2, axis=2)
        return float(np.min(re))

    if min_phase(R) >= target - 1e-12:
        return R
    lo, hi = 0.0, R
    if min_phase(R / 100.0) < target - 1e-12:
        raise InfeasibilityError(
            f"no positive T at grid resolution; worst phase "
            f"{min_phase(R / 100.0):.6g} < {target:.6g}"
        )
    lo = R / 100.0
    while hi - lo > R / 100.0:
        mid = 0.5 * (lo + hi)
        if min_phase(mid) >= target - 1e-12:
            lo = mid
        else:
            hi = mid
    return lo


# -- built-in structure library ----------------------------------------------

def _translation(m=1, n=1):
    return StructureMap(m, n, [sp.Integer(0)] * m, label=f"translation{m}{n}")


def _mizohata():
    t1 = sp.Symbol("t1")
    return StructureMap(1, 1, [t1**2 / 2], label="mizohata")


def _shear():
    x1, t1 = sp.Symbol("x1"), sp.Symbol("t1")
    return StructureMap(1, 1, [x1 * t1], label="shear")


def _cr2():
    x1, x2, t1 = sp.symbols("x1 x2 t1")
    return StructureMap(
        2, 1, [(x1**2 - x2**2) * t1 / 2, x1 * x2 * t1], label="cr2"
    )


def _radial2():
    t1, t2 = sp.symbols("t1 t2")
    return StructureMap(1, 2, [(t1**2 + t2**2) / 2], label="radial2")


BUILTIN_STRUCTURES = {
    "translation": _translation,
    "mizohata": _mizohata,
    "shear": _shear,
    "cr2": _cr2,
    "radial2": _radial2,
}


def builtin_structure(name: str, **kwargs) -> StructureMap:
    try:
        factory = BUILTIN_STRUCTURES[name]
    except KeyError:
        raise ParameterError(
            f"unknown structure {name!r}; choose from {sorted(BUILTIN_STRUCTURES)}"
        ) from None
    return factory(**kwargs)
