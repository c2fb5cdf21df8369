"""Function-with-derivative-oracle representation.

A SampledFunction is the working currency of the package: a function on a box
together with an oracle for its partial derivatives.  Closed-form scenarios
carry a sympy expression (exact derivatives via symbolic differentiation and
lambdify); everything else falls back to high-order central finite
differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import sympy as sp

from .multiindex import MultiIndex

_EPS = np.finfo(float).eps


class ParameterError(ValueError):
    pass


class DomainError(ValueError):
    pass


class CapabilityError(RuntimeError):
    """Raised when an oracle is asked for more derivative orders than it has."""


@dataclass(frozen=True)
class GevreyParams:
    """Finite-order Gevrey seminorm parameters.

    s is the Gevrey order (>= 1; s = 1 is the analytic class), h the scale of
    the seminorm, order_cap the maximal derivative order used in truncated
    suprema.
    """

    s: float
    h: float
    order_cap: int = 8

    def __post_init__(self):
        if self.s < 1.0:
            raise ParameterError(f"Gevrey order s must be >= 1, got {self.s}")
        if self.h <= 0.0:
            raise ParameterError(f"Gevrey scale h must be > 0, got {self.h}")
        if self.order_cap < 0:
            raise ParameterError(f"order_cap must be >= 0, got {self.order_cap}")


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in R^d."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ParameterError("box bounds must have equal length")
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ParameterError(f"degenerate box {self.lo} .. {self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)

    def contains(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(
            a >= b for a, b in zip(self.hi, other.hi)
        )

    def contains_point(self, x, tol: float = 1e-9) -> bool:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return bool(
            np.all(x >= np.asarray(self.lo) - tol)
            and np.all(x <= np.asarray(self.hi) + tol)
        )

    def grid(self, points_per_axis: int) -> np.ndarray:
        """Tensor grid including endpoints, shape (points_per_axis**dim, dim)."""
        axes = [
            np.linspace(a, b, points_per_axis) for a, b in zip(self.lo, self.hi)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @staticmethod
    def cube(halfwidth: float, dim: int) -> "Box":
        return Box((-halfwidth,) * dim, (halfwidth,) * dim)


def _as_batch(x, dim):
    """Normalize a point argument to shape (N, dim); report if it was single."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise DomainError(f"point of dim {x.shape[0]}, expected {dim}")
        return x.reshape(1, dim), True
    if x.ndim == 2 and x.shape[1] == dim:
        return x, False
    raise DomainError(f"bad point array shape {x.shape} for dim {dim}")


class SampledFunction:
    """Base class: value/derivative oracles on a box.

    Subclasses implement `_value_batch` and `_derivative_batch` on (N, d)
    arrays.  All oracles are pure and safe to call concurrently.
    """

    def __init__(self, domain: Box, declared_gevrey: GevreyParams | None = None):
        self.domain = domain
        self.declared_gevrey = declared_gevrey

    @property
    def dim(self) -> int:
        return self.domain.dim

    def value(self, x):
        pts, single = _as_batch(x, self.dim)
        out = self._value_batch(pts)
        return complex(out[0]) if single else out

    def derivative(self, alpha, x):
        alpha = MultiIndex(alpha)
        if len(alpha) != self.dim:
            raise DomainError(f"multi-index dim {len(alpha)} != {self.dim}")
        pts, single = _as_batch(x, self.dim)
        if alpha.order == 0:
            out = self._value_batch(pts)
        else:
            out = self._derivative_batch(alpha, pts)
        return complex(out[0]) if single else out

    def _value_batch(self, pts):
        raise NotImplementedError

    def _derivative_batch(self, alpha, pts):
        raise NotImplementedError


def _lambdify_vectorized(symbols, expr):
    fn = sp.lambdify(symbols, expr, modules="numpy")

    def call(pts):
        out = fn(*(pts[:, i] for i in range(len(symbols))))
        return np.broadcast_to(np.asarray(out, dtype=complex), (pts.shape[0],)).copy()

    return call


class ExprFunction(SampledFunction):
    """Sympy-expression-backed function with exact derivative oracles."""

    def __init__(self, expr, symbols, domain: Box, declared_gevrey=None):
        if len(symbols) != domain.dim:
            raise ParameterError("symbol count must match domain dimension")
        super().__init__(domain, declared_gevrey)
        self.expr = sp.sympify(expr)
        self.symbols = tuple(symbols)
        self._fns = {}

    def _fn(self, alpha: MultiIndex):
        if alpha not in self._fns:
            d = self.expr
            for sym, k in zip(self.symbols, alpha):
                if k:
                    d = sp.diff(d, sym, k)
            self._fns[alpha] = _lambdify_vectorized(self.symbols, d)
        return self._fns[alpha]

    def diff_expr(self, alpha: MultiIndex):
        d = self.expr
        for sym, k in zip(self.symbols, MultiIndex(alpha)):
            if k:
                d = sp.diff(d, sym, k)
        return d

    def _value_batch(self, pts):
        return self._fn(MultiIndex.zero(self.dim))(pts)

    def _derivative_batch(self, alpha, pts):
        return self._fn(alpha)(pts)


# 5-point central stencils: 4th-order first and second derivatives.
_STENCIL_1 = ((-2, 1.0 / 12), (-1, -8.0 / 12), (1, 8.0 / 12), (2, -1.0 / 12))
_STENCIL_2 = (
    (-2, -1.0 / 12),
    (-1, 16.0 / 12),
    (0, -30.0 / 12),
    (1, 16.0 / 12),
    (2, -1.0 / 12),
)


def fd_step(order: int, scale: float) -> float:
    """Finite-difference step: machine-eps^(1/(order+2)) scaled by domain size."""
    return float(_EPS ** (1.0 / (order + 2)) * max(scale, 1e-12))


def fd_derivative(fn, alpha: MultiIndex, pts: np.ndarray, scale: float):
    """Apply central finite differences axis by axis.

    `fn` maps (N, d) -> (N,) complex.  Orders above 2 per axis recurse on the
    lower-order stencil, consuming accuracy but staying unbiased; mixed
    partials commute by construction.
    """
    axis = next((i for i, k in enumerate(alpha) if k > 0), None)
    if axis is None:
        return fn(pts)
    k = alpha[axis]
    rest = MultiIndex(tuple(0 if i == axis else a for i, a in enumerate(alpha)))

    def reduced(p, remaining=k):
        h = fd_step(alpha.order, scale)
        if remaining == 1:
            stencil, div = _STENCIL_1, h
        else:
            stencil, div = _STENCIL_2, h * h
        acc = np.zeros(p.shape[0], dtype=complex)
        for off, w in stencil:
            q = p.copy()
            q[:, axis] += off * h
            if remaining <= 2:
                acc += w * fd_derivative(fn, rest, q, scale)
            else:
                acc += w * fd_derivative(
                    fn,
                    MultiIndex(
                        tuple(
                            remaining - 2 if i == axis else a
                            for i, a in enumerate(alpha)
                        )
                    ),
                    q,
                    scale,
                )
        return acc / div

    return reduced(pts)


class NumericFunction(SampledFunction):
    """Callable-backed function; derivatives by finite differences.

    `fn` must accept an (N, d) array and return (N,) values.  `max_order`
    declares how deep the finite-difference oracle may be trusted.
    """

    def __init__(self, fn, domain: Box, declared_gevrey=None, max_order: int = 6):
        super().__init__(domain, declared_gevrey)
        self._raw = fn
        self.max_order = max_order
        self._scale = float(np.max(domain.widths))

    def _value_batch(self, pts):
        return np.asarray(self._raw(pts), dtype=complex)

    def _derivative_batch(self, alpha, pts):
        if alpha.order > self.max_order:
            raise CapabilityError(
                f"finite-difference oracle capped at order {self.max_order}, "
                f"requested {alpha.order}"
            )
        return fd_derivative(self._value_batch, alpha, pts, self._scale)


def constant_function(c, domain: Box) -> SampledFunction:
    syms = sp.symbols(f"w0:{domain.dim}")
    return ExprFunction(sp.sympify(c), syms, domain)
