"""Fourier traces of distributional data on t-slices.

The slice value of u against a test function phi is recovered from the
inversion-style formula

    (trace_t u)(phi) = (2 pi)^(-N) int int F(lam u)(sigma, theta) e^{i t theta}
                       [int phi(x) e^{i x sigma} dx] dsigma dtheta,

with the forward transform taken as F v = int v e^{-i<., xi>} (the sign is
forced by requiring trace-equals-restriction for smooth densities).  The
density part runs through a padded discrete Fourier transform; point
functionals contribute in closed form.  t-derivatives of the slice pairing
insert (i theta)^beta into the spectral integrand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .approx import DistributionData, distribution_action
from .gevrey import gevrey_bump, gevrey_seminorm
from .multiindex import MultiIndex, iter_multiindices
from .quadrature import QuadratureRule, tensor_nodes
from .sampled import Box, GevreyParams, ParameterError, SampledFunction

__all__ = [
    "SpectralCutoff",
    "SpectralData",
    "ResolutionError",
    "default_cutoff",
    "fourier_of",
    "trace_at",
    "trace_deriv_at",
    "trace_t_regularity",
    "fourier_gevrey_decay_check",
    "trace_consistency",
    "TensorTest",
]


class ResolutionError(RuntimeError):
    """Spectral grid too coarse for the declared data."""


@dataclass(frozen=True)
class SpectralCutoff:
    """Gevrey bump lam on the big box, = 1 on the working region, together
    with the sampling grid for the discrete transform."""

    lam: SampledFunction
    box: Box
    grid: int = 512
    padding: int = 4

    def __post_init__(self):
        if self.grid < 32:
            raise ParameterError("spectral grid must have >= 32 points per axis")
        if self.padding < 1:
            raise ParameterError("padding factor must be >= 1")
        if self.lam.dim != self.box.dim:
            raise ParameterError("cutoff dimension must match the box")

    def validate_plateau(self, radius: float, grid: int = 7) -> bool:
        pts = Box.cube(radius / math.sqrt(self.box.dim), self.box.dim).grid(grid)
        return bool(np.max(np.abs(self.lam.value(pts) - 1.0)) < 1e-9)


def default_cutoff(halfwidth: float, dim: int, plateau: float,
                   s: float = 2.0, grid: int = 512,
                   padding: int = 4) -> SpectralCutoff:
    """Radial bump = 1 on |.| <= plateau, 0 outside 0.95*halfwidth."""
    lam = gevrey_bump(s, plateau, 0.95 * halfwidth, dim)
    return SpectralCutoff(lam, Box.cube(halfwidth, dim), grid, padding)


@dataclass
class SpectralData:
    """F(lam u) on a tensor frequency grid (axes fftshifted, ascending)."""

    axes: tuple       # per-axis frequency arrays, x-axes first then t-axes
    values: np.ndarray
    m: int
    n: int

    @property
    def spacings(self):
        return tuple(float(a[1] - a[0]) for a in self.axes)

    def boundary_ratio(self, axes=None, values=None) -> float:
        values = self.values if values is None else values
        peak = float(np.max(np.abs(values)))
        if peak == 0.0:
            return 0.0
        worst = 0.0
        for axis in range(values.ndim) if axes is None else axes:
            sl = [slice(None)] * values.ndim
            for edge in (0, -1):
                sl[axis] = edge
                worst = max(worst, float(np.max(np.abs(values[tuple(sl)]))))
        return worst / peak


def _density_transform(density, cutoff: SpectralCutoff):
    box = cutoff.box
    N = box.dim
    n_grid = cutoff.grid
    n_pad = cutoff.grid * cutoff.padding
    axes_x = []
    deltas = []
    for lo, hi in zip(box.lo, box.hi):
        d = (hi - lo) / n_grid
        axes_x.append(lo + d * np.arange(n_grid))
        deltas.append(d)
    mesh = np.meshgrid(*axes_x, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=-1)
    vals = (np.asarray(cutoff.lam.value(pts))
            * np.asarray(density.value(pts))).reshape((n_grid,) * N)
    padded = np.zeros((n_pad,) * N, dtype=complex)
    padded[(slice(0, n_grid),) * N] = vals
    spec = np.fft.fftn(padded)
    freq_axes = []
    for a in range(N):
        xi = 2.0 * np.pi * np.fft.fftfreq(n_pad, d=deltas[a])
        # forward convention e^{-i x xi}: phase-correct for the box origin
        phase = np.exp(-1j * box.lo[a] * xi)
        shape = [1] * N
        shape[a] = n_pad
        spec = spec * (deltas[a] * phase).reshape(shape)
        freq_axes.append(np.fft.fftshift(xi))
    spec = np.fft.fftshift(spec)
    return tuple(freq_axes), spec


def _point_transform(u: DistributionData, cutoff: SpectralCutoff,
                     axes, m: int, n: int):
    """Closed-form sum of point-functional transforms on the grid."""
    total = None
    t_lo = cutoff.box.lo[m:]
    t_hi = cutoff.box.hi[m:]
    theta_mesh = np.meshgrid(*axes[m:], indexing="ij") if n else []
    for p in u.points:
        x0 = np.asarray(p.location, dtype=float)
        sig_part = np.ones((), dtype=complex)
        shape = [len(a) for a in axes[:m]]
        sig_grid = np.meshgrid(*axes[:m], indexing="ij")
        sig_part = np.ones(shape, dtype=complex)
        for a in range(m):
            sig_part = sig_part * (1j * sig_grid[a]) ** p.order[a]
            sig_part = sig_part * np.exp(-1j * x0[a] * sig_grid[a])
        # F_t of lam(x0, .) * t_profile with the e^{-i t theta} convention
        t_window = [
            (max(lo, p.t_profile.domain.lo[a]), min(hi, p.t_profile.domain.hi[a]))
            for a, (lo, hi) in enumerate(zip(t_lo, t_hi))
        ]
        # Gauss-Legendre sized by the fastest phase e^{-i t theta} on the
        # padded frequency grid: about one node per two radians plus margin.
        node_list, wt_list = [], []
        for a, (lo, hi) in enumerate(t_window):
            theta_max = float(np.max(np.abs(axes[m + a])))
            n_pts = max(96, int(0.6 * theta_max * (hi - lo) / 2.0) + 32)
            g_n, g_w = np.polynomial.legendre.leggauss(n_pts)
            node_list.append(0.5 * (hi - lo) * g_n + 0.5 * (hi + lo))
            wt_list.append(0.5 * (hi - lo) * g_w)
        mesh = np.meshgrid(*node_list, indexing="ij")
        t_nodes = np.stack([g2.ravel() for g2 in mesh], axis=-1)
        wmesh = np.meshgrid(*wt_list, indexing="ij")
        t_wts = np.prod(np.stack([g2.ravel() for g2 in wmesh], axis=-1), axis=1)
        full = np.concatenate(
            [np.broadcast_to(x0, (t_nodes.shape[0], m)), t_nodes], axis=1
        )
        g = (np.asarray(cutoff.lam.value(full))
             * np.asarray(p.t_profile.value(t_nodes)))
        theta_shape = [len(a) for a in axes[m:]]
        ft = np.zeros(theta_shape, dtype=complex)
        flat_theta = np.stack([g2.ravel() for g2 in theta_mesh], axis=-1)
        phase = np.exp(-1j * (flat_theta @ t_nodes.T))
        ft = (phase @ (g * t_wts)).reshape(theta_shape)
        contrib = p.weight * np.multiply.outer(sig_part, ft)
        total = contrib if total is None else total + contrib
    return total


def fourier_of(u: DistributionData, cutoff: SpectralCutoff,
               m: int | None = None, n: int | None = None) -> SpectralData:
    """F(lam u) on the padded grid; forward convention e^{-i<., xi>}."""
    N = cutoff.box.dim
    if m is None or n is None:
        if u.points:
            m = len(u.points[0].location)
            n = N - m
        else:
            raise ParameterError("specify m and n for pure-density data")
    if m + n != N:
        raise ParameterError("m + n must equal the box dimension")
    axes = None
    values = None
    if u.density is not None:
        axes, values = _density_transform(u.density, cutoff)
    if axes is None:
        n_pad = cutoff.grid * cutoff.padding
        deltas = [(hi - lo) / cutoff.grid
                  for lo, hi in zip(cutoff.box.lo, cutoff.box.hi)]
        axes = tuple(
            np.fft.fftshift(2.0 * np.pi * np.fft.fftfreq(n_pad, d=d))
            for d in deltas
        )
        values = np.zeros(tuple(len(a) for a in axes), dtype=complex)
    density_values = values
    pt = _point_transform(u, cutoff, axes, m, n)
    if pt is not None:
        values = values + pt
    data = SpectralData(axes=axes, values=values, m=m, n=n)
    # point masses have non-decaying sigma-content by nature (the decay is
    # supplied later by the test function), so on the x-axes only the density
    # part must be resolved; on the t-axes everything must decay.
    ratio = data.boundary_ratio(axes=range(m, m + n))
    if u.density is not None:
        ratio = max(ratio, data.boundary_ratio(axes=range(m),
                                               values=density_values))
    if ratio > 1e-6:
        raise ResolutionError(
            f"spectral content at the grid boundary: ratio "
            f"{ratio:.2e}; refine the sampling grid"
        )
    return data


def _test_transform(phi: SampledFunction, sigma_axes):
    """F phi(sigma) = int phi(x) e^{+i x sigma} dx on the sigma grid."""
    r = getattr(phi, "r_outer", None)
    window = [(-r, r)] * phi.dim if r is not None else list(
        zip(phi.domain.lo, phi.domain.hi)
    )
    node_list, wt_list = [], []
    for a, (lo, hi) in enumerate(window):
        sigma_max = float(np.max(np.abs(sigma_axes[a])))
        n_pts = max(96, int(0.6 * sigma_max * (hi - lo) / 2.0) + 32)
        g_n, g_w = np.polynomial.legendre.leggauss(n_pts)
        node_list.append(0.5 * (hi - lo) * g_n + 0.5 * (hi + lo))
        wt_list.append(0.5 * (hi - lo) * g_w)
    mesh2 = np.meshgrid(*node_list, indexing="ij")
    nodes = np.stack([g2.ravel() for g2 in mesh2], axis=-1)
    wmesh = np.meshgrid(*wt_list, indexing="ij")
    wts = np.prod(np.stack([g2.ravel() for g2 in wmesh], axis=-1), axis=1)
    shape = [len(a) for a in sigma_axes]
    mesh = np.meshgrid(*sigma_axes, indexing="ij")
    flat = np.stack([g.ravel() for g in mesh], axis=-1)
    phase = np.exp(1j * (flat @ nodes.T))
    vals = np.asarray(phi.value(nodes))
    return (phase @ (vals * wts)).reshape(shape)


def _theta_profile(data: SpectralData, fphi: np.ndarray) -> np.ndarray:
    """Collapse the sigma axes: C(theta) = sum_sigma F(lam u) F phi(sigma)."""
    m = data.m
    v = data.values
    weighted = v * fphi.reshape(fphi.shape + (1,) * data.n)
    for a, d in zip(range(m), data.spacings[:m]):
        weighted = weighted.sum(axis=0) * d
    return weighted


class TraceProfile:
    """Precomputed spectral data for repeated slice evaluations in t."""

    def __init__(self, u: DistributionData, cutoff: SpectralCutoff,
                 phi: SampledFunction, m: int | None = None,
                 n: int | None = None):
        if m is None:
            m = phi.dim
        self.data = fourier_of(u, cutoff, m, cutoff.box.dim - m)
        self.fphi = _test_transform(phi, self.data.axes[:m])
        self.c_theta = _theta_profile(self.data, self.fphi)
        self.theta_axes = self.data.axes[m:]
        self.theta_spacings = self.data.spacings[m:]
        self.N = cutoff.box.dim

    def __call__(self, t, beta: MultiIndex | None = None) -> complex:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        acc = self.c_theta
        mesh = np.meshgrid(*self.theta_axes, indexing="ij")
        phase = np.ones(acc.shape, dtype=complex)
        for a, th in enumerate(mesh):
            phase = phase * np.exp(1j * t[a] * th)
            if beta is not None and beta[a]:
                phase = phase * (1j * th) ** beta[a]
        total = np.sum(acc * phase)
        for d in self.theta_spacings:
            total *= d
        return complex(total / (2.0 * np.pi) ** self.N)


def trace_at(u: DistributionData, cutoff: SpectralCutoff, t,
             phi: SampledFunction) -> complex:
    """(trace_t u)(phi) through the spectral formula."""
    return TraceProfile(u, cutoff, phi)(t)


def trace_deriv_at(u, cutoff, t, phi, beta) -> complex:
    """d_t^beta of the slice pairing, via (i theta)^beta insertion."""
    return TraceProfile(u, cutoff, phi)(t, MultiIndex(beta))


def trace_t_regularity(u, cutoff, phi, t_grid, order_cap: int = 4,
                       s: float = 2.0):
    """Derivative table beta -> d_t^beta (trace_t u)(phi) on t_grid, plus the
    Gevrey certificate |d^beta| <= C b^|beta| |beta|!^s with (C, b) fitted at
    orders {0, 1} and asserted at the higher orders."""
    if order_cap > 6:
        raise ParameterError("order_cap must be <= 6")
    prof = TraceProfile(u, cutoff, phi)
    n = len(prof.theta_axes)
    t_grid = [np.atleast_1d(np.asarray(t, dtype=float)) for t in t_grid]
    table = {}
    for beta in iter_multiindices(n, order_cap):
        table[beta] = [prof(t, beta) for t in t_grid]
    c0 = max(max(abs(v) for v in table[b]) for b in table if b.order == 0)
    c1 = max(
        (max(abs(v) for v in table[b]) for b in table if b.order == 1),
        default=0.0,
    )
    C = max(c0, 1e-300)
    b_fit = max(c1 / C, 1e-6)
    ok = True
    worst = 0.0
    for beta, vals in table.items():
        if beta.order < 2:
            continue
        bound = C * b_fit ** beta.order * \
            float(math.factorial(beta.order)) ** s
        ratio = max(abs(v) for v in vals) / bound
        worst = max(worst, ratio)
        if ratio > 1.0 + 1e-9:
            ok = False
    return {"table": table, "C": C, "b": b_fit, "s": s,
            "gevrey_certificate": ok, "worst_ratio": worst}


def fourier_gevrey_decay_check(phi: SampledFunction, xi_grid,
                               slack_cap: float = 10.0):
    """Check |F phi(xi)| <= C_m vol(B) ||phi|| e^{-(s/r^{1/s})|xi|^{1/s}} on
    the grid, with the constant slack fitted and capped."""
    gp: GevreyParams | None = phi.declared_gevrey
    if gp is None:
        raise ParameterError("decay check needs declared Gevrey constants")
    s, r = gp.s, gp.h
    xi_grid = np.atleast_2d(np.asarray(xi_grid, dtype=float))
    if xi_grid.shape[1] != phi.dim:
        xi_grid = xi_grid.reshape(-1, phi.dim)
    rule = QuadratureRule(points_per_axis=128)
    r_out = getattr(phi, "r_outer", None)
    window = [(-r_out, r_out)] * phi.dim if r_out is not None else list(
        zip(phi.domain.lo, phi.domain.hi)
    )
    nodes, wts = tensor_nodes(rule, window)
    vals = np.asarray(phi.value(nodes))
    phase = np.exp(1j * (xi_grid @ nodes.T))
    fvals = np.abs(phase @ (vals * wts))
    norms = np.linalg.norm(xi_grid, axis=1)
    vol = float(np.prod([b - a for a, b in window]))
    K = Box(tuple(a for a, _ in window), tuple(b for _, b in window))
    sem = gevrey_seminorm(phi, GevreyParams(s, r, min(gp.order_cap, 4)), K,
                          grid=7)
    decay = np.exp(-(s / r ** (1.0 / s)) * norms ** (1.0 / s))
    bound = vol * max(sem, 1e-300) * decay
    ratios = fvals / bound
    slack = float(np.max(ratios))
    mask = (norms > 0) & (fvals > 1e-14)
    if np.count_nonzero(mask) >= 2:
        slope = float(np.polyfit(norms[mask] ** (1.0 / s),
                                 np.log(fvals[mask]), 1)[0])
    else:
        slope = 0.0
    worst = xi_grid[int(np.argmax(ratios))]
    return {"ok": bool(slack <= slack_cap and slope < 0.0),
            "slack": slack, "slope": slope, "worst_xi": tuple(worst)}


class TensorTest(SampledFunction):
    """phi(x) * psi(t) as a test function on the product box."""

    def __init__(self, phi: SampledFunction, psi: SampledFunction):
        box = Box(tuple(phi.domain.lo) + tuple(psi.domain.lo),
                  tuple(phi.domain.hi) + tuple(psi.domain.hi))
        super().__init__(box)
        self.phi = phi
        self.psi = psi

    @property
    def support_window(self):
        def block(f):
            r = getattr(f, "r_outer", None)
            if r is not None:
                return [(-r, r)] * f.dim
            return list(zip(f.domain.lo, f.domain.hi))

        return block(self.phi) + block(self.psi)

    def _split(self, alpha):
        m = self.phi.dim
        return MultiIndex(alpha[:m]), MultiIndex(alpha[m:])

    def _value_batch(self, pts):
        m = self.phi.dim
        return np.asarray(self.phi.value(pts[:, :m])) * \
            np.asarray(self.psi.value(pts[:, m:]))

    def _derivative_batch(self, alpha, pts):
        ax, at = self._split(alpha)
        m = self.phi.dim
        fx = self.phi.derivative(ax, pts[:, :m]) if ax.order else \
            self.phi.value(pts[:, :m])
        ft = self.psi.derivative(at, pts[:, m:]) if at.order else \
            self.psi.value(pts[:, m:])
        return np.asarray(fx) * np.asarray(ft)


def trace_consistency(u: DistributionData, cutoff: SpectralCutoff,
                      phi: SampledFunction, psi: SampledFunction,
                      alt_cutoff: SpectralCutoff | None = None):
    """Compare the direct pairing u(psi (x) phi) with the t-integral of the
    spectral traces; optionally re-run with a second cutoff and report the
    lambda-independence residual."""
    direct = distribution_action(u, TensorTest(phi, psi),
                                 QuadratureRule(points_per_axis=256))
    prof = TraceProfile(u, cutoff, phi, m=phi.dim)
    rule = QuadratureRule(points_per_axis=256)
    r_psi = getattr(psi, "r_outer", None)
    window = [(-r_psi, r_psi)] * psi.dim if r_psi is not None else list(
        zip(psi.domain.lo, psi.domain.hi)
    )
    t_nodes, t_wts = tensor_nodes(rule, window)
    traces = np.array([prof(t) for t in t_nodes])
    spectral = complex(np.sum(traces * np.asarray(psi.value(t_nodes)) * t_wts))
    out = {"residual": abs(direct - spectral),
           "direct": direct, "spectral": spectral}
    if alt_cutoff is not None:
        prof2 = TraceProfile(u, alt_cutoff, phi, m=phi.dim)
        traces2 = np.array([prof2(t) for t in t_nodes])
        out["lambda_residual"] = float(np.max(np.abs(traces - traces2)))
    return out
