"""Numerical unfolding operators on the thin domain.

T_eps maps phi on R^eps to (0,1) x Y*:

    T_eps phi(x, y1, y2) = phi(eps^a [x/eps^a]_{L_g} L_g + eps^a y1, eps y2)   on I_eps,
                         = 0                                                   on Lambda_eps,

and the iterated operator resolves the strip at the scales (eps^b, eps^c):

    T^g(T_eps phi)(x, y1, z1, z2) = T_eps phi(eps^b [x/eps^b]_{L_h} L_h + eps^b z1, y1, eps^c z2 + g(y1)).

All integrals below are tensor Gauss rules in the unfolded variables; panels
are split wherever the integrand jumps (cell boundaries, the start of
Lambda_eps), so the exact identities hold to quadrature accuracy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .fem import FemField
from .geometry import PeriodicProfile, ThinDomainSpec, profile_average
from .quadrature import composite_rule, gauss_legendre, merge_close, split_panels


@dataclass(frozen=True)
class CellSplit:
    """Split of (0,1) into whole cells of length ``cell`` and the leftover Lambda."""

    cell: float
    n_cells: int

    @classmethod
    def of(cls, cell: float) -> "CellSplit":
        return cls(cell, int(math.floor(1.0 / cell + 1e-9)))

    @property
    def lam_start(self) -> float:
        return min(1.0, self.n_cells * self.cell)

    @property
    def lam_length(self) -> float:
        return 1.0 - self.lam_start

    def index(self, x):
        """Cell index of x, or n_cells for points of Lambda."""
        k = np.floor(np.asarray(x, float) / self.cell).astype(np.int64)
        return np.minimum(k, self.n_cells)


class PointEvaluator:
    """Uniform access to FemFields and callables phi(x, y).

    For FemFields, points outside the discrete domain (curved boundary versus
    polyline) are extrapolated from the nearest element of their column and
    counted in ``outside``.
    """

    def __init__(self, phi, grad: Optional[Callable] = None):
        self.phi = phi
        self.grad = grad
        self.outside = 0
        self.evaluated = 0

    def __call__(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        self.evaluated += x.size
        if isinstance(self.phi, FemField):
            mesh = self.phi.mesh
            elem, bary, out = mesh.locate(x, y)
            self.outside += int(out.sum())
            vals = np.einsum("ij,ij->i", bary, self.phi.values[mesh.triangles[elem]])
            return vals.reshape(x.shape)
        return np.broadcast_to(np.asarray(self.phi(x, y), float), x.shape)

    def value_and_gradient(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        if isinstance(self.phi, FemField):
            mesh = self.phi.mesh
            elem, bary, out = mesh.locate(x.ravel(), y.ravel())
            self.outside += int(out.sum())
            self.evaluated += x.size
            vals = np.einsum("ij,ij->i", bary, self.phi.values[mesh.triangles[elem]])
            grads = self.phi.gradients()[elem]
            return vals.reshape(x.shape), grads[:, 0].reshape(x.shape), grads[:, 1].reshape(x.shape)
        if self.grad is None:
            raise ValueError("callable fields need an explicit gradient")
        gx, gy = self.grad(x, y)
        return self(x, y), np.broadcast_to(gx, x.shape), np.broadcast_to(gy, x.shape)


def as_evaluator(phi) -> PointEvaluator:
    return phi if isinstance(phi, PointEvaluator) else PointEvaluator(phi)


def _profile_rule(profile: PeriodicProfile, n: int):
    """About n Gauss points on one period, split at the profile's panel edges."""
    edges = profile.panel_edges()
    per = max(2, int(math.ceil(n / (edges.size - 1))))
    return composite_rule(edges, per)


# ---------------------------------------------------------------------------
# T_eps samplers


class UnfoldGrid:
    """Tensor sample grid on (0,1) x Y*.

    ``n_x`` Gauss points per eps^alpha-cell (and on Lambda), about ``n1`` in
    y1 and ``n2`` in the vertical fraction t = y2 / g(y1).  When the total
    exceeds ``max_samples`` the largest of the three counts is halved.
    """

    def __init__(self, epsilon: float, alpha: float, g: PeriodicProfile,
                 n_x: int = 64, n1: int = 64, n2: int = 64, max_samples: float = 1e7):
        self.epsilon = float(epsilon)
        self.alpha = float(alpha)
        self.g = g
        self.scale = self.epsilon ** self.alpha
        self.split = CellSplit.of(self.scale * g.period)
        counts = [int(n_x), int(n1), int(n2)]
        while self.split.n_cells * counts[0] * counts[1] * counts[2] > max_samples:
            i = int(np.argmax(counts))
            if counts[i] <= 2:
                break
            counts[i] //= 2
        self.n_x, self.n1, self.n2 = counts
        y1, w1 = _profile_rule(g, self.n1)
        t, wt = gauss_legendre(self.n2)
        gy = g(y1)
        self.y1 = np.repeat(y1, t.size)
        self.y2 = (gy[:, None] * t[None, :]).ravel()
        self.wy = ((w1 * gy)[:, None] * wt[None, :]).ravel()
        tx, wx = gauss_legendre(self.n_x)
        self._tx, self._wx = tx, wx

    @property
    def cell_area(self) -> float:
        """|Y*| by the sample weights."""
        return float(self.wy.sum())

    @property
    def n_samples(self) -> int:
        return self.split.n_cells * self.n_x * self.y1.size

    def cell_x(self, k):
        """Gauss points and weights in x inside cell k."""
        c = self.split.cell
        return k * c + c * self._tx, c * self._wx

    def lambda_x(self):
        a = self.split.lam_start
        length = self.split.lam_length
        return a + length * self._tx, length * self._wx

    def physical_points(self, cells=None):
        """Physical (x, y) of the samples of every cell, shape (n_cells, Q)."""
        cells = np.arange(self.split.n_cells) if cells is None else np.asarray(cells)
        X = cells[:, None] * self.split.cell + self.scale * self.y1[None, :]
        Y = np.broadcast_to(self.epsilon * self.y2[None, :], X.shape)
        return X, Y


@dataclass
class UnfoldedSamples:
    """T_eps phi at the (y1, y2) samples of each cell (constant in x per cell)."""

    grid: UnfoldGrid
    values: np.ndarray
    outside: int = 0

    def expand(self):
        """Samples on the full (x, y1, y2) grid, zero rows on Lambda."""
        g = self.grid
        full = np.repeat(self.values, g.n_x, axis=0)
        lam = np.zeros((g.n_x if g.split.lam_length > 0 else 0, self.values.shape[1]))
        return np.vstack([full, lam])

    def lp_norm(self, p: float) -> float:
        """||T_eps phi||_{L^p((0,1) x Y*)}."""
        s = self.grid.split.cell * np.sum(np.abs(self.values) ** p @ self.grid.wy)
        return float(s) ** (1.0 / p)

    def integral(self) -> float:
        return float(self.grid.split.cell * np.sum(self.values @ self.grid.wy))


def unfold(field, grid: UnfoldGrid, chunk: int = 64) -> UnfoldedSamples:
    """Sample T_eps field on the grid (one evaluation per cell sample)."""
    ev = as_evaluator(field)
    before = ev.outside
    n = grid.split.n_cells
    out = np.empty((n, grid.y1.size))
    for s in range(0, n, chunk):
        cells = np.arange(s, min(n, s + chunk))
        X, Y = grid.physical_points(cells)
        out[cells] = ev(X, Y)
    return UnfoldedSamples(grid, out, ev.outside - before)


def physical_lp_norm(phi, epsilon: float, alpha: float, g: PeriodicProfile, p: float,
                     x_range=(0.0, 1.0), n_x: int = 48, n_y: int = 48) -> float:
    """||phi||_{L^p} over {a < x < b, 0 < y < eps g(x/eps^alpha)} by physical-coordinate Gauss.

    Panels follow the oscillation cells and the kinks of g; this rule shares
    no points with the unfolded samplers.
    """
    ev = as_evaluator(phi)
    a, b = x_range
    scale = epsilon ** alpha
    local = g.panel_edges() * scale
    period = scale * g.period
    k0, k1 = int(math.floor(a / period)), int(math.ceil(b / period))
    edges = (np.arange(k0, k1 + 1)[:, None] * period + local[None, :]).ravel()
    edges = merge_close(np.concatenate([edges[(edges > a) & (edges < b)], [a, b]]), 1e-14)
    xq, wx = composite_rule(edges, max(2, n_x // max(1, local.size - 1)))
    t, wt = gauss_legendre(n_y)
    top = epsilon * g(xq / scale)
    X = np.repeat(xq, t.size)
    Y = (top[:, None] * t[None, :]).ravel()
    W = ((wx * top)[:, None] * wt[None, :]).ravel()
    total = 0.0
    step = 2_000_000
    for s in range(0, X.size, step):
        sl = slice(s, s + step)
        total += float(np.dot(W[sl], np.abs(ev(X[sl], Y[sl])) ** p))
    return total ** (1.0 / p)


def norm_identity(field, grid: UnfoldGrid, p: float):
    """(||T_eps phi||_p, (L_g/eps)^(1/p) ||phi||_{L^p(R_0)}): equal for every phi."""
    lhs = unfold(field, grid).lp_norm(p)
    rhs = (grid.g.period / grid.epsilon) ** (1.0 / p) * physical_lp_norm(
        field, grid.epsilon, grid.alpha, grid.g, p, (0.0, grid.split.lam_start))
    return lhs, rhs


def unfolding_error(u_eps: FemField, u_lim, p: float, grid: UnfoldGrid, chunk: int = 32):
    """(e_Lp, e_W1p) of T_eps u_eps against the x-only limit u on (0,1) x Y*.

    e_W1p adds the y-gradient of T_eps u_eps, evaluated as
    eps^alpha T(d_x u_eps) and eps T(d_y u_eps).  On Lambda T_eps u_eps = 0,
    so only |u|^p contributes there.
    """
    ev = as_evaluator(u_eps)
    ulim = u_lim if callable(u_lim) else (lambda x: np.interp(x, *u_lim))
    eps, sc = grid.epsilon, grid.scale
    n = grid.split.n_cells
    wy = grid.wy
    lp = 0.0
    grad = 0.0
    for s in range(0, n, chunk):
        cells = np.arange(s, min(n, s + chunk))
        X, Y = grid.physical_points(cells)
        vals, gx, gy = ev.value_and_gradient(X, Y)
        gsum = (np.hypot(sc * gx, eps * gy) ** p) @ wy
        grad += grid.split.cell * float(gsum.sum())
        for i, k in enumerate(cells):
            xk, wk = grid.cell_x(k)
            uk = ulim(xk)
            diff = np.abs(vals[i][None, :] - uk[:, None]) ** p
            lp += float(wk @ (diff @ wy))
    if grid.split.lam_length > 0:
        xl, wl = grid.lambda_x()
        lp += float(wl @ np.abs(ulim(xl)) ** p) * grid.cell_area
    return lp ** (1.0 / p), (lp + grad) ** (1.0 / p)


def derivative_exchange_check(field: FemField, grid: UnfoldGrid, n_cells: int = 8,
                              rel_step: float = 1e-6) -> float:
    """Max |central difference in y1 of T_eps u - eps^alpha T_eps(d_x u)|.

    Only sample pairs whose three points fall in the same element are used.
    """
    mesh = field.mesh
    cells = np.unique(np.linspace(0, grid.split.n_cells - 1, min(n_cells, grid.split.n_cells)).astype(int))
    X, Y = grid.physical_points(cells)
    eta = rel_step * grid.g.period
    dX = grid.scale * eta
    e0, b0, _ = mesh.locate(X.ravel(), Y.ravel())
    ep, bp, _ = mesh.locate(X.ravel() + dX, Y.ravel())
    em, bm, _ = mesh.locate(X.ravel() - dX, Y.ravel())
    same = (e0 == ep) & (e0 == em)
    if not np.any(same):
        return 0.0
    vals = field.values[mesh.triangles]
    up = np.einsum("ij,ij->i", bp, vals[ep])
    um = np.einsum("ij,ij->i", bm, vals[em])
    fd = (up - um) / (2 * eta)
    exact = grid.scale * field.gradients()[e0, 0]
    return float(np.max(np.abs(fd - exact)[same]))


# ---------------------------------------------------------------------------
# strip integrals


def _vertical_rule(n):
    return gauss_legendre(n)


def physical_strip_integral(phi, spec: ThinDomainSpec, x_range=(0.0, 1.0),
                            n_x: int = 16, n_y: int = 8, cells_per_panel: int = 1) -> float:
    """(1/eps^(gamma+1)) int phi over the part of O^eps with a < x < b.

    Gauss in x on panels split at the g-cell boundaries and the kinks of g and
    h, Gauss across the strip between the exact interface and top curves.
    """
    ev = as_evaluator(phi)
    a, b = x_range
    if b <= a:
        return 0.0
    eps = spec.epsilon
    pts = [np.array([a, b])]
    for prof, sc in ((spec.g, eps ** spec.alpha), (spec.h, eps ** spec.beta)):
        if prof.is_constant:
            continue
        period = sc * prof.period
        local = prof.panel_edges() * sc
        k0, k1 = int(math.floor(a / period)), int(math.ceil(b / period))
        e = (np.arange(k0, k1 + 1)[:, None] * period + local[None, :]).ravel()
        pts.append(e[(e > a) & (e < b)])
    edges = merge_close(np.concatenate(pts), 1e-14)
    edges = split_panels(edges, cells_per_panel)
    xq, wx = composite_rule(edges, n_x)
    t, wt = _vertical_rule(n_y)
    top = spec.top(xq)
    thick = spec.thickness(xq)
    X = np.repeat(xq, t.size)
    Y = ((top - thick)[:, None] + thick[:, None] * t[None, :]).ravel()
    W = ((wx * thick)[:, None] * wt[None, :]).ravel()
    return float(np.dot(W, ev(X, Y))) / eps ** (spec.gamma + 1.0)


def unfolded_strip_integral(phi, spec: ThinDomainSpec, form: str = "exact",
                            x_range=(0.0, 1.0), n1: int = 64, n2: int = 8,
                            n_x: int = 8) -> float:
    """(1/(L_g eps^gamma)) int_{(a,b) x Y*_eps(x)} T_eps phi.

    ``form="exact"`` uses the strip cell with h evaluated at the physical point
    (eps^a k L_g + eps^a y1)/eps^b, which makes the concentrated-integral
    identity exact; ``form="simplified"`` uses h(x/eps^b).
    """
    ev = as_evaluator(phi)
    eps, ea, eb, ec = spec.epsilon, spec.epsilon ** spec.alpha, spec.epsilon ** spec.beta, spec.epsilon ** spec.gamma
    g, h = spec.g, spec.h
    split = CellSplit.of(ea * g.period)
    a, b = x_range
    b = min(b, split.lam_start)
    if b <= a:
        return 0.0
    y1, w1 = _profile_rule(g, n1)
    gy = g(y1)
    t, wt = gauss_legendre(n2)
    k_first = int(math.floor(a / split.cell))
    k_last = min(split.n_cells - 1, int(math.ceil(b / split.cell)) - 1)
    total = 0.0
    for k in range(k_first, k_last + 1):
        x0 = k * split.cell
        lo, hi = max(a, x0), min(b, x0 + split.cell)
        if hi <= lo:
            continue
        Xphys = x0 + ea * y1
        if form == "exact":
            thick = ec * h(Xphys / eb)                       # per y1
            Y2 = gy[:, None] - thick[:, None] * (1.0 - t[None, :])
            vals = ev(np.repeat(Xphys, t.size), eps * Y2.ravel()).reshape(Y2.shape)
            inner = (vals @ wt) * thick                      # int over y2, per y1
            total += (hi - lo) * float(w1 @ inner)
        elif form == "simplified":
            xq, wx = composite_rule(np.array([lo, hi]), n_x)
            thick = ec * h(xq / eb)                          # per x
            Y2 = gy[None, :, None] - thick[:, None, None] * (1.0 - t[None, None, :])
            Xb = np.broadcast_to(Xphys[None, :, None], Y2.shape)
            vals = ev(Xb.ravel(), eps * Y2.ravel()).reshape(Y2.shape)
            inner = (vals @ wt) * thick[:, None]             # (x, y1)
            total += float(wx @ (inner @ w1))
        else:
            raise ValueError(f"unknown form {form!r}")
    return total / (g.period * ec)


class StripUnfoldGrid:
    """Sampling of (0,1) x (0,L_g) x Y*_h for the iterated operator.

    Inside each eps^beta-cell the z1 panels are split where the physical
    point eps^b k L_h + eps^b z1 crosses a g-cell boundary or enters Lambda_eps,
    since T_eps phi jumps there.
    """

    def __init__(self, spec: ThinDomainSpec, n1: int = 64, nz1: int = 8, nz2: int = 8,
                 n_x: int = 8):
        self.spec = spec
        eps = spec.epsilon
        self.ea, self.eb, self.ec = eps ** spec.alpha, eps ** spec.beta, eps ** spec.gamma
        self.g_split = CellSplit.of(self.ea * spec.g.period)
        self.h_split = CellSplit.of(self.eb * spec.h.period)
        self.n1, self.nz1, self.nz2, self.n_x = n1, nz1, nz2, n_x
        self.y1, self.w1 = _profile_rule(spec.g, n1)
        self.t2, self.w2 = gauss_legendre(nz2)
        self._tx, self._wx = gauss_legendre(n_x)

    def z1_rule(self, k: int):
        """Gauss points/weights in z1 for h-cell k."""
        L = self.spec.h.period
        gs = self.g_split
        x0 = k * self.h_split.cell
        bounds = np.arange(gs.n_cells + 1) * gs.cell
        z = (bounds - x0) / self.eb
        kinks = self.spec.h.panel_edges()
        edges = merge_close(np.concatenate([[0.0, L], z[(z > 0) & (z < L)], kinks]), 1e-13)
        return composite_rule(edges, self.nz1)

    def cell_x(self, k):
        c = self.h_split.cell
        return k * c + c * self._tx, c * self._wx

    def lambda_x(self):
        a = self.h_split.lam_start
        return a + self.h_split.lam_length * self._tx, self.h_split.lam_length * self._wx

    def physical_points(self, k: int):
        """Physical points, weights (dy1 dZ) and the mask of points outside Lambda_eps."""
        spec = self.spec
        z1, wz1 = self.z1_rule(k)
        hz = spec.h(z1)
        z2 = -hz[:, None] * (1.0 - self.t2[None, :])          # (Z1, T)
        wz = (wz1 * hz)[:, None] * self.w2[None, :]
        xprime = k * self.h_split.cell + self.eb * z1         # (Z1,)
        j = self.g_split.index(xprime)
        inside = j < self.g_split.n_cells
        gy = spec.g(self.y1)
        X = j[None, :, None] * self.g_split.cell + self.ea * self.y1[:, None, None]
        X = np.broadcast_to(X, (self.y1.size, z1.size, self.t2.size))
        Y = spec.epsilon * (self.ec * z2[None, :, :] + gy[:, None, None])
        W = self.w1[:, None, None] * wz[None, :, :]
        return X, Y, W, inside


def unfold_strip(field, grid: StripUnfoldGrid):
    """Samples of T^g(T_eps field) per h-cell: list of (values, weights).

    Samples whose physical point falls in Lambda_eps carry the value 0.
    """
    ev = as_evaluator(field)
    out = []
    for k in range(grid.h_split.n_cells):
        X, Y, W, inside = grid.physical_points(k)
        vals = ev(X, Y)
        vals = np.where(inside[None, :, None], vals, 0.0)
        out.append((vals, W))
    return out


def iterated_strip_integral(phi, grid: StripUnfoldGrid) -> float:
    """(1/(L_g L_h)) int T^g(T_eps phi) over (0,1) x (0,L_g) x Y*_h."""
    spec = grid.spec
    total = 0.0
    for vals, W in unfold_strip(phi, grid):
        total += float(np.sum(vals * W))
    return total * grid.h_split.cell / (spec.g.period * spec.h.period)


def strip_lp_error(phi_x: Callable, grid: StripUnfoldGrid, p: float) -> float:
    """|| T^g(T_eps phi) - phi ||_{L^p((0,1) x (0,L_g) x Y*_h)} for phi = phi(x)."""
    def ev(X, Y):
        return phi_x(X)

    total = 0.0
    for k, (vals, W) in enumerate(unfold_strip(ev, grid)):
        xk, wk = grid.cell_x(k)
        diff = np.abs(vals[None] - phi_x(xk)[:, None, None, None]) ** p
        total += float(np.einsum("i,ijkl,jkl->", wk, diff, W))
    if grid.h_split.lam_length > 0:
        xl, wl = grid.lambda_x()
        area = grid.spec.g.period * grid.spec.h.period * profile_average(grid.spec.h)
        total += float(wl @ np.abs(phi_x(xl)) ** p) * area
    return total ** (1.0 / p)


@dataclass
class IterationTerms:
    """Pieces of the iterated concentrated-integral identity.

    direct = iterated + lambda_h + remainder + propagation, exactly;
    ``propagation`` is the gap between the two strip-cell parameterizations
    (exact minus simplified), which vanishes as eps -> 0 and is identically 0
    when h is constant.
    """

    direct: float
    iterated: float
    lambda_h: float
    remainder: float
    propagation: float

    @property
    def residual_full(self) -> float:
        return abs(self.direct - (self.iterated + self.lambda_h + self.remainder + self.propagation))

    @property
    def residual_three_term(self) -> float:
        return abs(self.direct - (self.iterated + self.lambda_h + self.remainder))

    @property
    def scale(self) -> float:
        return max(abs(self.direct), 1e-300)


def iteration_terms(phi, spec: ThinDomainSpec, n1: int = 64, nz1: int = 8, nz2: int = 8,
                    n_x: int = 16) -> IterationTerms:
    ev = as_evaluator(phi)
    grid = StripUnfoldGrid(spec, n1=n1, nz1=nz1, nz2=nz2)
    gsplit = grid.g_split
    hsplit = grid.h_split
    direct = physical_strip_integral(ev, spec, n_x=n_x, n_y=nz2)
    remainder = physical_strip_integral(ev, spec, (gsplit.lam_start, 1.0), n_x=n_x, n_y=nz2)
    iterated = iterated_strip_integral(ev, grid)
    lam_h = unfolded_strip_integral(ev, spec, "simplified", (hsplit.lam_start, 1.0), n1=n1,
                                    n2=nz2, n_x=n_x)
    exact = unfolded_strip_integral(ev, spec, "exact", n1=n1, n2=nz2)
    simple = unfolded_strip_integral(ev, spec, "simplified", n1=n1, n2=nz2, n_x=n_x)
    return IterationTerms(direct, iterated, lam_h, remainder, exact - simple)


def propagation_gap(phi, spec: ThinDomainSpec, n1: int = 64, n2: int = 8, n_x: int = 16) -> float:
    """|(exact - simplified) strip-cell integral| of T_eps phi."""
    ev = as_evaluator(phi)
    return abs(unfolded_strip_integral(ev, spec, "exact", n1=n1, n2=n2)
               - unfolded_strip_integral(ev, spec, "simplified", n1=n1, n2=n2, n_x=n_x))


def lambda_remainder(phi, epsilon: float, alpha: float, g: PeriodicProfile) -> float:
    """(1/eps) int_{R_1^eps} |phi|, the part of R^eps over Lambda_eps."""
    split = CellSplit.of(epsilon ** alpha * g.period)
    if split.lam_length <= 0:
        return 0.0
    return physical_lp_norm(phi, epsilon, alpha, g, 1.0, (split.lam_start, 1.0)) / epsilon


def strip_lambda_remainder(phi, spec: ThinDomainSpec) -> float:
    """(1/eps^(gamma+1)) int_{O_1^eps} |phi|."""
    split = CellSplit.of(spec.epsilon ** spec.alpha * spec.g.period)
    ev = as_evaluator(phi)

    def absval(x, y):
        return np.abs(ev(x, y))

    return physical_strip_integral(absval, spec, (split.lam_start, 1.0))
