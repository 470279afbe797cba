"""Periodic profiles, thin-domain specs and layered triangulations.

The thin domain is

    R^eps = {0 < x < 1, 0 < y < eps g(x / eps^alpha)}

and the forcing strip O^eps is the band of thickness eps^(1+gamma) h(x / eps^beta)
below the top boundary.  Meshes are built from vertical fibres placed on an
x-grid aligned with both oscillation periods; every fibre is split at a flat
base height and at the strip interface, so strip triangles tile the discrete
strip exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError, InvalidProfileError, ResolutionError
from .quadrature import adaptive_integrate, merge_close

FAMILIES = ("constant", "cosine", "piecewise_linear")


@dataclass(frozen=True)
class PeriodicProfile:
    """Strictly positive periodic profile (the g or h of the domain).

    Use the ``constant``, ``cosine`` and ``piecewise_linear`` constructors.
    ``params`` holds ``(c,)``, ``(a, b, k)`` or ``(breakpoints, values)``.
    """

    family: str
    params: tuple
    period: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidProfileError(f"unknown profile family {self.family!r}")
        if not (self.period > 0 and math.isfinite(self.period)):
            raise InvalidProfileError("period must be positive and finite")
        if self.family == "cosine":
            a, b, k = self.params
            if not abs(b) < a:
                raise InvalidProfileError("cosine profile needs |b| < a")
            if int(k) != k or k < 1:
                raise InvalidProfileError("cosine wavenumber k must be a positive integer")
        elif self.family == "piecewise_linear":
            bp, vals = self.params
            bp = np.asarray(bp, float)
            vals = np.asarray(vals, float)
            if bp.size < 2 or bp.size != vals.size:
                raise InvalidProfileError("breakpoints and values must match, at least 2")
            if np.any(np.diff(bp) <= 0):
                raise InvalidProfileError("breakpoints must be strictly increasing")
            if bp[0] != 0.0 or not math.isclose(bp[-1], self.period, rel_tol=0, abs_tol=1e-14):
                raise InvalidProfileError("breakpoints must start at 0 and end at the period")
            if vals[0] != vals[-1]:
                raise InvalidProfileError("piecewise-linear profile is not periodic")
        if not (self.min_value > 0 and math.isfinite(self.max_value)):
            raise InvalidProfileError("profile must be strictly positive and bounded")

    @classmethod
    def constant(cls, value: float, period: float = 1.0) -> "PeriodicProfile":
        return cls("constant", (float(value),), float(period))

    @classmethod
    def cosine(cls, a: float, b: float, k: int = 1, period: float = 1.0) -> "PeriodicProfile":
        return cls("cosine", (float(a), float(b), int(k)), float(period))

    @classmethod
    def piecewise_linear(cls, breakpoints, values, period: Optional[float] = None):
        bp = tuple(float(v) for v in breakpoints)
        period = bp[-1] if period is None else float(period)
        return cls("piecewise_linear", (bp, tuple(float(v) for v in values)), period)

    @classmethod
    def sawtooth(cls, low: float, high: float, period: float = 1.0):
        """Symmetric triangle wave between ``low`` and ``high``."""
        return cls.piecewise_linear((0.0, 0.5 * period, period), (low, high, low), period)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "constant":
            return np.full_like(y, self.params[0])
        if self.family == "cosine":
            a, b, k = self.params
            return a + b * np.cos(2.0 * np.pi * k * np.mod(y, self.period) / self.period)
        bp, vals = self.params
        return np.interp(np.mod(y, self.period), bp, vals)

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "constant":
            return np.zeros_like(y)
        if self.family == "cosine":
            a, b, k = self.params
            w = 2.0 * np.pi * k / self.period
            return -b * w * np.sin(w * np.mod(y, self.period))
        bp, vals = (np.asarray(v) for v in self.params)
        slopes = np.diff(vals) / np.diff(bp)
        idx = np.clip(np.searchsorted(bp, np.mod(y, self.period), side="right") - 1,
                      0, slopes.size - 1)
        return slopes[idx]

    @property
    def is_constant(self) -> bool:
        if self.family == "constant":
            return True
        if self.family == "cosine":
            return self.params[1] == 0.0
        return len(set(self.params[1])) == 1

    @property
    def min_value(self) -> float:
        if self.family == "constant":
            return self.params[0]
        if self.family == "cosine":
            return self.params[0] - abs(self.params[1])
        return min(self.params[1])

    @property
    def max_value(self) -> float:
        if self.family == "constant":
            return self.params[0]
        if self.family == "cosine":
            return self.params[0] + abs(self.params[1])
        return max(self.params[1])

    @property
    def lipschitz(self) -> float:
        if self.family == "constant":
            return 0.0
        if self.family == "cosine":
            a, b, k = self.params
            return 2.0 * np.pi * k * abs(b) / self.period
        bp, vals = (np.asarray(v) for v in self.params)
        return float(np.max(np.abs(np.diff(vals) / np.diff(bp))))

    @property
    def kinks(self) -> np.ndarray:
        """Non-smooth points inside one period, in [0, period)."""
        if self.family == "piecewise_linear":
            return np.asarray(self.params[0][:-1], dtype=float)
        return np.zeros(0)

    @property
    def minimizers(self) -> np.ndarray:
        """Points in [0, period) where the profile attains its minimum."""
        if self.is_constant:
            return np.zeros(0)
        if self.family == "cosine":
            a, b, k = self.params
            j = np.arange(k)
            shift = 0.5 if b > 0 else 0.0
            return (j + shift) * self.period / k
        bp, vals = (np.asarray(v, float) for v in self.params)
        return bp[:-1][vals[:-1] == vals.min()]

    def panel_edges(self) -> np.ndarray:
        """Edges of one period split at kinks (smooth panels)."""
        if self.family == "piecewise_linear":
            return np.asarray(self.params[0], dtype=float)
        if self.family == "cosine":
            return np.linspace(0.0, self.period, 4 * self.params[2] + 1)
        return np.array([0.0, self.period])

    def scaled(self, c: float) -> "PeriodicProfile":
        """The profile multiplied by a positive constant."""
        if self.family == "constant":
            return PeriodicProfile.constant(c * self.params[0], self.period)
        if self.family == "cosine":
            a, b, k = self.params
            return PeriodicProfile.cosine(c * a, c * b, k, self.period)
        bp, vals = self.params
        return PeriodicProfile.piecewise_linear(bp, [c * v for v in vals], self.period)

    def label(self) -> str:
        if self.family == "constant":
            return f"const({self.params[0]:g})"
        if self.family == "cosine":
            a, b, k = self.params
            return f"cos({a:g},{b:g},{k},L={self.period:g})"
        bp, vals = self.params
        pts = ";".join(f"{x:g}:{v:g}" for x, v in zip(bp, vals))
        return f"pwl({pts})"

    def to_dict(self) -> dict:
        d = {"family": self.family, "period": self.period}
        if self.family == "constant":
            d["value"] = self.params[0]
        elif self.family == "cosine":
            d.update(a=self.params[0], b=self.params[1], k=self.params[2])
        else:
            d.update(breakpoints=list(self.params[0]), values=list(self.params[1]))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PeriodicProfile":
        family = d.get("family", "constant")
        period = float(d.get("period", 1.0))
        if family == "constant":
            return cls.constant(d["value"], period)
        if family == "cosine":
            return cls.cosine(d["a"], d["b"], d.get("k", 1), period)
        if family == "sawtooth":
            return cls.sawtooth(d["low"], d["high"], period)
        if family == "piecewise_linear":
            return cls.piecewise_linear(d["breakpoints"], d["values"], period)
        raise InvalidProfileError(f"unknown profile family {family!r}")


def profile_average(profile: PeriodicProfile, exponent: float = 1.0) -> float:
    """Mean of ``profile**exponent`` over one period.

    Composite 5-point Gauss-Legendre on kink-aligned panels, halved until the
    relative change is below 1e-10.
    """
    if profile.is_constant:
        val = float(profile.min_value) ** exponent
    else:
        def integrand(y):
            return profile(y) ** exponent
        val = adaptive_integrate(integrand, profile.panel_edges(), rtol=1e-10) / profile.period
    if not math.isfinite(val):
        raise InvalidProfileError("profile average is not finite")
    return val


@dataclass(frozen=True)
class ForcingSpec:
    """Forcing of the thin-domain problem.

    ``kind`` is ``"x_dependent"`` (f^eps(x, y) = f(x)), ``"reaction"`` (the
    bounded nonlinearity f(u) of the semilinear problem) or ``"none"``.
    For reactions ``sup_bound`` and ``lipschitz`` bound |f| and |f'|.
    """

    kind: str = "none"
    func: Optional[Callable] = None
    expr: str = "0"
    sup_bound: float = 0.0
    lipschitz: float = 0.0

    def __post_init__(self):
        if self.kind not in ("x_dependent", "reaction", "none"):
            raise ValueError(f"unknown forcing kind {self.kind!r}")
        if self.kind != "none" and self.func is None:
            raise ValueError("forcing function missing")
        if self.kind == "reaction":
            for v in (self.sup_bound, self.lipschitz):
                if not (math.isfinite(v) and v > 0):
                    raise ValueError("reaction bounds must be finite and positive")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "none":
            return np.zeros_like(t)
        return np.broadcast_to(np.asarray(self.func(t), dtype=float), t.shape).copy()


@dataclass(frozen=True)
class ThinDomainSpec:
    """Parameters (eps, alpha, beta, gamma, g, h, p, forcing) of one problem."""

    epsilon: float
    alpha: float
    beta: float
    gamma: float
    g: PeriodicProfile
    h: PeriodicProfile
    p_exponent: float = 2.0
    forcing: ForcingSpec = field(default_factory=ForcingSpec)

    def __post_init__(self):
        for name in ("epsilon", "alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise GeometryError(f"{name} must be positive")
        if not self.beta < self.alpha:
            raise GeometryError("the strip oscillation needs 0 < beta < alpha")
        if not self.p_exponent > 1:
            raise GeometryError("p must exceed 1")
        if self.epsilon ** self.gamma * self.h.max_value > 0.9 * self.g.min_value:
            raise GeometryError(
                "strip leaves the domain: need eps^gamma h_1 <= 0.9 g_0 "
                f"(got {self.epsilon ** self.gamma * self.h.max_value:.4g} > "
                f"{0.9 * self.g.min_value:.4g})")

    @property
    def period_g(self) -> float:
        return self.epsilon ** self.alpha * self.g.period

    @property
    def period_h(self) -> float:
        return self.epsilon ** self.beta * self.h.period

    def top(self, x):
        return self.epsilon * self.g(np.asarray(x, float) / self.epsilon ** self.alpha)

    def thickness(self, x):
        """Vertical thickness of the strip O^eps at x."""
        return self.epsilon ** (1.0 + self.gamma) * self.h(np.asarray(x, float) / self.epsilon ** self.beta)

    def interface(self, x):
        return self.top(x) - self.thickness(x)

    def domain_area(self) -> float:
        return _profile_integral_01(self.g, self.epsilon ** self.alpha) * self.epsilon

    def strip_area(self) -> float:
        return _profile_integral_01(self.h, self.epsilon ** self.beta) * self.epsilon ** (1 + self.gamma)

    def with_epsilon(self, eps: float) -> "ThinDomainSpec":
        return ThinDomainSpec(eps, self.alpha, self.beta, self.gamma, self.g, self.h,
                              self.p_exponent, self.forcing)


def _profile_integral_01(profile: PeriodicProfile, scale: float) -> float:
    """Integral of profile(x / scale) over (0, 1)."""
    if profile.is_constant:
        return float(profile.min_value)
    period = scale * profile.period
    n_full = int(math.floor(1.0 / period * (1 + 1e-12)))
    full = n_full * period * profile_average(profile)
    rest = 1.0 - n_full * period
    if rest <= 1e-15:
        return full
    local = profile.panel_edges() * scale
    edges = merge_close(np.append(local[local < rest], rest), 1e-15)
    edges = np.append(0.0, edges[edges > 0]) if edges[0] > 0 else edges
    tail = adaptive_integrate(lambda t: profile(t / scale), edges, rtol=1e-12)
    return full + tail


# ---------------------------------------------------------------------------
# meshes


@dataclass(frozen=True)
class MeshLayout:
    """Structured description of a layered mesh.

    ``heights[i, j]`` is the y coordinate of layer line j on fibre i; every
    quad (i, j) is cut along "/" when ``diag[i, j]`` else along "\\".
    """

    xs: np.ndarray
    heights: np.ndarray
    ids: np.ndarray
    diag: np.ndarray
    n_base: int
    n_mid: int
    n_strip: int
    mid_levels: Optional[np.ndarray] = None

    @property
    def n_layers(self) -> int:
        return self.heights.shape[1] - 1

    def mid_fraction(self, k: int) -> float:
        """Position of mid layer line k as a fraction of the mid region height."""
        if self.mid_levels is None:
            return k / self.n_mid
        return float(self.mid_levels[k])


class TriMesh:
    """Conforming P1 triangulation with strip tags and optional periodic pairing."""

    def __init__(self, vertices, triangles, strip=None, periodic_pairs=None,
                 layout: Optional[MeshLayout] = None, spec: Optional[ThinDomainSpec] = None):
        self.vertices = np.ascontiguousarray(vertices, dtype=float)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        n_tri = self.triangles.shape[0]
        self.strip = (np.zeros(n_tri, dtype=bool) if strip is None
                      else np.asarray(strip, dtype=bool))
        self.strip_tagged = strip is not None
        self.periodic_pairs = (None if periodic_pairs is None
                               else np.asarray(periodic_pairs, dtype=np.int64))
        self.layout = layout
        self.spec = spec
        for arr in (self.vertices, self.triangles, self.strip):
            arr.setflags(write=False)
        if np.any(self.signed_areas <= 0):
            raise GeometryError("mesh has non-positive triangle areas")

    def __repr__(self):
        return (f"TriMesh(vertices={self.n_vertices}, triangles={self.n_triangles}, "
                f"strip={int(self.strip.sum())}, periodic={self.periodic_pairs is not None})")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def strip_area(self) -> float:
        return float(self.areas[self.strip].sum())

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Gradients of the three local hat functions, shape (M, 3, 2)."""
        p = self.vertices[self.triangles]
        two_a = 2.0 * self.areas
        g = np.empty((self.n_triangles, 3, 2))
        for k in range(3):
            a = p[:, (k + 1) % 3]
            b = p[:, (k + 2) % 3]
            g[:, k, 0] = (a[:, 1] - b[:, 1]) / two_a
            g[:, k, 1] = (b[:, 0] - a[:, 0]) / two_a
        return g

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        """Vertex weights sum_{T ni i} |T| / 3 (exact integrals of hat functions)."""
        return np.bincount(self.triangles.ravel(), np.repeat(self.areas / 3.0, 3),
                           minlength=self.n_vertices)

    @cached_property
    def mesh_size(self) -> float:
        p = self.vertices[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return float(np.sqrt((e ** 2).sum(-1)).max())

    @cached_property
    def dof_map(self) -> np.ndarray:
        """Vertex -> degree of freedom; periodic partners share one DOF."""
        idx = np.arange(self.n_vertices)
        if self.periodic_pairs is not None:
            idx[self.periodic_pairs[:, 1]] = self.periodic_pairs[:, 0]
        _, dofs = np.unique(idx, return_inverse=True)
        return dofs

    @property
    def n_dofs(self) -> int:
        return int(self.dof_map.max()) + 1

    @cached_property
    def strip_vertices(self) -> np.ndarray:
        """Boolean mask of vertices touching a strip triangle."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.triangles[self.strip].ravel()] = True
        return mask

    def with_strip(self, strip) -> "TriMesh":
        """Copy of the mesh carrying other strip tags (used as a negative control)."""
        return TriMesh(self.vertices, self.triangles, strip, self.periodic_pairs,
                       self.layout, self.spec)

    def top_polyline(self):
        """(x, y) of the discrete top boundary (layered meshes only)."""
        lay = self._need_layout()
        return lay.xs, lay.heights[:, -1]

    def interface_polyline(self):
        lay = self._need_layout()
        return lay.xs, lay.heights[:, lay.n_base + lay.n_mid]

    def layer_curve(self, j: int, x):
        """Exact curve traced by layer line j of a thin-domain mesh.

        The mesh places its vertices on these curves; between vertices the
        mesh uses chords.
        """
        lay = self._need_layout()
        if self.spec is None:
            raise GeometryError("layer curves need the domain spec")
        x = np.asarray(x, dtype=float)
        nb, nm = lay.n_base, lay.n_mid
        if j <= nb:
            return np.full_like(x, lay.heights[0, j])
        y_base = lay.heights[0, nb]
        inter = self.spec.interface(x)
        if j <= nb + nm:
            return y_base + (inter - y_base) * lay.mid_fraction(j - nb)
        top = self.spec.top(x)
        return inter + (top - inter) * ((j - nb - nm) / lay.n_strip)

    def quad_strip_weights(self) -> np.ndarray:
        """Fraction (0, 1/2, 1) of each layered quad tagged as strip, shape (ncol, nlay)."""
        lay = self._need_layout()
        return self.strip.reshape(lay.xs.size - 1, lay.n_layers, 2).sum(axis=2) / 2.0

    def _need_layout(self) -> MeshLayout:
        if self.layout is None:
            raise GeometryError("operation needs a layered mesh")
        return self.layout

    def locate(self, x, y, chunk: int = 200_000):
        """Containing triangle and barycentric coordinates of points.

        Points slightly outside the mesh are assigned to the nearest boundary
        triangle of their column (linear extrapolation).  Returns
        ``(elements, bary, outside)``.
        """
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if self.layout is None:
            return self._locate_generic(x, y)
        elem = np.empty(x.size, dtype=np.int64)
        bary = np.empty((x.size, 3))
        outside = np.empty(x.size, dtype=bool)
        for s in range(0, x.size, chunk):
            sl = slice(s, s + chunk)
            elem[sl], bary[sl], outside[sl] = self._locate_layered(x[sl], y[sl])
        return elem, bary, outside

    def _locate_layered(self, x, y):
        lay = self.layout
        xs, hts = lay.xs, lay.heights
        ncol = xs.size - 1
        nlay = lay.n_layers
        col = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, ncol - 1)
        t = (x - xs[col]) / (xs[col + 1] - xs[col])
        lines = (1.0 - t)[:, None] * hts[col] + t[:, None] * hts[col + 1]
        lay_idx = (y[:, None] >= lines).sum(axis=1) - 1
        outside = (lay_idx < 0) | (lay_idx >= nlay) | (x < xs[0]) | (x > xs[-1])
        lay_idx = np.clip(lay_idx, 0, nlay - 1)
        base = 2 * (col * nlay + lay_idx)
        cand = np.stack([base, base + 1], axis=1)
        best_e = np.empty(x.size, dtype=np.int64)
        best_b = np.empty((x.size, 3))
        best_min = np.full(x.size, -np.inf)
        for c in range(2):
            e = cand[:, c]
            b = self._barycentric(e, x, y)
            m = b.min(axis=1)
            better = m > best_min
            best_e[better] = e[better]
            best_b[better] = b[better]
            best_min[better] = m[better]
        return best_e, best_b, outside

    def _barycentric(self, elems, x, y):
        p = self.vertices[self.triangles[elems]]
        g = self.basis_gradients[elems]
        dx = x - p[:, 0, 0]
        dy = y - p[:, 0, 1]
        b1 = g[:, 1, 0] * dx + g[:, 1, 1] * dy
        b2 = g[:, 2, 0] * dx + g[:, 2, 1] * dy
        return np.stack([1.0 - b1 - b2, b1, b2], axis=1)

    def _locate_generic(self, x, y, k: int = 16):
        """Search the triangles with the nearest centroids (meshes without a layout).

        Points not inside any of the k candidates are retried with 4k, up to
        all triangles; the best candidate (largest minimum barycentric) wins.
        """
        cent = self.vertices[self.triangles].mean(axis=1)
        tree = cKDTree(cent)
        pts = np.column_stack([x, y])
        best_e = np.zeros(x.size, dtype=np.int64)
        best_min = np.full(x.size, -np.inf)
        todo = np.arange(x.size)
        while todo.size:
            kk = min(k, self.n_triangles)
            _, cand = tree.query(pts[todo], k=kk)
            cand = cand.reshape(todo.size, kk)
            for c in range(kk):
                e = cand[:, c]
                m = self._barycentric(e, x[todo], y[todo]).min(axis=1)
                better = m > best_min[todo]
                best_e[todo[better]] = e[better]
                best_min[todo[better]] = m[better]
            if kk == self.n_triangles:
                break
            todo = todo[best_min[todo] < -1e-12]
            k *= 4
        outside = best_min < -1e-12
        return best_e, self._barycentric(best_e, x, y), outside


def _layered_mesh(xs, heights, n_base, n_mid, n_strip, strip_from=None,
                  periodic=False, spec=None, mid_levels=None) -> TriMesh:
    ncol = xs.size - 1
    nlay = heights.shape[1] - 1
    ids = np.arange((ncol + 1) * (nlay + 1)).reshape(ncol + 1, nlay + 1)
    vertices = np.column_stack([np.repeat(xs, nlay + 1), heights.ravel()])
    # cut each quad along its shorter diagonal (avoids obtuse slivers where the
    # layer lines are steep); ties go "/" left of the middle and "\" right of it
    i, j = np.meshgrid(np.arange(ncol), np.arange(nlay), indexing="ij")
    dxq = (xs[1:] - xs[:-1])[:, None]
    slash_len = dxq ** 2 + (heights[1:, 1:] - heights[:-1, :-1]) ** 2
    back_len = dxq ** 2 + (heights[:-1, 1:] - heights[1:, :-1]) ** 2
    tie = np.abs(slash_len - back_len) <= 1e-12 * (slash_len + back_len)
    diag = np.where(tie, (i < ncol / 2.0), slash_len < back_len)
    a = ids[i, j]
    b = ids[i + 1, j]
    c = ids[i + 1, j + 1]
    d = ids[i, j + 1]
    slash = diag[..., None]
    t0 = np.where(slash, np.stack([a, b, c], -1), np.stack([a, b, d], -1))
    t1 = np.where(slash, np.stack([a, c, d], -1), np.stack([b, c, d], -1))
    tris = np.stack([t0, t1], axis=2).reshape(-1, 3)
    strip = None
    if strip_from is not None:
        strip = np.repeat((j >= strip_from).ravel(), 2)
    pairs = np.column_stack([ids[0], ids[-1]]) if periodic else None
    layout = MeshLayout(xs, heights, ids, diag, n_base, n_mid, n_strip, mid_levels)
    return TriMesh(vertices, tris, strip, pairs, layout, spec)


def _grid_for(profile: PeriodicProfile, scale: float, dx: float, upto: float = 1.0,
              valley_levels: int = 0):
    """x-nodes subdividing every period (length scale*L) uniformly, plus kinks.

    ``valley_levels`` > 0 adds nodes at distances (L/m) 2^-k, k = 1..levels,
    on both sides of every minimizer of the profile.
    """
    period = scale * profile.period
    m = max(1, int(math.ceil(period / dx - 1e-9)))
    local = [np.arange(m) * (profile.period / m), profile.kinks]
    if valley_levels > 0:
        offs = (profile.period / m) * 0.5 ** np.arange(1, valley_levels + 1)
        for y0 in profile.minimizers:
            local += [y0, np.mod(y0 + offs, profile.period), np.mod(y0 - offs, profile.period)]
    local = np.unique(np.concatenate([np.atleast_1d(v) for v in local]))
    n_cells = int(math.ceil(upto / period - 1e-12))
    k = np.arange(n_cells + 1)[:, None]
    pts = (scale * (k * profile.period + local[None, :])).ravel()
    return pts[(pts > 0) & (pts < upto)]


def thin_x_nodes(spec: ThinDomainSpec, dx: float, valley_levels: int = 0) -> np.ndarray:
    """x-grid aligned to the g-periods (always kept) and h-periods (if not crowding)."""
    pts = [np.array([0.0, 1.0])]
    if not spec.g.is_constant:
        pts.append(_grid_for(spec.g, spec.epsilon ** spec.alpha, dx, valley_levels=valley_levels))
    xs = merge_close(np.concatenate(pts), 1e-13)
    if not spec.h.is_constant:
        cand = _grid_for(spec.h, spec.epsilon ** spec.beta, dx)
        pos = np.searchsorted(xs, cand)
        left = xs[np.clip(pos - 1, 0, xs.size - 1)]
        right = xs[np.clip(pos, 0, xs.size - 1)]
        far = np.minimum(np.abs(cand - left), np.abs(right - cand)) > 0.3 * dx
        xs = merge_close(np.concatenate([xs, cand[far]]), 1e-13)
    gaps = np.diff(xs)
    pieces = np.maximum(1, np.ceil(gaps / dx - 1e-9).astype(int))
    out = [xs[:-1, None] + gaps[:, None] * (np.arange(pieces.max())[None, :] / pieces[:, None])]
    mask = np.arange(pieces.max())[None, :] < pieces[:, None]
    return np.append(out[0][mask], 1.0)


def graded_levels(length: float, h_min: float, h_max: float, ratio: float = 1.5) -> np.ndarray:
    """Levels 0 = s_0 < ... < s_n = 1 whose physical spacing (times ``length``)
    starts at ``h_min`` near 0 and grows geometrically up to ``h_max``."""
    steps = []
    total = 0.0
    h = h_min
    while total < length:
        steps.append(h)
        total += h
        h = min(h * ratio, h_max)
    # shrink the steps uniformly so they sum to length
    levels = np.concatenate([[0.0], np.cumsum(steps)]) / total
    levels[-1] = 1.0
    return levels


def build_thin_mesh(spec: ThinDomainSpec, target_h: float, dx: Optional[float] = None,
                    min_per_period: int = 8, neck_h: Optional[float] = None,
                    ratio: float = 1.5, valley_levels: int = 0) -> TriMesh:
    """Layered triangulation of R^eps with the strip O^eps resolved.

    ``target_h`` bounds the layer thickness (and the x-spacing unless ``dx``
    is given).  The x-spacing is reduced automatically to give at least
    ``min_per_period`` segments per oscillation period; an explicit ``dx``
    that is too coarse is refused.

    With ``neck_h`` the flat base is raised to just below the lowest point of
    the strip interface and the layers are graded geometrically (factor
    ``ratio``) from thickness ``neck_h`` on both sides of it.  This resolves
    the junction between the base and the oscillating fingers, which matters
    when the oscillation period is much shorter than eps.  ``valley_levels``
    grades the x-nodes towards the minima of g (see ``_grid_for``), so the
    chords do not close the gaps between neighbouring fingers.
    """
    if not target_h > 0:
        raise GeometryError("target_h must be positive")
    eps = spec.epsilon
    if target_h >= eps * spec.g.min_value:
        raise ResolutionError(
            f"target_h={target_h:g} does not resolve the domain height "
            f"(need < {eps * spec.g.min_value:g})", required=eps * spec.g.min_value)
    limits = []
    if not spec.g.is_constant:
        limits.append(spec.period_g / min_per_period)
    if not spec.h.is_constant:
        limits.append(spec.period_h / min_per_period)
    if dx is None:
        dx = min([target_h] + limits)
    elif limits and dx > min(limits) * (1 + 1e-12):
        raise ResolutionError(
            f"dx={dx:g} gives fewer than {min_per_period} segments per period; "
            f"use dx <= {min(limits):g}", required=min(limits))
    xs = thin_x_nodes(spec, dx, valley_levels)
    top = spec.top(xs)
    inter = top - spec.thickness(xs)
    mid_levels = None
    if neck_h is None:
        y_base = 0.5 * eps * (spec.g.min_value - eps ** spec.gamma * spec.h.max_value)
        n_b = max(1, math.ceil(y_base / target_h - 1e-9))
        base = np.linspace(0.0, y_base, n_b + 1)
        n_m = max(1, math.ceil(float(np.max(inter - y_base)) / target_h - 1e-9))
        mid = np.linspace(0, 1, n_m + 1)
    else:
        if not 0 < neck_h < target_h:
            raise GeometryError("neck_h must lie in (0, target_h)")
        low = eps * (spec.g.min_value - eps ** spec.gamma * spec.h.max_value)
        y_base = low - neck_h
        if y_base <= target_h:
            raise ResolutionError("neck grading needs a thicker base", required=low / 2)
        base = y_base * (1.0 - graded_levels(y_base, neck_h, target_h, ratio)[::-1])
        span = float(np.max(inter - y_base))
        mid = graded_levels(span, neck_h, target_h, ratio)
        mid_levels = mid
        n_b, n_m = base.size - 1, mid.size - 1
    n_s = max(1, math.ceil(float(np.max(top - inter)) / target_h - 1e-9))
    heights = np.concatenate([
        base[None, :].repeat(xs.size, 0),
        y_base + (inter - y_base)[:, None] * mid[None, 1:],
        inter[:, None] + (top - inter)[:, None] * np.linspace(0, 1, n_s + 1)[None, 1:],
    ], axis=1)
    heights[:, -1] = top
    return _layered_mesh(xs, heights, n_b, n_m, n_s, strip_from=n_b + n_m, spec=spec,
                         mid_levels=mid_levels)


def build_cell_mesh(g: PeriodicProfile, target_h: float) -> TriMesh:
    """Layered mesh of Y* = {0 < y1 < L_g, 0 < y2 < g(y1)} with periodic pairs.

    The column count is even and ties between the quad diagonals are broken
    mirror-wise about L_g / 2, so
    the mesh is reflection symmetric whenever g is.
    """
    if not target_h > 0:
        raise GeometryError("target_h must be positive")
    if target_h >= g.min_value:
        raise ResolutionError(
            f"target_h={target_h:g} must be below g_0={g.min_value:g}", required=g.min_value)
    L = g.period
    n = int(math.ceil(L / target_h - 1e-9))
    n += n % 2
    xs = merge_close(np.concatenate([np.linspace(0.0, L, n + 1), g.kinks]), 1e-13)
    top = g(xs)
    top[-1] = top[0]
    if g.is_constant:
        n_t = int(math.ceil(g.max_value / target_h - 1e-9))
        heights = top[:, None] * np.linspace(0.0, 1.0, n_t + 1)[None, :]
        return _layered_mesh(xs, heights, n_t, 0, 0, periodic=True)
    y_base = 0.5 * g.min_value
    n_b = max(1, math.ceil(y_base / target_h - 1e-9))
    n_t = max(1, math.ceil((g.max_value - y_base) / target_h - 1e-9))
    heights = np.concatenate([
        np.linspace(0.0, y_base, n_b + 1)[None, :].repeat(xs.size, 0),
        y_base + (top - y_base)[:, None] * np.linspace(0, 1, n_t + 1)[None, 1:],
    ], axis=1)
    heights[:, -1] = top
    return _layered_mesh(xs, heights, n_b, n_t, 0, periodic=True)


def export_mesh_tables(mesh: TriMesh, prefix) -> tuple:
    """Write ``<prefix>_vertices.txt`` and ``<prefix>_triangles.txt``.

    One record per line; the triangle table carries the strip tag as a
    fourth column.
    """
    vpath = f"{prefix}_vertices.txt"
    tpath = f"{prefix}_triangles.txt"
    np.savetxt(vpath, np.column_stack([np.arange(mesh.n_vertices), mesh.vertices]),
               fmt=["%d", "%.17g", "%.17g"], header="id x y")
    np.savetxt(tpath, np.column_stack([mesh.triangles, mesh.strip.astype(int)]),
               fmt="%d", header="v0 v1 v2 strip")
    return vpath, tpath
