"""Concentrated strip forcing (1/eps^gamma) int_{O^eps} f phi and the semilinear driver."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import GeometryError
from .fem import (FemField, LinearSolver, LoadFunctional, SolverOptions, linear_operator,
                  load_vector, solve_duality, w1p_norm)
from .geometry import ThinDomainSpec, TriMesh
from .quadrature import gauss_legendre
from .unfolding import CellSplit, as_evaluator, physical_strip_integral, unfolded_strip_integral

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConcentratedLoad:
    spec: ThinDomainSpec
    load: LoadFunctional

    @property
    def values(self) -> np.ndarray:
        return self.load.values

    @property
    def total(self) -> float:
        return self.load.total


def _require_strip(mesh: TriMesh):
    if not getattr(mesh, "strip_tagged", False):
        raise GeometryError("mesh carries no strip tags")


def assemble_concentrated_load(mesh: TriMesh, spec: ThinDomainSpec, f: Callable) -> ConcentratedLoad:
    """b_i = (1/eps^gamma) sum over strip triangles of int f(x) phi_i (edge-midpoint rule)."""
    _require_strip(mesh)

    def fx(x, y):
        return np.asarray(f(x), dtype=float) * np.ones_like(x)

    load = load_vector(mesh, fx, mask=mesh.strip, scale=spec.epsilon ** -spec.gamma)
    return ConcentratedLoad(spec, load)


def reaction_load(mesh: TriMesh, spec: ThinDomainSpec, f: Callable, u_values) -> LoadFunctional:
    """(1/eps^gamma) int_{O^eps} f(u) phi_i with u the P1 field of ``u_values``.

    Edge-midpoint rule with u at the midpoints, so the load is exact whenever
    f(u) is affine on the strip triangles.
    """
    _require_strip(mesh)
    elems = np.flatnonzero(mesh.strip)
    t = mesh.triangles[elems]
    a = mesh.areas[elems]
    u = np.asarray(u_values)[t]
    fm = [np.asarray(f(0.5 * (u[:, (k + 1) % 3] + u[:, (k + 2) % 3])), float) * np.ones(len(elems))
          for k in range(3)]
    out = np.zeros(mesh.n_vertices)
    for k in range(3):
        contrib = a / 6.0 * (fm[(k + 1) % 3] + fm[(k + 2) % 3])
        out += np.bincount(t[:, k], contrib, minlength=out.size)
    return LoadFunctional(out * spec.epsilon ** -spec.gamma)


# ---------------------------------------------------------------------------
# identities


def tagged_strip_integral(mesh: TriMesh, spec: ThinDomainSpec, phi, n_x: int = 16,
                          n_y: int = 16) -> float:
    """(1/eps^(gamma+1)) int phi over the strip-tagged quads of a layered mesh.

    Each quad is integrated between the exact curves its layer lines trace
    (not their chords), so correct tags reproduce int_{O^eps} exactly.
    """
    _require_strip(mesh)
    ev = as_evaluator(phi)
    lay = mesh.layout
    wq = mesh.quad_strip_weights()
    cols, layers = np.nonzero(wq)
    tx, wx = gauss_legendre(n_x)
    ty, wy = gauss_legendre(n_y)
    total = 0.0
    for j in np.unique(layers):
        sel = cols[layers == j]
        x0 = lay.xs[sel]
        dx = lay.xs[sel + 1] - x0
        X = x0[:, None] + dx[:, None] * tx[None, :]
        lo = mesh.layer_curve(j, X)
        hi = mesh.layer_curve(j + 1, X)
        Y = lo[:, :, None] + (hi - lo)[:, :, None] * ty[None, None, :]
        vals = ev(np.broadcast_to(X[:, :, None], Y.shape), Y)
        w = (dx * wq[sel, j])[:, None, None] * (wx[None, :, None] * (hi - lo)[:, :, None]) * wy[None, None, :]
        total += float(np.sum(w * vals))
    return total / spec.epsilon ** (spec.gamma + 1.0)


@dataclass
class IdentityCheck:
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def relative(self) -> float:
        return self.residual / max(abs(self.lhs), abs(self.rhs), 1e-300)


def concentration_identity(mesh: TriMesh, spec: ThinDomainSpec, phi, n1: int = 1024,
                           n2: int = 32) -> IdentityCheck:
    """Both sides of  (1/eps^(c+1)) int_O phi = (1/(L_g eps^c)) int T_eps phi + (1/eps^(c+1)) int_{O_1} phi.

    Left: the strip-tagged region of ``mesh``.  Right: unfolded samples over
    the exact strip cell plus the remainder over Lambda_eps.  P1 fields have
    kinks inside each cell, so the default n1 is generous.
    """
    ev = as_evaluator(phi)
    lhs = tagged_strip_integral(mesh, spec, ev, n2, n2)
    split = CellSplit.of(spec.epsilon ** spec.alpha * spec.g.period)
    rhs = unfolded_strip_integral(ev, spec, "exact", n1=n1, n2=n2)
    rhs += physical_strip_integral(ev, spec, (split.lam_start, 1.0), n_y=n2)
    return IdentityCheck(lhs, rhs)


def verify_concentration_identity(mesh: TriMesh, spec: ThinDomainSpec, phi, n1: int = 1024,
                                  n2: int = 32) -> float:
    """Absolute residual of the concentrated-integral unfolding identity."""
    return concentration_identity(mesh, spec, phi, n1, n2).residual


def concentrated_scalar(spec: ThinDomainSpec, f: Callable, phi: Callable, n_x: int = 16) -> float:
    """(1/eps^(gamma+1)) int_{O^eps} f(x) phi(x) by quadrature on the exact strip.

    Independent of g: the strip thickness is eps^(1+gamma) h(x/eps^beta).
    """
    def integrand(x, y):
        return f(x) * phi(x)

    return physical_strip_integral(integrand, spec, n_x=n_x, n_y=2)


# ---------------------------------------------------------------------------
# semilinear fixed point


@dataclass
class FixedPointReport:
    iterations: int = 0
    differences: list = field(default_factory=list)
    relaxation: list = field(default_factory=list)
    converged: bool = False
    newton_iterations: int = 0


def solve_semilinear(mesh: TriMesh, spec: ThinDomainSpec, opts: Optional[SolverOptions] = None,
                     tol: float = 1e-10, max_outer: int = 50, omega: float = 1.0, u0=None):
    """Fixed point u <- (1-w) u + w J^{-1} F_eps(u) for the concentrated reaction.

    Differences are measured in the rescaled norm eps^(-1/p) ||.||_{W^{1,p}(R^eps)}.
    The relaxation w is halved whenever the difference grows.
    Returns (FemField, FixedPointReport).
    """
    p = spec.p_exponent
    if p < 2:
        raise ValueError("the semilinear problem needs p >= 2")
    if spec.forcing.kind != "reaction":
        raise ValueError("spec forcing must be a reaction")
    f = spec.forcing
    opts = opts or SolverOptions()
    u = np.zeros(mesh.n_vertices) if u0 is None else np.array(_values(u0), float)
    report = FixedPointReport()
    linear = LinearSolver(linear_operator(mesh), opts.linear_solver) if p == 2 else None
    scale = spec.epsilon ** (-1.0 / p)
    prev = np.inf
    for k in range(1, max_outer + 1):
        load = reaction_load(mesh, spec, f, u)
        if linear is not None:
            new = linear.solve(load.dofs(mesh))[mesh.dof_map]
        else:
            sol = solve_duality(mesh, p, load, opts, u0=u if np.any(u) else None)
            report.newton_iterations += sol.info.iterations
            new = sol.values
        cand = (1.0 - omega) * u + omega * new
        d = scale * w1p_norm(mesh, cand - u, p)
        report.differences.append(float(d))
        report.relaxation.append(omega)
        u = cand
        report.iterations = k
        if d <= tol:
            report.converged = True
            break
        if d > prev:
            omega *= 0.5
        prev = d
    if not report.converged:
        log.warning("semilinear fixed point stopped after %d iterations (diff %.3e)",
                    report.iterations, report.differences[-1])
    return FemField(mesh, u), report


def _values(u):
    return u.values if isinstance(u, FemField) else u


def strip_lp_integral(mesh: TriMesh, spec: ThinDomainSpec, u, q: float) -> float:
    """(1/eps^gamma) int_{O^eps} |u|^q over the strip triangles (edge-midpoint rule)."""
    _require_strip(mesh)
    uv = _values(u)
    t = mesh.triangles[mesh.strip]
    a = mesh.areas[mesh.strip]
    vals = uv[t]
    mids = [0.5 * (vals[:, k] + vals[:, (k + 1) % 3]) for k in range(3)]
    s = sum(np.abs(m) ** q for m in mids) / 3.0
    return float(np.dot(a, s)) / spec.epsilon ** spec.gamma


def trace_ratio(mesh: TriMesh, spec: ThinDomainSpec, u, q_exp: float) -> float:
    """[(1/eps^gamma) int_O |u|^q] / ||u||^q_{W^{1,p}(R^eps)}."""
    p = spec.p_exponent
    if q_exp > p:
        raise ValueError("need q <= p")
    uv = _values(u)
    denom = w1p_norm(mesh, uv, p) ** q_exp
    if denom == 0:
        raise ValueError("trace ratio undefined for the zero field")
    return strip_lp_integral(mesh, spec, uv, q_exp) / denom
