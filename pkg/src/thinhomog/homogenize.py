"""Homogenized coefficient q for the three oscillation regimes.

    alpha < 1 : q = 1 / (<g> <g^(1-p')>^(p-1))
    alpha = 1 : q = (1/|Y*|) int_Y* |grad v|^(p-2) d_{y1} v,  v the periodic cell corrector
    alpha > 1 : q = g_0 / <g>
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .errors import GeometryError
from .fem import FemField, SolverOptions, SolveInfo, element_gradients, newton_minimize
from .geometry import PeriodicProfile, TriMesh, build_cell_mesh, profile_average

REGIMES = ("sub", "resonant", "super")
P_LT2_DELTA = 1e-6


def conjugate_exponent(p: float) -> float:
    """p' = p/(p-1), formed exactly from the decimal value of p."""
    fp = Fraction(str(p)) if not isinstance(p, Fraction) else p
    return float(fp / (fp - 1))


def regime_of(alpha: float) -> str:
    if math.isclose(alpha, 1.0, rel_tol=0, abs_tol=1e-12):
        return "resonant"
    return "sub" if alpha < 1 else "super"


def q_subcritical(g: PeriodicProfile, p: float) -> float:
    """Harmonic-type mean of the weakly oscillating regime."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    fp = Fraction(str(p))
    pp = fp / (fp - 1)
    # g^-(p'-1) with p'-1 = 1/(p-1)
    inner = profile_average(g, -float(pp - 1))
    return 1.0 / (profile_average(g) * inner ** float(fp - 1))


def q_supercritical(g: PeriodicProfile) -> float:
    """g_0 / <g>; the strongly oscillating regime does not see p."""
    return g.min_value / profile_average(g)


@dataclass
class CellSolution:
    """Periodic cell corrector v = y1 + w and the coefficient it defines."""

    mesh: TriMesh
    v: FemField
    w_dofs: np.ndarray
    p: float
    q_value: float
    residual: float
    info: Optional[SolveInfo] = None

    def periodic_jump(self) -> float:
        """max |(v - y1)(left) - (v - y1)(right)| over paired vertices."""
        w = self.v.values - self.mesh.vertices[:, 0]
        pairs = self.mesh.periodic_pairs
        return float(np.max(np.abs(w[pairs[:, 0]] - w[pairs[:, 1]])))

    def mean_offset(self) -> float:
        """Area mean of v - y1 (zero by construction)."""
        w = self.v.values - self.mesh.vertices[:, 0]
        return float(np.dot(self.mesh.lumped_mass, w) / self.mesh.area)


def _cell_q(mesh, p, v_values):
    gv = element_gradients(mesh, v_values)
    s = np.einsum("md,md->m", gv, gv)
    weight = s ** (0.5 * (p - 2.0)) if p != 2 else np.ones_like(s)
    return float(np.dot(mesh.areas, weight * gv[:, 0]) / mesh.area)


def solve_cell_problem(cell_mesh: TriMesh, p: float,
                       opts: Optional[SolverOptions] = None) -> CellSolution:
    """Solve int_Y* |grad v|^(p-2) grad v . grad phi = 0 with v - y1 periodic, zero mean.

    Newton on the convex energy (1/p) int |e1 + grad w|^p over periodic P1
    fields w; one DOF is pinned in the linear solves and the mean of w is
    projected out after every step.
    """
    if cell_mesh.periodic_pairs is None:
        raise GeometryError("cell mesh carries no periodic pairs")
    opts = opts or SolverOptions(tol=1e-11)
    mesh = cell_mesh
    dim = mesh.basis_gradients.shape[2]
    offset = np.zeros((mesh.n_triangles, dim))
    offset[:, 0] = 1.0
    weights = np.bincount(mesh.dof_map, mesh.lumped_mass, minlength=mesh.n_dofs)
    total = weights.sum()

    def project(w):
        return w - np.dot(weights, w) / total

    # reference scale: the flux of the affine field y1 itself
    ref = float(np.sqrt(np.sum(np.bincount(mesh.dof_map, mesh.lumped_mass) ** 2)))
    w = np.zeros(mesh.n_dofs)
    if p < 2:
        # the energy is not twice differentiable where grad v = 0: continuation in
        # the regularization, ending at delta = max(opts.delta, P_LT2_DELTA)
        final = max(opts.delta, P_LT2_DELTA)
        for d in (1e-1, 1e-2, 1e-3, 1e-4, 1e-5):
            if d > final:
                step = SolverOptions(**{**opts.__dict__, "delta": d, "tol": 1e-8})
                w, _ = newton_minimize(mesh, p, None, step, w0=w, mass=False, offset=offset,
                                       pin=0, project=project, ref=ref)
        opts = SolverOptions(**{**opts.__dict__, "delta": final})
    w, info = newton_minimize(mesh, p, None, opts, w0=w, mass=False,
                              offset=offset, pin=0, project=project, ref=ref)
    w = project(w)
    v_vals = mesh.vertices[:, 0] + w[mesh.dof_map]
    v = FemField(mesh, v_vals, info)
    return CellSolution(mesh, v, w, p, _cell_q(mesh, p, v_vals), info.residual, info)


@dataclass
class ResonantCoefficient:
    value: float
    coarse: float
    fine: float
    h: float

    @property
    def level_difference(self) -> float:
        return abs(self.fine - self.coarse)


def q_resonant_detail(g: PeriodicProfile, p: float, target_h: float = 1.0 / 32,
                      opts: Optional[SolverOptions] = None) -> ResonantCoefficient:
    """Cell coefficient on meshes h and h/2 with Richardson extrapolation (order 2)."""
    if g.is_constant:
        return ResonantCoefficient(1.0, 1.0, 1.0, target_h)
    qc = solve_cell_problem(build_cell_mesh(g, target_h), p, opts).q_value
    qf = solve_cell_problem(build_cell_mesh(g, target_h / 2), p, opts).q_value
    return ResonantCoefficient(qf + (qf - qc) / 3.0, qc, qf, target_h)


def q_resonant(g: PeriodicProfile, p: float, target_h: float = 1.0 / 32,
               opts: Optional[SolverOptions] = None) -> float:
    return q_resonant_detail(g, p, target_h, opts).value


def q_coefficient(g: PeriodicProfile, p: float, regime: str, cell_h: float = 1.0 / 32) -> float:
    if regime == "sub":
        return q_subcritical(g, p)
    if regime == "super":
        return q_supercritical(g)
    if regime == "resonant":
        return q_resonant(g, p, cell_h)
    raise ValueError(f"unknown regime {regime!r}")


def source_ratio(g: PeriodicProfile, h: PeriodicProfile) -> float:
    """<h> / <g>, the weight of the concentrated source in the limit."""
    return profile_average(h) / profile_average(g)


def limit_source(f: Callable, g: PeriodicProfile, h: PeriodicProfile) -> Callable:
    """f_bar(x) = f(x) <h> / <g> for forcing that depends on x only."""
    c = source_ratio(g, h)

    def fbar(x):
        return c * np.asarray(f(np.asarray(x, float)), dtype=float)

    fbar.ratio = c
    return fbar


@dataclass(frozen=True)
class HomogenizedModel:
    """Coefficients of the 1D limit problem.

    ``source`` is f_bar for the linear-forcing problem; for the semilinear
    problem ``c_f`` multiplies the reaction.
    """

    q: float
    regime: str
    p_exponent: float
    source: Optional[Callable] = None
    c_f: Optional[float] = None

    def __post_init__(self):
        if not self.q > 0:
            raise ValueError("q must be positive")
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.c_f is not None and not self.c_f > 0:
            raise ValueError("c_f must be positive")

    @classmethod
    def linear(cls, g, h, p, alpha, f: Callable, cell_h: float = 1.0 / 32):
        regime = regime_of(alpha)
        return cls(q_coefficient(g, p, regime, cell_h), regime, p, source=limit_source(f, g, h))

    @classmethod
    def semilinear(cls, g, h, p, alpha, cell_h: float = 1.0 / 32):
        regime = regime_of(alpha)
        return cls(q_coefficient(g, p, regime, cell_h), regime, p, c_f=source_ratio(g, h))
