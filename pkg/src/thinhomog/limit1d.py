"""One-dimensional homogenized problems with natural Neumann conditions on (0, 1).

    -q (|u'|^(p-2) u')' + |u|^(p-2) u = f_bar          (linear forcing)
    -q (|u'|^(p-2) u')' + |u|^(p-2) u = c_f f(u)       (semilinear)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NonConvergenceError
from .fem import (FemField, IntervalMesh, LinearSolver, LoadFunctional, SolverOptions,
                  assemble_jacobian, assemble_residual, energy, load_vector, lp_norm,
                  w1p_seminorm)
from .homogenize import HomogenizedModel


class _ScaledStiffness(IntervalMesh):
    """Interval grid whose gradient term carries the factor q.

    The factor enters through the basis gradients: with grad -> q^(1/p) grad,
    int |grad u|^p picks up q exactly.  Mass and point evaluation are unchanged.
    """

    def __init__(self, nodes, q: float, p: float):
        super().__init__(nodes)
        self._scale = q ** (1.0 / p)

    @property
    def basis_gradients(self):
        return self._scale * IntervalMesh.basis_gradients.func(self)


@dataclass
class LimitSolution:
    grid: IntervalMesh
    values: np.ndarray
    model: HomogenizedModel
    residual: float
    iterations: int = 0
    history: list = field(default_factory=list)
    converged: bool = True

    @property
    def x(self):
        return self.grid.nodes

    def __call__(self, x):
        return np.interp(np.asarray(x, float), self.grid.nodes, self.values)

    def derivative(self, x):
        """Piecewise-constant derivative (right-continuous, last cell at x = 1)."""
        nodes = self.grid.nodes
        slopes = np.diff(self.values) / np.diff(nodes)
        idx = np.clip(np.searchsorted(nodes, np.asarray(x, float), side="right") - 1,
                      0, slopes.size - 1)
        return slopes[idx]

    def field(self) -> FemField:
        return FemField(self.grid, self.values)

    def lp_norm(self, p: float) -> float:
        return lp_norm(self.grid, self.values, p)

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([self.grid.nodes, self.values]), delimiter=",",
                   header="x,u", comments="", fmt="%.17g")


def _check_model(model: HomogenizedModel, n: int):
    if n < 2:
        raise ValueError("need n >= 2 intervals")
    if not model.q > 0 or not model.p_exponent > 1:
        raise ValueError("need q > 0 and p > 1")


def _newton_1d(grid, p, load: LoadFunctional, opts: SolverOptions, u0=None):
    """Newton with energy backtracking on the q-scaled grid."""
    b = load.values
    if not np.any(b):
        return np.zeros(grid.n_vertices), 0.0, 0, [0.0]
    if u0 is None:
        # constant start that balances the mean load, then Newton
        c = b.sum() / grid.area
        u = np.full(grid.n_vertices, np.sign(c) * abs(c) ** (1.0 / (p - 1.0)))
    else:
        u = np.array(u0, dtype=float)
    ref = np.linalg.norm(b)
    r = assemble_residual(grid, p, u, load)
    E = energy(grid, p, u, load)
    hist = [float(np.linalg.norm(r))]
    for it in range(1, opts.max_iter + 1):
        if hist[-1] <= max(opts.tol * ref, opts.abs_tol):
            return u, hist[-1], it - 1, hist
        J = assemble_jacobian(grid, p, u, delta=opts.delta)
        step = LinearSolver(J, "direct").solve(-r)
        slope = float(r @ step)
        t = 1.0
        for _ in range(opts.max_halvings):
            cand = u + t * step
            E_new = energy(grid, p, cand, load)
            if E_new <= E + opts.armijo * t * slope:
                break
            if abs(E_new - E) <= 1e-13 * max(abs(E), 1.0):
                if np.linalg.norm(assemble_residual(grid, p, cand, load)) < hist[-1]:
                    break
            t *= opts.backtrack
        else:
            raise NonConvergenceError("line search failed in the 1D solve", last=u, history=hist)
        u, E = cand, E_new
        r = assemble_residual(grid, p, u, load)
        hist.append(float(np.linalg.norm(r)))
        if len(hist) >= 4 and hist[-1] < 1e-6 * ref and hist[-1] > 0.5 * hist[-2] > 0.25 * hist[-3]:
            return u, hist[-1], it, hist
    if hist[-1] <= max(opts.tol * ref, opts.abs_tol):
        return u, hist[-1], opts.max_iter, hist
    raise NonConvergenceError("1D Newton did not converge", last=u, history=hist)


def solve_limit_linear(model: HomogenizedModel, fbar: Optional[Callable] = None, n: int = 1024,
                       opts: Optional[SolverOptions] = None, u0=None) -> LimitSolution:
    """P1 Galerkin solve of int q|u'|^(p-2)u'phi' + |u|^(p-2)u phi = int f_bar phi.

    Lumped mass for the zeroth-order term, two-point Gauss load.
    """
    _check_model(model, n)
    fbar = fbar if fbar is not None else model.source
    if fbar is None:
        raise ValueError("no source term given")
    opts = opts or SolverOptions(tol=1e-12, max_iter=100)
    p = model.p_exponent
    nodes = np.linspace(0.0, 1.0, n + 1)
    grid = _ScaledStiffness(nodes, model.q, p)
    load = load_vector(grid, fbar)
    if p < 2 and opts.delta == 0:
        opts = SolverOptions(**{**opts.__dict__, "delta": 1e-10})
    u, res, its, hist = _newton_1d(grid, p, load, opts, u0)
    return LimitSolution(IntervalMesh(nodes), u, model, res, its, hist)


def solve_limit_semilinear(model: HomogenizedModel, f: Callable, n: int = 1024,
                           tol: float = 1e-10, max_outer: int = 200, omega: float = 1.0,
                           opts: Optional[SolverOptions] = None) -> LimitSolution:
    """Fixed point u <- (1-w) u + w S(c_f f(u)), S the linear-forcing solver.

    The stopping test uses the W^{1,p} norm of successive differences; the
    relaxation w is halved whenever the difference grows.
    """
    _check_model(model, n)
    if model.c_f is None:
        raise ValueError("semilinear model needs c_f")
    p = model.p_exponent
    nodes = np.linspace(0.0, 1.0, n + 1)
    grid = IntervalMesh(nodes)
    u = np.zeros(grid.n_vertices)
    diffs = []
    prev_diff = np.inf
    for k in range(1, max_outer + 1):
        uk = u

        def rhs(x):
            return model.c_f * np.asarray(f(np.interp(x, nodes, uk)), float)

        # the load depends on u only through its P1 interpolant
        new = solve_limit_linear(model, rhs, n, opts, u0=u if np.any(u) else None).values
        cand = (1.0 - omega) * u + omega * new
        d = cand - u
        diff = (lp_norm(grid, d, p) ** p + w1p_seminorm(grid, d, p) ** p) ** (1.0 / p)
        diffs.append(float(diff))
        if diff > prev_diff and omega > 1e-3:
            omega *= 0.5
        prev_diff = diff
        u = cand
        if diff <= tol:
            return LimitSolution(grid, u, model, diff, k, diffs, True)
    return LimitSolution(grid, u, model, diffs[-1], max_outer, diffs, False)
