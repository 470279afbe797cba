"""P1 assembly and Newton solver for the duality map

    <J u, phi> = int |grad u|^(p-2) grad u . grad phi + |u|^(p-2) u phi

on triangle meshes and on 1D interval grids.  Everything works with the
element arrays ``(elements, areas, basis_gradients, lumped_mass, dof_map)``,
so the same code serves both dimensions and periodic cells.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionError, NonConvergenceError, SingularityError, SolverError

log = logging.getLogger(__name__)


class IntervalMesh:
    """P1 grid on an interval; exposes the element interface of TriMesh."""

    def __init__(self, nodes):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise DimensionError("a 1D grid needs at least 2 intervals")
        if np.any(np.diff(nodes) <= 0):
            raise DimensionError("grid nodes must be strictly increasing")
        self.nodes = nodes
        self.nodes.setflags(write=False)
        n = nodes.size - 1
        self.triangles = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        self.periodic_pairs = None
        self.layout = None

    @classmethod
    def uniform(cls, n: int, a: float = 0.0, b: float = 1.0) -> "IntervalMesh":
        if n < 2:
            raise DimensionError("a 1D grid needs n >= 2 intervals")
        return cls(np.linspace(a, b, n + 1))

    def __repr__(self):
        return f"IntervalMesh(n={self.n_triangles})"

    @property
    def vertices(self):
        return self.nodes[:, None]

    @property
    def n_vertices(self) -> int:
        return self.nodes.size

    @property
    def n_triangles(self) -> int:
        return self.nodes.size - 1

    @cached_property
    def areas(self):
        return np.diff(self.nodes)

    @property
    def area(self) -> float:
        return float(self.nodes[-1] - self.nodes[0])

    @cached_property
    def basis_gradients(self):
        inv = 1.0 / self.areas
        return np.stack([-inv, inv], axis=1)[:, :, None]

    @cached_property
    def lumped_mass(self):
        return np.bincount(self.triangles.ravel(), np.repeat(self.areas / 2.0, 2),
                           minlength=self.n_vertices)

    @property
    def mesh_size(self) -> float:
        return float(self.areas.max())

    @cached_property
    def dof_map(self):
        return np.arange(self.n_vertices)

    @property
    def n_dofs(self) -> int:
        return self.n_vertices


Grid1D = IntervalMesh


class FemField:
    """P1 field stored by vertex values.

    Periodic partners carry equal values unless the field was built with an
    explicit affine part (the cell corrector v = y1 + w is not periodic).
    """

    def __init__(self, mesh, values, info=None):
        values = np.asarray(values, dtype=float)
        if values.shape != (mesh.n_vertices,):
            raise DimensionError(
                f"field has {values.shape} values, mesh has {mesh.n_vertices} vertices")
        self.mesh = mesh
        self.values = values
        self.info = info

    @classmethod
    def from_dofs(cls, mesh, dofs, info=None) -> "FemField":
        dofs = np.asarray(dofs, dtype=float)
        if dofs.shape != (mesh.n_dofs,):
            raise DimensionError(f"expected {mesh.n_dofs} dofs, got {dofs.shape}")
        return cls(mesh, dofs[mesh.dof_map], info)

    @classmethod
    def interpolate(cls, mesh, func: Callable) -> "FemField":
        v = mesh.vertices
        vals = func(v[:, 0]) if v.shape[1] == 1 else func(v[:, 0], v[:, 1])
        return cls(mesh, np.broadcast_to(np.asarray(vals, float), (mesh.n_vertices,)).copy())

    @property
    def dofs(self) -> np.ndarray:
        out = np.zeros(self.mesh.n_dofs)
        out[self.mesh.dof_map] = self.values
        return out

    def __len__(self):
        return self.values.size

    def __add__(self, other):
        return FemField(self.mesh, self.values + _vals(other, self.mesh))

    def __sub__(self, other):
        return FemField(self.mesh, self.values - _vals(other, self.mesh))

    def __mul__(self, c):
        return FemField(self.mesh, self.values * float(c))

    __rmul__ = __mul__

    def gradients(self) -> np.ndarray:
        """Element-wise constant gradients, shape (M, d)."""
        return element_gradients(self.mesh, self.values)

    def evaluate(self, x, y=None):
        """P1 interpolant at points (2D meshes need x and y)."""
        if isinstance(self.mesh, IntervalMesh):
            return np.interp(np.asarray(x, float), self.mesh.nodes, self.values)
        x = np.asarray(x, dtype=float)
        elem, bary, _ = self.mesh.locate(x, y)
        return np.einsum("ij,ij->i", bary, self.values[self.mesh.triangles[elem]]).reshape(x.shape)

    def to_table(self, path):
        """Write a vertex-value table (coordinates then value)."""
        np.savetxt(path, np.column_stack([self.mesh.vertices, self.values]), fmt="%.17g")


def _vals(other, mesh):
    if isinstance(other, FemField):
        if other.mesh is not mesh:
            raise DimensionError("fields live on different meshes")
        return other.values
    return float(other)


@dataclass(frozen=True)
class SolverOptions:
    """Newton settings.  ``tol`` is relative to the norm of the reference residual."""

    tol: float = 1e-10
    max_iter: int = 60
    backtrack: float = 0.5
    max_halvings: int = 40
    delta: float = 0.0
    armijo: float = 1e-4
    linear_solver: str = "auto"
    abs_tol: float = 1e-14

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if not self.delta >= 0:
            raise ValueError("regularization must be non-negative")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if self.linear_solver not in ("auto", "direct", "banded", "cg"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    reference: float
    history: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    converged: bool = True
    stalled: bool = False


@dataclass(frozen=True)
class LoadFunctional:
    """Nodal load b_i = <F, phi_i>, indexed by vertex."""

    values: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("load has non-finite entries")

    def dofs(self, mesh) -> np.ndarray:
        if self.values.shape != (mesh.n_vertices,):
            raise DimensionError("load does not match the mesh")
        return np.bincount(mesh.dof_map, self.values, minlength=mesh.n_dofs)

    @property
    def total(self) -> float:
        return float(self.values.sum())

    def __add__(self, other):
        return LoadFunctional(self.values + other.values)

    def scaled(self, c) -> "LoadFunctional":
        return LoadFunctional(self.values * float(c))

    @classmethod
    def zero(cls, mesh) -> "LoadFunctional":
        return cls(np.zeros(mesh.n_vertices))


# ---------------------------------------------------------------------------
# element kernels


def element_gradients(mesh, vertex_values) -> np.ndarray:
    u = np.asarray(vertex_values)[mesh.triangles]
    return np.einsum("mk,mkd->md", u, mesh.basis_gradients)


def _flux_coeff(s, p, delta):
    """(delta^2 + s)^((p-2)/2) with the value 0 where the base vanishes."""
    base = delta * delta + s
    if p == 2:
        return np.ones_like(s)
    out = np.zeros_like(s)
    pos = base > 0
    out[pos] = base[pos] ** (0.5 * (p - 2.0))
    return out


def _check_fields(mesh, u):
    if isinstance(u, FemField):
        if u.mesh is not mesh:
            raise DimensionError("field lives on another mesh")
        return u.values
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.n_vertices,):
        raise DimensionError(f"expected {mesh.n_vertices} vertex values, got {u.shape}")
    return u


def _to_dofs(mesh, vertex_vec):
    return np.bincount(mesh.dof_map, vertex_vec, minlength=mesh.n_dofs)


def load_vector(mesh, func: Callable, mask=None, scale: float = 1.0) -> LoadFunctional:
    """b_i = scale * int_{mask} func phi_i by the edge-midpoint rule.

    The rule is exact when ``func`` is affine on each element.  ``func`` takes
    (x, y) on triangle meshes and x on interval grids.
    """
    tri = mesh.triangles
    elems = np.arange(mesh.n_triangles) if mask is None else np.flatnonzero(mask)
    out = np.zeros(mesh.n_vertices)
    if elems.size == 0:
        return LoadFunctional(out)
    t = tri[elems]
    a = mesh.areas[elems]
    if isinstance(mesh, IntervalMesh):
        # two-point Gauss, exact for affine func times hat functions
        x0 = mesh.nodes[t[:, 0]]
        h = a
        r = 0.5 / math.sqrt(3.0)
        xa, xb = x0 + (0.5 - r) * h, x0 + (0.5 + r) * h
        fa, fb = np.asarray(func(xa), float) * np.ones_like(xa), np.asarray(func(xb), float) * np.ones_like(xb)
        w0 = 0.5 * h * (fa * (0.5 + r) + fb * (0.5 - r))
        w1 = 0.5 * h * (fa * (0.5 - r) + fb * (0.5 + r))
        out += np.bincount(t[:, 0], w0, minlength=out.size)
        out += np.bincount(t[:, 1], w1, minlength=out.size)
        return LoadFunctional(scale * out)
    p = mesh.vertices[t]
    mids = [(p[:, 1] + p[:, 2]) / 2, (p[:, 2] + p[:, 0]) / 2, (p[:, 0] + p[:, 1]) / 2]
    fm = [np.asarray(func(m[:, 0], m[:, 1]), float) * np.ones(len(elems)) for m in mids]
    for k in range(3):
        # midpoint opposite vertex k does not see phi_k
        contrib = a / 6.0 * (fm[(k + 1) % 3] + fm[(k + 2) % 3])
        out += np.bincount(t[:, k], contrib, minlength=out.size)
    return LoadFunctional(scale * out)


def assemble_residual(mesh, p: float, u, load: Optional[LoadFunctional] = None,
                      mass: bool = True, offset=None, delta: float = 0.0) -> np.ndarray:
    """DOF vector of <J u, phi_i> - b_i.

    ``offset`` is an optional per-element constant gradient added to grad u
    (used by the cell problem, where v = y1 + w).  ``delta`` regularizes the
    gradient weight as (delta^2 + |grad u|^2)^((p-2)/2).
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    uv = _check_fields(mesh, u)
    gu = element_gradients(mesh, uv)
    if offset is not None:
        gu = gu + offset
    c = _flux_coeff(np.einsum("md,md->m", gu, gu), p, delta)
    flux = (mesh.areas * c)[:, None] * gu
    local = np.einsum("md,mkd->mk", flux, mesh.basis_gradients)
    res = np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_vertices)
    if mass:
        au = np.abs(uv)
        res = res + mesh.lumped_mass * (au ** (p - 2.0) * uv if p != 2 else uv)
    r = _to_dofs(mesh, res)
    if load is not None:
        r = r - load.dofs(mesh)
    return r


def residual_scale(mesh, p: float, u, mass: bool = True, offset=None) -> float:
    """Norm of the summed absolute element contributions to the residual.

    Round-off bounds the attainable residual by a small multiple of
    machine precision times this value.
    """
    uv = _check_fields(mesh, u)
    gu = element_gradients(mesh, uv)
    if offset is not None:
        gu = gu + offset
    c = _flux_coeff(np.einsum("md,md->m", gu, gu), p, 0.0)
    flux = (mesh.areas * c)[:, None] * gu
    local = np.abs(np.einsum("md,mkd->mk", flux, mesh.basis_gradients))
    acc = np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_vertices)
    if mass:
        acc = acc + mesh.lumped_mass * np.abs(uv) ** (p - 1.0)
    return float(np.linalg.norm(_to_dofs(mesh, acc)))


ROUNDOFF_FACTOR = 1e3 * np.finfo(float).eps


def energy(mesh, p: float, u, load: Optional[LoadFunctional] = None, mass: bool = True,
           offset=None, delta: float = 0.0) -> float:
    """Convex potential (1/p) int |grad u|^p + |u|^p - <b, u> of the duality map.

    With ``delta > 0`` the gradient term becomes (1/p) int (delta^2 + |grad u|^2)^(p/2),
    the potential of the regularized residual.
    """
    uv = _check_fields(mesh, u)
    gu = element_gradients(mesh, uv)
    if offset is not None:
        gu = gu + offset
    s = np.einsum("md,md->m", gu, gu) + delta * delta
    e = float(np.dot(mesh.areas, s ** (0.5 * p))) / p
    if mass:
        e += float(np.dot(mesh.lumped_mass, np.abs(uv) ** p)) / p
    if load is not None:
        e -= float(np.dot(load.values, uv))
    return e


def assemble_jacobian(mesh, p: float, u, delta: float = 0.0, mass: bool = True,
                      offset=None) -> sp.csr_matrix:
    """Newton matrix of the duality map at u, in DOF numbering.

    Element block: c1 I + c2 grad u (x) grad u with c1 = (delta^2+|grad u|^2)^((p-2)/2),
    c2 = (p-2) (delta^2+|grad u|^2)^((p-4)/2); c2 is taken as 0 on elements
    where the gradient (and delta) vanish.  Mass block (p-1)|u|^(p-2) lumped.
    """
    if p < 2 and delta == 0:
        raise SingularityError("p < 2 needs a positive gradient regularization delta")
    uv = _check_fields(mesh, u)
    gu = element_gradients(mesh, uv)
    if offset is not None:
        gu = gu + offset
    s = np.einsum("md,md->m", gu, gu)
    base = delta * delta + s
    c1 = _flux_coeff(s, p, delta)
    c2 = np.zeros_like(s)
    if p != 2:
        pos = base > 0
        c2[pos] = (p - 2.0) * c1[pos] / base[pos]
    G = mesh.basis_gradients
    A = mesh.areas
    gg = np.einsum("mkd,mld->mkl", G, G)
    proj = np.einsum("mkd,md->mk", G, gu)
    local = (A * c1)[:, None, None] * gg + (A * c2)[:, None, None] * proj[:, :, None] * proj[:, None, :]
    nk = G.shape[1]
    dofs = mesh.dof_map[mesh.triangles]
    rows = np.repeat(dofs, nk, axis=1).ravel()
    cols = np.tile(dofs, (1, nk)).ravel()
    n = mesh.n_dofs
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    if mass:
        au = np.abs(uv)
        if p == 2:
            w = np.ones_like(au)
        elif p > 2:
            w = (p - 1.0) * au ** (p - 2.0)
        else:
            w = (p - 1.0) * (delta * delta + au * au) ** (0.5 * (p - 2.0))
        K = K + sp.diags(_to_dofs(mesh, mesh.lumped_mass * w))
    K = 0.5 * (K + K.T)
    return K.tocsr()


# ---------------------------------------------------------------------------
# linear algebra


def pcg(A, b, rtol: float = 1e-12, max_iter: Optional[int] = None, x0=None):
    """Jacobi-preconditioned conjugate gradients with indefiniteness detection."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = b.size
    max_iter = max_iter or 10 * n + 100
    d = A.diagonal()
    if np.any(d <= 0):
        raise SolverError("matrix has a non-positive diagonal entry; not SPD")
    minv = 1.0 / d
    x = np.zeros(n) if x0 is None else np.array(x0, float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n)
    z = minv * r
    pdir = z.copy()
    rz = r @ z
    for _ in range(max_iter):
        if np.linalg.norm(r) <= rtol * bnorm:
            return x
        Ap = A @ pdir
        curv = pdir @ Ap
        if curv <= 0:
            raise SolverError("conjugate gradients met non-positive curvature")
        a = rz / curv
        x += a * pdir
        r -= a * Ap
        z = minv * r
        rz_new = r @ z
        pdir = z + (rz_new / rz) * pdir
        rz = rz_new
    if np.linalg.norm(r) <= rtol * bnorm:
        return x
    raise SolverError("conjugate gradients did not reach the tolerance")


def _bandwidth(A) -> int:
    A = A.tocoo()
    return int(np.max(np.abs(A.row - A.col))) if A.nnz else 0


class LinearSolver:
    """Factor an SPD matrix once and solve many right-hand sides.

    ``method``: "banded" (LAPACK banded Cholesky, for small bandwidth),
    "direct" (sparse LU), "cg" (Jacobi PCG) or "auto".
    """

    def __init__(self, A, method: str = "auto"):
        A = sp.csr_matrix(A)
        self.A = A
        n = A.shape[0]
        if method == "auto":
            bw = _bandwidth(A)
            method = "banded" if bw <= 400 and bw * n <= 2e8 else "direct"
        self.method = method
        if method == "banded":
            bw = _bandwidth(A)
            ab = np.zeros((bw + 1, n))
            coo = sp.triu(A).tocoo()
            ab[bw + coo.row - coo.col, coo.col] = coo.data
            try:
                self._factor = scipy.linalg.cholesky_banded(ab, lower=False, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise SolverError("matrix is not positive definite") from exc
        elif method == "direct":
            try:
                self._factor = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SolverError(f"sparse factorization failed: {exc}") from exc
        elif method != "cg":
            raise ValueError(f"unknown method {method!r}")

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.method == "banded":
            return scipy.linalg.cho_solve_banded((self._factor, False), b, check_finite=False)
        if self.method == "direct":
            x = self._factor.solve(b)
            if not np.all(np.isfinite(x)):
                raise SolverError("singular matrix")
            return x
        return pcg(self.A, b)


def solve_linear_spd(matrix, rhs, method: str = "auto"):
    """Solve an SPD system; see LinearSolver for the methods."""
    A = sp.csr_matrix(matrix)
    if A.shape[0] != A.shape[1] or A.shape[0] != np.asarray(rhs).size:
        raise DimensionError("matrix and right-hand side do not match")
    return LinearSolver(A, method).solve(rhs)


# ---------------------------------------------------------------------------
# Newton


def lp_norm(mesh, u, p: float) -> float:
    """(sum_i m_i |u_i|^p)^(1/p), the vertex rule for int |u|^p."""
    uv = _check_fields(mesh, u)
    return float(np.dot(mesh.lumped_mass, np.abs(uv) ** p)) ** (1.0 / p)


def w1p_seminorm(mesh, u, p: float) -> float:
    """(int |grad u|^p)^(1/p), exact for P1 fields."""
    uv = _check_fields(mesh, u)
    gu = element_gradients(mesh, uv)
    s = np.einsum("md,md->m", gu, gu)
    return float(np.dot(mesh.areas, s ** (0.5 * p))) ** (1.0 / p)


def w1p_norm(mesh, u, p: float) -> float:
    return (lp_norm(mesh, u, p) ** p + w1p_seminorm(mesh, u, p) ** p) ** (1.0 / p)


def linear_operator(mesh, mass: bool = True):
    """Stiffness (+ lumped mass) matrix of the p = 2 problem."""
    return assemble_jacobian(mesh, 2.0, np.zeros(mesh.n_vertices), mass=mass)


def _scaled_start(mesh, p, load, opts):
    """Linear (p = 2) solution rescaled to minimize the p-energy along its ray."""
    b = load.dofs(mesh)
    w = LinearSolver(linear_operator(mesh), opts.linear_solver).solve(b)
    u = w[mesh.dof_map]
    work = float(np.dot(b, w))
    quad = w1p_seminorm(mesh, u, p) ** p + lp_norm(mesh, u, p) ** p
    if work <= 0 or quad <= 0:
        return np.zeros(mesh.n_dofs)
    return w * (work / quad) ** (1.0 / (p - 1.0))


def newton_minimize(mesh, p: float, load: Optional[LoadFunctional], opts: SolverOptions,
                    w0=None, mass: bool = True, offset=None, pin: Optional[int] = None,
                    project: Optional[Callable] = None, ref: Optional[float] = None):
    """Damped Newton on the convex energy; returns (dofs, SolveInfo).

    ``pin`` removes one DOF from the linear solves (used where the energy is
    invariant under adding constants); ``project`` is applied after each step.
    """
    n = mesh.n_dofs
    w = np.zeros(n) if w0 is None else np.array(w0, dtype=float)

    def res(wv):
        return assemble_residual(mesh, p, wv[mesh.dof_map], load, mass=mass, offset=offset,
                                 delta=opts.delta)

    def en(wv):
        return energy(mesh, p, wv[mesh.dof_map], load, mass=mass, offset=offset,
                      delta=opts.delta)

    r = res(w)
    if ref is None:
        ref = np.linalg.norm(load.dofs(mesh)) if load is not None else 0.0
        if ref == 0:
            ref = np.linalg.norm(res(np.zeros(n)))
    target = max(opts.tol * ref, opts.abs_tol)
    E = en(w)
    info = SolveInfo(0, float(np.linalg.norm(r)), float(ref), [float(np.linalg.norm(r))], [E])
    keep = np.ones(n, dtype=bool)
    if pin is not None:
        keep[pin] = False
    for it in range(1, opts.max_iter + 1):
        rn = np.linalg.norm(r)
        floor = ROUNDOFF_FACTOR * residual_scale(mesh, p, w[mesh.dof_map], mass, offset)
        if rn <= max(target, floor):
            info.iterations = it - 1
            info.residual = float(rn)
            return w, info
        J = assemble_jacobian(mesh, p, w[mesh.dof_map], delta=opts.delta, mass=mass,
                              offset=offset)
        step = np.zeros(n)
        if pin is not None:
            J = J[keep][:, keep]
        step[keep] = LinearSolver(J, opts.linear_solver).solve(-r[keep])
        slope = float(np.dot(r, step))
        t = 1.0
        accepted = False
        for _ in range(opts.max_halvings):
            cand = w + t * step
            if project is not None:
                cand = project(cand)
            E_new = en(cand)
            if E_new <= E + opts.armijo * t * slope:
                accepted = True
                break
            # near the minimum energy differences drown in round-off
            if abs(E_new - E) <= 1e-13 * max(abs(E), 1.0):
                r_new = res(cand)
                if np.linalg.norm(r_new) < rn:
                    accepted = True
                    break
            t *= opts.backtrack
        if not accepted:
            raise NonConvergenceError("line search failed", last=w, history=info.history)
        w = cand
        E = E_new
        r = res(w)
        info.history.append(float(np.linalg.norm(r)))
        info.energies.append(E)
        h = info.history
        if len(h) >= 4 and h[-1] < 1e-6 * ref and h[-1] > 0.5 * h[-2] and h[-2] > 0.5 * h[-3]:
            # quadratic convergence has ended at the round-off level of the linear solves
            info.iterations = it
            info.residual = h[-1]
            info.stalled = True
            return w, info
    rn = np.linalg.norm(r)
    info.iterations = opts.max_iter
    info.residual = float(rn)
    floor = ROUNDOFF_FACTOR * residual_scale(mesh, p, w[mesh.dof_map], mass, offset)
    if rn <= max(target, floor):
        return w, info
    info.converged = False
    raise NonConvergenceError(
        f"Newton did not converge in {opts.max_iter} iterations (residual {rn:.3e})",
        last=FemField.from_dofs(mesh, w), history=info.history)


def solve_duality(mesh, p: float, load: LoadFunctional,
                  opts: Optional[SolverOptions] = None, u0=None) -> FemField:
    """Solve J u = b for the P1 field u (Neumann problem with mass term).

    Without ``u0`` the start is the rescaled p = 2 solution, which keeps the
    Newton matrix nonsingular at the first step when p > 2.
    """
    opts = opts or SolverOptions()
    if p < 2 and opts.delta == 0:
        raise SingularityError("p < 2 needs a positive gradient regularization delta")
    b = load.dofs(mesh)
    if not np.any(b):
        return FemField(mesh, np.zeros(mesh.n_vertices), SolveInfo(0, 0.0, 0.0, [0.0], [0.0]))
    if p == 2:
        solver = LinearSolver(linear_operator(mesh), opts.linear_solver)
        w = solver.solve(b)
        r = assemble_residual(mesh, 2.0, w[mesh.dof_map], load)
        info = SolveInfo(1, float(np.linalg.norm(r)), float(np.linalg.norm(b)),
                         [float(np.linalg.norm(b)), float(np.linalg.norm(r))])
        return FemField.from_dofs(mesh, w, info)
    if u0 is None:
        w0 = _scaled_start(mesh, p, load, opts)
    else:
        w0 = u0.dofs if isinstance(u0, FemField) else np.asarray(u0, float)
    w, info = newton_minimize(mesh, p, load, opts, w0=w0)
    return FemField.from_dofs(mesh, w, info)
