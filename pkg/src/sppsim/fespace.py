"""Order-2 curl-conforming (edge) elements on the quad-tree mesh.

The reference element on [0,1]^2 spans Q_{1,2} x Q_{2,1} (12 functions): the
x-component has degree (1,2), the y-component degree (2,1).  Degrees of
freedom are tangential moments against the constant and the linear Legendre
weight on each edge (8) plus four interior moments.  Edge moments are taken
with respect to the GLOBAL edge direction (lower vertex id to higher), so two
cells sharing an edge reference literally the same functionals and assembly
needs no sign bookkeeping; the per-cell basis is built from the orientation
signature of its four edges (16 cached variants).

Fields map to physical cells with the covariant transform E = J^{-T} E_ref,
which preserves tangential line integrals; the scalar 2D curl then transforms
as curl E = (curl_ref E_ref)/det J for any (also curved) reference map.

Hanging edges on 1-irregular meshes are constrained: the two child-edge
moment pairs are fixed linear images of the parent-edge pair, which makes the
tangential trace globally continuous.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import EDGE_CORNERS, GeometryError, Mesh, cell_geometry, jacobian_det

# exponent tables: x-component in Q_{1,2}, y-component in Q_{2,1}
_UX = ((0, 0), (1, 0), (0, 1), (1, 1), (0, 2), (1, 2))
_VY = ((0, 0), (1, 0), (0, 1), (1, 1), (2, 0), (2, 1))

# order-3 counterparts (used only for patchwise reconstruction)
_UX3 = tuple((i, j) for j in range(4) for i in range(3))
_VY3 = tuple((i, j) for i in range(4) for j in range(3))

# reference corners and edge tangents
_CORNER_XY = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))
_EDGE_TANGENT = ((1.0, 0.0), (0.0, 1.0), (1.0, 0.0), (0.0, 1.0))

N_DOFS_CELL = 12


def gauss01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _monomials(exps, pts):
    pts = np.asarray(pts, dtype=float)
    out = np.empty((pts.shape[0], len(exps)))
    for m, (i, j) in enumerate(exps):
        out[:, m] = pts[:, 0] ** i * pts[:, 1] ** j
    return out


def _monomial_dx(exps, pts):
    pts = np.asarray(pts, dtype=float)
    out = np.zeros((pts.shape[0], len(exps)))
    for m, (i, j) in enumerate(exps):
        if i > 0:
            out[:, m] = i * pts[:, 0] ** (i - 1) * pts[:, 1] ** j
    return out


def _monomial_dy(exps, pts):
    pts = np.asarray(pts, dtype=float)
    out = np.zeros((pts.shape[0], len(exps)))
    for m, (i, j) in enumerate(exps):
        if j > 0:
            out[:, m] = j * pts[:, 0] ** i * pts[:, 1] ** (j - 1)
    return out


def vector_monomials(pts, order: int = 2):
    """Values (npts, nmono, 2) and scalar curls (npts, nmono) of the monomial fields."""
    ux, vy = (_UX, _VY) if order == 2 else (_UX3, _VY3)
    nu, nv = len(ux), len(vy)
    npts = np.asarray(pts).shape[0]
    vals = np.zeros((npts, nu + nv, 2))
    vals[:, :nu, 0] = _monomials(ux, pts)
    vals[:, nu:, 1] = _monomials(vy, pts)
    curls = np.zeros((npts, nu + nv))
    curls[:, :nu] = -_monomial_dy(ux, pts)
    curls[:, nu:] = _monomial_dx(vy, pts)
    return vals, curls


def _edge_ref_points(ledge: int, t):
    a = np.asarray(_CORNER_XY[EDGE_CORNERS[ledge][0]])
    b = np.asarray(_CORNER_XY[EDGE_CORNERS[ledge][1]])
    t = np.asarray(t, dtype=float)
    return (1 - t)[:, None] * a[None, :] + t[:, None] * b[None, :]


class ReferenceElement:
    """Dof functionals and cached bases for the 16 edge-orientation variants."""

    def __init__(self, quad_order: int = 4):
        x, w = gauss01(quad_order)
        XI, ETA = np.meshgrid(x, x, indexing="ij")
        self.quad_pts = np.column_stack([XI.ravel(), ETA.ravel()])
        self.quad_wts = np.outer(w, w).ravel()
        self._edge_t, self._edge_w = gauss01(quad_order)
        tb, wb = gauss01(3)
        XB, YB = np.meshgrid(tb, tb, indexing="ij")
        self._bulk_pts = np.column_stack([XB.ravel(), YB.ravel()])
        self._bulk_wts = np.outer(wb, wb).ravel()

    def dof_matrix(self, orient) -> np.ndarray:
        """V[i, m] = functional_i applied to monomial field m, given edge signs."""
        V = np.empty((N_DOFS_CELL, N_DOFS_CELL))
        te, we = gauss01(3)
        for ledge in range(4):
            pts = _edge_ref_points(ledge, te)
            tau = np.asarray(_EDGE_TANGENT[ledge])
            vals, _ = vector_monomials(pts)
            tang = vals @ tau  # (npts, 12)
            o = orient[ledge]
            V[2 * ledge] = o * we @ tang
            V[2 * ledge + 1] = we @ (tang * (2 * te - 1)[:, None])
        vals, _ = vector_monomials(self._bulk_pts)
        w = self._bulk_wts
        xi = self._bulk_pts[:, 0]
        eta = self._bulk_pts[:, 1]
        # interior moments weight each component along its own direction;
        # traces on the opposite edge pair already pin the transverse behavior
        V[8] = w @ vals[:, :, 0]
        V[9] = (w * (2 * xi - 1)) @ vals[:, :, 0]
        V[10] = w @ vals[:, :, 1]
        V[11] = (w * (2 * eta - 1)) @ vals[:, :, 1]
        return V

    @lru_cache(maxsize=16)
    def coeffs(self, oidx: int) -> np.ndarray:
        """Monomial coefficients of the nodal basis for one orientation signature."""
        orient = tuple(-1.0 if (oidx >> e) & 1 else 1.0 for e in range(4))
        V = self.dof_matrix(orient)
        try:
            return np.linalg.inv(V)
        except np.linalg.LinAlgError as exc:  # pragma: no cover
            raise GeometryError("edge-element dof set is not unisolvent") from exc

    def basis_at(self, oidx: int, pts):
        """(npts, 12, 2) values and (npts, 12) curls on the reference square."""
        C = self.coeffs(oidx)
        vals, curls = vector_monomials(pts)
        return np.einsum("mb,pmc->pbc", C, vals), curls @ C

    @lru_cache(maxsize=16)
    def basis_at_quad(self, oidx: int):
        vals, curls = self.basis_at(oidx, self.quad_pts)
        return vals, curls

    @lru_cache(maxsize=64)
    def basis_at_edge(self, oidx: int, ledge: int):
        pts = _edge_ref_points(ledge, self._edge_t)
        return self.basis_at(oidx, pts)


REF = ReferenceElement()


def orientation_index(mesh: Mesh, cid: int) -> int:
    cell = mesh.cells[cid]
    idx = 0
    for ledge, (a, b) in enumerate(EDGE_CORNERS):
        if cell.verts[a] > cell.verts[b]:
            idx |= 1 << ledge
    return idx


@dataclass
class EdgeFESpace:
    """Global dof layout: two moments per leaf face, then four per active cell."""

    mesh: Mesh
    order: int
    active: list[int]
    rank: dict[int, int]
    cell_dofs: np.ndarray      # (n_active, 12) global indices
    orient_idx: np.ndarray     # (n_active,)
    face_index: dict[tuple[int, int], int]
    n_faces: int
    n_dofs: int

    def cell_rank(self, cid: int) -> int:
        return self.rank[cid]


def distribute_dofs(mesh: Mesh, order: int = 2) -> EdgeFESpace:
    """Deterministic global enumeration over the active mesh."""
    if order != 2:
        raise ValueError("only order-2 edge elements are supported")
    active = sorted(mesh.active_ids())
    face_index: dict[tuple[int, int], int] = {}
    for cid in active:
        cell = mesh.cells[cid]
        for ledge in range(4):
            key = cell.edge_key(ledge)
            if key not in face_index:
                face_index[key] = len(face_index)
    n_faces = len(face_index)
    cell_dofs = np.empty((len(active), N_DOFS_CELL), dtype=np.int64)
    orient = np.empty(len(active), dtype=np.int8)
    rank = {}
    for r, cid in enumerate(active):
        rank[cid] = r
        cell = mesh.cells[cid]
        for ledge in range(4):
            f = face_index[cell.edge_key(ledge)]
            cell_dofs[r, 2 * ledge] = 2 * f
            cell_dofs[r, 2 * ledge + 1] = 2 * f + 1
        base = 2 * n_faces + 4 * r
        cell_dofs[r, 8:] = np.arange(base, base + 4)
        orient[r] = orientation_index(mesh, cid)
    return EdgeFESpace(mesh=mesh, order=order, active=active, rank=rank,
                       cell_dofs=cell_dofs, orient_idx=orient,
                       face_index=face_index, n_faces=n_faces,
                       n_dofs=2 * n_faces + 4 * len(active))


@dataclass
class FieldSolution:
    """Coefficients over all global dofs (constraints already distributed)."""

    space: EdgeFESpace
    coeffs: np.ndarray

    def values(self, cid: int, ref_pts):
        vals, _ = shape_eval(self.space, cid, ref_pts)
        local = self.coeffs[self.space.cell_dofs[self.space.rank[cid]]]
        return np.einsum("b,bpc->pc", local, vals)

    def curls(self, cid: int, ref_pts):
        _, curls = shape_eval(self.space, cid, ref_pts)
        local = self.coeffs[self.space.cell_dofs[self.space.rank[cid]]]
        return np.einsum("b,bp->p", local, curls)


def shape_eval(space: EdgeFESpace, cid: int, ref_pts):
    """Physical basis values (12, npts, 2) and curls (12, npts) on one cell."""
    ref_pts = np.asarray(ref_pts, dtype=float)
    _, jac = cell_geometry(space.mesh, [cid], ref_pts)
    det = jacobian_det(jac)[0]
    if np.any(det <= 0):
        raise GeometryError(f"degenerate Jacobian on cell {cid}")
    vals_ref, curls_ref = REF.basis_at(orientation_index(space.mesh, cid), ref_pts)
    jinv_t = np.linalg.inv(jac[0]).transpose(0, 2, 1)
    vals = np.einsum("pij,pbj->bpi", jinv_t, vals_ref)
    curls = (curls_ref / det[:, None]).T
    return vals, curls


@dataclass
class ConstraintSet:
    """Hanging-edge dofs expressed through their parent-edge dofs."""

    n_dofs: int
    rows: dict[int, list[tuple[int, float]]]
    matrix: sp.csr_matrix        # (n_dofs, n_master)
    master_dofs: np.ndarray

    @property
    def n_master(self) -> int:
        return len(self.master_dofs)

    def distribute(self, reduced: np.ndarray) -> np.ndarray:
        return self.matrix @ reduced

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return full[self.master_dofs]


def _child_transfer(alpha: float, gamma: float) -> np.ndarray:
    """Child-edge moments of a degree-1 trace given parent moments.

    The child parameterizes the parent edge as s = alpha + gamma*s_child.
    """
    return np.array([[gamma, 3.0 * gamma * (2 * alpha + gamma - 1.0)],
                     [0.0, gamma * gamma]])


_T_LO = _child_transfer(0.0, 0.5)    # child from parent's low vertex to midpoint
_T_HI = _child_transfer(1.0, -0.5)   # child from parent's high vertex to midpoint


def build_constraints(space: EdgeFESpace) -> ConstraintSet:
    """Tie child-edge dofs on hanging faces to the parent-edge dofs."""
    mesh = space.mesh
    rows: dict[int, list[tuple[int, float]]] = {}
    for key, fidx in space.face_index.items():
        mid = mesh.edge_mid.get(key)
        if mid is None:
            continue
        lo, hi = key
        key_lo = (lo, mid) if lo < mid else (mid, lo)
        key_hi = (hi, mid) if hi < mid else (mid, hi)
        f_lo = space.face_index.get(key_lo)
        f_hi = space.face_index.get(key_hi)
        if f_lo is None or f_hi is None:
            continue
        # midpoint ids are created after their edge endpoints
        assert mid > lo and mid > hi, "midpoint id ordering violated"
        for fc, T in ((f_lo, _T_LO), (f_hi, _T_HI)):
            for j in range(2):
                rows[2 * fc + j] = [(2 * fidx + k, T[j, k]) for k in range(2)
                                    if T[j, k] != 0.0]
    constrained = set(rows)
    for dof in rows:
        for master, _ in rows[dof]:
            assert master not in constrained, "constraint chains are not allowed"
    master_dofs = np.array([d for d in range(space.n_dofs) if d not in constrained],
                           dtype=np.int64)
    col_of = -np.ones(space.n_dofs, dtype=np.int64)
    col_of[master_dofs] = np.arange(len(master_dofs))
    data, ri, ci = [], [], []
    for d in range(space.n_dofs):
        if d in rows:
            for master, coef in rows[d]:
                ri.append(d)
                ci.append(col_of[master])
                data.append(coef)
        else:
            ri.append(d)
            ci.append(col_of[d])
            data.append(1.0)
    matrix = sp.csr_matrix((data, (ri, ci)), shape=(space.n_dofs, len(master_dofs)))
    return ConstraintSet(n_dofs=space.n_dofs, rows=rows, matrix=matrix,
                         master_dofs=master_dofs)


def interpolate(space: EdgeFESpace, fun) -> np.ndarray:
    """Dof-moment interpolation of an analytic vector field fun(points)->(n,2)."""
    mesh = space.mesh
    coeffs = np.zeros(space.n_dofs, dtype=complex)
    te, we = gauss01(3)
    tb_pts, tb_wts = REF._bulk_pts, REF._bulk_wts
    for r, cid in enumerate(space.active):
        cell = mesh.cells[cid]
        local = np.empty(N_DOFS_CELL, dtype=complex)
        for ledge in range(4):
            pts = _edge_ref_points(ledge, te)
            phys, jac = cell_geometry(mesh, [cid], pts)
            tau = np.asarray(_EDGE_TANGENT[ledge])
            dxdt = np.einsum("pij,j->pi", jac[0], tau)
            ftan = np.einsum("pi,pi->p", fun(phys[0]), dxdt)
            a, b = EDGE_CORNERS[ledge]
            o = 1.0 if cell.verts[a] < cell.verts[b] else -1.0
            local[2 * ledge] = o * np.sum(we * ftan)
            local[2 * ledge + 1] = np.sum(we * (2 * te - 1) * ftan)
        phys, jac = cell_geometry(mesh, [cid], tb_pts)
        pull = np.einsum("pji,pj->pi", jac[0], fun(phys[0]))  # J^T f
        xi, eta = tb_pts[:, 0], tb_pts[:, 1]
        local[8] = np.sum(tb_wts * pull[:, 0])
        local[9] = np.sum(tb_wts * (2 * xi - 1) * pull[:, 0])
        local[10] = np.sum(tb_wts * pull[:, 1])
        local[11] = np.sum(tb_wts * (2 * eta - 1) * pull[:, 1])
        coeffs[space.cell_dofs[r]] = local
    return coeffs


def sheet_edge_of(mesh: Mesh, cid: int) -> int:
    """Local edge of a cell lying on {y = 0}; KeyError if none."""
    cell = mesh.cells[cid]
    for ledge in range(4):
        a, b = EDGE_CORNERS[ledge]
        if mesh.on_interface(cell.verts[a]) and mesh.on_interface(cell.verts[b]):
            return ledge
    raise KeyError(f"cell {cid} has no edge on the sheet")


def tangential_trace(sol: FieldSolution, face, xs, side: str = "above") -> np.ndarray:
    """E·e_x sampled at positions xs on a sheet face, from the requested side."""
    mesh = sol.space.mesh
    cid = face.above if side == "above" else face.below
    if cid is None:
        raise ValueError(f"face has no cell on side {side!r}")
    ledge = sheet_edge_of(mesh, cid)
    cell = mesh.cells[cid]
    a, b = EDGE_CORNERS[ledge]
    xa = mesh.vertices[cell.verts[a], 0]
    xb = mesh.vertices[cell.verts[b], 0]
    t = (np.asarray(xs, dtype=float) - xa) / (xb - xa)
    pts = _edge_ref_points(ledge, t)
    return sol.values(cid, pts)[:, 0]
