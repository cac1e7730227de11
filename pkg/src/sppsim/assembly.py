"""Assembly of the complex linear system for the sheet-scattering weak form.

The sesquilinear form, with all coefficients PML-modified inside the layer, is

    A(E, v) =   int_Omega  (1/mu_eff) (curl E)(curl conj v)
              - int_Omega  (eps_eff E) . conj v
              - i int_Sheet   sigma_eff E_t conj(v_t)
              - i int_Rim     sqrt(eps_r/mu_r) E_t conj(v_t)

and the dipole right-hand side is F(v) = i int j_reg . conj v with a cosine
bump regularization of the point dipole.  Basis functions are real, so the
assembled matrix is complex symmetric (M = M^T entrywise, not Hermitian).

The sheet integral runs over leaf faces and is evaluated from the finest
adjacent cell; in the constrained space the tangential trace is single valued
across every face, so the choice of side does not matter.  The rim impedance
coefficient is deliberately unstretched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import pml as pml_mod
from .fespace import (EDGE_CORNERS, N_DOFS_CELL, REF, ConstraintSet,
                      EdgeFESpace, FieldSolution, _edge_ref_points, gauss01)
from .mesh import boundary_faces, cell_geometry, cells_intersecting_disk, \
    interface_faces, jacobian_det
from .pml import PmlSpec

DIPOLE_NORM = 1.0 / (np.pi / 2.0 - 2.0 / np.pi)


class AssemblyError(Exception):
    pass


@dataclass(frozen=True)
class DipoleSpec:
    """Regularized vertical dipole at (0, height) with unit strength."""

    height: float
    radius: float

    def __post_init__(self):
        if not self.height > 0:
            raise ValueError("dipole must sit strictly above the sheet")
        if not self.radius > 0:
            raise ValueError("regularization radius must be positive")

    @property
    def position(self) -> np.ndarray:
        return np.array([0.0, self.height])

    def density(self, pts: np.ndarray) -> np.ndarray:
        """Cosine-squared bump of unit mass."""
        r = np.linalg.norm(np.asarray(pts, dtype=float) - self.position, axis=-1)
        out = np.zeros_like(r)
        inside = r < self.radius
        out[inside] = (DIPOLE_NORM / self.radius**2
                       * np.cos(np.pi * r[inside] / (2 * self.radius)) ** 2)
        return out


@dataclass(frozen=True)
class SheetModel:
    """Rescaled configuration shared by the solver and the reference solution."""

    sigma_r: complex
    pml: PmlSpec
    dipole: DipoleSpec
    mu_r: complex = 1.0
    eps_r: complex = 1.0
    magnetic_current: object = None   # callable pts -> z-component, or None

    def __post_init__(self):
        if complex(self.sigma_r).imag < 0:
            raise ValueError("passive sheets require Im(sigma_r) >= 0")


@dataclass
class ComplexSystem:
    """Condensed complex sparse system with its constraint handler."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    space: EdgeFESpace
    constraints: ConstraintSet


CHUNK_CELLS = 16384


def _volume_tables(space: EdgeFESpace, cids=None):
    """Geometry and physical bases at the standard quadrature points, batched."""
    mesh = space.mesh
    if cids is None:
        cids = space.active
    ranks = np.array([space.rank[c] for c in cids])
    phys, jac = cell_geometry(mesh, cids, REF.quad_pts)
    det = jacobian_det(jac)
    if det.min() <= 0:
        raise AssemblyError("nonpositive Jacobian during assembly")
    jinv_t = np.linalg.inv(jac).transpose(0, 1, 3, 2)
    n, p = det.shape
    vals = np.empty((n, p, N_DOFS_CELL, 2))
    curls = np.empty((n, p, N_DOFS_CELL))
    for oidx in np.unique(space.orient_idx[ranks]):
        sel = np.nonzero(space.orient_idx[ranks] == oidx)[0]
        vref, cref = REF.basis_at_quad(int(oidx))
        vals[sel] = np.einsum("npij,pbj->npbi", jinv_t[sel], vref)
        curls[sel] = cref[None, :, :] / det[sel][:, :, None]
    return ranks, phys, det, vals, curls


def iter_volume_tables(space: EdgeFESpace, cids=None, chunk: int = CHUNK_CELLS):
    """Chunked _volume_tables; bounds peak memory on large meshes."""
    if cids is None:
        cids = space.active
    for lo in range(0, len(cids), chunk):
        yield _volume_tables(space, cids[lo:lo + chunk])


def assemble_volume_boundary(space: EdgeFESpace, model: SheetModel) -> sp.csr_matrix:
    """Curl-curl and mass terms plus the rim impedance term, over all dofs."""
    w = REF.quad_wts
    mats = []
    for ranks, phys, det, vals, curls in iter_volume_tables(space):
        flat = phys.reshape(-1, 2)
        inv_mu, eps_eff = pml_mod.material_arrays(flat, model.mu_r, model.eps_r,
                                                  model.pml)
        inv_mu = inv_mu.reshape(det.shape)
        eps_eff = eps_eff.reshape(det.shape + (2, 2))
        wdet = w[None, :] * det
        local = np.einsum("np,npb,npd->nbd", wdet * inv_mu, curls, curls)
        local = local - np.einsum("np,npbi,npij,npdj->nbd", wdet + 0j, vals,
                                  eps_eff, vals)
        dofs = space.cell_dofs[ranks]
        rows = np.repeat(dofs, N_DOFS_CELL, axis=1).ravel()
        cols = np.tile(dofs, (1, N_DOFS_CELL)).ravel()
        mats.append(sp.coo_matrix((local.ravel(), (rows, cols)),
                                  shape=(space.n_dofs, space.n_dofs)).tocsr())

    impedance = complex(np.sqrt(complex(model.eps_r) / complex(model.mu_r)))
    te, we = gauss01(4)
    brows, bcols, bdata = [], [], []
    for face in boundary_faces(space.mesh):
        cid, ledge = face.owner, face.owner_edge
        ref = _edge_ref_points(ledge, te)
        _, jac = cell_geometry(space.mesh, [cid], ref)
        tau_ref = np.zeros(2)
        a, b = EDGE_CORNERS[ledge]
        tau_ref[:] = np.subtract(((0, 0), (1, 0), (1, 1), (0, 1))[b],
                                 ((0, 0), (1, 0), (1, 1), (0, 1))[a])
        dxdt = np.einsum("pij,j->pi", jac[0], tau_ref)
        speed = np.linalg.norm(dxdt, axis=1)
        that = dxdt / speed[:, None]
        bvals, _ = _basis_on_edge(space, cid, ledge, ref, jac[0])
        tang = np.einsum("pbi,pi->pb", bvals, that)
        fmat = -1j * impedance * np.einsum("p,pb,pd->bd", we * speed, tang, tang)
        gdofs = space.cell_dofs[space.rank[cid]]
        brows.append(np.repeat(gdofs, N_DOFS_CELL))
        bcols.append(np.tile(gdofs, N_DOFS_CELL))
        bdata.append(fmat.ravel())
    if bdata:
        mats.append(sp.coo_matrix(
            (np.concatenate(bdata), (np.concatenate(brows), np.concatenate(bcols))),
            shape=(space.n_dofs, space.n_dofs)))
    return sum(m.tocsr() for m in mats)


def _basis_on_edge(space, cid, ledge, ref_pts, jac):
    from .fespace import orientation_index
    vref, cref = REF.basis_at(orientation_index(space.mesh, cid), ref_pts)
    det = jacobian_det(jac[None, ...])[0]
    jinv_t = np.linalg.inv(jac).transpose(0, 2, 1)
    vals = np.einsum("pij,pbj->pbi", jinv_t, vref)
    curls = cref / det[:, None]
    return vals, curls


def assemble_interface(space: EdgeFESpace, model: SheetModel) -> sp.csr_matrix:
    """Sheet term -i int sigma_eff E_t conj(v_t) over leaf faces, full dof set."""
    if model.sigma_r == 0:
        return sp.csr_matrix((space.n_dofs, space.n_dofs), dtype=complex)
    te, we = gauss01(4)
    rows, cols, data = [], [], []
    for face in interface_faces(space.mesh):
        cid, ledge = face.owner, face.owner_edge
        ref = _edge_ref_points(ledge, te)
        phys, jac = cell_geometry(space.mesh, [cid], ref)
        bvals, _ = _basis_on_edge(space, cid, ledge, ref, jac[0])
        tang = bvals[:, :, 0]  # sheet tangent is e_x
        sigma_eff = pml_mod.sheet_arrays(phys[0], model.sigma_r, model.pml)
        fmat = -1j * np.einsum("p,pb,pd->bd", we * face.length * sigma_eff, tang, tang)
        gdofs = space.cell_dofs[space.rank[cid]]
        rows.append(np.repeat(gdofs, N_DOFS_CELL))
        cols.append(np.tile(gdofs, N_DOFS_CELL))
        data.append(fmat.ravel())
    return sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(space.n_dofs, space.n_dofs)).tocsr()


def assemble_dipole_rhs(space: EdgeFESpace, model: SheetModel) -> np.ndarray:
    """F_i = i int j_reg . conj(phi_i), plus the optional magnetic-current term."""
    dip = model.dipole
    cids = cells_intersecting_disk(space.mesh, dip.position, dip.radius)
    if not cids:
        raise AssemblyError("no cells near the dipole; mesh does not cover it")
    from .mesh import cell_diameters
    dmax = cell_diameters(space.mesh, cids).max()
    if dmax > 0.5 * dip.radius:
        raise AssemblyError(
            f"dipole regularization unresolved: cell diameter {dmax:.3g} exceeds "
            f"half the radius {dip.radius:.3g}; refine the mesh near the dipole")
    rhs = np.zeros(space.n_dofs, dtype=complex)
    ranks, phys, det, vals, curls = _volume_tables(space, cids)
    w = REF.quad_wts
    dens = dip.density(phys.reshape(-1, 2)).reshape(det.shape)
    local = 1j * np.einsum("np,npb->nb", w[None, :] * det * dens, vals[:, :, :, 1])
    for i, r in enumerate(ranks):
        rhs[space.cell_dofs[r]] += local[i]
    if model.magnetic_current is not None:
        ranks, phys, det, vals, curls = _volume_tables(space)
        flat = phys.reshape(-1, 2)
        inv_mu, _ = pml_mod.material_arrays(flat, model.mu_r, model.eps_r, model.pml)
        mz = np.asarray(model.magnetic_current(flat), dtype=complex)
        coef = (inv_mu * mz).reshape(det.shape)
        local = -np.einsum("np,npb->nb", w[None, :] * det * coef, curls)
        for i, r in enumerate(ranks):
            rhs[space.cell_dofs[r]] += local[i]
    return rhs


def assemble_dual_rhs(space: EdgeFESpace, primal: FieldSolution, weight) -> np.ndarray:
    """Derivative of the goal functional int w |curl E|^2 at the discrete primal.

    Component i is int w (curl phi_i) conj(curl E_H); linear in conj(E_H).
    """
    w_q = REF.quad_wts
    rhs = np.zeros(space.n_dofs, dtype=complex)
    for ranks, phys, det, vals, curls in iter_volume_tables(space):
        wvals = weight(phys.reshape(-1, 2)).reshape(det.shape)
        local_coeffs = primal.coeffs[space.cell_dofs[ranks]]
        curl_e = np.einsum("nb,npb->np", local_coeffs, curls)
        local = np.einsum("np,npb->nb", w_q[None, :] * det * wvals * np.conj(curl_e),
                          curls)
        np.add.at(rhs, space.cell_dofs[ranks].ravel(), local.ravel())
    return rhs


def condense(matrix: sp.spmatrix, rhs: np.ndarray, constraints: ConstraintSet):
    C = constraints.matrix
    return (C.T @ (matrix @ C)).tocsr(), C.T @ rhs


def assemble_system(space: EdgeFESpace, model: SheetModel,
                    constraints: ConstraintSet | None = None) -> ComplexSystem:
    """Full condensed system for the given sheet model."""
    from .fespace import build_constraints
    cs = constraints if constraints is not None else build_constraints(space)
    full = assemble_volume_boundary(space, model) + assemble_interface(space, model)
    rhs = assemble_dipole_rhs(space, model)
    mat_c, rhs_c = condense(full, rhs, cs)
    return ComplexSystem(matrix=mat_c, rhs=rhs_c, space=space, constraints=cs)
