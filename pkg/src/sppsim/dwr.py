"""Goal-oriented error indicators and marking for the adaptive loop.

The goal functional is the curl energy weighted by a cosine band around the
sheet.  Indicators follow the dual-weighted-residual recipe in mixed form:

    eta_Q = 1/2 | rho_Q(E_H, piZ - Z_H) + rho*_Q(Z_H, piE - E_H) |

with the primal and dual cell residuals evaluated variationally (no
integration by parts) and the unknown exact solutions replaced by patchwise
recoveries pi: on every clean 2x2 sibling patch a least-squares fit of an
order-3 edge field on the parent cell; irregular patches fall back to an
order-2 parent fit, which is cruder but safe.  Only the differences
(pi u - u) ever enter the indicators.

Marking combines the largest indicators by count with a forced band around
the sheet whose threshold tightens geometrically with the cycle number, so
the sheet neighborhood is refined unconditionally early on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import pml as pml_mod
from .assembly import SheetModel, _volume_tables, iter_volume_tables
from .fespace import (EDGE_CORNERS, REF, EdgeFESpace, FieldSolution,
                      _edge_ref_points, gauss01, orientation_index,
                      vector_monomials)
from .mesh import (Mesh, boundary_faces, cell_geometry, interface_faces,
                   jacobian_det)


class QuadData:
    """Per-cell geometry and field values at the standard quadrature points.

    Holds only small arrays (points, Jacobian determinants, complex field
    values/curls per registered solution); the basis tables are streamed in
    chunks and never retained.
    """

    def __init__(self, space: EdgeFESpace, sols: tuple):
        self.space = space
        n = len(space.active)
        p = len(REF.quad_wts)
        self.phys = np.empty((n, p, 2))
        self.det = np.empty((n, p))
        self.values = [np.empty((n, p, 2), dtype=complex) for _ in sols]
        self.curls = [np.empty((n, p), dtype=complex) for _ in sols]
        lo = 0
        for ranks, phys, det, vals, curls in iter_volume_tables(space):
            hi = lo + len(ranks)
            self.phys[lo:hi] = phys
            self.det[lo:hi] = det
            for k, sol in enumerate(sols):
                local = sol.coeffs[space.cell_dofs[ranks]]
                self.values[k][lo:hi] = np.einsum("nb,npbi->npi", local, vals)
                self.curls[k][lo:hi] = np.einsum("nb,npb->np", local, curls)
            lo = hi


@dataclass(frozen=True)
class WeightFunction:
    """cos^2 band profile of half-width d around the sheet."""

    half_width: float

    def __call__(self, pts) -> np.ndarray:
        y = np.asarray(pts, dtype=float)
        if y.ndim == 2:
            y = y[:, 1]
        out = np.zeros_like(y, dtype=float)
        band = np.abs(y) <= self.half_width
        out[band] = np.cos(0.5 * np.pi * y[band] / self.half_width) ** 2
        return out

    def at_y(self, y: float) -> float:
        return float(self(np.array([[0.0, y]]))[0])


def qoi(sol: FieldSolution, weight: WeightFunction) -> float:
    """Weighted curl energy int w |curl E|^2; nonnegative by construction."""
    space = sol.space
    total = 0.0
    for ranks, phys, det, _, curls in iter_volume_tables(space):
        w = weight(phys.reshape(-1, 2)).reshape(det.shape)
        local = sol.coeffs[space.cell_dofs[ranks]]
        curl_e = np.einsum("nb,npb->np", local, curls)
        total += float(np.einsum("np,p,np->", det * w, REF.quad_wts,
                                 np.abs(curl_e) ** 2))
    return total


def _active_descendants(mesh: Mesh, parent: int):
    """(cid, offset, scale) embeddings of active cells below one parent."""
    out = []
    stack = [(kid, 0.5 * np.array(off, dtype=float), 0.5)
             for kid, off in zip(mesh.cells[parent].children,
                                 ((0, 0), (1, 0), (1, 1), (0, 1)))]
    while stack:
        cid, offset, scale = stack.pop()
        cell = mesh.cells[cid]
        if cell.active:
            out.append((cid, offset, scale))
        else:
            for kid, off in zip(cell.children, ((0, 0), (1, 0), (1, 1), (0, 1))):
                stack.append((kid, offset + scale * 0.5 * np.array(off, dtype=float),
                              scale * 0.5))
    return out


_QUADRANTS = ((0, 0), (1, 0), (1, 1), (0, 1))


class PatchReconstruction:
    """Higher-order recovery on parent patches, used through differences only.

    Clean 2x2 patches are fitted in one batched normal-equation solve; the
    differences at the standard quadrature points are precomputed for every
    active cell.  Irregular patches loop through the generic path.
    """

    def __init__(self, sol: FieldSolution, space: EdgeFESpace, field_quad=None):
        self.sol = sol
        self.space = space
        mesh = space.mesh
        self._entry: dict[int, tuple | None] = {}
        self._rank = {cid: i for i, cid in enumerate(space.active)}
        if field_quad is None:
            qd = QuadData(space, (sol,))
            field_quad = (qd.values[0], qd.curls[0], qd.det)
        self._u_quad, self._uc_quad, self._det_quad = field_quad
        n, p = self._det_quad.shape
        self.dvals_quad = np.zeros((n, p, 2), dtype=complex)
        self.dcurls_quad = np.zeros((n, p), dtype=complex)

        clean_parents, other_parents = [], []
        seen = set()
        for cid in space.active:
            parent = mesh.cells[cid].parent
            if parent is None:
                self._entry[cid] = None  # no patch; difference vanishes
                continue
            if parent in seen:
                continue
            seen.add(parent)
            kids = mesh.cells[parent].children
            if all(mesh.cells[k].active for k in kids):
                clean_parents.append(parent)
            else:
                other_parents.append(parent)
        if clean_parents:
            self._fit_clean(clean_parents)
        for parent in other_parents:
            self._fit_generic(parent)

    # -- clean 2x2 patches, fully batched -----------------------------------

    def _fit_clean(self, parents: list[int]):
        mesh = self.space.mesh
        p = len(REF.quad_wts)
        ppts = np.concatenate([0.5 * np.asarray(off, dtype=float)[None, :]
                               + 0.5 * REF.quad_pts for off in _QUADRANTS])
        mono, mono_curl = vector_monomials(ppts, order=3)          # (4p, 24, 2)
        _, jac_p = cell_geometry(mesh, parents, ppts)
        det_p = jacobian_det(jac_p)
        kid_ranks = np.array([[self._rank[k] for k in mesh.cells[par].children]
                              for par in parents])
        u = self._u_quad[kid_ranks].reshape(len(parents), 4 * p, 2)
        det_c = self._det_quad[kid_ranks].reshape(len(parents), 4 * p)
        w2 = np.tile(REF.quad_wts, 4)[None, :] * det_c
        pulled = np.einsum("nkji,nkj->nki", jac_p, u)
        ata = np.einsum("nk,kmc,klc->nml", w2, mono, mono)
        atb = np.einsum("nk,kmc,nkc->nm", w2, mono, pulled)
        coeffs = np.linalg.solve(ata.astype(complex), atb[..., None])[..., 0]
        jinv_t = np.linalg.inv(jac_p).transpose(0, 1, 3, 2)
        hat = np.einsum("kmc,nm->nkc", mono, coeffs)
        pi_vals = np.einsum("nkij,nkj->nki", jinv_t, hat)
        pi_curls = np.einsum("km,nm->nk", mono_curl, coeffs) / det_p
        for ip, par in enumerate(parents):
            for q, kid in enumerate(mesh.cells[par].children):
                r = self._rank[kid]
                sl = slice(q * p, (q + 1) * p)
                self.dvals_quad[r] = pi_vals[ip, sl] - self._u_quad[r]
                self.dcurls_quad[r] = pi_curls[ip, sl] - self._uc_quad[r]
                off = 0.5 * np.asarray(_QUADRANTS[q], dtype=float)
                self._entry[kid] = (par, off, 0.5, coeffs[ip], 3)

    # -- irregular patches: order-2 fit over all active descendants ---------

    def _fit_generic(self, parent: int):
        mesh = self.space.mesh
        members = _active_descendants(mesh, parent)
        rows_a, rows_b = [], []
        pts = REF.quad_pts
        for cid, offset, scale in members:
            r = self._rank[cid]
            ppts = offset[None, :] + scale * pts
            _, jac_p = cell_geometry(mesh, [parent], ppts)
            pulled = np.einsum("pji,pj->pi", jac_p[0], self._u_quad[r])
            mono, _ = vector_monomials(ppts, order=2)
            wts = np.sqrt(REF.quad_wts * self._det_quad[r])
            rows_a.append(np.concatenate([mono[:, :, 0] * wts[:, None],
                                          mono[:, :, 1] * wts[:, None]], axis=0))
            rows_b.append(np.concatenate([pulled[:, 0] * wts, pulled[:, 1] * wts]))
        A = np.concatenate(rows_a, axis=0)
        b = np.concatenate(rows_b, axis=0)
        coeffs, *_ = np.linalg.lstsq(A.astype(complex), b, rcond=None)
        for cid, offset, scale in members:
            self._entry[cid] = (parent, offset, scale, coeffs, 2)
            r = self._rank[cid]
            dv, dc = self._diff_from_entry(self._entry[cid], cid, REF.quad_pts,
                                           self._u_quad[r], self._uc_quad[r])
            self.dvals_quad[r] = dv
            self.dcurls_quad[r] = dc

    def _diff_from_entry(self, entry, cid, ref_pts, u_vals, u_curls):
        parent, offset, scale, coeffs, order = entry
        mesh = self.space.mesh
        ppts = offset[None, :] + scale * np.asarray(ref_pts, dtype=float)
        mono, mono_curl = vector_monomials(ppts, order=order)
        _, jac_p = cell_geometry(mesh, [parent], ppts)
        det_p = jacobian_det(jac_p)[0]
        jinv_t = np.linalg.inv(jac_p[0]).transpose(0, 2, 1)
        hat = np.einsum("pmc,m->pc", mono, coeffs)
        pi_vals = np.einsum("pij,pj->pi", jinv_t, hat)
        pi_curls = (mono_curl @ coeffs) / det_p
        return pi_vals - u_vals, pi_curls - u_curls

    def diff(self, cid: int, ref_pts: np.ndarray):
        """(pi u - u) values and curls at reference points of an active cell."""
        entry = self._entry[cid]
        u_vals = self.sol.values(cid, ref_pts)
        u_curls = self.sol.curls(cid, ref_pts)
        if entry is None:
            return np.zeros_like(u_vals), np.zeros_like(u_curls)
        return self._diff_from_entry(entry, cid, ref_pts, u_vals, u_curls)


def reconstruct(sol: FieldSolution, space: EdgeFESpace,
                field_quad=None) -> PatchReconstruction:
    return PatchReconstruction(sol, space, field_quad=field_quad)


def _face_quadrature(mesh: Mesh, cid: int, ledge: int, n: int = 4):
    te, we = gauss01(n)
    ref = _edge_ref_points(ledge, te)
    phys, jac = cell_geometry(mesh, [cid], ref)
    a, b = EDGE_CORNERS[ledge]
    corners = np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    tau_ref = corners[b] - corners[a]
    dxdt = np.einsum("pij,j->pi", jac[0], tau_ref)
    speed = np.linalg.norm(dxdt, axis=1)
    return ref, phys[0], we * speed, dxdt / speed[:, None]


def _sheet_ref_points_at(mesh: Mesh, cid: int, xs: np.ndarray):
    from .fespace import sheet_edge_of
    ledge = sheet_edge_of(mesh, cid)
    cell = mesh.cells[cid]
    a, b = EDGE_CORNERS[ledge]
    xa = mesh.vertices[cell.verts[a], 0]
    xb = mesh.vertices[cell.verts[b], 0]
    t = (xs - xa) / (xb - xa)
    return _edge_ref_points(ledge, t)


def indicators(space: EdgeFESpace, model: SheetModel, E_H: FieldSolution,
               Z_H: FieldSolution, recon_E: PatchReconstruction,
               recon_Z: PatchReconstruction, weight: WeightFunction,
               geom=None) -> dict[int, float]:
    """Cell indicators eta_Q from the mixed primal/dual residual form.

    Only discrete quantities enter; the exact solutions never do.
    """
    mesh = space.mesh
    w_q = REF.quad_wts
    if geom is None:
        qd = QuadData(space, ())
        geom = (qd.phys, qd.det)
    phys, det = geom

    E_vals, E_curl = recon_E._u_quad, recon_E._uc_quad
    Z_vals, Z_curl = recon_Z._u_quad, recon_Z._uc_quad
    wz_vals, wz_curl = recon_Z.dvals_quad, recon_Z.dcurls_quad
    ve_vals, ve_curl = recon_E.dvals_quad, recon_E.dcurls_quad

    n = len(space.active)
    rho = np.empty(n, dtype=complex)
    rho_ast = np.empty(n, dtype=complex)
    chunk = 16384
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        flat = phys[sl].reshape(-1, 2)
        inv_mu, eps_eff = pml_mod.material_arrays(flat, model.mu_r, model.eps_r,
                                                  model.pml)
        inv_mu = inv_mu.reshape(det[sl].shape)
        eps_eff = eps_eff.reshape(det[sl].shape + (2, 2))
        wband = weight(flat).reshape(det[sl].shape)
        dens = model.dipole.density(flat).reshape(det[sl].shape)
        wdet = w_q[None, :] * det[sl]
        # primal residual: F(w chi_Q) - A(E_H, w chi_Q)
        r = 1j * np.einsum("np,np->n", wdet * dens, np.conj(wz_vals[sl, :, 1]))
        r -= np.einsum("np,np->n", wdet * inv_mu * E_curl[sl], np.conj(wz_curl[sl]))
        r += np.einsum("np,npi,npij,npj->n", wdet + 0j, np.conj(wz_vals[sl]),
                       eps_eff, E_vals[sl])
        rho[sl] = r
        # dual residual: D_E J(E_H)[v chi_Q] - A(v chi_Q, Z_H)
        ra = np.einsum("np,np->n", wdet * wband * ve_curl[sl], np.conj(E_curl[sl]))
        ra -= np.einsum("np,np->n", wdet * inv_mu * ve_curl[sl], np.conj(Z_curl[sl]))
        ra += np.einsum("np,npi,npij,npj->n", wdet + 0j, np.conj(Z_vals[sl]),
                        eps_eff, ve_vals[sl])
        rho_ast[sl] = ra

    rank_of = {cid: i for i, cid in enumerate(space.active)}
    # sheet faces: half of each face integral to either adjacent cell
    for face in interface_faces(mesh):
        ref, fphys, fw, _ = _face_quadrature(mesh, face.owner, face.owner_edge)
        sigma_eff = pml_mod.sheet_arrays(fphys, model.sigma_r, model.pml)
        for cid in (face.above, face.below):
            if cid is None:
                continue
            if cid == face.owner:
                cref = ref
            else:
                cref = _sheet_ref_points_at(mesh, cid, fphys[:, 0])
            e_t = E_H.values(cid, cref)[:, 0]
            z_t = Z_H.values(cid, cref)[:, 0]
            wz_t = recon_Z.diff(cid, cref)[0][:, 0]
            ve_t = recon_E.diff(cid, cref)[0][:, 0]
            share = 0.5
            contrib_p = 1j * share * np.sum(fw * sigma_eff * e_t * np.conj(wz_t))
            contrib_d = 1j * share * np.sum(fw * sigma_eff * ve_t * np.conj(z_t))
            i = rank_of[cid]
            rho[i] += contrib_p
            rho_ast[i] += contrib_d
    impedance = complex(np.sqrt(complex(model.eps_r) / complex(model.mu_r)))
    for face in boundary_faces(mesh):
        cid = face.owner
        ref, fphys, fw, that = _face_quadrature(mesh, cid, face.owner_edge)
        e_t = np.einsum("pi,pi->p", E_H.values(cid, ref), that)
        z_t = np.einsum("pi,pi->p", Z_H.values(cid, ref), that)
        wz_t = np.einsum("pi,pi->p", recon_Z.diff(cid, ref)[0], that)
        ve_t = np.einsum("pi,pi->p", recon_E.diff(cid, ref)[0], that)
        i = rank_of[cid]
        rho[i] += 1j * impedance * np.sum(fw * e_t * np.conj(wz_t))
        rho_ast[i] += 1j * impedance * np.sum(fw * ve_t * np.conj(z_t))

    eta = 0.5 * np.abs(rho + rho_ast)
    return {cid: float(eta[i]) for i, cid in enumerate(space.active)}


def mark(indicator_map: dict[int, float], mesh: Mesh, weight: WeightFunction,
         cycle: int, fraction: float = 0.15, level_cap: int = 12) -> list[int]:
    """Top cells by indicator plus the forced, geometrically tightening band."""
    if cycle < 1:
        raise ValueError("cycles are counted from 1")
    active = sorted(indicator_map)
    n_top = math.ceil(fraction * len(active))
    by_eta = sorted(active, key=lambda c: (-indicator_map[c], c))
    selected = set(by_eta[:n_top])
    centers = np.array([mesh.cell_corners(c).mean(axis=0) for c in active])
    wvals = weight(centers)
    wmax = wvals.max()
    if wmax > 0:
        threshold = 1.0 - 0.5 ** (cycle - 1)
        selected.update(c for c, w in zip(active, wvals) if w / wmax > threshold)
    return sorted(c for c in selected if mesh.cells[c].level < level_cap)
