"""Direct sparse solution of the condensed complex systems.

A sparse LU factorization is the production path; one factorization serves
the primal and the adjoint solve because the assembled matrix is complex
symmetric (M = M^T), so the adjoint pairing reduces to a conjugated solve
with the same factors.  An unpreconditioned GMRES fallback exists only for
memory-constrained smoke tests and is excluded from acceptance runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import ComplexSystem
from .fespace import FieldSolution

RESIDUAL_TOL = 1e-10


class SolverError(Exception):
    pass


@dataclass
class Factorization:
    """Reusable LU factors of one condensed matrix."""

    lu: object
    matrix: sp.csr_matrix

    def solve(self, b: np.ndarray, refine_steps: int = 8) -> np.ndarray:
        x = self.lu.solve(b)
        norm_b = np.linalg.norm(b)
        if norm_b == 0:
            return np.zeros_like(b)
        best_x, best_res = x, np.linalg.norm(b - self.matrix @ x)
        for _ in range(refine_steps):
            if best_res <= 0.1 * RESIDUAL_TOL * norm_b:
                break
            x = best_x + self.lu.solve(b - self.matrix @ best_x)
            res = np.linalg.norm(b - self.matrix @ x)
            if res >= best_res:
                break  # refinement stalled
            best_x, best_res = x, res
        return best_x


def factorize(matrix: sp.spmatrix, safe: bool = False) -> Factorization:
    csc = sp.csc_matrix(matrix, dtype=complex)
    if safe:
        kwargs = {}
    else:
        # fill-reducing ordering for the symmetric sparsity pattern; small pivot
        # threshold keeps the ordering, iterative refinement restores accuracy
        kwargs = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.01,
                      options=dict(SymmetricMode=True))
    try:
        lu = spla.splu(csc, **kwargs)
    except RuntimeError as exc:
        raise SolverError(
            f"sparse LU failed: {exc} (n={csc.shape[0]}, nnz={csc.nnz})") from exc
    return Factorization(lu=lu, matrix=csc.tocsr())


def _residual(matrix, x, b) -> float:
    norm_b = np.linalg.norm(b)
    if norm_b == 0:
        return 0.0
    return float(np.linalg.norm(b - matrix @ x) / norm_b)


def _direct_solve(matrix, b, factor: Factorization | None):
    """Fast factorization first; refactorize conservatively if accuracy stalls."""
    fac = factor if factor is not None else factorize(matrix)
    x = fac.solve(b)
    res = _residual(matrix, x, b)
    if res > RESIDUAL_TOL:
        x = factorize(matrix, safe=True).solve(b)
        res = _residual(matrix, x, b)
    if res > RESIDUAL_TOL:
        raise SolverError(f"direct solve residual {res:.3e} exceeds {RESIDUAL_TOL}")
    return x


def solve(system: ComplexSystem, factor: Factorization | None = None,
          method: str = "direct") -> FieldSolution:
    """Primal solve; constraints are redistributed onto the returned field."""
    if method == "iterative":
        x, info = spla.gmres(system.matrix, system.rhs, rtol=1e-10, maxiter=20000)
        if info != 0:
            raise SolverError(f"gmres did not converge (info={info})")
        if _residual(system.matrix, x, system.rhs) > 1e-8:
            raise SolverError("iterative fallback residual too large")
    elif method == "direct":
        x = _direct_solve(system.matrix, system.rhs, factor)
    else:
        raise ValueError(f"unknown method {method!r}")
    full = system.constraints.distribute(x)
    return FieldSolution(space=system.space, coeffs=full)


def solve_adjoint(system: ComplexSystem, dual_rhs: np.ndarray,
                  factor: Factorization | None = None) -> FieldSolution:
    """Adjoint solve: the returned Z satisfies A(phi_i, Z) = dual_rhs_i.

    dual_rhs is given over the full dof set; with M complex symmetric the
    defining relation reads M conj(Z) = g, so one conjugated direct solve
    with the primal factors suffices.
    """
    g = system.constraints.matrix.T @ np.asarray(dual_rhs, dtype=complex)
    w = _direct_solve(system.matrix, g, factor)
    z = np.conj(w)
    return FieldSolution(space=system.space, coeffs=system.constraints.distribute(z))
