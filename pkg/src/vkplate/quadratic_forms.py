"""Quadratic forms of infinitesimal elasticity and their vertical relaxation.

Q_cell is the Hessian form of the cell energy at the reference corner matrix,
Q_surf the analogue for the surface energy.  The relaxed form minimizes
Q_cell over vertical-stretch corrections (b x e3) CORNERS; the minimizer
b(A) is linear in A and characterized by orthogonality of the relaxed
gradient to those correction directions.  The relaxed form restricted to
hatted 2x2 arguments is the plate modulus form of the classical von Karman
energy.

Flattening convention, shared package-wide: a 3xN matrix is flattened
column-major (Fortran order), index = row + 3*column.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from .lattice import CORNERS
from .potentials import (CELL_DIAGONALS, CELL_EDGES, DIAGONAL_WEIGHT,
                         EDGE_WEIGHT, FACE_DIAGONALS, FACE_EDGES,
                         SURF_DIAGONAL_WEIGHT, SURF_EDGE_WEIGHT, CellModel)

FD_HESSIAN_STEP = 1e-4
FD_GRADIENT_STEP = 1e-5


class HessianError(RuntimeError):
    """Numerical Hessian failed its symmetry check."""


class CoercivityError(RuntimeError):
    """The vertical-stretch block of the cell form is not positive definite."""


def vec(A: np.ndarray) -> np.ndarray:
    """Column-major flattening of (..., 3, n) matrices."""
    A = np.asarray(A, dtype=float)
    return A.transpose(*range(A.ndim - 2), -1, -2).reshape(*A.shape[:-2], -1)


def unvec(x: np.ndarray, ncols: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x.reshape(*x.shape[:-1], ncols, 3).transpose(*range(x.ndim - 1), -1, -2)


@dataclass
class QuadForm:
    """Symmetric bilinear form on 3x(dim/3) matrices, stored densely."""

    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (self.dim, self.dim):
            raise ValueError("matrix shape does not match dim")

    @property
    def ncols(self) -> int:
        return self.dim // 3

    def value(self, A: np.ndarray) -> np.ndarray:
        v = vec(A)
        return np.einsum("...a,ab,...b->...", v, self.matrix, v)

    def pair(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Bilinear pairing (the second-derivative pairing of the energy)."""
        return np.einsum("...a,ab,...b->...", vec(A), self.matrix, vec(B))

    def dq(self, A: np.ndarray) -> np.ndarray:
        """Gradient of the quadratic form at A, as a matrix: 2 * M vec(A)."""
        return unvec(2.0 * vec(A) @ self.matrix.T, self.ncols)

    def check_invariants(self, tol_sym: float = 1e-12, tol_psd: float = 1e-10):
        scale = np.abs(self.matrix).max()
        asym = np.abs(self.matrix - self.matrix.T).max()
        if asym > tol_sym * max(scale, 1.0):
            raise HessianError(f"form not symmetric: {asym:.3e}")
        w = eigh(self.matrix, eigvals_only=True)
        if w.min() < -tol_psd * max(scale, 1.0):
            raise HessianError(f"form not positive semidefinite: {w.min():.3e}")


def _fd_hessian_matrixfun(f, ncols: int, step: float) -> np.ndarray:
    """FD Hessian of f: (3, ncols) -> scalar at the reference corners, flat basis."""
    x0 = vec(CORNERS[:, :ncols])
    n = 3 * ncols
    eye = np.eye(n)
    # One batched energy call for all four-point stencils of the (a, b) pairs.
    ia, ib = np.triu_indices(n)
    pts = np.stack([
        x0 + step * (eye[ia] + eye[ib]),
        x0 + step * (eye[ia] - eye[ib]),
        x0 - step * (eye[ia] - eye[ib]),
        x0 - step * (eye[ia] + eye[ib]),
    ])                                                   # (4, npairs, n)
    w = f(unvec(pts, ncols))
    vals = (w[0] - w[1] - w[2] + w[3]) / (4.0 * step * step)
    H = np.zeros((n, n))
    H[ia, ib] = vals
    H[ib, ia] = vals
    return H


def _analytic_bond_hessian(model: CellModel) -> tuple:
    """Exact Hessians at the reference for the harmonic spring model.

    Each bond at rest contributes a rank-one term 2*k*weight in the squeezed
    direction (unit bond vector dotted with the column difference).
    """
    def assemble(points, edges, diagonals, we, wd, scale, kn, knn):
        n = 3 * points.shape[1]
        H = np.zeros((n, n))
        for pairs, weight, k in ((edges, we, kn), (diagonals, wd, knn)):
            for (i, j) in pairs:
                d = points[:, i] - points[:, j]
                dhat = d / np.linalg.norm(d)
                u = np.zeros(n)
                u[3 * i:3 * i + 3] = dhat
                u[3 * j:3 * j + 3] = -dhat
                H += scale * weight * 2.0 * k * np.outer(u, u)
        return H

    kn = model.metadata["k_nn"]
    knn = model.metadata["k_nnn"]
    Hc = assemble(CORNERS, CELL_EDGES, CELL_DIAGONALS, EDGE_WEIGHT,
                  DIAGONAL_WEIGHT, 1.0, kn, knn)
    Hs = assemble(CORNERS[:, :4], FACE_EDGES, FACE_DIAGONALS, SURF_EDGE_WEIGHT,
                  SURF_DIAGONAL_WEIGHT, model.surf_extra, kn, knn)
    return Hc, Hs


def hessian_at_identity(model: CellModel, step: float = FD_HESSIAN_STEP) -> tuple:
    """(Q_cell, Q_surf) as quadratic forms at the reference configuration.

    For the harmonic spring model the exact bond assembly is used (and the
    finite-difference Hessian is cross-checked against it in the tests); for
    any other model the symmetrized central-difference Hessian is returned.
    """
    harmonic = (model.v_nn.kind == "harmonic" and model.v_nnn.kind == "harmonic"
                and {"k_nn", "k_nnn"} <= set(model.metadata))
    if harmonic:
        Hc, Hs = _analytic_bond_hessian(model)
    else:
        Hc = _fd_hessian_matrixfun(model.w_cell, 8, step)
        Hs = _fd_hessian_matrixfun(model.w_surf, 4, step)
        for H, name in ((Hc, "cell"), (Hs, "surf")):
            asym = np.abs(H - H.T).max()
            if asym > 1e-6 * max(np.abs(H).max(), 1.0):
                raise HessianError(f"{name} Hessian asymmetry {asym:.3e}")
        Hc = 0.5 * (Hc + Hc.T)
        Hs = 0.5 * (Hs + Hs.T)
    qc = QuadForm(dim=24, matrix=Hc)
    qs = QuadForm(dim=12, matrix=Hs)
    qc.check_invariants()
    qs.check_invariants()
    return qc, qs


def _stretch_directions() -> np.ndarray:
    """The three vertical-stretch correction directions (e_i x e3) CORNERS."""
    dirs = np.zeros((3, 3, 8))
    for i in range(3):
        dirs[i, i, :] = CORNERS[2, :]
    return dirs


@dataclass
class RelaxedForm:
    """Q_cell relaxed over vertical-stretch corrections, with its b-map."""

    base: QuadForm
    m3: np.ndarray          # 3x3 coupling of the stretch directions
    b_map: np.ndarray       # 3x24, A |-> argmin correction vector
    rel_matrix: np.ndarray  # 24x24 matrix of the relaxed form

    def b(self, A: np.ndarray) -> np.ndarray:
        return vec(A) @ self.b_map.T

    def correction(self, A: np.ndarray) -> np.ndarray:
        """A + (b(A) x e3) CORNERS, the relaxed evaluation point."""
        A = np.asarray(A, dtype=float)
        b = self.b(A)
        return A + b[..., :, None] * CORNERS[2, :]

    def value(self, A: np.ndarray) -> np.ndarray:
        v = vec(A)
        return np.einsum("...a,ab,...b->...", v, self.rel_matrix, v)

    def pair(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        return np.einsum("...a,ab,...b->...", vec(A), self.rel_matrix, vec(B))


def relax(cell: QuadForm) -> RelaxedForm:
    """Relax a 24-dimensional cell form over the vertical-stretch directions."""
    dirs = _stretch_directions()
    D = vec(dirs)                       # (3, 24)
    m3 = D @ cell.matrix @ D.T
    m3 = 0.5 * (m3 + m3.T)
    scale = max(np.abs(np.diag(m3)).max(), 1e-300)
    w = eigh(m3, eigvals_only=True)
    if w.min() <= 1e-10 * scale:
        raise CoercivityError(
            f"stretch block not positive definite (min eig {w.min():.3e}); "
            "the model violates coercivity"
        )
    factor = cho_factor(m3)
    b_map = -cho_solve(factor, D @ cell.matrix)      # (3, 24)
    P = np.eye(cell.dim) + D.T @ b_map               # vec(A) -> vec(relaxed A)
    rel = P.T @ cell.matrix @ P
    rel = 0.5 * (rel + rel.T)
    return RelaxedForm(base=cell, m3=m3, b_map=b_map, rel_matrix=rel)


def dq_rel(relaxed: RelaxedForm, A: np.ndarray) -> np.ndarray:
    """Gradient of the relaxed form at A (a 3x8 matrix, or a stack of them).

    Equals the base form's gradient at the relaxed point, which is
    orthogonal to every vertical-stretch direction.
    """
    return relaxed.base.dq(relaxed.correction(A))


def relaxed_via_submatrix_check(relaxed: RelaxedForm, F: np.ndarray,
                                A: np.ndarray, tol_pre: float = 1e-8,
                                tol: float = 1e-8) -> tuple:
    """Check that the relaxed gradient only sees the upper-left 2x2 of F.

    If DQ_cell(F Z + A) is orthogonal to the stretch directions, then
    DQ_rel(F''^ Z + A) equals it, F'' being the upper-left 2x2 submatrix.
    Returns (status, residual) with status in {"ok", "failed",
    "not_applicable"}; a failed precondition is reported, not an error.
    """
    F = np.asarray(F, dtype=float)
    A = np.asarray(A, dtype=float)
    X = F @ CORNERS + A
    G = relaxed.base.dq(X)
    dirs = _stretch_directions()
    scale = 1.0 + float(np.abs(G).max())
    ortho = max(abs(float(np.tensordot(G, d))) for d in dirs)
    if ortho > tol_pre * scale:
        return "not_applicable", ortho
    Fhat = np.zeros((3, 3))
    Fhat[:2, :2] = F[:2, :2]
    G_rel = dq_rel(relaxed, Fhat @ CORNERS + A)
    resid = float(np.abs(G_rel - G).max())
    return ("ok" if resid <= tol * scale else "failed"), resid


def induced_plane_form(relaxed: RelaxedForm) -> np.ndarray:
    """Matrix of the induced 2x2 form in the basis (e11, e22, e12+e21).

    This is the quadratic form entering the limiting plate equations; its
    value on a symmetric 2x2 matrix G is c' M c with c = (G11, G22, G12).
    """
    basis = [np.array([[1.0, 0.0], [0.0, 0.0]]),
             np.array([[0.0, 0.0], [0.0, 1.0]]),
             np.array([[0.0, 1.0], [1.0, 0.0]])]
    M = np.empty((3, 3))
    for a, Ea in enumerate(basis):
        Za = _hat2(Ea) @ CORNERS
        for b, Eb in enumerate(basis):
            Zb = _hat2(Eb) @ CORNERS
            M[a, b] = relaxed.pair(Za, Zb)
    return 0.5 * (M + M.T)


def _hat2(G: np.ndarray) -> np.ndarray:
    out = np.zeros((3, 3))
    out[:2, :2] = G
    return out
