"""Interpolation, scaled displacement extraction, strains and stresses.

The piecewise-affine interpolation splits each dual cell into 24 simplices
spanned by the cell center, a face center and a face edge; center and face
values are the corner means, which reproduces affine fields exactly and
makes the cell value equal to the cell average.  Its in-plane average over a
cell cross-section is affine in the vertical coordinate, so the vertical
integrals defining the scaled displacements u (in-plane, / h^2) and
v (out-of-plane, / h) reduce to an exact trapezoid over the atomic layers.

Per cell, the deformation gradient is compared against its best rotation
(polar projection of (1/2) A CORNERS^T); the rotation-corrected strain and
the scaled stresses are the quantities whose vertical averages and first
moments reproduce the limiting plate moduli, which moment_diagnostics
measures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lattice import BOTTOM, CORNERS, SINGLE, TOP, LatticeGrid, NodeField
from .discrete_calculus import discrete_gradient
from .potentials import CellModel


class OutOfDomainError(ValueError):
    pass


class DegenerateCellError(RuntimeError):
    pass


# -- plane fields -----------------------------------------------------------

@dataclass
class PlaneField:
    """Values on the uniform in-plane dual grid; axis 0 is x1, axis 1 is x2.

    Point (i, j) sits at (origin[0] + i*eps, origin[1] + j*eps).  Scalar
    fields have shape (nx, ny), 2-vector fields (nx, ny, 2).  Derivative
    buffers are filled on demand with second-order central differences.
    """

    origin: tuple
    eps: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def shape(self):
        return self.values.shape[:2]

    def points(self) -> np.ndarray:
        nx, ny = self.shape
        x = self.origin[0] + self.eps * np.arange(nx)
        y = self.origin[1] + self.eps * np.arange(ny)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def grad(self) -> np.ndarray:
        """(nx, ny, ..., 2) array of in-plane first derivatives."""
        g = np.gradient(self.values, self.eps, axis=(0, 1))
        return np.stack(g, axis=-1)

    def hess(self) -> np.ndarray:
        """(nx, ny, 2, 2) second derivatives of a scalar field.

        Diagonal entries use the compact three-point stencil; the mixed
        derivative is the symmetrized cross stencil (the two difference
        orders commute exactly away from the array edge).
        """
        v = self.values
        if v.ndim != 2:
            raise ValueError("hess is defined for scalar plane fields")
        e2 = self.eps * self.eps
        H = np.zeros(v.shape + (2, 2))
        d11 = np.zeros_like(v)
        d11[1:-1, :] = (v[2:, :] - 2 * v[1:-1, :] + v[:-2, :]) / e2
        d22 = np.zeros_like(v)
        d22[:, 1:-1] = (v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]) / e2
        g = self.grad()
        d12 = np.gradient(g[..., 0], self.eps, axis=1)
        d21 = np.gradient(g[..., 1], self.eps, axis=0)
        H[..., 0, 0] = d11
        H[..., 1, 1] = d22
        H[..., 0, 1] = H[..., 1, 0] = 0.5 * (d12 + d21)
        return H

    def l2_norm(self, mask: Optional[np.ndarray] = None) -> float:
        w = self.values if mask is None else np.where(
            mask.reshape(mask.shape + (1,) * (self.values.ndim - 2)), self.values, 0.0)
        return float(np.sqrt((w ** 2).sum() * self.eps ** 2))


def plane_grid_of(grid: LatticeGrid) -> tuple:
    origin, shape = grid.inplane_cell_grid()
    return origin, shape


# -- displacement extraction --------------------------------------------------

def extract_displacements(y: NodeField, grid: LatticeGrid) -> tuple:
    """Scaled in-plane and out-of-plane displacement fields (u, v).

    At each in-plane dual-cell center the vertical integral of the
    interpolation's in-plane average is the layer trapezoid of the four-node
    footprint means; u = (integral' - x') / h^2 and v = integral_3 / h.
    """
    nz, ny, nx = grid.nz, grid.ny, grid.nx
    V = y.values.reshape(nz, ny, nx, 3)
    P = 0.25 * (V[:, :-1, :-1] + V[:, :-1, 1:] + V[:, 1:, :-1] + V[:, 1:, 1:])
    w = np.ones(nz)
    w[0] = w[-1] = 0.5
    integral = np.tensordot(w, P, axes=(0, 0)) / (grid.nu - 1)   # (ncy, ncx, 3)
    integral = integral.transpose(1, 0, 2)                        # (ncx, ncy, 3)

    origin, _ = grid.inplane_cell_grid()
    xs = origin[0] + grid.eps * np.arange(grid.ncx)
    ys = origin[1] + grid.eps * np.arange(grid.ncy)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    uvals = (integral[..., :2] - np.stack([X, Y], axis=-1)) / grid.h**2
    vvals = integral[..., 2] / grid.h
    u = PlaneField(origin=origin, eps=grid.eps, values=uvals)
    v = PlaneField(origin=origin, eps=grid.eps, values=vvals)
    return u, v


def inplane_interior_cell_mask(grid: LatticeGrid) -> np.ndarray:
    """(ncx, ncy) mask of in-plane dual cells whose footprint lies in S."""
    m = grid.cell_interior_mask.reshape(grid.ncz, grid.ncy, grid.ncx)
    return m.all(axis=0).T


# -- 24-simplex interpolation -------------------------------------------------

_FACE_CORNERS = {
    (0, -1): (0, 3, 7, 4), (0, 1): (1, 2, 6, 5),
    (1, -1): (0, 1, 5, 4), (1, 1): (3, 2, 6, 7),
    (2, -1): (0, 1, 2, 3), (2, 1): (4, 5, 6, 7),
}

# Face edges ordered so that consecutive corners share an edge of the face.
_FACE_EDGES = {
    key: [(quad[a], quad[(a + 1) % 4]) for a in range(4)]
    for key, quad in _FACE_CORNERS.items()
}


class CubeInterpolant:
    """Piecewise-affine interpolation of 8 corner values on [-1/2, 1/2]^3."""

    def __init__(self, corner_values: np.ndarray):
        self.cv = np.asarray(corner_values, dtype=float)  # (8, k) or (8,)
        self.center = self.cv.mean(axis=0)
        self.face_values = {
            key: self.cv[list(quad)].mean(axis=0)
            for key, quad in _FACE_CORNERS.items()
        }

    def value(self, s: np.ndarray):
        """Evaluate at a single local point s in the closed cube."""
        s = np.asarray(s, dtype=float)
        order = np.argsort(-np.abs(s), kind="stable")
        d1, d2 = int(order[0]), int(order[1])
        s1 = 1 if s[d1] >= 0 else -1
        s2 = 1 if s[d2] >= 0 else -1
        face = (d1, s1)
        fc = np.zeros(3)
        fc[d1] = 0.5 * s1
        ca = np.zeros(3)
        ca[d1] = 0.5 * s1
        ca[d2] = 0.5 * s2
        cb = ca.copy()
        d3 = 3 - d1 - d2
        ca[d3] = -0.5
        cb[d3] = 0.5
        ia = self._corner_index(ca)
        ib = self._corner_index(cb)
        A = np.stack([fc, ca, cb], axis=1)
        lam = np.linalg.solve(A, s)
        lam0 = 1.0 - lam.sum()
        return (lam0 * self.center + lam[0] * self.face_values[face]
                + lam[1] * self.cv[ia] + lam[2] * self.cv[ib])

    @staticmethod
    def _corner_index(c: np.ndarray) -> int:
        for l in range(8):
            if np.all(np.abs(CORNERS[:, l] - c) < 1e-12):
                return l
        raise RuntimeError("not a cube corner")

    def simplices(self):
        """All 24 (vertices (4,3), values (4,k)) pieces of the interpolation."""
        out = []
        for key, edges in _FACE_EDGES.items():
            d1, s1 = key
            fc = np.zeros(3)
            fc[d1] = 0.5 * s1
            fval = self.face_values[key]
            for (ia, ib) in edges:
                verts = np.stack([np.zeros(3), fc, CORNERS[:, ia], CORNERS[:, ib]])
                vals = np.stack([self.center, fval, self.cv[ia], self.cv[ib]])
                out.append((verts, vals))
        return out


def affine_interpolate_at(w: NodeField, point: np.ndarray) -> np.ndarray:
    """Evaluate the piecewise-affine interpolation at a rescaled point."""
    grid = w.grid
    point = np.asarray(point, dtype=float)
    eps, nu = grid.eps, grid.nu
    fx = point[0] / eps - grid.i0
    fy = point[1] / eps - grid.j0
    fz = point[2] * (nu - 1)
    ci = int(np.clip(np.floor(fx), 0, grid.ncx - 1))
    cj = int(np.clip(np.floor(fy), 0, grid.ncy - 1))
    ck = int(np.clip(np.floor(fz), 0, grid.ncz - 1))
    s = np.array([fx - ci - 0.5, fy - cj - 0.5, fz - ck - 0.5])
    if np.any(np.abs(s) > 0.5 + 1e-9):
        raise OutOfDomainError(f"point {point} outside the interpolated region")
    s = np.clip(s, -0.5, 0.5)
    cell = (ck * grid.ncy + cj) * grid.ncx + ci
    interp = CubeInterpolant(w.values[grid.cell_nodes[cell]])
    return interp.value(s)


# -- rotations, strain and stress ---------------------------------------------

def cell_rotation(A: np.ndarray) -> np.ndarray:
    """Polar rotation factor of F = (1/2) A CORNERS^T (det F must be > 0)."""
    A = np.asarray(A, dtype=float)
    F = 0.5 * A @ CORNERS.T
    if np.linalg.det(F) <= 0:
        raise DegenerateCellError("deformation gradient has nonpositive determinant")
    U, _, Vt = np.linalg.svd(F)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] = -U[:, -1]
        R = U @ Vt
    return R


def _batch_rotations(A: np.ndarray) -> tuple:
    F = 0.5 * np.einsum("cij,kj->cik", A, CORNERS)
    det = np.linalg.det(F)
    valid = det > 0
    R = np.tile(np.eye(3), (A.shape[0], 1, 1))
    if valid.any():
        U, _, Vt = np.linalg.svd(F[valid])
        Rv = U @ Vt
        neg = np.linalg.det(Rv) < 0
        if neg.any():
            U[neg, :, -1] = -U[neg, :, -1]
            Rv = U @ Vt
        R[valid] = Rv
    return R, valid


@dataclass
class CellStrain:
    """Per-cell rotation, rotation-corrected strain and scaled stresses."""

    grid: LatticeGrid
    R: np.ndarray           # (n_cells, 3, 3)
    Gbar: np.ndarray        # (n_cells, 3, 8)
    J: np.ndarray           # (n_cells, 3, 8)
    J1: np.ndarray          # (n_cells, 3, 4), meaningful on lower-surface cells
    J2: np.ndarray          # (n_cells, 3, 4), meaningful on upper-surface cells
    valid: np.ndarray       # (n_cells,) False for degenerate cells
    n_degenerate: int = 0


def strain_and_stress(y: NodeField, model: CellModel, grid: LatticeGrid) -> CellStrain:
    """Rotation field, scaled strain h^-2(R^T grad y - CORNERS) and stresses.

    The stress is the energy derivative at the rotation-corrected gradient,
    scaled by h^-2; surface stresses live on the tagged boundary layers.
    Degenerate cells are excluded from the diagnostics and counted.
    """
    A = discrete_gradient(y).values
    R, valid = _batch_rotations(A)
    h2 = grid.h ** 2
    RtA = np.einsum("cji,cjk->cik", R, A)
    Gbar = (RtA - CORNERS) / h2
    J = model.dw_cell(RtA) / h2
    J1 = model.dw_surf(RtA[:, :, 0:4]) / h2
    J2 = model.dw_surf(RtA[:, :, 4:8]) / h2
    zero = ~valid
    for arr in (Gbar, J, J1, J2):
        arr[zero] = 0.0
    return CellStrain(grid=grid, R=R, Gbar=Gbar, J=J, J1=J1, J2=J2,
                      valid=valid, n_degenerate=int(zero.sum()))


def moment_diagnostics(strain: CellStrain, consts, u: PlaneField,
                       v: PlaneField) -> dict:
    """Compare lattice stress averages/moments against their plate-limit values.

    Left sides are vertical averages and first moments of the per-cell
    stresses; right sides are the relaxed/surface form derivatives evaluated
    on the membrane and bending strains of (u, v).  Reports L2(S)
    discrepancies plus reference magnitudes.
    """
    from . import vk_limit as _vk

    grid = strain.grid
    nu = grid.nu
    ncz, ncy, ncx = grid.ncz, grid.ncy, grid.ncx
    layer = grid.cell_layer.reshape(ncz, ncy, ncx)

    J = strain.J.reshape(ncz, ncy, ncx, 3, 8)
    centers = (np.arange(ncz) + 0.5) / (nu - 1)
    avg = J.sum(axis=0) / (nu - 1)
    moment = np.tensordot(centers - 0.5, J, axes=(0, 0)) / (nu - 1)

    lower = (layer == BOTTOM) | (layer == SINGLE)
    upper = (layer == TOP) | (layer == SINGLE)
    J1 = strain.J1.reshape(ncz, ncy, ncx, 3, 4)
    J2 = strain.J2.reshape(ncz, ncy, ncx, 3, 4)
    j1 = (J1 * lower[..., None, None]).sum(axis=0)
    j2 = (J2 * upper[..., None, None]).sum(axis=0)
    surf_avg = (j1 + j2) / (nu - 1)
    surf_moment = (j2 - j1) / (2.0 * (nu - 1))

    # (ncy, ncx, ...) -> (ncx, ncy, ...) to match plane-field indexing
    avg = avg.transpose(1, 0, 2, 3)
    moment = moment.transpose(1, 0, 2, 3)
    surf_avg = surf_avg.transpose(1, 0, 2, 3)
    surf_moment = surf_moment.transpose(1, 0, 2, 3)

    g1, g2, d12v = _vk.strain_terms(u, v)
    rhs = _vk.limit_stress_moments(consts, g1, g2, d12v)

    mask = inplane_interior_cell_mask(grid)
    eps = grid.eps

    def l2(x):
        x = np.where(mask[(...,) + (None,) * (x.ndim - 2)], x, 0.0)
        return float(np.sqrt((x ** 2).sum() * eps ** 2))

    report = {
        "nu": None if consts.nu_is_infinite else nu,
        "n_degenerate": strain.n_degenerate,
        "avg_discrepancy_l2": l2(avg - rhs["avg"]),
        "avg_norm_l2": l2(rhs["avg"]),
        "moment_discrepancy_l2": l2(moment - rhs["moment"]),
        "moment_norm_l2": l2(rhs["moment"]),
    }
    if not consts.nu_is_infinite:
        report.update({
            "surf_avg_discrepancy_l2": l2(surf_avg - rhs["surf_avg"]),
            "surf_avg_norm_l2": l2(rhs["surf_avg"]),
            "surf_moment_discrepancy_l2": l2(surf_moment - rhs["surf_moment"]),
            "surf_moment_norm_l2": l2(rhs["surf_moment"]),
        })
    return report
