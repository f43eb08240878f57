"""Scaled reference lattices for thin atomistic plates.

The plate occupies S x [0, h] with interatomic distance eps and nu atomic
layers, h = (nu - 1) * eps.  All geometry here lives in *rescaled*
coordinates: in-plane positions stay on the eps-grid while the vertical
coordinate is stretched to [0, 1], so node levels are k / (nu - 1).  Dual
cells are the boxes between 8 neighboring nodes; their centers carry the
discrete gradients and the interaction energy.

Atoms outside S are clamped to the reference plate configuration.  The grid
keeps a two-cell-wide collar of such exterior nodes so that every stencil
touching S is complete; any clamped field is constant beyond one cell, so
two suffice for every operator in this package.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Corner offsets of the unit cube centered at 0, one column per corner.
# Column order is fixed package-wide: bottom face counterclockwise
# (--, +-, ++, -+) then the top face in the same in-plane order.
CORNERS = 0.5 * np.array(
    [
        [-1, 1, 1, -1, -1, 1, 1, -1],
        [-1, -1, 1, 1, -1, -1, 1, 1],
        [-1, -1, -1, -1, 1, 1, 1, 1],
    ],
    dtype=float,
)

# Integer (i, j, k) node offsets matching the columns of CORNERS.
_CORNER_OFFSETS = np.array(
    [
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ],
    dtype=np.int64,
)

COLLAR_CELLS = 2

# Layer tags for dual cells.
BULK, TOP, BOTTOM, SINGLE = 0, 1, 2, 3


class DomainError(ValueError):
    """Raised when the in-plane region cannot host a single dual cell."""


@dataclass(frozen=True)
class Domain:
    """In-plane region S: an axis-aligned rectangle or an eps-grid bitmap.

    For the bitmap form, ``mask[i, j]`` marks the in-plane lattice node
    ``((origin[0]+i)*eps, (origin[1]+j)*eps)`` as belonging to the closure
    of S.
    """

    kind: str  # "rect" | "mask"
    bounds: Optional[tuple] = None          # (x0, x1, y0, y1) for "rect"
    mask: Optional[np.ndarray] = None       # bool (ni, nj) for "mask"
    origin: tuple = (0, 0)                  # integer grid offset for "mask"

    @staticmethod
    def rect(x0: float, x1: float, y0: float, y1: float) -> "Domain":
        return Domain(kind="rect", bounds=(x0, x1, y0, y1))

    @staticmethod
    def unit_square() -> "Domain":
        return Domain.rect(0.0, 1.0, 0.0, 1.0)

    @staticmethod
    def from_mask(mask: np.ndarray, origin=(0, 0)) -> "Domain":
        return Domain(kind="mask", mask=np.asarray(mask, dtype=bool), origin=tuple(origin))

    def node_mask(self, eps: float):
        """Interior in-plane node flags on the covering index window.

        Returns (i0, j0, mask) where mask[i, j] says whether node
        ((i0+i)*eps, (j0+j)*eps) lies in the closure of S.
        """
        if self.kind == "rect":
            x0, x1, y0, y1 = self.bounds
            tol = 1e-9 * eps
            i0 = int(np.ceil(x0 / eps - tol))
            i1 = int(np.floor(x1 / eps + tol))
            j0 = int(np.ceil(y0 / eps - tol))
            j1 = int(np.floor(y1 / eps + tol))
            if i1 < i0 or j1 < j0:
                raise DomainError("rectangle contains no lattice points at this eps")
            m = np.ones((i1 - i0 + 1, j1 - j0 + 1), dtype=bool)
            return i0, j0, m
        if self.kind == "mask":
            if self.mask is None or not self.mask.any():
                raise DomainError("empty bitmap domain")
            return int(self.origin[0]), int(self.origin[1]), self.mask.copy()
        raise DomainError(f"unknown domain kind {self.kind!r}")


@dataclass(frozen=True)
class LatticeParams:
    """eps, layer count nu and the in-plane region; h = (nu-1)*eps."""

    eps: float
    nu: int
    domain: Domain

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.nu < 2:
            raise ValueError("nu must be at least 2")

    @property
    def h(self) -> float:
        return (self.nu - 1) * self.eps


class LatticeGrid:
    """Geometry and topology of the rescaled lattice plus its dual cells.

    Nodes live on a rectangular index window (interior region dilated by the
    clamped collar); both nodes and cells are indexed lexicographically by
    (level, j, i) so construction is deterministic.  Immutable after
    construction.

    Attributes
    ----------
    node_xyz : (n_nodes, 3) rescaled node coordinates
    interior_mask : (n_nodes,) True for nodes of the interior lattice
    cell_center : (n_cells, 3) rescaled dual-cell centers
    cell_nodes : (n_cells, 8) node index of each corner, in CORNERS order
    node_cells : (n_nodes, 8) cell for which this node is corner l, or -1
    cell_layer : (n_cells,) BULK/TOP/BOTTOM/SINGLE tag
    cell_interior_mask : (n_cells,) True if all 8 corners are interior
    """

    def __init__(self, params: LatticeParams):
        self.params = params
        eps, nu = params.eps, params.nu

        i0, j0, interior = params.domain.node_mask(eps)
        ni, nj = interior.shape
        c = COLLAR_CELLS
        # Rectangular window = interior bounding box dilated by the collar.
        self.nx = ni + 2 * c
        self.ny = nj + 2 * c
        self.nz = nu
        self.i0 = i0 - c
        self.j0 = j0 - c

        inplane_interior = np.zeros((self.nx, self.ny), dtype=bool)
        inplane_interior[c:c + ni, c:c + nj] = interior
        self._inplane_interior = inplane_interior

        ii = np.arange(self.nx) + self.i0
        jj = np.arange(self.ny) + self.j0
        kk = np.arange(self.nz)
        # Lexicographic by (x3, x2, x1): k slowest, then j, then i.
        K, J, I = np.meshgrid(kk, jj, ii, indexing="ij")
        self.node_xyz = np.stack(
            [I.ravel() * eps, J.ravel() * eps, K.ravel() / (nu - 1)], axis=1
        )
        self.interior_mask = np.broadcast_to(
            inplane_interior.T[None, :, :], (self.nz, self.ny, self.nx)
        ).ravel().copy()
        self.n_nodes = self.node_xyz.shape[0]

        # Dual cells over every complete 8-node stencil of the window.
        ncx, ncy, ncz = self.nx - 1, self.ny - 1, nu - 1
        self.ncx, self.ncy, self.ncz = ncx, ncy, ncz
        ci = np.arange(ncx)
        cj = np.arange(ncy)
        ck = np.arange(ncz)
        CK, CJ, CI = np.meshgrid(ck, cj, ci, indexing="ij")
        CI, CJ, CK = CI.ravel(), CJ.ravel(), CK.ravel()
        self.cell_center = np.stack(
            [
                (CI + self.i0 + 0.5) * eps,
                (CJ + self.j0 + 0.5) * eps,
                (CK + 0.5) / (nu - 1),
            ],
            axis=1,
        )
        self.n_cells = self.cell_center.shape[0]

        off = _CORNER_OFFSETS
        self.cell_nodes = np.empty((self.n_cells, 8), dtype=np.int64)
        for l in range(8):
            self.cell_nodes[:, l] = self._node_id(CI + off[l, 0], CJ + off[l, 1], CK + off[l, 2])

        if nu == 2:
            self.cell_layer = np.full(self.n_cells, SINGLE, dtype=np.int8)
        else:
            self.cell_layer = np.full(self.n_cells, BULK, dtype=np.int8)
            self.cell_layer[CK == 0] = BOTTOM
            self.cell_layer[CK == ncz - 1] = TOP

        self.cell_interior_mask = self.interior_mask[self.cell_nodes].all(axis=1)
        if not self.cell_interior_mask.any():
            raise DomainError("domain smaller than one dual cell at this resolution")

        # node_cells[n, l] = cell whose corner l is node n (or -1): the
        # gather table for the adjoint operator.
        self.node_cells = np.full((self.n_nodes, 8), -1, dtype=np.int64)
        cell_ids = np.arange(self.n_cells, dtype=np.int64)
        for l in range(8):
            self.node_cells[self.cell_nodes[:, l], l] = cell_ids

        self.node_xyz.setflags(write=False)
        self.interior_mask.setflags(write=False)
        self.cell_nodes.setflags(write=False)
        self.node_cells.setflags(write=False)
        self.cell_center.setflags(write=False)
        self.cell_layer.setflags(write=False)
        self.cell_interior_mask.setflags(write=False)

    def _node_id(self, i, j, k):
        return (np.asarray(k) * self.ny + np.asarray(j)) * self.nx + np.asarray(i)

    @property
    def eps(self) -> float:
        return self.params.eps

    @property
    def nu(self) -> int:
        return self.params.nu

    @property
    def h(self) -> float:
        return self.params.h

    @property
    def n_interior_nodes(self) -> int:
        return int(self.interior_mask.sum())

    @property
    def n_interior_cells(self) -> int:
        return int(self.cell_interior_mask.sum())

    def inplane_cell_grid(self):
        """Origin and shape of the in-plane dual grid (for plane fields)."""
        x0 = (self.i0 + 0.5) * self.eps
        y0 = (self.j0 + 0.5) * self.eps
        return (x0, y0), (self.ncx, self.ncy)

    def to_json_dict(self) -> dict:
        """Grid description for experiment provenance (masks RLE-encoded)."""
        p = self.params
        dom = {"kind": p.domain.kind}
        if p.domain.kind == "rect":
            dom["bounds"] = list(p.domain.bounds)
        else:
            dom["origin"] = list(p.domain.origin)
            dom["mask_rle"] = _rle(p.domain.mask.ravel())
            dom["mask_shape"] = list(p.domain.mask.shape)
        return {
            "eps": p.eps,
            "nu": p.nu,
            "h": p.h,
            "domain": dom,
            "collar_cells": COLLAR_CELLS,
            "n_nodes": self.n_nodes,
            "n_cells": self.n_cells,
            "n_interior_nodes": self.n_interior_nodes,
            "n_interior_cells": self.n_interior_cells,
            "interior_mask_rle": _rle(self.interior_mask),
        }

    def content_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _rle(bits) -> list:
    """Run-length encode a boolean sequence as [first_value, run0, run1, ...]."""
    bits = np.asarray(bits, dtype=bool)
    if bits.size == 0:
        return [0]
    edges = np.flatnonzero(np.diff(bits)) + 1
    runs = np.diff(np.concatenate([[0], edges, [bits.size]]))
    return [int(bits[0])] + [int(r) for r in runs]


@dataclass
class NodeField:
    """A 3-vector per lattice node (deformation, velocity, force)."""

    grid: LatticeGrid
    values: np.ndarray  # (n_nodes, 3)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_nodes, 3):
            raise ValueError(
                f"values shape {self.values.shape} does not match grid "
                f"({self.grid.n_nodes} nodes)"
            )

    def copy(self) -> "NodeField":
        return NodeField(self.grid, self.values.copy())


def build_lattice(params: LatticeParams) -> LatticeGrid:
    """Build the rescaled lattice with its dual cells and clamped collar."""
    return LatticeGrid(params)


def reference_deformation(grid: LatticeGrid) -> NodeField:
    """The flat plate: node (x', x3) deforms to (x', h*(x3 - 1/2))."""
    vals = grid.node_xyz.copy()
    vals[:, 2] = grid.h * (vals[:, 2] - 0.5)
    return NodeField(grid, vals)


def clamp(f: NodeField, grid: LatticeGrid) -> NodeField:
    """Overwrite values at exterior nodes with the reference deformation."""
    out = f.values.copy()
    ref = reference_deformation(grid).values
    ext = ~grid.interior_mask
    out[ext] = ref[ext]
    return NodeField(grid, out)
