"""Structured triangulations of the unit square and the L-shaped domain.

Cells are stored counterclockwise. Local edge ``i`` of a cell joins local
vertices ``i+1`` and ``i+2`` (mod 3), i.e. it is the edge opposite vertex
``i``. Every edge carries a global direction from its lower to its higher
vertex index; ``edge_signs[c, i]`` is +1 when the counterclockwise traversal
of cell ``c`` runs along that direction and -1 otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np


class DiagonalPattern(str, Enum):
    """How each grid square is split into two triangles."""

    RIGHT = "right"  # lower-left to upper-right
    LEFT = "left"  # lower-right to upper-left
    ALTERNATING = "alternating"  # checkerboard of the two


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    cells: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    edge_signs: np.ndarray
    boundary_edges: np.ndarray
    domain: str = "custom"

    @classmethod
    def from_cells(cls, vertices, cells, domain: str = "custom") -> "Mesh":
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.ascontiguousarray(cells, dtype=np.int64)
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise ValueError("cells must be an (n, 3) index array")

        local = np.stack(
            [cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1
        )  # (nc, 3, 2) in counterclockwise traversal order
        flat = local.reshape(-1, 2)
        lo_hi = np.sort(flat, axis=1)
        edges, inverse, counts = np.unique(
            lo_hi, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(-1)
        if counts.max() > 2:
            raise ValueError("non-manifold edge: shared by more than two cells")
        signs = np.where(flat[:, 0] < flat[:, 1], 1, -1).astype(np.int8)

        mesh = cls(
            vertices=vertices,
            cells=cells,
            edges=edges.astype(np.int64),
            cell_edges=inverse.reshape(-1, 3),
            edge_signs=signs.reshape(-1, 3),
            boundary_edges=counts == 1,
            domain=domain,
        )
        if np.any(mesh.cell_areas <= 0.0):
            raise ValueError("cells must be counterclockwise with positive area")
        for arr in (mesh.vertices, mesh.cells, mesh.edges, mesh.cell_edges,
                    mesh.edge_signs, mesh.boundary_edges):
            arr.setflags(write=False)
        return mesh

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def cell_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(self.cell_areas.sum())

    @property
    def h_max(self) -> float:
        """Largest circumdiameter over all cells."""
        p = self.vertices[self.cells]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        return float(np.max(a * b * c / (2.0 * self.cell_areas)))

    def jacobians(self):
        """Affine maps from the reference triangle: ``(origin, J, detJ)``."""
        p = self.vertices[self.cells]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        return p[:, 0], J, det

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def save_txt(self, path) -> None:
        """Write ``"nv ne nc"``, then coordinate rows, then cell rows."""
        path = Path(path)
        with path.open("w") as fh:
            fh.write(f"{self.n_vertices} {self.n_edges} {self.n_cells}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")
            for a, b, c in self.cells:
                fh.write(f"{a} {b} {c}\n")

    @classmethod
    def load_txt(cls, path, domain: str = "custom") -> "Mesh":
        lines = Path(path).read_text().split("\n")
        nv, _, nc = (int(t) for t in lines[0].split())
        verts = np.array([[float(t) for t in ln.split()] for ln in lines[1:1 + nv]])
        cells = np.array(
            [[int(t) for t in ln.split()] for ln in lines[1 + nv:1 + nv + nc]]
        )
        return cls.from_cells(verts.reshape(nv, 2), cells.reshape(nc, 3), domain)


def _grid_cells(N: int, pattern: DiagonalPattern, keep=None) -> np.ndarray:
    i, j = np.meshgrid(np.arange(N), np.arange(N), indexing="xy")
    i, j = i.ravel(), j.ravel()
    if keep is not None:
        mask = keep(i, j)
        i, j = i[mask], j[mask]
    v00 = j * (N + 1) + i
    v10 = v00 + 1
    v01 = v00 + N + 1
    v11 = v01 + 1
    right = np.stack([np.stack([v00, v10, v11], 1), np.stack([v00, v11, v01], 1)], 1)
    left = np.stack([np.stack([v00, v10, v01], 1), np.stack([v10, v11, v01], 1)], 1)
    if pattern is DiagonalPattern.RIGHT:
        tri = right
    elif pattern is DiagonalPattern.LEFT:
        tri = left
    else:
        tri = np.where(((i + j) % 2 == 0)[:, None, None], right, left)
    return tri.reshape(-1, 3)


def build_square(N: int, pattern="right", bounds=(0.0, 1.0)) -> Mesh:
    """Structured mesh of ``bounds x bounds`` with ``2 N^2`` triangles.

    The default ``bounds=(0, 1)`` gives the unit square.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    N = int(N)
    pattern = DiagonalPattern(pattern)
    lo, hi = map(float, bounds)
    t = np.linspace(lo, hi, N + 1)
    X, Y = np.meshgrid(t, t, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    domain = "square" if (lo, hi) == (0.0, 1.0) else f"square[{lo:g},{hi:g}]"
    return Mesh.from_cells(verts, _grid_cells(N, pattern), domain=domain)


def build_lshape(N: int, pattern="right") -> Mesh:
    """Mesh of ``(-1,1)^2 minus (-1,0]^2`` from an N x N grid of ``(-1,1)^2``.

    ``N`` must be even so that the re-entrant corner is a grid vertex.
    """
    if int(N) != N or N < 2 or N % 2:
        raise ValueError(f"N must be a positive even integer, got {N!r}")
    N = int(N)
    pattern = DiagonalPattern(pattern)
    half = N // 2
    t = np.linspace(-1.0, 1.0, N + 1)
    t[half] = 0.0
    X, Y = np.meshgrid(t, t, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    cells = _grid_cells(N, pattern, keep=lambda i, j: (i >= half) | (j >= half))
    used = np.unique(cells)
    renumber = np.full(verts.shape[0], -1, dtype=np.int64)
    renumber[used] = np.arange(used.size)
    return Mesh.from_cells(verts[used], renumber[cells], domain="lshape")


def uniform_refine(mesh: Mesh) -> Mesh:
    """Split every triangle into four congruent children via edge midpoints."""
    nv = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    verts = np.vstack([mesh.vertices, mids])
    a, b, c = mesh.cells.T
    m0, m1, m2 = (nv + mesh.cell_edges).T  # midpoints of bc, ca, ab
    children = np.stack(
        [
            np.stack([a, m2, m1], 1),
            np.stack([m2, b, m0], 1),
            np.stack([m1, m0, c], 1),
            np.stack([m0, m1, m2], 1),
        ],
        axis=1,
    ).reshape(-1, 3)
    return Mesh.from_cells(verts, children, domain=mesh.domain)


def contains(domain: str, points: np.ndarray, bounds=(0.0, 1.0)) -> np.ndarray:
    """Closed-domain membership test used for sup-norm sampling."""
    x, y = points[:, 0], points[:, 1]
    if domain == "lshape":
        inside = (np.abs(x) <= 1) & (np.abs(y) <= 1)
        return inside & ~((x < 0) & (y < 0))
    lo, hi = bounds
    return (x >= lo) & (x <= hi) & (y >= lo) & (y <= hi)
