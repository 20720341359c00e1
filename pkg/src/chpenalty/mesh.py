"""
Conforming triangulations of the unit square with newest-vertex bisection.

Cells are stored as vertex triples ``(v0, v1, v2)`` in counter-clockwise
order.  ``v0`` is the newest vertex and the refinement edge is the edge
opposite to it, ``(v1, v2)``.  Local edge ``j`` of a cell is the edge
opposite local vertex ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "Mesh",
    "MeshError",
    "unit_square_mesh",
    "refine",
    "cell_geometry",
    "geometry",
    "prolongate",
    "dump_mesh",
    "load_mesh",
]


class MeshError(RuntimeError):
    """Raised for corrupted meshes or malformed refinement-edge labels."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable 2D triangulation.

    Parameters
    ----------
    vertices : (N, 2) float array
    cells : (M, 3) int array, counter-clockwise, newest vertex first
    generation : (M,) int array of bisection depths
    """

    vertices: np.ndarray
    cells: np.ndarray
    generation: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        c = np.ascontiguousarray(self.cells, dtype=np.int64)
        g = self.generation
        g = np.zeros(len(c), dtype=np.int64) if g is None else np.asarray(g, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MeshError("vertices must have shape (N, 2)")
        if c.ndim != 2 or c.shape[1] != 3:
            raise MeshError("cells must have shape (M, 3)")
        if len(g) != len(c):
            raise MeshError("generation length must match the cell count")
        if c.size and (c.min() < 0 or c.max() >= len(v)):
            raise MeshError("cell vertex index out of range")
        for a in (v, c, g):
            a.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "cells", c)
        object.__setattr__(self, "generation", g)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def _topology(self):
        c = self.cells
        m = len(c)
        # local edge j is opposite local vertex j
        pairs = np.stack([c[:, [1, 2]], c[:, [2, 0]], c[:, [0, 1]]], axis=1).reshape(-1, 2)
        pairs = np.sort(pairs, axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        cell_edges = inverse.reshape(m, 3)
        counts = np.bincount(inverse, minlength=len(edges))
        if counts.max(initial=0) > 2:
            raise MeshError("an edge is shared by more than two cells")
        edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
        owner = np.repeat(np.arange(m), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_cells[sorted_edges[first], 0] = owner[order[first]]
        edge_cells[sorted_edges[~first], 1] = owner[order[~first]]
        for a in (edges, cell_edges, edge_cells):
            a.setflags(write=False)
        return edges, cell_edges, edge_cells

    @property
    def edges(self) -> np.ndarray:
        """(E, 2) sorted vertex pairs."""
        return self._topology[0]

    @property
    def cell_edges(self) -> np.ndarray:
        """(M, 3) edge ids; column j is the edge opposite local vertex j."""
        return self._topology[1]

    @property
    def edge_cells(self) -> np.ndarray:
        """(E, 2) incident cells, second column -1 on the boundary."""
        return self._topology[2]

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @property
    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] >= 0)

    def areas(self) -> np.ndarray:
        """Signed cell areas (positive for counter-clockwise cells)."""
        p = self.vertices[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def min_angles(self) -> np.ndarray:
        """Smallest interior angle of every cell, in radians."""
        p = self.vertices[self.cells]
        out = np.full(len(p), np.pi)
        for j in range(3):
            a = p[:, (j + 1) % 3] - p[:, j]
            b = p[:, (j + 2) % 3] - p[:, j]
            cosang = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            )
            out = np.minimum(out, np.arccos(np.clip(cosang, -1.0, 1.0)))
        return out

    def audit(self, tol: float = 1e-12) -> None:
        """Check orientation, conformity, tiling and boundary placement.

        Raises :class:`MeshError` on the first violated invariant.
        """
        areas = self.areas()
        if np.any(areas <= 0):
            raise MeshError("cell with non-positive signed area")
        if abs(areas.sum() - 1.0) > tol:
            raise MeshError(f"cells do not tile the unit square (area {areas.sum()!r})")
        bnd = self.boundary_edges
        p = self.vertices[self.edges[bnd]]
        on_side = (
            np.all(np.abs(p[:, :, 0]) < tol, axis=1)
            | np.all(np.abs(p[:, :, 0] - 1) < tol, axis=1)
            | np.all(np.abs(p[:, :, 1]) < tol, axis=1)
            | np.all(np.abs(p[:, :, 1] - 1) < tol, axis=1)
        )
        if not np.all(on_side):
            raise MeshError("boundary edge in the interior: hanging vertex or hole")
        # with exact tiling, a hanging vertex leaves single-incidence edges
        # off the square's sides, which the check above rejects
        used = np.zeros(self.num_vertices, dtype=bool)
        used[self.cells.ravel()] = True
        if not np.all(used):
            raise MeshError("vertex not referenced by any cell")


def unit_square_mesh(n0: int) -> Mesh:
    """Structured mesh of the unit square with ``2*n0**2`` right triangles.

    Each of the ``n0 x n0`` squares is cut by one diagonal.  Diagonals point
    towards the centre of the square so the mesh is symmetric under the
    reflections of the square when ``n0`` is even.  The hypotenuse is the
    refinement edge of every triangle.
    """
    if int(n0) != n0 or n0 < 1:
        raise ValueError("n0 must be a positive integer")
    n0 = int(n0)
    x = np.linspace(0.0, 1.0, n0 + 1)
    X, Y = np.meshgrid(x, x, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (n0 + 1) + i

    cells = []
    half = n0 / 2.0
    for j in range(n0):
        for i in range(n0):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if (i < half) == (j < half):
                # diagonal a-c; right-angle vertex first
                cells.append((b, c, a))
                cells.append((d, a, c))
            else:
                # diagonal b-d
                cells.append((a, b, d))
                cells.append((c, d, b))
    return Mesh(vertices, np.array(cells, dtype=np.int64))


def refine(mesh: Mesh, marked, max_closure: int = 10_000) -> tuple[Mesh, np.ndarray]:
    """Newest-vertex bisection of the marked cells with conforming closure.

    Parameters
    ----------
    mesh : Mesh
    marked : iterable of int
        Cell indices to bisect (at least once).
    max_closure : int
        Cap on closure sweeps; exceeding it signals a refinement-edge
        labelling that is not compatible.

    Returns
    -------
    new_mesh : Mesh
    parents : (K, 2) int array
        Row ``i`` holds the endpoints of the edge bisected by the new vertex
        ``mesh.num_vertices + i``.  Old vertices keep their indices.
    """
    marked = np.unique(np.asarray(list(marked) if not isinstance(marked, np.ndarray) else marked,
                                  dtype=np.int64))
    if marked.size and (marked[0] < 0 or marked[-1] >= mesh.num_cells):
        raise IndexError("marked cell index out of range")
    if marked.size == 0:
        return mesh, np.zeros((0, 2), dtype=np.int64)

    cell_edges = mesh.cell_edges
    bisect = np.zeros(len(mesh.edges), dtype=bool)
    bisect[cell_edges[marked, 0]] = True
    for _ in range(max_closure):
        has_any = bisect[cell_edges].any(axis=1)
        missing = has_any & ~bisect[cell_edges[:, 0]]
        if not missing.any():
            break
        bisect[cell_edges[missing, 0]] = True
    else:
        raise MeshError("refinement closure did not terminate; check refinement edges")

    split = np.flatnonzero(bisect)
    parents = mesh.edges[split]
    nv = mesh.num_vertices
    midpoint_of = np.full(len(mesh.edges), -1, dtype=np.int64)
    midpoint_of[split] = nv + np.arange(len(split))
    vertices = np.vstack([mesh.vertices, mesh.vertices[parents].mean(axis=1)])

    c = mesh.cells
    g = mesh.generation
    keep = ~bisect[cell_edges[:, 0]]
    new_cells = [c[keep]]
    new_gen = [g[keep]]

    todo = np.flatnonzero(~keep)
    v0, v1, v2 = c[todo, 0], c[todo, 1], c[todo, 2]
    m = midpoint_of[cell_edges[todo, 0]]
    gen = g[todo] + 1
    # children (m, v0, v1) and (m, v2, v0); their refinement edges are the
    # parent's local edges 2 and 1
    for child, edge_id in (
        (np.column_stack([m, v0, v1]), cell_edges[todo, 2]),
        (np.column_stack([m, v2, v0]), cell_edges[todo, 1]),
    ):
        again = bisect[edge_id]
        new_cells.append(child[~again])
        new_gen.append(gen[~again])
        cc = child[again]
        mm = midpoint_of[edge_id[again]]
        gg = gen[again] + 1
        new_cells.append(np.column_stack([mm, cc[:, 0], cc[:, 1]]))
        new_cells.append(np.column_stack([mm, cc[:, 2], cc[:, 0]]))
        new_gen.extend([gg, gg])

    refined = Mesh(vertices, np.vstack(new_cells), np.concatenate(new_gen))
    return refined, parents


def prolongate(values: np.ndarray, parents: np.ndarray) -> np.ndarray:
    """Linear interpolation of nodal values onto the vertices added by :func:`refine`."""
    values = np.asarray(values, dtype=float)
    if len(parents) == 0:
        return values.copy()
    return np.concatenate([values, values[parents].mean(axis=1)])


def geometry(mesh: Mesh):
    """Vectorised cell geometry.

    Returns
    -------
    area : (M,) array
    grads : (M, 3, 2) array of barycentric-coordinate gradients
    normals : (M, 3, 2) outward unit normals of the edges opposite each vertex
    lengths : (M, 3) edge lengths, same ordering
    """
    p = mesh.vertices[mesh.cells]
    area = mesh.areas()
    if np.any(area <= 0):
        raise MeshError("degenerate or inverted cell")
    # edge opposite vertex j runs from p[j+1] to p[j+2]
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    lengths = np.linalg.norm(e, axis=2)
    # rotate clockwise for the outward normal of a counter-clockwise cell
    normals = np.stack([e[..., 1], -e[..., 0]], axis=2) / lengths[..., None]
    grads = -normals * (lengths / (2.0 * area[:, None]))[..., None]
    return area, grads, normals, lengths


def cell_geometry(mesh: Mesh, c: int):
    """Area, barycentric gradients, outward unit normals and edge lengths of one cell."""
    if not 0 <= c < mesh.num_cells:
        raise IndexError("cell index out of range")
    p = mesh.vertices[mesh.cells[c]]
    sub = Mesh(p, np.array([[0, 1, 2]]))
    area, grads, normals, lengths = geometry(sub)
    return float(area[0]), grads[0], normals[0], lengths[0]


def dump_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text debug format (header, vertices, 0-based cells)."""
    with open(path, "w") as f:
        f.write(f"vertices {mesh.num_vertices} cells {mesh.num_cells}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.cells:
            f.write(f"{i} {j} {k}\n")


def load_mesh(path) -> Mesh:
    with open(path) as f:
        head = f.readline().split()
        if len(head) != 4 or head[0] != "vertices" or head[2] != "cells":
            raise MeshError("bad mesh header")
        nv, nc = int(head[1]), int(head[3])
        rows = [f.readline().split() for _ in range(nv + nc)]
    vertices = np.array([[float(a), float(b)] for a, b in rows[:nv]])
    cells = np.array([[int(a) for a in r] for r in rows[nv:]], dtype=np.int64)
    return Mesh(vertices, cells)
