"""
Piecewise-linear finite elements on a :class:`~chpenalty.mesh.Mesh`.

All element integrals are closed-form; matrices are returned as
``scipy.sparse.csr_matrix`` with sorted column indices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _clip
from .mesh import Mesh, geometry

__all__ = [
    "P1Function",
    "interpolate",
    "assemble_mass",
    "assemble_stiffness",
    "assemble_lumped_mass",
    "assemble_local",
    "l1_norm",
    "linf_norm",
    "h1_norm",
    "integrate_excess",
]

_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


@dataclass(frozen=True, eq=False)
class P1Function:
    """Nodal coefficient vector of a P1 function on ``mesh``."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.num_vertices,):
            raise ValueError(
                f"expected {self.mesh.num_vertices} nodal values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("nodal values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __neg__(self):
        return P1Function(self.mesh, -self.values)


def interpolate(mesh: Mesh, f) -> P1Function:
    """Nodal interpolant of ``f(x, y)`` (vectorised over vertex arrays)."""
    x, y = mesh.vertices.T
    return P1Function(mesh, np.broadcast_to(f(x, y), x.shape))


def assemble_local(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    """Scatter ``(M, 3, 3)`` element matrices into a global CSR matrix.

    Duplicates are summed in cell order, so identical inputs give
    bit-identical output.
    """
    c = mesh.cells
    rows = np.repeat(c, 3, axis=1).ravel()
    cols = np.tile(c, (1, 3)).ravel()
    n = mesh.num_vertices
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    area = mesh.areas()
    return assemble_local(mesh, area[:, None, None] * _LOCAL_MASS)


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    area, grads, _, _ = geometry(mesh)
    local = area[:, None, None] * np.einsum("cid,cjd->cij", grads, grads)
    return assemble_local(mesh, local)


def assemble_lumped_mass(mesh: Mesh) -> np.ndarray:
    """Diagonal of the lumped mass matrix, ``d_i = (1, phi_i)``."""
    area = mesh.areas()
    return np.bincount(
        mesh.cells.ravel(), weights=np.repeat(area / 3.0, 3), minlength=mesh.num_vertices
    )


def integrate_excess(mesh: Mesh, values: np.ndarray, level: float) -> float:
    """Exact integral of ``max(f - level, 0)`` for the P1 function with nodal ``values``."""
    cv = np.asarray(values, dtype=float)[mesh.cells]
    _, sub_area, excess = _clip.excess_parts(cv, mesh.areas(), level)
    return float(np.sum(sub_area * excess.mean(axis=-1)))


def l1_norm(f: P1Function) -> float:
    """Exact L1 norm, splitting cells along the zero level line."""
    return integrate_excess(f.mesh, f.values, 0.0) + integrate_excess(f.mesh, -f.values, 0.0)


def linf_norm(f: P1Function) -> float:
    """Max norm; exact for P1 since extrema sit at vertices."""
    return float(np.max(np.abs(f.values))) if len(f.values) else 0.0


def h1_norm(f: P1Function, M=None, K=None) -> float:
    M = assemble_mass(f.mesh) if M is None else M
    K = assemble_stiffness(f.mesh) if K is None else K
    v = f.values
    return float(np.sqrt(v @ (M @ v) + v @ (K @ v)))
