"""
Moreau-Yosida penalty for the double-obstacle constraint ``|phi| <= 1``.

The violation ``max(0, v - 1) + min(0, v + 1)`` and its powers are applied
to a P1 phase field in one of three ways:

``Exact``
    integrate ``s * violation(phi_h) * phi_i`` exactly by clipping every cell
    along the level lines ``phi_h = +-1`` (k = 2 only);
``Interpolated``
    replace the violation by its nodal interpolant, ``s * M @ violation_k``;
``Lumped``
    evaluate with the lumped (vertex) quadrature, ``s * d * violation_k``.
"""
from __future__ import annotations

import enum

import numpy as np
import scipy.sparse as sp

from . import _clip
from .fem import P1Function, assemble_local, assemble_lumped_mass, assemble_mass
from .mesh import Mesh

__all__ = [
    "PenaltyScheme",
    "check_power",
    "violation",
    "violation_k",
    "dviolation_k",
    "clip_triangle",
    "penalty_vector",
    "penalty_jacobian",
    "assemble_penalty_vector",
    "assemble_penalty_jacobian",
]


class PenaltyScheme(enum.Enum):
    EXACT = "Exact"
    INTERPOLATED = "Interpolated"
    LUMPED = "Lumped"

    @classmethod
    def parse(cls, value) -> "PenaltyScheme":
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value.lower() == str(value).strip().lower():
                return member
        raise ValueError(f"unknown penalty scheme {value!r}")

    def __str__(self):
        return self.value


def check_power(k: int, scheme: PenaltyScheme | None = None) -> int:
    """Validate the penalty power (and its compatibility with ``scheme``)."""
    if int(k) != k or k < 2:
        raise ValueError(f"penalty power must be an integer >= 2, got {k!r}")
    if scheme is not None and PenaltyScheme.parse(scheme) is PenaltyScheme.EXACT and k != 2:
        raise ValueError("exact penalty integration is only available for k = 2")
    return int(k)


def violation(v):
    """Distance of ``v`` from ``[-1, 1]`` with sign: ``max(0, v-1) + min(0, v+1)``."""
    v = np.asarray(v, dtype=float)
    out = np.maximum(0.0, v - 1.0) + np.minimum(0.0, v + 1.0)
    return out if out.ndim else float(out)


def violation_k(v, k: int = 2):
    """``violation(v) * |violation(v)|**(k-2)``."""
    lam = np.asarray(violation(v))
    out = lam * np.abs(lam) ** (k - 2) if k != 2 else lam
    return out if np.ndim(out) else float(out)


def dviolation_k(v, k: int = 2):
    """Generalised derivative of :func:`violation_k`; zero on ``|v| <= 1``."""
    lam = np.abs(np.asarray(violation(v)))
    out = np.where(lam > 0, (k - 1) * lam ** (k - 2), 0.0)
    return out if np.ndim(out) else float(out)


def clip_triangle(a: float, b: float, c: float, level: float):
    """Split one triangle along ``f = level`` for the affine ``f`` with vertex values ``a, b, c``.

    Returns ``(above, below)``: lists of sub-triangles, each a ``(3, 3)``
    array of barycentric coordinates of its vertices.  ``above`` covers
    ``f >= level`` and ``below`` covers ``f < level``.  Zero-area pieces are
    dropped.
    """
    vals = np.array([[a, b, c]], dtype=float)
    out = []
    for vv, lv in ((vals, level), (-vals, -level)):
        bary, frac = _clip.clip_above(vv, lv)
        out.append([bary[0, s] for s in range(3) if frac[0, s] > 0])
    if np.all(vals == level):
        # f == level everywhere belongs to the closed upper side only
        out[1] = []
    return out[0], out[1]


def _exact_load(mesh: Mesh, phi: np.ndarray) -> np.ndarray:
    area = mesh.areas()
    cv = phi[mesh.cells]
    local = np.zeros((mesh.num_cells, 3))
    for sign in (1.0, -1.0):
        bary, sub_area, excess = _clip.excess_parts(sign * cv, area, 1.0)
        # int (sign*phi - 1)_+ * phi_i, phi_i linear with sub-vertex values bary[..., i]
        for i in range(3):
            local[:, i] += sign * _clip.product_integral(excess, bary[..., i], sub_area).sum(axis=1)
    return np.bincount(mesh.cells.ravel(), weights=local.ravel(), minlength=mesh.num_vertices)


def _exact_jacobian(mesh: Mesh, phi: np.ndarray) -> sp.csr_matrix:
    area = mesh.areas()
    cv = phi[mesh.cells]
    local = np.zeros((mesh.num_cells, 3, 3))
    for sign in (1.0, -1.0):
        bary, frac = _clip.clip_above(sign * cv, 1.0)
        sub_area = frac * area[:, None]
        for i in range(3):
            for j in range(3):
                local[:, i, j] += _clip.product_integral(
                    bary[..., i], bary[..., j], sub_area
                ).sum(axis=1)
    return assemble_local(mesh, local)


def penalty_vector(mesh, phi, s, k, scheme, M=None, d=None) -> np.ndarray:
    """Array-level kernel of :func:`assemble_penalty_vector` with optional cached operators."""
    scheme = PenaltyScheme.parse(scheme)
    check_power(k, scheme)
    if scheme is PenaltyScheme.EXACT:
        return s * _exact_load(mesh, phi)
    lam = violation_k(phi, k)
    if scheme is PenaltyScheme.INTERPOLATED:
        M = assemble_mass(mesh) if M is None else M
        return s * (M @ lam)
    d = assemble_lumped_mass(mesh) if d is None else d
    return s * d * lam


def penalty_jacobian(mesh, phi, s, k, scheme, M=None, d=None) -> sp.csr_matrix:
    scheme = PenaltyScheme.parse(scheme)
    check_power(k, scheme)
    if scheme is PenaltyScheme.EXACT:
        return (s * _exact_jacobian(mesh, phi)).tocsr()
    dl = dviolation_k(phi, k)
    if scheme is PenaltyScheme.INTERPOLATED:
        M = assemble_mass(mesh) if M is None else M
        return (s * (M @ sp.diags(dl))).tocsr()
    d = assemble_lumped_mass(mesh) if d is None else d
    return sp.diags(s * d * dl, format="csr")


def assemble_penalty_vector(phi: P1Function, s: float, k: int, scheme) -> np.ndarray:
    """Vector ``P_i = Lambda(phi, phi_i)`` of the penalty form for the given scheme."""
    return penalty_vector(phi.mesh, phi.values, s, k, scheme)


def assemble_penalty_jacobian(phi: P1Function, s: float, k: int, scheme) -> sp.csr_matrix:
    """Derivative of :func:`assemble_penalty_vector` with respect to the nodal values."""
    return penalty_jacobian(phi.mesh, phi.values, s, k, scheme)
