"""Vectorised clipping of P1 cells along a level line of the nodal interpolant.

Everything is expressed in barycentric coordinates of the parent cell, so the
same sub-triangles serve for integrating any affine quantity on the cell.
"""
from __future__ import annotations

import numpy as np

_EYE = np.eye(3)


def clip_above(values: np.ndarray, level: float):
    """Sub-triangulate ``{f >= level}`` on every cell.

    Parameters
    ----------
    values : (M, 3) nodal values of the affine function on each cell
    level : float

    Returns
    -------
    bary : (M, 3, 3, 3)
        ``bary[c, s, v]`` are the barycentric coordinates of vertex ``v`` of
        sub-triangle ``s`` of cell ``c``.  Unused slots are degenerate.
    frac : (M, 3)
        Area of each sub-triangle relative to its cell (0 for unused slots).
    """
    values = np.asarray(values, dtype=float)
    m = len(values)
    order = np.argsort(values, axis=1, kind="stable")
    v = np.take_along_axis(values, order, axis=1)
    E = _EYE[order]  # (M, 3, 3): barycentric unit vectors in sorted order
    lo, mid, hi = v[:, 0], v[:, 1], v[:, 2]

    whole = lo >= level
    quad = (mid >= level) & ~whole
    tri = (hi >= level) & ~(mid >= level)

    def cut(i, j, mask):
        # point on sorted edge (i, j) where the interpolant equals level
        den = v[:, j] - v[:, i]
        t = np.zeros(m)
        t[mask] = (level - v[mask, i]) / den[mask]
        return (1 - t)[:, None] * E[:, i] + t[:, None] * E[:, j]

    bary = np.zeros((m, 3, 3, 3))
    bary[:] = E[:, None, 0:1, :]  # degenerate default: every vertex at one point

    bary[whole, 0] = E[whole]

    q02 = cut(0, 2, quad | tri)
    q01 = cut(0, 1, quad)
    q12 = cut(1, 2, tri)
    bary[quad, 0] = np.stack([E[quad, 1], E[quad, 2], q02[quad]], axis=1)
    bary[quad, 1] = np.stack([E[quad, 1], q02[quad], q01[quad]], axis=1)
    bary[tri, 0] = np.stack([E[tri, 2], q02[tri], q12[tri]], axis=1)

    frac = np.abs(np.linalg.det(bary))
    frac[~(whole | quad | tri)] = 0.0
    frac[whole, 1:] = 0.0
    frac[tri, 1:] = 0.0
    frac[quad, 2] = 0.0
    return bary, frac


def product_integral(g: np.ndarray, h: np.ndarray, area: np.ndarray) -> np.ndarray:
    """Exact integral of the product of two affine functions over triangles.

    ``g`` and ``h`` hold vertex values in the last axis.
    """
    return area / 12.0 * (np.sum(g * h, axis=-1) + g.sum(axis=-1) * h.sum(axis=-1))


def excess_parts(cell_values: np.ndarray, cell_area: np.ndarray, level: float):
    """Sub-triangles of ``{f >= level}`` with the excess ``f - level`` on them.

    Returns ``(bary, sub_area, excess)`` where ``excess[c, s, v]`` is
    ``f - level`` at sub-vertex ``v``.
    """
    bary, frac = clip_above(cell_values, level)
    sub_area = frac * cell_area[:, None]
    excess = np.einsum("csvj,cj->csv", bary, cell_values) - level
    return bary, sub_area, excess
