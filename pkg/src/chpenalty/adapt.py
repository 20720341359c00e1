"""Edge-jump error indicators, Doerfler marking and the adaptive loop."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np

from .chstep import NewtonConfig, StepProblem, newton_solve
from .fem import P1Function
from .mesh import Mesh, geometry, prolongate, refine

__all__ = ["MarkParams", "NewtonFailure", "estimate", "doerfler_mark", "adaptive_cycle"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MarkParams:
    """Doerfler bulk fraction and an optional refinement-depth cap.

    Cells whose generation has reached ``max_generation`` are not marked
    (closure bisections may still split them).
    """

    theta: float = 0.5
    max_generation: int | None = None

    def __post_init__(self):
        if not 0.0 < self.theta < 1.0:
            raise ValueError("theta must lie in (0, 1)")


class NewtonFailure(RuntimeError):
    """Newton did not converge inside :func:`adaptive_cycle`."""

    def __init__(self, cycle, mesh, solution, diagnostics):
        super().__init__(f"Newton failed in adaptive cycle {cycle}: {solution.status} {solution.message}")
        self.cycle = cycle
        self.mesh = mesh
        self.solution = solution
        self.diagnostics = diagnostics


def _normal_fluxes(mesh: Mesh, values: np.ndarray, grads, normals) -> np.ndarray:
    g = np.einsum("cj,cjd->cd", values[mesh.cells], grads)
    flux = np.einsum("cd,cjd->cj", g, normals)
    # outward normals of the two cells are opposite, so the sum is the jump
    return np.bincount(mesh.cell_edges.ravel(), weights=flux.ravel(), minlength=len(mesh.edges))


def estimate(mesh: Mesh, phi: P1Function, mu: P1Function, eps: float, tau: float,
             include_boundary: bool = True) -> np.ndarray:
    """Per-cell indicator ``eta_T`` from normal-derivative jumps.

    Interior edges contribute ``|[grad u . n]|**2 * h_E**2`` split evenly
    between the two neighbours, weighted by ``eps**2`` for ``phi`` and
    ``tau**2`` for ``mu``.  Boundary edges contribute the normal flux,
    which vanishes for the exact (Neumann) solution.
    """
    _, grads, normals, lengths = geometry(mesh)
    ne = len(mesh.edges)
    h = np.zeros(ne)
    h[mesh.cell_edges.ravel()] = lengths.ravel()
    jp = _normal_fluxes(mesh, phi.values, grads, normals) ** 2 * h ** 2
    jm = _normal_fluxes(mesh, mu.values, grads, normals) ** 2 * h ** 2
    weight = np.where(mesh.edge_cells[:, 1] >= 0, 0.5, 1.0 if include_boundary else 0.0)
    edge_term = weight * (eps ** 2 * jp + tau ** 2 * jm)
    eta2 = edge_term[mesh.cell_edges].sum(axis=1)
    return np.sqrt(eta2)


def doerfler_mark(eta, theta: float = 0.5) -> np.ndarray:
    """Smallest set of cells carrying a ``theta`` fraction of ``sum(eta**2)``.

    Greedy on ``eta**2`` in descending order, ties broken by ascending cell
    index.  Returns sorted cell indices.
    """
    if isinstance(theta, MarkParams):
        theta = theta.theta
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    eta2 = np.asarray(eta, dtype=float) ** 2
    total = eta2.sum()
    if total <= 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(len(eta2)), -eta2))
    csum = np.cumsum(eta2[order])
    n = int(np.searchsorted(csum, theta * total, side="left")) + 1
    return np.sort(order[:min(n, len(order))])


def adaptive_cycle(p: StepProblem, mesh0: Mesh | None = None, cycles: int = 3,
                   mark: MarkParams = MarkParams(), newton: NewtonConfig = NewtonConfig(),
                   phi_prev_fn=None, guess=None):
    """``cycles`` rounds of solve, estimate, mark, refine followed by a final solve.

    Parameters
    ----------
    p : StepProblem
        Problem whose ``phi_prev`` lives on ``mesh0``.
    phi_prev_fn : callable, optional
        ``mesh -> P1Function`` giving the previous phase field on refined
        meshes; linear prolongation is used if omitted.
    guess : (P1Function, P1Function), optional
        Newton starting point on ``mesh0``.

    Returns
    -------
    mesh, solution, diagnostics
        ``diagnostics`` is a list with one dict per solve.

    Raises
    ------
    NewtonFailure
        with the index of the cycle whose solve failed.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    mesh = p.mesh if mesh0 is None else mesh0
    if p.mesh is not mesh:
        raise ValueError("phi_prev must live on mesh0")
    phi, mu = guess if guess is not None else (None, None)
    diagnostics = []
    for cycle in range(cycles + 1):
        sol = newton_solve(p, phi, mu, newton)
        info = dict(cycle=cycle, dofs=mesh.num_vertices, cells=mesh.num_cells,
                    iterations=sol.iterations, status=str(sol.status), marked=0)
        diagnostics.append(info)
        if not sol.converged:
            raise NewtonFailure(cycle, mesh, sol, diagnostics)
        if cycle == cycles:
            break
        eta = estimate(mesh, sol.phi, sol.mu, p.eps, p.tau)
        if mark.max_generation is not None:
            eta = np.where(mesh.generation >= mark.max_generation, 0.0, eta)
        marked = doerfler_mark(eta, mark.theta)
        info.update(marked=len(marked), eta=float(np.sqrt(np.sum(eta ** 2))))
        if len(marked) == 0:
            phi, mu = sol.phi, sol.mu
            continue
        new_mesh, parents = refine(mesh, marked)
        log.debug("cycle %d: %d marked, %d -> %d vertices", cycle, len(marked),
                  mesh.num_vertices, new_mesh.num_vertices)
        phi = P1Function(new_mesh, prolongate(sol.phi.values, parents))
        mu = P1Function(new_mesh, prolongate(sol.mu.values, parents))
        if phi_prev_fn is not None:
            prev = phi_prev_fn(new_mesh)
        else:
            prev = P1Function(new_mesh, prolongate(p.phi_prev.values, parents))
        p = dataclasses.replace(p, phi_prev=prev)
        mesh = new_mesh
    return mesh, sol, diagnostics
