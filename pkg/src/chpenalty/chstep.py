"""
One implicit time step of the penalised Cahn-Hilliard system.

Unknowns are the nodal values ``U = [phi; mu]`` and the discrete equations
read::

    F1 = M phi + tau K mu - M phi_prev
    F2 = eps K phi + P(phi) / eps - M phi_prev / eps - M mu

with ``P`` the penalty vector of :mod:`chpenalty.penalty`.  The system is
solved with a (semismooth) Newton method and sparse LU.
"""
from __future__ import annotations

import enum
import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _clip
from .fem import (
    P1Function,
    assemble_lumped_mass,
    assemble_mass,
    assemble_stiffness,
    h1_norm,
    integrate_excess,
)
from .mesh import Mesh, geometry
from .penalty import PenaltyScheme, check_power, penalty_jacobian, penalty_vector, violation

__all__ = [
    "StepProblem",
    "NewtonConfig",
    "Status",
    "StepSolution",
    "ViolationReport",
    "SingularMatrixError",
    "initial_phase_field",
    "residual",
    "jacobian",
    "newton_solve",
    "linear_solve",
    "violation_report",
    "ball_integral",
    "DEFAULT_CENTERS",
    "DEFAULT_RADII",
]

log = logging.getLogger(__name__)

DEFAULT_RADII = (0.05, 0.1, 0.2)
DEFAULT_CENTERS = tuple((x, y) for y in np.linspace(0.1, 0.9, 5) for x in np.linspace(0.1, 0.9, 5))


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class Status(enum.Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    MAX_ITERATIONS = "MaxIterations"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class StepProblem:
    eps: float
    tau: float
    s: float
    k: int
    scheme: PenaltyScheme
    phi_prev: P1Function

    def __post_init__(self):
        if not (self.eps > 0 and self.tau > 0):
            raise ValueError("eps and tau must be positive")
        if self.s < 0:
            raise ValueError("penalty parameter must be non-negative")
        object.__setattr__(self, "scheme", PenaltyScheme.parse(self.scheme))
        check_power(self.k, self.scheme)

    @property
    def mesh(self) -> Mesh:
        return self.phi_prev.mesh


@dataclass(frozen=True)
class NewtonConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-12
    max_iter: int = 50
    damping: float = 1.0
    # residual growth over the initial residual that counts as divergence;
    # None disables it (cold-started k > 2 solves overshoot transiently)
    divergence_factor: float | None = None


@dataclass
class StepSolution:
    phi: P1Function
    mu: P1Function
    status: Status
    iterations: int
    residual_history: list = field(default_factory=list)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


@dataclass(frozen=True)
class ViolationReport:
    linf: float
    l1: float
    mass_error: float
    structural_K: float


def initial_phase_field(mesh: Mesh, eps: float, center=(0.5, 0.5), radius: float = 0.25) -> P1Function:
    """Circle of radius ``radius`` with a sine transition profile of width ``pi * eps``.

    The phase field is -1 inside and +1 outside.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not 0 < radius < 0.5:
        raise ValueError("radius must lie in (0, 0.5)")
    z = (np.linalg.norm(mesh.vertices - np.asarray(center, dtype=float), axis=1) - radius) / eps
    phi = np.where(z >= np.pi / 2, 1.0, np.where(z <= -np.pi / 2, -1.0, np.sin(z)))
    return P1Function(mesh, phi)


@functools.lru_cache(maxsize=16)
def _operators(mesh: Mesh):
    return assemble_mass(mesh), assemble_stiffness(mesh), assemble_lumped_mass(mesh)


def _check_mesh(p: StepProblem, *funcs):
    for f in funcs:
        if f.mesh is not p.mesh:
            raise ValueError("function lives on a different mesh than the problem")


def _residual(p: StepProblem, phi: np.ndarray, mu: np.ndarray) -> np.ndarray:
    M, K, d = _operators(p.mesh)
    rhs = M @ p.phi_prev.values
    F1 = M @ phi + p.tau * (K @ mu) - rhs
    P = penalty_vector(p.mesh, phi, p.s, p.k, p.scheme, M=M, d=d)
    F2 = p.eps * (K @ phi) + P / p.eps - rhs / p.eps - M @ mu
    return np.concatenate([F1, F2])


def _jacobian(p: StepProblem, phi: np.ndarray) -> sp.csr_matrix:
    M, K, d = _operators(p.mesh)
    dP = penalty_jacobian(p.mesh, phi, p.s, p.k, p.scheme, M=M, d=d)
    return sp.bmat([[M, p.tau * K], [p.eps * K + dP / p.eps, -M]], format="csr")


def residual(p: StepProblem, phi: P1Function, mu: P1Function) -> np.ndarray:
    """Block residual ``[F1; F2]`` of length ``2N``."""
    _check_mesh(p, phi, mu)
    return _residual(p, phi.values, mu.values)


def jacobian(p: StepProblem, phi: P1Function) -> sp.csr_matrix:
    """Block Jacobian ``[[M, tau K], [eps K + P'/eps, -M]]``."""
    _check_mesh(p, phi)
    return _jacobian(p, phi.values)


def linear_solve(A, b) -> np.ndarray:
    """Sparse LU solve with a backward-error check.

    Raises :class:`SingularMatrixError` if the factorisation fails or the
    residual contract ``|Ax-b| <= 1e-9 (|A|max |x| + |b|)`` cannot be met
    after two steps of iterative refinement.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != len(b):
        raise ValueError("dimension mismatch")
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    x = lu.solve(b)
    amax = abs(A).max() if A.nnz else 0.0
    for _ in range(3):
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("non-finite solution")
        r = b - A @ x
        if np.max(np.abs(r), initial=0.0) <= 1e-9 * (amax * np.max(np.abs(x), initial=0.0) + np.max(np.abs(b), initial=0.0)):
            return x
        x = x + lu.solve(r)
    raise SingularMatrixError("residual check failed: matrix is numerically singular")


def newton_solve(p: StepProblem, phi0: P1Function | None = None, mu0: P1Function | None = None,
                 config: NewtonConfig = NewtonConfig()) -> StepSolution:
    """Semismooth Newton iteration for one time step.

    Defaults start from ``(phi_prev, 0)``.  Failure to converge is reported
    through :attr:`StepSolution.status`, not raised.
    """
    n = p.mesh.num_vertices
    phi0 = p.phi_prev if phi0 is None else phi0
    mu0 = P1Function(p.mesh, np.zeros(n)) if mu0 is None else mu0
    _check_mesh(p, phi0, mu0)
    U = np.concatenate([phi0.values, mu0.values])

    def pack(status, it, hist, msg=""):
        vals = U if np.all(np.isfinite(U)) else np.nan_to_num(U)
        return StepSolution(P1Function(p.mesh, vals[:n]), P1Function(p.mesh, vals[n:]),
                            status, it, hist, msg)

    F = _residual(p, U[:n], U[n:])
    r0 = float(np.max(np.abs(F)))
    hist = [r0]
    target = max(config.abs_tol, 0.0)
    for it in range(config.max_iter + 1):
        r = hist[-1]
        if r <= target or r <= config.rel_tol * r0:
            return pack(Status.CONVERGED, it, hist)
        if not math.isfinite(r):
            return pack(Status.DIVERGED, it, hist, "non-finite residual")
        if config.divergence_factor is not None and r > config.divergence_factor * max(r0, config.abs_tol):
            return pack(Status.DIVERGED, it, hist, "residual blow-up")
        if it == config.max_iter:
            break
        try:
            dU = linear_solve(_jacobian(p, U[:n]), F)
        except SingularMatrixError as exc:
            log.warning("singular Newton system at iteration %d: %s", it, exc)
            return pack(Status.DIVERGED, it, hist, f"singular Jacobian: {exc}")
        U = U - config.damping * dU
        F = _residual(p, U[:n], U[n:])
        hist.append(float(np.max(np.abs(F))))
    return pack(Status.MAX_ITERATIONS, config.max_iter, hist, "iteration limit reached")


def _polygon_disk_integral(poly: np.ndarray, R: float, a: float, b: np.ndarray) -> float:
    """Integral of ``a + b.y`` over ``polygon ∩ {|y| <= R}``.

    ``poly`` is a convex counter-clockwise polygon in coordinates centred at
    the disk centre.  Uses the divergence theorem with the field
    ``a y / 2 + (b.y) y / 3`` on straight and circular boundary pieces.
    """
    total = 0.0
    events = []
    all_inside = True
    npts = len(poly)
    for i in range(npts):
        P, Q = poly[i], poly[(i + 1) % npts]
        d = Q - P
        A2 = d @ d
        if A2 == 0.0:
            continue
        B = 2.0 * (P @ d)
        C = P @ P - R * R
        if C > 0:
            all_inside = False
        disc = B * B - 4.0 * A2 * C
        if disc <= 0.0:
            continue
        sq = math.sqrt(disc)
        t1, t2 = (-B - sq) / (2 * A2), (-B + sq) / (2 * A2)
        lo, hi = max(t1, 0.0), min(t2, 1.0)
        if lo >= hi:
            continue
        S, T = P + lo * d, P + hi * d
        nrm = (hi - lo) * np.array([d[1], -d[0]])
        total += (S @ nrm) * (a / 2.0 + b @ (S + T) / 6.0)
        if t1 > 0.0:
            events.append((0, math.atan2(S[1], S[0])))
        if t2 < 1.0:
            events.append((1, math.atan2(T[1], T[0])))
    if not events:
        if all_inside:
            return total
        # no crossings: the disk is either inside the polygon or disjoint from it
        for i in range(npts):
            P, Q = poly[i], poly[(i + 1) % npts]
            if (Q[0] - P[0]) * (-P[1]) - (Q[1] - P[1]) * (-P[0]) < 0:
                return 0.0
        return a * math.pi * R * R
    m = len(events)
    for j, (kind, th) in enumerate(events):
        if kind != 1:
            continue
        nxt = events[(j + 1) % m]
        dth = (nxt[1] - th) % (2 * math.pi)
        th2 = th + dth
        total += a * R * R / 2.0 * dth + R ** 3 / 3.0 * (
            b[0] * (math.sin(th2) - math.sin(th)) - b[1] * (math.cos(th2) - math.cos(th))
        )
    return total


def _point_triangle_distance(P: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Distance from point ``c`` to each (counter-clockwise) triangle in ``P``."""
    dist = np.full(len(P), np.inf)
    inside = np.ones(len(P), dtype=bool)
    for j in range(3):
        A, B = P[:, j], P[:, (j + 1) % 3]
        d = B - A
        w = c - A
        inside &= (d[:, 0] * w[:, 1] - d[:, 1] * w[:, 0]) >= 0
        t = np.clip(np.einsum("ij,ij->i", w, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
        dist = np.minimum(dist, np.linalg.norm(w - t[:, None] * d, axis=1))
    dist[inside] = 0.0
    return dist


def ball_integral(mesh: Mesh, phi: np.ndarray, center, R: float) -> float:
    """Integral of ``|violation(phi_h)|`` over ``B_R(center) ∩ (0,1)^2``."""
    c = np.asarray(center, dtype=float)
    phi = np.asarray(phi, dtype=float)
    cv = phi[mesh.cells]
    active = np.flatnonzero(np.any(np.abs(cv) > 1.0, axis=1))
    if active.size == 0:
        return 0.0
    P = mesh.vertices[mesh.cells[active]]
    vd = np.linalg.norm(P - c, axis=2)
    inside = np.all(vd <= R, axis=1)
    cut = ~inside & (_point_triangle_distance(P, c) < R)
    area_all, grads_all, _, _ = geometry(mesh)

    total = 0.0
    cells_in = active[inside]
    if cells_in.size:
        sub = cv[active[inside]]
        ar = area_all[cells_in]
        for sign in (1.0, -1.0):
            _, sub_area, excess = _clip.excess_parts(sign * sub, ar, 1.0)
            total += float(np.sum(sub_area * excess.mean(axis=-1)))

    idx = np.flatnonzero(cut)
    if idx.size:
        cells_cut = active[idx]
        for sign in (1.0, -1.0):
            vals = sign * cv[active[idx]]
            bary, frac = _clip.clip_above(vals, 1.0)
            for local, cell in enumerate(cells_cut):
                if not np.any(frac[local] > 0):
                    continue
                Pc = P[idx[local]]
                # excess g = sign*phi_h - 1 as a + b.y with y = x - center
                bvec = vals[local] @ grads_all[cell]
                a = vals[local, 0] - 1.0 + bvec @ (c - Pc[0])
                for sidx in range(3):
                    if frac[local, sidx] <= 0:
                        continue
                    tri = bary[local, sidx] @ Pc - c
                    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
                    if e1[0] * e2[1] - e1[1] * e2[0] < 0:
                        tri = tri[::-1]
                    total += _polygon_disk_integral(tri, R, a, bvec)
    return total


def violation_report(p: StepProblem, sol: StepSolution, sample_radii=DEFAULT_RADII,
                     sample_centers=DEFAULT_CENTERS) -> ViolationReport:
    """Constraint-violation metrics of a solved step."""
    _check_mesh(p, sol.phi)
    mesh = p.mesh
    phi = sol.phi.values
    M, _, _ = _operators(mesh)
    linf = float(np.max(np.abs(violation(phi)), initial=0.0))
    l1 = integrate_excess(mesh, phi, 1.0) + integrate_excess(mesh, -phi, 1.0)
    mass = abs(float(np.sum(M @ (phi - p.phi_prev.values))))
    K = 0.0
    if linf > 0:
        for R in sample_radii:
            for c in sample_centers:
                K = max(K, p.s * ball_integral(mesh, phi, c, R) / R ** 2)
    return ViolationReport(linf=linf, l1=l1, mass_error=mass, structural_K=K)


def h1_norms(sol: StepSolution) -> tuple[float, float]:
    M, K, _ = _operators(sol.phi.mesh)
    return h1_norm(sol.phi, M, K), h1_norm(sol.mu, M, K)
