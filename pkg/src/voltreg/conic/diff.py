"""Vector-Jacobian products of the conic solution map ``(A, b, c) -> (x, y, s)``.

The solution map factors as ``phi(z*(Q(A, b, c)))`` where ``z*`` is the zero
of the residual map. For a scalar loss with gradient ``(dx, dy, ds)`` at the
solution, the pullback is

    r   = Dphi(z)' (dx, dy, ds)
    g   solves  (D_z N)' g = -r
    dQ  = g Pi(z)'

and the parameter gradients are read off the blocks of ``dQ - dQ'`` that
hold ``A``, ``b`` and ``c``. ``D_z N`` is singular along ``z`` itself, but
``r`` is always orthogonal to ``z`` and the null direction of ``(D_z N)'``
(which is ``Pi(z)``) cancels in ``dQ - dQ'``, so the bordered solve in
:class:`BorderedSolver` yields the exact gradient.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .embedding import (
    BorderedSolver,
    EmbeddingDerivativeContext,
    IllConditionedDerivativeError,
    dense_jacobian,
    project_embedding,
)
from .problem import ConicProblem, ConicSolution

logger = logging.getLogger(__name__)

# above this condition estimate the bordered LU is replaced by damped least squares
LU_CONDITION_LIMIT = 1e11
LSQR_DAMPING = 1e-12
# accepted relative residual of the least-squares fallback
LSQR_RESIDUAL_LIMIT = 1e-6


@dataclasses.dataclass(frozen=True)
class ParamGradients:
    """Gradient of a scalar loss with respect to ``A`` (on its pattern), ``b`` and ``c``."""

    dA: sp.csc_matrix
    db: np.ndarray
    dc: np.ndarray

    @classmethod
    def zeros(cls, problem: ConicProblem) -> "ParamGradients":
        dA = problem.A.copy()
        dA.data[:] = 0.0
        return cls(dA, np.zeros(problem.m), np.zeros(problem.n))


def _pullback_phi(ctx: EmbeddingDerivativeContext, dx, dy, ds) -> np.ndarray:
    """``Dphi(z)' (dx, dy, ds)`` for ``phi(z) = (u, Pi(v), Pi(v) - v) / w``."""
    n, m = ctx.problem_dims
    z, w = ctx.z, ctx.omega
    u, v = z[:n], z[n:n + m]
    dpi = ctx.dPi[n:n + m, n:n + m]
    pv = dpi @ v  # equals Pi_K*(v) by positive homogeneity
    r = np.empty(n + m + 1)
    r[:n] = dx / w
    r[n:n + m] = (dpi @ (dy + ds) - ds) / w
    r[-1] = -(u @ dx + pv @ dy + (pv - v) @ ds) / w ** 2
    return r


def solve_adjoint(ctx: EmbeddingDerivativeContext, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(D_z N)' g = rhs`` for ``rhs`` orthogonal to ``z``."""
    n = ctx.problem_dims[0]
    J = dense_jacobian(ctx.Q.toarray(), ctx.z, n, ctx.cones)
    p = project_embedding(ctx.z, n, ctx.cones)
    lu = BorderedSolver(J, ctx.z, p)
    cond = lu.condition_estimate
    if cond <= LU_CONDITION_LIMIT:
        return ctx.omega * lu.solve_transpose(rhs)
    logger.warning("adjoint system ill-conditioned (%.2e); using damped least squares", cond)
    JT = sp.csr_matrix(J.T)
    sol = spla.lsqr(JT, ctx.omega * rhs, damp=LSQR_DAMPING, atol=1e-14, btol=1e-14,
                    iter_lim=20 * J.shape[0])[0]
    rel = np.linalg.norm(JT @ sol - ctx.omega * rhs) / max(np.linalg.norm(rhs) * ctx.omega, 1e-300)
    if not rel <= LSQR_RESIDUAL_LIMIT:
        raise IllConditionedDerivativeError("adjoint system is singular at this solution", cond)
    return sol


def derivative_context(problem: ConicProblem, solution: ConicSolution) -> EmbeddingDerivativeContext:
    if not solution.optimal:
        raise ValueError(f"cannot differentiate a solution with status {solution.status.value}")
    return EmbeddingDerivativeContext.at(problem, solution.z)


def vjp_solution_map(problem: ConicProblem, solution: ConicSolution,
                     grad_xys: tuple[np.ndarray | None, np.ndarray | None, np.ndarray | None],
                     ctx: EmbeddingDerivativeContext | None = None) -> ParamGradients:
    """Pull ``(dx, dy, ds)`` back to gradients with respect to ``(A, b, c)``.

    ``None`` entries of ``grad_xys`` stand for zero gradients.
    """
    n, m = problem.n, problem.m
    dx, dy, ds = (np.zeros(k) if g is None else np.asarray(g, dtype=float)
                  for g, k in zip(grad_xys, (n, m, m)))
    if dx.shape != (n,) or dy.shape != (m,) or ds.shape != (m,):
        raise ValueError("gradient shapes do not match the problem")
    if not (np.any(dx) or np.any(dy) or np.any(ds)):
        return ParamGradients.zeros(problem)
    ctx = ctx or derivative_context(problem, solution)
    r = _pullback_phi(ctx, dx, dy, ds)
    g = solve_adjoint(ctx, -r)
    p = project_embedding(ctx.z / ctx.omega, n, problem.cones)
    gx, gv, gw = g[:n], g[n:n + m], g[-1]
    px, pv, pw = p[:n], p[n:n + m], p[-1]
    # dQ = g p'; A sits at Q[x, v] (transposed) and -A at Q[v, x]
    A = problem.A
    rows = A.indices
    cols = np.repeat(np.arange(n), np.diff(A.indptr))
    dA = sp.csc_matrix((gx[cols] * pv[rows] - gv[rows] * px[cols], A.indices.copy(), A.indptr.copy()),
                       shape=A.shape)
    db = gv * pw - gw * pv
    dc = gx * pw - gw * px
    return ParamGradients(dA, db, dc)
