"""Homogeneous self-dual embedding: skew map, residual map and its derivative.

For problem data ``(A, b, c)`` the embedding matrix is

    Q = [[ 0,   A',  c],
         [-A,   0,   b],
         [-c', -b',  0]]

and the normalized residual map is ``N(z, Q) = ((Q - I) Pi + I)(z / |w|)``
with ``Pi`` the projection onto ``R^n x K* x R_+`` and ``w`` the last entry
of ``z``. A point with ``N(z, Q) = 0`` and ``w > 0`` encodes a primal-dual
solution through :func:`construct_solution`.

Since ``f(z) = (Q - I) Pi(z) + z`` is positively homogeneous, its Jacobian
``J = (Q - I) DPi(z) + I`` annihilates ``z`` at a solution and ``J'``
annihilates ``Pi(z)``. Linear systems with ``J`` are therefore solved in the
bordered form ``[[J, Pi(z)], [z', 0]]``, which is nonsingular at regular
solutions and returns the solution orthogonal to the trivial direction.
"""

from __future__ import annotations

import dataclasses
import hashlib
import threading
import warnings
from collections import OrderedDict

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cones import ConeSpec, DimensionError, dproject_cone, project_cone
from .problem import ConicProblem


class DegenerateEmbeddingError(ValueError):
    """The embedding point has ``w <= 0`` and encodes no solution."""


class IllConditionedDerivativeError(RuntimeError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


def build_Q(problem: ConicProblem) -> sp.csc_matrix:
    """Skew-symmetric embedding matrix of ``problem``."""
    A = problem.A
    n, m = problem.n, problem.m
    b = sp.csc_matrix(problem.b.reshape(m, 1))
    c = sp.csc_matrix(problem.c.reshape(n, 1))
    Q = sp.bmat([
        [sp.csc_matrix((n, n)), A.T, c],
        [-A, sp.csc_matrix((m, m)), b],
        [-c.T, -b.T, sp.csc_matrix((1, 1))],
    ], format="csc")
    return Q


def _split_dims(Q, cones: ConeSpec) -> tuple[int, int]:
    N = Q.shape[0]
    m = cones.total_dim
    n = N - m - 1
    if n < 0:
        raise DimensionError(f"Q of size {N} cannot hold {m} cone rows")
    return n, m


def project_embedding(z: np.ndarray, n: int, cones: ConeSpec) -> np.ndarray:
    """Projection onto ``R^n x K* x R_+``."""
    out = np.array(z, dtype=float)
    out[..., n:-1] = project_cone(out[..., n:-1], cones, dual=True)
    out[..., -1] = np.maximum(out[..., -1], 0.0)
    return out


def embedding_jacobian(z: np.ndarray, n: int, cones: ConeSpec) -> sp.csc_matrix:
    """Sparse Jacobian of :func:`project_embedding` at ``z``."""
    dpi_v = dproject_cone(z[n:-1], cones, dual=True).to_sparse()
    w_part = sp.csc_matrix(np.array([[1.0 if z[-1] >= 0 else 0.0]]))
    return sp.block_diag([sp.identity(n, format="csc"), dpi_v, w_part], format="csc")


def dense_jacobian(Q: np.ndarray, z: np.ndarray, n: int, cones: ConeSpec) -> np.ndarray:
    """Dense ``(Q - I) DPi(z) + I`` from a dense ``Q``.

    ``DPi`` is symmetric and block diagonal, so right-multiplication acts on
    the rows of the cone columns.
    """
    N = Q.shape[0]
    J = Q - np.eye(N)
    dpi = dproject_cone(z[n:-1], cones, dual=True)
    J[:, n:-1] = dpi.apply(J[:, n:-1])
    if z[-1] < 0:
        J[:, -1] = 0.0
    J[np.diag_indices(N)] += 1.0
    return J


class EmbeddingTemplate:
    """Sparse embedding matrix for problems that share ``A``, ``c`` and cones.

    Only the last row and column of ``Q`` depend on ``b``. The sparsity
    pattern is fixed once and ``b`` is written into a fresh copy of the
    values, so one template can serve concurrent callers.
    """

    def __init__(self, A, c: np.ndarray, cones: ConeSpec):
        A = sp.csc_matrix(A)
        m, n = A.shape
        self.n, self.m, self.cones = n, m, cones
        N = n + m + 1
        c = np.asarray(c, dtype=float)
        # b = 1 fixes the pattern of the b-dependent entries
        Qs = build_Q(ConicProblem(A, np.ones(m), c, cones))
        Qs.sort_indices()
        self._Qs = Qs
        self._b_col = Qs.indptr[N - 1] + int(np.count_nonzero(c)) + np.arange(m)
        self._b_row = Qs.indptr[n + 1:n + m + 1] - 1
        self._eye = sp.identity(N, format="csc")

    def matrix(self, b: np.ndarray) -> sp.csc_matrix:
        data = self._Qs.data.copy()
        data[self._b_col] = b
        data[self._b_row] = -b
        return sp.csc_matrix((data, self._Qs.indices, self._Qs.indptr), shape=self._Qs.shape)

    def residual(self, b: np.ndarray, z: np.ndarray) -> np.ndarray:
        w = z[-1]
        if w == 0:
            raise DegenerateEmbeddingError("residual map undefined at w = 0")
        zn = z / abs(w)
        p = project_embedding(zn, self.n, self.cones)
        return self.matrix(b) @ p - p + zn

    def newton_step(self, b: np.ndarray, z: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Bordered Newton step with a sparse LU (no condition estimate).

        Near-singular systems yield steps that the caller's residual test rejects.
        """
        N = len(z)
        D = embedding_jacobian(z, self.n, self.cones)
        J = (self.matrix(b) @ D - D + self._eye).tocoo()
        p = project_embedding(z, self.n, self.cones)
        idx = np.arange(N)
        rows = np.concatenate([J.row, idx, np.full(N, N)])
        cols = np.concatenate([J.col, np.full(N, N), idx])
        vals = np.concatenate([J.data, p / max(np.linalg.norm(p), 1e-300), z / np.linalg.norm(z)])
        K = sp.csc_matrix((vals, (rows, cols)), shape=(N + 1, N + 1))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", spla.MatrixRankWarning)
            d = spla.splu(K).solve(np.append(rhs, 0.0))[:N]
        if not np.all(np.isfinite(d)):
            raise RuntimeError("singular Newton system")
        return d


_TEMPLATE_CACHE: "OrderedDict[str, EmbeddingTemplate]" = OrderedDict()
_TEMPLATE_LOCK = threading.Lock()


def embedding_template_for(problem: ConicProblem) -> EmbeddingTemplate:
    """Cached :class:`EmbeddingTemplate` keyed by the content of ``A``, ``c`` and cones."""
    A = problem.A
    hsh = hashlib.sha1()
    for arr in (A.indptr, A.indices, A.data, problem.c):
        hsh.update(np.ascontiguousarray(arr).tobytes())
    hsh.update(repr((A.shape, problem.cones)).encode())
    key = hsh.hexdigest()
    with _TEMPLATE_LOCK:
        emb = _TEMPLATE_CACHE.get(key)
        if emb is not None:
            _TEMPLATE_CACHE.move_to_end(key)
            return emb
    emb = EmbeddingTemplate(A, problem.c, problem.cones)
    with _TEMPLATE_LOCK:
        _TEMPLATE_CACHE[key] = emb
        if len(_TEMPLATE_CACHE) > 8:
            _TEMPLATE_CACHE.popitem(last=False)
    return emb


def residual_map(z: np.ndarray, Q, cones: ConeSpec) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    n, _ = _split_dims(Q, cones)
    if z.shape != (Q.shape[0],):
        raise DimensionError(f"z has shape {z.shape}, expected ({Q.shape[0]},)")
    w = z[-1]
    if w == 0:
        raise DegenerateEmbeddingError("residual map undefined at w = 0")
    zn = z / abs(w)
    p = project_embedding(zn, n, cones)
    return Q @ p - p + zn


def construct_solution(z: np.ndarray, omega: float | None, cones: ConeSpec):
    """Recover ``(x, y, s)`` from an embedding point.

    ``x = u / w``, ``y = Pi_K*(v) / w``, ``s = (Pi_K*(v) - v) / w``.
    """
    z = np.asarray(z, dtype=float)
    omega = z[-1] if omega is None else omega
    if not omega > 0:
        raise DegenerateEmbeddingError(f"omega must be positive, got {omega}")
    m = cones.total_dim
    n = len(z) - m - 1
    u, v = z[:n], z[n:-1]
    pv = project_cone(v, cones, dual=True)
    return u / omega, pv / omega, (pv - v) / omega


@dataclasses.dataclass(frozen=True)
class EmbeddingDerivativeContext:
    """Everything needed to apply ``D_z N`` at a (converged) embedding point."""

    Q: sp.csc_matrix
    z: np.ndarray
    omega: float
    dPi: sp.csc_matrix
    problem_dims: tuple[int, int]
    cones: ConeSpec

    @classmethod
    def at(cls, problem: ConicProblem, z: np.ndarray) -> "EmbeddingDerivativeContext":
        z = np.asarray(z, dtype=float)
        if not z[-1] > 0:
            raise DegenerateEmbeddingError(f"omega must be positive, got {z[-1]}")
        Q = build_Q(problem)
        return cls(Q, z, float(z[-1]), embedding_jacobian(z, problem.n, problem.cones),
                   (problem.n, problem.m), problem.cones)

    @property
    def size(self) -> int:
        return self.Q.shape[0]

    def unscaled_matrix(self) -> sp.csc_matrix:
        """``(Q - I) DPi + I`` without the ``1/omega`` factor."""
        eye = sp.identity(self.size, format="csc")
        return ((self.Q - eye) @ self.dPi + eye).tocsc()

    def matvec(self, u: np.ndarray) -> np.ndarray:
        du = self.dPi @ u
        return (self.Q @ du - du + u) / self.omega

    def rmatvec(self, g: np.ndarray) -> np.ndarray:
        # (Q - I)' = -Q - I, DPi symmetric
        return (self.dPi @ (-(self.Q @ g) - g) + g) / self.omega


def dz_residual(ctx: EmbeddingDerivativeContext) -> spla.LinearOperator:
    """``D_z N`` at a solution: ``u -> ((Q - I) DPi(z) u + u) / omega``.

    The term proportional to ``N(z, Q)`` vanishes at a solution and is
    dropped.
    """
    N = ctx.size
    return spla.LinearOperator((N, N), matvec=ctx.matvec, rmatvec=ctx.rmatvec, dtype=float)


class BorderedSolver:
    """Dense LU of ``[[J, p], [z', 0]]`` for ``J = (Q - I) DPi(z) + I``.

    ``solve(r)`` returns ``d`` with ``J d = r`` and ``z'd = 0`` whenever ``r``
    lies in the range of ``J`` (always true for residual-map perturbations at
    a solution). ``solve_transpose(r)`` returns ``g`` with ``J'g = r`` and
    ``p'g = 0`` whenever ``r`` is orthogonal to ``z``.
    """

    def __init__(self, J, z: np.ndarray, p: np.ndarray):
        N = J.shape[0]
        K = np.zeros((N + 1, N + 1))
        K[:N, :N] = J.toarray() if sp.issparse(J) else J
        K[:N, N] = p / max(np.linalg.norm(p), 1e-300)
        K[N, :N] = z / np.linalg.norm(z)
        self.N = N
        anorm = np.abs(K).sum(axis=0).max()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self._lu = sla.lu_factor(K, check_finite=False)
        rcond, _ = sla.lapack.dgecon(self._lu[0], anorm, norm="1")
        self.condition_estimate = float(np.inf if rcond <= 0 else 1.0 / rcond)

    def solve(self, r: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self._lu, np.append(r, 0.0), check_finite=False)[:self.N]

    def solve_transpose(self, r: np.ndarray) -> np.ndarray:
        return sla.lu_solve(self._lu, np.append(r, 0.0), trans=1, check_finite=False)[:self.N]


def newton_refine(problem: ConicProblem, x: np.ndarray, y: np.ndarray, s: np.ndarray,
                  steps: int = 10, tol: float = 0.0):
    """Semismooth Newton polish of an approximate solution on ``N(z, Q) = 0``.

    Returns ``(x, y, s, residual)`` for the best iterate seen, ``residual``
    being the infinity norm of the residual map. Full steps are taken unless
    they grow the residual more than tenfold, in which case the step is
    halved a few times. The polish stops when the Jacobian is singular
    (non-unique solutions or a wrongly identified active set).
    """
    n, cones, b = problem.n, problem.cones, problem.b
    emb = embedding_template_for(problem)
    z = np.concatenate([x, y - s, [1.0]])
    res = emb.residual(b, z)
    cur = float(np.linalg.norm(res, np.inf))
    best, best_z = cur, z
    for _ in range(steps):
        if best <= tol:
            break
        try:
            d = emb.newton_step(b, z, -res)
        except RuntimeError:
            # exactly singular: non-unique solution or wrong active set
            break
        for step in (1.0, 0.5, 0.25, 0.125):
            znew = z + step * d
            if not np.all(np.isfinite(znew)) or znew[-1] <= 0:
                continue
            znew = znew / znew[-1]
            rnew = emb.residual(b, znew)
            nrm = float(np.linalg.norm(rnew, np.inf))
            if nrm < (10.0 if step == 1.0 else 1.0) * cur:
                break
        else:
            break
        z, res, cur = znew, rnew, nrm
        if cur < best:
            best, best_z = cur, z
    x, y, s = construct_solution(best_z, best_z[-1], cones)
    return x, y, s, best

