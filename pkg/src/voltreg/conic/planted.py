"""Random feasible conic programs with a known primal-dual solution.

A random point ``v`` is split by the Moreau decomposition into a slack
``s = Pi_K(v)`` and a complementary dual ``y = s - v``; choosing ``b`` and
``c`` to make a random ``x`` primal feasible and ``y`` dual feasible turns
``(x, y, s)`` into an optimal solution. Instances whose embedding Jacobian
is singular at that solution (non-unique solutions) are rejected, so the
solution map is differentiable at every generated problem.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from .cones import ConeSpec, project_cone
from .embedding import BorderedSolver, build_Q, embedding_jacobian, project_embedding
from .problem import ConicProblem, embedding_point

# rejection threshold on the bordered-Jacobian condition estimate
MAX_CONDITION = 1e6


@dataclasses.dataclass(frozen=True)
class PlantedProblem:
    problem: ConicProblem
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray

    @property
    def objective(self) -> float:
        return float(self.problem.c @ self.x)


def _random_cones(rng: np.random.Generator, m: int) -> ConeSpec:
    zero = int(rng.integers(0, max(1, m // 6) + 1))
    nonneg = int(rng.integers(1, max(2, m // 3)))
    socs = []
    rest = m - zero - nonneg
    while rest >= 2:
        d = int(min(rest, rng.integers(2, 6)))
        if rest - d == 1:
            d += 1
        socs.append(d)
        rest -= d
    return ConeSpec(zero, nonneg + rest, tuple(socs))


def _jacobian_condition(problem: ConicProblem, x, y, s) -> float:
    z = embedding_point(x, y, s)
    Q = build_Q(problem)
    eye = sp.identity(Q.shape[0], format="csc")
    J = (Q - eye) @ embedding_jacobian(z, problem.n, problem.cones) + eye
    return BorderedSolver(J, z, project_embedding(z, problem.n, problem.cones)).condition_estimate


def planted_socp(rng: np.random.Generator, n: int, m: int | None = None,
                 density: float = 0.3, max_tries: int = 50,
                 max_condition: float | None = MAX_CONDITION) -> PlantedProblem:
    """Random SOCP with ``n`` variables and about ``m`` rows.

    With ``max_condition=None`` the regularity filter is skipped; the planted
    point is still optimal but need not be the unique solution.
    """
    m = m if m is not None else 2 * n
    for _ in range(max_tries):
        cones = _random_cones(rng, m)
        A = sp.random(m, n, density=density, random_state=rng,
                      data_rvs=rng.standard_normal, format="csc")
        # guarantee every column is touched
        A = A + sp.csc_matrix((rng.standard_normal(n), (rng.integers(0, m, n), np.arange(n))),
                              shape=(m, n))
        v = rng.standard_normal(m)
        s = project_cone(v, cones)
        y = s - v
        x = rng.standard_normal(n)
        problem = ConicProblem(A, A @ x + s, -(A.T @ y), cones)
        if max_condition is None or _jacobian_condition(problem, x, y, s) < max_condition:
            return PlantedProblem(problem, x, y, s)
    raise RuntimeError(f"no regular instance found in {max_tries} draws (n={n}, m={m})")
