"""Conic program data, solutions and solver settings.

Programs have the standard form

    minimize  c'x   subject to  Ax + s = b,  s in K

with dual  maximize -b'y  subject to  A'y + c = 0,  y in K*.
"""

from __future__ import annotations

import dataclasses
import enum
import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .cones import ConeSpec, DimensionError


class Status(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


@dataclasses.dataclass(frozen=True, eq=False)
class ConicProblem:
    """Immutable conic program. ``A`` is stored as canonical CSC."""

    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    cones: ConeSpec

    def __post_init__(self):
        A = sp.csc_matrix(self.A, dtype=float)
        A.sum_duplicates()
        A.sort_indices()
        b = np.array(self.b, dtype=float).ravel()
        c = np.array(self.c, dtype=float).ravel()
        m, n = A.shape
        if self.cones.total_dim != m:
            raise DimensionError(f"cones cover {self.cones.total_dim} rows, A has {m}")
        if len(b) != m or len(c) != n:
            raise DimensionError(f"b has {len(b)} entries (want {m}), c has {len(c)} (want {n})")
        if not (np.all(np.isfinite(A.data)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("problem data contains NaN or inf")
        b.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def with_data(self, A=None, b=None, c=None) -> "ConicProblem":
        return ConicProblem(self.A if A is None else A, self.b if b is None else b,
                            self.c if c is None else c, self.cones)

    def to_dict(self) -> dict:
        coo = self.A.tocoo()
        return {
            "n": self.n,
            "m": self.m,
            "cones": self.cones.to_dict(),
            "A": [[int(i), int(j), float(v)] for i, j, v in zip(coo.row, coo.col, coo.data)],
            "b": self.b.tolist(),
            "c": self.c.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConicProblem":
        trip = np.array(d["A"], dtype=float).reshape(-1, 3)
        A = sp.csc_matrix((trip[:, 2], (trip[:, 0].astype(int), trip[:, 1].astype(int))),
                          shape=(int(d["m"]), int(d["n"])))
        return cls(A, d["b"], d["c"], ConeSpec.from_dict(d["cones"]))

    def dump_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load_json(cls, path: str | Path) -> "ConicProblem":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def residuals(self, x: np.ndarray, y: np.ndarray, s: np.ndarray) -> tuple[float, float, float]:
        """Infinity-norm primal and dual residuals and the absolute duality gap."""
        pri = np.linalg.norm(self.A @ x + s - self.b, np.inf) if self.m else 0.0
        dua = np.linalg.norm(self.A.T @ y + self.c, np.inf) if self.n else 0.0
        gap = abs(self.c @ x + self.b @ y)
        return float(pri), float(dua), float(gap)


@dataclasses.dataclass(frozen=True)
class SolverSettings:
    tolerance: float = 1e-7
    max_iters: int = 50_000
    relaxation: float = 1.5
    scaling: bool = True
    # step weights of the splitting: x-block weight and initial y-block scale
    rho_x: float = 1e-6
    scale: float = 0.1
    adaptive_scale: bool = True
    check_every: int = 10
    # semismooth Newton passes on the embedding residual after the splitting
    refine_steps: int = 10

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 < self.relaxation < 2:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")

    def replace(self, **kw) -> "SolverSettings":
        return dataclasses.replace(self, **kw)


@dataclasses.dataclass(frozen=True)
class ConicSolution:
    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    z: np.ndarray
    omega: float
    status: Status
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int

    @property
    def residuals(self) -> tuple[float, float, float]:
        return (self.primal_residual, self.dual_residual, self.gap)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def embedding_point(x: np.ndarray, y: np.ndarray, s: np.ndarray, omega: float = 1.0) -> np.ndarray:
    """Embedding point ``z = (x, y - s, 1)`` scaled by ``omega``."""
    return omega * np.concatenate([x, y - s, [1.0]])
