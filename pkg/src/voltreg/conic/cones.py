"""Cone layout, Euclidean projections and projection Jacobians.

Rows of a conic program are ordered as one zero-cone block, one nonnegative
block, then any number of second-order cone blocks ``(t, x)`` with
``||x|| <= t``. Every function here accepts either a single vector of length
``m`` or a 2-D batch with the cone rows on the last axis.
"""

from __future__ import annotations

import dataclasses
import logging
from functools import cached_property

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

# |‖x‖ - |t|| below this is reported as a projection kink.
BOUNDARY_WARN = 1e-9


class DimensionError(ValueError):
    """Vector or matrix sizes disagree with the cone layout."""


@dataclasses.dataclass(frozen=True)
class ConeSpec:
    """Sizes of the zero, nonnegative and second-order cone blocks."""

    zero_dim: int = 0
    nonneg_dim: int = 0
    soc_dims: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "soc_dims", tuple(int(d) for d in self.soc_dims))
        if self.zero_dim < 0 or self.nonneg_dim < 0:
            raise DimensionError("cone block sizes must be nonnegative")
        if any(d < 2 for d in self.soc_dims):
            raise DimensionError("second-order cone blocks need size >= 2")

    @property
    def total_dim(self) -> int:
        return self.zero_dim + self.nonneg_dim + sum(self.soc_dims)

    @cached_property
    def soc_groups(self) -> dict[int, np.ndarray]:
        """Row indices of SOC blocks grouped by block size.

        ``groups[d]`` has shape ``(num_blocks_of_size_d, d)``; column 0 holds
        the ``t`` row of each block.
        """
        start = self.zero_dim + self.nonneg_dim
        groups: dict[int, list[np.ndarray]] = {}
        for d in self.soc_dims:
            groups.setdefault(d, []).append(np.arange(start, start + d))
            start += d
        return {d: np.array(rows) for d, rows in groups.items()}

    def to_dict(self) -> dict:
        return {"zero": self.zero_dim, "nonneg": self.nonneg_dim, "soc": list(self.soc_dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "ConeSpec":
        return cls(int(d.get("zero", 0)), int(d.get("nonneg", 0)), tuple(d.get("soc", ())))


def _check(v: np.ndarray, cones: ConeSpec) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != cones.total_dim:
        raise DimensionError(
            f"vector length {v.shape[-1]} does not match cone dimension {cones.total_dim}")
    return v


def _soc_project(block: np.ndarray) -> np.ndarray:
    """Project rows ``(..., d)`` of stacked SOC blocks."""
    t = block[..., 0]
    x = block[..., 1:]
    nx = np.linalg.norm(x, axis=-1)
    alpha = 0.5 * (t + nx)
    inside = nx <= t
    mid = nx > np.abs(t)
    # entries with ``‖x‖ <= -t`` go to the origin
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = np.where(inside, 1.0, np.where(mid, alpha / nx, 0.0))
    out = np.empty_like(block)
    out[..., 0] = np.where(inside, t, np.where(mid, alpha, 0.0))
    out[..., 1:] = xs[..., None] * x
    return out


def project_cone(v: np.ndarray, cones: ConeSpec, dual: bool = False) -> np.ndarray:
    """Euclidean projection onto ``K`` (or onto ``K*`` with ``dual=True``).

    The only difference between the two is the zero block: ``{0}`` for the
    primal cone, free space for its dual. Nonnegative orthant and SOC are
    self-dual.
    """
    v = _check(v, cones)
    out = np.empty_like(v)
    z, nn = cones.zero_dim, cones.nonneg_dim
    out[..., :z] = v[..., :z] if dual else 0.0
    out[..., z:z + nn] = np.maximum(v[..., z:z + nn], 0.0)
    for rows in cones.soc_groups.values():
        out[..., rows] = _soc_project(v[..., rows])
    return out


def _soc_jacobians(block: np.ndarray) -> np.ndarray:
    """Projection Jacobians for stacked SOC blocks of shape ``(k, d)``.

    On the kink ``‖x‖ == |t|`` the branch for the cone interior (or the
    origin, for the polar side) is used.
    """
    k, d = block.shape
    t = block[:, 0]
    x = block[:, 1:]
    nx = np.linalg.norm(x, axis=1)
    jac = np.zeros((k, d, d))
    inside = nx <= t
    jac[inside] = np.eye(d)
    mid = nx > np.abs(t)
    if np.any(mid):
        tm, xm, nm = t[mid], x[mid], nx[mid]
        xbar = xm / nm[:, None]
        ratio = tm / nm
        jm = np.empty((len(tm), d, d))
        jm[:, 0, 0] = 1.0
        jm[:, 0, 1:] = xbar
        jm[:, 1:, 0] = xbar
        jm[:, 1:, 1:] = ((1.0 + ratio)[:, None, None] * np.eye(d - 1)
                         - ratio[:, None, None] * xbar[:, :, None] * xbar[:, None, :])
        jac[mid] = 0.5 * jm
    near = np.abs(nx - np.abs(t)) < BOUNDARY_WARN
    if np.any(near & (nx + np.abs(t) > 0)):
        logger.warning("%d SOC block(s) within %.0e of a projection kink",
                       int(np.sum(near)), BOUNDARY_WARN)
    return jac


class ProjectionJacobian:
    """Jacobian of :func:`project_cone` at a fixed point, as a linear map.

    The map is symmetric, so ``apply`` also serves for transposed products.
    """

    def __init__(self, v: np.ndarray, cones: ConeSpec, dual: bool = False):
        v = _check(v, cones)
        if v.ndim != 1:
            raise DimensionError("Jacobian is defined at a single point")
        self.cones = cones
        self.dual = dual
        z, nn = cones.zero_dim, cones.nonneg_dim
        self._diag_zero = 1.0 if dual else 0.0
        # a zero entry sits on the kink; take the identity branch
        self._diag_nonneg = (v[z:z + nn] >= 0).astype(float)
        self._soc = {d: (rows, _soc_jacobians(v[rows]))
                     for d, rows in cones.soc_groups.items()}

    @property
    def shape(self) -> tuple[int, int]:
        m = self.cones.total_dim
        return (m, m)

    def apply(self, u: np.ndarray) -> np.ndarray:
        u = _check(u, self.cones)
        z, nn = self.cones.zero_dim, self.cones.nonneg_dim
        out = np.empty_like(u)
        out[..., :z] = self._diag_zero * u[..., :z]
        out[..., z:z + nn] = self._diag_nonneg * u[..., z:z + nn]
        for rows, jac in self._soc.values():
            out[..., rows] = np.einsum("kij,...kj->...ki", jac, u[..., rows])
        return out

    __matmul__ = apply

    def to_sparse(self) -> sp.csc_matrix:
        m = self.cones.total_dim
        z, nn = self.cones.zero_dim, self.cones.nonneg_dim
        rows = [np.arange(z + nn)]
        cols = [np.arange(z + nn)]
        vals = [np.concatenate([np.full(z, self._diag_zero), self._diag_nonneg])]
        for idx, jac in self._soc.values():
            rows.append(np.repeat(idx, idx.shape[1], axis=1).ravel())
            cols.append(np.tile(idx, (1, idx.shape[1])).ravel())
            vals.append(jac.ravel())
        return sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray()


def dproject_cone(v: np.ndarray, cones: ConeSpec, dual: bool = False) -> ProjectionJacobian:
    """Jacobian of ``project_cone(., cones, dual)`` evaluated at ``v``."""
    return ProjectionJacobian(v, cones, dual)


def in_cone(v: np.ndarray, cones: ConeSpec, dual: bool = False, tol: float = 1e-9) -> bool:
    """Membership test with absolute tolerance ``tol``."""
    v = _check(v, cones)
    return bool(np.linalg.norm(project_cone(v, cones, dual) - v, np.inf) <= tol)

