"""Operator-splitting solver on the homogeneous self-dual embedding.

Douglas-Rachford splitting for the embedding ``0 in Qu + N_C(u)`` with
``C = R^n x K* x R_+``:

    u_tilde = (R + Q)^{-1} R w          linear-system step
    u       = Pi_C(2 u_tilde - w)       cone projection step
    w       = w + alpha (u - u_tilde)   over-relaxed averaging

``R`` is a diagonal metric (x-weight ``rho_x``, y-weight ``1/scale``) and is
constant on every cone block, so the projection stays Euclidean. The linear
system step only needs a factorization of ``rho_x I + A' R_y^{-1} A``, which
depends on ``A`` alone; every problem sharing ``A`` and ``c`` reuses it, and
``b`` enters through a per-problem rank-one correction. Problems sharing
``A`` and ``c`` can therefore be solved as a batch.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from collections import OrderedDict

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .cones import ConeSpec, project_cone
from .embedding import newton_refine
from .problem import ConicProblem, ConicSolution, SolverSettings, Status, embedding_point

logger = logging.getLogger(__name__)

_SCALE_MIN, _SCALE_MAX = 1e-6, 1e6
_EQUIL_MIN, _EQUIL_MAX = 1e-4, 1e4
_ZERO_ROW_FACTOR = 1e-3
# splitting accuracy at which the Newton polish takes over
REFINE_TRIGGER = 1e-2
_POLISH_PERIOD = 1000


def _ruiz(A: sp.csc_matrix, cones: ConeSpec, iters: int = 25):
    """Row/column scaling making the infinity norms of ``D A E`` close to 1.

    Row factors are shared within each SOC block so the cone is preserved.
    """
    m, n = A.shape
    d = np.ones(m)
    e = np.ones(n)
    Ak = A.copy().tocsr()
    blocks = list(cones.soc_groups.values())
    for _ in range(iters):
        absA = abs(Ak)
        row = np.asarray(absA.max(axis=1).todense()).ravel() if n else np.zeros(m)
        col = np.asarray(absA.max(axis=0).todense()).ravel() if m else np.zeros(n)
        for rows in blocks:
            row[rows] = row[rows].max(axis=1, keepdims=True)
        dr = np.where(row > 0, 1.0 / np.sqrt(np.maximum(row, 1e-300)), 1.0)
        dc = np.where(col > 0, 1.0 / np.sqrt(np.maximum(col, 1e-300)), 1.0)
        d = np.clip(d * dr, _EQUIL_MIN, _EQUIL_MAX)
        e = np.clip(e * dc, _EQUIL_MIN, _EQUIL_MAX)
        Ak = sp.diags(d) @ A @ sp.diags(e)
        if np.all(np.abs(dr - 1) < 1e-3) and np.all(np.abs(dc - 1) < 1e-3):
            break
    return d, e


def _rmul(X: np.ndarray, M: sp.csr_matrix) -> np.ndarray:
    """Row-wise ``M @ x`` for every row of ``X`` (avoids scipy's per-call transpose)."""
    return (M @ X.T).T


@dataclasses.dataclass(frozen=True)
class _Metric:
    scale: float
    rho_x: float
    r_y: np.ndarray
    chol: tuple

    @property
    def diag(self) -> np.ndarray:
        return np.concatenate([np.full(len(self.chol[0]), self.rho_x), self.r_y, [1.0]])


class SplittingWorkspace:
    """Factorized data for every problem sharing ``(A, c, cones)``."""

    def __init__(self, A: sp.spmatrix, c: np.ndarray, cones: ConeSpec, settings: SolverSettings):
        self.A = sp.csc_matrix(A)
        self.c = np.asarray(c, dtype=float)
        self.cones = cones
        self.settings = settings
        self.m, self.n = self.A.shape
        if settings.scaling and self.A.nnz:
            self.D, self.E = _ruiz(self.A, cones)
        else:
            self.D, self.E = np.ones(self.m), np.ones(self.n)
        self.As = (sp.diags(self.D) @ self.A @ sp.diags(self.E)).tocsr()
        self.AsT = self.As.T.tocsr()
        self.Acsr = self.A.tocsr()
        self.AT = self.A.T.tocsr()
        cs = self.E * self.c
        self.sigma_c = 1.0 / np.clip(np.linalg.norm(cs, np.inf), 1e-4, 1e4) if settings.scaling else 1.0
        self.cs = self.sigma_c * cs
        self._zero_mask = np.zeros(self.m, dtype=bool)
        self._zero_mask[:cones.zero_dim] = True
        self._metrics: dict[float, _Metric] = {}

    def metric(self, scale: float) -> "_Metric":
        met = self._metrics.get(scale)
        if met is None:
            ry = np.full(self.m, 1.0 / scale)
            ry[self._zero_mask] *= _ZERO_ROW_FACTOR
            rho_x = self.settings.rho_x
            K = rho_x * np.eye(self.n) + (self.AsT @ sp.diags(1.0 / ry) @ self.As).toarray()
            chol = sla.cho_factor(K, lower=True, check_finite=False)
            met = _Metric(scale, rho_x, ry, chol)
            self._metrics[scale] = met
        return met

    def _solve_MR(self, met, rx: np.ndarray, ry: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Solve ``[[rho_x I, A'], [-A, R_y]] (px, py) = (rx, ry)`` row-wise."""
        rhs = rx.T - self.AsT @ (ry / met.r_y).T
        pxT = sla.cho_solve(met.chol, rhs, check_finite=False)
        py = (ry + (self.As @ pxT).T) / met.r_y
        px = pxT.T
        return px, py

    def _prepare_b(self, met, bs: np.ndarray):
        n = self.n
        h = np.concatenate([np.broadcast_to(self.cs, (bs.shape[0], n)), bs], axis=1)
        gx, gy = self._solve_MR(met, h[:, :n], h[:, n:])
        g = np.concatenate([gx, gy], axis=1)
        denom = 1.0 + np.einsum("ij,ij->i", h, g)
        return h, g, denom

    def _linsys(self, met, r: np.ndarray, h, g, denom) -> np.ndarray:
        n = self.n
        px, py = self._solve_MR(met, r[:, :n], r[:, n:-1])
        pxy = np.concatenate([px, py], axis=1)
        ptau = (r[:, -1] + np.einsum("ij,ij->i", h, pxy)) / denom
        return np.concatenate([pxy - ptau[:, None] * g, ptau[:, None]], axis=1)

    def _project(self, p: np.ndarray) -> np.ndarray:
        n = self.n
        out = p.copy()
        out[:, n:-1] = project_cone(p[:, n:-1], self.cones, dual=True)
        out[:, -1] = np.maximum(p[:, -1], 0.0)
        return out

    def _unscale(self, u, v, sigma_b):
        n = self.n
        tau = u[:, -1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = self.E * u[:, :n] / tau / sigma_b[:, None]
            y = self.D * u[:, n:-1] / tau / self.sigma_c
            s = v[:, n:-1] / self.D / tau / sigma_b[:, None]
        return x, y, s

    def _kkt(self, x, y, s, B):
        # iterates with tau = 0 carry inf/nan and simply never pass the test
        with np.errstate(invalid="ignore", over="ignore"):
            pri = np.abs(_rmul(x, self.Acsr) + s - B).max(axis=1) if self.m else np.zeros(len(x))
            dua = np.abs(_rmul(y, self.AT) + self.c).max(axis=1) if self.n else np.zeros(len(x))
            gap = np.abs(x @ self.c + np.einsum("ij,ij->i", y, B))
        return pri, dua, gap

    def _certificates(self, u, v, B, tol):
        """Flags for primal infeasibility and unboundedness certificates."""
        n = self.n
        yc = self.D * u[:, n:-1]
        xc = self.E * u[:, :n]
        sc = v[:, n:-1] / self.D
        by = np.einsum("ij,ij->i", B, yc)
        cx = xc @ self.c
        with np.errstate(divide="ignore", invalid="ignore"):
            aty = np.abs(_rmul(yc, self.AT)).max(axis=1) / -by if self.n else np.zeros(len(B))
            axs = np.abs(_rmul(xc, self.Acsr) + sc).max(axis=1) / -cx if self.m else np.zeros(len(B))
        infeas = (by < 0) & (aty <= tol)
        unbdd = (cx < 0) & (axs <= tol)
        return infeas, unbdd

    def _warm_point(self, met, ws, sigma_b: float) -> np.ndarray:
        n = self.n
        x0, y0, s0 = (np.asarray(a, dtype=float) for a in ws)
        w = np.empty(n + self.m + 1)
        w[:n] = x0 / self.E * sigma_b
        w[n:-1] = (y0 / self.D * self.sigma_c) + (s0 * self.D * sigma_b) / met.r_y
        w[-1] = 1.0
        return w

    def _iterate(self, st: SolverSettings, B, Bs, sigma_b, warm, tol: float, max_iters: int):
        """Run the splitting on every row of ``B`` until ``tol`` or ``max_iters``.

        With ``refine_steps > 0`` a Newton polish is attempted whenever a
        problem's residual has dropped by another decade (starting at
        ``REFINE_TRIGGER``) and every ``_POLISH_PERIOD`` iterations.
        """
        polish = st.refine_steps > 0
        next_polish = np.full(B.shape[0], REFINE_TRIGGER)
        last_polish = np.zeros(B.shape[0], dtype=int)
        polished = {}
        k = B.shape[0]
        n, m = self.n, self.m
        met = self.metric(st.scale)
        h, g, denom = self._prepare_b(met, Bs)
        w = np.zeros((k, n + m + 1))
        w[:, -1] = 1.0
        if warm is not None:
            for i, ws in enumerate(warm):
                if ws is not None:
                    w[i] = self._warm_point(met, ws, sigma_b[i])

        rdiag = met.diag
        alpha = st.relaxation
        status = np.full(k, Status.ITER_LIMIT, dtype=object)
        iters = np.full(k, max_iters)
        result_u = np.zeros_like(w)
        result_v = np.zeros_like(w)
        last_scale_update = 0
        active = np.arange(k)
        for it in range(1, max_iters + 1):
            wa = w[active]
            ut = self._linsys(met, rdiag * wa, h[active], g[active], denom[active])
            u = self._project(2 * ut - wa)
            if not (it % st.check_every == 0 or it == max_iters):
                w[active] = wa + alpha * (u - ut)
                continue
            v = rdiag * (wa + u - 2 * ut)
            x, y, s = self._unscale(u, v, sigma_b[active])
            pri, dua, gap = self._kkt(x, y, s, B[active])
            conv = (u[:, -1] > 0) & (pri <= tol) & (dua <= tol) & (gap <= tol)
            if polish:
                worst = np.maximum(np.maximum(pri, dua), gap)
                for j in np.flatnonzero(~conv & (u[:, -1] > 0) & np.isfinite(worst)):
                    i = active[j]
                    if worst[j] > next_polish[i] and it - last_polish[i] < _POLISH_PERIOD:
                        continue
                    last_polish[i] = it
                    next_polish[i] = min(next_polish[i], worst[j]) / 10
                    xi, yi, si, res = self._refine(st, B[i], x[j], y[j], s[j])
                    if res <= tol:
                        polished[i] = (xi, yi, si)
                        conv[j] = True
            infeas, unbdd = self._certificates(u, v, B[active], tol)
            infeas &= ~conv
            unbdd &= ~conv & ~infeas
            fin = conv | infeas | unbdd
            if it == max_iters:
                fin[:] = True
            idx = active[fin]
            status[active[conv]] = Status.OPTIMAL
            status[active[infeas]] = Status.INFEASIBLE
            status[active[unbdd]] = Status.UNBOUNDED
            iters[idx] = it
            result_u[idx] = u[fin]
            result_v[idx] = v[fin]
            w[active] = wa + alpha * (u - ut)
            if (st.adaptive_scale and it - last_scale_update >= 10 * st.check_every
                    and np.any(~fin)):
                new = self._scale_update(met.scale, u[~fin], v[~fin], Bs[active[~fin]])
                if new is not None:
                    last_scale_update = it
                    met = self.metric(new)
                    rdiag = met.diag
                    h, g, denom = self._prepare_b(met, Bs)
                    # keep (u, v) fixed under the new metric
                    w[active[~fin]] = u[~fin] + v[~fin] / rdiag
            active = active[~fin]
            if len(active) == 0:
                break
        x, y, s = self._unscale(result_u, result_v, sigma_b)
        for i, (xi, yi, si) in polished.items():
            x[i], y[i], s[i] = xi, yi, si
        return status, iters, x, y, s

    def _refine(self, st: SolverSettings, b, x, y, s):
        problem = ConicProblem(self.A, b, self.c, self.cones)
        return newton_refine(problem, x, y, s, steps=st.refine_steps, tol=st.tolerance)

    def solve_batch(self, B: np.ndarray, warm: list | None = None,
                    settings: SolverSettings | None = None) -> list[ConicSolution]:
        """Solve every row of ``B`` as the right-hand side ``b``.

        With ``refine_steps > 0`` semismooth Newton steps on the embedding
        residual are interleaved with the splitting; see :meth:`_iterate`.
        """
        st = settings or self.settings
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if B.shape[1] != self.m:
            raise ValueError(f"right-hand sides have {B.shape[1]} rows, expected {self.m}")
        if not np.all(np.isfinite(B)):
            raise ValueError("right-hand side contains NaN or inf")
        k = B.shape[0]
        n, m = self.n, self.m
        Bs = B * self.D
        if st.scaling:
            sigma_b = 1.0 / np.clip(np.abs(Bs).max(axis=1, initial=0.0), 1e-4, 1e4)
        else:
            sigma_b = np.ones(k)
        Bs = Bs * sigma_b[:, None]

        status, iters, x, y, s = self._iterate(st, B, Bs, sigma_b, warm, st.tolerance, st.max_iters)

        out = []
        for i in range(k):
            xi, yi, si = x[i], y[i], s[i]
            st_i = status[i]
            if st_i is not Status.OPTIMAL:
                xi = np.where(np.isfinite(xi), xi, np.nan)
            pri, dua, gap = self._kkt(xi[None], yi[None], si[None], B[i:i + 1])
            out.append(ConicSolution(
                x=xi, y=yi, s=si,
                z=embedding_point(xi, yi, si) if st_i is Status.OPTIMAL else np.full(n + m + 1, np.nan),
                omega=1.0, status=st_i,
                primal_residual=float(pri[0]), dual_residual=float(dua[0]), gap=float(gap[0]),
                iterations=int(iters[i])))
        return out

    def _scale_update(self, scale, u, v, Bs):
        n = self.n
        tau = u[:, -1:]
        # tau may vanish on infeasible iterates; those rows are masked below
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            x, y, s = u[:, :n] / tau, u[:, n:-1] / tau, v[:, n:-1] / tau
            Ax = _rmul(x, self.As)
            pres = np.linalg.norm(Ax + s - Bs, axis=1) / np.maximum.reduce(
                [np.linalg.norm(Ax, axis=1), np.linalg.norm(s, axis=1), np.linalg.norm(Bs, axis=1), np.full(len(u), 1e-12)])
            Aty = _rmul(y, self.AsT)
            dres = np.linalg.norm(Aty + self.cs, axis=1) / np.maximum.reduce(
                [np.linalg.norm(Aty, axis=1), np.full(len(u), np.linalg.norm(self.cs)), np.full(len(u), 1e-12)])
        ok = np.isfinite(pres) & np.isfinite(dres) & (dres > 0) & (pres > 0)
        if not np.any(ok):
            return None
        ratio = np.exp(np.mean(np.log(pres[ok] / dres[ok])))
        factor = np.sqrt(ratio)
        if 1 / 3 < factor < 3:
            return None
        # snap to a half-octave grid so factorizations can be reused
        new = 2.0 ** (np.round(2 * np.log2(scale * factor)) / 2)
        return float(np.clip(new, _SCALE_MIN, _SCALE_MAX))


_WORKSPACES: "OrderedDict[str, SplittingWorkspace]" = OrderedDict()
_CACHE_SIZE = 16


def _key(A: sp.csc_matrix, c: np.ndarray, cones: ConeSpec, settings: SolverSettings) -> str:
    hsh = hashlib.sha1()
    for arr in (A.indptr, A.indices, A.data, c):
        hsh.update(np.ascontiguousarray(arr).tobytes())
    hsh.update(repr((A.shape, cones, settings.scaling, settings.rho_x)).encode())
    return hsh.hexdigest()


def workspace_for(A, c, cones: ConeSpec, settings: SolverSettings) -> SplittingWorkspace:
    """Cached workspace; refactors only when ``A``, ``c`` or the cones change."""
    A = sp.csc_matrix(A)
    key = _key(A, np.asarray(c, dtype=float), cones, settings)
    ws = _WORKSPACES.get(key)
    if ws is None:
        ws = SplittingWorkspace(A, c, cones, settings)
        _WORKSPACES[key] = ws
        if len(_WORKSPACES) > _CACHE_SIZE:
            _WORKSPACES.popitem(last=False)
    else:
        _WORKSPACES.move_to_end(key)
        ws.settings = settings
    return ws


def solve(problem: ConicProblem, settings: SolverSettings | None = None,
          warm_start=None) -> ConicSolution:
    """Solve a single conic program."""
    settings = settings or SolverSettings()
    ws = workspace_for(problem.A, problem.c, problem.cones, settings)
    return ws.solve_batch(problem.b[None], warm=[warm_start] if warm_start else None,
                          settings=settings)[0]


def solve_batch(problems: list[ConicProblem], settings: SolverSettings | None = None,
                warm_starts=None) -> list[ConicSolution]:
    """Solve problems that share ``A``, ``c`` and cones (only ``b`` differs)."""
    settings = settings or SolverSettings()
    if not problems:
        return []
    first = problems[0]
    ws = workspace_for(first.A, first.c, first.cones, settings)
    B = np.stack([p.b for p in problems])
    return ws.solve_batch(B, warm=warm_starts, settings=settings)
