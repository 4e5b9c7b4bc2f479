"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import cvxpy as cp
import numpy as np

from voltreg.conic.problem import ConicProblem
from voltreg.grid.network import Network


def reference_objective(problem: ConicProblem) -> float:
    """Optimal value of ``problem`` from Clarabel through cvxpy."""
    A = problem.A.toarray()
    x = cp.Variable(problem.n)
    s = problem.b - A @ x
    cones = problem.cones
    cons = []
    z, nn = cones.zero_dim, cones.nonneg_dim
    if z:
        cons.append(s[:z] == 0)
    if nn:
        cons.append(s[z:z + nn] >= 0)
    off = z + nn
    for d in cones.soc_dims:
        cons.append(cp.SOC(s[off], s[off + 1:off + d]))
        off += d
    prob = cp.Problem(cp.Minimize(problem.c @ x), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return float(prob.value)


def sweep_power_flow(net: Network, p_inj: np.ndarray, q_inj: np.ndarray, iters: int = 200):
    """Backward/forward sweep on complex current injections.

    ``p_inj``/``q_inj`` are per-unit net injections per bus. Returns squared
    voltages, squared branch currents and sending-end branch flows.
    """
    nb, nl = net.n_bus, net.n_branch
    V = np.full(nb, net.slack_voltage, dtype=complex)
    zb = net.r + 1j * net.x
    for _ in range(iters):
        I_inj = np.conj((p_inj + 1j * q_inj) / V)
        Ib = np.zeros(nl, dtype=complex)
        for i in reversed(net.bfs_order):
            if i == net.slack:
                continue
            k = net.parent_branch[i]
            Ib[k] = -I_inj[i] + sum(Ib[c] for c in net.children(i))
        for i in net.bfs_order:
            if i == net.slack:
                continue
            k = net.parent_branch[i]
            V[i] = V[net.from_bus[k]] - zb[k] * Ib[k]
    S = V[net.from_bus] * np.conj(Ib)
    return np.abs(V) ** 2, np.abs(Ib) ** 2, S.real, S.imag
