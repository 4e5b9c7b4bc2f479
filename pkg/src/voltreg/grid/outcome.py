"""Unpack solved regulation programs into physical quantities and scores."""

from __future__ import annotations

import dataclasses

import numpy as np

from ..conic.problem import ConicSolution, Status
from .builders import ParamMap
from .network import Network

# voltage-box tolerance (p.u. squared) when counting violations
VIOLATION_TOL = 1e-4


class OutcomeError(RuntimeError):
    def __init__(self, status: Status):
        super().__init__(f"cannot extract an outcome from a {status.value} solution")
        self.status = status


@dataclasses.dataclass(frozen=True)
class RegulationOutcome:
    """One timestep of a solved program, in kW/kvar except for the flows (p.u.)."""

    q_reg: np.ndarray
    power_loss: float
    penalty: float
    v: np.ndarray
    l: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    relaxation_gap: float
    q_dg: np.ndarray | None = None

    def __post_init__(self):
        if self.power_loss < -1e-6 or self.penalty < -1e-6:
            raise ValueError("loss and penalty must be non-negative")

    @property
    def voltage(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.v, 0.0))

    def to_dict(self) -> dict:
        out = {
            "q_reg_kvar": self.q_reg.tolist(),
            "power_loss_kw": self.power_loss,
            "penalty": self.penalty,
            "voltage_pu": self.voltage.tolist(),
            "relaxation_gap": self.relaxation_gap,
        }
        if self.q_dg is not None:
            out["q_dg_kvar"] = self.q_dg.tolist()
        return out


def relaxation_gap(net: Network, v, l, P, Q) -> float:
    """Largest slack ``l v_i - P^2 - Q^2`` of the relaxed branch-flow equality."""
    return float(np.max(l * v[net.from_bus] - P ** 2 - Q ** 2, initial=0.0))


def extract_outcome(solution: ConicSolution, pmap: ParamMap, net: Network,
                    q_reg: np.ndarray | None = None) -> RegulationOutcome:
    """Read the named variable groups of ``solution.x`` back out.

    For the evaluation program, whose setpoints are parameters rather than
    variables, pass the setpoints (kvar) as ``q_reg``.
    """
    if solution.status is not Status.OPTIMAL:
        raise OutcomeError(solution.status)
    x, lay = solution.x, pmap.layout
    base = net.base_kva
    v, l, P, Q = (x[lay[k]] for k in ("v", "l", "P", "Q"))
    loss = float(net.r @ l) * base
    penalty = 0.0
    if "s_over" in lay:
        penalty = float(np.sum(x[lay["s_over"]]) + np.sum(x[lay["s_under"]]))
    if "q_reg" in lay:
        q_reg = x[lay["q_reg"]] * base
    elif q_reg is None:
        q_reg = np.zeros(0)
    q_dg = x[lay["q_dg"]] * base if "q_dg" in lay else None
    return RegulationOutcome(
        q_reg=np.asarray(q_reg, dtype=float), power_loss=max(loss, 0.0), penalty=max(penalty, 0.0),
        v=v.copy(), l=l.copy(), P=P.copy(), Q=Q.copy(),
        relaxation_gap=relaxation_gap(net, v, l, P, Q), q_dg=q_dg)


def regret(loss_predicted: float | np.ndarray, loss_oracle: float | np.ndarray):
    """Score under predicted decisions minus the score under oracle decisions (kW).

    Works for the plain power loss and for the penalized regulation loss alike.
    """
    return np.subtract(loss_predicted, loss_oracle)


def voltage_violations(v_series: np.ndarray, v_min: float, v_max: float,
                       tol: float = VIOLATION_TOL) -> np.ndarray:
    """Per-timestep flag: some bus leaves ``[v_min^2, v_max^2]`` by more than ``tol``."""
    v = np.atleast_2d(np.asarray(v_series, dtype=float))
    over = v - v_max ** 2 > tol
    under = v_min ** 2 - v > tol
    return np.any(over | under, axis=-1)


def violation_rate(v_series: np.ndarray, v_min: float, v_max: float,
                   tol: float = VIOLATION_TOL) -> float:
    """Fraction of timesteps (rows of ``v_series``) with a voltage violation."""
    flags = voltage_violations(v_series, v_min, v_max, tol)
    return float(flags.mean()) if flags.size else 0.0
