"""Finite-difference checks of the conic derivative and the full training chain."""

from __future__ import annotations

import dataclasses

import numpy as np

from .conic.diff import vjp_solution_map
from .conic.planted import planted_socp
from .conic.problem import SolverSettings
from .conic.solver import solve
from .grid.network import DeviceSet, Network, network_from_dict
from .pipeline import Feeder, TrainConfig, regulate, regulation_gradients
from .predictor import MLP, backward, forward
from .seeding import rng_for

FD_TOLERANCE = 1e-4
CHAIN_TOLERANCE = 1e-3
ORACLE_SETTINGS = SolverSettings(tolerance=1e-10)


@dataclasses.dataclass(frozen=True)
class CheckRow:
    suite: str
    case: int
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_err <= self.tol)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "case": self.case, "rel_err": self.rel_err,
                "tol": self.tol, "passed": self.passed}


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-8)


def vjp_fd_case(rng: np.random.Generator, h: float = 1e-6) -> tuple[float, float]:
    """Relative errors of the ``b`` and ``c`` directional derivatives on one planted SOCP."""
    n = int(rng.integers(5, 20))
    prob = planted_socp(rng, n, int(rng.integers(int(1.5 * n), 3 * n + 1))).problem
    sol = solve(prob, ORACLE_SETTINGS)
    dx, dy, ds = rng.standard_normal(prob.n), rng.standard_normal(prob.m), rng.standard_normal(prob.m)
    grads = vjp_solution_map(prob, sol, (dx, dy, ds))

    def f(p):
        s = solve(p, ORACLE_SETTINGS)
        return dx @ s.x + dy @ s.y + ds @ s.s

    def central(field, base, u):
        def diff(step):
            up = prob.with_data(**{field: base + step * u})
            dn = prob.with_data(**{field: base - step * u})
            return (f(up) - f(dn)) / (2 * step)
        # Richardson extrapolation cancels the second-order truncation term
        return (4 * diff(h) - diff(2 * h)) / 3

    db = rng.standard_normal(prob.m)
    dc = rng.standard_normal(prob.n)
    fd_b = central("b", prob.b, db)
    fd_c = central("c", prob.c, dc)
    return _rel(grads.db @ db, fd_b), _rel(grads.dc @ dc, fd_c)


def toy_feeder() -> tuple[Network, DeviceSet]:
    """Three buses in a line: slack, a load bus, and a load bus with PV and an SVC."""
    doc = {
        "name": "toy-3",
        "base": {"mva": 10.0, "kv": 12.66},
        "slack": 1,
        "buses": [{"id": 1}, {"id": 2, "p_kw": 900.0, "q_kvar": 300.0},
                  {"id": 3, "p_kw": 1200.0, "q_kvar": 500.0}],
        "branches": [{"from": 1, "to": 2, "r_ohm": 0.9, "x_ohm": 0.7, "i_max_a": 600.0},
                     {"from": 2, "to": 3, "r_ohm": 1.1, "x_ohm": 0.8, "i_max_a": 600.0}],
        "devices": {"pv": [{"bus": 3, "kw": 800.0}],
                    "svc": [{"bus": 3, "kvar_min": -2000.0, "kvar_max": 2000.0}]},
    }
    net, dev = network_from_dict(doc)
    return dataclasses.replace(net, v_min=0.95, v_max=1.05), dev


@dataclasses.dataclass
class ToyChain:
    """Predict -> decide -> evaluate on the toy feeder with a ``[2, 4, 1]`` PV model."""

    feeder: Feeder
    model: MLP
    features: np.ndarray
    pv_truth: float
    capacity: float
    config: TrainConfig

    def _truth(self):
        load = np.array([self.feeder.net.load_kw.sum()])
        return self.feeder.injections(np.array([[self.pv_truth]]), load), load

    def loss(self) -> float:
        out, _ = forward(self.model, self.features)
        pv = np.clip(out * self.capacity, 0.0, self.capacity)
        truth, load = self._truth()
        res = regulate(self.feeder, self.feeder.injections(pv[None, :], load), truth, self.config)
        if not res.ok:
            raise RuntimeError("toy chain solve failed")
        return float(np.mean(res.reg_loss)) * self.feeder.net.base_kva

    def grad(self) -> list[np.ndarray]:
        out, tape = forward(self.model, self.features)
        raw = out * self.capacity
        inside = (raw >= 0) & (raw <= self.capacity)
        pv = np.clip(raw, 0.0, self.capacity)
        truth, load = self._truth()
        res = regulate(self.feeder, self.feeder.injections(pv[None, :], load), truth, self.config)
        g_pv, _ = regulation_gradients(self.feeder, res, self.config)
        return backward(self.model, tape, g_pv[:, 0] * inside * self.capacity)


def toy_chain(rng: np.random.Generator) -> ToyChain:
    net, dev = toy_feeder()
    config = TrainConfig(solver_tolerance=1e-10, lam=1.0)
    model = MLP.init((2, 4, 1), rng)
    for W in model.weights:
        W *= 1.5
    features = rng.uniform(0.2, 1.0, size=2)
    # keep the prediction strictly inside the clamp so the chain is smooth
    out, _ = forward(model, features)
    model.biases[-1] += rng.uniform(0.2, 0.8) - out
    return ToyChain(Feeder(net, dev), model, features, float(rng.uniform(100.0, 700.0)), 800.0, config)


def chain_fd_case(rng: np.random.Generator, h: float = 1e-3) -> float:
    """Relative error of the full-chain parameter gradient against central differences."""
    chain = toy_chain(rng)
    g = np.concatenate([a.ravel() for a in chain.grad()])
    params = chain.model.params
    fd = np.zeros_like(g)
    k = 0
    for p in params:
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = chain.loss()
            flat[i] = old - h
            fm = chain.loss()
            flat[i] = old
            fd[k] = (fp - fm) / (2 * h)
            k += 1
    return float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))


def run_diff_check(seed: int = 0, cases: int = 5, chain_cases: int | None = None,
                   force_fail: bool = False) -> list[CheckRow]:
    """Table of FD comparisons; ``force_fail`` tightens the tolerance to zero (test hook)."""
    rows = []
    rng = rng_for(seed, "diff-check/vjp")
    tol_scale = 0.0 if force_fail else 1.0
    for k in range(cases):
        eb, ec = vjp_fd_case(rng)
        rows.append(CheckRow("vjp_b", k + 1, eb, FD_TOLERANCE * tol_scale))
        rows.append(CheckRow("vjp_c", k + 1, ec, FD_TOLERANCE * tol_scale))
    rng = rng_for(seed, "diff-check/chain")
    for k in range(cases if chain_cases is None else chain_cases):
        rows.append(CheckRow("chain", k + 1, chain_fd_case(rng), CHAIN_TOLERANCE * tol_scale))
    return rows
