"""Compile branch-flow voltage regulation programs into conic form.

Three per-timestep programs share the branch-flow core (power and var
balance at every non-slack bus, voltage drop along every branch, one
rotated-cone constraint ``||(2P, 2Q, l - v_i)|| <= l + v_i`` per branch and
the slack-bus voltage pin):

* the decision program chooses SVC setpoints minimizing losses under
  predicted injections, with voltage, current and device limits;
* the evaluation program fixes the setpoints and scores them under true
  injections by losses plus a weighted voltage-violation penalty;
* the multi-objective program adds DG inverter vars, a voltage-deviation
  term and a linear regulation cost.

``A`` and ``c`` depend only on the network, devices and weights, so each
program is compiled once into a template and only ``b`` is recomputed per
timestep. Injections are given in kW/kvar and enter ``b`` in per unit; the
:class:`ParamMap` records where.
"""

from __future__ import annotations

import dataclasses
import functools
import logging

import numpy as np
import scipy.sparse as sp

from ..conic.cones import ConeSpec
from ..conic.problem import ConicProblem
from .network import DeviceSet, Network, NetworkError

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class Injections:
    """Injection series over a horizon of ``T`` steps (kW / kvar)."""

    p_pv: np.ndarray  # (T, n_pv)
    p_d: np.ndarray  # (T, n_bus)
    q_d: np.ndarray  # (T, n_bus)

    def __post_init__(self):
        arrs = [np.atleast_2d(np.asarray(a, dtype=float)) for a in (self.p_pv, self.p_d, self.q_d)]
        if not arrs[0].shape[0] == arrs[1].shape[0] == arrs[2].shape[0]:
            raise ValueError("injection series must share the horizon length")
        if np.any(arrs[0] < 0):
            raise ValueError("PV injections must be non-negative")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise ValueError("injections contain NaN or inf")
        for name, a in zip(("p_pv", "p_d", "q_d"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def horizon(self) -> int:
        return self.p_pv.shape[0]

    @classmethod
    def zeros(cls, net: Network, dev: DeviceSet, T: int = 1) -> "Injections":
        return cls(np.zeros((T, dev.n_pv)), np.zeros((T, net.n_bus)), np.zeros((T, net.n_bus)))

    @classmethod
    def nominal(cls, net: Network, dev: DeviceSet, T: int = 1, pv_fraction: float = 0.0,
                load_factor: float = 1.0) -> "Injections":
        pv = np.tile(np.asarray(dev.pv_kw) * pv_fraction, (T, 1))
        return cls(pv, np.tile(net.load_kw * load_factor, (T, 1)),
                   np.tile(net.load_kvar * load_factor, (T, 1)))

    def at(self, t: int) -> "Injections":
        return Injections(self.p_pv[t:t + 1], self.p_d[t:t + 1], self.q_d[t:t + 1])


@dataclasses.dataclass(frozen=True)
class VarLayout:
    """Index ranges of the variable groups inside the primal vector ``x``."""

    slices: dict

    def __getitem__(self, name: str) -> slice:
        return self.slices[name]

    def __contains__(self, name: str) -> bool:
        return name in self.slices

    @property
    def size(self) -> int:
        return max(s.stop for s in self.slices.values())


@dataclasses.dataclass(frozen=True)
class ParamBlock:
    """Parameter element ``k`` adds ``coef[k] * value[k]`` to ``b[rows[k]]``.

    ``rows[k] == -1`` marks a parameter with no effect (an injection at the
    slack bus, whose balance is not modeled).
    """

    rows: np.ndarray
    coef: np.ndarray

    def apply(self, b: np.ndarray, values: np.ndarray) -> None:
        ok = self.rows >= 0
        np.add.at(b, (..., self.rows[ok]), values[..., ok] * self.coef[ok])

    def gather(self, db: np.ndarray) -> np.ndarray:
        """Gradient with respect to the parameter values given one w.r.t. ``b``."""
        out = np.zeros(db.shape[:-1] + self.rows.shape)
        ok = self.rows >= 0
        out[..., ok] = db[..., self.rows[ok]] * self.coef[ok]
        return out


@dataclasses.dataclass(frozen=True)
class DGSensitivity:
    dg: int
    bus: int
    t: int
    row: int
    # d(RHS in kvar) / d(p_hat in kW); zero when the RHS is clamped
    drhs_dp: float


@dataclasses.dataclass(frozen=True)
class ParamMap:
    blocks: dict
    layout: VarLayout
    kind: str
    dg_sensitivity: tuple = ()

    def gather(self, name: str, db: np.ndarray) -> np.ndarray:
        return self.blocks[name].gather(db)


class _Rows:
    """Triplet accumulator for one cone block of constraint rows."""

    def __init__(self):
        self.i, self.j, self.v = [], [], []
        self.b: list[float] = []

    def add(self, entries, rhs: float = 0.0) -> int:
        r = len(self.b)
        for col, val in entries:
            self.i.append(r)
            self.j.append(col)
            self.v.append(val)
        self.b.append(rhs)
        return r

    def __len__(self):
        return len(self.b)


def _stack(blocks: list[_Rows], n: int):
    ii, jj, vv, bb = [], [], [], []
    off = 0
    for blk in blocks:
        ii.extend(np.asarray(blk.i, dtype=int) + off)
        jj.extend(blk.j)
        vv.extend(blk.v)
        bb.extend(blk.b)
        off += len(blk)
    A = sp.csc_matrix((vv, (ii, jj)), shape=(off, n))
    return A, np.array(bb, dtype=float)


def _check_devices(net: Network, dev: DeviceSet):
    dev.validate_for(net)


def _flow_rows(net: Network, col, zero: _Rows, soc: list[_Rows], q_extra):
    """Branch-flow core. Returns row indices of the P and Q balances per bus.

    ``q_extra[i]`` lists ``(column, coefficient)`` of var sources at bus ``i``
    that are decision variables (moved to the left-hand side).
    """
    r, x = net.r, net.x
    p_row = np.full(net.n_bus, -1)
    q_row = np.full(net.n_bus, -1)
    for i in net.non_slack:
        k = net.parent_branch[i]
        ch = net.children(i)
        # outflow - (inflow - loss) = injection
        p_row[i] = zero.add([(col["P"] + c, 1.0) for c in ch]
                            + [(col["P"] + k, -1.0), (col["l"] + k, r[k])])
        q_row[i] = zero.add([(col["Q"] + c, 1.0) for c in ch]
                            + [(col["Q"] + k, -1.0), (col["l"] + k, x[k])]
                            + [(cc, -v) for cc, v in q_extra.get(i, [])])
    for k in range(net.n_branch):
        i, j = net.from_bus[k], net.to_bus[k]
        zero.add([(col["v"] + j, 1.0), (col["v"] + i, -1.0),
                  (col["l"] + k, -(r[k] ** 2 + x[k] ** 2)),
                  (col["P"] + k, 2 * r[k]), (col["Q"] + k, 2 * x[k])])
    zero.add([(col["v"] + net.slack, 1.0)], net.slack_voltage ** 2)
    for k in range(net.n_branch):
        i = net.from_bus[k]
        blk = _Rows()
        # s = (l + v_i, 2P, 2Q, l - v_i) = -A x
        blk.add([(col["l"] + k, -1.0), (col["v"] + i, -1.0)])
        blk.add([(col["P"] + k, -2.0)])
        blk.add([(col["Q"] + k, -2.0)])
        blk.add([(col["l"] + k, -1.0), (col["v"] + i, 1.0)])
        soc.append(blk)
    return p_row, q_row


def _layout(groups: list[tuple[str, int]]):
    slices, start = {}, 0
    for name, size in groups:
        slices[name] = slice(start, start + size)
        start += size
    return VarLayout(slices), {k: s.start for k, s in slices.items()}, start


@dataclasses.dataclass(frozen=True, eq=False)
class ProgramTemplate:
    """Constant ``(A, c, cones)`` of a program plus the recipe for ``b``."""

    A: sp.csc_matrix
    c: np.ndarray
    cones: ConeSpec
    b0: np.ndarray
    pmap: ParamMap
    net: Network
    dev: DeviceSet

    def rhs(self, **params) -> np.ndarray:
        """``b`` for the given parameter arrays (leading batch axes allowed)."""
        lead = np.broadcast_shapes(*(np.shape(v)[:-1] for v in params.values())) if params else ()
        b = np.broadcast_to(self.b0, lead + self.b0.shape).copy()
        for name, val in params.items():
            self.pmap.blocks[name].apply(b, np.asarray(val, dtype=float))
        return b

    def problem(self, b: np.ndarray) -> ConicProblem:
        return ConicProblem(self.A, b, self.c, self.cones)


@functools.lru_cache(maxsize=32)
def decision_template(net: Network, dev: DeviceSet) -> ProgramTemplate:
    _check_devices(net, dev)
    nb, nl = net.n_bus, net.n_branch
    layout, col, n = _layout([("v", nb), ("l", nl), ("P", nl), ("Q", nl), ("q_reg", dev.n_svc)])
    zero, nonneg, soc = _Rows(), _Rows(), []
    q_extra: dict[int, list] = {}
    for s, bus in enumerate(dev.svc_bus):
        q_extra.setdefault(bus, []).append((col["q_reg"] + s, 1.0))
    p_row, q_row = _flow_rows(net, col, zero, soc, q_extra)
    for i in range(nb):
        nonneg.add([(col["v"] + i, 1.0)], net.v_max ** 2)
        nonneg.add([(col["v"] + i, -1.0)], -net.v_min ** 2)
    for k in range(nl):
        nonneg.add([(col["l"] + k, 1.0)], net.i_max[k] ** 2)
    base = net.base_kva
    for s in range(dev.n_svc):
        nonneg.add([(col["q_reg"] + s, 1.0)], dev.svc_max[s] / base)
        nonneg.add([(col["q_reg"] + s, -1.0)], -dev.svc_min[s] / base)
    A, b0 = _stack([zero, nonneg] + soc, n)
    cones = ConeSpec(len(zero), len(nonneg), (4,) * nl)
    c = np.zeros(n)
    c[layout["l"]] = net.r
    blocks = _injection_blocks(net, dev, p_row, q_row)
    return ProgramTemplate(A, c, cones, b0, ParamMap(blocks, layout, "decision"), net, dev)


def _injection_blocks(net: Network, dev: DeviceSet, p_row, q_row) -> dict:
    base = net.base_kva
    pv_rows = p_row[np.asarray(dev.pv_bus, dtype=int)] if dev.n_pv else np.zeros(0, dtype=int)
    if np.any(p_row == -1) and (np.any(net.load_kw[net.slack] != 0)):
        logger.warning("load at the slack bus is ignored by the branch-flow model")
    return {
        "p_pv": ParamBlock(pv_rows, np.full(dev.n_pv, 1.0 / base)),
        "p_d": ParamBlock(p_row.copy(), np.full(net.n_bus, -1.0 / base)),
        "q_d": ParamBlock(q_row.copy(), np.full(net.n_bus, -1.0 / base)),
    }


@functools.lru_cache(maxsize=32)
def evaluation_template(net: Network, dev: DeviceSet, lam: float) -> ProgramTemplate:
    if lam < 0:
        raise ValueError("penalty weight must be non-negative")
    _check_devices(net, dev)
    nb, nl = net.n_bus, net.n_branch
    layout, col, n = _layout([("v", nb), ("l", nl), ("P", nl), ("Q", nl), ("loss", 1),
                              ("s_over", nb), ("s_under", nb)])
    zero, nonneg, soc = _Rows(), _Rows(), []
    p_row, q_row = _flow_rows(net, col, zero, soc, {})
    # epigraph: loss >= sum r l
    nonneg.add([(col["loss"], -1.0)] + [(col["l"] + k, net.r[k]) for k in range(nl)])
    for i in range(nb):
        nonneg.add([(col["s_over"] + i, -1.0), (col["v"] + i, 1.0)], net.v_max ** 2)
        nonneg.add([(col["s_over"] + i, -1.0)])
        nonneg.add([(col["s_under"] + i, -1.0), (col["v"] + i, -1.0)], -net.v_min ** 2)
        nonneg.add([(col["s_under"] + i, -1.0)])
    A, b0 = _stack([zero, nonneg] + soc, n)
    cones = ConeSpec(len(zero), len(nonneg), (4,) * nl)
    c = np.zeros(n)
    c[layout["loss"]] = 1.0
    c[layout["s_over"]] = lam
    c[layout["s_under"]] = lam
    blocks = _injection_blocks(net, dev, p_row, q_row)
    svc = np.asarray(dev.svc_bus, dtype=int)
    blocks["q_reg"] = ParamBlock(q_row[svc] if dev.n_svc else np.zeros(0, dtype=int),
                                 np.full(dev.n_svc, 1.0 / net.base_kva))
    return ProgramTemplate(A, c, cones, b0, ParamMap(blocks, layout, "evaluation"), net, dev)


@functools.lru_cache(maxsize=32)
def multiobjective_template(net: Network, dev: DeviceSet, alpha1: float, alpha2: float,
                            nominal_v: float) -> ProgramTemplate:
    if dev.n_dg == 0:
        raise NetworkError("the multi-objective program needs at least one DG inverter")
    if alpha1 < 0:
        raise ValueError("alpha1 must be non-negative")
    _check_devices(net, dev)
    nb, nl = net.n_bus, net.n_branch
    layout, col, n = _layout([("v", nb), ("l", nl), ("P", nl), ("Q", nl), ("q_reg", dev.n_svc),
                              ("q_dg", dev.n_dg), ("tau", nb)])
    zero, nonneg, soc = _Rows(), _Rows(), []
    q_extra: dict[int, list] = {}
    for s, bus in enumerate(dev.svc_bus):
        q_extra.setdefault(bus, []).append((col["q_reg"] + s, 1.0))
    for g, bus in enumerate(dev.dg_bus):
        q_extra.setdefault(bus, []).append((col["q_dg"] + g, 1.0))
    p_row, q_row = _flow_rows(net, col, zero, soc, q_extra)
    for i in range(nb):
        nonneg.add([(col["v"] + i, 1.0)], net.v_max ** 2)
        nonneg.add([(col["v"] + i, -1.0)], -net.v_min ** 2)
    for k in range(nl):
        nonneg.add([(col["l"] + k, 1.0)], net.i_max[k] ** 2)
    base = net.base_kva
    for s in range(dev.n_svc):
        nonneg.add([(col["q_reg"] + s, 1.0)], dev.svc_max[s] / base)
        nonneg.add([(col["q_reg"] + s, -1.0)], -dev.svc_min[s] / base)
    # |q_dg| <= sqrt(S^2 - p^2); the right-hand sides are filled per timestep
    cap_rows = []
    for g in range(dev.n_dg):
        up = nonneg.add([(col["q_dg"] + g, 1.0)])
        lo = nonneg.add([(col["q_dg"] + g, -1.0)])
        cap_rows.append((up, lo))
    dev_soc = []
    for i in range(nb):
        blk = _Rows()
        # ||(2(v - v_hat), tau - 1)|| <= tau + 1
        blk.add([(col["tau"] + i, -1.0)], 1.0)
        blk.add([(col["v"] + i, -2.0)], -2.0 * nominal_v ** 2)
        blk.add([(col["tau"] + i, -1.0)], -1.0)
        dev_soc.append(blk)
    A, b0 = _stack([zero, nonneg] + soc + dev_soc, n)
    cones = ConeSpec(len(zero), len(nonneg), (4,) * nl + (3,) * nb)
    c = np.zeros(n)
    c[layout["l"]] = net.r
    c[layout["tau"]] = alpha1
    c[layout["q_reg"]] = alpha2
    c[layout["q_dg"]] = alpha2
    blocks = _injection_blocks(net, dev, p_row, q_row)
    off = len(zero)
    blocks["dg_cap_up"] = ParamBlock(np.array([off + u for u, _ in cap_rows], dtype=int),
                                     np.full(dev.n_dg, 1.0 / base))
    blocks["dg_cap_lo"] = ParamBlock(np.array([off + lo for _, lo in cap_rows], dtype=int),
                                     np.full(dev.n_dg, 1.0 / base))
    return ProgramTemplate(A, c, cones, b0, ParamMap(blocks, layout, "multiobjective"), net, dev)


def _inj_params(inj: Injections, t: int) -> dict:
    if not 0 <= t < inj.horizon:
        raise IndexError(f"timestep {t} outside horizon {inj.horizon}")
    return {"p_pv": inj.p_pv[t], "p_d": inj.p_d[t], "q_d": inj.q_d[t]}


def build_decision_problem(net: Network, dev: DeviceSet, inj: Injections, t: int = 0):
    tpl = decision_template(net, dev)
    return tpl.problem(tpl.rhs(**_inj_params(inj, t))), tpl.pmap


def clamp_decisions(dev: DeviceSet, q_reg: np.ndarray) -> np.ndarray:
    q = np.asarray(q_reg, dtype=float)
    out = np.clip(q, np.asarray(dev.svc_min), np.asarray(dev.svc_max))
    if np.any(np.abs(out - q) > 1e-6):
        logger.debug("clamped SVC setpoints by up to %.3g kvar", float(np.abs(out - q).max()))
    return out


def build_evaluation_problem(net: Network, dev: DeviceSet, q_reg_fixed: np.ndarray,
                             truth: Injections, lam: float = 1.0, t: int = 0):
    """``q_reg_fixed`` holds the SVC setpoints (kvar) for timestep ``t``."""
    tpl = evaluation_template(net, dev, float(lam))
    q = clamp_decisions(dev, q_reg_fixed)
    return tpl.problem(tpl.rhs(q_reg=q, **_inj_params(truth, t))), tpl.pmap


def dg_capacity(dev: DeviceSet, p_pv_at_dg: np.ndarray):
    """Var headroom ``sqrt(S^2 - p^2)`` (kvar) and its derivative in ``p``.

    Returns ``(rhs, drhs_dp, clamped)``; where ``p > S`` the headroom is
    clamped to zero with zero sensitivity.
    """
    S = np.asarray(dev.dg_kva, dtype=float)
    p = np.asarray(p_pv_at_dg, dtype=float)
    rad = S ** 2 - p ** 2
    clamped = rad <= 0
    root = np.sqrt(np.where(clamped, 1.0, rad))
    rhs = np.where(clamped, 0.0, root)
    with np.errstate(divide="ignore", invalid="ignore"):
        sens = np.where(clamped, 0.0, -p / root)
    return rhs, sens, clamped


def pv_at_buses(dev: DeviceSet, p_pv: np.ndarray, buses) -> np.ndarray:
    """Sum of PV output located at each of ``buses``."""
    out = np.zeros(len(buses))
    for k, bus in enumerate(buses):
        for s, pb in enumerate(dev.pv_bus):
            if pb == bus:
                out[k] += p_pv[s]
    return out


def build_multiobjective_problem(net: Network, dev: DeviceSet, inj: Injections,
                                 weights: tuple[float, float] = (0.0, 0.0),
                                 nominal_v: float = 1.0, t: int = 0):
    tpl = multiobjective_template(net, dev, float(weights[0]), float(weights[1]), float(nominal_v))
    params = _inj_params(inj, t)
    p_dg = pv_at_buses(dev, params["p_pv"], dev.dg_bus)
    rhs, sens, clamped = dg_capacity(dev, p_dg)
    if np.any(clamped):
        logger.warning("DG active power exceeds capacity at %d inverter(s); var headroom set to 0",
                       int(clamped.sum()))
    b = tpl.rhs(dg_cap_up=rhs, dg_cap_lo=rhs, **params)
    sensitivity = tuple(
        DGSensitivity(g, dev.dg_bus[g], t, int(tpl.pmap.blocks["dg_cap_up"].rows[g]), float(sens[g]))
        for g in range(dev.n_dg))
    pmap = dataclasses.replace(tpl.pmap, dg_sensitivity=sensitivity)
    return tpl.problem(b), pmap
