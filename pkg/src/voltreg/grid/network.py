"""Radial feeder description, device placements and scenario presets.

Impedances are stored in per unit on the network base; the JSON document
uses ohms and amperes. Buses are referred to by their external id in the
JSON and by position (0-based index into ``Network.bus_ids``) everywhere
else.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from importlib import resources
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

CASE33_SHA256 = "af4a4db690f731a741e4ccbbed326cd1a2ab703cfb64dd6781ef2f6bf27a5133"


class NetworkError(ValueError):
    """Invalid topology, parameters or network document."""


@dataclasses.dataclass(frozen=True)
class Scenario:
    name: str
    v_min: float
    v_max: float
    impedance_factor: float = 1.0


SCENARIOS = {
    "economic": Scenario("economic", 0.94, 1.06, impedance_factor=2.0),
    "safety": Scenario("safety", 0.95, 1.05),
}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise NetworkError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIOS)}") from None


@dataclasses.dataclass(frozen=True, eq=False)
class Network:
    """Radial network in per unit.

    Branch ``k`` connects ``from_bus[k]`` (upstream) to ``to_bus[k]``; after
    validation every non-slack bus is the ``to`` end of exactly one branch.
    """

    bus_ids: tuple[int, ...]
    slack: int
    from_bus: np.ndarray
    to_bus: np.ndarray
    r: np.ndarray
    x: np.ndarray
    i_max: np.ndarray
    base_mva: float = 10.0
    base_kv: float = 12.66
    slack_voltage: float = 1.0
    v_min: float = 0.95
    v_max: float = 1.05
    # nominal bus loads (kW, kvar) defining the static load-share vector
    load_kw: np.ndarray | None = None
    load_kvar: np.ndarray | None = None
    name: str = "network"

    def __post_init__(self):
        nb = len(self.bus_ids)
        for f in ("from_bus", "to_bus"):
            object.__setattr__(self, f, np.asarray(getattr(self, f), dtype=int))
        for f in ("r", "x", "i_max"):
            object.__setattr__(self, f, np.asarray(getattr(self, f), dtype=float))
        for f in ("load_kw", "load_kvar"):
            val = getattr(self, f)
            object.__setattr__(self, f, np.zeros(nb) if val is None else np.asarray(val, dtype=float))
        nl = len(self.from_bus)
        if not (len(self.to_bus) == len(self.r) == len(self.x) == len(self.i_max) == nl):
            raise NetworkError("branch arrays have inconsistent lengths")
        if len(self.load_kw) != nb or len(self.load_kvar) != nb:
            raise NetworkError("bus load arrays must have one entry per bus")
        if nl != nb - 1:
            raise NetworkError(f"a radial network with {nb} buses needs {nb - 1} branches, got {nl}")
        if np.any(self.r <= 0) or np.any(self.x <= 0):
            raise NetworkError("branch resistance and reactance must be positive")
        if np.any(self.i_max <= 0):
            raise NetworkError("branch ampacities must be positive")
        if not self.v_min < self.v_max:
            raise NetworkError("v_min must be below v_max")
        if not 0 <= self.slack < nb:
            raise NetworkError("slack index out of range")
        self._orient()

    def _orient(self):
        """Orient branches away from the slack bus; reject loops and islands."""
        nb = self.n_bus
        adj: list[list[int]] = [[] for _ in range(nb)]
        for k, (f, t) in enumerate(zip(self.from_bus, self.to_bus)):
            if not (0 <= f < nb and 0 <= t < nb) or f == t:
                raise NetworkError(f"branch {k} has invalid endpoints")
            adj[f].append(k)
            adj[t].append(k)
        parent_branch = np.full(nb, -1)
        seen = np.zeros(nb, dtype=bool)
        seen[self.slack] = True
        order = [self.slack]
        frm = self.from_bus.copy()
        to = self.to_bus.copy()
        head = 0
        while head < len(order):
            i = order[head]
            head += 1
            for k in adj[i]:
                j = to[k] if frm[k] == i else frm[k]
                if k == parent_branch[i]:
                    continue
                if seen[j]:
                    raise NetworkError("network contains a loop")
                if frm[k] != i:
                    frm[k], to[k] = i, j
                seen[j] = True
                parent_branch[j] = k
                order.append(j)
        if not seen.all():
            raise NetworkError("network is not connected")
        object.__setattr__(self, "from_bus", frm)
        object.__setattr__(self, "to_bus", to)
        object.__setattr__(self, "parent_branch", parent_branch)
        object.__setattr__(self, "bfs_order", np.array(order))

    @property
    def n_bus(self) -> int:
        return len(self.bus_ids)

    @property
    def n_branch(self) -> int:
        return len(self.from_bus)

    @property
    def base_kva(self) -> float:
        return self.base_mva * 1e3

    @property
    def z_base(self) -> float:
        return self.base_kv ** 2 / self.base_mva

    @property
    def i_base(self) -> float:
        """Base current in amperes."""
        return self.base_mva * 1e6 / (math.sqrt(3) * self.base_kv * 1e3)

    @property
    def non_slack(self) -> np.ndarray:
        return np.array([i for i in range(self.n_bus) if i != self.slack])

    def children(self, i: int) -> np.ndarray:
        """Indices of the branches leaving bus ``i`` downstream."""
        return np.flatnonzero(self.from_bus == i)

    def index_of(self, bus_id: int) -> int:
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise NetworkError(f"bus {bus_id} does not exist") from None

    def load_share(self) -> np.ndarray:
        total = self.load_kw.sum()
        if total <= 0:
            raise NetworkError("network has no nominal load to define load shares")
        return self.load_kw / total

    def with_scenario(self, scenario: Scenario | str) -> "Network":
        sc = get_scenario(scenario) if isinstance(scenario, str) else scenario
        return dataclasses.replace(self, r=self.r * sc.impedance_factor,
                                   x=self.x * sc.impedance_factor,
                                   v_min=sc.v_min, v_max=sc.v_max,
                                   name=f"{self.name}:{sc.name}")


@dataclasses.dataclass(frozen=True)
class DeviceSet:
    """PV sites (bus index, kW), SVCs (bus index, kvar bounds) and optional DG inverters."""

    pv_bus: tuple[int, ...] = ()
    pv_kw: tuple[float, ...] = ()
    svc_bus: tuple[int, ...] = ()
    svc_min: tuple[float, ...] = ()
    svc_max: tuple[float, ...] = ()
    dg_bus: tuple[int, ...] = ()
    dg_kva: tuple[float, ...] = ()

    def __post_init__(self):
        for f in dataclasses.fields(self):
            object.__setattr__(self, f.name, tuple(getattr(self, f.name)))
        if len(self.pv_bus) != len(self.pv_kw):
            raise NetworkError("PV bus and capacity lists differ in length")
        if not len(self.svc_bus) == len(self.svc_min) == len(self.svc_max):
            raise NetworkError("SVC lists differ in length")
        if len(self.dg_bus) != len(self.dg_kva):
            raise NetworkError("DG bus and capacity lists differ in length")
        if any(c <= 0 for c in self.pv_kw + self.dg_kva):
            raise NetworkError("device capacities must be positive")
        if any(lo > hi for lo, hi in zip(self.svc_min, self.svc_max)):
            raise NetworkError("SVC lower bound exceeds upper bound")

    @property
    def n_pv(self) -> int:
        return len(self.pv_bus)

    @property
    def n_svc(self) -> int:
        return len(self.svc_bus)

    @property
    def n_dg(self) -> int:
        return len(self.dg_bus)

    def validate_for(self, net: Network) -> None:
        for b in self.pv_bus + self.svc_bus + self.dg_bus:
            if not 0 <= b < net.n_bus:
                raise NetworkError(f"device bus index {b} outside the network")
            if b == net.slack:
                raise NetworkError("devices cannot sit at the slack bus")

    def with_dg(self, buses, kva) -> "DeviceSet":
        return dataclasses.replace(self, dg_bus=tuple(buses), dg_kva=tuple(kva))


def network_from_dict(doc: dict) -> tuple[Network, DeviceSet]:
    """Parse the network JSON schema into per-unit objects."""
    try:
        base = doc["base"]
        mva, kv = float(base["mva"]), float(base["kv"])
        buses = doc["buses"]
        ids = tuple(int(b["id"] if isinstance(b, dict) else b) for b in buses)
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate bus ids")
        pos = {b: i for i, b in enumerate(ids)}
        p_kw = [float(b.get("p_kw", 0.0)) if isinstance(b, dict) else 0.0 for b in buses]
        q_kvar = [float(b.get("q_kvar", 0.0)) if isinstance(b, dict) else 0.0 for b in buses]
        zb = kv ** 2 / mva
        ib = mva * 1e6 / (math.sqrt(3) * kv * 1e3)
        br = doc["branches"]
        frm = [pos[int(b["from"])] for b in br]
        to = [pos[int(b["to"])] for b in br]
        r = [float(b["r_ohm"]) / zb for b in br]
        x = [float(b["x_ohm"]) / zb for b in br]
        imax = [float(b.get("i_max_a") or 1e6) / ib for b in br]
        net = Network(ids, pos[int(doc["slack"])], frm, to, r, x, imax, base_mva=mva, base_kv=kv,
                      slack_voltage=float(doc.get("slack_voltage", 1.0)),
                      load_kw=p_kw, load_kvar=q_kvar, name=str(doc.get("name", "network")))
        dv = doc.get("devices", {})
        dev = DeviceSet(
            pv_bus=[pos[int(d["bus"])] for d in dv.get("pv", [])],
            pv_kw=[float(d["kw"]) for d in dv.get("pv", [])],
            svc_bus=[pos[int(d["bus"])] for d in dv.get("svc", [])],
            svc_min=[float(d["kvar_min"]) for d in dv.get("svc", [])],
            svc_max=[float(d["kvar_max"]) for d in dv.get("svc", [])],
            dg_bus=[pos[int(d["bus"])] for d in dv.get("dg", [])],
            dg_kva=[float(d["kva"]) for d in dv.get("dg", [])],
        )
    except KeyError as exc:
        raise NetworkError(f"network document is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, NetworkError):
            raise
        raise NetworkError(f"malformed network document: {exc}") from None
    dev.validate_for(net)
    return net, dev


def network_to_dict(net: Network, dev: DeviceSet) -> dict:
    ids = net.bus_ids
    return {
        "name": net.name,
        "base": {"mva": net.base_mva, "kv": net.base_kv},
        "slack": ids[net.slack],
        "slack_voltage": net.slack_voltage,
        "buses": [{"id": b, "p_kw": float(p), "q_kvar": float(q)}
                  for b, p, q in zip(ids, net.load_kw, net.load_kvar)],
        "branches": [{"from": ids[f], "to": ids[t], "r_ohm": float(r * net.z_base),
                      "x_ohm": float(x * net.z_base), "i_max_a": float(i * net.i_base)}
                     for f, t, r, x, i in zip(net.from_bus, net.to_bus, net.r, net.x, net.i_max)],
        "devices": {
            "pv": [{"bus": ids[b], "kw": k} for b, k in zip(dev.pv_bus, dev.pv_kw)],
            "svc": [{"bus": ids[b], "kvar_min": lo, "kvar_max": hi}
                    for b, lo, hi in zip(dev.svc_bus, dev.svc_min, dev.svc_max)],
            "dg": [{"bus": ids[b], "kva": k} for b, k in zip(dev.dg_bus, dev.dg_kva)],
        },
    }


def load_network(path: str | Path) -> tuple[Network, DeviceSet]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: not valid JSON ({exc})") from None
    return network_from_dict(doc)


def case33() -> tuple[Network, DeviceSet]:
    """The 33-bus feeder with its PV sites and SVCs, checksum-verified."""
    raw = resources.files("voltreg.grid").joinpath("data/case33.json").read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != CASE33_SHA256:
        raise NetworkError(f"bundled 33-bus data checksum mismatch ({digest})")
    return network_from_dict(json.loads(raw))
