"""Virtual plane: scaled VIP counters, backpressure forwarding, max-weight caching."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .topology import NetworkGraph, ObjectCatalog


@dataclass
class VipState:
    V: np.ndarray  # (N, K) VIP counts
    t: int = 1

    @classmethod
    def empty(cls, num_nodes: int, num_objects: int) -> VipState:
        return cls(np.zeros((num_nodes, num_objects)))


@dataclass
class ThetaPolicy:
    """Per-(node, object) scaling factors, constant or EMA-tracked.

    Values never drop below 1. At a content source the factor is pinned to 1.
    """

    mode: str = "constant"  # "constant" | "ema"
    value: float = 1.0
    beta: float = 0.125
    initial: float = 1.0
    theta: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("constant", "ema"):
            raise ValueError(f"theta mode must be 'constant' or 'ema', got {self.mode!r}")
        if self.mode == "constant" and self.value < 1:
            raise ValueError("constant theta must be >= 1")
        if not 0 < self.beta <= 1:
            raise ValueError("EMA weight must lie in (0, 1]")

    def init(self, num_nodes: int, num_objects: int, source: np.ndarray | None = None) -> ThetaPolicy:
        start = self.value if self.mode == "constant" else max(self.initial, 1.0)
        self.theta = np.full((num_nodes, num_objects), float(start))
        if source is not None:
            self.theta[source, np.arange(num_objects)] = 1.0
        self._source = source
        return self

    def update(self, arrivals: np.ndarray, inflow: np.ndarray) -> np.ndarray:
        if self.mode == "ema":
            self.theta = update_theta(self.theta, arrivals + inflow, self.beta)
            if self._source is not None:
                self.theta[self._source, np.arange(self.theta.shape[1])] = 1.0
        return self.theta

    @property
    def per_node_min(self) -> np.ndarray:
        return self.theta.min(axis=1)


def update_theta(theta: np.ndarray, total_inflow: np.ndarray, beta: float = 0.125) -> np.ndarray:
    """EMA of arrivals plus inflow, floored at 1."""
    return np.maximum((1.0 - beta) * theta + beta * total_inflow, 1.0)


@dataclass
class VipDecision:
    """Forwarding choice per link (``kstar``, -1 if idle) and caching matrix.

    Every active link carries a single object at the full reverse-link rate,
    so the compact form is exact; ``mu`` expands it.
    """

    kstar: np.ndarray  # (L,)
    rate: np.ndarray  # (L,) objects/slot
    s: np.ndarray  # (N, K) bool

    def mu(self, num_objects: int) -> np.ndarray:
        out = np.zeros((len(self.kstar), num_objects))
        act = np.flatnonzero(self.kstar >= 0)
        out[act, self.kstar[act]] = self.rate[act]
        return out


class AllocationError(ValueError):
    pass


def link_rates(graph: NetworkGraph, cat: ObjectCatalog) -> np.ndarray:
    """Per-link VIP rate ``C_ba / D`` (reverse link capacity)."""
    return graph.link_cap[graph.reverse] / float(cat.object_bits)


def backpressure_weight(state: VipState, theta: np.ndarray, graph: NetworkGraph,
                        cat: ObjectCatalog, a: int, b: int, k: int) -> float:
    """Scaled differential ``V_a - V_b / theta_b`` for object ``k`` on link (a, b).

    Node and object ids are 1-based.
    """
    l = graph.link_index.get((a - 1, b - 1))
    if l is None or not cat.allowed[l, k - 1]:
        raise AllocationError(f"link ({a},{b}) not allowed for object {k}")
    return float(state.V[a - 1, k - 1] - state.V[b - 1, k - 1] / theta[b - 1, k - 1])


def forward_vips(state: VipState, theta: np.ndarray, graph: NetworkGraph, cat: ObjectCatalog):
    return kernels.forward(state.V, theta, graph.link_src, graph.link_dst,
                           cat.allowed, link_rates(graph, cat))


def cache_vips(state: VipState, graph: NetworkGraph, cat: ObjectCatalog, node: int | None = None):
    """Caching vector for ``node`` (1-based), or the full (N, K) matrix."""
    slots = cat.cache_slots(graph)
    if node is None:
        return kernels.cache(state.V, slots)
    return kernels.cache(state.V[node - 1:node], slots[node - 1:node])[0]


def step_vip_counts(state: VipState, theta: np.ndarray, decision: VipDecision,
                    arrivals: np.ndarray, graph: NetworkGraph, cat: ObjectCatalog):
    """Advance one slot. Returns ``(next_state, sent, inflow)``."""
    Vn, sent, inflow = kernels.step(
        state.V, theta, decision.kstar, decision.rate, arrivals, decision.s,
        graph.read_rate, graph.link_src, graph.link_dst, cat.source,
    )
    return VipState(Vn, state.t + 1), sent, inflow


@dataclass
class SlotRecord:
    t: int
    kstar: np.ndarray
    rate: np.ndarray
    sent: np.ndarray
    cached: np.ndarray
    arrivals: np.ndarray
    theta: np.ndarray


@dataclass
class VirtualPlane:
    """Stepwise driver for the virtual plane, used standalone or in lockstep."""

    graph: NetworkGraph
    cat: ObjectCatalog
    theta: ThetaPolicy
    state: VipState = field(init=False)

    def __post_init__(self):
        N, K = self.graph.num_nodes, self.cat.num_objects
        self.state = VipState.empty(N, K)
        self.theta.init(N, K, self.cat.source)
        self._rates = link_rates(self.graph, self.cat)
        self._slots = self.cat.cache_slots(self.graph)

    def decide(self) -> VipDecision:
        V, th = self.state.V, self.theta.theta
        kstar, rate = kernels.forward(V, th, self.graph.link_src, self.graph.link_dst,
                                      self.cat.allowed, self._rates)
        return VipDecision(kstar, rate, kernels.cache(V, self._slots))

    def advance(self, decision: VipDecision, arrivals: np.ndarray):
        th = self.theta.theta
        self.state, sent, inflow = step_vip_counts(self.state, th, decision, arrivals, self.graph, self.cat)
        self.theta.update(arrivals, inflow)
        return sent, inflow

    def step(self, arrivals: np.ndarray):
        decision = self.decide()
        sent, inflow = self.advance(decision, arrivals)
        return decision, sent, inflow


@dataclass
class VirtualRun:
    backlog: np.ndarray  # (T,) total VIPs at the start of each slot
    final: np.ndarray  # (N, K)
    log: list[SlotRecord] | None


def run_virtual(graph: NetworkGraph, cat: ObjectCatalog, demand, theta: ThetaPolicy,
                horizon: int, keep_log: bool = False) -> VirtualRun:
    """Run the virtual plane for ``horizon`` slots.

    ``demand`` is anything with a ``sample()`` method returning an (N, K)
    arrival matrix.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    plane = VirtualPlane(graph, cat, theta)
    backlog = np.empty(horizon)
    log = [] if keep_log else None
    for i in range(horizon):
        backlog[i] = plane.state.V.sum()
        th = plane.theta.theta.copy() if keep_log else None
        decision = plane.decide()
        arrivals = demand.sample()
        sent, _ = plane.advance(decision, arrivals)
        if keep_log:
            log.append(SlotRecord(i + 1, decision.kstar, decision.rate, sent, decision.s, arrivals, th))
    return VirtualRun(backlog, plane.state.V.copy(), log)


def write_decision_log(path, graph: NetworkGraph, log: list[SlotRecord]) -> None:
    """Text log: ``slot link a b object mu mu_sent`` and ``slot cache node objs...``."""
    links = graph.links
    with open(path, "w") as f:
        for rec in log:
            for l in np.flatnonzero(rec.kstar >= 0):
                a, b = links[l]
                f.write(f"{rec.t} link {a} {b} {rec.kstar[l] + 1} {rec.rate[l]!r} {rec.sent[l]!r}\n")
            for n in range(rec.cached.shape[0]):
                objs = " ".join(str(k + 1) for k in np.flatnonzero(rec.cached[n]))
                f.write(f"{rec.t} cache {n + 1} {objs}".rstrip() + "\n")
