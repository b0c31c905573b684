"""Actual plane: chunk-level Interest/Data forwarding with PIT collapse and content stores.

Packets travel as *runs*: consecutive chunks of one object that share a
route in the same slot. A run is split whenever a link budget, a PIT
entry or a cache boundary separates its chunks, so per-chunk semantics are
preserved while the event count stays proportional to object requests.

Interests are only forwarded along a per-object loop-free DAG: from node
``n`` toward neighbors strictly lower in the order ``(hops to src(k), id)``.
Without PIT timeouts, a forwarding loop would leave collapsed Interests
waiting on each other forever.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .topology import NetworkGraph, ObjectCatalog, next_hop_table

LOCAL = -1
LOCAL_BIT = 1 << 62
INTEREST = 0
DATA = 1

FORWARDING = ("vip", "shortest-path", "potential")
CACHING = ("vip", "lfu", "lce-unif", "lce-lru", "lcd-lru", "lce-bias", "none")


@dataclass(frozen=True)
class PolicySpec:
    forwarding: str = "shortest-path"
    caching: str = "lce-lru"

    def __post_init__(self):
        if self.forwarding not in FORWARDING:
            raise ValueError(f"unknown forwarding policy {self.forwarding!r}")
        if self.caching not in CACHING:
            raise ValueError(f"unknown caching policy {self.caching!r}")

    @property
    def needs_vip(self) -> bool:
        return self.forwarding == "vip" or self.caching == "vip"


class Request:
    __slots__ = ("node", "obj", "created", "received", "remaining")

    def __init__(self, node, obj, created, chunks):
        self.node = node
        self.obj = obj
        self.created = created
        self.received = 0  # chunk bitmask
        self.remaining = chunks


def pit_insert_or_collapse(pit: dict, node: int, obj: int, chunk: int, face: int,
                           chunks_per_object: int) -> str:
    """Single-chunk PIT update. Returns ``"Forwarded"`` or ``"Collapsed"``.

    ``pit`` maps ``(node, obj)`` to an int64 face-bitmask array; ``face`` is
    a bit position (or ``LOCAL``).
    """
    bit = LOCAL_BIT if face == LOCAL else (1 << face)
    entry = pit.get((node, obj))
    if entry is None:
        entry = pit[(node, obj)] = np.zeros(chunks_per_object, dtype=np.int64)
    pending = entry[chunk] != 0
    entry[chunk] |= bit
    return "Collapsed" if pending else "Forwarded"


def _pit_insert(segs: list, lo: int, hi: int, bit: int):
    """OR ``bit`` into the face masks of chunks [lo, hi).

    ``segs`` is a sorted list of disjoint ``[start, stop, mask]`` intervals
    with nonzero masks (absent chunks have no pending face). Returns the
    updated list, the runs of previously idle chunks and the count of chunks
    that were already pending.
    """
    out, fresh, pos, pending = [], [], lo, 0
    for a, b, m in segs:
        if b <= lo or a >= hi:
            if a >= hi and pos < hi:
                fresh.append((pos, hi))
                out.append([pos, hi, bit])
                pos = hi
            out.append([a, b, m])
            continue
        if a < lo:
            out.append([a, lo, m])
            a = lo
        if pos < a:
            fresh.append((pos, a))
            out.append([pos, a, bit])
        end = min(b, hi)
        out.append([a, end, m | bit])
        pending += end - a
        if b > hi:
            out.append([hi, b, m])
        pos = end
    if pos < hi:
        fresh.append((pos, hi))
        out.append([pos, hi, bit])
    return _merge(out), fresh, pending


def _pit_take(segs: list, lo: int, hi: int):
    """Remove chunks [lo, hi); returns (kept, runs) with runs of equal masks merged."""
    kept, taken = [], []
    for a, b, m in segs:
        if b <= lo or a >= hi:
            kept.append([a, b, m])
            continue
        if a < lo:
            kept.append([a, lo, m])
        if b > hi:
            kept.append([hi, b, m])
        taken.append([max(a, lo), min(b, hi), m])
    return kept, _merge(taken)


def _merge(segs: list) -> list:
    out = []
    for s in segs:
        if out and out[-1][1] == s[0] and out[-1][2] == s[2]:
            out[-1][1] = s[1]
        else:
            out.append(s)
    return out


def _span(lo: int, hi: int) -> int:
    return (1 << hi) - (1 << lo)


class ContentStore:
    """Object-granular cache of one node with the bookkeeping every policy needs."""

    def __init__(self, capacity: int, num_objects: int = 0):
        self.capacity = capacity
        self.items: set[int] = set()
        self.mask = np.zeros(num_objects, dtype=bool)
        self.last_use = np.zeros(num_objects, dtype=np.int64)
        self._ids: np.ndarray | None = None

    def __contains__(self, k):
        return k in self.items

    def __len__(self):
        return len(self.items)

    @property
    def full(self) -> bool:
        return len(self.items) >= self.capacity

    def add(self, k: int, t: int) -> None:
        if k >= len(self.mask):
            grow = k + 1 - len(self.mask)
            self.mask = np.concatenate((self.mask, np.zeros(grow, dtype=bool)))
            self.last_use = np.concatenate((self.last_use, np.zeros(grow, dtype=np.int64)))
        self.items.add(k)
        self._ids = None
        self.mask[k] = True
        self.last_use[k] = t

    def discard(self, k: int) -> None:
        self.items.discard(k)
        self._ids = None
        if k < len(self.mask):
            self.mask[k] = False

    def ids(self) -> np.ndarray:
        """Cached object ids, ascending."""
        if self._ids is None:
            self._ids = np.flatnonzero(self.mask)
        return self._ids


@dataclass
class MetricsLog:
    total_delay: int = 0  # sum over fulfilled chunk Interests, slots
    fulfilled_chunks: int = 0
    unfulfilled_chunks: int = 0
    object_delay: int = 0
    completed_requests: int = 0
    requests: int = 0
    cache_hits: int = 0  # chunk Interests served by a content store
    source_hits: int = 0
    collapsed: int = 0
    upstream_interests: int = 0  # chunk Interests put on links
    link_bits: np.ndarray | None = None
    backlog: list = field(default_factory=list)  # total VIPs per slot
    slots: int = 0

    @property
    def cache_hit_rate(self) -> float:
        served = self.cache_hits + self.source_hits
        return self.cache_hits / served if served else 0.0

    @property
    def mean_backlog(self) -> float:
        return float(np.mean(self.backlog)) if self.backlog else 0.0

    def summary(self) -> dict:
        return {
            "total_delay": self.total_delay,
            "fulfilled_chunks": self.fulfilled_chunks,
            "unfulfilled_chunks": self.unfulfilled_chunks,
            "object_delay": self.object_delay,
            "completed_requests": self.completed_requests,
            "requests": self.requests,
            "cache_hits": self.cache_hits,
            "source_hits": self.source_hits,
            "collapsed": self.collapsed,
            "upstream_interests": self.upstream_interests,
            "cache_hit_rate": self.cache_hit_rate,
            "mean_backlog": self.mean_backlog,
        }


class PacketWorld:
    """Actual-plane state and per-slot processing.

    ``vip_rates`` / ``vip_scores`` are read when the policy is VIP-mapped;
    the experiment driver refreshes them from the virtual plane every slot.
    """

    def __init__(self, graph: NetworkGraph, cat: ObjectCatalog, policy: PolicySpec,
                 seed: int = 0, pit_collapse: bool = True, bias_exponent: float = 0.75,
                 event_log: list | None = None):
        self.graph, self.cat, self.policy = graph, cat, policy
        self.rng = np.random.default_rng(seed)
        self.pit_collapse = pit_collapse
        self.bias_exponent = bias_exponent
        self.events = event_log
        N, K = graph.num_nodes, cat.num_objects
        self.M = cat.chunks_per_object
        self.adj = graph.adjacency()
        if max(len(a) for a in self.adj) > 62:
            raise ValueError("node degree above 62 is not supported by the PIT face mask")
        self.face_of = [{b: j for j, b in enumerate(a)} for a in self.adj]
        self.link_of = {(int(a), int(b)): l for l, (a, b) in enumerate(zip(graph.link_src, graph.link_dst))}
        self.dist = graph.hop_distances()
        self.nh = next_hop_table(graph, self.dist)
        # loop-free candidates per (node, source)
        self.dag = [[
            [b for b in self.adj[n] if (self.dist[b, s], b) < (self.dist[n, s], n)]
            for s in range(N)] for n in range(N)]
        self.stores = [ContentStore(int(c), K) for c in cat.cache_slots(graph)]
        self.holders: list[set[int]] = [set() for _ in range(K)]
        self.freq = np.zeros((N, K), dtype=np.int64)
        self.pit: dict[tuple[int, int], list] = {}  # (node, obj) -> [start, stop, face mask] runs
        self.local: dict[tuple[int, int], list[Request]] = {}
        self.local_hits: list[tuple[Request, int, int]] = []
        self.queues = [deque() for _ in range(graph.num_links)]
        self.inbox: list[tuple] = []
        self.metrics = MetricsLog(link_bits=np.zeros(graph.num_links, dtype=np.int64))
        self.vip_rates: np.ndarray | None = None  # (L, K)
        self.vip_scores: np.ndarray | None = None  # (N, K)
        self.t = 0
        self._bias = np.arange(1, K + 1, dtype=np.float64) ** -bias_exponent

    # ------------------------------------------------------------ helpers
    def _log(self, event, node, obj, lo, hi):
        if self.events is not None:
            self.events.append((self.t, event, node + 1, obj + 1, lo, hi - lo))

    def has_copy(self, n: int, k: int) -> bool:
        return int(self.cat.source[k]) == n or k in self.stores[n]

    def _enqueue(self, a: int, b: int, kind: int, k: int, lo: int, hi: int, hop: int = 0):
        self.queues[self.link_of[(a, b)]].append([kind, k, lo, hi, hop])

    # ------------------------------------------------------------ forwarding
    def forward_interest(self, n: int, k: int) -> int:
        """Next hop (0-based) for an object-k Interest at node n."""
        s = int(self.cat.source[k])
        cands = self.dag[n][s]
        if not cands:
            raise RuntimeError(f"no eligible neighbor at node {n + 1} for object {k + 1}")
        fw = self.policy.forwarding
        if fw == "shortest-path":
            return int(self.nh[n, s])
        if fw == "potential":
            holders = self.holders[k] | {s}
            best, pick = None, None
            for b in cands:
                d = min(int(self.dist[b, h]) for h in holders)
                if best is None or d < best:
                    best, pick = d, b
            return pick
        # vip: max windowed VIP rate, ties toward fewer hops then lower id
        rates = self.vip_rates
        best, pick = 0.0, None
        for b in sorted(cands, key=lambda x: (self.dist[x, s], x)):
            v = rates[self.link_of[(n, b)], k]
            if v > best:
                best, pick = v, b
        return int(self.nh[n, s]) if pick is None else pick

    # ------------------------------------------------------------ caching
    def cache_on_data_arrival(self, n: int, k: int, hop: int) -> None:
        store = self.stores[n]
        if store.capacity == 0 or int(self.cat.source[k]) == n:
            return
        if k in store:
            store.last_use[k] = self.t
            return
        pol = self.policy.caching
        if pol == "none" or (pol == "lcd-lru" and hop != 1):
            return
        victim = None
        if store.full:
            items = store.ids()
            if pol == "vip":
                sc = self.vip_scores[n]
                victim = int(items[np.argmin(sc[items])])
                if not sc[k] > sc[victim]:
                    return
            elif pol == "lfu":
                fr = self.freq[n]
                victim = int(items[np.argmin(fr[items])])
                if not fr[k] > fr[victim]:
                    return
            elif pol == "lce-unif":
                victim = int(items[int(self.rng.integers(len(items)))])
            elif pol in ("lce-lru", "lcd-lru"):
                victim = int(items[np.argmin(store.last_use[items])])
            elif pol == "lce-bias":
                victim = int(items[np.argmin((self.freq[n, items] + 1) * self._bias[items])])
            self._evict(n, victim)
        store.add(k, self.t)
        self.holders[k].add(n)
        self._log("CACHE_INSERT", n, k, 0, self.M)

    def _evict(self, n, k):
        store = self.stores[n]
        store.discard(k)
        self.holders[k].discard(n)
        self._log("CACHE_EVICT", n, k, 0, self.M)

    def preload(self, n: int, objects) -> None:
        """Place objects in a store directly (tests and warm starts)."""
        for k in objects:
            self.stores[n].add(k, self.t)
            self.holders[k].add(n)

    # ------------------------------------------------------------ packet handling
    def submit_interest(self, n: int, k: int) -> Request:
        """New object request at node n; all chunk Interests are issued at once."""
        if not 0 <= k < self.cat.num_objects:
            raise ValueError(f"unknown object {k + 1}")
        req = Request(n, k, self.t, self.M)
        self.metrics.requests += 1
        self.local.setdefault((n, k), []).append(req)
        self._interest(n, k, 0, self.M, LOCAL, req)
        return req

    def _interest(self, n, k, lo, hi, face, req=None):
        if lo == 0:
            self.freq[n, k] += 1
        if self.has_copy(n, k):
            if int(self.cat.source[k]) == n:
                self.metrics.source_hits += hi - lo
            else:
                self.metrics.cache_hits += hi - lo
                self.stores[n].last_use[k] = self.t
            if face == LOCAL:
                self.local_hits.append((req, lo, hi))
            else:
                self._enqueue(n, face, DATA, k, lo, hi, 1)
                self._log("DATA_FWD", n, k, lo, hi)
            return
        bit = LOCAL_BIT if face == LOCAL else (1 << self.face_of[n][face])
        segs, fresh, ncol = _pit_insert(self.pit.get((n, k), []), lo, hi, bit)
        self.pit[(n, k)] = segs
        if self.pit_collapse:
            if ncol:
                self.metrics.collapsed += ncol
                self._log("COLLAPSE", n, k, lo, hi)
            runs = fresh
        else:
            runs = [(lo, hi)]
        if not runs:
            return
        nxt = self.forward_interest(n, k)
        for a, b in runs:
            self._enqueue(n, nxt, INTEREST, k, a, b)
            self._log("INTEREST_FWD", n, k, a, b)

    def _data(self, n, k, lo, hi, hop):
        if lo == 0:
            self.cache_on_data_arrival(n, k, hop)
        segs = self.pit.get((n, k))
        if segs is None:
            return
        kept, runs = _pit_take(segs, lo, hi)
        for a, b, mask in runs:
            if mask & LOCAL_BIT:
                self._deliver_local(n, k, a, b)
                mask &= ~LOCAL_BIT
            j = 0
            while mask:
                if mask & 1:
                    self._enqueue(n, self.adj[n][j], DATA, k, a, b, hop + 1)
                    self._log("DATA_FWD", n, k, a, b)
                mask >>= 1
                j += 1
        if kept:
            self.pit[(n, k)] = kept
        else:
            del self.pit[(n, k)]

    def _deliver_local(self, n, k, lo, hi, only: Request | None = None):
        reqs = self.local.get((n, k), [])
        for req in ([only] if only is not None else list(reqs)):
            new = _span(lo, hi) & ~req.received
            if not new:
                continue
            cnt = new.bit_count()
            req.received |= new
            req.remaining -= cnt
            self.metrics.total_delay += cnt * (self.t - req.created)
            self.metrics.fulfilled_chunks += cnt
            self._log("FULFILL", n, k, lo, hi)
            if req.remaining == 0:
                self.metrics.object_delay += self.t - req.created
                self.metrics.completed_requests += 1
                reqs.remove(req)
        if not reqs:
            self.local.pop((n, k), None)

    # ------------------------------------------------------------ slot
    def step_actual(self, arrivals: np.ndarray | None = None) -> None:
        """Advance one slot: deliveries, new requests, then link transmission."""
        self.t += 1
        hits, self.local_hits = self.local_hits, []
        for req, lo, hi in hits:
            self._deliver_local(req.node, req.obj, lo, hi, only=req)
        inbox, self.inbox = self.inbox, []
        for kind, k, lo, hi, hop, a, b in inbox:
            if kind == INTEREST:
                self._interest(b, k, lo, hi, a)
        for kind, k, lo, hi, hop, a, b in inbox:
            if kind == DATA:
                self._data(b, k, lo, hi, hop)
        if arrivals is not None:
            for n, k in zip(*np.nonzero(arrivals)):
                for _ in range(int(arrivals[n, k])):
                    self.submit_interest(int(n), int(k))
        self._transmit()
        self.metrics.slots = self.t

    def _transmit(self):
        g, cat = self.graph, self.cat
        size = (cat.interest_bits, cat.chunk_bits)
        for l, q in enumerate(self.queues):
            if not q:
                continue
            budget = int(g.link_cap[l])
            a, b = int(g.link_src[l]), int(g.link_dst[l])
            used = 0
            while q:
                kind, k, lo, hi, hop = q[0]
                unit = size[kind]
                fit = (budget - used) // unit
                if fit <= 0:
                    break
                m = min(fit, hi - lo)
                used += m * unit
                self.inbox.append((kind, k, lo, lo + m, hop, a, b))
                if kind == INTEREST:
                    self.metrics.upstream_interests += m
                if m == hi - lo:
                    q.popleft()
                else:
                    q[0][2] = lo + m
                    break
            self.metrics.link_bits[l] += used

    def close(self) -> MetricsLog:
        """Count chunk Interests still open at the horizon."""
        open_chunks = sum(r.remaining for reqs in self.local.values() for r in reqs)
        self.metrics.unfulfilled_chunks = open_chunks
        return self.metrics
