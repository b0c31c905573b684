"""Network graph, object catalog, topology files and the built-in topologies."""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

BUILTIN_NAMES = ("Service", "Abilene", "GEANT", "DTelekom")

# experiment defaults (bits)
MBIT = 1_000_000
BYTE = 8
DEFAULT_LINK_BITS = 500 * MBIT
DEFAULT_OBJECT_BITS = 5 * MBIT * BYTE
DEFAULT_CHUNK_BITS = 50_000 * BYTE
DEFAULT_INTEREST_BITS = 125 * BYTE
GB_BITS = 1000 * MBIT * BYTE


class TopologyError(ValueError):
    """Raised when a topology file cannot be parsed or fails validation."""


@dataclass(frozen=True, eq=False)
class NetworkGraph:
    """Directed graph with link capacities and per-node caches.

    Nodes are the dense ids ``1..N``; arrays are indexed by ``id - 1``.
    Links are kept in ascending ``(a, b)`` order and referenced by index.
    """

    cache_bits: np.ndarray  # (N,) int64
    read_rate: np.ndarray  # (N,) float64, objects per slot
    link_src: np.ndarray  # (L,) 0-based
    link_dst: np.ndarray  # (L,) 0-based
    link_cap: np.ndarray  # (L,) bits per slot
    reverse: np.ndarray = field(init=False)
    link_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        index = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(self.link_src, self.link_dst))}
        rev = np.full(len(self.link_src), -1, dtype=np.int64)
        for (a, b), i in index.items():
            j = index.get((b, a))
            if j is None:
                raise TopologyError(f"missing reverse link ({b + 1},{a + 1}) for ({a + 1},{b + 1})")
            rev[i] = j
        object.__setattr__(self, "reverse", rev)
        object.__setattr__(self, "link_index", index)

    @property
    def num_nodes(self) -> int:
        return len(self.cache_bits)

    @property
    def num_links(self) -> int:
        return len(self.link_src)

    @property
    def nodes(self) -> list[int]:
        return list(range(1, self.num_nodes + 1))

    @property
    def links(self) -> list[tuple[int, int]]:
        return [(int(a) + 1, int(b) + 1) for a, b in zip(self.link_src, self.link_dst)]

    def capacity(self, a: int, b: int) -> int:
        return int(self.link_cap[self.link_index[(a - 1, b - 1)]])

    def neighbors(self, n: int) -> list[int]:
        """Neighbor ids of node ``n`` in ascending order."""
        return [int(b) + 1 for a, b in zip(self.link_src, self.link_dst) if a == n - 1]

    def adjacency(self) -> list[list[int]]:
        """0-based adjacency lists, ascending."""
        adj: list[list[int]] = [[] for _ in range(self.num_nodes)]
        for a, b in zip(self.link_src, self.link_dst):
            adj[a].append(int(b))
        return adj

    def hop_distances(self) -> np.ndarray:
        """All-pairs minimum hop counts (0-based), ``-1`` where unreachable."""
        adj = self.adjacency()
        n = self.num_nodes
        dist = np.full((n, n), -1, dtype=np.int64)
        for s in range(n):
            dist[s, s] = 0
            q = deque([s])
            while q:
                u = q.popleft()
                for v in adj[u]:
                    if dist[s, v] < 0:
                        dist[s, v] = dist[s, u] + 1
                        q.append(v)
        return dist

    def is_connected(self) -> bool:
        return bool((self.hop_distances()[0] >= 0).all())


@dataclass(frozen=True, eq=False)
class ObjectCatalog:
    """Object set with sizes, content sources and allowed links.

    ``source`` holds 0-based node indices; ``allowed`` is an (L, K) boolean
    matrix, all True unless restricted.
    """

    object_bits: int
    chunk_bits: int
    interest_bits: int
    source: np.ndarray  # (K,)
    allowed: np.ndarray  # (L, K) bool
    requesters: np.ndarray  # (N,) bool

    @property
    def num_objects(self) -> int:
        return len(self.source)

    @property
    def chunks_per_object(self) -> int:
        return self.object_bits // self.chunk_bits

    def src(self, k: int) -> int:
        """Source node id of object id ``k``."""
        return int(self.source[k - 1]) + 1

    def c_max(self, graph: NetworkGraph) -> float:
        return float(graph.link_cap.max()) / self.object_bits

    def cache_slots(self, graph: NetworkGraph) -> np.ndarray:
        """Objects each node can hold, ``floor(L_n / D)``."""
        return graph.cache_bits // self.object_bits


def make_graph(
    links: dict[tuple[int, int], int],
    num_nodes: int,
    cache_bits=0,
    read_rate=1.0,
) -> NetworkGraph:
    """Build a graph from ``{(a, b): cap_bits}`` with 1-based node ids."""
    for (a, b), cap in links.items():
        if a == b:
            raise TopologyError(f"self-loop on node {a}")
        if cap <= 0:
            raise TopologyError(f"link ({a},{b}) capacity must be positive")
        if not (1 <= a <= num_nodes and 1 <= b <= num_nodes):
            raise TopologyError(f"link ({a},{b}) references unknown node")
    order = sorted(links)
    return NetworkGraph(
        cache_bits=np.broadcast_to(np.asarray(cache_bits, dtype=np.int64), (num_nodes,)).copy(),
        read_rate=np.broadcast_to(np.asarray(read_rate, dtype=np.float64), (num_nodes,)).copy(),
        link_src=np.array([a - 1 for a, _ in order], dtype=np.int64),
        link_dst=np.array([b - 1 for _, b in order], dtype=np.int64),
        link_cap=np.array([links[x] for x in order], dtype=np.int64),
    )


def make_catalog(
    graph: NetworkGraph,
    num_objects: int,
    object_bits: int = DEFAULT_OBJECT_BITS,
    chunk_bits: int = DEFAULT_CHUNK_BITS,
    interest_bits: int = DEFAULT_INTEREST_BITS,
    sources: dict[int, int] | None = None,
    requesters=None,
    seed: int = 0,
) -> ObjectCatalog:
    """Build a catalog; objects without an explicit source get a seeded uniform one."""
    if num_objects < 1:
        raise TopologyError("object count must be at least 1")
    if chunk_bits <= 0 or object_bits % chunk_bits:
        raise TopologyError("chunk size must divide object size")
    n = graph.num_nodes
    rng = np.random.default_rng(seed)
    source = rng.integers(0, n, size=num_objects)
    for k, node in (sources or {}).items():
        if not 1 <= k <= num_objects:
            raise TopologyError(f"source for unknown object {k}")
        if not 1 <= node <= n:
            raise TopologyError(f"source node {node} of object {k} not in graph")
        source[k - 1] = node - 1
    req = np.ones(n, dtype=bool)
    if requesters:
        req[:] = False
        for node in requesters:
            if not 1 <= node <= n:
                raise TopologyError(f"requester {node} not in graph")
            req[node - 1] = True
    cat = ObjectCatalog(
        object_bits=int(object_bits),
        chunk_bits=int(chunk_bits),
        interest_bits=int(interest_bits),
        source=source.astype(np.int64),
        allowed=np.ones((graph.num_links, num_objects), dtype=bool),
        requesters=req,
    )
    if (graph.cache_bits >= num_objects * object_bits).any():
        warnings.warn("some node can cache every object (L_n >= K*D)", stacklevel=2)
    return cat


def _parse_kv(tokens, lineno):
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise TopologyError(f"line {lineno}: expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        out[key] = val
    return out


def parse_topology(text: str, seed: int = 0) -> tuple[NetworkGraph, ObjectCatalog]:
    nodes: dict[int, tuple[int, float]] = {}
    links: dict[tuple[int, int], int] = {}
    sources: dict[int, int] = {}
    requesters: list[int] = []
    defaults = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        try:
            if head == "node":
                kv = _parse_kv(rest[1:], lineno)
                nodes[int(rest[0])] = (int(kv.get("cache_bits", 0)), float(kv.get("read_rate", 1.0)))
            elif head == "link":
                kv = _parse_kv(rest[2:], lineno)
                key = (int(rest[0]), int(rest[1]))
                if key in links:
                    raise TopologyError(f"line {lineno}: duplicate link {key}")
                links[key] = int(kv["cap_bits"])
            elif head == "object_defaults":
                kv = _parse_kv(rest, lineno)
                defaults = {
                    "num_objects": int(kv["count"]),
                    "object_bits": int(kv["size_bits"]),
                    "chunk_bits": int(kv.get("chunk_bits", kv["size_bits"])),
                    "interest_bits": int(kv.get("interest_bits", DEFAULT_INTEREST_BITS)),
                }
            elif head == "source":
                sources[int(rest[0])] = int(rest[1])
            elif head == "requester":
                requesters.append(int(rest[0]))
            else:
                raise TopologyError(f"line {lineno}: unknown directive {head!r}")
        except (IndexError, KeyError, ValueError) as exc:
            if isinstance(exc, TopologyError):
                raise
            raise TopologyError(f"line {lineno}: malformed {head!r} entry ({exc})") from None
    if not nodes:
        raise TopologyError("no nodes declared")
    n = len(nodes)
    if sorted(nodes) != list(range(1, n + 1)):
        raise TopologyError("node ids must be dense 1..N")
    if defaults is None:
        raise TopologyError("missing object_defaults line")
    for (a, b) in links:
        if (b, a) not in links:
            raise TopologyError(f"missing reverse link ({b},{a}) for ({a},{b})")
    graph = make_graph(
        links,
        n,
        cache_bits=[nodes[i][0] for i in range(1, n + 1)],
        read_rate=[nodes[i][1] for i in range(1, n + 1)],
    )
    cat = make_catalog(graph, sources=sources, requesters=requesters or None, seed=seed, **defaults)
    return graph, cat


def load_topology(path, seed: int = 0) -> tuple[NetworkGraph, ObjectCatalog]:
    return parse_topology(Path(path).read_text(), seed=seed)


def format_topology(graph: NetworkGraph, cat: ObjectCatalog, with_sources: bool = True) -> str:
    lines = []
    for i in range(graph.num_nodes):
        lines.append(f"node {i + 1} cache_bits={int(graph.cache_bits[i])} read_rate={float(graph.read_rate[i])!r}")
    for (a, b), cap in zip(graph.links, graph.link_cap):
        lines.append(f"link {a} {b} cap_bits={int(cap)}")
    lines.append(
        f"object_defaults count={cat.num_objects} size_bits={cat.object_bits} "
        f"chunk_bits={cat.chunk_bits} interest_bits={cat.interest_bits}"
    )
    if with_sources:
        lines.extend(f"source {k + 1} {int(s) + 1}" for k, s in enumerate(cat.source))
    if not cat.requesters.all():
        lines.extend(f"requester {i + 1}" for i in np.flatnonzero(cat.requesters))
    return "\n".join(lines) + "\n"


def save_topology(path, graph: NetworkGraph, cat: ObjectCatalog) -> None:
    Path(path).write_text(format_topology(graph, cat))


def _read_adjacency(name: str) -> tuple[int, list[tuple[int, int]], list[int]]:
    """Parse a shipped ``.adj`` file: node count, undirected edges, consumers."""
    text = resources.files("vipnet").joinpath("data", f"{name.lower()}.adj").read_text()
    n = 0
    edges = []
    consumers = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "nodes":
            n = int(parts[1])
        elif parts[0] == "consumer":
            consumers.append(int(parts[1]))
        else:
            edges.append((int(parts[0]), int(parts[1])))
    return n, edges, consumers


def render_adjacency(graph: NetworkGraph) -> str:
    """``nodes N`` then one ``a b`` line per undirected edge (a < b), ascending."""
    edges = sorted((a, b) for a, b in graph.links if a < b)
    return f"nodes {graph.num_nodes}\n" + "".join(f"{a} {b}\n" for a, b in edges)


def adjacency_text(name: str) -> str:
    return resources.files("vipnet").joinpath("data", f"{name.lower()}.adj").read_text()


def builtin(
    name: str,
    cache_size_bits: int,
    object_count: int,
    seed: int = 0,
    link_bits: int = DEFAULT_LINK_BITS,
    object_bits: int = DEFAULT_OBJECT_BITS,
    chunk_bits: int = DEFAULT_CHUNK_BITS,
    interest_bits: int = DEFAULT_INTEREST_BITS,
    read_rate: float = 1.0,
) -> tuple[NetworkGraph, ObjectCatalog]:
    """One of the four experiment topologies with uniform caches and links."""
    canon = {x.lower(): x for x in BUILTIN_NAMES}.get(name.lower())
    if canon is None:
        raise TopologyError(f"unknown topology {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    n, edges, consumers = _read_adjacency(canon)
    links = {}
    for a, b in edges:
        links[(a, b)] = link_bits
        links[(b, a)] = link_bits
    graph = make_graph(links, n, cache_bits=cache_size_bits, read_rate=read_rate)
    if canon == "Service":
        sources = {k: 1 for k in range(1, object_count + 1)}
        req = consumers
    else:
        sources, req = None, None
    cat = make_catalog(
        graph, object_count, object_bits, chunk_bits, interest_bits,
        sources=sources, requesters=req, seed=seed,
    )
    return graph, cat


def shortest_path_next_hop(graph: NetworkGraph, src: int, dst: int) -> int:
    """Next hop (node id) from ``src`` on a minimum-hop path to ``dst``.

    Ties go to the smallest neighbor id.
    """
    table = next_hop_table(graph)
    hop = table[src - 1, dst - 1]
    if hop < 0:
        raise TopologyError(f"node {dst} unreachable from {src}")
    return int(hop) + 1


def next_hop_table(graph: NetworkGraph, dist: np.ndarray | None = None) -> np.ndarray:
    """0-based ``table[n, d]`` next hop toward ``d`` (``n`` itself on the diagonal)."""
    if dist is None:
        dist = graph.hop_distances()
    adj = graph.adjacency()
    n = graph.num_nodes
    table = np.full((n, n), -1, dtype=np.int64)
    for u in range(n):
        table[u, u] = u
        for d in range(n):
            if d == u or dist[u, d] < 0:
                continue
            for v in adj[u]:
                if dist[v, d] == dist[u, d] - 1:
                    table[u, d] = v
                    break
    return table
