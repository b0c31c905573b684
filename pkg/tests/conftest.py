import warnings

import numpy as np

import pytest

from vipnet.topology import make_catalog, make_graph

D = 40_000_000  # object bits used by the small fixtures
CHUNK = 400_000


def symmetric(edges, cap_bits):
    """``{(a, b): cap}`` with both directions of every undirected edge."""
    links = {}
    for a, b in edges:
        links[(a, b)] = cap_bits
        links[(b, a)] = cap_bits
    return links


def small_network(edges, num_nodes, K, sources, cap_objects=1.0, slots=0, read_rate=1.0,
                  requesters=None, chunk_bits=CHUNK, interest_bits=1000):
    """Graph + catalog with capacities and caches given in objects."""
    graph = make_graph(symmetric(edges, int(cap_objects * D)), num_nodes,
                       cache_bits=slots * D if not isinstance(slots, list) else [s * D for s in slots],
                       read_rate=read_rate)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cat = make_catalog(graph, K, D, chunk_bits, interest_bits,
                           sources={k + 1: s for k, s in enumerate(sources)},
                           requesters=requesters)
    return graph, cat


@pytest.fixture
def two_node():
    """Node 1 requests object 1 sourced at node 2; each link carries 2 objects/slot."""
    return small_network([(1, 2)], 2, 1, [2], cap_objects=2.0)


def plain(graph, cat):
    """Plain-python view of a network for the oracles."""
    links = [(int(a), int(b)) for a, b in zip(graph.link_src, graph.link_dst)]
    return dict(
        N=graph.num_nodes, K=cat.num_objects, links=links,
        cap_of={ab: int(c) for ab, c in zip(links, graph.link_cap)},
        obj_bits=cat.object_bits,
        slots=[int(x) for x in cat.cache_slots(graph)],
        read_rate=[float(x) for x in graph.read_rate],
        source=[int(s) for s in cat.source],
        allowed=cat.allowed.tolist(),
    )


def random_instance(rng, max_nodes=5, max_objects=4, max_slots=2):
    """Random connected network with per-node caches and random rates/theta."""
    n = int(rng.integers(2, max_nodes + 1))
    edges = {(int(rng.integers(1, v)), v) for v in range(2, n + 1)}
    for _ in range(int(rng.integers(0, n))):
        a, b = sorted(int(x) for x in rng.choice(np.arange(1, n + 1), 2, replace=False))
        edges.add((a, b))
    K = int(rng.integers(1, max_objects + 1))
    sources = [int(rng.integers(1, n + 1)) for _ in range(K)]
    slots = [int(rng.integers(0, max_slots + 1)) for _ in range(n)]
    cap = float(rng.choice([0.5, 1.0, 2.0]))
    g, c = small_network(sorted(edges), n, K, sources, cap_objects=cap, slots=slots)
    rates = rng.uniform(0, 1.5, size=(n, K)) * (rng.random((n, K)) < 0.8)
    theta = 1.0 + rng.integers(0, 3, size=(n, K)) * rng.uniform(0, 1, size=(n, K))
    return g, c, rates, theta
