"""Time the numba and numpy virtual-plane kernels against each other.

    python benchmarks/bench_kernels.py [--topology GEANT] [--objects 100 3000] [--slots 200]

Both backends are imported side by side from ``vipnet.kernels``; the
environment flag only chooses the default used by the simulator.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from vipnet import kernels
from vipnet.topology import GB_BITS, builtin
from vipnet.workload import DemandModel


def one_slot(fns, V, theta, graph, cat, rates, slots, arrivals):
    forward, cache, step = fns
    kstar, rate = forward(V, theta, graph.link_src, graph.link_dst, cat.allowed, rates)
    s = cache(V, slots)
    Vn, _, _ = step(V, theta, kstar, rate, arrivals, s, graph.read_rate,
                    graph.link_src, graph.link_dst, cat.source)
    return Vn


def bench(topology: str, num_objects: int, num_slots: int, lam: float) -> dict[str, float]:
    graph, cat = builtin(topology, 2 * GB_BITS, num_objects, seed=0)
    rates = graph.link_cap[graph.reverse] / float(cat.object_bits)
    slots = cat.cache_slots(graph)
    demand = DemandModel(num_objects, cat.requesters, lam, 0.75, seed=1)
    batches = [demand.sample() for _ in range(num_slots)]
    theta = np.ones((graph.num_nodes, num_objects))
    backends = {
        "numpy": (kernels.forward_numpy, kernels.cache_numpy, kernels.step_numpy),
        "numba": (kernels.forward_numba, kernels.cache_numba, kernels.step_numba),
    }
    V0 = np.zeros((graph.num_nodes, num_objects))
    one_slot(backends["numba"], V0, theta, graph, cat, rates, slots, batches[0])  # compile
    out, finals = {}, {}
    for name, fns in backends.items():
        V = V0.copy()
        start = time.perf_counter()
        for a in batches:
            V = one_slot(fns, V, theta, graph, cat, rates, slots, a)
        out[name] = (time.perf_counter() - start) / num_slots * 1e3
        finals[name] = V
    if not np.array_equal(finals["numpy"], finals["numba"]):
        raise SystemExit("backends disagree")
    return out


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--topology", default="GEANT")
    p.add_argument("--objects", type=int, nargs="+", default=[100, 1000, 3000])
    p.add_argument("--slots", type=int, default=200)
    p.add_argument("--rate", type=float, default=10.0)
    args = p.parse_args()
    print(f"{'K':>6} {'numpy ms/slot':>14} {'numba ms/slot':>14} {'speedup':>8}")
    for K in args.objects:
        t = bench(args.topology, K, args.slots, args.rate)
        print(f"{K:>6} {t['numpy']:>14.3f} {t['numba']:>14.3f} {t['numpy'] / t['numba']:>8.2f}")


if __name__ == "__main__":
    main()
