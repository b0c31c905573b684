"""Stability-region analysis for the scaled VIP network.

The region is a linear feasibility problem over link flows ``f[l, k]`` and
time-sharing weights ``beta`` on every admissible caching set of every node.
Solutions are re-checked by direct substitution before being returned.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .topology import NetworkGraph, ObjectCatalog

DEFAULT_ENUM_CAP = 10**6
CERT_TOL = 1e-9


class EnumerationError(ValueError):
    """Caching-set enumeration would exceed the configured cap."""


class SolverFailure(RuntimeError):
    """The LP solver did not return a usable answer (distinct from infeasible)."""


@dataclass(frozen=True)
class CachingCombination:
    node: int  # 0-based
    objects: tuple[int, ...]  # 0-based, ascending
    size: int  # l
    index: int  # i, 1-based within size l


def count_caching_sets(num_objects: int, slots: int) -> int:
    return sum(math.comb(num_objects, l) for l in range(min(slots, num_objects) + 1))


def enumerate_caching_sets(cat: ObjectCatalog, graph: NetworkGraph, node: int,
                           cap: int = DEFAULT_ENUM_CAP) -> list[CachingCombination]:
    """All object subsets of size ``0..floor(L_n/D)`` at ``node`` (0-based), lexicographic."""
    K = cat.num_objects
    slots = int(cat.cache_slots(graph)[node])
    total = count_caching_sets(K, slots)
    if total > cap:
        raise EnumerationError(f"node {node + 1}: {total} caching sets exceed cap {cap}")
    out = []
    for l in range(min(slots, K) + 1):
        for i, combo in enumerate(itertools.combinations(range(K), l), 1):
            out.append(CachingCombination(node, combo, l, i))
    return out


@dataclass
class StabilityInstance:
    graph: NetworkGraph
    cat: ObjectCatalog
    rates: np.ndarray  # (N, K) lambda
    theta: np.ndarray  # (N, K)

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.theta = np.broadcast_to(np.asarray(self.theta, dtype=np.float64), self.rates.shape).copy()
        if (self.rates < 0).any():
            raise ValueError("arrival rates must be nonnegative")
        if (self.theta < 1).any():
            raise ValueError("theta must be >= 1")

    def scaled(self, rho: float) -> StabilityInstance:
        return StabilityInstance(self.graph, self.cat, self.rates * rho, self.theta)


@dataclass
class FlowSolution:
    flows: np.ndarray  # (L, K)
    sets: list[list[CachingCombination]]  # per node
    beta: list[np.ndarray]  # per node, aligned with sets
    slack: float
    max_violation: float = 0.0

    def cache_marginals(self, num_objects: int) -> np.ndarray:
        """``sum beta * 1[k in B]`` per (node, object)."""
        q = np.zeros((len(self.sets), num_objects))
        for n, (sets, b) in enumerate(zip(self.sets, self.beta)):
            for combo, w in zip(sets, b):
                for k in combo.objects:
                    q[n, k] += w
        return q


@dataclass
class FeasibilityResult:
    feasible: bool
    solution: FlowSolution | None = None

    def __bool__(self):
        return self.feasible


class _Layout:
    """Variable indexing shared by the feasibility and max-load programs."""

    def __init__(self, graph: NetworkGraph, cat: ObjectCatalog, cap: int):
        K = cat.num_objects
        self.graph, self.cat = graph, cat
        # a flow variable exists where the link is allowed and does not leave the source
        usable = cat.allowed & (graph.link_src[:, None] != cat.source[None, :])
        self.flow_l, self.flow_k = np.nonzero(usable)
        self.nf = len(self.flow_l)
        self.sets = [enumerate_caching_sets(cat, graph, n, cap) for n in range(graph.num_nodes)]
        self.beta_off = []
        off = self.nf
        for s in self.sets:
            self.beta_off.append(off)
            off += len(s)
        self.nvar = off
        self.K = K

    def demand_rows(self, theta: np.ndarray):
        """Sparse rows of ``-out + in/theta - r*sum(beta 1[k in B])`` per non-source (n, k)."""
        g, cat = self.graph, self.cat
        N, K = g.num_nodes, self.K
        rows_nk = [(n, k) for n in range(N) for k in range(K) if cat.source[k] != n]
        row_of = {nk: i for i, nk in enumerate(rows_nk)}
        r, c, v = [], [], []
        for j in range(self.nf):
            l, k = self.flow_l[j], self.flow_k[j]
            a, b = g.link_src[l], g.link_dst[l]
            i = row_of.get((a, k))
            if i is not None:
                r.append(i); c.append(j); v.append(-1.0)
            i = row_of.get((b, k))
            if i is not None:
                r.append(i); c.append(j); v.append(1.0 / theta[b, k])
        for n, sets in enumerate(self.sets):
            rn = float(g.read_rate[n])
            if rn == 0:
                continue
            for idx, combo in enumerate(sets):
                for k in combo.objects:
                    i = row_of.get((n, k))
                    if i is not None:
                        r.append(i); c.append(self.beta_off[n] + idx); v.append(-rn)
        A = sparse.csr_matrix((v, (r, c)), shape=(len(rows_nk), self.nvar))
        return A, rows_nk

    def capacity_rows(self):
        g = self.graph
        A = sparse.csr_matrix(
            (np.ones(self.nf), (self.flow_l, np.arange(self.nf))), shape=(g.num_links, self.nvar)
        )
        return A, g.link_cap[g.reverse] / float(self.cat.object_bits)

    def simplex_rows(self):
        r, c = [], []
        for n, sets in enumerate(self.sets):
            for idx in range(len(sets)):
                r.append(n); c.append(self.beta_off[n] + idx)
        return sparse.csr_matrix((np.ones(len(r)), (r, c)), shape=(len(self.sets), self.nvar))

    def unpack(self, x: np.ndarray, slack: float) -> FlowSolution:
        flows = np.zeros((self.graph.num_links, self.K))
        flows[self.flow_l, self.flow_k] = np.maximum(x[: self.nf], 0.0)
        beta = []
        for n, sets in enumerate(self.sets):
            b = np.clip(x[self.beta_off[n]: self.beta_off[n] + len(sets)], 0.0, 1.0)
            beta.append(b / b.sum())
        return FlowSolution(flows, self.sets, beta, slack)


_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def certificate_violation(inst: StabilityInstance, sol: FlowSolution) -> float:
    """Largest violation of the region constraints by direct substitution."""
    g, cat = inst.graph, inst.cat
    N, K = g.num_nodes, cat.num_objects
    f = sol.flows
    worst = 0.0
    worst = max(worst, float(-f.min(initial=0.0)))
    worst = max(worst, float(np.abs(f[~cat.allowed]).max(initial=0.0)))
    from_src = g.link_src[:, None] == cat.source[None, :]
    worst = max(worst, float(np.abs(f[from_src]).max(initial=0.0)))
    cap = g.link_cap[g.reverse] / float(cat.object_bits)
    worst = max(worst, float((f.sum(axis=1) - cap).max(initial=0.0)))
    for b in sol.beta:
        worst = max(worst, float(-b.min(initial=0.0)), float((b - 1).max(initial=0.0)), abs(float(b.sum()) - 1.0))
    out = np.zeros((N, K))
    inn = np.zeros((N, K))
    np.add.at(out, g.link_src, f)
    np.add.at(inn, g.link_dst, f)
    q = sol.cache_marginals(K)
    lam = inst.rates + sol.slack
    lhs = lam / inst.theta
    rhs = out - inn / inst.theta + g.read_rate[:, None] * q
    gap = lhs - rhs
    gap[cat.source, np.arange(K)] = -np.inf
    worst = max(worst, float(gap.max(initial=0.0)))
    return worst


def check_feasibility(inst: StabilityInstance, slack: float = 0.0,
                      cap: int = DEFAULT_ENUM_CAP) -> FeasibilityResult:
    """Is ``rates + slack`` inside the region? Returns a verified certificate if so."""
    if slack < 0:
        raise ValueError("slack must be nonnegative")
    lay = _Layout(inst.graph, inst.cat, cap)
    A_dem, rows = lay.demand_rows(inst.theta)
    b_dem = np.array([-(inst.rates[n, k] + slack) / inst.theta[n, k] for n, k in rows])
    A_cap, b_cap = lay.capacity_rows()
    A_eq = lay.simplex_rows()
    c = np.zeros(lay.nvar)
    c[: lay.nf] = 1.0
    res = linprog(
        c, A_ub=sparse.vstack([A_dem, A_cap]).tocsr(), b_ub=np.concatenate([b_dem, b_cap]),
        A_eq=A_eq, b_eq=np.ones(A_eq.shape[0]),
        bounds=[(0, None)] * lay.nf + [(0, 1)] * (lay.nvar - lay.nf),
        method="highs", options=_HIGHS,
    )
    if res.status == 2:
        return FeasibilityResult(False)
    if res.status != 0:
        raise SolverFailure(f"linprog status {res.status}: {res.message}")
    sol = lay.unpack(res.x, slack)
    sol.max_violation = certificate_violation(inst, sol)
    if sol.max_violation > CERT_TOL:
        sol = _polish(inst, sol)
    if sol.max_violation > CERT_TOL:
        raise SolverFailure(f"certificate violates constraints by {sol.max_violation:.3e}")
    return FeasibilityResult(True, sol)


def _polish(inst: StabilityInstance, sol: FlowSolution) -> FlowSolution:
    # shrink flows onto capacity, then the solver's residual is usually gone
    g, cat = inst.graph, inst.cat
    cap = g.link_cap[g.reverse] / float(cat.object_bits)
    tot = sol.flows.sum(axis=1)
    over = tot > cap
    sol.flows[over] *= (cap[over] / tot[over])[:, None]
    sol.max_violation = certificate_violation(inst, sol)
    return sol


def max_load_scaling(inst: StabilityInstance, cap: int = DEFAULT_ENUM_CAP) -> float:
    """Largest ``rho`` with ``rho * rates`` in the region (``inf`` if unbounded).

    Solved directly as one LP in ``(f, beta, rho)``; demand rows are linear
    in ``rho`` so no bisection is needed.
    """
    if not (inst.rates > 0).any():
        raise ValueError("rates must be nonzero")
    lay = _Layout(inst.graph, inst.cat, cap)
    A_dem, rows = lay.demand_rows(inst.theta)
    coef = np.array([inst.rates[n, k] / inst.theta[n, k] for n, k in rows])
    A_dem = sparse.hstack([A_dem, sparse.csr_matrix(coef[:, None])])
    A_cap, b_cap = lay.capacity_rows()
    A_cap = sparse.hstack([A_cap, sparse.csr_matrix((A_cap.shape[0], 1))])
    A_eq = sparse.hstack([lay.simplex_rows(), sparse.csr_matrix((len(lay.sets), 1))])
    c = np.zeros(lay.nvar + 1)
    c[-1] = -1.0
    res = linprog(
        c, A_ub=sparse.vstack([A_dem, A_cap]).tocsr(),
        b_ub=np.concatenate([np.zeros(len(rows)), b_cap]),
        A_eq=A_eq.tocsr(), b_eq=np.ones(len(lay.sets)),
        bounds=[(0, None)] * lay.nf + [(0, 1)] * (lay.nvar - lay.nf) + [(0, None)],
        method="highs", options=_HIGHS,
    )
    if res.status == 3:
        return math.inf
    if res.status != 0:
        raise SolverFailure(f"linprog status {res.status}: {res.message}")
    return float(res.x[-1])


@dataclass
class RandomizedPolicy:
    """Stationary randomized forwarding/caching built from a certificate.

    Each link with positive total flow carries one object per slot, drawn
    with probability proportional to its flow, at the total flow rate. Each
    node caches one caching set drawn with probability ``beta``.
    """

    solution: FlowSolution
    seed: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        f = self.solution.flows
        self.total = f.sum(axis=1)
        self._cum = np.cumsum(f, axis=1)
        self._cum_beta = [np.cumsum(b) for b in self.solution.beta]
        self.rng = np.random.default_rng(self.seed)

    def sample_forwarding(self) -> np.ndarray:
        L, K = self.solution.flows.shape
        mu = np.zeros((L, K))
        u = self.rng.random(L) * self.total
        for l in np.flatnonzero(self.total > 0):
            k = min(int(np.searchsorted(self._cum[l], u[l], side="right")), K - 1)
            mu[l, k] = self.total[l]
        return mu

    def sample_caching(self, num_objects: int) -> np.ndarray:
        N = len(self.solution.sets)
        s = np.zeros((N, num_objects), dtype=bool)
        u = self.rng.random(N)
        for n in range(N):
            cum = self._cum_beta[n]
            i = min(int(np.searchsorted(cum, u[n] * cum[-1], side="right")), len(cum) - 1)
            s[n, list(self.solution.sets[n][i].objects)] = True
        return s


def build_randomized_policy(solution: FlowSolution, seed: int = 0) -> RandomizedPolicy:
    return RandomizedPolicy(solution, seed)


@dataclass
class BoundReport:
    mu_out_max: np.ndarray
    mu_in_max: np.ndarray
    arrival_max: np.ndarray
    read_max: np.ndarray
    theta_min: np.ndarray
    B: float
    epsilon: float
    bound: float
    per_pair_epsilon: np.ndarray | None = None

    def row(self) -> dict:
        return {"B": self.B, "epsilon": self.epsilon, "bound": self.bound,
                "N": len(self.mu_out_max)}


def bound_constant(mu_out, mu_in, arrival_max, theta_min, read_max) -> float:
    """Per-network constant B of the backlog bound.

    Grouping: (mu_out)^2 + ((A + mu_in)/theta_min + r_max)^2 + 2 mu_out r_max,
    i.e. the three squared/cross terms of the one-slot drift expansion.
    """
    mu_out, mu_in, arrival_max, theta_min, read_max = map(
        np.asarray, (mu_out, mu_in, arrival_max, theta_min, read_max))
    terms = mu_out**2 + ((arrival_max + mu_in) / theta_min + read_max) ** 2 + 2 * mu_out * read_max
    return float(terms.sum() / (2 * len(np.atleast_1d(mu_out))))


def lyapunov_bound(graph: NetworkGraph, cat: ObjectCatalog, arrival_max, theta: np.ndarray,
                   epsilon) -> BoundReport:
    """Bound ``N B / eps`` on the long-run average total VIP backlog.

    ``arrival_max`` is per node (objects/slot summed over objects);
    ``epsilon`` may be a scalar or an (N, K) matrix whose minimum is used.
    """
    eps_arr = np.asarray(epsilon, dtype=np.float64)
    eps = float(eps_arr.min())
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    N = graph.num_nodes
    D = float(cat.object_bits)
    mu_out = np.zeros(N)
    mu_in = np.zeros(N)
    np.add.at(mu_out, graph.link_src, graph.link_cap / D)  # sum_b C_nb / D
    np.add.at(mu_in, graph.link_dst, graph.link_cap / D)  # sum_a C_an / D
    amax = np.broadcast_to(np.asarray(arrival_max, dtype=np.float64), (N,)).copy()
    rmax = cat.num_objects * graph.read_rate
    tmin = np.asarray(theta, dtype=np.float64).reshape(N, -1).min(axis=1)
    B = bound_constant(mu_out, mu_in, amax, tmin, rmax)
    return BoundReport(mu_out, mu_in, amax, rmax, tmin, B, eps, N * B / eps,
                       eps_arr if eps_arr.ndim else None)
