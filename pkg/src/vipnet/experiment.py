"""Experiment orchestration: lockstep virtual/actual runs, seed averaging, CSV output."""
from __future__ import annotations

import csv
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .aplane import MetricsLog, PacketWorld, PolicySpec
from .config import RunConfig, resolve_path
from .topology import BUILTIN_NAMES, builtin, load_topology
from .vplane import ThetaPolicy, VirtualPlane
from .workload import DemandModel, replay_trace

CSV_COLUMNS = ("topology", "policy", "theta_mode", "theta_value", "lambda", "seed_count",
               "mean_total_delay", "stddev", "mean_backlog", "cache_hit_rate")

BASELINES = {
    "LFU": ("shortest-path", "lfu"),
    "LCE-UNIF": ("shortest-path", "lce-unif"),
    "LCE-LRU": ("shortest-path", "lce-lru"),
    "LCD-LRU": ("shortest-path", "lcd-lru"),
    "LCE-BIAS": ("shortest-path", "lce-bias"),
    "POT-LCE-LRU": ("potential", "lce-lru"),
    "SP-NONE": ("shortest-path", "none"),
}


@dataclass(frozen=True)
class PolicyChoice:
    name: str
    spec: PolicySpec
    theta_mode: str = "constant"
    theta_value: float = 1.0


def resolve_policy(name: str, cfg: RunConfig) -> PolicyChoice:
    """Map a policy name to forwarding/caching and theta settings.

    ``VIP`` is the unscaled algorithm (theta = 1); ``NVIP`` takes theta from
    the config; ``NVIP-EMA`` and ``NVIP-<x>`` pin EMA or a constant ``x``;
    ``CUSTOM`` uses ``policy.forwarding`` / ``policy.caching``.
    """
    up = name.upper()
    vip = PolicySpec("vip", "vip")
    if up == "VIP":
        return PolicyChoice(name, vip, "constant", 1.0)
    if up == "NVIP":
        return PolicyChoice(name, vip, cfg.theta_mode, cfg.theta_value)
    if up == "NVIP-EMA":
        return PolicyChoice(name, vip, "ema", 1.0)
    if up.startswith("NVIP-"):
        try:
            return PolicyChoice(name, vip, "constant", float(up[5:]))
        except ValueError:
            pass
    if up in BASELINES:
        return PolicyChoice(name, PolicySpec(*BASELINES[up]))
    if up == "CUSTOM":
        spec = PolicySpec(cfg.forwarding or "shortest-path", cfg.caching or "lce-lru")
        return PolicyChoice(name, spec, cfg.theta_mode, cfg.theta_value)
    raise ValueError(f"unknown policy {name!r}")


def build_network(cfg: RunConfig, seed: int):
    tseed = seed if cfg.topology_seed is None else cfg.topology_seed
    canon = {x.lower() for x in BUILTIN_NAMES}
    if cfg.topology.lower() in canon:
        return builtin(cfg.topology, cfg.resolved_cache_bits(), cfg.objects, seed=tseed,
                       link_bits=cfg.link_bits, object_bits=cfg.object_bits,
                       chunk_bits=cfg.chunk_bits, interest_bits=cfg.interest_bits,
                       read_rate=cfg.r_default)
    return load_topology(resolve_path(cfg, cfg.topology), seed=tseed)


def run_cell(cfg: RunConfig, policy: str, rate: float, seed: int,
             event_log: list | None = None) -> MetricsLog:
    """One (policy, lambda, seed) run. Deterministic in its arguments."""
    choice = resolve_policy(policy, cfg)
    graph, cat = build_network(cfg, seed)
    if cfg.trace:
        demand = replay_trace(resolve_path(cfg, cfg.trace), graph.num_nodes, cat.num_objects)
    else:
        demand = DemandModel(cat.num_objects, cat.requesters, rate, cfg.zipf,
                             seed=seed + 7919, truncate=cfg.truncate)
    world = PacketWorld(graph, cat, choice.spec, seed=seed, pit_collapse=cfg.pit_collapse,
                        bias_exponent=cfg.zipf, event_log=event_log)
    plane = None
    if choice.spec.needs_vip:
        theta = ThetaPolicy(choice.theta_mode, choice.theta_value, cfg.theta_beta, cfg.theta_initial)
        plane = VirtualPlane(graph, cat, theta)
        alpha = 1.0 / cfg.window
        nu = np.zeros((graph.num_links, cat.num_objects))
        score = np.zeros((graph.num_nodes, cat.num_objects))
        world.vip_rates, world.vip_scores = nu, score
    for _ in range(cfg.horizon):
        arrivals = demand.sample()
        if plane is not None:
            world.metrics.backlog.append(float(plane.state.V.sum()))
            decision = plane.decide()
            sent, inflow = plane.advance(decision, arrivals)
            nu *= 1.0 - alpha
            act = np.flatnonzero(decision.kstar >= 0)
            nu[act, decision.kstar[act]] += alpha * sent[act]
            score *= 1.0 - alpha
            score += alpha * (plane.state.V if cfg.score == "count" else arrivals + inflow)
        world.step_actual(arrivals)
    return world.close()


def _cell_job(args):
    cfg, policy, rate, seed = args
    return (policy, rate, seed), run_cell(cfg, policy, rate, seed)


def worker_count() -> int:
    cap = int(os.environ.get("VIPNET_THREADS", "0") or 0)
    n = os.cpu_count() or 1
    return max(1, min(cap, n) if cap > 0 else n)


def run_experiment(cfg: RunConfig, workers: int | None = None, progress=None) -> dict:
    """Run every (policy, lambda, seed) cell. Returns ``{(policy, lambda, seed): MetricsLog}``."""
    jobs = [(cfg, p, lam, s) for p in cfg.policies for lam in cfg.lambdas for s in cfg.seeds]
    for p in cfg.policies:
        resolve_policy(p, cfg)
    workers = worker_count() if workers is None else workers
    results = {}
    if workers <= 1 or len(jobs) <= 1:
        for job in jobs:
            key, log = _cell_job(job)
            results[key] = log
            if progress:
                progress(key, log)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, log in pool.map(_cell_job, jobs):
                results[key] = log
                if progress:
                    progress(key, log)
    return {k: results[k] for k in sorted(results, key=lambda x: (x[0], x[1], x[2]))}


@dataclass
class SummaryRow:
    topology: str
    policy: str
    theta_mode: str
    theta_value: float
    rate: float
    seed_count: int
    mean_total_delay: float
    stddev: float
    mean_backlog: float
    cache_hit_rate: float

    def as_csv(self) -> list:
        return [self.topology, self.policy, self.theta_mode, repr(float(self.theta_value)),
                repr(float(self.rate)), self.seed_count, repr(float(self.mean_total_delay)),
                repr(float(self.stddev)), repr(float(self.mean_backlog)),
                repr(float(self.cache_hit_rate))]


def mean_std(values) -> tuple[float, float]:
    """Mean and sample (n-1) standard deviation; zero spread for one value."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("no values")
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return statistics.fmean(values), sd


def aggregate(logs: dict, cfg: RunConfig | None = None, topology: str | None = None) -> list[SummaryRow]:
    """Per (lambda, policy) mean/stddev of total delay over seeds."""
    groups: dict[tuple[str, float], list[MetricsLog]] = {}
    for (policy, rate, _seed), log in logs.items():
        groups.setdefault((policy, float(rate)), []).append(log)
    sizes = {len(v) for v in groups.values()}
    if len(sizes) > 1:
        raise ValueError("logs do not share a config shape (uneven seed counts)")
    rows = []
    topo = topology or (cfg.topology if cfg else "")
    for (policy, rate) in sorted(groups, key=lambda x: (x[1], x[0])):
        group = groups[(policy, rate)]
        mean, sd = mean_std(g.total_delay for g in group)
        if cfg is not None:
            choice = resolve_policy(policy, cfg)
            mode, val = choice.theta_mode, choice.theta_value
        else:
            mode, val = "", 1.0
        rows.append(SummaryRow(
            topo, policy, mode, val, rate, len(group), mean, sd,
            statistics.fmean(g.mean_backlog for g in group),
            statistics.fmean(g.cache_hit_rate for g in group),
        ))
    return rows


def improvement(reference: float, candidate: float) -> float:
    """Relative delay reduction of ``candidate`` vs ``reference``, percent."""
    if reference == 0:
        return 0.0
    return 100.0 * (reference - candidate) / reference


def improvements(rows: list[SummaryRow], reference: str = "VIP") -> dict:
    """``{(policy, lambda): percent}`` improvement over ``reference`` at each lambda."""
    ref = {r.rate: r.mean_total_delay for r in rows if r.policy == reference}
    return {(r.policy, r.rate): improvement(ref[r.rate], r.mean_total_delay)
            for r in rows if r.rate in ref and r.policy != reference}


def emit_csv(rows: list[SummaryRow], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow(r.as_csv())


def read_csv(path) -> list[SummaryRow]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError("unexpected CSV header")
        return [SummaryRow(r[0], r[1], r[2], float(r[3]), float(r[4]), int(r[5]),
                           float(r[6]), float(r[7]), float(r[8]), float(r[9])) for r in reader]


def load_monotonicity(rows: list[SummaryRow]) -> list[tuple[str, float, float]]:
    """Flag (policy, lambda_lo, lambda_hi) where mean delay drops by more than a pooled stddev."""
    flags = []
    by_policy: dict[str, list[SummaryRow]] = {}
    for r in rows:
        by_policy.setdefault(r.policy, []).append(r)
    for policy, rs in by_policy.items():
        rs.sort(key=lambda r: r.rate)
        for a, b in zip(rs, rs[1:]):
            pooled = float(np.sqrt((a.stddev**2 + b.stddev**2) / 2))
            if b.mean_total_delay < a.mean_total_delay - pooled:
                flags.append((policy, a.rate, b.rate))
    return flags
