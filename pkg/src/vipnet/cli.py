"""Command-line entry point: ``vipnet {run,sweep,stability,validate}``."""
from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import experiment
from .config import ConfigError, RunConfig, load_config, parse_override
from .stability import (
    EnumerationError, SolverFailure, StabilityInstance, check_feasibility, lyapunov_bound,
    max_load_scaling,
)
from .topology import TopologyError
from .workload import TraceError, zipf_pmf

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vipnet", description="VIP/NVIP network simulator and stability analyzer")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name, text in (
        ("run", "run every (policy, lambda, seed) cell and write summary.csv"),
        ("sweep", "like run, plus improvement table and load-monotonicity flags"),
        ("stability", "decide feasibility, max load scaling and the backlog bound"),
        ("validate", "load topology and config and print the invariant report"),
    ):
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--out", help="output directory (overrides 'out')")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, repeatable")
        sp.add_argument("--seeds", help="seed list, e.g. 0,1,2 or 0-9")
        sp.add_argument("--quiet", action="store_true", help="suppress progress output")
    return p


def _load(args) -> RunConfig:
    overrides = dict(parse_override(s) for s in args.set)
    if args.out:
        overrides["out"] = args.out
    if args.seeds:
        overrides["seeds"] = args.seeds
    if args.config and not Path(args.config).is_file():
        raise ConfigError(f"config file not found: {args.config}")
    return load_config(args.config, overrides)


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


# ---------------------------------------------------------------- subcommands
def cmd_validate(cfg: RunConfig, args) -> int:
    graph, cat = experiment.build_network(cfg, cfg.seeds[0] if cfg.seeds else 0)
    slots = cat.cache_slots(graph)
    print(f"topology      {cfg.topology}")
    print(f"nodes         {graph.num_nodes}")
    print(f"links         {graph.num_links} (directed, every reverse link present)")
    print(f"connected     {graph.is_connected()}")
    print(f"objects       {cat.num_objects} x {cat.object_bits} bits, "
          f"{cat.chunks_per_object} chunks of {cat.chunk_bits} bits")
    print(f"requesters    {int(np.count_nonzero(cat.requesters))}")
    print(f"cache slots   min {int(slots.min())} max {int(slots.max())}")
    print(f"link objects/slot  min {graph.link_cap.min() / cat.object_bits:.4g} "
          f"max {graph.link_cap.max() / cat.object_bits:.4g}")
    print(f"policies      {' '.join(cfg.policies)}")
    print(f"lambda        {' '.join(repr(x) for x in cfg.lambdas)}")
    print(f"seeds         {len(cfg.seeds)}  horizon {cfg.horizon}")
    problems = []
    if not graph.is_connected():
        problems.append("graph is not connected")
    for p in cfg.policies:
        try:
            experiment.resolve_policy(p, cfg)
        except ValueError as exc:
            problems.append(str(exc))
    for p in problems:
        print(f"problem       {p}")
    print("status        " + ("OK" if not problems else "INVALID"))
    if problems:
        raise ConfigError("; ".join(problems))
    return EXIT_OK


def _progress(args):
    start = time.perf_counter()

    def report(key, log):
        policy, rate, seed = key
        _say(args, f"[{time.perf_counter() - start:7.1f}s] {policy} lambda={rate!r} seed={seed} "
                   f"total_delay={log.total_delay}")
    return report


def cmd_run(cfg: RunConfig, args, sweep: bool = False) -> int:
    for p in cfg.policies:
        experiment.resolve_policy(p, cfg)
    out = Path(cfg.out)
    if not out.is_absolute():
        out = Path.cwd() / out
    out.mkdir(parents=True, exist_ok=True)
    logs = experiment.run_experiment(cfg, progress=_progress(args))
    rows = experiment.aggregate(logs, cfg)
    experiment.emit_csv(rows, out / "summary.csv")
    _say(args, f"wrote {out / 'summary.csv'} ({len(rows)} rows)")
    if sweep:
        gains = experiment.improvements(rows)
        with open(out / "improvements.csv", "w") as f:
            f.write("policy,lambda,improvement_vs_VIP_percent\n")
            for (policy, rate), pct in sorted(gains.items(), key=lambda x: (x[0][1], x[0][0])):
                f.write(f"{policy},{rate!r},{pct!r}\n")
        for policy, lo, hi in experiment.load_monotonicity(rows):
            _say(args, f"flag: {policy} delay drops from lambda={lo!r} to lambda={hi!r}")
        _say(args, f"wrote {out / 'improvements.csv'}")
    return EXIT_OK


def _stability_rates(cfg: RunConfig, graph, cat) -> np.ndarray:
    N, K = graph.num_nodes, cat.num_objects
    rates = np.zeros((N, K))
    if cfg.stability_rates:
        for item in cfg.stability_rates.replace(",", " ").split():
            try:
                n, k, r = item.split(":")
                n, k, r = int(n), int(k), float(r)
            except ValueError:
                raise ConfigError(f"stability.rates entry {item!r} is not n:k:rate") from None
            if not (1 <= n <= N and 1 <= k <= K) or r < 0:
                raise ConfigError(f"stability.rates entry {item!r} out of range")
            rates[n - 1, k - 1] = r
        return rates
    lam = cfg.lambdas[0] if cfg.lambdas else 0.0
    rates[cat.requesters] = lam * zipf_pmf(K, cfg.zipf)
    return rates


def cmd_stability(cfg: RunConfig, args) -> int:
    graph, cat = experiment.build_network(cfg, cfg.seeds[0] if cfg.seeds else 0)
    rates = _stability_rates(cfg, graph, cat)
    inst = StabilityInstance(graph, cat, rates, cfg.theta_value)
    res = check_feasibility(inst, cfg.stability_slack)
    rho = max_load_scaling(inst) if (rates > 0).any() else math.inf
    print("Feasible" if res else "Infeasible")
    print(f"rho*          {rho!r}")
    if res:
        sol = res.solution
        used = int((sol.flows > 1e-12).sum())
        print(f"certificate   {used} positive flows, max violation {sol.max_violation:.3e}")
    else:
        print("certificate   none")
    eps = _interior_margin(inst, rho, cfg.stability_slack)
    bound = None
    if eps > 0:
        amax = rates.sum(axis=1)
        theta = np.broadcast_to(inst.theta, rates.shape)
        bound = lyapunov_bound(graph, cat, amax, theta, eps)
        print(f"bound         B={bound.B!r} epsilon={bound.epsilon!r} N*B/epsilon={bound.bound!r}")
    else:
        print("bound         n/a (no strict interior margin)")
    fields = {
        "feasible": int(bool(res)),
        "rho_star": rho,
        "max_violation": res.solution.max_violation if res else float("nan"),
        "B": bound.B if bound else float("nan"),
        "epsilon": bound.epsilon if bound else float("nan"),
        "bound": bound.bound if bound else float("nan"),
    }
    print("ROW " + ",".join(f"{k}={v!r}" for k, v in fields.items()))
    return EXIT_OK


def _interior_margin(inst: StabilityInstance, rho: float, slack: float) -> float:
    """A slack eps > 0 with rates + eps feasible, or 0 if none is found."""
    if slack > 0:
        return slack if check_feasibility(inst, slack) else 0.0
    positive = inst.rates[inst.rates > 0]
    if not positive.size or rho <= 1:
        return 0.0
    eps = (min(rho, 2.0) - 1.0) * float(positive.min())
    for _ in range(30):
        if check_feasibility(inst, eps):
            return eps
        eps /= 2
    return 0.0


COMMANDS = {
    "run": cmd_run,
    "sweep": lambda cfg, args: cmd_run(cfg, args, sweep=True),
    "stability": cmd_stability,
    "validate": cmd_validate,
}


def parse_and_dispatch(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required (run, sweep, stability, validate)")
    except UsageError as exc:
        print(f"ERROR {EXIT_USAGE}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _load(args)
    except (ConfigError, TopologyError, TraceError, ValueError) as exc:
        print(f"ERROR {EXIT_VALIDATION}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, TopologyError, TraceError) as exc:
        print(f"ERROR {EXIT_VALIDATION}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverFailure, EnumerationError, OSError, ValueError, RuntimeError) as exc:
        print(f"ERROR {EXIT_RUNTIME}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
