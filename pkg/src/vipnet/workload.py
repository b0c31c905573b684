"""Request arrivals: Zipf popularity, Poisson per-slot counts, trace replay."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TraceError(ValueError):
    pass


def zipf_pmf(num_objects: int, exponent: float) -> np.ndarray:
    """Normalized Zipf probabilities ``p_k ~ k**-s`` for ``k = 1..K``."""
    if num_objects < 1:
        raise ValueError("zipf_pmf needs at least one object")
    if exponent < 0:
        raise ValueError("Zipf exponent must be nonnegative")
    w = np.arange(1, num_objects + 1, dtype=np.float64) ** -float(exponent)
    return w / w.sum()


@dataclass
class DemandModel:
    """Poisson object requests at requester nodes.

    ``rate`` is the overall requests/node/slot; node ``n`` requests object
    ``k`` at mean ``rate * p_k``. ``arrival_cap`` (per node, objects/slot)
    feeds the backlog bound and, when ``truncate`` is set, clips samples.
    """

    num_objects: int
    requesters: np.ndarray  # (N,) bool
    rate: float
    zipf_exponent: float = 0.75
    seed: int = 0
    arrival_cap: float | None = None
    truncate: bool = False
    pmf: np.ndarray = field(init=False, repr=False)
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("arrival rate must be nonnegative")
        self.requesters = np.asarray(self.requesters, dtype=bool)
        self.pmf = zipf_pmf(self.num_objects, self.zipf_exponent)
        self.rng = np.random.default_rng(self.seed)
        if self.arrival_cap is None:
            self.arrival_cap = default_arrival_cap(self.rate)
        if self.arrival_cap < 0:
            raise ValueError("arrival cap must be nonnegative")

    @property
    def num_nodes(self) -> int:
        return len(self.requesters)

    def rates(self) -> np.ndarray:
        """Mean arrivals per slot as an (N, K) matrix."""
        return np.outer(self.requesters.astype(np.float64), self.pmf) * self.rate

    def clone(self, seed: int) -> DemandModel:
        return DemandModel(
            self.num_objects, self.requesters.copy(), self.rate, self.zipf_exponent,
            seed, self.arrival_cap, self.truncate,
        )

    def sample(self) -> np.ndarray:
        """Draw one slot of arrivals, an (N, K) int64 matrix."""
        out = np.zeros((self.num_nodes, self.num_objects), dtype=np.int64)
        if self.rate == 0:
            return out
        rows = np.flatnonzero(self.requesters)
        out[rows] = self.rng.poisson(self.rate * self.pmf, size=(len(rows), self.num_objects))
        if self.truncate:
            _truncate_rows(out, self.arrival_cap)
        return out


def default_arrival_cap(rate: float) -> float:
    """Per-node cap: ceiling of the mean plus six standard deviations."""
    return float(math.ceil(rate + 6.0 * math.sqrt(rate)))


def _truncate_rows(counts: np.ndarray, cap: float) -> None:
    # keep the per-node total at or below cap, trimming from the least popular end
    cap = int(cap)
    for n in np.flatnonzero(counts.sum(axis=1) > cap):
        row = counts[n]
        excess = int(row.sum()) - cap
        for k in range(len(row) - 1, -1, -1):
            take = min(excess, int(row[k]))
            row[k] -= take
            excess -= take
            if excess == 0:
                break


def sample_arrivals(model: DemandModel, slot: int | None = None) -> np.ndarray:
    """Arrival counts for one slot; successive calls give i.i.d. slots."""
    return model.sample()


class TraceReplay:
    """Arrivals read back from a ``t n k count`` trace; missing slots are zero."""

    def __init__(self, rows: dict[int, list[tuple[int, int, int]]], num_nodes: int, num_objects: int):
        self.rows = rows
        self.num_nodes = num_nodes
        self.num_objects = num_objects
        self.slot = 0

    @property
    def last_slot(self) -> int:
        return max(self.rows, default=-1)

    def batch(self, t: int) -> np.ndarray:
        out = np.zeros((self.num_nodes, self.num_objects), dtype=np.int64)
        for n, k, c in self.rows.get(t, ()):
            out[n - 1, k - 1] += c
        return out

    def sample(self) -> np.ndarray:
        out = self.batch(self.slot)
        self.slot += 1
        return out


def replay_trace(path, num_nodes: int, num_objects: int) -> TraceReplay:
    rows: dict[int, list[tuple[int, int, int]]] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise TraceError(f"line {lineno}: expected 't n k count'")
        try:
            t, n, k, c = (int(x) for x in parts)
        except ValueError:
            raise TraceError(f"line {lineno}: non-integer field") from None
        if t < 0 or c < 0:
            raise TraceError(f"line {lineno}: negative slot or count")
        if not 1 <= n <= num_nodes:
            raise TraceError(f"line {lineno}: node {n} out of range")
        if not 1 <= k <= num_objects:
            raise TraceError(f"line {lineno}: object {k} out of range")
        rows.setdefault(t, []).append((n, k, c))
    return TraceReplay(rows, num_nodes, num_objects)


def write_trace(path, batches) -> None:
    """Dump a sequence of (N, K) arrival matrices, slot ``t`` = position."""
    with open(path, "w") as f:
        for t, batch in enumerate(batches):
            for n, k in zip(*np.nonzero(batch)):
                f.write(f"{t} {n + 1} {k + 1} {int(batch[n, k])}\n")
