"""Per-slot virtual-plane kernels.

Each kernel exists twice: a numba ``@njit`` loop version and a vectorized
numpy version. ``VIPNET_BACKEND=numpy`` (or a missing numba) selects the
numpy path; both must produce bit-identical results.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

BACKEND = os.environ.get("VIPNET_BACKEND", "numba").lower()
if BACKEND not in ("numba", "numpy"):
    raise ImportError(f"VIPNET_BACKEND must be 'numba' or 'numpy', got {BACKEND!r}")
if numba is None:
    BACKEND = "numpy"


# ---------------------------------------------------------------- numpy path

def forward_numpy(V, theta, link_src, link_dst, allowed, link_rate):
    """Max-backpressure object per link. Returns (kstar, rate), -1/0 when idle."""
    W = V[link_src] - V[link_dst] / theta[link_dst]
    W = np.where(allowed, W, -np.inf)
    kstar = np.argmax(W, axis=1)
    best = W[np.arange(len(kstar)), kstar]
    active = best > 0
    return np.where(active, kstar, -1), np.where(active, link_rate, 0.0)


def cache_numpy(V, slots):
    """Top ``slots[n]`` objects of each row of V; ties to the smallest index."""
    N, K = V.shape
    s = np.zeros((N, K), dtype=np.bool_)
    for n in range(N):
        m = int(slots[n])
        if m <= 0:
            continue
        if m >= K:
            s[n] = True
            continue
        row = V[n]
        thr = np.partition(row, K - m)[K - m]
        above = row > thr
        s[n] = above
        need = m - int(above.sum())
        if need > 0:
            s[n, np.flatnonzero(row == thr)[:need]] = True
    return s


def step_numpy(V, theta, kstar, rate, arrivals, cached, read_rate, link_src, link_dst, source):
    """One slot of scaled VIP dynamics.

    Returns ``(V_next, sent, inflow)``: ``sent[l]`` is what link ``l`` actually
    carried (allocation capped by the sender's backlog, split across a
    sender's links in ascending link order) and ``inflow`` the per-(node,
    object) total received.
    """
    N, K = V.shape
    out = np.zeros((N, K))
    sent = np.zeros(len(kstar))
    remaining = V.copy()
    for l in np.flatnonzero(kstar >= 0):
        a, k = link_src[l], kstar[l]
        out[a, k] += rate[l]
        take = min(rate[l], remaining[a, k])
        remaining[a, k] -= take
        sent[l] = take
    inflow = np.zeros((N, K))
    act = np.flatnonzero(kstar >= 0)
    np.add.at(inflow, (link_dst[act], kstar[act]), sent[act])
    resid = np.maximum(V - out, 0.0)
    Vn = resid + (arrivals + inflow) / theta - read_rate[:, None] * cached
    Vn = np.maximum(Vn, 0.0)
    Vn[source, np.arange(K)] = 0.0
    return Vn, sent, inflow


# ---------------------------------------------------------------- numba path

if numba is not None:

    @numba.njit(cache=True)
    def forward_numba(V, theta, link_src, link_dst, allowed, link_rate):
        L = link_src.shape[0]
        K = V.shape[1]
        kstar = np.full(L, -1, dtype=np.int64)
        rate = np.zeros(L)
        for l in range(L):
            a = link_src[l]
            b = link_dst[l]
            best = -np.inf
            bk = -1
            for k in range(K):
                if not allowed[l, k]:
                    continue
                w = V[a, k] - V[b, k] / theta[b, k]
                if w > best:
                    best = w
                    bk = k
            if bk >= 0 and best > 0:
                kstar[l] = bk
                rate[l] = link_rate[l]
        return kstar, rate

    @numba.njit(cache=True)
    def cache_numba(V, slots):
        N, K = V.shape
        s = np.zeros((N, K), dtype=np.bool_)
        for n in range(N):
            m = slots[n]
            if m <= 0:
                continue
            if m >= K:
                s[n, :] = True
                continue
            order = np.argsort(-V[n], kind="mergesort")
            for i in range(m):
                s[n, order[i]] = True
        return s

    @numba.njit(cache=True)
    def step_numba(V, theta, kstar, rate, arrivals, cached, read_rate, link_src, link_dst, source):
        N, K = V.shape
        L = kstar.shape[0]
        out = np.zeros((N, K))
        sent = np.zeros(L)
        remaining = V.copy()
        for l in range(L):
            k = kstar[l]
            if k < 0:
                continue
            a = link_src[l]
            out[a, k] += rate[l]
            take = min(rate[l], remaining[a, k])
            remaining[a, k] -= take
            sent[l] = take
        inflow = np.zeros((N, K))
        for l in range(L):
            k = kstar[l]
            if k >= 0:
                inflow[link_dst[l], k] += sent[l]
        Vn = np.empty((N, K))
        for n in range(N):
            for k in range(K):
                r = V[n, k] - out[n, k]
                if r < 0.0:
                    r = 0.0
                x = r + (arrivals[n, k] + inflow[n, k]) / theta[n, k] - read_rate[n] * cached[n, k]
                Vn[n, k] = x if x > 0.0 else 0.0
        for k in range(K):
            Vn[source[k], k] = 0.0
        return Vn, sent, inflow

else:  # pragma: no cover
    forward_numba = cache_numba = step_numba = None


def _pick(name):
    return globals()[f"{name}_{BACKEND}"]


forward = _pick("forward")
cache = _pick("cache")
step = _pick("step")
