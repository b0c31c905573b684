import math

import numpy as np
import pytest

from vipnet.stability import (
    EnumerationError, StabilityInstance, bound_constant, build_randomized_policy,
    check_feasibility, count_caching_sets, enumerate_caching_sets, lyapunov_bound,
    max_load_scaling,
)
from vipnet.topology import make_catalog, make_graph
from vipnet.vplane import ThetaPolicy, run_virtual

from conftest import plain, random_instance, small_network
from oracles import certificate_gap, region_lp


def test_enumeration_examples():
    g, c = small_network([(1, 2)], 2, 3, [2, 2, 2], slots=1)
    sets = enumerate_caching_sets(c, g, 0)
    assert [s.objects for s in sets] == [(), (0,), (1,), (2,)]
    g, c = small_network([(1, 2)], 2, 4, [2] * 4, slots=2)
    assert len(enumerate_caching_sets(c, g, 0)) == 11 == count_caching_sets(4, 2)
    g, c = small_network([(1, 2)], 2, 4, [2] * 4, slots=0)
    assert [s.objects for s in enumerate_caching_sets(c, g, 0)] == [()]


def test_enumeration_cap():
    g, c = small_network([(1, 2)], 2, 30, [2] * 30, slots=10)
    with pytest.raises(EnumerationError):
        enumerate_caching_sets(c, g, 0, cap=1000)


def test_two_node_examples(two_node):
    g, c = two_node
    def inst(lam, th=1.0):
        return StabilityInstance(g, c, np.array([[lam], [0.0]]), th)
    assert check_feasibility(inst(1.5))
    assert not check_feasibility(inst(2.5))
    assert check_feasibility(inst(3.0, th=np.array([[2.0], [1.0]])))
    assert max_load_scaling(inst(1.0)) == pytest.approx(2.0, abs=1e-4)


def test_zero_rates_feasible_with_empty_cache(two_node):
    g, c = small_network([(1, 2)], 2, 2, [2, 2], slots=1)
    res = check_feasibility(StabilityInstance(g, c, np.zeros((2, 2)), 1.0))
    assert res
    assert not res.solution.flows.any()


def test_rho_scaling_and_theta_monotone():
    g, c = small_network([(1, 2), (2, 3), (3, 4)], 4, 2, [4, 1], cap_objects=1.0, slots=1)
    rates = np.array([[0.3, 0.0], [0.2, 0.1], [0.1, 0.2], [0.0, 0.3]])
    rho = max_load_scaling(StabilityInstance(g, c, rates, 1.0))
    g2, c2 = small_network([(1, 2), (2, 3), (3, 4)], 4, 2, [4, 1], cap_objects=2.0, slots=1)
    g2.read_rate[:] = 2.0
    assert max_load_scaling(StabilityInstance(g2, c2, rates, 1.0)) == pytest.approx(2 * rho, rel=1e-7)
    assert max_load_scaling(StabilityInstance(g, c, rates, 2.0)) >= rho - 1e-9


def test_certificates_and_unscaled_reference():
    rng = np.random.default_rng(5)
    for _ in range(25):
        g, c, rates, theta = random_instance(rng)
        p = plain(g, c)
        for th in (np.ones_like(theta), theta):
            res = check_feasibility(StabilityInstance(g, c, rates, th))
            ok, _, _ = region_lp(rates=rates.tolist(), theta=th.tolist(), **p)
            assert bool(res) == ok
            if res:
                sol = res.solution
                gap = certificate_gap(
                    p["N"], p["K"], p["links"], p["cap_of"], p["obj_bits"], p["read_rate"],
                    p["source"], p["allowed"], rates.tolist(), th.tolist(), sol.flows.tolist(),
                    [[s.objects for s in sets] for sets in sol.sets], [b.tolist() for b in sol.beta])
                assert gap <= 1e-9


def test_bound_examples():
    assert bound_constant([2.0], [2.0], [1.0], [1.0], [1.0]) == 12.0
    big = bound_constant([2.0], [2.0], [1.0], [1e12], [1.0])
    assert big == pytest.approx(0.5 * (4 + 1 + 4))
    assert bound_constant([0.0], [0.0], [0.0], [1.0], [0.0]) == 0.0
    g = make_graph({(1, 2): 80, (2, 1): 80}, 2, read_rate=0.0)
    c = make_catalog(g, 1, 40, 40, sources={1: 2})
    with pytest.raises(ValueError):
        lyapunov_bound(g, c, [1.0, 0.0], np.ones((2, 1)), 0.0)
    rep = lyapunov_bound(g, c, [1.0, 0.0], np.ones((2, 1)), np.array([[0.5], [2.0]]))
    assert rep.epsilon == 0.5 and rep.bound == 2 * rep.B / 0.5
    assert (rep.mu_out_max == 2.0).all() and (rep.mu_in_max == 2.0).all()


def test_randomized_policy_degenerate_cases(two_node):
    g, c = small_network([(1, 2)], 2, 2, [2, 2], cap_objects=4.0, slots=1)
    res = check_feasibility(StabilityInstance(g, c, np.array([[0.0, 0.0], [0.0, 0.0]]), 1.0))
    pol = build_randomized_policy(res.solution, seed=1)
    assert not pol.sample_forwarding().any()
    for _ in range(5):
        s = pol.sample_caching(2)
        assert np.array_equal(s, pol.sample_caching(2))


def test_two_node_dynamics_within_bound(two_node):
    g, c = two_node
    lam = 1.5
    inst = StabilityInstance(g, c, np.array([[lam], [0.0]]), 1.0)
    eps = 0.5
    assert check_feasibility(inst, slack=eps)

    class Fixed:
        rng = np.random.default_rng(3)

        def sample(self):
            return np.array([[min(self.rng.poisson(lam), 4)], [0]])

    run = run_virtual(g, c, Fixed(), ThetaPolicy(), 100_000)
    rep = lyapunov_bound(g, c, [4.0, 0.0], np.ones((2, 1)), eps)
    assert run.backlog.mean() <= rep.bound
    assert math.isfinite(rep.bound)
