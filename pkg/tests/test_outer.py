import math

import numpy as np
import pytest

from conftest import make_case1_instance, make_sharing_toy, sharing_solution
from dual2.errors import ConfigError, DivergenceError
from dual2.gossip import MixingOperator, build_gossip, erdos_renyi_connected, ring_graph
from dual2.outer import (
    OuterConfig,
    beta_schedule,
    choose_rho,
    compute_case_params,
    convex_initial_levels,
    id2a,
    initial_error_levels,
    mid2a,
    rate_params_from_constants,
    resolve_mode,
)
from dual2.saddle import SubproblemSolution
from dual2.trace import Counters


# ---------------------------------------------------------------------------
# Rate parameters
# ---------------------------------------------------------------------------

def test_rate_params_case1_frozen_example():
    params = rate_params_from_constants(
        "hstar_strongly_convex", max_term=4.0, L_hstar_over_n=0.0,
        mu_hstar_over_n=1.0, min_term=0.0, lam_max=0.5, lam_min_nz=0.25, rho=0.0)
    assert params.L_H == pytest.approx(4.0)
    assert params.mu_H == pytest.approx(1.0)
    assert params.mu_F == pytest.approx(1.0 / 16.0)
    assert params.L_F == pytest.approx(0.5)
    assert params.kappa_F == pytest.approx(8.0)


def test_optimal_rho_gives_two_kappa_c():
    problem = make_case1_instance(n=4, p=2, seed=0)
    gossip = build_gossip(erdos_renyi_connected(4, 0.5, seed=1), "metropolis_half")
    mix = MixingOperator(gossip)
    rho = choose_rho(problem, mix, "optimal")
    params = compute_case_params(problem, mix, rho)
    assert params.kappa_F == pytest.approx(2.0 * gossip.kappa, rel=1e-12)


def test_optimal_rho_mid2a_kappa_at_most_eight():
    problem = make_case1_instance(n=8, p=2, seed=3)
    gossip = build_gossip(ring_graph(8), "metropolis_half")
    mix = MixingOperator(gossip, chebyshev=True)
    rho = choose_rho(problem, mix, "optimal")
    params = compute_case_params(problem, mix, rho)
    assert params.kappa_F <= 8.0 + 1e-9
    assert params.kappa_F == pytest.approx(2.0 * mix.kappa, rel=1e-12)


def test_case3_requires_positive_rho():
    with pytest.raises(ConfigError):
        rate_params_from_constants("global_full_row_rank", 1.0, 0.0, 0.0, 0.0,
                                   1.0, 0.5, rho=0.0)


def test_choose_rho_examples():
    problem = make_case1_instance(n=2, p=2, seed=1)
    gossip = build_gossip(ring_graph(2), "metropolis_half")
    mix = MixingOperator(gossip)
    # formula checks against hand arithmetic
    expected = (problem.max_term + problem.coupling.L_hstar / problem.n) / mix.lambda_max
    assert choose_rho(problem, mix, "optimal") == pytest.approx(expected)
    assert choose_rho(problem, mix, "zero") == 0.0
    assert choose_rho(problem, mix, 1.25) == 1.25
    with pytest.raises(ConfigError):
        choose_rho(problem, mix, -0.5)


def test_choose_rho_formula_arithmetic():
    # max term 4, L_h*/n = 0, lam_max = 0.5 -> 8; with L_h*/n = 2, lam_max = 2 -> 3
    assert (4.0 + 0.0) / 0.5 == pytest.approx(8.0)
    assert (4.0 + 2.0) / 2.0 == pytest.approx(3.0)


def test_beta_schedule():
    assert beta_schedule("strongly_convex", 4.0, 0) == pytest.approx(1.0 / 3.0)
    assert beta_schedule("strongly_convex", 1.0, 5) == pytest.approx(0.0)
    assert beta_schedule("convex", math.inf, 0) == pytest.approx(0.0)
    assert beta_schedule("convex", math.inf, 3) == pytest.approx(0.5)


def test_resolve_mode():
    assert resolve_mode("auto", "hstar_strongly_convex") == "strongly_convex"
    assert resolve_mode("auto", "general_convex") == "convex"
    with pytest.raises(ConfigError):
        resolve_mode("strongly_convex", "general_convex")


# ---------------------------------------------------------------------------
# Initial error levels
# ---------------------------------------------------------------------------

def _fake_warm(problem, lam, r_x, r_lam, mixed=None):
    return SubproblemSolution(x=np.zeros(problem.d), lam=lam, r_x=r_x,
                              r_lambda=r_lam, inner_iters=0, gossip_apps=0,
                              mixed_lam=mixed)


def test_initial_levels_exact_warm_hits_floor():
    problem = make_case1_instance(n=2, p=1, seed=2)
    gossip = build_gossip(ring_graph(2), "metropolis_half")
    mix = MixingOperator(gossip)
    params = compute_case_params(problem, mix, choose_rho(problem, mix, "optimal"))
    lam = np.ones((2, 1))  # consensual: M lam = 0
    warm = _fake_warm(problem, lam, 0.0, 0.0, mixed=gossip.C @ lam)
    e_x, e_l = initial_error_levels(problem, params, 0.9, warm, mix)
    assert e_l == pytest.approx(1e-30)
    assert e_x >= 1e-30


def test_initial_levels_without_mixed_value_use_norm_bound():
    # the rho = 0 path never communicates: the consensus energy is replaced
    # by the upper bound lam_max * ||lam||^2
    problem = make_case1_instance(n=2, p=1, seed=2)
    gossip = build_gossip(ring_graph(2), "metropolis_half")
    mix = MixingOperator(gossip)
    params = compute_case_params(problem, mix, choose_rho(problem, mix, "optimal"))
    lam = np.ones((2, 1))
    warm = _fake_warm(problem, lam, 0.0, 0.0)
    _, e_l_nomix = initial_error_levels(problem, params, 0.9, warm, mix)
    assert e_l_nomix > 1e-30  # strictly looser than the exact-consensus level


def test_initial_levels_ratio_and_formula():
    problem = make_case1_instance(n=2, p=1, seed=4)
    gossip = build_gossip(ring_graph(2), "metropolis_half")
    mix = MixingOperator(gossip)
    rho = choose_rho(problem, mix, "optimal")
    params = compute_case_params(problem, mix, rho)
    rng = np.random.default_rng(0)
    lam = rng.normal(size=(2, 1))
    warm = _fake_warm(problem, lam, 0.3, 0.7, mixed=gossip.C @ lam)
    theta = 1.0 - 1.0 / (2.0 * math.sqrt(params.kappa_F))
    e_x, e_l = initial_error_levels(problem, params, theta, warm, mix)
    assert e_x / e_l == pytest.approx(problem.sigma_max_A ** 2 / problem.mu_f ** 2)
    # literal formula recomputation
    mlam = gossip.C @ lam
    cons = float(np.sum(lam * mlam))
    resid = 0.7 + problem.sigma_max_A * 0.3 / problem.mu_f
    c_bound = (cons + mix.lambda_max / params.mu_H ** 2 * resid ** 2) / (2 * params.mu_F)
    want = (params.mu_F / mix.lambda_max) * (
        math.sqrt(theta) - math.sqrt(1 - 1 / math.sqrt(params.kappa_F))) ** 2 * c_bound
    assert e_l == pytest.approx(want, rel=1e-9)


def test_convex_initial_levels_positive():
    problem = make_case1_instance(n=2, p=1, seed=5)
    gossip = build_gossip(ring_graph(2), "metropolis_half")
    mix = MixingOperator(gossip)
    warm = _fake_warm(problem, np.zeros((2, 1)), 0.0, 0.0)
    eps1, ex1 = convex_initial_levels(problem, warm, mix)
    assert eps1 >= 1e-30 and ex1 >= 1e-30


# ---------------------------------------------------------------------------
# Drivers on the sharing toy (case 2, strongly convex mode)
# ---------------------------------------------------------------------------

def toy_setup(n=2, seed=0):
    rng = np.random.default_rng(seed)
    a_vals = rng.uniform(-2, 2, size=n)
    b = float(rng.uniform(0.5, 3.0))
    problem = make_sharing_toy(a_vals, b)
    x_star, lam_star = sharing_solution(a_vals, b)
    return problem, x_star, lam_star


def test_id2a_sharing_toy_converges():
    problem, x_star, _ = toy_setup(n=2)
    gossip = build_gossip(ring_graph(2), "metropolis_half")
    config = OuterConfig(rho_policy="optimal", max_outer=300, target_gap=1e-8,
                         x_star=x_star)
    x, trace = id2a(problem, gossip, config)
    assert np.linalg.norm(x - x_star) <= 1e-6
    assert len(trace) >= 1


def test_id2a_multiplier_consensus():
    problem, x_star, lam_star = toy_setup(n=4, seed=3)
    gossip = build_gossip(erdos_renyi_connected(4, 0.6, seed=2), "metropolis_half")
    config = OuterConfig(rho_policy="optimal", max_outer=400, target_gap=1e-9,
                         x_star=x_star)
    x, trace = id2a(problem, gossip, config)
    assert trace.rows[-1].consensus_res < 1e-6


def test_id2a_zero_iterations():
    problem, _, _ = toy_setup(n=2)
    gossip = build_gossip(ring_graph(2), "metropolis_half")
    config = OuterConfig(max_outer=0)
    x, trace = id2a(problem, gossip, config)
    assert np.array_equal(x, np.zeros(problem.d))
    assert len(trace) == 0


def test_mid2a_fallback_equals_id2a_bitwise():
    # kappa_C = 1 on the triangle-with-laplacian construction: MiD2A must
    # silently collapse to iD2A.
    problem, x_star, _ = toy_setup(n=3, seed=5)
    gossip = build_gossip(ring_graph(3), "laplacian", c=2.0)
    assert gossip.kappa == pytest.approx(1.0)
    config = OuterConfig(rho_policy="optimal", max_outer=40, x_star=x_star)
    x1, t1 = id2a(problem, gossip, config)
    x2, t2 = mid2a(problem, gossip, config)
    assert np.array_equal(x1, x2)
    assert t1.column("comm_rounds") == t2.column("comm_rounds")


def test_mid2a_same_solution_as_id2a():
    problem, x_star, _ = toy_setup(n=6, seed=7)
    gossip = build_gossip(ring_graph(6), "metropolis_half")
    config = OuterConfig(rho_policy="optimal", max_outer=400, target_gap=1e-8,
                         x_star=x_star)
    x1, _ = id2a(problem, gossip, config)
    x2, _ = mid2a(problem, gossip, config)
    assert np.linalg.norm(x1 - x2) <= 2e-6


def test_z_stays_in_mixing_range():
    problem, x_star, _ = toy_setup(n=4, seed=9)
    gossip = build_gossip(erdos_renyi_connected(4, 0.6, seed=4), "metropolis_half")
    config = OuterConfig(rho_policy="optimal", max_outer=50, x_star=x_star)
    _, trace = id2a(problem, gossip, config)
    for row in trace:
        mean = row.z.mean(axis=0)
        assert np.max(np.abs(mean)) < 1e-10


def test_comm_round_accounting_relation():
    problem, x_star, _ = toy_setup(n=4, seed=11)
    gossip = build_gossip(erdos_renyi_connected(4, 0.6, seed=6), "metropolis_half")
    for algo, policy in (("id2a", "zero"), ("id2a", "optimal"), ("mid2a", "optimal")):
        counters = Counters()
        config = OuterConfig(rho_policy=policy, max_outer=25, x_star=x_star)
        driver = id2a if algo == "id2a" else mid2a
        _, trace = driver(problem, gossip, config, counters=counters)
        k_eff = trace.meta["rounds_per_apply"]
        expected = trace.meta["bootstrap_comm_rounds"]
        for row in trace:
            expected += k_eff * (1 + row.gossip_apps)
        assert counters.comm_rounds == expected
        if policy == "zero":
            assert trace.meta["bootstrap_comm_rounds"] == 0
            for row in trace:
                assert row.gossip_apps == 0
            # the headline identity: communication = outer iterations, exactly
            assert counters.comm_rounds == len(trace)


def test_divergence_guard_wiring():
    problem, x_star, _ = toy_setup(n=2, seed=1)
    gossip = build_gossip(ring_graph(2), "metropolis_half")
    config = OuterConfig(rho_policy="optimal", max_outer=50, x_star=x_star,
                         divergence_factor=1e-12, divergence_patience=3)
    with pytest.raises(DivergenceError):
        id2a(problem, gossip, config)
