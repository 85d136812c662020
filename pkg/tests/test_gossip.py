import math
from types import SimpleNamespace

import numpy as np
import pytest

from dual2.errors import ConfigError, DisconnectedGraphError, DomainError
from dual2.gossip import (
    Graph,
    MixingOperator,
    accelerated_gossip,
    apply_gossip_block,
    build_gossip,
    chebyshev_eig_bounds,
    dense_polynomial_matrix,
    erdos_renyi_connected,
    load_graph,
    path_graph,
    ring_graph,
    save_graph,
    spectral_info,
)

RNG = np.random.default_rng(99)


def counters():
    return SimpleNamespace(comm_rounds=0)


def chebyshev_T(k, y):
    """Independent closed-form Chebyshev polynomial via cos/cosh."""
    if abs(y) <= 1.0:
        return math.cos(k * math.acos(y))
    s = 1.0 if y > 0 else (-1.0) ** k
    return s * math.cosh(k * math.acosh(abs(y)))


def poly_oracle(lam, kappa, lam_max, K):
    c2 = (kappa + 1.0) / (kappa - 1.0)
    c3 = 2.0 / ((1.0 + 1.0 / kappa) * lam_max)
    return 1.0 - chebyshev_T(K, c2 * (1.0 - c3 * lam)) / chebyshev_T(K, c2)


# ---------------------------------------------------------------------------
# Graphs
# ---------------------------------------------------------------------------

def test_er_two_nodes_full_prob():
    g = erdos_renyi_connected(2, 1.0, seed=3)
    assert g.edges == ((0, 1),)


def test_er_connected_and_deterministic():
    g1 = erdos_renyi_connected(8, 0.1, seed=0)
    g2 = erdos_renyi_connected(8, 0.1, seed=0)
    assert g1.edges == g2.edges
    assert g1.is_connected()
    assert len(g1.edges) >= 7


def test_er_rejects_bad_args():
    with pytest.raises(DomainError):
        erdos_renyi_connected(1, 0.5, seed=0)
    with pytest.raises(DomainError):
        erdos_renyi_connected(4, 0.0, seed=0)


def test_graph_file_roundtrip(tmp_path):
    g = erdos_renyi_connected(10, 0.3, seed=5)
    path = tmp_path / "graph.txt"
    save_graph(g, path)
    assert load_graph(path) == g


# ---------------------------------------------------------------------------
# Gossip construction and spectra
# ---------------------------------------------------------------------------

def test_metropolis_two_node_exact():
    op = build_gossip(path_graph(2), "metropolis_half")
    assert np.allclose(op.C, np.array([[0.125, -0.125], [-0.125, 0.125]]), atol=1e-15)


def test_triangle_laplacian_spectrum():
    op = build_gossip(ring_graph(3), "laplacian", c=2.0)
    eigs = np.sort(np.linalg.eigvalsh(op.C))
    assert np.allclose(eigs, [0.0, 1.5, 1.5], atol=1e-12)
    assert op.kappa == pytest.approx(1.0)


def test_gossip_nullspace_ones():
    for graph in (ring_graph(6), erdos_renyi_connected(9, 0.4, seed=2)):
        for method in ("metropolis_half", "laplacian"):
            op = build_gossip(graph, method)
            assert np.max(np.abs(op.C @ np.ones(graph.n))) < 1e-12


def test_spectral_info_examples():
    lam_max, lam_min, kappa = spectral_info(np.array([[0.25, -0.25], [-0.25, 0.25]]))
    assert (lam_max, lam_min, kappa) == pytest.approx((0.5, 0.5, 1.0))
    n = 5
    C = 0.5 * np.eye(n) - 0.5 * np.ones((n, n)) / n
    assert spectral_info(C)[2] == pytest.approx(1.0)
    op = build_gossip(path_graph(3), "laplacian", c=2.0)
    assert np.allclose(np.sort(np.linalg.eigvalsh(op.C)), [0.0, 0.5, 1.5], atol=1e-12)
    assert op.kappa == pytest.approx(3.0)


def test_spectral_info_disconnected():
    C = np.zeros((4, 4))
    C[:2, :2] = [[0.25, -0.25], [-0.25, 0.25]]
    C[2:, 2:] = [[0.25, -0.25], [-0.25, 0.25]]
    with pytest.raises(DisconnectedGraphError):
        spectral_info(C)


# ---------------------------------------------------------------------------
# apply_gossip_block
# ---------------------------------------------------------------------------

def test_apply_consensus_is_zero():
    op = build_gossip(erdos_renyi_connected(7, 0.5, seed=1), "metropolis_half")
    block = np.tile(RNG.normal(size=3), (7, 1))
    assert np.max(np.abs(apply_gossip_block(op, block))) < 1e-12


def test_apply_two_node_example():
    op = build_gossip(path_graph(2), "laplacian", c=4.0)  # C = [[.25,-.25],[-.25,.25]]
    out = apply_gossip_block(op, np.array([[1.0], [0.0]]))
    assert np.allclose(out, [[0.25], [-0.25]])


def test_apply_matches_kronecker_oracle():
    for seed in range(3):
        graph = erdos_renyi_connected(6, 0.4, seed=seed)
        op = build_gossip(graph, "metropolis_half")
        block = RNG.normal(size=(6, 4))
        got = apply_gossip_block(op, block)
        want = (np.kron(op.C, np.eye(4)) @ block.reshape(-1)).reshape(6, 4)
        assert np.allclose(got, want, atol=1e-12)


def test_apply_counts_one_round():
    op = build_gossip(path_graph(3), "metropolis_half")
    c = counters()
    apply_gossip_block(op, np.zeros((3, 2)), c)
    assert c.comm_rounds == 1


def test_apply_locality_audit():
    graph = erdos_renyi_connected(9, 0.25, seed=4)
    op = build_gossip(graph, "metropolis_half")
    block = RNG.normal(size=(9, 2))
    base = apply_gossip_block(op, block)
    for i in range(9):
        non_neighbors = set(range(9)) - set(graph.neighbors(i)) - {i}
        for j in non_neighbors:
            mod = block.copy()
            mod[j] = 0.0
            assert np.array_equal(apply_gossip_block(op, mod)[i], base[i])


# ---------------------------------------------------------------------------
# Chebyshev acceleration
# ---------------------------------------------------------------------------

def test_accelerated_gossip_consensus_zero():
    op = build_gossip(ring_graph(8), "metropolis_half")
    block = np.tile(RNG.normal(size=2), (8, 1))
    for K in (1, 2, 3):
        out = accelerated_gossip(block, op, K)
        assert np.max(np.abs(out)) < 1e-10


def test_accelerated_gossip_k1_is_scaled_c():
    op = build_gossip(ring_graph(8), "metropolis_half")
    block = RNG.normal(size=(8, 3))
    c3 = 2.0 / ((1.0 + 1.0 / op.kappa) * op.lambda_max)
    out = accelerated_gossip(block, op, 1)
    assert np.allclose(out, c3 * apply_gossip_block(op, block), rtol=1e-12)


def test_accelerated_gossip_eigenvector_oracle():
    graph = erdos_renyi_connected(10, 0.3, seed=8)
    op = build_gossip(graph, "metropolis_half")
    eigs, V = np.linalg.eigh(op.C)
    for K in (1, 2, 4):
        for idx in (1, 4, 9):
            v = V[:, idx].reshape(-1, 1)
            out = accelerated_gossip(v, op, K)
            want = poly_oracle(eigs[idx], op.kappa, op.lambda_max, K) * v
            assert np.allclose(out, want, atol=1e-10)


def test_accelerated_gossip_matches_dense_polynomial():
    graph = erdos_renyi_connected(12, 0.25, seed=11)
    op = build_gossip(graph, "metropolis_half")
    K = max(1, int(np.floor(np.sqrt(op.kappa))))
    block = RNG.normal(size=(12, 5))
    # independent dense oracle built from the closed-form polynomial
    eigs, V = np.linalg.eigh(op.C)
    mapped = np.array([poly_oracle(e, op.kappa, op.lambda_max, K) for e in eigs])
    dense = (V * mapped) @ V.T
    got = accelerated_gossip(block, op, K)
    assert np.allclose(got, dense @ block, rtol=1e-10, atol=1e-12)
    # and the package's own dense former agrees too
    assert np.allclose(dense_polynomial_matrix(op, K), dense, atol=1e-10)


def test_accelerated_gossip_rounds_cost():
    op = build_gossip(ring_graph(8), "metropolis_half")
    c = counters()
    accelerated_gossip(np.zeros((8, 1)), op, 3, counters=c)
    assert c.comm_rounds == 3


def test_accelerated_gossip_degenerate_kappa():
    op = build_gossip(ring_graph(3), "laplacian", c=2.0)  # kappa == 1
    with pytest.raises(ConfigError):
        accelerated_gossip(np.zeros((3, 1)), op, 2)


def test_chebyshev_eig_bounds_frozen_example():
    lo, hi = chebyshev_eig_bounds(4.0, 2)
    assert lo == pytest.approx(0.7804878048780488, abs=1e-12)
    assert hi == pytest.approx(1.2195121951219512, abs=1e-12)


def test_chebyshev_eig_bounds_limit_and_ratio():
    lo, hi = chebyshev_eig_bounds(1.0 + 1e-12, 3)
    assert lo == pytest.approx(1.0, abs=1e-5) and hi == pytest.approx(1.0, abs=1e-5)
    for kappa in (1.5, 2.0, 4.0, 25.0, 400.0, 1e4):
        K = max(1, int(np.floor(np.sqrt(kappa))))
        lo, hi = chebyshev_eig_bounds(kappa, K)
        assert hi / lo <= 4.0 + 1e-9


def test_pk_matrix_invariants_random_graphs():
    for seed in range(6):
        graph = erdos_renyi_connected(5 + 4 * seed, 0.3, seed=seed)
        op = build_gossip(graph, "metropolis_half")
        if op.kappa <= 1.0 + 1e-9:
            continue
        K = max(1, int(np.floor(np.sqrt(op.kappa))))
        P = dense_polynomial_matrix(op, K)
        assert np.allclose(P, P.T, atol=1e-10)
        eigs = np.sort(np.linalg.eigvalsh(P))
        assert eigs[0] > -1e-10
        assert np.max(np.abs(P @ np.ones(graph.n))) < 1e-9
        lo, hi = chebyshev_eig_bounds(op.kappa, K)
        nz = eigs[eigs > 1e-8]
        assert np.all(nz >= lo - 1e-9) and np.all(nz <= hi + 1e-9)


def test_mixing_operator_fallback_and_rounds():
    op = build_gossip(ring_graph(3), "laplacian", c=2.0)  # kappa == 1
    mix = MixingOperator(op, chebyshev=True)
    assert mix.fallback and mix.K == 1
    op2 = build_gossip(ring_graph(12), "metropolis_half")
    mix2 = MixingOperator(op2, chebyshev=True)
    assert mix2.K == int(np.floor(np.sqrt(op2.kappa)))
    c = counters()
    block = RNG.normal(size=(12, 2))
    mix2.apply(block, counters=c)
    assert c.comm_rounds == mix2.K
    # bound-based spectra vs dense spectra stay consistent
    mix3 = MixingOperator(op2, chebyshev=True, dense_spectra=True)
    assert mix3.lambda_max <= mix2.lambda_max + 1e-9
    assert mix3.lambda_min_nz >= mix2.lambda_min_nz - 1e-9
