"""Graphs, gossip matrices, and Chebyshev-accelerated mixing.

A gossip matrix C is symmetric PSD with nullspace span(1) and sparsity
confined to the graph; one multiplication by C is one communication round.
``accelerated_gossip`` applies the Chebyshev polynomial P_K(C) through a
K-round three-term recurrence, shrinking the effective condition number.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DisconnectedGraphError, Dual2Error, DomainError

DEGENERATE_KAPPA_TOL = 1e-9


@dataclass(frozen=True)
class Graph:
    """Undirected graph on nodes 0..n-1 with a canonical sorted edge list."""

    n: int
    edges: tuple

    @staticmethod
    def from_edges(n, edges):
        canon = set()
        for i, j in edges:
            if i == j:
                raise DomainError("self-loops are not allowed")
            if not (0 <= i < n and 0 <= j < n):
                raise DomainError("edge endpoint out of range")
            canon.add((min(i, j), max(i, j)))
        return Graph(n=int(n), edges=tuple(sorted(canon)))

    def neighbors(self, i):
        out = [j for a, j in self.edges if a == i] + [a for a, j in self.edges if j == i]
        return sorted(out)

    def adjacency(self):
        A = np.zeros((self.n, self.n))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def is_connected(self):
        if self.n == 1:
            return True
        adj = {i: [] for i in range(self.n)}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n


def erdos_renyi_connected(n, prob, seed, max_attempts=1000):
    """Sample G(n, prob) deterministically from ``seed``; retry until connected."""
    if n < 2:
        raise DomainError("need at least two nodes")
    if not 0 < prob <= 1:
        raise DomainError("prob must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        mask = rng.random((n, n)) < prob
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if mask[i, j]]
        g = Graph.from_edges(n, edges)
        if g.is_connected():
            return g
    raise Dual2Error(
        f"no connected graph in {max_attempts} attempts; increase prob (got {prob})"
    )


def ring_graph(n):
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def path_graph(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def save_graph(graph, path):
    with open(path, "w") as fh:
        fh.write(f"{graph.n} {len(graph.edges)}\n")
        for i, j in graph.edges:
            fh.write(f"{i} {j}\n")


def load_graph(path):
    with open(path) as fh:
        header = fh.readline().split()
        n, count = int(header[0]), int(header[1])
        edges = []
        for _ in range(count):
            i, j = fh.readline().split()
            edges.append((int(i), int(j)))
    return Graph.from_edges(n, edges)


# ---------------------------------------------------------------------------
# Gossip operator
# ---------------------------------------------------------------------------

class GossipOperator:
    """A validated gossip matrix plus its spectral data and sparsity structure.

    ``rows[i]`` holds the (j, c_ij) pairs of row i in ascending j order
    (diagonal included); row-wise mixing always accumulates in that order so
    the result is bit-identical between matrix-level and per-agent execution.
    """

    def __init__(self, graph, C):
        C = np.asarray(C, dtype=float)
        n = graph.n
        if C.shape != (n, n):
            raise DomainError("gossip matrix shape does not match the graph")
        if not np.allclose(C, C.T, atol=1e-12):
            raise DomainError("gossip matrix must be symmetric")
        allowed = graph.adjacency() + np.eye(n)
        if np.any((allowed == 0) & (C != 0.0)):
            raise DomainError("gossip matrix sparsity must respect the graph")
        lam_max, lam_min_nz, kappa = spectral_info(C)
        self.graph = graph
        self.C = C
        self.n = n
        self.lambda_max = lam_max
        self.lambda_min_nz = lam_min_nz
        self.kappa = kappa
        self.rows = []
        for i in range(n):
            cols = sorted(set(graph.neighbors(i)) | {i})
            self.rows.append([(j, C[i, j]) for j in cols])


def spectral_info(C):
    """(largest, smallest nonzero, condition number) of a PSD gossip matrix."""
    C = np.asarray(C, dtype=float)
    eigs = np.linalg.eigvalsh(C)
    lam_max = float(eigs[-1])
    if lam_max <= 0:
        raise DomainError("gossip matrix must be nonzero PSD")
    if eigs[0] < -1e-9 * lam_max:
        raise DomainError(f"gossip matrix not PSD (min eig {eigs[0]:.3e})")
    near_zero = eigs < 1e-10 * lam_max
    if int(np.sum(near_zero)) != 1:
        raise DisconnectedGraphError(
            "gossip matrix nullspace is not one-dimensional (graph disconnected?)"
        )
    lam_min_nz = float(eigs[~near_zero][0])
    return lam_max, lam_min_nz, lam_max / lam_min_nz


def build_gossip(graph, method="metropolis_half", c=1.0):
    """Build a gossip matrix from a connected graph.

    metropolis_half: Metropolis weights W' with w_ij = 1/(1+max(deg_i, deg_j)),
    lazified to W = (I+W')/2, then C = (I-W)/2.
    laplacian: C = L/c for the combinatorial Laplacian L.
    """
    if not graph.is_connected():
        raise DisconnectedGraphError("graph must be connected")
    n = graph.n
    adj = graph.adjacency()
    deg = adj.sum(axis=1)
    if method == "metropolis_half":
        W = np.zeros((n, n))
        for i, j in graph.edges:
            W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
        np.fill_diagonal(W, 1.0 - W.sum(axis=1))
        W = 0.5 * (np.eye(n) + W)
        C = 0.5 * (np.eye(n) - W)
    elif method == "laplacian":
        if c <= 0:
            raise DomainError("laplacian scale c must be positive")
        C = (np.diag(deg) - adj) / c
    else:
        raise ConfigError(f"unknown gossip method {method!r}")
    return GossipOperator(graph, C)


def apply_gossip_block(op, block, counters=None):
    """One communication round: row i of the output is sum_j c_ij * row j.

    Accumulation is in ascending neighbor index order, matching what each
    agent computes from its received messages.
    """
    block = np.asarray(block, dtype=float)
    if block.shape[0] != op.n:
        raise DomainError("block row count must equal the node count")
    out = np.empty_like(block)
    for i, cols in enumerate(op.rows):
        acc = np.zeros(block.shape[1:])
        for j, cij in cols:
            acc = acc + cij * block[j]
        out[i] = acc
    if counters is not None:
        counters.comm_rounds += 1
    return out


# ---------------------------------------------------------------------------
# Chebyshev acceleration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChebyshevParams:
    K: int
    c1: float
    c2: float
    c3: float


def chebyshev_params(kappa, lam_max, K=None):
    if kappa <= 1.0 + DEGENERATE_KAPPA_TOL:
        raise ConfigError("Chebyshev acceleration is degenerate for kappa ~ 1")
    root = np.sqrt(kappa)
    if K is None:
        K = max(1, int(np.floor(root)))
    return ChebyshevParams(
        K=int(K),
        c1=(root - 1.0) / (root + 1.0),
        c2=(kappa + 1.0) / (kappa - 1.0),
        c3=2.0 / ((1.0 + 1.0 / kappa) * lam_max),
    )


def cheb_recurrence_step(xk, xkm1, mixed, c2, c3):
    """x_{k+1} = 2 c2 (x_k - c3 C x_k) - x_{k-1}, given the mixed value C x_k."""
    return 2.0 * c2 * (xk - c3 * mixed) - xkm1


def accelerated_gossip(block, op, K, counters=None, apply_fn=None, params=None):
    """Apply P_K(C) to a stacked block via the K-round three-term recurrence.

    ``apply_fn`` performs one gossip round (defaults to matrix-level
    row mixing); the simulation harness passes a network-backed callable.
    """
    if K < 1:
        raise ConfigError("K must be at least 1")
    if params is None:
        params = chebyshev_params(op.kappa, op.lambda_max, K=K)
    c2, c3 = params.c2, params.c3
    if apply_fn is None:
        apply_fn = lambda b: apply_gossip_block(op, b, counters)
    block = np.asarray(block, dtype=float)
    a_prev, a_cur = 1.0, c2
    x_prev = block
    x_cur = c2 * (block - c3 * apply_fn(block))
    for _ in range(K - 1):
        a_prev, a_cur = a_cur, 2.0 * c2 * a_cur - a_prev
        x_prev, x_cur = x_cur, cheb_recurrence_step(x_cur, x_prev, apply_fn(x_cur), c2, c3)
    return block - x_cur / a_cur


def chebyshev_eig_bounds(kappa_C, K):
    """Bracket for the nonzero eigenvalues of P_K(C): 1 -/+ 2 c1^K / (1 + c1^{2K})."""
    if kappa_C <= 1.0:
        raise DomainError("kappa_C must exceed 1")
    if K < 1:
        raise DomainError("K must be at least 1")
    c1 = (np.sqrt(kappa_C) - 1.0) / (np.sqrt(kappa_C) + 1.0)
    off = 2.0 * c1 ** K / (1.0 + c1 ** (2 * K))
    return 1.0 - off, 1.0 + off


def chebyshev_poly_scalar(lam, kappa, lam_max, K):
    """P_K evaluated at a scalar eigenvalue (same recurrence as the block form)."""
    params = chebyshev_params(kappa, lam_max, K=K)
    c2, c3 = params.c2, params.c3
    a_prev, a_cur = 1.0, c2
    t_prev = 1.0
    t_cur = c2 * (1.0 - c3 * lam)
    for _ in range(K - 1):
        a_prev, a_cur = a_cur, 2.0 * c2 * a_cur - a_prev
        t_prev, t_cur = t_cur, 2.0 * c2 * (1.0 - c3 * lam) * t_cur - t_prev
    return 1.0 - t_cur / a_cur


def dense_polynomial_matrix(op, K):
    """Form P_K(C) densely through an eigendecomposition (test/diagnostic path)."""
    eigs, V = np.linalg.eigh(op.C)
    mapped = np.array([chebyshev_poly_scalar(e, op.kappa, op.lambda_max, K) for e in eigs])
    return (V * mapped) @ V.T


# ---------------------------------------------------------------------------
# Mixing wrapper used by the outer loops
# ---------------------------------------------------------------------------

class MixingOperator:
    """Either the gossip matrix itself or its Chebyshev polynomial P_K(C).

    Carries the spectral constants of the *effective* operator; one ``apply``
    costs ``rounds_per_apply`` communication rounds.
    """

    def __init__(self, gossip, chebyshev=False, dense_spectra=False):
        self.gossip = gossip
        self.fallback = False
        if chebyshev and gossip.kappa <= 1.0 + DEGENERATE_KAPPA_TOL:
            chebyshev = False          # complete-graph-like spectrum: use C itself
            self.fallback = True
        self.chebyshev = chebyshev
        if not chebyshev:
            self.K = 1
            self.params = None
            self.lambda_max = gossip.lambda_max
            self.lambda_min_nz = gossip.lambda_min_nz
        else:
            self.params = chebyshev_params(gossip.kappa, gossip.lambda_max)
            self.K = self.params.K
            if dense_spectra:
                P = dense_polynomial_matrix(gossip, self.K)
                self.lambda_max, self.lambda_min_nz, _ = spectral_info(P)
            else:
                lo, hi = chebyshev_eig_bounds(gossip.kappa, self.K)
                self.lambda_max, self.lambda_min_nz = hi, lo
        self.kappa = self.lambda_max / self.lambda_min_nz

    @property
    def rounds_per_apply(self):
        return self.K if self.chebyshev else 1

    def apply(self, block, counters=None, apply_fn=None):
        if not self.chebyshev:
            if apply_fn is not None:
                return apply_fn(block)
            return apply_gossip_block(self.gossip, block, counters)
        return accelerated_gossip(block, self.gossip, self.K, counters=counters,
                                  apply_fn=apply_fn, params=self.params)
