"""Experiment families, high-accuracy reference solutions, and instance I/O.

Three generators cover the solver's three regimes: elastic-net regression
(strongly convex conjugate), constrained linear regression (full-row-rank
stacked coupling, smooth conjugate), and box-constrained resource
allocation (general convex coupling, run in the convex mode).

``reference_solve`` is the independent oracle behind every optimality-gap
measurement: an accelerated forward-backward loop on the p-dimensional
aggregated dual, with an active-set polish step that solves the conjectured
KKT system exactly and verifies it.  It shares only the function oracles
with the decentralized code path.
"""

import itertools
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import CapExceededError, ConfigError, DomainError
from .functions import (
    BoxProx,
    ClippedQuadraticConjugate,
    L1Prox,
    LinearConjugate,
    NonnegLinearConjugate,
    NonnegLinearProx,
    QuadraticConjugate,
    QuadraticFn,
    ScaledSquaredNorm,
    SingletonProx,
    ZeroProx,
)
from .gossip import Graph, erdos_renyi_connected, load_graph, path_graph, ring_graph
from .problem import (
    CASE_GENERAL,
    CASE_GLOBAL_RANK,
    CASE_HSTAR_SC,
    AgentLocalProblem,
    ProblemInstance,
    kkt_residual,
    local_argmin,
)

FAMILIES = ("elastic_net", "constrained_regression", "resource_allocation")


@dataclass
class ExperimentSpec:
    family: str
    n: int = 8
    p: int = 20
    d: int = 9
    alpha: float = 100.0
    en_mix: float = 0.1            # elastic-net l1/l2 mixing weight in (0, 1)
    seed: int = 0
    data: str = "synthetic"        # "synthetic" or "csv:<path>"
    feature_scale: float = 30.0
    d_i: list = None               # explicit column partition; paper-style default
    alloc_d_i: int = 2
    alloc_eig_range: tuple = (1.0, 1000.0)
    alloc_b_scale: float = 0.1     # budget scale; small enough that rows bind
    graph: str = "er:0.1"          # er:<prob>[:seed] | ring | path | file:<path>


def default_spec(family, **overrides):
    """Paper-shaped desk instances for each family."""
    if family == "elastic_net":
        spec = ExperimentSpec(family=family, n=8, p=20, d=9, alpha=100.0, en_mix=0.1)
    elif family == "constrained_regression":
        spec = ExperimentSpec(family=family, n=8, p=9, d=9, alpha=100.0,
                              feature_scale=1.0)
    elif family == "resource_allocation":
        spec = ExperimentSpec(family=family, n=20, p=10, d=40)
    else:
        raise ConfigError(f"unknown family {family!r}")
    for key, value in overrides.items():
        setattr(spec, key, value)
    return spec


def _partition(spec):
    if spec.d_i is not None:
        if sum(spec.d_i) != spec.d or len(spec.d_i) != spec.n:
            raise DomainError("partition must have n entries summing to d")
        return list(spec.d_i)
    if spec.d < spec.n:
        raise DomainError("need d >= n for the default one-column partition")
    return [1] * (spec.n - 1) + [spec.d - (spec.n - 1)]


def _load_features(spec):
    """(X', y) raw features and labels: synthetic normals or a CSV file."""
    if spec.data.startswith("csv:"):
        path = spec.data[4:]
        raw = np.loadtxt(path, delimiter=",", ndmin=2)
        if raw.shape != (spec.p, spec.d):
            raise DomainError(
                f"CSV shape mismatch: got {raw.shape}, expected ({spec.p}, {spec.d})")
        return raw[:, :-1], raw[:, -1]
    if spec.data != "synthetic":
        raise ConfigError(f"unknown data source {spec.data!r}")
    rng = np.random.default_rng(spec.seed)
    X_raw = rng.normal(size=(spec.p, spec.d - 1)) * spec.feature_scale
    y = rng.normal(size=spec.p) * spec.feature_scale
    return X_raw, y


def gen_elastic_net(spec):
    """Vertically partitioned elastic-net regression (strongly convex conjugate)."""
    if not 0.0 < spec.en_mix < 1.0:
        raise DomainError("elastic-net mixing weight must lie in (0, 1): "
                          "the smooth part loses strong convexity at 1")
    X_raw, y = _load_features(spec)
    X = np.hstack([X_raw, np.ones((spec.p, 1))])
    dims = _partition(spec)
    agents = []
    offset = 0
    for d_i in dims:
        A_i = X[:, offset:offset + d_i]
        f_i = ScaledSquaredNorm(spec.alpha * (1.0 - spec.en_mix), d_i)
        g_i = L1Prox(spec.alpha * spec.en_mix, d_i)
        agents.append(AgentLocalProblem(f_i, g_i, A_i))
        offset += d_i
    coupling = QuadraticConjugate(float(spec.p), y)
    return ProblemInstance(agents, coupling, CASE_HSTAR_SC)


def gen_constrained_regression(spec, max_resample=50):
    """Nonnegativity-constrained least squares; X must have full row rank."""
    smin = 0.0
    for attempt in range(max_resample):
        local = replace(spec, seed=spec.seed + attempt) if spec.data == "synthetic" else spec
        X_raw, y = _load_features(local)
        X = np.hstack([X_raw, np.ones((spec.p, 1))])
        svals = np.linalg.svd(X, compute_uv=False)
        smin = float(svals[-1]) if X.shape[0] <= X.shape[1] else 0.0
        if smin > 0 and svals[0] / smin <= 100.0:
            break
        if spec.data != "synthetic":
            raise DomainError(
                f"feature matrix is too close to row-rank deficient "
                f"(smallest singular value {smin:.3e})")
    else:
        raise DomainError(
            f"could not sample a well-conditioned full-row-rank X "
            f"(last smallest singular value {smin:.3e})")
    dims = _partition(spec)
    agents = []
    offset = 0
    for d_i in dims:
        A_i = X[:, offset:offset + d_i]
        f_i = ScaledSquaredNorm(spec.alpha, d_i)
        agents.append(AgentLocalProblem(f_i, ZeroProx(d_i), A_i))
        offset += d_i
    coupling = ClippedQuadraticConjugate(float(spec.p), y)
    return ProblemInstance(agents, coupling, CASE_GLOBAL_RANK)


def gen_resource_allocation(spec, seed=None, resample_cap=100):
    """Box-constrained quadratic allocation under a shared budget row."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    n, p, d_i = spec.n, spec.p, spec.alloc_d_i
    lo_eig, hi_eig = spec.alloc_eig_range
    agents = []
    for _ in range(n):
        M = rng.normal(size=(d_i, d_i))
        Q, _ = np.linalg.qr(M)
        eigs = rng.uniform(lo_eig, hi_eig, size=d_i)
        P = (Q * eigs) @ Q.T
        P = 0.5 * (P + P.T)
        q = rng.normal(size=d_i)
        B = rng.normal(size=(p, d_i))
        u = np.abs(rng.normal(size=d_i))
        agents.append(AgentLocalProblem(QuadraticFn(P, q), BoxProx(np.zeros(d_i), u), B))
    for _ in range(resample_cap):
        b = np.abs(rng.normal(size=p)) * spec.alloc_b_scale
        if np.all(b > 0):
            break
    else:
        raise DomainError("could not sample a strictly positive budget vector")
    problem = ProblemInstance(agents, NonnegLinearConjugate(b), CASE_GENERAL)
    # feasibility witness: the origin satisfies every box and B 0 = 0 < b
    assert np.all(b > 0)
    return problem


def build_experiment(spec, seed=None):
    if spec.family == "elastic_net":
        return gen_elastic_net(spec)
    if spec.family == "constrained_regression":
        return gen_constrained_regression(spec)
    if spec.family == "resource_allocation":
        return gen_resource_allocation(spec, seed=seed)
    raise ConfigError(f"unknown family {spec.family!r}")


def parse_graph_spec(text, n, default_seed=0):
    """er:<prob>[:seed] | ring | path | file:<path> -> Graph on n nodes."""
    parts = text.split(":")
    kind = parts[0]
    if kind == "er":
        prob = float(parts[1]) if len(parts) > 1 else 0.1
        seed = int(parts[2]) if len(parts) > 2 else default_seed
        return erdos_renyi_connected(n, prob, seed)
    if kind == "ring":
        return ring_graph(n)
    if kind == "path":
        return path_graph(n)
    if kind == "file":
        graph = load_graph(parts[1])
        if graph.n != n:
            raise DomainError(f"graph file has {graph.n} nodes, expected {n}")
        return graph
    raise ConfigError(f"unknown graph spec {text!r}")


# ---------------------------------------------------------------------------
# Reference solutions
# ---------------------------------------------------------------------------

@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    lambda_star: np.ndarray
    tol: float


def _box_qp_exact(P, q, lo, hi):
    """Exact minimizer of 0.5 x'Px + q'x over a box by active-set enumeration.

    Intended for the small per-agent blocks of the reference path (3^d
    patterns); the decentralized solver itself never calls this.
    """
    d = len(q)
    best = None
    for pattern in itertools.product((-1, 0, 1), repeat=d):
        fixed = {i: (lo[i] if s < 0 else hi[i]) for i, s in enumerate(pattern) if s != 0}
        free = [i for i, s in enumerate(pattern) if s == 0]
        x = np.empty(d)
        for i, val in fixed.items():
            x[i] = val
        if free:
            rhs = -q[free].copy()
            for i, val in fixed.items():
                rhs -= P[free, i] * val
            try:
                x[free] = np.linalg.solve(P[np.ix_(free, free)], rhs)
            except np.linalg.LinAlgError:
                continue
            if np.any(x[free] < lo[free] - 1e-11) or np.any(x[free] > hi[free] + 1e-11):
                continue
        grad = P @ x + q
        ok = True
        for i, s in enumerate(pattern):
            if s < 0 and grad[i] < -1e-9:
                ok = False
            if s > 0 and grad[i] > 1e-9:
                ok = False
        if ok:
            val = 0.5 * x @ (P @ x) + q @ x
            if best is None or val < best[0]:
                best = (val, np.clip(x, lo, hi))
    if best is None:
        raise DomainError("box QP enumeration found no KKT-consistent pattern")
    return best[1]


def _agent_argmin_reference(agent, w, tol):
    """High-accuracy x_i(lambda) for the reference dual loop."""
    f, g = agent.f, agent.g
    if isinstance(f, ScaledSquaredNorm):
        return g.prox(1.0 / f.beta, -w / f.beta)
    if isinstance(f, QuadraticFn) and isinstance(g, ZeroProx):
        return np.linalg.solve(f.P, -(f.q + w))
    if isinstance(f, QuadraticFn) and isinstance(g, BoxProx):
        return _box_qp_exact(f.P, f.q + w, g.lower, g.upper)
    x, _ = local_argmin(agent, w, max(tol * 1e-3, 1e-14), cap=200_000)
    return x


def _grad_blocks(problem, x):
    """Blockwise Hessian/gradient data for the polish system (quadratic f only)."""
    P_blocks, q_parts = [], []
    for a in problem.agents:
        if isinstance(a.f, QuadraticFn):
            P_blocks.append(a.f.P)
            q_parts.append(a.f.q)
        elif isinstance(a.f, ScaledSquaredNorm):
            P_blocks.append(a.f.beta * np.eye(a.dim))
            q_parts.append(np.zeros(a.dim))
        else:
            return None, None
    d = problem.d
    P = np.zeros((d, d))
    offset = 0
    for blk in P_blocks:
        k = blk.shape[0]
        P[offset:offset + k, offset:offset + k] = blk
        offset += k
    return P, np.concatenate(q_parts)


def _polish(problem, x, lam, tol):
    """Solve the KKT system for the active pattern of (x, lam); verify it.

    Returns a verified (x, lam, residual) triple or None.  Covers quadratic
    smooth parts with zero/l1/box/singleton g and the built-in conjugates;
    anything else simply skips polishing.
    """
    P, q = _grad_blocks(problem, x)
    if P is None:
        return None
    d, p = problem.d, problem.p
    coupling = problem.coupling
    A = problem.assemble_A()
    scale = 1.0 + float(np.max(np.abs(x)))

    free = []
    fixed_val = np.zeros(d)
    fixed_mask = np.zeros(d, dtype=bool)
    s_vec = np.zeros(d)
    offset = 0
    for a, xi in zip(problem.agents, problem.split(x)):
        g = a.g
        for j in range(a.dim):
            gj = offset + j
            if isinstance(g, ZeroProx):
                free.append(gj)
            elif isinstance(g, L1Prox):
                if abs(xi[j]) <= 1e-7 * scale:
                    fixed_mask[gj] = True
                else:
                    free.append(gj)
                    s_vec[gj] = g.weight * np.sign(xi[j])
            elif isinstance(g, BoxProx):
                if xi[j] <= g.lower[j] + 1e-7 * scale:
                    fixed_mask[gj] = True
                    fixed_val[gj] = g.lower[j]
                elif xi[j] >= g.upper[j] - 1e-7 * scale:
                    fixed_mask[gj] = True
                    fixed_val[gj] = g.upper[j]
                else:
                    free.append(gj)
            elif isinstance(g, SingletonProx):
                fixed_mask[gj] = True
                fixed_val[gj] = g.b[j]
            else:
                return None
        offset += a.dim

    # coupling-side equality rows: rows of A x = r + c lam (c, r per type)
    if isinstance(coupling, QuadraticConjugate):
        lam_active = list(range(p))
        h_rows = [(j, coupling.coef, coupling.y[j]) for j in range(p)]
    elif isinstance(coupling, ClippedQuadraticConjugate):
        lam_active = list(range(p))
        h_rows = []
        for j in range(p):
            if lam[j] >= -coupling.y[j] / coupling.coef:
                h_rows.append((j, coupling.coef, coupling.y[j]))
            else:
                h_rows.append((j, 0.0, 0.0))
    elif isinstance(coupling, LinearConjugate):
        lam_active = list(range(p))
        h_rows = [(j, 0.0, coupling.b[j]) for j in range(p)]
    elif isinstance(coupling, NonnegLinearConjugate):
        lam_active = [j for j in range(p) if lam[j] > 1e-9 * (1 + abs(lam[j]))]
        h_rows = [(j, 0.0, coupling.b[j]) for j in lam_active]
    else:
        return None

    nf, na = len(free), len(lam_active)
    size = nf + na
    if size == 0:
        return None
    M = np.zeros((nf + len(h_rows), size))
    rhs = np.zeros(nf + len(h_rows))
    # stationarity at free coords: (P x + q + A' lam + s)_free = 0
    for r, gj in enumerate(free):
        M[r, :nf] = P[gj, free]
        for cidx, j in enumerate(lam_active):
            M[r, nf + cidx] = A[j, gj]
        rhs[r] = -q[gj] - s_vec[gj] - P[gj, fixed_mask] @ fixed_val[fixed_mask]
    # coupling rows: (A x)_j - c lam_j = r_j
    for r, (j, cval, rval) in enumerate(h_rows):
        row = nf + r
        M[row, :nf] = A[j, free]
        if cval != 0.0 and j in lam_active:
            M[row, nf + lam_active.index(j)] = -cval
        rhs[row] = rval - A[j, fixed_mask] @ fixed_val[fixed_mask]

    try:
        if M.shape[0] == M.shape[1]:
            sol = np.linalg.solve(M, rhs)
        else:
            sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    except np.linalg.LinAlgError:
        return None
    x_new = fixed_val.copy()
    x_new[free] = sol[:nf]
    lam_new = np.zeros(p)
    for cidx, j in enumerate(lam_active):
        lam_new[j] = sol[nf + cidx]
    try:
        primal, dual = kkt_residual(problem, x_new, lam_new)
    except DomainError:
        return None
    res = max(primal, dual)
    if res <= tol:
        return x_new, lam_new, res
    return None


def reference_solve(problem, tol=1e-10, max_iter=200_000, check_every=25):
    """Independent high-accuracy solution of the coupled problem.

    Accelerated forward-backward iteration on the p-dimensional dual (exact
    per-agent argmins supply the gradient), with periodic active-set polish;
    returns once the global KKT residuals fall below ``tol``.
    """
    coupling = problem.coupling
    p = problem.p
    L_phi = sum(a.sigma_max ** 2 / a.f.mu for a in problem.agents)
    grad_route = not coupling.proximal
    if grad_route:
        L_phi += coupling.L_hstar
    step = 1.0 / L_phi

    mu = coupling.mu_hstar
    if all(isinstance(a.g, ZeroProx) for a in problem.agents):
        A = problem.assemble_A()
        svals = np.linalg.svd(A, compute_uv=False)
        smin = float(svals[-1]) if A.shape[0] <= A.shape[1] else 0.0
        mu += smin ** 2 / problem.L_f
    if mu > 0:
        kappa = (L_phi + (coupling.L_hstar if not grad_route else 0.0)) / mu
        momentum = (np.sqrt(kappa) - 1.0) / (np.sqrt(kappa) + 1.0)
    else:
        momentum = None   # convex mode: Nesterov sequence with restart

    def x_of(lam):
        return [_agent_argmin_reference(a, a.A.T @ lam, tol) for a in problem.agents]

    def dual_grad(lam, xs):
        g = -sum(a.A @ xi for a, xi in zip(problem.agents, xs))
        if grad_route:
            g = g + coupling.hstar_grad(lam)
        return g

    lam = np.zeros(p)
    y = lam.copy()
    t_k = 1.0
    best = (np.inf, None, None)
    for it in range(1, max_iter + 1):
        xs = x_of(y)
        grad = dual_grad(y, xs)
        if coupling.proximal:
            lam_new = coupling.hstar_prox(step, y - step * grad)
        else:
            lam_new = y - step * grad
        if momentum is not None:
            y = lam_new + momentum * (lam_new - lam)
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
            y_new = lam_new + ((t_k - 1.0) / t_next) * (lam_new - lam)
            if float((y - lam_new) @ (lam_new - lam)) > 0:   # adaptive restart
                t_next = 1.0
                y_new = lam_new.copy()
            t_k, y = t_next, y_new
        lam = lam_new

        if it % check_every == 0 or it == max_iter:
            xs = x_of(lam)
            x = problem.stack(xs)
            try:
                primal, dual = kkt_residual(problem, x, lam)
            except DomainError:
                continue
            res = max(primal, dual)
            if res < best[0]:
                best = (res, x, lam)
            if res <= tol:
                return ReferenceSolution(x_star=x, lambda_star=lam, tol=res)
            polished = _polish(problem, x, lam, tol)
            if polished is not None:
                return ReferenceSolution(x_star=polished[0], lambda_star=polished[1],
                                         tol=polished[2])
    raise CapExceededError(
        f"reference solve cap {max_iter} hit (best KKT residual {best[0]:.3e})",
        best=(best[1], best[2]), residual=best[0],
    )


# ---------------------------------------------------------------------------
# Instance file format (self-describing JSON, explicit matrices)
# ---------------------------------------------------------------------------

FORMAT_NAME = "dual2-instance"
FORMAT_VERSION = 1


def _fn_to_dict(f):
    if isinstance(f, QuadraticFn):
        return {"type": "quadratic", "P": f.P.tolist(), "q": f.q.tolist()}
    if isinstance(f, ScaledSquaredNorm):
        return {"type": "scaled_sqnorm", "beta": f.beta, "dim": f.dim}
    raise ConfigError(f"cannot serialize smooth part {type(f).__name__}")


def _prox_to_dict(g):
    if isinstance(g, ZeroProx):
        return {"type": "zero", "dim": g.dim}
    if isinstance(g, L1Prox):
        return {"type": "l1", "weight": g.weight, "dim": g.dim}
    if isinstance(g, BoxProx):
        return {"type": "box", "lower": g.lower.tolist(), "upper": g.upper.tolist()}
    if isinstance(g, SingletonProx):
        return {"type": "singleton", "b": g.b.tolist()}
    if isinstance(g, NonnegLinearProx):
        return {"type": "halfspace_conj", "b": g.b.tolist()}
    raise ConfigError(f"cannot serialize prox part {type(g).__name__}")


def _coupling_to_dict(c):
    if isinstance(c, QuadraticConjugate):
        return {"type": "quadratic", "coef": c.coef, "y": c.y.tolist()}
    if isinstance(c, ClippedQuadraticConjugate):
        return {"type": "clipped_quadratic", "coef": c.coef, "y": c.y.tolist()}
    if isinstance(c, LinearConjugate):
        return {"type": "linear", "b": c.b.tolist()}
    if isinstance(c, NonnegLinearConjugate):
        return {"type": "nonneg_linear", "b": c.b.tolist()}
    raise ConfigError(f"cannot serialize coupling {type(c).__name__}")


def problem_to_dict(problem):
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "case_tag": problem.case_tag,
        "n": problem.n,
        "p": problem.p,
        "agents": [
            {"f": _fn_to_dict(a.f), "g": _prox_to_dict(a.g), "A": a.A.tolist()}
            for a in problem.agents
        ],
        "coupling": _coupling_to_dict(problem.coupling),
    }


def _fn_from_dict(d):
    if d["type"] == "quadratic":
        return QuadraticFn(np.array(d["P"]), np.array(d["q"]))
    if d["type"] == "scaled_sqnorm":
        return ScaledSquaredNorm(d["beta"], d["dim"])
    raise ConfigError(f"unknown smooth part type {d['type']!r}")


def _prox_from_dict(d):
    if d["type"] == "zero":
        return ZeroProx(d["dim"])
    if d["type"] == "l1":
        return L1Prox(d["weight"], d["dim"])
    if d["type"] == "box":
        return BoxProx(np.array(d["lower"]), np.array(d["upper"]))
    if d["type"] == "singleton":
        return SingletonProx(np.array(d["b"]))
    if d["type"] == "halfspace_conj":
        return NonnegLinearProx(np.array(d["b"]))
    raise ConfigError(f"unknown prox part type {d['type']!r}")


def _coupling_from_dict(d):
    if d["type"] == "quadratic":
        return QuadraticConjugate(d["coef"], np.array(d["y"]))
    if d["type"] == "clipped_quadratic":
        return ClippedQuadraticConjugate(d["coef"], np.array(d["y"]))
    if d["type"] == "linear":
        return LinearConjugate(np.array(d["b"]))
    if d["type"] == "nonneg_linear":
        return NonnegLinearConjugate(np.array(d["b"]))
    raise ConfigError(f"unknown coupling type {d['type']!r}")


def problem_from_dict(data):
    if data.get("format") != FORMAT_NAME:
        raise ConfigError("not a recognized instance file")
    if data.get("version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported instance version {data.get('version')!r}")
    agents = [
        AgentLocalProblem(_fn_from_dict(a["f"]), _prox_from_dict(a["g"]),
                          np.array(a["A"]))
        for a in data["agents"]
    ]
    return ProblemInstance(agents, _coupling_from_dict(data["coupling"]),
                           data["case_tag"])


def save_problem(problem, path):
    with open(path, "w") as fh:
        json.dump(problem_to_dict(problem), fh, indent=1)


def load_problem(path):
    with open(path) as fh:
        return problem_from_dict(json.load(fh))
