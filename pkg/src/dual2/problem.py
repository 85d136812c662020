"""Problem containers and the agent-level oracle operations.

A problem couples n agents, each holding a smooth strongly convex f_i, a
proximal-friendly g_i, and a coupling matrix A_i (p x d_i), through a public
coupling function h given as a :class:`~dual2.functions.ConjugatePair`.
"""

import math

import numpy as np

from .errors import CapExceededError, DomainError
from .functions import BoxProx, ProxFn, QuadraticFn, ScaledSquaredNorm, ZeroProx, \
    _check_finite

CASE_HSTAR_SC = "hstar_strongly_convex"
CASE_LOCAL_RANK = "local_full_row_rank"
CASE_GLOBAL_RANK = "global_full_row_rank"
CASE_GENERAL = "general_convex"
CASE_TAGS = (CASE_HSTAR_SC, CASE_LOCAL_RANK, CASE_GLOBAL_RANK, CASE_GENERAL)


def ordered_sum(values):
    """Plain left-to-right float accumulation (fixed reduction order)."""
    acc = 0.0
    for v in values:
        acc += v
    return acc


def stacked_norm(parts):
    """sqrt of the left-to-right sum of squares of per-agent scalars."""
    return float(np.sqrt(ordered_sum(float(p) * float(p) for p in parts)))


class AgentLocalProblem:
    """Private data of one agent: f_i, g_i, and the coupling matrix A_i."""

    def __init__(self, f, g, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if f.dim != A.shape[1] or g.dim != A.shape[1]:
            raise DomainError("agent dimension mismatch between f, g, and A")
        if f.mu <= 0:
            raise DomainError("f must be strongly convex (mu > 0)")
        self.f = f
        self.g = g
        self.A = A
        self.dim = A.shape[1]
        self.p = A.shape[0]
        svals = np.linalg.svd(A, compute_uv=False)
        self.sigma_max = float(svals[0]) if svals.size else 0.0
        self.sigma_min = float(svals[-1]) if A.shape[0] <= A.shape[1] else 0.0


class ProblemInstance:
    """The full n-agent instance plus aggregate constants used by the solvers."""

    def __init__(self, agents, coupling, case_tag):
        if case_tag not in CASE_TAGS:
            raise DomainError(f"unknown case tag {case_tag!r}")
        if not agents:
            raise DomainError("at least one agent required")
        p = agents[0].p
        if coupling.dim != p or any(a.p != p for a in agents):
            raise DomainError("all A_i must have p rows matching the coupling dimension")
        self.agents = list(agents)
        self.coupling = coupling
        self.p = p
        self.n = len(agents)
        self.case_tag = case_tag

        self.dims = [a.dim for a in agents]
        self.d = int(sum(self.dims))
        offsets = np.cumsum([0] + self.dims)
        self.slices = [slice(int(offsets[i]), int(offsets[i + 1])) for i in range(self.n)]

        self.mu_f = min(a.f.mu for a in agents)
        self.L_f = max(a.f.L for a in agents)
        self.sigma_max_A = max(a.sigma_max for a in agents)
        # smoothness of the agent-separable dual part, and its curvature floor
        self.max_term = max(a.sigma_max ** 2 / a.f.mu for a in agents)
        self.min_term = min(a.sigma_min ** 2 / a.f.L for a in agents)
        self._validate_case()

    def _validate_case(self):
        if self.case_tag == CASE_HSTAR_SC and self.coupling.mu_hstar <= 0:
            raise DomainError("case requires a strongly convex h*")
        if self.case_tag in (CASE_LOCAL_RANK, CASE_GLOBAL_RANK):
            if any(not isinstance(a.g, ZeroProx) for a in self.agents):
                raise DomainError("full-row-rank cases require g_i = 0")
        if self.case_tag == CASE_LOCAL_RANK:
            if any(a.sigma_min <= 0 for a in self.agents):
                raise DomainError("every A_i must have full row rank")
        if self.case_tag == CASE_GLOBAL_RANK:
            A = self.assemble_A()
            smin = float(np.linalg.svd(A, compute_uv=False)[-1]) if A.shape[0] <= A.shape[1] else 0.0
            if smin <= 0:
                raise DomainError(f"[A_1,...,A_n] must have full row rank (sigma_min {smin:.3e})")

    def assemble_A(self):
        return np.hstack([a.A for a in self.agents])

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return [x[s] for s in self.slices]

    def stack(self, parts):
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])

    def apply_A(self, x):
        """A x = sum_i A_i x_i, accumulated in agent order."""
        acc = np.zeros(self.p)
        for a, xi in zip(self.agents, self.split(x)):
            acc = acc + a.A @ xi
        return acc


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def prox_apply(g: ProxFn, alpha, v):
    """argmin_y g(y) + ||y - v||^2 / (2 alpha)."""
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    v = _check_finite(v, "prox input")
    return g.prox(float(alpha), v)


def subdiff_distance(g: ProxFn, x, v):
    """min over s in d(g)(x) of ||v + s|| (exact for the built-in kinds)."""
    x = _check_finite(x, "point")
    v = _check_finite(v, "offset")
    if not np.isfinite(g.eval(x)):
        raise DomainError("point outside dom(g)")
    return g.subdiff_dist(x, v)


def local_argmin(agent: AgentLocalProblem, w, tol, x0=None, cap=10_000):
    """Solve min_x f_i(x) + g_i(x) + <w, x> to a subdifferential residual <= tol.

    Returns ``(x, evals)`` where evals counts combined gradient/prox steps.
    Closed forms are used when available; otherwise an accelerated
    proximal-gradient loop with the strongly convex momentum runs from x0.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    w = _check_finite(w, "tilt vector")
    f, g = agent.f, agent.g

    if isinstance(f, QuadraticFn) and isinstance(g, ZeroProx):
        return np.linalg.solve(f.P, -(f.q + w)), 1
    if isinstance(f, ScaledSquaredNorm):
        return g.prox(1.0 / f.beta, -w / f.beta), 1

    x = np.zeros(agent.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    kappa = f.L / f.mu
    beta = (np.sqrt(kappa) - 1.0) / (np.sqrt(kappa) + 1.0)
    step = 1.0 / f.L
    y = x.copy()
    best = (np.inf, x)
    for it in range(1, cap + 1):
        x_new = g.prox(step, y - step * (f.grad(y) + w))
        y = x_new + beta * (x_new - x)
        x = x_new
        res = g.subdiff_dist(x, f.grad(x) + w)
        if res < best[0]:
            best = (res, x)
        if res <= tol:
            return x, it
    raise CapExceededError(
        f"local argmin cap {cap} hit (best residual {best[0]:.3e}, tol {tol:.3e})",
        best=best[1], residual=best[0],
    )


def kkt_residual(problem: ProblemInstance, x, lam):
    """Global KKT residuals (primal stationarity, dual/coupling consistency).

    primal: stacked norm of per-agent distances dist(0, grad f_i + A_i' lam + d g_i);
    dual:   min over s in d(h*)(lam) of ||A x - s||.
    Both vanish exactly at a saddle point.
    """
    lam = _check_finite(lam, "multiplier")
    if not problem.coupling.hstar_in_domain(lam):
        raise DomainError("multiplier outside dom(h*)")
    parts = []
    for a, xi in zip(problem.agents, problem.split(x)):
        parts.append(a.g.subdiff_dist(xi, a.f.grad(xi) + a.A.T @ lam))
    primal = stacked_norm(parts)
    Ax = problem.apply_A(x)
    dual = problem.coupling.hstar_subdiff_dist(lam, -Ax, scale=1.0)
    return primal, dual
