"""Inexact solver for the per-iteration saddle subproblem.

The subproblem couples the agents' primal blocks x with a stacked multiplier
block lam (one p-row per agent) through

    T(z, x, lam) = f(x) + g(x) + <lam, Ax>
                   - ( hbar*(lam) + (rho/2) <lam, M lam> + <lam, z> ),

where hbar*(lam) = (1/n) sum_i h*(lam_i) and M is the active mixing operator
(the gossip matrix itself, or its Chebyshev polynomial).  The solver is an
accelerated primal-dual loop: an inner argmin in x per agent, a prox (or
gradient) step on the multiplier block, and extrapolation; it stops when the
residual-based error bounds certify the caller's accuracy targets.

All row-level arithmetic lives in small kernels shared with the
decentralized harness so both execution paths produce bit-identical floats.
"""

from dataclasses import dataclass

import numpy as np

from .errors import CapExceededError, ConfigError, DomainError
from .problem import local_argmin, ordered_sum, stacked_norm

X_TOL_FLOOR = 1e-14


@dataclass
class SaddleConsts:
    """Constants of one subproblem: curvatures and the coupling norm."""

    mu_f: float
    sigma_max_A: float
    mu_H: float
    L_phi: float


class SaddleSubproblem:
    """One outer iteration's min-max problem, parameterized by the tilt z."""

    def __init__(self, problem, z, rho, mix, consts):
        z = np.asarray(z, dtype=float)
        if z.shape != (problem.n, problem.p):
            raise DomainError("tilt block must be n x p")
        if rho < 0:
            raise DomainError("rho must be nonnegative")
        self.problem = problem
        self.z = z
        self.rho = float(rho)
        self.mix = mix
        self.consts = consts


# ---------------------------------------------------------------------------
# Shared row kernels (used verbatim by the decentralized harness)
# ---------------------------------------------------------------------------

def lambda_step(coupling, n, L_phi, v, drift):
    """Multiplier update given drift = rho*(M v) + z - Ax.

    Proximal route when h* has a closed-form prox (the prox of hbar* acts
    blockwise with stepsize 1/(n L_phi)); otherwise the smooth-gradient route.
    Works elementwise, so a stacked block and a single row agree bitwise.
    """
    if coupling.proximal:
        return coupling.hstar_prox(1.0 / (n * L_phi), v - drift / L_phi)
    return v - (coupling.hstar_grad(v) / n + drift) / L_phi


def extrapolate(new, old, beta):
    return new + beta * (new - old)


def derived_mix_v(mix_lam_new, mix_lam_old, beta):
    """M v for the extrapolated v, from linearity (no extra communication)."""
    return (1.0 + beta) * mix_lam_new - beta * mix_lam_old


def inner_beta(mu_phi, L_phi, k):
    """Momentum: constant strongly convex form, or k/(k+3) when mu_phi = 0."""
    if mu_phi > 0:
        kappa = L_phi / mu_phi
        root = np.sqrt(kappa)
        return (root - 1.0) / (root + 1.0)
    return k / (k + 3.0)


def x_step_tolerance(scale, sigma_max, k, w_norm):
    """Summable inner tolerance schedule for the k-th x-step (k >= 1)."""
    tol = scale / (4.0 * max(sigma_max, 1e-300) * k * k)
    return max(tol, X_TOL_FLOOR * (1.0 + w_norm))


# ---------------------------------------------------------------------------
# Residuals and error bounds
# ---------------------------------------------------------------------------

def subproblem_residuals(sp, x, lam, mixed_lam=None, counters=None, ax_rows=None):
    """(r_x, r_lambda) = distances of (x, lam) to the stationarity conditions.

    r_x sums per-agent distances dist(0, grad f_i + A_i' lam_i + d g_i);
    r_lambda measures min over s in d(hbar*) of ||Ax - s - rho*(M lam) - z||.
    ``mixed_lam`` (= M lam) and ``ax_rows`` may be passed in to reuse values
    the solver already holds; they are recomputed otherwise.
    """
    problem = sp.problem
    lam = np.asarray(lam, dtype=float)
    if not all(problem.coupling.hstar_in_domain(lam[i]) for i in range(problem.n)):
        raise DomainError("multiplier block outside dom(h*)")
    xs = problem.split(x)
    parts = []
    for i, a in enumerate(problem.agents):
        parts.append(a.g.subdiff_dist(xs[i], a.f.grad(xs[i]) + a.A.T @ lam[i]))
    if counters is not None:
        counters.oracle_A += 1      # one synchronized grad f evaluation
        counters.oracle_B += 1      # one synchronized A' lam product
    if ax_rows is None:
        ax_rows = np.stack([a.A @ xi for a, xi in zip(problem.agents, xs)])
        if counters is not None:
            counters.oracle_B += 1
    u = ax_rows - sp.z
    if sp.rho > 0:
        if mixed_lam is None:
            mixed_lam = sp.mix.apply(lam, counters=counters)
        u = u - sp.rho * mixed_lam
    lam_parts = [
        problem.coupling.hstar_subdiff_dist(lam[i], -u[i], scale=1.0 / problem.n)
        for i in range(problem.n)
    ]
    if counters is not None:
        counters.oracle_B += 1      # one synchronized h* oracle evaluation
    return stacked_norm(parts), stacked_norm(lam_parts)


def error_bounds(r_x, r_lambda, consts):
    """Certified distances to the subproblem's saddle point.

    bound_lambda >= ||lam - lam*||, bound_x >= ||x - x*|| whenever the dual
    part is mu_H-strongly convex.
    """
    if consts.mu_H <= 0:
        raise ConfigError("error bounds need mu_H > 0 (strongly convex dual part)")
    if consts.mu_f <= 0:
        raise ConfigError("error bounds need mu_f > 0")
    s, mf, mh = consts.sigma_max_A, consts.mu_f, consts.mu_H
    bound_lambda = r_lambda / mh + s * r_x / (mf * mh)
    bound_x = s * r_lambda / (mf * mh) + (1.0 / mf + s * s / (mf * mf * mh)) * r_x
    return bound_x, bound_lambda


# ---------------------------------------------------------------------------
# Stopping rules
# ---------------------------------------------------------------------------

@dataclass
class ScStopping:
    """Accept when the certified bounds fall below sqrt of the error levels."""

    e_x: float
    e_lambda: float

    def accept(self, r_x, r_lambda, consts):
        bx, bl = error_bounds(r_x, r_lambda, consts)
        return bx * bx <= self.e_x and bl * bl <= self.e_lambda

    def residual_scale(self, consts):
        return min(np.sqrt(self.e_x) * consts.mu_f, np.sqrt(self.e_lambda) * consts.mu_H)


@dataclass
class ConvexStopping:
    """mu_H = 0 mode: raw multiplier residual plus the x-side bound via mu_f."""

    r_lambda_target: float
    e_x: float

    def accept(self, r_x, r_lambda, consts):
        return r_lambda <= self.r_lambda_target and (r_x / consts.mu_f) ** 2 <= self.e_x

    def residual_scale(self, consts):
        return min(np.sqrt(self.e_x) * consts.mu_f, self.r_lambda_target)


@dataclass
class RawStopping:
    """Plain residual targets (bootstrap solves and diagnostics)."""

    r_x_target: float
    r_lambda_target: float

    def accept(self, r_x, r_lambda, consts):
        return r_x <= self.r_x_target and r_lambda <= self.r_lambda_target

    def residual_scale(self, consts):
        return min(self.r_x_target, self.r_lambda_target)


@dataclass
class SubproblemSolution:
    x: np.ndarray
    lam: np.ndarray
    r_x: float
    r_lambda: float
    inner_iters: int
    gossip_apps: int
    mixed_lam: np.ndarray = None   # M lam at the accepted point (rho > 0 only)
    ax_rows: np.ndarray = None


# ---------------------------------------------------------------------------
# The solver
# ---------------------------------------------------------------------------

def idapg_solve(sp, init, stopping, inner_cap=200_000, argmin_cap=10_000,
                counters=None, mix_apply_fn=None, x_executor=None):
    """Accelerated primal-dual loop with residual-certified stopping.

    ``init`` is the warm start (x0, lam0).  When rho > 0 each iteration costs
    exactly one mixing application (K gossip rounds under Chebyshev mixing):
    the multiplier step reuses M v derived by linearity from the residual
    check's M lam.  ``mix_apply_fn`` lets the harness route gossip rounds
    through the simulated network; ``x_executor`` optionally runs the
    independent per-agent x-steps in parallel (results collected by agent
    index, so the output is bit-identical to the sequential path).
    """
    problem = sp.problem
    n, consts = problem.n, sp.consts
    rho, z, L_phi = sp.rho, sp.z, sp.consts.L_phi
    coupling = problem.coupling

    x = np.asarray(init[0], dtype=float).copy()
    lam = np.asarray(init[1], dtype=float).copy()
    gossip_apps = 0

    def mix_lambda(block):
        nonlocal gossip_apps
        gossip_apps += 1
        return sp.mix.apply(block, counters=counters, apply_fn=mix_apply_fn)

    xs = problem.split(x)
    ax_rows = np.stack([a.A @ xi for a, xi in zip(problem.agents, xs)])
    if counters is not None:
        counters.oracle_B += 1
    mix_lam = mix_lambda(lam) if rho > 0 else None
    r_x, r_lam = subproblem_residuals(sp, x, lam, mixed_lam=mix_lam,
                                      counters=counters, ax_rows=ax_rows)
    if stopping.accept(r_x, r_lam, consts):
        return SubproblemSolution(x, lam, r_x, r_lam, 0, gossip_apps,
                                  mixed_lam=mix_lam, ax_rows=ax_rows)

    scale = stopping.residual_scale(consts)
    v = lam.copy()
    mix_v = mix_lam
    best = (r_x + r_lam, x, lam, r_x, r_lam)

    for t in range(1, inner_cap + 1):
        # x-step: per-agent argmin against the tilt A_i' v_i
        jobs = []
        for i, a in enumerate(problem.agents):
            w_tilt = a.A.T @ v[i]
            tol_i = x_step_tolerance(scale, consts.sigma_max_A, t,
                                     float(np.linalg.norm(w_tilt)))
            jobs.append((a, w_tilt, tol_i, xs[i]))
        if x_executor is None:
            results = [local_argmin(a, w_tilt, tol_i, x0=x0, cap=argmin_cap)
                       for a, w_tilt, tol_i, x0 in jobs]
        else:
            futures = [x_executor.submit(local_argmin, a, w_tilt, tol_i,
                                         x0=x0, cap=argmin_cap)
                       for a, w_tilt, tol_i, x0 in jobs]
            results = [f.result() for f in futures]
        xs = [r[0] for r in results]
        max_evals = max(r[1] for r in results)
        x = problem.stack(xs)
        if counters is not None:
            counters.oracle_B += 1              # A' v products
            counters.oracle_A += max_evals      # synchronized argmin steps
        ax_rows = np.stack([a.A @ xi for a, xi in zip(problem.agents, xs)])
        if counters is not None:
            counters.oracle_B += 1

        # multiplier step against the drift rho*(M v) + z - Ax
        drift = rho * mix_v + z - ax_rows if rho > 0 else z - ax_rows
        lam_new = lambda_step(coupling, n, L_phi, v, drift)
        if counters is not None:
            counters.oracle_B += 1

        mix_lam_new = mix_lambda(lam_new) if rho > 0 else None
        r_x, r_lam = subproblem_residuals(sp, x, lam_new, mixed_lam=mix_lam_new,
                                          counters=counters, ax_rows=ax_rows)
        beta = inner_beta(consts.mu_H, L_phi, t - 1)
        v = extrapolate(lam_new, lam, beta)
        if rho > 0:
            mix_v = derived_mix_v(mix_lam_new, mix_lam, beta)
            mix_lam = mix_lam_new
        lam = lam_new
        if r_x + r_lam < best[0]:
            best = (r_x + r_lam, x, lam, r_x, r_lam)
        if stopping.accept(r_x, r_lam, consts):
            return SubproblemSolution(x, lam, r_x, r_lam, t, gossip_apps,
                                      mixed_lam=mix_lam, ax_rows=ax_rows)

    raise CapExceededError(
        f"subproblem cap {inner_cap} hit (best residuals r_x={best[3]:.3e}, "
        f"r_lambda={best[4]:.3e})",
        best=(best[1], best[2]), residual=(best[3], best[4]),
    )


# ---------------------------------------------------------------------------
# Smoothed-dual diagnostic (test paths only; forms a dense matrix square root)
# ---------------------------------------------------------------------------

def eval_F_rho(problem, gossip, rho, y, tol, inner_cap=500_000):
    """Value and gradient of the smoothed dual objective at the block y.

    Solves min over lam of H(lam) + <sqrt(C) y, lam> to the given residual
    tolerance and returns (value, -sqrt(C) lam+).  Never used by the
    production loops, which are square-root free by construction.
    """
    from .gossip import MixingOperator

    eigs, V = np.linalg.eigh(gossip.C)
    sqrtC = (V * np.sqrt(np.clip(eigs, 0.0, None))) @ V.T
    y = np.asarray(y, dtype=float)
    z = sqrtC @ y

    mix = MixingOperator(gossip)
    mu_H = problem.coupling.mu_hstar / problem.n
    L_phi = problem.max_term + rho * mix.lambda_max + problem.coupling.L_hstar / problem.n
    consts = SaddleConsts(mu_f=problem.mu_f, sigma_max_A=problem.sigma_max_A,
                          mu_H=mu_H, L_phi=L_phi)
    sp = SaddleSubproblem(problem, z, rho, mix, consts)
    x0 = np.zeros(problem.d)
    lam0 = np.zeros((problem.n, problem.p))
    sol = idapg_solve(sp, (x0, lam0), RawStopping(tol, tol), inner_cap=inner_cap)

    xs = problem.split(sol.x)
    value = ordered_sum(a.f.eval(xi) + a.g.eval(xi) for a, xi in zip(problem.agents, xs))
    value += ordered_sum(float(sol.lam[i] @ sol.ax_rows[i]) for i in range(problem.n))
    value -= ordered_sum(problem.coupling.hstar_eval(sol.lam[i]) for i in range(problem.n)) / problem.n
    if rho > 0:
        clam = sp.mix.apply(sol.lam)
        value -= 0.5 * rho * ordered_sum(float(sol.lam[i] @ clam[i]) for i in range(problem.n))
    value -= ordered_sum(float(sol.lam[i] @ z[i]) for i in range(problem.n))
    grad = -(sqrtC @ sol.lam)
    return float(value), grad
