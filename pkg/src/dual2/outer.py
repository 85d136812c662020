"""Outer accelerated loops over the smoothed dual: iD2A and MiD2A.

Both drivers run the same recursion; MiD2A replaces the gossip matrix with
its Chebyshev polynomial, so every mixing application costs K communication
rounds but the effective condition number drops to at most 4.  The loop
alternates an inexact saddle subproblem solve, a mixing step on the
accepted multiplier block, and extrapolation:

    w <- z + (M lam) / L_F,       z <- w + beta (w - w_prev).

Parameter derivation (smoothness/strong convexity of the smoothed dual,
condition numbers, the near-optimal rho), the error schedules, and the
computable initial error levels all live here.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, DomainError
from .gossip import MixingOperator
from .problem import CASE_GENERAL, CASE_GLOBAL_RANK, CASE_HSTAR_SC, CASE_LOCAL_RANK, \
    kkt_residual, ordered_sum
from .saddle import (
    ConvexStopping,
    RawStopping,
    SaddleConsts,
    SaddleSubproblem,
    ScStopping,
    extrapolate,
    idapg_solve,
    subproblem_residuals,
)
from .trace import Counters, RunTrace, TraceRow

MODE_SC = "strongly_convex"
MODE_CONVEX = "convex"


@dataclass(frozen=True)
class RateParams:
    """Curvature constants of one (problem, mixing, rho) configuration."""

    mu_H: float
    L_H: float
    mu_F: float
    L_F: float
    kappa_F: float
    case_tag: str
    rho: float


def rate_params_from_constants(case_tag, max_term, L_hstar_over_n, mu_hstar_over_n,
                               min_term, lam_max, lam_min_nz, rho):
    """Assemble the rate constants from raw scalars.

    mu_H per case: the conjugate's modulus over n, the per-agent singular
    value floor, or (full-row-rank A with rho > 0) the practical surrogate
    rho * lam_max, under which the stacked-coupling eigenvalue never needs
    to be computed and kappa_F reduces to the closed forms 2*kappa_C at the
    near-optimal rho.
    """
    if rho < 0:
        raise DomainError("rho must be nonnegative")
    L_H = max_term + rho * lam_max + L_hstar_over_n
    if case_tag == CASE_HSTAR_SC:
        mu_H = mu_hstar_over_n
    elif case_tag == CASE_LOCAL_RANK:
        mu_H = min_term
    elif case_tag == CASE_GLOBAL_RANK:
        if rho <= 0:
            raise ConfigError("rho > 0 is the only option for this case")
        mu_H = rho * lam_max
    elif case_tag == CASE_GENERAL:
        mu_H = 0.0
    else:
        raise DomainError(f"unknown case tag {case_tag!r}")
    mu_F = lam_min_nz / L_H
    denom = max(rho, mu_H / lam_max)
    L_F = 1.0 / denom if denom > 0 else math.inf
    kappa_F = L_F / mu_F if (mu_F > 0 and math.isfinite(L_F)) else math.inf
    return RateParams(mu_H=mu_H, L_H=L_H, mu_F=mu_F, L_F=L_F, kappa_F=kappa_F,
                      case_tag=case_tag, rho=rho)


def compute_case_params(problem, mix, rho):
    """RateParams for a problem against the spectra of the active mixing."""
    if problem.case_tag == CASE_GENERAL and rho <= 0:
        raise ConfigError("rho > 0 is the only option without curvature in h* or A")
    return rate_params_from_constants(
        problem.case_tag,
        problem.max_term,
        problem.coupling.L_hstar / problem.n,
        problem.coupling.mu_hstar / problem.n,
        problem.min_term,
        mix.lambda_max,
        mix.lambda_min_nz,
        rho,
    )


def choose_rho(problem, mix, policy):
    """Resolve the rho policy: 0, the near-optimal value, or an explicit one."""
    if policy == "zero":
        if problem.case_tag in (CASE_GLOBAL_RANK, CASE_GENERAL):
            raise ConfigError(
                f"rho = 0 unsupported for {problem.case_tag}: rho > 0 is the only option"
            )
        return 0.0
    if policy == "optimal":
        return (problem.max_term + problem.coupling.L_hstar / problem.n) / mix.lambda_max
    rho = float(policy)
    if rho < 0:
        raise ConfigError("explicit rho must be nonnegative")
    if rho == 0.0:
        return choose_rho(problem, mix, "zero")
    return rho


def beta_schedule(mode, kappa_F, k):
    if mode == MODE_CONVEX:
        return k / (k + 3.0)
    if kappa_F < 1.0:
        raise DomainError("kappa_F must be at least 1")
    root = math.sqrt(kappa_F)
    return (root - 1.0) / (root + 1.0)


def consensus_energy(lam, mixed):
    """<lam, M lam> accumulated in agent order (nonnegative up to roundoff)."""
    return ordered_sum(float(lam[i] @ mixed[i]) for i in range(lam.shape[0]))


def _warm_consensus_sq(warm, mix):
    """<lam, M lam> of the warm solve, without extra communication.

    When rho > 0 the solver already holds M lam from its residual check; for
    rho = 0 nothing was mixed, so the valid upper bound lam_max ||lam||^2
    stands in (the level only needs to upper-bound the theoretical value).
    """
    if warm.mixed_lam is not None:
        return max(consensus_energy(warm.lam, warm.mixed_lam), 0.0)
    return mix.lambda_max * float(np.sum(warm.lam * warm.lam))


def initial_error_levels(problem, params, theta_lambda, warm, mix, floor=1e-30):
    """Computable first error levels for the strongly convex schedules.

    Uses the warm solve of the z = 0 subproblem: its residuals and its
    consensus energy <lam, M lam> upper-bound the initial dual suboptimality,
    scaled into the first multiplier error level; the x level follows by the
    fixed coupling ratio sigma_max(A)^2 / mu_f^2.
    """
    if params.mu_H <= 0:
        raise ConfigError("initial error levels require mu_H > 0")
    cons_sq = _warm_consensus_sq(warm, mix)
    resid = warm.r_lambda + problem.sigma_max_A * warm.r_x / problem.mu_f
    c_bound = (cons_sq + (mix.lambda_max / params.mu_H ** 2) * resid ** 2) / (2.0 * params.mu_F)
    gap_term = (math.sqrt(theta_lambda) - math.sqrt(1.0 - 1.0 / math.sqrt(params.kappa_F))) ** 2
    e_lambda_1 = (params.mu_F / mix.lambda_max) * gap_term * c_bound
    e_lambda_1 = max(e_lambda_1, floor)
    e_x_1 = max((problem.sigma_max_A ** 2 / problem.mu_f ** 2) * e_lambda_1, floor)
    return e_x_1, e_lambda_1


def convex_initial_levels(problem, warm, mix, floor=1e-30):
    """(eps_1, e_x_1) for the convex-mode polynomial schedules.

    eps_1 proxies the initial gradient norm of the smoothed dual by the warm
    solve's consensus energy plus its multiplier residual; e_x_1 is the
    certified x distance at the warm point.
    """
    cons_sq = _warm_consensus_sq(warm, mix)
    eps_1 = max(math.sqrt(cons_sq) + warm.r_lambda, floor)
    e_x_1 = max((warm.r_x / problem.mu_f) ** 2, floor)
    return eps_1, e_x_1


# ---------------------------------------------------------------------------
# Config and driver
# ---------------------------------------------------------------------------

@dataclass
class OuterConfig:
    mode: str = "auto"                 # auto | strongly_convex | convex
    rho_policy: object = "optimal"     # "zero" | "optimal" | explicit float
    c: float = 2.0                     # schedule slack constant (> 1)
    delta: float = 1.0                 # convex-mode decay exponent (> 0)
    max_outer: int = 1000
    target_gap: float = None           # stop when gap <= target (needs x_star)
    target_kkt: float = None           # fallback stop on KKT residuals
    x_star: object = None
    dense_pk_spectra: bool = False
    store_iterates: bool = False
    inner_cap: int = 200_000
    argmin_cap: int = 10_000
    bootstrap_factor: float = 100.0
    divergence_factor: float = 10.0
    divergence_patience: int = 50
    error_floor: float = 1e-30

    def __post_init__(self):
        if self.c <= 1.0:
            raise ConfigError("c must exceed 1")
        if self.delta <= 0.0:
            raise ConfigError("delta must be positive")


def resolve_mode(config_mode, case_tag):
    if config_mode == "auto":
        return MODE_CONVEX if case_tag == CASE_GENERAL else MODE_SC
    if config_mode not in (MODE_SC, MODE_CONVEX):
        raise ConfigError(f"unknown mode {config_mode!r}")
    if config_mode == MODE_SC and case_tag == CASE_GENERAL:
        raise ConfigError("strongly convex mode unavailable for a general convex instance")
    return config_mode


def w_z_update(z, w, mixed, L_F, beta):
    """One outer mixing/extrapolation step (elementwise, shared with the harness)."""
    w_new = z + mixed / L_F
    z_new = extrapolate(w_new, w, beta)
    return w_new, z_new


def id2a(problem, gossip, config, counters=None, runtime=None):
    """Inexact accelerated loop with the plain gossip matrix as mixing."""
    return _run_outer(problem, gossip, config, chebyshev=False,
                      counters=counters, runtime=runtime)


def mid2a(problem, gossip, config, counters=None, runtime=None):
    """Multi-consensus variant: Chebyshev-polynomial mixing, K rounds per apply."""
    return _run_outer(problem, gossip, config, chebyshev=True,
                      counters=counters, runtime=runtime)


def _run_outer(problem, gossip, config, chebyshev, counters=None, runtime=None):
    counters = counters if counters is not None else Counters()
    mix_apply_fn = runtime.mix_apply if runtime is not None else None
    x_executor = runtime.x_executor if runtime is not None else None

    mix = MixingOperator(gossip, chebyshev=chebyshev,
                         dense_spectra=config.dense_pk_spectra)
    rho = choose_rho(problem, mix, config.rho_policy)
    params = compute_case_params(problem, mix, rho)
    mode = resolve_mode(config.mode, problem.case_tag)
    if mode == MODE_SC and params.mu_H <= 0:
        raise ConfigError("strongly convex mode needs mu_H > 0")

    n, p = problem.n, problem.p
    x = np.zeros(problem.d)
    lam = np.zeros((n, p))
    w = np.zeros((n, p))
    z = np.zeros((n, p))
    trace = RunTrace()
    if config.max_outer == 0:
        return x, trace

    consts = SaddleConsts(mu_f=problem.mu_f, sigma_max_A=problem.sigma_max_A,
                          mu_H=params.mu_H, L_phi=params.L_H)
    solve = lambda sp, init, stopping: idapg_solve(
        sp, init, stopping, inner_cap=config.inner_cap, argmin_cap=config.argmin_cap,
        counters=counters, mix_apply_fn=mix_apply_fn, x_executor=x_executor)

    # Bootstrap: a loose solve of the z = 0 subproblem seeds the error levels
    # and warm-starts the first iteration.
    sp0 = SaddleSubproblem(problem, z, rho, mix, consts)
    r_x0, r_lam0 = subproblem_residuals(sp0, x, lam, mixed_lam=np.zeros((n, p)),
                                        counters=counters)
    # one residual may vanish at the origin; floor both targets by a fraction
    # of the joint scale so the loose bootstrap stays loose
    s0 = max(r_x0, r_lam0, 1e-12)
    boot = RawStopping(max(r_x0, 1e-3 * s0) / config.bootstrap_factor,
                       max(r_lam0, 1e-3 * s0) / config.bootstrap_factor)
    warm = solve(sp0, (x, lam), boot)
    x, lam = warm.x, warm.lam

    theta = None
    if mode == MODE_SC:
        theta = 1.0 - 1.0 / (config.c * math.sqrt(params.kappa_F))
        e_x_1, e_lambda_1 = initial_error_levels(
            problem, params, theta, warm, mix, floor=config.error_floor)
    else:
        eps_1, e_x_1 = convex_initial_levels(
            problem, warm, mix, floor=config.error_floor)

    trace.meta.update({
        "mode": mode, "rho": rho, "kappa_F": params.kappa_F,
        "rounds_per_apply": mix.rounds_per_apply,
        "bootstrap_gossip_apps": warm.gossip_apps,
        "bootstrap_comm_rounds": counters.comm_rounds,
    })

    gap_den = None
    if config.x_star is not None:
        gap_den = max(float(np.linalg.norm(config.x_star)), 1e-300)

    baseline = None
    streak = 0
    for k in range(config.max_outer):
        if mode == MODE_SC:
            stopping = ScStopping(e_x_1 * theta ** k, e_lambda_1 * theta ** k)
        else:
            eps_k1 = eps_1 / (k + 1.0) ** (2.0 + config.delta)
            stopping = ConvexStopping(eps_k1 / math.sqrt(mix.lambda_max),
                                      e_x_1 / (k + 1.0) ** 2)
        sp = SaddleSubproblem(problem, z, rho, mix, consts)
        sol = solve(sp, (x, lam), stopping)
        x, lam = sol.x, sol.lam

        mixed = mix.apply(lam, counters=counters, apply_fn=mix_apply_fn)
        beta = beta_schedule(mode, params.kappa_F, k)
        w, z = w_z_update(z, w, mixed, params.L_F, beta)
        if runtime is not None:
            runtime.sync(problem, x, lam, w, z)

        cons = math.sqrt(max(consensus_energy(lam, mixed), 0.0))
        lam_bar = sum_rows(lam) / n
        primal, dual = kkt_residual(problem, x, lam_bar)
        gap = float(np.linalg.norm(x - config.x_star)) / gap_den if gap_den else math.nan
        trace.append(TraceRow(
            k=k, gap=gap, primal_res=primal, dual_res=dual, consensus_res=cons,
            comm_rounds=counters.comm_rounds, oracle_A=counters.oracle_A,
            oracle_B=counters.oracle_B, inner_iters=sol.inner_iters,
            r_x=sol.r_x, r_lambda=sol.r_lambda, gossip_apps=sol.gossip_apps,
            rounds_per_apply=mix.rounds_per_apply, z=z.copy(),
            x=x.copy() if config.store_iterates else None,
        ))

        if config.target_gap is not None and gap_den and gap <= config.target_gap:
            break
        if config.target_kkt is not None and max(primal, dual) <= config.target_kkt:
            break

        metric = gap if gap_den else primal + dual
        if baseline is None:
            baseline = metric
        if metric > config.divergence_factor * baseline:
            streak += 1
            if streak >= config.divergence_patience:
                raise DivergenceError(
                    f"metric grew {config.divergence_factor}x above its start for "
                    f"{streak} consecutive iterations")
        else:
            streak = 0
    return x, trace


def sum_rows(block):
    acc = np.zeros(block.shape[1])
    for i in range(block.shape[0]):
        acc = acc + block[i]
    return acc
