"""Shared instance builders for the test suite."""

import numpy as np
import pytest

from dual2.functions import (
    L1Prox,
    LinearConjugate,
    QuadraticConjugate,
    QuadraticFn,
    ScaledSquaredNorm,
    ZeroProx,
)
from dual2.problem import AgentLocalProblem, ProblemInstance


def make_case1_instance(n=2, p=2, d_i=2, beta=1.0, l1_weight=0.0, conj_coef=2.0, seed=0):
    """Strongly-convex-conjugate instance: quadratic f_i, optional l1 g_i."""
    rng = np.random.default_rng(seed)
    agents = []
    for _ in range(n):
        A = rng.normal(size=(p, d_i))
        g = L1Prox(l1_weight, d_i) if l1_weight > 0 else ZeroProx(d_i)
        agents.append(AgentLocalProblem(ScaledSquaredNorm(beta, d_i), g, A))
    y = rng.normal(size=p)
    return ProblemInstance(agents, QuadraticConjugate(conj_coef, y), "hstar_strongly_convex")


def make_sharing_toy(a_vals, b):
    """Scalar resource sharing: f_i = (x_i - a_i)^2/2, sum x_i = b (case 2)."""
    agents = [
        AgentLocalProblem(QuadraticFn(np.eye(1), np.array([-ai])), ZeroProx(1),
                          np.ones((1, 1)))
        for ai in a_vals
    ]
    return ProblemInstance(agents, LinearConjugate(np.array([b])), "local_full_row_rank")


def sharing_solution(a_vals, b):
    a = np.asarray(a_vals, dtype=float)
    shift = (b - a.sum()) / len(a)
    return a + shift, np.array([-shift])


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
