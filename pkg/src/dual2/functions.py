"""Function oracles: smooth terms, proximal terms, and conjugate pairs.

Everything here is a plain container of callables plus the constants
(strong convexity / smoothness moduli) the solvers need.  All oracles are
pure functions of their inputs and safe to share across workers.
"""

import numpy as np

from .errors import DomainError

MU_FLOOR = 1e-12


def _check_finite(v, name="input"):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} contains non-finite components")
    return v


# ---------------------------------------------------------------------------
# Smooth strongly convex functions
# ---------------------------------------------------------------------------

class QuadraticFn:
    """f(x) = 0.5 x'Px + q'x with P symmetric positive definite.

    An optional ridge is added to P; the resulting smallest eigenvalue must
    stay above ``MU_FLOOR`` (strong convexity is assumed throughout).
    """

    def __init__(self, P, q, ridge=0.0):
        P = np.asarray(P, dtype=float)
        q = np.asarray(q, dtype=float)
        if P.shape[0] != P.shape[1] or P.shape[0] != q.shape[0]:
            raise DomainError("quadratic shape mismatch")
        if not np.allclose(P, P.T, atol=1e-10):
            raise DomainError("P must be symmetric")
        if ridge:
            P = P + ridge * np.eye(P.shape[0])
        eigs = np.linalg.eigvalsh(P)
        if eigs[0] < MU_FLOOR:
            raise DomainError(
                f"quadratic is not strongly convex (min eig {eigs[0]:.3e}); add a ridge"
            )
        self.P = P
        self.q = q
        self.dim = q.shape[0]
        self.mu = float(eigs[0])
        self.L = float(eigs[-1])

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * float(x @ (self.P @ x)) + float(self.q @ x)

    def grad(self, x):
        return self.P @ np.asarray(x, dtype=float) + self.q


class ScaledSquaredNorm:
    """f(x) = (beta/2) ||x||^2; mu = L = beta."""

    def __init__(self, beta, dim):
        if beta < MU_FLOOR:
            raise DomainError("beta must be positive")
        self.beta = float(beta)
        self.dim = int(dim)
        self.mu = float(beta)
        self.L = float(beta)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.beta * float(x @ x)

    def grad(self, x):
        return self.beta * np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# Proximal-friendly (possibly nonsmooth) functions
# ---------------------------------------------------------------------------

class ProxFn:
    """Base class: eval, closed-form prox, and exact subdifferential distance.

    ``subdiff_dist(x, v, scale)`` returns min_{s in d(g)(x)} ||v + scale*s||;
    the scale argument covers functions of the form scale*g without a wrapper.
    """

    kind = "custom"
    dim = None

    def eval(self, x):
        raise NotImplementedError

    def prox(self, alpha, v):
        raise NotImplementedError

    def subdiff_dist(self, x, v, scale=1.0):
        raise NotImplementedError

    def in_domain(self, x):
        return np.isfinite(self.eval(x))


class ZeroProx(ProxFn):
    kind = "zero"

    def __init__(self, dim):
        self.dim = int(dim)

    def eval(self, x):
        return 0.0

    def prox(self, alpha, v):
        return np.asarray(v, dtype=float).copy()

    def subdiff_dist(self, x, v, scale=1.0):
        return float(np.linalg.norm(np.asarray(v, dtype=float)))


class L1Prox(ProxFn):
    """g(x) = weight * ||x||_1 (soft-threshold prox)."""

    kind = "l1"

    def __init__(self, weight, dim):
        if weight < 0:
            raise DomainError("l1 weight must be nonnegative")
        self.weight = float(weight)
        self.dim = int(dim)

    def eval(self, x):
        return self.weight * float(np.sum(np.abs(np.asarray(x, dtype=float))))

    def prox(self, alpha, v):
        v = np.asarray(v, dtype=float)
        t = alpha * self.weight
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)

    def subdiff_dist(self, x, v, scale=1.0):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        w = scale * self.weight
        # nonzero coords: subgradient is w*sign(x); zeros: any point of [-w, w]
        d = np.where(x != 0.0, np.abs(v + w * np.sign(x)),
                     np.maximum(np.abs(v) - w, 0.0))
        return float(np.linalg.norm(d))


class BoxProx(ProxFn):
    """Indicator of the box [lower, upper]; prox is the projection."""

    kind = "box"

    def __init__(self, lower, upper):
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if lower.shape != upper.shape or np.any(lower > upper):
            raise DomainError("invalid box bounds")
        self.lower = lower
        self.upper = upper
        self.dim = lower.shape[0]

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        tol = 1e-9 * (1.0 + np.max(np.abs(self.upper - self.lower)))
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return np.inf
        return 0.0

    def prox(self, alpha, v):
        return np.clip(np.asarray(v, dtype=float), self.lower, self.upper)

    def subdiff_dist(self, x, v, scale=1.0):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if not np.isfinite(self.eval(x)):
            raise DomainError("point outside the box")
        # normal cone: (-inf,0] at the lower face, [0,inf) at the upper face
        at_lo = np.isclose(x, self.lower)
        at_hi = np.isclose(x, self.upper)
        d = np.abs(v)
        d = np.where(at_lo & ~at_hi, np.maximum(-v, 0.0), d)
        d = np.where(at_hi & ~at_lo, np.maximum(v, 0.0), d)
        d = np.where(at_lo & at_hi, 0.0, d)  # pinned coordinate: cone is all of R
        return float(np.linalg.norm(d))


class SingletonProx(ProxFn):
    """Indicator of the single point b; the subdifferential there is all of R^d."""

    kind = "singleton"

    def __init__(self, b):
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.dim = self.b.shape[0]

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        tol = 1e-9 * (1.0 + float(np.max(np.abs(self.b))))
        return 0.0 if np.all(np.abs(x - self.b) <= tol) else np.inf

    def prox(self, alpha, v):
        return self.b.copy()

    def subdiff_dist(self, x, v, scale=1.0):
        if not np.isfinite(self.eval(x)):
            raise DomainError("point differs from the singleton")
        return 0.0


class NonnegLinearProx(ProxFn):
    """g(x) = b'x + indicator(x >= 0); prox(alpha, v) = max(v - alpha*b, 0)."""

    kind = "halfspace_conj"

    def __init__(self, b):
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.dim = self.b.shape[0]

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < -1e-12):
            return np.inf
        return float(self.b @ x)

    def prox(self, alpha, v):
        return np.maximum(np.asarray(v, dtype=float) - alpha * self.b, 0.0)

    def subdiff_dist(self, x, v, scale=1.0):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        if np.any(x < -1e-12):
            raise DomainError("point outside the nonnegative orthant")
        u = v + scale * self.b
        # at interior coords the subgradient is b; at zero coords b + (-inf, 0],
        # so only the positive part of -(v + b) remains unreachable
        d = np.where(x > 0.0, np.abs(u), np.maximum(-u, 0.0))
        return float(np.linalg.norm(d))


class CustomProx(ProxFn):
    """User-supplied prox function; the subdifferential distance is mandatory."""

    kind = "custom"

    def __init__(self, dim, eval_fn, prox_fn, subdiff_fn):
        self.dim = int(dim)
        self._eval = eval_fn
        self._prox = prox_fn
        self._subdiff = subdiff_fn

    def eval(self, x):
        return self._eval(np.asarray(x, dtype=float))

    def prox(self, alpha, v):
        return self._prox(alpha, np.asarray(v, dtype=float))

    def subdiff_dist(self, x, v, scale=1.0):
        return self._subdiff(np.asarray(x, dtype=float), np.asarray(v, dtype=float), scale)


# ---------------------------------------------------------------------------
# Conjugate pairs for the coupling function
# ---------------------------------------------------------------------------

class ConjugatePair:
    """A coupling function h together with its conjugate h*.

    Exposes whichever of (gradient, prox) h* supports, its smoothness and
    strong-convexity moduli, and an exact distance to the subdifferential
    d(h*) which the residual computations rely on.  ``L_hstar`` refers to the
    smooth component only (0 for linear / linear-plus-cone conjugates).
    """

    dim = None
    mu_hstar = 0.0
    L_hstar = 0.0
    smooth = False      # h* differentiable everywhere
    proximal = False    # prox of alpha*h* in closed form

    def h_eval(self, z):
        raise NotImplementedError

    def hstar_eval(self, w):
        raise NotImplementedError

    def hstar_grad(self, w):
        raise DomainError("h* is not differentiable")

    def hstar_prox(self, alpha, v):
        raise DomainError("h* is not proximal-friendly")

    def hstar_subdiff_dist(self, lam, v, scale=1.0):
        """min over s in d(h*)(lam) of ||v + scale*s||."""
        raise NotImplementedError

    def hstar_in_domain(self, lam):
        return True


class QuadraticConjugate(ConjugatePair):
    """h(z) = ||z - y||^2 / (2 c)  <->  h*(w) = (c/2)||w||^2 + y'w."""

    def __init__(self, coef, y):
        self.coef = float(coef)
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        self.dim = self.y.shape[0]
        self.mu_hstar = self.coef
        self.L_hstar = self.coef
        self.smooth = True
        self.proximal = True

    def h_eval(self, z):
        r = np.asarray(z, dtype=float) - self.y
        return float(r @ r) / (2.0 * self.coef)

    def hstar_eval(self, w):
        w = np.asarray(w, dtype=float)
        return 0.5 * self.coef * float(w @ w) + float(self.y @ w)

    def hstar_grad(self, w):
        return self.coef * np.asarray(w, dtype=float) + self.y

    def hstar_prox(self, alpha, v):
        return (np.asarray(v, dtype=float) - alpha * self.y) / (1.0 + alpha * self.coef)

    def hstar_subdiff_dist(self, lam, v, scale=1.0):
        return float(np.linalg.norm(np.asarray(v, dtype=float) + scale * self.hstar_grad(lam)))


class ClippedQuadraticConjugate(ConjugatePair):
    """Conjugate of h(z) = ||z - y||^2 / (2 c) + indicator(z >= 0).

    Per coordinate: h*_j(w) = (c/2)w^2 + y_j w on w >= -y_j/c, and the
    constant -y_j^2/(2c) below the kink, so h* stays C^1 with a c-Lipschitz
    gradient that vanishes on the flat branch.
    """

    def __init__(self, coef, y):
        self.coef = float(coef)
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        self.dim = self.y.shape[0]
        self.mu_hstar = 0.0
        self.L_hstar = self.coef
        self.smooth = True
        self.proximal = False

    def h_eval(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z < -1e-12):
            return np.inf
        r = z - self.y
        return float(r @ r) / (2.0 * self.coef)

    def hstar_eval(self, w):
        w = np.asarray(w, dtype=float)
        active = w >= -self.y / self.coef
        vals = np.where(active,
                        0.5 * self.coef * w * w + self.y * w,
                        -self.y ** 2 / (2.0 * self.coef))
        return float(np.sum(vals))

    def hstar_grad(self, w):
        w = np.asarray(w, dtype=float)
        active = w >= -self.y / self.coef
        return np.where(active, self.coef * w + self.y, 0.0)

    def hstar_subdiff_dist(self, lam, v, scale=1.0):
        return float(np.linalg.norm(np.asarray(v, dtype=float) + scale * self.hstar_grad(lam)))


class LinearConjugate(ConjugatePair):
    """h = indicator({b})  <->  h*(w) = b'w."""

    def __init__(self, b):
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.dim = self.b.shape[0]
        self.mu_hstar = 0.0
        self.L_hstar = 0.0
        self.smooth = True
        self.proximal = True

    def h_eval(self, z):
        z = np.asarray(z, dtype=float)
        tol = 1e-9 * (1.0 + float(np.max(np.abs(self.b))))
        return 0.0 if np.all(np.abs(z - self.b) <= tol) else np.inf

    def hstar_eval(self, w):
        return float(self.b @ np.asarray(w, dtype=float))

    def hstar_grad(self, w):
        return self.b.copy()

    def hstar_prox(self, alpha, v):
        return np.asarray(v, dtype=float) - alpha * self.b

    def hstar_subdiff_dist(self, lam, v, scale=1.0):
        return float(np.linalg.norm(np.asarray(v, dtype=float) + scale * self.b))


class NonnegLinearConjugate(ConjugatePair):
    """h = indicator({z <= b})  <->  h*(lam) = b'lam + indicator(lam >= 0)."""

    def __init__(self, b):
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.dim = self.b.shape[0]
        self.mu_hstar = 0.0
        self.L_hstar = 0.0
        self.smooth = False
        self.proximal = True
        self._prox_fn = NonnegLinearProx(self.b)

    def h_eval(self, z):
        z = np.asarray(z, dtype=float)
        return 0.0 if np.all(z <= self.b + 1e-12) else np.inf

    def hstar_eval(self, lam):
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < -1e-12):
            return np.inf
        return float(self.b @ lam)

    def hstar_prox(self, alpha, v):
        return self._prox_fn.prox(alpha, v)

    def hstar_subdiff_dist(self, lam, v, scale=1.0):
        return self._prox_fn.subdiff_dist(lam, v, scale)

    def hstar_in_domain(self, lam):
        return bool(np.all(np.asarray(lam, dtype=float) >= -1e-12))
