"""One-sided truncated normal sampling that stays stable far into the tails."""

import numpy as np
from scipy.special import ndtr, ndtri

# standardized lower bounds beyond this use exponential rejection
TAIL_SWITCH = 4.0


def _lower_truncated_std(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw ``X ~ N(0, 1)`` conditioned on ``X > a``, elementwise."""
    out = np.empty_like(a)
    body = a <= TAIL_SWITCH
    if body.any():
        # inverse CDF on the upper tail: X = -Phi^{-1}(U * Phi(-a))
        # U in (0, 1): U = 0 would map to +inf
        u = (rng.integers(1, 2**53, size=int(body.sum())) + 0.0) / 2.0**53
        out[body] = -ndtri(u * ndtr(-a[body]))
    tail = ~body
    if tail.any():
        out[tail] = _exp_rejection(a[tail], rng)
    return out


def _exp_rejection(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Robert (1995) translated-exponential rejection sampler for ``X > a``."""
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    out = np.empty_like(a)
    todo = np.arange(a.size)
    while todo.size:
        x = a[todo] + rng.exponential(size=todo.size) / lam[todo]
        accept = rng.uniform(size=todo.size) <= np.exp(-0.5 * (x - lam[todo]) ** 2)
        out[todo[accept]] = x[accept]
        todo = todo[~accept]
    return out


def sample_truncnorm_onesided(mean, positive, rng: np.random.Generator, sd=1.0) -> np.ndarray:
    """Draw from ``N(mean, sd^2)`` truncated to ``(0, inf)`` where ``positive``
    is True and to ``(-inf, 0]`` elsewhere.
    """
    mean = np.asarray(mean, dtype=float)
    positive = np.broadcast_to(np.asarray(positive, dtype=bool), mean.shape)
    sd = np.broadcast_to(np.asarray(sd, dtype=float), mean.shape)
    # reflect the negative side so everything is a lower truncation
    sign = np.where(positive, 1.0, -1.0)
    a = -(sign * mean) / sd
    x = _lower_truncated_std(a.ravel(), rng).reshape(mean.shape)
    z = sign * (sign * mean + sd * x)
    # rounding at the boundary must not break z > 0 <=> positive
    return np.where(positive & (z <= 0), np.nextafter(0.0, 1.0), z)


def sample_truncnorm(mean, sd, lower, rng: np.random.Generator, upper=None) -> np.ndarray:
    """Normal draws truncated to ``(lower, inf)`` or, if ``upper`` given and
    ``lower`` is ``-inf``, to ``(-inf, upper)``. Used for scalar sign constraints.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.broadcast_to(np.asarray(sd, dtype=float), mean.shape)
    if upper is not None:
        # X < upper  <=>  -X > -upper
        return -sample_truncnorm(-mean, sd, -np.asarray(upper, dtype=float), rng)
    a = (np.broadcast_to(np.asarray(lower, dtype=float), mean.shape) - mean) / sd
    return mean + sd * _lower_truncated_std(a.astype(float).copy(), rng)
