"""Adaptive random-walk Metropolis with global scaling (Andrieu & Thoms, 2008,
algorithm 4) and a deterministic step-size sequence ``gamma_i = C / i**alpha``."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# alpha must lie in ((1 + LAMBDA)^-1, 1]
LAMBDA = 0.5


def step_size(i: int, C: float, alpha: float) -> float:
    """Adaptation weight at iteration ``i`` (1-based)."""
    if i < 1:
        raise ValidationError("adaptation iterations are 1-based")
    return C / i ** alpha


def accept_prob(logp_current: float, logp_proposal: float) -> float:
    """Metropolis acceptance probability for a symmetric proposal."""
    if not math.isfinite(logp_proposal):
        return 0.0
    diff = logp_proposal - logp_current
    return 1.0 if diff >= 0 else math.exp(diff)


@dataclass
class AdaptiveMetropolis:
    """Proposal state: running mean ``mu``, covariance ``cov`` and global log-scale."""

    dim: int
    C: float = 0.7
    alpha: float = 0.8
    target: float = 0.234
    init_sd: float = 0.1
    mu: np.ndarray = field(default=None)
    cov: np.ndarray = field(default=None)
    log_scale: float = 0.0
    n_adapt: int = 0

    def __post_init__(self):
        if not (1.0 / (1.0 + LAMBDA) < self.alpha <= 1.0):
            raise ValidationError(f"alpha must be in ({1 / (1 + LAMBDA):.3f}, 1], got {self.alpha}")
        if not 0.0 < self.target < 1.0:
            raise ValidationError("target acceptance must be in (0, 1)")
        if self.C <= 0:
            raise ValidationError("adaptation constant C must be positive")
        if self.cov is None:
            self.cov = np.eye(self.dim) * self.init_sd ** 2 / max(self.dim, 1)

    def start(self, x) -> None:
        self.mu = np.array(x, dtype=float)

    def _chol(self) -> np.ndarray:
        S = math.exp(self.log_scale) * self.cov
        S = 0.5 * (S + S.T)
        jitter = 1e-12 * max(float(np.mean(np.diag(S))), 1e-300)
        for _ in range(8):
            try:
                return np.linalg.cholesky(S + jitter * np.eye(self.dim))
            except np.linalg.LinAlgError:
                jitter *= 100
        return np.diag(np.sqrt(np.maximum(np.diag(S), 1e-300)))

    def propose(self, x, rng: np.random.Generator) -> np.ndarray:
        return x + self._chol() @ rng.standard_normal(self.dim)

    def adapt(self, x_new, alpha_acc: float) -> None:
        """Update scale, mean and covariance after one MH step."""
        self.n_adapt += 1
        gamma = step_size(self.n_adapt, self.C, self.alpha)
        self.log_scale += gamma * (alpha_acc - self.target)
        d = np.asarray(x_new, dtype=float) - self.mu
        self.mu = self.mu + gamma * d
        self.cov = self.cov + gamma * (np.outer(d, d) - self.cov)


def run_adaptive_metropolis(logpdf, x0, n_iter: int, rng: np.random.Generator, *,
                            C=0.7, alpha=0.8, target=0.234, adapt_until=None):
    """Sample a standalone target; returns ``(draws, accepted, sampler)``."""
    x = np.array(x0, dtype=float)
    am = AdaptiveMetropolis(dim=x.size, C=C, alpha=alpha, target=target)
    am.start(x)
    lp = logpdf(x)
    draws = np.empty((n_iter, x.size))
    accepted = np.zeros(n_iter, dtype=bool)
    adapt_until = n_iter if adapt_until is None else adapt_until
    for i in range(n_iter):
        y = am.propose(x, rng)
        lp_y = logpdf(y)
        a = accept_prob(lp, lp_y)
        if rng.uniform() < a:
            x, lp = y, lp_y
            accepted[i] = True
        if i < adapt_until:
            am.adapt(x, a)
        draws[i] = x
    return draws, accepted, am
