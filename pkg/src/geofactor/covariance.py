"""Correlation kernels, Kronecker-structured covariance assembly and the
canonical-partial-correlation parameterization of correlation matrices."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-6


def exp_correlation(u, phi):
    """Exponential correlation ``exp(-u / phi)``."""
    if not np.all(np.asarray(phi) > 0):
        raise ValidationError(f"scale phi must be positive, got {phi}")
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValidationError("distances must be non-negative")
    return np.exp(-u / phi)


def distance_matrix(coords_a, coords_b=None) -> np.ndarray:
    coords_a = np.asarray(coords_a, dtype=float)
    coords_b = coords_a if coords_b is None else np.asarray(coords_b, dtype=float)
    return cdist(coords_a, coords_b)


def gp_cov_matrix(coords, phi, dist=None) -> np.ndarray:
    """Unit-variance covariance of one GP at ``coords``."""
    d = distance_matrix(coords) if dist is None else dist
    return exp_correlation(d, phi)


def gp_cross_cov(coords_new, coords, phi) -> np.ndarray:
    return exp_correlation(distance_matrix(coords_new, coords), phi)


def robust_cholesky(A: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Lower Cholesky factor, adding diagonal jitter if plain factorization fails.

    Jitter starts at 1e-10 times the mean diagonal and grows tenfold up to
    1e-6 before giving up.
    """
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    scale = float(np.mean(np.diag(A)))
    if not np.isfinite(scale) or scale <= 0:
        raise NumericalError(f"{what} matrix has a non-positive or non-finite diagonal")
    jitter = JITTER_START
    while jitter <= JITTER_MAX * (1 + 1e-9):
        try:
            L = np.linalg.cholesky(A + jitter * scale * np.eye(A.shape[0]))
            log.debug("cholesky of %s needed jitter %.1e", what, jitter)
            return L
        except np.linalg.LinAlgError:
            jitter *= 10
    raise NumericalError(f"{what} matrix is not positive definite even with jitter {JITTER_MAX:g}")


@dataclass(frozen=True)
class FactorCovariance:
    """Covariance of the stacked factors (without the covariate mean) and its factor."""

    cov: np.ndarray
    chol: np.ndarray

    def logpdf(self, x) -> float:
        """Log density of ``N(0, cov)`` at ``x``."""
        w = solve_triangular(self.chol, x, lower=True, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(self.chol)))
        return -0.5 * (w @ w + logdet + x.size * np.log(2 * np.pi))

    def solve(self, b) -> np.ndarray:
        w = solve_triangular(self.chol, b, lower=True, check_finite=False)
        return solve_triangular(self.chol, w, lower=True, trans="T", check_finite=False)


def residual_cov(D, R) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    return D[:, None] * np.asarray(R) * D[None, :]


def factor_cov_matrix(T, gp_covs, D, R, n: int) -> np.ndarray:
    """``(T x I) Sigma_psi (T' x I) + (D R D) x I_n`` for the stacked factors.

    ``gp_covs`` lists the ``g`` unit-variance GP covariances (the diagonal
    blocks of the direct sum). Assembled as ``sum_l (t_l t_l') x Sigma_l``.
    """
    T = np.asarray(T, dtype=float)
    m = T.shape[0]
    if T.shape[1] != len(gp_covs):
        raise ValidationError(f"T has {T.shape[1]} columns but {len(gp_covs)} GP matrices given")
    cov = np.kron(residual_cov(D, R), np.eye(n))
    for col, S in enumerate(gp_covs):
        t = T[:, col]
        if S.shape != (n, n):
            raise ValidationError(f"GP covariance {col} has shape {S.shape}, expected ({n}, {n})")
        cov += np.kron(np.outer(t, t), S)
    assert cov.shape == (m * n, m * n)
    return cov


def factor_cov(T, gp_covs, D, R, n: int) -> FactorCovariance:
    cov = factor_cov_matrix(T, gp_covs, D, R, n)
    return FactorCovariance(cov=cov, chol=robust_cholesky(cov, "factor"))


def marginal_z_moments(c, A, B, X, T, gp_covs, D, R):
    """Mean and covariance of the stacked auxiliary variables with factors integrated out.

    Returns ``mu_z`` (length nq, item-major) and ``Sigma_z`` (nq x nq),
    including the unit noise of the probit link.
    """
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float)
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    q, m = A.shape
    if c.shape != (q,):
        raise ValidationError(f"c has shape {c.shape}, expected ({q},)")
    B = np.zeros((X.shape[1], m)) if B is None else np.asarray(B, dtype=float)
    if B.shape != (X.shape[1], m):
        raise ValidationError(f"B has shape {B.shape}, expected ({X.shape[1]}, {m})")
    mean = c[None, :] + X @ B @ A.T  # (n, q)
    mu = mean.T.ravel()
    T = np.asarray(T, dtype=float).reshape(m, -1)
    cov = np.kron(A @ residual_cov(D, R) @ A.T, np.eye(n))
    for col, S in enumerate(gp_covs):
        at = A @ T[:, col]
        cov += np.kron(np.outer(at, at), S)
    cov += np.eye(n * q)
    return mu, cov


def lkj_log_density(R, eta: float) -> float:
    """Unnormalized LKJ log density ``(eta - 1) log det R``."""
    R = np.asarray(R, dtype=float)
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("LKJ density needs a positive definite matrix") from exc
    return (eta - 1.0) * 2.0 * float(np.sum(np.log(np.diag(L))))


def _n_from_free(k: int) -> int:
    m = int(round((1 + np.sqrt(1 + 8 * k)) / 2))
    if m * (m - 1) // 2 != k:
        raise ValidationError(f"{k} is not a valid number of free correlation parameters")
    return m


def cpc_cholesky(nu, m: int | None = None):
    """Cholesky factor W of the correlation matrix given unconstrained ``nu``.

    Canonical partial correlations ``z = tanh(nu)`` fill the strictly lower
    triangle row by row. Returns ``(W, z)`` with ``z`` as an (m, m) array.
    """
    nu = np.asarray(nu, dtype=float).ravel()
    if m is None:
        m = _n_from_free(nu.size)
    elif nu.size != m * (m - 1) // 2:
        raise ValidationError(f"expected {m * (m - 1) // 2} free correlation parameters")
    z = np.zeros((m, m))
    z[np.tril_indices(m, -1)] = np.tanh(nu)
    W = np.zeros((m, m))
    W[0, 0] = 1.0
    for i in range(1, m):
        rem = 1.0
        for j in range(i):
            W[i, j] = z[i, j] * np.sqrt(rem)
            rem -= W[i, j] ** 2
        W[i, i] = np.sqrt(max(rem, 0.0))
    return W, z


def cpc_transform(nu, m: int | None = None) -> np.ndarray:
    """Map ``m(m-1)/2`` reals to an ``m x m`` correlation matrix."""
    W, _ = cpc_cholesky(nu, m)
    R = W @ W.T
    np.fill_diagonal(R, 1.0)
    return R


def cpc_inverse(R) -> np.ndarray:
    """Recover the unconstrained parameters of a correlation matrix."""
    R = np.asarray(R, dtype=float)
    m = R.shape[0]
    try:
        W = np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise ValidationError("cpc_inverse needs a positive definite correlation matrix") from exc
    out = []
    for i in range(1, m):
        rem = 1.0
        for j in range(i):
            zij = W[i, j] / np.sqrt(rem)
            out.append(zij)
            rem -= W[i, j] ** 2
    # rows of tril_indices are visited row by row, matching the loop above
    return np.arctanh(np.clip(out, -1 + 1e-16, 1 - 1e-16)) if out else np.zeros(0)


def cpc_log_jacobian(nu, m: int | None = None) -> float:
    """Log |d vech(R) / d nu| for the map of ``cpc_transform``.

    Chain of three triangular maps: ``nu -> z`` (tanh), ``z -> W`` and
    ``W -> R``; each has a diagonal Jacobian in a suitable ordering.
    """
    nu = np.asarray(nu, dtype=float).ravel()
    if nu.size == 0:
        return 0.0
    W, z = cpc_cholesky(nu, m)
    m = W.shape[0]
    total = 0.0
    for i in range(1, m):
        rem = 1.0
        for j in range(i):
            total += np.log1p(-z[i, j] ** 2) + 0.5 * np.log(rem)
            rem -= W[i, j] ** 2
    for j in range(m):
        total += (m - 1 - j) * np.log(W[j, j])
    return float(total)
