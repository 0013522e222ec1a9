"""Generative simulator and brute-force oracles for small instances.

The oracles assemble covariances from explicit block matrices and share
nothing with the sampler's Kronecker assembly except the correlation kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.linalg import block_diag
from scipy.special import log_ndtr

from .covariance import distance_matrix, exp_correlation
from .errors import NumericalError, ValidationError
from .model import Dataset, ModelSpec, standardize_covariates
from .sampler import STREAM_SIMULATOR, make_rng

ORACLE_MAX_DIM = 200


@dataclass(frozen=True)
class TrueParams:
    """Parameter values used to generate data (constraint-resolved ``A``)."""

    c: np.ndarray
    A: np.ndarray
    T: np.ndarray
    phi: np.ndarray
    B: np.ndarray | None = None
    R: np.ndarray | None = None
    D: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        q, m = A.shape
        c = np.asarray(self.c, dtype=float).ravel()
        if c.shape != (q,):
            raise ValidationError(f"c must have {q} entries")
        T = np.asarray(self.T, dtype=float).reshape(m, -1)
        phi = np.asarray(self.phi, dtype=float).ravel()
        if phi.size != T.shape[1]:
            raise ValidationError("one scale per Gaussian process is required")
        if np.any(phi <= 0):
            raise ValidationError("GP scales must be positive")
        B = np.zeros((0, m)) if self.B is None else np.asarray(self.B, dtype=float).reshape(-1, m)
        R = np.eye(m) if self.R is None else np.asarray(self.R, dtype=float)
        D = np.ones(m) if self.D is None else np.asarray(self.D, dtype=float).ravel()
        for name, val in (("c", c), ("A", A), ("T", T), ("phi", phi), ("B", B), ("R", R), ("D", D)):
            object.__setattr__(self, name, val)

    @property
    def q(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def g(self) -> int:
        return self.T.shape[1]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("c", "A", "T", "phi", "B", "R", "D")}

    @classmethod
    def from_dict(cls, d: dict) -> "TrueParams":
        return cls(**{k: np.asarray(v, dtype=float) for k, v in d.items()})


def simulate_latent(params: TrueParams, coords, X, rng: np.random.Generator) -> dict:
    """Draw ``psi``, ``v``, ``theta``, ``z`` from the generative model."""
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    m, g = params.m, params.g
    d = distance_matrix(coords)
    psi = np.zeros((g, n))
    for col in range(g):
        S = exp_correlation(d, params.phi[col])
        L = np.linalg.cholesky(S + 1e-12 * np.eye(n))
        psi[col] = L @ rng.standard_normal(n)
    Sv = np.diag(params.D) @ params.R @ np.diag(params.D)
    v = (np.linalg.cholesky(Sv) @ rng.standard_normal((m, n)))
    mean = (X @ params.B).T if X.shape[1] else np.zeros((m, n))
    theta = mean + params.T @ psi + v
    z = params.c[None, :] + theta.T @ params.A.T + rng.standard_normal((n, params.q))
    return {"psi": psi, "v": v, "theta": theta, "z": z}


def simulate_dataset(spec: ModelSpec | None, params: TrueParams, coords, seed: int,
                     missing_policy: dict | None = None, X_raw=None, return_latent: bool = False):
    """Simulate binary responses at ``coords``.

    ``missing_policy`` blanks ``items`` (column indices) for a random
    ``fraction`` of locations, mimicking questions that only apply to some
    households. If ``X_raw`` is None and the model has covariates, standard
    normal covariates are drawn and standardized.
    """
    rng = make_rng(seed, STREAM_SIMULATOR)
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    p = params.B.shape[0]
    if spec is not None:
        if spec.q != params.q or spec.m != params.m or spec.g != params.g:
            raise ValidationError("true parameters do not conform to the model spec")
    if p:
        if X_raw is None:
            X_raw = rng.standard_normal((n, p))
        X, means, sds = standardize_covariates(X_raw)
    else:
        X, means, sds = np.zeros((n, 0)), None, None
    lat = simulate_latent(params, coords, X, rng)
    y = (lat["z"] > 0).astype(float)
    mask = np.ones_like(y, dtype=bool)
    if missing_policy:
        items = np.asarray(missing_policy.get("items", []), dtype=int)
        frac = float(missing_policy.get("fraction", 0.0))
        k = int(round(frac * n))
        rows = np.sort(rng.choice(n, size=k, replace=False)) if k else np.zeros(0, dtype=int)
        if items.size and rows.size:
            mask[np.ix_(rows, items)] = False
    y[~mask] = np.nan
    ds = Dataset(y=y, obs_mask=mask, coords=coords, X=X, x_means=means, x_sds=sds)
    if return_latent:
        return ds, lat
    return ds


@dataclass
class OracleResult:
    """Joint Gaussian moments with named index blocks, or scalar posterior moments."""

    mean: np.ndarray
    cov: np.ndarray
    blocks: dict = field(default_factory=dict)
    mc_se: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def marginal(self, name: str):
        idx = self.blocks[name]
        return self.mean[idx], self.cov[np.ix_(idx, idx)]

    def conditional(self, target: str, given: str, value):
        """Moments of ``target`` given ``given = value`` by Schur complement."""
        ti, gi = self.blocks[target], self.blocks[given]
        Sgg = self.cov[np.ix_(gi, gi)]
        Stg = self.cov[np.ix_(ti, gi)]
        K = np.linalg.solve(Sgg, Stg.T).T
        mean = self.mean[ti] + K @ (np.asarray(value, dtype=float) - self.mean[gi])
        cov = self.cov[np.ix_(ti, ti)] - K @ Stg.T
        return mean, 0.5 * (cov + cov.T)


def joint_gaussian_oracle(params: TrueParams, coords, X=None, new_coords=None,
                          new_X=None) -> OracleResult:
    """Exact joint moments of ``(z, theta, theta_new)`` by explicit block algebra.

    Independent sources ``s = (psi over all sites, v, v_new, eps)`` have a
    block-diagonal covariance; every modelled quantity is ``G s + mean``.
    """
    coords = np.asarray(coords, dtype=float)
    n = coords.shape[0]
    new_coords = np.zeros((0, 2)) if new_coords is None else np.asarray(new_coords, dtype=float)
    nn = new_coords.shape[0]
    m, g, q = params.m, params.g, params.q
    total = n * q + m * n + m * nn
    if total > ORACLE_MAX_DIM:
        raise ValidationError(f"oracle dimension {total} exceeds cap {ORACLE_MAX_DIM}")
    X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float)
    new_X = np.zeros((nn, X.shape[1])) if new_X is None else np.asarray(new_X, dtype=float)

    sites = np.vstack([coords, new_coords])
    N = n + nn
    d = distance_matrix(sites)
    psi_cov = block_diag(*[exp_correlation(d, params.phi[k]) for k in range(g)]) if g else np.zeros((0, 0))
    Sv = np.diag(params.D) @ params.R @ np.diag(params.D)
    src_cov = block_diag(psi_cov, np.kron(Sv, np.eye(n)), np.kron(Sv, np.eye(nn)), np.eye(n * q))
    n_src = src_cov.shape[0]

    # selection of observed / new sites from the stacked psi (g blocks of N)
    sel_obs = np.zeros((g * n, g * N))
    sel_new = np.zeros((g * nn, g * N))
    for k in range(g):
        sel_obs[k * n:(k + 1) * n, k * N:k * N + n] = np.eye(n)
        sel_new[k * nn:(k + 1) * nn, k * N + n:(k + 1) * N] = np.eye(nn)
    off_v = g * N
    off_vn = off_v + m * n
    off_e = off_vn + m * nn

    G_theta = np.zeros((m * n, n_src))
    G_theta[:, :g * N] = np.kron(params.T, np.eye(n)) @ sel_obs
    G_theta[:, off_v:off_vn] = np.eye(m * n)
    G_new = np.zeros((m * nn, n_src))
    if nn:
        G_new[:, :g * N] = np.kron(params.T, np.eye(nn)) @ sel_new
        G_new[:, off_vn:off_e] = np.eye(m * nn)
    G_z = np.kron(params.A, np.eye(n)) @ G_theta
    G_z[:, off_e:] += np.eye(n * q)

    G = np.vstack([G_z, G_theta, G_new])
    cov = G @ src_cov @ G.T

    mean_theta = np.concatenate([X @ params.B[:, k] for k in range(m)]) if X.shape[1] else np.zeros(m * n)
    mean_new = (np.concatenate([new_X @ params.B[:, k] for k in range(m)])
                if X.shape[1] else np.zeros(m * nn))
    mean_z = np.kron(np.eye(q), np.ones((n, 1))) @ params.c + np.kron(params.A, np.eye(n)) @ mean_theta
    mean = np.concatenate([mean_z, mean_theta, mean_new])
    blocks = {
        "z": np.arange(n * q),
        "theta": np.arange(n * q, n * q + m * n),
        "theta_new": np.arange(n * q + m * n, total),
    }
    return OracleResult(mean=mean, cov=0.5 * (cov + cov.T), blocks=blocks)


def _log_marginal_likelihood(eta_fn, values, dataset: Dataset, nodes, log_w) -> np.ndarray:
    """``log p(y_obs | unknown = v)`` for each ``v`` in ``values``.

    ``eta_fn(v, nodes)`` returns linear predictors ``(K, n, q)`` at the
    quadrature nodes of the factors.
    """
    obs = dataset.obs_mask
    sign = np.where(dataset.y == 1, 1.0, -1.0)
    out = np.empty(len(values))
    for i, v in enumerate(values):
        eta = eta_fn(v, nodes)
        ll = np.where(obs[None], log_ndtr(sign[None] * eta), 0.0).sum(axis=(1, 2))
        a = ll + log_w
        mx = a.max()
        out[i] = mx + np.log(np.exp(a - mx).sum())
    return out


def quadrature_posterior_oracle(dataset: Dataset, spec: ModelSpec, params: TrueParams,
                                unknown: tuple, grid_spec: dict | None = None) -> OracleResult:
    """Posterior mean/variance of one scalar (``("c", j)`` or ``("a", j, k)``)
    with every other parameter pinned at ``params``.

    The factors are integrated out by tensor Gauss-Hermite quadrature; the
    scalar by composite Simpson on a grid refined until the moments move
    less than ``tol``.
    """
    grid_spec = dict({"n_points": 201, "half_width_sd": 12.0, "tol": 1e-7, "max_refine": 6,
                      "gh_nodes": None}, **(grid_spec or {}))
    n, q, m = dataset.n, dataset.q, spec.m
    if n > 4 or q > 2 or m != 1:
        raise ValidationError("quadrature oracle supports n <= 4, q <= 2, m = 1 only")
    # prior of theta: N(X B, T T' Sigma_psi + D R D) written out for m = 1
    d = distance_matrix(dataset.coords)
    cov = params.D[0] ** 2 * params.R[0, 0] * np.eye(n)
    for k in range(params.g):
        cov = cov + params.T[0, k] ** 2 * exp_correlation(d, params.phi[k])
    mu = dataset.X @ params.B[:, 0] if dataset.p else np.zeros(n)
    k_nodes = grid_spec["gh_nodes"] or {1: 60, 2: 40, 3: 24, 4: 14}[n]
    x1, w1 = hermgauss(k_nodes)
    grids = np.meshgrid(*([x1] * n), indexing="ij")
    X_nodes = np.stack([gr.ravel() for gr in grids], axis=1)             # (K, n)
    log_w = sum(np.log(w1)[idx.ravel()] for idx in
                np.meshgrid(*([np.arange(k_nodes)] * n), indexing="ij")) - 0.5 * n * np.log(np.pi)
    L = np.linalg.cholesky(cov)
    theta_nodes = mu[None, :] + np.sqrt(2.0) * X_nodes @ L.T            # (K, n)

    c = params.c.astype(float)
    A = params.A.astype(float)
    kind = unknown[0]
    if kind == "c":
        j = unknown[1]
        prior_mean, prior_var = 0.0, float(spec.priors.c_var[j])

        def eta_fn(v, th):
            cc = c.copy()
            cc[j] = v
            return cc[None, None, :] + th[:, :, None] * A[None, None, :, 0]
    elif kind == "a":
        j, k = unknown[1], unknown[2]
        prior_mean, prior_var = float(spec.priors.a_mean[j, k]), float(spec.priors.a_var[j, k])

        def eta_fn(v, th):
            aa = A[:, 0].copy()
            aa[j] = v
            return c[None, None, :] + th[:, :, None] * aa[None, None, :]
    else:
        raise ValidationError(f"unknown parameter kind {kind!r}")

    sd = np.sqrt(prior_var)
    lo, hi = prior_mean - grid_spec["half_width_sd"] * sd, prior_mean + grid_spec["half_width_sd"] * sd
    if kind == "a" and spec.sign_mode == "hard":
        sign = spec.constraints[j].signs[k]
        if sign == "positive":
            lo = max(lo, 0.0)
        elif sign == "negative":
            hi = min(hi, 0.0)

    def moments(npts):
        grid = np.linspace(lo, hi, npts)
        logpost = _log_marginal_likelihood(eta_fn, grid, dataset, theta_nodes, log_w)
        logpost += -0.5 * (grid - prior_mean) ** 2 / prior_var
        w = np.exp(logpost - logpost.max())
        simpson = np.ones(npts)
        simpson[1:-1:2], simpson[2:-1:2] = 4.0, 2.0
        w = w * simpson
        Z = w.sum()
        mean = (w * grid).sum() / Z
        var = (w * (grid - mean) ** 2).sum() / Z
        return mean, var

    npts = grid_spec["n_points"] | 1
    prev = moments(npts)
    for _ in range(grid_spec["max_refine"]):
        npts = 2 * npts - 1
        cur = moments(npts)
        if abs(cur[0] - prev[0]) < grid_spec["tol"] and abs(cur[1] - prev[1]) < grid_spec["tol"]:
            return OracleResult(mean=np.array([cur[0]]), cov=np.array([[cur[1]]]),
                                info={"n_points": npts, "gh_nodes": k_nodes,
                                      "refinement_change": (abs(cur[0] - prev[0]), abs(cur[1] - prev[1]))})
        prev = cur
    raise NumericalError("quadrature grid did not converge; widen or refine the grid")
