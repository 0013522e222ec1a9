"""Metropolis-within-Gibbs sampler for the spatial item factor model.

One sweep updates, in order: auxiliary variables ``z``, factors ``theta``,
covariate slopes ``B``, easiness ``c``, discriminations ``a`` and finally the
covariance parameters ``(log T, log phi, nu)`` by adaptive random-walk MH.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .adaptive import AdaptiveMetropolis, accept_prob
from .covariance import (
    FactorCovariance,
    cpc_log_jacobian,
    cpc_transform,
    distance_matrix,
    exp_correlation,
    factor_cov,
    lkj_log_density,
    robust_cholesky,
)
from .errors import NumericalError, ValidationError
from .model import SIGN_FREE, SIGN_POSITIVE, Dataset, ModelSpec, build_loading_matrix
from .truncnorm import sample_truncnorm, sample_truncnorm_onesided

log = logging.getLogger(__name__)

# SeedSequence spawn keys; simulator and sampler never share a stream
STREAM_SAMPLER = 1
STREAM_SIMULATOR = 2
STREAM_PREDICT = 3

FIXABLE = ("c", "A_free", "B", "logT", "logphi", "nu")
BLOCKS = ("c", "A", "theta", "B", "T", "phi", "R", "nu", "D")


def make_rng(seed: int, stream: int, chain_id: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(stream, chain_id))))


@dataclass
class SamplerConfig:
    iterations: int = 1000
    burn_in: int = 500
    thin: int = 1
    C: float = 0.7
    alpha: float = 0.8
    target_accept: float = 0.234
    seed: int = 0
    init: str = "default"
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("iterations", "thin"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"sampler {name} must be a positive integer")
        if self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ValidationError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.init != "default":
            raise ValidationError(f"unknown init policy {self.init!r}")
        unknown = set(self.fixed) - set(FIXABLE)
        if unknown:
            raise ValidationError(f"cannot fix unknown blocks {sorted(unknown)}")
        cov_fixed = {"logT", "logphi", "nu"} & set(self.fixed)
        if cov_fixed and len(cov_fixed) != 3:
            raise ValidationError("logT, logphi and nu must be fixed together")
        # validates alpha/target/C
        AdaptiveMetropolis(dim=1, C=self.C, alpha=self.alpha, target=self.target_accept)

    @property
    def n_samples(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        return {"iterations": self.iterations, "burn_in": self.burn_in, "thin": self.thin,
                "C": self.C, "alpha": self.alpha, "target_accept": self.target_accept,
                "seed": self.seed, "init": self.init}


@dataclass
class ChainState:
    """Current draw of every block plus cached covariance quantities."""

    z: np.ndarray          # (n, q)
    theta: np.ndarray      # (m, n)
    c: np.ndarray          # (q,)
    A_free: np.ndarray     # (q, m)
    B: np.ndarray          # (p, m)
    logT: np.ndarray       # free entries of T, log scale
    logphi: np.ndarray     # (g,)
    nu: np.ndarray         # (m(m-1)/2,)
    A: np.ndarray = None   # constraint-resolved (q, m)
    dist: np.ndarray = None
    gp_covs: list = None
    fcov: FactorCovariance = None
    log_post: float = float("nan")

    def copy(self) -> "ChainState":
        out = ChainState(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                            for k, v in self.__dict__.items()})
        out.gp_covs = list(self.gp_covs) if self.gp_covs is not None else None
        return out


@dataclass
class ChainOutput:
    """Stored post-burn-in draws of one chain.

    ``samples`` holds arrays with a leading sample axis: ``c (S, q)``,
    ``A (S, q, m)`` (constraint-resolved), ``theta (S, m, n)``,
    ``B (S, p, m)``, ``T (S, m, g)``, ``phi (S, g)``, ``R (S, m, m)``,
    ``nu (S, m(m-1)/2)`` and ``D (S, m)``.
    """

    samples: dict
    iterations: np.ndarray
    accept: np.ndarray
    adaptation: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.iterations)

    def hash(self) -> str:
        h = hashlib.sha256()
        for key in BLOCKS:
            arr = np.ascontiguousarray(self.samples[key], dtype=np.float64)
            h.update(key.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        h.update(np.ascontiguousarray(self.iterations, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(self.accept, dtype=np.uint8).tobytes())
        return h.hexdigest()


# ----------------------------------------------------------------------------
# cached covariance state


def loading_matrix(state: ChainState, spec: ModelSpec) -> np.ndarray:
    if spec.loading.n_free == 0:
        return np.zeros((spec.m, spec.g))
    return build_loading_matrix(spec.loading, np.exp(state.logT))


def residual_corr(state: ChainState, spec: ModelSpec) -> np.ndarray:
    return cpc_transform(state.nu, spec.m) if spec.m > 1 else np.ones((1, 1))


def _gp_covs(dist: np.ndarray, logphi) -> list:
    return [exp_correlation(dist, math.exp(lp)) for lp in logphi]


def _factor_cov(state: ChainState, spec: ModelSpec, logT, logphi, nu, gp_covs) -> FactorCovariance:
    T = build_loading_matrix(spec.loading, np.exp(logT)) if spec.loading.n_free else np.zeros((spec.m, spec.g))
    R = cpc_transform(nu, spec.m) if spec.m > 1 else np.ones((1, 1))
    return factor_cov(T, gp_covs, spec.D, R, state.dist.shape[0])


def refresh_covariance(state: ChainState, spec: ModelSpec) -> None:
    """Recompute GP matrices and the factor covariance from the current parameters."""
    state.gp_covs = _gp_covs(state.dist, state.logphi)
    state.fcov = _factor_cov(state, spec, state.logT, state.logphi, state.nu, state.gp_covs)


def theta_prior_mean(state: ChainState, dataset: Dataset) -> np.ndarray:
    """``(I_m x X) beta`` as an (m, n) array."""
    if dataset.p == 0:
        return np.zeros_like(state.theta)
    return (dataset.X @ state.B).T


# ----------------------------------------------------------------------------
# initialisation


def init_state(dataset: Dataset, spec: ModelSpec, config: SamplerConfig,
               rng: np.random.Generator | None = None) -> ChainState:
    """Starting values: ``z = +-0.5`` on observed cells, N(0, 1) on missing ones,
    zero factors/easiness/slopes, prior means for everything else."""
    if rng is None:
        rng = make_rng(config.seed, STREAM_SAMPLER)
    if dataset.q != spec.q:
        raise ValidationError(f"dataset has {dataset.q} items but the model has {spec.q}")
    if dataset.p != spec.p:
        raise ValidationError(f"dataset has {dataset.p} covariates but the model expects {spec.p}")
    n, q, m = dataset.n, dataset.q, spec.m
    z = np.where(dataset.y == 1, 0.5, -0.5)
    missing = ~dataset.obs_mask
    z[missing] = rng.standard_normal(int(missing.sum()))
    pr = spec.priors
    state = ChainState(
        z=z,
        theta=np.zeros((m, n)),
        c=np.zeros(q),
        A_free=pr.a_mean.copy(),
        B=np.zeros((dataset.p, m)),
        logT=pr.logT_mean.copy(),
        logphi=pr.logphi_mean.copy(),
        nu=np.zeros(spec.n_nu),
        dist=distance_matrix(dataset.coords),
    )
    fixed = config.fixed
    if "c" in fixed:
        state.c = np.asarray(fixed["c"], dtype=float).reshape(q).copy()
    if "A_free" in fixed:
        state.A_free = np.asarray(fixed["A_free"], dtype=float).reshape(q, m).copy()
    if "B" in fixed:
        state.B = np.asarray(fixed["B"], dtype=float).reshape(dataset.p, m).copy()
    if "logT" in fixed:
        state.logT = np.asarray(fixed["logT"], dtype=float).reshape(spec.loading.n_free).copy()
        state.logphi = np.asarray(fixed["logphi"], dtype=float).reshape(spec.g).copy()
        state.nu = np.asarray(fixed["nu"], dtype=float).reshape(spec.n_nu).copy()
    state.A = spec.resolve(state.A_free)
    refresh_covariance(state, spec)
    return state


# ----------------------------------------------------------------------------
# Gibbs blocks


def sample_aux_z(state: ChainState, dataset: Dataset, rng: np.random.Generator) -> np.ndarray:
    """Truncated-normal draws on observed cells, unrestricted draws on missing ones."""
    mean = state.c[None, :] + state.theta.T @ state.A.T  # (n, q)
    mask = dataset.obs_mask
    z = np.empty_like(mean)
    z[mask] = sample_truncnorm_onesided(mean[mask], dataset.y[mask] == 1, rng)
    miss = ~mask
    z[miss] = mean[miss] + rng.standard_normal(int(miss.sum()))
    state.z = z
    return z


def theta_conditional_factors(state: ChainState, dataset: Dataset):
    """Pieces of the factor conditional: ``(L, R, mean)`` with
    ``cov = L (R R')^-1 L'`` where ``L L' = Sigma_theta``.

    Uses ``P = L^-T (I + L' K L) L^-1`` with ``K = (A'A) x I_n`` so no
    explicit inverse of ``Sigma_theta`` is formed.
    """
    A = state.A
    m, n = state.theta.shape
    L = state.fcov.chol
    K = np.kron(A.T @ A, np.eye(n))
    M = L.T @ K @ L
    M[np.diag_indices_from(M)] += 1.0
    Rm = robust_cholesky(M, "factor posterior")
    resid = state.z - state.c[None, :]                # (n, q)
    data_term = (resid @ A).T.ravel()                 # (A' x I_n)(z - c)
    prior_mean = theta_prior_mean(state, dataset).ravel()
    rhs = L.T @ data_term + solve_triangular(L, prior_mean, lower=True, check_finite=False)
    w = solve_triangular(Rm, rhs, lower=True, check_finite=False)
    w = solve_triangular(Rm, w, lower=True, trans="T", check_finite=False)
    mean = L @ w
    return L, Rm, mean


def theta_conditional(state: ChainState, dataset: Dataset):
    """Conditional mean and covariance of the stacked factors (dense; for checks)."""
    L, Rm, mean = theta_conditional_factors(state, dataset)
    G = solve_triangular(Rm, L.T, lower=True, check_finite=False)
    return mean, G.T @ G


def sample_theta(state: ChainState, dataset: Dataset, rng: np.random.Generator) -> np.ndarray:
    L, Rm, mean = theta_conditional_factors(state, dataset)
    eps = rng.standard_normal(mean.size)
    draw = mean + L @ solve_triangular(Rm, eps, lower=True, trans="T", check_finite=False)
    state.theta = draw.reshape(state.theta.shape)
    return state.theta


def beta_conditional(state: ChainState, dataset: Dataset, spec: ModelSpec):
    """Conditional precision Cholesky and mean of ``beta = vec(B)``."""
    m, n = state.theta.shape
    L = state.fcov.chol
    design = np.kron(np.eye(m), dataset.X)            # (mn, mp)
    W = solve_triangular(L, design, lower=True, check_finite=False)
    prec = W.T @ W + np.diag(1.0 / spec.priors.beta_var)
    Lp = robust_cholesky(prec, "slope posterior")
    rhs = W.T @ solve_triangular(L, state.theta.ravel(), lower=True, check_finite=False)
    mean = solve_triangular(Lp, rhs, lower=True, check_finite=False)
    mean = solve_triangular(Lp, mean, lower=True, trans="T", check_finite=False)
    return Lp, mean


def sample_beta(state: ChainState, dataset: Dataset, spec: ModelSpec,
                rng: np.random.Generator) -> np.ndarray:
    if dataset.p == 0:
        return state.B
    Lp, mean = beta_conditional(state, dataset, spec)
    draw = mean + solve_triangular(Lp, rng.standard_normal(mean.size), lower=True, trans="T",
                                   check_finite=False)
    # beta is factor-major: beta[k * p + l] = B[l, k]
    state.B = draw.reshape(spec.m, dataset.p).T.copy()
    return state.B


def c_conditional(state: ChainState, spec: ModelSpec):
    n = state.z.shape[0]
    var = 1.0 / (1.0 / spec.priors.c_var + n)
    resid = state.z - state.theta.T @ state.A.T
    return var * resid.sum(axis=0), var


def sample_c(state: ChainState, spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    mean, var = c_conditional(state, spec)
    state.c = mean + np.sqrt(var) * rng.standard_normal(mean.size)
    return state.c


def a_conditional(state: ChainState, spec: ModelSpec, j: int):
    """Mean and precision of the active discriminations of item ``j``."""
    con = spec.constraints[j]
    idx = np.flatnonzero(con.active)
    Theta = state.theta.T                              # (n, m)
    resid = state.z[:, j] - state.c[j] - Theta @ con.fixed
    Xs = Theta[:, idx]
    prior_prec = 1.0 / spec.priors.a_var[j, idx]
    prec = Xs.T @ Xs + np.diag(prior_prec)
    rhs = Xs.T @ resid + prior_prec * spec.priors.a_mean[j, idx]
    mean = np.linalg.solve(prec, rhs)
    return idx, mean, prec


def sample_a(state: ChainState, spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Per-item Gaussian update of the free discriminations.

    Under hard sign constraints the active coordinates of an item are
    updated one at a time from their univariate conditionals, truncated to
    the required half-line where constrained.
    """
    hard = spec.sign_mode == "hard"
    for j, con in enumerate(spec.constraints):
        if not con.active.any():
            continue
        idx, mean, prec = a_conditional(state, spec, j)
        signs = [con.signs[k] for k in idx]
        if hard and any(s != SIGN_FREE for s in signs):
            cur = state.A_free[j, idx].copy()
            for t, k in enumerate(idx):
                cvar = 1.0 / prec[t, t]
                others = np.delete(np.arange(len(idx)), t)
                cmean = mean[t] - cvar * prec[t, others] @ (cur[others] - mean[others])
                s = signs[t]
                if s == SIGN_FREE:
                    cur[t] = cmean + math.sqrt(cvar) * rng.standard_normal()
                elif s == SIGN_POSITIVE:
                    cur[t] = sample_truncnorm(cmean, math.sqrt(cvar), 0.0, rng)[0]
                else:
                    cur[t] = sample_truncnorm(cmean, math.sqrt(cvar), -np.inf, rng, upper=0.0)[0]
            state.A_free[j, idx] = cur
        else:
            Lp = np.linalg.cholesky(prec)
            draw = mean + solve_triangular(Lp, rng.standard_normal(len(idx)), lower=True,
                                           trans="T", check_finite=False)
            state.A_free[j, idx] = draw
    state.A = spec.resolve(state.A_free)
    return state.A_free


# ----------------------------------------------------------------------------
# covariance parameters


def pack_cov_params(state: ChainState) -> np.ndarray:
    return np.concatenate([state.logT, state.logphi, state.nu])


def unpack_cov_params(x, spec: ModelSpec):
    nT, g = spec.loading.n_free, spec.g
    return x[:nT], x[nT:nT + g], x[nT + g:]


def _normal_logpdf(x, mean, var) -> float:
    return float(-0.5 * np.sum((x - mean) ** 2 / var + np.log(2 * np.pi * var)))


def cov_log_prior(x, spec: ModelSpec) -> float:
    """Log prior of the transformed covariance parameters, Jacobians included."""
    logT, logphi, nu = unpack_cov_params(x, spec)
    pr = spec.priors
    lp = _normal_logpdf(logT, pr.logT_mean, pr.logT_var)
    lp += _normal_logpdf(logphi, pr.logphi_mean, pr.logphi_var)
    if spec.m > 1:
        lp += lkj_log_density(cpc_transform(nu, spec.m), pr.eta) + cpc_log_jacobian(nu, spec.m)
    return lp


def cov_log_target(state: ChainState, dataset: Dataset, spec: ModelSpec, x=None,
                   fcov: FactorCovariance | None = None) -> float:
    """Unnormalized log conditional of ``(log T, log phi, nu)`` given ``theta, beta``."""
    if x is None:
        x = pack_cov_params(state)
    if fcov is None:
        fcov = state.fcov
    resid = (state.theta - theta_prior_mean(state, dataset)).ravel()
    return fcov.logpdf(resid) + cov_log_prior(x, spec)


def mh_step_cov_params(state: ChainState, dataset: Dataset, spec: ModelSpec,
                       am: AdaptiveMetropolis, rng: np.random.Generator, adapt: bool = True):
    """One adaptive random-walk MH update; returns ``(accepted, accept_prob)``."""
    x = pack_cov_params(state)
    lp_cur = cov_log_target(state, dataset, spec, x)
    y = am.propose(x, rng)
    logT, logphi, nu = unpack_cov_params(y, spec)
    try:
        gp_covs = _gp_covs(state.dist, logphi)
        fcov = _factor_cov(state, spec, logT, logphi, nu, gp_covs)
        lp_prop = cov_log_target(state, dataset, spec, y, fcov)
    except (NumericalError, FloatingPointError, ValueError) as exc:
        log.debug("rejecting covariance proposal: %s", exc)
        lp_prop, gp_covs, fcov = -np.inf, None, None
    a = accept_prob(lp_cur, lp_prop)
    accepted = rng.uniform() < a
    if accepted:
        state.logT, state.logphi, state.nu = logT.copy(), logphi.copy(), nu.copy()
        state.gp_covs, state.fcov = gp_covs, fcov
        state.log_post = lp_prop
    else:
        state.log_post = lp_cur
    if adapt:
        am.adapt(pack_cov_params(state), a)
    return accepted, a


# ----------------------------------------------------------------------------
# driver


def _snapshot(state: ChainState, spec: ModelSpec) -> dict:
    return {
        "c": state.c.copy(),
        "A": state.A.copy(),
        "theta": state.theta.copy(),
        "B": state.B.copy(),
        "T": loading_matrix(state, spec),
        "phi": np.exp(state.logphi),
        "R": residual_corr(state, spec),
        "nu": state.nu.copy(),
        "D": np.array(spec.D, dtype=float),
    }


def sweep(state: ChainState, dataset: Dataset, spec: ModelSpec, config: SamplerConfig,
          am: AdaptiveMetropolis | None, rng: np.random.Generator, adapt: bool = True):
    """One full Gibbs sweep. Returns the MH acceptance flag (False if skipped)."""
    fixed = config.fixed
    sample_aux_z(state, dataset, rng)
    sample_theta(state, dataset, rng)
    if "B" not in fixed:
        sample_beta(state, dataset, spec, rng)
    if "c" not in fixed:
        sample_c(state, spec, rng)
    if "A_free" not in fixed:
        sample_a(state, spec, rng)
    if am is not None:
        accepted, _ = mh_step_cov_params(state, dataset, spec, am, rng, adapt=adapt)
        return accepted
    return False


def _mh_dim(spec: ModelSpec, config: SamplerConfig) -> int:
    if "logT" in config.fixed:
        return 0
    return spec.loading.n_free + spec.g + spec.n_nu


def spec_hash(spec: ModelSpec) -> str:
    import json
    return hashlib.sha256(json.dumps(spec.to_dict(), sort_keys=True).encode()).hexdigest()


def run_chain(dataset: Dataset, spec: ModelSpec, config: SamplerConfig, chain_id: int = 0,
              progress=None) -> ChainOutput:
    """Run one chain and keep every ``thin``-th post-burn-in state."""
    t0 = time.perf_counter()
    rng = make_rng(config.seed, STREAM_SAMPLER, chain_id)
    state = init_state(dataset, spec, config, rng)
    dim = _mh_dim(spec, config)
    am = None
    if dim:
        am = AdaptiveMetropolis(dim=dim, C=config.C, alpha=config.alpha, target=config.target_accept)
        am.start(pack_cov_params(state))
    S = config.n_samples
    proto = _snapshot(state, spec)
    store = {k: np.empty((S,) + np.shape(v)) for k, v in proto.items()}
    stored_iters = np.empty(S, dtype=np.int64)
    accept = np.zeros(config.iterations, dtype=bool)
    log_every = max(1, config.iterations // 200)
    adapt_log = []
    s = 0
    for it in range(1, config.iterations + 1):
        try:
            accept[it - 1] = sweep(state, dataset, spec, config, am, rng,
                                   adapt=it <= config.burn_in)
        except NumericalError as exc:
            raise NumericalError(f"iteration {it}: {exc}") from exc
        if it > config.burn_in and (it - config.burn_in) % config.thin == 0 and s < S:
            for k, v in _snapshot(state, spec).items():
                store[k][s] = v
            stored_iters[s] = it
            s += 1
        if it % log_every == 0 and am is not None:
            adapt_log.append((it, am.log_scale, float(accept[max(0, it - log_every):it].mean())))
        if progress is not None:
            progress(it)
    meta = {
        "seed": int(config.seed), "chain_id": int(chain_id), "config": config.to_dict(),
        "spec_hash": spec_hash(spec), "elapsed_sec": time.perf_counter() - t0,
        "mh_dim": dim,
    }
    adaptation = np.array(adapt_log, dtype=float).reshape(-1, 3)
    return ChainOutput(samples=store, iterations=stored_iters, accept=accept,
                       adaptation=adaptation, metadata=meta)


def _run_chain_job(args):
    return run_chain(*args)


def run_chains(dataset: Dataset, spec: ModelSpec, config: SamplerConfig, n_chains: int,
               parallel: bool = True) -> list[ChainOutput]:
    """Independent chains with RNG streams derived from ``(seed, chain_id)``."""
    jobs = [(dataset, spec, config, k) for k in range(n_chains)]
    if parallel and n_chains > 1:
        with ProcessPoolExecutor(max_workers=n_chains) as pool:
            return list(pool.map(_run_chain_job, jobs))
    return [_run_chain_job(j) for j in jobs]


# ----------------------------------------------------------------------------
# post-processing


def factor_scales(chain: ChainOutput) -> np.ndarray:
    """Per-factor sd of the pooled factor draws (all samples and locations)."""
    theta = chain.samples["theta"]
    m = theta.shape[1]
    return theta.transpose(1, 0, 2).reshape(m, -1).std(axis=1)


def rescale_samples(chain: ChainOutput) -> ChainOutput:
    """Put every factor on unit pooled variance without changing ``a_j' theta_i``.

    With ``Q = diag(sd)``: ``a <- Q a``, ``theta <- Q^-1 theta``,
    ``B <- B Q^-1`` (per-factor columns), ``T <- Q^-1 T``, ``D <- Q^-1 D``.
    """
    if chain.n_samples == 0:
        raise ValidationError("cannot rescale an empty chain")
    q = factor_scales(chain)
    if np.any(q < 1e-12) or not np.all(np.isfinite(q)):
        raise NumericalError(f"degenerate factor draws (sd {q}); cannot rescale")
    s = dict(chain.samples)
    s["A"] = chain.samples["A"] * q[None, None, :]
    s["theta"] = chain.samples["theta"] / q[None, :, None]
    s["B"] = chain.samples["B"] / q[None, None, :]
    s["T"] = chain.samples["T"] / q[None, :, None]
    s["D"] = chain.samples["D"] / q[None, :]
    meta = dict(chain.metadata, rescaled=True, scale_Q=q.tolist())
    return ChainOutput(samples=s, iterations=chain.iterations.copy(), accept=chain.accept.copy(),
                       adaptation=chain.adaptation.copy(), metadata=meta)
