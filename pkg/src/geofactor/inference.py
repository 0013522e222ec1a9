"""Post-chain analytics: deviance and DIC, prediction of factors at new
locations, exceedance probabilities, empirical variograms and trace summaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr

from .covariance import distance_matrix, exp_correlation, residual_cov, robust_cholesky
from .errors import ValidationError
from .model import Dataset, find_duplicate_coords
from .sampler import STREAM_PREDICT, ChainOutput, make_rng

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


def log_likelihood_y(theta, c, A, dataset: Dataset) -> float:
    """Probit log-likelihood over observed cells.

    ``theta`` is ``(m, n)``, ``A`` is ``(q, m)``. Probabilities are clamped to
    ``[1e-12, 1 - 1e-12]`` before taking logs.
    """
    eta = np.asarray(c)[None, :] + np.asarray(theta).T @ np.asarray(A).T
    p = np.clip(ndtr(eta), PROB_CLAMP, 1 - PROB_CLAMP)
    mask = dataset.obs_mask
    y = np.where(mask, dataset.y, 0.0)
    ll = np.where(mask, y * np.log(p) + (1 - y) * np.log1p(-p), 0.0)
    return float(ll.sum())


@dataclass(frozen=True)
class DicReport:
    mean_deviance: float
    deviance_at_mean: float
    p_D: float
    DIC: float


def deviance(theta, c, A, dataset: Dataset) -> float:
    """``-2 log p(y | alpha)``; the saturated Bernoulli log-likelihood is 0."""
    return -2.0 * log_likelihood_y(theta, c, A, dataset)


def dic(chain: ChainOutput, dataset: Dataset) -> DicReport:
    """Deviance information criterion from the stored draws."""
    if chain.n_samples == 0:
        raise ValidationError("DIC needs at least one stored sample")
    s = chain.samples
    devs = np.array([deviance(s["theta"][k], s["c"][k], s["A"][k], dataset)
                     for k in range(chain.n_samples)])
    d_bar = float(devs.mean())
    d_hat = deviance(s["theta"].mean(axis=0), s["c"].mean(axis=0), s["A"].mean(axis=0), dataset)
    p_d = d_bar - d_hat
    return DicReport(mean_deviance=d_bar, deviance_at_mean=d_hat, p_D=p_d, DIC=d_bar + p_d)


# ----------------------------------------------------------------------------
# prediction


@dataclass
class PredictionResult:
    """Posterior predictive draws of the factors at new locations.

    ``draws`` has shape ``(S, m, n_new)``.
    """

    new_coords: np.ndarray
    draws: np.ndarray
    probs: tuple = (0.05, 0.5, 0.95)
    quantiles: np.ndarray = field(init=False)

    def __post_init__(self):
        self.quantiles = np.quantile(self.draws, self.probs, axis=0)  # (len(probs), m, n_new)

    @property
    def median(self) -> np.ndarray:
        return np.median(self.draws, axis=0)

    def quantile(self, prob: float) -> np.ndarray:
        return np.quantile(self.draws, prob, axis=0)


def conditional_moments_new(theta, B, T, phi, R, D, coords, X, new_coords, new_X,
                            dist=None, dist_new=None, cross=None, diag_only=False):
    """Moments of the factors at new sites given their values at the data sites.

    Returns ``(mean (m, n_new), cov)``; ``cov`` is the full ``(m n_new)``
    square matrix, or ``(n_new, m, m)`` per-site blocks if ``diag_only``.
    """
    theta = np.asarray(theta, dtype=float)
    m, n = theta.shape
    nn = new_coords.shape[0]
    T = np.asarray(T, dtype=float).reshape(m, -1)
    dist = distance_matrix(coords) if dist is None else dist
    cross = distance_matrix(new_coords, coords) if cross is None else cross
    Sv = residual_cov(D, R)
    # Var(theta), Cov(theta_new, theta)
    cov_obs = np.kron(Sv, np.eye(n))
    cov_x = np.zeros((m * nn, m * n))
    gp_new = []
    for col in range(T.shape[1]):
        t = T[:, col]
        if not np.any(t):
            gp_new.append(None)
            continue
        tt = np.outer(t, t)
        cov_obs += np.kron(tt, exp_correlation(dist, phi[col]))
        cov_x += np.kron(tt, exp_correlation(cross, phi[col]))
        gp_new.append(tt)
    mu_obs = (X @ B).T if X.shape[1] else np.zeros((m, n))
    mu_new = (new_X @ B).T if new_X.shape[1] else np.zeros((m, nn))
    L = robust_cholesky(cov_obs, "factor")
    W = solve_triangular(L, cov_x.T, lower=True, check_finite=False)        # L^-1 C'
    r = solve_triangular(L, (theta - mu_obs).ravel(), lower=True, check_finite=False)
    mean = mu_new.ravel() + W.T @ r
    if diag_only:
        cov = np.empty((nn, m, m))
        base = Sv.copy()
        for col, tt in enumerate(gp_new):
            if tt is not None:
                base = base + tt  # unit GP variance on the diagonal
        Wr = W.reshape(m * n, m, nn)
        for i in range(nn):
            Wi = Wr[:, :, i]
            cov[i] = base - Wi.T @ Wi
    else:
        cov_new = np.kron(Sv, np.eye(nn))
        if nn:
            dn = distance_matrix(new_coords) if dist_new is None else dist_new
            for col, tt in enumerate(gp_new):
                if tt is not None:
                    cov_new += np.kron(tt, exp_correlation(dn, phi[col]))
        cov = cov_new - W.T @ W
        cov = 0.5 * (cov + cov.T)
    return mean.reshape(m, nn), cov


def predict_factors(chain: ChainOutput, dataset: Dataset, new_coords, new_X=None, *,
                    seed: int = 0, joint: bool | None = None, allow_coincident: bool = False,
                    probs=(0.05, 0.5, 0.95)) -> PredictionResult:
    """Kriging draws of the factors at ``new_coords`` for every stored sample.

    ``new_X`` must already be standardized with the training transform.
    ``joint=True`` draws all new sites jointly per sample; ``False`` draws
    each site from its own conditional (enough for per-site summaries and
    much cheaper on large grids). The default is joint when ``m * n_new``
    is at most 1000.
    """
    new_coords = np.atleast_2d(np.asarray(new_coords, dtype=float))
    if new_coords.shape[1] != 2:
        raise ValidationError("new_coords must have two columns")
    nn = new_coords.shape[0]
    p = dataset.p
    if new_X is None:
        if p:
            raise ValidationError("the model has covariates: new_X is required")
        new_X = np.zeros((nn, 0))
    new_X = np.asarray(new_X, dtype=float).reshape(nn, -1) if p else np.zeros((nn, 0))
    if new_X.shape[1] != p:
        raise ValidationError(f"new_X has {new_X.shape[1]} columns, expected {p}")
    if chain.n_samples == 0:
        raise ValidationError("prediction needs at least one stored sample")
    cross = distance_matrix(new_coords, dataset.coords)
    if not allow_coincident and np.any(cross < 1e-9):
        i, j = np.argwhere(cross < 1e-9)[0]
        raise ValidationError(
            f"prediction site {i} coincides with data site {j}; pass allow_coincident=True")
    dup = find_duplicate_coords(new_coords)
    if dup is not None and joint:
        raise ValidationError(f"duplicate prediction sites {dup}")
    s = chain.samples
    m = s["theta"].shape[1]
    if joint is None:
        joint = m * nn <= 1000 and dup is None
    rng = make_rng(seed, STREAM_PREDICT)
    dist = distance_matrix(dataset.coords)
    dist_new = distance_matrix(new_coords) if joint else None
    draws = np.empty((chain.n_samples, m, nn))
    for k in range(chain.n_samples):
        mean, cov = conditional_moments_new(
            s["theta"][k], s["B"][k], s["T"][k], s["phi"][k], s["R"][k], s["D"][k],
            dataset.coords, dataset.X, new_coords, new_X, dist=dist, dist_new=dist_new,
            cross=cross, diag_only=not joint)
        if joint:
            Lc = robust_cholesky(cov, "predictive")
            draws[k] = mean + (Lc @ rng.standard_normal(m * nn)).reshape(m, nn)
        else:
            eps = rng.standard_normal((nn, m))
            for i in range(nn):
                Lc = robust_cholesky(cov[i], "predictive")
                draws[k, :, i] = mean[:, i] + Lc @ eps[i]
    return PredictionResult(new_coords=new_coords, draws=draws, probs=tuple(probs))


def exceedance_prob(prediction: PredictionResult, threshold: float = 0.0) -> np.ndarray:
    """Fraction of predictive draws above ``threshold``; shape ``(m, n_new)``."""
    return (prediction.draws > threshold).mean(axis=0)


# ----------------------------------------------------------------------------
# variogram


@dataclass(frozen=True)
class Variogram:
    """Binned semivariances; ``gamma`` is NaN where a bin has no pairs."""

    centers: np.ndarray
    edges: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0


def empirical_variogram(values, coords, n_bins: int = 10, max_dist: float | None = None) -> Variogram:
    """Half the mean squared difference of values over pairs in each distance bin.

    Bins are equal-width on ``[0, max_dist]``; pairs go to ``[lo, hi)`` with
    the last bin closed. ``max_dist`` defaults to half the largest pairwise
    distance.
    """
    if n_bins < 1:
        raise ValidationError("n_bins must be at least 1")
    values = np.asarray(values, dtype=float).ravel()
    coords = np.asarray(coords, dtype=float)
    if values.size < 2 or coords.shape != (values.size, 2):
        raise ValidationError("need at least two values with matching (n, 2) coordinates")
    iu, ju = np.triu_indices(values.size, 1)
    d = np.sqrt(((coords[iu] - coords[ju]) ** 2).sum(axis=1))
    sq = 0.5 * (values[iu] - values[ju]) ** 2
    if max_dist is None:
        max_dist = 0.5 * d.max()
    if not max_dist > 0:
        raise ValidationError("max_dist must be positive")
    edges = np.linspace(0.0, max_dist, n_bins + 1)
    keep = d <= max_dist
    b = np.minimum(np.floor(d[keep] / max_dist * n_bins).astype(int), n_bins - 1)
    counts = np.bincount(b, minlength=n_bins)
    sums = np.bincount(b, weights=sq[keep], minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return Variogram(centers=centers, edges=edges, gamma=gamma, counts=counts)


# ----------------------------------------------------------------------------
# trace summaries


def autocorrelation(x, max_lag: int, *, unbiased: bool = False) -> np.ndarray:
    """Sample autocorrelations at lags ``0..max_lag``.

    The lag-k autocovariance is divided by ``n`` by default, which keeps the
    sequence positive definite; ``unbiased=True`` divides by ``n - k``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    var = xc @ xc / n
    if var == 0:
        return np.full(max_lag + 1, np.nan)
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    acov /= (n - np.arange(max_lag + 1)) if unbiased else n
    return acov / var


def effective_sample_size(x) -> float:
    """Geyer's initial positive sequence estimator."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    rho = autocorrelation(x, n - 1)
    if np.isnan(rho[0]):
        return float(n)
    tau = -1.0
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    tau = max(tau, 1.0 / np.log10(n))  # guard for antithetic chains
    return float(n / tau)


@dataclass(frozen=True)
class TraceStats:
    name: str
    mean: float
    sd: float
    quantiles: tuple
    acf: tuple
    ess: float
    degenerate: bool


def summarize_trace(name: str, x, lags=(1, 5, 10), probs=(0.05, 0.5, 0.95)) -> TraceStats:
    x = np.asarray(x, dtype=float)
    sd = float(x.std(ddof=1)) if x.size > 1 else 0.0
    degenerate = sd == 0.0
    max_lag = min(max(lags), max(x.size - 1, 0))
    acf = autocorrelation(x, max_lag, unbiased=True) if x.size > 1 else np.full(1, np.nan)
    acf_vals = tuple(float(acf[k]) if k <= max_lag else float("nan") for k in lags)
    ess = float(x.size) if degenerate else effective_sample_size(x)
    return TraceStats(name=name, mean=float(x.mean()), sd=sd,
                      quantiles=tuple(float(v) for v in np.quantile(x, probs)),
                      acf=acf_vals, ess=ess, degenerate=degenerate)


def _flat_params(chain: ChainOutput, include_theta: bool = False):
    s = chain.samples
    q, m = s["A"].shape[1:]
    for j in range(q):
        yield f"c[{j + 1}]", s["c"][:, j]
    for j in range(q):
        for k in range(m):
            col = s["A"][:, j, k]
            if np.ptp(col) > 0 or col[0] != 0:
                yield f"a[{j + 1},{k + 1}]", col
    p = s["B"].shape[1]
    for l in range(p):
        for k in range(m):
            yield f"B[{l + 1},{k + 1}]", s["B"][:, l, k]
    Tm = s["T"]
    for r in range(Tm.shape[1]):
        for cidx in range(Tm.shape[2]):
            if np.any(Tm[:, r, cidx] != 0):
                yield f"T[{r + 1},{cidx + 1}]", Tm[:, r, cidx]
    for k in range(s["phi"].shape[1]):
        yield f"phi[{k + 1}]", s["phi"][:, k]
    for r in range(m):
        for cidx in range(r):
            yield f"R[{r + 1},{cidx + 1}]", s["R"][:, r, cidx]
    if include_theta:
        for k in range(m):
            for i in range(s["theta"].shape[2]):
                yield f"theta[{k + 1},{i + 1}]", s["theta"][:, k, i]


def trace_summary(chain: ChainOutput, include_theta: bool = False) -> list[TraceStats]:
    """Per-parameter summaries in a fixed, deterministic order."""
    return [summarize_trace(name, x) for name, x in _flat_params(chain, include_theta)]
