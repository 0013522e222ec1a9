"""Model specification: data container, discrimination constraints, loading
structure for the Gaussian processes, priors and identifiability checks.

Array conventions used throughout the package:

* ``y``, ``obs_mask``, ``z`` are ``(n, q)`` (locations x items).
* ``theta`` is ``(m, n)``; its stacked vector form is ``theta.ravel()``,
  i.e. factor-major ``(theta_[1], ..., theta_[m])``.
* ``A`` (constraint-resolved discriminations) is ``(q, m)``.
* ``B`` (covariate slopes) is ``(p, m)``; ``beta = B.T.ravel()``.
* ``T`` (loading of the independent GPs onto factors) is ``(m, g)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ValidationError

SIGN_FREE = "free"
SIGN_POSITIVE = "positive"
SIGN_NEGATIVE = "negative"
_SIGNS = (SIGN_FREE, SIGN_POSITIVE, SIGN_NEGATIVE)

DUPLICATE_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Binary survey responses observed at planar locations.

    Parameters
    ----------
    y : (n, q) array
        Responses in {0, 1}; missing cells hold NaN.
    obs_mask : (n, q) bool array
        True where ``y`` was observed.
    coords : (n, 2) array
        Planar coordinates. Distances are Euclidean in coordinate units.
    X : (n, p) array or None
        Standardized covariates. None or an empty array means no covariates.
    """

    y: np.ndarray
    obs_mask: np.ndarray
    coords: np.ndarray
    X: np.ndarray | None = None
    item_names: tuple[str, ...] = ()
    covariate_names: tuple[str, ...] = ()
    ids: tuple[str, ...] = ()
    x_means: np.ndarray | None = None
    x_sds: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        mask = np.asarray(self.obs_mask, dtype=bool)
        coords = np.asarray(self.coords, dtype=float)
        n = y.shape[0]
        if self.X is None or np.size(self.X) == 0:
            X = np.zeros((n, 0))
        else:
            X = np.asarray(self.X, dtype=float).reshape(n, -1)
        if y.ndim != 2:
            raise ValidationError(f"y must be 2-d, got shape {y.shape}")
        if mask.shape != y.shape:
            raise ValidationError(f"obs_mask shape {mask.shape} != y shape {y.shape}")
        if coords.shape != (n, 2):
            raise ValidationError(f"coords must be ({n}, 2), got {coords.shape}")
        if np.any(np.isnan(y) == mask):
            bad = np.argwhere(np.isnan(y) == mask)[0]
            raise ValidationError(f"obs_mask inconsistent with missing y at cell {tuple(bad)}")
        obs = y[mask]
        if not np.all((obs == 0) | (obs == 1)):
            bad = np.argwhere(mask & ~np.isin(np.nan_to_num(y, nan=0.0), (0.0, 1.0)))[0]
            raise ValidationError(f"non-binary response at cell {tuple(bad)}")
        if not np.all(np.isfinite(coords)):
            raise ValidationError("coords contain non-finite values")
        dup = find_duplicate_coords(coords)
        if dup is not None:
            raise ValidationError(f"duplicate coordinates at rows {dup[0]} and {dup[1]}")
        if not np.all(np.isfinite(X)):
            raise ValidationError("covariates contain missing or non-finite values")
        if n >= 2 and X.shape[1]:
            mu = X.mean(axis=0)
            sd = X.std(axis=0, ddof=1)
            if np.any(np.abs(mu) >= 1e-8) or np.any(np.abs(sd - 1) >= 1e-8):
                raise ValidationError("covariates must be standardized (use standardize_covariates)")
        q, p = y.shape[1], X.shape[1]
        items = tuple(self.item_names) or tuple(f"item_{j + 1}" for j in range(q))
        covs = tuple(self.covariate_names) or tuple(f"cov_{k + 1}" for k in range(p))
        ids = tuple(self.ids) or tuple(str(i + 1) for i in range(n))
        if len(items) != q or len(covs) != p or len(ids) != n:
            raise ValidationError("label lengths do not match data dimensions")
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "obs_mask", _readonly(mask))
        object.__setattr__(self, "coords", _readonly(coords))
        object.__setattr__(self, "X", _readonly(X))
        object.__setattr__(self, "item_names", items)
        object.__setattr__(self, "covariate_names", covs)
        object.__setattr__(self, "ids", ids)
        means = np.zeros(p) if self.x_means is None else self.x_means
        sds = np.ones(p) if self.x_sds is None else self.x_sds
        object.__setattr__(self, "x_means", _readonly(np.asarray(means, dtype=float)))
        object.__setattr__(self, "x_sds", _readonly(np.asarray(sds, dtype=float)))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def q(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def find_duplicate_coords(coords: np.ndarray, tol: float = DUPLICATE_TOL):
    """Return the first pair of row indices closer than ``tol``, else None."""
    coords = np.asarray(coords, dtype=float)
    if len(coords) < 2:
        return None
    pairs = cKDTree(coords).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return None
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    return int(pairs[0, 0]), int(pairs[0, 1])


def standardize_covariates(X_raw, names: Sequence[str] | None = None):
    """Center each column and scale it to unit sample sd (n - 1 denominator).

    Returns
    -------
    X_std, means, sds
        ``means`` and ``sds`` are needed to transform covariates at
        prediction locations the same way.
    """
    X_raw = np.asarray(X_raw, dtype=float)
    if X_raw.ndim == 1:
        X_raw = X_raw[:, None]
    n, p = X_raw.shape
    if n < 2:
        raise ValidationError("standardization needs at least 2 rows")
    if not np.all(np.isfinite(X_raw)):
        raise ValidationError("covariates contain missing or non-finite values")
    means = X_raw.mean(axis=0)
    sds = X_raw.std(axis=0, ddof=1)
    for k in range(p):
        if sds[k] < 1e-12:
            label = names[k] if names is not None else f"column {k}"
            raise ValidationError(f"covariate {label} is constant and cannot be standardized")
    X_std = (X_raw - means) / sds
    # one correction pass so the invariant holds to ~1e-15 rather than ~1e-12
    X_std -= X_std.mean(axis=0)
    X_std /= X_std.std(axis=0, ddof=1)
    return X_std, means, sds


@dataclass(frozen=True)
class ItemConstraint:
    """Affine link ``a* = u + L a`` for one item, plus optional sign constraints.

    ``active[k]`` is the diagonal of ``L``. ``fixed[k]`` is only meaningful
    where ``active[k]`` is False.
    """

    fixed: np.ndarray
    active: np.ndarray
    signs: tuple[str, ...] = ()

    def __post_init__(self):
        u = np.asarray(self.fixed, dtype=float).ravel()
        active = np.asarray(self.active).ravel()
        if not np.all(np.isin(active, (0, 1))):
            raise ValidationError("activation entries must be 0 or 1")
        active = active.astype(bool)
        if u.shape != active.shape:
            raise ValidationError(f"fixed values ({u.size}) and activation ({active.size}) differ in length")
        signs = tuple(self.signs) or (SIGN_FREE,) * u.size
        if len(signs) != u.size:
            raise ValidationError("one sign entry per factor is required")
        for k, s in enumerate(signs):
            if s not in _SIGNS:
                raise ValidationError(f"unknown sign constraint {s!r}")
            if s != SIGN_FREE and not active[k]:
                raise ValidationError(f"factor {k} is fixed and cannot also carry a sign constraint")
        u = np.where(active, 0.0, u)
        object.__setattr__(self, "fixed", _readonly(u))
        object.__setattr__(self, "active", _readonly(active))
        object.__setattr__(self, "signs", signs)

    @property
    def m(self) -> int:
        return self.fixed.size

    @property
    def L(self) -> np.ndarray:
        return np.diag(self.active.astype(float))

    @classmethod
    def free(cls, m: int) -> "ItemConstraint":
        return cls(np.zeros(m), np.ones(m, dtype=int))


def apply_constraint(constraint: ItemConstraint, a_free) -> np.ndarray:
    """Return ``u + L a_free``; entries with ``L = 0`` equal ``u`` exactly."""
    a_free = np.asarray(a_free, dtype=float)
    if a_free.shape != (constraint.m,):
        raise ValidationError(f"expected {constraint.m} free values, got shape {a_free.shape}")
    return np.where(constraint.active, constraint.fixed + a_free, constraint.fixed)


def resolve_discriminations(constraints: Sequence[ItemConstraint], A_free) -> np.ndarray:
    """Stack ``apply_constraint`` over items: returns the ``(q, m)`` matrix A*."""
    A_free = np.asarray(A_free, dtype=float)
    U = np.stack([c.fixed for c in constraints])
    active = np.stack([c.active for c in constraints])
    if A_free.shape != U.shape:
        raise ValidationError(f"A_free shape {A_free.shape} != {U.shape}")
    return np.where(active, U + A_free, U)


@dataclass(frozen=True)
class LoadingStructure:
    """Sparsity pattern ``(m, g)`` of T and the values of its free entries.

    Values are listed in row-major order of the pattern's nonzero positions.
    """

    pattern: np.ndarray
    values: np.ndarray | None = None

    def __post_init__(self):
        pattern = np.asarray(self.pattern)
        if pattern.ndim != 2:
            raise ValidationError("loading pattern must be an (m, g) matrix")
        if not np.all(np.isin(pattern, (0, 1))):
            raise ValidationError("loading pattern entries must be 0 or 1")
        pattern = pattern.astype(bool)
        m, g = pattern.shape
        if g > m:
            raise ValidationError(f"number of Gaussian processes g={g} exceeds factors m={m}")
        for col in range(g):
            if not pattern[:, col].any():
                raise ValidationError(f"Gaussian process {col} loads on no factor")
        values = None
        if self.values is not None:
            values = np.asarray(self.values, dtype=float).ravel()
            if values.size != pattern.sum():
                raise ValidationError(
                    f"loading values count {values.size} != pattern nonzeros {int(pattern.sum())}")
            values = _readonly(values)
        object.__setattr__(self, "pattern", _readonly(pattern))
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.pattern.shape[0]

    @property
    def g(self) -> int:
        return self.pattern.shape[1]

    @property
    def n_free(self) -> int:
        return int(self.pattern.sum())

    def gp_index(self) -> np.ndarray:
        """Column (GP) index of each free entry, in storage order."""
        return np.nonzero(self.pattern)[1]


def build_loading_matrix(structure: LoadingStructure, values=None) -> np.ndarray:
    """Place the free values at the pattern's nonzero positions (row-major)."""
    vals = structure.values if values is None else np.asarray(values, dtype=float).ravel()
    if vals is None:
        raise ValidationError("no loading values supplied")
    if vals.size != structure.n_free:
        raise ValidationError(f"loading values count {vals.size} != pattern nonzeros {structure.n_free}")
    T = np.zeros(structure.pattern.shape)
    T[structure.pattern] = vals
    return T


def extract_loading_values(structure: LoadingStructure, T) -> np.ndarray:
    return np.asarray(T, dtype=float)[structure.pattern].copy()


def _vec(value, size: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(size, float(arr))
    arr = arr.ravel()
    if arr.size != size:
        raise ValidationError(f"prior {name} needs {size} entries, got {arr.size}")
    return arr


@dataclass(frozen=True)
class PriorSpec:
    """Independent Gaussian priors (variances, not sds) and the LKJ shape.

    ``a_mean``/``a_var`` are ``(q, m)``; the log-scale priors of the free T
    entries and of the GP scales are normal with the given means/variances.
    """

    c_var: np.ndarray
    a_mean: np.ndarray
    a_var: np.ndarray
    beta_var: np.ndarray
    logT_mean: np.ndarray
    logT_var: np.ndarray
    logphi_mean: np.ndarray
    logphi_var: np.ndarray
    eta: float = 1.5

    def __post_init__(self):
        for name in ("c_var", "a_mean", "a_var", "beta_var", "logT_mean", "logT_var",
                     "logphi_mean", "logphi_var"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"prior {name} must be finite")
            if name.endswith("var") and np.any(arr <= 0):
                raise ValidationError(f"prior {name} must be strictly positive")
            object.__setattr__(self, name, _readonly(arr))
        if not self.eta > 0:
            raise ValidationError("LKJ shape eta must be positive")

    @classmethod
    def default(cls, constraints: Sequence[ItemConstraint], loading: LoadingStructure, p: int, *,
                c_var=1.0, a_mean=0.0, a_var=1.0, beta_var=1.0, sign_mean=1.0, sign_sd=0.45,
                logT_mean=math.log(0.4), logT_var=0.4, logphi_mean=None, logphi_var=0.3,
                eta=1.5) -> "PriorSpec":
        """Priors mirroring the food-insecurity case study.

        Sign-constrained loadings get mean ``+-sign_mean`` and sd ``sign_sd``
        unless ``a_mean``/``a_var`` are given as full matrices.
        """
        q, m, g = len(constraints), loading.m, loading.g
        if np.ndim(a_mean) == 0 and np.ndim(a_var) == 0:
            am = np.full((q, m), float(a_mean))
            av = np.full((q, m), float(a_var))
            for j, con in enumerate(constraints):
                for k, s in enumerate(con.signs):
                    if s != SIGN_FREE:
                        am[j, k] = sign_mean if s == SIGN_POSITIVE else -sign_mean
                        av[j, k] = sign_sd ** 2
        else:
            am = np.broadcast_to(np.asarray(a_mean, dtype=float), (q, m)).copy()
            av = np.broadcast_to(np.asarray(a_var, dtype=float), (q, m)).copy()
        if logphi_mean is None:
            logphi_mean = [math.log(160.0)] + [math.log(80.0)] * max(g - 1, 0)
        return cls(
            c_var=_vec(c_var, q, "c_var"),
            a_mean=am, a_var=av,
            beta_var=_vec(beta_var, p * m, "beta_var"),
            logT_mean=_vec(logT_mean, loading.n_free, "logT_mean"),
            logT_var=_vec(logT_var, loading.n_free, "logT_var"),
            logphi_mean=_vec(logphi_mean, g, "logphi_mean"),
            logphi_var=_vec(logphi_var, g, "logphi_var"),
            eta=float(eta),
        )


@dataclass(frozen=True)
class ModelSpec:
    """Everything needed to define the spatial item factor model."""

    m: int
    constraints: tuple[ItemConstraint, ...]
    loading: LoadingStructure
    priors: PriorSpec
    D: np.ndarray = field(default=None)
    corr_fn: str = "exponential"
    sign_mode: str = "soft"

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        D = np.ones(self.m) if self.D is None else np.asarray(self.D, dtype=float).ravel()
        if D.size != self.m:
            raise ValidationError(f"D needs {self.m} entries, got {D.size}")
        object.__setattr__(self, "D", _readonly(D))
        if any(c.m != self.m for c in self.constraints):
            raise ValidationError("every item constraint must have m entries")
        if self.loading.m != self.m:
            raise ValidationError(f"loading pattern has {self.loading.m} rows, expected m={self.m}")
        if self.corr_fn != "exponential":
            raise ValidationError(f"unsupported correlation function {self.corr_fn!r}")
        if self.sign_mode not in ("soft", "hard"):
            raise ValidationError("sign_mode must be 'soft' or 'hard'")
        q, p = self.q, self.priors.beta_var.size // max(self.m, 1)
        pr = self.priors
        if pr.c_var.shape != (q,) or pr.a_mean.shape != (q, self.m) or pr.a_var.shape != (q, self.m):
            raise ValidationError("item prior dimensions do not match the constraints")
        if pr.logT_mean.size != self.loading.n_free or pr.logphi_mean.size != self.loading.g:
            raise ValidationError("covariance prior dimensions do not match the loading structure")
        if pr.beta_var.size != p * self.m:
            raise ValidationError("beta prior size must be a multiple of m")

    @property
    def q(self) -> int:
        return len(self.constraints)

    @property
    def g(self) -> int:
        return self.loading.g

    @property
    def p(self) -> int:
        return self.priors.beta_var.size // self.m

    @property
    def n_nu(self) -> int:
        return self.m * (self.m - 1) // 2

    @property
    def U(self) -> np.ndarray:
        return np.stack([c.fixed for c in self.constraints])

    @property
    def active(self) -> np.ndarray:
        return np.stack([c.active for c in self.constraints])

    @property
    def signs(self) -> np.ndarray:
        return np.array([c.signs for c in self.constraints], dtype=object)

    def resolve(self, A_free) -> np.ndarray:
        return resolve_discriminations(self.constraints, A_free)

    def to_dict(self) -> dict:
        """Plain-data form used for hashing and manifests."""
        pr = self.priors
        return {
            "m": self.m, "corr_fn": self.corr_fn, "sign_mode": self.sign_mode,
            "D": self.D.tolist(),
            "fixed": self.U.tolist(), "active": self.active.astype(int).tolist(),
            "signs": [list(c.signs) for c in self.constraints],
            "loading_pattern": self.loading.pattern.astype(int).tolist(),
            "priors": {
                "c_var": pr.c_var.tolist(), "a_mean": pr.a_mean.tolist(), "a_var": pr.a_var.tolist(),
                "beta_var": pr.beta_var.tolist(), "logT_mean": pr.logT_mean.tolist(),
                "logT_var": pr.logT_var.tolist(), "logphi_mean": pr.logphi_mean.tolist(),
                "logphi_var": pr.logphi_var.tolist(), "eta": pr.eta,
            },
        }


@dataclass(frozen=True)
class IdentifiabilityReport:
    ok: bool
    messages: tuple[str, ...]

    def __bool__(self):
        return self.ok


def _rotation_rank_ok(active: np.ndarray, zero_fixed: np.ndarray) -> bool:
    """Check that the zero pattern removes every infinitesimal rotation.

    An infinitesimal orthogonal rotation is ``I + S`` with ``S`` skew. The
    zeros survive ``A (I - S)`` only if ``(A S)[j, k] = 0`` for every fixed
    zero ``(j, k)``. With generic values for the free loadings the pattern
    breaks rotation iff these equations force ``S = 0``.
    """
    q, m = active.shape
    rng = np.random.default_rng(20240611)
    A = np.where(active, rng.uniform(0.5, 1.5, size=(q, m)), 0.0)
    pairs = [(r, s) for r in range(m) for s in range(r + 1, m)]
    rows = []
    for j, k in zip(*np.nonzero(zero_fixed)):
        # (A S)[j, k] = sum_l A[j, l] S[l, k]
        row = np.zeros(len(pairs))
        for idx, (r, s) in enumerate(pairs):
            if s == k:
                row[idx] += A[j, r]  # S[r, k] = +x
            if r == k:
                row[idx] -= A[j, s]  # S[s, k] = -x
        rows.append(row)
    if not rows:
        return False
    return np.linalg.matrix_rank(np.array(rows), tol=1e-8) == len(pairs)


def validate_identifiability(spec: ModelSpec) -> IdentifiabilityReport:
    """Check the restrictions that remove rotation, reflection and scaling aliasing."""
    m = spec.m
    messages = []
    active = spec.active
    U = spec.U
    zero_fixed = ~active & (U == 0)
    needed = m * (m - 1) // 2
    if m > 1:
        n_zero = int(zero_fixed.sum())
        if n_zero < needed:
            messages.append(
                f"rotation aliasing: {n_zero} loadings fixed at zero, at least {needed} required")
        elif not _rotation_rank_ok(active, zero_fixed):
            messages.append(
                "rotation aliasing: the zero loadings do not pin down the factor axes "
                "(arrange them in a lower-triangular pattern)")
    signs = spec.signs
    for k in range(m):
        has_sign = any(signs[j, k] != SIGN_FREE for j in range(spec.q))
        has_fixed = bool(np.any(~active[:, k] & (U[:, k] != 0)))
        if not (has_sign or has_fixed):
            messages.append(
                f"reflection aliasing: factor {k + 1} has no sign-constrained or fixed nonzero loading")
    if not np.all(np.isfinite(spec.D)) or np.any(spec.D <= 0):
        messages.append("scaling aliasing: residual sds D must be fixed positive values")
    return IdentifiabilityReport(ok=not messages, messages=tuple(messages))
