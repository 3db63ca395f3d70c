"""Algebra of weighted Gaussian kernels.

A mixture of weighted Gaussian kernels approximates the (unnormalized)
product of the likelihood and the prior of the a-priori-relevant
parameters.  This module provides the kernel containers, the block
partition of the parameter vector into questionable and relevant
coordinates, conditional decompositions of a partitioned kernel, and the
kernel-density construction (one kernel per posterior sample, a shared
bandwidth matrix from Scott's rule).

All containers are immutable after construction; every operation is a
pure function, so results may be computed kernel-by-kernel in any order
and combined deterministically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import InvalidInputError, SingularityError

__all__ = [
    "ParameterPartition",
    "GaussianKernel",
    "PartitionedKernel",
    "GmmApproximation",
    "build_kde_gmm",
    "partition_kernel",
    "assemble_kernel",
    "condition_kernel",
    "log_gaussian_density",
    "scott_factor",
    "chol_spd",
]

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative diagonal jitter attempted (in order) when a Cholesky
# factorization of a nominally-SPD matrix fails.
JITTER_SCALES = (1e-10, 1e-8)


# ---------------------------------------------------------------------------
# numerically-guarded Cholesky
# ---------------------------------------------------------------------------

def _worst_direction(m):
    """Index of the coordinate dominating the most-singular direction."""
    w, v = np.linalg.eigh(m)
    return int(np.argmax(np.abs(v[:, int(np.argmin(w))])))

def chol_spd(m, name="matrix"):
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    The clean matrix is factored first; on failure a small jitter
    proportional to each diagonal entry is added (two escalating
    attempts).  The relative jitter keeps coordinates with very
    different scales undistorted.

    Returns
    -------
    (L, jitter) : the lower triangular factor and the relative jitter
        that was required (0.0 for a clean factorization).

    Raises
    ------
    SingularityError
        If the matrix is not positive definite after the jitter policy;
        the error names the offending coordinate.
    """
    m = np.asarray(m, dtype=float)
    diag = np.diag(m).copy()
    for eps in (0.0,) + JITTER_SCALES:
        try:
            mj = m if eps == 0.0 else m + np.diag(eps * diag)
            return np.linalg.cholesky(mj), eps
        except np.linalg.LinAlgError:
            continue
    zero = np.flatnonzero(diag <= 0)
    dim = int(zero[0]) if zero.size else _worst_direction(m)
    raise SingularityError(
        f"{name} is not positive definite (worst coordinate {dim})",
        dimension=dim,
    )


def _chol_inverse(L):
    """Inverse of A from its lower Cholesky factor, symmetrized."""
    inv = linalg.cho_solve((L, True), np.eye(L.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterPartition:
    """Index split of the parameter vector into questionable and relevant.

    Attributes
    ----------
    total_dim : int
        Full parameter dimension.
    questionable_indices : tuple of int
        Coordinates whose relevance is to be learned (dimension >= 1).
    relevant_indices : tuple of int
        Remaining coordinates, carrying an informative prior (may be
        empty).
    """

    total_dim: int
    questionable_indices: tuple
    relevant_indices: tuple

    def __post_init__(self):
        q = tuple(int(i) for i in self.questionable_indices)
        r = tuple(int(i) for i in self.relevant_indices)
        object.__setattr__(self, "questionable_indices", q)
        object.__setattr__(self, "relevant_indices", r)
        if self.total_dim < 1:
            raise InvalidInputError("total_dim must be positive")
        if len(q) < 1:
            raise InvalidInputError("at least one questionable coordinate is required")
        if set(q) & set(r):
            raise InvalidInputError("questionable and relevant indices overlap")
        if sorted(q + r) != list(range(self.total_dim)):
            raise InvalidInputError(
                "questionable and relevant indices must jointly cover "
                f"0..{self.total_dim - 1}"
            )

    @classmethod
    def from_questionable(cls, total_dim, questionable):
        """Partition with the complement of `questionable` kept, in order."""
        q = tuple(int(i) for i in questionable)
        r = tuple(i for i in range(total_dim) if i not in set(q))
        return cls(total_dim, q, r)

    @property
    def n_alpha(self):
        return len(self.questionable_indices)

    @property
    def n_relevant(self):
        return len(self.relevant_indices)


@dataclass(frozen=True)
class GaussianKernel:
    """One weighted Gaussian kernel: ``weight * N(x | mean, cov)``."""

    weight: float
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if self.weight <= 0:
            raise InvalidInputError("kernel weight must be positive")
        if cov.shape != (mean.size, mean.size):
            raise InvalidInputError("covariance shape does not match mean")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(cov).max())):
            raise InvalidInputError("covariance must be symmetric")

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True)
class PartitionedKernel:
    """Block view of a kernel under a parameter partition.

    ``cross_cov`` has shape (n_alpha, n_relevant): row block of the
    questionable coordinates against the relevant ones.
    """

    weight: float
    mean_alpha: np.ndarray
    mean_rel: np.ndarray
    cov_alpha: np.ndarray
    cov_rel: np.ndarray
    cross_cov: np.ndarray
    partition: ParameterPartition


@dataclass(frozen=True)
class GmmApproximation:
    """Weighted Gaussian mixture with an attached parameter partition.

    Kernel parameters are stored as stacked arrays.  When every kernel
    shares one covariance matrix (the kernel-density construction) the
    matrix is stored once and broadcast on demand.
    """

    means: np.ndarray            # (K, N)
    weights: np.ndarray          # (K,)
    partition: ParameterPartition
    covs: np.ndarray = None      # (K, N, N) when per-kernel
    shared_cov: np.ndarray = None  # (N, N) when shared
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        k, n = means.shape
        if k < 1:
            raise InvalidInputError("a mixture requires at least one kernel")
        if weights.shape != (k,) or np.any(weights <= 0):
            raise InvalidInputError("weights must be positive, one per kernel")
        if n != self.partition.total_dim:
            raise InvalidInputError("kernel dimension does not match partition")
        if (self.shared_cov is None) == (self.covs is None):
            raise InvalidInputError("provide exactly one of covs / shared_cov")
        if self.shared_cov is not None:
            object.__setattr__(self, "shared_cov",
                               np.asarray(self.shared_cov, dtype=float))
            if self.shared_cov.shape != (n, n):
                raise InvalidInputError("shared covariance has wrong shape")
        else:
            object.__setattr__(self, "covs", np.asarray(self.covs, dtype=float))
            if self.covs.shape != (k, n, n):
                raise InvalidInputError("covariance stack has wrong shape")

    # -- basic views --------------------------------------------------------

    @property
    def n_kernels(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def has_shared_cov(self):
        return self.shared_cov is not None

    def cov_of(self, k):
        return self.shared_cov if self.has_shared_cov else self.covs[k]

    def kernel(self, k):
        return GaussianKernel(float(self.weights[k]), self.means[k], self.cov_of(k))

    @property
    def kernels(self):
        return [self.kernel(k) for k in range(self.n_kernels)]

    @classmethod
    def from_kernels(cls, kernels, partition, meta=None):
        if not kernels:
            raise InvalidInputError("a mixture requires at least one kernel")
        dims = {k.dim for k in kernels}
        if len(dims) != 1:
            raise InvalidInputError("all kernels must share one dimension")
        means = np.stack([k.mean for k in kernels])
        weights = np.array([k.weight for k in kernels])
        covs = np.stack([k.cov for k in kernels])
        if len(kernels) > 1 and all(
            np.array_equal(covs[0], c) for c in covs[1:]
        ):
            return cls(means, weights, partition, shared_cov=covs[0],
                       meta=meta or {})
        return cls(means, weights, partition, covs=covs, meta=meta or {})

    # -- densities and moments ----------------------------------------------

    def log_density(self, x):
        """Log of the (unnormalized) mixture density at one point."""
        x = np.asarray(x, dtype=float)
        terms = [
            np.log(self.weights[k])
            + log_gaussian_density(x, self.means[k], self.cov_of(k))
            for k in range(self.n_kernels)
        ]
        return float(_logsumexp(np.array(terms)))

    def marginal_density(self, indices, grid):
        """Normalized marginal pdf over a coordinate subset, on `grid`.

        Parameters
        ----------
        indices : sequence of int
            Coordinates (in the original parameter ordering) to keep.
        grid : array, shape (m,) for one index or (m, len(indices))

        Returns
        -------
        array, shape (m,): mixture marginal density values.
        """
        idx = np.asarray(indices, dtype=int)
        pts = np.asarray(grid, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = self.weights / self.weights.sum()
        out = np.zeros(pts.shape[0])
        for k in range(self.n_kernels):
            mu = self.means[k][idx]
            cov = self.cov_of(k)[np.ix_(idx, idx)]
            out += w[k] * np.exp(_mvn_logpdf_many(pts, mu, cov))
        return out

    def mixture_moments(self):
        """Mean and covariance of the normalized mixture."""
        w = self.weights / self.weights.sum()
        mean = w @ self.means
        cov = np.zeros((self.dim, self.dim))
        for k in range(self.n_kernels):
            d = self.means[k] - mean
            cov += w[k] * (self.cov_of(k) + np.outer(d, d))
        return mean, 0.5 * (cov + cov.T)

    def marginal_std(self, index):
        """Standard deviation of one coordinate under the mixture."""
        _, cov = self.mixture_moments()
        return float(np.sqrt(cov[index, index]))

    # -- serialization (`gmm-v1`) -------------------------------------------

    def to_json(self):
        doc = {
            "version": "gmm-v1",
            "partition": {
                "total_dim": self.partition.total_dim,
                "questionable_indices": list(self.partition.questionable_indices),
                "relevant_indices": list(self.partition.relevant_indices),
            },
            "kernels": [
                {
                    "weight": float(self.weights[k]),
                    "mean": self.means[k].tolist(),
                    "cov": self.cov_of(k).ravel().tolist(),
                }
                for k in range(self.n_kernels)
            ],
            "meta": self.meta,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("version") != "gmm-v1":
            raise InvalidInputError("unsupported mixture document version")
        p = doc["partition"]
        partition = ParameterPartition(
            p["total_dim"],
            tuple(p["questionable_indices"]),
            tuple(p["relevant_indices"]),
        )
        n = partition.total_dim
        kernels = [
            GaussianKernel(
                kd["weight"],
                np.array(kd["mean"], dtype=float),
                np.array(kd["cov"], dtype=float).reshape(n, n),
            )
            for kd in doc["kernels"]
        ]
        return cls.from_kernels(kernels, partition, meta=doc.get("meta", {}))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def scott_factor(n_samples, dim):
    """Scott's bandwidth factor ``n**(-1/(d+4))`` for a multivariate KDE."""
    return float(n_samples) ** (-1.0 / (dim + 4.0))


def build_kde_gmm(samples, partition):
    """Kernel-density mixture: one unit-weight kernel per sample.

    The shared covariance is ``scott_factor**2`` times the unbiased
    sample covariance (recorded in ``meta`` so downstream consumers can
    see the convention).

    Raises
    ------
    InvalidInputError
        Fewer than two samples, or dimension mismatch.
    SingularityError
        Degenerate sample covariance, naming the offending coordinate.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n, d = x.shape
    if n < 2:
        raise InvalidInputError("kernel density construction needs >= 2 samples")
    if d != partition.total_dim:
        raise InvalidInputError(
            f"samples have dimension {d}, partition expects {partition.total_dim}"
        )
    sample_cov = np.cov(x, rowvar=False, ddof=1).reshape(d, d)
    zero = np.flatnonzero(np.diag(sample_cov) <= 0.0)
    if zero.size:
        raise SingularityError(
            f"sample covariance is degenerate in coordinate {int(zero[0])}",
            dimension=int(zero[0]),
        )
    factor = scott_factor(n, d)
    cov = factor ** 2 * sample_cov
    _, jitter = chol_spd(cov, name="KDE bandwidth covariance")
    if jitter:
        cov = cov + np.diag(jitter * np.diag(cov))
    return GmmApproximation(
        means=x.copy(),
        weights=np.ones(n),
        partition=partition,
        shared_cov=cov,
        meta={
            "construction": "kde",
            "scott_factor": factor,
            "n_samples": n,
            "covariance_estimator": "unbiased",
            "jitter": jitter,
        },
    )


def partition_kernel(kernel, partition):
    """Extract the questionable/relevant blocks of one kernel."""
    if kernel.dim != partition.total_dim:
        raise InvalidInputError(
            f"kernel dimension {kernel.dim} does not match partition "
            f"dimension {partition.total_dim}"
        )
    qi = np.asarray(partition.questionable_indices, dtype=int)
    ri = np.asarray(partition.relevant_indices, dtype=int)
    return PartitionedKernel(
        weight=kernel.weight,
        mean_alpha=kernel.mean[qi],
        mean_rel=kernel.mean[ri],
        cov_alpha=kernel.cov[np.ix_(qi, qi)],
        cov_rel=kernel.cov[np.ix_(ri, ri)],
        cross_cov=kernel.cov[np.ix_(qi, ri)],
        partition=partition,
    )


def assemble_kernel(pk):
    """Inverse of :func:`partition_kernel`; bit-exact round trip."""
    p = pk.partition
    n = p.total_dim
    qi = np.asarray(p.questionable_indices, dtype=int)
    ri = np.asarray(p.relevant_indices, dtype=int)
    mean = np.empty(n)
    mean[qi] = pk.mean_alpha
    mean[ri] = pk.mean_rel
    cov = np.empty((n, n))
    cov[np.ix_(qi, qi)] = pk.cov_alpha
    cov[np.ix_(ri, ri)] = pk.cov_rel
    cov[np.ix_(qi, ri)] = pk.cross_cov
    cov[np.ix_(ri, qi)] = pk.cross_cov.T
    return GaussianKernel(pk.weight, mean, cov)


def condition_kernel(pk, phi_alpha):
    """Moments of the relevant block conditioned on the questionable one.

    Returns ``(cond_mean, cond_cov)`` with

        cond_mean = mean_rel + C^T cov_alpha^{-1} (phi_alpha - mean_alpha)
        cond_cov  = cov_rel - C^T cov_alpha^{-1} C

    The conditional covariance does not depend on ``phi_alpha``.
    """
    phi_alpha = np.atleast_1d(np.asarray(phi_alpha, dtype=float))
    if phi_alpha.shape != pk.mean_alpha.shape:
        raise InvalidInputError("phi_alpha has wrong dimension")
    L, _ = chol_spd(pk.cov_alpha, name="questionable-block covariance")
    gain = linalg.cho_solve((L, True), pk.cross_cov, check_finite=False)
    cond_mean = pk.mean_rel + gain.T @ (phi_alpha - pk.mean_alpha)
    cond_cov = pk.cov_rel - pk.cross_cov.T @ gain
    return cond_mean, 0.5 * (cond_cov + cond_cov.T)


def log_gaussian_density(x, mean, cov):
    """``log N(x | mean, cov)`` via triangular factorization.

    Stable in the log domain for condition numbers up to ~1e12.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if x.shape != mean.shape or cov.shape != (x.size, x.size):
        raise InvalidInputError("dimension mismatch in Gaussian density")
    L, _ = chol_spd(cov, name="covariance")
    z = linalg.solve_triangular(L, x - mean, lower=True, check_finite=False)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    return float(-0.5 * (x.size * LOG_2PI + log_det + z @ z))


# ---------------------------------------------------------------------------
# vectorized helpers shared with the evidence module
# ---------------------------------------------------------------------------

def _logsumexp(a):
    m = np.max(a)
    if not np.isfinite(m):
        return m
    return m + np.log(np.sum(np.exp(a - m)))


def _mvn_logpdf_many(x, mean, cov):
    """Log Gaussian density at many points; x has shape (m, d)."""
    L, _ = chol_spd(cov, name="covariance")
    z = linalg.solve_triangular(L, (x - mean).T, lower=True, check_finite=False)
    log_det = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (mean.size * LOG_2PI + log_det + np.sum(z * z, axis=0))
