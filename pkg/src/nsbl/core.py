"""Semi-analytical evidence machinery over a Gaussian-mixture approximation.

Given a mixture approximation of likelihood x known-prior and a diagonal
zero-mean Gaussian relevance prior with per-coordinate precision
``alpha = exp(log_alpha)`` on the questionable block, every quantity of
interest is available in closed form per kernel:

* model evidence      sum_k a_k N(mu_a_k | 0, Sigma_a_k + A^-1)
* posterior mixture   reweighted kernels with shrunk blocks
* objective           log-evidence + Gamma hyperprior in log alpha
* gradient / Hessian  analytical, via the per-kernel factors v_i^(k)
* relevance           gamma_i = 1 - alpha_i P_ii, aggregated as an RMS
                      over kernels

Numerical conventions: all kernel evidences are combined in the log
domain with log-sum-exp; the posterior covariance of the questionable
block is computed from the precision form ``(Sigma_a^-1 + A)^-1``, which
stays accurate at both ends of the working box |log alpha| <= 50.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import InvalidInputError, SingularityError
from .gmm import (
    LOG_2PI,
    GmmApproximation,
    _logsumexp,
    _mvn_logpdf_many,
    chol_spd,
)

__all__ = [
    "LOG_ALPHA_BOX",
    "HyperPrior",
    "LogAlpha",
    "EvidenceTerms",
    "PosteriorGmm",
    "ObjectiveEval",
    "RelevanceReport",
    "log_evidence",
    "posterior",
    "objective",
    "gradient",
    "hessian",
    "relevance",
    "NsblProblem",
    "write_evaluation_trace",
]

# Working box for log alpha: the Dirac-delta pruning limit is reached
# numerically far inside it, and exp(log_alpha) stays finite.
LOG_ALPHA_BOX = 50.0


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HyperPrior:
    """Per-coordinate Gamma hyperprior on the precisions.

    ``shape`` and ``rate`` may be zero, which is the improper
    flat-in-log-alpha limit; the default is exp(-6) for both, small
    enough not to bias relevance yet strong enough to regularize the
    flat evidence plateaus at large log alpha.
    """

    shape: np.ndarray
    rate: np.ndarray

    def __post_init__(self):
        shape = np.atleast_1d(np.asarray(self.shape, dtype=float))
        rate = np.atleast_1d(np.asarray(self.rate, dtype=float))
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "rate", rate)
        if shape.shape != rate.shape:
            raise InvalidInputError("shape and rate must have equal length")
        if np.any(shape < 0) or np.any(rate < 0):
            raise InvalidInputError("shape and rate must be nonnegative")

    @classmethod
    def default(cls, n_alpha, log_value=-6.0):
        v = np.full(n_alpha, np.exp(log_value))
        return cls(v, v.copy())

    def log_density_term(self, log_alpha_values):
        """Contribution ``sum_i r_i log a_i - s_i a_i`` to the objective."""
        la = log_alpha_values
        return float(np.sum(self.shape * la - self.rate * np.exp(la)))


@dataclass(frozen=True)
class LogAlpha:
    """Point in log-precision space, constrained to the working box."""

    values: np.ndarray
    was_clamped: bool = False

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", v)
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("log alpha must be finite")
        if np.any(np.abs(v) > LOG_ALPHA_BOX + 1e-12):
            raise InvalidInputError(
                f"log alpha outside working box |x| <= {LOG_ALPHA_BOX}"
            )

    @classmethod
    def clamp(cls, values):
        """Clip into the working box, flagging whether clipping occurred."""
        v = np.atleast_1d(np.asarray(values, dtype=float))
        clipped = np.clip(v, -LOG_ALPHA_BOX, LOG_ALPHA_BOX)
        return cls(clipped, was_clamped=bool(np.any(clipped != v)))

    @property
    def n_alpha(self):
        return self.values.size

    @property
    def alpha(self):
        return np.exp(self.values)


@dataclass(frozen=True)
class EvidenceTerms:
    """Per-kernel factors behind one evidence evaluation.

    ``p_alpha`` and ``m_alpha`` are the posterior covariance/mean of the
    questionable block per kernel; ``weights`` are the normalized kernel
    weights of the posterior mixture.
    """

    log_alpha: LogAlpha
    log_evidence: float
    log_kernel_evidence: np.ndarray   # (K,)
    weights: np.ndarray               # (K,)
    m_alpha: np.ndarray               # (K, Na)
    p_alpha: np.ndarray               # (K, Na, Na) view; shared storage for KDE
    log_det_b: np.ndarray             # (K,)
    b_chol: np.ndarray                # (K, Na, Na) view
    shared_blocks: bool

    @property
    def n_kernels(self):
        return self.weights.size

    @property
    def p_alpha_diag(self):
        return np.einsum("kii->ki", self.p_alpha)


@dataclass(frozen=True)
class PosteriorGmm:
    """Posterior parameter mixture at a fixed relevance-prior setting.

    Per kernel: normalized weight, mean/covariance blocks of the
    questionable (``alpha``) and relevant (``rel``) coordinates and
    their cross covariance (shape (Na, Nr)).
    """

    partition: object
    log_alpha: LogAlpha
    weights: np.ndarray      # (K,)
    m_alpha: np.ndarray      # (K, Na)
    p_alpha: np.ndarray      # (K, Na, Na)
    m_rel: np.ndarray        # (K, Nr)
    p_rel: np.ndarray        # (K, Nr, Nr)
    cross: np.ndarray        # (K, Na, Nr)

    @property
    def n_kernels(self):
        return self.weights.size

    def kernel_full_mean(self, k):
        """Posterior kernel mean in the original parameter ordering."""
        p = self.partition
        mean = np.empty(p.total_dim)
        mean[list(p.questionable_indices)] = self.m_alpha[k]
        mean[list(p.relevant_indices)] = self.m_rel[k]
        return mean

    def kernel_full_cov(self, k):
        """Posterior kernel covariance in the original ordering."""
        p = self.partition
        qi = np.asarray(p.questionable_indices, dtype=int)
        ri = np.asarray(p.relevant_indices, dtype=int)
        cov = np.empty((p.total_dim, p.total_dim))
        cov[np.ix_(qi, qi)] = self.p_alpha[k]
        cov[np.ix_(ri, ri)] = self.p_rel[k]
        cov[np.ix_(qi, ri)] = self.cross[k]
        cov[np.ix_(ri, qi)] = self.cross[k].T
        return cov

    def marginal_density(self, indices, grid):
        """Posterior marginal pdf over a coordinate subset, on `grid`."""
        idx = np.asarray(indices, dtype=int)
        pts = np.asarray(grid, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        out = np.zeros(pts.shape[0])
        for k in range(self.n_kernels):
            mu = self.kernel_full_mean(k)[idx]
            cov = self.kernel_full_cov(k)[np.ix_(idx, idx)]
            out += self.weights[k] * np.exp(_mvn_logpdf_many(pts, mu, cov))
        return out

    def marginal_moments(self, index):
        """Mean and variance of one original coordinate."""
        means = np.array([self.kernel_full_mean(k)[index]
                          for k in range(self.n_kernels)])
        variances = np.array([self.kernel_full_cov(k)[index, index]
                              for k in range(self.n_kernels)])
        mean = float(self.weights @ means)
        var = float(self.weights @ (variances + means ** 2) - mean ** 2)
        return mean, var

    def marginal_std(self, index):
        return float(np.sqrt(max(self.marginal_moments(index)[1], 0.0)))


@dataclass(frozen=True)
class ObjectiveEval:
    """Objective value with its analytical derivatives at one point."""

    log_alpha: LogAlpha
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    log_evidence: float
    gamma_rms: np.ndarray
    v_factors: np.ndarray = field(repr=False)   # (K, Na)


@dataclass(frozen=True)
class RelevanceReport:
    """Per-parameter relevance indicators and verdicts."""

    per_kernel: np.ndarray   # (K, Na), clamped to [0, 1]
    rms: np.ndarray          # (Na,)
    verdicts: tuple          # 'relevant' | 'irrelevant' | 'borderline'
    gamma_tol: float


# ---------------------------------------------------------------------------
# evidence core
# ---------------------------------------------------------------------------

def _alpha_blocks(gmm):
    p = gmm.partition
    qi = np.asarray(p.questionable_indices, dtype=int)
    mu_a = gmm.means[:, qi]
    if gmm.has_shared_cov:
        return mu_a, gmm.shared_cov[np.ix_(qi, qi)], True
    return mu_a, gmm.covs[:, qi[:, None], qi[None, :]], False


def _rel_blocks(gmm):
    p = gmm.partition
    qi = np.asarray(p.questionable_indices, dtype=int)
    ri = np.asarray(p.relevant_indices, dtype=int)
    mu_r = gmm.means[:, ri]
    if gmm.has_shared_cov:
        return mu_r, gmm.shared_cov[np.ix_(ri, ri)], gmm.shared_cov[np.ix_(qi, ri)], True
    return (
        mu_r,
        gmm.covs[:, ri[:, None], ri[None, :]],
        gmm.covs[:, qi[:, None], ri[None, :]],
        False,
    )


def _evidence_blocks_one(sigma_a, alpha, kernel=None):
    """B, its Cholesky/log-det, and the posterior block (P, Sigma^-1).

    Returns (chol_b, log_det_b, p, sigma_inv).  Raises SingularityError
    tagged with the kernel index on failure.
    """
    na = alpha.size
    b = sigma_a + np.diag(1.0 / alpha)
    try:
        lb, _ = chol_spd(b, name="evidence covariance")
    except SingularityError as err:
        raise SingularityError(str(err), dimension=err.dimension,
                               kernel=kernel) from None
    log_det_b = 2.0 * float(np.sum(np.log(np.diag(lb))))
    ls, _ = chol_spd(sigma_a, name="questionable-block covariance")
    sigma_inv = linalg.cho_solve((ls, True), np.eye(na), check_finite=False)
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    m = sigma_inv + np.diag(alpha)
    lm, _ = chol_spd(m, name="posterior precision")
    p = linalg.cho_solve((lm, True), np.eye(na), check_finite=False)
    p = 0.5 * (p + p.T)
    return lb, log_det_b, p, sigma_inv


def evidence_terms(gmm, la):
    """Evidence and all per-kernel factors at one log-precision point."""
    if la.n_alpha != gmm.partition.n_alpha:
        raise InvalidInputError(
            "log alpha length does not match the number of questionable "
            "parameters"
        )
    mu_a, sigma_a, shared = _alpha_blocks(gmm)
    k, na = mu_a.shape
    alpha = la.alpha

    if shared:
        lb, log_det_b, p, sigma_inv = _evidence_blocks_one(sigma_a, alpha)
        z = linalg.solve_triangular(lb, mu_a.T, lower=True, check_finite=False)
        quad = np.sum(z * z, axis=0)
        log_norm = -0.5 * (na * LOG_2PI + log_det_b + quad)
        m_all = (p @ (sigma_inv @ mu_a.T)).T
        p_all = np.broadcast_to(p, (k, na, na))
        lb_all = np.broadcast_to(lb, (k, na, na))
        log_det_all = np.full(k, log_det_b)
    else:
        log_norm = np.empty(k)
        m_all = np.empty((k, na))
        p_all = np.empty((k, na, na))
        lb_all = np.empty((k, na, na))
        log_det_all = np.empty(k)
        for i in range(k):
            lb, log_det_b, p, sigma_inv = _evidence_blocks_one(
                sigma_a[i], alpha, kernel=i)
            z = linalg.solve_triangular(lb, mu_a[i], lower=True,
                                        check_finite=False)
            log_norm[i] = -0.5 * (na * LOG_2PI + log_det_b + z @ z)
            m_all[i] = p @ (sigma_inv @ mu_a[i])
            p_all[i] = p
            lb_all[i] = lb
            log_det_all[i] = log_det_b

    log_kernel = np.log(gmm.weights) + log_norm
    total = _logsumexp(log_kernel)
    weights = np.exp(log_kernel - total)
    return EvidenceTerms(
        log_alpha=la,
        log_evidence=float(total),
        log_kernel_evidence=log_kernel,
        weights=weights,
        m_alpha=m_all,
        p_alpha=p_all,
        log_det_b=log_det_all,
        b_chol=lb_all,
        shared_blocks=shared,
    )


def log_evidence(gmm, la):
    """Log of the kernel-sum evidence; returns ``(value, EvidenceTerms)``."""
    et = evidence_terms(gmm, la)
    return et.log_evidence, et


def posterior(gmm, la, et=None):
    """Posterior parameter mixture at the given log precisions."""
    if et is None:
        et = evidence_terms(gmm, la)
    mu_a, sigma_a, _ = _alpha_blocks(gmm)
    mu_r, sigma_r, cross, shared = _rel_blocks(gmm)
    k, na = mu_a.shape
    nr = mu_r.shape[1]

    if nr == 0:
        empty_r = np.zeros((k, 0))
        return PosteriorGmm(
            partition=gmm.partition, log_alpha=la, weights=et.weights,
            m_alpha=et.m_alpha, p_alpha=et.p_alpha,
            m_rel=empty_r, p_rel=np.zeros((k, 0, 0)),
            cross=np.zeros((k, na, 0)),
        )

    if shared:
        lb = et.b_chol[0]
        # B^-1 mu_a for all kernels at once, and B^-1 C once.
        binv_mu = linalg.cho_solve((lb, True), mu_a.T, check_finite=False)
        binv_c = linalg.cho_solve((lb, True), cross, check_finite=False)
        m_rel = mu_r - (cross.T @ binv_mu).T
        p_rel_one = sigma_r - cross.T @ binv_c
        p_rel_one = 0.5 * (p_rel_one + p_rel_one.T)
        d_one = cross - sigma_a @ binv_c
        p_rel = np.broadcast_to(p_rel_one, (k, nr, nr))
        cross_out = np.broadcast_to(d_one, (k, na, nr))
    else:
        m_rel = np.empty((k, nr))
        p_rel = np.empty((k, nr, nr))
        cross_out = np.empty((k, na, nr))
        for i in range(k):
            lb = et.b_chol[i]
            binv_mu = linalg.cho_solve((lb, True), mu_a[i], check_finite=False)
            binv_c = linalg.cho_solve((lb, True), cross[i], check_finite=False)
            m_rel[i] = mu_r[i] - cross[i].T @ binv_mu
            pr = sigma_r[i] - cross[i].T @ binv_c
            p_rel[i] = 0.5 * (pr + pr.T)
            cross_out[i] = cross[i] - sigma_a[i] @ binv_c

    return PosteriorGmm(
        partition=gmm.partition, log_alpha=la, weights=et.weights,
        m_alpha=et.m_alpha, p_alpha=et.p_alpha,
        m_rel=m_rel, p_rel=p_rel, cross=cross_out,
    )


# ---------------------------------------------------------------------------
# objective, derivatives, relevance
# ---------------------------------------------------------------------------

def objective(gmm, la, hp, et=None):
    """Objective value: log evidence plus the hyperprior term."""
    if et is None:
        et = evidence_terms(gmm, la)
    return et.log_evidence + hp.log_density_term(la.values)


def _v_factors(et, la):
    """Per-kernel evidence log-derivatives v_i^(k), shape (K, Na)."""
    alpha = la.alpha
    p_diag = et.p_alpha_diag
    return -0.5 * (-1.0 + alpha * p_diag + alpha * et.m_alpha ** 2)


def gradient(gmm, la, hp, et=None):
    """Gradient of the objective with respect to log alpha."""
    if et is None:
        et = evidence_terms(gmm, la)
    v = _v_factors(et, la)
    return et.weights @ v + hp.shape - hp.rate * la.alpha


def hessian(gmm, la, hp, et=None, weighted_vbar=True):
    """Hessian of the objective with respect to log alpha.

    ``weighted_vbar`` selects the mean of the per-kernel factors used in
    the weight derivative: the weight-averaged form (default) makes the
    kernel-weight derivatives sum to zero, consistent with normalized
    weights; the unweighted form is kept for the finite-difference
    comparison test.
    """
    if et is None:
        et = evidence_terms(gmm, la)
    alpha = la.alpha
    w = et.weights
    v = _v_factors(et, la)
    m = et.m_alpha
    k, na = m.shape

    aa = np.outer(alpha, alpha)
    if et.shared_blocks:
        p = et.p_alpha[0]
        # E_w[m m^T] in one pass; the 0.5 P^2 part is kernel-independent.
        ew_mm = (w[:, None] * m).T @ m
        term1 = aa * (0.5 * p ** 2 + ew_mm * p)
    else:
        term1 = np.zeros((na, na))
        for i in range(k):
            p = et.p_alpha[i]
            term1 += w[i] * (aa * (0.5 * p ** 2 + np.outer(m[i], m[i]) * p))
    # diagonal correction of dv_j / dlog a_i at i == j
    term1[np.diag_indices(na)] += w @ (v - 0.5)

    vbar = w @ v if weighted_vbar else v.mean(axis=0)
    # sum_k v_j^(k) dw^(k)/dlog a_i = E_w[v_i v_j] - vbar_i E_w[v_j]
    ew_vv = (w[:, None] * v).T @ v
    term2 = ew_vv - np.outer(vbar, w @ v)

    h = term1 + term2
    h[np.diag_indices(na)] -= hp.rate * alpha
    return 0.5 * (h + h.T)


def relevance(et, la, gamma_tol=0.1):
    """Relevance indicators from one set of evidence terms.

    Per kernel, ``gamma_i = 1 - alpha_i P_ii`` (clamped to [0, 1]);
    aggregated per parameter as the RMS over kernels.  Verdicts compare
    the RMS against ``gamma_tol``: >= 1 - tol relevant, <= tol
    irrelevant, otherwise borderline.
    """
    alpha = la.alpha
    g = np.clip(1.0 - alpha * et.p_alpha_diag, 0.0, 1.0)
    rms = np.sqrt(np.mean(g ** 2, axis=0))
    verdicts = tuple(
        "relevant" if r >= 1.0 - gamma_tol
        else "irrelevant" if r <= gamma_tol
        else "borderline"
        for r in rms
    )
    return RelevanceReport(per_kernel=g, rms=rms, verdicts=verdicts,
                           gamma_tol=float(gamma_tol))


# ---------------------------------------------------------------------------
# bundled provider for the optimizer
# ---------------------------------------------------------------------------

class NsblProblem:
    """Objective/gradient/Hessian provider bound to one mixture.

    The optimizer only needs ``value`` and ``evaluate``; the latter also
    reports the RMS relevance indicators so iterate traces can carry
    them at no extra cost.
    """

    def __init__(self, gmm: GmmApproximation, hyperprior: HyperPrior = None,
                 gamma_tol=0.1, weighted_vbar=True):
        self.gmm = gmm
        self.hyperprior = (hyperprior if hyperprior is not None
                           else HyperPrior.default(gmm.partition.n_alpha))
        if self.hyperprior.shape.size != gmm.partition.n_alpha:
            raise InvalidInputError("hyperprior length does not match partition")
        self.gamma_tol = gamma_tol
        self.weighted_vbar = weighted_vbar

    @property
    def n_alpha(self):
        return self.gmm.partition.n_alpha

    def value(self, x):
        la = LogAlpha.clamp(x)
        return objective(self.gmm, la, self.hyperprior)

    def evaluate(self, x):
        la = LogAlpha.clamp(x)
        et = evidence_terms(self.gmm, la)
        val = et.log_evidence + self.hyperprior.log_density_term(la.values)
        grad = gradient(self.gmm, la, self.hyperprior, et=et)
        hess = hessian(self.gmm, la, self.hyperprior, et=et,
                       weighted_vbar=self.weighted_vbar)
        rep = relevance(et, la, self.gamma_tol)
        return ObjectiveEval(
            log_alpha=la, value=float(val), gradient=grad, hessian=hess,
            log_evidence=et.log_evidence, gamma_rms=rep.rms,
            v_factors=_v_factors(et, la),
        )

    def relevance_at(self, x):
        la = LogAlpha.clamp(x)
        return relevance(evidence_terms(self.gmm, la), la, self.gamma_tol)

    def posterior_at(self, x):
        la = LogAlpha.clamp(x)
        return posterior(self.gmm, la)


def write_evaluation_trace(path, evaluations):
    """CSV export of objective evaluations.

    Columns: ``log_alpha_*``, ``objective``, ``log_evidence``,
    ``grad_*``, ``gamma_rms_*``.
    """
    evaluations = list(evaluations)
    if not evaluations:
        raise InvalidInputError("no evaluations to write")
    na = evaluations[0].log_alpha.n_alpha
    header = (
        [f"log_alpha_{i}" for i in range(na)]
        + ["objective", "log_evidence"]
        + [f"grad_{i}" for i in range(na)]
        + [f"gamma_rms_{i}" for i in range(na)]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for ev in evaluations:
            row = (
                [f"{v:.17g}" for v in ev.log_alpha.values]
                + [f"{ev.value:.17g}", f"{ev.log_evidence:.17g}"]
                + [f"{v:.17g}" for v in ev.gradient]
                + [f"{v:.17g}" for v in ev.gamma_rms]
            )
            writer.writerow(row)
