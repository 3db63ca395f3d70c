"""Adaptive random-walk Metropolis with one delayed-rejection stage.

Chains target the unnormalized product of the likelihood and the
informative prior of the a-priori-relevant parameters.  Coordinates
with positive or bounded support are proposed in transformed space (log
and scaled-logit respectively) with the Jacobian folded into the target,
so random-walk proposals never leave the support.  The proposal
covariance is adapted from the chain history during burn-in and frozen
afterwards; a rejected first-stage proposal triggers a single
delayed-rejection retry with a scaled-down proposal.

Retained (post burn-in) samples are thinned by a fixed stride and can be
split into contiguous instance sets for kernel-density construction.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ChainDiagnosticError, InvalidInputError

__all__ = [
    "Support",
    "TargetDensity",
    "ChainConfig",
    "SampleSet",
    "run_chain",
    "split_sets",
    "lag1_autocorrelation",
]

# Second-stage proposal standard deviation relative to the adapted one.
DR_SCALE = 0.25
# Burn-in iterations per zero-acceptance health check.
DIAGNOSTIC_WINDOW = 1000


@dataclass(frozen=True)
class Support:
    """Per-coordinate support descriptor: 'unbounded', 'positive' or
    'bounded' with finite lo/hi."""

    kind: str
    lo: float = -np.inf
    hi: float = np.inf

    def __post_init__(self):
        if self.kind not in ("unbounded", "positive", "bounded"):
            raise InvalidInputError(f"unknown support kind {self.kind!r}")
        if self.kind == "bounded" and not (
            np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi
        ):
            raise InvalidInputError("bounded support requires finite lo < hi")

    def contains(self, x):
        if self.kind == "positive":
            return x > 0
        if self.kind == "bounded":
            return self.lo < x < self.hi
        return np.isfinite(x)


@dataclass(frozen=True)
class TargetDensity:
    """Unnormalized log target over the original coordinates.

    ``log_density`` must return a finite value inside the support and
    may return ``-inf`` (or raise nothing) outside; the chain checks the
    support first and never calls the model for an out-of-support point.
    """

    log_density: object
    support: tuple
    names: tuple = None

    @property
    def dim(self):
        return len(self.support)

    def in_support(self, phi):
        return all(s.contains(float(x)) for s, x in zip(self.support, phi))

    def log_density_checked(self, phi):
        if not self.in_support(phi):
            return -np.inf
        return float(self.log_density(np.asarray(phi, dtype=float)))


@dataclass(frozen=True)
class ChainConfig:
    n_stationary: int = 5000
    burn_in: int = 5000
    thin: int = 10
    initial_point: np.ndarray = None
    initial_proposal_std: np.ndarray = None
    adapt_interval: int = 100        # accepted proposals between adaptations
    seed: int = 0
    use_transforms: bool = True

    def __post_init__(self):
        if self.thin < 1:
            raise InvalidInputError("thinning stride must be >= 1")
        if self.burn_in < 0:
            raise InvalidInputError("burn-in must be nonnegative")
        if self.n_stationary < 1:
            raise InvalidInputError("need at least one stationary sample")


@dataclass(frozen=True)
class SampleSet:
    """Retained draws (rows) with provenance metadata."""

    samples: np.ndarray
    names: tuple
    provenance: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def save(self, csv_path):
        csv_path = str(csv_path)
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.names)
            for row in self.samples:
                writer.writerow([f"{v:.17g}" for v in row])
        meta_path = csv_path[:-4] + ".meta.json" if csv_path.endswith(".csv") \
            else csv_path + ".meta.json"
        with open(meta_path, "w") as fh:
            json.dump(self.provenance, fh, indent=2, sort_keys=True)
        return meta_path

    @classmethod
    def load(cls, csv_path):
        csv_path = str(csv_path)
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            names = tuple(next(reader))
            rows = [[float(v) for v in row] for row in reader]
        meta_path = csv_path[:-4] + ".meta.json" if csv_path.endswith(".csv") \
            else csv_path + ".meta.json"
        try:
            with open(meta_path) as fh:
                provenance = json.load(fh)
        except FileNotFoundError:
            provenance = {}
        return cls(np.array(rows, dtype=float), names, provenance)


# ---------------------------------------------------------------------------
# coordinate transforms
# ---------------------------------------------------------------------------

def _softplus(x):
    return np.logaddexp(0.0, x)


class _Transform:
    """Per-coordinate reparameterization derived from the support."""

    def __init__(self, support, enabled):
        self.support = support
        self.kinds = [s.kind if enabled else "unbounded" for s in support]

    def to_unconstrained(self, phi):
        z = np.empty(len(phi))
        for i, (kind, s, x) in enumerate(zip(self.kinds, self.support, phi)):
            if kind == "positive":
                z[i] = np.log(x)
            elif kind == "bounded":
                u = (x - s.lo) / (s.hi - s.lo)
                z[i] = np.log(u) - np.log1p(-u)
            else:
                z[i] = x
        return z

    def to_constrained(self, z):
        phi = np.empty(len(z))
        for i, (kind, s, v) in enumerate(zip(self.kinds, self.support, z)):
            if kind == "positive":
                phi[i] = np.exp(v)
            elif kind == "bounded":
                phi[i] = s.lo + (s.hi - s.lo) / (1.0 + np.exp(-v))
            else:
                phi[i] = v
        return phi

    def log_jacobian(self, z):
        total = 0.0
        for kind, s, v in zip(self.kinds, self.support, z):
            if kind == "positive":
                total += v
            elif kind == "bounded":
                total += np.log(s.hi - s.lo) - _softplus(v) - _softplus(-v)
        return total


def _log1mexp(a):
    """log(1 - exp(a)) for a < 0."""
    if a >= 0.0:
        return -np.inf
    if a < np.log(0.5):
        return np.log1p(-np.exp(a))
    return np.log(-np.expm1(a))


def lag1_autocorrelation(x):
    """Largest-magnitude lag-1 autocorrelation across columns."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] == 1 and x.ndim == 2 and x.shape[1] > x.shape[0]:
        x = x.T
    best = 0.0
    for col in x.T:
        c = col - col.mean()
        denom = float(c @ c)
        if denom <= 0:
            continue
        rho = float(c[:-1] @ c[1:]) / denom
        if abs(rho) > abs(best):
            best = rho
    return best


# ---------------------------------------------------------------------------
# the chain
# ---------------------------------------------------------------------------

def run_chain(target, cfg):
    """Run one adaptive chain and return the thinned stationary samples.

    Raises
    ------
    InvalidInputError
        Initial point outside the support or with non-finite target.
    ChainDiagnosticError
        No proposal accepted over a burn-in diagnostic window.
    """
    d = target.dim
    if cfg.initial_point is None:
        raise InvalidInputError("chain configuration must set initial_point")
    phi0 = np.asarray(cfg.initial_point, dtype=float)
    if phi0.size != d:
        raise InvalidInputError("initial point has wrong dimension")
    if not target.in_support(phi0):
        raise InvalidInputError("initial point lies outside the support")
    l0 = target.log_density_checked(phi0)
    if not np.isfinite(l0):
        raise InvalidInputError("initial point has non-finite log density")

    tr = _Transform(target.support, cfg.use_transforms)

    def logpi(z):
        phi = tr.to_constrained(z)
        if not target.in_support(phi):
            return -np.inf
        return target.log_density_checked(phi) + tr.log_jacobian(z)

    rng = np.random.default_rng(cfg.seed)
    z = tr.to_unconstrained(phi0)
    lz = logpi(z)

    if cfg.initial_proposal_std is None:
        step = np.full(d, 0.1)
    else:
        step = np.asarray(cfg.initial_proposal_std, dtype=float)
        step = np.where(np.isfinite(step) & (step > 0), step, 0.1)
    # proposal std in unconstrained coordinates
    chol = np.diag(step)

    n_total = cfg.burn_in + cfg.n_stationary
    history = np.empty((n_total + 1, d))
    history[0] = z
    n_accept = 0
    accepts_since_adapt = 0
    window_accepts = 0
    sd = 2.38 ** 2 / d

    for it in range(n_total):
        adapted_phase = it < cfg.burn_in
        xi = rng.standard_normal(d)
        y1 = z + chol @ xi
        l1 = logpi(y1)
        la1 = min(0.0, l1 - lz)
        accepted = False
        if np.log(rng.uniform()) < la1:
            z, lz = y1, l1
            accepted = True
        else:
            # one delayed-rejection stage with a scaled-down proposal
            xi2 = rng.standard_normal(d)
            y2 = z + DR_SCALE * (chol @ xi2)
            l2 = logpi(y2)
            if np.isfinite(l2):
                la1_rev = min(0.0, l1 - l2)
                # Gaussian q1 constants cancel; quadratic forms only.
                try:
                    s1 = np.linalg.solve(chol, y1 - y2)
                    s0 = np.linalg.solve(chol, y1 - z)
                except np.linalg.LinAlgError:
                    s1 = s0 = None
                if s1 is not None:
                    num = l2 - 0.5 * float(s1 @ s1) + _log1mexp(la1_rev)
                    den = lz - 0.5 * float(s0 @ s0) + _log1mexp(la1)
                    la2 = min(0.0, num - den)
                    if np.log(rng.uniform()) < la2:
                        z, lz = y2, l2
                        accepted = True
        history[it + 1] = z
        if accepted:
            n_accept += 1
            window_accepts += 1
            if adapted_phase:
                accepts_since_adapt += 1
                if accepts_since_adapt >= cfg.adapt_interval and it >= 2 * d:
                    accepts_since_adapt = 0
                    cov = np.cov(history[: it + 2].T, ddof=1).reshape(d, d)
                    cov = sd * cov + sd * 1e-10 * np.eye(d)
                    try:
                        chol = np.linalg.cholesky(cov)
                    except np.linalg.LinAlgError:
                        pass
        if adapted_phase and (it + 1) % DIAGNOSTIC_WINDOW == 0:
            if window_accepts == 0:
                raise ChainDiagnosticError(
                    f"no accepted proposal in {DIAGNOSTIC_WINDOW} burn-in "
                    "iterations; proposal scale is badly mistuned"
                )
            window_accepts = 0

    stationary = history[cfg.burn_in + 1:]
    thinned = stationary[:: cfg.thin]
    phi_raw = np.array([tr.to_constrained(row) for row in stationary])
    phi = np.array([tr.to_constrained(row) for row in thinned])
    names = target.names or tuple(f"phi_{i}" for i in range(d))
    provenance = {
        "seed": int(cfg.seed),
        "n_stationary": int(cfg.n_stationary),
        "burn_in": int(cfg.burn_in),
        "thin": int(cfg.thin),
        "acceptance_rate": n_accept / n_total,
        "lag1_raw": lag1_autocorrelation(phi_raw),
        "lag1_thinned": lag1_autocorrelation(phi),
        "names": list(names),
        "transforms": list(tr.kinds),
    }
    return SampleSet(phi, names, provenance)


def split_sets(sample_set, n_sets):
    """Split into contiguous equal blocks, preserving retained order."""
    n = sample_set.n
    if n_sets < 1 or n % n_sets != 0:
        raise InvalidInputError(
            f"cannot split {n} samples into {n_sets} equal sets"
        )
    block = n // n_sets
    out = []
    for b in range(n_sets):
        prov = dict(sample_set.provenance)
        prov.update({"block_index": b, "n_blocks": int(n_sets)})
        out.append(SampleSet(
            samples=sample_set.samples[b * block: (b + 1) * block].copy(),
            names=sample_set.names,
            provenance=prov,
        ))
    return out
