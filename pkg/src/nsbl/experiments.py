"""Sparse-learning experiment setups for the aeroelastic case study.

Each setup fixes the candidate aerodynamic model (which polynomial
terms are present), splits its parameters into questionable ones
(zero-mean Gaussian relevance prior, precision learned) and
a-priori-relevant ones (informative prior), and carries the default
multistart grid in log-precision space.

Parameter ordering is always ``B, e1, e2, ..., sigma`` with only the
terms present in the candidate model; the synthetic data itself always
comes from the generating model (e5 = e6 = 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aero import (
    AeroSystem,
    LogNormalMedianCov,
    UniformInterval,
    ekf_log_likelihood,
)
from .exceptions import EvaluationError, InvalidInputError
from .gmm import ParameterPartition
from .mcmc import Support, TargetDensity

__all__ = ["ExperimentSpec", "KnownPrior", "get_experiment", "EXPERIMENT_IDS"]

# random-walk scale used before adaptation, per coordinate kind:
# transformed (log / logit) coordinates share one modest scale, while
# questionable coefficients are proposed on their natural magnitudes.
_TRANSFORMED_STEP = 0.05
_ARD_STEP = {"e3": 2.0, "e4": 10.0, "e5": 50.0, "e6": 200.0}

_LN_B = ("lognormal", 0.2, 0.5)
_LN_B_WIDE = ("lognormal", 0.2, 50.0)
_LN_SIGMA = ("lognormal", 0.002, 0.5)
_U_E1 = ("uniform", -2.0, 0.0)
_U_E2 = ("uniform", -2.0, 0.0)
_U_E3 = ("uniform", -250.0, 250.0)
_U_E4 = ("uniform", -600.0, 0.0)
_U_E4_WIDE = ("uniform", -1.0e4, 0.0)

_GRID_2D = [[-20.0, -20.0], [-5.0, -20.0], [-20.0, -5.0], [-5.0, -5.0]]

_SETUPS = {
    "1d-e3": {
        "params": [("B", _LN_B), ("e1", _U_E1), ("e2", _U_E2),
                   ("e3", None), ("e4", _U_E4), ("sigma", _LN_SIGMA)],
        "starts": [[-20.0], [-10.0], [0.0]],
    },
    "1d-e5": {
        "params": [("B", _LN_B), ("e1", _U_E1), ("e2", _U_E2),
                   ("e3", _U_E3), ("e4", _U_E4), ("e5", None),
                   ("sigma", _LN_SIGMA)],
        "starts": [[-15.0], [-5.0], [5.0]],
    },
    "2d-e3e4": {
        "params": [("B", _LN_B), ("e1", _U_E1), ("e2", _U_E2),
                   ("e3", None), ("e4", None), ("sigma", _LN_SIGMA)],
        "starts": _GRID_2D,
    },
    "2d-e3e5": {
        "params": [("B", _LN_B), ("e1", _U_E1), ("e2", _U_E2),
                   ("e3", None), ("e4", _U_E4), ("e5", None),
                   ("sigma", _LN_SIGMA)],
        "starts": _GRID_2D,
    },
    "2d-e5e6": {
        "params": [("B", _LN_B_WIDE), ("e1", _U_E1), ("e2", _U_E2),
                   ("e3", _U_E3), ("e4", _U_E4_WIDE), ("e5", None),
                   ("e6", None), ("sigma", _LN_SIGMA)],
        "starts": _GRID_2D,
    },
    "4d": {
        "params": [("B", _LN_B), ("e1", _U_E1), ("e2", _U_E2),
                   ("e3", None), ("e4", None), ("e5", None), ("e6", None),
                   ("sigma", _LN_SIGMA)],
        "starts": [[-20.0, -20.0, -20.0, -20.0],
                   [-20.0, -20.0, -5.0, -5.0],
                   [-5.0, -5.0, -20.0, -20.0],
                   [-5.0, -5.0, -5.0, -5.0]],
    },
}

EXPERIMENT_IDS = tuple(sorted(_SETUPS))


def _make_prior(spec):
    if spec is None:
        return None
    kind, a, b = spec
    if kind == "lognormal":
        return LogNormalMedianCov(a, b)
    return UniformInterval(a, b)


@dataclass(frozen=True)
class KnownPrior:
    """Product prior over the a-priori-relevant parameters (in the
    order given by the partition's relevant indices)."""

    names: tuple
    factors: tuple

    def log_density(self, phi_rel):
        total = 0.0
        for factor, x in zip(self.factors, phi_rel):
            total += factor.log_density(float(x))
            if total == -np.inf:
                return -np.inf
        return float(total)

    def medians(self):
        return np.array([f.median_value for f in self.factors])


@dataclass(frozen=True)
class ExperimentSpec:
    """One sparse-learning setup: candidate model, priors and starts."""

    id: str
    names: tuple           # parameter order, e.g. ("B", "e1", ..., "sigma")
    priors: tuple          # per name: prior object or None (questionable)
    starts: tuple          # default multistart grid in log-precision space

    @property
    def dim(self):
        return len(self.names)

    @property
    def questionable_names(self):
        return tuple(n for n, p in zip(self.names, self.priors) if p is None)

    def partition(self):
        q = tuple(i for i, p in enumerate(self.priors) if p is None)
        return ParameterPartition.from_questionable(self.dim, q)

    def known_prior(self):
        pairs = [(n, p) for n, p in zip(self.names, self.priors)
                 if p is not None]
        return KnownPrior(tuple(n for n, _ in pairs),
                          tuple(p for _, p in pairs))

    def support(self):
        out = []
        for prior in self.priors:
            if prior is None:
                out.append(Support("unbounded"))
            elif prior.support_kind == "positive":
                out.append(Support("positive"))
            else:
                out.append(Support("bounded", prior.lo, prior.hi))
        return tuple(out)

    def initial_point(self):
        """Known-prior medians; questionable coefficients start at zero."""
        return np.array([
            0.0 if p is None else p.median_value for p in self.priors
        ])

    def proposal_std(self):
        return np.array([
            _ARD_STEP.get(n, 1.0) if p is None else _TRANSFORMED_STEP
            for n, p in zip(self.names, self.priors)
        ])

    def make_system(self, phi):
        """Candidate-model coefficients from one parameter vector
        (structural coefficients are known exactly)."""
        base = AeroSystem.data_generating()
        kw = dict(zip(self.names, (float(v) for v in phi)))
        if kw.get("B", 1.0) <= 0 or kw.get("sigma", 0.0) < 0:
            raise InvalidInputError("parameter vector outside support")
        return base.with_params(e5=0.0, e6=0.0, **kw)

    def make_target(self, data, sim_cfg):
        """Unnormalized posterior target: likelihood times known prior.

        Filter failures are mapped to log density ``-inf`` so the
        sampler simply rejects the proposal.
        """
        known = self.known_prior()
        rel_idx = np.asarray(self.partition().relevant_indices, dtype=int)

        def log_density(phi):
            lp = known.log_density(phi[rel_idx])
            if lp == -np.inf:
                return -np.inf
            try:
                ll = ekf_log_likelihood(self.make_system(phi), data, sim_cfg)
            except EvaluationError:
                return -np.inf
            return lp + ll

        return TargetDensity(log_density=log_density, support=self.support(),
                             names=self.names)

    def true_values(self):
        """Generating-model values of this setup's parameters."""
        gen = AeroSystem.data_generating()
        return np.array([getattr(gen, n) for n in self.names])


def get_experiment(experiment_id):
    try:
        setup = _SETUPS[experiment_id]
    except KeyError:
        raise InvalidInputError(
            f"unknown experiment {experiment_id!r}; "
            f"available: {', '.join(EXPERIMENT_IDS)}"
        ) from None
    names = tuple(n for n, _ in setup["params"])
    priors = tuple(_make_prior(p) for _, p in setup["params"])
    return ExperimentSpec(
        id=experiment_id,
        names=names,
        priors=priors,
        starts=tuple(tuple(s) for s in setup["starts"]),
    )
