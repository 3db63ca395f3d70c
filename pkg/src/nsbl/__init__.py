"""Evidence-based relevance determination for nonlinear Bayesian
inverse problems.

The package learns which parameters of an over-parameterized nonlinear
model are supported by data: posterior samples of likelihood x known
prior are turned into a Gaussian-mixture approximation, the precision
of a zero-mean Gaussian prior on each questionable parameter is
optimized by a multistart Newton ascent of the (semi-analytical)
evidence, and per-parameter relevance indicators summarize the result.
The bundled case study identifies the active aerodynamic terms of a
pitching-airfoil limit-cycle oscillator from synthetic noisy pitch
measurements.
"""

from .backend import backend_name
from .core import (
    EvidenceTerms,
    HyperPrior,
    LogAlpha,
    NsblProblem,
    ObjectiveEval,
    PosteriorGmm,
    RelevanceReport,
    gradient,
    hessian,
    log_evidence,
    objective,
    posterior,
    relevance,
)
from .gmm import (
    GaussianKernel,
    GmmApproximation,
    ParameterPartition,
    PartitionedKernel,
    assemble_kernel,
    build_kde_gmm,
    condition_kernel,
    log_gaussian_density,
    partition_kernel,
)
from .newton import (
    NewtonConfig,
    OptimaSet,
    OptimizationResult,
    multistart,
    newton_maximize,
)
from .mcmc import ChainConfig, SampleSet, Support, TargetDensity, run_chain, split_sets

__version__ = "0.1.0"

__all__ = [
    "backend_name",
    "EvidenceTerms", "HyperPrior", "LogAlpha", "NsblProblem",
    "ObjectiveEval", "PosteriorGmm", "RelevanceReport",
    "gradient", "hessian", "log_evidence", "objective", "posterior",
    "relevance",
    "GaussianKernel", "GmmApproximation", "ParameterPartition",
    "PartitionedKernel", "assemble_kernel", "build_kde_gmm",
    "condition_kernel", "log_gaussian_density", "partition_kernel",
    "NewtonConfig", "OptimaSet", "OptimizationResult", "multistart",
    "newton_maximize",
    "ChainConfig", "SampleSet", "Support", "TargetDensity", "run_chain",
    "split_sets",
    "__version__",
]
