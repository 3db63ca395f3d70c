"""Multistart safeguarded Newton maximization in log-precision space.

The objective may be nonconcave, so the Newton system is solved on a
regularized curvature matrix: working on the negated objective, the
eigenvalues of ``-H`` are floored at a small fraction of the largest
magnitude, which leaves exact Newton steps untouched wherever the
objective is strictly concave.  Steps are accepted by Armijo
backtracking, iterates stay inside the working box, and every accepted
iterate strictly increases the objective.

Optima found from different starts are clustered by an infinity-norm
radius; the global optimum is the cluster representative with the
highest objective value.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import LOG_ALPHA_BOX, LogAlpha
from .exceptions import InvalidInputError, NsblError, OptimizationError

__all__ = [
    "NewtonConfig",
    "IterateRecord",
    "OptimizationResult",
    "OptimaCluster",
    "OptimaSet",
    "newton_maximize",
    "multistart",
    "cluster_results",
    "write_run_trace",
]


@dataclass(frozen=True)
class NewtonConfig:
    # The default step radius spans the whole working box, so plain
    # Newton steps are not truncated; tighten it for wilder objectives.
    grad_tol: float = 1e-6
    max_iters: int = 100
    step_radius_init: float = 2.0 * LOG_ALPHA_BOX
    step_radius_max: float = 2.0 * LOG_ALPHA_BOX
    hessian_floor: float = 1e-8     # relative eigenvalue floor on -H
    armijo_c: float = 1e-4
    min_step: float = 1e-8
    objective_change_tol: float = 1e-10
    cluster_radius: float = 0.5

    def __post_init__(self):
        if self.grad_tol <= 0:
            raise InvalidInputError("grad_tol must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")


@dataclass(frozen=True)
class IterateRecord:
    log_alpha: np.ndarray
    objective: float
    grad_norm: float
    gamma_rms: np.ndarray


@dataclass(frozen=True)
class OptimizationResult:
    start: np.ndarray
    optimum: np.ndarray
    objective_at_optimum: float
    iterates: tuple
    converged: bool
    termination_reason: str
    gamma_rms: np.ndarray
    was_clamped: bool = False
    error: str = None

    @property
    def n_iterations(self):
        return len(self.iterates) - 1


@dataclass(frozen=True)
class OptimaCluster:
    representative: OptimizationResult
    members: tuple            # indices into OptimaSet.results
    multiplicity: int

    @property
    def optimum(self):
        return self.representative.optimum

    @property
    def objective(self):
        return self.representative.objective_at_optimum


@dataclass(frozen=True)
class OptimaSet:
    results: tuple
    clusters: tuple
    radius: float

    @property
    def global_optimum(self):
        return self.clusters[0]

    @property
    def n_clusters(self):
        return len(self.clusters)


def _ascent_direction(grad, hess, floor_rel):
    """Regularized Newton ascent direction.

    Eigenvalues of ``-hess`` below ``floor_rel * max(|eig|)`` are raised
    to the floor; when ``-hess`` is already positive definite this is
    the exact Newton direction.
    """
    w, vecs = np.linalg.eigh(-hess)
    scale = np.max(np.abs(w))
    floor = floor_rel * (scale if scale > 0 else 1.0)
    w_mod = np.maximum(w, floor)
    return vecs @ ((vecs.T @ grad) / w_mod)


def newton_maximize(problem, start, cfg=None):
    """Safeguarded Newton ascent from one starting point.

    ``problem`` provides ``value(x) -> float`` and ``evaluate(x) ->
    object`` with attributes ``value``, ``gradient``, ``hessian`` and
    ``gamma_rms``.  Evaluation failures abort the run and return the
    partial trace with ``termination_reason='evaluation_error'``.
    """
    cfg = cfg or NewtonConfig()
    x = LogAlpha.clamp(np.asarray(start, dtype=float))
    clamped_any = x.was_clamped
    x = x.values.copy()
    iterates = []
    radius = cfg.step_radius_init

    def record(ev):
        iterates.append(IterateRecord(
            log_alpha=ev.log_alpha.values.copy(),
            objective=ev.value,
            grad_norm=float(np.max(np.abs(ev.gradient))),
            gamma_rms=ev.gamma_rms.copy(),
        ))

    def result(reason, converged, ev, error=None):
        return OptimizationResult(
            start=np.asarray(start, dtype=float),
            optimum=x.copy(),
            objective_at_optimum=iterates[-1].objective if iterates else -np.inf,
            iterates=tuple(iterates),
            converged=converged,
            termination_reason=reason,
            gamma_rms=(ev.gamma_rms.copy() if ev is not None
                       else np.full_like(x, np.nan)),
            was_clamped=clamped_any,
            error=error,
        )

    ev = None
    try:
        ev = problem.evaluate(x)
        record(ev)
        for _ in range(cfg.max_iters):
            if np.max(np.abs(ev.gradient)) < cfg.grad_tol:
                return result("gradient", True, ev)
            p = _ascent_direction(ev.gradient, ev.hessian, cfg.hessian_floor)
            pnorm = float(np.max(np.abs(p)))
            if pnorm > radius:
                p = p * (radius / pnorm)
                pnorm = radius
            slope = float(ev.gradient @ p)
            if slope <= 0:
                return result("no_ascent_direction", False, ev)
            beta = 1.0
            accepted = None
            while beta >= cfg.min_step:
                cand = np.clip(x + beta * p, -LOG_ALPHA_BOX, LOG_ALPHA_BOX)
                cand_val = problem.value(cand)
                if cand_val >= ev.value + cfg.armijo_c * beta * slope:
                    accepted = cand
                    break
                beta *= 0.5
            if accepted is None:
                return result("line_search_failed", False, ev)
            if np.any(accepted != x + beta * p):
                clamped_any = True
            prev_val = ev.value
            x = accepted
            ev = problem.evaluate(x)
            record(ev)
            if beta == 1.0:
                radius = min(radius * 2.0, cfg.step_radius_max)
            else:
                radius = max(beta * pnorm, 16.0 * cfg.min_step)
            if abs(ev.value - prev_val) < cfg.objective_change_tol:
                return result("objective_change", True, ev)
        return result("max_iterations", False, ev)
    except NsblError as err:
        return result("evaluation_error", False, ev, error=str(err))


def cluster_results(results, radius):
    """Greedy clustering of optima by infinity-norm distance.

    Results are visited in descending objective order; each joins the
    first cluster whose representative is within ``radius``, else it
    founds a new cluster.  Representatives are therefore pairwise
    separated by more than ``radius`` and re-clustering is a no-op.
    """
    order = sorted(range(len(results)),
                   key=lambda i: results[i].objective_at_optimum,
                   reverse=True)
    reps, members = [], []
    for i in order:
        for c, rep in enumerate(reps):
            if np.max(np.abs(results[i].optimum - results[rep].optimum)) <= radius:
                members[c].append(i)
                break
        else:
            reps.append(i)
            members.append([i])
    return tuple(
        OptimaCluster(representative=results[rep],
                      members=tuple(mem),
                      multiplicity=len(mem))
        for rep, mem in zip(reps, members)
    )


def multistart(problem, starts, cfg=None):
    """Independent Newton runs from every start, clustered into optima."""
    cfg = cfg or NewtonConfig()
    starts = [np.asarray(s, dtype=float) for s in starts]
    if not starts:
        raise InvalidInputError("multistart requires at least one start")
    results = tuple(newton_maximize(problem, s, cfg) for s in starts)
    usable = [r for r in results if r.termination_reason != "evaluation_error"]
    if not usable:
        raise OptimizationError(
            "every start failed: "
            + "; ".join(r.error or r.termination_reason for r in results)
        )
    clusters = cluster_results(usable, cfg.cluster_radius)
    return OptimaSet(results=results, clusters=clusters,
                     radius=cfg.cluster_radius)


def write_run_trace(path, result):
    """Iterate trace CSV: ``iter, log_alpha_*, objective, grad_norm,
    gamma_rms_*``."""
    na = result.optimum.size
    header = (["iter"] + [f"log_alpha_{i}" for i in range(na)]
              + ["objective", "grad_norm"]
              + [f"gamma_rms_{i}" for i in range(na)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j, it in enumerate(result.iterates):
            writer.writerow(
                [j] + [f"{v:.17g}" for v in it.log_alpha]
                + [f"{it.objective:.17g}", f"{it.grad_norm:.17g}"]
                + [f"{v:.17g}" for v in it.gamma_rms]
            )
