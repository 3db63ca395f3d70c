"""Re-runnable pipeline stages with content-addressed artifacts.

Stages: ``generate-data`` -> ``sample`` -> ``learn`` -> ``report``.
Every stage writes under ``<out>/runs/<config-hash>/<stage>/`` together
with a manifest listing the SHA-256 of each artifact; downstream stages
refuse upstream artifacts whose hash or config hash does not match.
All writes are atomic (write to a temporary name, then rename).
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
import zlib

import numpy as np

from . import core
from .aero import (
    AeroSystem,
    ObservationSeries,
    SimulationConfig,
    dominant_frequency,
    synthesize_observations,
    write_psd_csv,
)
from .exceptions import ConfigError, InvalidInputError, MissingArtifactError
from .experiments import EXPERIMENT_IDS, get_experiment
from .gmm import build_kde_gmm
from .mcmc import ChainConfig, SampleSet, run_chain, split_sets
from .newton import NewtonConfig, multistart, write_run_trace

__all__ = [
    "default_config",
    "load_config",
    "config_hash",
    "stage_dir",
    "generate_data",
    "sample",
    "learn",
    "report",
]

DEFAULT_CONFIG = {
    "data": {
        "seed": 20,
        "duration_s": 20.0,
        "obs_rate_hz": 1000.0,
        "noise_std_deg": 0.2,
        "lowpass_hz": 25.0,
        "dtau": 0.01,
        "tau_per_second": 105.806,
        "transient_tau": 600.0,
        "initial_state": [0.03, 0.0, 0.0],
    },
    "mcmc": {
        "seed": 7,
        "n_stationary": 5000,
        "burn_in": 5000,
        "thin": 10,
        "instances": 10,
        "adapt_interval": 100,
    },
    "experiments": {
        "gamma_tol": 0.1,
        "extra_starts": {},
    },
    "optimizer": {
        "grad_tol": 1e-6,
        "max_iters": 100,
        "cluster_radius": 0.5,
    },
    "hyperprior": {
        "log_shape": -6.0,
        "log_rate": -6.0,
    },
}

_NUMBER = {"type": "number"}
_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "duration_s": {"type": "number", "exclusiveMinimum": 0},
                "obs_rate_hz": {"type": "number", "exclusiveMinimum": 0},
                "noise_std_deg": {"type": "number", "minimum": 0},
                "lowpass_hz": {"type": ["number", "null"]},
                "dtau": {"type": "number", "exclusiveMinimum": 0},
                "tau_per_second": {"type": "number", "exclusiveMinimum": 0},
                "transient_tau": {"type": "number", "minimum": 0},
                "initial_state": {
                    "type": "array", "items": _NUMBER,
                    "minItems": 3, "maxItems": 3,
                },
            },
        },
        "mcmc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "n_stationary": {"type": "integer", "minimum": 1},
                "burn_in": {"type": "integer", "minimum": 0},
                "thin": {"type": "integer", "minimum": 1},
                "instances": {"type": "integer", "minimum": 1},
                "adapt_interval": {"type": "integer", "minimum": 1},
            },
        },
        "experiments": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma_tol": {"type": "number", "exclusiveMinimum": 0,
                              "exclusiveMaximum": 0.5},
                "extra_starts": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "array",
                        "items": {"type": "array", "items": _NUMBER},
                    },
                },
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grad_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iters": {"type": "integer", "minimum": 1},
                "cluster_radius": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "hyperprior": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "log_shape": {"type": "number"},
                "log_rate": {"type": "number"},
            },
        },
    },
}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def default_config():
    return json.loads(json.dumps(DEFAULT_CONFIG))


def _merge(base, override, path="config"):
    out = dict(base)
    for key, value in override.items():
        if key in base and isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}.{key}: expected an object")
            out[key] = _merge(base[key], value, f"{path}.{key}")
        else:
            out[key] = value
    return out


def _validate(config):
    try:
        import jsonschema
    except ImportError:
        return
    validator = jsonschema.Draft202012Validator(_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.path))
    if errors:
        msgs = []
        for err in errors:
            loc = ".".join(str(p) for p in err.path) or "<root>"
            msgs.append(f"config.{loc}: {err.message}")
        raise ConfigError("; ".join(msgs))


def load_config(path=None, overrides=None):
    """Resolved configuration: defaults, then file, then overrides."""
    config = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
        config = _merge(config, user)
    if overrides:
        config = _merge(config, overrides)
    _validate(config)
    unknown = [e for e in config["experiments"]["extra_starts"]
               if e not in EXPERIMENT_IDS]
    if unknown:
        raise ConfigError(
            f"config.experiments.extra_starts: unknown experiment(s) {unknown}"
        )
    return config


def config_hash(config):
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _sim_config(config, seed=None):
    d = config["data"]
    return SimulationConfig(
        dtau=d["dtau"],
        duration_s=d["duration_s"],
        initial_state=tuple(d["initial_state"]),
        seed=d["seed"] if seed is None else seed,
        tau_per_second=d["tau_per_second"],
        obs_rate_hz=d["obs_rate_hz"],
        noise_std_rad=np.radians(d["noise_std_deg"]),
        lowpass_hz=d["lowpass_hz"],
        transient_tau=d["transient_tau"],
    )


def _newton_config(config):
    o = config["optimizer"]
    return NewtonConfig(
        grad_tol=o["grad_tol"],
        max_iters=o["max_iters"],
        cluster_radius=o["cluster_radius"],
    )


# ---------------------------------------------------------------------------
# artifact plumbing
# ---------------------------------------------------------------------------

def stage_dir(out_dir, config, stage, experiment=None):
    parts = [str(out_dir), "runs", config_hash(config), stage]
    if experiment:
        parts.append(experiment)
    return os.path.join(*parts)


def _atomic_write(path, data):
    tmp = f"{path}.tmp.{os.getpid()}"
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, newline="" if mode == "w" else None) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(directory, stage, config, artifacts, wall_clock,
                    experiment=None):
    manifest = {
        "stage": stage,
        "experiment": experiment,
        "config_hash": config_hash(config),
        "artifacts": {name: _sha256(os.path.join(directory, name))
                      for name in sorted(artifacts)},
        "wall_clock_s": round(wall_clock, 3),
    }
    _atomic_write(os.path.join(directory, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def _read_manifest(directory, stage, config):
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise MissingArtifactError(
            f"missing {stage} manifest at {path}; run the {stage} stage first"
        )
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("config_hash") != config_hash(config):
        raise MissingArtifactError(
            f"{stage} artifacts at {directory} were produced under config "
            f"hash {manifest.get('config_hash')}, current is "
            f"{config_hash(config)}; refusing to mix"
        )
    for name, digest in manifest["artifacts"].items():
        fpath = os.path.join(directory, name)
        if not os.path.exists(fpath):
            raise MissingArtifactError(f"{stage} artifact missing: {fpath}")
        if _sha256(fpath) != digest:
            raise MissingArtifactError(
                f"{stage} artifact hash mismatch (stale or corrupted): {fpath}"
            )
    return manifest


def _write_csv(path, header, rows):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _fmt(values):
    return [f"{float(v):.17g}" for v in values]


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def generate_data(config, out_dir, seed=None):
    """Synthesize the observation series and its spectrum."""
    t0 = time.time()
    directory = stage_dir(out_dir, config, "data")
    os.makedirs(directory, exist_ok=True)
    sim_cfg = _sim_config(config, seed=seed)
    system = AeroSystem.data_generating()
    series = synthesize_observations(system, sim_cfg)
    prov = dict(series.provenance)
    prov["config_hash"] = config_hash(config)
    series = ObservationSeries(series.t_seconds, series.pitch_rad, prov)
    series.save(os.path.join(directory, "observations.csv"))
    write_psd_csv(os.path.join(directory, "psd.csv"), series)
    artifacts = ["observations.csv", "observations.meta.json", "psd.csv"]
    _write_manifest(directory, "data", config, artifacts, time.time() - t0)
    return {
        "directory": directory,
        "n_observations": series.n,
        "dominant_frequency_hz": dominant_frequency(series),
    }


def _load_data(config, out_dir):
    directory = stage_dir(out_dir, config, "data")
    _read_manifest(directory, "data", config)
    return ObservationSeries.load(os.path.join(directory, "observations.csv"))


def _chain_seed(config, experiment_id, seed=None):
    base = config["mcmc"]["seed"] if seed is None else seed
    return (int(base) * 1000003 + zlib.crc32(experiment_id.encode())) % (2 ** 63)


def sample(config, experiment_id, out_dir, seed=None):
    """Draw thinned posterior samples for one experiment setup."""
    t0 = time.time()
    exp = get_experiment(experiment_id)
    data = _load_data(config, out_dir)
    directory = stage_dir(out_dir, config, "sample", experiment_id)
    os.makedirs(directory, exist_ok=True)
    m = config["mcmc"]
    sim_cfg = _sim_config(config)
    target = exp.make_target(data, sim_cfg)
    chain_cfg = ChainConfig(
        n_stationary=m["n_stationary"],
        burn_in=m["burn_in"],
        thin=m["thin"],
        initial_point=exp.initial_point(),
        initial_proposal_std=exp.proposal_std(),
        adapt_interval=m["adapt_interval"],
        seed=_chain_seed(config, experiment_id, seed),
    )
    samples = run_chain(target, chain_cfg)
    prov = dict(samples.provenance)
    prov["config_hash"] = config_hash(config)
    prov["experiment"] = experiment_id
    samples = SampleSet(samples.samples, samples.names, prov)

    artifacts = ["samples_all.csv", "samples_all.meta.json"]
    samples.save(os.path.join(directory, "samples_all.csv"))
    instances = split_sets(samples, m["instances"])
    for i, inst in enumerate(instances):
        name = f"instance_{i:02d}.csv"
        inst.save(os.path.join(directory, name))
        artifacts += [name, name[:-4] + ".meta.json"]
    _write_manifest(directory, "sample", config, artifacts,
                    time.time() - t0, experiment=experiment_id)
    return {
        "directory": directory,
        "acceptance_rate": samples.provenance["acceptance_rate"],
        "n_retained": samples.n,
        "n_instances": len(instances),
    }


def _marginal_grid(gmm, index, n_points=241, half_width=4.0):
    mean, cov = gmm.mixture_moments()
    sd = float(np.sqrt(cov[index, index]))
    lo = mean[index] - half_width * sd
    hi = mean[index] + half_width * sd
    return np.linspace(lo, hi, n_points)


def _objective_sweep(problem, lo=-25.0, hi=5.0, step=0.25):
    grid = np.arange(lo, hi + 0.5 * step, step)
    return [problem.evaluate(np.array([g])) for g in grid]


def learn(config, experiment_id, out_dir, seed=None):
    """Kernel-density construction, multistart optimization, relevance
    verdicts and posterior marginal tables per sample instance."""
    t0 = time.time()
    exp = get_experiment(experiment_id)
    sample_dir = stage_dir(out_dir, config, "sample", experiment_id)
    manifest = _read_manifest(sample_dir, "sample", config)
    directory = stage_dir(out_dir, config, "learn", experiment_id)
    os.makedirs(directory, exist_ok=True)

    gamma_tol = config["experiments"]["gamma_tol"]
    starts = [list(s) for s in exp.starts]
    starts += [list(s) for s in
               config["experiments"]["extra_starts"].get(experiment_id, [])]
    newton_cfg = _newton_config(config)
    partition = exp.partition()
    hp_cfg = config["hyperprior"]
    hyperprior = core.HyperPrior(
        np.full(partition.n_alpha, np.exp(hp_cfg["log_shape"])),
        np.full(partition.n_alpha, np.exp(hp_cfg["log_rate"])),
    )

    instance_files = sorted(
        name for name in manifest["artifacts"]
        if name.startswith("instance_") and name.endswith(".csv")
    )
    artifacts = []
    summary = {
        "experiment": experiment_id,
        "config_hash": config_hash(config),
        "parameter_names": list(exp.names),
        "questionable": list(exp.questionable_names),
        "gamma_tol": gamma_tol,
        "starts": starts,
        "instances": [],
    }

    for i, fname in enumerate(instance_files):
        inst = SampleSet.load(os.path.join(sample_dir, fname))
        gmm = build_kde_gmm(inst.samples, partition)
        gmm_name = f"gmm_{i:02d}.json"
        _atomic_write(os.path.join(directory, gmm_name), gmm.to_json())
        artifacts.append(gmm_name)

        problem = core.NsblProblem(gmm, hyperprior, gamma_tol=gamma_tol)
        optima = multistart(problem, [np.array(s) for s in starts], newton_cfg)
        for j, res in enumerate(optima.results):
            tname = f"trace_i{i:02d}_s{j}.csv"
            write_run_trace(os.path.join(directory, tname), res)
            artifacts.append(tname)

        clusters = []
        for cl in optima.clusters:
            rep = cl.representative
            rel = problem.relevance_at(rep.optimum)
            clusters.append({
                "optimum": rep.optimum.tolist(),
                "objective": rep.objective_at_optimum,
                "multiplicity": cl.multiplicity,
                "gamma_rms": rel.rms.tolist(),
                "verdicts": list(rel.verdicts),
                "converged": rep.converged,
                "termination_reason": rep.termination_reason,
            })
        best = clusters[0]

        post = problem.posterior_at(np.array(best["optimum"]))
        post_alt = (problem.posterior_at(np.array(clusters[1]["optimum"]))
                    if len(clusters) > 1 else None)
        marg_stats = {}
        for idx, name in enumerate(exp.names):
            grid = _marginal_grid(gmm, idx)
            pdf_pre = gmm.marginal_density([idx], grid)
            pdf_post = post.marginal_density([idx], grid)
            header = ["value", "pdf_pre", "pdf_post"]
            cols = [grid, pdf_pre, pdf_post]
            if post_alt is not None:
                header.append("pdf_post_alt")
                cols.append(post_alt.marginal_density([idx], grid))
            mname = f"marginal_i{i:02d}_{name}.csv"
            _write_csv(os.path.join(directory, mname), header,
                       (_fmt(row) for row in zip(*cols)))
            artifacts.append(mname)
            pre_sd = gmm.marginal_std(idx)
            post_mean, post_var = post.marginal_moments(idx)
            marg_stats[name] = {
                "pre_std": pre_sd,
                "post_mean": post_mean,
                "post_std": float(np.sqrt(max(post_var, 0.0))),
            }

        if partition.n_alpha == 1:
            evals = _objective_sweep(problem)
            sname = f"sweep_i{i:02d}.csv"
            core.write_evaluation_trace(os.path.join(directory, sname), evals)
            artifacts.append(sname)

        summary["instances"].append({
            "instance": i,
            "source": fname,
            "clusters": clusters,
            "n_clusters": len(clusters),
            "global_optimum": best["optimum"],
            "global_objective": best["objective"],
            "gamma_rms": best["gamma_rms"],
            "verdicts": best["verdicts"],
            "marginals": marg_stats,
        })

    verdict_consensus = {}
    for qi, name in enumerate(exp.questionable_names):
        votes = [inst["verdicts"][qi] for inst in summary["instances"]]
        verdict_consensus[name] = max(set(votes), key=votes.count)
    summary["verdict_consensus"] = verdict_consensus

    _atomic_write(os.path.join(directory, "learn_summary.json"),
                  json.dumps(summary, indent=2, sort_keys=True))
    artifacts.append("learn_summary.json")
    _write_manifest(directory, "learn", config, artifacts,
                    time.time() - t0, experiment=experiment_id)
    return {
        "directory": directory,
        "verdicts": verdict_consensus,
        "n_instances": len(summary["instances"]),
    }


def report(config, experiment_id, out_dir, seed=None):
    """Consolidated verdicts/optima bundle referencing hash-valid
    artifacts only."""
    t0 = time.time()
    exp = get_experiment(experiment_id)
    learn_dir = stage_dir(out_dir, config, "learn", experiment_id)
    manifest = _read_manifest(learn_dir, "learn", config)
    directory = stage_dir(out_dir, config, "report", experiment_id)
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(learn_dir, "learn_summary.json")) as fh:
        summary = json.load(fh)

    na = len(summary["questionable"])
    optima_rows = []
    gamma_rows = []
    for inst in summary["instances"]:
        for ci, cl in enumerate(inst["clusters"]):
            optima_rows.append(
                [inst["instance"], ci, cl["multiplicity"],
                 f"{cl['objective']:.17g}"]
                + _fmt(cl["optimum"]) + _fmt(cl["gamma_rms"])
            )
        gamma_rows.append([inst["instance"]] + _fmt(inst["gamma_rms"]))
    qnames = summary["questionable"]
    _write_csv(
        os.path.join(directory, "optima.csv"),
        ["instance", "cluster", "multiplicity", "objective"]
        + [f"log_alpha_{n}" for n in qnames]
        + [f"gamma_rms_{n}" for n in qnames],
        optima_rows,
    )
    _write_csv(
        os.path.join(directory, "gamma_rms.csv"),
        ["instance"] + [f"gamma_rms_{n}" for n in qnames],
        gamma_rows,
    )

    glob = np.array([inst["global_optimum"] for inst in summary["instances"]])
    spread = {
        "mean": glob.mean(axis=0).tolist(),
        "std": glob.std(axis=0).tolist(),
        "min": glob.min(axis=0).tolist(),
        "max": glob.max(axis=0).tolist(),
    }
    doc = {
        "experiment": experiment_id,
        "config_hash": config_hash(config),
        "parameter_names": summary["parameter_names"],
        "questionable": qnames,
        "gamma_tol": summary["gamma_tol"],
        "multistart_grid": summary["starts"],
        "verdict_consensus": summary["verdict_consensus"],
        "global_optimum_spread": spread,
        "per_instance": [
            {
                "instance": inst["instance"],
                "global_optimum": inst["global_optimum"],
                "objective": inst["global_objective"],
                "gamma_rms": inst["gamma_rms"],
                "verdicts": inst["verdicts"],
                "n_clusters": inst["n_clusters"],
                "marginals": inst["marginals"],
            }
            for inst in summary["instances"]
        ],
        "learn_artifacts": {
            name: digest for name, digest in manifest["artifacts"].items()
        },
    }
    _atomic_write(os.path.join(directory, "report.json"),
                  json.dumps(doc, indent=2, sort_keys=True))
    artifacts = ["report.json", "optima.csv", "gamma_rms.csv"]
    _write_manifest(directory, "report", config, artifacts,
                    time.time() - t0, experiment=experiment_id)
    return {"directory": directory,
            "verdicts": summary["verdict_consensus"]}
