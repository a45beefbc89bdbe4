"""Random hyperparameter search with AUC ranking and divergence filtering."""

from __future__ import annotations

import csv
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .envs import EnvFault
from .harness import RunConfig, run_training

RESULT_FIELDS = ("config_id", "seed", "auc", "diverged")
MANIFEST_VERSION = 1

# agents whose entropy coefficient is fixed take the sampled value as eta
_FIXED_ETA_AGENTS = ("avg", "avg_target", "iac")


@dataclass(frozen=True)
class SearchSpace:
    """Ranges are ``(low_exponent, high_exponent)`` for log-uniform fields."""

    actor_lr: tuple = (-6.0, -2.0)
    critic_lr: tuple = (-6.0, -2.0)
    beta1: tuple = (0.0, 0.9)
    beta2: float = 0.999
    alpha_lr: tuple = (-5.0, 0.0)
    gamma: tuple = (0.95, 0.97, 0.99, 0.995, 1.0)

    def to_json(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, data):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data.items()})


def _log_uniform(rng, bounds):
    lo, hi = bounds
    return float(10.0 ** rng.uniform(lo, hi))


def sample_config(space, rng):
    """One draw of every searched hyperparameter (field order fixes the RNG stream)."""
    return {
        "actor_lr": _log_uniform(rng, space.actor_lr),
        "critic_lr": _log_uniform(rng, space.critic_lr),
        "beta1": float(space.beta1[rng.integers(len(space.beta1))]),
        "beta2": float(space.beta2),
        "alpha_lr": _log_uniform(rng, space.alpha_lr),
        "gamma": float(space.gamma[rng.integers(len(space.gamma))]),
    }


def to_agent_params(sample, agent_kind):
    """Map a raw draw onto constructor arguments of ``agent_kind``."""
    params = dict(sample)
    alpha = params.pop("alpha_lr")
    if agent_kind in _FIXED_ETA_AGENTS:
        params["eta"] = alpha
    else:
        params["alpha_lr"] = alpha
    return params


def config_rng(sweep_seed, config_id):
    return np.random.default_rng([int(sweep_seed), int(config_id)])


@dataclass
class SweepResult:
    config_id: int
    aucs: dict = field(default_factory=dict)  # seed -> auc (completed runs only)
    mean_auc: float | None = None
    stderr: float | None = None
    diverged_any: bool = False
    failed: int = 0


def aggregate(rows):
    """Fold per-run rows into one :class:`SweepResult` per config, ordered by id."""
    by_id = {}
    for row in rows:
        res = by_id.setdefault(int(row["config_id"]), SweepResult(int(row["config_id"])))
        if row["diverged"]:
            res.diverged_any = True
        elif row["auc"] is None:
            res.failed += 1
        else:
            res.aucs[int(row["seed"])] = float(row["auc"])
    for res in by_id.values():
        vals = np.array(list(res.aucs.values()), dtype=np.float64)
        if vals.size:
            res.mean_auc = float(vals.mean())
            res.stderr = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
    return [by_id[k] for k in sorted(by_id)]


def rank_configs(results, top_k=None):
    """Non-diverged configs with at least one completed run, best mean AUC first.

    Ties go to the lower standard error, then the lower config id.
    """
    if not results:
        raise ValueError("no results to rank")
    kept = [r for r in results if not r.diverged_any and r.mean_auc is not None]
    if not kept:
        warnings.warn("every configuration diverged or failed; nothing to rank", stacklevel=2)
        return []
    kept.sort(key=lambda r: (-r.mean_auc, r.stderr, r.config_id))
    return kept if top_k is None else kept[: int(top_k)]


def run_one(task):
    """Worker entry: ``task = (config_id, seed, RunConfig as dict)`` -> result row."""
    config_id, seed, cfg = task
    config = RunConfig(**cfg)
    try:
        summary = run_training(config)
    except EnvFault:
        return {"config_id": config_id, "seed": seed, "auc": None, "diverged": False}
    return {"config_id": config_id, "seed": seed, "auc": summary.auc,
            "diverged": summary.diverged}


def plan_sweep(base, space, n_configs, seeds, sweep_seed=0):
    """Configs and run tasks of a sweep; a pure function of its arguments."""
    configs, tasks = [], []
    for cid in range(int(n_configs)):
        sample = sample_config(space, config_rng(sweep_seed, cid))
        params = {**base.agent_params, **to_agent_params(sample, base.agent)}
        configs.append({"id": cid, "sample": sample, "agent_params": params})
        for seed in seeds:
            cfg = replace(base, agent_params=params, seed=int(seed))
            tasks.append((cid, int(seed), asdict(cfg)))
    return configs, tasks


def run_sweep(base, space=None, n_configs=30, seeds=range(5), sweep_seed=0, workers=1,
              out_dir=None, runner=run_one):
    """Run every (config, seed) pair and return ``(results, rows)``.

    ``runner`` maps one task to a result row; it is swappable for fault
    injection. With ``workers > 1`` runs go to a process pool; rows are
    merged by ``(config_id, seed)`` so the outcome does not depend on
    completion order.
    """
    space = space or SearchSpace()
    seeds = [int(s) for s in seeds]
    configs, tasks = plan_sweep(base, space, n_configs, seeds, sweep_seed)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.json", base, space, configs, seeds, sweep_seed)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            rows = list(pool.map(runner, tasks))
    else:
        rows = [runner(t) for t in tasks]
    rows.sort(key=lambda r: (r["config_id"], r["seed"]))
    if out is not None:
        write_results_csv(out / "results.csv", rows)
    return aggregate(rows), rows


def write_manifest(path, base, space, configs, seeds, sweep_seed):
    base_json = asdict(base)
    base_json.pop("agent_params")
    manifest = {
        "version": MANIFEST_VERSION,
        "sweep_seed": int(sweep_seed),
        "base": base_json,
        "space": space.to_json(),
        "seeds": list(seeds),
        "configs": configs,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_results_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "auc": "" if row["auc"] is None else repr(row["auc"])})


def read_results_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {"config_id": int(r["config_id"]), "seed": int(r["seed"]),
             "auc": float(r["auc"]) if r["auc"] else None,
             "diverged": r["diverged"] == "True"}
            for r in csv.DictReader(fh)
        ]
