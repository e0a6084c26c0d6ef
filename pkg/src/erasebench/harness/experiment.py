"""Full pipeline: train, build the scenario, retrain the oracle, unlearn sequentially, evaluate.

Artifacts of one run live in ``out_dir`` and are named
``<config digest>_seed<seed>_<kind>``:

- ``trained.ckpt``, ``retrained.ckpt``, ``unlearned.ckpt``
- ``steps.jsonl`` (one record per request)
- ``metrics.json`` (utility and effectiveness; deterministic for a fixed config and seed)
- ``timing.json`` (wall-clock numbers, speedup and the deployability flag)

plus ``<digest>_config.ini``, ``<digest>_aggregate.json`` and
``<digest>_table.txt`` across seeds.
"""

from __future__ import annotations

import json
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path

from ..data import Dataset, apply_forget, build_dataset, load_interactions
from ..evaluation import MetricsReport, aggregate, build_report
from ..models.training import fit_model, model_from_checkpoint
from ..scenarios import batch_spam_requests, gen_sensitive_requests, gen_spam_attack
from ..unlearn.runner import Trajectory, TrajectoryStep, run_sequence, step_record
from ..unlearn.config import StepOutcome
from .checkpoint_io import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, serialize_config
from .tables import TableRow, emit_table

TIMING_KEYS = ("unlearn_total_s", "unlearn_avg_per_request_s", "retrain_s", "speedup")


class ArtifactExists(FileExistsError):
    pass


@dataclass
class RunArtifacts:
    out_dir: Path
    digest: str
    per_seed: dict[int, dict[str, Path]] = field(default_factory=dict)
    reports: dict[int, MetricsReport] = field(default_factory=dict)
    errors: dict[int, str] = field(default_factory=dict)
    statuses: dict[int, str] = field(default_factory=dict)
    aggregate_path: Path | None = None
    table_path: Path | None = None
    config_path: Path | None = None


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    log = load_interactions(cfg.dataset_path)
    return build_dataset(log, cfg.split, cfg.min_interactions, cfg.sensitive_categories, cfg.test_fraction)


def make_scenario(cfg: ExperimentConfig, dataset: Dataset, seed: int):
    """``(scenario, training dataset, requests)`` for one seed."""
    if cfg.scenario == "sensitive":
        sc = gen_sensitive_requests(dataset, cfg.sensitive_categories or None, cfg.budget_fraction, seed=seed)
        return sc, dataset, sc.requests
    sc = gen_spam_attack(dataset, cfg.spam_fraction, cfg.n_target_items, cfg.popular_pool_size, seed=seed)
    return sc, sc.poisoned_dataset, batch_spam_requests(sc, cfg.spam_batch_size, seed=seed)


def artifact_paths(out_dir: Path, digest: str, seed: int) -> dict[str, Path]:
    stem = f"{digest}_seed{seed}"
    names = {
        "trained": "trained.ckpt",
        "retrained": "retrained.ckpt",
        "unlearned": "unlearned.ckpt",
        "steps": "steps.jsonl",
        "metrics": "metrics.json",
        "timing": "timing.json",
    }
    return {k: out_dir / f"{stem}_{v}" for k, v in names.items()}


def metrics_document(rep: MetricsReport, cfg: ExperimentConfig, seed: int) -> dict:
    flat = rep.to_flat()
    for key in TIMING_KEYS:
        flat.pop(key, None)
    flat.pop("deployable", None)
    flat.update({"model": cfg.model_kind, "algorithm": cfg.algo.algorithm, "scenario": cfg.scenario, "seed": seed})
    return flat


def timing_document(rep: MetricsReport) -> dict:
    doc = {k: rep.timing.get(k) for k in TIMING_KEYS}
    doc["deployable"] = rep.deployable
    return doc


def report_from_files(metrics_path, timing_path=None) -> MetricsReport:
    flat = json.loads(Path(metrics_path).read_text(encoding="utf-8"))
    if timing_path is not None and Path(timing_path).exists():
        flat.update(json.loads(Path(timing_path).read_text(encoding="utf-8")))
    return MetricsReport.from_flat(flat)


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def unlearned_checkpoint(traj: Trajectory):
    ckpt = traj.model.to_checkpoint()
    ckpt.provenance["steps_applied"] = sum(1 for s in traj.steps if s.outcome.status == "ok")
    ckpt.provenance["current_train"] = traj.dataset.digest()
    return ckpt


def run_seed(cfg: ExperimentConfig, dataset: Dataset, seed: int, paths: dict[str, Path]) -> tuple[MetricsReport, str]:
    sc, train_ds, requests = make_scenario(cfg, dataset, seed)
    model = fit_model(cfg.model_kind, train_ds, cfg.hyper, cfg.epochs, seed)
    save_checkpoint(model.to_checkpoint(), paths["trained"])

    retain_ds = apply_forget(train_ds, requests.union())
    t0 = time.perf_counter()
    retrained = fit_model(cfg.model_kind, retain_ds, cfg.hyper, cfg.epochs, seed)
    retrain_s = time.perf_counter() - t0
    save_checkpoint(retrained.to_checkpoint(), paths["retrained"])

    traj = run_sequence(model, train_ds, requests, cfg.algo, cfg.policy, seed, paths["steps"])
    save_checkpoint(unlearned_checkpoint(traj), paths["unlearned"])

    rep = build_report(model, retrained, traj, sc, traj.dataset, cfg.ks, retrain_s)
    _dump(paths["metrics"], metrics_document(rep, cfg, seed))
    _dump(paths["timing"], timing_document(rep))
    return rep, traj.status


def run_experiment(cfg: ExperimentConfig, force: bool = False, out_dir=None) -> RunArtifacts:
    """Run every seed; a failing seed is recorded and the others still run."""
    cfg.validate()
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = cfg.digest()
    arts = RunArtifacts(out, digest)

    planned = {seed: artifact_paths(out, digest, seed) for seed in cfg.seeds}
    if not force:
        existing = [p for paths in planned.values() for p in paths.values() if p.exists()]
        if existing:
            raise ArtifactExists(f"{existing[0]} exists; pass force=True (--force) to overwrite")
    arts.config_path = out / f"{digest}_config.ini"
    arts.config_path.write_text(serialize_config(cfg), encoding="utf-8")

    dataset = load_dataset(cfg)
    for seed in cfg.seeds:
        paths = planned[seed]
        arts.per_seed[seed] = paths
        try:
            rep, status = run_seed(cfg, dataset, seed, paths)
            arts.reports[seed] = rep
            arts.statuses[seed] = status
        except Exception as exc:  # keep the sweep going
            arts.errors[seed] = f"{type(exc).__name__}: {exc}"
            arts.statuses[seed] = "error"
            _dump(paths["metrics"], {"status": "error", "error": arts.errors[seed], "seed": seed,
                                     "traceback": traceback.format_exc(limit=5)})

    if arts.reports:
        reps = [arts.reports[s] for s in sorted(arts.reports)]
        arts.aggregate_path = out / f"{digest}_aggregate.json"
        _dump(arts.aggregate_path, aggregate_reports(reps))
        arts.table_path = out / f"{digest}_table.txt"
        arts.table_path.write_text(
            emit_table([TableRow(cfg.model_kind, cfg.algo.algorithm, reps)], "text"), encoding="utf-8"
        )
    return arts


def aggregate_reports(reports: list[MetricsReport]) -> dict:
    """``{field: {"mean", "std", "n"}}`` over every numeric field shared by the reports."""
    flats = [r.to_flat() for r in reports]
    keys = sorted({k for f in flats for k, v in f.items() if isinstance(v, (int, float)) and not isinstance(v, bool)})
    out: dict = {"seeds": len(reports), "statuses": [f["status"] for f in flats]}
    for key in keys:
        vals = [f.get(key) for f in flats if isinstance(f.get(key), (int, float))]
        mean, std = aggregate(vals)
        out[key] = {"mean": mean, "std": std, "n": len(vals)}
    return out


def trajectory_from_log(path, model=None, dataset=None) -> Trajectory:
    """Rebuild step statuses and timings from a ``steps.jsonl`` file."""
    traj = Trajectory("", model=model, dataset=dataset)
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        traj.algorithm = rec["algorithm"]
        out = StepOutcome(None, rec["status"], rec["wall_clock_seconds"],
                          {"update_norm": rec["update_norm"], "clipped": rec["clipped"]})
        traj.steps.append(TrajectoryStep(rec["step"], out, rec["cumulative_forget_interactions"]))
    return traj


__all__ = [
    "ArtifactExists", "RunArtifacts", "aggregate_reports", "artifact_paths", "load_checkpoint", "load_dataset",
    "make_scenario", "metrics_document", "model_from_checkpoint", "report_from_files", "run_experiment",
    "run_seed", "step_record", "unlearned_checkpoint", "timing_document", "trajectory_from_log",
]
