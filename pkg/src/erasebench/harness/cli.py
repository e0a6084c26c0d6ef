"""Command-line entry point: ``erasebench <command> --config exp.ini [--seed N] [--out-dir DIR] [--force]``.

Exit codes: 0 success, 2 configuration error, 3 divergence under the
``halt_on_diverge`` policy.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from ..data import apply_forget
from ..evaluation import build_report
from ..models.training import fit_model, model_from_checkpoint
from ..scenarios import write_request_artifacts
from ..unlearn.config import ConfigError
from ..unlearn.runner import run_sequence
from .checkpoint_io import load_checkpoint, save_checkpoint
from .config import defaults_help, parse_config
from .experiment import (
    ArtifactExists,
    artifact_paths,
    load_dataset,
    make_scenario,
    metrics_document,
    report_from_files,
    run_experiment,
    timing_document,
    trajectory_from_log,
    unlearned_checkpoint,
)
from .tables import TableRow, emit_table

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="experiment INI file")
    p.add_argument("--seed", type=int, default=None, help="seed (default: first seed in the config)")
    p.add_argument("--out-dir", default=None, help="artifact directory (default: [experiment] out_dir)")
    p.add_argument("--force", action="store_true", help="overwrite existing artifacts")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="erasebench",
        description="Benchmark approximate unlearning for recommenders against retrained models.",
        epilog="config keys and defaults:\n" + defaults_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "train the model on the (possibly poisoned) training set"),
        ("scenario-gen", "write forget-batch TSV files and a manifest"),
        ("unlearn", "serve all requests sequentially on the trained checkpoint"),
        ("retrain", "train the oracle on the retain set"),
        ("evaluate", "compare the unlearned and retrained checkpoints"),
        ("run", "full pipeline over every configured seed"),
    ):
        _common(sub.add_parser(name, help=help_text))
    rep = sub.add_parser("report", help="render metrics files as a table")
    rep.add_argument("metrics", nargs="*", help="metrics.json files (default: all in --out-dir)")
    rep.add_argument("--out-dir", default=".", help="directory searched for *_metrics.json")
    rep.add_argument("--format", choices=("text", "csv"), default="text")
    return parser


def _guard(paths, force: bool) -> None:
    for p in paths:
        if p.exists() and not force:
            raise ArtifactExists(f"{p} exists; pass --force to overwrite")


class _Context:
    def __init__(self, args):
        self.cfg = parse_config(args.config)
        self.seed = args.seed if args.seed is not None else self.cfg.seeds[0]
        self.out = Path(args.out_dir or self.cfg.out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.paths = artifact_paths(self.out, self.cfg.digest(), self.seed)
        self.force = args.force
        self.dataset = load_dataset(self.cfg)
        self.scenario, self.train_ds, self.requests = make_scenario(self.cfg, self.dataset, self.seed)

    def model(self, key: str, dataset):
        ckpt = load_checkpoint(self.paths[key], dataset)
        return model_from_checkpoint(ckpt, dataset)


def cmd_train(args) -> int:
    ctx = _Context(args)
    _guard([ctx.paths["trained"]], ctx.force)
    model = fit_model(ctx.cfg.model_kind, ctx.train_ds, ctx.cfg.hyper, ctx.cfg.epochs, ctx.seed)
    save_checkpoint(model.to_checkpoint(), ctx.paths["trained"])
    print(ctx.paths["trained"])
    return EXIT_OK


def cmd_scenario_gen(args) -> int:
    ctx = _Context(args)
    target = ctx.out / f"{ctx.cfg.digest()}_seed{ctx.seed}_requests"
    _guard([target / "manifest.json"], ctx.force)
    print(write_request_artifacts(ctx.requests, ctx.train_ds, target))
    return EXIT_OK


def cmd_retrain(args) -> int:
    ctx = _Context(args)
    _guard([ctx.paths["retrained"]], ctx.force)
    retain = apply_forget(ctx.train_ds, ctx.requests.union())
    t0 = time.perf_counter()
    model = fit_model(ctx.cfg.model_kind, retain, ctx.cfg.hyper, ctx.cfg.epochs, ctx.seed)
    elapsed = time.perf_counter() - t0
    save_checkpoint(model.to_checkpoint(), ctx.paths["retrained"])
    print(json.dumps({"checkpoint": str(ctx.paths["retrained"]), "retrain_s": elapsed}))
    return EXIT_OK


def cmd_unlearn(args) -> int:
    ctx = _Context(args)
    _guard([ctx.paths["unlearned"], ctx.paths["steps"]], ctx.force)
    model = ctx.model("trained", ctx.train_ds)
    traj = run_sequence(model, ctx.train_ds, ctx.requests, ctx.cfg.algo, ctx.cfg.policy, ctx.seed, ctx.paths["steps"])
    save_checkpoint(unlearned_checkpoint(traj), ctx.paths["unlearned"])
    print(json.dumps({"status": traj.status, "steps": len(traj), "total_s": traj.total_wall_clock}))
    if traj.status == "diverged" and ctx.cfg.policy == "halt_on_diverge":
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ctx = _Context(args)
    _guard([ctx.paths["metrics"]], ctx.force)
    retain = apply_forget(ctx.train_ds, ctx.requests.union())
    original = ctx.model("trained", ctx.train_ds)
    unlearned = ctx.model("unlearned", retain)
    retrained = ctx.model("retrained", retain)
    traj = trajectory_from_log(ctx.paths["steps"], unlearned, retain)
    retrain_s = retrained.provenance.get("wall_clock_train")
    rep = build_report(original, retrained, traj, ctx.scenario, retain, ctx.cfg.ks, retrain_s)
    ctx.paths["metrics"].write_text(json.dumps(metrics_document(rep, ctx.cfg, ctx.seed), indent=2, sort_keys=True) + "\n")
    ctx.paths["timing"].write_text(json.dumps(timing_document(rep), indent=2, sort_keys=True) + "\n")
    print(ctx.paths["metrics"])
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seeds = (args.seed,)
    arts = run_experiment(cfg, force=args.force, out_dir=args.out_dir)
    if arts.table_path is not None:
        print(arts.table_path.read_text(encoding="utf-8"), end="")
    for seed, err in sorted(arts.errors.items()):
        print(f"seed {seed} failed: {err}", file=sys.stderr)
    if cfg.policy == "halt_on_diverge" and "diverged" in arts.statuses.values():
        return EXIT_DIVERGED
    return EXIT_OK if not arts.errors else 1


def cmd_report(args) -> int:
    files = [Path(p) for p in args.metrics] or sorted(Path(args.out_dir).glob("*_metrics.json"))
    groups: dict[tuple[str, str], list] = {}
    for f in files:
        doc = json.loads(f.read_text(encoding="utf-8"))
        if doc.get("status") == "error":
            continue
        timing = f.with_name(f.name.replace("_metrics.json", "_timing.json"))
        rep = report_from_files(f, timing)
        groups.setdefault((doc["model"], doc["algorithm"]), []).append(rep)
    if not groups:
        print("no metrics files found", file=sys.stderr)
        return 1
    rows = [TableRow(m, a, reps) for (m, a), reps in sorted(groups.items())]
    print(emit_table(rows, args.format), end="")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "scenario-gen": cmd_scenario_gen,
    "unlearn": cmd_unlearn,
    "retrain": cmd_retrain,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArtifactExists as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
