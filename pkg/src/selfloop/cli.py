"""Command-line entry point.

Subcommands: run, evaluate, export-dataset, replay, report. Diagnostics
go to stderr, data to stdout. Exit codes are stable: 0 success,
1 verification mismatch, 2 invalid configuration, 3 backend
connectivity failure, 4 missing run data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from selfloop import datasets
from selfloop.actor import Trajectory
from selfloop.backends import BackendError
from selfloop.loop import ConfigError, RunConfig, build_eval_batch, compute_metrics, run_experiment
from selfloop.manifest import (
    ManifestError,
    load_run,
    rebuild_backends,
    render_metrics_tables,
    reports_as_json,
    write_manifest,
)
from selfloop.worldsim.engine import observe, step
from selfloop.worldsim.oracle import frame_success
from selfloop.worldsim.scene import load_scene, reset, scene_from_dict
from selfloop.worldsim.state import FIRST_PERSON

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_MISSING = 4


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def load_config_file(path: str | Path, overrides: dict | None = None) -> RunConfig:
    """Parse a TOML (or manifest-snapshot JSON) run configuration.

    Overrides are applied to the raw document before backend seeds are
    resolved, so an overridden run seed flows into derived seeds.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"config: file not found: {path}"])
    if path.suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
    else:
        with path.open("rb") as handle:
            document = tomllib.load(handle)
        data = dict(document.get("run", {}))
        for section in ("actor_backend", "critic_backend", "training_meta"):
            if section in document:
                data[section] = document[section]
    data.update(overrides or {})
    return RunConfig.from_dict(data, base_dir=path.parent)


def _next_run_dir(root: Path) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    index = 1
    while (root / f"run-{index:04d}").exists():
        index += 1
    return root / f"run-{index:04d}"


def cmd_run(args: argparse.Namespace) -> int:
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.variant is not None:
        overrides["variant"] = args.variant
    try:
        config = load_config_file(args.config, overrides)
        result = run_experiment(config)
    except ConfigError as exc:
        for error in exc.errors:
            print(f"config error: {error}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        if exc.kind == "connectivity":
            return _fail(EXIT_BACKEND, f"backend connectivity failure: {exc}")
        return _fail(EXIT_BACKEND, f"backend failure: {exc}")
    run_dir = _next_run_dir(Path(args.output))
    digest = write_manifest(result, run_dir)
    print(f"{run_dir}\t{digest}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    try:
        manifest = load_run(args.run)
    except ManifestError as exc:
        return _fail(EXIT_MISSING, str(exc))
    data = dict(manifest.config_data)
    if args.seed is not None:
        data["seed"] = args.seed
    if args.episodes is not None:
        data["eval_episodes_per_task"] = args.episodes
    try:
        config = RunConfig.from_dict(data)
    except ConfigError as exc:
        for error in exc.errors:
            print(f"config error: {error}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        actor, critic = rebuild_backends(config, manifest)
        report = compute_metrics(
            build_eval_batch(config),
            critic,
            actor,
            frame_success,
            scene=config.scene,
            horizon=config.horizon,
        )
    except BackendError as exc:
        return _fail(EXIT_BACKEND, f"backend failure: {exc}")
    print(json.dumps(report.to_record(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_export_dataset(args: argparse.Namespace) -> int:
    try:
        manifest = load_run(args.run)
    except ManifestError as exc:
        return _fail(EXIT_MISSING, str(exc))
    paths = manifest.actor_dataset_paths if args.which == "actor" else manifest.critic_dataset_paths
    if not paths:
        return _fail(EXIT_MISSING, f"manifest has no {args.which} datasets")
    iteration = args.iteration if args.iteration is not None else max(paths)
    if iteration not in paths:
        return _fail(EXIT_MISSING, f"manifest has no {args.which} dataset for iteration {iteration}")
    try:
        records = datasets.read_jsonl(paths[iteration])
    except datasets.SchemaError as exc:
        return _fail(EXIT_MISMATCH, f"stored dataset is invalid: {exc}")
    if args.split is not None:
        base = Path(args.out) if args.out else Path(f"{args.which}_iter{iteration:02d}.jsonl")
        train_path = base.with_suffix(".train.jsonl")
        holdout_path = base.with_suffix(".holdout.jsonl")
        train, holdout = datasets.split_records(records, args.split, args.seed or 0)
        datasets.write_jsonl(train_path, train)
        datasets.write_jsonl(holdout_path, holdout)
        print(f"{train_path}\t{len(train)}")
        print(f"{holdout_path}\t{len(holdout)}")
        return EXIT_OK
    if args.out:
        datasets.write_jsonl(args.out, records)
        print(f"{args.out}\t{len(records)}")
    else:
        from selfloop.canonical import canonical_json

        for record in records:
            print(canonical_json(record))
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    archive = None
    scene = None
    if args.run:
        try:
            manifest = load_run(args.run)
        except ManifestError as exc:
            return _fail(EXIT_MISSING, str(exc))
        archive = manifest.trajectory_path
        scene = scene_from_dict(manifest.config_data["scene"])
    if args.archive:
        archive = Path(args.archive)
    if args.scene:
        scene = load_scene(args.scene)
    if archive is None or not Path(archive).is_file():
        return _fail(EXIT_MISSING, "replay requires a trajectory archive (--run with archives, or --archive)")
    if scene is None:
        return _fail(EXIT_CONFIG, "replay requires a scene (--run manifest or --scene)")
    records = datasets.read_jsonl(archive)
    if not records:
        return _fail(EXIT_MISSING, "trajectory archive is empty")
    if not 0 <= args.index < len(records):
        return _fail(EXIT_MISSING, f"trajectory index {args.index} out of range (0..{len(records) - 1})")
    traj = Trajectory.from_record(records[args.index])
    state = reset(scene, traj.seed)
    for number, recorded in enumerate(traj.steps, start=1):
        live_obs = observe(state, FIRST_PERSON)
        if live_obs != recorded.observation:
            print(f"mismatch: step {number} observation diverges for {traj.traj_id}", file=sys.stderr)
            return EXIT_MISMATCH
        state, outcome = step(state, recorded.action)
        if outcome != recorded.outcome:
            print(f"mismatch: step {number} outcome diverges for {traj.traj_id}", file=sys.stderr)
            return EXIT_MISMATCH
    from selfloop.worldsim.state import THIRD_PERSON

    if observe(state, THIRD_PERSON) != traj.final_frame:
        print(f"mismatch: final frame diverges for {traj.traj_id}", file=sys.stderr)
        return EXIT_MISMATCH
    print(f"replay ok\t{traj.traj_id}\t{len(traj.steps)} steps verified")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        manifest = load_run(args.run)
    except ManifestError as exc:
        return _fail(EXIT_MISSING, str(exc))
    if not manifest.reports:
        return _fail(EXIT_MISSING, "no metrics")
    if args.format == "json":
        print(json.dumps(reports_as_json(manifest.reports), indent=2, sort_keys=True))
    else:
        print(render_metrics_tables(manifest.reports), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfloop", description="Actor-critic self-learning harness")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="execute a configured run and write its manifest")
    run_parser.add_argument("--config", required=True, help="TOML run configuration (or a manifest config.json)")
    run_parser.add_argument("--output", default="runs", help="directory that receives run-NNNN manifests")
    run_parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    run_parser.add_argument("--variant", default=None, help="override the configured variant")
    run_parser.set_defaults(func=cmd_run)

    eval_parser = sub.add_parser("evaluate", help="re-evaluate a stored run on a fresh batch")
    eval_parser.add_argument("--run", required=True, help="run directory")
    eval_parser.add_argument("--seed", type=int, default=None)
    eval_parser.add_argument("--episodes", type=int, default=None, help="evaluation episodes per task")
    eval_parser.set_defaults(func=cmd_evaluate)

    export_parser = sub.add_parser("export-dataset", help="re-emit stored fine-tuning datasets")
    export_parser.add_argument("--run", required=True)
    export_parser.add_argument("--which", choices=("actor", "critic"), default="critic")
    export_parser.add_argument("--iteration", type=int, default=None)
    export_parser.add_argument("--out", default=None)
    export_parser.add_argument("--split", type=float, default=None, help="train fraction, e.g. 0.9")
    export_parser.add_argument("--seed", type=int, default=None, help="seed for the split shuffle")
    export_parser.set_defaults(func=cmd_export_dataset)

    replay_parser = sub.add_parser("replay", help="re-execute an archived trajectory and verify it")
    replay_parser.add_argument("--run", default=None, help="run directory holding trajectories.jsonl")
    replay_parser.add_argument("--archive", default=None, help="explicit trajectory archive path")
    replay_parser.add_argument("--scene", default=None, help="scene file (when replaying a bare archive)")
    replay_parser.add_argument("--index", type=int, default=0)
    replay_parser.set_defaults(func=cmd_replay)

    report_parser = sub.add_parser("report", help="render metrics tables for a run")
    report_parser.add_argument("--run", required=True)
    report_parser.add_argument("--format", choices=("table", "json"), default="table")
    report_parser.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except BrokenPipeError:
        # Downstream consumer (e.g. head) closed stdout; not an error.
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
