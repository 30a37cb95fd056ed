"""Run manifests: a self-contained directory per run.

A manifest holds the resolved config snapshot (scene inlined), the
per-iteration datasets, the trajectory archive, and metrics in both
machine-readable and table form. Manifests are append-only: reruns and
overrides write new directories. The manifest hash covers every file,
so two runs agree exactly when their hashes agree.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from selfloop import datasets
from selfloop.loop import MetricsReport, RunConfig, RunResult, _make_backends
from selfloop.backends import ModelBackend

MANIFEST_SCHEMA = "run-manifest-v1"


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(result: RunResult, run_dir: str | Path) -> str:
    """Write the full run directory; returns the manifest hash."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(result.config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    datasets.write_jsonl(run_dir / "metrics.jsonl", (report.to_record() for report in result.reports))
    (run_dir / "metrics.txt").write_text(render_metrics_tables(result.reports), encoding="utf-8")
    for data in result.iterations:
        datasets.write_jsonl(
            run_dir / "datasets" / f"actor_iter{data.iteration:02d}.jsonl",
            (sample.to_record() for sample in data.actor_samples),
        )
        datasets.write_jsonl(
            run_dir / "datasets" / f"critic_iter{data.iteration:02d}.jsonl",
            (sample.to_record() for sample in data.critic_samples),
        )
    if result.config.archive_trajectories and result.iterations:
        datasets.write_jsonl(
            run_dir / "trajectories.jsonl",
            (traj.to_record() for data in result.iterations for traj in data.trajectories),
        )
    digest = compute_manifest_hash(run_dir)
    index = {
        "schema_version": MANIFEST_SCHEMA,
        "files": {
            str(path.relative_to(run_dir)): _file_hash(path)
            for path in sorted(run_dir.rglob("*"))
            if path.is_file() and path.name != "manifest.json"
        },
        "manifest_hash": digest,
    }
    (run_dir / "manifest.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return digest


def compute_manifest_hash(run_dir: str | Path) -> str:
    """Hash of every file's content, keyed by relative path."""
    run_dir = Path(run_dir)
    entries = []
    for path in sorted(run_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            entries.append(f"{path.relative_to(run_dir)}:{_file_hash(path)}")
    return hashlib.sha256("\n".join(entries).encode("utf-8")).hexdigest()


@dataclass
class ManifestData:
    run_dir: Path
    config_data: dict
    reports: list[MetricsReport]
    actor_dataset_paths: dict[int, Path]
    critic_dataset_paths: dict[int, Path]
    trajectory_path: Path | None


class ManifestError(RuntimeError):
    """The run directory is missing required pieces."""


def load_run(run_dir: str | Path) -> ManifestData:
    run_dir = Path(run_dir)
    config_path = run_dir / "config.json"
    if not config_path.is_file():
        raise ManifestError(f"no config.json under {run_dir}")
    config_data = json.loads(config_path.read_text(encoding="utf-8"))
    metrics_path = run_dir / "metrics.jsonl"
    reports = []
    if metrics_path.is_file():
        reports = [MetricsReport.from_record(record) for record in datasets.read_jsonl(metrics_path)]
    actor_paths: dict[int, Path] = {}
    critic_paths: dict[int, Path] = {}
    dataset_dir = run_dir / "datasets"
    if dataset_dir.is_dir():
        for path in sorted(dataset_dir.glob("actor_iter*.jsonl")):
            actor_paths[int(path.stem.removeprefix("actor_iter"))] = path
        for path in sorted(dataset_dir.glob("critic_iter*.jsonl")):
            critic_paths[int(path.stem.removeprefix("critic_iter"))] = path
    trajectory_path = run_dir / "trajectories.jsonl"
    return ManifestData(
        run_dir=run_dir,
        config_data=config_data,
        reports=reports,
        actor_dataset_paths=actor_paths,
        critic_dataset_paths=critic_paths,
        trajectory_path=trajectory_path if trajectory_path.is_file() else None,
    )


def rebuild_backends(config: RunConfig, manifest: ManifestData) -> tuple[ModelBackend, ModelBackend]:
    """Reconstruct trained backends by replaying stored fine-tuning data.

    Learnable backends are rebuilt exactly: memorization is
    order-insensitive within an iteration and iterations replay in
    recorded order, critic before actor, as the run applied them.
    """
    from selfloop.actor import ActorSample
    from selfloop.critic import CriticSample

    actor, critic = _make_backends(config)
    iterations = sorted(set(manifest.actor_dataset_paths) | set(manifest.critic_dataset_paths))
    for iteration in iterations:
        critic_samples = []
        critic_path = manifest.critic_dataset_paths.get(iteration)
        if critic_path is not None:
            critic_samples = [CriticSample.from_record(r) for r in datasets.read_jsonl(critic_path)]
        actor_samples = []
        actor_path = manifest.actor_dataset_paths.get(iteration)
        if actor_path is not None:
            actor_samples = [ActorSample.from_record(r) for r in datasets.read_jsonl(actor_path)]
        if config.variant == "selu_one":
            actor.fine_tune(list(critic_samples) + list(actor_samples))
            continue
        if critic_samples and config.variant != "wo_critic":
            critic.fine_tune(critic_samples)
        if actor_samples:
            actor.fine_tune(actor_samples)
    return actor, critic


def render_metrics_tables(reports: list[MetricsReport]) -> str:
    """Plain-text tables: one row per task plus the average, one column
    per iteration, for detection accuracy and task success rate."""
    if not reports:
        return "no metrics\n"
    tasks = sorted(reports[0].per_task_detection_accuracy)
    lines: list[str] = []
    for title, getter, avg_getter in (
        (
            "Success detection accuracy (%)",
            lambda report: report.per_task_detection_accuracy,
            lambda report: report.detection_accuracy,
        ),
        (
            "Task success rate (%)",
            lambda report: report.per_task_success_rate,
            lambda report: report.task_success_rate,
        ),
    ):
        lines.append(title)
        width = max([len(task) for task in tasks] + [len("Avg.")]) + 2
        header = "task".ljust(width) + "".join(f"iter {report.iteration}".rjust(10) for report in reports)
        lines.append(header)
        for task in tasks:
            row = task.ljust(width)
            for report in reports:
                row += f"{getter(report).get(task, 0.0) * 100:10.2f}"
            lines.append(row)
        avg_row = "Avg.".ljust(width)
        for report in reports:
            avg_row += f"{avg_getter(report) * 100:10.2f}"
        lines.append(avg_row)
        lines.append("")
    counted = [report for report in reports if report.counts.get("total", 0)]
    for report in counted:
        counts = report.counts
        lines.append(
            f"Triage counts (iteration {report.iteration}): "
            f"total={counts['total']} direct={counts['direct']} self_asked={counts['self_asked']} "
            f"relabeled={counts['relabeled']} discarded={counts['discarded']} aborted={counts['aborted']}"
        )
    if counted:
        lines.append("")
    return "\n".join(lines)


def reports_as_json(reports: list[MetricsReport]) -> dict:
    return {
        "schema_version": "metrics-report-v1",
        "iterations": [report.to_record() for report in reports],
    }
