"""Benchmark command line.

Every subcommand writes one machine-readable JSON document to stdout
(sorted keys, no timestamps, trailing newline) so repeated runs on the
same inputs are byte-identical. Human-readable summaries go to stderr.
Exit status is nonzero when any item failed or an error aborted the run.

The dataset root comes from ``--dataset`` or the ``SHAPEALIGN_DATASET``
environment variable. A ``--config`` file is JSON with optional "solver"
and "metric" objects whose keys mirror SolverConfig / MetricConfig.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import bench
from .dataset import AnnotationRecord, load_annotations
from .errors import ShapeAlignError
from .solver import (
    SolverConfig,
    consensus_keypoints,
    solve,
    solve_ransac,
    solve_subset_consensus,
)
from .voxel import MetricConfig

DATASET_ENV = "SHAPEALIGN_DATASET"


def _emit(payload: dict) -> None:
    click.echo(json.dumps(payload, sort_keys=True, indent=2))


def _fail(exc: Exception) -> None:
    click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
    sys.exit(1)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise click.ClickException("config file must hold a JSON object")
    return raw


def _build_config(cls, section: dict, **overrides):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(section) - known)
    if unknown:
        raise click.ClickException(f"unknown config keys: {unknown}")
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return cls(**merged)


def _dataset_root(dataset: str | None) -> Path:
    root = dataset or os.environ.get(DATASET_ENV)
    if root is None:
        raise click.ClickException(
            f"no dataset root: pass --dataset or set {DATASET_ENV}")
    return Path(root)


def _find_record(records: list[AnnotationRecord],
                 record_id: str) -> AnnotationRecord:
    for record in records:
        if record.item_id == record_id:
            return record
    raise click.ClickException(f"no record with id {record_id!r}")


def _pose_payload(solution) -> dict:
    pose = solution.pose
    payload = {
        "pose": {"theta": pose.theta, "phi": pose.phi, "psi": pose.psi,
                 "x": pose.x, "y": pose.y, "z": pose.z},
        "focal": solution.focal,
        "error": solution.error,
        "method": solution.method_tag.value,
    }
    if solution.inliers is not None:
        payload["inliers"] = [list(pair) for pair in solution.inliers]
    return payload


@click.group()
def main() -> None:
    """2D-3D alignment and shape-evaluation benchmarks."""


@main.command()
@click.argument("record_id")
@click.option("--dataset", type=click.Path(file_okay=False),
              help=f"Dataset root (default: ${DATASET_ENV}).")
@click.option("--annotations", default="annotations.json", show_default=True,
              help="Annotation file, relative to the dataset root.")
@click.option("--method", type=click.Choice(["plain", "ransac", "subset"]),
              default="plain", show_default=True)
@click.option("--seed", type=int, default=None, help="Solver RNG seed.")
@click.option("--config", "config_path", type=click.Path(exists=True,
              dir_okay=False), default=None, help="JSON config file.")
def align(record_id: str, dataset: str | None, annotations: str,
          method: str, seed: int | None, config_path: str | None) -> None:
    """Solve the camera pose for one annotated record.

    With multiple annotation sets, "plain" solves on the per-keypoint
    consensus; "ransac" and "subset" require exactly 3 sets.
    """
    root = _dataset_root(dataset)
    try:
        records = load_annotations(root / annotations)
        record = _find_record(records, record_id)
        cfg = _build_config(SolverConfig,
                            _load_config_file(config_path).get("solver", {}),
                            rng_seed=seed)
        kp3d = record.keypoints_3d
        size = record.image_size
        sets = list(record.keypoint_annotations)
        if method == "plain":
            kp2d = (sets[0] if len(sets) == 1 else
                    consensus_keypoints(sets, tuple(range(len(sets)))))
            solution = solve(kp3d, kp2d, size, cfg)
        else:
            if len(sets) != 3:
                raise click.ClickException(
                    f"method {method!r} needs 3 annotation sets, "
                    f"record has {len(sets)}")
            triple = record.annotation_triple
            if method == "ransac":
                solution = solve_ransac(kp3d, triple, size, cfg)
            else:
                solution = solve_subset_consensus(kp3d, triple, size, cfg)
    except ShapeAlignError as exc:
        _fail(exc)
        return
    payload = {"record": record_id}
    payload.update(_pose_payload(solution))
    _emit(payload)
    click.echo(f"{record_id}: method={method} focal={solution.focal:.1f} "
               f"error={solution.error:.6g}", err=True)


@main.command("eval-recon")
@click.option("--pred", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Directory of predicted voxel grids (.voxf/.binvox).")
@click.option("--gt", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Directory of ground-truth voxel grids.")
@click.option("--seed", type=int, default=None, help="Sampling seed.")
@click.option("--emd-eps", type=float, default=None,
              help="EMD approximation tolerance.")
@click.option("--config", "config_path", type=click.Path(exists=True,
              dir_okay=False), default=None, help="JSON config file.")
def eval_recon(pred: str, gt: str, seed: int | None, emd_eps: float | None,
               config_path: str | None) -> None:
    """Score predicted voxel grids against ground truths (IoU, CD, EMD)."""
    try:
        cfg = _build_config(MetricConfig,
                            _load_config_file(config_path).get("metric", {}),
                            rng_seed=seed, emd_epsilon=emd_eps)
        report = bench.evaluate_reconstructions(pred, gt, cfg)
    except ShapeAlignError as exc:
        _fail(exc)
        return
    _emit({
        "per_item": [{"item_id": r.item_id, "iou": r.iou, "cd": r.cd,
                      "emd": r.emd} for r in report.per_item],
        "failed": [{"item_id": f.item_id, "reason": f.reason}
                   for f in report.failed],
        "mean_iou": report.mean_iou,
        "mean_cd": report.mean_cd,
        "mean_emd": report.mean_emd,
        "chosen_threshold": report.chosen_threshold,
    })
    click.echo(f"{'item':<24}{'IoU':>8}{'CD':>12}{'EMD':>12}", err=True)
    for r in report.per_item:
        click.echo(f"{r.item_id:<24}{r.iou:>8.4f}{r.cd:>12.6f}"
                   f"{r.emd:>12.6f}", err=True)
    click.echo(f"{'mean':<24}{report.mean_iou:>8.4f}{report.mean_cd:>12.6f}"
               f"{report.mean_emd:>12.6f}  "
               f"(threshold {report.chosen_threshold:.2f})", err=True)
    for f in report.failed:
        click.echo(f"failed {f.item_id}: {f.reason}", err=True)
    if report.failed:
        sys.exit(1)


@main.command()
@click.option("--embeddings", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON array of {item_id, vector, shape_id}.")
@click.option("--k", "ks", default="1,2,4,8,16,32", show_default=True,
              help="Comma-separated K values.")
def retrieve(embeddings: str, ks: str) -> None:
    """Recall@K retrieval over latent embeddings (L2 distance)."""
    try:
        k_list = [int(tok) for tok in ks.split(",") if tok.strip()]
    except ValueError:
        raise click.ClickException(f"bad --k list: {ks!r}")
    with open(embeddings, encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        embs = [bench.Embedding(item_id=e["item_id"],
                                vector=np.asarray(e["vector"], dtype=float),
                                shape_id=e["shape_id"]) for e in raw]
        report = bench.recall_at_k(embs, k_list)
    except (ShapeAlignError, KeyError, TypeError, ValueError) as exc:
        _fail(exc)
        return
    _emit({"recalls": {str(k): v for k, v in report.recalls.items()},
           "n_queries": report.n_queries})
    if report.n_queries == 0:
        click.echo("no valid queries (every shape is unique)", err=True)
    else:
        for k in k_list:
            click.echo(f"R@{k}: {report.recalls[k]:.4f}", err=True)


@main.command("pose-acc")
@click.option("--pred", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON array of [azimuth, elevation] pairs (degrees).")
@click.option("--truth", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON array of [azimuth, elevation] pairs (degrees).")
@click.option("--az-bins", default=24, show_default=True)
@click.option("--el-bins", default=12, show_default=True)
def pose_acc(pred: str, truth: str, az_bins: int, el_bins: int) -> None:
    """Binned azimuth/elevation pose accuracy."""
    def read_pairs(path):
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        return [(float(a), float(e)) for a, e in raw]

    try:
        az_acc, el_acc = bench.pose_accuracy(read_pairs(pred),
                                             read_pairs(truth),
                                             az_bins, el_bins)
    except (ShapeAlignError, TypeError, ValueError) as exc:
        _fail(exc)
        return
    _emit({"azimuth_accuracy": az_acc, "elevation_accuracy": el_acc,
           "az_bins": az_bins, "el_bins": el_bins})
    click.echo(f"azimuth {az_acc:.4f} ({az_bins} bins), "
               f"elevation {el_acc:.4f} ({el_bins} bins)", err=True)


@main.command()
@click.option("--dataset", type=click.Path(exists=True, file_okay=False),
              help=f"Dataset root (default: ${DATASET_ENV}).")
@click.option("--annotations", default="annotations.json", show_default=True,
              help="Annotation file, relative to the dataset root.")
def audit(dataset: str | None, annotations: str) -> None:
    """Render each record's stored pose and score IoU against its mask."""
    root = _dataset_root(dataset)
    try:
        records = load_annotations(root / annotations)
        report = bench.audit_alignment(records, root)
    except ShapeAlignError as exc:
        _fail(exc)
        return
    _emit({
        "per_record": [{"item_id": r.item_id, "category": r.category,
                        "iou": r.iou, "error": r.error}
                       for r in report.per_record],
        "category_means": report.category_means,
        "mean_iou": report.mean_iou,
    })
    for cat, mean in report.category_means.items():
        click.echo(f"{cat:<16}{mean:.4f}", err=True)
    if report.mean_iou is not None:
        click.echo(f"{'overall':<16}{report.mean_iou:.4f}", err=True)
    bad = [r for r in report.per_record if r.error is not None]
    for r in bad:
        click.echo(f"failed {r.item_id}: {r.error}", err=True)
    if bad:
        sys.exit(1)


@main.command()
@click.option("--dataset", type=click.Path(exists=True, file_okay=False),
              help=f"Dataset root (default: ${DATASET_ENV}).")
@click.option("--annotations", default="annotations.json", show_default=True,
              help="Annotation file, relative to the dataset root.")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8008, show_default=True)
@click.option("--workers", default=2, show_default=True,
              help="Solver worker pool bound.")
def serve(dataset: str | None, annotations: str, host: str, port: int,
          workers: int) -> None:
    """Run the annotation HTTP service over a dataset directory."""
    import uvicorn

    from .service import create_app

    root = _dataset_root(dataset)
    app = create_app(root, annotations_file=annotations,
                     worker_bound=workers)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command()
@click.option("--metric-a", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON array of numbers.")
@click.option("--metric-b", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON array of numbers.")
@click.option("--kind", type=click.Choice(["spearman", "pearson"]),
              default="spearman", show_default=True)
def corr(metric_a: str, metric_b: str, kind: str) -> None:
    """Correlation between two per-item metric columns."""
    def read_column(path):
        with open(path, encoding="utf-8") as fh:
            return [float(v) for v in json.load(fh)]

    try:
        fn = bench.spearman if kind == "spearman" else bench.pearson
        value = fn(read_column(metric_a), read_column(metric_b))
    except (ShapeAlignError, TypeError, ValueError) as exc:
        _fail(exc)
        return
    _emit({"kind": kind, "correlation": value})
    click.echo(f"{kind}: {value:.6f}", err=True)


if __name__ == "__main__":
    main()
