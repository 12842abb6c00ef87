"""Evaluation harnesses: reconstruction metrics, retrieval, pose accuracy.

``evaluate_reconstructions`` pairs prediction and ground-truth voxel files
by filename stem, runs the shared IoU threshold search, and computes the
cloud metrics per pair. Each pair's surface sampling uses a seed derived
from (config seed, item id), so a prediction identical to its ground truth
compares against an identically sampled cloud; items remain independent of
each other. Failed items are excluded from aggregates but always listed.

Retrieval recall, binned pose accuracy, and the two correlation statistics
follow the conventions documented on each function.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    LengthMismatch,
    MissingPair,
    OutOfRangeAngle,
    ShapeAlignError,
    ZeroVariance,
)
from .dataset import AnnotationRecord, load_mesh
from .geometry import CameraIntrinsics, compose
from .pointcloud import chamfer, derive_seed, emd, voxel_to_cloud
from .silhouette import mask_iou, read_pgm, render_silhouette
from .voxel import (
    GT_THRESHOLD,
    MetricConfig,
    VoxelGrid,
    best_threshold,
    prepare_iou,
)
from .voxio import read_binvox, read_voxf

_GRID_SUFFIXES = (".voxf", ".binvox")


@dataclass(frozen=True)
class ItemResult:
    """Metrics for one (prediction, ground truth) pair."""

    item_id: str
    iou: float
    cd: float
    emd: float


@dataclass(frozen=True)
class FailedItem:
    """An item excluded from aggregates, with the reason."""

    item_id: str
    reason: str


@dataclass(frozen=True)
class EvalReport:
    """Per-item metrics plus their aggregate means."""

    per_item: tuple[ItemResult, ...]
    failed: tuple[FailedItem, ...]
    mean_iou: float
    mean_cd: float
    mean_emd: float
    chosen_threshold: float


@dataclass(frozen=True)
class Embedding:
    """A test-set item's latent vector and its ground-truth shape identity."""

    item_id: str
    vector: np.ndarray
    shape_id: str

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        if vec.size == 0 or not np.all(np.isfinite(vec)):
            raise ValueError("vector must be non-empty and finite")
        object.__setattr__(self, "vector", vec)


@dataclass(frozen=True)
class RecallReport:
    """Recall@K per K; ``n_queries`` = 0 flags that no query was valid."""

    recalls: dict[int, float]
    n_queries: int


@dataclass(frozen=True)
class AuditRecordResult:
    """Silhouette-vs-mask IoU for one record, or the failure reason."""

    item_id: str
    category: str
    iou: float | None
    error: str | None = None


@dataclass(frozen=True)
class AuditReport:
    """Per-record mask IoUs with per-category and overall means."""

    per_record: tuple[AuditRecordResult, ...]
    category_means: dict[str, float]
    mean_iou: float | None


def _read_grid(path: Path) -> VoxelGrid:
    if path.suffix == ".binvox":
        return read_binvox(path)
    return read_voxf(path)


def _grid_files(directory: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.iterdir())
            if p.suffix in _GRID_SUFFIXES}


def evaluate_reconstructions(pred_dir: str | Path, gt_dir: str | Path,
                             config: MetricConfig) -> EvalReport:
    """Score predicted voxel grids against ground truths.

    Pairs files by stem across the two directories (``.voxf`` native or
    ``.binvox``). IoU uses the preprocessing protocol plus the shared
    best-threshold sweep; CD and EMD run on sampled, normalized clouds.

    Raises:
        MissingPair: a stem present on one side only, or no files at all.
        EmptyInput: every item failed preprocessing.
    """
    preds = _grid_files(Path(pred_dir))
    gts = _grid_files(Path(gt_dir))
    if not preds:
        raise MissingPair(f"no voxel files in {pred_dir}")
    only_pred = sorted(set(preds) - set(gts))
    only_gt = sorted(set(gts) - set(preds))
    if only_pred or only_gt:
        raise MissingPair(
            f"unmatched items: predictions only {only_pred}, "
            f"ground truth only {only_gt}")

    failed: list[FailedItem] = []
    prepared: list[tuple[str, VoxelGrid, VoxelGrid]] = []
    for item_id in sorted(preds):
        try:
            pred = prepare_iou(_read_grid(preds[item_id]), config)
            gt = prepare_iou(_read_grid(gts[item_id]), config)
        except ShapeAlignError as exc:
            failed.append(FailedItem(item_id, f"{type(exc).__name__}: {exc}"))
            continue
        prepared.append((item_id, pred, gt))
    if not prepared:
        raise EmptyInput("every item failed IoU preprocessing")

    threshold, _ = best_threshold([(p, g) for _, p, g in prepared], config)

    results: list[ItemResult] = []
    for item_id, pred, gt in prepared:
        pred_bits = pred.values >= threshold
        gt_bits = gt.values >= GT_THRESHOLD
        union = int(np.count_nonzero(pred_bits | gt_bits))
        item_iou = (int(np.count_nonzero(pred_bits & gt_bits)) / union
                    if union else 0.0)
        item_cfg = replace(config,
                           rng_seed=derive_seed(config.rng_seed, item_id))
        try:
            cloud_pred = voxel_to_cloud(_read_grid(preds[item_id]), item_cfg)
            cloud_gt = voxel_to_cloud(_read_grid(gts[item_id]), item_cfg)
            cd = chamfer(cloud_pred, cloud_gt)
            ed = emd(cloud_pred, cloud_gt, config.emd_epsilon)
        except ShapeAlignError as exc:
            failed.append(FailedItem(item_id, f"{type(exc).__name__}: {exc}"))
            continue
        results.append(ItemResult(item_id=item_id, iou=item_iou,
                                  cd=cd, emd=ed))
    if not results:
        raise EmptyInput("every item failed metric computation")

    return EvalReport(
        per_item=tuple(results),
        failed=tuple(failed),
        mean_iou=float(np.mean([r.iou for r in results])),
        mean_cd=float(np.mean([r.cd for r in results])),
        mean_emd=float(np.mean([r.emd for r in results])),
        chosen_threshold=threshold,
    )


def recall_at_k(embeddings: list[Embedding], ks: list[int]) -> RecallReport:
    """Retrieval recall: does any of the K nearest neighbors share a shape?

    Queries whose shape has no other instance in the set are excluded. The
    neighbor metric is L2 with the query itself removed; recall is the
    fraction of queries with at least one same-shape item among the K
    nearest. With no valid queries the report is empty and flagged by
    ``n_queries`` = 0.

    Raises:
        DimensionMismatch: embeddings of differing dimension.
        EmptyInput: fewer than 2 embeddings.
    """
    if len(embeddings) < 2:
        raise EmptyInput("need at least 2 embeddings")
    dim = embeddings[0].vector.size
    for e in embeddings:
        if e.vector.size != dim:
            raise DimensionMismatch(
                f"{e.item_id}: dimension {e.vector.size}, expected {dim}")
    vectors = np.stack([e.vector for e in embeddings])
    shapes = [e.shape_id for e in embeddings]
    counts: dict[str, int] = {}
    for s in shapes:
        counts[s] = counts.get(s, 0) + 1
    queries = [i for i, s in enumerate(shapes) if counts[s] >= 2]
    if not queries:
        return RecallReport(recalls={}, n_queries=0)

    dists = np.linalg.norm(vectors[:, None, :] - vectors[None, :, :], axis=2)
    np.fill_diagonal(dists, np.inf)
    # Stable ordering so equal distances break ties by index.
    neighbor_order = np.argsort(dists, axis=1, kind="stable")

    recalls: dict[int, float] = {}
    for k in ks:
        if k < 1:
            raise ValueError(f"K must be positive, got {k}")
        hits = 0
        for q in queries:
            top = neighbor_order[q, :k]
            if any(shapes[j] == shapes[q] for j in top):
                hits += 1
        recalls[int(k)] = hits / len(queries)
    return RecallReport(recalls=recalls, n_queries=len(queries))


def pose_accuracy(predicted: list[tuple[float, float]],
                  truth: list[tuple[float, float]],
                  n_az_bins: int, n_el_bins: int) -> tuple[float, float]:
    """Fraction of poses whose azimuth/elevation land in the true bin.

    Azimuth bins are half-open intervals of 360/n_az degrees starting at 0;
    elevation bins cover [-90, 90] in 180/n_el steps, with exactly +90
    assigned to the last bin (the only closed edge).

    Raises:
        LengthMismatch: differing list lengths.
        OutOfRangeAngle: azimuth outside [0, 360) or elevation outside
            [-90, 90].
    """
    if len(predicted) != len(truth):
        raise LengthMismatch(f"{len(predicted)} vs {len(truth)} poses")
    if not predicted:
        raise EmptyInput("need at least one pose pair")
    if n_az_bins < 1 or n_el_bins < 1:
        raise ValueError("bin counts must be positive")

    def bins(pairs):
        az_idx, el_idx = [], []
        for az, el in pairs:
            if not 0.0 <= az < 360.0:
                raise OutOfRangeAngle(f"azimuth {az} outside [0, 360)")
            if not -90.0 <= el <= 90.0:
                raise OutOfRangeAngle(f"elevation {el} outside [-90, 90]")
            az_idx.append(int(az // (360.0 / n_az_bins)))
            el_idx.append(min(int((el + 90.0) // (180.0 / n_el_bins)),
                              n_el_bins - 1))
        return np.array(az_idx), np.array(el_idx)

    paz, pel = bins(predicted)
    taz, tel = bins(truth)
    return (float(np.mean(paz == taz)), float(np.mean(pel == tel)))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    base = np.arange(1.0, len(x) + 1.0)
    sorted_x = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = base[i:j + 1].mean()
        i = j + 1
    return ranks


def pearson(a, b) -> float:
    """Sample Pearson correlation.

    Raises:
        LengthMismatch: differing lengths.
        ZeroVariance: a constant input.
    """
    x = np.asarray(a, dtype=np.float64).reshape(-1)
    y = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise LengthMismatch(f"{x.size} vs {y.size} values")
    if x.size < 2:
        raise EmptyInput("need at least 2 values")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(np.sqrt(xc @ xc))
    sy = float(np.sqrt(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("correlation undefined for constant input")
    return float((xc @ yc) / (sx * sy))


def spearman(a, b) -> float:
    """Rank correlation: Pearson on average ranks (ties share their mean).

    Raises:
        LengthMismatch, ZeroVariance: as for pearson.
    """
    x = np.asarray(a, dtype=np.float64).reshape(-1)
    y = np.asarray(b, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise LengthMismatch(f"{x.size} vs {y.size} values")
    return pearson(_average_ranks(x), _average_ranks(y))


def audit_alignment(records: list[AnnotationRecord],
                    dataset_root: str | Path) -> AuditReport:
    """Score each record's stored pose by silhouette-vs-mask IoU.

    Records missing a pose are reported as failures; any per-record error
    is recorded and the run continues.
    """
    root = Path(dataset_root)
    outcomes: list[AuditRecordResult] = []
    for record in records:
        if record.pose is None:
            outcomes.append(AuditRecordResult(
                item_id=record.item_id, category=record.category,
                iou=None, error="no stored pose"))
            continue
        try:
            mesh = load_mesh(root / record.model_path)
            mask = read_pgm(root / record.mask_path)
            w, h = record.image_size
            intr = CameraIntrinsics(f=record.focal, w=float(w), h=float(h))
            sil = render_silhouette(mesh, compose(intr, record.pose), w, h)
            value = mask_iou(sil, mask)
        except (ShapeAlignError, OSError) as exc:
            outcomes.append(AuditRecordResult(
                item_id=record.item_id, category=record.category,
                iou=None, error=f"{type(exc).__name__}: {exc}"))
            continue
        outcomes.append(AuditRecordResult(
            item_id=record.item_id, category=record.category, iou=value))

    by_cat: dict[str, list[float]] = {}
    for out in outcomes:
        if out.iou is not None:
            by_cat.setdefault(out.category, []).append(out.iou)
    category_means = {c: float(np.mean(v)) for c, v in sorted(by_cat.items())}
    all_ious = [out.iou for out in outcomes if out.iou is not None]
    return AuditReport(
        per_record=tuple(outcomes),
        category_means=category_means,
        mean_iou=float(np.mean(all_ious)) if all_ious else None,
    )
