"""Annotation-record loading, validation, and mesh parsing.

Records live in a single JSON document: an array of objects with the field
names of ``AnnotationRecord``. Structural problems (missing fields, wrong
types) are hard errors; dataset-quality issues (keypoints projecting
outside the image, unusual keypoint counts) are logged warnings so noisy
real-world data still loads. The formal schema ships in
``docs/annotation.schema.json``.

Meshes are a Wavefront OBJ subset: ``v`` and ``f`` records only, polygon
faces fan-triangulated, negative indices resolved from the end.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import IndexOutOfRange, ParseError, SchemaError
from .geometry import (
    CameraIntrinsics,
    KeypointSet2D,
    KeypointSet3D,
    RigidPose,
    TriangleMesh,
    compose,
    project_points,
)
from .solver import AnnotationTriple

logger = logging.getLogger(__name__)

# Keypoint counts outside this range are unusual enough to warn about.
KEYPOINT_RANGE = (8, 24)
# Soft bound: reprojected keypoints may exceed image bounds by this margin.
REPROJECTION_MARGIN = 0.10


@dataclass(frozen=True)
class AnnotationRecord:
    """One image's alignment annotation.

    ``keypoint_annotations`` holds 1 to 3 independent annotation sets;
    consensus solvers degrade gracefully when fewer than 3 are present.
    ``version`` supports optimistic-concurrency updates by the annotation
    service and starts at 0.
    """

    image_path: str
    mask_path: str
    model_path: str
    category: str
    image_size: tuple[int, int]
    keypoints_3d: KeypointSet3D
    keypoint_annotations: tuple[KeypointSet2D, ...]
    pose: RigidPose | None = None
    focal: float | None = None
    truncated: bool = False
    occluded: bool = False
    version: int = 0

    def __post_init__(self) -> None:
        w, h = self.image_size
        if w < 1 or h < 1:
            raise ValueError(f"image_size must be positive, got {w}x{h}")
        object.__setattr__(self, "image_size", (int(w), int(h)))
        if not 1 <= len(self.keypoint_annotations) <= 3:
            raise ValueError("between 1 and 3 annotation sets required")
        n = len(self.keypoints_3d)
        for ann in self.keypoint_annotations:
            if len(ann) != n:
                raise ValueError(
                    f"annotation has {len(ann)} keypoints, model has {n}")
        if (self.focal is None) != (self.pose is None):
            raise ValueError("pose and focal must be present together")

    @property
    def item_id(self) -> str:
        """Stable identifier: the image filename without extension."""
        return Path(self.image_path).stem

    @property
    def annotation_triple(self) -> AnnotationTriple:
        """The three annotation sets; raises if fewer are present."""
        if len(self.keypoint_annotations) != 3:
            raise ValueError(
                f"record has {len(self.keypoint_annotations)} annotation "
                "sets, need 3")
        return AnnotationTriple(self.keypoint_annotations)


def _warn_soft_invariants(record: AnnotationRecord, index: int) -> None:
    n = len(record.keypoints_3d)
    lo, hi = KEYPOINT_RANGE
    if not lo <= n <= hi:
        logger.warning("record %d (%s): %d keypoints, expected %d..%d",
                       index, record.item_id, n, lo, hi)
    if record.pose is None:
        return
    w, h = record.image_size
    intr = CameraIntrinsics(f=record.focal, w=float(w), h=float(h))
    proj = project_points(compose(intr, record.pose),
                          record.keypoints_3d.points)
    vis = np.zeros(len(record.keypoints_3d), dtype=bool)
    for ann in record.keypoint_annotations:
        vis |= ann.visibility
    mx, my = w * REPROJECTION_MARGIN, h * REPROJECTION_MARGIN
    inside = ((proj[:, 0] >= -mx) & (proj[:, 0] <= w + mx)
              & (proj[:, 1] >= -my) & (proj[:, 1] <= h + my))
    bad = int(np.count_nonzero(vis & ~inside))
    if bad:
        logger.warning(
            "record %d (%s): %d visible keypoints reproject outside the "
            "image bounds (+%d%% margin)", index, record.item_id, bad,
            int(REPROJECTION_MARGIN * 100))


def _require(obj: dict, field_name: str, index: int):
    if field_name not in obj:
        raise SchemaError(f"record {index}: missing field {field_name!r}")
    return obj[field_name]


def _keypoints_2d_from_json(obj: dict, index: int) -> KeypointSet2D:
    pts = _require(obj, "points", index)
    vis = obj.get("visibility")
    try:
        return KeypointSet2D(
            np.asarray(pts, dtype=np.float64),
            None if vis is None else np.asarray(vis, dtype=bool))
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"record {index}: bad annotation: {exc}") from exc


def _record_from_json(obj: dict, index: int) -> AnnotationRecord:
    if not isinstance(obj, dict):
        raise SchemaError(f"record {index}: expected an object")
    pose_obj = obj.get("pose")
    pose = None
    if pose_obj is not None:
        for angle in ("theta", "phi", "psi", "x", "y", "z"):
            if angle not in pose_obj:
                raise SchemaError(
                    f"record {index}: pose missing field {angle!r}")
        pose = RigidPose(**{k: float(pose_obj[k])
                            for k in ("theta", "phi", "psi", "x", "y", "z")})
    focal = obj.get("focal")
    anns = _require(obj, "keypoint_annotations", index)
    if not isinstance(anns, list) or not anns:
        raise SchemaError(
            f"record {index}: keypoint_annotations must be a nonempty array")
    try:
        return AnnotationRecord(
            image_path=str(_require(obj, "image_path", index)),
            mask_path=str(_require(obj, "mask_path", index)),
            model_path=str(_require(obj, "model_path", index)),
            category=str(_require(obj, "category", index)),
            image_size=tuple(_require(obj, "image_size", index)),
            keypoints_3d=KeypointSet3D(np.asarray(
                _require(obj, "keypoints_3d", index), dtype=np.float64)),
            keypoint_annotations=tuple(
                _keypoints_2d_from_json(a, index) for a in anns),
            pose=pose,
            focal=None if focal is None else float(focal),
            truncated=bool(_require(obj, "truncated", index)),
            occluded=bool(_require(obj, "occluded", index)),
            version=int(obj.get("version", 0)),
        )
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"record {index}: {exc}") from exc


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    """Load and validate an annotation document.

    Raises:
        ParseError: the file is not valid JSON or not an array.
        SchemaError: a record violates the schema (message names the
            record index and the offending field).
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise ParseError(f"{path}: top-level value must be an array")
    records = []
    for i, obj in enumerate(doc):
        record = _record_from_json(obj, i)
        _warn_soft_invariants(record, i)
        records.append(record)
    return records


def record_to_json(record: AnnotationRecord) -> dict:
    """JSON-ready dict for one record, matching the on-disk schema."""
    pose = None
    if record.pose is not None:
        pose = {k: getattr(record.pose, k)
                for k in ("theta", "phi", "psi", "x", "y", "z")}
    return {
        "image_path": record.image_path,
        "mask_path": record.mask_path,
        "model_path": record.model_path,
        "category": record.category,
        "image_size": list(record.image_size),
        "keypoints_3d": record.keypoints_3d.points.tolist(),
        "keypoint_annotations": [
            {"points": a.points.tolist(),
             "visibility": a.visibility.tolist()}
            for a in record.keypoint_annotations],
        "pose": pose,
        "focal": record.focal,
        "truncated": record.truncated,
        "occluded": record.occluded,
        "version": record.version,
    }


def save_annotations(path: str | Path,
                     records: Sequence[AnnotationRecord]) -> None:
    """Write an annotation document (stable key order, trailing newline).

    The write is atomic: content goes to a sibling temp file which then
    replaces the target, so readers never observe a partial document.
    """
    path = Path(path)
    doc = [record_to_json(r) for r in records]
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        os.replace(tmp_name, path)
    except BaseException:
        os.unlink(tmp_name)
        raise


def load_mesh(path: str | Path) -> TriangleMesh:
    """Parse a Wavefront OBJ subset into a triangle mesh.

    Supports ``v`` and ``f`` records; faces may use v, v/vt, v/vt/vn, or
    v//vn references, and polygons are fan-triangulated. Indices are
    1-based; negative indices count back from the current vertex list.

    Raises:
        ParseError: malformed record (message carries the line number).
        IndexOutOfRange: face references a nonexistent vertex.
    """
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError(
                        f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(p) for p in parts[1:4]])
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: non-numeric vertex") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError(
                        f"{path}:{lineno}: face needs at least 3 vertices")
                idx = []
                for ref in parts[1:]:
                    field = ref.split("/")[0]
                    try:
                        raw_i = int(field)
                    except ValueError:
                        raise ParseError(
                            f"{path}:{lineno}: bad face reference "
                            f"{ref!r}") from None
                    if raw_i == 0:
                        raise ParseError(
                            f"{path}:{lineno}: OBJ indices are 1-based")
                    i = raw_i - 1 if raw_i > 0 else len(vertices) + raw_i
                    if not 0 <= i < len(vertices):
                        raise IndexOutOfRange(
                            f"{path}:{lineno}: vertex {raw_i} of "
                            f"{len(vertices)}")
                    idx.append(i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
            # Other records (vn, vt, usemtl, o, g, s, mtllib) are ignored.
    if not vertices:
        raise ParseError(f"{path}: no vertices")
    return TriangleMesh(np.asarray(vertices, dtype=np.float64),
                        np.asarray(faces, dtype=np.int64).reshape(-1, 3))


def filter_records(records: Sequence[AnnotationRecord],
                   predicate: Callable[[AnnotationRecord], bool],
                   ) -> list[AnnotationRecord]:
    """Order-preserving filter over records."""
    return [r for r in records if predicate(r)]


def with_pose(record: AnnotationRecord, pose: RigidPose, focal: float,
              bump_version: bool = True) -> AnnotationRecord:
    """Copy of a record with an updated pose (and optionally version)."""
    return replace(record, pose=pose, focal=float(focal),
                   version=record.version + (1 if bump_version else 0))
