"""HTTP facade for interactive annotation: browse records, solve, commit.

The dataset is loaded once at startup and served read-only; keypoint edits
live in per-session state and reach disk only through an explicit commit,
which is an atomic write (temp file + rename) guarded by a per-record
version counter. A commit whose ``expected_version`` is stale gets a 409.

Solver calls are CPU-bound and run on a bounded worker pool. Solver
preconditions surface as 422 with a machine-readable ``{code, message}``
body; unknown records give the same shape with status 404.

Run with ``shapealign serve --dataset ROOT`` or mount ``create_app``.
"""

from __future__ import annotations

import asyncio
import datetime
import json
import os
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Header, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field
from skimage import measure

from .dataset import (
    AnnotationRecord,
    filter_records,
    load_annotations,
    load_mesh,
    record_to_json,
    save_annotations,
)
from .errors import ShapeAlignError
from .geometry import (
    CameraIntrinsics,
    KeypointSet2D,
    RigidPose,
    compose,
    project_points,
)
from .silhouette import render_silhouette
from .solver import (
    AlignmentSolution,
    AnnotationTriple,
    SolverConfig,
    consensus_keypoints,
    solve,
    solve_ransac,
    solve_subset_consensus,
)

DEFAULT_SESSION = "default"


class KeypointSetPayload(BaseModel):
    points: list[tuple[float, float]]
    visibility: list[bool] | None = None

    def to_keypoints(self) -> KeypointSet2D:
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        vis = (None if self.visibility is None
               else np.asarray(self.visibility, dtype=bool))
        return KeypointSet2D(pts, vis)


class SolveRequest(BaseModel):
    method: str = "plain"
    keypoints_2d: list[KeypointSetPayload] | None = None
    config: dict = Field(default_factory=dict)


class CommitRequest(BaseModel):
    expected_version: int
    keypoints_2d: list[KeypointSetPayload] | None = None


def _error_body(code: str, message: str, status: int) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"code": code, "message": message})


def _pose_dict(pose: RigidPose) -> dict:
    return {k: getattr(pose, k)
            for k in ("theta", "phi", "psi", "x", "y", "z")}


def _solution_dict(solution: AlignmentSolution) -> dict:
    out = {
        "pose": _pose_dict(solution.pose),
        "focal": solution.focal,
        "error": solution.error,
        "method": solution.method_tag.value,
    }
    if solution.inliers is not None:
        out["inliers"] = [list(pair) for pair in solution.inliers]
    return out


def _record_payload(record: AnnotationRecord) -> dict:
    payload = record_to_json(record)
    payload["id"] = record.item_id
    payload["image_url"] = f"/files/{record.image_path}"
    payload["mask_url"] = f"/files/{record.mask_path}"
    payload["model_url"] = f"/files/{record.model_path}"
    return payload


def _outline(record: AnnotationRecord, mesh, pose: RigidPose,
             focal: float) -> list[list[list[float]]]:
    """Silhouette boundary polylines in image coordinates, possibly empty."""
    w, h = record.image_size
    try:
        sil = render_silhouette(
            mesh, compose(CameraIntrinsics(f=focal, w=float(w), h=float(h)),
                          pose), w, h)
    except ShapeAlignError:
        return []
    contours = measure.find_contours(sil.bits.astype(np.float64), 0.5)
    return [[[float(c), float(r)] for r, c in contour]
            for contour in contours]


class _State:
    """Mutable server state: records, versions, sessions, commit lock."""

    def __init__(self, dataset_root: Path, annotations_file: str,
                 worker_bound: int) -> None:
        self.root = dataset_root
        self.annotations_path = dataset_root / annotations_file
        self.records: dict[str, AnnotationRecord] = {}
        for record in load_annotations(self.annotations_path):
            self.records[record.item_id] = record
        self.order = list(self.records)
        # session id -> record id -> {"solution", "keypoints"}
        self.sessions: dict[str, dict[str, dict]] = {}
        self.meshes: dict[str, object] = {}
        self.commit_lock = threading.Lock()
        self.executor = ThreadPoolExecutor(max_workers=worker_bound)

    def mesh_for(self, record: AnnotationRecord):
        if record.model_path not in self.meshes:
            self.meshes[record.model_path] = load_mesh(
                self.root / record.model_path)
        return self.meshes[record.model_path]

    def listing(self) -> list[AnnotationRecord]:
        return [self.records[i] for i in self.order]


def create_app(dataset_root: str | Path,
               annotations_file: str = "annotations.json",
               worker_bound: int = 2) -> FastAPI:
    """Build the annotation service around one dataset directory."""
    root = Path(dataset_root)
    state = _State(root, annotations_file, worker_bound)
    app = FastAPI(title="shapealign annotation service")
    app.state.align = state
    app.mount("/files", StaticFiles(directory=root), name="files")

    @app.exception_handler(ShapeAlignError)
    async def _solver_error(request: Request, exc: ShapeAlignError):
        return _error_body(type(exc).__name__, str(exc), 422)

    def _get_record(record_id: str) -> AnnotationRecord | None:
        return state.records.get(record_id)

    @app.get("/records")
    def list_records(category: str | None = None,
                     truncated: bool | None = None,
                     occluded: bool | None = None):
        def keep(r: AnnotationRecord) -> bool:
            return ((category is None or r.category == category)
                    and (truncated is None or r.truncated == truncated)
                    and (occluded is None or r.occluded == occluded))

        return [_record_payload(r)
                for r in filter_records(state.listing(), keep)]

    @app.get("/records/{record_id}")
    def get_record(record_id: str):
        record = _get_record(record_id)
        if record is None:
            return _error_body("UnknownRecord",
                               f"no record with id {record_id!r}", 404)
        return _record_payload(record)

    @app.post("/records/{record_id}/solve")
    async def solve_record(record_id: str, body: SolveRequest,
                           x_session_id: str = Header(DEFAULT_SESSION)):
        record = _get_record(record_id)
        if record is None:
            return _error_body("UnknownRecord",
                               f"no record with id {record_id!r}", 404)
        if body.method not in ("plain", "ransac", "subset"):
            return _error_body("UnknownMethod",
                               f"method must be plain|ransac|subset, "
                               f"got {body.method!r}", 422)
        try:
            config = SolverConfig(**body.config)
        except (TypeError, ValueError) as exc:
            return _error_body("BadConfig", str(exc), 422)
        if body.keypoints_2d is not None:
            try:
                sets = [p.to_keypoints() for p in body.keypoints_2d]
            except (ValueError, TypeError) as exc:
                return _error_body("BadKeypoints", str(exc), 422)
        else:
            sets = list(record.keypoint_annotations)
        if not sets:
            return _error_body("BadKeypoints",
                               "at least one annotation set required", 422)
        for kp in sets:
            if len(kp) != len(record.keypoints_3d):
                return _error_body(
                    "BadKeypoints",
                    f"expected {len(record.keypoints_3d)} keypoints, "
                    f"got {len(kp)}", 422)

        kp3d = record.keypoints_3d
        size = record.image_size

        def run():
            """Reference set = what residuals are measured against: the
            submitted set for plain, the all-annotator consensus otherwise.
            """
            if body.method == "plain":
                reference = (sets[0] if len(sets) == 1 else
                             consensus_keypoints(
                                 sets, tuple(range(len(sets)))))
                return solve(kp3d, reference, size, config), reference
            if len(sets) != 3:
                raise ShapeAlignError(
                    f"method {body.method!r} needs 3 annotation sets, "
                    f"got {len(sets)}")
            triple = AnnotationTriple(tuple(sets))
            reference = consensus_keypoints(sets, (0, 1, 2))
            if body.method == "ransac":
                return solve_ransac(kp3d, triple, size, config), reference
            return (solve_subset_consensus(kp3d, triple, size, config),
                    reference)

        loop = asyncio.get_running_loop()
        solution, reference = await loop.run_in_executor(state.executor, run)

        projected = project_points(
            compose(CameraIntrinsics(f=solution.focal, w=float(size[0]),
                                     h=float(size[1])), solution.pose),
            kp3d.points)
        residuals = [
            float(np.hypot(*(projected[i] - reference.points[i])))
            if reference.visibility[i] else None
            for i in range(len(kp3d))]
        mesh = state.mesh_for(record)
        payload = {
            "solution": _solution_dict(solution),
            "projected": projected.tolist(),
            "residuals": residuals,
            "outline": _outline(record, mesh, solution.pose, solution.focal),
            "record_version": record.version,
        }
        session = state.sessions.setdefault(x_session_id, {})
        session[record_id] = {"solution": solution, "keypoints": sets}
        return payload

    @app.post("/records/{record_id}/commit")
    def commit_record(record_id: str, body: CommitRequest,
                      x_session_id: str = Header(DEFAULT_SESSION)):
        record = _get_record(record_id)
        if record is None:
            return _error_body("UnknownRecord",
                               f"no record with id {record_id!r}", 404)
        session = state.sessions.get(x_session_id, {})
        if record_id not in session:
            return _error_body(
                "NoSolveInSession",
                "commit requires a prior solve for this record", 409)
        solution: AlignmentSolution = session[record_id]["solution"]
        if body.keypoints_2d is not None:
            try:
                edited = tuple(p.to_keypoints() for p in body.keypoints_2d)
            except (ValueError, TypeError) as exc:
                return _error_body("BadKeypoints", str(exc), 422)
        else:
            edited = tuple(session[record_id]["keypoints"])

        with state.commit_lock:
            current = state.records[record_id]
            if body.expected_version != current.version:
                return _error_body(
                    "VersionConflict",
                    f"expected version {body.expected_version}, record is "
                    f"at {current.version}", 409)
            updated = replace(current, pose=solution.pose,
                              focal=solution.focal,
                              keypoint_annotations=edited,
                              version=current.version + 1)
            state.records[record_id] = updated
            save_annotations(state.annotations_path, state.listing())
            stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
            with open(state.root / "audit.log", "a", encoding="utf-8") as fh:
                fh.write(f"{stamp} commit {record_id} "
                         f"v{current.version}->{updated.version} "
                         f"method={solution.method_tag.value} "
                         f"error={solution.error:.6g}\n")
        return {"record": _record_payload(updated)}

    return app
