"""Domain types and projection math for 2D-3D keypoint alignment.

Conventions (single source of truth for the whole package):

Rotation
    R = Rz(psi) @ Ry(theta) @ Rx(phi), all right-handed matrices.
    theta is the azimuth (about Y), phi the elevation (about X), psi the
    in-plane roll (about Z). Canonical ranges: theta, psi in [-pi, pi),
    phi in [-pi/2, pi/2]; ``pose_from_rt`` always returns that branch.

Camera
    Central projection: zero skew, square pixels, principal point at the
    image center, so the intrinsics reduce to one focal length f (pixels):
        K = [[f, 0, w/2], [0, f, h/2], [0, 0, 1]]
    A world point X maps to pixels via P = K [R|T]:
        (u', v', s) = P (X, Y, Z, 1)^T,  (u, v) = (u'/s, v'/s).

Pixels
    Origin at the top-left corner, u rightward, v downward, pixel centers
    at integer coordinates.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateMesh,
    DegenerateProjection,
    IndexOutOfRange,
    LengthMismatch,
)

# Homogeneous scales below this magnitude count as "at the camera plane".
DEGENERATE_EPS = 1e-9


def _as_float_array(values, shape_tail: tuple[int, ...], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1 and shape_tail and arr.size == 0:
        arr = arr.reshape((0,) + shape_tail)
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise ValueError(f"{name} must have shape (n, {', '.join(map(str, shape_tail))})")
    return arr


@dataclass(frozen=True)
class KeypointSet2D:
    """Ordered 2D keypoints in pixels with per-keypoint visibility."""

    points: np.ndarray                     # (n, 2) float64
    visibility: np.ndarray = field(default=None)  # (n,) bool

    def __post_init__(self):
        pts = _as_float_array(self.points, (2,), "points")
        if len(pts) < 1:
            raise ValueError("at least one keypoint required")
        if not np.all(np.isfinite(pts)):
            raise ValueError("keypoint coordinates must be finite")
        vis = self.visibility
        if vis is None:
            vis = np.ones(len(pts), dtype=bool)
        else:
            vis = np.asarray(vis, dtype=bool)
            if vis.shape != (len(pts),):
                raise LengthMismatch(
                    f"visibility has length {vis.shape}, expected ({len(pts)},)")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visibility", vis)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class KeypointSet3D:
    """Ordered 3D keypoints in model units; index-paired with a KeypointSet2D."""

    points: np.ndarray  # (n, 3) float64

    def __post_init__(self):
        pts = _as_float_array(self.points, (3,), "points")
        if len(pts) < 1:
            raise ValueError("at least one keypoint required")
        if not np.all(np.isfinite(pts)):
            raise ValueError("keypoint coordinates must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Central-projection intrinsics: one focal length plus the image size."""

    f: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.f > 0 and self.w > 0 and self.h > 0):
            raise ValueError("focal length and image size must be positive")

    @property
    def matrix(self) -> np.ndarray:
        """3x3 intrinsic matrix K with the principal point at (w/2, h/2)."""
        return np.array([
            [self.f, 0.0, self.w / 2.0],
            [0.0, self.f, self.h / 2.0],
            [0.0, 0.0, 1.0],
        ])


@dataclass(frozen=True)
class RigidPose:
    """Object pose: Euler angles (radians) and translation (model units)."""

    theta: float
    phi: float
    psi: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("theta", "phi", "psi", "x", "y", "z"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"pose parameter {name} must be finite")

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def as_vector(self) -> np.ndarray:
        """(theta, phi, psi, x, y, z) as a float64 vector."""
        return np.array([self.theta, self.phi, self.psi, self.x, self.y, self.z])

    @staticmethod
    def from_vector(v: Sequence[float]) -> "RigidPose":
        t, p, s, x, y, z = (float(c) for c in v)
        return RigidPose(t, p, s, x, y, z)


@dataclass(frozen=True)
class ProjectionMatrix:
    """3x4 projection matrix; equals K[R|T] when built via ``compose``."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (3, 4):
            raise ValueError("projection matrix must be 3x4")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh."""

    vertices: np.ndarray  # (n, 3) float64
    faces: np.ndarray     # (m, 3) int64

    def __post_init__(self):
        verts = _as_float_array(self.vertices, (3,), "vertices")
        faces = np.asarray(self.faces, dtype=np.int64)
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError("faces must have shape (m, 3)")
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(verts):
                raise IndexOutOfRange("face index out of range")
            degenerate = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if degenerate.any():
                raise DegenerateMesh("degenerate face (repeated vertex index)")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def n_faces(self) -> int:
        return len(self.faces)


def rotation_matrix(pose: RigidPose) -> np.ndarray:
    """3x3 rotation R = Rz(psi) @ Ry(theta) @ Rx(phi)."""
    ct, st = np.cos(pose.theta), np.sin(pose.theta)
    cp, sp = np.cos(pose.phi), np.sin(pose.phi)
    cs, ss = np.cos(pose.psi), np.sin(pose.psi)
    ry = np.array([[ct, 0.0, st], [0.0, 1.0, 0.0], [-st, 0.0, ct]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]])
    rz = np.array([[cs, -ss, 0.0], [ss, cs, 0.0], [0.0, 0.0, 1.0]])
    return rz @ ry @ rx


def pose_from_rt(R: np.ndarray, T: Sequence[float]) -> RigidPose:
    """Recover the canonical Euler-angle pose from a rotation matrix.

    Inverts rotation_matrix: picks the branch with phi in [-pi/2, pi/2]
    (so theta carries the full azimuth range). At gimbal lock
    (cos(theta) = 0) phi is set to 0 and psi absorbs the remaining spin.
    """
    R = np.asarray(R, dtype=np.float64)
    tx, ty, tz = (float(c) for c in np.asarray(T).reshape(3))
    c = np.hypot(R[2, 1], R[2, 2])
    if c < 1e-12:
        # theta = +/- pi/2; only psi -/+ phi is determined. Take phi = 0.
        theta = np.pi / 2 if -R[2, 0] > 0 else -np.pi / 2
        phi = 0.0
        psi = np.arctan2(-R[0, 1], R[1, 1])
    else:
        # Choose the sign of cos(theta) that puts phi in [-pi/2, pi/2].
        s = 1.0 if R[2, 2] >= 0 else -1.0
        theta = np.arctan2(-R[2, 0], s * c)
        phi = np.arctan2(s * R[2, 1], s * R[2, 2])
        psi = np.arctan2(s * R[1, 0], s * R[0, 0])
    # Map the half-open boundaries: theta, psi in [-pi, pi).
    if theta >= np.pi:
        theta -= 2 * np.pi
    if psi >= np.pi:
        psi -= 2 * np.pi
    return RigidPose(float(theta), float(phi), float(psi), tx, ty, tz)


def compose(intrinsics: CameraIntrinsics, pose: RigidPose) -> ProjectionMatrix:
    """P = K [R|T]."""
    rt = np.empty((3, 4))
    rt[:, :3] = rotation_matrix(pose)
    rt[:, 3] = pose.translation
    return ProjectionMatrix(intrinsics.matrix @ rt)


def project(P: ProjectionMatrix, point: Sequence[float]) -> tuple[float, float]:
    """Project one 3D point to pixel coordinates.

    Raises:
        DegenerateProjection: if |homogeneous scale| < 1e-9.
    """
    xyz = np.asarray(point, dtype=np.float64).reshape(3)
    uvs = P.matrix[:, :3] @ xyz + P.matrix[:, 3]
    s = uvs[2]
    if abs(s) < DEGENERATE_EPS:
        raise DegenerateProjection(f"homogeneous scale {s:.3e} below 1e-9")
    return float(uvs[0] / s), float(uvs[1] / s)


def project_points(P: ProjectionMatrix, points: np.ndarray) -> np.ndarray:
    """Project (n, 3) points to (n, 2) pixels; raises on any degenerate point."""
    pts = np.asarray(points, dtype=np.float64)
    uvs = pts @ P.matrix[:, :3].T + P.matrix[:, 3]
    s = uvs[:, 2]
    if np.any(np.abs(s) < DEGENERATE_EPS):
        raise DegenerateProjection("point at or behind the optical center plane")
    return uvs[:, :2] / s[:, None]


def projection_depths(P: ProjectionMatrix, points: np.ndarray) -> np.ndarray:
    """Homogeneous scales (camera-plane depths for K[R|T]) of (n, 3) points."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ P.matrix[2, :3] + P.matrix[2, 3]


def reprojection_error(
    P: ProjectionMatrix, kp3d: KeypointSet3D, kp2d: KeypointSet2D
) -> float:
    """Sum of squared pixel distances over the visible keypoints.

    Invisible keypoints are skipped entirely; if none are visible the sum
    is 0 (the caller should treat such a solve as unconstrained).
    """
    if len(kp3d) != len(kp2d):
        raise LengthMismatch(f"{len(kp3d)} 3D keypoints vs {len(kp2d)} 2D keypoints")
    vis = kp2d.visibility
    if not vis.any():
        return 0.0
    projected = project_points(P, kp3d.points[vis])
    diff = projected - kp2d.points[vis]
    return float(np.sum(diff * diff))


def rotation_geodesic_deg(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle (degrees) between two rotation matrices."""
    tr = np.trace(np.asarray(Ra).T @ np.asarray(Rb))
    cos_angle = np.clip((tr - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_angle)))


def mesh_edge_uses(mesh: TriangleMesh) -> Counter:
    """Count how many faces use each undirected edge."""
    uses: Counter = Counter()
    for a, b, c in mesh.faces:
        for e in ((a, b), (b, c), (c, a)):
            uses[(min(e), max(e))] += 1
    return uses


def mesh_is_watertight(mesh: TriangleMesh) -> bool:
    """True when every edge is shared by exactly two faces."""
    uses = mesh_edge_uses(mesh)
    return bool(uses) and all(n == 2 for n in uses.values())


def mesh_euler_characteristic(mesh: TriangleMesh) -> int:
    """V - E + F with E counted as distinct undirected edges."""
    referenced = np.unique(mesh.faces)
    return int(len(referenced) - len(mesh_edge_uses(mesh)) + len(mesh.faces))
