"""Camera-pose and focal-length estimation from 2D-3D keypoint pairs.

The full solve enumerates focal lengths, initializes each with the control-
point PnP solver, and refines the best candidate with damped Gauss-Newton
(Levenberg-Marquardt) over the 7 parameters (theta, phi, psi, x, y, z, f)
from many randomly perturbed starts. Robust variants handle disagreeing
annotators: RANSAC over pooled (keypoint, annotator) samples, and consensus
solves over every nonempty annotator subset scored by per-subset medians.

All entry points are deterministic for a fixed ``SolverConfig.rng_seed``;
ties resolve by (error, focal, parameter vector) so evaluation order never
changes the result.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .epnp import epnp
from .errors import (
    DegenerateConfiguration,
    NoConsensus,
    NoSolution,
    ShapeAlignError,
    TooFewPoints,
)
from .geometry import (
    CameraIntrinsics,
    KeypointSet2D,
    KeypointSet3D,
    RigidPose,
    compose,
    pose_from_rt,
    project_points,
    reprojection_error,
    rotation_matrix,
)

logger = logging.getLogger(__name__)

_TINY = 1e-300


class MethodTag(enum.Enum):
    """Which solving strategy produced an AlignmentSolution."""

    PLAIN = "plain"
    RANSAC = "ransac"
    SUBSET_CONSENSUS = "subset_consensus"


@dataclass(frozen=True)
class SolverConfig:
    """Tunable parameters for the sweep, refinement, and robust variants.

    Attributes:
        focal_min: lowest focal length (pixels) in the enumeration.
        focal_max: highest focal length in the enumeration.
        focal_step: enumeration step in pixels.
        n_restarts: number of randomly perturbed refinement starts.
        lma_max_iter: iteration cap per refinement start.
        lma_tol: relative cost-improvement threshold that stops refinement.
        disturbance_sigmas: optional 7 per-parameter Gaussian sigmas for the
            restarts; None derives them from the initial solution (5 degrees
            per rotation angle, 5% of the translation norm per axis, 5% of
            the focal length).
        ransac_iters: number of minimal-sample RANSAC rounds.
        ransac_inlier_px: inlier threshold in pixels; None uses
            0.05 * max(image width, image height).
        rng_seed: seed for every stochastic choice made by the solvers.
    """

    focal_min: float = 300.0
    focal_max: float = 2000.0
    focal_step: float = 10.0
    n_restarts: int = 50
    lma_max_iter: int = 200
    lma_tol: float = 1e-10
    disturbance_sigmas: tuple[float, ...] | None = None
    ransac_iters: int = 200
    ransac_inlier_px: float | None = None
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not self.focal_min <= self.focal_max:
            raise ValueError("focal_min must not exceed focal_max")
        if self.focal_step <= 0:
            raise ValueError("focal_step must be positive")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be at least 1")
        if self.disturbance_sigmas is not None and len(self.disturbance_sigmas) != 7:
            raise ValueError("disturbance_sigmas needs exactly 7 entries")


@dataclass(frozen=True)
class AnnotationTriple:
    """Three independent 2D annotations of the same keypoint set."""

    annotations: tuple[KeypointSet2D, KeypointSet2D, KeypointSet2D]

    def __post_init__(self) -> None:
        if len(self.annotations) != 3:
            raise ValueError("exactly three annotations required")
        n = len(self.annotations[0])
        if any(len(a) != n for a in self.annotations):
            raise ValueError("annotations must have identical keypoint counts")

    def __len__(self) -> int:
        return len(self.annotations[0])


@dataclass(frozen=True)
class AlignmentSolution:
    """Solver output: pose, focal length, and the achieved reprojection error.

    ``error`` is the sum of squared pixel distances over the keypoints the
    solution was fit to (the inlier set for RANSAC, the winning subset's
    consensus for subset solves). ``inliers`` lists (keypoint, annotator)
    pairs and is populated by RANSAC only.
    """

    pose: RigidPose
    focal: float
    error: float
    method_tag: MethodTag
    inliers: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self) -> None:
        if not np.isfinite(self.focal) or self.focal <= 0:
            raise ValueError(f"focal must be positive, got {self.focal}")
        if not np.isfinite(self.error) or self.error < 0:
            raise ValueError(f"error must be nonnegative, got {self.error}")


def focal_values(config: SolverConfig) -> np.ndarray:
    """Enumerated focal lengths, inclusive of both endpoints."""
    count = int(np.floor(
        (config.focal_max - config.focal_min) / config.focal_step + 1e-9)) + 1
    return config.focal_min + config.focal_step * np.arange(count)


def _check_solvable(kp3d: KeypointSet3D, kp2d: KeypointSet2D) -> None:
    if len(kp3d) != len(kp2d):
        raise TooFewPoints(
            f"{len(kp3d)} 3D keypoints vs {len(kp2d)} 2D keypoints")
    vis = kp2d.visibility
    if int(vis.sum()) < 4:
        raise TooFewPoints(f"{int(vis.sum())} visible keypoints, need >= 4")
    pw = kp3d.points[vis]
    svals = np.linalg.svd(pw - pw.mean(axis=0), compute_uv=False)
    if svals[1] <= 1e-8 * max(svals[0], _TINY):
        raise DegenerateConfiguration("visible 3D keypoints are collinear")


def solve_epnp_focal_sweep(kp3d: KeypointSet3D, kp2d: KeypointSet2D,
                           image_size: tuple[float, float],
                           config: SolverConfig) -> AlignmentSolution:
    """Run the PnP solver at every enumerated focal and keep the best.

    Args:
        kp3d: model-frame keypoints.
        kp2d: pixel annotations, index-paired with kp3d.
        image_size: (width, height) in pixels, fixing the principal point.
        config: sweep range and step.

    Returns:
        The minimum-reprojection-error solution over the sweep; ties go to
        the lowest focal length.

    Raises:
        TooFewPoints, DegenerateConfiguration: unsolvable correspondences.
        NoSolution: every focal length failed numerically.
    """
    _check_solvable(kp3d, kp2d)
    w, h = image_size
    best: tuple[float, float, RigidPose] | None = None
    for f in focal_values(config):
        intr = CameraIntrinsics(f=float(f), w=float(w), h=float(h))
        try:
            pose = epnp(kp3d, kp2d, intr)
            err = reprojection_error(compose(intr, pose), kp3d, kp2d)
        except ShapeAlignError:
            continue
        if best is None or (err, f) < (best[0], best[1]):
            best = (err, float(f), pose)
    if best is None:
        raise NoSolution("every focal length in the sweep failed")
    return AlignmentSolution(pose=best[2], focal=best[1], error=best[0],
                             method_tag=MethodTag.PLAIN)


def _rotation_batch(theta: np.ndarray, phi: np.ndarray,
                    psi: np.ndarray) -> np.ndarray:
    """Stack of rotation matrices Rz(psi) @ Ry(theta) @ Rx(phi)."""
    b = len(theta)
    rx = np.zeros((b, 3, 3))
    ry = np.zeros((b, 3, 3))
    rz = np.zeros((b, 3, 3))
    cp, sp = np.cos(phi), np.sin(phi)
    rx[:, 0, 0] = 1.0
    rx[:, 1, 1], rx[:, 1, 2] = cp, -sp
    rx[:, 2, 1], rx[:, 2, 2] = sp, cp
    ct, st = np.cos(theta), np.sin(theta)
    ry[:, 0, 0], ry[:, 0, 2] = ct, st
    ry[:, 1, 1] = 1.0
    ry[:, 2, 0], ry[:, 2, 2] = -st, ct
    cs, ss = np.cos(psi), np.sin(psi)
    rz[:, 0, 0], rz[:, 0, 1] = cs, -ss
    rz[:, 1, 0], rz[:, 1, 1] = ss, cs
    rz[:, 2, 2] = 1.0
    return rz @ ry @ rx


def _pose_residuals(params: np.ndarray, pts: np.ndarray, uv: np.ndarray,
                    w: float, h: float) -> np.ndarray:
    """Reprojection residuals for a (B, 7) parameter batch, as (B, 2m).

    Rows whose pose puts any keypoint at near-zero depth are set to +inf so
    the optimizer rejects the step.
    """
    rot = _rotation_batch(params[:, 0], params[:, 1], params[:, 2])
    cam = np.einsum("bij,mj->bmi", rot, pts) + params[:, None, 3:6]
    z = cam[..., 2]
    f = params[:, 6:7]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f * cam[..., 0] / z + w / 2.0
        v = f * cam[..., 1] / z + h / 2.0
    res = np.concatenate([u - uv[:, 0], v - uv[:, 1]], axis=1)
    res[np.abs(z).min(axis=1) < 1e-9] = np.inf
    res[params[:, 6] <= 0.0] = np.inf          # focal must stay positive
    return res


def _lma_single(p0: np.ndarray, pts: np.ndarray, uv: np.ndarray,
                w: float, h: float, max_iter: int,
                tol: float) -> tuple[np.ndarray, float]:
    """Damped Gauss-Newton from one start; returns (params, final cost)."""
    p = p0.astype(float).copy()
    r = _pose_residuals(p[None], pts, uv, w, h)[0]
    if not np.all(np.isfinite(r)):
        return p, np.inf
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(max_iter):
        if cost == 0.0:
            break
        steps = 1e-6 * np.maximum(np.abs(p), 1.0)
        batch = np.repeat(p[None], 14, axis=0)
        for i in range(7):
            batch[2 * i, i] += steps[i]
            batch[2 * i + 1, i] -= steps[i]
        rb = _pose_residuals(batch, pts, uv, w, h)
        if not np.all(np.isfinite(rb)):
            break
        jac = ((rb[0::2] - rb[1::2]) / (2.0 * steps)[:, None]).T  # (2m, 7)
        grad = jac.T @ r
        jtj = jac.T @ jac
        damp = np.maximum(np.diag(jtj), 1e-12)
        accepted = False
        while lam <= 1e12:
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(damp), grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = p - delta
            rc = _pose_residuals(cand[None], pts, uv, w, h)[0]
            cand_cost = float(rc @ rc) if np.all(np.isfinite(rc)) else np.inf
            if cand_cost < cost:
                improvement = cost - cand_cost
                p, r, cost = cand, rc, cand_cost
                lam = max(lam * 0.1, 1e-15)
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        if improvement <= tol * max(cost + improvement, _TINY):
            break
    return p, cost


def _default_sigmas(p0: np.ndarray) -> np.ndarray:
    rot = np.deg2rad(5.0)
    trans = 0.05 * max(float(np.linalg.norm(p0[3:6])), 1e-6)
    return np.array([rot, rot, rot, trans, trans, trans, 0.05 * p0[6]])


def refine_lma(initial: AlignmentSolution, kp3d: KeypointSet3D,
               kp2d: KeypointSet2D, image_size: tuple[float, float],
               config: SolverConfig) -> AlignmentSolution:
    """Refine a solution over (theta, phi, psi, x, y, z, f) with restarts.

    Runs damped Gauss-Newton from the unperturbed initial solution plus
    ``config.n_restarts`` Gaussian-perturbed copies and returns the start
    that reaches the lowest reprojection error. The result never has higher
    error than the initial solution.

    Raises:
        NoSolution: every start diverged.
    """
    w, h = image_size
    vis = kp2d.visibility
    if int(vis.sum()) == 0:
        return initial
    pts = kp3d.points[vis]
    uv = kp2d.points[vis]
    p0 = np.concatenate([initial.pose.as_vector(), [initial.focal]])

    if config.disturbance_sigmas is not None:
        sigmas = np.asarray(config.disturbance_sigmas, dtype=float)
    else:
        sigmas = _default_sigmas(p0)
    rng = np.random.default_rng(config.rng_seed)
    starts = [p0]
    for _ in range(config.n_restarts):
        starts.append(p0 + rng.normal(0.0, 1.0, 7) * sigmas)

    best_key: tuple | None = None
    best_p: np.ndarray | None = None
    for start in starts:
        p, cost = _lma_single(start, pts, uv, w, h,
                              config.lma_max_iter, config.lma_tol)
        if not np.isfinite(cost):
            continue
        key = (cost, p[6], tuple(p))
        if best_key is None or key < best_key:
            best_key, best_p = key, p
    if best_p is None:
        raise NoSolution("all refinement starts diverged")

    raw = RigidPose(theta=float(best_p[0]), phi=float(best_p[1]),
                    psi=float(best_p[2]), x=float(best_p[3]),
                    y=float(best_p[4]), z=float(best_p[5]))
    pose = pose_from_rt(rotation_matrix(raw), raw.translation)
    focal = float(best_p[6])
    intr = CameraIntrinsics(f=focal, w=float(w), h=float(h))
    error = reprojection_error(compose(intr, pose), kp3d, kp2d)
    return AlignmentSolution(pose=pose, focal=focal, error=error,
                             method_tag=initial.method_tag,
                             inliers=initial.inliers)


def solve(kp3d: KeypointSet3D, kp2d: KeypointSet2D,
          image_size: tuple[float, float],
          config: SolverConfig) -> AlignmentSolution:
    """Full single-annotation solve: focal sweep then refinement."""
    return refine_lma(solve_epnp_focal_sweep(kp3d, kp2d, image_size, config),
                      kp3d, kp2d, image_size, config)


def consensus_keypoints(annotations: Sequence[KeypointSet2D],
                        subset: Sequence[int]) -> KeypointSet2D:
    """Median consensus of an annotator subset.

    A keypoint is visible when a strict majority of the subset marks it
    visible (a singleton subset passes through that annotator's visibility).
    Coordinates are the per-axis median over the subset annotators that see
    the keypoint; invisible annotations hold placeholder coordinates and do
    not vote.
    """
    if len(subset) == 0:
        raise ValueError("subset must be nonempty")
    n = len(annotations[subset[0]])
    pts = np.zeros((n, 2))
    vis = np.zeros(n, dtype=bool)
    members = [annotations[i] for i in subset]
    for k in range(n):
        seers = [a.points[k] for a in members if a.visibility[k]]
        vis[k] = len(seers) * 2 > len(members)
        if seers:
            pts[k] = np.median(np.array(seers), axis=0)
        else:
            pts[k] = np.median(np.array([a.points[k] for a in members]), axis=0)
    return KeypointSet2D(points=pts, visibility=vis)


def solve_subset_consensus(kp3d: KeypointSet3D, annotations: AnnotationTriple,
                           image_size: tuple[float, float],
                           config: SolverConfig) -> AlignmentSolution:
    """Solve against every nonempty annotator subset and keep the best.

    Each of the 7 subsets contributes a median-consensus keypoint set; the
    full solve runs on each, scored against that subset's own consensus.

    Raises:
        NoSolution: all subsets were unsolvable or diverged.
    """
    anns = annotations.annotations
    subsets = [s for r in (1, 2, 3) for s in combinations(range(3), r)]
    best: AlignmentSolution | None = None
    best_key: tuple | None = None
    for subset in subsets:
        cons = consensus_keypoints(anns, subset)
        try:
            sol = solve(kp3d, cons, image_size, config)
        except ShapeAlignError:
            logger.debug("subset %s failed to solve", subset)
            continue
        key = (sol.error, sol.focal, tuple(sol.pose.as_vector()))
        if best_key is None or key < best_key:
            best_key = key
            best = sol
    if best is None:
        raise NoSolution("no annotator subset produced a solution")
    return AlignmentSolution(pose=best.pose, focal=best.focal,
                             error=best.error,
                             method_tag=MethodTag.SUBSET_CONSENSUS)


def solve_ransac(kp3d: KeypointSet3D, annotations: AnnotationTriple,
                 image_size: tuple[float, float],
                 config: SolverConfig) -> AlignmentSolution:
    """RANSAC over the pooled (keypoint, annotator) samples.

    Each round samples 4 distinct keypoint indices, picks one annotator's
    coordinates for each, solves, and counts pooled samples within the
    inlier radius. The final solution refits on the largest inlier set.

    Raises:
        TooFewPoints: fewer than 4 keypoints visible in any annotation.
        NoConsensus: no round produced at least 4 inliers covering 4
            distinct keypoints.
    """
    anns = annotations.annotations
    n = len(annotations)
    w, h = image_size
    threshold = (config.ransac_inlier_px if config.ransac_inlier_px is not None
                 else 0.05 * max(w, h))

    pool = [(k, a) for k in range(n) for a in range(3)
            if anns[a].visibility[k]]
    seen_ks = sorted({k for k, _ in pool})
    if len(seen_ks) < 4:
        raise TooFewPoints(
            f"only {len(seen_ks)} keypoints visible in any annotation")
    seers = {k: [a for a in range(3) if anns[a].visibility[k]]
             for k in seen_ks}
    pool_pts = np.array([anns[a].points[k] for k, a in pool])
    pool_k = np.array([k for k, _ in pool])

    rng = np.random.default_rng(config.rng_seed)
    best_mask: np.ndarray | None = None
    best_count = 0
    for _ in range(config.ransac_iters):
        ks = rng.choice(seen_ks, size=4, replace=False)
        sample_pts = np.array([
            anns[rng.choice(seers[int(k)])].points[int(k)] for k in ks])
        sub3d = KeypointSet3D(kp3d.points[ks])
        sub2d = KeypointSet2D(sample_pts)
        try:
            sol = solve(sub3d, sub2d, image_size, config)
        except ShapeAlignError:
            continue
        intr = CameraIntrinsics(f=sol.focal, w=float(w), h=float(h))
        try:
            proj = project_points(compose(intr, sol.pose), kp3d.points)
        except ShapeAlignError:
            continue
        dist = np.linalg.norm(pool_pts - proj[pool_k], axis=1)
        mask = dist < threshold
        count = int(mask.sum())
        if count > best_count and len({k for (k, _), m in zip(pool, mask) if m}) >= 4:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < 4:
        raise NoConsensus(
            f"best round had {best_count} inliers, need >= 4")

    inliers = tuple(s for s, m in zip(pool, best_mask) if m)
    fit3d = KeypointSet3D(kp3d.points[[k for k, _ in inliers]])
    fit2d = KeypointSet2D(np.array([anns[a].points[k] for k, a in inliers]))
    refit = solve(fit3d, fit2d, image_size, config)
    return AlignmentSolution(pose=refit.pose, focal=refit.focal,
                             error=refit.error, method_tag=MethodTag.RANSAC,
                             inliers=inliers)
