"""Non-iterative perspective-n-point pose estimation via virtual control points.

Expresses the 3D keypoints as barycentric combinations of 4 control points
(centroid + principal directions), rewrites the projection constraints as a
linear system on the control points' camera-frame coordinates, and solves the
kernel-coefficient cases N = 1, 2, 3 with pairwise-distance constraints plus
a short Gauss-Newton polish. Near-planar point sets fall back to a 3-control-
point variant. The returned pose minimizes reprojection error among the
candidate cases for the given (fixed) intrinsics.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .errors import DegenerateConfiguration, ShapeAlignError, TooFewPoints
from .geometry import (
    CameraIntrinsics,
    KeypointSet2D,
    KeypointSet3D,
    RigidPose,
    compose,
    pose_from_rt,
    reprojection_error,
)

# Rank thresholds on singular-value ratios of the centered 3D points.
_COLLINEAR_RATIO = 1e-8
_PLANAR_RATIO = 1e-6

_GN_ITERS = 25


def _control_points(pw: np.ndarray, planar: bool) -> np.ndarray:
    """Centroid plus principal directions scaled by per-axis spread."""
    centroid = pw.mean(axis=0)
    centered = pw - centroid
    cov = centered.T @ centered / len(pw)
    eigval, eigvec = np.linalg.eigh(cov)          # ascending
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    n_dirs = 2 if planar else 3
    ctrl = [centroid]
    for i in range(n_dirs):
        ctrl.append(centroid + np.sqrt(max(eigval[i], 0.0)) * eigvec[:, i])
    return np.array(ctrl)


def _barycentric(pw: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    """Coefficients alpha with pw = alpha @ ctrl and rows summing to 1."""
    k = len(ctrl)
    C = np.vstack([ctrl.T, np.ones(k)])           # (4, k)
    P = np.vstack([pw.T, np.ones(len(pw))])       # (4, n)
    if k == 4:
        alphas = np.linalg.solve(C, P)
    else:
        alphas, *_ = np.linalg.lstsq(C, P, rcond=None)
    return alphas.T                               # (n, k)


def _kernel(alphas: np.ndarray, uv: np.ndarray, intr: CameraIntrinsics,
            n_ctrl: int) -> np.ndarray:
    """Smallest right-singular vectors of the 2n x 3k projection system."""
    n = len(uv)
    f, cx, cy = intr.f, intr.w / 2.0, intr.h / 2.0
    M = np.zeros((2 * n, 3 * n_ctrl))
    for j in range(n_ctrl):
        a = alphas[:, j]
        M[0::2, 3 * j] = a * f
        M[0::2, 3 * j + 2] = a * (cx - uv[:, 0])
        M[1::2, 3 * j + 1] = a * f
        M[1::2, 3 * j + 2] = a * (cy - uv[:, 1])
    mtm = M.T @ M
    _, vecs = np.linalg.eigh(mtm)                 # ascending eigenvalues
    return vecs                                   # columns; smallest first


def _pair_terms(kernel: np.ndarray, n_ctrl: int, n_kernel: int):
    """Per-control-point kernel blocks differenced over all pairs."""
    blocks = kernel[:, :n_kernel].reshape(n_ctrl, 3, n_kernel)
    pairs = list(combinations(range(n_ctrl), 2))
    dv = np.array([blocks[a] - blocks[b] for a, b in pairs])  # (p, 3, N)
    return pairs, dv


def _initial_betas(dv: np.ndarray, d2: np.ndarray, n_kernel: int) -> np.ndarray:
    """Linear estimate of the beta vector from the distance constraints.

    Solves for the symmetric quadratic terms beta_i beta_j, then extracts the
    best rank-1 factor of the resulting matrix (robust to sign ambiguity).
    """
    if n_kernel == 1:
        v2 = np.einsum("pij,pij->p", dv, dv)
        denom = float(v2 @ v2)
        if denom <= 0:
            return np.zeros(1)
        beta2 = float(v2 @ d2) / denom
        return np.array([np.sqrt(max(beta2, 0.0))])
    idx = list(combinations(range(n_kernel), 2))
    n_quad = n_kernel + len(idx)
    L = np.zeros((len(dv), n_quad))
    for p in range(len(dv)):
        G = dv[p].T @ dv[p]                       # (N, N) Gram of the pair
        col = 0
        for i in range(n_kernel):
            L[p, col] = G[i, i]
            col += 1
        for i, j in idx:
            L[p, col] = 2.0 * G[i, j]
            col += 1
    sol, *_ = np.linalg.lstsq(L, d2, rcond=None)
    B = np.zeros((n_kernel, n_kernel))
    col = 0
    for i in range(n_kernel):
        B[i, i] = sol[col]
        col += 1
    for i, j in idx:
        B[i, j] = B[j, i] = sol[col]
        col += 1
    w, v = np.linalg.eigh(B)
    top = int(np.argmax(np.abs(w)))
    return np.sqrt(max(abs(w[top]), 0.0)) * v[:, top]


def _polish_betas(betas: np.ndarray, dv: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """Gauss-Newton on the squared-distance residuals of the control points."""
    for _ in range(_GN_ITERS):
        diff = np.einsum("pik,k->pi", dv, betas)          # (p, 3)
        r = np.einsum("pi,pi->p", diff, diff) - d2
        J = 2.0 * np.einsum("pi,pik->pk", diff, dv)       # (p, N)
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        betas = betas - step
        if np.abs(step).max() < 1e-14:
            break
    return betas


def _rigid_align(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares rotation and translation with dst ~= R @ src + t."""
    sc, dc = src.mean(axis=0), dst.mean(axis=0)
    H = (src - sc).T @ (dst - dc)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(Vt.T @ U.T)))])
    R = Vt.T @ D @ U.T
    return R, dc - R @ sc


def _candidate_poses(pc: np.ndarray, pw: np.ndarray, planar: bool):
    """Rigid alignments world -> camera; planar inputs add the mirrored fit."""
    if pc[:, 2].mean() < 0:
        pc = -pc
    yield _rigid_align(pw, pc)
    if planar:
        centered = pc - pc.mean(axis=0)
        _, _, Vt = np.linalg.svd(centered)
        normal = Vt[2]
        mirrored = pc - 2.0 * (centered @ normal)[:, None] * normal
        yield _rigid_align(pw, mirrored)


def epnp(kp3d: KeypointSet3D, kp2d: KeypointSet2D,
         intrinsics: CameraIntrinsics) -> RigidPose:
    """Estimate the object pose for fixed intrinsics from visible keypoints.

    Args:
        kp3d: model-frame keypoints, index-paired with kp2d.
        kp2d: pixel keypoints; only visible entries constrain the pose.
        intrinsics: camera with the focal length to solve under.

    Returns:
        The candidate pose with the lowest reprojection error.

    Raises:
        TooFewPoints: fewer than 4 visible correspondences.
        DegenerateConfiguration: visible 3D points are collinear.
    """
    if len(kp3d) != len(kp2d):
        raise TooFewPoints(
            f"{len(kp3d)} 3D keypoints vs {len(kp2d)} 2D keypoints")
    vis = kp2d.visibility
    if int(vis.sum()) < 4:
        raise TooFewPoints(f"{int(vis.sum())} visible keypoints, need >= 4")
    pw = kp3d.points[vis]
    uv = kp2d.points[vis]

    svals = np.linalg.svd(pw - pw.mean(axis=0), compute_uv=False)
    if svals[1] <= _COLLINEAR_RATIO * max(svals[0], 1e-300):
        raise DegenerateConfiguration("visible 3D keypoints are collinear")
    planar = svals[2] <= _PLANAR_RATIO * svals[0]

    ctrl = _control_points(pw, planar)
    n_ctrl = len(ctrl)
    alphas = _barycentric(pw, ctrl)
    kernel = _kernel(alphas, uv, intrinsics, n_ctrl)

    pairs = list(combinations(range(n_ctrl), 2))
    d2 = np.array([float(np.sum((ctrl[a] - ctrl[b]) ** 2)) for a, b in pairs])

    vis_sub = KeypointSet2D(uv)
    kp3d_sub = KeypointSet3D(pw)
    # The polish always runs over the full usable kernel so the minimal
    # 4-point case (nullspace dimension 4) stays solvable.
    n_kernel = 3 if planar else 4
    _, dv = _pair_terms(kernel, n_ctrl, n_kernel)

    # Overdetermined systems have a near-1D kernel; the classic leading-column
    # cases suffice. Minimal systems (nullspace dimension > 1) need seeds over
    # every column subset to cover all basins of the distance constraints.
    if len(pw) <= 6:
        col_sets = [(k,) for k in range(n_kernel)]
        if len(d2) >= 3:
            col_sets += list(combinations(range(n_kernel), 2))
        if len(d2) >= 6:
            col_sets += list(combinations(range(n_kernel), 3))
    else:
        col_sets = [(0,), (0, 1), (0, 1, 2)][:n_kernel]

    best: tuple[float, RigidPose] | None = None
    for cols in col_sets:
        seed = _initial_betas(dv[:, :, list(cols)], d2, len(cols))
        if not np.any(seed):
            continue
        betas = np.zeros(n_kernel)
        betas[list(cols)] = seed
        betas = _polish_betas(betas, dv, d2)
        cc = (kernel[:, :n_kernel] @ betas).reshape(n_ctrl, 3)
        pc = alphas @ cc
        for R, t in _candidate_poses(pc, pw, planar):
            pose = pose_from_rt(R, t)
            try:
                err = reprojection_error(
                    compose(intrinsics, pose), kp3d_sub, vis_sub)
            except ShapeAlignError:
                continue
            if best is None or err < best[0]:
                best = (err, pose)
        if best is not None and best[0] < 1e-12:
            break
    if best is None:
        raise DegenerateConfiguration("no beta case produced a valid pose")
    return best[1]
