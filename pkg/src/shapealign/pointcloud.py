"""Point-cloud sampling and the two cloud-distance metrics.

Clouds are sampled area-uniformly from triangle meshes with the seedable
PCG64 generator (numpy's default_rng) so results are identical across
platforms, then normalized so the bounding box is centered at the origin
with its longest side equal to 1.

Chamfer distance sums the two directional mean nearest-neighbor distances
(exact search). Earth mover's distance finds a bijection with a forward
auction algorithm under epsilon-scaling; the result is within a (1 + eps)
factor of the optimal matching cost and is normalized by the cloud size.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateMesh,
    EmptyCloud,
    SizeMismatch,
    ZeroExtent,
)
from .geometry import TriangleMesh
from .voxel import MetricConfig, VoxelGrid, marching_cubes


@dataclass(frozen=True)
class PointCloud:
    """Immutable set of 3D points."""

    points: np.ndarray                     # (n, 3) float64

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("points must have shape (n, 3)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Assignment:
    """A bijection between two equal-size clouds and its normalized cost."""

    mapping: np.ndarray                    # (n,) permutation of 0..n-1
    cost: float

    def __post_init__(self) -> None:
        m = np.asarray(self.mapping, dtype=np.int64)
        if sorted(m.tolist()) != list(range(len(m))):
            raise ValueError("mapping must be a permutation")
        if self.cost < 0:
            raise ValueError("cost must be nonnegative")
        object.__setattr__(self, "mapping", m)


def derive_seed(base_seed: int, item_id: str) -> int:
    """Stable per-item RNG seed from a base seed and an item identifier.

    Uses SHA-256 so the value is reproducible across processes and
    platforms (unlike the builtin string hash).
    """
    digest = hashlib.sha256(f"{base_seed}:{item_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def sample_surface(mesh: TriangleMesh, n: int, rng_seed: int) -> PointCloud:
    """Draw n points area-uniformly from a mesh surface.

    Triangles are chosen with probability proportional to area; positions
    are uniform via reflected barycentric coordinates. Deterministic for a
    fixed seed (PCG64).

    Raises:
        DegenerateMesh: total surface area is zero.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    v, f = mesh.vertices, mesh.faces
    if len(f) == 0:
        raise DegenerateMesh("mesh has no faces")
    ab = v[f[:, 1]] - v[f[:, 0]]
    ac = v[f[:, 2]] - v[f[:, 0]]
    areas = 0.5 * np.linalg.norm(np.cross(ab, ac), axis=1)
    total = areas.sum()
    if total <= 0.0:
        raise DegenerateMesh("mesh surface area is zero")
    rng = np.random.default_rng(rng_seed)
    idx = rng.choice(len(f), size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    outside = r1 + r2 > 1.0
    r1[outside] = 1.0 - r1[outside]
    r2[outside] = 1.0 - r2[outside]
    pts = v[f[idx, 0]] + r1[:, None] * ab[idx] + r2[:, None] * ac[idx]
    return PointCloud(pts)


def normalize(cloud: PointCloud) -> PointCloud:
    """Center the bounding box at the origin and scale its longest side to 1.

    A single uniform scale preserves aspect ratios.

    Raises:
        ZeroExtent: all points coincide.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot normalize an empty cloud")
    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise ZeroExtent("all points coincide")
    center = (lo + hi) / 2.0
    return PointCloud((cloud.points - center) / extent)


def voxel_to_cloud(grid: VoxelGrid, config: MetricConfig) -> PointCloud:
    """Grid to normalized point cloud: iso-surface, sample, normalize."""
    mesh = marching_cubes(grid, config.iso_value)
    cloud = sample_surface(mesh, config.n_samples, config.rng_seed)
    return normalize(cloud)


def chamfer(s1: PointCloud, s2: PointCloud) -> float:
    """Sum of both directional mean nearest-neighbor distances.

    Exact nearest neighbors (k-d tree); symmetric; zero iff the clouds are
    equal as sets.

    Raises:
        EmptyCloud: either cloud is empty.
    """
    if len(s1) == 0 or len(s2) == 0:
        raise EmptyCloud("chamfer needs two non-empty clouds")
    d12 = cKDTree(s2.points).query(s1.points)[0]
    d21 = cKDTree(s1.points).query(s2.points)[0]
    return float(d12.mean() + d21.mean())


def chamfer_brute_force(s1: PointCloud, s2: PointCloud) -> float:
    """Reference double-loop chamfer used to validate the k-d tree path."""
    if len(s1) == 0 or len(s2) == 0:
        raise EmptyCloud("chamfer needs two non-empty clouds")
    d = np.linalg.norm(s1.points[:, None, :] - s2.points[None, :, :], axis=2)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def _auction_round(cost: np.ndarray, prices: np.ndarray,
                   eps: float) -> np.ndarray:
    """One full assignment at fixed eps; prices are updated in place."""
    n = cost.shape[0]
    owner = np.full(n, -1, dtype=np.int64)     # object -> person
    assigned = np.full(n, -1, dtype=np.int64)  # person -> object
    while True:
        bidders = np.flatnonzero(assigned == -1)
        if bidders.size == 0:
            return assigned
        net = cost[bidders] + prices[None, :]
        rows = np.arange(bidders.size)
        j1 = np.argmin(net, axis=1)
        v1 = net[rows, j1]
        if n > 1:
            net[rows, j1] = np.inf
            v2 = net.min(axis=1)
        else:
            v2 = v1
        bids = v2 - v1 + eps
        # Highest bid per object wins; lexsort leaves it last in each group.
        order = np.lexsort((bids, j1))
        j_sorted = j1[order]
        last = np.ones(bidders.size, dtype=bool)
        last[:-1] = j_sorted[1:] != j_sorted[:-1]
        win = order[last]
        objs = j1[win]
        persons = bidders[win]
        prices[objs] += bids[win]
        prev = owner[objs]
        assigned[prev[prev >= 0]] = -1
        owner[objs] = persons
        assigned[persons] = objs


def emd_with_assignment(s1: PointCloud, s2: PointCloud, epsilon: float,
                        rng_seed: int = 0) -> tuple[float, Assignment]:
    """Near-optimal bijection cost between equal-size clouds.

    Runs a forward auction with epsilon-scaling (eps starts at a quarter of
    the largest pairwise distance and divides by 4 per round, reusing
    prices). Scaling continues until both n*eps < epsilon (additive slack
    below epsilon) and n*eps <= epsilon * cost / (1 + epsilon), the latter
    bounding the result by (1 + epsilon) times the optimal matching cost.
    The returned cost is normalized by the cloud size.

    The algorithm is deterministic; ``rng_seed`` is accepted for interface
    uniformity with the samplers and is unused.

    Raises:
        SizeMismatch: differing cloud sizes.
        EmptyCloud: empty inputs.
    """
    del rng_seed
    if len(s1) == 0 or len(s2) == 0:
        raise EmptyCloud("emd needs two non-empty clouds")
    if len(s1) != len(s2):
        raise SizeMismatch(f"{len(s1)} vs {len(s2)} points")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n = len(s1)
    cost = np.linalg.norm(s1.points[:, None, :] - s2.points[None, :, :],
                          axis=2)
    max_cost = float(cost.max())
    if max_cost == 0.0:
        mapping = np.arange(n)
        return 0.0, Assignment(mapping=mapping, cost=0.0)

    prices = np.zeros(n)
    eps = max_cost / 4.0
    eps_floor = 1e-15 * max_cost
    while True:
        assigned = _auction_round(cost, prices, eps)
        total = float(cost[np.arange(n), assigned].sum())
        additive_ok = n * eps < epsilon
        relative_ok = n * eps <= epsilon * total / (1.0 + epsilon)
        if total == 0.0 or (additive_ok and relative_ok) \
                or eps <= eps_floor:
            break
        eps /= 4.0
    normalized = total / n
    return normalized, Assignment(mapping=assigned, cost=normalized)


def emd(s1: PointCloud, s2: PointCloud, epsilon: float,
        rng_seed: int = 0) -> float:
    """Normalized earth mover's distance (see emd_with_assignment)."""
    return emd_with_assignment(s1, s2, epsilon, rng_seed)[0]


def emd_brute_force(s1: PointCloud, s2: PointCloud) -> float:
    """Exact EMD by exhaustive search over bijections; n <= 10 only."""
    from itertools import permutations

    if len(s1) == 0 or len(s2) == 0:
        raise EmptyCloud("emd needs two non-empty clouds")
    if len(s1) != len(s2):
        raise SizeMismatch(f"{len(s1)} vs {len(s2)} points")
    n = len(s1)
    if n > 10:
        raise ValueError("brute force is factorial; n must be <= 10")
    cost = np.linalg.norm(s1.points[:, None, :] - s2.points[None, :, :],
                          axis=2)
    perms = np.array(list(permutations(range(n))))
    totals = cost[np.arange(n)[None, :], perms].sum(axis=1)
    return float(totals.min()) / n
