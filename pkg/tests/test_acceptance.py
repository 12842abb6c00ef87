"""Acceptance gate: one printed PASS/FAIL line per pinned criterion.

Each test checks a headline guarantee at a fixed tolerance and seed set
and reports it on the terminal even when output capture is active. The
pinned rank-correlation value is asserted exactly as pinned and marked
as an expected failure because the rank-difference formula yields a
different number; everything else must pass.
"""

import json
import time

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from _synth import CUBE_FACES, CUBE_VERTICES, make_dataset, record_pose
from shapealign.bench import (
    Embedding,
    audit_alignment,
    evaluate_reconstructions,
    recall_at_k,
    spearman,
)
from shapealign.cli import main as cli_main
from shapealign.dataset import AnnotationRecord, save_annotations, with_pose
from shapealign.errors import EmptySurface
from shapealign.geometry import (
    CameraIntrinsics,
    KeypointSet2D,
    KeypointSet3D,
    RigidPose,
    TriangleMesh,
    compose,
    mesh_edge_uses,
    project_points,
    rotation_geodesic_deg,
    rotation_matrix,
)
from shapealign.pointcloud import (
    PointCloud,
    chamfer,
    chamfer_brute_force,
    emd,
    emd_brute_force,
)
from shapealign.service import create_app
from shapealign.silhouette import render_silhouette, write_pgm
from shapealign.solver import (
    AnnotationTriple,
    SolverConfig,
    consensus_keypoints,
    solve,
    solve_ransac,
    solve_subset_consensus,
)
from shapealign.voxel import (
    MetricConfig,
    VoxelGrid,
    marching_cubes,
    prepare_iou_traced,
    sweep_thresholds,
)
from shapealign.voxio import write_voxf

# The robust-variant comparison runs 150 full solves; a trimmed sweep and
# restart budget keeps it tractable without changing which solver wins.
ROBUST_CFG = SolverConfig(focal_step=400.0, n_restarts=1, lma_max_iter=40,
                          ransac_iters=20, rng_seed=0)


@pytest.fixture(scope="session")
def report(request):
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(name: str, ok: bool, details: str) -> None:
        line = f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({details})"
        if reporter is not None:
            reporter.write_line(line)
        else:
            print(line)

    return emit


def random_view(rng, n=10):
    """A camera, a pose, and n keypoints in general position."""
    f = rng.uniform(300.0, 2000.0)
    pose = RigidPose(theta=rng.uniform(-np.pi, np.pi),
                     phi=rng.uniform(-1.2, 1.2),
                     psi=rng.uniform(-np.pi, np.pi),
                     x=rng.uniform(-0.3, 0.3), y=rng.uniform(-0.3, 0.3),
                     z=rng.uniform(2.5, 5.0))
    while True:
        pts = rng.uniform(-0.5, 0.5, (n, 3))
        if np.linalg.matrix_rank(pts - pts.mean(axis=0)) == 3:
            break
    uv = project_points(compose(CameraIntrinsics(f=f, w=640, h=480), pose),
                        pts)
    return f, pose, pts, uv


def write_cube_grids(directory, n, seed):
    """n solid-cube occupancy grids; their IoU resample stays binary."""
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n):
        arr = np.zeros((20, 20, 20))
        side = int(rng.integers(6, 13))
        lo = rng.integers(2, 20 - side - 1, size=3)
        arr[lo[0]:lo[0] + side, lo[1]:lo[1] + side, lo[2]:lo[2] + side] = 1.0
        write_voxf(directory / f"shape{i:03d}.voxf",
                   VoxelGrid.from_array(arr))


def test_pose_round_trip_zero_noise(report):
    config = SolverConfig()
    worst_err = worst_rot = 0.0
    start = time.perf_counter()
    for t in range(100):
        rng = np.random.default_rng(3000 + t)
        _, pose, pts, uv = random_view(rng)
        sol = solve(KeypointSet3D(pts), KeypointSet2D(uv), (640, 480),
                    config)
        worst_err = max(worst_err, sol.error)
        worst_rot = max(worst_rot, rotation_geodesic_deg(
            rotation_matrix(pose), rotation_matrix(sol.pose)))
    elapsed = time.perf_counter() - start
    ok = worst_err < 1e-3 and worst_rot < 0.5 and elapsed < 60.0
    report("pose round trip, zero noise", ok,
           f"100 trials, worst error {worst_err:.2e} px^2, "
           f"worst rotation {worst_rot:.2e} deg, {elapsed:.1f}s")
    assert worst_err < 1e-3
    assert worst_rot < 0.5
    assert elapsed < 60.0


def test_pose_noise_robustness(report):
    config = SolverConfig()
    rotations = []
    for t in range(100):
        rng = np.random.default_rng(2000 + t)
        _, pose, pts, uv = random_view(rng)
        noisy = uv + rng.normal(0.0, 2.0, uv.shape)
        sol = solve(KeypointSet3D(pts), KeypointSet2D(noisy), (640, 480),
                    config)
        rotations.append(rotation_geodesic_deg(
            rotation_matrix(pose), rotation_matrix(sol.pose)))
    median = float(np.median(rotations))
    report("pose noise robustness", median < 5.0,
           f"sigma=2 px, 100 trials, median rotation {median:.2f} deg")
    assert median < 5.0


def test_robust_solvers_beat_pooled_median(report):
    """One annotator shifted 100 px, one blind to 4 keypoints: the pooled
    median inherits the corruption there, the robust solvers must not."""
    plain_deg, ransac_deg, subset_deg = [], [], []
    for t in range(50):
        rng = np.random.default_rng(1000 + t)
        _, pose, pts, uv = random_view(rng)
        direction = rng.normal(size=(10, 2))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        hidden = rng.choice(10, size=4, replace=False)
        vis = np.ones(10, dtype=bool)
        vis[hidden] = False
        triple = AnnotationTriple((
            KeypointSet2D(uv.copy()),
            KeypointSet2D(uv.copy(), vis),
            KeypointSet2D(uv + 100.0 * direction)))
        kp3 = KeypointSet3D(pts)
        truth = rotation_matrix(pose)

        def rot(solution):
            return rotation_geodesic_deg(truth,
                                         rotation_matrix(solution.pose))

        pooled = consensus_keypoints(triple.annotations, (0, 1, 2))
        plain_deg.append(rot(solve(kp3, pooled, (640, 480), ROBUST_CFG)))
        ransac_deg.append(rot(solve_ransac(kp3, triple, (640, 480),
                                           ROBUST_CFG)))
        subset_deg.append(rot(solve_subset_consensus(kp3, triple, (640, 480),
                                                     ROBUST_CFG)))
    plain_over = sum(d > 2.0 for d in plain_deg)
    ok = (max(ransac_deg) < 2.0 and max(subset_deg) < 2.0
          and plain_over >= 40)
    report("robust variants vs pooled median", ok,
           f"ransac worst {max(ransac_deg):.3f} deg, "
           f"subset worst {max(subset_deg):.3f} deg, "
           f"pooled median over 2 deg on {plain_over}/50")
    assert max(ransac_deg) < 2.0
    assert max(subset_deg) < 2.0
    assert plain_over >= 40


def test_emd_within_epsilon_of_exhaustive(report):
    epsilon = MetricConfig().emd_epsilon
    rng = np.random.default_rng(77)
    worst_ratio = 0.0
    start = time.perf_counter()
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        a = PointCloud(rng.random((n, 3)))
        b = PointCloud(rng.random((n, 3)))
        approx = emd(a, b, epsilon)
        exact = emd_brute_force(a, b)
        assert approx <= (1.0 + epsilon) * exact + 1e-12
        if exact > 0:
            worst_ratio = max(worst_ratio, approx / exact)
    elapsed = time.perf_counter() - start
    ok = elapsed < 30.0
    report("emd within epsilon of exhaustive", ok,
           f"1000 pairs, n<=8, worst ratio {worst_ratio:.6f} "
           f"<= {1 + epsilon}, {elapsed:.1f}s")
    assert elapsed < 30.0


def test_chamfer_matches_double_loop(report):
    rng = np.random.default_rng(78)
    worst = 0.0
    for _ in range(100):
        a = PointCloud(rng.random((50, 3)))
        b = PointCloud(rng.random((50, 3)))
        worst = max(worst, abs(chamfer(a, b) - chamfer_brute_force(a, b)))
    singleton = chamfer(PointCloud([[0.0, 0.0, 0.0]]),
                        PointCloud([[1.0, 0.0, 0.0]]))
    ok = worst < 1e-12 and singleton == 2.0
    report("chamfer exactness", ok,
           f"100 pairs, worst deviation {worst:.2e}, "
           f"singleton distance {singleton}")
    assert worst < 1e-12
    assert singleton == 2.0


def test_metric_pipeline_self_comparison(report, tmp_path):
    write_cube_grids(tmp_path / "gt", 20, seed=5)
    write_cube_grids(tmp_path / "pred", 20, seed=5)
    result = evaluate_reconstructions(tmp_path / "pred", tmp_path / "gt",
                                      MetricConfig())
    ok = (result.mean_iou == 1.0 and result.mean_cd < 1e-3
          and result.mean_emd < 2e-3 and result.chosen_threshold == 0.01
          and not result.failed)
    report("metric pipeline self-comparison", ok,
           f"20 shapes, mean IoU {result.mean_iou}, "
           f"mean CD {result.mean_cd}, mean EMD {result.mean_emd}, "
           f"threshold {result.chosen_threshold}")
    assert result.mean_iou == 1.0
    assert result.mean_cd < 1e-3
    assert result.mean_emd < 2e-3
    assert result.chosen_threshold == 0.01


def test_iou_preprocessing_steps_and_sweep(report):
    arr = np.zeros((128, 128, 128))
    arr[40:44, 60:64, 80:84] = 1.0
    prepared, trace = prepare_iou_traced(VoxelGrid.from_array(arr),
                                         MetricConfig())
    sweep = sweep_thresholds(MetricConfig())
    expected = [round(0.01 * k, 2) for k in range(1, 51)]
    sweep_exact = (len(sweep) == 50
                   and all(abs(s - e) < 1e-12
                           for s, e in zip(sweep, expected)))
    ok = (trace.pooled and trace.pool_factor == 4
          and trace.bbox_lo == (10, 15, 20) and trace.bbox_hi == (10, 15, 20)
          and trace.cube_side == 1
          and prepared.resolution == (32, 32, 32)
          and sweep_exact)
    report("iou preprocessing protocol", ok,
           f"128^3 block: pooled={trace.pooled} x{trace.pool_factor}, "
           f"bbox {trace.bbox_lo}..{trace.bbox_hi}, output "
           f"{prepared.resolution}, sweep 0.01..0.50 step 0.01")
    assert trace.pooled and trace.pool_factor == 4
    assert trace.bbox_lo == trace.bbox_hi == (10, 15, 20)
    assert prepared.resolution == (32, 32, 32)
    assert sweep_exact
    assert float(prepared.values.min()) >= 0.0
    assert float(prepared.values.max()) <= 1.0


def test_marching_cubes_topology(report):
    arr = np.zeros((5, 5, 5))
    arr[2, 2, 2] = 1.0
    mesh = marching_cubes(VoxelGrid.from_array(arr), 0.1)
    uses = mesh_edge_uses(mesh)
    closed = all(count == 2 for count in uses.values())
    vertices = len(mesh.vertices)
    euler = vertices - len(uses) + len(mesh.faces)

    with pytest.raises(EmptySurface):
        marching_cubes(VoxelGrid.from_array(np.zeros((4, 4, 4))), 0.1)

    ok = closed and euler == 2
    report("marching cubes topology", ok,
           f"single voxel: closed={closed}, Euler characteristic {euler}; "
           f"all-below-iso raises EmptySurface")
    assert closed
    assert euler == 2


def _mixed_audit_dataset(root):
    """10 records alternating cube and squat prism, masks from the poses."""
    root.mkdir(parents=True)
    (root / "model").mkdir()
    (root / "mask").mkdir()
    (root / "img").mkdir()
    shapes = {
        "model/cube.obj": CUBE_VERTICES,
        "model/prism.obj": CUBE_VERTICES * np.array([0.8, 0.5, 1.1]),
    }
    for rel, verts in shapes.items():
        lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}"
                 for x, y, z in verts]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in CUBE_FACES]
        (root / rel).write_text("\n".join(lines) + "\n")

    records = []
    for i in range(10):
        rel = "model/cube.obj" if i % 2 == 0 else "model/prism.obj"
        verts = shapes[rel]
        pose = record_pose(i)
        cam = compose(CameraIntrinsics(f=240.0, w=160.0, h=120.0), pose)
        mask = render_silhouette(TriangleMesh(verts, CUBE_FACES),
                                 cam, 160, 120)
        item = f"item{i:03d}"
        write_pgm(root / "mask" / f"{item}.pgm", mask)
        write_pgm(root / "img" / f"{item}.pgm", mask)
        records.append(AnnotationRecord(
            image_path=f"img/{item}.pgm", mask_path=f"mask/{item}.pgm",
            model_path=rel, category="cube" if i % 2 == 0 else "prism",
            image_size=(160, 120),
            keypoints_3d=KeypointSet3D(verts),
            keypoint_annotations=(KeypointSet2D(project_points(cam, verts)),),
            pose=pose, focal=240.0))
    save_annotations(root / "annotations.json", records)
    return records


def test_silhouette_audit_degrades_with_pose_error(report, tmp_path):
    root = tmp_path / "mixed"
    records = _mixed_audit_dataset(root)
    baseline = audit_alignment(records, root)

    shifted = []
    for record in records:
        pose = record.pose
        shifted.append(with_pose(
            record,
            RigidPose(pose.theta + np.deg2rad(10.0), pose.phi, pose.psi,
                      pose.x, pose.y, pose.z),
            record.focal))
    degraded = audit_alignment(shifted, root)

    drop = baseline.mean_iou - degraded.mean_iou
    ok = baseline.mean_iou > 0.99 and drop > 0.0
    report("silhouette audit loop", ok,
           f"10 cubes/prisms, stored-pose IoU {baseline.mean_iou:.4f}, "
           f"10 deg azimuth shift drops mean by {drop:.4f}")
    assert baseline.mean_iou > 0.99
    assert drop > 0.0


@pytest.mark.xfail(strict=True,
                   reason="pinned target 0.7; the rank-difference formula "
                          "on these inputs gives 1 - 6*4/(5*24) = 0.8")
def test_rank_correlation_pinned_value(report):
    value = spearman([1, 2, 3, 4, 5], [2, 1, 4, 3, 5])
    report("rank correlation pinned value", abs(value - 0.7) < 1e-12,
           f"spearman((1..5),(2,1,4,3,5)) = {value}, pinned 0.7, "
           f"sum of squared rank differences is 4 so the formula gives 0.8")
    assert abs(value - 0.7) < 1e-12


def test_recall_matches_exhaustive(report):
    rng = np.random.default_rng(55)
    embeddings = [
        Embedding(f"item{i:02d}", rng.random(8),
                  f"shape{int(rng.integers(0, 12))}")
        for i in range(50)]
    ks = [1, 2, 4, 8, 16, 32]
    result = recall_at_k(embeddings, ks)

    vectors = [e.vector for e in embeddings]
    shapes = [e.shape_id for e in embeddings]
    mismatches = 0
    for k in ks:
        hits = total = 0
        for q in range(50):
            if sum(1 for s in shapes if s == shapes[q]) < 2:
                continue
            total += 1
            order = sorted((float(np.linalg.norm(vectors[q] - vectors[j])), j)
                           for j in range(50) if j != q)
            if any(shapes[j] == shapes[q] for _, j in order[:k]):
                hits += 1
        if result.recalls[k] != hits / total:
            mismatches += 1
    report("recall@k equals exhaustive search", mismatches == 0,
           f"50 embeddings, K in {{1,2,4,8,16,32}}, {mismatches} mismatches")
    assert mismatches == 0


def test_cli_outputs_byte_stable(report, tmp_path):
    runner = CliRunner()
    data_root = tmp_path / "data"
    make_dataset(data_root, n_records=1)
    write_cube_grids(tmp_path / "gt", 2, seed=1)
    write_cube_grids(tmp_path / "pred", 2, seed=1)
    (tmp_path / "emb.json").write_text(json.dumps(
        [{"item_id": f"i{k}", "vector": [float(k), 0.0],
          "shape_id": f"s{k % 2}"} for k in range(6)]))
    (tmp_path / "angles.json").write_text(
        json.dumps([[10.0, 5.0], [200.0, -30.0]]))
    (tmp_path / "col_a.json").write_text("[1, 2, 3, 4, 5]")
    (tmp_path / "col_b.json").write_text("[2, 1, 4, 3, 5]")
    (tmp_path / "solver.json").write_text(json.dumps({"solver": {
        "focal_min": 200.0, "focal_max": 300.0, "focal_step": 20.0,
        "n_restarts": 2, "lma_max_iter": 60}}))

    invocations = {
        "align": ["align", "item000", "--dataset", str(data_root),
                  "--seed", "0", "--config", str(tmp_path / "solver.json")],
        "eval-recon": ["eval-recon", "--pred", str(tmp_path / "pred"),
                       "--gt", str(tmp_path / "gt"), "--seed", "11"],
        "retrieve": ["retrieve", "--embeddings", str(tmp_path / "emb.json"),
                     "--k", "1,2,4"],
        "pose-acc": ["pose-acc", "--pred", str(tmp_path / "angles.json"),
                     "--truth", str(tmp_path / "angles.json")],
        "audit": ["audit", "--dataset", str(data_root)],
        "corr": ["corr", "--metric-a", str(tmp_path / "col_a.json"),
                 "--metric-b", str(tmp_path / "col_b.json")],
    }
    unstable = []
    for name, args in invocations.items():
        first = runner.invoke(cli_main, args)
        second = runner.invoke(cli_main, args)
        assert first.exit_code == 0, f"{name}: {first.output}"
        json.loads(first.stdout)
        if first.stdout.encode() != second.stdout.encode():
            unstable.append(name)
    report("cli determinism", not unstable,
           f"{len(invocations)} commands rerun, unstable: {unstable or 'none'}")
    assert not unstable


def test_service_runs_without_ui(report, tmp_path):
    """The whole alignment stack works with no browser client present."""
    root = tmp_path / "data"
    make_dataset(root, n_records=1)
    with TestClient(create_app(root)) as client:
        listing = client.get("/records")
        solve_response = client.post("/records/item000/solve", json={
            "method": "plain",
            "config": {"focal_min": 200.0, "focal_max": 300.0,
                       "focal_step": 20.0, "n_restarts": 2}})
    ok = listing.status_code == 200 and solve_response.status_code == 200
    report("primary stack independent of the ui", ok,
           f"records {listing.status_code}, solve "
           f"{solve_response.status_code}; browser client optional")
    assert ok
