import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panofuse.geometry import Intrinsics, PerspectiveView, intrinsics_from_fov, make_pose
from panofuse.pointcloud import (
    AlignmentError,
    CoverageMask,
    DepthMap,
    FusionConfig,
    PointCloud,
    align_scale_gd,
    align_scale_median,
    alignment_loss,
    dilate_mask,
    fuse_views,
    lift_rgbd,
    project_cloud,
    ray_weights,
    weighted_lower_median,
)
from panofuse.synth import render_scene_perspective


def one_pixel():
    return Intrinsics(1.0, 1.0, 0.5, 0.5, 1, 1)


def view_of(image, pose, intr):
    return PerspectiveView(np.asarray(image, float), pose, intr)


def brute_force_minimizer(ratios, weights, lo=0.1, hi=10.0, step=1e-4):
    grid = np.arange(lo, hi + step / 2, step)
    cost = np.abs(grid[:, None] - ratios[None, :]) @ weights
    return grid[np.argmin(cost)]


# --- lift / project ---------------------------------------------------------

def test_lift_single_pixel():
    k = one_pixel()
    view = view_of(np.ones((1, 1, 3)), make_pose(0.0), k)
    cloud = lift_rgbd(view, DepthMap(np.array([[2.0]])))
    np.testing.assert_allclose(cloud.positions, [[0.0, 0.0, 2.0]], atol=1e-15)


def test_lift_rotated_pixel():
    k = one_pixel()
    pose = make_pose(math.pi / 2)
    cloud = lift_rgbd(view_of(np.ones((1, 1, 3)), pose, k), DepthMap(np.array([[2.0]])))
    np.testing.assert_allclose(cloud.positions, [[2.0, 0.0, 0.0]], atol=1e-15)


def test_lift_fully_excluded_is_empty():
    k = intrinsics_from_fov(90.0, 4, 4)
    mask = CoverageMask(np.ones((4, 4), bool), np.ones((4, 4)))
    cloud = lift_rgbd(view_of(np.zeros((4, 4, 3)), make_pose(0.0), k), DepthMap(np.ones((4, 4))), exclude=mask)
    assert len(cloud) == 0


def test_lift_dimension_mismatch():
    k = intrinsics_from_fov(90.0, 4, 4)
    with pytest.raises(ValueError):
        lift_rgbd(view_of(np.zeros((4, 4, 3)), make_pose(0.0), k), DepthMap(np.ones((4, 5))))


def test_project_single_point(intr90):
    cloud = PointCloud(np.array([[0.0, 0.0, 2.0]]), np.array([[1.0, 0.0, 0.0]]))
    img, zbuf, mask = project_cloud(cloud, intr90, make_pose(0.0))
    assert mask.count == 1
    assert mask.covered[256, 256]
    assert mask.ref_depth[256, 256] == 2.0
    assert zbuf[256, 256] == 2.0
    np.testing.assert_array_equal(img[256, 256], [1.0, 0.0, 0.0])


def test_project_point_behind_camera(intr90):
    cloud = PointCloud(np.array([[0.0, 0.0, -1.0]]), np.ones((1, 3)))
    img, zbuf, mask = project_cloud(cloud, intr90, make_pose(0.0))
    assert mask.count == 0
    assert np.all(np.isinf(zbuf))
    assert not img.any()


def test_project_empty_cloud(intr90):
    _, _, mask = project_cloud(PointCloud.empty(), intr90, make_pose(0.0))
    assert mask.count == 0


def test_zbuffer_nearest_and_lowest_index_wins(intr90):
    pos = np.array([[0.0, 0.0, 3.0], [0.0, 0.0, 2.0], [0.0, 0.0, 2.0]])
    col = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    img, _, mask = project_cloud(PointCloud(pos, col), intr90, make_pose(0.0))
    assert mask.ref_depth[256, 256] == 2.0
    np.testing.assert_array_equal(img[256, 256], [0.0, 1.0, 0.0])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), fov=st.floats(30.0, 150.0),
       yaw=st.floats(-math.pi, math.pi), pitch=st.floats(-1.4, 1.4))
def test_lift_project_round_trip(seed, fov, yaw, pitch):
    rng = np.random.default_rng(seed)
    k = intrinsics_from_fov(fov, 24, 20)
    pose = make_pose(yaw, pitch, rng.uniform(-1, 1, 3))
    depth = rng.uniform(0.1, 100.0, k.shape)
    depth[rng.uniform(size=k.shape) < 0.2] = 0.0
    dm = DepthMap(depth)
    view = view_of(rng.uniform(size=k.shape + (3,)), pose, k)
    cloud = lift_rgbd(view, dm)
    assert len(cloud) == int(dm.valid.sum())
    img, _, mask = project_cloud(cloud, k, pose)
    assert np.array_equal(mask.covered, dm.valid)
    assert np.abs(mask.ref_depth[dm.valid] - depth[dm.valid]).max() <= 1e-6
    np.testing.assert_array_equal(img[dm.valid], view.image[dm.valid])


# --- dilation ---------------------------------------------------------------

def _mask(covered):
    covered = np.asarray(covered, bool)
    return CoverageMask(covered, np.where(covered, 2.0, 0.0))


def test_dilate_radius_zero(rng):
    m = _mask(rng.uniform(size=(9, 9)) < 0.2)
    out = dilate_mask(m, 0)
    assert np.array_equal(out.covered, m.covered)
    assert np.array_equal(out.ref_depth, m.ref_depth)


def test_dilate_single_pixel():
    c = np.zeros((7, 7), bool)
    c[3, 3] = True
    out = dilate_mask(_mask(c), 1)
    expected = np.zeros((7, 7), bool)
    expected[2:5, 2:5] = True
    assert np.array_equal(out.covered, expected)
    assert np.all(out.ref_depth[expected] == 2.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_dilation_composes(seed):
    rng = np.random.default_rng(seed)
    m = _mask(rng.uniform(size=(15, 17)) < 0.05)
    twice = dilate_mask(dilate_mask(m, 1), 1)
    assert np.array_equal(twice.covered, dilate_mask(m, 2).covered)


def test_dilated_depth_comes_from_nearest_pixel():
    c = np.zeros((5, 9), bool)
    c[2, 1] = c[2, 7] = True
    ref = np.zeros((5, 9))
    ref[2, 1], ref[2, 7] = 1.0, 5.0
    out = dilate_mask(CoverageMask(c, ref), 1)
    assert out.ref_depth[2, 2] == 1.0 and out.ref_depth[2, 6] == 5.0


# --- alignment --------------------------------------------------------------

def random_instance(rng, shape=(32, 32), ratio_range=(0.25, 4.0)):
    k = intrinsics_from_fov(70.0, shape[1], shape[0])
    D = rng.uniform(0.5, 4.0, shape)
    ref = D * rng.uniform(*ratio_range, shape)
    covered = rng.uniform(size=shape) < 0.7
    return k, DepthMap(D), CoverageMask(covered, np.where(covered, ref, 0.0))


def test_loss_at_exact_scale(rng):
    k = intrinsics_from_fov(90.0, 8, 8)
    D = rng.uniform(1, 2, (8, 8))
    mask = CoverageMask(np.ones((8, 8), bool), 2 * D)
    loss, grad = alignment_loss(2.0, DepthMap(D), mask, k)
    assert loss == pytest.approx(0.0, abs=1e-15)
    assert grad == 0.0


def test_loss_single_pixel():
    k = one_pixel()
    loss, grad = alignment_loss(1.0, DepthMap(np.array([[1.0]])), CoverageMask(np.ones((1, 1), bool), np.array([[3.0]])), k)
    assert (loss, grad) == (2.0, -1.0)


def test_loss_gradient_matches_finite_difference(rng):
    k, dm, mask = random_instance(rng)
    h = 1e-7
    checked = 0
    for d in rng.uniform(0.3, 3.0, 20):
        ratios = mask.ref_depth[mask.covered] / dm.values[mask.covered]
        if np.min(np.abs(ratios - d)) < 10 * h:
            continue  # stencil straddles a kink
        _, g = alignment_loss(d, dm, mask, k)
        fd = (alignment_loss(d + h, dm, mask, k)[0] - alignment_loss(d - h, dm, mask, k)[0]) / (2 * h)
        assert abs(g - fd) <= 1e-6 * max(abs(fd), 1e-12)
        checked += 1
    assert checked >= 15


def test_loss_uses_ray_weights():
    k = intrinsics_from_fov(90.0, 2, 1)
    w = ray_weights(k)
    loss, _ = alignment_loss(1.0, DepthMap(np.ones((1, 2))), CoverageMask(np.ones((1, 2), bool), np.full((1, 2), 2.0)), k)
    assert loss == pytest.approx(w.mean())


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.lists(st.floats(0.05, 8.0), min_size=3, max_size=3))
def test_loss_is_convex_in_scale(seed, d):
    k, dm, mask = random_instance(np.random.default_rng(seed), (8, 8))
    d1, d2, d3 = sorted(d)
    l1, l2, l3 = (alignment_loss(x, dm, mask, k)[0] for x in (d1, d2, d3))
    assert l2 <= max(l1, l3) + 1e-12


def test_alignment_without_overlap():
    k = intrinsics_from_fov(90.0, 4, 4)
    empty = CoverageMask(np.zeros((4, 4), bool), np.zeros((4, 4)))
    dm = DepthMap(np.ones((4, 4)))
    for fn in (lambda: alignment_loss(1.0, dm, empty, k), lambda: align_scale_gd(dm, empty, k),
               lambda: align_scale_median(dm, empty, k)):
        with pytest.raises(AlignmentError):
            fn()


def test_gd_recovers_factor_two(rng):
    k = intrinsics_from_fov(90.0, 16, 16)
    D = rng.uniform(1, 3, (16, 16))
    mask = CoverageMask(np.ones((16, 16), bool), 2 * D)
    res = align_scale_gd(DepthMap(D), mask, k)
    assert res.scale == pytest.approx(2.0, abs=1e-3)
    assert res.converged
    assert abs(res.scale - align_scale_median(DepthMap(D), mask, k).scale) <= 1e-3


def test_gd_starts_at_optimum(rng):
    k = intrinsics_from_fov(90.0, 16, 16)
    D = rng.uniform(1, 3, (16, 16))
    res = align_scale_gd(DepthMap(D), CoverageMask(np.ones((16, 16), bool), D.copy()), k)
    assert res.scale == pytest.approx(1.0, abs=1e-6)
    assert res.converged


def ratio_instance(ratios, weights):
    # one row of principal-point-like pixels with w = 1 (unit focal, single column each)
    n = len(ratios)
    k = Intrinsics(1e9, 1e9, n / 2, 0.5, n, 1)  # huge focal: every ray weight is 1 to ~1e-16
    D = np.asarray(weights, float)[None, :]
    ref = D * np.asarray(ratios, float)[None, :]
    return k, DepthMap(D), CoverageMask(np.ones((1, n), bool), ref)


def test_gd_mixed_ratios():
    k, dm, mask = ratio_instance([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])
    assert align_scale_gd(dm, mask, k).scale == pytest.approx(2.0, abs=1e-3)


def test_gd_clamps_nonpositive_scale():
    k, dm, mask = ratio_instance([1e-3, 1e-3], [1.0, 1.0])
    res = align_scale_gd(dm, mask, k, alpha=5.0)
    assert res.scale == pytest.approx(1e-6)
    assert not res.converged


def test_median_exact_scale(rng):
    k = intrinsics_from_fov(90.0, 16, 16)
    D = rng.uniform(1, 3, (16, 16))
    mask = CoverageMask(np.ones((16, 16), bool), 1.37 * D)
    # the ratio is computed as ref / D, so equal up to one rounding step
    assert align_scale_median(DepthMap(D), mask, k).scale == pytest.approx(1.37, rel=2e-16, abs=0)


@pytest.mark.parametrize("ratios,weights,expected", [
    ([1.0, 2.0, 3.0], [1.0, 1.0, 1.0], 2.0),
    ([1.0, 4.0], [3.0, 1.0], 1.0),
])
def test_median_against_brute_force(ratios, weights, expected):
    k, dm, mask = ratio_instance(ratios, weights)
    got = align_scale_median(dm, mask, k).scale
    oracle = brute_force_minimizer(np.array(ratios), np.array(weights))
    assert got == pytest.approx(expected)
    assert got == pytest.approx(oracle, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(values=st.lists(st.floats(0.1, 10.0), min_size=1, max_size=15),
       seed=st.integers(0, 1000))
def test_weighted_median_minimizes_l1(values, seed):
    v = np.array(values)
    w = np.random.default_rng(seed).uniform(0.1, 2.0, len(v))
    m = weighted_lower_median(v, w)
    cost = lambda x: float(np.abs(x - v) @ w)
    assert all(cost(m) <= cost(x) + 1e-9 for x in v)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), s=st.floats(0.3, 3.0))
def test_alignment_scale_equivariance(seed, s):
    k, dm, mask = random_instance(np.random.default_rng(seed), (16, 16), (0.5, 2.0))
    base_m = align_scale_median(dm, mask, k).scale
    base_g = align_scale_gd(dm, mask, k).scale
    scaled = DepthMap(dm.values * s)
    assert align_scale_median(scaled, mask, k).scale == pytest.approx(base_m / s, rel=1e-12)
    assert align_scale_gd(scaled, mask, k).scale == pytest.approx(base_g / s, abs=1e-3)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_gd_matches_median_oracle(seed):
    k, dm, mask = random_instance(np.random.default_rng(seed), (16, 16))
    assert mask.count >= 100
    gd = align_scale_gd(dm, mask, k).scale
    assert abs(gd - align_scale_median(dm, mask, k).scale) <= 1e-3


# --- fusion -----------------------------------------------------------------

def synth_pairs(scene, traj, scales=None):
    k = traj.intrinsics
    pairs = []
    for i, pose in enumerate(traj):
        img, dm = render_scene_perspective(scene, pose, k)
        if scales is not None:
            dm = dm.scaled(scales[i])
        pairs.append((PerspectiveView(img, pose, k), dm))
    return pairs


def test_single_view_fusion(room):
    k = intrinsics_from_fov(90.0, 16, 16)
    img, dm = render_scene_perspective(room, make_pose(0.0), k)
    cloud, res = fuse_views([(PerspectiveView(img, make_pose(0.0), k), dm)])
    assert len(cloud) == int(dm.valid.sum())
    assert res[0].scale == 1.0


def test_coincident_views_add_almost_nothing(room):
    k = intrinsics_from_fov(90.0, 64, 64)
    img, dm = render_scene_perspective(room, make_pose(0.0), k)
    v = PerspectiveView(img, make_pose(0.0), k)
    cloud, _ = fuse_views([(v, dm), (v, dm)])
    assert len(cloud) - dm.valid.sum() <= 0.01 * dm.valid.size


def test_fusion_recovers_scales(room, small_traj):
    rng = np.random.default_rng(5)
    scales = rng.uniform(0.7, 1.4, len(small_traj))
    scales[0] = 1.0
    for solver in ("gd", "median"):
        _, res = fuse_views(synth_pairs(room, small_traj, scales), config=FusionConfig(solver=solver))
        d = np.array([r.scale for r in res])
        assert np.abs(d * scales - 1.0).max() <= 0.01


def test_fusion_monotone_and_masked(room, small_traj):
    pairs = synth_pairs(room, small_traj)
    k = small_traj.intrinsics
    prev = None
    sizes = []
    for n in range(1, len(pairs) + 1):
        cloud, _ = fuse_views(pairs[:n])
        sizes.append(len(cloud))
        if prev is not None:
            new = PointCloud(cloud.positions[len(prev):], cloud.colors[len(prev):])
            assert np.all(cloud.view_ids[len(prev):] == n - 1)
            _, _, before = project_cloud(prev, k, pairs[n - 1][0].pose)
            dilated = dilate_mask(before, 1)
            _, _, landed = project_cloud(new, k, pairs[n - 1][0].pose)
            assert not np.any(landed.covered & dilated.covered)
        prev = cloud
    assert sizes == sorted(sizes)


def test_fusion_geometry_is_sound(room, small_traj):
    cloud, _ = fuse_views(synth_pairs(room, small_traj))
    assert room.face_distance(cloud.positions).max() <= 1e-3 * room.diagonal * 4  # 64 px views are coarse


def test_unmasked_fusion_keeps_everything(room, small_traj):
    pairs = synth_pairs(room, small_traj)
    masked, _ = fuse_views(pairs)
    unmasked, _ = fuse_views(pairs, config=FusionConfig(use_mask=False))
    assert len(unmasked) == sum(int(dm.valid.sum()) for _, dm in pairs)
    assert len(unmasked) > len(masked)


def test_fusion_reports_view_without_overlap(room):
    k = intrinsics_from_fov(60.0, 16, 16)
    poses = [make_pose(0.0), make_pose(math.pi)]
    pairs = [(PerspectiveView(*render_scene_perspective(room, p, k)[:1], p, k),
              render_scene_perspective(room, p, k)[1]) for p in poses]
    with pytest.raises(AlignmentError) as exc:
        fuse_views(pairs)
    assert exc.value.view_index == 1
    assert "view 1" in str(exc.value)


def test_fusion_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(solver="newton")
    with pytest.raises(ValueError):
        FusionConfig(alpha=0.0)
    with pytest.raises(ValueError):
        FusionConfig(dilate_radius=-1)


def test_depthmap_validation():
    with pytest.raises(ValueError):
        DepthMap(np.ones(4))
    with pytest.raises(ValueError):
        DepthMap(np.zeros((2, 2)), np.ones((2, 2), bool))
    dm = DepthMap(np.array([[1.0, np.nan], [-1.0, 0.0]]))
    assert dm.valid.tolist() == [[True, False], [False, False]]
