"""Synthetic-scene pipeline tests. Analytic primitives make every check
exact: ray casts give true depth/visibility, SDFs verify surface membership,
and face areas give closed-form sampling fractions."""

import json

import numpy as np
import pytest

from scenerecon.geometry import CameraView, PointCloud, frustum_cull
from scenerecon.metrics import density_variance, hole_ratio
from scenerecon.synthdata import (
    DatasetConfig,
    Primitive,
    SceneSpec,
    backproject_union,
    build_dataset,
    build_visible_cloud,
    generate_scene,
    load_sample,
    make_scene_sample,
    occluded_fraction,
    point_visibility,
    read_manifest,
    render_depth,
    render_shaded,
    sample_complete_cloud,
    surface_distance,
    validate_manifest,
    ROOM_HI,
    ROOM_LO,
)



def axis_camera(width=65, height=65, fx=60.0, z=0.0) -> CameraView:
    """Odd-sized camera at (0,0,z) looking +z: pixel (32,32) center sits
    exactly on the optical axis."""
    intr = np.array([[fx, 0, width / 2], [0, fx, height / 2], [0, 0, 1.0]])
    pose = np.eye(4)
    pose[2, 3] = z
    return CameraView(intrinsics=intr, world_from_camera=pose, width=width, height=height,
                      near=0.01, far=100.0)


class TestGenerateScene:
    def test_same_seed_bit_identical(self):
        a = json.dumps(generate_scene(42).to_dict())
        b = json.dumps(generate_scene(42).to_dict())
        assert a == b

    def test_containment_1000_seeds(self):
        for seed in range(1000):
            spec = generate_scene(seed)
            assert 3 <= len(spec.primitives) <= 12
            for prim in spec.primitives:
                r = prim.bounding_radius()
                assert np.all(prim.center - r >= ROOM_LO - 1e-9)
                assert np.all(prim.center + r <= ROOM_HI + 1e-9)

    def test_layout_diversity(self):
        hashes = {json.dumps(generate_scene(s).to_dict()) for s in range(100)}
        assert len(hashes) >= 90

    def test_round_trip_serialization(self):
        spec = generate_scene(7)
        back = SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert json.dumps(back.to_dict()) == json.dumps(spec.to_dict())


class TestRenderDepth:
    def test_frontal_box_face_depth(self):
        d = 3.0
        scene = SceneSpec(0, [Primitive("box", [0, 0, d + 0.5], half_extents=[1, 1, 0.5])])
        depth = render_depth(scene, axis_camera())
        assert depth[32, 32] == pytest.approx(d, abs=1e-12)

    def test_empty_scene_all_zero(self):
        depth = render_depth(SceneSpec(0, []), axis_camera())
        np.testing.assert_array_equal(depth, 0.0)

    def test_sphere_center_pixel(self):
        d, r = 4.0, 1.5
        scene = SceneSpec(0, [Primitive("sphere", [0, 0, d], radius=r)])
        depth = render_depth(scene, axis_camera())
        assert depth[32, 32] == pytest.approx(d - r, abs=1e-12)

    def test_rotated_box_depth_against_analytic(self):
        # 45-degree yawed unit box straight ahead: the near edge faces the camera
        yaw = np.pi / 4
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
        h = np.array([0.5, 0.5, 0.5])
        d = 5.0
        scene = SceneSpec(0, [Primitive("box", [0, 0, d], half_extents=h, rotation=rot)])
        depth = render_depth(scene, axis_camera())
        # the edge closest to the camera is at distance d - half diagonal
        assert depth[32, 32] == pytest.approx(d - np.hypot(0.5, 0.5), abs=1e-9)

    def test_backproject_round_trip_on_surface(self):
        scene = generate_scene(5)
        rng = np.random.default_rng(0)
        from scenerecon.synthdata import place_camera
        from scenerecon.geometry import backproject_depth

        view = place_camera(rng, 32, 32)
        view.depth = render_depth(scene, view)
        pts = backproject_depth(view).points
        assert surface_distance(scene, pts).max() < 1e-6

    def test_shaded_render_range_and_miss(self):
        scene = SceneSpec(0, [Primitive("sphere", [0, 0, 3], radius=1.0)])
        img = render_shaded(scene, axis_camera())
        assert img.shape == (65, 65, 3)
        hit = img[32, 32]
        assert 0.2 <= hit[0] <= 1.0 and hit[0] == hit[1] == hit[2]
        assert img[0, 0, 0] == 0.0  # corner ray misses the sphere


class TestCompleteCloud:
    def test_single_box_face_fractions(self):
        h = np.array([0.3, 0.2, 0.1])
        scene = SceneSpec(0, [Primitive("box", [0, 0, 3.0], half_extents=h)])
        view = axis_camera()
        cloud = sample_complete_cloud(scene, [view], 100_000, np.random.default_rng(1))
        pts = cloud.points  # identity pose: first-view frame == world
        local = pts - np.array([0, 0, 3.0])
        on_face = np.abs(np.abs(local) - h) < 1e-9
        counts = np.array([on_face[:, i].sum() for i in range(3)], dtype=float)
        areas = 8 * np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        got = counts / counts.sum()
        want = areas / areas.sum()
        np.testing.assert_allclose(got, want, atol=0.02)

    def test_all_points_on_surfaces(self):
        scene = generate_scene(3)
        rng = np.random.default_rng(2)
        from scenerecon.synthdata import place_camera

        views = [place_camera(rng, 32, 32) for _ in range(2)]
        cloud = sample_complete_cloud(scene, views, 3000, rng)
        world = cloud.transformed(views[0].world_from_camera)
        assert surface_distance(scene, world.points).max() < 1e-6

    def test_normals_attached_and_unit(self):
        scene = generate_scene(3)
        rng = np.random.default_rng(2)
        from scenerecon.synthdata import place_camera

        views = [place_camera(rng, 32, 32)]
        cloud = sample_complete_cloud(scene, views, 500, rng)
        assert cloud.has_normals

    def test_fully_occluded_box_still_contributes(self):
        hidden = Primitive("box", [0, 0, 6.0], half_extents=[0.4, 0.4, 0.4])
        blocker = Primitive("box", [0, 0, 3.0], half_extents=[1.5, 1.5, 0.5])
        scene = SceneSpec(0, [blocker, hidden])
        view = axis_camera(fx=120.0)  # narrow FOV: blocker covers everything
        surf, _ = hidden.sample_surface(400, np.random.default_rng(0))
        vis = point_visibility(scene, [view], surf)
        assert not vis.any(), "construction must fully occlude the hidden box"
        cloud = sample_complete_cloud(scene, [view], 4000, np.random.default_rng(1))
        d_hidden = np.abs(hidden.sdf(cloud.points))
        assert (d_hidden < 1e-9).sum() > 100

    def test_no_surface_in_frustum_errors(self):
        scene = SceneSpec(0, [Primitive("sphere", [0, 0, -5.0], radius=0.5)])  # behind
        with pytest.raises(ValueError, match="sampling rounds"):
            sample_complete_cloud(scene, [axis_camera()], 100, np.random.default_rng(0),
                                  max_rounds=5)

    def test_complete_cloud_survives_frustum_cull(self):
        sample = make_scene_sample("t", "train", 11, 2, n_complete=800, image_size=32)
        world = sample.complete_cloud.transformed(sample.views[0].world_from_camera)
        kept = frustum_cull(world, sample.views)
        assert len(kept) == len(world)


class TestVisibleCloud:
    def test_single_view_equals_filtered_backprojection(self):
        scene = generate_scene(9)
        rng = np.random.default_rng(4)
        from scenerecon.geometry import backproject_depth, default_voxel_size, to_first_view_frame, voxel_filter
        from scenerecon.synthdata import place_camera

        view = place_camera(rng, 32, 32)
        view.depth = render_depth(scene, view)
        got = build_visible_cloud([view])
        union = backproject_depth(view)
        want = to_first_view_frame(voxel_filter(union, default_voxel_size(union)), view)
        np.testing.assert_array_equal(got.points, want.points)

    def test_two_identical_views_within_voxel_hausdorff(self):
        scene = generate_scene(9)
        rng = np.random.default_rng(4)
        from scenerecon.synthdata import place_camera

        view = place_camera(rng, 32, 32)
        view.depth = render_depth(scene, view)
        one = build_visible_cloud([view], voxel_size=0.05)
        two = build_visible_cloud([view, view], voxel_size=0.05)
        d2 = ((one.points[:, None] - two.points[None]) ** 2).sum(-1)
        hausdorff = max(np.sqrt(d2.min(1)).max(), np.sqrt(d2.min(0)).max())
        assert hausdorff <= 0.05

    def test_never_contains_fully_occluded_surface_points(self):
        hidden = Primitive("box", [0, 0, 6.0], half_extents=[0.4, 0.4, 0.4])
        blocker = Primitive("box", [0, 0, 3.0], half_extents=[1.5, 1.5, 0.5])
        scene = SceneSpec(0, [blocker, hidden])
        view = axis_camera(fx=120.0)
        view.depth = render_depth(scene, view)
        visible = build_visible_cloud([view], voxel_size=0.02)
        # no visible-cloud point may lie on the hidden box's surface
        assert np.abs(hidden.sdf(visible.points)).min() > 0.05

    def test_voxel_filter_halves_density_variance_on_overlap(self):
        # partially overlapping views duplicate points in the co-visible band
        from conftest import overlap_camera_pair

        scene = generate_scene(21)
        views = overlap_camera_pair()
        for v in views:
            v.depth = render_depth(scene, v)
        raw = backproject_union(views)
        filtered = build_visible_cloud(views)
        dv_raw = density_variance(raw, k=10)
        dv_filtered = density_variance(filtered, k=10)
        assert dv_filtered <= 0.5 * dv_raw


class TestSceneSample:
    def test_normalization_into_cube(self):
        sample = make_scene_sample("t", "train", 2, 1, n_complete=400, image_size=16)
        norm = sample.normalized_complete()
        assert norm.min() >= -0.9 - 1e-9 and norm.max() <= 0.9 + 1e-9
        # max-extent axis touches the bounds exactly
        spans = norm.max(0) - norm.min(0)
        assert spans.max() == pytest.approx(1.8, abs=1e-9)
        back = sample.denormalize(norm)
        np.testing.assert_allclose(back, sample.complete_cloud.points, atol=1e-12)

    def test_complete_covers_visible(self):
        sample = make_scene_sample("t", "train", 4, 2, n_complete=4096, image_size=24)
        union = PointCloud(np.concatenate([sample.complete_cloud.points,
                                           sample.visible_cloud.points]))
        from scenerecon.geometry import default_voxel_size

        tau = 2.0 * default_voxel_size(union)
        assert hole_ratio(sample.complete_cloud, sample.visible_cloud, tau) <= 0.02

    def test_occluded_fraction_positive(self):
        sample = make_scene_sample("t", "train", 5, 1, n_complete=600, image_size=24)
        world = sample.complete_cloud.transformed(sample.views[0].world_from_camera)
        frac = occluded_fraction(sample.scene, sample.views, world.points)
        assert 0.0 < frac < 1.0


class TestBuildDataset:
    def test_manifest_counts_and_validation(self, tmp_path):
        cfg = DatasetConfig(train=5, val=3, k_choices=(1, 2), n_complete=128, image_size=16)
        manifest = build_dataset(cfg, tmp_path / "data")
        records = read_manifest(manifest)
        assert len(records) == 8
        for rec in records:
            assert len(rec["views"]) == rec["k"]
        assert validate_manifest(manifest) == 8
        splits = {r["split"] for r in records}
        assert splits == {"train", "val"}

    def test_rebuild_byte_identical(self, tmp_path):
        cfg = DatasetConfig(train=2, val=1, n_complete=64, image_size=16)
        m1 = build_dataset(cfg, tmp_path / "a")
        m2 = build_dataset(cfg, tmp_path / "b")
        assert m1.read_bytes() == m2.read_bytes()
        for rec in read_manifest(m1):
            p1 = (tmp_path / "a" / rec["complete"]).read_bytes()
            p2 = (tmp_path / "b" / rec["complete"]).read_bytes()
            assert p1 == p2

    def test_load_sample_round_trip(self, tmp_path):
        cfg = DatasetConfig(train=1, val=1, n_complete=64, image_size=16)
        manifest = build_dataset(cfg, tmp_path / "data")
        rec = read_manifest(manifest, "val")[0]
        sample = load_sample(rec, manifest.parent)
        assert len(sample.complete) == 64
        assert len(sample.images) == rec["k"]
        assert sample.images[0].shape == (16, 16, 3)
        norm = sample.normalized_complete()
        assert np.abs(norm).max() <= 0.9 + 1e-6
