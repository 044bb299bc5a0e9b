"""Synthetic scenes: placement, LiDAR/radar sampling, Doppler geometry."""

import math

import numpy as np
import pytest

from lrbev.errors import PlacementError
from lrbev.synth import (SceneSpec, box_surface_area, doppler_velocity,
                         generate_scene, lidar_sample, radar_sample)


def _corners(box):
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    out = []
    for sx in (-0.5, 0.5):
        for sy in (-0.5, 0.5):
            px, py = sx * box.length, sy * box.width
            out.append((box.cx + c * px - s * py, box.cy + s * px + c * py))
    return out


def _rects_overlap(a, b):
    """Separating-axis test for two rotated BEV rectangles (the brute-force
    overlap oracle, independent of the generator's circle test)."""
    for box in (a, b):
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        for ax in ((c, s), (-s, c)):
            pa = [ax[0] * x + ax[1] * y for x, y in _corners(a)]
            pb = [ax[0] * x + ax[1] * y for x, y in _corners(b)]
            if max(pa) < min(pb) or max(pb) < min(pa):
                return False
    return True


class TestGenerateScene:
    def test_zero_objects(self):
        scene = generate_scene(SceneSpec(num_objects=0), seed=1)
        assert scene.objects == ()

    def test_same_seed_identical(self):
        spec = SceneSpec(num_objects=5)
        assert generate_scene(spec, 7) == generate_scene(spec, 7)

    def test_objects_within_extent_and_disjoint(self):
        spec = SceneSpec(extent=20.0, num_objects=5)
        for seed in range(20):
            scene = generate_scene(spec, seed)
            assert len(scene.objects) == 5
            for box in scene.objects:
                for x, y in _corners(box):
                    assert abs(x) <= 20.0 and abs(y) <= 20.0
            for i, a in enumerate(scene.objects):
                for b in scene.objects[i + 1:]:
                    assert not _rects_overlap(a, b)

    def test_both_height_groups_occur(self):
        spec = SceneSpec(extent=25.0, num_objects=12)
        heights = [b.height for s in range(5)
                   for b in generate_scene(spec, s).objects]
        assert min(heights) < 2.0 < max(heights)

    def test_yaw_range(self):
        scene = generate_scene(SceneSpec(num_objects=8, extent=25.0), 3)
        for box in scene.objects:
            assert -math.pi < box.yaw <= math.pi

    def test_impossible_placement_raises(self):
        with pytest.raises(PlacementError):
            generate_scene(SceneSpec(extent=5.0, num_objects=50,
                                     max_attempts=200), 0)


class TestLidarSample:
    def test_count_matches_density_within_3_sigma(self):
        spec = SceneSpec(extent=15.0, num_objects=1, min_range=4.0)
        scene = generate_scene(spec, 11)
        box = scene.objects[0]
        area = box_surface_area(box)
        expected = 50.0 * area
        counts = [len(lidar_sample(scene, 50.0, 0.01, s, ground_density=0.0))
                  for s in range(10)]
        for n in counts:
            assert abs(n - expected) <= 3.5 * math.sqrt(expected)

    def test_z_range_respects_box_and_noise(self):
        spec = SceneSpec(extent=15.0, num_objects=1, min_range=4.0)
        scene = generate_scene(spec, 12)
        box = scene.objects[0]
        sigma = 0.05
        cloud = lidar_sample(scene, 50.0, sigma, 0, ground_density=0.0)
        lo = scene.ground_z - 3.5 * sigma
        hi = scene.ground_z + box.height + 3.5 * sigma
        # f4 quantization plus 3.5-sigma noise bound, allow stragglers
        inside = np.mean((cloud["z"] >= lo) & (cloud["z"] <= hi))
        assert inside > 0.998

    def test_sparse_limit_allows_empty(self):
        scene = generate_scene(SceneSpec(num_objects=0), 0)
        cloud = lidar_sample(scene, 1e-6, 0.0, 0, ground_density=0.0)
        assert len(cloud) == 0

    def test_zero_noise_points_on_surfaces(self):
        spec = SceneSpec(extent=15.0, num_objects=1, min_range=4.0)
        scene = generate_scene(spec, 13)
        box = scene.objects[0]
        cloud = lidar_sample(scene, 30.0, 0.0, 0, ground_density=0.0)
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        lx = c * (cloud["x"] - box.cx) + s * (cloud["y"] - box.cy)
        ly = -s * (cloud["x"] - box.cx) + c * (cloud["y"] - box.cy)
        on_top = np.abs(cloud["z"] - (scene.ground_z + box.height)) < 1e-5
        on_wall = (np.abs(np.abs(lx) - box.length / 2) < 1e-5) \
            | (np.abs(np.abs(ly) - box.width / 2) < 1e-5)
        assert np.all(on_top | on_wall)

    def test_deterministic(self):
        scene = generate_scene(SceneSpec(num_objects=3), 14)
        a = lidar_sample(scene, 20.0, 0.02, 5)
        b = lidar_sample(scene, 20.0, 0.02, 5)
        assert np.array_equal(a, b)


class TestDoppler:
    def test_stationary_object_zero_velocity(self):
        vx, vy = doppler_velocity((10.0, 3.0), (0.0, 0.0))
        assert vx == 0.0 and vy == 0.0

    def test_tangential_motion_zero_radial(self):
        # velocity perpendicular to the line of sight
        vx, vy = doppler_velocity((10.0, 0.0), (0.0, 3.0))
        assert vx == 0.0 and vy == 0.0

    def test_radial_motion_hand_projection(self):
        # object at (10,0) moving (5,0): line of sight is +x
        vx, vy = doppler_velocity((10.0, 0.0), (5.0, 0.0))
        assert abs(vx - 5.0) < 1e-12 and abs(vy) < 1e-12

    def test_sampled_returns_parallel_to_line_of_sight(self):
        spec = SceneSpec(extent=15.0, num_objects=5, stationary_fraction=0.0)
        for seed in range(10):
            scene = generate_scene(spec, seed)
            cloud = radar_sample(scene, (1, 3), seed)
            for rec in cloud:
                norm = math.hypot(rec["x"], rec["y"])
                cross = rec["vx"] * rec["y"] / norm - rec["vy"] * rec["x"] / norm
                assert abs(cross) < 1e-9

    def test_stationary_returns_exact_zero(self):
        spec = SceneSpec(extent=15.0, num_objects=4, stationary_fraction=1.0)
        scene = generate_scene(spec, 2)
        cloud = radar_sample(scene, (1, 2), 2)
        assert np.all(cloud["vx"] == 0.0) and np.all(cloud["vy"] == 0.0)


class TestRadarSample:
    def test_no_z_field(self):
        scene = generate_scene(SceneSpec(num_objects=3), 0)
        for variant in ("a", "b"):
            cloud = radar_sample(scene, (1, 3), 0, variant=variant)
            assert "z" not in cloud.dtype.names

    def test_variant_b_drops_optional_fields(self):
        scene = generate_scene(SceneSpec(num_objects=3), 0)
        cloud = radar_sample(scene, (1, 3), 0, variant="b")
        assert cloud.dtype.names == ("x", "y", "rcs", "t")

    def test_returns_per_object_bounds(self):
        scene = generate_scene(SceneSpec(num_objects=6, extent=25.0), 1)
        cloud = radar_sample(scene, (2, 4), 1)
        assert 2 * 6 <= len(cloud) <= 4 * 6

    def test_returns_on_bev_outline(self):
        scene = generate_scene(SceneSpec(num_objects=1, extent=15.0,
                                         min_range=4.0), 3)
        box = scene.objects[0]
        cloud = radar_sample(scene, (3, 3), 3)
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        for rec in cloud:
            lx = c * (rec["x"] - box.cx) + s * (rec["y"] - box.cy)
            ly = -s * (rec["x"] - box.cx) + c * (rec["y"] - box.cy)
            on_x = abs(abs(lx) - box.length / 2) < 1e-5 and abs(ly) <= box.width / 2 + 1e-5
            on_y = abs(abs(ly) - box.width / 2) < 1e-5 and abs(lx) <= box.length / 2 + 1e-5
            assert on_x or on_y

    def test_deterministic(self):
        scene = generate_scene(SceneSpec(num_objects=4), 9)
        assert np.array_equal(radar_sample(scene, (1, 3), 9),
                              radar_sample(scene, (1, 3), 9))
