"""Property suite: every brute-force, permutation and gradient oracle the
modules declare, runnable as one report.

Each property draws its own seeded instances; ``oracle_suite`` runs all of
them (sorted by name) and reports pass/fail with counts. Fault names inject
deliberate defects so the negative controls stay honest:

* ``ball-radius-r``  - height queries use the full cell size as ball radius,
  breaking the non-overlap guarantee;
* ``offset-bias``    - decode sees offsets shifted by a meter, breaking the
  render/decode round trip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .config import desk_config, tiny_config
from .errors import ConfigError
from .evalmetrics import eval_detections
from .grids import GridSpec, pillarize, voxel_encode, voxelize
from .heads import (HeadOutputs, compute_loss, decode_detections,
                    outputs_from_targets, render_targets)
from .l2r import (BevFusionConfig, HeightFusionConfig, ball_query,
                  ball_query_brute, bev_query, bev_query_brute, height_fuse,
                  query_balls_disjoint, segment_query_points)
from .nn import (Conv2dParams, FeatureMap, MlpParams, conv2d_backward,
                 conv2d_forward, finite_diff_check, max_reduce,
                 max_reduce_backward, mlp_backward, mlp_forward)
from .pipeline import detections_to_jsonl, generate_clouds, run_pipeline
from .synth import (DEFAULT_CLASSES, GroundTruthBox, SceneSpec, generate_scene,
                    lidar_sample, radar_sample, wrap_angle)

FAULTS = ("ball-radius-r", "offset-bias")


@dataclass
class PropertyResult:
    name: str
    passed: bool
    checked: int
    failures: list

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        msg = f"{status}  {self.name}  ({self.checked} checks)"
        if self.failures:
            msg += f"  first failure: {self.failures[0]}"
        return msg


def _mlps(rng, dims, rectify_last=False):
    return MlpParams.init(dims, rng, rectify_last=rectify_last)


def _height_cfg(rng, cell_size=1.0, pillar_height=8.0, z_min=-5.0,
                ball_radius=0.0, feature_dim=8):
    from .l2r import num_height_segments
    m = num_height_segments(pillar_height, cell_size)
    return HeightFusionConfig(
        cell_size=cell_size, pillar_height=pillar_height, z_min=z_min,
        point_mlp=_mlps(rng, (5, 8, feature_dim)),
        merge_mlp=_mlps(rng, (m * feature_dim, 16, feature_dim)),
        ball_radius=ball_radius)


# --------------------------------------------------------------------------
# tensor-core properties
# --------------------------------------------------------------------------

def check_max_permutation(seeds: int, fault=None) -> PropertyResult:
    failures = []
    for s in range(seeds):
        rng = np.random.default_rng([3, s])
        rows = rng.normal(size=(int(rng.integers(1, 12)), int(rng.integers(1, 9))))
        base = max_reduce(rows)
        for _ in range(5):
            perm = rng.permutation(len(rows))
            if not np.array_equal(max_reduce(rows[perm]), base):
                failures.append(f"seed {s}: permutation changed the max")
                break
    return PropertyResult("nn.max-permutation", not failures, seeds, failures)


def check_conv_identity(seeds: int, fault=None) -> PropertyResult:
    failures = []
    for s in range(seeds):
        rng = np.random.default_rng([4, s])
        c, h, w = int(rng.integers(1, 5)), int(rng.integers(2, 9)), int(rng.integers(2, 9))
        m = FeatureMap(rng.normal(size=(c, h, w)))
        kernel = np.zeros((c, c, 1, 1))
        kernel[np.arange(c), np.arange(c), 0, 0] = 1.0
        out = conv2d_forward(m, Conv2dParams(kernel, np.zeros(c)))
        if not np.array_equal(out.data, m.data):
            failures.append(f"seed {s}: identity conv changed the map")
    return PropertyResult("nn.conv-identity", not failures, seeds, failures)


def _mlp_instance_away_from_kinks(rng, margin=1e-2):
    """Random MLP + input whose pre-activations all clear the rectifier kink."""
    for _ in range(200):
        dims = (int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(1, 4)))
        p = _mlps(rng, dims)
        x = rng.normal(size=dims[0])
        a = x
        ok = True
        for k, (w, b) in enumerate(p.layers):
            z = w @ a + b
            if k < len(p.layers) - 1:
                if np.abs(z).min() < margin:
                    ok = False
                    break
                a = np.maximum(z, 0.0)
        if ok:
            return p, x
    raise RuntimeError("could not sample an MLP instance away from kinks")


def check_grad_mlp(seeds: int, fault=None) -> PropertyResult:
    failures = []
    for s in range(seeds):
        rng = np.random.default_rng([5, s])
        p, x = _mlp_instance_away_from_kinks(rng)
        c = rng.normal(size=p.out_dim)
        theta = p.to_vector()

        def f(v):
            return float(c @ mlp_forward(x, p.from_vector(v)))

        def grad(v):
            _, gl = mlp_backward(x, p.from_vector(v), c)
            return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in gl])

        rep = finite_diff_check(f, grad, theta)
        if not rep.passed:
            failures.append(f"seed {s}: rel diff {rep.max_rel_diff:.2e}")
    return PropertyResult("nn.grad-mlp", not failures, seeds, failures)


def check_grad_conv(seeds: int, fault=None) -> PropertyResult:
    failures = []
    for s in range(seeds):
        rng = np.random.default_rng([6, s])
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        m = FeatureMap(rng.normal(size=(cin, 5, 6)))
        p = Conv2dParams.init(cin, cout, 3, rng, padding=1)
        c = rng.normal(size=(cout, 5, 6))
        theta = p.to_vector()

        def f(v):
            return float((c * conv2d_forward(m, p.from_vector(v)).data).sum())

        def grad(v):
            _, gk, gb = conv2d_backward(m, p.from_vector(v), c)
            return np.concatenate([gk.ravel(), gb])

        rep = finite_diff_check(f, grad, theta)
        if not rep.passed:
            failures.append(f"seed {s}: rel diff {rep.max_rel_diff:.2e}")
    return PropertyResult("nn.grad-conv", not failures, seeds, failures)


def check_grad_max(seeds: int, fault=None) -> PropertyResult:
    failures = []
    for s in range(seeds):
        rng = np.random.default_rng([7, s])
        n, d = int(rng.integers(2, 8)), int(rng.integers(1, 6))
        rows = rng.normal(size=(n, d))
        gaps = np.sort(rows, axis=0)
        if n > 1 and (gaps[-1] - gaps[-2]).min() < 1e-2:
            continue   # kink-adjacent sample, skip per the check contract
        c = rng.normal(size=d)
        theta = rows.ravel()

        def f(v):
            return float(c @ max_reduce(v.reshape(n, d)))

        def grad(v):
            return max_reduce_backward(v.reshape(n, d), c).ravel()

        rep = finite_diff_check(f, grad, theta)
        if not rep.passed:
            failures.append(f"seed {s}: rel diff {rep.max_rel_diff:.2e}")
    return PropertyResult("nn.grad-max", not failures, seeds, failures)


# --------------------------------------------------------------------------
# scene-io properties
# --------------------------------------------------------------------------

def check_scene_determinism(seeds: int, fault=None) -> PropertyResult:
    failures = []
    spec = SceneSpec(extent=12.0, num_objects=4)
    for s in range(seeds):
        a = generate_scene(spec, s)
        b = generate_scene(spec, s)
        if a != b:
            failures.append(f"seed {s}: scenes differ")
            continue
        la = lidar_sample(a, 20.0, 0.02, s, ground_density=0.5)
        lb = lidar_sample(b, 20.0, 0.02, s, ground_density=0.5)
        ra = radar_sample(a, (1, 3), s)
        rb = radar_sample(b, (1, 3), s)
        if not (np.array_equal(la, lb) and np.array_equal(ra, rb)):
            failures.append(f"seed {s}: clouds differ")
    return PropertyResult("scene.determinism", not failures, seeds, failures)


def check_doppler(seeds: int, fault=None) -> PropertyResult:
    failures = []
    spec = SceneSpec(extent=12.0, num_objects=5, stationary_fraction=0.2)
    for s in range(seeds):
        scene = generate_scene(spec, s)
        cloud = radar_sample(scene, (1, 3), s)
        for rec in cloud:
            norm = math.hypot(rec["x"], rec["y"])
            ux, uy = rec["x"] / norm, rec["y"] / norm
            cross = rec["vx"] * uy - rec["vy"] * ux
            if abs(cross) >= 1e-9:
                failures.append(f"seed {s}: |cross| = {abs(cross):.2e}")
                break
    return PropertyResult("scene.doppler", not failures, seeds, failures)


def check_accumulate(seeds: int, fault=None) -> PropertyResult:
    from .cloud import Pose, accumulate_sweeps
    failures = []
    spec = SceneSpec(extent=12.0, num_objects=3)
    for s in range(seeds):
        scene = generate_scene(spec, s)
        sweeps = [lidar_sample(scene, 5.0, 0.0, [s, k], ground_density=0.0)
                  for k in range(3)]
        poses = [Pose(), Pose(tx=1.0), Pose(tx=0.0, ty=-2.0)]
        merged = accumulate_sweeps(sweeps, poses)
        if len(merged) != sum(len(c) for c in sweeps):
            failures.append(f"seed {s}: count not conserved")
            continue
        n0 = len(sweeps[0])
        n1 = len(sweeps[1])
        if not np.array_equal(merged[:n0], sweeps[0]):
            failures.append(f"seed {s}: identity pose modified points")
            continue
        if n1 and not np.array_equal(merged[n0:n0 + n1]["x"], sweeps[1]["x"] + 1.0):
            failures.append(f"seed {s}: translation not exact")
    return PropertyResult("scene.accumulate", not failures, seeds, failures)


# --------------------------------------------------------------------------
# grid-encoding properties
# --------------------------------------------------------------------------

def _random_grid(rng) -> GridSpec:
    cell = float(rng.choice([0.25, 0.4, 0.5]))
    n = int(rng.integers(4, 12))
    nz = int(rng.integers(1, 5))
    return GridSpec(origin=(-cell * n / 2, -cell * n / 2, -2.0),
                    cell=(cell, cell, 1.0), counts=(n, n, nz))


def check_index_oracle(seeds: int, fault=None) -> PropertyResult:
    failures = []
    checked = 0
    for s in range(seeds):
        rng = np.random.default_rng([8, s])
        spec = _random_grid(rng)
        n = 200
        pts = np.zeros(n, dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                                 ("intensity", "<f8"), ("t", "<f8")])
        span = spec.cell[0] * spec.nx
        pts["x"] = rng.uniform(spec.origin[0] - 0.2 * span,
                               spec.origin[0] + 1.2 * span, n)
        pts["y"] = rng.uniform(spec.origin[1] - 0.2 * span,
                               spec.origin[1] + 1.2 * span, n)
        pts["z"] = rng.uniform(spec.origin[2] - 1.0,
                               spec.origin[2] + spec.cell[2] * spec.nz + 1.0, n)
        # exact boundary hits must land lower-inclusive
        pts["x"][:3] = spec.origin[0]
        pts["y"][:3] = spec.origin[1]
        pts["z"][:3] = spec.origin[2]
        vs = voxelize(pts, spec, max_points_per_voxel=10**9)
        member_of = {}
        for key, members in vs.occupied.items():
            for i in members:
                member_of[i] = key
        dropped = 0
        for i in range(n):
            ix = math.floor((pts["x"][i] - spec.origin[0]) / spec.cell[0])
            iy = math.floor((pts["y"][i] - spec.origin[1]) / spec.cell[1])
            iz = math.floor((pts["z"][i] - spec.origin[2]) / spec.cell[2])
            inside = (0 <= ix < spec.nx and 0 <= iy < spec.ny and 0 <= iz < spec.nz)
            checked += 1
            if inside:
                if member_of.get(i) != (ix, iy, iz):
                    failures.append(f"seed {s}: point {i} landed in "
                                    f"{member_of.get(i)} not {(ix, iy, iz)}")
            else:
                dropped += 1
                if i in member_of:
                    failures.append(f"seed {s}: out-of-range point {i} kept")
        if dropped != vs.dropped:
            failures.append(f"seed {s}: drop count {vs.dropped} != {dropped}")
    return PropertyResult("grids.index-oracle", not failures, checked, failures)


def check_grid_permutation(seeds: int, fault=None) -> PropertyResult:
    failures = []
    spec = SceneSpec(extent=8.0, num_objects=2, min_range=1.5,
                     classes=DEFAULT_CLASSES)
    grid = GridSpec(origin=(-8.0, -8.0, -5.0), cell=(0.5, 0.5, 2.0),
                    counts=(32, 32, 4))
    pillar_grid = GridSpec(origin=(-8.0, -8.0, -5.0), cell=(2.0, 2.0, 8.0),
                           counts=(8, 8, 1))
    for s in range(seeds):
        rng = np.random.default_rng([9, s])
        scene = generate_scene(spec, s)
        cloud = lidar_sample(scene, 8.0, 0.02, s, ground_density=0.2)
        radar = radar_sample(scene, (1, 3), s)
        mlp = _mlps(rng, (8, 8, 6))
        pmlp = _mlps(rng, (9, 8, 6))
        base = voxel_encode(voxelize(cloud, grid, 10**9), mlp).features
        base_pillars = pillarize(radar, pillar_grid, pmlp).map
        for _ in range(3):
            sh = rng.permutation(len(cloud))
            feats = voxel_encode(voxelize(cloud[sh], grid, 10**9), mlp).features
            if (set(feats) != set(base)
                    or any(not np.array_equal(feats[k], base[k]) for k in base)):
                failures.append(f"seed {s}: voxel features changed under shuffle")
                break
            shr = rng.permutation(len(radar))
            pm = pillarize(radar[shr], pillar_grid, pmlp).map
            if not np.array_equal(pm.data, base_pillars.data):
                failures.append(f"seed {s}: pillar map changed under shuffle")
                break
    return PropertyResult("grids.permutation", not failures, seeds, failures)


def check_grid_sparsity(seeds: int, fault=None) -> PropertyResult:
    failures = []
    spec = SceneSpec(extent=8.0, num_objects=3, min_range=1.5)
    pillar_grid = GridSpec(origin=(-8.0, -8.0, -5.0), cell=(1.0, 1.0, 8.0),
                           counts=(16, 16, 1))
    for s in range(seeds):
        rng = np.random.default_rng([10, s])
        scene = generate_scene(spec, s)
        radar = radar_sample(scene, (1, 3), s)
        pm = pillarize(radar, pillar_grid, _mlps(rng, (9, 8, 6)))
        nonzero = int((np.abs(pm.map.data) > 0).any(axis=0).sum())
        if nonzero != len(pm.occupied):
            failures.append(f"seed {s}: {nonzero} non-zero cells for "
                            f"{len(pm.occupied)} pillars")
    return PropertyResult("grids.sparsity", not failures, seeds, failures)


# --------------------------------------------------------------------------
# l2r-fusion properties
# --------------------------------------------------------------------------

def check_segment_heights(seeds: int, fault=None) -> PropertyResult:
    failures = []
    checked = 0
    grid = GridSpec(origin=(-6.0, -6.0, -5.0), cell=(0.6, 0.6, 8.0), counts=(20, 20, 1))
    for s in range(seeds):
        rng = np.random.default_rng([11, s])
        z_min = float(rng.uniform(-6.0, 0.0))
        r = float(rng.uniform(0.2, 2.0))
        h = float(rng.uniform(2.0 * r, 12.0))
        cfg = _height_cfg(rng, cell_size=r, pillar_height=h, z_min=z_min)
        pts = segment_query_points((3, 4), cfg, grid)
        for q in pts:
            checked += 1
            if q.z != z_min + r * (2 * q.segment - 1):
                failures.append(f"seed {s}: segment {q.segment} off")
    return PropertyResult("l2r.segment-heights", not failures, checked, failures)


def _query_scene(rng, n_points):
    pts = rng.uniform(-3.0, 3.0, size=(n_points, 3))
    return pts


def check_ball_query_oracle(seeds: int, fault=None) -> PropertyResult:
    failures = []
    for s in range(seeds):
        rng = np.random.default_rng([12, s])
        pts = _query_scene(rng, int(rng.integers(10, 600)))
        for _ in range(3):
            q = rng.uniform(-2.0, 2.0, size=3)
            radius = float(rng.uniform(0.1, 1.0))
            k = int(rng.integers(1, 20))
            fast = ball_query(q, pts, radius, k)
            brute = ball_query_brute(q, pts, radius, k)
            if not (np.array_equal(fast.indices, brute.indices)
                    and np.array_equal(fast.distances, brute.distances)):
                failures.append(f"seed {s}: ball query mismatch")
                break
    return PropertyResult("l2r.ball-query-oracle", not failures, seeds, failures)


def check_bev_query_oracle(seeds: int, fault=None) -> PropertyResult:
    failures = []
    for s in range(seeds):
        rng = np.random.default_rng([13, s])
        n = int(rng.integers(8, 40))
        occupancy = {}
        for _ in range(int(rng.integers(1, n * 2))):
            occupancy[(int(rng.integers(0, n)), int(rng.integers(0, n)))] = \
                rng.normal(size=4)
        mode = "window" if rng.uniform() < 0.5 else "scalar"
        cfg = BevFusionConfig(grid_mlp=_mlps(rng, (6, 8, 4)),
                              window=(int(rng.integers(0, 4)), int(rng.integers(0, 4))),
                              max_group=int(rng.integers(1, 10)),
                              distance_mode=mode)
        for _ in range(3):
            cell = (int(rng.integers(0, n)), int(rng.integers(0, n)))
            fast = bev_query(cell, occupancy, cfg)
            brute = bev_query_brute(cell, occupancy, cfg)
            if not (np.array_equal(fast.indices, brute.indices)
                    and np.array_equal(fast.distances, brute.distances)):
                failures.append(f"seed {s}: bev query mismatch at {cell}")
                break
    return PropertyResult("l2r.bev-query-oracle", not failures, seeds, failures)


def check_non_overlap(seeds: int, fault=None) -> PropertyResult:
    """Consecutive query balls must be pairwise disjoint for every configured
    geometry when the radius is half the cell size."""
    failures = []
    checked = 0
    geometries = [(8.0, 1.0), (8.0, 0.6), (8.0, 2.0), (7.0, 0.32)]
    rng = np.random.default_rng(14)
    for s in range(seeds):
        h = float(rng.uniform(2.0, 12.0))
        r = float(rng.uniform(0.2, 2.0))
        geometries.append((h, r))
    for h, r in geometries:
        radius = r if fault == "ball-radius-r" else 0.0
        cfg = _height_cfg(np.random.default_rng(15), cell_size=r, pillar_height=h,
                          ball_radius=radius)
        checked += 1
        if not query_balls_disjoint(cfg):
            failures.append(f"(h={h:.3g}, r={r:.3g}): query balls touch or overlap")
    return PropertyResult("l2r.non-overlap", not failures, checked, failures)


def check_query_locality(seeds: int, fault=None) -> PropertyResult:
    """Perturbing a point that stays outside every query ball leaves the
    height feature bit-identical."""
    failures = []
    grid = GridSpec(origin=(-6.0, -6.0, -5.0), cell=(1.0, 1.0, 8.0), counts=(12, 12, 1))
    for s in range(seeds):
        rng = np.random.default_rng([16, s])
        cfg = _height_cfg(rng, cell_size=1.0)
        n = 60
        cloud = np.zeros(n, dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                                   ("intensity", "<f8"), ("t", "<f8")])
        cloud["x"] = rng.uniform(-5.0, 5.0, n)
        cloud["y"] = rng.uniform(-5.0, 5.0, n)
        cloud["z"] = rng.uniform(-5.0, 3.0, n)
        cloud["intensity"] = rng.uniform(0, 1, n)
        cell = (7, 7)
        qpts = segment_query_points(cell, cfg, grid)
        base, _ = height_fuse(cell, cfg, cloud, grid)
        xyz = np.stack([cloud["x"], cloud["y"], cloud["z"]], axis=1)
        margin = 0.2
        far = [i for i in range(n)
               if all(np.linalg.norm(xyz[i] - np.array([q.x, q.y, q.z]))
                      > cfg.ball_radius + margin for q in qpts)]
        if not far:
            continue
        i = far[int(rng.integers(0, len(far)))]
        moved = cloud.copy()
        moved["x"][i] += float(rng.uniform(-margin / 2, margin / 2))
        moved["z"][i] += float(rng.uniform(-margin / 2, margin / 2))
        after, _ = height_fuse(cell, cfg, moved, grid)
        if not np.array_equal(base, after):
            failures.append(f"seed {s}: far point changed the height feature")
    return PropertyResult("l2r.query-locality", not failures, seeds, failures)


def check_height_sensitivity(seeds: int, fault=None) -> PropertyResult:
    """Moving in-pillar LiDAR mass to a different height segment must change
    the height feature under generic weights."""
    failures = []
    grid = GridSpec(origin=(-6.0, -6.0, -5.0), cell=(1.0, 1.0, 8.0), counts=(12, 12, 1))
    hits = 0
    for s in range(seeds):
        rng = np.random.default_rng([17, s])
        cfg = _height_cfg(rng, cell_size=1.0)
        cell = (4, 8)
        qpts = segment_query_points(cell, cfg, grid)
        n = 8
        cloud = np.zeros(n, dtype=[("x", "<f8"), ("y", "<f8"), ("z", "<f8"),
                                   ("intensity", "<f8"), ("t", "<f8")])
        cx, cy = grid.cell_center_xy(*cell)
        cloud["x"] = cx + rng.uniform(-0.2, 0.2, n)
        cloud["y"] = cy + rng.uniform(-0.2, 0.2, n)
        cloud["intensity"] = rng.uniform(0, 1, n)
        za = qpts[0].z + rng.uniform(-0.2, 0.2, n)
        zb = qpts[1].z + rng.uniform(-0.2, 0.2, n)
        cloud_a = cloud.copy()
        cloud_a["z"] = za
        cloud_b = cloud.copy()
        cloud_b["z"] = zb
        fa, _ = height_fuse(cell, cfg, cloud_a, grid)
        fb, _ = height_fuse(cell, cfg, cloud_b, grid)
        if not np.array_equal(fa, fb):
            hits += 1
    passed = hits >= max(1, int(0.95 * seeds))
    failures = [] if passed else [f"only {hits}/{seeds} seeds were sensitive"]
    return PropertyResult("l2r.height-sensitivity", passed, seeds, failures)


def check_pseudo_count(seeds: int, fault=None) -> PropertyResult:
    failures = []
    cfg = tiny_config()
    for s in range(min(seeds, 5)):
        _, lidar, radar = generate_clouds(cfg, s)
        result = run_pipeline(cfg, lidar, radar)
        st = result.stats
        if (st["l2r_fusion"]["pseudo_features"]
                != st["grid_encoding"]["radar_pillars"]):
            failures.append(f"seed {s}: pseudo feature count mismatch")
        if (st["l2r_fusion"]["enhanced_nonzero_cells"]
                != st["grid_encoding"]["radar_pillars"]):
            failures.append(f"seed {s}: enhanced sparsity mismatch")
    return PropertyResult("l2r.pseudo-count", not failures, min(seeds, 5), failures)


# --------------------------------------------------------------------------
# r2l-fusion-head properties
# --------------------------------------------------------------------------

def check_channel_contract(seeds: int, fault=None) -> PropertyResult:
    failures = []
    cfg = tiny_config()
    for s in range(min(seeds, 3)):
        _, lidar, radar = generate_clouds(cfg, s)
        st = run_pipeline(cfg, lidar, radar).stats
        chain = (st["grid_encoding"]["mr_shape"][0],
                 st["l2r_fusion"]["enhanced_shape"][0],
                 st["r2l_fusion_head"]["fused_shape"][0],
                 st["r2l_fusion_head"]["encoded_shape"][0])
        want = (32, 96, cfg.channels.lidar_channels + 96, 512)
        if chain != want:
            failures.append(f"seed {s}: channel chain {chain} != {want}")
    return PropertyResult("heads.channel-contract", not failures,
                          min(seeds, 3), failures)


def check_decode_roundtrip(seeds: int, fault=None) -> PropertyResult:
    failures = []
    grid = desk_config().lidar_grid
    spec = SceneSpec(extent=16.0, num_objects=6)
    for s in range(seeds):
        scene = generate_scene(spec, s)
        targets = render_targets(scene.objects, grid, num_classes=3)
        outputs = outputs_from_targets(targets)
        if fault == "offset-bias":
            outputs = HeadOutputs(heatmap=outputs.heatmap,
                                  heatmap_logits=outputs.heatmap_logits,
                                  offset=outputs.offset + 1.0, z=outputs.z,
                                  size=outputs.size, rot=outputs.rot,
                                  vel=outputs.vel)
        dets = decode_detections(outputs, grid, 0.5, 64)
        half_cell = 0.5 * grid.cell[0]
        for box in scene.objects:
            near = [d for d in dets
                    if d.class_id == box.class_id
                    and abs(d.x - box.cx) <= half_cell
                    and abs(d.y - box.cy) <= half_cell]
            if not near:
                failures.append(f"seed {s}: box at ({box.cx:.2f},{box.cy:.2f}) lost")
                break
            d = near[0]
            if (abs(d.length - box.length) > 1e-9
                    or abs(d.width - box.width) > 1e-9
                    or abs(d.height - box.height) > 1e-9
                    or abs(wrap_angle(d.yaw - box.yaw)) > 1e-9):
                failures.append(f"seed {s}: size/yaw drifted")
                break
    return PropertyResult("heads.decode-roundtrip", not failures, seeds, failures)


def loss_gradcheck_instance(seed, height=8, width=8, num_classes=2,
                            kink_margin=1e-2):
    """Random head outputs + rendered targets with every L1 kink cleared."""
    rng = np.random.default_rng(seed)
    grid = GridSpec(origin=(-4.0, -4.0, -5.0),
                    cell=(8.0 / width, 8.0 / height, 8.0),
                    counts=(width, height, 1))
    boxes = []
    for k in range(int(rng.integers(1, 4))):
        boxes.append(GroundTruthBox(
            cx=float(rng.uniform(-3, 3)), cy=float(rng.uniform(-3, 3)),
            cz=float(rng.uniform(-1, 1)), length=float(rng.uniform(1, 3)),
            width=float(rng.uniform(1, 2)), height=float(rng.uniform(1, 2)),
            yaw=float(rng.uniform(-3, 3)), vx=float(rng.uniform(-5, 5)),
            vy=float(rng.uniform(-5, 5)), class_id=int(rng.integers(0, num_classes))))
    targets = render_targets(boxes, grid, num_classes)
    shapes = {"heatmap": (num_classes, height, width), "offset": (2, height, width),
              "z": (1, height, width), "size": (3, height, width),
              "rot": (2, height, width), "vel": (2, height, width)}
    maps = {}
    for name, shape in shapes.items():
        maps[name] = rng.normal(size=shape)
        if name != "heatmap":
            tgt = getattr(targets, name)
            for _, iy, ix in targets.centers:
                col = maps[name][:, iy, ix]
                close = np.abs(col - tgt[:, iy, ix]) < kink_margin
                col[close] += np.where(col[close] >= tgt[:, iy, ix][close],
                                       kink_margin, -kink_margin) * 2
    from .nn import sigmoid
    outputs = HeadOutputs(heatmap=sigmoid(maps["heatmap"]),
                          heatmap_logits=maps["heatmap"], offset=maps["offset"],
                          z=maps["z"], size=maps["size"], rot=maps["rot"],
                          vel=maps["vel"])
    return outputs, targets


_HEAD_ORDER = ("heatmap", "offset", "z", "size", "rot", "vel")


def pack_head_maps(outputs: HeadOutputs) -> np.ndarray:
    parts = [outputs.heatmap_logits.ravel()]
    parts += [getattr(outputs, n).ravel() for n in _HEAD_ORDER[1:]]
    return np.concatenate(parts)


def unpack_head_maps(vec: np.ndarray, template: HeadOutputs) -> HeadOutputs:
    from .nn import sigmoid
    maps = {}
    k = 0
    shapes = {"heatmap": template.heatmap_logits.shape}
    shapes.update({n: getattr(template, n).shape for n in _HEAD_ORDER[1:]})
    for name in _HEAD_ORDER:
        size = int(np.prod(shapes[name]))
        maps[name] = vec[k:k + size].reshape(shapes[name])
        k += size
    logits = maps.pop("heatmap")
    return HeadOutputs(heatmap=sigmoid(logits), heatmap_logits=logits, **maps)


def check_grad_loss(seeds: int, fault=None) -> PropertyResult:
    failures = []
    for s in range(seeds):
        outputs, targets = loss_gradcheck_instance([18, s])
        theta = pack_head_maps(outputs)

        def f(v):
            breakdown, _ = compute_loss(unpack_head_maps(v, outputs), targets)
            return breakdown.total

        def grad(v):
            _, grads = compute_loss(unpack_head_maps(v, outputs), targets)
            return np.concatenate([grads[n].ravel() for n in _HEAD_ORDER])

        rep = finite_diff_check(f, grad, theta)
        if not rep.passed:
            failures.append(f"seed {s}: rel diff {rep.max_rel_diff:.2e}")
    return PropertyResult("heads.grad-loss", not failures, seeds, failures)


def check_focal_monotonicity(seeds: int, fault=None) -> PropertyResult:
    failures = []
    for s in range(seeds):
        rng = np.random.default_rng([19, s])
        outputs, targets = loss_gradcheck_instance([19, s])
        base, _ = compute_loss(outputs, targets)
        centers = {(c, iy, ix) for c, iy, ix in targets.centers}
        for _ in range(20):
            c = int(rng.integers(0, outputs.heatmap.shape[0]))
            iy = int(rng.integers(0, outputs.heatmap.shape[1]))
            ix = int(rng.integers(0, outputs.heatmap.shape[2]))
            if (c, iy, ix) not in centers:
                break
        logits = outputs.heatmap_logits.copy()
        logits[c, iy, ix] += 0.25
        from .nn import sigmoid
        bumped = HeadOutputs(heatmap=sigmoid(logits), heatmap_logits=logits,
                             offset=outputs.offset, z=outputs.z,
                             size=outputs.size, rot=outputs.rot, vel=outputs.vel)
        after, _ = compute_loss(bumped, targets)
        if not after.heatmap_loss > base.heatmap_loss:
            failures.append(f"seed {s}: heatmap loss did not increase")
    return PropertyResult("heads.focal-monotonicity", not failures, seeds, failures)


# --------------------------------------------------------------------------
# harness properties
# --------------------------------------------------------------------------

def check_pipeline_determinism(seeds: int, fault=None) -> PropertyResult:
    failures = []
    cfg = tiny_config()
    for s in range(min(seeds, 3)):
        _, lidar, radar = generate_clouds(cfg, s)
        a = run_pipeline(cfg, lidar, radar)
        b = run_pipeline(cfg, lidar, radar)
        if detections_to_jsonl(a.detections) != detections_to_jsonl(b.detections):
            failures.append(f"seed {s}: detections differ between runs")
        if a.stats != b.stats:
            failures.append(f"seed {s}: stats differ between runs")
    return PropertyResult("pipeline.determinism", not failures,
                          min(seeds, 3), failures)


def check_eval_sanity(seeds: int, fault=None) -> PropertyResult:
    from .heads import DetectionBox
    failures = []
    spec = SceneSpec(extent=40.0, num_objects=4, min_range=6.0, clearance=12.0,
                     max_attempts=20000)
    for s in range(min(seeds, 10)):
        scene = generate_scene(spec, s)
        perfect = [DetectionBox(x=b.cx, y=b.cy, z=b.cz, length=b.length,
                                width=b.width, height=b.height, yaw=b.yaw,
                                vx=b.vx, vy=b.vy, class_id=b.class_id, score=1.0)
                   for b in scene.objects]
        res = eval_detections(perfect, scene.objects)
        if any(abs(ap - 1.0) > 1e-12 for th in res.ap_by_class.values()
               for ap in th.values()):
            failures.append(f"seed {s}: perfect detections did not score AP 1")
            continue
        if res.mean_velocity_error != 0.0:
            failures.append(f"seed {s}: perfect detections have velocity error")
            continue
        shifted = [replace(d, x=d.x + 3.0) for d in perfect]
        res = eval_detections(shifted, scene.objects)
        for cid, th in res.ap_by_class.items():
            if any(th[t] != 0.0 for t in (0.5, 1.0, 2.0)) or th[4.0] != 1.0:
                failures.append(f"seed {s}: shifted AP profile wrong for class {cid}")
                break
    return PropertyResult("eval.sanity", not failures, min(seeds, 10), failures)


PROPERTIES = {
    "eval.sanity": check_eval_sanity,
    "grids.index-oracle": check_index_oracle,
    "grids.permutation": check_grid_permutation,
    "grids.sparsity": check_grid_sparsity,
    "heads.channel-contract": check_channel_contract,
    "heads.decode-roundtrip": check_decode_roundtrip,
    "heads.focal-monotonicity": check_focal_monotonicity,
    "heads.grad-loss": check_grad_loss,
    "l2r.ball-query-oracle": check_ball_query_oracle,
    "l2r.bev-query-oracle": check_bev_query_oracle,
    "l2r.height-sensitivity": check_height_sensitivity,
    "l2r.non-overlap": check_non_overlap,
    "l2r.pseudo-count": check_pseudo_count,
    "l2r.query-locality": check_query_locality,
    "l2r.segment-heights": check_segment_heights,
    "nn.conv-identity": check_conv_identity,
    "nn.grad-conv": check_grad_conv,
    "nn.grad-max": check_grad_max,
    "nn.grad-mlp": check_grad_mlp,
    "nn.max-permutation": check_max_permutation,
    "pipeline.determinism": check_pipeline_determinism,
    "scene.accumulate": check_accumulate,
    "scene.determinism": check_scene_determinism,
    "scene.doppler": check_doppler,
}


def oracle_suite(seeds: int = 25, fault: str | None = None) -> list:
    """Run every registered property; results sorted by property name."""
    if fault is not None and fault not in FAULTS:
        raise ConfigError(f"fault: unknown fault {fault!r}, expected one of {FAULTS}")
    results = []
    for name in sorted(PROPERTIES):
        results.append(PROPERTIES[name](seeds, fault))
    return results
