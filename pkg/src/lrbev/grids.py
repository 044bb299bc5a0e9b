"""Point clouds to BEV feature maps.

LiDAR goes through voxelize -> per-voxel MLP+max encode -> Z-stack collapse,
yielding the LiDAR BEV map. Radar goes through single-layer pillars, yielding
the radar BEV map. A separate collapse rebins encoded LiDAR voxels onto the
coarse radar-sized grid for the BEV-feature queries.

Cell assignment is floor((p - origin) / cell), lower-inclusive and
upper-exclusive. Empty cells are exact zeros everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import FeatureMap, MlpParams, mlp_forward_batch

LIDAR_POINT_FEATURES = 8   # x, y, z, intensity, t, and offsets to the cell center
RADAR_POINT_FEATURES = {"radar_a": 9, "radar_b": 4}


@dataclass(frozen=True)
class GridSpec:
    """Regular 3D grid: minimum corner, cell size, cell counts."""

    origin: tuple
    cell: tuple
    counts: tuple

    def __post_init__(self):
        if len(self.origin) != 3 or len(self.cell) != 3 or len(self.counts) != 3:
            raise ConfigError("grid: origin, cell and counts must each have 3 entries")
        if any(c <= 0 for c in self.cell):
            raise ConfigError(f"grid.cell: all sizes must be positive, got {self.cell}")
        if any(n < 1 for n in self.counts):
            raise ConfigError(f"grid.counts: all counts must be >= 1, got {self.counts}")

    @property
    def nx(self) -> int:
        return self.counts[0]

    @property
    def ny(self) -> int:
        return self.counts[1]

    @property
    def nz(self) -> int:
        return self.counts[2]

    def is_pillar_grid(self) -> bool:
        return self.nz == 1

    def cell_index(self, xyz: np.ndarray) -> np.ndarray:
        """(n,3) -> (n,3) integer indices; may fall outside the grid."""
        rel = (np.asarray(xyz, dtype=np.float64) - np.asarray(self.origin)) \
            / np.asarray(self.cell)
        return np.floor(rel).astype(np.int64)

    def in_range(self, idx: np.ndarray) -> np.ndarray:
        return ((idx >= 0).all(axis=1)
                & (idx < np.asarray(self.counts, dtype=np.int64)).all(axis=1))

    def cell_center_xy(self, ix: int, iy: int) -> tuple:
        return (self.origin[0] + (ix + 0.5) * self.cell[0],
                self.origin[1] + (iy + 0.5) * self.cell[1])

    def voxel_center(self, ix: int, iy: int, iz: int) -> tuple:
        x, y = self.cell_center_xy(ix, iy)
        return x, y, self.origin[2] + (iz + 0.5) * self.cell[2]

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "cell": list(self.cell),
                "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(origin=tuple(float(v) for v in d["origin"]),
                   cell=tuple(float(v) for v in d["cell"]),
                   counts=tuple(int(v) for v in d["counts"]))


@dataclass
class VoxelSet:
    """Occupied voxels of one cloud: member point indices per cell, plus the
    per-voxel feature vectors once encoded."""

    spec: GridSpec
    points: np.ndarray                      # the structured cloud voxelized
    occupied: dict = field(default_factory=dict)   # (ix,iy,iz) -> list[int]
    features: dict = field(default_factory=dict)   # (ix,iy,iz) -> np.ndarray
    dropped: int = 0
    truncated: int = 0

    @property
    def feature_dim(self) -> int:
        if not self.features:
            return 0
        return len(next(iter(self.features.values())))


def voxelize(points: np.ndarray, spec: GridSpec,
             max_points_per_voxel: int = 32) -> VoxelSet:
    """Assign points to voxels; out-of-range points are dropped (counted),
    per-voxel membership is truncated in insertion order."""
    if max_points_per_voxel < 1:
        raise ValueError(f"max_points_per_voxel must be >= 1, got {max_points_per_voxel}")
    vs = VoxelSet(spec=spec, points=points)
    if len(points) == 0:
        return vs
    z = points["z"] if "z" in points.dtype.names else np.zeros(len(points))
    xyz = np.stack([points["x"], points["y"], z], axis=1)
    idx = spec.cell_index(xyz)
    ok = spec.in_range(idx)
    vs.dropped = int(len(points) - ok.sum())
    for i in np.nonzero(ok)[0]:
        key = (int(idx[i, 0]), int(idx[i, 1]), int(idx[i, 2]))
        members = vs.occupied.setdefault(key, [])
        if len(members) < max_points_per_voxel:
            members.append(int(i))
        else:
            vs.truncated += 1
    return vs


def _lidar_point_features(vs: VoxelSet, key: tuple) -> np.ndarray:
    members = vs.occupied[key]
    pts = vs.points[members]
    cx, cy, cz = vs.spec.voxel_center(*key)
    return np.stack([pts["x"], pts["y"], pts["z"], pts["intensity"], pts["t"],
                     pts["x"] - cx, pts["y"] - cy, pts["z"] - cz], axis=1)


def voxel_encode(vs: VoxelSet, p: MlpParams) -> VoxelSet:
    """Per-voxel feature: elementwise max over members of the point MLP.

    Point inputs are (x, y, z, intensity, t) plus offsets to the voxel
    center, so the result is invariant under member order.
    """
    if p.in_dim != LIDAR_POINT_FEATURES:
        raise ShapeError(f"voxel MLP expects {p.in_dim} inputs, "
                         f"points provide {LIDAR_POINT_FEATURES}")
    for key in sorted(vs.occupied):
        feats = _lidar_point_features(vs, key)
        vs.features[key] = mlp_forward_batch(feats, p).max(axis=0)
    return vs


def zstack_collapse(vs: VoxelSet, p: MlpParams) -> FeatureMap:
    """Concatenate each BEV cell's voxel features bottom-to-top (zeros for
    empty voxels) and project with an MLP; untouched cells stay exact zero."""
    spec = vs.spec
    fdim = vs.feature_dim
    if vs.features and p.in_dim != fdim * spec.nz:
        raise ShapeError(f"z-stack MLP expects {p.in_dim} inputs, "
                         f"stack provides {fdim * spec.nz}")
    out = np.zeros((p.out_dim, spec.ny, spec.nx))
    cells = sorted({(k[0], k[1]) for k in vs.features})
    for ix, iy in cells:
        stack = np.zeros(p.in_dim)
        for iz in range(spec.nz):
            feat = vs.features.get((ix, iy, iz))
            if feat is not None:
                stack[iz * fdim:(iz + 1) * fdim] = feat
        col = mlp_forward_batch(stack[None, :], p)[0]
        out[:, iy, ix] = col
    return FeatureMap._wrap(out)


@dataclass
class PillarMap:
    """Radar BEV map plus the occupancy bookkeeping downstream stages need."""

    map: FeatureMap
    occupied: dict          # (ix,iy) -> list[int] member point indices
    dropped: int


def _radar_point_features(points: np.ndarray) -> np.ndarray:
    names = points.dtype.names
    return np.stack([points[n] for n in names], axis=1)


def pillarize(points: np.ndarray, spec: GridSpec, p: MlpParams,
              max_points_per_pillar: int = 32) -> PillarMap:
    """Radar pillar encoding: per-pillar max over the point MLP, scattered
    onto a dense BEV map. Raw record fields are the MLP inputs."""
    if not spec.is_pillar_grid():
        raise ConfigError(f"radar.counts: pillar grid needs nz == 1, got {spec.nz}")
    nfeat = len(points.dtype.names)
    if p.in_dim != nfeat:
        raise ShapeError(f"pillar MLP expects {p.in_dim} inputs, "
                         f"records provide {nfeat}")
    out = np.zeros((p.out_dim, spec.ny, spec.nx))
    occupied: dict = {}
    dropped = 0
    if len(points):
        z = np.zeros(len(points))
        idx = spec.cell_index(np.stack([points["x"], points["y"], z], axis=1))
        # z index is always 0: the single pillar layer spans the full range.
        idx[:, 2] = 0
        ok = spec.in_range(idx)
        dropped = int(len(points) - ok.sum())
        for i in np.nonzero(ok)[0]:
            key = (int(idx[i, 0]), int(idx[i, 1]))
            members = occupied.setdefault(key, [])
            if len(members) < max_points_per_pillar:
                members.append(int(i))
        feats = _radar_point_features(points)
        for (ix, iy), members in sorted(occupied.items()):
            out[:, iy, ix] = mlp_forward_batch(feats[members], p).max(axis=0)
    return PillarMap(map=FeatureMap._wrap(out), occupied=occupied, dropped=dropped)


def collapse_to_bev_grids(vs: VoxelSet, coarse_cell: float) -> dict:
    """Rebin encoded voxel features onto the coarse (radar-sized) BEV grid.

    Each coarse cell covering at least one occupied voxel gets the
    elementwise max of all contained voxel features; empty cells are absent.
    The coarse cell size must be an integer multiple of the fine cell.
    """
    spec = vs.spec
    ratios = []
    for axis, name in ((0, "x"), (1, "y")):
        ratio = coarse_cell / spec.cell[axis]
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError(
                f"grid.cell: coarse cell {coarse_cell} is not an integer multiple "
                f"of fine {name} cell {spec.cell[axis]}")
        ratios.append(int(round(ratio)))
    rx, ry = ratios
    out: dict = {}
    for (ix, iy, _iz), feat in sorted(vs.features.items()):
        key = (ix // rx, iy // ry)
        prev = out.get(key)
        out[key] = feat.copy() if prev is None else np.maximum(prev, feat)
    return out
