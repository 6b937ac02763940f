"""Voxel-grid containers and the geometric operations shared by all stages.

A :class:`VoxelGrid` couples a 3D scalar array with its physical geometry
(spacing in mm and a 4x4 voxel-to-world affine).  All resampling, cropping,
warping and normalization used elsewhere in the package is implemented here
as pure functions over immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# FeTA labelling: background + 7 tissues
FETA_LABELS = frozenset(range(8))
BACKGROUND = 0


class GridError(ValueError):
    """Invalid grid geometry or arguments to a grid operation."""


def default_affine(spacing) -> np.ndarray:
    a = np.eye(4)
    a[0, 0], a[1, 1], a[2, 2] = spacing
    return a


@dataclass(frozen=True)
class VoxelGrid:
    """A 3D scalar field with spacing and world-affine metadata.

    ``data`` is indexed ``[i, j, k]``; world position of a voxel center is
    ``affine @ (i, j, k, 1)``.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise GridError(f"expected 3D data, got {data.ndim}D")
        if any(s < 1 for s in data.shape):
            raise GridError(f"shape components must be >= 1, got {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if any(s <= 0 for s in spacing):
            raise GridError(f"spacing must be positive, got {spacing}")
        affine = self.affine
        if affine is None:
            affine = default_affine(spacing)
        affine = np.asarray(affine, dtype=float)
        if affine.shape != (4, 4):
            raise GridError("affine must be 4x4")
        if abs(np.linalg.det(affine)) < 1e-12:
            raise GridError("affine must be invertible")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", affine)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "VoxelGrid":
        return replace(self, data=data)


@dataclass(frozen=True)
class LabelMap:
    """A VoxelGrid of small-integer tissue labels."""

    grid: VoxelGrid
    label_set: frozenset = FETA_LABELS

    def __post_init__(self):
        if not np.issubdtype(self.grid.data.dtype, np.integer):
            raise GridError("label data must be integer-typed")
        present = set(np.unique(self.grid.data).tolist())
        if not present <= set(self.label_set):
            raise GridError(f"labels {sorted(present - set(self.label_set))} outside label set")

    @property
    def data(self) -> np.ndarray:
        return self.grid.data

    @property
    def spacing(self):
        return self.grid.spacing

    @property
    def shape(self):
        return self.grid.shape


@dataclass(frozen=True)
class DisplacementField:
    """Per-voxel world-space displacement (mm), defined on a target grid."""

    vectors: np.ndarray  # (3, *shape)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 4 or v.shape[0] != 3:
            raise GridError(f"displacement field must have shape (3, X, Y, Z), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("displacement field contains non-finite components")
        object.__setattr__(self, "vectors", v)


def same_geometry(a: VoxelGrid, b: VoxelGrid, tol: float = 1e-6) -> bool:
    return (
        a.shape == b.shape
        and np.allclose(a.spacing, b.spacing, atol=tol)
        and np.allclose(a.affine, b.affine, atol=tol)
    )


def _nearest_index(x: np.ndarray) -> np.ndarray:
    # round-half-down: a coordinate exactly between two voxels picks the lower
    return np.ceil(x - 0.5).astype(np.int64)


def sample_at(
    data: np.ndarray, coords: np.ndarray, mode: str, fill: float = 0.0, clamp: bool = False
) -> np.ndarray:
    """Sample ``data`` at fractional voxel coordinates ``coords`` (3, N).

    Out-of-bounds samples return ``fill`` unless ``clamp`` is set, in which
    case coordinates are clipped to the edge (used by resampling, where new
    voxel centers can sit between the boundary center and the volume edge).
    Nearest mode breaks half-voxel ties toward the lower index.
    """
    coords = np.asarray(coords, dtype=float)
    shape = data.shape
    if mode == "nearest":
        idx = [_nearest_index(coords[a]) for a in range(3)]
        inside = np.ones(coords.shape[1], dtype=bool)
        for a in range(3):
            inside &= (idx[a] >= 0) & (idx[a] < shape[a])
        ii = [np.clip(idx[a], 0, shape[a] - 1) for a in range(3)]
        vals = data[ii[0], ii[1], ii[2]]
        if clamp:
            return vals
        out = np.full(coords.shape[1], fill, dtype=data.dtype)
        out[inside] = vals[inside]
        return out
    if mode != "trilinear":
        raise GridError(f"unknown interpolation mode {mode!r}")

    inside = np.ones(coords.shape[1], dtype=bool)
    for a in range(3):
        inside &= (coords[a] >= 0) & (coords[a] <= shape[a] - 1)
    c = np.clip(coords, 0, np.array(shape, dtype=float)[:, None] - 1)
    lo = np.floor(c).astype(np.int64)
    for a in range(3):
        lo[a] = np.minimum(lo[a], shape[a] - 2) if shape[a] > 1 else 0
    frac = c - lo
    out = np.zeros(coords.shape[1], dtype=float)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (
                    (frac[0] if dx else 1 - frac[0])
                    * (frac[1] if dy else 1 - frac[1])
                    * (frac[2] if dz else 1 - frac[2])
                )
                ix = np.minimum(lo[0] + dx, shape[0] - 1)
                iy = np.minimum(lo[1] + dy, shape[1] - 1)
                iz = np.minimum(lo[2] + dz, shape[2] - 1)
                out += w * data[ix, iy, iz]
    if not clamp:
        out[~inside] = fill
    return out


def _voxel_center_coords(shape) -> np.ndarray:
    """All voxel indices of ``shape`` as a (3, N) float array."""
    grids = np.meshgrid(*[np.arange(n, dtype=float) for n in shape], indexing="ij")
    return np.stack([g.ravel() for g in grids])


def resample(v: VoxelGrid, target_spacing, mode: str = "trilinear") -> VoxelGrid:
    """Resample to a new spacing, preserving the physical field of view.

    Voxel centers follow the half-voxel (corner-aligned) convention: output
    center ``j`` sits at physical offset ``(j + 0.5) * target_spacing`` from
    the low corner of the volume.
    """
    ts = tuple(float(s) for s in target_spacing)
    if any(s <= 0 for s in ts):
        raise GridError(f"target spacing must be positive, got {ts}")
    if ts == v.spacing:
        return v.with_data(v.data.copy())
    extent = [n * s for n, s in zip(v.shape, v.spacing)]
    new_shape = tuple(max(1, int(np.ceil(e / s - 1e-9))) for e, s in zip(extent, ts))
    # output center j maps to input voxel coordinate (j+0.5)*ts/s_in - 0.5
    scale = np.array([t / s for t, s in zip(ts, v.spacing)])
    offset = 0.5 * scale - 0.5
    coords = _voxel_center_coords(new_shape)
    coords = coords * scale[:, None] + offset[:, None]
    sampled = sample_at(v.data, coords, mode=mode, clamp=True)
    data = sampled.reshape(new_shape)
    if mode == "nearest":
        data = data.astype(v.data.dtype)
    vox_map = np.eye(4)
    vox_map[:3, :3] = np.diag(scale)
    vox_map[:3, 3] = offset
    return VoxelGrid(data=data, spacing=ts, affine=v.affine @ vox_map)


def resample_to_grid(v: VoxelGrid, like: VoxelGrid, mode: str = "trilinear") -> VoxelGrid:
    """Sample ``v`` at the voxel centers of ``like`` (shared world frame)."""
    coords = _voxel_center_coords(like.shape)
    homog = np.vstack([coords, np.ones(coords.shape[1])])
    world = like.affine @ homog
    vox = np.linalg.inv(v.affine) @ world
    sampled = sample_at(v.data, vox[:3], mode=mode, clamp=True)
    data = sampled.reshape(like.shape)
    if mode == "nearest":
        data = data.astype(v.data.dtype)
    return VoxelGrid(data=data, spacing=like.spacing, affine=like.affine)


def crop_pad(v: VoxelGrid, target_shape, fill=0) -> VoxelGrid:
    """Center crop/pad to ``target_shape``; odd margins lean to the low index."""
    ts = tuple(int(n) for n in target_shape)
    if any(n < 1 for n in ts):
        raise GridError(f"target shape must be >= 1 per axis, got {ts}")
    if ts == v.shape:
        return v.with_data(v.data.copy())
    out = np.full(ts, fill, dtype=v.data.dtype)
    # offset of output voxel 0 expressed in input voxel indices
    offsets = []
    src_slices, dst_slices = [], []
    for n_in, n_out in zip(v.shape, ts):
        if n_out <= n_in:
            start = (n_in - n_out) // 2
            src_slices.append(slice(start, start + n_out))
            dst_slices.append(slice(0, n_out))
            offsets.append(start)
        else:
            start = (n_out - n_in) // 2
            src_slices.append(slice(0, n_in))
            dst_slices.append(slice(start, start + n_in))
            offsets.append(-start)
    out[tuple(dst_slices)] = v.data[tuple(src_slices)]
    shift = np.eye(4)
    shift[:3, 3] = offsets
    return VoxelGrid(data=out, spacing=v.spacing, affine=v.affine @ shift)


def warp(
    v: VoxelGrid,
    affine: np.ndarray,
    elastic: DisplacementField | None = None,
    mode: str = "trilinear",
    fill=0,
) -> VoxelGrid:
    """Backward-warp ``v`` by a world-space affine plus optional elastic field.

    The output voxel at world position x samples the input at
    ``affine^-1 @ (x + elastic(x))``; out-of-bounds samples yield ``fill``.
    """
    affine = np.asarray(affine, dtype=float)
    if affine.shape != (4, 4) or abs(np.linalg.det(affine)) < 1e-12:
        raise GridError("warp affine must be an invertible 4x4 matrix")
    if elastic is not None and elastic.vectors.shape[1:] != v.shape:
        raise GridError("elastic field must be defined on the output grid")
    coords = _voxel_center_coords(v.shape)
    homog = np.vstack([coords, np.ones(coords.shape[1])])
    world = v.affine @ homog
    if elastic is not None:
        world = world.copy()
        world[:3] += elastic.vectors.reshape(3, -1)
    src_world = np.linalg.inv(affine) @ world
    src_vox = np.linalg.inv(v.affine) @ src_world
    sampled = sample_at(v.data, src_vox[:3], mode=mode, fill=fill)
    data = sampled.reshape(v.shape)
    if mode == "nearest":
        data = data.astype(v.data.dtype)
    return VoxelGrid(data=data, spacing=v.spacing, affine=v.affine)


def minmax_normalize(v: VoxelGrid) -> VoxelGrid:
    """Scale intensities to [0, 1]; a constant volume maps to all zeros."""
    lo = float(v.data.min())
    hi = float(v.data.max())
    if hi == lo:
        return v.with_data(np.zeros(v.shape, dtype=float))
    return v.with_data((v.data.astype(float) - lo) / (hi - lo))
