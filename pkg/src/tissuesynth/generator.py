"""Domain-randomization synthesis: spatial transforms, per-subclass Gaussian
intensities, bias field, resolution simulation, noise, and the batch driver.

Every sample is produced from a counter-based RNG stream derived from
(master seed, source id, sample index), so batches are reproducible no
matter how many workers generate them or in what order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from .seeds import META_LABELS, SeedMap
from .volume import (
    BACKGROUND,
    DisplacementField,
    LabelMap,
    VoxelGrid,
    crop_pad,
    resample,
    resample_to_grid,
    warp,
)


@dataclass(frozen=True)
class GenConfig:
    """Generator hyperparameters; intensity units assume a [0, 255] range."""

    intensity_lo: float = 0.0
    intensity_hi: float = 255.0
    mean_std_max: float = 35.0          # subclass std prior: U[0, mean_std_max]
    scale_lo: float = 0.9
    scale_hi: float = 1.1
    translation_lo_mm: float = -10.0
    translation_hi_mm: float = 10.0
    rotation_max_deg: float = 15.0
    shear_max: float = 0.012
    elastic_grid: int = 5
    elastic_std_max_mm: float = 3.0
    bias_grid: int = 4
    bias_std_max: float = 0.3
    res_lo_mm: float = 0.5
    res_hi_mm: float = 0.5
    noise_std_max: float = 10.0
    samples_per_image: int = 200
    master_seed: int = 0

    def __post_init__(self):
        if self.scale_lo > self.scale_hi:
            raise ValueError("scale_lo > scale_hi")
        if self.translation_lo_mm > self.translation_hi_mm:
            raise ValueError("translation bounds out of order")
        if self.intensity_lo >= self.intensity_hi:
            raise ValueError("intensity range must satisfy lo < hi")
        if self.res_lo_mm > self.res_hi_mm:
            raise ValueError("resolution range must satisfy lo <= hi")
        for name in ("mean_std_max", "elastic_std_max_mm", "bias_std_max", "noise_std_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()[:16]


@dataclass
class SpatialTransform:
    affine: np.ndarray
    elastic: DisplacementField | None

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.affine).tobytes())
        if self.elastic is not None:
            h.update(np.ascontiguousarray(self.elastic.vectors).tobytes())
        return h.hexdigest()[:16]


@dataclass
class SynthSample:
    image: VoxelGrid
    target: LabelMap
    sample_seed: int
    transform_digest: str


def sample_stream(master_seed: int, source_id: str, sample_index: int) -> np.random.Generator:
    """Deterministic per-sample RNG stream, stable across platforms/workers."""
    key = f"{master_seed}:{source_id}:{sample_index}".encode()
    seed = int.from_bytes(hashlib.sha256(key).digest()[:8], "little")
    return np.random.default_rng(seed)


def _rotation_matrix(angles_deg: np.ndarray) -> np.ndarray:
    ax, ay, az = np.deg2rad(angles_deg)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def upsample_control_grid(control: np.ndarray, shape) -> np.ndarray:
    """Trilinearly stretch a small control grid over a full voxel grid."""
    zooms = []
    for axis in range(3):
        nc, n = control.shape[axis], shape[axis]
        # control point i sits at voxel i*(n-1)/(nc-1)
        zooms.append(np.linspace(0, nc - 1, n) if n > 1 else np.array([0.5 * (nc - 1)]))
    gi, gj, gk = np.meshgrid(*zooms, indexing="ij")
    coords = np.stack([gi.ravel(), gj.ravel(), gk.ravel()])
    from .volume import sample_at

    return sample_at(control, coords, mode="trilinear").reshape(shape)


def sample_transform(cfg: GenConfig, rng: np.random.Generator,
                     shape=None, grid: VoxelGrid | None = None) -> SpatialTransform:
    """Draw an affine (about the volume center) plus an elastic field.

    ``grid`` (or ``shape`` with unit spacing) fixes the output geometry the
    elastic field and center are defined on.
    """
    if grid is None:
        if shape is None:
            raise ValueError("sample_transform needs a grid or a shape")
        grid = VoxelGrid(data=np.zeros(shape, dtype=np.float32))
    scales = rng.uniform(cfg.scale_lo, cfg.scale_hi, size=3)
    rot = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg, size=3)
    trans = rng.uniform(cfg.translation_lo_mm, cfg.translation_hi_mm, size=3)
    shear = rng.uniform(-cfg.shear_max, cfg.shear_max, size=3)

    lin = _rotation_matrix(rot)
    sh = np.eye(3)
    sh[0, 1], sh[0, 2], sh[1, 2] = shear
    lin = lin @ sh @ np.diag(scales)

    center_vox = (np.array(grid.shape, dtype=float) - 1) / 2
    center = (grid.affine @ np.append(center_vox, 1.0))[:3]
    affine = np.eye(4)
    affine[:3, :3] = lin
    affine[:3, 3] = center - lin @ center + trans

    elastic = None
    sigma_e = rng.uniform(0, cfg.elastic_std_max_mm)
    control = rng.normal(0, 1.0, size=(3, cfg.elastic_grid, cfg.elastic_grid, cfg.elastic_grid))
    if sigma_e > 0:
        vecs = np.stack([
            upsample_control_grid(sigma_e * control[c], grid.shape) for c in range(3)
        ])
        elastic = DisplacementField(vectors=vecs)
    return SpatialTransform(affine=affine, elastic=elastic)


def sample_gmm_intensities(seed: SeedMap | LabelMap, cfg: GenConfig,
                           rng: np.random.Generator) -> VoxelGrid:
    """Per-subclass Gaussian intensities; subclass 0 stays 0; clamped to range."""
    sub = seed.subclasses if isinstance(seed, SeedMap) else seed
    data = sub.data
    n_sub = int(data.max())
    mus = rng.uniform(cfg.intensity_lo, cfg.intensity_hi, size=n_sub)
    sigmas = rng.uniform(0, cfg.mean_std_max, size=n_sub)
    out = np.zeros(data.shape, dtype=float)
    noise = rng.standard_normal(data.shape)
    for c in range(1, n_sub + 1):
        mask = data == c
        out[mask] = mus[c - 1] + sigmas[c - 1] * noise[mask]
    out[data == 0] = 0.0
    np.clip(out, cfg.intensity_lo, cfg.intensity_hi, out=out)
    out[data == 0] = 0.0
    return VoxelGrid(data=out, spacing=sub.spacing, affine=sub.grid.affine)


def sample_bias_field(shape, spacing, cfg: GenConfig, rng: np.random.Generator) -> VoxelGrid:
    """Smooth multiplicative field: exp of an upsampled N(0, sigma_b^2) grid."""
    sigma_b = rng.uniform(0, cfg.bias_std_max)
    control = rng.normal(0, 1.0, size=(cfg.bias_grid,) * 3)
    log_field = upsample_control_grid(sigma_b * control, shape)
    return VoxelGrid(data=np.exp(log_field), spacing=spacing)


def simulate_resolution(img: VoxelGrid, cfg: GenConfig, rng: np.random.Generator,
                        clamp_to_native: bool = False) -> VoxelGrid:
    """Blur + down/up-sample to mimic a lower acquisition resolution.

    Per axis the acquisition spacing is drawn U[res_lo, res_hi]; matching the
    native spacing is an exact no-op.  ``clamp_to_native`` raises sampled
    spacings below the native one to the native value instead of erroring
    (used inside the sample pipeline, where the grid may be coarser than the
    configured acquisition range).
    """
    target = rng.uniform(cfg.res_lo_mm, cfg.res_hi_mm, size=3)
    native = np.array(img.spacing)
    if np.any(target < native - 1e-9):
        if not clamp_to_native:
            raise ValueError(
                f"simulated spacing {target} below native {tuple(native)}"
            )
        target = np.maximum(target, native)
    ratio = target / native
    if np.allclose(ratio, 1.0, atol=1e-12):
        return img.with_data(img.data.copy())
    sigmas = np.maximum(0.42 * (ratio - 1.0), 0.0)
    blurred = img.data.astype(float)
    if sigmas.max() > 0:
        blurred = ndimage.gaussian_filter(blurred, sigma=sigmas)
    low = resample(img.with_data(blurred), tuple(target), mode="trilinear")
    back = resample_to_grid(low, img, mode="trilinear")
    return back


def generate_sample(seed: SeedMap, cfg: GenConfig, sample_index: int) -> SynthSample:
    """One randomized image/target pair from a seed map.

    Stage order: transform -> warp (seed + target, nearest) -> per-subclass
    intensities -> bias field -> resolution simulation -> additive noise ->
    clamp.  Fully determined by (master seed, source id, sample index).
    """
    rng = sample_stream(cfg.master_seed, seed.source_id, sample_index)
    grid = seed.subclasses.grid
    transform = sample_transform(cfg, rng, grid=grid)

    warped_sub = warp(grid, transform.affine, transform.elastic,
                      mode="nearest", fill=BACKGROUND)
    warped_fine = warp(seed.fine_labels.grid, transform.affine, transform.elastic,
                       mode="nearest", fill=BACKGROUND)
    sub_map = LabelMap(grid=warped_sub, label_set=seed.subclasses.label_set)
    target = LabelMap(grid=warped_fine, label_set=seed.fine_labels.label_set)

    image = sample_gmm_intensities(sub_map, cfg, rng)
    bias = sample_bias_field(image.shape, image.spacing, cfg, rng)
    image = image.with_data(image.data * bias.data)
    image = simulate_resolution(image, cfg, rng, clamp_to_native=True)
    sigma_n = rng.uniform(0, cfg.noise_std_max)
    if sigma_n > 0:
        image = image.with_data(image.data + rng.normal(0, sigma_n, size=image.shape))
    image = image.with_data(np.clip(image.data, cfg.intensity_lo, cfg.intensity_hi))
    sample_seed = int.from_bytes(
        hashlib.sha256(f"{cfg.master_seed}:{seed.source_id}:{sample_index}".encode()).digest()[:8],
        "little",
    )
    return SynthSample(
        image=image,
        target=target,
        sample_seed=sample_seed,
        transform_digest=transform.digest(),
    )


MANIFEST_FIELDS = ["source_id", "sample_index", "seed", "img_path", "seg_path", "status"]


def _emit_sample(seed: SeedMap, cfg: GenConfig, index: int, out_dir: Path) -> dict:
    from .nifti import write_nifti

    sub_dir = out_dir / seed.source_id
    sub_dir.mkdir(parents=True, exist_ok=True)
    img_path = sub_dir / f"sample_{index:04d}_img.nii.gz"
    seg_path = sub_dir / f"sample_{index:04d}_seg.nii.gz"
    sample_seed = int.from_bytes(
        hashlib.sha256(f"{cfg.master_seed}:{seed.source_id}:{index}".encode()).digest()[:8],
        "little",
    )
    row = {
        "source_id": seed.source_id,
        "sample_index": index,
        "seed": sample_seed,
        "img_path": str(img_path),
        "seg_path": str(seg_path),
        "status": "complete",
    }
    if img_path.exists() and seg_path.exists():
        return row
    sample = generate_sample(seed, cfg, index)
    # temp-write + rename so a crash never leaves a half file counted as done
    tmp_img = sub_dir / f".tmp_{index:04d}_img.nii.gz"
    tmp_seg = sub_dir / f".tmp_{index:04d}_seg.nii.gz"
    write_nifti(sample.image, tmp_img)
    write_nifti(sample.target, tmp_seg)
    os.replace(tmp_img, img_path)
    os.replace(tmp_seg, seg_path)
    return row


def generate_batch(seeds, cfg: GenConfig, out_dir, workers: int = 1) -> list[dict]:
    """Emit samples_per_image pairs per seed plus a manifest CSV.

    Already-complete samples (both files present) are skipped, so an
    interrupted batch resumes to an identical result.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [
        (seed, index)
        for seed in seeds
        for index in range(cfg.samples_per_image)
    ]
    rows: list[dict] = []
    if workers <= 1:
        for seed, index in tasks:
            rows.append(_emit_sample(seed, cfg, index, out_dir))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_emit_sample, seed, cfg, index, out_dir)
                       for seed, index in tasks]
            rows = [f.result() for f in futures]
    rows.sort(key=lambda r: (r["source_id"], r["sample_index"]))
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return rows
