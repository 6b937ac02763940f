"""Training-time pre-processing and augmentation chain.

Real and synthetic volumes pass through the same stages: resample to the
target spacing, center crop/pad to the target shape, then (training only)
probabilistic gamma contrast, random affine, additive noise and Gaussian
smoothing, and finally min-max normalization to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import (
    BACKGROUND,
    GridError,
    LabelMap,
    VoxelGrid,
    crop_pad,
    minmax_normalize,
    resample,
    warp,
)


@dataclass(frozen=True)
class AugmentConfig:
    gamma_lo: float = 0.5
    gamma_hi: float = 1.5
    gamma_p: float = 0.5
    scale_lo: float = -0.1          # factor is 1 + u
    scale_hi: float = 0.1
    rotation_lo_deg: float = -0.2
    rotation_hi_deg: float = 0.2
    shear_lo: float = -0.1
    shear_hi: float = 0.1
    translation_lo_mm: float = 0.0
    translation_hi_mm: float = 0.0
    affine_p: float = 0.5
    noise_mean: float = 0.0
    noise_std: float = 0.1          # in normalized intensity units
    noise_p: float = 0.5
    smooth_sigma_lo: float = 0.5    # voxels
    smooth_sigma_hi: float = 1.5
    smooth_p: float = 0.7
    target_spacing_mm: tuple = (0.5, 0.5, 0.5)
    target_shape: tuple = (256, 256, 256)

    def __post_init__(self):
        for p in (self.gamma_p, self.affine_p, self.noise_p, self.smooth_p):
            if not 0 <= p <= 1:
                raise GridError(f"probability {p} outside [0, 1]")
        for lo, hi in (
            (self.gamma_lo, self.gamma_hi),
            (self.scale_lo, self.scale_hi),
            (self.rotation_lo_deg, self.rotation_hi_deg),
            (self.shear_lo, self.shear_hi),
            (self.smooth_sigma_lo, self.smooth_sigma_hi),
        ):
            if lo > hi:
                raise GridError(f"range ({lo}, {hi}) out of order")


def augment_gamma(v: VoxelGrid, gamma: float) -> VoxelGrid:
    """Voxelwise v**gamma for v in [0, 1]; monotone and range-preserving."""
    if gamma <= 0:
        raise GridError(f"gamma must be positive, got {gamma}")
    data = v.data
    if data.min() < -1e-9 or data.max() > 1 + 1e-9:
        raise GridError("gamma input must lie in [0, 1]")
    return v.with_data(np.clip(data, 0, 1) ** gamma)


def _sample_affine(cfg: AugmentConfig, rng: np.random.Generator, grid: VoxelGrid) -> np.ndarray:
    from .generator import _rotation_matrix

    scales = 1.0 + rng.uniform(cfg.scale_lo, cfg.scale_hi, size=3)
    rot = rng.uniform(cfg.rotation_lo_deg, cfg.rotation_hi_deg, size=3)
    shear = rng.uniform(cfg.shear_lo, cfg.shear_hi, size=3)
    trans = rng.uniform(cfg.translation_lo_mm, cfg.translation_hi_mm, size=3)
    lin = _rotation_matrix(rot)
    sh = np.eye(3)
    sh[0, 1], sh[0, 2], sh[1, 2] = shear
    lin = lin @ sh @ np.diag(scales)
    center_vox = (np.array(grid.shape, dtype=float) - 1) / 2
    center = (grid.affine @ np.append(center_vox, 1.0))[:3]
    affine = np.eye(4)
    affine[:3, :3] = lin
    affine[:3, 3] = center - lin @ center + trans
    return affine


def preprocess(
    image: VoxelGrid,
    labels: LabelMap | None,
    cfg: AugmentConfig | None = None,
    rng: np.random.Generator | None = None,
    train_mode: bool = False,
) -> tuple[VoxelGrid, LabelMap | None]:
    """Resample, crop/pad, optionally augment, and normalize one sample.

    Labels (when given) follow the image through every spatial stage with
    nearest interpolation and the identical sampled affine.
    """
    cfg = cfg or AugmentConfig()
    rng = rng or np.random.default_rng(0)
    img = resample(image, cfg.target_spacing_mm, mode="trilinear")
    img = crop_pad(img, cfg.target_shape, fill=0.0)
    lab = None
    if labels is not None:
        lg = resample(labels.grid, cfg.target_spacing_mm, mode="nearest")
        lg = crop_pad(lg, cfg.target_shape, fill=BACKGROUND)
        lab = LabelMap(grid=lg, label_set=labels.label_set)

    if train_mode:
        if rng.uniform() < cfg.gamma_p:
            gamma = rng.uniform(cfg.gamma_lo, cfg.gamma_hi)
            scaled = minmax_normalize(img)
            lo, hi = float(img.data.min()), float(img.data.max())
            out = augment_gamma(scaled, gamma)
            img = img.with_data(out.data * (hi - lo) + lo)
        if rng.uniform() < cfg.affine_p:
            affine = _sample_affine(cfg, rng, img)
            img = warp(img, affine, mode="trilinear", fill=0.0)
            if lab is not None:
                lg = warp(lab.grid, affine, mode="nearest", fill=BACKGROUND)
                lab = LabelMap(grid=lg, label_set=lab.label_set)
        if rng.uniform() < cfg.noise_p:
            span = max(float(img.data.max()) - float(img.data.min()), 1e-12)
            noise = rng.normal(cfg.noise_mean, cfg.noise_std, size=img.shape)
            img = img.with_data(img.data + noise * span)
        if rng.uniform() < cfg.smooth_p:
            sigma = rng.uniform(cfg.smooth_sigma_lo, cfg.smooth_sigma_hi)
            img = img.with_data(ndimage.gaussian_filter(img.data.astype(float), sigma))

    img = minmax_normalize(img)
    return img, lab
