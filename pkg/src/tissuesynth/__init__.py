"""tissuesynth: synthetic fetal-brain MRI generation and evaluation toolkit."""

from .volume import (
    DisplacementField,
    LabelMap,
    VoxelGrid,
    crop_pad,
    minmax_normalize,
    resample,
    warp,
)
from .nifti import read_nifti, write_nifti
from .seeds import (
    GmmParams,
    MetaLabelMapping,
    SeedConfig,
    SeedMap,
    build_seed_map,
    derive_skull_region,
    em_fit,
    merge_to_meta_labels,
    select_subclass_count,
)
from .generator import (
    GenConfig,
    SpatialTransform,
    SynthSample,
    generate_batch,
    generate_sample,
    sample_bias_field,
    sample_gmm_intensities,
    sample_transform,
    simulate_resolution,
)
from .augment import AugmentConfig, augment_gamma, preprocess
from .metrics import (
    GrowthFit,
    SubjectMetrics,
    bonferroni,
    dice,
    hausdorff95,
    polyfit_growth,
    tissue_volumes,
    wilcoxon_ranksum,
)

__version__ = "0.1.0"
