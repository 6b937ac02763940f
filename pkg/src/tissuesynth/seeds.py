"""Generation seed maps: meta-label merging, skull ring and EM subclassing.

Fine tissue labels are merged into four coarse meta-labels (CSF, GM, WM and
a geometrically derived skull/surrounding ring).  Each meta-label region is
then split into 1-4 intensity subclasses by fitting univariate Gaussian
mixtures with EM and picking the component count by BIC.  The resulting
subclass map, together with the untouched fine label map, is the seed from
which synthetic samples are generated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .volume import BACKGROUND, LabelMap, VoxelGrid, same_geometry

META_CSF, META_GM, META_WM, META_SKULL = 1, 2, 3, 4
META_LABELS = (META_CSF, META_GM, META_WM, META_SKULL)
META_NAMES = {META_CSF: "CSF", META_GM: "GM", META_WM: "WM", META_SKULL: "skull"}

# eCSF/ventricles -> CSF, GM/deep GM -> GM, WM/cerebellum/brainstem -> WM
DEFAULT_FINE_TO_META = {1: META_CSF, 4: META_CSF, 2: META_GM, 6: META_GM,
                        3: META_WM, 5: META_WM, 7: META_WM}

SMALL_REGION_VOXELS = 50


class SeedError(ValueError):
    """Invalid input to seed construction."""


@dataclass(frozen=True)
class MetaLabelMapping:
    """Fine-label to meta-label table; skull (4) is derived, never mapped."""

    table: dict = field(default_factory=lambda: dict(DEFAULT_FINE_TO_META))

    def __post_init__(self):
        bad = {m for m in self.table.values() if m not in (META_CSF, META_GM, META_WM)}
        if bad:
            raise SeedError(f"mapping targets must be meta-labels 1-3, got {sorted(bad)}")


@dataclass
class GmmParams:
    """A fitted univariate Gaussian mixture with its EM log-likelihood trace."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_lik_trace: list = field(default_factory=list)
    collapsed: bool = False

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "log_lik": self.log_lik_trace[-1] if self.log_lik_trace else None,
        }


@dataclass
class SeedMap:
    """Subclass label volume plus the tables needed for paired-target emission."""

    subclasses: LabelMap
    subclass_to_meta: dict
    fine_labels: LabelMap
    gmm_by_meta: dict = field(default_factory=dict)
    source_id: str = ""

    def sidecar(self, config_digest: str = "") -> dict:
        return {
            "source_id": self.source_id,
            "subclass_to_meta": {str(k): v for k, v in self.subclass_to_meta.items()},
            "gmm_by_meta": {
                str(m): p.to_dict() for m, p in self.gmm_by_meta.items() if p is not None
            },
            "config_digest": config_digest,
        }


def merge_to_meta_labels(labels: LabelMap, mapping: MetaLabelMapping | None = None) -> LabelMap:
    """Apply the fine->meta table voxelwise; background stays 0."""
    mapping = mapping or MetaLabelMapping()
    present = np.unique(labels.data)
    missing = [int(l) for l in present if l != BACKGROUND and int(l) not in mapping.table]
    if missing:
        raise SeedError(f"fine labels {missing} absent from meta-label mapping")
    lut = np.zeros(int(present.max()) + 1, dtype=labels.data.dtype)
    for fine, meta in mapping.table.items():
        if fine <= present.max():
            lut[fine] = meta
    merged = lut[labels.data]
    return LabelMap(grid=labels.grid.with_data(merged), label_set=frozenset(range(5)))


def derive_skull_region(meta: LabelMap, ring_mm: float) -> LabelMap:
    """Assign meta-label 4 to background voxels within ``ring_mm`` of the brain."""
    brain = np.isin(meta.data, (META_CSF, META_GM, META_WM))
    if not brain.any():
        raise SeedError("empty brain region: no meta-labels 1-3 present")
    if ring_mm <= 0:
        return meta
    dist = ndimage.distance_transform_edt(~brain, sampling=meta.spacing)
    skull = (~brain) & (dist <= ring_mm)
    out = meta.data.copy()
    out[skull & (out == BACKGROUND)] = META_SKULL
    return LabelMap(grid=meta.grid.with_data(out), label_set=frozenset(range(5)))


def _log_gauss(x: np.ndarray, mean: float, var: float) -> np.ndarray:
    return -0.5 * (np.log(2 * np.pi * var) + (x - mean) ** 2 / var)


def _em_once(x: np.ndarray, k: int, init_means: np.ndarray, init_var: float,
             var_floor: float, max_iter: int, tol: float) -> GmmParams:
    n = len(x)
    weights = np.full(k, 1.0 / k)
    means = init_means.astype(float).copy()
    variances = np.full(k, max(init_var, var_floor))
    trace: list[float] = []
    prev = None
    for _ in range(max_iter):
        # E step
        log_p = np.stack([np.log(weights[c]) + _log_gauss(x, means[c], variances[c])
                          for c in range(k)])
        m = log_p.max(axis=0)
        log_norm = m + np.log(np.exp(log_p - m).sum(axis=0))
        ll = float(log_norm.sum())
        trace.append(ll)
        resp = np.exp(log_p - log_norm)
        # M step
        nk = resp.sum(axis=1)
        if nk.min() < 1e-6 * n:
            break  # collapsed; caller restarts
        weights = nk / n
        means = (resp @ x) / nk
        variances = np.maximum((resp @ x**2) / nk - means**2, var_floor)
        if prev is not None and abs(ll - prev) <= tol * (abs(prev) + 1e-12):
            break
        prev = ll
    return GmmParams(weights=weights, means=means, variances=variances, log_lik_trace=trace)


def em_fit(intensities, k: int, rng_seed: int = 0, max_iter: int = 200,
           tol: float = 1e-6) -> GmmParams:
    """Fit a k-component univariate GMM by EM with deterministic quantile init."""
    x = np.asarray(intensities, dtype=float).ravel()
    if not 1 <= k <= 4:
        raise SeedError(f"component count must be in 1..4, got {k}")
    if len(x) < k:
        raise SeedError(f"need at least {k} samples, got {len(x)}")
    if k == 1:
        mean = float(x.mean())
        var = float(x.var())
        ll = float(_log_gauss(x, mean, max(var, 1e-12)).sum())
        return GmmParams(
            weights=np.array([1.0]),
            means=np.array([mean]),
            variances=np.array([max(var, 1e-12)]),
            log_lik_trace=[ll],
        )
    region_var = float(x.var())
    var_floor = max(1e-6 * region_var, 1e-12)
    quantiles = np.linspace(0, 1, k + 2)[1:-1]
    init_means = np.quantile(x, quantiles)
    fit = _em_once(x, k, init_means, region_var, var_floor, max_iter, tol)
    if fit.weights.min() < 1e-6:
        rng = np.random.default_rng(rng_seed)
        jitter = rng.normal(0, max(np.sqrt(region_var), 1e-6), size=k)
        fit = _em_once(x, k, init_means + jitter, region_var, var_floor, max_iter, tol)
        fit.collapsed = fit.weights.min() < 1e-6
    return fit


def bic(fit: GmmParams, n: int) -> float:
    k = fit.n_components
    return -2.0 * fit.log_lik_trace[-1] + (3 * k - 1) * np.log(n)


def select_subclass_count(intensities, k_max: int = 4, rng_seed: int = 0) -> tuple[int, GmmParams]:
    """Exhaustive BIC scan over 1..k_max; tiny regions fall back to K=1."""
    x = np.asarray(intensities, dtype=float).ravel()
    if len(x) == 0:
        raise SeedError("empty intensity sample")
    if len(x) < SMALL_REGION_VOXELS:
        return 1, em_fit(x, 1, rng_seed)
    best_k, best_fit, best_bic = 1, None, np.inf
    for k in range(1, min(k_max, len(x)) + 1):
        fit = em_fit(x, k, rng_seed)
        score = bic(fit, len(x))
        if score < best_bic:
            best_k, best_fit, best_bic = k, fit, score
    return best_k, best_fit


@dataclass
class SeedConfig:
    mapping: MetaLabelMapping = field(default_factory=MetaLabelMapping)
    skull_ring_mm: float = 5.0
    k_max: int = 4
    rng_seed: int = 0


def build_seed_map(image: VoxelGrid | None, labels: LabelMap,
                   cfg: SeedConfig | None = None, source_id: str = "") -> SeedMap:
    """Build the subclass seed map for one subject.

    Without an image the builder degrades to one subclass per meta-label.
    Subclass ids are numbered globally in meta-label order starting at 1.
    """
    cfg = cfg or SeedConfig()
    if image is not None and not same_geometry(image, labels.grid):
        raise SeedError("image and labels must share grid geometry")
    meta = merge_to_meta_labels(labels, cfg.mapping)
    meta = derive_skull_region(meta, cfg.skull_ring_mm)

    sub = np.zeros(labels.shape, dtype=np.int64)
    subclass_to_meta: dict[int, int] = {}
    gmm_by_meta: dict[int, GmmParams | None] = {}
    next_id = 1
    for m in META_LABELS:
        region = meta.data == m
        n_region = int(region.sum())
        if n_region == 0:
            gmm_by_meta[m] = None
            continue
        if image is None:
            k, fit = 1, None
        else:
            k, fit = select_subclass_count(
                image.data[region], k_max=cfg.k_max, rng_seed=cfg.rng_seed + m
            )
        gmm_by_meta[m] = fit
        ids = list(range(next_id, next_id + k))
        for sid in ids:
            subclass_to_meta[sid] = m
        if k == 1 or fit is None:
            sub[region] = ids[0]
        else:
            x = image.data[region].astype(float)
            log_p = np.stack([
                np.log(fit.weights[c]) + _log_gauss(x, fit.means[c], fit.variances[c])
                for c in range(k)
            ])
            assign = np.argmax(log_p, axis=0)
            sub[region] = np.asarray(ids)[assign]
        next_id += k

    sub_map = LabelMap(
        grid=labels.grid.with_data(sub),
        label_set=frozenset(range(next_id)),
    )
    return SeedMap(
        subclasses=sub_map,
        subclass_to_meta=subclass_to_meta,
        fine_labels=labels,
        gmm_by_meta=gmm_by_meta,
        source_id=source_id,
    )


def save_sidecar(seed: SeedMap, path, config_digest: str = "") -> None:
    with open(path, "w") as f:
        json.dump(seed.sidecar(config_digest), f, indent=2, sort_keys=True)
