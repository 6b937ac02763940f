"""Segmentation evaluation: Dice, robust Hausdorff distance, tissue volumes,
growth-curve fitting, and the rank-sum/Bonferroni statistics stack."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import t as student_t

from .seeds import DEFAULT_FINE_TO_META, META_CSF, META_GM, META_WM
from .volume import LabelMap

TISSUE_LABELS = (1, 2, 3, 4, 5, 6, 7)
TISSUE_NAMES = {
    1: "eCSF", 2: "GM", 3: "WM", 4: "ventricles",
    5: "cerebellum", 6: "deepGM", 7: "brainstem",
}


class MetricError(ValueError):
    """Invalid metric input (geometry mismatch, empty mask, degenerate fit)."""


@dataclass
class SubjectMetrics:
    subject: str
    dice: dict = field(default_factory=dict)        # tissue -> value
    hd95: dict = field(default_factory=dict)        # tissue -> mm (may be absent)
    volume_cm3: dict = field(default_factory=dict)  # tissue -> cm^3

    @property
    def mdsc(self) -> float:
        return float(np.mean([self.dice[t] for t in TISSUE_LABELS]))


@dataclass
class GrowthFit:
    tissue: str
    coeffs: np.ndarray        # (c0, c1, c2): volume = c0 + c1*GA + c2*GA^2
    n: int
    _xtx_inv: np.ndarray = None
    _sigma2: float = 0.0

    def predict(self, ga: np.ndarray) -> np.ndarray:
        ga = np.asarray(ga, dtype=float)
        return self.coeffs[0] + self.coeffs[1] * ga + self.coeffs[2] * ga**2

    def confidence_band(self, ga, level: float = 0.95):
        """CI of the mean response at each GA via the t distribution (n-3 dof)."""
        ga = np.asarray(ga, dtype=float)
        fit = self.predict(ga)
        dof = self.n - 3
        tcrit = student_t.ppf(0.5 + level / 2, dof)
        x0 = np.stack([np.ones_like(ga), ga, ga**2])
        se = np.sqrt(self._sigma2 * np.einsum("in,ij,jn->n", x0, self._xtx_inv, x0))
        return fit - tcrit * se, fit + tcrit * se


def _mask(seg: LabelMap, label: int) -> np.ndarray:
    return seg.data == label


def dice(pred: LabelMap, gt: LabelMap, label: int) -> float:
    """2|P^G| / (|P|+|G|); both masks empty -> 1.0, one empty -> 0.0."""
    if pred.shape != gt.shape:
        raise MetricError(f"geometry mismatch: {pred.shape} vs {gt.shape}")
    p = _mask(pred, label)
    g = _mask(gt, label)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / denom


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Voxels of the mask with a 6-neighbor outside it (or on the grid edge)."""
    if not mask.any():
        return np.zeros((0, 3), dtype=np.int64)
    interior = np.ones_like(mask)
    for axis in range(3):
        lo = np.roll(mask, 1, axis=axis)
        hi = np.roll(mask, -1, axis=axis)
        # rolled-in faces count as outside: grid-boundary voxels are surface
        sl = [slice(None)] * 3
        sl[axis] = 0
        lo[tuple(sl)] = False
        sl[axis] = -1
        hi[tuple(sl)] = False
        interior &= lo & hi
    surf = mask & ~interior
    return np.argwhere(surf)


def _percentile_nearest_rank(values: np.ndarray, q: float) -> float:
    v = np.sort(values)
    rank = max(1, math.ceil(q / 100.0 * len(v)))
    return float(v[rank - 1])


def hausdorff95(pred: LabelMap, gt: LabelMap, label: int, spacing=None) -> float:
    """Max of the two directed 95th-percentile surface distances, in mm."""
    if pred.shape != gt.shape:
        raise MetricError(f"geometry mismatch: {pred.shape} vs {gt.shape}")
    spacing = np.asarray(spacing if spacing is not None else pred.spacing, dtype=float)
    ps = surface_voxels(_mask(pred, label))
    gs = surface_voxels(_mask(gt, label))
    if len(ps) == 0 or len(gs) == 0:
        raise MetricError(f"undefined HD95: empty mask for label {label}")
    p_mm = ps * spacing
    g_mm = gs * spacing
    d_pg, _ = cKDTree(g_mm).query(p_mm)
    d_gp, _ = cKDTree(p_mm).query(g_mm)
    return max(
        _percentile_nearest_rank(d_pg, 95.0),
        _percentile_nearest_rank(d_gp, 95.0),
    )


def tissue_volumes(seg: LabelMap) -> dict:
    """Per-label volume in cm^3, plus total brain and meta-group volumes."""
    voxel_mm3 = float(np.prod(seg.spacing))
    out = {}
    for label in TISSUE_LABELS:
        out[TISSUE_NAMES[label]] = int((seg.data == label).sum()) * voxel_mm3 / 1000.0
    out["total_brain"] = sum(out[TISSUE_NAMES[t]] for t in TISSUE_LABELS)
    groups = {META_CSF: "CSF", META_GM: "GM_total", META_WM: "WM_total"}
    for meta, name in groups.items():
        fine = [t for t, m in DEFAULT_FINE_TO_META.items() if m == meta]
        out[name] = sum(out[TISSUE_NAMES[t]] for t in fine)
    return out


def polyfit_growth(ga, vol, order: int = 2, tissue: str = "") -> GrowthFit:
    """Ordinary least squares on the Vandermonde design, order 2 by default."""
    ga = np.asarray(ga, dtype=float)
    vol = np.asarray(vol, dtype=float)
    n = len(ga)
    if n < order + 2:
        raise MetricError(f"need at least {order + 2} subjects, got {n}")
    if np.ptp(ga) == 0:
        raise MetricError("degenerate fit: all GA values identical")
    X = np.vander(ga, order + 1, increasing=True)
    xtx = X.T @ X
    if np.linalg.matrix_rank(xtx) < order + 1:
        raise MetricError("degenerate fit: rank-deficient design")
    coeffs, *_ = np.linalg.lstsq(X, vol, rcond=None)
    resid = vol - X @ coeffs
    dof = max(n - (order + 1), 1)
    fit = GrowthFit(tissue=tissue, coeffs=coeffs, n=n)
    fit._xtx_inv = np.linalg.inv(xtx)
    fit._sigma2 = float(resid @ resid) / dof
    return fit


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=float)
    sorted_v = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def wilcoxon_ranksum(a, b) -> float:
    """Two-sided rank-sum p-value.

    Exact permutation distribution when n+m <= 12, otherwise a normal
    approximation with tie and continuity corrections.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) == 0 or len(b) == 0:
        raise MetricError("rank-sum test needs nonempty samples")
    n, m = len(a), len(b)
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    w = float(ranks[:n].sum())
    mean_w = n * (n + m + 1) / 2.0

    if n + m <= 12:
        dev = abs(w - mean_w)
        count = 0
        total = 0
        for idx in combinations(range(n + m), n):
            total += 1
            ws = ranks[list(idx)].sum()
            if abs(ws - mean_w) >= dev - 1e-12:
                count += 1
        return count / total

    # tie-corrected variance
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(((tie_counts**3 - tie_counts)).sum())
    nm = n + m
    var_w = n * m / 12.0 * ((nm + 1) - tie_term / (nm * (nm - 1)))
    if var_w <= 0:
        return 1.0
    z = (abs(w - mean_w) - 0.5) / math.sqrt(var_w)
    z = max(z, 0.0)
    return math.erfc(z / math.sqrt(2.0))


def bonferroni(pvals, alpha: float = 0.05) -> list[bool]:
    """Significance decisions at the family-wise level: p < alpha / m."""
    pvals = list(pvals)
    if not pvals:
        raise MetricError("bonferroni needs at least one p-value")
    m = len(pvals)
    return [p < alpha / m for p in pvals]


def evaluate_pair(pred: LabelMap, gt: LabelMap, subject: str = "") -> SubjectMetrics:
    """All per-tissue metrics for one prediction/ground-truth pair."""
    rec = SubjectMetrics(subject=subject)
    voxel_mm3 = float(np.prod(pred.spacing))
    for label in TISSUE_LABELS:
        rec.dice[label] = dice(pred, gt, label)
        try:
            rec.hd95[label] = hausdorff95(pred, gt, label)
        except MetricError:
            pass  # empty mask: excluded from aggregates
        rec.volume_cm3[label] = int((pred.data == label).sum()) * voxel_mm3 / 1000.0
    return rec
