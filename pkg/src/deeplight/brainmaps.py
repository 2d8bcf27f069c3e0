"""Aggregation, thresholding, and overlap scoring of 3D brain maps.

Relevance (or coefficient) volumes are smoothed and averaged up the
sample -> subject -> group hierarchy, thresholded to their strongest positive
voxels, and compared against target region masks by F1 overlap, optionally
per within-block timepoint.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .preprocess import smooth_run

METHODS = ("deeplight", "glm", "searchlight", "lasso")
LEVELS = ("sample", "block", "subject", "group", "timepoint")


@dataclass
class BrainMap:
    values: np.ndarray
    method: str
    state: int
    level: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise InputError(f"brain maps are 3D, got shape {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise InputError("brain map contains non-finite values")
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.level not in LEVELS:
            raise ConfigurationError(f"unknown level {self.level!r}")


@dataclass
class ThresholdedMask:
    mask: np.ndarray          # boolean grid
    rule: str                 # e.g. "percentile,q=90" or "fdr,rate=0.1"
    threshold: float          # cut value actually applied (nan if empty input)

    def count(self):
        return int(self.mask.sum())


@dataclass
class F1Report:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False  # an empty side forced the zero definition


def _smooth_each(volumes, fwhm_mm, voxel_mm):
    volumes = np.asarray(volumes, dtype=np.float64)
    if volumes.ndim == 3:
        volumes = volumes[None]
    if volumes.ndim != 4:
        raise InputError(f"expected (N, X, Y, Z) volumes, got {volumes.shape}")
    return smooth_run(volumes, fwhm_mm, voxel_mm)


def aggregate_subject(volumes, state, method="deeplight", fwhm_mm=3.0,
                      voxel_mm=2.0):
    """Smooth each sample volume, then take the voxelwise mean.

    Returns None when no volumes are given (the caller records a no-map
    status for that subject/state instead of a zero map).
    """
    if len(volumes) == 0:
        return None
    smoothed = _smooth_each(volumes, fwhm_mm, voxel_mm)
    return BrainMap(values=smoothed.mean(axis=0), method=method, state=state,
                    level="subject")


def aggregate_group(maps):
    """Voxelwise mean of subject maps (None entries dropped)."""
    maps = [m for m in maps if m is not None]
    if not maps:
        return None
    shape = maps[0].values.shape
    for m in maps[1:]:
        if m.values.shape != shape:
            raise InputError(
                f"subject map shapes differ: {m.values.shape} vs {shape}")
        if m.state != maps[0].state:
            raise InputError("cannot pool subject maps across states")
    stacked = np.stack([m.values for m in maps])
    # summing in sorted order makes the mean bit-identical under any
    # permutation of the subjects
    mean = np.sort(stacked, axis=0).sum(axis=0) / len(maps)
    return BrainMap(values=mean, method=maps[0].method,
                    state=maps[0].state, level="group")


def threshold_percentile(brain_map, q=90.0):
    """Keep positive voxels at or above the q-th percentile of the positive
    values (linear-interpolation percentile)."""
    if not 0.0 <= q < 100.0:
        raise ConfigurationError(f"percentile must lie in [0, 100), got {q}")
    values = brain_map.values if isinstance(brain_map, BrainMap) else np.asarray(brain_map)
    rule = f"percentile,q={q:g}"
    positive = values > 0
    if not positive.any():
        warnings.warn("map has no positive voxels; threshold mask is empty")
        return ThresholdedMask(mask=np.zeros(values.shape, dtype=bool),
                               rule=rule, threshold=np.nan)
    cut = float(np.percentile(values[positive], q))
    return ThresholdedMask(mask=positive & (values >= cut), rule=rule,
                           threshold=cut)


def threshold_fdr(p_values, rate=0.1):
    """Benjamini-Hochberg step-up: keep all p at or below the largest p_(k)
    with p_(k) <= k*rate/m."""
    p = np.asarray(p_values, dtype=np.float64)
    if p.size == 0 or (p < 0).any() or (p > 1).any():
        raise InputError("p-values must be a non-empty array within [0, 1]")
    if not 0.0 < rate < 1.0:
        raise ConfigurationError(f"fdr rate must lie in (0, 1), got {rate}")
    rule = f"fdr,rate={rate:g}"
    flat = np.sort(p, axis=None)
    m = flat.size
    ok = flat <= (np.arange(1, m + 1) * rate / m)
    if not ok.any():
        return ThresholdedMask(mask=np.zeros(p.shape, dtype=bool), rule=rule,
                               threshold=np.nan)
    cut = float(flat[np.flatnonzero(ok)[-1]])
    return ThresholdedMask(mask=p <= cut, rule=rule, threshold=cut)


def f1_similarity(source, target):
    """Overlap of two thresholded masks as precision/recall/F1."""
    s = source.mask if isinstance(source, ThresholdedMask) else np.asarray(source)
    t = target.mask if isinstance(target, ThresholdedMask) else np.asarray(target)
    if s.shape != t.shape:
        raise InputError(f"mask shapes differ: {s.shape} vs {t.shape}")
    n_s = int(s.sum())
    n_t = int(t.sum())
    if n_s == 0 or n_t == 0:
        return F1Report(precision=0.0, recall=0.0, f1=0.0, degenerate=True)
    inter = int((s & t).sum())
    precision = inter / n_s
    recall = inter / n_t
    f1 = 2 * precision * recall / (precision + recall) if inter else 0.0
    return F1Report(precision=precision, recall=recall, f1=f1)


# ---------------------------------------------------------------------------
# time-resolved group maps
# ---------------------------------------------------------------------------

@dataclass
class TimeCurve:
    """Group map and target overlap per within-block TR offset.

    Offsets no subject contributed to are skipped: map None, scores NaN.
    """
    offsets: np.ndarray
    maps: list
    f1: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    @property
    def skipped(self):
        return np.isnan(self.f1)


def _offset_groups(subject_entries, n_offsets):
    """Per offset, the per-subject stacks of volumes recorded at it."""
    groups = [[] for _ in range(n_offsets)]
    for volumes, offsets in subject_entries:
        volumes = np.asarray(volumes, dtype=np.float64)
        offsets = np.asarray(offsets)
        if len(volumes) != len(offsets):
            raise InputError("each subject needs one offset per volume")
        for k in range(n_offsets):
            sel = offsets == k
            if sel.any():
                groups[k].append(volumes[sel])
    return groups


def time_resolved_maps(subject_entries, target, state, q=90.0, fwhm_mm=3.0,
                       voxel_mm=2.0, method="deeplight", n_offsets=None):
    """Group relevance map and target F1 per within-block TR offset.

    subject_entries: per subject, a (volumes (N,X,Y,Z), offsets (N,)) pair of
    that subject's decomposed, correctly-classified samples and their
    within-block positions.
    """
    if not subject_entries:
        raise InputError("no subjects supplied")
    if n_offsets is None:
        populated = [int(np.max(offs)) for _, offs in subject_entries if len(offs)]
        if not populated:
            raise InputError("no samples in any subject entry")
        n_offsets = 1 + max(populated)
    groups = _offset_groups(subject_entries, n_offsets)
    maps = []
    scores = np.full((3, n_offsets), np.nan)
    for k, per_subject in enumerate(groups):
        subj_maps = [aggregate_subject(v, state, method, fwhm_mm, voxel_mm)
                     for v in per_subject]
        group = aggregate_group(subj_maps)
        maps.append(group)
        if group is None:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            survivors = threshold_percentile(group, q)
        report = f1_similarity(survivors, target)
        scores[:, k] = (report.f1, report.precision, report.recall)
    return TimeCurve(offsets=np.arange(n_offsets), maps=maps, f1=scores[0],
                     precision=scores[1], recall=scores[2])


def lasso_coefficient_maps(subject_entries, coef, target, state, q=90.0,
                           n_offsets=None):
    """Time-resolved variant for the sparse linear decoder: each sample is
    multiplied voxelwise by the state's coefficient vector (no smoothing),
    then averaged and scored like the relevance maps."""
    coef = np.asarray(coef, dtype=np.float64)
    weighted = []
    for volumes, offsets in subject_entries:
        volumes = np.asarray(volumes, dtype=np.float64)
        if len(volumes):
            if coef.size != volumes[0].size:
                raise InputError("coefficient length must match voxel count")
            volumes = volumes * coef.reshape(volumes.shape[1:])
        weighted.append((volumes, offsets))
    return time_resolved_maps(weighted, target, state, q=q, fwhm_mm=0.0,
                              method="lasso", n_offsets=n_offsets)
