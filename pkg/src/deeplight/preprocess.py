"""Volume preprocessing: spatial Gaussian smoothing, per-voxel linear
detrending with standardization, zero-phase temporal highpass filtering, and
the intensity-threshold head mask with its bounding box.

Pipeline order: the mask is computed from the raw intensities of the whole
dataset (thresholds are meaningless after standardization), every volume is
smoothed on the full grid, then cropped to the mask box, then detrended,
standardized and filtered along time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal

from .errors import ConfigurationError, InputError

FWHM_TO_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))  # ≈ 2.3548


@dataclass(frozen=True)
class PreprocConfig:
    fwhm_mm: float = 3.0
    cutoff_s: float = 128.0
    mask_fraction: float = 0.05
    voxel_mm: float = 2.0
    tr_s: float = 0.72

    def __post_init__(self):
        for key in ("fwhm_mm", "cutoff_s", "mask_fraction", "voxel_mm", "tr_s"):
            v = getattr(self, key)
            if not np.isfinite(v) or v <= 0:
                raise ConfigurationError(f"preprocess {key} must be positive, got {v}")


def sigma_voxels(fwhm_mm, voxel_mm):
    """Gaussian σ in voxel units for a smoothing width given as FWHM in mm."""
    return fwhm_mm / (FWHM_TO_SIGMA * voxel_mm)


def gaussian_smooth(volume, fwhm_mm, voxel_mm):
    """Separable normalized Gaussian, zero-padded borders, 4σ support."""
    if fwhm_mm < 0:
        raise ConfigurationError(f"smoothing fwhm must be >= 0, got {fwhm_mm}")
    volume = np.asarray(volume, dtype=np.float64)
    if fwhm_mm == 0:
        return volume.copy()
    sigma = sigma_voxels(fwhm_mm, voxel_mm)
    return ndimage.gaussian_filter(volume, sigma, mode="constant", cval=0.0, truncate=4.0)


def smooth_run(run, fwhm_mm, voxel_mm):
    """Smooth each timepoint of a (T, X, Y, Z) run spatially."""
    run = np.asarray(run)
    if run.ndim != 4:
        raise InputError(f"expected a (T, X, Y, Z) run, got shape {run.shape}")
    if fwhm_mm == 0:
        return run.astype(np.float64, copy=True)
    sigma = sigma_voxels(fwhm_mm, voxel_mm)
    return ndimage.gaussian_filter(run.astype(np.float64), (0, sigma, sigma, sigma),
                                   mode="constant", cval=0.0, truncate=4.0)


def detrend_standardize(series):
    """Remove the least-squares line along axis 0, then scale to unit variance.

    Residuals with (numerically) zero variance come back as all zeros.
    """
    x = np.asarray(series, dtype=np.float64)
    t_len = x.shape[0]
    if t_len < 3:
        raise InputError(f"need at least 3 timepoints to detrend, got {t_len}")
    t = np.arange(t_len, dtype=np.float64)
    tc = t - t.mean()
    shape_tail = (1,) * (x.ndim - 1)
    tc_col = tc.reshape((t_len,) + shape_tail)
    xc = x - x.mean(axis=0)
    slope = (tc_col * xc).sum(axis=0) / (tc @ tc)
    resid = xc - slope * tc_col
    std = resid.std(axis=0)
    # a residual this far below the data scale is fit error, not signal
    floor = 1e-12 * np.maximum(1.0, np.abs(x).max(axis=0))
    degenerate = std <= floor
    safe = np.where(degenerate, 1.0, std)
    return np.where(degenerate, 0.0, resid / safe)


def highpass(series, cutoff_s, tr_s):
    """5th-order Butterworth highpass at 1/cutoff Hz, run forward-backward."""
    if cutoff_s <= 2.0 * tr_s:
        raise ConfigurationError(
            f"highpass cutoff {cutoff_s}s must exceed twice the sampling interval {tr_s}s")
    x = np.asarray(series, dtype=np.float64)
    wn = (2.0 * tr_s) / cutoff_s  # cutoff frequency over Nyquist
    b, a = signal.butter(5, wn, btype="highpass")
    return signal.filtfilt(b, a, x, axis=0)


@dataclass(frozen=True)
class BrainMask:
    grid: np.ndarray   # boolean (X, Y, Z), True where intensity clears the bar
    box: tuple         # ((x0, x1), (y0, y1), (z0, z1)) inclusive index ranges

    @property
    def slices(self):
        return tuple(slice(lo, hi + 1) for lo, hi in self.box)

    def crop_volume(self, volume):
        return np.asarray(volume)[self.slices]

    def crop_run(self, run):
        return np.asarray(run)[(slice(None),) + self.slices]

    def box_extents(self):
        return tuple(hi - lo + 1 for lo, hi in self.box)


def compute_mask(volumes, fraction=0.05):
    """Flag voxels whose peak intensity exceeds `fraction` of the dataset
    maximum; the box spans the first to last flagged index per axis."""
    stack = np.asarray(volumes, dtype=np.float64)
    if stack.ndim == 3:
        stack = stack[None]
    if stack.ndim != 4 or stack.shape[0] < 1:
        raise InputError(f"expected volumes shaped (T, X, Y, Z), got {np.shape(volumes)}")
    peak_per_voxel = stack.max(axis=0)
    threshold = fraction * stack.max()
    grid = peak_per_voxel > threshold
    if not grid.any():
        raise InputError(
            f"no voxel exceeds {fraction:.0%} of the dataset maximum; cannot build a mask")
    box = []
    for axis in range(3):
        hit = np.any(grid, axis=tuple(a for a in range(3) if a != axis))
        idx = np.flatnonzero(hit)
        box.append((int(idx[0]), int(idx[-1])))
    return BrainMask(grid=grid, box=tuple(box))


def preprocess_run(run, config, mask=None):
    """Smooth, crop, detrend/standardize and highpass one (T, X, Y, Z) run."""
    run = np.asarray(run)
    if run.ndim != 4:
        raise InputError(f"expected a (T, X, Y, Z) run, got shape {run.shape}")
    smoothed = smooth_run(run, config.fwhm_mm, config.voxel_mm)
    if mask is not None:
        smoothed = mask.crop_run(smoothed)
    cleaned = detrend_standardize(smoothed)
    return highpass(cleaned, config.cutoff_s, config.tr_s)


def preprocess_dataset(runs, config):
    """Shared-mask preprocessing across every run of a dataset."""
    runs = [np.asarray(r) for r in runs]
    if not runs:
        raise InputError("no runs to preprocess")
    mask = compute_mask(np.concatenate(runs, axis=0), config.mask_fraction)
    return [preprocess_run(r, config, mask) for r in runs], mask
