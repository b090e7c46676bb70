"""Intensity preprocessing: high-pass by Gaussian subtraction, masked z-score, slice-wise CLAHE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, ParameterError
from .field_core import LabelVolume, ScalarField

N_BINS = 256


@dataclass(frozen=True)
class PreprocessConfig:
    gaussian_sigma: float = 2.0
    clahe_tiles: int = 8
    clahe_clip: float = 0.01
    mask_threshold: float = 0.0

    def __post_init__(self):
        if not self.gaussian_sigma > 0:
            raise ParameterError("gaussian_sigma must be > 0")
        if self.clahe_tiles < 1:
            raise ParameterError("clahe_tiles must be >= 1")
        if not 0 < self.clahe_clip <= 1:
            raise ParameterError("clahe_clip must lie in (0, 1]")


def gaussian_subtract(image: ScalarField, sigma: float) -> ScalarField:
    """``I - G_sigma * I``; sigma in mm, kernel cut at 3 sigma, mirrored borders."""
    if not sigma > 0:
        raise ParameterError("sigma must be > 0")
    sig = [sigma / h for h in image.geometry.spacing]
    smooth = ndimage.gaussian_filter(image.values, sig, mode="reflect", truncate=3.0)
    return image.with_values(image.values - smooth)


def brain_mask(image: ScalarField, threshold: float = 0.0) -> LabelVolume:
    return LabelVolume(image.geometry, (image.values > threshold).astype(np.uint8), {0: "outside", 1: "brain"})


def zscore(image: ScalarField, mask: LabelVolume) -> ScalarField:
    image.geometry.require_same(mask.geometry, "mask")
    inside = mask.labels > 0
    if not inside.any():
        raise DegenerateInputError("z-score mask is empty")
    vals = image.values[inside]
    mu = vals.mean()
    sd = vals.std()
    if not sd > 1e-12 * max(1.0, abs(mu)):
        raise DegenerateInputError("zero intensity variance inside the mask")
    out = np.zeros(image.geometry.dims)
    out[inside] = (vals - mu) / sd
    return image.with_values(out)


def _tile_bounds(n: int, tiles: int) -> np.ndarray:
    tiles = min(tiles, n)
    return np.linspace(0, n, tiles + 1).round().astype(int)


def _tile_lut(block: np.ndarray, clip: float) -> np.ndarray:
    hist = np.bincount(block.ravel(), minlength=N_BINS).astype(float)
    limit = clip * block.size
    excess = np.sum(np.maximum(hist - limit, 0.0))
    hist = np.minimum(hist, limit) + excess / N_BINS
    cdf = np.cumsum(hist)
    return cdf / cdf[-1]


def _interp_weights(n: int, bounds: np.ndarray):
    """Lower tile index and upper-tile weight for every pixel along one axis."""
    centres = (bounds[:-1] + bounds[1:] - 1) / 2.0
    pos = np.arange(n, dtype=float)
    if len(centres) == 1:
        return np.zeros(n, dtype=int), np.zeros(n)
    t = np.interp(pos, centres, np.arange(len(centres)))
    lo = np.minimum(np.floor(t).astype(int), len(centres) - 2)
    return lo, t - lo


def clahe_slice(unit: np.ndarray, tiles: int, clip: float) -> np.ndarray:
    """CLAHE of one 2D slice already scaled to [0, 1]."""
    bins = np.minimum((unit * N_BINS).astype(int), N_BINS - 1)
    bx, by = _tile_bounds(unit.shape[0], tiles), _tile_bounds(unit.shape[1], tiles)
    luts = np.empty((len(bx) - 1, len(by) - 1, N_BINS))
    for i in range(len(bx) - 1):
        for j in range(len(by) - 1):
            luts[i, j] = _tile_lut(bins[bx[i] : bx[i + 1], by[j] : by[j + 1]], clip)
    lx, wx = _interp_weights(unit.shape[0], bx)
    ly, wy = _interp_weights(unit.shape[1], by)
    hx = np.minimum(lx + 1, luts.shape[0] - 1)
    hy = np.minimum(ly + 1, luts.shape[1] - 1)
    LX, LY = np.meshgrid(lx, ly, indexing="ij")
    HX, HY = np.meshgrid(hx, hy, indexing="ij")
    WX, WY = np.meshgrid(wx, wy, indexing="ij")
    out = (
        (1 - WX) * (1 - WY) * luts[LX, LY, bins]
        + WX * (1 - WY) * luts[HX, LY, bins]
        + (1 - WX) * WY * luts[LX, HY, bins]
        + WX * WY * luts[HX, HY, bins]
    )
    return np.clip(out, 0.0, 1.0)


def clahe(image: ScalarField, cfg: PreprocessConfig = PreprocessConfig()) -> ScalarField:
    """Contrast-limited adaptive histogram equalisation, one axial (last-axis) slice at a time.

    The whole volume is first scaled to [0, 1] so slices share one intensity scale.
    """
    v = image.values
    lo, hi = v.min(), v.max()
    unit = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    if v.ndim == 2:
        return image.with_values(clahe_slice(unit, cfg.clahe_tiles, cfg.clahe_clip))
    out = np.empty_like(unit)
    for k in range(v.shape[-1]):
        out[..., k] = clahe_slice(unit[..., k], cfg.clahe_tiles, cfg.clahe_clip)
    return image.with_values(out)


def preprocess(image: ScalarField, cfg: PreprocessConfig = PreprocessConfig()) -> ScalarField:
    """Gaussian subtraction, then z-score inside the nonzero mask, then CLAHE."""
    mask = brain_mask(image, cfg.mask_threshold)
    hp = gaussian_subtract(image, cfg.gaussian_sigma)
    return clahe(zscore(hp, mask), cfg)
