"""Independent reference implementations shared by the metric tests."""

import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist


def boundary_oracle(mask):
    """Mask voxels with any of the 26 neighbours outside the mask or off the volume."""
    p = np.pad(mask, 1, constant_values=False)
    inner = np.ones_like(mask)
    for off in np.ndindex(3, 3, 3):
        inner &= p[off[0] : off[0] + mask.shape[0], off[1] : off[1] + mask.shape[1], off[2] : off[2] + mask.shape[2]]
    return mask & ~inner


def brute_hausdorff(a, b, spacing, chunk=2048):
    pa = np.argwhere(boundary_oracle(a)) * np.asarray(spacing)
    pb = np.argwhere(boundary_oracle(b)) * np.asarray(spacing)

    def directed(x, y):
        worst = 0.0
        for s in range(0, len(x), chunk):
            worst = max(worst, cdist(x[s : s + chunk], y).min(axis=1).max())
        return worst

    return max(directed(pa, pb), directed(pb, pa))


def random_blob_labels(rng, shape=(16, 16, 16), classes=3):
    noise = ndimage.gaussian_filter(rng.normal(size=shape), rng.uniform(0.8, 2.0))
    levels = np.linspace(0.15, 0.75, classes) + rng.uniform(-0.08, 0.08, classes)
    cuts = np.quantile(noise, levels)
    return np.digitize(noise, cuts).astype(np.uint8)
