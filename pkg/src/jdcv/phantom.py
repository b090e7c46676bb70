"""Synthetic brain-like phantoms standing in for real multimodal MRI."""

from __future__ import annotations

import numpy as np

from .field_core import LabelVolume, LatticeGeometry, ScalarField

# mean intensity per class (background, CSF, GM, WM) for each modality
CONTRAST = {
    "T1": (0.0, 0.25, 0.6, 1.0),
    "T1-IR": (0.0, 0.1, 0.5, 0.9),
    "FLAIR": (0.0, 0.15, 0.8, 0.6),
}


def brain_labels(geometry: LatticeGeometry) -> LabelVolume:
    """Concentric ellipsoidal shells: CSF outside GM outside WM, with a CSF ventricle pair."""
    s = (geometry.node_positions() - np.asarray(geometry.origin)) / np.asarray(geometry.extent) - 0.5
    radii = np.array([0.42, 0.46, 0.40][: geometry.ndim])
    r = np.sqrt(np.sum((s / radii) ** 2, axis=-1))
    # gently wavy GM/WM interface, a stand-in for gyri
    angle = np.arctan2(s[..., 1], s[..., 0])
    wavy = 0.72 + 0.06 * np.sin(7 * angle)
    labels = np.zeros(geometry.dims, dtype=np.uint8)
    labels[r < 1.0] = 1
    labels[r < 0.9] = 2
    labels[r < wavy] = 3
    vent = np.zeros(geometry.ndim)
    for side in (-0.08, 0.08):
        vent[0] = side
        rv = np.sqrt(np.sum(((s - vent) / np.array([0.05, 0.15, 0.1][: geometry.ndim])) ** 2, axis=-1))
        labels[rv < 1.0] = 1
    return LabelVolume(geometry, labels)


def brain_phantom(geometry: LatticeGeometry, noise: float = 0.02, seed: int = 0):
    """Labels plus T1, T1-IR and FLAIR images sharing the geometry."""
    labels = brain_labels(geometry)
    rng = np.random.default_rng(seed)
    images = {}
    for name, levels in CONTRAST.items():
        img = np.asarray(levels)[labels.labels]
        if noise:
            img = img + noise * rng.standard_normal(geometry.dims) * (labels.labels > 0)
        images[name] = ScalarField(geometry, np.clip(img, 0.0, None))
    return images, labels


def disk_image(geometry: LatticeGeometry, radius: float = 0.25, inside: float = 1.0) -> ScalarField:
    """Bright disk (ball in 3D) of ``radius`` (fraction of the shortest side) at the box centre."""
    s = geometry.node_positions() - (np.asarray(geometry.origin) + np.asarray(geometry.extent) / 2)
    r = np.linalg.norm(s, axis=-1)
    return ScalarField(geometry, np.where(r <= radius * min(geometry.extent), inside, 0.0))
