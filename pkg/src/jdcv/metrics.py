"""Per-class overlap, surface distance and volume metrics for label volumes."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import UndefinedMetricError
from .field_core import LabelVolume

TISSUE_CLASSES = {1: "CSF", 2: "GM", 3: "WM"}
METRICS = ("dsc", "hd", "avd")


def _masks(pred: LabelVolume, truth: LabelVolume, label: int):
    truth.geometry.require_same(pred.geometry, "prediction")
    return pred.labels == label, truth.labels == label


def dsc(pred: LabelVolume, truth: LabelVolume, label: int) -> float:
    p, t = _masks(pred, truth, label)
    tp = np.count_nonzero(p & t)
    denom = np.count_nonzero(p) + np.count_nonzero(t)
    if denom == 0:
        return 1.0
    return 2.0 * tp / denom


def boundary(mask: np.ndarray) -> np.ndarray:
    """Voxels of ``mask`` with at least one fully-connected neighbour outside it (or off the volume)."""
    structure = np.ones((3,) * mask.ndim, dtype=bool)
    return mask & ~ndimage.binary_erosion(mask, structure=structure, border_value=0)


def _directed(src: np.ndarray, dst: np.ndarray, spacing) -> float:
    dist = ndimage.distance_transform_edt(~dst, sampling=spacing)
    return float(dist[src].max())


def hausdorff(pred: LabelVolume, truth: LabelVolume, label: int, surface: bool = True) -> float:
    """Symmetric Hausdorff distance in mm between the class regions (their boundaries by default)."""
    p, t = _masks(pred, truth, label)
    if not p.any() or not t.any():
        raise UndefinedMetricError(f"class {label} is empty in {'prediction' if not p.any() else 'ground truth'}")
    if surface:
        p, t = boundary(p), boundary(t)
    sp = truth.geometry.spacing
    return max(_directed(p, t, sp), _directed(t, p, sp))


def avd(pred: LabelVolume, truth: LabelVolume, label: int) -> float:
    """|V_truth - V_pred| / V_truth."""
    p, t = _masks(pred, truth, label)
    vt = np.count_nonzero(t) * truth.geometry.cell_volume
    if vt == 0:
        raise UndefinedMetricError(f"class {label} is empty in ground truth")
    vp = np.count_nonzero(p) * pred.geometry.cell_volume
    return abs(vt - vp) / vt


@dataclass
class MetricsReport:
    per_class: dict = field(default_factory=dict)
    undefined: dict = field(default_factory=dict)

    @property
    def averages(self) -> dict:
        out = {}
        for m in METRICS:
            vals = [self.per_class[c][m] for c in TISSUE_CLASSES.values() if c in self.per_class]
            ok = len(vals) == len(TISSUE_CLASSES) and all(v is not None for v in vals)
            out[m] = float(np.mean(vals)) if ok else None
        return out

    def table_row(self) -> dict:
        """Wide layout: Dice, HD, AVD, each over CSF, GM, WM."""
        heads = {"dsc": "Dice", "hd": "HD", "avd": "AVD"}
        return {
            f"{heads[m]} {c}": self.per_class.get(c, {}).get(m)
            for m in METRICS
            for c in TISSUE_CLASSES.values()
        }

    def rows(self):
        for name, vals in self.per_class.items():
            yield {"class": name, "dsc": vals["dsc"], "hd_mm": vals["hd"], "avd": vals["avd"]}
        avg = self.averages
        yield {"class": "average", "dsc": avg["dsc"], "hd_mm": avg["hd"], "avd": avg["avd"]}

    def to_json(self) -> str:
        return json.dumps(
            {
                "per_class": self.per_class,
                "averages": self.averages,
                "table": self.table_row(),
                "undefined": self.undefined,
            },
            indent=2,
        )

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["class", "dsc", "hd_mm", "avd"])
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: ("undefined" if v is None else v) for k, v in row.items()})


def evaluate(pred: LabelVolume, truth: LabelVolume, classes: dict = TISSUE_CLASSES, surface: bool = True) -> MetricsReport:
    truth.geometry.require_same(pred.geometry, "prediction")
    report = MetricsReport()
    for label, name in classes.items():
        row = {"dsc": dsc(pred, truth, label)}
        for metric, fn in (("hd", partial(hausdorff, surface=surface)), ("avd", avd)):
            try:
                row[metric] = fn(pred, truth, label)
            except UndefinedMetricError as exc:
                row[metric] = None
                report.undefined[f"{name}.{metric}"] = str(exc)
        report.per_class[name] = row
    return report

