"""JD/CV feature images and multi-channel input stacks for an external segmenter."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deformation import DeformationConfig, MonitorSpec, generate_grid
from .errors import GeometryError, ParameterError
from .field_core import DiffeoMap, LatticeGeometry, ScalarField, read_volume, write_volume
from .numerics import curl_values, det_values, jacobian_matrices

MODALITIES = ("T1", "T1-IR", "FLAIR")
FEATURES = ("JD", "CV")

ARMS = {
    "single": (("T1",), ()),
    "three": (MODALITIES, ()),
    "single+jd": (("T1",), ("JD",)),
    "single+cv": (("T1",), ("CV",)),
    "single+jdcv": (("T1",), ("JD", "CV")),
    "three+jd": (MODALITIES, ("JD",)),
    "three+cv": (MODALITIES, ("CV",)),
    "three+jdcv": (MODALITIES, ("JD", "CV")),
}

# channel counts reported for the original network inputs; each physical channel
# appears twice there, which is recorded in manifests but not replicated
REPORTED_CHANNEL_COUNT = {"single": 2, "three": 6, "three+jd": 8, "three+cv": 8, "three+jdcv": 10}

MAX_CHANNELS = 5


@dataclass(frozen=True)
class ChannelStack:
    channels: tuple
    names: tuple
    offset: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        channels = tuple(self.channels)
        names = tuple(self.names)
        if not 1 <= len(channels) <= MAX_CHANNELS:
            raise ParameterError(f"a stack holds 1..{MAX_CHANNELS} channels, got {len(channels)}")
        if len(names) != len(channels):
            raise ParameterError("one name per channel required")
        if len(set(names)) != len(names):
            raise ParameterError(f"duplicate channel names {names}")
        g = channels[0].geometry
        for name, ch in zip(names, channels):
            if ch.geometry != g:
                raise GeometryError(f"channel {name!r} geometry {ch.geometry.dims} differs from {g.dims}")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "names", names)

    @property
    def geometry(self) -> LatticeGeometry:
        return self.channels[0].geometry

    def __len__(self):
        return len(self.channels)

    def array(self) -> np.ndarray:
        """Channels-last array ``dims + (m,)``."""
        return np.stack([c.values for c in self.channels], axis=-1)


def cells_to_nodes(cell_values: np.ndarray) -> np.ndarray:
    """Average of the cells touching each node (boundary nodes see fewer cells)."""
    d = cell_values.ndim
    p = np.pad(cell_values, 1, mode="edge")
    acc = 0.0
    for offs in itertools.product((0, 1), repeat=d):
        acc = acc + p[tuple(slice(o, o + n + 1) for o, n in zip(offs, cell_values.shape))]
    return acc / 2**d


def features_from_map(phi: DiffeoMap, cv_components: bool = False):
    """JD (resampled from cells to nodes) and curl-of-displacement images of a map."""
    g = phi.geometry
    J = det_values(jacobian_matrices(phi.positions, g.spacing))
    jd = ScalarField(g, cells_to_nodes(J))
    c = curl_values(phi.positions - g.node_positions(), g.spacing)
    if g.ndim == 2:
        cv = ScalarField(g, c)
    elif cv_components:
        cv = tuple(ScalarField(g, c[..., k]) for k in range(3))
    else:
        cv = ScalarField(g, np.linalg.norm(c, axis=-1))
    return jd, cv


def extract_jd_cv(
    t1: ScalarField,
    spec: MonitorSpec = MonitorSpec(),
    cfg: DeformationConfig = DeformationConfig(),
    cv_components: bool = False,
    return_map: bool = False,
):
    """Deform a grid adapted to ``t1`` and return its JD and CV images on the voxel lattice.

    In 3D the CV image is the curl magnitude unless ``cv_components`` asks for the three
    components separately.
    """
    phi = generate_grid(t1, spec, cfg)
    jd, cv = features_from_map(phi, cv_components)
    if return_map:
        return jd, cv, phi
    return jd, cv


def assemble_stack(modalities, features, names) -> ChannelStack:
    channels = list(modalities) + list(features)
    if len(names) != len(channels):
        raise ParameterError(f"{len(channels)} channels but {len(names)} names")
    return ChannelStack(tuple(channels), tuple(names))


def stack_for_arm(arm: str, volumes: dict) -> ChannelStack:
    """Assemble the stack of an experiment arm from a name -> ScalarField mapping."""
    if arm not in ARMS:
        raise ParameterError(f"unknown arm {arm!r}; choose from {sorted(ARMS)}")
    mods, feats = ARMS[arm]
    missing = [n for n in mods + feats if n not in volumes]
    if missing:
        raise ParameterError(f"arm {arm!r} needs channels {missing}")
    return assemble_stack([volumes[n] for n in mods], [volumes[n] for n in feats], mods + feats)


def tile_starts(n: int, size: int, stride: int) -> list[int]:
    extent = min(size, n)
    starts = list(range(0, n - extent + 1, stride))
    if starts[-1] + extent < n:
        starts.append(n - extent)
    return starts


def crop_subvolumes(stack: ChannelStack, size, stride) -> list[ChannelStack]:
    """Cover the stack with tiles of ``size`` voxels stepped by ``stride``.

    Axes shorter than the tile size get a single tile spanning the axis; the last tile
    along an axis is shifted back to end at the boundary, so every voxel is covered.
    """
    g = stack.geometry
    size = _per_axis(size, g.ndim)
    stride = _per_axis(stride, g.ndim)
    if any(s < 3 for s in size) or any(s < 1 for s in stride):
        raise ParameterError(f"tile size must be >= 3 and stride >= 1, got size={size} stride={stride}")
    if any(st > s for s, st in zip(size, stride)):
        raise ParameterError(f"stride {stride} exceeds tile size {size}; tiles would leave gaps")
    extents = [min(s, n) for s, n in zip(size, g.dims)]
    per_axis = [tile_starts(n, s, st) for n, s, st in zip(g.dims, size, stride)]
    tiles = []
    for start in itertools.product(*per_axis):
        sl = tuple(slice(a, a + e) for a, e in zip(start, extents))
        origin = tuple(o + a * h for o, a, h in zip(g.origin, start, g.spacing))
        tg = LatticeGeometry(tuple(extents), g.spacing, origin)
        chans = tuple(ScalarField(tg, c.values[sl]) for c in stack.channels)
        tiles.append(ChannelStack(chans, stack.names, offset=tuple(start)))
    return tiles


def stitch_subvolumes(tiles, geometry: LatticeGeometry) -> ChannelStack:
    """Write tiles back at their offsets; with unmodified tiles this reproduces the source stack."""
    names = tiles[0].names
    out = np.zeros((len(names),) + geometry.dims)
    seen = np.zeros(geometry.dims, dtype=bool)
    for t in tiles:
        sl = tuple(slice(a, a + n) for a, n in zip(t.offset, t.geometry.dims))
        for k, c in enumerate(t.channels):
            out[(k,) + sl] = c.values
        seen[sl] = True
    if not seen.all():
        raise GeometryError("tiles do not cover the volume")
    return ChannelStack(tuple(ScalarField(geometry, v) for v in out), names)


def coverage_count(tiles, dims) -> np.ndarray:
    count = np.zeros(dims, dtype=int)
    for t in tiles:
        count[tuple(slice(a, a + n) for a, n in zip(t.offset, t.geometry.dims))] += 1
    return count


def _per_axis(v, ndim):
    if np.isscalar(v):
        return (int(v),) * ndim
    v = tuple(int(x) for x in v)
    if len(v) != ndim:
        raise ParameterError(f"expected {ndim} values, got {v}")
    return v


def geometry_record(g: LatticeGeometry) -> dict:
    return {"dims": list(g.dims), "spacing": list(g.spacing), "origin": list(g.origin)}


def write_stack(stack: ChannelStack, outdir, arm: str | None = None, prefix: str = "", extra: dict | None = None) -> Path:
    """One NIfTI per channel plus ``manifest.json``; returns the manifest path."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    for k, (name, ch) in enumerate(zip(stack.names, stack.channels)):
        fname = f"{prefix}{k:02d}_{name}.nii.gz"
        write_volume(ch, outdir / fname)
        files.append(fname)
    manifest = {
        "arm": arm,
        "channels": [{"index": k, "name": n, "file": f} for k, (n, f) in enumerate(zip(stack.names, files))],
        "geometry": geometry_record(stack.geometry),
        "physical_channels": len(stack),
    }
    if stack.offset is not None:
        manifest["offset"] = list(stack.offset)
    if arm in REPORTED_CHANNEL_COUNT:
        manifest["reported_channel_count"] = REPORTED_CHANNEL_COUNT[arm]
        manifest["note"] = "reported counts are twice the physical channels; not replicated here"
    if extra:
        manifest.update(extra)
    path = outdir / f"{prefix}manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def read_stack(manifest_path) -> ChannelStack:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    chans = [read_volume(manifest_path.parent / c["file"]) for c in manifest["channels"]]
    return ChannelStack(tuple(chans), tuple(c["name"] for c in manifest["channels"]))
