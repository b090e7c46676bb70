"""Lattice containers for scalar/vector fields and maps, plus a small NIfTI-1 reader/writer.

Arrays are indexed in axis order ``(x, y[, z])``. Node ``i`` along axis ``a`` sits at
``origin[a] + i * spacing[a]`` millimetres.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numba
import numpy as np

from .errors import GeometryError, NiftiFormatError, UnsupportedDatatypeError

DEFAULT_CLASS_NAMES = {0: "background", 1: "CSF", 2: "GM", 3: "WM"}


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LatticeGeometry:
    dims: tuple[int, ...]
    spacing: tuple[float, ...] = None
    origin: tuple[float, ...] = None
    cell_centered: bool = False

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise GeometryError(f"need 2 or 3 axes, got dims={dims}")
        min_nodes = 2 if self.cell_centered else 3
        if any(d < min_nodes for d in dims):
            raise GeometryError(f"every axis needs at least {min_nodes} nodes, got dims={dims}")
        spacing = (1.0,) * len(dims) if self.spacing is None else tuple(float(s) for s in self.spacing)
        origin = (0.0,) * len(dims) if self.origin is None else tuple(float(o) for o in self.origin)
        if len(spacing) != len(dims) or len(origin) != len(dims):
            raise GeometryError("spacing/origin length must match dims")
        if not all(np.isfinite(s) and s > 0 for s in spacing):
            raise GeometryError(f"spacing must be strictly positive, got {spacing}")
        if not all(np.isfinite(o) for o in origin):
            raise GeometryError(f"origin must be finite, got {origin}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def extent(self) -> tuple[float, ...]:
        """Physical side lengths of the box spanned by the nodes."""
        return tuple((n - 1) * h for n, h in zip(self.dims, self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(n) for n, h, o in zip(self.dims, self.spacing, self.origin)]

    def node_positions(self) -> np.ndarray:
        """Physical coordinates of every node, shape ``dims + (ndim,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def cells(self) -> "LatticeGeometry":
        """Geometry of the cell centres of this node lattice."""
        dims = tuple(n - 1 for n in self.dims)
        origin = tuple(o + h / 2 for o, h in zip(self.origin, self.spacing))
        return LatticeGeometry(dims, self.spacing, origin, cell_centered=True)

    def to_index(self, positions: np.ndarray) -> np.ndarray:
        """Convert physical positions (..., ndim) into fractional node indices."""
        return (np.asarray(positions, dtype=float) - np.asarray(self.origin)) / np.asarray(self.spacing)

    def require_same(self, other: "LatticeGeometry", what: str = "field") -> None:
        if self != other:
            raise GeometryError(f"{what} geometry mismatch: {self} vs {other}")


def trapezoid_weights(geometry: LatticeGeometry) -> np.ndarray:
    """Node quadrature weights (trapezoidal rule) that integrate to ``geometry.volume``."""
    w = np.ones(geometry.dims)
    for axis, h in enumerate(geometry.spacing):
        wa = np.full(geometry.dims[axis], h)
        wa[0] = wa[-1] = h / 2
        shape = [1] * geometry.ndim
        shape[axis] = -1
        w = w * wa.reshape(shape)
    return w


@dataclass(frozen=True)
class ScalarField:
    geometry: LatticeGeometry
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.geometry.dims:
            raise GeometryError(f"values shape {v.shape} does not match dims {self.geometry.dims}")
        if not np.all(np.isfinite(v)):
            raise ValueError("scalar field contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    def integrate(self) -> float:
        return float(np.sum(trapezoid_weights(self.geometry) * self.values))

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.geometry, values)


@dataclass(frozen=True)
class VectorField:
    geometry: LatticeGeometry
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        expect = self.geometry.dims + (self.geometry.ndim,)
        if v.shape != expect:
            raise GeometryError(f"vector values shape {v.shape}, expected {expect}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vector field contains non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    def component(self, axis: int) -> ScalarField:
        return ScalarField(self.geometry, self.values[..., axis])


@dataclass(frozen=True)
class DiffeoMap:
    """Node-sampled transformation: ``positions[idx]`` is the image (mm) of reference node ``idx``."""

    geometry: LatticeGeometry
    positions: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        expect = self.geometry.dims + (self.geometry.ndim,)
        if p.shape != expect:
            raise GeometryError(f"positions shape {p.shape}, expected {expect}")
        if not np.all(np.isfinite(p)):
            raise ValueError("map contains non-finite positions")
        object.__setattr__(self, "positions", _frozen(p))

    @classmethod
    def identity(cls, geometry: LatticeGeometry) -> "DiffeoMap":
        return cls(geometry, geometry.node_positions())

    def displacement(self) -> VectorField:
        return VectorField(self.geometry, self.positions - self.geometry.node_positions())

    def wall_violation(self) -> float:
        """Largest normal displacement (mm) of boundary nodes off their wall."""
        disp = self.positions - self.geometry.node_positions()
        worst = 0.0
        for axis in range(self.geometry.ndim):
            for end in (0, -1):
                face = np.take(disp[..., axis], end, axis=axis)
                worst = max(worst, float(np.max(np.abs(face))))
        return worst


@dataclass(frozen=True)
class LabelVolume:
    geometry: LatticeGeometry
    labels: np.ndarray
    class_names: Mapping[int, str] = field(default_factory=lambda: dict(DEFAULT_CLASS_NAMES))

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.shape != self.geometry.dims:
            raise GeometryError(f"labels shape {lab.shape} does not match dims {self.geometry.dims}")
        if lab.dtype.kind == "f":
            if not np.all(lab == np.round(lab)):
                raise ValueError("labels must be integers")
        if lab.size and lab.min() < 0:
            raise ValueError("labels must be non-negative")
        lab = lab.astype(np.int64)
        names = {int(k): str(v) for k, v in dict(self.class_names).items()}
        missing = sorted(set(np.unique(lab).tolist()) - set(names))
        if missing:
            raise ValueError(f"labels {missing} have no class name")
        object.__setattr__(self, "labels", _frozen(lab))
        object.__setattr__(self, "class_names", names)

    def mask(self, label: int) -> np.ndarray:
        return self.labels == label


# --------------------------------------------------------------------------- resampling


@numba.njit(cache=True)
def _lerp2(flat, dims, pts, out):
    n0, n1 = dims[0], dims[1]
    for p in range(pts.shape[0]):
        x = min(max(pts[p, 0], 0.0), n0 - 1.0)
        y = min(max(pts[p, 1], 0.0), n1 - 1.0)
        i = min(int(x), n0 - 2)
        j = min(int(y), n1 - 2)
        fx = x - i
        fy = y - j
        b = i * n1 + j
        for c in range(flat.shape[1]):
            out[p, c] = (
                (1 - fx) * ((1 - fy) * flat[b, c] + fy * flat[b + 1, c])
                + fx * ((1 - fy) * flat[b + n1, c] + fy * flat[b + n1 + 1, c])
            )


@numba.njit(cache=True)
def _lerp3(flat, dims, pts, out):
    n0, n1, n2 = dims[0], dims[1], dims[2]
    s0 = n1 * n2
    for p in range(pts.shape[0]):
        x = min(max(pts[p, 0], 0.0), n0 - 1.0)
        y = min(max(pts[p, 1], 0.0), n1 - 1.0)
        z = min(max(pts[p, 2], 0.0), n2 - 1.0)
        i = min(int(x), n0 - 2)
        j = min(int(y), n1 - 2)
        k = min(int(z), n2 - 2)
        fx = x - i
        fy = y - j
        fz = z - k
        b = i * s0 + j * n2 + k
        for c in range(flat.shape[1]):
            c00 = (1 - fz) * flat[b, c] + fz * flat[b + 1, c]
            c01 = (1 - fz) * flat[b + n2, c] + fz * flat[b + n2 + 1, c]
            c10 = (1 - fz) * flat[b + s0, c] + fz * flat[b + s0 + 1, c]
            c11 = (1 - fz) * flat[b + s0 + n2, c] + fz * flat[b + s0 + n2 + 1, c]
            out[p, c] = (1 - fx) * ((1 - fy) * c00 + fy * c01) + fx * ((1 - fy) * c10 + fy * c11)


def sample_multilinear(values: np.ndarray, index_coords: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of ``values`` at fractional node indices.

    ``values`` has the lattice shape, optionally followed by one channel axis.
    ``index_coords`` has shape ``(..., ndim)``. Coordinates are clamped to the lattice.
    """
    ndim = index_coords.shape[-1]
    dims = np.array(values.shape[:ndim], dtype=np.int64)
    chan = values.shape[ndim:]
    flat = np.ascontiguousarray(values, dtype=np.float64).reshape(int(np.prod(dims)), -1)
    pts = np.ascontiguousarray(index_coords, dtype=np.float64).reshape(-1, ndim)
    out = np.empty((len(pts), flat.shape[1]))
    (_lerp2 if ndim == 2 else _lerp3)(flat, dims, pts, out)
    return out.reshape(index_coords.shape[:-1] + chan)


def resample_trilinear(f: ScalarField, at: DiffeoMap) -> ScalarField:
    """Evaluate ``f`` at every position of ``at``; result lives on ``at``'s reference lattice."""
    if f.geometry.ndim != at.geometry.ndim:
        raise GeometryError(f"axis count mismatch: field {f.geometry.ndim}D, map {at.geometry.ndim}D")
    idx = f.geometry.to_index(at.positions)
    return ScalarField(at.geometry, sample_multilinear(f.values, idx))


# --------------------------------------------------------------------------- NIfTI-1 subset

_HDR_SIZE = 348
_VOX_OFFSET = 352
_DTYPES = {2: np.dtype("<u1"), 4: np.dtype("<i2"), 16: np.dtype("<f4")}
_BITPIX = {2: 8, 4: 16, 16: 32}


def _read_bytes(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except OSError as exc:
            raise NiftiFormatError(f"{path}: corrupt gzip stream") from exc
    return raw


def read_volume(path, labels: bool = False, class_names: Mapping[int, str] | None = None):
    """Read a single-file NIfTI-1 volume (optionally gzipped).

    Returns a ScalarField, or a LabelVolume when ``labels`` is true. Label values
    without an entry in ``class_names`` get a generic ``label_<k>`` name.
    """
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < _HDR_SIZE:
        raise NiftiFormatError(f"{path}: file too short for a NIfTI-1 header")
    if raw[344:348] not in (b"n+1\x00", b"n+1"):
        raise NiftiFormatError(f"{path}: bad magic {raw[344:348]!r}, expected 'n+1'")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != _HDR_SIZE:
        raise NiftiFormatError(f"{path}: sizeof_hdr={sizeof_hdr} (big-endian or not NIfTI-1)")
    dim = struct.unpack_from("<8h", raw, 40)
    datatype, _bitpix = struct.unpack_from("<2h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from("<3f", raw, 108)
    qform_code, sform_code = struct.unpack_from("<2h", raw, 252)
    qoffset = struct.unpack_from("<3f", raw, 268)
    srow = [struct.unpack_from("<4f", raw, 280 + 16 * r) for r in range(3)]

    if datatype not in _DTYPES:
        raise UnsupportedDatatypeError(f"{path}: unsupported datatype code {datatype}")
    ndim = dim[0]
    if ndim < 2 or ndim > 7:
        raise NiftiFormatError(f"{path}: invalid dim[0]={ndim}")
    shape = list(dim[1 : ndim + 1])
    while len(shape) > 2 and shape[-1] == 1:
        shape.pop()
    if len(shape) > 3:
        raise GeometryError(f"{path}: only 2D/3D volumes are supported, got dims {shape}")
    n = len(shape)
    if sform_code > 0:
        origin = tuple(srow[a][3] for a in range(n))
    elif qform_code > 0:
        origin = tuple(qoffset[:n])
    else:
        origin = (0.0,) * n
    spacing = tuple(abs(p) if p != 0 else 1.0 for p in pixdim[1 : n + 1])
    geometry = LatticeGeometry(tuple(shape), spacing, origin)

    dt = _DTYPES[datatype]
    count = int(np.prod(shape))
    start = int(vox_offset) if vox_offset >= _HDR_SIZE else _VOX_OFFSET
    if len(raw) < start + count * dt.itemsize:
        raise NiftiFormatError(f"{path}: truncated data section")
    data = np.frombuffer(raw, dtype=dt, count=count, offset=start).reshape(shape, order="F")

    if labels:
        if scl_slope not in (0.0, 1.0) or scl_inter != 0.0:
            data = data * scl_slope + scl_inter
        names = dict(DEFAULT_CLASS_NAMES if class_names is None else class_names)
        for k in np.unique(data).tolist():
            names.setdefault(int(k), f"label_{int(k)}")
        return LabelVolume(geometry, data, names)
    values = data.astype(np.float64)
    if scl_slope != 0.0 and np.isfinite(scl_slope):
        values = values * scl_slope + scl_inter
    return ScalarField(geometry, values)


def _header(geometry: LatticeGeometry, datatype: int) -> bytes:
    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    dim = [geometry.ndim] + list(geometry.dims) + [1] * (7 - geometry.ndim)
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<2h", hdr, 70, datatype, _BITPIX[datatype])
    pixdim = [1.0] + list(geometry.spacing) + [1.0] * (7 - geometry.ndim)
    struct.pack_into("<8f", hdr, 76, *pixdim)
    struct.pack_into("<3f", hdr, 108, float(_VOX_OFFSET), 1.0, 0.0)
    struct.pack_into("<B", hdr, 123, 2)  # xyzt_units: mm
    struct.pack_into("<2h", hdr, 252, 1, 1)
    origin = list(geometry.origin) + [0.0] * (3 - geometry.ndim)
    struct.pack_into("<3f", hdr, 268, *origin)
    for r in range(3):
        row = [0.0, 0.0, 0.0, origin[r]]
        row[r] = geometry.spacing[r] if r < geometry.ndim else 1.0
        struct.pack_into("<4f", hdr, 280 + 16 * r, *row)
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr)


def write_volume(field, path) -> None:
    """Write a ScalarField (float32) or LabelVolume (uint8) as NIfTI-1; ``.gz`` suffix compresses."""
    path = Path(path)
    if isinstance(field, LabelVolume):
        if field.labels.max(initial=0) > 255:
            raise ValueError("labels above 255 do not fit uint8")
        datatype, data = 2, field.labels.astype("<u1")
    elif isinstance(field, ScalarField):
        datatype, data = 16, field.values.astype("<f4")
    else:
        raise TypeError(f"cannot write {type(field).__name__}")
    payload = _header(field.geometry, datatype) + b"\x00" * 4 + data.tobytes(order="F")
    if path.suffix == ".gz":
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)
