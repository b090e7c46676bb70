import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jdcv.errors import GeometryError, NiftiFormatError, UnsupportedDatatypeError
from jdcv.field_core import (
    DiffeoMap,
    LabelVolume,
    LatticeGeometry,
    ScalarField,
    VectorField,
    read_volume,
    resample_trilinear,
    sample_multilinear,
    trapezoid_weights,
    write_volume,
)


def scalar_oracle(values, point):
    """Direct multilinear evaluation at one point: weighted sum over the enclosing corners."""
    d = values.ndim
    base = [min(int(np.floor(c)), n - 2) for c, n in zip(point, values.shape)]
    frac = [c - b for c, b in zip(point, base)]
    total = 0.0
    for corner in np.ndindex(*(2,) * d):
        w = 1.0
        for k in range(d):
            w *= frac[k] if corner[k] else 1.0 - frac[k]
        total += w * values[tuple(b + c for b, c in zip(base, corner))]
    return total


class TestGeometry:
    def test_basic_properties(self):
        g = LatticeGeometry((5, 9), (0.5, 0.25), (1.0, -1.0))
        assert g.ndim == 2
        assert g.extent == (2.0, 2.0)
        assert g.volume == pytest.approx(4.0)
        assert g.node_positions()[4, 8].tolist() == [3.0, 1.0]

    @pytest.mark.parametrize("dims", [(2, 5), (5,), (3, 3, 3, 3)])
    def test_rejects_bad_dims(self, dims):
        with pytest.raises(GeometryError):
            LatticeGeometry(dims)

    def test_rejects_nonpositive_spacing(self):
        with pytest.raises(GeometryError):
            LatticeGeometry((4, 4), (1.0, 0.0))

    def test_cells_are_centred(self):
        g = LatticeGeometry((4, 5), (2.0, 1.0))
        c = g.cells()
        assert c.dims == (3, 4)
        assert c.origin == (1.0, 0.5)

    @given(st.tuples(st.integers(3, 9), st.integers(3, 9), st.integers(3, 6)))
    def test_trapezoid_weights_sum_to_volume(self, dims):
        g = LatticeGeometry(dims, (0.7, 1.3, 2.0))
        assert trapezoid_weights(g).sum() == pytest.approx(g.volume, rel=1e-12)


class TestFields:
    def test_values_are_read_only_copies(self):
        g = LatticeGeometry((3, 3))
        src = np.zeros((3, 3))
        f = ScalarField(g, src)
        src[0, 0] = 5
        assert f.values[0, 0] == 0
        with pytest.raises(ValueError):
            f.values[0, 0] = 1

    def test_shape_and_finiteness_checked(self):
        g = LatticeGeometry((3, 3))
        with pytest.raises(GeometryError):
            ScalarField(g, np.zeros((3, 4)))
        with pytest.raises(ValueError):
            ScalarField(g, np.full((3, 3), np.nan))
        with pytest.raises(GeometryError):
            VectorField(g, np.zeros((3, 3, 3)))

    def test_identity_map_has_no_displacement(self):
        g = LatticeGeometry((4, 5, 3), (1.0, 2.0, 0.5))
        phi = DiffeoMap.identity(g)
        assert np.all(phi.displacement().values == 0)
        assert phi.wall_violation() == 0

    def test_label_volume(self):
        g = LatticeGeometry((3, 3, 3))
        lab = LabelVolume(g, np.arange(27).reshape(3, 3, 3) % 4)
        assert lab.mask(3).sum() == 6
        with pytest.raises(ValueError):
            LabelVolume(g, -np.ones((3, 3, 3), dtype=int))


class TestSampling:
    def test_identity_returns_nodes_exactly(self, rng):
        g = LatticeGeometry((6, 7, 5), (1.0, 0.5, 2.0), (3.0, 0.0, -1.0))
        f = ScalarField(g, rng.normal(size=g.dims))
        out = resample_trilinear(f, DiffeoMap.identity(g))
        assert np.array_equal(out.values, f.values)

    @pytest.mark.parametrize("ndim", [2, 3])
    def test_affine_reproduced(self, rng, ndim):
        dims = (7, 6, 5)[:ndim]
        a, b = rng.normal(size=ndim), 0.3
        grid = np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"), -1)
        vals = grid @ a + b
        pts = rng.uniform(0, 1, size=(200, ndim)) * (np.array(dims) - 1)
        assert np.max(np.abs(sample_multilinear(vals, pts) - (pts @ a + b))) <= 1e-12

    @pytest.mark.parametrize("ndim", [2, 3])
    def test_matches_scalar_oracle(self, rng, ndim):
        dims = (9, 8, 7)[:ndim]
        grid = np.stack(np.meshgrid(*[np.linspace(0, 1, n) for n in dims], indexing="ij"), -1)
        vals = np.sin(3 * grid[..., 0]) * np.cos(2 * grid[..., 1]) + grid.sum(-1) ** 2
        pts = rng.uniform(0, 1, size=(100, ndim)) * (np.array(dims) - 1)
        got = sample_multilinear(vals, pts)
        want = np.array([scalar_oracle(vals, p) for p in pts])
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_vector_channels_and_clamping(self):
        vals = np.arange(16.0).reshape(4, 4)
        stacked = np.stack([vals, -vals], -1)
        out = sample_multilinear(stacked, np.array([[-5.0, 0.0], [1.5, 1.5], [10.0, 3.0]]))
        assert out.shape == (3, 2)
        assert out[:, 0].tolist() == [0.0, 7.5, 15.0]
        assert np.array_equal(out[:, 1], -out[:, 0])

    def test_axis_mismatch(self):
        f = ScalarField(LatticeGeometry((3, 3)), np.zeros((3, 3)))
        with pytest.raises(GeometryError):
            resample_trilinear(f, DiffeoMap.identity(LatticeGeometry((3, 3, 3))))


def _minimal_header(datatype=16, magic=b"n+1\0", dims=(3, 3, 3)):
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, len(dims), *dims, *([1] * (7 - len(dims))))
    struct.pack_into("<hh", hdr, 70, datatype, 32)
    struct.pack_into("<8f", hdr, 76, 1, 1, 1, 1, 1, 1, 1, 1)
    struct.pack_into("<f", hdr, 108, 352.0)
    hdr[344:348] = magic
    return bytes(hdr) + b"\0" * 4


class TestNifti:
    def test_minimal_float_volume(self, tmp_path):
        data = np.arange(27, dtype="<f4")
        p = tmp_path / "v.nii"
        p.write_bytes(_minimal_header() + data.tobytes())
        f = read_volume(p)
        assert f.geometry.dims == (3, 3, 3)
        assert f.values.size == 27
        # Fortran order: first axis varies fastest
        assert f.values[1, 0, 0] == 1.0 and f.values[0, 1, 0] == 3.0

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "v.nii"
        p.write_bytes(_minimal_header(magic=b"ni1\0") + bytes(27 * 4))
        with pytest.raises(NiftiFormatError):
            read_volume(p)

    def test_unsupported_datatype(self, tmp_path):
        p = tmp_path / "v.nii"
        p.write_bytes(_minimal_header(datatype=64) + bytes(27 * 8))
        with pytest.raises(UnsupportedDatatypeError):
            read_volume(p)

    def test_small_dims_rejected(self, tmp_path):
        p = tmp_path / "v.nii"
        p.write_bytes(_minimal_header(dims=(3, 2, 3)) + bytes(18 * 4))
        with pytest.raises(GeometryError):
            read_volume(p)

    def test_zero_field_writes_zero_bytes(self, tmp_path):
        g = LatticeGeometry((4, 3, 3))
        p = tmp_path / "z.nii"
        write_volume(ScalarField(g, np.zeros(g.dims)), p)
        raw = p.read_bytes()
        assert raw[344:348] == b"n+1\0"
        assert raw[352:] == bytes(36 * 4)

    def test_labels_written_as_uint8(self, tmp_path):
        g = LatticeGeometry((3, 4, 3))
        lab = LabelVolume(g, np.arange(36).reshape(g.dims) % 4)
        p = tmp_path / "l.nii.gz"
        write_volume(lab, p)
        raw = gzip.decompress(p.read_bytes())
        assert struct.unpack_from("<h", raw, 70)[0] == 2
        back = read_volume(p, labels=True)
        assert np.array_equal(back.labels, lab.labels)

    def test_round_trip_geometry(self, tmp_path, rng):
        g = LatticeGeometry((5, 4, 3), (0.9, 1.1, 3.0), (-10.0, 2.5, 7.0))
        f = ScalarField(g, rng.normal(size=g.dims))
        p = tmp_path / "f.nii.gz"
        write_volume(f, p)
        back = read_volume(p)
        assert back.geometry.dims == g.dims
        np.testing.assert_allclose(back.geometry.spacing, g.spacing, rtol=1e-7)
        np.testing.assert_allclose(back.geometry.origin, g.origin, rtol=1e-7)
        np.testing.assert_array_equal(back.values, f.values.astype(np.float32))

    def test_gzip_output_is_deterministic(self, tmp_path):
        g = LatticeGeometry((3, 3, 3))
        f = ScalarField(g, np.ones(g.dims))
        write_volume(f, tmp_path / "a.nii.gz")
        write_volume(f, tmp_path / "b.nii.gz")
        assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()

    def test_2d_round_trip(self, tmp_path):
        g = LatticeGeometry((4, 5))
        f = ScalarField(g, np.arange(20.0).reshape(4, 5))
        write_volume(f, tmp_path / "a.nii")
        back = read_volume(tmp_path / "a.nii")
        assert back.geometry.dims == (4, 5)
        np.testing.assert_array_equal(back.values, f.values)

    def test_unwritable_path(self, tmp_path):
        g = LatticeGeometry((3, 3, 3))
        with pytest.raises(OSError):
            write_volume(ScalarField(g, np.zeros(g.dims)), tmp_path / "missing" / "dir" / "x.nii")
