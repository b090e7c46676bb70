"""Finite-difference operators on node lattices and a Neumann Poisson solver.

All first derivatives are second-order central differences in the interior and
second-order one-sided differences on the boundary (``np.gradient(edge_order=2)``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import ConvergenceError, ParameterError
from .field_core import DiffeoMap, LatticeGeometry, ScalarField, VectorField


@dataclass(frozen=True)
class StencilConfig:
    scheme: str = "central-2nd-order"
    boundary: str = "one-sided-2nd-order"

    @property
    def order(self) -> int:
        return 2


STENCIL = StencilConfig()


def _d(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    return np.gradient(values, h, axis=axis, edge_order=2)


def gradient(w: ScalarField) -> VectorField:
    g = w.geometry
    comps = [_d(w.values, g.spacing[a], a) for a in range(g.ndim)]
    return VectorField(g, np.stack(comps, axis=-1))


def divergence(u: VectorField) -> ScalarField:
    g = u.geometry
    out = sum(_d(u.values[..., a], g.spacing[a], a) for a in range(g.ndim))
    return ScalarField(g, out)


def curl_values(u: np.ndarray, spacing) -> np.ndarray:
    """Curl of a raw vector array: scalar array in 2D, ``(..., 3)`` array in 3D."""
    ndim = u.shape[-1]
    if ndim == 2:
        return _d(u[..., 1], spacing[0], 0) - _d(u[..., 0], spacing[1], 1)
    dz_dy = _d(u[..., 2], spacing[1], 1)
    dy_dz = _d(u[..., 1], spacing[2], 2)
    dx_dz = _d(u[..., 0], spacing[2], 2)
    dz_dx = _d(u[..., 2], spacing[0], 0)
    dy_dx = _d(u[..., 1], spacing[0], 0)
    dx_dy = _d(u[..., 0], spacing[1], 1)
    return np.stack([dz_dy - dy_dz, dx_dz - dz_dx, dy_dx - dx_dy], axis=-1)


def curl(u: VectorField) -> ScalarField | VectorField:
    """Scalar curl ``du_y/dx - du_x/dy`` for 2D input, the usual 3-vector curl for 3D input."""
    c = curl_values(u.values, u.geometry.spacing)
    if u.geometry.ndim == 2:
        return ScalarField(u.geometry, c)
    return VectorField(u.geometry, c)


def _second_difference(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    if v.shape[0] >= 4:
        out[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / h**2
        out[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h**2
    else:
        out[0] = out[-1] = out[1]
    return np.moveaxis(out, 0, axis)


def laplacian(w: ScalarField) -> ScalarField:
    """Compact 3-point Laplacian; boundary rows use the 4-point one-sided formula."""
    g = w.geometry
    return ScalarField(g, sum(_second_difference(w.values, g.spacing[a], a) for a in range(g.ndim)))


def neumann_laplacian_values(w: np.ndarray, spacing) -> np.ndarray:
    """``div(grad w)`` with central differences and mirror ghosts (zero normal derivative).

    This is the operator inverted by :func:`solve_poisson_neumann`. At interior nodes it
    equals ``divergence(gradient(w))`` once the wall-normal gradient is set to zero.
    """
    out = np.zeros_like(w)
    for a, h in enumerate(spacing):
        pad = [(0, 0)] * w.ndim
        pad[a] = (2, 2)
        p = np.pad(w, pad, mode="reflect")
        n = w.shape[a]
        hi = np.take(p, np.arange(4, n + 4), axis=a)
        lo = np.take(p, np.arange(0, n), axis=a)
        out += (hi - 2 * w + lo) / (4 * h * h)
    return out


def jacobian_matrices(positions: np.ndarray, spacing) -> np.ndarray:
    """Cell-centred deformation gradients, shape ``cells + (d, d)``; ``[..., i, j] = dphi_i/dxi_j``.

    Each column is the mean of the 2**(d-1) lattice edges of the cell along that axis.
    """
    d = positions.shape[-1]
    cells = tuple(n - 1 for n in positions.shape[:d])
    F = np.zeros(cells + (d, d))
    for j in range(d):
        others = [a for a in range(d) if a != j]
        acc = 0.0
        for offs in itertools.product((0, 1), repeat=d - 1):
            hi = [slice(None)] * d
            lo = [slice(None)] * d
            hi[j] = slice(1, None)
            lo[j] = slice(0, -1)
            for a, o in zip(others, offs):
                hi[a] = lo[a] = slice(o, cells[a] + o)
            acc = acc + positions[tuple(hi)] - positions[tuple(lo)]
        F[..., :, j] = acc / (2 ** (d - 1) * spacing[j])
    return F


def det_values(F: np.ndarray) -> np.ndarray:
    if F.shape[-1] == 2:
        return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )


def jacobian_determinant(phi: DiffeoMap) -> ScalarField:
    """det(grad phi) at cell centres; negative values are returned as-is."""
    g = phi.geometry
    F = jacobian_matrices(phi.positions, g.spacing)
    return ScalarField(g.cells(), det_values(F))


# --------------------------------------------------------------------------- Poisson


def _null_modes(dims):
    """Per-axis constant and alternating vectors; their products span the kernel of the
    mirrored wide-stencil Laplacian."""
    per_axis = [(np.ones(n), (-1.0) ** np.arange(n)) for n in dims]
    for choice in itertools.product((0, 1), repeat=len(dims)):
        mode = np.ones(())
        for a, c in enumerate(choice):
            mode = np.multiply.outer(mode, per_axis[a][c])
        yield choice, mode


def project_compatible(rhs: np.ndarray) -> np.ndarray:
    """Remove the kernel components (mean and odd-even modes) from ``rhs``.

    Projections use trapezoidal weights, under which the mirrored operator is symmetric.
    """
    weights = np.ones(())
    for n in rhs.shape:
        wa = np.ones(n)
        wa[0] = wa[-1] = 0.5
        weights = np.multiply.outer(weights, wa)
    out = rhs.astype(float).copy()
    for _, mode in _null_modes(rhs.shape):
        wm = weights * mode
        out -= (np.sum(wm * rhs) / np.sum(wm * mode)) * mode
    return out


def _eigenvalues(dims, spacing):
    lam = np.zeros(dims)
    for a, (n, h) in enumerate(zip(dims, spacing)):
        theta = np.pi * np.arange(n) / (n - 1)
        shape = [1] * len(dims)
        shape[a] = -1
        lam = lam - (np.sin(theta) ** 2 / h**2).reshape(shape)
    return lam


def _solve_dct(rhs: np.ndarray, spacing) -> np.ndarray:
    coef = fft.dctn(rhs, type=1)
    lam = _eigenvalues(rhs.shape, spacing)
    null = np.abs(lam) < 1e-12 * np.max(np.abs(lam))
    lam[null] = 1.0
    coef = coef / lam
    coef[null] = 0.0
    return fft.idctn(coef, type=1)


def _diagonal(dims, spacing) -> np.ndarray:
    diag = np.zeros(dims)
    for a, (n, h) in enumerate(zip(dims, spacing)):
        da = np.full(n, -2.0)
        # the mirror ghost of nodes 1 and n-2 is the node itself
        da[1] += 1.0
        da[n - 2] += 1.0
        shape = [1] * len(dims)
        shape[a] = -1
        diag = diag + (da / (4 * h * h)).reshape(shape)
    return diag


def _solve_sor(rhs, spacing, tol, max_iter, omega=None):
    dims = rhs.shape
    diag = _diagonal(dims, spacing)
    active = diag != 0
    colour = sum(np.indices(dims)[a] // 2 for a in range(len(dims))) % 2
    if omega is None:
        m = max(dims) / 2
        omega = 2.0 / (1.0 + np.sin(np.pi / m))
    scale = max(np.max(np.abs(rhs)), np.finfo(float).tiny)
    w = np.zeros(dims)
    res = np.inf
    for it in range(1, max_iter + 1):
        for c in (0, 1):
            r = rhs - neumann_laplacian_values(w, spacing)
            sel = (colour == c) & active
            w[sel] += omega * r[sel] / diag[sel]
        if it % 10 == 0 or it == max_iter:
            res = np.max(np.abs(rhs - neumann_laplacian_values(w, spacing)))
            if res <= tol * scale:
                return w, it
    raise ConvergenceError("SOR Poisson solve did not converge", res / scale, max_iter)


def solve_poisson_neumann(
    rhs: ScalarField, method: str = "dct", tol: float = 1e-8, max_iter: int = 50_000
) -> ScalarField:
    """Solve ``lap w = rhs`` on the box with ``dw/dn = 0`` on every wall.

    The right side is first projected onto the range of the discrete operator, which
    subtracts its (trapezoidal) mean together with the odd-even kernel modes of the
    central-difference stencil. The returned potential has zero arithmetic mean.
    """
    g = rhs.geometry
    b = project_compatible(rhs.values)
    if not np.any(b):
        return ScalarField(g, np.zeros(g.dims))
    if method == "dct":
        w = _solve_dct(b, g.spacing)
    elif method == "sor":
        w, _ = _solve_sor(b, g.spacing, tol, max_iter)
        w = project_compatible(w)
    else:
        raise ParameterError(f"unknown Poisson method {method!r}")
    w = w - w.mean()
    scale = np.max(np.abs(b))
    res = np.max(np.abs(neumann_laplacian_values(w, g.spacing) - b))
    if not res <= max(tol, 1e-12) * scale * 10:
        raise ConvergenceError("Poisson residual above tolerance", res / scale, 1)
    return ScalarField(g, w)


def poisson_residual(w: ScalarField, rhs: ScalarField) -> float:
    """Max-norm residual of ``w`` against the compatible part of ``rhs``, relative to ``|rhs|_inf``."""
    b = project_compatible(rhs.values)
    r = neumann_laplacian_values(w.values, w.geometry.spacing) - b
    return float(np.max(np.abs(r)) / max(np.max(np.abs(rhs.values)), np.finfo(float).tiny))


def wall_normal_mask(geometry: LatticeGeometry) -> np.ndarray:
    """Boolean ``dims + (d,)`` array, true where component ``a`` is normal to a wall at that node."""
    mask = np.zeros(geometry.dims + (geometry.ndim,), dtype=bool)
    for a in range(geometry.ndim):
        idx = [slice(None)] * geometry.ndim
        for end in (0, -1):
            idx[a] = end
            mask[tuple(idx) + (a,)] = True
    return mask
