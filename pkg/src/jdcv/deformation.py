"""Deformation method: build a map whose Jacobian determinant follows a prescribed monitor.

The monitor ``f1`` is reached from the identity through the schedule
``1/f(x, t) = (1 - t) + t / f1(x)``, so the velocity potential solves one Poisson
problem ``lap w = 1 - 1/f1`` and the map integrates ``dphi/dt = f(phi, t) grad w(phi)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FoldingError, ParameterError
from .field_core import (
    DiffeoMap,
    LatticeGeometry,
    ScalarField,
    VectorField,
    sample_multilinear,
    trapezoid_weights,
)
from .numerics import (
    det_values,
    gradient,
    jacobian_matrices,
    solve_poisson_neumann,
    wall_normal_mask,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MonitorSpec:
    """Weights for building a monitor from an image: brightness ``alpha``, edge strength ``beta``."""

    alpha: float = 1.0
    beta: float = 1.0
    floor: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ParameterError("alpha and beta must be non-negative")
        if not 0 < self.floor <= 1:
            raise ParameterError(f"floor must lie in (0, 1], got {self.floor}")


@dataclass(frozen=True)
class DeformationConfig:
    time_steps: int = 100
    integrator: str = "rk4"
    initial_map: DiffeoMap | None = field(default=None, compare=False)
    poisson_method: str = "dct"

    def __post_init__(self):
        if self.time_steps < 1:
            raise ParameterError("time_steps must be >= 1")
        if self.integrator not in ("euler", "rk4"):
            raise ParameterError(f"unknown integrator {self.integrator!r}")


def normalize_monitor(raw: np.ndarray, geometry: LatticeGeometry) -> ScalarField:
    """Rescale ``1/raw`` by one constant so that the integral of ``1/f`` equals the box volume."""
    inv = 1.0 / raw
    total = np.sum(trapezoid_weights(geometry) * inv)
    inv = inv * (geometry.volume / total)
    return ScalarField(geometry, 1.0 / inv)


def _unit_range(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def monitor_from_image(image: ScalarField, spec: MonitorSpec) -> ScalarField:
    """Monitor that shrinks cells where the image is bright or has strong edges."""
    bright = _unit_range(image.values)
    grad = np.linalg.norm(gradient(image.with_values(bright)).values, axis=-1)
    gmax = grad.max()
    edge = grad / gmax if gmax > 0 else np.zeros_like(grad)
    raw = 1.0 / (1.0 + spec.alpha * bright + spec.beta * edge)
    raw = np.maximum(raw, spec.floor)
    return normalize_monitor(raw, image.geometry)


def monitor_at_time(f1: ScalarField, t: float) -> ScalarField:
    return f1.with_values(1.0 / ((1.0 - t) + t / f1.values))


def build_velocity(f1: ScalarField, method: str = "dct") -> VectorField:
    """Gradient velocity ``u = grad w`` with ``lap w = 1 - 1/f1`` and zero normal flux."""
    if np.any(f1.values <= 0):
        raise ParameterError("monitor must be strictly positive")
    rel = abs(np.sum(trapezoid_weights(f1.geometry) / f1.values) - f1.geometry.volume) / f1.geometry.volume
    if rel > 1e-8:
        raise ParameterError(f"monitor violates the volume constraint (relative error {rel:.2e})")
    rhs = f1.with_values(1.0 - 1.0 / f1.values)
    w = solve_poisson_neumann(rhs, method=method)
    u = np.array(gradient(w).values)
    u[wall_normal_mask(f1.geometry)] = 0.0
    return VectorField(f1.geometry, u)


def _project_walls(pos: np.ndarray, geometry: LatticeGeometry, ref: np.ndarray) -> None:
    for a in range(geometry.ndim):
        idx = [slice(None)] * geometry.ndim
        for end in (0, -1):
            idx[a] = end
            sel = tuple(idx) + (a,)
            pos[sel] = ref[sel]


def cell_mismatch(phi: DiffeoMap, f1: ScalarField) -> np.ndarray:
    """Relative error ``|J(phi) - f1(phi)| / f1(phi)`` at every cell centre."""
    g = phi.geometry
    J = det_values(jacobian_matrices(phi.positions, g.spacing))
    centres = _cell_centres(phi.positions)
    target = sample_multilinear(f1.values, f1.geometry.to_index(centres))
    return np.abs(J - target) / target


def _cell_centres(positions: np.ndarray) -> np.ndarray:
    d = positions.shape[-1]
    acc = 0.0
    for offs in np.ndindex(*(2,) * d):
        sl = tuple(slice(o, n - 1 + o) for o, n in zip(offs, positions.shape[:d]))
        acc = acc + positions[sl]
    return acc / 2**d


def check_folding(phi: DiffeoMap) -> np.ndarray:
    J = det_values(jacobian_matrices(phi.positions, phi.geometry.spacing))
    worst = np.unravel_index(np.argmin(J), J.shape)
    if J[worst] <= 0:
        raise FoldingError(worst, J[worst])
    return J


def integrate_map(f1: ScalarField, u: VectorField, cfg: DeformationConfig = DeformationConfig()) -> DiffeoMap:
    """Flow the reference nodes along ``f(phi, t) u(phi)`` from t=0 to t=1."""
    g = f1.geometry
    g.require_same(u.geometry, "velocity")
    ref = g.node_positions()
    if cfg.initial_map is not None:
        g.require_same(cfg.initial_map.geometry, "initial map")
        pos = np.array(cfg.initial_map.positions)
    else:
        pos = ref.copy()
    # one gather per stage: channels are (1/f1, u_0, ..., u_d-1)
    packed = np.concatenate([(1.0 / f1.values)[..., None], u.values], axis=-1)

    def velocity(p, t):
        s = sample_multilinear(packed, g.to_index(p))
        inv_f = (1.0 - t) + t * s[..., :1]
        return s[..., 1:] / inv_f

    n = cfg.time_steps
    dt = 1.0 / n
    if np.any(u.values):
        for k in range(n):
            t = k * dt
            if cfg.integrator == "euler":
                pos = pos + dt * velocity(pos, t)
            else:
                k1 = velocity(pos, t)
                k2 = velocity(pos + 0.5 * dt * k1, t + 0.5 * dt)
                k3 = velocity(pos + 0.5 * dt * k2, t + 0.5 * dt)
                k4 = velocity(pos + dt * k3, t + dt)
                pos = pos + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            _project_walls(pos, g, ref)
    phi = DiffeoMap(g, pos)
    check_folding(phi)
    return phi


def deform(f1: ScalarField, cfg: DeformationConfig = DeformationConfig()) -> DiffeoMap:
    """Map whose Jacobian determinant approximates ``f1`` (composition of the two steps)."""
    return integrate_map(f1, build_velocity(f1, cfg.poisson_method), cfg)


def generate_grid(image: ScalarField, spec: MonitorSpec = MonitorSpec(), cfg: DeformationConfig = DeformationConfig()) -> DiffeoMap:
    f1 = monitor_from_image(image, spec)
    log.debug("monitor range [%.4g, %.4g]", f1.values.min(), f1.values.max())
    return deform(f1, cfg)


def write_grid_text(phi: DiffeoMap, path) -> None:
    """One line per node: flat (C-order) node index followed by its mapped coordinates in mm."""
    g = phi.geometry
    pts = phi.positions.reshape(-1, g.ndim)
    idx = np.arange(len(pts))
    cols = "x y z"[: 2 * g.ndim - 1]
    header = f"dims {' '.join(map(str, g.dims))}\nindex {cols}"
    fmt = ["%d"] + ["%.9g"] * g.ndim
    np.savetxt(Path(path), np.column_stack([idx, pts]), fmt=fmt, header=header)


def read_grid_text(path, geometry: LatticeGeometry) -> DiffeoMap:
    data = np.loadtxt(Path(path), ndmin=2)
    order = np.argsort(data[:, 0])
    pts = data[order, 1:]
    return DiffeoMap(geometry, pts.reshape(geometry.dims + (geometry.ndim,)))


def gaussian_bump_monitor(geometry: LatticeGeometry, depth: float = 0.5, width: float = 0.1, centre=None) -> ScalarField:
    """Smooth test monitor ``1 - depth * exp(-r^2 / 2 s^2)``, volume-normalised.

    ``width`` is the bump standard deviation as a fraction of the shortest box side.
    """
    x = geometry.node_positions()
    lo = np.asarray(geometry.origin)
    ext = np.asarray(geometry.extent)
    c = lo + ext / 2 if centre is None else np.asarray(centre, dtype=float)
    s = width * ext.min()
    r2 = np.sum((x - c) ** 2, axis=-1)
    raw = 1.0 - depth * np.exp(-r2 / (2 * s * s))
    return normalize_monitor(raw, geometry)
