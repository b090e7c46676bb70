"""Reconstruct a map from its Jacobian determinant and the curl of its displacement.

The loss is

    L(phi) = 1/2 |J(phi) - jd|^2 + 1/2 |curl(phi - id) - cv|^2 + lam/2 |lap(phi - id)|^2

summed over cells (first term) and nodes (the others). Boundary nodes slide along
their walls. Minimisation is projected gradient descent with Barzilai-Borwein trial
steps and Armijo backtracking, so every accepted step lowers the loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError, ParameterError, StallError
from .field_core import DiffeoMap, LatticeGeometry, ScalarField, VectorField
from .numerics import det_values, jacobian_matrices, wall_normal_mask


# --------------------------------------------------------------------------- linear operators


def _d1(n: int, h: float) -> sp.csr_matrix:
    """Matrix of ``np.gradient(edge_order=2)`` along one axis."""
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / h, 0.5 / h]
    rows += [0, 0, 0, n - 1, n - 1, n - 1]
    cols += [0, 1, 2, n - 1, n - 2, n - 3]
    vals += [-1.5 / h, 2.0 / h, -0.5 / h, 1.5 / h, -2.0 / h, 0.5 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _d2(n: int, h: float) -> sp.csr_matrix:
    """Matrix of :func:`jdcv.numerics.laplacian` along one axis."""
    m = sp.lil_matrix((n, n))
    for i in range(1, n - 1):
        m[i, i - 1], m[i, i], m[i, i + 1] = 1.0, -2.0, 1.0
    if n >= 4:
        m[0, 0:4] = [2.0, -5.0, 4.0, -1.0]
        m[n - 1, n - 4 : n] = [-1.0, 4.0, -5.0, 2.0]
    else:
        m[0, :] = m[1, :]
        m[n - 1, :] = m[1, :]
    return (m / h**2).tocsr()


def _along(axis_op, axis: int, dims) -> sp.csr_matrix:
    mats = [sp.identity(n, format="csr") for n in dims]
    mats[axis] = axis_op
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


@lru_cache(maxsize=16)
def _operators(dims: tuple, spacing: tuple):
    """Sparse curl (acting on component-major displacement) and per-component Laplacian."""
    D = [_along(_d1(n, h), a, dims) for a, (n, h) in enumerate(zip(dims, spacing))]
    if len(dims) == 2:
        C = sp.hstack([-D[1], D[0]], format="csr")
    else:
        Z = sp.csr_matrix(D[0].shape)
        C = sp.vstack(
            [
                sp.hstack([Z, -D[2], D[1]]),
                sp.hstack([D[2], Z, -D[0]]),
                sp.hstack([-D[1], D[0], Z]),
            ],
            format="csr",
        )
    lap = sum(_along(_d2(n, h), a, dims) for a, (n, h) in enumerate(zip(dims, spacing)))
    return C, C.T.tocsr(), lap.tocsr(), lap.T.tocsr()


def _cofactor(F: np.ndarray) -> np.ndarray:
    """d det(F) / dF, same shape as F."""
    if F.shape[-1] == 2:
        cof = np.empty_like(F)
        cof[..., 0, 0] = F[..., 1, 1]
        cof[..., 0, 1] = -F[..., 1, 0]
        cof[..., 1, 0] = -F[..., 0, 1]
        cof[..., 1, 1] = F[..., 0, 0]
        return cof
    cof = np.empty_like(F)
    for i in range(3):
        for j in range(3):
            r = [k for k in range(3) if k != i]
            c = [k for k in range(3) if k != j]
            minor = F[..., r[0], c[0]] * F[..., r[1], c[1]] - F[..., r[0], c[1]] * F[..., r[1], c[0]]
            cof[..., i, j] = (-1) ** (i + j) * minor
    return cof


def _jacobian_adjoint(dF: np.ndarray, spacing, node_dims) -> np.ndarray:
    """Pull a cell-wise gradient w.r.t. F back onto node positions."""
    d = len(node_dims)
    cells = tuple(n - 1 for n in node_dims)
    out = np.zeros(tuple(node_dims) + (d,))
    for j in range(d):
        others = [a for a in range(d) if a != j]
        col = dF[..., :, j] / (2 ** (d - 1) * spacing[j])
        for offs in np.ndindex(*(2,) * (d - 1)):
            hi = [slice(None)] * d
            lo = [slice(None)] * d
            hi[j] = slice(1, None)
            lo[j] = slice(0, -1)
            for a, o in zip(others, offs):
                hi[a] = lo[a] = slice(o, cells[a] + o)
            out[tuple(hi)] += col
            out[tuple(lo)] -= col
    return out


# --------------------------------------------------------------------------- problem


@dataclass(frozen=True)
class RecoveryProblem:
    target_jd: ScalarField
    target_curl: ScalarField | VectorField
    smooth_weight: float = 1e-3
    max_iters: int = 2000
    step_size: float = 0.1
    tol: float = 1e-8

    def __post_init__(self):
        if self.smooth_weight < 0:
            raise ParameterError("smooth_weight must be >= 0")
        if self.step_size <= 0 or self.max_iters < 0:
            raise ParameterError("step_size must be > 0 and max_iters >= 0")
        node = self.target_curl.geometry
        if self.target_jd.geometry != node.cells():
            raise ParameterError("target_jd must live on the cell lattice of target_curl's geometry")
        want_vector = node.ndim == 3
        if want_vector != isinstance(self.target_curl, VectorField):
            raise ParameterError("target_curl must be scalar in 2D and a vector field in 3D")

    @property
    def geometry(self) -> LatticeGeometry:
        return self.target_curl.geometry

    @classmethod
    def from_map(cls, phi: DiffeoMap, **kwargs) -> "RecoveryProblem":
        """Targets taken from ``phi`` with exactly the stencils the loss uses."""
        g = phi.geometry
        disp = phi.positions - g.node_positions()
        jd = ScalarField(g.cells(), det_values(jacobian_matrices(disp, g.spacing) + np.eye(g.ndim)))
        C = _operators(g.dims, g.spacing)[0]
        c = C @ _vec(disp)
        if g.ndim == 2:
            cv = ScalarField(g, c.reshape(g.dims))
        else:
            cv = VectorField(g, _unvec(c, g.dims))
        return cls(jd, cv, **kwargs)


@dataclass
class RecoveryResult:
    map: DiffeoMap
    loss_history: list = field(default_factory=list)
    grad_norm_history: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.loss_history) - 1

    def trace_rows(self):
        return [(i, l, g) for i, (l, g) in enumerate(zip(self.loss_history, self.grad_norm_history))]


def _vec(disp: np.ndarray) -> np.ndarray:
    return np.moveaxis(disp, -1, 0).ravel()


def _unvec(v: np.ndarray, dims) -> np.ndarray:
    return np.moveaxis(v.reshape((len(dims),) + tuple(dims)), 0, -1)


def loss_and_gradient(problem: RecoveryProblem, positions: np.ndarray):
    """Loss value and its gradient w.r.t. node positions (walls not yet projected)."""
    g = problem.geometry
    return _loss_and_gradient(problem, np.asarray(positions) - g.node_positions())


def _loss_and_gradient(problem: RecoveryProblem, disp: np.ndarray):
    # works on displacements so the lattice origin never enters the arithmetic
    g = problem.geometry
    C, Ct, lap, lapt = _operators(g.dims, g.spacing)
    F = jacobian_matrices(disp, g.spacing) + np.eye(g.ndim)
    rj = det_values(F) - problem.target_jd.values
    dv = _vec(disp)
    rc = C @ dv - _vec(problem.target_curl.values[..., None] if g.ndim == 2 else problem.target_curl.values)
    lam = problem.smooth_weight
    d = g.ndim
    n = dv.size // d
    rl = np.concatenate([lap @ dv[k * n : (k + 1) * n] for k in range(d)]) if lam else None

    loss = 0.5 * np.dot(rj.ravel(), rj.ravel()) + 0.5 * np.dot(rc, rc)
    if lam:
        loss += 0.5 * lam * np.dot(rl, rl)

    grad = _jacobian_adjoint(rj[..., None, None] * _cofactor(F), g.spacing, g.dims)
    gv = Ct @ rc
    if lam:
        gv = gv + lam * np.concatenate([lapt @ rl[k * n : (k + 1) * n] for k in range(d)])
    grad = grad + _unvec(gv, g.dims)
    return float(loss), grad


def recover(problem: RecoveryProblem, initial: DiffeoMap | None = None, armijo: float = 1e-4) -> RecoveryResult:
    g = problem.geometry
    vol = float(np.sum(problem.target_jd.values)) * g.cell_volume
    if abs(vol - g.volume) > 1e-3 * g.volume:
        warnings.warn(
            f"target jacobian integrates to {vol:.6g}, box volume is {g.volume:.6g}",
            RuntimeWarning,
            stacklevel=2,
        )
    walls = wall_normal_mask(g)
    ref = g.node_positions()
    x = np.zeros_like(ref) if initial is None else np.array(initial.positions) - ref

    def evaluate(p):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = _loss_and_gradient(problem, p)
        if not np.isfinite(loss):
            raise NumericalError("recovery loss became non-finite")
        grad[walls] = 0.0
        return loss, grad

    def as_map(disp):
        return DiffeoMap(g, ref + disp)

    loss, grad = evaluate(x)
    gnorm = float(np.linalg.norm(grad))
    result = RecoveryResult(as_map(x), [loss], [gnorm])
    if loss == 0.0 or gnorm == 0.0:
        result.converged = True
        return result

    alpha = problem.step_size
    prev_x = prev_grad = None
    for it in range(1, problem.max_iters + 1):
        if prev_x is not None:
            s = (x - prev_x).ravel()
            y = (grad - prev_grad).ravel()
            sy = float(np.dot(s, y))
            if sy > 0:
                alpha = float(np.dot(s, s)) / sy
            else:
                alpha = 2.0 * alpha
        g2 = gnorm * gnorm
        while True:
            trial = x - alpha * grad
            trial_loss, trial_grad = evaluate(trial)
            if trial_loss <= loss - armijo * alpha * g2:
                break
            alpha *= 0.5
            if alpha * gnorm < 1e-14 * (1.0 + max(g.extent)):
                if loss <= 1e-24 or gnorm <= 1e-12:
                    result.converged = True
                    result.map = as_map(x)
                    return result
                raise StallError("line search found no descent", it, loss, gnorm)
        prev_x, prev_grad = x, grad
        decrease = (loss - trial_loss) / loss if loss > 0 else 0.0
        x, loss, grad = trial, trial_loss, trial_grad
        gnorm = float(np.linalg.norm(grad))
        result.loss_history.append(loss)
        result.grad_norm_history.append(gnorm)
        if decrease < problem.tol or loss == 0.0:
            result.converged = True
            break
    result.map = as_map(x)
    return result


# --------------------------------------------------------------------------- synthetic T0


def synthesize_t0(geometry: LatticeGeometry, amplitude: float, seed: int, max_mode: int = 2) -> DiffeoMap:
    """Identity plus a smooth, seeded displacement with zero wall-normal component.

    Component ``a`` is a sum of ``sin(m pi s_a) * prod_b cos(n_b pi s_b)`` modes in the
    normalised coordinates ``s``; the absolute coefficients sum to one, so no node moves
    further than ``amplitude`` times the box side along any axis.
    """
    if amplitude < 0:
        raise ParameterError("amplitude must be >= 0")
    rng = np.random.default_rng(seed)
    ref = geometry.node_positions()
    s = (ref - np.asarray(geometry.origin)) / np.asarray(geometry.extent)
    d = geometry.ndim
    disp = np.zeros_like(ref)
    for a in range(d):
        others = [b for b in range(d) if b != a]
        terms = []
        for m in range(1, max_mode + 1):
            for ns in np.ndindex(*(max_mode + 1,) * (d - 1)):
                basis = np.sin(m * np.pi * s[..., a])
                for b, nb in zip(others, ns):
                    basis = basis * np.cos(nb * np.pi * s[..., b])
                terms.append(basis)
        coef = rng.normal(size=len(terms))
        coef /= np.sum(np.abs(coef))
        disp[..., a] = amplitude * geometry.extent[a] * sum(c * t for c, t in zip(coef, terms))
    phi = DiffeoMap(geometry, ref + disp)
    J = det_values(jacobian_matrices(phi.positions, geometry.spacing))
    if J.min() <= 0:
        raise ParameterError(f"amplitude {amplitude} folds the synthetic map (min jacobian {J.min():.3g})")
    return phi


def node_error_cells(phi: DiffeoMap, reference: DiffeoMap) -> np.ndarray:
    """Per-node Euclidean distance between two maps, measured in grid cells."""
    diff = (phi.positions - reference.positions) / np.asarray(phi.geometry.spacing)
    return np.linalg.norm(diff, axis=-1)
