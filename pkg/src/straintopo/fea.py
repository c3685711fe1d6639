"""Total-Lagrangian assembly and Newton-Raphson equilibrium solves."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .material import (ElementInversion, ElementResponse, GammaParams, MaterialParams, SimpParams,
                       center_strain, center_strain_derivative, gamma_factor,
                       interpolated_element_energy, linear_element_stiffness, simp_modulus)
from .mesh import DofMap, Mesh, RegionMap

log = logging.getLogger(__name__)

try:
    from cvxopt import cholmod as _cholmod
    from cvxopt import matrix as _cvx_matrix
    from cvxopt import spmatrix as _cvx_spmatrix
    _cholmod.options["supernodal"] = 2
except ImportError:  # pragma: no cover - optional backend
    _cholmod = None


class NonConvergenceError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class SingularSystemError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Linear solves


class Factor:
    """Factorization of a symmetric matrix over the free DOFs."""

    def __init__(self, K: sp.csc_matrix, backend: str = "auto"):
        self.K = K
        self.backend = None
        if backend in ("auto", "cholmod") and _cholmod is not None:
            try:
                lower = sp.tril(K, format="coo")
                A = _cvx_spmatrix(_cvx_matrix(lower.data), _cvx_matrix(lower.row.astype("i")),
                                  _cvx_matrix(lower.col.astype("i")), K.shape)
                F = _cholmod.symbolic(A)
                _cholmod.numeric(A, F)
                self._F = F
                self.backend = "cholmod"
            except ArithmeticError:
                if backend == "cholmod":
                    raise SingularSystemError("tangent is not positive definite")
        if self.backend is None:
            try:
                self._lu = spla.splu(K.tocsc(), permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SingularSystemError(str(exc)) from exc
            self.backend = "splu"

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.backend == "cholmod":
            x = _cvx_matrix(np.ascontiguousarray(b, dtype=float))
            _cholmod.solve(self._F, x)
            out = np.array(x).ravel()
        else:
            out = self._lu.solve(np.asarray(b, dtype=float))
        if not np.all(np.isfinite(out)):
            raise SingularSystemError("non-finite solution from factorization")
        return out


# ---------------------------------------------------------------------------
# Design layer data


@dataclass
class DesignLayer:
    """Per-element projected density, modulus and interpolation factor."""

    rho_bar: np.ndarray
    modulus: np.ndarray
    dmodulus: np.ndarray
    gamma: np.ndarray
    dgamma: np.ndarray


def make_layer(rho_bar: np.ndarray, regions: RegionMap, simp: SimpParams,
               gamma_params: GammaParams = GammaParams()) -> DesignLayer:
    E, dE = simp_modulus(rho_bar, simp, E_s=regions.modulus)
    g, dg = gamma_factor(rho_bar, simp.p, gamma_params)
    return DesignLayer(np.asarray(rho_bar, dtype=float), E, dE, g, dg)


def uniform_layer(mesh: Mesh, regions: RegionMap, gamma: float = 1.0) -> DesignLayer:
    """Solid layer with prescribed interpolation factor (for tests and checks)."""
    n = mesh.n_elements
    return DesignLayer(np.ones(n), regions.modulus.copy(), np.zeros(n), np.full(n, gamma), np.zeros(n))


# ---------------------------------------------------------------------------
# Assembly


class Assembler:
    """Global force/tangent assembly on a fixed mesh and DOF map."""

    def __init__(self, mesh: Mesh, regions: RegionMap, dofs: DofMap, params: MaterialParams,
                 backend: str = "auto"):
        self.mesh = mesh
        self.regions = regions
        self.dofs = dofs
        self.params = params.unit()
        self.backend = backend
        self.KL = linear_element_stiffness(mesh.shape, self.params)
        self.thickness = regions.thickness
        self._build_pattern()

    def _build_pattern(self):
        n = self.dofs.n_dofs
        free = self.dofs.free
        nf = free.size
        to_free = np.full(n, -1, dtype=np.int64)
        to_free[free] = np.arange(nf)
        ef = to_free[self.mesh.edofs]
        rows = np.broadcast_to(ef[:, :, None], (ef.shape[0], 8, 8))
        cols = np.broadcast_to(ef[:, None, :], (ef.shape[0], 8, 8))
        mask = (rows >= 0) & (cols >= 0)
        key = cols[mask] * nf + rows[mask]
        uniq, inv = np.unique(key, return_inverse=True)
        self._mask = mask
        self._inv = inv
        self._nnz = uniq.size
        self._indices = (uniq % nf).astype(np.int32)
        colnum = uniq // nf
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(colnum, minlength=nf))]).astype(np.int32)
        self._nf = nf
        self._to_free = to_free
        self._spring_pos = -1
        if self.dofs.input_dof >= 0 and to_free[self.dofs.input_dof] >= 0:
            i = to_free[self.dofs.input_dof]
            start, stop = self._indptr[i], self._indptr[i + 1]
            self._spring_pos = start + int(np.flatnonzero(self._indices[start:stop] == i)[0])

    # element level -----------------------------------------------------
    def element_response(self, u: np.ndarray, layer: DesignLayer, need_tangent=True,
                         need_dgamma=False) -> ElementResponse:
        ue = u[self.mesh.edofs]
        return interpolated_element_energy(ue, layer.gamma, layer.modulus, self.thickness,
                                           self.mesh.shape, self.params, self.KL,
                                           need_tangent=need_tangent, need_dgamma=need_dgamma)

    # global -------------------------------------------------------------
    def scatter(self, fe: np.ndarray) -> np.ndarray:
        return np.bincount(self.mesh.edofs.ravel(), weights=fe.ravel(), minlength=self.dofs.n_dofs)

    def internal_force(self, u: np.ndarray, layer: DesignLayer, resp: Optional[ElementResponse] = None):
        if resp is None:
            resp = self.element_response(u, layer, need_tangent=False)
        F = self.scatter(resp.force)
        if self.dofs.input_dof >= 0:
            F[self.dofs.input_dof] += self.dofs.spring * u[self.dofs.input_dof]
        return F

    def energy(self, u: np.ndarray, layer: DesignLayer) -> float:
        """Stored energy: interpolated element energies plus the input spring."""
        resp = self.element_response(u, layer, need_tangent=False)
        e = float(np.sum(resp.energy))
        if self.dofs.input_dof >= 0:
            e += 0.5 * self.dofs.spring * u[self.dofs.input_dof] ** 2
        return e

    def free_matrix(self, Ke: np.ndarray) -> sp.csc_matrix:
        data = np.bincount(self._inv, weights=Ke[self._mask], minlength=self._nnz)
        if self._spring_pos >= 0:
            data[self._spring_pos] += self.dofs.spring
        return sp.csc_matrix((data, self._indices, self._indptr), shape=(self._nf, self._nf))

    def tangent(self, u: np.ndarray, layer: DesignLayer, resp: Optional[ElementResponse] = None):
        """Tangent stiffness over the free DOFs (constrained rows/cols eliminated)."""
        if resp is None:
            resp = self.element_response(u, layer)
        return self.free_matrix(resp.tangent)

    def full_tangent(self, u: np.ndarray, layer: DesignLayer) -> sp.csr_matrix:
        resp = self.element_response(u, layer)
        e = self.mesh.edofs
        rows = np.repeat(e, 8, axis=1).ravel()
        cols = np.tile(e, (1, 8)).ravel()
        K = sp.coo_matrix((resp.tangent.ravel(), (rows, cols)), shape=(self.dofs.n_dofs,) * 2).tocsr()
        if self.dofs.input_dof >= 0:
            K = K + sp.coo_matrix(([self.dofs.spring], ([self.dofs.input_dof], [self.dofs.input_dof])),
                                  shape=K.shape).tocsr()
        return K

    def factorize(self, K: sp.csc_matrix) -> Factor:
        return Factor(K, self.backend)

    def matvec_elements(self, Ke: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Global ``K v`` from element tangents (spring included)."""
        out = self.scatter(np.einsum("eij,ej->ei", Ke, v[self.mesh.edofs]))
        if self.dofs.input_dof >= 0:
            out[self.dofs.input_dof] += self.dofs.spring * v[self.dofs.input_dof]
        return out

    # strains --------------------------------------------------------------
    def center_strains(self, u: np.ndarray, elements: Optional[np.ndarray] = None) -> np.ndarray:
        e = self.mesh.edofs if elements is None else self.mesh.edofs[elements]
        return center_strain(u[e], self.mesh.shape)

    def center_strain_derivatives(self, u: np.ndarray, elements: np.ndarray) -> np.ndarray:
        return center_strain_derivative(u[self.mesh.edofs[elements]], self.mesh.shape)


# ---------------------------------------------------------------------------
# Newton-Raphson


@dataclass(frozen=True)
class NewtonControls:
    tol_rel: float = 1e-6
    tol_abs: float = 1e-10
    max_iter: int = 50
    max_cutbacks: int = 6
    max_backtracks: int = 6


@dataclass
class SystemState:
    u: np.ndarray
    converged: bool
    load_factor: float
    iterations: int
    history: List[float] = field(default_factory=list)
    factor: Optional[Factor] = None
    increments: int = 0
    cutbacks: int = 0
    warm: bool = False


class _StepFailure(Exception):
    pass


def _newton(asm: Assembler, layer: DesignLayer, u: np.ndarray, lam: float, ctl: NewtonControls):
    """Newton iterations at fixed load factor ``lam`` starting from ``u``.

    Prescribed DOFs move to their target through a tangent predictor; steps
    that invert an element are halved (at most ``max_backtracks`` times).
    """
    d = asm.dofs
    free = d.free
    u = u.copy()
    f_ext = lam * d.external_force()
    target = lam * d.prescribed_values
    history = []
    base, step, alpha = None, None, 1.0
    first_norm = None
    it = 0
    while it <= ctl.max_iter:
        try:
            resp = asm.element_response(u, layer)
        except ElementInversion:
            if base is None or alpha <= 2.0 ** -ctl.max_backtracks:
                raise _StepFailure("inversion")
            alpha *= 0.5
            u = base + alpha * step
            continue
        F_int = asm.internal_force(u, layer, resp)
        R = F_int - f_ext
        K = asm.free_matrix(resp.tangent)
        try:
            fac = asm.factorize(K)
        except SingularSystemError as exc:
            raise _StepFailure(str(exc))
        du_p = np.zeros(d.n_dofs)
        du_p[d.prescribed] = target - u[d.prescribed]
        if np.any(du_p != 0.0):
            # tangent predictor for the prescribed increment
            rhs = -(R[free] + asm.matvec_elements(resp.tangent, du_p)[free])
            step = du_p
            step[free] = fac.solve(rhs)
            base, alpha = u.copy(), 1.0
            u = base + step
            it += 1
            continue
        Rf = R[free]
        norm = float(np.linalg.norm(Rf))
        if not np.isfinite(norm):
            raise _StepFailure("non-finite residual")
        history.append(norm)
        if first_norm is None:
            first_norm = max(norm, 1e-300)
        elif norm > 1e6 * first_norm:
            raise _StepFailure("diverging")
        ref = float(np.linalg.norm(f_ext))
        if d.constrained.size:
            ref = max(ref, float(np.linalg.norm(R[d.constrained])))
        if norm <= ctl.tol_abs + ctl.tol_rel * ref:
            return u, fac, history, it
        if it == ctl.max_iter:
            break
        step = np.zeros(d.n_dofs)
        step[free] = fac.solve(-Rf)
        base, alpha = u.copy(), 1.0
        u = base + step
        it += 1
    raise _StepFailure("iteration limit")


def newton_solve(asm: Assembler, layer: DesignLayer, controls: NewtonControls = NewtonControls(),
                 u0: Optional[np.ndarray] = None) -> SystemState:
    """Solve ``F_int(u) = F_ext`` with load stepping and cutbacks.

    A warm start ``u0`` is tried first at full load; on failure the solve
    restarts from zero with a single increment that is halved on failure
    up to ``max_cutbacks`` times.
    """
    if u0 is not None:
        try:
            u, fac, hist, its = _newton(asm, layer, u0, 1.0, controls)
            return SystemState(u, True, 1.0, its, hist, fac, 1, 0, True)
        except _StepFailure as exc:
            log.debug("warm start failed (%s); restarting from zero", exc)

    u = np.zeros(asm.dofs.n_dofs)
    lam, step = 0.0, 1.0
    min_step = 2.0 ** -controls.max_cutbacks
    total_its, cutbacks, increments = 0, 0, 0
    history: List[float] = []
    fac = None
    while lam < 1.0:
        trial = min(1.0, lam + step)
        try:
            u_new, fac, hist, its = _newton(asm, layer, u, trial, controls)
        except _StepFailure as exc:
            step *= 0.5
            cutbacks += 1
            log.debug("increment to %.4f failed (%s); cutback to %.4g", trial, exc, step)
            if step < min_step:
                raise NonConvergenceError(
                    f"Newton failed at load factor {lam:.4f} after {cutbacks} cutbacks ({exc})", history)
            continue
        u, lam = u_new, trial
        total_its += its
        increments += 1
        history.extend(hist)
        step = min(2.0 * step, 1.0)
    return SystemState(u, True, lam, total_its, history, fac, increments, cutbacks, False)
