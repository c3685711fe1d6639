"""Least-squares strain objective, RMS errors and adjoint sensitivities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .fea import Assembler, DesignLayer, SystemState
from .material import interpolated_element_energy
from .mesh import DESIGN


class TargetConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class StrainTarget:
    """Target Green-Lagrange strains (Voigt, engineering shear) and weights."""

    exx: float = 0.0
    eyy: float = 0.0
    exy: float = 0.0
    w1: float = 1.0
    w2: float = 0.0
    w3: float = 0.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise TargetConfigurationError("weights must be non-negative")
        if self.denominator <= 0:
            raise TargetConfigurationError("weighted target norm is zero")

    @property
    def values(self) -> np.ndarray:
        return np.array([self.exx, self.eyy, self.exy])

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.w1, self.w2, self.w3])

    @property
    def denominator(self) -> float:
        return float(np.sum(self.weights * self.values ** 2))


@dataclass(frozen=True)
class ObjectiveValue:
    f: float
    component_sums: np.ndarray
    n: int


def strain_objective(samples: np.ndarray, target: StrainTarget) -> ObjectiveValue:
    """Mean normalised weighted squared deviation of window strains from the target."""
    s = np.atleast_2d(samples)
    if s.shape[0] == 0:
        raise TargetConfigurationError("empty objective window")
    sums = np.sum((s - target.values) ** 2, axis=0)
    f = float(np.sum(target.weights * sums) / target.denominator / s.shape[0])
    return ObjectiveValue(f, sums, s.shape[0])


def rms_errors(samples: np.ndarray, target: StrainTarget) -> Dict[str, float]:
    """Per-direction RMS errors in percent.

    A direction whose target is zero is normalised by the full weighted
    target norm instead of its own (which would vanish); it is NaN only if
    that norm is zero too.
    """
    obj = strain_objective(samples, target)
    out = {}
    for name, i in (("Err_x", 0), ("Err_y", 1), ("Err_xy", 2)):
        den = target.values[i] ** 2
        if den <= 0:
            den = target.denominator
        out[name] = float(np.sqrt(obj.component_sums[i] / obj.n / den) * 100.0) if den > 0 else float("nan")
    return out


def objective_displacement_gradient(asm: Assembler, u: np.ndarray, window: np.ndarray,
                                    target: StrainTarget) -> np.ndarray:
    """Gradient of :func:`strain_objective` w.r.t. the global displacement vector."""
    eps = asm.center_strains(u, window)
    dE = asm.center_strain_derivatives(u, window)
    coef = 2.0 / window.size * target.weights * (eps - target.values) / target.denominator
    ge = np.einsum("ek,eki->ei", coef, dE)
    g = np.zeros(asm.dofs.n_dofs)
    np.add.at(g, asm.mesh.edofs[window], ge)
    return g


def adjoint_solve(asm: Assembler, state: SystemState, dfdu: np.ndarray) -> np.ndarray:
    """Solve ``K_T lam = -df/du`` on the free DOFs with the converged factorization."""
    lam = np.zeros(asm.dofs.n_dofs)
    rhs = -dfdu[asm.dofs.free]
    if not np.any(rhs):
        return lam
    if state.factor is None:
        raise RuntimeError("adjoint needs the factorization of the converged tangent")
    lam[asm.dofs.free] = state.factor.solve(rhs)
    return lam


def design_sensitivity(asm: Assembler, lam: np.ndarray, u: np.ndarray, layer: DesignLayer,
                       include_gamma_path: bool = True) -> np.ndarray:
    """``lam^T dR/d(rho_bar)`` per element through the SIMP and energy-interpolation paths.

    Non-design elements receive zero.
    """
    design = np.flatnonzero(asm.regions.role == DESIGN)
    out = np.zeros(asm.mesh.n_elements)
    if design.size == 0:
        return out
    ue = u[asm.mesh.edofs[design]]
    le = lam[asm.mesh.edofs[design]]
    resp = interpolated_element_energy(ue, layer.gamma[design], 1.0, asm.thickness[design],
                                       asm.mesh.shape, asm.params, asm.KL,
                                       need_tangent=False, need_dgamma=include_gamma_path)
    sens = layer.dmodulus[design] * np.sum(le * resp.unit_force, axis=1)
    if include_gamma_path:
        sens += layer.modulus[design] * layer.dgamma[design] * np.sum(le * resp.dforce_dgamma, axis=1)
    out[design] = sens
    return out


@dataclass
class CaseResult:
    """Objective value, gradient w.r.t. projected densities and diagnostics for one load case."""

    f: float
    dfdbar: np.ndarray
    state: SystemState
    samples: np.ndarray
    errors: Dict[str, float]


def evaluate_case(asm: Assembler, layer: DesignLayer, state: SystemState, window: np.ndarray,
                  target: StrainTarget, gradient: bool = True,
                  include_gamma_path: bool = True) -> CaseResult:
    samples = asm.center_strains(state.u, window)
    obj = strain_objective(samples, target)
    grad: Optional[np.ndarray] = None
    if gradient:
        dfdu = objective_displacement_gradient(asm, state.u, window, target)
        lam = adjoint_solve(asm, state, dfdu)
        grad = design_sensitivity(asm, lam, state.u, layer, include_gamma_path)
    return CaseResult(obj.f, grad, state, samples, rms_errors(samples, target))
