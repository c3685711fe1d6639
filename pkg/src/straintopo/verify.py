"""Finite-difference gradient battery used by ``straintopo verify``."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from .config import from_dict
from .driver import RobustProblem
from .fea import uniform_layer
from .material import MaterialParams, material_tangent, pk2_stress, strain_energy
from .mesh import (BoundarySpec, GridSpec, InputSpec, RegionBox, apply_boundary_conditions, build_grid,
                   tag_regions)
from .fea import Assembler


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.error < self.tol)

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name:<40s} err={self.error:.3e} "
                f"tol={self.tol:.0e} ({self.seconds:.2f}s)")


def _timed(name: str, tol: float, fn: Callable[[], float]) -> CheckResult:
    t0 = time.perf_counter()
    err = fn()
    return CheckResult(name, err, tol, time.perf_counter() - t0)


def random_deformation(rng: np.random.Generator, n: int, spread: float = 0.3) -> np.ndarray:
    """Deformation gradients with J bounded away from zero."""
    F = np.eye(2) + spread * rng.uniform(-1, 1, (n, 2, 2))
    bad = np.linalg.det(F) < 0.3
    while bad.any():
        F[bad] = np.eye(2) + spread * rng.uniform(-1, 1, (bad.sum(), 2, 2))
        bad = np.linalg.det(F) < 0.3
    return F


def check_constitutive(n: int = 100, seed: int = 0) -> float:
    """Max relative error of S vs 2 dW/dC and of the tangent vs 2 dS/dC."""
    params = MaterialParams(E=3.0, nu=0.45)
    rng = np.random.default_rng(seed)
    F = random_deformation(rng, n)
    h = 1e-6
    worst = 0.0
    S = pk2_stress(F, params)
    D = material_tangent(F, params)
    C = np.einsum("nki,nkj->nij", F, F)
    pairs = ((0, 0), (1, 1), (0, 1))
    for a, (i, j) in enumerate(pairs):
        dC = np.zeros((2, 2))
        dC[i, j] += 0.5
        dC[j, i] += 0.5
        Fp = np.linalg.cholesky(C + h * dC).transpose(0, 2, 1)
        Fm = np.linalg.cholesky(C - h * dC).transpose(0, 2, 1)
        dW = (strain_energy(Fp, params) - strain_energy(Fm, params)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(2 * dW - S[:, i, j]) / np.maximum(np.abs(S[:, i, j]), 1e-3))))
        dS = (pk2_stress(Fp, params) - pk2_stress(Fm, params)) / (2 * h)
        scale = max(float(np.max(np.abs(D))), 1.0)
        for b, (k, l) in enumerate(pairs):
            fd = 2 * dS[:, k, l]
            worst = max(worst, float(np.max(np.abs(fd - D[:, b, a]))) / scale)
    return worst


def _small_assembler(n: int, gamma: float, seed: int):
    mesh = build_grid(GridSpec(n, n, 1.0, 1.0, 1.0))
    regions = tag_regions(mesh, [], modulus=1.0)
    dofs = apply_boundary_conditions(mesh, [BoundarySpec("left", "fixed")],
                                     InputSpec(1.0, 1.0, "x", spring=0.3, force=0.0))
    asm = Assembler(mesh, regions, dofs, MaterialParams(1.0, 0.45))
    layer = uniform_layer(mesh, regions, gamma)
    rng = np.random.default_rng(seed)
    u = 0.05 * rng.standard_normal(dofs.n_dofs)
    return asm, layer, u


def check_assembly(sizes=(1, 2, 3), gammas=(0.0, 0.5, 1.0), seed: int = 0) -> float:
    """Max relative error of F_int vs FD energy gradient and K_T vs FD Jacobian."""
    worst = 0.0
    h = 1e-6
    for n in sizes:
        for g in gammas:
            asm, layer, u = _small_assembler(n, g, seed)
            F = asm.internal_force(u, layer)
            K = asm.full_tangent(u, layer).toarray()
            fd_F = np.zeros_like(F)
            fd_K = np.zeros_like(K)
            for i in range(u.size):
                e = np.zeros_like(u)
                e[i] = h
                fd_F[i] = (asm.energy(u + e, layer) - asm.energy(u - e, layer)) / (2 * h)
                fd_K[:, i] = (asm.internal_force(u + e, layer) - asm.internal_force(u - e, layer)) / (2 * h)
            worst = max(worst, float(np.linalg.norm(F - fd_F) / np.linalg.norm(fd_F)),
                        float(np.linalg.norm(K - fd_K) / np.linalg.norm(fd_K)))
    return worst


def adjoint_test_config(nx: int = 10, ny: int = 6):
    """Small force-driven problem with an ``nx`` x ``ny`` block of design elements."""
    lx, ly = float(nx), float(ny + 1)
    mid = nx // 2
    return from_dict({
        "name": "adjoint-check",
        "grid": {"nx": nx, "ny": ny + 1, "lx": lx, "ly": ly, "thickness": 1.0},
        "material": {"E": 10.0, "nu": 0.3},
        "regions": [
            {"role": "void", "x0": 0.0, "x1": mid - 1.0, "y0": ly - 1, "y1": ly},
            {"role": "void", "x0": mid + 1.0, "x1": lx, "y0": ly - 1, "y1": ly},
        ],
        "variants": [{"name": "tissue", "regions": [
            {"role": "tissue", "x0": mid - 1.0, "x1": mid + 1.0, "y0": ly - 1, "y1": ly, "modulus": 1.0}]}],
        "boundary": [{"edge": "bottom", "kind": "fixed"}],
        "input": {"x": 0.0, "y": float(ny // 2), "direction": "x", "spring": 1.0, "force": -2.0},
        "target": {"exx": 0.05, "eyy": -0.02, "exy": 0.01, "weights": [1.0, 1.0, 1.0]},
        "optimization": {"filter_radius_elements": 1.5},
        "newton": {"tol_rel": 1e-12, "tol_abs": 1e-13, "max_iter": 100},
    })


def end_to_end_gradient(prob: RobustProblem, rho: np.ndarray, beta: float, case_index: int,
                        include_gamma_path: bool = True):
    """Objective and adjoint gradient w.r.t. the design variables for one load case."""
    ev = prob.evaluate(rho, beta, gradient=True, warm=False, include_gamma_path=include_gamma_path)
    case = prob.cases[case_index]
    from .filters import LAYERS
    li = LAYERS.index(case.layer)
    return ev.f[li, case.variant], ev.grads[li, case.variant]


def finite_difference_gradient(prob: RobustProblem, rho: np.ndarray, beta: float, case_index: int,
                               h: float = 1e-6) -> np.ndarray:
    from .filters import LAYERS
    case = prob.cases[case_index]
    li = LAYERS.index(case.layer)
    out = np.zeros(rho.size)
    for i in range(rho.size):
        rp, rm = rho.copy(), rho.copy()
        rp[i] += h
        rm[i] -= h
        fp = prob.evaluate(rp, beta, gradient=False, warm=False).f[li, case.variant]
        fm = prob.evaluate(rm, beta, gradient=False, warm=False).f[li, case.variant]
        out[i] = (fp - fm) / (2 * h)
    return out


def gradient_error(adj: np.ndarray, fd: np.ndarray, floor: float = 1e-10) -> float:
    mask = np.abs(fd) > floor
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(adj[mask] - fd[mask]) / np.abs(fd[mask])))


def check_adjoint(seed: int = 0, beta: float = 2.0, case_index: int = 1, include_gamma_path: bool = True):
    prob = RobustProblem(adjoint_test_config())
    rng = np.random.default_rng(seed)
    rho = rng.uniform(0.05, 0.95, prob.n_design)
    _, adj = end_to_end_gradient(prob, rho, beta, case_index, include_gamma_path)
    fd = finite_difference_gradient(prob, rho, beta, case_index)
    return gradient_error(adj, fd)


def run_battery(quick: bool = False) -> List[CheckResult]:
    out = [
        _timed("constitutive (S, tangent) vs FD", 1e-6, lambda: check_constitutive(100)),
        _timed("assembly (F_int, K_T) vs FD", 1e-5,
               lambda: check_assembly(sizes=(1, 2) if quick else (1, 2, 3))),
    ]
    if not quick:
        out.append(_timed("adjoint df/drho vs FD (10x6 design)", 1e-4, check_adjoint))
    return out
