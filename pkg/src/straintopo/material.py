"""Compressible neo-Hookean law, its small-strain counterpart and the
energy-interpolation element kernel.

All constitutive quantities are evaluated at unit Young's modulus; the
element modulus multiplies energy, force and tangent afterwards. Plane
strain is realised with ``F33 = 1`` so ``tr C`` includes ``C33 = 1``.
Tensors are batched over leading axes; Voigt order is (11, 22, 12) with
engineering shear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

INVERSION_LIMIT = 1e-8


class ElementInversion(RuntimeError):
    """Some quadrature point reached ``J <= 1e-8``."""

    def __init__(self, elements):
        self.elements = np.atleast_1d(np.asarray(elements))
        super().__init__(f"element inversion in {self.elements.size} element(s), first {self.elements[:5].tolist()}")


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    E: float = 1.0
    nu: float = 0.45
    plane_mode: str = "plane_strain"

    def __post_init__(self):
        if self.E <= 0 or not (0.0 <= self.nu < 0.5):
            raise ValueError(f"invalid material parameters E={self.E}, nu={self.nu}")
        if self.plane_mode not in ("plane_strain", "plane_stress"):
            raise ValueError(f"unknown plane mode {self.plane_mode!r}")

    @property
    def G(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def kappa(self) -> float:
        if self.plane_mode == "plane_stress":
            # experimental: only the linear model is meaningful in this mode
            return self.E / (2.0 * (1.0 - self.nu))
        return self.E / (2.0 * (1.0 + self.nu) * (1.0 - 2.0 * self.nu))

    def unit(self) -> "MaterialParams":
        return MaterialParams(1.0, self.nu, self.plane_mode)


@dataclass(frozen=True)
class SimpParams:
    p: float = 3.0
    E_s: float = 1.0
    void_ratio: float = 1e-6

    def __post_init__(self):
        if self.p < 1 or self.E_s <= 0:
            raise ValueError("SIMP needs p >= 1 and E_s > 0")

    @property
    def E_v(self) -> float:
        return self.E_s * self.void_ratio


@dataclass(frozen=True)
class GammaParams:
    beta1: float = 500.0
    eta0: float = 0.01

    def __post_init__(self):
        if self.beta1 <= 0 or not (0.0 < self.eta0 < 1.0):
            raise ValueError("gamma projection needs beta1 > 0 and 0 < eta0 < 1")


class KinematicState(NamedTuple):
    F: np.ndarray
    C: np.ndarray
    E: np.ndarray
    J: np.ndarray
    I1: np.ndarray


def kinematics(F: np.ndarray) -> KinematicState:
    F = np.asarray(F, dtype=float)
    C = np.einsum("...ki,...kj->...ij", F, F)
    E = 0.5 * (C - np.eye(2))
    J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    I1 = C[..., 0, 0] + C[..., 1, 1] + 1.0
    return KinematicState(F, C, E, J, I1)


def simp_modulus(rho_bar, simp: SimpParams, E_s=None):
    """Modified SIMP: ``E_v + (E_s - E_v) rho^p`` and its derivative."""
    rho = np.asarray(rho_bar, dtype=float)
    if np.any(rho < -1e-12) or np.any(rho > 1 + 1e-12):
        raise DomainError("density outside [0, 1]")
    rho = np.clip(rho, 0.0, 1.0)
    Es = simp.E_s if E_s is None else np.asarray(E_s, dtype=float)
    Ev = Es * simp.void_ratio
    E = Ev + (Es - Ev) * rho ** simp.p
    dE = simp.p * (Es - Ev) * rho ** (simp.p - 1)
    return E, dE


def _J_from_C(C):
    det = C[..., 0, 0] * C[..., 1, 1] - C[..., 0, 1] * C[..., 1, 0]
    return np.sqrt(det)


def _inv2(C):
    det = C[..., 0, 0] * C[..., 1, 1] - C[..., 0, 1] * C[..., 1, 0]
    inv = np.empty_like(C)
    inv[..., 0, 0] = C[..., 1, 1]
    inv[..., 1, 1] = C[..., 0, 0]
    inv[..., 0, 1] = -C[..., 0, 1]
    inv[..., 1, 0] = -C[..., 1, 0]
    return inv / det[..., None, None]


def energy_from_C(C, params: MaterialParams):
    """``W = G/2 (tr C - 3 - 2 ln J) + kappa/2 (J - 1)^2`` with ``J = sqrt(det C)``."""
    C = np.asarray(C, dtype=float)
    J = _J_from_C(C)
    I1 = C[..., 0, 0] + C[..., 1, 1] + 1.0
    G, k = params.G, params.kappa
    return 0.5 * G * (I1 - 3.0 - 2.0 * np.log(J)) + 0.5 * k * (J - 1.0) ** 2


def strain_energy(F, params: MaterialParams):
    kin = kinematics(F)
    if np.any(kin.J <= INVERSION_LIMIT):
        raise ElementInversion(np.flatnonzero(np.ravel(kin.J) <= INVERSION_LIMIT))
    return energy_from_C(kin.C, params)


def pk2_from_C(C, params: MaterialParams):
    """Second Piola-Kirchhoff stress ``G (I - C^-1) + kappa (J - 1) J C^-1``."""
    C = np.asarray(C, dtype=float)
    J = _J_from_C(C)[..., None, None]
    Ci = _inv2(C)
    return params.G * (np.eye(2) - Ci) + params.kappa * (J - 1.0) * J * Ci


def pk2_stress(F, params: MaterialParams):
    return pk2_from_C(kinematics(F).C, params)


_VOIGT = ((0, 0), (1, 1), (0, 1))


def tangent_from_C(C, params: MaterialParams):
    """Voigt material tangent ``2 dS/dC`` (shape ``(..., 3, 3)``)."""
    C = np.asarray(C, dtype=float)
    J = _J_from_C(C)
    Ci = _inv2(C)
    G, k = params.G, params.kappa
    a = k * (2.0 * J ** 2 - J)
    b = 2.0 * G - 2.0 * k * (J ** 2 - J)
    D = np.empty(C.shape[:-2] + (3, 3))
    for p, (i, j) in enumerate(_VOIGT):
        for q, (m, n) in enumerate(_VOIGT):
            D[..., p, q] = (a * Ci[..., i, j] * Ci[..., m, n]
                            + 0.5 * b * (Ci[..., i, m] * Ci[..., j, n] + Ci[..., i, n] * Ci[..., j, m]))
    return D


def material_tangent(F, params: MaterialParams):
    return tangent_from_C(kinematics(F).C, params)


def linear_tangent(params: MaterialParams) -> np.ndarray:
    """Small-strain tangent consistent with the neo-Hookean law at ``C = I``."""
    G, k = params.G, params.kappa
    return np.array([[2 * G + k, k, 0.0], [k, 2 * G + k, 0.0], [0.0, 0.0, G]])


def linear_energy_stress(grad_u, params: MaterialParams):
    """Small-strain energy, stress (Voigt) and tangent for displacement gradients."""
    H = np.asarray(grad_u, dtype=float)
    eps = np.stack([H[..., 0, 0], H[..., 1, 1], H[..., 0, 1] + H[..., 1, 0]], axis=-1)
    D = linear_tangent(params)
    sig = eps @ D
    W = 0.5 * np.sum(sig * eps, axis=-1)
    return W, sig, D


def gamma_factor(rho_bar, p: float, gp: GammaParams):
    """Energy-interpolation weight (0 = linear, 1 = fully nonlinear) and derivative."""
    rho = np.clip(np.asarray(rho_bar, dtype=float), 0.0, 1.0)
    b, e = gp.beta1, gp.eta0
    den = np.tanh(b * e) + np.tanh(b * (1.0 - e))
    t = np.tanh(b * (rho ** p - e))
    gam = (np.tanh(b * e) + t) / den
    dgam = b * (1.0 - t ** 2) / den * p * rho ** (p - 1)
    return gam, dgam


# ---------------------------------------------------------------------------
# Element kernels


def _grad(u, dN):
    """Displacement gradient ``H_iJ = sum_A u_iA dN_A/dX_J`` for u of shape (ne, 8)."""
    ue = u.reshape(-1, 4, 2)
    return np.einsum("eai,aj->eij", ue, dN)


def _b_matrix(F, dN):
    """Nonlinear strain-displacement matrix (ne, 3, 8) for Voigt Green-Lagrange strain."""
    ne = F.shape[0]
    B = np.empty((ne, 3, 8))
    # dE11/du_iA = F_i1 N_A,1; dE22/du_iA = F_i2 N_A,2; d(2E12)/du_iA = F_i1 N_A,2 + F_i2 N_A,1
    for A in range(4):
        for i in range(2):
            c = 2 * A + i
            B[:, 0, c] = F[:, i, 0] * dN[A, 0]
            B[:, 1, c] = F[:, i, 1] * dN[A, 1]
            B[:, 2, c] = F[:, i, 0] * dN[A, 1] + F[:, i, 1] * dN[A, 0]
    return B


def center_strain(u, shape):
    """Green-Lagrange strain at the element center, Voigt (E11, E22, 2 E12)."""
    u = np.atleast_2d(u)
    H = _grad(u, shape.dN_center)
    F = H + np.eye(2)
    C = np.einsum("eki,ekj->eij", F, F)
    return np.stack([0.5 * (C[:, 0, 0] - 1.0), 0.5 * (C[:, 1, 1] - 1.0), C[:, 0, 1]], axis=-1)


def center_strain_derivative(u, shape):
    """Exact derivative of :func:`center_strain` w.r.t. the 8 nodal displacements."""
    u = np.atleast_2d(u)
    F = _grad(u, shape.dN_center) + np.eye(2)
    return _b_matrix(F, shape.dN_center)


def nonlinear_element(u, shape, params: MaterialParams, thickness, need_tangent=True):
    """Neo-Hookean element energy, force and tangent at unit modulus.

    ``u`` has shape (ne, 8), ``thickness`` (ne,). Raises
    :class:`ElementInversion` listing offending elements.
    """
    u = np.atleast_2d(u)
    ne = u.shape[0]
    W = np.zeros(ne)
    f = np.zeros((ne, 8))
    K = np.zeros((ne, 8, 8)) if need_tangent else None
    bad = np.zeros(ne, dtype=bool)
    kins = []
    for g in range(4):
        dN = shape.dN_gauss[g]
        F = _grad(u, dN) + np.eye(2)
        kin = kinematics(F)
        bad |= kin.J <= INVERSION_LIMIT
        kins.append((dN, F, kin))
    if bad.any():
        raise ElementInversion(np.flatnonzero(bad))
    for g, (dN, F, kin) in enumerate(kins):
        wt = shape.weights[g] * shape.detJ[g] * thickness
        S = pk2_from_C(kin.C, params)
        Sv = np.stack([S[:, 0, 0], S[:, 1, 1], S[:, 0, 1]], axis=-1)
        B = _b_matrix(F, dN)
        W += wt * energy_from_C(kin.C, params)
        f += wt[:, None] * np.einsum("eai,ea->ei", B, Sv)
        if need_tangent:
            D = tangent_from_C(kin.C, params)
            Km = np.einsum("eai,eab,ebj->eij", B, D, B)
            # geometric stiffness: delta_ik N_A,I S_IJ N_B,J
            gAB = np.einsum("ai,eij,bj->eab", dN, S, dN)
            Kg = np.zeros((ne, 8, 8))
            Kg[:, 0::2, 0::2] = gAB
            Kg[:, 1::2, 1::2] = gAB
            K += wt[:, None, None] * (Km + Kg)
    return W, f, K


def linear_element_stiffness(shape, params: MaterialParams) -> np.ndarray:
    """Small-strain stiffness of the reference element at unit modulus and thickness."""
    D = linear_tangent(params)
    K = np.zeros((8, 8))
    for g in range(4):
        B = _b_matrix(np.eye(2)[None], shape.dN_gauss[g])[0]
        K += shape.weights[g] * shape.detJ[g] * B.T @ D @ B
    return K


class ElementResponse(NamedTuple):
    energy: np.ndarray
    force: np.ndarray
    tangent: Optional[np.ndarray]
    dforce_dgamma: Optional[np.ndarray]
    unit_force: np.ndarray


def interpolated_element_energy(u, gamma, modulus, thickness, shape, params: MaterialParams,
                                KL: Optional[np.ndarray] = None, need_tangent=True,
                                need_dgamma=False) -> ElementResponse:
    """Energy-interpolated element response.

    ``W = E [W_nl(g u) - W_lin(g u) + W_lin(u)]``; force and tangent are its
    exact gradient and Hessian. ``unit_force`` is the force at unit modulus
    and ``dforce_dgamma`` its partial derivative w.r.t. ``g`` (unit modulus).
    """
    u = np.atleast_2d(u)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (u.shape[0],))
    modulus = np.broadcast_to(np.asarray(modulus, dtype=float), (u.shape[0],))
    thickness = np.broadcast_to(np.asarray(thickness, dtype=float), (u.shape[0],))
    if KL is None:
        KL = linear_element_stiffness(shape, params)
    v = gamma[:, None] * u
    Wn, fn, Kn = nonlinear_element(v, shape, params, thickness, need_tangent or need_dgamma)
    KLu = thickness[:, None] * (u @ KL)
    WLu = 0.5 * np.sum(u * KLu, axis=1)
    g2 = gamma ** 2
    unit_W = Wn + (1.0 - g2) * WLu
    unit_f = gamma[:, None] * fn + (1.0 - g2)[:, None] * KLu
    K = None
    if need_tangent:
        K = modulus[:, None, None] * (g2[:, None, None] * Kn
                                      + (1.0 - g2)[:, None, None] * thickness[:, None, None] * KL)
    dfdg = None
    if need_dgamma:
        dfdg = fn + gamma[:, None] * np.einsum("eij,ej->ei", Kn, u) - 2.0 * gamma[:, None] * KLu
    return ElementResponse(modulus * unit_W, modulus[:, None] * unit_f, K, dfdg, unit_f)
