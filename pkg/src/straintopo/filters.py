"""Density filter, smooth Heaviside projection and the robust design triple."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np
import scipy.sparse as sp

from .mesh import DESIGN, SOLID, TISSUE, Mesh, RegionMap

LAYERS = ("dilated", "intermediate", "eroded")
_ETA_SIGN = {"dilated": -1.0, "intermediate": 0.0, "eroded": 1.0}


class DegenerateDesignError(ValueError):
    pass


@dataclass(frozen=True)
class FilterKernel:
    """Normalized density filter restricted to design rows.

    ``H_design`` maps design variables to filtered design densities and
    ``offset`` carries the fixed contribution of passive neighbours.
    """

    r_min: float
    design: np.ndarray
    H_design: sp.csr_matrix
    offset: np.ndarray
    passive_values: np.ndarray
    H_full: sp.csr_matrix

    @property
    def n_design(self) -> int:
        return self.design.size


def passive_values(regions: RegionMap) -> np.ndarray:
    """Fixed densities of non-design elements (solid and tissue 1, void 0)."""
    vals = np.zeros(regions.role.size)
    vals[(regions.role == SOLID) | (regions.role == TISSUE)] = 1.0
    return vals


def build_filter(mesh: Mesh, regions: RegionMap, r_min: float) -> FilterKernel:
    """Linear-hat density filter ``w = r_min - dist`` weighted by element volume."""
    if r_min <= 0:
        raise ValueError("filter radius must be positive")
    s = mesh.spec
    nx, ny = s.nx, s.ny
    rx = int(np.ceil(r_min / s.hx))
    ry = int(np.ceil(r_min / s.hy))
    di, dj = np.meshgrid(np.arange(-rx, rx + 1), np.arange(-ry, ry + 1))
    di, dj = di.ravel(), dj.ravel()
    dist = np.hypot(di * s.hx, dj * s.hy)
    keep = dist < r_min
    di, dj, dist = di[keep], dj[keep], dist[keep]
    w = r_min - dist

    design = regions.design
    ix, iy = design % nx, design // nx
    jx = ix[:, None] + di[None, :]
    jy = iy[:, None] + dj[None, :]
    inside = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
    rows = np.broadcast_to(np.arange(design.size)[:, None], jx.shape)[inside]
    cols = (jy * nx + jx)[inside]
    vol = mesh.element_area * regions.thickness[cols]
    vals = np.broadcast_to(w[None, :], jx.shape)[inside] * vol
    H = sp.csr_matrix((vals, (rows, cols)), shape=(design.size, mesh.n_elements))
    H = sp.diags(1.0 / np.asarray(H.sum(axis=1)).ravel()) @ H
    H = H.tocsr()

    pv = passive_values(regions)
    is_design = regions.role == DESIGN
    H_dd = H[:, design].tocsr()
    offset = H[:, ~is_design] @ pv[~is_design]
    return FilterKernel(r_min, design, H_dd, np.asarray(offset).ravel(), pv, H)


def density_filter(rho: np.ndarray, kernel: FilterKernel) -> np.ndarray:
    """Filtered densities of the design elements."""
    return kernel.H_design @ np.asarray(rho, dtype=float) + kernel.offset


def heaviside_project(rho_tilde, beta: float, eta: float):
    """Smooth Heaviside projection and its derivative w.r.t. the filtered density."""
    rt = np.asarray(rho_tilde, dtype=float)
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    t = np.tanh(beta * (rt - eta))
    rb = (np.tanh(beta * eta) + t) / den
    # sech^2 written in exp form: 1 - tanh^2 cancels where tanh is close to +-1
    e = np.exp(-2.0 * np.abs(beta * (rt - eta)))
    drb = beta * 4.0 * e / (1.0 + e) ** 2 / den
    return rb, drb


@dataclass
class DesignField:
    """Raw, filtered and projected densities.

    ``bar[layer]`` holds the projected density of every element with passive
    overrides; ``dbar[layer]`` holds d(bar)/d(tilde) on design elements only.
    """

    rho: np.ndarray
    rho_tilde: np.ndarray
    bar: Dict[str, np.ndarray]
    dbar: Dict[str, np.ndarray]
    beta: float
    thresholds: Dict[str, float]


def layer_thresholds(delta_eta: float, eta: float = 0.5) -> Dict[str, float]:
    if not (0.0 < eta - delta_eta < eta + delta_eta < 1.0):
        raise ValueError(f"invalid robust offset delta_eta={delta_eta}")
    return {name: eta + _ETA_SIGN[name] * delta_eta for name in LAYERS}


def robust_fields(rho: np.ndarray, kernel: FilterKernel, beta: float,
                  delta_eta: float = 0.05) -> DesignField:
    rt = density_filter(rho, kernel)
    thresholds = layer_thresholds(delta_eta)
    bar, dbar = {}, {}
    for name, eta in thresholds.items():
        rb, drb = heaviside_project(rt, beta, eta)
        full = kernel.passive_values.copy()
        full[kernel.design] = rb
        bar[name] = full
        dbar[name] = drb
    return DesignField(np.asarray(rho, dtype=float), rt, bar, dbar, beta, thresholds)


def chain_rule_backprop(dL_dbar: np.ndarray, field: DesignField, layer: str,
                        kernel: FilterKernel) -> np.ndarray:
    """Map d(L)/d(bar) on design elements back to the design variables.

    ``dL_dbar`` may be given on design elements or on all elements; passive
    entries are discarded.
    """
    g = np.asarray(dL_dbar, dtype=float)
    if g.size != kernel.n_design:
        g = g[kernel.design]
    return kernel.H_design.T @ (field.dbar[layer] * g)


def volume_fraction(rho_bar: np.ndarray, design: np.ndarray) -> float:
    return float(np.mean(rho_bar[design]))


def volume_sensitivity(field: DesignField, kernel: FilterKernel, layer: str = "dilated") -> np.ndarray:
    g = np.full(kernel.n_design, 1.0 / kernel.n_design)
    return kernel.H_design.T @ (field.dbar[layer] * g)


def update_dilated_volume_bound(bar_d: np.ndarray, bar_i: np.ndarray, v_target: float,
                                design: np.ndarray) -> float:
    """Rescale the dilated volume bound so the intermediate design meets ``v_target``."""
    vi = volume_fraction(bar_i, design)
    if vi <= 0.0:
        raise DegenerateDesignError("intermediate design has zero volume")
    return v_target * volume_fraction(bar_d, design) / vi


def gray_indicator(rho_bar: np.ndarray) -> float:
    """Measure of non-discreteness in percent (0 for a 0/1 design)."""
    r = np.asarray(rho_bar, dtype=float)
    return float(np.sum(4.0 * r * (1.0 - r)) / r.size * 100.0)
