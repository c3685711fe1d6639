"""Structured bilinear-quad meshes, region tagging and boundary conditions.

Element ``e`` at grid position ``(ix, iy)`` has index ``iy * nx + ix`` so an
element field reshaped to ``(ny, nx)`` reads like an image with row 0 at
the bottom. Node ``(jx, jy)`` has index ``jy * (nx + 1) + jx`` and owns the
DOFs ``2n`` (x) and ``2n + 1`` (y). Units are mm, N and MPa throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DESIGN, SOLID, VOID, TISSUE = 0, 1, 2, 3
ROLE_NAMES = {"design": DESIGN, "solid": SOLID, "void": VOID, "tissue": TISSUE}
EDGES = ("left", "right", "bottom", "top")

_GAUSS = 1.0 / np.sqrt(3.0)
_ALIGN_TOL = 1e-6


class ConfigurationError(ValueError):
    """Raised for inconsistent geometry, region or boundary-condition input."""


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    lx: float
    ly: float
    thickness: float = 1.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigurationError(f"element counts must be >= 1, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0 and self.thickness > 0):
            raise ConfigurationError("lx, ly and thickness must be positive")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny


@dataclass(frozen=True)
class ShapeData:
    """Shape-function gradients of the (uniform) rectangular element.

    ``dN_gauss`` has shape (4 points, 4 nodes, 2) and ``dN_center`` (4, 2).
    Every element of a structured grid shares these arrays.
    """

    N_gauss: np.ndarray
    dN_gauss: np.ndarray
    weights: np.ndarray
    detJ: np.ndarray
    N_center: np.ndarray
    dN_center: np.ndarray


def _bilinear(xi: float, eta: float):
    N = 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                         (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
    dN = 0.25 * np.array([[-(1 - eta), -(1 - xi)],
                          [(1 - eta), -(1 + xi)],
                          [(1 + eta), (1 + xi)],
                          [-(1 + eta), (1 - xi)]])
    return N, dN


def _shape_data(hx: float, hy: float) -> ShapeData:
    # Affine map of a rectangle: dX/dxi = hx/2, dY/deta = hy/2.
    jac_inv = np.array([2.0 / hx, 2.0 / hy])
    pts = [(-_GAUSS, -_GAUSS), (_GAUSS, -_GAUSS), (_GAUSS, _GAUSS), (-_GAUSS, _GAUSS)]
    Ns, dNs = [], []
    for xi, eta in pts:
        N, dN = _bilinear(xi, eta)
        Ns.append(N)
        dNs.append(dN * jac_inv)
    N0, dN0 = _bilinear(0.0, 0.0)
    detJ = 0.25 * hx * hy
    return ShapeData(
        N_gauss=np.array(Ns),
        dN_gauss=np.array(dNs),
        weights=np.ones(4),
        detJ=np.full(4, detJ),
        N_center=N0,
        dN_center=dN0 * jac_inv,
    )


@dataclass(frozen=True)
class Mesh:
    spec: GridSpec
    nodes: np.ndarray
    elements: np.ndarray
    edofs: np.ndarray
    centers: np.ndarray
    shape: ShapeData
    symmetry: Optional[str] = None

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_dofs(self) -> int:
        return 2 * self.n_nodes

    @property
    def element_area(self) -> float:
        return float(np.sum(self.shape.weights * self.shape.detJ))

    def element_areas(self) -> np.ndarray:
        return np.full(self.n_elements, self.element_area)

    def edge_nodes(self, edge: str, span: Optional[Sequence[float]] = None) -> np.ndarray:
        """Node ids on a domain edge, optionally restricted to a coordinate span."""
        s = self.spec
        tol = 1e-9 * max(s.lx, s.ly)
        X, Y = self.nodes[:, 0], self.nodes[:, 1]
        if edge == "left":
            on, along = np.abs(X) < tol, Y
        elif edge == "right":
            on, along = np.abs(X - s.lx) < tol, Y
        elif edge == "bottom":
            on, along = np.abs(Y) < tol, X
        elif edge == "top":
            on, along = np.abs(Y - s.ly) < tol, X
        else:
            raise ConfigurationError(f"unknown edge {edge!r}; expected one of {EDGES}")
        if span is not None:
            lo, hi = span
            on &= (along >= lo - tol) & (along <= hi + tol)
        ids = np.flatnonzero(on)
        if ids.size == 0:
            raise ConfigurationError(f"no nodes on edge {edge!r} within span {span}")
        return ids

    def nearest_node(self, x: float, y: float) -> int:
        d = np.hypot(self.nodes[:, 0] - x, self.nodes[:, 1] - y)
        return int(np.argmin(d))


def build_grid(spec: GridSpec, symmetry: Optional[str] = None) -> Mesh:
    """Build a regular ``nx`` x ``ny`` grid of bilinear quads on [0, lx] x [0, ly].

    ``symmetry`` names the edge that lies on a symmetry line of the full
    problem (``None`` for a full model).
    """
    if symmetry is not None and symmetry not in EDGES:
        raise ConfigurationError(f"unknown symmetry edge {symmetry!r}")
    nx, ny = spec.nx, spec.ny
    xs = np.linspace(0.0, spec.lx, nx + 1)
    ys = np.linspace(0.0, spec.ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    n0 = (iy * (nx + 1) + ix).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    edofs = np.empty((elements.shape[0], 8), dtype=np.int64)
    edofs[:, 0::2] = 2 * elements
    edofs[:, 1::2] = 2 * elements + 1
    centers = nodes[elements].mean(axis=1)
    return Mesh(spec, nodes, elements, edofs, centers, _shape_data(spec.hx, spec.hy), symmetry)


# ---------------------------------------------------------------------------
# Regions


@dataclass(frozen=True)
class RegionBox:
    """Axis-aligned box ``[x0, x1] x [y0, y1]`` carrying a role.

    ``window_inset`` is the (dx, dy) inset that turns a tissue box into its
    objective window. ``modulus`` and ``thickness`` override the defaults
    for elements inside the box.
    """

    role: str
    x0: float
    x1: float
    y0: float
    y1: float
    tissue: int = 0
    window_inset: tuple = (0.0, 0.0)
    modulus: Optional[float] = None
    thickness: Optional[float] = None

    def __post_init__(self):
        if self.role not in ROLE_NAMES:
            raise ConfigurationError(f"unknown region role {self.role!r}")
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ConfigurationError(f"degenerate region box {self}")
        if self.role == "tissue" and self.tissue < 1:
            raise ConfigurationError("tissue boxes need a tissue index >= 1")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        return ((pts[:, 0] > self.x0) & (pts[:, 0] < self.x1)
                & (pts[:, 1] > self.y0) & (pts[:, 1] < self.y1))


@dataclass(frozen=True)
class RegionMap:
    role: np.ndarray
    tissue: np.ndarray
    window: np.ndarray
    modulus: np.ndarray
    thickness: np.ndarray

    @property
    def design(self) -> np.ndarray:
        return np.flatnonzero(self.role == DESIGN)

    @property
    def n_tissues(self) -> int:
        return int(self.tissue.max(initial=0))

    def tissue_elements(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.tissue == k)

    def window_elements(self, k: int = 1) -> np.ndarray:
        return np.flatnonzero(self.window & (self.tissue == k))


def _check_aligned(value: float, h: float, what: str):
    q = value / h
    if abs(q - round(q)) > _ALIGN_TOL:
        raise ConfigurationError(f"{what}={value} does not align with element size {h}")


def tag_regions(mesh: Mesh, boxes: Sequence[RegionBox], modulus: float = 1.0) -> RegionMap:
    """Assign element roles by centroid containment.

    Elements outside every box are design elements. The objective window of
    a tissue box is the box inset by ``window_inset`` on each side that does
    not lie on the mesh's symmetry edge.
    """
    s = mesh.spec
    tol = 1e-9 * max(s.lx, s.ly)
    n = mesh.n_elements
    role = np.full(n, DESIGN, dtype=np.int8)
    tissue = np.zeros(n, dtype=np.int16)
    window = np.zeros(n, dtype=bool)
    emod = np.full(n, float(modulus))
    thick = np.full(n, s.thickness)
    claimed = np.full(n, -1, dtype=np.int64)

    for b_id, b in enumerate(boxes):
        if b.x0 < -tol or b.y0 < -tol or b.x1 > s.lx + tol or b.y1 > s.ly + tol:
            raise ConfigurationError(f"region box {b} lies outside the domain")
        for v, h, name in ((b.x0, s.hx, "x0"), (b.x1, s.hx, "x1"), (b.y0, s.hy, "y0"), (b.y1, s.hy, "y1")):
            _check_aligned(v, h, name)
        inside = b.contains(mesh.centers)
        if not inside.any():
            raise ConfigurationError(f"region box {b} contains no elements")
        code = ROLE_NAMES[b.role]
        clash = inside & (claimed >= 0)
        if clash.any():
            prev = boxes[claimed[np.flatnonzero(clash)[0]]]
            if (prev.role, prev.tissue) != (b.role, b.tissue):
                raise ConfigurationError(f"region boxes overlap with conflicting roles: {prev} / {b}")
        claimed[inside] = b_id
        role[inside] = code
        tissue[inside] = b.tissue if code == TISSUE else 0
        if b.modulus is not None:
            emod[inside] = b.modulus
        if b.thickness is not None:
            thick[inside] = b.thickness
        if code == TISSUE:
            dx, dy = b.window_inset
            lo_x = b.x0 + (0 if _on_symmetry(mesh, "left", b.x0) else dx)
            hi_x = b.x1 - (0 if _on_symmetry(mesh, "right", b.x1) else dx)
            lo_y = b.y0 + (0 if _on_symmetry(mesh, "bottom", b.y0) else dy)
            hi_y = b.y1 - (0 if _on_symmetry(mesh, "top", b.y1) else dy)
            if not (hi_x > lo_x and hi_y > lo_y):
                raise ConfigurationError(f"window inset {b.window_inset} empties tissue box {b}")
            c = mesh.centers
            window |= inside & (c[:, 0] > lo_x) & (c[:, 0] < hi_x) & (c[:, 1] > lo_y) & (c[:, 1] < hi_y)

    rmap = RegionMap(role, tissue, window, emod, thick)
    for k in range(1, rmap.n_tissues + 1):
        if rmap.window_elements(k).size == 0:
            raise ConfigurationError(f"tissue {k} has an empty objective window")
    return rmap


def _on_symmetry(mesh: Mesh, side: str, coord: float) -> bool:
    if mesh.symmetry != side:
        return False
    s = mesh.spec
    target = {"left": 0.0, "bottom": 0.0, "right": s.lx, "top": s.ly}[side]
    return abs(coord - target) < 1e-9 * max(s.lx, s.ly)


# ---------------------------------------------------------------------------
# Boundary conditions


@dataclass(frozen=True)
class BoundarySpec:
    """One boundary condition on a domain edge.

    ``kind`` is ``"fixed"`` (both components), ``"fix_x"``, ``"fix_y"`` or
    ``"prescribed"`` (``value`` along ``direction``). ``span`` limits the
    condition to part of the edge.
    """

    edge: str
    kind: str
    value: float = 0.0
    direction: str = "x"
    span: Optional[tuple] = None


@dataclass(frozen=True)
class InputSpec:
    """Input port: a point force and grounded spring on one node DOF."""

    x: float
    y: float
    direction: str = "x"
    spring: float = 0.0
    force: float = 0.0


@dataclass(frozen=True)
class DofMap:
    n_dofs: int
    fixed: np.ndarray
    prescribed: np.ndarray
    prescribed_values: np.ndarray
    input_dof: int = -1
    spring: float = 0.0
    force: float = 0.0
    free: np.ndarray = field(default=None)

    @property
    def constrained(self) -> np.ndarray:
        return np.concatenate([self.fixed, self.prescribed])

    def external_force(self) -> np.ndarray:
        f = np.zeros(self.n_dofs)
        if self.input_dof >= 0:
            f[self.input_dof] = self.force
        return f

    def prescribed_vector(self) -> np.ndarray:
        u = np.zeros(self.n_dofs)
        u[self.prescribed] = self.prescribed_values
        return u


_DIR = {"x": 0, "y": 1}


def apply_boundary_conditions(mesh: Mesh, bcs: Sequence[BoundarySpec],
                              inp: Optional[InputSpec] = None,
                              symmetric_load_factor: Optional[float] = None) -> DofMap:
    """Build the DOF map.

    A symmetry edge on the mesh automatically receives a roller that blocks
    the normal component. The input spring and force are scaled by
    ``symmetric_load_factor`` (defaults to 0.5 when the input node sits on
    the symmetry line, 1 otherwise) so a half model carries half the port.
    """
    n = mesh.n_dofs
    kind_of = {}
    values = {}

    def mark(dof: int, k: str, v: float = 0.0):
        prev = kind_of.get(dof)
        if prev == "prescribed" and k == "fixed":
            return
        if prev == "prescribed" and k == "prescribed" and values[dof] != v:
            raise ConfigurationError(f"DOF {dof} prescribed twice with different values")
        kind_of[dof] = k
        if k == "prescribed":
            values[dof] = v

    all_bcs = list(bcs)
    if mesh.symmetry is not None:
        normal = "fix_x" if mesh.symmetry in ("left", "right") else "fix_y"
        all_bcs.append(BoundarySpec(edge=mesh.symmetry, kind=normal))

    for bc in all_bcs:
        if bc.edge not in EDGES:
            raise ConfigurationError(f"boundary condition on nonexistent edge {bc.edge!r}")
        nodes = mesh.edge_nodes(bc.edge, bc.span)
        if bc.kind == "fixed":
            for nd in nodes:
                mark(2 * nd, "fixed")
                mark(2 * nd + 1, "fixed")
        elif bc.kind in ("fix_x", "fix_y"):
            c = _DIR[bc.kind[-1]]
            for nd in nodes:
                mark(2 * nd + c, "fixed")
        elif bc.kind == "prescribed":
            c = _DIR[bc.direction]
            for nd in nodes:
                mark(2 * nd + c, "prescribed", float(bc.value))
        else:
            raise ConfigurationError(f"unknown boundary condition kind {bc.kind!r}")

    fixed = np.array(sorted(d for d, k in kind_of.items() if k == "fixed"), dtype=np.int64)
    pres = np.array(sorted(d for d, k in kind_of.items() if k == "prescribed"), dtype=np.int64)
    pvals = np.array([values[d] for d in pres], dtype=float)
    if fixed.size + pres.size == 0:
        raise ConfigurationError("no constrained DOFs: rigid-body modes are unrestrained")

    input_dof, spring, force = -1, 0.0, 0.0
    if inp is not None:
        if inp.spring < 0:
            raise ConfigurationError("spring stiffness must be non-negative")
        node = mesh.nearest_node(inp.x, inp.y)
        input_dof = 2 * node + _DIR[inp.direction]
        if input_dof in kind_of:
            raise ConfigurationError("input DOF is constrained")
        factor = symmetric_load_factor
        if factor is None:
            factor = 0.5 if _node_on_symmetry(mesh, node) else 1.0
        spring, force = inp.spring * factor, inp.force * factor

    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    mask[pres] = False
    return DofMap(n, fixed, pres, pvals, input_dof, spring, force, np.flatnonzero(mask))


def _node_on_symmetry(mesh: Mesh, node: int) -> bool:
    if mesh.symmetry is None:
        return False
    x, y = mesh.nodes[node]
    return _on_symmetry(mesh, mesh.symmetry, x if mesh.symmetry in ("left", "right") else y)


# ---------------------------------------------------------------------------
# Symmetry transfer


def mirror_half_to_full(field_half: np.ndarray, nx: int, ny: int, symmetry: str) -> np.ndarray:
    """Reflect an element field of the half mesh across its symmetry edge.

    Returns the full-domain field in the same element ordering convention
    (row-major, bottom row first).
    """
    img = np.asarray(field_half).reshape(ny, nx)
    if symmetry == "top":
        full = np.vstack([img, img[::-1]])
    elif symmetry == "bottom":
        full = np.vstack([img[::-1], img])
    elif symmetry == "right":
        full = np.hstack([img, img[:, ::-1]])
    elif symmetry == "left":
        full = np.hstack([img[:, ::-1], img])
    else:
        raise ConfigurationError(f"unknown symmetry edge {symmetry!r}")
    return full.ravel()


def restrict_full_to_half(field_full: np.ndarray, nx: int, ny: int, symmetry: str) -> np.ndarray:
    """Inverse of :func:`mirror_half_to_full` on symmetric fields; ``nx, ny`` are half-mesh counts."""
    if symmetry in ("top", "bottom"):
        img = np.asarray(field_full).reshape(2 * ny, nx)
        half = img[:ny] if symmetry == "top" else img[ny:]
    elif symmetry in ("left", "right"):
        img = np.asarray(field_full).reshape(ny, 2 * nx)
        half = img[:, :nx] if symmetry == "right" else img[:, nx:]
    else:
        raise ConfigurationError(f"unknown symmetry edge {symmetry!r}")
    return half.ravel()
