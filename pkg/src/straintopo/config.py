"""Run configuration: dataclasses plus a TOML loader with validation."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

try:  # Python >= 3.11
    import tomllib as _toml
except ImportError:  # pragma: no cover - exercised on 3.10
    import tomli as _toml

from .mesh import EDGES, ROLE_NAMES, ConfigurationError

PRESET_DIR = Path(__file__).parent / "presets"


@dataclass(frozen=True)
class GridConfig:
    nx: int
    ny: int
    lx: float
    ly: float
    thickness: float = 1.0
    symmetry: Optional[str] = None


@dataclass(frozen=True)
class MaterialConfig:
    E: float = 1.0
    nu: float = 0.45
    plane: str = "plane_strain"
    penal: float = 3.0
    void_ratio: float = 1e-6
    gamma_beta: float = 500.0
    gamma_eta: float = 0.01


@dataclass(frozen=True)
class RegionConfig:
    role: str
    x0: float
    x1: float
    y0: float
    y1: float
    modulus: Optional[float] = None
    thickness: Optional[float] = None
    window_inset_elements: Tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class VariantConfig:
    """One tissue construct: its own tissue box plus any variant-specific passive boxes."""

    name: str
    regions: Tuple[RegionConfig, ...]


@dataclass(frozen=True)
class BoundaryConfig:
    edge: str
    kind: str
    value: float = 0.0
    direction: str = "x"
    span: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class InputConfig:
    x: float
    y: float
    direction: str = "x"
    spring: float = 0.0
    force: float = 0.0


@dataclass(frozen=True)
class TargetConfig:
    exx: float = 0.0
    eyy: float = 0.0
    exy: float = 0.0
    weights: Tuple[float, float, float] = (1.0, 0.0, 0.0)


@dataclass(frozen=True)
class OptimizationConfig:
    volume_fraction: float = 0.25
    delta_eta: float = 0.05
    beta_init: float = 1.0
    beta_max: float = 32.0
    beta_period: int = 60
    filter_radius_elements: float = 5.6
    filter_radius: Optional[float] = None  # absolute length; overrides the element multiple
    move: float = 0.1
    max_iter: int = 400
    vd_refresh: int = 25
    seed: int = 0
    jitter: float = 0.0
    report_variant: int = 1


@dataclass(frozen=True)
class NewtonConfig:
    tol_rel: float = 1e-6
    tol_abs: float = 1e-10
    max_iter: int = 50
    max_cutbacks: int = 6
    max_backtracks: int = 6


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "runs/out"
    dump_every: int = 0
    threads: int = 1


@dataclass(frozen=True)
class RunConfig:
    name: str
    grid: GridConfig
    material: MaterialConfig
    regions: Tuple[RegionConfig, ...]
    variants: Tuple[VariantConfig, ...]
    boundary: Tuple[BoundaryConfig, ...]
    target: TargetConfig
    input: Optional[InputConfig] = None
    optimization: OptimizationConfig = OptimizationConfig()
    newton: NewtonConfig = NewtonConfig()
    output: OutputConfig = OutputConfig()

    def __post_init__(self):
        validate(self)

    @property
    def n_variants(self) -> int:
        return len(self.variants)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)

    @property
    def filter_length(self) -> float:
        """Filter radius in length units."""
        o, g = self.optimization, self.grid
        if o.filter_radius is not None:
            return o.filter_radius
        return o.filter_radius_elements * max(g.lx / g.nx, g.ly / g.ny)

    def scaled(self, factor: float) -> "RunConfig":
        """Same problem on a mesh refined (or coarsened) by ``factor`` in each direction.

        The filter radius keeps its physical length; window insets stay in elements.
        """
        if factor <= 0:
            raise ConfigurationError("mesh scale must be positive")
        nx = int(round(self.grid.nx * factor))
        ny = int(round(self.grid.ny * factor))
        if nx < 1 or ny < 1:
            raise ConfigurationError("mesh scale leaves no elements")
        opt = dataclasses.replace(self.optimization, filter_radius=self.filter_length)
        return self.replace(grid=dataclasses.replace(self.grid, nx=nx, ny=ny), optimization=opt)


def validate(cfg: RunConfig) -> None:
    g = cfg.grid
    if g.nx < 1 or g.ny < 1 or g.lx <= 0 or g.ly <= 0 or g.thickness <= 0:
        raise ConfigurationError("grid needs positive sizes")
    if g.symmetry is not None and g.symmetry not in EDGES:
        raise ConfigurationError(f"unknown symmetry edge {g.symmetry!r}")
    m = cfg.material
    if m.E <= 0 or not (0.0 <= m.nu < 0.5):
        raise ConfigurationError("material needs E > 0 and 0 <= nu < 0.5")
    if m.plane not in ("plane_strain", "plane_stress"):
        raise ConfigurationError("plane must be 'plane_strain' or 'plane_stress'")
    if not cfg.variants:
        raise ConfigurationError("at least one tissue variant is required")
    for v in cfg.variants:
        if sum(r.role == "tissue" for r in v.regions) < 1:
            raise ConfigurationError(f"variant {v.name!r} has no tissue box")
    for r in list(cfg.regions) + [r for v in cfg.variants for r in v.regions]:
        if r.role not in ROLE_NAMES:
            raise ConfigurationError(f"unknown region role {r.role!r}")
    for b in cfg.boundary:
        if b.edge not in EDGES:
            raise ConfigurationError(f"unknown boundary edge {b.edge!r}")
        if b.kind not in ("fixed", "fix_x", "fix_y", "prescribed"):
            raise ConfigurationError(f"unknown boundary kind {b.kind!r}")
    o = cfg.optimization
    if not (0.0 < o.volume_fraction < 1.0):
        raise ConfigurationError("volume fraction must lie in (0, 1)")
    if o.beta_period < 1 or o.vd_refresh < 1:
        raise ConfigurationError("schedule periods must be >= 1")
    if o.max_iter < 0:
        raise ConfigurationError("max_iter must be >= 0")
    if o.beta_init < 1 or o.beta_max < o.beta_init:
        raise ConfigurationError("beta schedule needs 1 <= beta_init <= beta_max")
    if o.filter_radius is not None and o.filter_radius <= 0:
        raise ConfigurationError("filter_radius must be positive")
    if o.move <= 0 or o.filter_radius_elements <= 0:
        raise ConfigurationError("move limit and filter radius must be positive")
    if not (1 <= o.report_variant <= len(cfg.variants)):
        raise ConfigurationError("report_variant out of range")
    t = cfg.target
    if min(t.weights) < 0 or sum(w * v * v for w, v in zip(t.weights, (t.exx, t.eyy, t.exy))) <= 0:
        raise ConfigurationError("target needs non-negative weights and a non-zero weighted norm")
    if cfg.output.threads < 1 or cfg.output.dump_every < 0:
        raise ConfigurationError("threads must be >= 1 and dump_every >= 0")


# ---------------------------------------------------------------------------
# Loading


def _build(cls, data: Dict[str, Any], where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"[{where}] must be a table")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"unknown keys in [{where}]: {sorted(unknown)}")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(v) if isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"[{where}]: {exc}") from exc


def from_dict(data: Dict[str, Any]) -> RunConfig:
    data = {k: v for k, v in copy.deepcopy(data).items() if v is not None}
    known = {"name", "grid", "material", "regions", "variants", "boundary", "target", "input",
             "optimization", "newton", "output"}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown top-level keys: {sorted(unknown)}")
    for key in ("grid", "variants", "target"):
        if key not in data:
            raise ConfigurationError(f"missing section [{key}]")
    variants = []
    for i, v in enumerate(data["variants"]):
        regs = tuple(_build(RegionConfig, r, f"variants.{i}.regions") for r in v.get("regions", []))
        variants.append(VariantConfig(v.get("name", f"BT{i + 1}"), regs))
    return RunConfig(
        name=data.get("name", "run"),
        grid=_build(GridConfig, data["grid"], "grid"),
        material=_build(MaterialConfig, data.get("material", {}), "material"),
        regions=tuple(_build(RegionConfig, r, "regions") for r in data.get("regions", [])),
        variants=tuple(variants),
        boundary=tuple(_build(BoundaryConfig, b, "boundary") for b in data.get("boundary", [])),
        target=_build(TargetConfig, data["target"], "target"),
        input=_build(InputConfig, data["input"], "input") if "input" in data else None,
        optimization=_build(OptimizationConfig, data.get("optimization", {}), "optimization"),
        newton=_build(NewtonConfig, data.get("newton", {}), "newton"),
        output=_build(OutputConfig, data.get("output", {}), "output"),
    )


def load_config(path) -> RunConfig:
    """Load a TOML run configuration; a bare preset name is looked up in the shipped presets."""
    p = Path(path)
    if not p.exists() and (PRESET_DIR / f"{path}.toml").exists():
        p = PRESET_DIR / f"{path}.toml"
    try:
        with open(p, "rb") as fh:
            data = _toml.load(fh)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except _toml.TOMLDecodeError as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    return from_dict(data)


def list_presets() -> List[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.toml"))
