"""Robust min/max optimization loop over projection layers and tissue variants."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig
from .fea import (Assembler, DesignLayer, NewtonControls, NonConvergenceError, SystemState,
                  make_layer, newton_solve)
from .filters import (LAYERS, DesignField, FilterKernel, build_filter, chain_rule_backprop,
                      gray_indicator, robust_fields, update_dilated_volume_bound, volume_fraction,
                      volume_sensitivity)
from .material import ElementInversion, GammaParams, MaterialParams, SimpParams
from .mesh import (BoundarySpec, ConfigurationError, DofMap, InputSpec, Mesh, RegionBox, RegionMap,
                   GridSpec, apply_boundary_conditions, build_grid, tag_regions)
from .mma import MinMaxProblem, MmaState, kkt_report, mma_update
from .objective import CaseResult, StrainTarget, evaluate_case

log = logging.getLogger(__name__)

LAYER_TAGS = {"dilated": "d", "intermediate": "i", "eroded": "e"}


class SolverFailure(RuntimeError):
    """Unrecoverable equilibrium failure; carries the partial run."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# ---------------------------------------------------------------------------
# Problem setup


@dataclass
class Variant:
    """One tissue construct sharing the design field with all other variants."""

    name: str
    regions: RegionMap
    dofs: DofMap
    assembler: Assembler
    window: np.ndarray


@dataclass
class LoadCase:
    layer: str
    variant: int
    label: str
    state: Optional[SystemState] = None


def _boxes(cfg: RunConfig, regions, mesh: Mesh, tissue_index: int) -> List[RegionBox]:
    out = []
    for r in regions:
        inset = (r.window_inset_elements[0] * mesh.spec.hx, r.window_inset_elements[1] * mesh.spec.hy)
        out.append(RegionBox(r.role, r.x0, r.x1, r.y0, r.y1,
                             tissue=tissue_index if r.role == "tissue" else 0,
                             window_inset=inset, modulus=r.modulus, thickness=r.thickness))
    return out


def material_params(cfg: RunConfig) -> MaterialParams:
    return MaterialParams(E=1.0, nu=cfg.material.nu, plane_mode=cfg.material.plane)


def build_mesh(cfg: RunConfig) -> Mesh:
    g = cfg.grid
    return build_grid(GridSpec(g.nx, g.ny, g.lx, g.ly, g.thickness), symmetry=g.symmetry)


def build_variants(cfg: RunConfig, mesh: Mesh, backend: str = "auto") -> List[Variant]:
    """One region map, DOF map and assembler per tissue variant."""
    bcs = [BoundarySpec(b.edge, b.kind, b.value, b.direction, b.span) for b in cfg.boundary]
    inp = None
    if cfg.input is not None:
        i = cfg.input
        inp = InputSpec(i.x, i.y, i.direction, i.spring, i.force)
    params = material_params(cfg)
    out = []
    design_ref = None
    for v in cfg.variants:
        boxes = _boxes(cfg, cfg.regions, mesh, 0) + _boxes(cfg, v.regions, mesh, 1)
        regions = tag_regions(mesh, boxes, modulus=cfg.material.E)
        if design_ref is None:
            design_ref = regions.design
        elif not np.array_equal(design_ref, regions.design):
            raise ConfigurationError(f"variant {v.name!r} changes the design region")
        dofs = apply_boundary_conditions(mesh, bcs, inp)
        asm = Assembler(mesh, regions, dofs, params)
        out.append(Variant(v.name, regions, dofs, asm, regions.window_elements(1)))
    return out


def build_variant_problems(cfg: RunConfig) -> List[LoadCase]:
    """The 3 x N_BT load cases, ordered dilated, intermediate, eroded and by variant within each."""
    if cfg.n_variants < 1:
        raise ConfigurationError("at least one tissue variant is required")
    return [LoadCase(layer, k, f"{LAYER_TAGS[layer]}{k + 1}")
            for layer in LAYERS for k in range(cfg.n_variants)]


def beta_at(it: int, cfg: RunConfig) -> float:
    o = cfg.optimization
    return float(min(o.beta_max, o.beta_init * 2.0 ** (it // o.beta_period)))


@dataclass
class Evaluation:
    """All load-case responses for one design."""

    field: DesignField
    f: np.ndarray                      # (3, N_BT)
    grads: Optional[np.ndarray]        # (3, N_BT, n_design) w.r.t. rho
    results: Dict[str, CaseResult]
    newton_iters: int


class RobustProblem:
    """Filter, projection and equilibrium for every (layer, variant) pair."""

    def __init__(self, cfg: RunConfig, backend: str = "auto"):
        self.cfg = cfg
        self.mesh = build_mesh(cfg)
        self.variants = build_variants(cfg, self.mesh, backend)
        self.cases = build_variant_problems(cfg)
        self.kernel: FilterKernel = build_filter(self.mesh, self.variants[0].regions, cfg.filter_length)
        if self.kernel.n_design == 0:
            raise ConfigurationError("the configuration has no design elements")
        m = cfg.material
        self.simp = SimpParams(p=m.penal, E_s=m.E, void_ratio=m.void_ratio)
        self.gamma_params = GammaParams(beta1=m.gamma_beta, eta0=m.gamma_eta)
        t = cfg.target
        self.target = StrainTarget(t.exx, t.eyy, t.exy, *t.weights)
        n = cfg.newton
        self.controls = NewtonControls(n.tol_rel, n.tol_abs, n.max_iter, n.max_cutbacks, n.max_backtracks)

    @property
    def n_design(self) -> int:
        return self.kernel.n_design

    def initial_design(self) -> np.ndarray:
        o = self.cfg.optimization
        rho = np.full(self.n_design, o.volume_fraction)
        if o.jitter > 0:
            rng = np.random.default_rng(o.seed)
            rho = np.clip(rho + o.jitter * rng.uniform(-1, 1, rho.size), 0.0, 1.0)
        return rho

    def fields(self, rho: np.ndarray, beta: float) -> DesignField:
        return robust_fields(rho, self.kernel, beta, self.cfg.optimization.delta_eta)

    def layer(self, field: DesignField, layer: str, variant: int) -> DesignLayer:
        return make_layer(field.bar[layer], self.variants[variant].regions, self.simp, self.gamma_params)

    def solve_case(self, case: LoadCase, field: DesignField, gradient: bool = True,
                   warm: bool = True, include_gamma_path: bool = True) -> CaseResult:
        var = self.variants[case.variant]
        lay = self.layer(field, case.layer, case.variant)
        u0 = case.state.u if (warm and case.state is not None) else None
        try:
            state = newton_solve(var.assembler, lay, self.controls, u0)
        except (NonConvergenceError, ElementInversion) as exc:
            raise SolverFailure(f"load case {case.label}: {exc}") from exc
        case.state = state
        return evaluate_case(var.assembler, lay, state, var.window, self.target, gradient,
                             include_gamma_path)

    def evaluate(self, rho: np.ndarray, beta: float, gradient: bool = True, warm: bool = True,
                 include_gamma_path: bool = True, threads: int = 1) -> Evaluation:
        field = self.fields(rho, beta)
        nv = self.cfg.n_variants

        def run(case):
            return self.solve_case(case, field, gradient, warm, include_gamma_path)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                res = list(pool.map(run, self.cases))
        else:
            res = [run(c) for c in self.cases]
        f = np.zeros((3, nv))
        grads = np.zeros((3, nv, self.n_design)) if gradient else None
        results = {}
        its = 0
        for case, r in zip(self.cases, res):
            li = LAYERS.index(case.layer)
            f[li, case.variant] = r.f
            if gradient:
                grads[li, case.variant] = chain_rule_backprop(r.dfdbar, field, case.layer, self.kernel)
            results[case.label] = r
            its += r.state.iterations
        return Evaluation(field, f, grads, results, its)


# ---------------------------------------------------------------------------
# Trace


@dataclass
class TraceRecord:
    iter: int
    f: np.ndarray
    worst: str
    vf: Dict[str, float]
    vd_star: float
    beta: float
    mnd: float
    errors: Dict[str, float]
    newton_iters: int
    wall_ms: float
    kkt: float = float("nan")
    converged_cases: int = 0


@dataclass
class OptimizationTrace:
    labels: List[str]
    records: List[TraceRecord] = field(default_factory=list)

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.iter <= self.records[-1].iter:
            raise ValueError("trace iterations must increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def columns(self) -> List[str]:
        return (["iter"] + [f"f_{lab}" for lab in self.labels]
                + ["worst", "Vf_d", "Vf_i", "Vf_e", "Vd_star", "beta", "Mnd", "Err_x", "Err_y",
                   "Err_xy", "newton_iters", "wall_ms"])

    def rows(self, include_timing: bool = True) -> List[List[str]]:
        out = []
        for r in self.records:
            row = [str(r.iter)] + [repr(float(v)) for v in r.f.ravel()]
            row += [r.worst] + [repr(r.vf[k]) for k in LAYERS]
            row += [repr(r.vd_star), repr(r.beta), repr(r.mnd)]
            row += [repr(r.errors[k]) for k in ("Err_x", "Err_y", "Err_xy")]
            row += [str(r.newton_iters), f"{r.wall_ms:.1f}" if include_timing else "0"]
            out.append(row)
        return out


@dataclass
class RunResult:
    config: RunConfig
    problem: RobustProblem
    rho: np.ndarray
    field: DesignField
    trace: OptimizationTrace
    final: Optional[Evaluation]
    completed: bool = True
    message: str = ""


# ---------------------------------------------------------------------------
# Loop


def _worst_label(f: np.ndarray, cases: Sequence[LoadCase]) -> str:
    i = int(np.argmax(f.ravel()))
    return cases[i].label


def run_optimization(cfg: RunConfig, callback: Optional[Callable[[int, RunResult], None]] = None,
                     threads: Optional[int] = None) -> RunResult:
    """Run the robust min/max optimization described by ``cfg``.

    ``callback(it, partial_result)`` is invoked after each completed
    iteration (used for periodic dumps). A Newton failure raises
    :class:`SolverFailure` whose ``result`` holds the partial run.
    """
    prob = RobustProblem(cfg)
    o = cfg.optimization
    threads = threads or cfg.output.threads
    rho = prob.initial_design()
    trace = OptimizationTrace([c.label for c in prob.cases])
    mma = MmaState(prob.n_design, move=o.move)
    design = np.arange(prob.n_design)
    vd_star = o.volume_fraction
    scale = None
    result = RunResult(cfg, prob, rho, prob.fields(rho, beta_at(0, cfg)), trace, None)
    rv = o.report_variant - 1

    for it in range(o.max_iter):
        t0 = time.perf_counter()
        beta = beta_at(it, cfg)
        try:
            ev = prob.evaluate(rho, beta, threads=threads)
        except SolverFailure as exc:
            result.completed, result.message = False, str(exc)
            exc.result = result
            raise
        fld = ev.field
        bars = {k: fld.bar[k][prob.kernel.design] for k in LAYERS}
        if it % o.vd_refresh == 0:
            vd_star = update_dilated_volume_bound(bars["dilated"], bars["intermediate"],
                                                  o.volume_fraction, design)
        if scale is None:
            scale = 1.0 / max(float(np.max(np.abs(ev.f))), 1e-30)
        vf = {k: volume_fraction(bars[k], design) for k in LAYERS}
        g = np.array([vf["dilated"] / vd_star - 1.0])
        dg = volume_sensitivity(fld, prob.kernel, "dilated")[None, :] / vd_star
        problem = MinMaxProblem(rho, scale * ev.f.ravel(), scale * ev.grads.reshape(-1, prob.n_design), g, dg)
        rho_new = mma_update(problem, mma)
        kkt = kkt_report(problem, mma).measure

        errors = ev.results[f"i{rv + 1}"].errors
        rec = TraceRecord(it, ev.f.copy(), _worst_label(ev.f, prob.cases), vf, vd_star, beta,
                          gray_indicator(bars["intermediate"]), errors, ev.newton_iters,
                          (time.perf_counter() - t0) * 1e3, kkt,
                          sum(r.state.converged for r in ev.results.values()))
        trace.append(rec)
        log.info("it %d beta %g worst %s f %.4e Vf_i %.4f Err_x %.2f Mnd %.2f", it, beta, rec.worst,
                 float(ev.f.max()), vf["intermediate"], errors["Err_x"], rec.mnd)
        rho = rho_new
        result.rho, result.field = rho, fld
        if callback is not None:
            callback(it, result)

    beta = beta_at(max(o.max_iter - 1, 0), cfg)
    try:
        final = prob.evaluate(rho, beta, gradient=False, threads=threads)
    except SolverFailure as exc:
        result.completed, result.message = False, str(exc)
        exc.result = result
        raise
    result.rho, result.field, result.final = rho, final.field, final
    return result


def final_metrics(result: RunResult) -> Dict[str, float]:
    """Errors, gray indicator and volume of the final intermediate design."""
    prob = result.problem
    rv = result.config.optimization.report_variant
    bars = result.field.bar["intermediate"][prob.kernel.design]
    out = {"Mnd": gray_indicator(bars), "Vf_i": volume_fraction(bars, np.arange(bars.size))}
    if result.final is not None:
        r = result.final.results[f"i{rv}"]
        out.update(r.errors)
        out["mean_exx"] = float(np.mean(r.samples[:, 0]))
        out["mean_eyy"] = float(np.mean(r.samples[:, 1]))
        out["mean_exy"] = float(np.mean(r.samples[:, 2]))
        out["f_worst"] = float(result.final.f.max())
    return out
