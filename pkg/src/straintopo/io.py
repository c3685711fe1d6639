"""Run artifacts: density maps, strain fields, VTK meshes, trace and manifest."""

from __future__ import annotations

import csv
import json
import platform
import subprocess
import tempfile
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np

from . import __version__
from .config import RunConfig, from_dict
from .filters import LAYERS, gray_indicator
from .mesh import ROLE_NAMES, Mesh
from .objective import rms_errors

VTK_QUAD = 9


class OutputError(OSError):
    pass


def preflight(out_dir) -> Path:
    """Create ``out_dir`` and prove it is writable before any expensive work."""
    p = Path(out_dir)
    try:
        p.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=p, prefix=".probe", delete=True) as fh:
            fh.write(b"ok")
    except OSError as exc:
        raise OutputError(f"output directory {p} is not writable: {exc}") from exc
    return p


# ---------------------------------------------------------------------------
# Field writers


def write_pgm(path, values: np.ndarray, nx: int, ny: int) -> None:
    """Binary greyscale image, solid black; first row is the top of the domain."""
    img = np.clip(np.asarray(values, dtype=float).reshape(ny, nx), 0.0, 1.0)
    pix = np.round(255.0 * (1.0 - img[::-1])).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{nx} {ny}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm` (densities, bottom row first)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM file")
    nx, ny, maxval = (int(t) for t in tokens[1:])
    # exactly one whitespace byte separates the header from the raster
    pix = np.frombuffer(data[pos + 1: pos + 1 + nx * ny], dtype=np.uint8).reshape(ny, nx)
    return (1.0 - pix[::-1].astype(float) / maxval).ravel()


def write_density_csv(path, mesh: Mesh, rho: np.ndarray, role: Optional[np.ndarray] = None) -> None:
    names = {v: k for k, v in ROLE_NAMES.items()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "x", "y", "role", "rho"])
        for e in range(mesh.n_elements):
            r = names[int(role[e])] if role is not None else ""
            w.writerow([e, f"{mesh.centers[e, 0]:.6g}", f"{mesh.centers[e, 1]:.6g}", r, repr(float(rho[e]))])


def write_strain_csv(path, mesh: Mesh, strains: np.ndarray, window: Optional[np.ndarray] = None) -> None:
    """Element-centre Green-Lagrange strains (engineering shear)."""
    in_window = np.zeros(mesh.n_elements, dtype=bool)
    if window is not None:
        in_window[window] = True
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "x", "y", "exx", "eyy", "exy", "window"])
        for e in range(mesh.n_elements):
            w.writerow([e, f"{mesh.centers[e, 0]:.6g}", f"{mesh.centers[e, 1]:.6g}",
                        repr(float(strains[e, 0])), repr(float(strains[e, 1])),
                        repr(float(strains[e, 2])), int(in_window[e])])


def write_vtk(path, mesh: Mesh, cell_data: Mapping[str, np.ndarray],
              displacement: Optional[np.ndarray] = None, deformed: bool = False,
              title: str = "straintopo") -> None:
    """Legacy ASCII VTK unstructured grid of bilinear quads with cell data.

    With ``deformed`` the node coordinates are moved by ``displacement``;
    the displacement is always attached as point data when given.
    """
    pts = np.zeros((mesh.n_nodes, 3))
    pts[:, :2] = mesh.nodes
    if displacement is not None:
        d = np.asarray(displacement).reshape(-1, 2)
        if deformed:
            pts[:, :2] += d
    ne = mesh.n_elements
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_nodes} double"]
    lines += [f"{x:.10g} {y:.10g} {z:.10g}" for x, y, z in pts]
    lines.append(f"CELLS {ne} {5 * ne}")
    lines += ["4 " + " ".join(map(str, row)) for row in mesh.elements]
    lines.append(f"CELL_TYPES {ne}")
    lines += [str(VTK_QUAD)] * ne
    if cell_data:
        lines.append(f"CELL_DATA {ne}")
        for name, arr in cell_data.items():
            a = np.asarray(arr, dtype=float)
            if a.ndim == 1:
                lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
                lines += [f"{v:.10g}" for v in a]
            else:
                lines.append(f"VECTORS {name} double")
                a3 = np.zeros((ne, 3))
                a3[:, : a.shape[1]] = a
                lines += [f"{x:.10g} {y:.10g} {z:.10g}" for x, y, z in a3]
    if displacement is not None:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        lines.append("VECTORS displacement double")
        lines += [f"{x:.10g} {y:.10g} 0" for x, y in np.asarray(displacement).reshape(-1, 2)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_trace_csv(path, trace, include_timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(trace.columns)
        w.writerows(trace.rows(include_timing))


def code_version() -> str:
    rev = ""
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            rev = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"{__version__}+{rev}" if rev else __version__


def write_manifest(path, cfg: RunConfig, extra: Optional[Dict] = None) -> None:
    from . import mma
    doc = {
        "code_version": code_version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "mma": {k: getattr(mma, k) for k in ("ASYINIT", "ASYINCR", "ASYDECR", "ALBEFA", "RAA0",
                                            "EPSIMIN", "C_PENALTY", "D_PENALTY")},
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj)}")


# ---------------------------------------------------------------------------
# Whole-run output


def _case_states(result):
    out = {}
    for case in result.problem.cases:
        if case.state is not None:
            out[case.label] = case.state.u
    return out


def save_state(path, result) -> None:
    """Compressed snapshot: design variables, projected layers and displacements."""
    prob = result.problem
    arrays = {"rho": result.rho, "design": prob.kernel.design, "beta": np.array(result.field.beta)}
    for k in LAYERS:
        arrays[f"bar_{k}"] = result.field.bar[k]
    for label, u in _case_states(result).items():
        arrays[f"u_{label}"] = u
    arrays["config_json"] = np.array(json.dumps(result.config.to_dict(), default=_json_default))
    np.savez_compressed(path, **arrays)


def write_outputs(result, out_dir, prefix: str = "") -> Dict[str, Path]:
    """Write every artifact of ``result`` into ``out_dir``; returns the paths by kind."""
    out = preflight(out_dir)
    prob = result.problem
    mesh = prob.mesh
    nx, ny = mesh.spec.nx, mesh.spec.ny
    paths: Dict[str, Path] = {}
    try:
        for k in LAYERS:
            bar = result.field.bar[k]
            p = out / f"{prefix}density_{k}.pgm"
            write_pgm(p, bar, nx, ny)
            paths[f"pgm_{k}"] = p
            p = out / f"{prefix}density_{k}.csv"
            write_density_csv(p, mesh, bar, prob.variants[0].regions.role)
            paths[f"csv_{k}"] = p
        states = _case_states(result)
        for vi, var in enumerate(prob.variants):
            label = f"i{vi + 1}"
            if label not in states:
                continue
            u = states[label]
            strains = var.assembler.center_strains(u)
            tag = f"{prefix}{var.name}"
            p = out / f"strain_{tag}.csv"
            write_strain_csv(p, mesh, strains, var.window)
            paths[f"strain_{var.name}"] = p
            cells = {f"rho_{k}": result.field.bar[k] for k in LAYERS}
            cells.update({"exx": strains[:, 0], "eyy": strains[:, 1], "exy": strains[:, 2],
                          "role": var.regions.role.astype(float),
                          "window": np.isin(np.arange(mesh.n_elements), var.window).astype(float)})
            for deformed in (False, True):
                kind = "deformed" if deformed else "reference"
                p = out / f"{tag}_{kind}.vtk"
                write_vtk(p, mesh, cells, u, deformed, title=f"{result.config.name} {var.name} {kind}")
                paths[f"vtk_{var.name}_{kind}"] = p
        if not prefix:
            p = out / "trace.csv"
            write_trace_csv(p, result.trace)
            paths["trace"] = p
            p = out / "manifest.json"
            write_manifest(p, result.config, {"completed": result.completed, "message": result.message,
                                              "iterations": len(result.trace)})
            paths["manifest"] = p
        p = out / f"{prefix}state.npz"
        save_state(p, result)
        paths["state"] = p
    except OSError as exc:
        raise OutputError(str(exc)) from exc
    return paths


# ---------------------------------------------------------------------------
# Metrics from a saved state


def metrics_from_state(path) -> Dict[str, float]:
    """Recompute M_nd, volume fractions and RMS errors from a saved state file."""
    from .driver import RobustProblem

    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise OutputError(f"cannot read state {path}: {exc}") from exc
    cfg = from_dict(json.loads(str(data["config_json"])))
    prob = RobustProblem(cfg)
    design = prob.kernel.design
    out = {"Mnd": gray_indicator(data["bar_intermediate"][design])}
    for k in LAYERS:
        out[f"Vf_{k[0]}"] = float(np.mean(data[f"bar_{k}"][design]))
    for vi, var in enumerate(prob.variants):
        key = f"u_i{vi + 1}"
        if key not in data:
            continue
        samples = var.assembler.center_strains(data[key], var.window)
        errs = rms_errors(samples, prob.target)
        suffix = "" if vi + 1 == cfg.optimization.report_variant else f"_{var.name}"
        for name, v in errs.items():
            out[name + suffix] = v
        out["mean_exx" + suffix] = float(np.mean(samples[:, 0]))
    return out
