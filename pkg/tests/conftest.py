import numpy as np
import pytest

from straintopo.fea import Assembler
from straintopo.material import MaterialParams
from straintopo.mesh import (BoundarySpec, GridSpec, InputSpec, RegionBox, apply_boundary_conditions,
                             build_grid, tag_regions)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def block_problem():
    """4x4 unit block, left edge clamped, input spring and force at the top-right corner."""
    mesh = build_grid(GridSpec(4, 4, 1.0, 1.0, 1.0))
    regions = tag_regions(mesh, [RegionBox("tissue", 0.5, 1.0, 0.5, 1.0, tissue=1, modulus=0.5)], modulus=2.0)
    dofs = apply_boundary_conditions(mesh, [BoundarySpec("left", "fixed")],
                                     InputSpec(1.0, 1.0, "x", spring=0.5, force=0.05))
    asm = Assembler(mesh, regions, dofs, MaterialParams(1.0, 0.45))
    return mesh, regions, dofs, asm


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one pass/fail line per acceptance criterion (printed in the terminal summary)."""

    def record(number: int, title: str, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} -- {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
