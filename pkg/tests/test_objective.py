import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from straintopo.fea import NewtonControls, make_layer, newton_solve
from straintopo.material import GammaParams, SimpParams
from straintopo.mesh import TISSUE
from straintopo.objective import (StrainTarget, TargetConfigurationError, evaluate_case,
                                  objective_displacement_gradient, rms_errors, strain_objective)

SAMPLES = np.array([[0.2, 0.0, 0.0], [0.1, 0.05, 0.01]])
TARGET = StrainTarget(0.2, 0.05, 0.0, 1.0, 1.0, 0.0)


def test_objective_hand_value():
    assert strain_objective(SAMPLES, TARGET).f == pytest.approx(0.0125 / 0.0425 / 2)


def test_rms_errors_hand_values():
    e = rms_errors(SAMPLES, TARGET)
    assert e["Err_x"] == pytest.approx(100 * np.sqrt(0.01 / 2 / 0.04))
    assert e["Err_y"] == pytest.approx(100 * np.sqrt(0.0025 / 2 / 0.0025))
    # zero target: normalised by the full weighted target norm
    assert e["Err_xy"] == pytest.approx(100 * np.sqrt(0.0001 / 2 / 0.0425))


def test_single_direction_error_is_root_objective():
    t = StrainTarget(0.2, w1=1.0)
    s = np.array([[0.18, 0.3, 0.1], [0.25, -0.1, 0.0]])
    assert rms_errors(s, t)["Err_x"] == pytest.approx(100 * np.sqrt(strain_objective(s, t).f))


@given(st.lists(st.floats(-0.5, 0.5), min_size=3, max_size=3))
@settings(max_examples=30, deadline=None)
def test_objective_zero_at_target_and_nonnegative(v):
    t = StrainTarget(0.1, -0.05, 0.02, 1.0, 2.0, 0.5)
    assert strain_objective(np.tile(t.values, (4, 1)), t).f == 0.0
    assert strain_objective(np.array([v]), t).f >= 0.0


def test_target_validation():
    with pytest.raises(TargetConfigurationError):
        StrainTarget(0.0, 0.1, 0.0, 1.0, 0.0, 0.0)
    with pytest.raises(TargetConfigurationError):
        StrainTarget(0.1, w1=-1.0)
    with pytest.raises(TargetConfigurationError):
        strain_objective(np.zeros((0, 3)), TARGET)


def _solved(block_problem, rho_design, gamma_params=GammaParams()):
    mesh, regions, dofs, asm = block_problem
    rho = np.where(regions.role == TISSUE, 1.0, rho_design)
    layer = make_layer(rho, regions, SimpParams(E_s=2.0), gamma_params)
    st_ = newton_solve(asm, layer, NewtonControls(tol_rel=1e-13, tol_abs=1e-15))
    return layer, st_


def test_displacement_gradient_fd(block_problem, rng):
    mesh, regions, dofs, asm = block_problem
    win = regions.tissue_elements(1)
    t = StrainTarget(0.05, 0.01, 0.02, 1, 1, 1)
    u = 0.05 * rng.standard_normal(dofs.n_dofs)
    g = objective_displacement_gradient(asm, u, win, t)
    h = 1e-6
    for i in rng.choice(dofs.n_dofs, 12, replace=False):
        e = np.zeros_like(u)
        e[i] = h
        fd = (strain_objective(asm.center_strains(u + e, win), t).f
              - strain_objective(asm.center_strains(u - e, win), t).f) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-12)


def test_adjoint_sensitivity_fd(block_problem, rng):
    mesh, regions, dofs, asm = block_problem
    win = regions.tissue_elements(1)
    t = StrainTarget(0.05, 0.01, 0.02, 1, 1, 1)
    rho = rng.uniform(0.15, 0.9, mesh.n_elements)
    layer, st_ = _solved(block_problem, rho)
    res = evaluate_case(asm, layer, st_, win, t)
    h = 1e-6
    design = regions.design
    for i in design[:8]:
        vals = []
        for s in (h, -h):
            r2 = rho.copy()
            r2[i] += s
            lay, st2 = _solved(block_problem, r2)
            vals.append(evaluate_case(asm, lay, st2, win, t, gradient=False).f)
        fd = (vals[0] - vals[1]) / (2 * h)
        assert res.dfdbar[i] == pytest.approx(fd, rel=1e-5, abs=1e-11)
    assert np.all(res.dfdbar[regions.role != 0] == 0.0)
