import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
import scipy.sparse as sp
from scipy.optimize import brentq

from straintopo.fea import (Assembler, Factor, NewtonControls, NonConvergenceError, make_layer, newton_solve,
                            uniform_layer)
from straintopo.material import GammaParams, MaterialParams, SimpParams
from straintopo.mesh import BoundarySpec, GridSpec, apply_boundary_conditions, build_grid, tag_regions

NU = 0.45


def _stretch_block(stretch, n=3, E=2.0):
    mesh = build_grid(GridSpec(n, n, 1.0, 1.0))
    regions = tag_regions(mesh, [], modulus=E)
    dofs = apply_boundary_conditions(mesh, [BoundarySpec("left", "fix_x"), BoundarySpec("bottom", "fix_y"),
                                            BoundarySpec("right", "prescribed", stretch, "x")])
    return mesh, regions, Assembler(mesh, regions, dofs, MaterialParams(1.0, NU))


def _lateral_stretch(l1, E=2.0):
    """Free lateral stretch of the plane-strain neo-Hookean strip, from dW/dl2 = 0."""
    G = E / (2 * (1 + NU))
    k = E / (2 * (1 + NU) * (1 - 2 * NU))

    def dW(l2):
        J = l1 * l2
        return G * (l2 - 1.0 / l2) + k * (J - 1.0) * l1

    return brentq(dW, 0.3, 1.5, xtol=1e-15)


@pytest.mark.parametrize("stretch", [0.1, -0.08])
def test_uniaxial_patch(stretch):
    mesh, regions, asm = _stretch_block(stretch)
    st = newton_solve(asm, uniform_layer(mesh, regions), NewtonControls(tol_rel=1e-12, tol_abs=1e-14))
    assert st.converged
    eps = asm.center_strains(st.u)
    l1 = 1.0 + stretch
    l2 = _lateral_stretch(l1)
    assert np.allclose(eps[:, 0], 0.5 * (l1 ** 2 - 1), atol=1e-10)
    assert np.allclose(eps[:, 1], 0.5 * (l2 ** 2 - 1), atol=1e-9)
    assert np.allclose(eps[:, 2], 0.0, atol=1e-10)


def test_newton_quadratic_convergence():
    mesh, regions, asm = _stretch_block(0.15, n=4)
    st = newton_solve(asm, uniform_layer(mesh, regions), NewtonControls(tol_rel=1e-13, tol_abs=1e-15))
    h = [v for v in st.history if v > 1e-11]
    assert len(h) >= 3
    # quadratic rate: r_{k+1} <= C r_k^2 for the tail
    ratios = [h[i + 1] / h[i] ** 2 for i in range(len(h) - 3, len(h) - 1)]
    assert max(ratios) < 1e3


def test_small_load_matches_linear(block_problem):
    mesh, regions, dofs, asm = block_problem
    ctl = NewtonControls(tol_rel=1e-12, tol_abs=1e-15)
    asm.dofs = dofs  # force stays small: 0.05
    u_nl = newton_solve(asm, uniform_layer(mesh, regions, 1.0), ctl).u
    u_l = newton_solve(asm, uniform_layer(mesh, regions, 0.0), ctl).u
    rel = np.linalg.norm(u_nl - u_l) / np.linalg.norm(u_l)
    assert 0 < rel < 0.1


def test_linear_layer_solves_in_one_step(block_problem):
    mesh, regions, dofs, asm = block_problem
    st = newton_solve(asm, uniform_layer(mesh, regions, 0.0), NewtonControls(tol_rel=1e-12, tol_abs=1e-15))
    assert st.iterations <= 2
    K = asm.full_tangent(np.zeros(dofs.n_dofs), uniform_layer(mesh, regions, 0.0)).toarray()
    f = dofs.external_force()
    free = dofs.free
    u = np.zeros(dofs.n_dofs)
    u[free] = np.linalg.solve(K[np.ix_(free, free)], f[free])
    assert np.allclose(st.u, u, rtol=1e-9, atol=1e-14)


def test_equilibrium_and_warm_start(block_problem):
    mesh, regions, dofs, asm = block_problem
    layer = make_layer(np.full(mesh.n_elements, 0.6), regions, SimpParams(E_s=2.0), GammaParams())
    ctl = NewtonControls(tol_rel=1e-10)
    st = newton_solve(asm, layer, ctl)
    R = asm.internal_force(st.u, layer) - dofs.external_force()
    assert np.linalg.norm(R[dofs.free]) < 1e-9
    st2 = newton_solve(asm, layer, ctl, u0=st.u)
    assert st2.warm and st2.iterations == 0
    assert np.allclose(st2.u, st.u)


def test_factor_backends_agree(rng):
    A = sp.random(30, 30, density=0.2, random_state=3)
    K = (A @ A.T + 30 * sp.eye(30)).tocsc()
    b = rng.standard_normal(30)
    x1 = Factor(K, "cholmod").solve(b)
    x2 = Factor(K, "splu").solve(b)
    assert np.allclose(x1, x2) and np.allclose(K @ x1, b)


def test_tangent_is_fd_jacobian(block_problem, rng):
    mesh, regions, dofs, asm = block_problem
    layer = make_layer(rng.uniform(0.05, 1.0, mesh.n_elements), regions, SimpParams(E_s=2.0), GammaParams())
    u = 0.03 * rng.standard_normal(dofs.n_dofs)
    K = asm.full_tangent(u, layer).toarray()
    h = 1e-6
    for i in rng.choice(dofs.n_dofs, 8, replace=False):
        e = np.zeros_like(u)
        e[i] = h
        fd = (asm.internal_force(u + e, layer) - asm.internal_force(u - e, layer)) / (2 * h)
        assert np.allclose(K[:, i], fd, rtol=1e-6, atol=1e-9)
    Kf = asm.tangent(u, layer).toarray()
    assert np.allclose(Kf, K[np.ix_(dofs.free, dofs.free)])


def test_exhausted_cutbacks_raise():
    mesh, regions, asm = _stretch_block(0.5)
    with pytest.raises(NonConvergenceError) as info:
        newton_solve(asm, uniform_layer(mesh, regions), NewtonControls(tol_rel=1e-14, max_iter=1, max_cutbacks=1))
    assert "cutbacks" in str(info.value)


def test_cutbacks_rescue_large_step():
    mesh, regions, asm = _stretch_block(0.6)
    st = newton_solve(asm, uniform_layer(mesh, regions), NewtonControls(max_iter=3, max_cutbacks=6))
    assert st.converged and st.load_factor == 1.0 and st.increments >= 2


_BLOCK = build_grid(GridSpec(3, 2, 1.5, 1.0))
_REGIONS = tag_regions(_BLOCK, [], modulus=2.0)
_FREE = Assembler(_BLOCK, _REGIONS, apply_boundary_conditions(_BLOCK, [BoundarySpec("left", "fixed")]),
                  MaterialParams(1.0, NU))


@settings(max_examples=30, deadline=None)
@given(st.floats(-np.pi, np.pi), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_rigid_motion_is_stress_free(angle, tx, ty):
    c, s = np.cos(angle), np.sin(angle)
    R = np.array([[c, -s], [s, c]])
    u = (_BLOCK.nodes @ R.T - _BLOCK.nodes + [tx, ty]).ravel()
    layer = uniform_layer(_BLOCK, _REGIONS, 1.0)
    assert abs(_FREE.energy(u, layer)) < 1e-12
    assert np.max(np.abs(_FREE.internal_force(u, layer))) < 1e-11


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.1))
def test_tangent_symmetric_for_any_gamma_field(seed, amp):
    rng = np.random.default_rng(seed)
    layer = uniform_layer(_BLOCK, _REGIONS, 1.0)
    layer.gamma[:] = rng.uniform(0.0, 1.0, _BLOCK.n_elements)
    u = amp * rng.standard_normal(2 * _BLOCK.n_nodes)
    K = _FREE.full_tangent(u, layer).toarray()
    assert np.allclose(K, K.T, rtol=0, atol=1e-12 * max(1.0, np.abs(K).max()))
