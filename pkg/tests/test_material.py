import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from straintopo.material import (DomainError, ElementInversion, GammaParams, MaterialParams, SimpParams,
                                 gamma_factor, interpolated_element_energy, kinematics, linear_element_stiffness,
                                 linear_tangent, material_tangent, nonlinear_element, pk2_stress, simp_modulus,
                                 strain_energy, center_strain, center_strain_derivative)
from straintopo.mesh import GridSpec, build_grid

PARAMS = MaterialParams(1.0, 0.45)

# Values from a symbolic derivation of the energy (independent of the closed forms in the code).
F_REF = np.array([[1.1, 0.2], [0.05, 0.95]])
W_REF = 0.016973645959540553
S_REF = np.array([0.15133999023032767, 0.095911182894864967, 0.054915577637912123])
D_REF = np.array([[3.2966305450431982, 3.8304396221875226, -0.93564845708122601],
                  [3.8304396221875226, 5.4559584599749966, -1.2036856808604632],
                  [-0.93564845708122601, -1.2036856808604632, 0.47084727665336535]])

deformations = st.lists(st.floats(-0.3, 0.3), min_size=4, max_size=4).map(
    lambda v: np.eye(2) + np.array(v).reshape(2, 2)).filter(lambda F: np.linalg.det(F) > 0.2)


def test_reference_state_values():
    assert strain_energy(F_REF, PARAMS) == pytest.approx(W_REF, rel=1e-12)
    S = pk2_stress(F_REF, PARAMS)
    assert np.allclose([S[0, 0], S[1, 1], S[0, 1]], S_REF, rtol=1e-12)
    assert np.allclose(material_tangent(F_REF, PARAMS), D_REF, rtol=1e-11)


def test_identity_is_stress_free():
    assert abs(strain_energy(np.eye(2), PARAMS)) < 1e-14
    assert np.max(np.abs(pk2_stress(np.eye(2), PARAMS))) < 1e-14


def test_tangent_at_identity_is_linear_tangent():
    assert np.allclose(material_tangent(np.eye(2), PARAMS), linear_tangent(PARAMS), atol=1e-13)


def test_moduli():
    p = MaterialParams(25.0, 0.45)
    assert p.G == pytest.approx(25.0 / 2.9)
    assert p.kappa == pytest.approx(25.0 / (2.9 * 0.1))
    with pytest.raises(ValueError):
        MaterialParams(-1.0, 0.3)
    with pytest.raises(ValueError):
        MaterialParams(1.0, 0.5)


@given(deformations)
@settings(max_examples=60, deadline=None)
def test_objectivity(F):
    th = 0.7
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    assert strain_energy(Q @ F, PARAMS) == pytest.approx(strain_energy(F, PARAMS), rel=1e-10, abs=1e-14)
    assert np.allclose(pk2_stress(Q @ F, PARAMS), pk2_stress(F, PARAMS), atol=1e-12)


@given(deformations)
@settings(max_examples=60, deadline=None)
def test_stress_and_tangent_symmetry(F):
    S = pk2_stress(F, PARAMS)
    D = material_tangent(F, PARAMS)
    assert np.allclose(S, S.T)
    assert np.allclose(D, D.T, atol=1e-10)
    assert strain_energy(F, PARAMS) >= -1e-14


def test_inversion_detected():
    with pytest.raises(ElementInversion):
        strain_energy(np.array([[-1.0, 0.0], [0.0, 1.0]]), PARAMS)
    kin = kinematics(np.diag([1.2, 0.9]))
    assert kin.J == pytest.approx(1.08)
    assert kin.I1 == pytest.approx(1.44 + 0.81 + 1.0)


def test_simp_endpoints_and_domain():
    simp = SimpParams(p=3, E_s=25.0)
    E, dE = simp_modulus(np.array([0.0, 1.0, 0.5]), simp)
    assert E[0] == pytest.approx(25e-6)
    assert E[1] == pytest.approx(25.0)
    assert E[2] == pytest.approx(25e-6 + (25 - 25e-6) * 0.125)
    assert dE[2] == pytest.approx(3 * (25 - 25e-6) * 0.25)
    with pytest.raises(DomainError):
        simp_modulus(np.array([1.1]), simp)


def test_gamma_factor_endpoints_and_derivative():
    gp = GammaParams()
    g, _ = gamma_factor(np.array([0.0, 1.0]), 3.0, gp)
    assert g[0] == pytest.approx(0.0, abs=1e-14)
    assert g[1] == pytest.approx(1.0, abs=1e-14)
    r = np.linspace(0.05, 0.95, 19)
    h = 1e-7
    _, dg = gamma_factor(r, 3.0, gp)
    fd = (gamma_factor(r + h, 3.0, gp)[0] - gamma_factor(r - h, 3.0, gp)[0]) / (2 * h)
    assert np.allclose(dg, fd, rtol=1e-5, atol=1e-8)


def _shape():
    return build_grid(GridSpec(1, 1, 0.7, 0.4)).shape


def test_element_force_is_energy_gradient(rng):
    shape = _shape()
    u = 0.05 * rng.standard_normal((1, 8))
    W, f, K = nonlinear_element(u, shape, PARAMS, np.array([2.0]))
    h = 1e-6
    for i in range(8):
        e = np.zeros((1, 8))
        e[0, i] = h
        fd = (nonlinear_element(u + e, shape, PARAMS, np.array([2.0]), False)[0]
              - nonlinear_element(u - e, shape, PARAMS, np.array([2.0]), False)[0]) / (2 * h)
        assert f[0, i] == pytest.approx(fd[0], rel=1e-6, abs=1e-10)
        fdK = (nonlinear_element(u + e, shape, PARAMS, np.array([2.0]), False)[1]
               - nonlinear_element(u - e, shape, PARAMS, np.array([2.0]), False)[1]) / (2 * h)
        assert np.allclose(K[0, :, i], fdK[0], rtol=1e-6, atol=1e-9)


def test_linear_stiffness_matches_tangent_at_rest():
    shape = _shape()
    _, _, K = nonlinear_element(np.zeros((1, 8)), shape, PARAMS, np.array([1.0]))
    assert np.allclose(K[0], linear_element_stiffness(shape, PARAMS), atol=1e-12)


def test_interpolated_limits(rng):
    shape = _shape()
    u = 0.03 * rng.standard_normal((1, 8))
    KL = linear_element_stiffness(shape, PARAMS)
    lin = interpolated_element_energy(u, np.array([0.0]), 2.0, np.array([1.0]), shape, PARAMS, KL)
    assert np.allclose(lin.force[0], 2.0 * KL @ u[0])
    nl = interpolated_element_energy(u, np.array([1.0]), 2.0, np.array([1.0]), shape, PARAMS, KL)
    assert np.allclose(nl.force[0], 2.0 * nonlinear_element(u, shape, PARAMS, np.array([1.0]))[1][0])


def test_interpolated_gamma_derivative(rng):
    shape = _shape()
    u = 0.05 * rng.standard_normal((3, 8))
    KL = linear_element_stiffness(shape, PARAMS)
    g = np.array([0.2, 0.5, 0.9])
    t = np.ones(3)
    r = interpolated_element_energy(u, g, 1.0, t, shape, PARAMS, KL, need_dgamma=True)
    h = 1e-6
    fp = interpolated_element_energy(u, g + h, 1.0, t, shape, PARAMS, KL).force
    fm = interpolated_element_energy(u, g - h, 1.0, t, shape, PARAMS, KL).force
    assert np.allclose(r.dforce_dgamma, (fp - fm) / (2 * h), rtol=1e-6, atol=1e-10)


def test_center_strain_uniform_stretch():
    mesh = build_grid(GridSpec(1, 1, 1.0, 1.0))
    u = np.zeros(8)
    u[0::2] = 0.1 * mesh.nodes[mesh.elements[0], 0]
    eps = center_strain(u[None, :], mesh.shape)[0]
    assert np.allclose(eps, [0.5 * (1.1 ** 2 - 1), 0.0, 0.0])


def test_center_strain_derivative_fd(rng):
    shape = _shape()
    u = 0.1 * rng.standard_normal((1, 8))
    d = center_strain_derivative(u, shape)[0]
    h = 1e-6
    for i in range(8):
        e = np.zeros((1, 8))
        e[0, i] = h
        fd = (center_strain(u + e, shape) - center_strain(u - e, shape))[0] / (2 * h)
        assert np.allclose(d[:, i], fd, atol=1e-8)
