import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaxlab import potentials as pot
from relaxlab.potentials import (
    OutsideTubeError,
    golden_section_minimize,
    make_ginzburg_landau,
    make_landau_de_gennes,
    normal_form,
    qtensor_from_components,
    qtensor_to_components,
    uniaxial_qtensor,
    verify_hypotheses,
)


def fd_gradient(f, z, delta=1e-6):
    z = np.asarray(z, dtype=float)
    g = np.zeros_like(z)
    for i in range(z.size):
        zp = z.copy()
        zm = z.copy()
        zp[i] += delta
        zm[i] -= delta
        g[i] = (f(zp) - f(zm)) / (2.0 * delta)
    return g


# --- golden section ---------------------------------------------------------

def test_golden_section_quadratic():
    x = golden_section_minimize(lambda t: (t - 2.0) ** 2, 0.0, 5.0)
    assert abs(x - 2.0) <= 1e-9


def test_golden_section_asymmetric():
    # value resolution near a flat minimum limits the abscissa to ~sqrt(eps)
    x = golden_section_minimize(lambda t: math.cosh(t - 0.7), -3.0, 4.0)
    assert abs(x - 0.7) <= 1e-6


# --- Ginzburg-Landau family --------------------------------------------------

@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_gl_zero_on_sphere_positive_off(k):
    p = make_ginzburg_landau(k)
    rng = np.random.default_rng(0)
    q = p.manifold.sample(rng, 32)
    assert np.allclose(p(q), 0.0, atol=1e-14)
    z = q * 1.3
    assert np.all(p(z) > 0.0)


def test_gl_value_formula():
    p = make_ginzburg_landau(3)
    z = np.array([0.3, -0.2, 0.5])
    expect = (1.0 - np.dot(z, z)) ** 2
    assert abs(float(p(z)) - expect) <= 1e-15


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1, max_value=4),
       st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4))
def test_gl_gradient_matches_fd(k, coords):
    p = make_ginzburg_landau(k)
    z = np.array(coords[:k])
    g = p.gradient(z)
    ref = fd_gradient(p, z)
    assert np.allclose(g, ref, atol=1e-6)


def test_gl_hessian_symmetric_and_fd():
    p = make_ginzburg_landau(3)
    z = np.array([0.4, 0.1, -0.8])
    H = p.hessian(z)
    assert np.allclose(H, H.T)
    d = 1e-5
    for i in range(3):
        zp = z.copy()
        zm = z.copy()
        zp[i] += d
        zm[i] -= d
        col = (p.gradient(zp) - p.gradient(zm)) / (2 * d)
        assert np.allclose(H[:, i], col, atol=1e-6)


def test_gl_projection_normalizes():
    p = make_ginzburg_landau(3)
    z = np.array([0.0, 0.9, 0.0])
    q = p.manifold.project(z)
    assert np.allclose(q, [0.0, 1.0, 0.0], atol=1e-14)
    # projecting twice is the identity on the manifold
    assert np.allclose(p.manifold.project(q), q, atol=1e-14)


def test_gl_projection_outside_tube_raises():
    p = make_ginzburg_landau(3)
    with pytest.raises(OutsideTubeError):
        p.manifold.project(np.zeros(3))


def test_gl_distance_formula():
    p = make_ginzburg_landau(2)
    z = np.array([[0.0, 0.25], [3.0, 4.0]])
    assert np.allclose(p.manifold.distance(z), [0.75, 4.0])


# --- normal form -------------------------------------------------------------

def test_normal_form_scalar_oracle():
    p = make_ginzburg_landau(1)
    a = normal_form(p, np.array([1.1]))[0, 0]
    assert abs(a - 4.41) <= 1e-8


def test_normal_form_tube_identity_gl3():
    p = make_ginzburg_landau(3)
    m = p.manifold
    rng = np.random.default_rng(7)
    qs = m.sample(rng, 100)
    shift = rng.standard_normal(qs.shape)
    shift *= 0.4 * m.tubular_radius / np.linalg.norm(shift, axis=-1, keepdims=True)
    worst = 0.0
    for q, dz in zip(qs, shift):
        z = q + dz
        A = normal_form(p, z)
        zp = z - m.project(z)
        worst = max(worst, abs(float(zp @ A @ zp) - float(p(z))))
    assert worst <= 1e-8


# --- Landau-de Gennes ---------------------------------------------------------

def test_qtensor_roundtrip():
    rng = np.random.default_rng(1)
    q = rng.standard_normal(5)
    Q = qtensor_from_components(q)
    assert np.allclose(Q, Q.T)
    assert abs(np.trace(Q)) <= 1e-14
    assert np.allclose(qtensor_to_components(Q), q, atol=1e-14)


def test_uniaxial_qtensor_shape():
    n = np.array([0.0, 0.0, 1.0])
    Q = qtensor_from_components(uniaxial_qtensor(n, 1.0))
    assert np.allclose(Q, Q.T)
    assert abs(np.trace(Q)) <= 1e-14
    w = np.linalg.eigvalsh(Q)
    # two equal small eigenvalues, one large: uniaxial spectrum
    assert abs(w[0] - w[1]) <= 1e-12
    assert w[2] > w[1]


def test_ldg_vanishes_on_manifold():
    p = make_landau_de_gennes(a=-1.0, b2=3.0, c2=2.0)
    rng = np.random.default_rng(3)
    qs = p.manifold.sample(rng, 64)
    assert np.max(np.abs(p(qs))) <= 1e-12
    assert np.max(np.linalg.norm(p.gradient(qs), axis=-1)) <= 1e-9


def test_ldg_gradient_matches_fd():
    p = make_landau_de_gennes(a=-1.0, b2=3.0, c2=2.0)
    rng = np.random.default_rng(4)
    for _ in range(10):
        z = rng.standard_normal(5) * 0.7
        assert np.allclose(p.gradient(z), fd_gradient(p, z), atol=1e-5)


def test_ldg_projection_uniaxial():
    p = make_landau_de_gennes(a=-1.0, b2=3.0, c2=2.0)
    rng = np.random.default_rng(5)
    q = p.manifold.sample(rng, 1)[0]
    z = q + 0.05 * rng.standard_normal(5)
    proj = p.manifold.project(z)
    assert float(p(proj)) <= 1e-10
    assert np.linalg.norm(proj - z) <= np.linalg.norm(q - z) + 1e-12


# --- hypothesis verification --------------------------------------------------

@pytest.mark.parametrize("maker", [
    lambda: make_ginzburg_landau(3),
    lambda: make_landau_de_gennes(a=-1.0, b2=3.0, c2=2.0),
])
def test_verify_hypotheses_ok(maker):
    rep = verify_hypotheses(maker(), sample_count=200, seed=0)
    assert rep.ok, rep


def test_growth_radius_positive():
    for p in (make_ginzburg_landau(2),
              make_landau_de_gennes(a=-1.0, b2=3.0, c2=2.0)):
        assert p.radial_growth_radius > 0.0
        assert p.manifold.tubular_radius > 0.0
