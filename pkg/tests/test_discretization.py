import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaxlab.discretization import (
    Field,
    ball_cell_fractions,
    ball_energy,
    build_domain,
    energy_density_nodes,
    gradient_components_field,
    gradient_energy_nodes,
    hedgehog_unit_vector,
    laplacian_field,
    load_field,
    make_boundary_data,
    boundary_normal_derivative,
    save_field,
    trilinear_sample,
)
from relaxlab.potentials import make_ginzburg_landau


@pytest.fixture(scope="module")
def ball12():
    return build_domain("ball", center=[0.0, 0.0, 0.0], radius=1.0, divisions=24)


@pytest.fixture(scope="module")
def box8():
    return build_domain("box", lo=[-0.5, -0.5, -0.5], hi=[0.5, 0.5, 0.5], divisions=8)


def affine_field(dom, A, b):
    pts = dom.node_points()
    f = Field(dom, A.shape[0])
    f.values[...] = np.einsum("kj,...j->...k", A, pts) + b
    f.values[dom.exterior] = 0.0
    return f


# --- domain construction ------------------------------------------------------

def test_partition_ball(ball12):
    d = ball12
    assert not np.any(d.interior & d.boundary)
    assert np.array_equal(d.inside, d.interior | d.boundary)
    assert np.array_equal(d.exterior, ~d.inside)
    assert d.interior.sum() > 0 and d.boundary.sum() > 0


def test_partition_box(box8):
    d = box8
    # a box grid has no exterior nodes inside the bounding box
    assert d.exterior.sum() == 0
    expect_boundary = d.shape[0] ** 3 - (d.shape[0] - 2) ** 3
    assert d.boundary.sum() == expect_boundary


def test_ball_symmetry(ball12):
    # node classification inherits the ball's reflection symmetries
    m = ball12.inside
    for ax in range(3):
        assert np.array_equal(m, np.flip(m, axis=ax))


def test_h_and_divisions(ball12, box8):
    assert abs(ball12.h - 1.0 / 12.0) <= 1e-15
    assert abs(box8.h - 1.0 / 8.0) <= 1e-15


def test_build_domain_validation():
    with pytest.raises(ValueError):
        build_domain("ball", center=[0, 0, 0], radius=1.0)  # no resolution
    with pytest.raises(ValueError):
        build_domain("box", lo=[0, 0], hi=[1, 1], divisions=4, h=0.25)
    with pytest.raises(ValueError):
        build_domain("pentagon", divisions=8)


# --- stencils ------------------------------------------------------------------

def test_laplacian_exact_on_quadratic(box8):
    dom = box8
    pts = dom.node_points()
    f = Field(dom, 1)
    f.values[..., 0] = np.sum(pts * pts, axis=-1)
    lap = laplacian_field(f)[..., 0]
    assert np.allclose(lap[dom.interior], 6.0, atol=1e-10)


def test_gradient_exact_on_affine(box8):
    A = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]])
    f = affine_field(box8, A, np.array([0.3, -0.1]))
    comps = gradient_components_field(f)
    for j in range(3):
        expect = A[:, j]
        got = comps[j][box8.interior]
        assert np.allclose(got, expect, atol=1e-12)


def test_gradient_energy_on_affine(box8):
    A = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]])
    f = affine_field(box8, A, np.zeros(2))
    ge = gradient_energy_nodes(f)
    assert np.allclose(ge[box8.interior], np.sum(A * A), atol=1e-12)


def test_energy_density_split(ball12):
    p = make_ginzburg_landau(3)
    rng = np.random.default_rng(0)
    f = Field(ball12, 3)
    f.values[ball12.inside] = rng.standard_normal((ball12.inside.sum(), 3))
    dirichlet, potential = energy_density_nodes(f, 0.25, p, split=True)
    total = energy_density_nodes(f, 0.25, p)
    assert np.allclose(dirichlet + potential, total, atol=1e-12)
    assert np.all(potential[ball12.inside] >= 0.0)


# --- boundary data ---------------------------------------------------------------

def test_hedgehog_unit_norm(ball12):
    p = make_ginzburg_landau(3)
    bd = make_boundary_data("hedgehog", p)
    vals = bd.boundary_values(ball12)
    assert np.allclose(np.linalg.norm(vals, axis=-1), 1.0, atol=1e-12)


def test_hedgehog_origin_convention():
    v = hedgehog_unit_vector(np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]))
    assert np.allclose(v[0], [0.0, 0.0, 1.0])
    assert np.allclose(v[1], [0.0, 0.0, 1.0])


def test_hedgehog_dirichlet_energy_anchor():
    # smooth-extension Dirichlet energy of x/|x| on the unit ball is 4*pi
    p = make_ginzburg_landau(3)
    dom = build_domain("ball", center=[0, 0, 0], radius=1.0, divisions=32)
    fld = make_boundary_data("hedgehog", p).extend_to_field(dom)
    val = 0.5 * dom.h ** 3 * float(np.sum(gradient_energy_nodes(fld)))
    assert abs(val - 4 * math.pi) / (4 * math.pi) <= 0.05


def test_equator_constant(box8):
    p = make_ginzburg_landau(3)
    bd = make_boundary_data("equator_constant", p)
    vals = bd.boundary_values(box8)
    assert np.allclose(vals, np.array([1.0, 0.0, 0.0]), atol=1e-15)


def test_user_table_nearest():
    p = make_ginzburg_landau(2)
    pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    vals = np.array([[1.0, 0.0], [0.0, 1.0]])
    bd = make_boundary_data("user_table", p, points=pts, values=vals)
    out = bd.generator(np.array([[0.1, 0.0], [0.9, 1.0]]))
    assert np.allclose(out, vals)


def test_unknown_boundary_name():
    p = make_ginzburg_landau(3)
    with pytest.raises(ValueError):
        make_boundary_data("vortex", p)


# --- cell fractions and ball energies --------------------------------------------

def test_ball_fraction_volume(ball12):
    rho = 0.4
    frac = ball_cell_fractions(ball12, [0.0, 0.0, 0.0], rho)
    vol = float(frac.sum()) * ball12.h ** 3
    expect = 4.0 / 3.0 * math.pi * rho ** 3
    assert abs(vol - expect) / expect <= 0.02
    assert np.all(frac >= 0.0) and np.all(frac <= 1.0)


def test_ball_energy_matches_density(ball12):
    p = make_ginzburg_landau(3)
    bd = make_boundary_data("hedgehog", p)
    f = bd.extend_to_field(ball12)
    rho = 0.5
    total = ball_energy(f, 0.3, p, [0, 0, 0], rho)
    # independent evaluation from the density and the cell fractions
    dens = energy_density_nodes(f, 0.3, p)
    frac = ball_cell_fractions(ball12, [0, 0, 0], rho)
    expect = float(np.sum(dens * frac)) * ball12.h ** 3
    assert abs(total - expect) <= 1e-12 * max(1.0, abs(expect))


# --- interpolation -----------------------------------------------------------------

def test_trilinear_exact_on_affine(box8):
    A = np.array([[2.0, 1.0, -1.0]])
    f = affine_field(box8, A, np.array([0.25]))
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.4, 0.4, size=(20, 3))
    vals, trusted = trilinear_sample(f, pts)
    expect = pts @ A[0] + 0.25
    assert np.all(trusted)
    assert np.allclose(vals[:, 0], expect, atol=1e-12)


def test_boundary_normal_derivative_linear(box8):
    # u(x) = x . e0 has outward normal derivative +-1 on the two x-faces
    A = np.array([[1.0, 0.0, 0.0]])
    f = affine_field(box8, A, np.zeros(1))
    node = (0, 4, 4)
    d, order = boundary_normal_derivative(f, node)
    assert order == 2
    assert np.allclose(d, [-1.0], atol=1e-10)
    node = (8, 4, 4)
    d, order = boundary_normal_derivative(f, node)
    assert np.allclose(d, [1.0], atol=1e-10)


# --- serialization -----------------------------------------------------------------

def test_save_load_roundtrip(tmp_path, ball12):
    p = make_ginzburg_landau(3)
    f = make_boundary_data("hedgehog", p).extend_to_field(ball12)
    path = tmp_path / "u.field"
    save_field(f, str(path))
    g = load_field(str(path))
    assert g.k == f.k
    assert g.domain.shape == ball12.shape
    assert np.array_equal(g.values, f.values)


def test_load_rejects_wrong_domain(tmp_path, ball12, box8):
    p = make_ginzburg_landau(3)
    f = make_boundary_data("hedgehog", p).extend_to_field(ball12)
    path = tmp_path / "u.field"
    save_field(f, str(path))
    with pytest.raises(ValueError):
        load_field(str(path), box8)


# --- field invariants ----------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 0.45))
def test_annulus_fraction_monotone(rho):
    dom = build_domain("box", lo=[-0.5] * 3, hi=[0.5] * 3, divisions=10)
    f1 = ball_cell_fractions(dom, [0, 0, 0], rho)
    f2 = ball_cell_fractions(dom, [0, 0, 0], rho + 0.05)
    # enlarging the ball can only grow each cell's covered fraction
    assert np.all(f2 - f1 >= -1e-12)


def test_sup_norm_ignores_exterior(ball12):
    f = Field(ball12, 2)
    f.values[ball12.exterior] = 100.0
    f.values[ball12.inside] = 0.5
    assert abs(f.sup_norm() - math.hypot(0.5, 0.5)) <= 1e-12
