import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relaxlab import diagnostics as diag
from relaxlab.diagnostics import (
    CenterProfile,
    DiagnosticsError,
    annulus_mask,
    bochner_residual,
    boundary_gradient_report,
    compute_profiles,
    default_constant_grid,
    distance_to_manifold,
    exclusion_mask,
    fit_monotonicity_constant,
    monotonicity_check,
    monotonicity_margins,
    profile_grid,
    renormalized_profile,
    scale_propagation_check,
    singular_set_estimate,
    stress_divergence_report,
    stress_tensor,
    uniform_convergence_profile,
)
from relaxlab.discretization import Field, build_domain, make_boundary_data
from relaxlab.potentials import make_ginzburg_landau


@pytest.fixture(scope="module")
def hedgehog24():
    p = make_ginzburg_landau(3)
    dom = build_domain("ball", center=[0, 0, 0], radius=1.0, divisions=24)
    u = make_boundary_data("hedgehog", p).extend_to_field(dom)
    return p, dom, u


def constant_field(dom, vec):
    f = Field(dom, len(vec))
    f.values[dom.inside] = np.asarray(vec, dtype=float)
    return f


# --- profile grid ---------------------------------------------------------------

def test_profile_grid_ratio():
    rhos = profile_grid(1.0 / 12.0, 0.6)
    ratio = rhos[1:] / rhos[:-1]
    assert np.allclose(ratio, 2.0 ** 0.125, rtol=1e-12)
    # doubling lands exactly eight indices ahead
    assert np.allclose(rhos[8:], 2.0 * rhos[:-8], rtol=1e-9)
    assert rhos[0] >= 4.0 / 12.0 - 1e-12
    assert len(rhos) >= 10


def test_profile_grid_rejects_unresolvable():
    with pytest.raises(DiagnosticsError):
        profile_grid(0.1, 0.6, rho_min=0.15)  # below 2h


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.1), st.floats(0.3, 1.0))
def test_profile_grid_invariants(h, rho_max):
    if rho_max < 4.0 * h:
        return
    rhos = profile_grid(h, rho_max)
    assert np.all(np.diff(rhos) > 0)
    assert rhos[0] >= 4.0 * h - 1e-12
    # covers the doubled range needed by the two-scale margin
    assert rhos[-1] >= 2.0 * rho_max - 1e-9
    assert len(rhos) >= 10


# --- renormalized profiles ---------------------------------------------------------

def test_hedgehog_profile_is_flat(hedgehog24):
    # for u = x/|x| in 3d, rho^(2-n) * E(B_rho) = 4 pi at every radius; the
    # grid under-samples the 1/rho^2 density within ~2h of the core, so the
    # discrete profile sits a little below and recovers as rho grows
    p, dom, u = hedgehog24
    rhos = profile_grid(dom.h, 0.6)
    prof = renormalized_profile(u, 0.1, p, [0, 0, 0], rhos)
    contained = prof.rhos <= 0.95
    ratio = prof.phi[contained] / (4.0 * math.pi)
    assert np.all(ratio >= 0.85)
    assert np.all(ratio <= 1.02)
    assert ratio[-1] > ratio[0]
    # the potential term vanishes on manifold-valued fields
    assert np.allclose(prof.phi, prof.dirichlet_phi, atol=1e-10)


def test_profiles_threaded_match(hedgehog24):
    p, dom, u = hedgehog24
    rhos = profile_grid(dom.h, 0.5)
    centers = [[0, 0, 0], [0.2, 0, 0], [0, -0.25, 0.1]]
    seq = compute_profiles(u, 0.1, p, centers, rhos, threads=1)
    par = compute_profiles(u, 0.1, p, centers, rhos, threads=3)
    for a, b in zip(seq, par):
        assert np.array_equal(a.phi, b.phi)
        assert a.center_id == b.center_id


# --- monotonicity margins ------------------------------------------------------------

def synthetic_profile(rhos, phi):
    return CenterProfile(center=np.zeros(3), center_id=0, rhos=rhos,
                         phi=np.asarray(phi, dtype=float),
                         dirichlet_phi=np.asarray(phi, dtype=float))


def test_margins_match_hand_computation():
    rhos = profile_grid(0.01, 0.3)
    phi = 0.5 * rhos  # linear profile
    prof = synthetic_profile(rhos, phi)
    K = 0.7
    rr, mm = monotonicity_margins(prof, K)
    psi = 2 * K * rhos + phi
    # centered differences on the geometric grid, then the two-scale deficit
    for r, m in zip(rr, mm):
        i = int(np.argmin(np.abs(rhos - r)))
        dpsi = (psi[i + 1] - psi[i - 1]) / (rhos[i + 1] - rhos[i - 1])
        expect = dpsi - K * (1.0 - psi[i + 8])
        assert abs(m - expect) <= 1e-12


def test_margin_monotone_in_K():
    rhos = profile_grid(0.01, 0.3)
    prof = synthetic_profile(rhos, 2.0 - 1.5 * rhos)  # decreasing profile
    _, m0 = monotonicity_margins(prof, 0.0)
    _, m1 = monotonicity_margins(prof, 1.0)
    assert np.all(m1 >= m0)


def test_monotonicity_check_flat_profile_passes():
    rhos = profile_grid(0.01, 0.3)
    prof = synthetic_profile(rhos, np.full_like(rhos, 4.0 * math.pi))
    rep = monotonicity_check([prof], K=0.0, tol=1e-3)
    assert rep.ok
    assert rep.worst_margin >= -1e-3


def test_fit_picks_first_passing_K():
    rhos = profile_grid(0.01, 0.3)
    # gently decreasing profile: fails at K=0, passes at modest K
    prof = synthetic_profile(rhos, 1.0 - 0.05 * rhos)
    fit = fit_monotonicity_constant([[prof]], tol=1e-3)
    assert not fit.capped
    grid = default_constant_grid()
    k_idx = fit.grid_index
    assert math.isclose(fit.value, grid[k_idx])
    assert monotonicity_check([prof], fit.value, tol=1e-3).ok
    if k_idx > 0:
        assert not monotonicity_check([prof], grid[k_idx - 1], tol=1e-3).ok


def test_fit_caps_on_steep_decay():
    # slope so steep that even the top of the constant grid cannot absorb it
    rhos = profile_grid(0.01, 0.3)
    prof = synthetic_profile(rhos, 200.0 - 2500.0 * rhos)
    fit = fit_monotonicity_constant([[prof]], tol=1e-3)
    assert fit.capped
    grid = default_constant_grid()
    assert fit.value == grid[-1]


def test_constant_grid_shape():
    grid = default_constant_grid()
    assert grid[0] == 0.0
    pos = grid[1:]
    assert np.allclose(pos[1:] / pos[:-1], math.sqrt(10.0), rtol=1e-12)
    assert pos[0] == pytest.approx(1e-2)
    assert pos[-1] == pytest.approx(1e3)


# --- stress tensor ---------------------------------------------------------------------

def test_stress_constant_field_conserved(hedgehog24):
    p, dom, _ = hedgehog24
    f = constant_field(dom, [1.0, 0.0, 0.0])
    rep = stress_divergence_report(f, 0.2, p)
    assert rep.div_sup <= 1e-12
    assert rep.div_l2 <= 1e-12


def test_stress_tensor_symmetric_and_traced(hedgehog24):
    p, dom, u = hedgehog24
    eps = 0.2
    T = stress_tensor(u, eps, p)
    assert np.allclose(T, np.swapaxes(T, -1, -2))
    from relaxlab.discretization import gradient_components_field
    # trace identity against the same centered gradient the tensor uses
    comps = gradient_components_field(u)
    ge = sum(np.sum(c * c, axis=-1) for c in comps)
    e = diag.energy_density(u, eps, p)
    tr = np.trace(T, axis1=-2, axis2=-1)
    expect = ge - 3.0 * e
    assert np.allclose(tr[dom.interior], expect[dom.interior], atol=1e-10)


# --- bochner -----------------------------------------------------------------------------

def test_bochner_zero_on_constant(hedgehog24):
    p, dom, _ = hedgehog24
    f = constant_field(dom, [0.0, 1.0, 0.0])
    rep = bochner_residual(f, 0.2, p)
    assert not rep.flagged
    assert rep.fitted_C == 0.0


def test_bochner_collar_limits_gate(hedgehog24):
    p, dom, u = hedgehog24
    full = bochner_residual(u, 0.2, p, collar=0.0)
    collared = bochner_residual(u, 0.2, p, collar=0.2)
    assert collared.qualifying_nodes < full.qualifying_nodes
    assert collared.fitted_C <= full.fitted_C + 1e-12


def test_bochner_empty_gate_flagged(hedgehog24):
    p, dom, u = hedgehog24
    rep = bochner_residual(u, 0.2, p, collar=10.0)
    assert rep.flagged
    assert rep.qualifying_nodes == 0


# --- singular set ----------------------------------------------------------------------

def test_singular_set_finds_hedgehog_core(hedgehog24):
    p, dom, u = hedgehog24
    rep = singular_set_estimate(u, p.manifold, threshold=6.0, scale=0.2)
    assert rep.component_count == 1
    c = np.asarray(rep.component_centroids[0])
    assert np.linalg.norm(c) <= 0.1


def test_singular_set_empty_for_constant(hedgehog24):
    p, dom, _ = hedgehog24
    f = constant_field(dom, [1.0, 0.0, 0.0])
    rep = singular_set_estimate(f, p.manifold, threshold=6.0, scale=0.2)
    assert rep.empty
    assert rep.component_count == 0


def test_singular_set_requires_manifold_values(hedgehog24):
    p, dom, _ = hedgehog24
    f = constant_field(dom, [0.5, 0.0, 0.0])
    with pytest.raises(DiagnosticsError):
        singular_set_estimate(f, p.manifold, threshold=6.0, scale=0.2)


def test_singular_set_infinite_threshold(hedgehog24):
    p, dom, u = hedgehog24
    rep = singular_set_estimate(u, p.manifold, threshold=math.inf, scale=0.2)
    assert rep.empty


# --- masks -------------------------------------------------------------------------------

def test_annulus_mask(hedgehog24):
    _, dom, _ = hedgehog24
    m = annulus_mask(dom, 0.3, 0.8)
    pts = dom.node_points()
    rad = np.linalg.norm(pts, axis=-1)
    sel = rad[m]
    assert np.all(sel >= 0.3 - 1e-12) and np.all(sel <= 0.8 + 1e-12)
    assert not np.any(m & dom.exterior)


def test_exclusion_mask(hedgehog24):
    _, dom, _ = hedgehog24
    center_nodes = np.argwhere(
        np.linalg.norm(dom.node_points(), axis=-1) <= 1e-12)
    masked = exclusion_mask(dom, center_nodes, margin=0.3)
    rad = np.linalg.norm(dom.node_points(), axis=-1)
    assert not np.any(masked & (rad < 0.3 - 1e-12))
    assert np.any(masked)


# --- convergence profile --------------------------------------------------------------

def test_uniform_convergence_profile_orders(hedgehog24):
    p, dom, u = hedgehog24
    rng = np.random.default_rng(0)
    noise = rng.standard_normal(u.values.shape)
    noise[dom.exterior] = 0.0
    stages = []
    deltas = [0.3, 0.1, 0.02]
    for eps, d in zip([0.4, 0.2, 0.1], deltas):
        v = u.copy()
        v.values = u.values + d * noise
        stages.append((eps, v))
    mask = annulus_mask(dom, 0.2, 0.9)
    out = uniform_convergence_profile(stages, u, mask)
    sups = [s for _, s in out]
    scale = sups[0] / deltas[0]
    assert np.allclose(sups, [d * scale for d in deltas], rtol=1e-9)
    assert sups[0] > sups[1] > sups[2]


# --- boundary gradients -----------------------------------------------------------------

def test_boundary_gradient_hedgehog(hedgehog24):
    p, dom, u = hedgehog24
    rep = boundary_gradient_report(u, 0.2, p)
    # boundary values are exactly on the sphere
    assert rep.dist_sup_boundary <= 1e-12
    # |grad u| = sqrt(2)/|x| for the unit hedgehog; one-sided stencils on a
    # staircase boundary stay within a factor ~2
    assert 0.8 <= rep.grad_sup <= 3.0


# --- scale propagation ------------------------------------------------------------------

def test_propagation_flat_profile_ok():
    rhos = profile_grid(0.01, 0.6)
    prof = synthetic_profile(rhos, np.full_like(rhos, 1.0))
    rep = scale_propagation_check([prof], K=0.0, rho0=0.45, alpha_cap=10.0)
    assert rep.ok
    assert rep.qualifying_centers == 1


def test_distance_to_manifold_matches(hedgehog24):
    p, dom, u = hedgehog24
    v = u.copy()
    v.values[dom.inside] *= 1.25
    d = distance_to_manifold(v, p.manifold)
    assert np.allclose(d[dom.inside], 0.25, atol=1e-12)
