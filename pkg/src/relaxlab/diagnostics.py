"""Diagnostics for the vanishing-relaxation limit.

Everything here measures a minimizer (or a family of minimizers along an
eps schedule) against the structural estimates that control its limit:
renormalized energy profiles and their monotonicity margins, stress-energy
conservation, the interior second-order inequality for the energy density,
boundary gradient bounds, and uniform convergence away from the estimated
singular set.  All fitted constants are empirical artifacts of a run; none
are computed from closed-form bounds.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .discretization import (Field, DomainSpec, ball_energy, ball_cell_fractions,
                             energy_density_nodes, gradient_components_field,
                             laplacian_field, boundary_normal_derivative,
                             _gradient_with_flags)

__all__ = [
    "DiagnosticsError",
    "DiagnosticsReport",
    "energy_density",
    "profile_grid",
    "CenterProfile",
    "renormalized_profile",
    "compute_profiles",
    "monotonicity_margins",
    "MonotonicityReport",
    "monotonicity_check",
    "KFit",
    "fit_monotonicity_constant",
    "default_constant_grid",
    "stress_tensor",
    "StressReport",
    "stress_divergence_report",
    "BochnerReport",
    "bochner_residual",
    "SingularSetReport",
    "singular_set_estimate",
    "annulus_mask",
    "exclusion_mask",
    "uniform_convergence_profile",
    "BoundaryGradientReport",
    "boundary_gradient_report",
    "small_energy_witness",
    "WitnessReport",
    "scale_propagation_check",
    "PropagationReport",
    "distance_to_manifold",
]

# profile radii grow by 2^(1/8), so doubling a radius lands exactly eight
# grid indices later
_PROFILE_RATIO_STEPS = 8


class DiagnosticsError(RuntimeError):
    """A diagnostic's preconditions failed on the supplied data."""


def distance_to_manifold(u: Field, manifold) -> np.ndarray:
    """Nodewise distance of field values to the vacuum manifold (inside nodes)."""
    out = np.zeros(u.domain.shape)
    inside = u.domain.inside
    out[inside] = manifold.distance(u.values[inside])
    return out


def energy_density(u: Field, eps: float, potential) -> np.ndarray:
    """Nodewise energy density; integrates back to the discrete energy exactly."""
    return energy_density_nodes(u, eps, potential)


# ---------------------------------------------------------------------------
# Renormalized energy profiles
# ---------------------------------------------------------------------------

def profile_grid(h: float, rho_max: float, rho_min: Optional[float] = None) -> np.ndarray:
    """Geometric radius grid with ratio 2^(1/8), extended up to 2 * rho_max.

    The smallest resolvable radius defaults to 4 h.  The returned grid always
    contains at least one doubling (so at least one margin is computable).
    """
    if rho_min is None:
        rho_min = 4.0 * h
    if rho_min <= 2.0 * h:
        raise DiagnosticsError(f"rho_min {rho_min:g} is unresolvable at h={h:g}")
    if rho_max < rho_min:
        raise DiagnosticsError("rho_max must be at least rho_min")
    q = 2.0 ** (1.0 / _PROFILE_RATIO_STEPS)
    count = int(math.ceil(math.log(2.0 * rho_max / rho_min) / math.log(q))) + 1
    count = max(count, _PROFILE_RATIO_STEPS + 2)
    return rho_min * q ** np.arange(count)


@dataclass
class CenterProfile:
    """phi(rho) = rho^(2-n) * energy(ball) for one center, on a geometric grid."""
    center: np.ndarray
    center_id: int
    rhos: np.ndarray
    phi: np.ndarray
    dirichlet_phi: np.ndarray

    def psi(self, K: float) -> np.ndarray:
        return 2.0 * K * self.rhos + self.phi


def renormalized_profile(u: Field, eps: float, potential, center,
                         rhos: np.ndarray, density=None) -> CenterProfile:
    """Profile of the scaled ball energy around one center.

    Radii must be resolvable (> 2h); the ball integrals reuse a precomputed
    nodewise density when supplied.
    """
    dom = u.domain
    center = np.asarray(center, dtype=float)
    rhos = np.asarray(rhos, dtype=float)
    if np.any(rhos <= 2.0 * dom.h):
        raise DiagnosticsError("profile radii must exceed 2h")
    if density is None:
        density = energy_density_nodes(u, eps, potential, split=True)
    phi = np.empty_like(rhos)
    dphi = np.empty_like(rhos)
    for i, rho in enumerate(rhos):
        d_part, p_part = ball_energy(u, eps, potential, center, rho,
                                     split=True, density=density)
        scale = rho ** (2 - dom.n)
        phi[i] = scale * (d_part + p_part)
        dphi[i] = scale * d_part
    return CenterProfile(center=center, center_id=-1, rhos=rhos,
                         phi=phi, dirichlet_phi=dphi)


def compute_profiles(u: Field, eps: float, potential, centers,
                     rhos: np.ndarray, threads: int = 1) -> list:
    """Profiles for many centers, sharing one density evaluation."""
    density = energy_density_nodes(u, eps, potential, split=True)
    centers = [np.asarray(c, dtype=float) for c in centers]

    def one(idx_center):
        idx, c = idx_center
        prof = renormalized_profile(u, eps, potential, c, rhos, density=density)
        prof.center_id = idx
        return prof

    items = list(enumerate(centers))
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, items))
    return [one(it) for it in items]


# ---------------------------------------------------------------------------
# Monotonicity of psi(rho) = 2 K rho + phi(rho)
# ---------------------------------------------------------------------------

def monotonicity_margins(prof: CenterProfile, K: float):
    """Margins m(rho) = psi'(rho) - K (1 - psi(2 rho)) on the resolvable radii.

    psi' uses centered differences on the geometric grid; psi(2 rho) is read
    off exactly eight grid indices ahead.  Returns (rhos, margins).
    """
    rhos = prof.rhos
    psi = prof.psi(K)
    m = len(rhos)
    idx = np.arange(1, m - _PROFILE_RATIO_STEPS)
    idx = idx[idx + 1 < m]
    if len(idx) == 0:
        return np.empty(0), np.empty(0)
    dpsi = (psi[idx + 1] - psi[idx - 1]) / (rhos[idx + 1] - rhos[idx - 1])
    margins = dpsi - K * (1.0 - psi[idx + _PROFILE_RATIO_STEPS])
    return rhos[idx], margins


@dataclass
class MonotonicityReport:
    K: float
    tol: float
    violations: list
    worst_margin: float
    checked: int

    @property
    def ok(self) -> bool:
        return not self.violations


def monotonicity_check(profiles: Sequence[CenterProfile], K: float,
                       tol: float = 1e-3) -> MonotonicityReport:
    """Check the differential monotonicity inequality with constant K."""
    violations = []
    worst = math.inf
    checked = 0
    for prof in profiles:
        rr, mm = monotonicity_margins(prof, K)
        checked += len(mm)
        if len(mm):
            worst = min(worst, float(mm.min()))
        for rho, m in zip(rr, mm):
            if m < -tol:
                violations.append((prof.center_id, float(rho), float(m)))
    if checked == 0:
        raise DiagnosticsError("no resolvable radii to check monotonicity on")
    return MonotonicityReport(K=K, tol=tol, violations=violations,
                              worst_margin=worst, checked=checked)


def default_constant_grid() -> np.ndarray:
    """Logarithmic grid for the monotonicity constant: 0 then half-decades."""
    return np.concatenate(([0.0], 10.0 ** (np.arange(-2.0, 3.01, 0.5))))


@dataclass
class KFit:
    value: float
    grid: np.ndarray
    grid_index: int
    capped: bool
    worst_margin_at_zero: float

    def summary(self) -> dict:
        return {
            "K": self.value,
            "grid_index": self.grid_index,
            "grid_min_positive": float(self.grid[1]),
            "grid_factor": float(self.grid[2] / self.grid[1]),
            "capped": self.capped,
            "worst_margin_at_zero": self.worst_margin_at_zero,
        }


def fit_monotonicity_constant(profile_sets: Sequence[Sequence[CenterProfile]],
                              tol: float = 1e-3,
                              grid: Optional[np.ndarray] = None) -> KFit:
    """Smallest grid constant K making every margin >= -tol across all runs.

    The margin is monotone increasing in K, so an ascending scan finds the
    smallest admissible grid point.  A fit that exhausts the grid is capped
    and flagged.
    """
    if grid is None:
        grid = default_constant_grid()
    profiles = [p for run in profile_sets for p in run]
    if not profiles:
        raise DiagnosticsError("no profiles supplied")
    worst0 = math.inf
    for i, K in enumerate(grid):
        rep = monotonicity_check(profiles, float(K), tol)
        if i == 0:
            worst0 = rep.worst_margin
        if rep.ok:
            return KFit(value=float(K), grid=grid, grid_index=i, capped=False,
                        worst_margin_at_zero=worst0)
    return KFit(value=float(grid[-1]), grid=grid, grid_index=len(grid) - 1,
                capped=True, worst_margin_at_zero=worst0)


# ---------------------------------------------------------------------------
# Stress-energy tensor and its discrete divergence
# ---------------------------------------------------------------------------

def stress_tensor(u: Field, eps: float, potential) -> np.ndarray:
    """Stress tensor T_lj = d_l u . d_j u - e delta_lj at interior nodes."""
    dom = u.domain
    grads = gradient_components_field(u)
    e = energy_density_nodes(u, eps, potential)
    T = np.zeros(dom.shape + (dom.n, dom.n))
    for l in range(dom.n):
        for j in range(l, dom.n):
            Tij = np.sum(grads[l] * grads[j], axis=-1)
            if l == j:
                Tij = Tij - e
            T[..., l, j] = Tij
            T[..., j, l] = Tij
    T[~dom.interior] = 0.0
    return T


@dataclass
class StressReport:
    div_sup: float
    div_l2: float
    checked_nodes: int


def stress_divergence_report(u: Field, eps: float, potential) -> StressReport:
    """Sup and L2 norms of the discrete divergence of the stress tensor.

    The divergence is evaluated on interior nodes whose full stencil is
    interior, where central differences of T are trustworthy.
    """
    dom = u.domain
    T = stress_tensor(u, eps, potential)
    deep = dom.interior.copy()
    for d in range(dom.n):
        shifted_p = np.zeros_like(deep)
        shifted_m = np.zeros_like(deep)
        sl_c = [slice(1, -1)] * dom.n
        sl_p = list(sl_c); sl_p[d] = slice(2, None)
        sl_m = list(sl_c); sl_m[d] = slice(0, -2)
        shifted_p[tuple(sl_c)] = dom.interior[tuple(sl_p)]
        shifted_m[tuple(sl_c)] = dom.interior[tuple(sl_m)]
        deep &= shifted_p & shifted_m
    if not deep.any():
        raise DiagnosticsError("no nodes deep enough to take the stress divergence")
    div = np.zeros(dom.shape + (dom.n,))
    for j in range(dom.n):
        for l in range(dom.n):
            sl_c = [slice(1, -1)] * dom.n
            sl_p = list(sl_c); sl_p[l] = slice(2, None)
            sl_m = list(sl_c); sl_m[l] = slice(0, -2)
            div[tuple(sl_c) + (j,)] += (T[tuple(sl_p) + (l, j)]
                                        - T[tuple(sl_m) + (l, j)]) / (2.0 * dom.h)
    norms = np.linalg.norm(div[deep], axis=-1)
    return StressReport(div_sup=float(norms.max()),
                        div_l2=float(math.sqrt(np.sum(norms ** 2) * dom.h ** dom.n)),
                        checked_nodes=int(deep.sum()))


# ---------------------------------------------------------------------------
# Interior second-order inequality for the energy density
# ---------------------------------------------------------------------------

@dataclass
class BochnerReport:
    fitted_C: float
    quantiles: dict
    qualifying_nodes: int
    flagged: bool
    delta: float


def bochner_residual(u: Field, eps: float, potential,
                     delta: Optional[float] = None,
                     collar: float = 0.0) -> BochnerReport:
    """Fit the smallest C with -lap(e) <= C e^2 near the vacuum manifold.

    Qualifying nodes are interior nodes whose value lies within ``delta`` of
    the manifold and at least ``collar`` away from the domain boundary.  The
    collar matters on staircase boundaries, where the discrete Laplacian of
    the density is inconsistent within a few rings and its spurious maxima
    grow like h^-2 — keep it above ~3h or the fit tracks that artifact.
    The report carries the fitted constant and quantiles of the nodewise
    ratio; an empty qualifying set is flagged, not an error.
    """
    dom = u.domain
    if delta is None:
        delta = potential.manifold.tubular_radius
    e = energy_density_nodes(u, eps, potential)
    e_field = Field(dom, 1, e[..., None])
    neg_lap_e = -laplacian_field(e_field)[..., 0]
    dist = distance_to_manifold(u, potential.manifold)
    gate = dom.interior & (dist < delta)
    if collar > 0.0:
        gate &= dom.sdf(dom.node_points()) <= -collar
    count = int(gate.sum())
    if count == 0:
        return BochnerReport(fitted_C=0.0, quantiles={}, qualifying_nodes=0,
                             flagged=True, delta=delta)
    r = neg_lap_e[gate]
    ee = e[gate]
    # floor squared must stay a normal float
    floor = 1e-150
    ratio = r / np.maximum(ee, floor) ** 2
    pos = ratio[r > 0]
    fitted = float(pos.max()) if len(pos) else 0.0
    qs = {f"q{q}": float(np.quantile(ratio, q / 100.0)) for q in (50, 90, 99)}
    qs["max"] = float(ratio.max())
    return BochnerReport(fitted_C=fitted, quantiles=qs, qualifying_nodes=count,
                         flagged=False, delta=delta)


# ---------------------------------------------------------------------------
# Singular set estimate for the limiting map
# ---------------------------------------------------------------------------

@dataclass
class SingularSetReport:
    threshold: float
    scale: float
    node_indices: np.ndarray
    component_count: int
    component_sizes: list
    component_centroids: list

    @property
    def empty(self) -> bool:
        return len(self.node_indices) == 0

    def summary(self) -> dict:
        return {
            "threshold": self.threshold,
            "scale": self.scale,
            "flagged_nodes": int(len(self.node_indices)),
            "component_count": self.component_count,
            "component_sizes": self.component_sizes,
            "component_centroids": self.component_centroids,
        }


def singular_set_estimate(u_star: Field, manifold, threshold: float,
                          scale: float) -> SingularSetReport:
    """Nodes where the scaled local Dirichlet energy exceeds a threshold.

    Computes r^(2-n) * integral of the Dirichlet density over the ball of
    radius ``scale`` around every inside node (by convolution with a ball
    stencil) and flags exceedances; flagged nodes are grouped into grid
    connected components.
    """
    dom = u_star.domain
    if scale <= 2.0 * dom.h:
        raise DiagnosticsError("singular-set scale must exceed 2h")
    vals = u_star.values[dom.inside]
    if len(vals) and np.max(manifold.distance(vals)) > 1e-8:
        raise DiagnosticsError("singular set estimate expects a manifold-valued field")
    if not math.isfinite(threshold):
        empty = np.empty((0, dom.n), dtype=int)
        return SingularSetReport(threshold=threshold, scale=scale,
                                 node_indices=empty, component_count=0,
                                 component_sizes=[], component_centroids=[])
    from .discretization import gradient_energy_nodes
    density = 0.5 * gradient_energy_nodes(u_star) * dom.h ** dom.n
    reach = int(math.floor(scale / dom.h))
    rng = np.arange(-reach, reach + 1) * dom.h
    mesh = np.meshgrid(*([rng] * dom.n), indexing="ij")
    kernel = (sum(m * m for m in mesh) <= scale * scale).astype(float)
    local = ndimage.convolve(density, kernel, mode="constant", cval=0.0)
    phi_local = local * scale ** (2 - dom.n)
    flag = dom.inside & (phi_local > threshold)
    labels, ncomp = ndimage.label(flag)
    sizes = []
    centroids = []
    for c in range(1, ncomp + 1):
        idx = np.argwhere(labels == c)
        sizes.append(int(len(idx)))
        pts = np.stack([dom.axes[d][idx[:, d]] for d in range(dom.n)], axis=-1)
        centroids.append([float(x) for x in pts.mean(axis=0)])
    return SingularSetReport(threshold=threshold, scale=scale,
                             node_indices=np.argwhere(flag),
                             component_count=int(ncomp),
                             component_sizes=sizes,
                             component_centroids=centroids)


# ---------------------------------------------------------------------------
# Uniform convergence on compacts
# ---------------------------------------------------------------------------

def annulus_mask(domain: DomainSpec, r_in: float, r_out: float,
                 center=None) -> np.ndarray:
    """Inside nodes with r_in <= |x - center| <= r_out."""
    if center is None:
        center = 0.5 * (domain.lo + domain.hi)
    pts = domain.node_points()
    r = np.linalg.norm(pts - np.asarray(center, dtype=float), axis=-1)
    return domain.inside & (r >= r_in) & (r <= r_out)


def exclusion_mask(domain: DomainSpec, excluded_nodes: np.ndarray,
                   margin: float) -> np.ndarray:
    """Inside nodes farther than ``margin`` from every excluded node."""
    mask = domain.inside.copy()
    excluded_nodes = np.asarray(excluded_nodes)
    if excluded_nodes.size == 0:
        return mask
    pts = domain.node_points()
    ex_pts = np.stack([domain.axes[d][excluded_nodes[:, d]]
                       for d in range(domain.n)], axis=-1)
    flat = pts.reshape(-1, domain.n)
    keep = np.ones(len(flat), dtype=bool)
    # chunked distance test keeps memory bounded
    step = max(1, 2 ** 22 // max(len(ex_pts), 1))
    for s in range(0, len(flat), step):
        block = flat[s:s + step]
        d = np.min(np.linalg.norm(block[:, None, :] - ex_pts[None, :, :], axis=-1),
                   axis=1)
        keep[s:s + step] = d > margin
    return mask & keep.reshape(domain.shape)


def uniform_convergence_profile(stage_fields: Sequence[tuple[float, Field]],
                                u_star: Field, mask: np.ndarray) -> list:
    """Per-eps sup over the masked nodes of |u_eps - u_star|."""
    if not np.any(mask):
        raise DiagnosticsError("the requested compact contains no grid nodes")
    out = []
    for eps, fld in stage_fields:
        if fld.domain.shape != u_star.domain.shape:
            raise DiagnosticsError("all fields must share one grid")
        diff = np.linalg.norm(fld.values[mask] - u_star.values[mask], axis=-1)
        out.append((float(eps), float(diff.max())))
    return out


# ---------------------------------------------------------------------------
# Boundary gradient report
# ---------------------------------------------------------------------------

@dataclass
class BoundaryGradientReport:
    normal_sup: float
    tangential_sup: float
    grad_sup: float
    dist_sup_boundary: float
    dist_sup_near: float
    first_order_nodes: int


def boundary_gradient_report(u: Field, eps: float, potential) -> BoundaryGradientReport:
    """Suprema of boundary derivatives and manifold distances near the boundary.

    The normal derivative uses the one-sided second-order ray stencil; the
    tangential part projects per-axis one-sided stencils onto the boundary
    tangent plane.
    """
    dom = u.domain
    manifold = potential.manifold
    nsup = tsup = gsup = 0.0
    first_order = 0
    for row, node in enumerate(dom.boundary_indices):
        node_t = tuple(int(i) for i in node)
        try:
            dn, order = boundary_normal_derivative(u, node_t)
        except ValueError:
            first_order += 1
            continue
        if order < 2:
            first_order += 1
        G, orders = _gradient_with_flags(u, node_t)
        nu = dom.normals[row]
        P = np.eye(dom.n) - np.outer(nu, nu)
        Gt = G @ P
        tnorm = float(np.linalg.norm(Gt))
        nnorm = float(np.linalg.norm(dn))
        nsup = max(nsup, nnorm)
        tsup = max(tsup, tnorm)
        gsup = max(gsup, math.sqrt(tnorm ** 2 + nnorm ** 2))
    bvals = u.values[dom.boundary]
    dist_b = float(np.max(manifold.distance(bvals))) if len(bvals) else 0.0
    near = dom.inside & ~dom.boundary
    # nodes with a boundary neighbor
    shell = np.zeros(dom.shape, dtype=bool)
    for d in range(dom.n):
        for sgn in (1, -1):
            rolled = np.roll(dom.boundary, sgn, axis=d)
            # roll wraps around; wrapped entries come from the opposite face,
            # which is exterior-adjacent anyway and gets masked by `near`
            shell |= rolled
    near &= shell
    nvals = u.values[near]
    dist_n = float(np.max(manifold.distance(nvals))) if len(nvals) else 0.0
    return BoundaryGradientReport(normal_sup=nsup, tangential_sup=tsup,
                                  grad_sup=gsup, dist_sup_boundary=dist_b,
                                  dist_sup_near=max(dist_b, dist_n),
                                  first_order_nodes=first_order)


# ---------------------------------------------------------------------------
# Small-energy witness and scale propagation
# ---------------------------------------------------------------------------

@dataclass
class WitnessReport:
    radius: float
    quantile: float
    per_stage: list          # (eps, eta, C_fit, qualifying_count)
    stability_ratio: float

    @property
    def ok(self) -> bool:
        return math.isfinite(self.stability_ratio) and self.stability_ratio < 2.0


def small_energy_witness(stages, potential,
                         profiles_by_stage: Sequence[Sequence[CenterProfile]],
                         radius: float, quantile: float = 0.1) -> WitnessReport:
    """Interior-regularity witness: small profiles force small pointwise density.

    For each stage, centers whose profile sup over rho <= radius falls below
    the ``quantile`` level eta are tested for
        radius^2 * sup(density on the half ball) <= C (eta + radius^2),
    and the fitted C must stay within a factor 2 across stages.
    """
    per_stage = []
    for (eps, fld), profs in zip(stages, profiles_by_stage):
        dom = fld.domain
        density = energy_density_nodes(fld, eps, potential)
        stats = []
        for prof in profs:
            sel = prof.rhos <= radius
            if not np.any(sel):
                raise DiagnosticsError(
                    f"witness radius {radius:g} below the resolvable profile range")
            stats.append((float(np.max(prof.phi[sel])), prof))
        eta = float(np.quantile([s for s, _ in stats], quantile))
        C_fit = 0.0
        qualifying = 0
        pts = dom.node_points()
        for s, prof in stats:
            if s > eta:
                continue
            qualifying += 1
            ball = dom.inside & (np.linalg.norm(pts - prof.center, axis=-1)
                                 <= radius / 2.0)
            if not ball.any():
                continue
            sup_e = float(density[ball].max())
            C_fit = max(C_fit, radius ** 2 * sup_e / (eta + radius ** 2))
        per_stage.append((float(eps), eta, C_fit, qualifying))
    cs = [c for _, _, c, _ in per_stage if c > 0]
    if cs:
        ratio = max(cs) / min(cs)
    else:
        # all fitted constants are exactly zero (zero-energy run): stable
        ratio = 1.0
    return WitnessReport(radius=radius, quantile=quantile,
                         per_stage=per_stage, stability_ratio=ratio)


@dataclass
class DiagnosticsReport:
    """Per-run record of every monitored quantity.

    The heavy per-node arrays (final-stage energy density and manifold
    distance) stay in memory only; ``summary()`` projects the rest to a
    JSON-ready dict.
    """
    eps_values: list
    density_final: np.ndarray
    dist_final: np.ndarray
    profiles_by_stage: list
    k_fit: "KFit"
    monotonicity: "MonotonicityReport"
    stress: "StressReport"
    bochner_by_stage: list
    boundary_by_stage: list
    singular: "SingularSetReport"
    convergence: dict
    witness: "WitnessReport"
    propagation: "PropagationReport"

    def summary(self) -> dict:
        return {
            "convergence": {name: [[e, v] for e, v in vals]
                            for name, vals in self.convergence.items()},
            "fitted_K": self.k_fit.summary(),
            "monotonicity": {"tol": self.monotonicity.tol,
                             "checked": self.monotonicity.checked,
                             "worst_margin": self.monotonicity.worst_margin,
                             "violations": self.monotonicity.violations},
            "bochner": {"delta": self.bochner_by_stage[-1].delta,
                        "per_stage": [{"eps": e, "fitted_C": b.fitted_C,
                                       "qualifying_nodes": b.qualifying_nodes,
                                       "flagged": b.flagged,
                                       "quantiles": b.quantiles}
                                      for e, b in zip(self.eps_values,
                                                      self.bochner_by_stage)]},
            "stress": {"div_sup": self.stress.div_sup,
                       "div_l2": self.stress.div_l2,
                       "checked_nodes": self.stress.checked_nodes},
            "boundary_gradients": [{"eps": e, "grad_sup": b.grad_sup,
                                    "normal_sup": b.normal_sup,
                                    "tangential_sup": b.tangential_sup,
                                    "dist_sup_boundary": b.dist_sup_boundary,
                                    "dist_sup_near": b.dist_sup_near,
                                    "first_order_nodes": b.first_order_nodes}
                                   for e, b in zip(self.eps_values,
                                                   self.boundary_by_stage)],
            "singular_set": self.singular.summary(),
            "witness": {"radius": self.witness.radius,
                        "quantile": self.witness.quantile,
                        "per_stage": [{"eps": e, "eta": eta, "C_fit": c,
                                       "qualifying": q}
                                      for e, eta, c, q in self.witness.per_stage],
                        "stability_ratio": self.witness.stability_ratio,
                        "ok": self.witness.ok},
            "propagation": {"rho0": self.propagation.rho0,
                            "alpha_cap": self.propagation.alpha_cap,
                            "qualifying_centers": self.propagation.qualifying_centers,
                            "violations": self.propagation.violations,
                            "ok": self.propagation.ok},
        }


@dataclass
class PropagationReport:
    rho0: float
    alpha_cap: float
    K: float
    tested_centers: int
    qualifying_centers: int
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def scale_propagation_check(profiles: Sequence[CenterProfile], K: float,
                            rho0: float, alpha_cap: float,
                            tol: float = 1e-3) -> PropagationReport:
    """Smallness on a dyadic band [rho0, 2 rho0] propagates below it.

    Centers whose profile stays below ``alpha_cap`` on the band must satisfy
    phi(rho) <= alpha + 2 K rho0 + tol for every resolvable rho < rho0.
    """
    violations = []
    qualifying = 0
    for prof in profiles:
        band = (prof.rhos >= rho0) & (prof.rhos <= 2.0 * rho0)
        below = prof.rhos < rho0
        if not band.any() or not below.any():
            continue
        alpha = float(np.max(prof.phi[band]))
        if alpha > alpha_cap:
            continue
        qualifying += 1
        bound = alpha + 2.0 * K * rho0 + tol
        bad = below & (prof.phi > bound)
        for rho, val in zip(prof.rhos[bad], prof.phi[bad]):
            violations.append((prof.center_id, float(rho), float(val), bound))
    return PropagationReport(rho0=rho0, alpha_cap=alpha_cap, K=K,
                             tested_centers=len(profiles),
                             qualifying_centers=qualifying,
                             violations=violations)
