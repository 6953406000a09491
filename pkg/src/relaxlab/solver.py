"""Energy minimization on classified grids.

The discrete functional is the cell-weighted sum of the nodewise energy
density (inside-edge Dirichlet part plus nodal potential part), so its
derivative with respect to interior node values is available in closed form.
Boundary nodes are pinned and never updated.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .discretization import (Field, BoundaryData, DomainSpec,
                             energy_density_nodes, laplacian_field)

__all__ = [
    "SolverConfig",
    "EpsSchedule",
    "ConvergenceRecord",
    "SolverDivergedError",
    "TubeEscapeError",
    "ContinuationError",
    "energy",
    "energy_parts",
    "energy_gradient",
    "minimize",
    "ContinuationStage",
    "continuation",
    "harmonic_interpolation",
    "tube_project_interior",
    "initial_guess",
    "harmonic_map_minimize",
]


class SolverDivergedError(RuntimeError):
    """Energy became NaN or infinite and backtracking could not recover."""


class TubeEscapeError(RuntimeError):
    """A retraction step left the manifold tube even at the smallest step size."""


class ContinuationError(RuntimeError):
    def __init__(self, stage: int, eps: float, cause: Exception):
        super().__init__(f"continuation failed at stage {stage} (eps={eps:g}): {cause}")
        self.stage = stage
        self.eps = eps
        self.cause = cause


@dataclass
class SolverConfig:
    method: str = "bb"              # "bb" or "preconditioned"
    max_iters: int = 50_000
    grad_tol: float = 1e-6          # sup-norm of the projected gradient per unit volume
    step_min: float = 1e-14
    step_max: float = 1.0
    max_backtracks: int = 60
    seed: int = 0

    def validate(self) -> None:
        if self.method not in ("bb", "preconditioned"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if self.max_iters < 1 or self.grad_tol <= 0:
            raise ValueError("max_iters must be >= 1 and grad_tol positive")
        if not (0 < self.step_min < self.step_max):
            raise ValueError("need 0 < step_min < step_max")


@dataclass
class EpsSchedule:
    eps_values: Sequence[float]
    warm_start: bool = True

    def __post_init__(self):
        vals = [float(e) for e in self.eps_values]
        if not vals:
            raise ValueError("schedule must contain at least one eps")
        if any(e <= 0 for e in vals):
            raise ValueError("eps values must be positive")
        if any(b >= a for a, b in zip(vals, vals[1:])):
            raise ValueError("eps values must be strictly decreasing")
        self.eps_values = vals


@dataclass
class ConvergenceRecord:
    iterations: int = 0
    converged: bool = False
    grad_sup: float = math.inf
    pde_residual_sup: float = math.inf
    wall_time: float = 0.0
    energy_trace: list = dc_field(default_factory=list)
    dirichlet_trace: list = dc_field(default_factory=list)
    potential_trace: list = dc_field(default_factory=list)
    grad_sup_trace: list = dc_field(default_factory=list)
    backtracks: int = 0
    flags: list = dc_field(default_factory=list)

    @property
    def final_energy(self) -> float:
        return self.energy_trace[-1] if self.energy_trace else math.nan

    def trace_rows(self):
        for i in range(len(self.energy_trace)):
            yield (i, self.energy_trace[i], self.dirichlet_trace[i],
                   self.potential_trace[i], self.grad_sup_trace[i],
                   self.grad_sup_trace[i])


# ---------------------------------------------------------------------------
# Discrete energy and its exact derivative
# ---------------------------------------------------------------------------

def energy_parts(u: Field, eps: float, potential) -> tuple[float, float]:
    """(Dirichlet part, potential part) of the discrete energy."""
    dom = u.domain
    dir_d, pot_d = energy_density_nodes(u, eps, potential, split=True)
    vol = dom.h ** dom.n
    return float(np.sum(dir_d) * vol), float(np.sum(pot_d) * vol)


def energy(u: Field, eps: float, potential) -> float:
    a, b = energy_parts(u, eps, potential)
    return a + b


def _residual(u: Field, eps: float, potential) -> np.ndarray:
    """Per-unit-volume gradient -lap u + grad f(u)/eps^2 on interior nodes."""
    dom = u.domain
    r = -laplacian_field(u)
    gf = np.asarray(potential.gradient(u.values), dtype=float)
    r[dom.interior] += gf[dom.interior] / eps ** 2
    r[~dom.interior] = 0.0
    return r


def energy_gradient(u: Field, eps: float, potential) -> np.ndarray:
    """Exact derivative of :func:`energy` with respect to interior node values.

    Shaped like the field values; zero at boundary and exterior nodes.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    dom = u.domain
    return _residual(u, eps, potential) * dom.h ** dom.n


def _sup_node_norm(r: np.ndarray) -> float:
    return float(np.sqrt(np.max(np.sum(r * r, axis=-1))))


# ---------------------------------------------------------------------------
# Barzilai-Borwein descent with a monotone backtracking safeguard
# ---------------------------------------------------------------------------

def _jacobi_diagonal(dom: DomainSpec, eps: float, potential) -> float:
    # scalar curvature estimate used for the first step and for preconditioning
    return 2.0 * dom.n / dom.h ** 2 + 8.0 / eps ** 2


# iterations without a 0.1% drop in the gradient sup-norm before giving up;
# past this the iterates sit at the float-resolution floor of the energy
_STALL_WINDOW = 400


def minimize(u0: Field, eps: float, potential,
             config: Optional[SolverConfig] = None) -> tuple[Field, ConvergenceRecord]:
    """Minimize the relaxed energy over interior node values.

    Spectral (Barzilai-Borwein) steps, clamped to [step_min, step_max], with
    step halving until the energy does not increase; accepted energies are
    non-increasing.  Stops when the per-unit-volume gradient sup-norm drops
    below ``grad_tol``.
    """
    cfg = config or SolverConfig()
    cfg.validate()
    if eps <= 0:
        raise ValueError("eps must be positive")
    t0 = time.perf_counter()
    dom = u0.domain
    u = u0.copy()
    rec = ConvergenceRecord()

    e_dir, e_pot = energy_parts(u, eps, potential)
    e_cur = e_dir + e_pot
    if not math.isfinite(e_cur):
        raise SolverDivergedError(f"initial energy is {e_cur}")
    r = _residual(u, eps, potential)
    gsup = _sup_node_norm(r)
    rec.energy_trace.append(e_cur)
    rec.dirichlet_trace.append(e_dir)
    rec.potential_trace.append(e_pot)
    rec.grad_sup_trace.append(gsup)

    tau0 = 1.0 / _jacobi_diagonal(dom, eps, potential)
    tau0 = min(max(tau0, cfg.step_min), cfg.step_max)
    tau = tau0
    precond = cfg.method == "preconditioned"
    r_prev = None
    step_prev = None
    best_gsup = gsup
    since_best = 0

    it = 0
    while gsup > cfg.grad_tol and it < cfg.max_iters:
        it += 1
        if r_prev is not None and not precond:
            y = r - r_prev
            sy = float(np.sum(step_prev * y))
            ss = float(np.sum(step_prev * step_prev))
            if sy > 1e-300 and ss > 0:
                tau = ss / sy
            else:
                tau = tau0
            # a ratio outside the trust interval means the curvature signal
            # is noise (near-converged iterates); the boundary value would
            # just trigger a backtracking ladder ending at the edge of
            # stability, so take the safe diagonal step instead
            if not (cfg.step_min <= tau <= cfg.step_max):
                tau = tau0
        elif precond:
            tau = tau0

        accepted = False
        e_new = math.nan
        for bt in range(cfg.max_backtracks + 1):
            trial = u.values - tau * r
            u_try = Field(dom, u.k, trial)
            # Field() copies and zeroes exterior; boundary rows in trial are
            # untouched because r vanishes there
            ed, ep = energy_parts(u_try, eps, potential)
            e_new = ed + ep
            if math.isfinite(e_new) and e_new <= e_cur:
                accepted = True
                break
            tau *= 0.5
            rec.backtracks += 1
            if tau < cfg.step_min / 4:
                break
        if not accepted:
            if not math.isfinite(e_new):
                raise SolverDivergedError(
                    f"energy {e_new} after {rec.backtracks} backtracks at iteration {it}")
            rec.flags.append("stalled")
            break

        step_prev = u_try.values - u.values
        u = u_try
        e_cur, e_dir, e_pot = e_new, ed, ep
        r_prev = r
        r = _residual(u, eps, potential)
        gsup = _sup_node_norm(r)
        rec.energy_trace.append(e_cur)
        rec.dirichlet_trace.append(e_dir)
        rec.potential_trace.append(e_pot)
        rec.grad_sup_trace.append(gsup)
        if gsup < best_gsup * 0.999:
            best_gsup = gsup
            since_best = 0
        else:
            since_best += 1
            if since_best >= _STALL_WINDOW:
                rec.flags.append("plateau")
                break

    rec.iterations = it
    rec.grad_sup = gsup
    rec.pde_residual_sup = gsup
    rec.converged = gsup <= cfg.grad_tol
    if not rec.converged and it >= cfg.max_iters:
        rec.flags.append("max_iters")
    rec.wall_time = time.perf_counter() - t0
    return u, rec


# ---------------------------------------------------------------------------
# Continuation in eps with warm starts
# ---------------------------------------------------------------------------

@dataclass
class ContinuationStage:
    eps: float
    field: Field
    record: ConvergenceRecord
    dirichlet_part: float
    potential_part: float


def continuation(u0: Field, schedule: EpsSchedule, potential,
                 config: Optional[SolverConfig] = None,
                 cold_start_fn: Optional[Callable[[float], Field]] = None,
                 progress: Optional[Callable[[int, float, ConvergenceRecord], None]] = None,
                 ) -> List[ContinuationStage]:
    """Minimize along a decreasing eps schedule.

    Warm starts reuse the previous minimizer; with ``warm_start=False`` each
    stage restarts from ``cold_start_fn(eps)`` (or from ``u0``).  Solver
    failures are re-raised with the stage index attached.
    """
    stages: List[ContinuationStage] = []
    current = u0
    for i, eps in enumerate(schedule.eps_values):
        if i > 0 and not schedule.warm_start:
            current = cold_start_fn(eps) if cold_start_fn is not None else u0
        try:
            u_min, rec = minimize(current, eps, potential, config)
        except (SolverDivergedError, ValueError) as exc:
            raise ContinuationError(i, eps, exc) from exc
        e_dir, e_pot = energy_parts(u_min, eps, potential)
        stages.append(ContinuationStage(eps, u_min, rec, e_dir, e_pot))
        if progress is not None:
            progress(i, eps, rec)
        current = u_min
    return stages


# ---------------------------------------------------------------------------
# Harmonic interpolation (componentwise Laplace solve) for initial guesses
# ---------------------------------------------------------------------------

def harmonic_interpolation(domain: DomainSpec, bdata: BoundaryData,
                           tol: float = 1e-10, max_iters: Optional[int] = None) -> Field:
    """Componentwise discrete-harmonic extension of the boundary data.

    Conjugate gradients on the interior unknowns; deterministic.
    """
    k = bdata.k
    bc = Field(domain, k)
    bdata.apply(bc)

    interior = domain.interior
    h2 = domain.h ** 2

    def neighbor_sum(v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v)
        core = tuple(slice(1, -1) for _ in range(domain.n))
        acc = np.zeros_like(v[core])
        for d in range(domain.n):
            sl_p = list(core); sl_p[d] = slice(2, None)
            sl_m = list(core); sl_m[d] = slice(0, -2)
            acc += v[tuple(sl_p)] + v[tuple(sl_m)]
        out[core] = acc
        return out

    def apply_op(x: np.ndarray) -> np.ndarray:
        # x supported on interior; returns (-lap x) restricted to interior
        out = (2.0 * domain.n * x - neighbor_sum(x)) / h2
        out[~interior] = 0.0
        return out

    b = neighbor_sum(bc.values) / h2
    b[~interior] = 0.0

    x = np.zeros_like(bc.values)
    r = b - apply_op(x)
    p = r.copy()
    rs = float(np.sum(r * r))
    b_norm = math.sqrt(float(np.sum(b * b))) or 1.0
    limit = max_iters or 20 * max(domain.shape)
    for _ in range(limit):
        if math.sqrt(rs) <= tol * b_norm:
            break
        Ap = apply_op(p)
        alpha = rs / float(np.sum(p * Ap))
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(np.sum(r * r))
        p = r + (rs_new / rs) * p
        rs = rs_new

    out = bc
    out.values[interior] = x[interior]
    return out


def tube_project_interior(u: Field, manifold) -> Field:
    """Retract interior values that lie inside the manifold tube; leave the rest."""
    out = u.copy()
    interior = u.domain.interior
    vals = out.values[interior]
    proj, ok = manifold.project_where_possible(vals)
    out.values[interior] = np.where(ok[:, None], proj, vals)
    return out


def initial_guess(domain: DomainSpec, bdata: BoundaryData, potential) -> Field:
    """Harmonic interpolation of the boundary data, retracted where possible."""
    u = harmonic_interpolation(domain, bdata)
    return tube_project_interior(u, potential.manifold)


# ---------------------------------------------------------------------------
# Manifold-constrained Dirichlet minimization (projected gradient descent)
# ---------------------------------------------------------------------------

def harmonic_map_minimize(u0: Field, manifold,
                          config: Optional[SolverConfig] = None,
                          ) -> tuple[Field, ConvergenceRecord]:
    """Minimize the Dirichlet energy over manifold-valued fields.

    Projected gradient descent with spectral steps and nodewise retraction.
    Requires the initial interior values to lie inside the manifold tube;
    a step whose trial point escapes the tube is halved, and more than 30
    consecutive halvings abort the run.
    """
    cfg = config or SolverConfig()
    cfg.validate()
    t0 = time.perf_counter()
    dom = u0.domain
    interior = dom.interior
    rec = ConvergenceRecord()

    vals0 = u0.values[interior]
    dist0 = manifold.distance(vals0)
    if np.any(dist0 >= manifold.tubular_radius):
        raise ValueError("initial guess leaves the manifold tube; retract it first")
    u = u0.copy()
    u.values[interior] = manifold.project(vals0)

    def dirichlet(fld: Field) -> float:
        from .discretization import gradient_energy_nodes
        return float(np.sum(gradient_energy_nodes(fld)) * 0.5 * dom.h ** dom.n)

    def tangent_residual(fld: Field) -> np.ndarray:
        r = -laplacian_field(fld)
        vals = fld.values[interior]
        P = manifold.tangent_projector(vals)
        r_int = np.einsum("...ij,...j->...i", P, r[interior])
        out = np.zeros_like(r)
        out[interior] = r_int
        return out

    e_cur = dirichlet(u)
    r = tangent_residual(u)
    gsup = _sup_node_norm(r)
    rec.energy_trace.append(e_cur)
    rec.dirichlet_trace.append(e_cur)
    rec.potential_trace.append(0.0)
    rec.grad_sup_trace.append(gsup)

    tau0 = dom.h ** 2 / (4.0 * dom.n)
    tau0 = min(max(tau0, cfg.step_min), cfg.step_max)
    tau = tau0
    r_prev = None
    step_prev = None
    best_gsup = gsup
    since_best = 0
    it = 0
    while gsup > cfg.grad_tol and it < cfg.max_iters:
        it += 1
        if r_prev is not None:
            y = r - r_prev
            sy = float(np.sum(step_prev * y))
            ss = float(np.sum(step_prev * step_prev))
            tau = ss / sy if (sy > 1e-300 and ss > 0) else tau0
            # see minimize(): out-of-range ratios are noise, not information
            if not (cfg.step_min <= tau <= cfg.step_max):
                tau = tau0

        tube_halvings = 0
        backtracks = 0
        accepted = False
        while True:
            trial = u.values[interior] - tau * r[interior]
            dist = manifold.distance(trial)
            if np.all(dist < manifold.tubular_radius):
                proj = manifold.project(trial)
                u_try = u.copy()
                u_try.values[interior] = proj
                e_new = dirichlet(u_try)
                if math.isfinite(e_new) and e_new <= e_cur:
                    accepted = True
                    break
                backtracks += 1
                if backtracks > cfg.max_backtracks:
                    break
            else:
                tube_halvings += 1
                if tube_halvings > 30:
                    raise TubeEscapeError(
                        f"step left the tube after 30 halvings at iteration {it}")
            tau *= 0.5
        if not accepted:
            rec.flags.append("stalled")
            break
        rec.backtracks += backtracks + tube_halvings

        step_prev = u_try.values - u.values
        u = u_try
        e_cur = e_new
        r_prev = r
        r = tangent_residual(u)
        gsup = _sup_node_norm(r)
        rec.energy_trace.append(e_cur)
        rec.dirichlet_trace.append(e_cur)
        rec.potential_trace.append(0.0)
        rec.grad_sup_trace.append(gsup)
        if gsup < best_gsup * 0.999:
            best_gsup = gsup
            since_best = 0
        else:
            since_best += 1
            if since_best >= _STALL_WINDOW:
                rec.flags.append("plateau")
                break

    rec.iterations = it
    rec.grad_sup = gsup
    rec.pde_residual_sup = gsup
    rec.converged = gsup <= cfg.grad_tol
    if not rec.converged and it >= cfg.max_iters:
        rec.flags.append("max_iters")
    rec.wall_time = time.perf_counter() - t0
    return u, rec
