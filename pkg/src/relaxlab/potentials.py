"""Multi-well potentials, their vacuum manifolds, and tubular-neighborhood tools.

A potential here is a smooth nonnegative function on R^k whose zero set is a
compact smooth manifold (the vacuum manifold).  The solver only ever needs
values and gradients; the diagnostic machinery additionally uses Hessians,
nearest-point projections and the quadratic normal form of the potential
around its zero set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "OutsideTubeError",
    "VacuumManifold",
    "Potential",
    "make_ginzburg_landau",
    "make_landau_de_gennes",
    "normal_form",
    "NormalFormMatrix",
    "HypothesisReport",
    "verify_hypotheses",
    "golden_section_minimize",
]


class OutsideTubeError(ValueError):
    """A point fell outside the tubular neighborhood where projection is valid."""


def golden_section_minimize(fn, lo: float, hi: float, tol: float = 1e-12,
                            max_iter: int = 500) -> float:
    """Golden-section search for the minimizer of a unimodal scalar function.

    Returns the abscissa of the minimum of ``fn`` on [lo, hi] to within
    ``tol`` in argument.  Deterministic; no derivatives required.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


class VacuumManifold:
    """Compact zero set of a potential, with nearest-point projection.

    The projection is only trusted inside the tube of radius
    ``tubular_radius``; ``project`` enforces that, while ``distance`` is
    defined everywhere (built-in manifolds have globally valid formulas,
    user manifolds fall back to a cached dense sample).
    """

    def __init__(self, name: str, ambient_dim: int, intrinsic_dim: int,
                 tubular_radius: float,
                 project_raw: Callable[[np.ndarray], np.ndarray],
                 tangent_projector: Callable[[np.ndarray], np.ndarray],
                 sample: Callable[[np.random.Generator, int], np.ndarray],
                 distance_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None):
        self.name = name
        self.ambient_dim = int(ambient_dim)
        self.intrinsic_dim = int(intrinsic_dim)
        self.tubular_radius = float(tubular_radius)
        self._project_raw = project_raw
        self._tangent_projector = tangent_projector
        self._sample = sample
        self._distance_fn = distance_fn
        self._dense_sample: Optional[np.ndarray] = None

    # -- queries -----------------------------------------------------------

    def project(self, z: np.ndarray) -> np.ndarray:
        """Nearest point on the manifold.  Raises OutsideTubeError off the tube."""
        z = np.asarray(z, dtype=float)
        p = self._project_raw(z)
        d = np.linalg.norm(z - p, axis=-1)
        bad = ~(d < self.tubular_radius)
        if np.any(bad):
            worst = float(np.max(np.where(np.isfinite(d), d, np.inf)))
            raise OutsideTubeError(
                f"{int(np.count_nonzero(bad))} point(s) outside the tube of "
                f"radius {self.tubular_radius:g} around {self.name} "
                f"(worst distance {worst:g})")
        return p

    def project_where_possible(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project the points that lie inside the tube, pass the rest through.

        Returns (values, in_tube_mask).
        """
        z = np.asarray(z, dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = self._project_raw(z)
        d = np.linalg.norm(z - p, axis=-1)
        ok = np.isfinite(d) & (d < self.tubular_radius)
        out = np.where(ok[..., None], p, z)
        return out, ok

    def distance(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self._distance_fn is not None:
            return self._distance_fn(z)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = self._project_raw(z)
        d = np.linalg.norm(z - p, axis=-1)
        bad = ~np.isfinite(d)
        if np.any(bad):
            if self._dense_sample is None:
                rng = np.random.default_rng(0)
                self._dense_sample = self._sample(rng, 4096)
            zz = z[bad]
            dd = np.min(np.linalg.norm(zz[..., None, :] - self._dense_sample, axis=-1),
                        axis=-1)
            d = np.array(d)
            d[bad] = dd
        return d

    def in_tube(self, z: np.ndarray) -> np.ndarray:
        return self.distance(z) < self.tubular_radius

    def tangent_projector(self, z: np.ndarray) -> np.ndarray:
        """Orthogonal projector (..., k, k) onto the tangent space at project(z)."""
        return self._tangent_projector(np.asarray(z, dtype=float))

    def normal_projector(self, z: np.ndarray) -> np.ndarray:
        P = self.tangent_projector(z)
        eye = np.eye(self.ambient_dim)
        return eye - P

    def normal_basis(self, q: np.ndarray) -> np.ndarray:
        """Orthonormal basis (k, m) of the normal space at a manifold point."""
        Pn = self.normal_projector(q)
        w, v = np.linalg.eigh(Pn)
        cols = v[:, w > 0.5]
        m = self.ambient_dim - self.intrinsic_dim
        if cols.shape[1] != m:
            raise ValueError("degenerate normal projector, cannot extract basis")
        return cols

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self._sample(rng, int(count))


class Potential:
    """Smooth nonnegative potential with a compact vacuum manifold.

    The object is callable on arrays of shape (..., k); ``gradient`` accepts
    the same shapes.  ``hessian`` evaluates pointwise and returns (k, k).
    """

    def __init__(self, name: str, k: int,
                 value_fn: Callable[[np.ndarray], np.ndarray],
                 grad_fn: Callable[[np.ndarray], np.ndarray],
                 hess_fn: Callable[[np.ndarray], np.ndarray],
                 radial_growth_radius: float,
                 manifold: VacuumManifold,
                 params: Optional[dict] = None):
        if k < 1:
            raise ValueError("ambient dimension k must be >= 1")
        self.name = name
        self.k = int(k)
        self._value_fn = value_fn
        self._grad_fn = grad_fn
        self._hess_fn = hess_fn
        self.radial_growth_radius = float(radial_growth_radius)
        self.manifold = manifold
        self.params = dict(params or {})

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self._value_fn(np.asarray(z, dtype=float))

    def gradient(self, z: np.ndarray) -> np.ndarray:
        return self._grad_fn(np.asarray(z, dtype=float))

    def hessian(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.k,):
            raise ValueError(f"hessian expects a single point of shape ({self.k},)")
        return self._hess_fn(z)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Potential({self.name}, k={self.k})"


# ---------------------------------------------------------------------------
# Ginzburg-Landau family: f(z) = (1 - |z|^2)^2, vacuum manifold S^(k-1).
# ---------------------------------------------------------------------------

def make_ginzburg_landau(k: int) -> Potential:
    """Quartic sombrero potential on R^k with the unit sphere as zero set."""
    if k < 1:
        raise ValueError("k must be >= 1")

    def value(z):
        t = 1.0 - np.sum(z * z, axis=-1)
        return t * t

    def grad(z):
        t = 1.0 - np.sum(z * z, axis=-1)
        return -4.0 * t[..., None] * z

    def hess(z):
        t = 1.0 - float(np.dot(z, z))
        return -4.0 * t * np.eye(k) + 8.0 * np.outer(z, z)

    def project_raw(z):
        r = np.linalg.norm(z, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(r > 0, z / r, np.nan)

    def tangent_projector(z):
        r = np.linalg.norm(z, axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            m = z / r
        outer = m[..., :, None] * m[..., None, :]
        return np.eye(k) - outer

    def sphere_sample(rng, count):
        if k == 1:
            return rng.choice([-1.0, 1.0], size=(count, 1))
        v = rng.standard_normal((count, k))
        v /= np.linalg.norm(v, axis=-1, keepdims=True)
        return v

    def distance(z):
        return np.abs(np.linalg.norm(z, axis=-1) - 1.0)

    manifold = VacuumManifold(
        name=f"sphere_S{k - 1}",
        ambient_dim=k,
        intrinsic_dim=k - 1,
        tubular_radius=0.5,
        project_raw=project_raw,
        tangent_projector=tangent_projector,
        sample=sphere_sample,
        distance_fn=distance,
    )
    return Potential(
        name="ginzburg_landau", k=k,
        value_fn=value, grad_fn=grad, hess_fn=hess,
        radial_growth_radius=1.0,
        manifold=manifold,
        params={"k": k},
    )


# ---------------------------------------------------------------------------
# Landau-de Gennes bulk potential on symmetric traceless 3x3 matrices,
# represented in an orthonormal 5-component basis (Euclidean norm equals the
# Frobenius norm of the matrix).
# ---------------------------------------------------------------------------

def _qtensor_basis() -> np.ndarray:
    s2 = 1.0 / math.sqrt(2.0)
    B = np.zeros((5, 3, 3))
    B[0] = math.sqrt(1.5) * (np.diag([0.0, 0.0, 1.0]) - np.eye(3) / 3.0)
    B[1] = s2 * np.diag([1.0, -1.0, 0.0])
    B[2][0, 1] = B[2][1, 0] = s2
    B[3][0, 2] = B[3][2, 0] = s2
    B[4][1, 2] = B[4][2, 1] = s2
    return B

_QT_BASIS = _qtensor_basis()
# symmetrized basis products, used by the cubic-term Hessian
_QT_SYM = np.einsum("aij,bjk->abik", _QT_BASIS, _QT_BASIS)
_QT_SYM = _QT_SYM + np.transpose(_QT_SYM, (1, 0, 2, 3))


def qtensor_from_components(q: np.ndarray) -> np.ndarray:
    """Map 5-component vectors (..., 5) to symmetric traceless matrices (..., 3, 3)."""
    return np.einsum("...a,aij->...ij", np.asarray(q, dtype=float), _QT_BASIS)


def qtensor_to_components(Q: np.ndarray) -> np.ndarray:
    """Inverse of :func:`qtensor_from_components` (orthonormal basis)."""
    return np.einsum("...ij,aij->...a", np.asarray(Q, dtype=float), _QT_BASIS)


def uniaxial_qtensor(director: np.ndarray, s: float) -> np.ndarray:
    """Components of s (n x n - I/3) for unit director(s) n, shape (..., 3)."""
    n = np.asarray(director, dtype=float)
    Q = s * (n[..., :, None] * n[..., None, :] - np.eye(3) / 3.0)
    return qtensor_to_components(Q)


def make_landau_de_gennes(a: float, b2: float, c2: float) -> Potential:
    """Landau-de Gennes bulk potential in the nematic-ordered regime.

    Accepts a <= 0, b2 > 0, c2 > 0 only.  The potential is shifted by a
    constant so that its minimum over the uniaxial family (which is the
    global minimum in this regime) is exactly zero.
    """
    a, b2, c2 = float(a), float(b2), float(c2)
    if a > 0:
        raise ValueError("reduced temperature coefficient a must be <= 0")
    if b2 <= 0 or c2 <= 0:
        raise ValueError("coefficients b2 and c2 must be positive")

    # scalar reduction along the uniaxial family Q = s (n x n - I/3):
    # tr Q^2 = 2 s^2 / 3, tr Q^3 = 2 s^3 / 9.
    def uniaxial_value(s):
        return a * s * s / 3.0 - 2.0 * b2 * s ** 3 / 27.0 + c2 * s ** 4 / 9.0

    s_hi = (b2 + math.sqrt(b2 * b2 + 24.0 * abs(a) * c2)) / (2.0 * c2) + 1.0
    s_star = golden_section_minimize(uniaxial_value, 0.0, s_hi, tol=1e-12)
    f_shift = uniaxial_value(s_star)

    eye5 = np.eye(5)

    def raw_value(q):
        Q = qtensor_from_components(q)
        t2 = np.sum(np.asarray(q, dtype=float) ** 2, axis=-1)
        t3 = np.einsum("...ij,...jk,...ki->...", Q, Q, Q)
        return 0.5 * a * t2 - (b2 / 3.0) * t3 + 0.25 * c2 * t2 * t2

    def value(q):
        return raw_value(q) - f_shift

    def grad(q):
        q = np.asarray(q, dtype=float)
        Q = qtensor_from_components(q)
        t2 = np.sum(q * q, axis=-1)
        Q2 = Q @ Q
        # matrix derivative projected back onto the traceless symmetric space
        G = a * Q - b2 * (Q2 - (t2 / 3.0)[..., None, None] * np.eye(3)) \
            + c2 * t2[..., None, None] * Q
        return qtensor_to_components(G)

    def hess(q):
        q = np.asarray(q, dtype=float)
        Q = qtensor_from_components(q)
        t2 = float(np.dot(q, q))
        # d2 tr(Q^3) = 3 tr(Q (E_a E_b + E_b E_a)); the b2/3 prefactor
        # absorbs that 3
        cubic = np.einsum("ij,abji->ab", Q, _QT_SYM)
        return a * eye5 - b2 * cubic + c2 * (2.0 * np.outer(q, q) + t2 * eye5)

    def project_raw(q):
        q = np.asarray(q, dtype=float)
        Q = qtensor_from_components(q)
        w, v = np.linalg.eigh(Q)
        n1 = v[..., :, -1]
        return uniaxial_qtensor(n1, s_star)

    def tangent_projector(q):
        q = np.asarray(q, dtype=float)
        Q = qtensor_from_components(q)
        w, v = np.linalg.eigh(Q)
        n1 = v[..., :, -1]
        # tangent directions at the projected point: s (n v^T + v n^T)/sqrt(2)
        P = np.zeros(q.shape[:-1] + (5, 5))
        for j in (0, 1):
            vj = v[..., :, j]
            M = (n1[..., :, None] * vj[..., None, :]
                 + vj[..., :, None] * n1[..., None, :]) / math.sqrt(2.0)
            t = qtensor_to_components(M)
            P = P + t[..., :, None] * t[..., None, :]
        return P

    def ldg_sample(rng, count):
        n = rng.standard_normal((count, 3))
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        return uniaxial_qtensor(n, s_star)

    def distance(q):
        q = np.asarray(q, dtype=float)
        return np.linalg.norm(q - project_raw(q), axis=-1)

    # tubular radius: half the smallest focal distance found by normal probing
    delta = _estimate_tubular_radius(project_raw, ldg_sample, tangent_projector,
                                     ambient_dim=5, probe_count=48)

    manifold = VacuumManifold(
        name="uniaxial_qtensors",
        ambient_dim=5,
        intrinsic_dim=2,
        tubular_radius=delta,
        project_raw=project_raw,
        tangent_projector=tangent_projector,
        sample=ldg_sample,
        distance_fn=distance,
    )

    # radius beyond which the radial derivative of the potential is nonnegative:
    # grad f . q >= a t2 - b2 t2^{3/2}/sqrt(6) + c2 t2^2, positive root in sqrt(t2)
    disc = b2 * b2 / 6.0 - 4.0 * a * c2
    r_growth = (b2 / math.sqrt(6.0) + math.sqrt(disc)) / (2.0 * c2)
    r_growth = math.sqrt(max(r_growth, 0.0)) if r_growth > 0 else 0.0
    # conservative: never below the manifold radius itself
    r_growth = max(r_growth, s_star * math.sqrt(2.0 / 3.0))

    return Potential(
        name="landau_de_gennes", k=5,
        value_fn=value, grad_fn=grad, hess_fn=hess,
        radial_growth_radius=r_growth,
        manifold=manifold,
        params={"a": a, "b2": b2, "c2": c2, "s_star": s_star,
                "uniaxial_min": f_shift},
    )


def _estimate_tubular_radius(project_raw, sample_fn, tangent_projector,
                             ambient_dim: int, probe_count: int = 48) -> float:
    """Half the smallest normal reach found by probing along normal rays.

    For each sampled manifold point and random unit normal direction, the
    distance is doubled until the nearest-point projection jumps away; the
    last safe distance bounds the focal radius from below.
    """
    rng = np.random.default_rng(0)
    pts = sample_fn(rng, probe_count)
    eye = np.eye(ambient_dim)
    reach = math.inf
    for q in pts:
        Pn = eye - tangent_projector(q)
        xi = Pn @ rng.standard_normal(ambient_dim)
        nrm = np.linalg.norm(xi)
        if nrm < 1e-12:
            continue
        xi /= nrm
        s = 1e-3
        good = 0.0
        while s < 1e3:
            p = project_raw(q + s * xi)
            if not np.all(np.isfinite(p)) or np.linalg.norm(p - q) > 1e-6 + 0.05 * s:
                break
            good = s
            s *= 2.0
        if good > 0.0:
            reach = min(reach, good)
    if not math.isfinite(reach) or reach <= 0:
        raise ValueError("could not estimate a positive tubular radius")
    return 0.5 * reach


# ---------------------------------------------------------------------------
# Quadratic normal form of the potential around its zero set.
# ---------------------------------------------------------------------------

def normal_form(potential: Potential, z: np.ndarray, quad_order: int = 16) -> np.ndarray:
    """Matrix A(z) with f(z) = (z - pi(z)) . A(z) (z - pi(z)) inside the tube.

    A(z) integrates (1 - t) * Hess f along the segment from pi(z) to z with
    Gauss-Legendre quadrature of the given order.  Requires z in the tube.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (potential.k,):
        raise ValueError(f"normal_form expects a single point of shape ({potential.k},)")
    if quad_order < 2:
        raise ValueError("quad_order must be >= 2")
    p = potential.manifold.project(z[None, :])[0]
    nodes, weights = np.polynomial.legendre.leggauss(int(quad_order))
    # map from [-1, 1] to [0, 1]
    t = 0.5 * (nodes + 1.0)
    w = 0.5 * weights
    A = np.zeros((potential.k, potential.k))
    for ti, wi in zip(t, w):
        A += wi * (1.0 - ti) * potential.hessian(p + ti * (z - p))
    return 0.5 * (A + A.T)


@dataclass
class NormalFormMatrix:
    """Evaluator for the tube normal form of a potential."""

    potential: Potential
    quad_order: int = 16

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return normal_form(self.potential, z, self.quad_order)

    def normal_coercivity(self, sample_count: int = 64, seed: int = 0) -> float:
        """Smallest eigenvalue of A restricted to normal directions, sampled on N.

        This is the empirical coercivity constant of the quadratic normal
        form; it is a fitted quantity, not derived from any closed form.
        """
        rng = np.random.default_rng(seed)
        pts = self.potential.manifold.sample(rng, sample_count)
        worst = math.inf
        for q in pts:
            A = self(q)
            B = self.potential.manifold.normal_basis(q)
            lam = np.linalg.eigvalsh(B.T @ A @ B)
            worst = min(worst, float(lam[0]))
        return worst


# ---------------------------------------------------------------------------
# Structural hypothesis checks (Monte Carlo).
# ---------------------------------------------------------------------------

@dataclass
class HypothesisReport:
    potential_name: str
    sample_count: int
    seed: int
    radial_violations: list = field(default_factory=list)
    negative_values: list = field(default_factory=list)
    spurious_zeros: list = field(default_factory=list)
    min_normal_hessian_eig: float = math.inf
    nondegenerate: bool = False

    @property
    def radial_ok(self) -> bool:
        return not self.radial_violations

    @property
    def ok(self) -> bool:
        return (self.radial_ok and self.nondegenerate
                and not self.negative_values and not self.spurious_zeros)

    def summary(self) -> dict:
        return {
            "potential": self.potential_name,
            "samples": self.sample_count,
            "radial_ok": self.radial_ok,
            "radial_violation_count": len(self.radial_violations),
            "negative_value_count": len(self.negative_values),
            "spurious_zero_count": len(self.spurious_zeros),
            "min_normal_hessian_eig": self.min_normal_hessian_eig,
            "nondegenerate": self.nondegenerate,
            "ok": self.ok,
        }


def verify_hypotheses(potential: Potential, sample_count: int = 1000,
                      seed: int = 0) -> HypothesisReport:
    """Monte-Carlo check of the structural hypotheses on a potential.

    Checks, with seeded sampling:
      * radial growth: grad f(z) . z >= 0 whenever |z| >= R,
      * nonnegativity of f and absence of zeros away from the manifold,
      * nondegeneracy of the Hessian in normal directions on the manifold.
    """
    if sample_count < 100:
        raise ValueError("sample_count must be >= 100")
    rng = np.random.default_rng(seed)
    rep = HypothesisReport(potential_name=potential.name,
                           sample_count=sample_count, seed=seed)
    k = potential.k
    R = potential.radial_growth_radius

    dirs = rng.standard_normal((sample_count, k))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    radii = R * (1.0 + 2.0 * rng.random(sample_count))
    zs = dirs * radii[:, None]
    radial = np.einsum("ij,ij->i", potential.gradient(zs), zs)
    tol = -1e-10 * (1.0 + np.abs(radial))
    for i in np.nonzero(radial < tol)[0]:
        rep.radial_violations.append((zs[i].tolist(), float(radial[i])))

    box = rng.uniform(-1.5 * R, 1.5 * R, size=(sample_count, k))
    vals = potential(box)
    dist = potential.manifold.distance(box)
    for i in np.nonzero(vals < -1e-12)[0]:
        rep.negative_values.append((box[i].tolist(), float(vals[i])))
    near_zero = np.abs(vals) <= 1e-10
    for i in np.nonzero(near_zero & (dist > 1e-4))[0]:
        rep.spurious_zeros.append((box[i].tolist(), float(vals[i]), float(dist[i])))

    m_count = min(sample_count, 256)
    pts = potential.manifold.sample(rng, m_count)
    worst = math.inf
    for q in pts:
        H = potential.hessian(q)
        B = potential.manifold.normal_basis(q)
        lam = np.linalg.eigvalsh(B.T @ H @ B)
        worst = min(worst, float(lam[0]))
    rep.min_normal_hessian_eig = worst
    rep.nondegenerate = worst > 1e-8
    return rep
