"""Uniform-grid discretization of bounded domains and vector fields on them.

Nodes live on a uniform tensor grid over a bounding box and are classified
interior / boundary / exterior against a signed distance function.  Boundary
nodes carry Dirichlet data and are never unknowns; every interior node has a
full second-order stencil of non-exterior neighbors by construction.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "DomainSpec",
    "build_domain",
    "Field",
    "BoundaryData",
    "make_boundary_data",
    "hedgehog_unit_vector",
    "discrete_gradient",
    "discrete_laplacian",
    "laplacian_field",
    "gradient_energy_nodes",
    "gradient_components_field",
    "energy_density_nodes",
    "ball_energy",
    "ball_cell_fractions",
    "boundary_normal_derivative",
    "trilinear_sample",
    "save_field",
    "load_field",
]

_CLASS_TOL_FACTOR = 1e-9


def _axis_slices(ndim: int, axis: int, sl: slice) -> tuple:
    out = [slice(None)] * ndim
    out[axis] = sl
    return tuple(out)


class DomainSpec:
    """Classified uniform grid over a bounded domain.

    Attributes
    ----------
    kind : str
        "box", "ball" or "sdf".
    lo, hi : ndarray (n,)
        Bounding box corners; nodes include both faces.
    h : float
        Grid spacing, identical along every axis.
    shape : tuple
        Node counts per axis.
    inside, interior, boundary, exterior : bool ndarray of ``shape``
        Node classification.  interior | boundary == inside.
    """

    def __init__(self, kind: str, lo, hi, h: float, shape,
                 sdf: Callable[[np.ndarray], np.ndarray], params: dict):
        self.kind = kind
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.h = float(h)
        self.shape = tuple(int(s) for s in shape)
        self.n = len(self.shape)
        self.sdf = sdf
        self.params = dict(params)
        self.axes = [np.linspace(self.lo[d], self.hi[d], self.shape[d])
                     for d in range(self.n)]
        self._classify()
        self._sub_bits: Optional[np.ndarray] = None
        self._node_points: Optional[np.ndarray] = None
        self._omega_fractions: Optional[np.ndarray] = None

    # -- construction internals --------------------------------------------

    def _padded_sdf(self) -> np.ndarray:
        axes = [np.concatenate(([ax[0] - self.h], ax, [ax[-1] + self.h]))
                for ax in self.axes]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(mesh, axis=-1)
        return np.asarray(self.sdf(pts), dtype=float)

    def _classify(self) -> None:
        tol = _CLASS_TOL_FACTOR * self.h
        sp = self._padded_sdf()
        inside_p = sp <= tol
        core = tuple(slice(1, -1) for _ in range(self.n))
        self.inside = inside_p[core]
        has_out = np.zeros(self.shape, dtype=bool)
        for d in range(self.n):
            for shift in (0, 2):
                sl = [slice(1, -1)] * self.n
                sl[d] = slice(shift, sp.shape[d] - 2 + shift)
                has_out |= ~inside_p[tuple(sl)]
        self.boundary = self.inside & has_out
        self.interior = self.inside & ~has_out
        self.exterior = ~self.inside
        if not self.interior.any():
            raise ValueError("domain has no interior nodes at this resolution")
        for d in range(self.n):
            reduce_axes = tuple(a for a in range(self.n) if a != d)
            extent = int(np.count_nonzero(self.interior.any(axis=reduce_axes)))
            if extent < 3:
                raise ValueError(
                    f"fewer than 3 interior nodes along axis {d}; refine the grid")
        # outward normals at boundary nodes from the signed distance gradient;
        # node i maps to padded index i + 1 along every axis
        bidx = np.argwhere(self.boundary)
        grads = np.empty((len(bidx), self.n))
        for d in range(self.n):
            plus = bidx + 1; plus = plus.copy(); plus[:, d] += 1
            minus = bidx + 1; minus = minus.copy(); minus[:, d] -= 1
            grads[:, d] = (sp[tuple(plus.T)] - sp[tuple(minus.T)]) / (2.0 * self.h)
        nrm = np.linalg.norm(grads, axis=1)
        if np.any(nrm < 1e-12):
            raise ValueError("degenerate signed-distance gradient at a boundary node")
        self.boundary_indices = bidx
        self.normals = grads / nrm[:, None]

    # -- geometry queries ----------------------------------------------------

    def node_points(self) -> np.ndarray:
        """Coordinates of every node, shape (*shape, n)."""
        if self._node_points is None:
            mesh = np.meshgrid(*self.axes, indexing="ij")
            self._node_points = np.stack(mesh, axis=-1)
        return self._node_points

    def node_coordinates(self, node) -> np.ndarray:
        return np.array([self.axes[d][node[d]] for d in range(self.n)])

    def boundary_points(self) -> np.ndarray:
        pts = self.node_points()
        return pts[self.boundary]

    def subsample_offsets(self) -> np.ndarray:
        """Stratified sample offsets (3^n, n) covering the dual cell of a node."""
        one = np.array([-self.h / 3.0, 0.0, self.h / 3.0])
        mesh = np.meshgrid(*([one] * self.n), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def subsample_inside_bits(self) -> np.ndarray:
        """Boolean array (3^n, *shape): domain membership of each subsample point."""
        if self._sub_bits is None:
            pts = self.node_points()
            offs = self.subsample_offsets()
            tol = _CLASS_TOL_FACTOR * self.h
            bits = np.empty((len(offs),) + self.shape, dtype=bool)
            for i, off in enumerate(offs):
                bits[i] = np.asarray(self.sdf(pts + off), dtype=float) <= tol
            self._sub_bits = bits
        return self._sub_bits

    def omega_fractions(self) -> np.ndarray:
        """Fraction of each node's dual cell lying inside the domain."""
        if self._omega_fractions is None:
            self._omega_fractions = self.subsample_inside_bits().mean(axis=0)
        return self._omega_fractions

    def counts(self) -> dict:
        return {
            "interior": int(np.count_nonzero(self.interior)),
            "boundary": int(np.count_nonzero(self.boundary)),
            "exterior": int(np.count_nonzero(self.exterior)),
        }

    def boundary_area(self, center=None, rho: float = math.inf) -> float:
        """Staircase estimate of the boundary measure, optionally inside a ball.

        Each boundary node contributes h^(n-1) corrected by the tilt of its
        outward normal against the grid axes.
        """
        pts = self.boundary_points()
        w = self.h ** (self.n - 1) / np.max(np.abs(self.normals), axis=1)
        if center is not None and math.isfinite(rho):
            sel = np.linalg.norm(pts - np.asarray(center, dtype=float), axis=1) <= rho
            w = w[sel]
        return float(np.sum(w))

    def measured_curvature_bound(self, probe_count: int = 32, seed: int = 0) -> float:
        """Empirical constant C with (x - y) . nu(x) >= -C |x - y|^2 on the boundary."""
        pts = self.boundary_points()
        if len(pts) < 2:
            return 0.0
        rng = np.random.default_rng(seed)
        take = min(probe_count, len(pts))
        probes = pts[rng.choice(len(pts), size=take, replace=False)]
        worst = 0.0
        for y in probes:
            diff = pts - y
            d2 = np.einsum("ij,ij->i", diff, diff)
            ok = d2 > (0.5 * self.h) ** 2
            if not ok.any():
                continue
            dot = np.einsum("ij,ij->i", diff, self.normals)
            ratio = np.maximum(0.0, -dot[ok]) / d2[ok]
            worst = max(worst, float(ratio.max()))
        return worst

    def to_meta(self) -> dict:
        return {
            "kind": self.kind,
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "h": self.h,
            "shape": list(self.shape),
            "params": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                       for k, v in self.params.items()},
            "counts": self.counts(),
        }


def _box_sdf(lo: np.ndarray, hi: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)

    def sdf(pts):
        q = np.abs(np.asarray(pts, dtype=float) - center) - half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    return sdf


def _ball_sdf(center: np.ndarray, radius: float) -> Callable[[np.ndarray], np.ndarray]:
    def sdf(pts):
        return np.linalg.norm(np.asarray(pts, dtype=float) - center, axis=-1) - radius

    return sdf


def build_domain(kind: str, *, h: Optional[float] = None,
                 divisions: Optional[int] = None,
                 lo=None, hi=None, center=None, radius=None,
                 sdf: Optional[Callable] = None,
                 sdf_samples: Optional[np.ndarray] = None) -> DomainSpec:
    """Build a classified uniform grid domain.

    kind "box" spans exactly [lo, hi]; kind "ball" takes center and radius
    with a snug bounding box; kind "sdf" takes [lo, hi] plus either a signed
    distance callable or node samples of one.  Spacing is given either as
    ``h`` or as ``divisions`` (cells per axis across the box).
    """
    if kind not in ("box", "ball", "sdf"):
        raise ValueError(f"unknown domain kind {kind!r}")
    params: dict = {}
    if kind == "ball":
        if center is None or radius is None:
            raise ValueError("ball domain needs center and radius")
        center = np.asarray(center, dtype=float)
        radius = float(radius)
        if radius <= 0:
            raise ValueError("ball radius must be positive")
        if lo is None:
            lo = center - radius
        if hi is None:
            hi = center + radius
        params.update(center=center, radius=radius)
    if lo is None or hi is None:
        raise ValueError("bounding box lo/hi required")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ValueError("lo and hi must be vectors of equal length")
    n = lo.shape[0]
    if n not in (2, 3):
        raise ValueError("only 2- and 3-dimensional domains are supported")
    if not np.all(hi > lo):
        raise ValueError("bounding box must have positive extent")
    span = hi - lo
    if (h is None) == (divisions is None):
        raise ValueError("specify exactly one of h or divisions")
    if divisions is not None:
        if int(divisions) != divisions or divisions < 2:
            raise ValueError("divisions must be an integer >= 2")
        h = float(span[0]) / int(divisions)
    if h <= 0:
        raise ValueError("grid spacing h must be positive")
    counts = span / h
    shape = []
    for d in range(n):
        c = counts[d]
        ci = round(c)
        if abs(c - ci) > 1e-6 * max(1.0, ci) or ci < 2:
            raise ValueError(
                f"box extent along axis {d} is not an integer multiple of h")
        shape.append(int(ci) + 1)

    if kind == "box":
        fn = _box_sdf(lo, hi)
    elif kind == "ball":
        fn = _ball_sdf(params["center"], params["radius"])
    else:
        if sdf is None and sdf_samples is None:
            raise ValueError("sdf domain needs a callable or node samples")
        if sdf is not None:
            fn = sdf
        else:
            samples = np.asarray(sdf_samples, dtype=float)
            if samples.shape != tuple(shape):
                raise ValueError("sdf_samples shape must match the node grid")
            axes = [np.linspace(lo[d], hi[d], shape[d]) for d in range(n)]
            edge = samples.copy()
            for d in range(n):
                head = edge[_axis_slices(n, d, slice(0, 1))]
                if np.any(head <= 0):
                    raise ValueError("sampled domain must stay inside the bounding box")
                tail = edge[_axis_slices(n, d, slice(-1, None))]
                if np.any(tail <= 0):
                    raise ValueError("sampled domain must stay inside the bounding box")
            from scipy.interpolate import RegularGridInterpolator
            interp = RegularGridInterpolator(axes, samples, bounds_error=False,
                                             fill_value=None)

            def fn(pts, _interp=interp):
                return _interp(np.asarray(pts, dtype=float))

    return DomainSpec(kind, lo, hi, h, shape, fn, params)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

class Field:
    """Vector-valued grid function; exterior entries are kept at zero.

    ``values`` has shape (*domain.shape, k).  Exterior nodes are never
    meaningful; the indexed accessor refuses them.
    """

    __slots__ = ("domain", "k", "values")

    def __init__(self, domain: DomainSpec, k: int, values: Optional[np.ndarray] = None):
        self.domain = domain
        self.k = int(k)
        if values is None:
            self.values = np.zeros(domain.shape + (self.k,))
        else:
            values = np.asarray(values, dtype=float)
            if values.shape != domain.shape + (self.k,):
                raise ValueError("values shape does not match domain/k")
            self.values = values.copy()
            self.values[domain.exterior] = 0.0

    def copy(self) -> "Field":
        out = Field(self.domain, self.k)
        out.values[...] = self.values
        return out

    def at(self, node) -> np.ndarray:
        node = tuple(int(i) for i in node)
        if self.domain.exterior[node]:
            raise IndexError(f"node {node} is exterior; its value is undefined")
        return self.values[node]

    def inside_values(self) -> np.ndarray:
        return self.values[self.domain.inside]

    def sup_norm(self) -> float:
        """Largest pointwise Euclidean norm over non-exterior nodes."""
        v = self.inside_values()
        if v.size == 0:
            return 0.0
        return float(np.max(np.linalg.norm(v, axis=-1)))

    def __repr__(self) -> str:  # pragma: no cover
        return f"Field(shape={self.domain.shape}, k={self.k})"


class BoundaryData:
    """Dirichlet data taking values on a vacuum manifold."""

    def __init__(self, name: str, k: int, generator: Callable[[np.ndarray], np.ndarray],
                 potential=None):
        self.name = name
        self.k = int(k)
        self.generator = generator
        self.potential = potential

    def boundary_values(self, domain: DomainSpec) -> np.ndarray:
        vals = np.asarray(self.generator(domain.boundary_points()), dtype=float)
        if vals.shape != (len(domain.boundary_indices), self.k):
            raise ValueError("boundary generator returned a wrong shape")
        if self.potential is not None:
            off = np.max(np.abs(self.potential(vals))) if len(vals) else 0.0
            if off > 1e-10:
                raise ValueError(
                    f"boundary data leaves the vacuum manifold (max potential {off:g})")
        return vals

    def apply(self, field: Field) -> Field:
        field.values[field.domain.boundary] = self.boundary_values(field.domain)
        return field

    def extend_to_field(self, domain: DomainSpec) -> Field:
        """Evaluate the generator at every non-exterior node."""
        f = Field(domain, self.k)
        pts = domain.node_points()[domain.inside]
        f.values[domain.inside] = np.asarray(self.generator(pts), dtype=float)
        return f


def hedgehog_unit_vector(pts: np.ndarray) -> np.ndarray:
    """x / |x| with a fixed unit-vector convention at the origin."""
    pts = np.asarray(pts, dtype=float)
    r = np.linalg.norm(pts, axis=-1, keepdims=True)
    out = np.zeros_like(pts)
    np.divide(pts, r, out=out, where=r > 0)
    at_origin = (r[..., 0] == 0)
    if np.any(at_origin):
        out[at_origin] = 0.0
        out[at_origin, -1] = 1.0
    return out


def make_boundary_data(name: str, potential, **params) -> BoundaryData:
    """Named boundary data generators: hedgehog, equator_constant, user_table."""
    k = potential.k
    if name == "hedgehog":
        if potential.name == "landau_de_gennes":
            from .potentials import uniaxial_qtensor
            s_star = potential.params["s_star"]

            def gen(pts):
                return uniaxial_qtensor(hedgehog_unit_vector(pts), s_star)
        else:
            def gen(pts):
                pts = np.asarray(pts, dtype=float)
                if pts.shape[-1] != k:
                    raise ValueError(
                        "hedgehog data needs ambient dimension equal to the grid dimension")
                return hedgehog_unit_vector(pts)
    elif name == "equator_constant":
        if potential.name == "landau_de_gennes":
            from .potentials import uniaxial_qtensor
            q0 = uniaxial_qtensor(np.array([1.0, 0.0, 0.0]), potential.params["s_star"])
        else:
            q0 = np.zeros(k)
            q0[0] = 1.0

        def gen(pts, _q0=q0):
            pts = np.asarray(pts, dtype=float)
            return np.broadcast_to(_q0, pts.shape[:-1] + (k,)).copy()
    elif name == "user_table":
        pts_tab = np.asarray(params.get("points"), dtype=float)
        vals_tab = np.asarray(params.get("values"), dtype=float)
        if pts_tab.ndim != 2 or vals_tab.ndim != 2 or len(pts_tab) != len(vals_tab):
            raise ValueError("user_table needs matching points and values tables")

        def gen(pts):
            pts = np.asarray(pts, dtype=float)
            d = np.linalg.norm(pts[:, None, :] - pts_tab[None, :, :], axis=-1)
            return vals_tab[np.argmin(d, axis=1)]
    else:
        raise ValueError(f"unknown boundary data {name!r}")
    return BoundaryData(name, k, gen, potential=potential)


# ---------------------------------------------------------------------------
# Stencil operators
# ---------------------------------------------------------------------------

def discrete_laplacian(field: Field, node) -> np.ndarray:
    """Second-order Laplacian at one interior node."""
    dom = field.domain
    node = tuple(int(i) for i in node)
    if not dom.interior[node]:
        raise IndexError(f"node {node} is not interior")
    v = field.values
    out = np.zeros(field.k)
    for d in range(dom.n):
        plus = list(node); plus[d] += 1
        minus = list(node); minus[d] -= 1
        out += v[tuple(plus)] + v[tuple(minus)] - 2.0 * v[node]
    return out / dom.h ** 2


def discrete_gradient(field: Field, node) -> np.ndarray:
    """Spatial gradient (k, n) at a non-exterior node.

    Interior nodes use central differences.  Boundary nodes fall back to
    one-sided second-order stencils along axes where two inward neighbors
    exist, then to first order, then to zero.
    """
    G, _ = _gradient_with_flags(field, node)
    return G


def _gradient_with_flags(field: Field, node):
    dom = field.domain
    node = tuple(int(i) for i in node)
    if dom.exterior[node]:
        raise IndexError(f"node {node} is exterior")
    v = field.values
    h = dom.h
    G = np.zeros((field.k, dom.n))
    order = np.zeros(dom.n, dtype=int)

    def ok(idx):
        return all(0 <= idx[d] < dom.shape[d] for d in range(dom.n)) \
            and dom.inside[tuple(idx)]

    for d in range(dom.n):
        plus = list(node); plus[d] += 1
        minus = list(node); minus[d] -= 1
        has_p, has_m = ok(plus), ok(minus)
        if has_p and has_m:
            G[:, d] = (v[tuple(plus)] - v[tuple(minus)]) / (2.0 * h)
            order[d] = 2
            continue
        sgn, first = (1, plus) if has_p else (-1, minus) if has_m else (0, None)
        if sgn == 0:
            order[d] = 0
            continue
        second = list(node); second[d] += 2 * sgn
        if ok(second):
            G[:, d] = sgn * (-3.0 * v[node] + 4.0 * v[tuple(first)]
                             - v[tuple(second)]) / (2.0 * h)
            order[d] = 2
        else:
            G[:, d] = sgn * (v[tuple(first)] - v[node]) / h
            order[d] = 1
    return G, order


def laplacian_field(field: Field) -> np.ndarray:
    """Vectorized Laplacian, valid (and nonzero) on interior nodes only."""
    dom = field.domain
    v = field.values
    out = np.zeros_like(v)
    core = tuple(slice(1, -1) for _ in range(dom.n))
    acc = np.zeros_like(v[core])
    for d in range(dom.n):
        sl_p = list(core); sl_p[d] = slice(2, None)
        sl_m = list(core); sl_m[d] = slice(0, -2)
        acc += v[tuple(sl_p)] + v[tuple(sl_m)]
    acc -= 2.0 * dom.n * v[core]
    out[core] = acc / dom.h ** 2
    out[~dom.interior] = 0.0
    return out


def gradient_components_field(field: Field) -> list:
    """Central-difference partials [d_1 u, ..., d_n u], valid on interior nodes."""
    dom = field.domain
    v = field.values
    grads = []
    for d in range(dom.n):
        g = np.zeros_like(v)
        sl_c = _axis_slices(dom.n, d, slice(1, -1)) + (slice(None),)
        sl_p = _axis_slices(dom.n, d, slice(2, None)) + (slice(None),)
        sl_m = _axis_slices(dom.n, d, slice(0, -2)) + (slice(None),)
        g[sl_c] = (v[sl_p] - v[sl_m]) / (2.0 * dom.h)
        g[~dom.interior] = 0.0
        grads.append(g)
    return grads


def gradient_energy_nodes(field: Field) -> np.ndarray:
    """Nodewise |grad u|^2 from inside-edge forward differences.

    Each edge between two non-exterior nodes contributes half of its squared
    difference quotient to both endpoints, so the cell-weighted node sum
    reproduces the edge-based Dirichlet energy exactly.
    """
    dom = field.domain
    v = field.values
    G = np.zeros(dom.shape)
    inv_h2 = 1.0 / dom.h ** 2
    for d in range(dom.n):
        sl_a = _axis_slices(dom.n, d, slice(0, -1))
        sl_b = _axis_slices(dom.n, d, slice(1, None))
        diff = v[sl_b + (slice(None),)] - v[sl_a + (slice(None),)]
        sq = np.sum(diff * diff, axis=-1) * inv_h2
        valid = dom.inside[sl_a] & dom.inside[sl_b]
        sq = np.where(valid, sq, 0.0)
        G[sl_a] += 0.5 * sq
        G[sl_b] += 0.5 * sq
    G[dom.exterior] = 0.0
    return G


def energy_density_nodes(field: Field, eps: float, potential,
                         split: bool = False):
    """Nodewise energy density 0.5 |grad u|^2 + f(u) / eps^2 on inside nodes."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    dom = field.domain
    dirichlet = 0.5 * gradient_energy_nodes(field)
    fvals = np.asarray(potential(field.values), dtype=float)
    fvals = np.where(dom.inside, fvals, 0.0)
    pot = fvals / eps ** 2
    if split:
        return dirichlet, pot
    return dirichlet + pot


# ---------------------------------------------------------------------------
# Ball integrals with partial-cell weights
# ---------------------------------------------------------------------------

def ball_cell_fractions(domain: DomainSpec, center, rho: float) -> np.ndarray:
    """Per-node fractions of the dual cell inside (domain intersect ball).

    Fractions come from the cached 3^n stratified subsample, so they are
    exactly monotone in rho.  Only non-exterior nodes carry weight.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    center = np.asarray(center, dtype=float)
    if center.shape != (domain.n,):
        raise ValueError("center dimension mismatch")
    pts = domain.node_points()
    d = np.linalg.norm(pts - center, axis=-1)
    margin = math.sqrt(domain.n) * domain.h / 3.0 + 1e-12
    frac = np.zeros(domain.shape)
    full = (d <= rho - margin) & domain.inside
    frac[full] = domain.omega_fractions()[full]
    shell = (np.abs(d - rho) < margin) & domain.inside & ~full
    if shell.any():
        bits = domain.subsample_inside_bits()[:, shell]
        offs = domain.subsample_offsets()
        p_shell = pts[shell]
        hits = np.zeros(p_shell.shape[0])
        for i, off in enumerate(offs):
            dd = np.sum((p_shell + off - center) ** 2, axis=-1)
            hits += (bits[i] & (dd <= rho * rho))
        frac[shell] = hits / len(offs)
    return frac


def ball_energy(field: Field, eps: float, potential, center, rho: float,
                split: bool = False, density=None):
    """Energy over (domain intersect ball) using partial-cell volume weights.

    With ``split`` the Dirichlet and potential parts are returned separately.
    A precomputed nodewise density (or (dirichlet, potential) pair) can be
    passed to amortize profile sweeps.
    """
    dom = field.domain
    if rho <= 2.0 * dom.h:
        raise ValueError(f"ball of radius {rho:g} is unresolvable at h={dom.h:g}")
    frac = ball_cell_fractions(dom, center, rho)
    w = frac * dom.h ** dom.n
    if density is None:
        density = energy_density_nodes(field, eps, potential, split=True)
    dir_part = float(np.sum(w * density[0]))
    pot_part = float(np.sum(w * density[1]))
    if split:
        return dir_part, pot_part
    return dir_part + pot_part


# ---------------------------------------------------------------------------
# Boundary stencils
# ---------------------------------------------------------------------------

def trilinear_sample(field: Field, pts: np.ndarray):
    """Multilinear interpolation of the field at arbitrary points.

    Returns (values, trusted) where ``trusted`` marks points whose whole
    interpolation cube consists of non-exterior nodes.
    """
    dom = field.domain
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    rel = (pts - dom.lo) / dom.h
    base = np.floor(rel).astype(int)
    base = np.clip(base, 0, np.array(dom.shape) - 2)
    frac = rel - base
    vals = np.zeros((len(pts), field.k))
    trusted = np.ones(len(pts), dtype=bool)
    for corner in range(2 ** dom.n):
        offs = np.array([(corner >> d) & 1 for d in range(dom.n)])
        idx = tuple((base + offs).T)
        w = np.ones(len(pts))
        for d in range(dom.n):
            w *= frac[:, d] if offs[d] else (1.0 - frac[:, d])
        vals += w[:, None] * field.values[idx]
        trusted &= (dom.inside[idx] | (w < 1e-14))
    return vals, trusted


def boundary_normal_derivative(field: Field, node) -> tuple[np.ndarray, int]:
    """Outward normal derivative at one boundary node.

    Uses a one-sided second-order stencil along the inward normal ray with
    multilinearly interpolated samples.  Falls back to first order when the
    deeper sample is not trusted; the achieved order is returned alongside.
    """
    dom = field.domain
    node = tuple(int(i) for i in node)
    if not dom.boundary[node]:
        raise IndexError(f"node {node} is not a boundary node")
    row = np.nonzero((dom.boundary_indices == np.array(node)).all(axis=1))[0]
    nu = dom.normals[row[0]]
    x0 = dom.node_coordinates(node)
    h = dom.h
    p1 = x0 - h * nu
    p2 = x0 - 2.0 * h * nu
    (v1, t1), (v2, t2) = trilinear_sample(field, p1), trilinear_sample(field, p2)
    u0 = field.values[node]
    if t1[0] and t2[0]:
        return (3.0 * u0 - 4.0 * v1[0] + v2[0]) / (2.0 * h), 2
    if t1[0]:
        return (u0 - v1[0]) / h, 1
    raise ValueError(f"no trusted inward samples at boundary node {node}")


# ---------------------------------------------------------------------------
# Serialization: flat binary payload plus a JSON sidecar
# ---------------------------------------------------------------------------

def save_field(field: Field, path: str, extra_meta: Optional[dict] = None) -> None:
    """Write a field as little-endian binary with a JSON sidecar.

    Header: int64 n, int64 k, int64 dims[n], float64 h, float64 lo[n],
    float64 hi[n]; payload: float64 node values in row-major order.
    """
    dom = field.domain
    with open(path, "wb") as fh:
        fh.write(struct.pack("<2q", dom.n, field.k))
        fh.write(struct.pack(f"<{dom.n}q", *dom.shape))
        fh.write(struct.pack("<d", dom.h))
        fh.write(struct.pack(f"<{dom.n}d", *dom.lo))
        fh.write(struct.pack(f"<{dom.n}d", *dom.hi))
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())
    meta = {"domain": dom.to_meta(), "k": field.k}
    if extra_meta:
        meta.update(extra_meta)
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_field(path: str, domain: Optional[DomainSpec] = None) -> Field:
    """Read a field written by :func:`save_field`.

    Box and ball domains are rebuilt from the sidecar; domains defined by a
    user signed distance cannot be reconstructed and must be passed in.
    """
    with open(path, "rb") as fh:
        n, k = struct.unpack("<2q", fh.read(16))
        dims = struct.unpack(f"<{n}q", fh.read(8 * n))
        (h,) = struct.unpack("<d", fh.read(8))
        lo = struct.unpack(f"<{n}d", fh.read(8 * n))
        hi = struct.unpack(f"<{n}d", fh.read(8 * n))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    values = payload.reshape(tuple(dims) + (k,)).astype(float)
    if domain is None:
        with open(path + ".json") as fh:
            meta = json.load(fh)
        dmeta = meta["domain"]
        kind = dmeta["kind"]
        if kind == "box":
            domain = build_domain("box", lo=dmeta["lo"], hi=dmeta["hi"], h=dmeta["h"])
        elif kind == "ball":
            domain = build_domain("ball", center=dmeta["params"]["center"],
                                  radius=dmeta["params"]["radius"],
                                  lo=dmeta["lo"], hi=dmeta["hi"], h=dmeta["h"])
        else:
            raise ValueError("sdf-defined domains cannot be rebuilt from the "
                             "sidecar; pass the domain explicitly")
    if tuple(dims) != domain.shape or abs(h - domain.h) > 1e-12 * max(1.0, h):
        raise ValueError("stored grid does not match the provided domain")
    if not (np.allclose(lo, domain.lo) and np.allclose(hi, domain.hi)):
        raise ValueError("stored bounding box does not match the provided domain")
    return Field(domain, k, values)
