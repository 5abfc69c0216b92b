"""State-dependent maximal monotone fields and their selfdual potentials.

A field is piecewise-constant in x over finitely many regions of the unit
cell: every pointwise formula then reduces to finitely many tables. The
selfdual potential of a field is built from its Fitzpatrick function; for
quadratic growth (p = 2) the explicit splitting formula is evaluated
through its proximal-average conjugate identity, otherwise by direct
enumeration of lattice splittings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .convex import (
    conjugate_swapped,
    legendre_transform,
    moreau_regularize,
    selfdual_gap_check,
)
from .errors import (
    DomainEmpty,
    GrowthViolation,
    InvalidParameter,
    SelfdualizationFailed,
)
from .grids import INF, BoxGrid, GapReport, TabulatedFunction

FIELD_KINDS = ("linear", "power", "potential_plus_skew", "sampled_graph_1d")


@dataclass(frozen=True)
class GrowthBounds:
    """Two-sided coercivity record: <xi,eta> >= max(c1|xi|^p/p - m1, c2|eta|^q/q - m2)."""

    c1: float
    c2: float
    m1: float
    m2: float
    p: float

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise InvalidParameter("c1, c2 must be positive")
        if self.m1 < 0 or self.m2 < 0:
            raise InvalidParameter("m1, m2 must be nonnegative")
        if not self.p > 1:
            raise InvalidParameter("p must exceed 1")

    @property
    def q(self):
        return self.p / (self.p - 1.0)

    def to_dict(self):
        return {"c1": self.c1, "c2": self.c2, "m1": self.m1, "m2": self.m2,
                "p": self.p}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["c1"]), float(d["c2"]), float(d["m1"]),
                   float(d["m2"]), float(d["p"]))


@dataclass(frozen=True)
class LagrangianGrowth:
    """est200-style sandwich record C0(|a|^p+|b|^q-n0) <= L <= C1(|a|^p+|b|^q+n1)."""

    C0: float
    C1: float
    p: float
    n0: float = 1.0
    n1: float = 1.0

    @property
    def q(self):
        return self.p / (self.p - 1.0)


def growth_sandwich_constants(g: GrowthBounds):
    """est200 constants from the Fitzpatrick chain, then their conjugates.

    Upper: L <= 1/2 N(2a - eta0, 2b) + penalty terms, with the Fitzpatrick
    bound N <= (c1+c2)^{p-1}|a|^p/p + (c1+c2)^{q-1}|b|^q/q + (m1+m2)/(c1+c2)
    and |eta0|^q <= m2. Lower: conjugate the upper bound through
    selfduality.
    """
    p, q = g.p, g.q
    cp = g.c1 + g.c2
    m2pq = g.m2 ** (p / q) if g.m2 > 0 else 0.0
    Ca = 0.5 * cp ** (p - 1) / p * 2.0 ** (2 * p - 1) + 2.0 ** (2 * p - 2) / p
    Cb = 0.5 * cp ** (q - 1) / q * 2.0 ** q + 2.0 ** (q - 2) / q
    K = (
        0.5 * (g.m1 + g.m2) / cp
        + (0.5 * cp ** (p - 1) / p * 2.0 ** (p - 1) + 2.0 ** (p - 2) / p) * m2pq
    )
    C1 = max(Ca, Cb)
    n1 = K / C1 if C1 > 0 else 0.0
    # conjugate the bound L <= C1(|.|^p + |.|^q) + C1*n1 through L = L*^T
    ca = (1.0 / p) * (C1 * q) ** (-(p / q))
    cb = (1.0 / q) * (C1 * p) ** (-(q / p))
    C0 = min(ca, cb)
    n0 = C1 * n1 / C0 if C0 > 0 else 0.0
    return LagrangianGrowth(C0=C0, C1=C1, p=p, n0=max(n0, 1.0), n1=max(n1, 1.0))


# ---------------------------------------------------------------------------
# regions

def _validate_bounds(bounds, dim):
    bounds = tuple(tuple(map(float, b)) for b in bounds)
    if len(bounds) != dim:
        raise InvalidParameter("region bounds must match the cell dimension")
    for lo, hi in bounds:
        if not (0.0 <= lo < hi <= 1.0):
            raise InvalidParameter("region bounds must satisfy 0 <= lo < hi <= 1")
    return bounds


def _region_volume(bounds):
    return float(np.prod([hi - lo for lo, hi in bounds]))


def region_ids(regions_bounds, x):
    """Region index of every point x (..., N) of the unit cell."""
    x = np.asarray(x, dtype=float)
    ids = np.full(x.shape[:-1], -1, dtype=np.int64)
    for r, bounds in enumerate(regions_bounds):
        inside = np.ones(x.shape[:-1], dtype=bool)
        for k, (lo, hi) in enumerate(bounds):
            inside &= (x[..., k] >= lo) & (x[..., k] < hi)
        ids[inside & (ids < 0)] = r
    if (ids < 0).any():
        raise InvalidParameter("cell regions do not cover the unit cell")
    return ids


# ---------------------------------------------------------------------------
# monotone fields

@dataclass
class FieldRegion:
    bounds: tuple
    params: dict


@dataclass
class MonotoneField:
    """beta(x, .) piecewise-constant in x over unit-cell regions."""

    kind: str
    dim: int
    regions: list
    growth: GrowthBounds
    periodic: bool = True

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise InvalidParameter(f"unknown field kind {self.kind!r}")
        for reg in self.regions:
            reg.bounds = _validate_bounds(reg.bounds, self.dim)
            self._validate_region(reg)

    def _validate_region(self, reg):
        if self.kind in ("linear", "power"):
            if "a" not in reg.params:
                raise InvalidParameter(f"{self.kind} region needs coefficient 'a'")
        elif self.kind == "potential_plus_skew":
            gamma = reg.params.get("gamma")
            if gamma is not None:
                gamma = np.asarray(gamma, dtype=float)
                if gamma.shape != (self.dim, self.dim) or (gamma + gamma.T).any():
                    raise InvalidParameter("gamma must be exactly skew")
                reg.params["gamma"] = gamma
            if not isinstance(reg.params.get("phi"), TabulatedFunction):
                raise InvalidParameter("potential region needs a phi table")
        elif self.kind == "sampled_graph_1d":
            if self.dim != 1:
                raise InvalidParameter("sampled_graph_1d requires dim 1")
            pts = np.asarray(reg.params["points"], dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
                raise InvalidParameter("graph points must be a (K,2) list")
            if (np.diff(pts[:, 0]) < 0).any() or (np.diff(pts[:, 1]) < 0).any():
                raise InvalidParameter(
                    "graph points must be monotone nondecreasing in both "
                    "coordinates"
                )
            reg.params["points"] = pts

    @property
    def volumes(self):
        return np.array([_region_volume(r.bounds) for r in self.regions])

    def region_of(self, x):
        return region_ids([r.bounds for r in self.regions], x)

    # -- graph access -------------------------------------------------------

    def evaluate(self, region, xi):
        """Single representative eta for each xi (nearest graph selection)."""
        xi = np.asarray(xi, dtype=float)
        par = self.regions[region].params
        if self.kind == "linear":
            return par["a"] * xi
        if self.kind == "power":
            p = self.growth.p
            nrm = np.linalg.norm(np.atleast_1d(xi), axis=-1, keepdims=True) \
                if self.dim > 1 else np.abs(xi)
            return par["a"] * nrm ** (p - 2.0) * xi
        if self.kind == "potential_plus_skew":
            phi = par["phi"]
            pts = xi.reshape(-1, self.dim) if self.dim > 1 else xi.reshape(-1, 1)
            grad = phi.gradient(pts).reshape(xi.shape if self.dim > 1
                                             else xi.shape + (1,))
            grad = grad if self.dim > 1 else grad[..., 0]
            gamma = par.get("gamma")
            if gamma is not None:
                grad = grad + xi @ gamma.T
            return grad
        pts = par["points"]
        return np.interp(xi, pts[:, 0], pts[:, 1])

    def graph_samples(self, region, xi_radius, max_step):
        """Dense (xi, eta) graph sample, consecutive steps <= max_step.

        Vertical segments of set-valued 1D graphs are sampled as repeated
        xi with an eta ladder.
        """
        par = self.regions[region].params
        if self.kind == "sampled_graph_1d":
            pts = par["points"]
            out_xi, out_eta = [], []
            for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
                n = max(2, int(np.ceil(max(x1 - x0, y1 - y0) / max_step)) + 1)
                t = np.linspace(0.0, 1.0, n)
                out_xi.append(x0 + t * (x1 - x0))
                out_eta.append(y0 + t * (y1 - y0))
            xi = np.concatenate(out_xi)[:, None]
            eta = np.concatenate(out_eta)[:, None]
            return xi, eta
        if self.dim == 1:
            slope = self._max_slope(region, xi_radius)
            # anchored at 0 with step dividing max_step/2, so argmaxes of
            # quadratic-type suprema land exactly on the sample lattice
            step = (0.5 * max_step) / max(1, int(np.ceil(slope)))
            n_half = int(np.ceil(xi_radius / step))
            xi = np.arange(-n_half, n_half + 1) * step
            if self.kind == "potential_plus_skew":
                return self._graph_from_potential_1d(region, xi, max_step)
            eta = self.evaluate(region, xi)
            return xi[:, None], eta[:, None]
        slope = self._max_slope(region, xi_radius)
        step = max_step / max(1.0, slope)
        n = max(3, int(np.ceil(2 * xi_radius / step)) + 1)
        n = min(n, 129)  # desk-scale cap for 2D graph lattices
        ax = np.linspace(-xi_radius, xi_radius, n)
        XI = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
        ETA = self.evaluate(region, XI)
        return XI, ETA

    def _max_slope(self, region, xi_radius):
        par = self.regions[region].params
        if self.kind == "linear":
            return abs(par["a"])
        if self.kind == "power":
            return abs(par["a"]) * (self.growth.p - 1.0) * xi_radius ** (
                self.growth.p - 2.0
            )
        if self.kind == "potential_plus_skew":
            phi = par["phi"]
            curv = 0.0
            for k, h in enumerate(phi.axis_steps()):
                d2 = np.diff(phi.values, 2, axis=k) / h**2
                d2 = d2[np.isfinite(d2)]
                if d2.size:
                    curv = max(curv, float(np.abs(d2).max()))
            gamma = par.get("gamma")
            gnorm = float(np.abs(gamma).max()) if gamma is not None else 0.0
            return curv + gnorm
        pts = par["points"]
        dx = np.diff(pts[:, 0])
        dy = np.diff(pts[:, 1])
        pos = dx > 0
        return float((dy[pos] / dx[pos]).max()) if pos.any() else 1.0

    def _graph_from_potential_1d(self, region, xi, max_step):
        """Subdifferential graph of a 1D table potential, kinks included."""
        phi = self.regions[region].params["phi"]
        nodes = phi.axis_nodes()[0]
        vals = phi.values
        h = phi.axis_steps()[0]
        slopes = np.diff(vals) / h
        out = []
        finite = np.isfinite(vals)
        for i, x0 in enumerate(nodes):
            if not finite[i]:
                continue
            sl = slopes[i - 1] if i > 0 and np.isfinite(slopes[i - 1]) else None
            sr = slopes[i] if i < len(slopes) and np.isfinite(slopes[i]) else None
            lo = sl if sl is not None else sr
            hi = sr if sr is not None else sl
            if lo is None:
                continue
            if hi - lo > 1e-12:
                n = max(2, int(np.ceil((hi - lo) / max_step)) + 1)
                for s in np.linspace(lo, hi, n):
                    out.append((x0, s))
            else:
                out.append((x0, 0.5 * (lo + hi)))
        arr = np.array(out)
        keep = np.abs(arr[:, 0]) <= np.abs(xi).max() + 1e-12
        arr = arr[keep]
        return arr[:, :1], arr[:, 1:]

    def eta_at_zero(self, region, tol=1e-10):
        """Some eta0 in beta(x, 0), found by bisection on the sampled graph."""
        xi, eta = self.graph_samples(region, 1.0, 1e-2)
        if self.dim > 1:
            k = int(np.argmin(np.einsum("ij,ij->i", xi, xi)))
            return eta[k]
        lo, hi = 0, len(xi) - 1
        if xi[lo, 0] > 0 or xi[hi, 0] < 0:
            raise DomainEmpty("graph sample does not bracket xi = 0")
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if xi[mid, 0] <= tol:
                lo = mid
            else:
                hi = mid
        return eta[lo]


# ---------------------------------------------------------------------------
# growth verification

def verify_growth(beta: MonotoneField, samples: int = 512, tol: float = 1e-9,
                  xi_radius: float = 4.0):
    """Check the two-sided growth bound on sampled graph points.

    Raises GrowthViolation (with a witness) when the worst defect exceeds
    ``tol``; otherwise returns the defect report.
    """
    g = beta.growth
    worst = 0.0
    witness = None
    for r, reg in enumerate(beta.regions):
        step = max(2.0 * xi_radius / samples, 1e-3)
        xi, eta = beta.graph_samples(r, xi_radius, step)
        pair = np.einsum("ij,ij->i", xi, eta)
        nxi = np.linalg.norm(xi, axis=1)
        neta = np.linalg.norm(eta, axis=1)
        need = np.maximum(
            g.c1 / g.p * nxi**g.p - g.m1, g.c2 / g.q * neta**g.q - g.m2
        )
        defect = need - pair
        k = int(np.argmax(defect))
        if defect[k] > worst:
            worst = float(defect[k])
            witness = (r, tuple(xi[k]), tuple(eta[k]))
    worst = max(worst, 0.0)
    if worst > tol:
        raise GrowthViolation(
            f"growth bound violated by {worst:.3e} at region {witness[0]}, "
            f"xi={witness[1]}, eta={witness[2]}",
            witness=witness,
        )
    return GapReport(max_gap=worst, argmax_point=witness or (),
                     tolerance_used=tol)


# ---------------------------------------------------------------------------
# Fitzpatrick function

def fitzpatrick(beta: MonotoneField, region: int, grids, graph_step=None,
                xi_radius=None):
    """N(a,b) = max over sampled graph pairs of <b, xi> + <a - xi, eta>.

    A max of affine functions of (a,b): convex by construction and above
    the bilinear pairing on the nodes.
    """
    ga, gb = grids
    if xi_radius is None:
        xi_radius = ga.radius + gb.radius
    if graph_step is None:
        graph_step = min(ga.h, gb.h)
    xi, eta = beta.graph_samples(region, xi_radius, graph_step)
    if xi.shape[0] == 0:
        raise DomainEmpty("empty graph sample")
    axes = [ga.nodes()] * ga.dim + [gb.nodes()] * gb.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    A = np.stack(mesh[: ga.dim], axis=-1)
    B = np.stack(mesh[ga.dim :], axis=-1)
    const = np.einsum("kj,kj->k", xi, eta)
    out = np.full(A.shape[:-1], -INF)
    chunk = max(1, int(2e7 // out.size))
    for k0 in range(0, xi.shape[0], chunk):
        xi_c = xi[k0 : k0 + chunk]
        eta_c = eta[k0 : k0 + chunk]
        cand = (
            np.tensordot(B, xi_c.T, axes=([B.ndim - 1], [0]))
            + np.tensordot(A, eta_c.T, axes=([A.ndim - 1], [0]))
            - const[k0 : k0 + chunk]
        )
        out = np.maximum(out, cand.max(axis=-1))
    return TabulatedFunction((ga, gb), out)


# ---------------------------------------------------------------------------
# Omega-dependent selfdual Lagrangians

@dataclass
class LagrangianRegion:
    bounds: tuple
    table: TabulatedFunction
    diagnostics: dict = field(default_factory=dict)


class OmegaLagrangian:
    """Piecewise-constant-in-x selfdual Lagrangian on the unit cell."""

    def __init__(self, regions, dim, growth=None, periodic=True):
        self.regions = list(regions)
        self.dim = dim
        self.growth = growth
        self.periodic = periodic
        for reg in self.regions:
            reg.bounds = _validate_bounds(reg.bounds, dim)
        self._smooth_cache = {}

    @property
    def volumes(self):
        return np.array([_region_volume(r.bounds) for r in self.regions])

    def region_of(self, x):
        return region_ids([r.bounds for r in self.regions], x)

    def smoothed(self, region, lam):
        if lam <= 0.0:
            return self.regions[region].table
        key = (region, float(lam))
        if key not in self._smooth_cache:
            self._smooth_cache[key] = moreau_regularize(
                self.regions[region].table, lam
            )
        return self._smooth_cache[key]

    def x_independent(self):
        return len(self.regions) == 1

    def gap_reports(self, p=None, tol_gap=None):
        p = p if p is not None else (self.growth.p if self.growth else None)
        return [
            selfdual_gap_check(reg.table, p=p, tol_gap=tol_gap)
            for reg in self.regions
        ]

    def sandwich_margin(self):
        """Worst est200 defect over region-table nodes (negative = violated)."""
        if self.growth is None:
            raise InvalidParameter("no growth record attached")
        g = self.growth
        worst = INF
        for reg in self.regions:
            t = reg.table
            lat = t.node_lattice()
            ga = t.grids[0].dim
            na = np.linalg.norm(lat[..., :ga], axis=-1)
            nb = np.linalg.norm(lat[..., ga:], axis=-1)
            lo = g.C0 * (na**g.p + nb**g.q - g.n0)
            hi = g.C1 * (na**g.p + nb**g.q + g.n1)
            fin = np.isfinite(t.values)
            m = np.minimum(t.values - lo, hi - t.values)
            worst = min(worst, float(m[fin].min()))
        return worst

    def conjugate(self, out_grids=None):
        """Per-region plain conjugates L*(x, ., .) (no argument swap)."""
        regs = []
        for reg in self.regions:
            c = legendre_transform(reg.table, out_grids=out_grids,
                                   on_boundary="mask")
            regs.append(LagrangianRegion(reg.bounds, c))
        growth = None
        if self.growth is not None:
            growth = LagrangianGrowth(
                C0=self.growth.C0, C1=self.growth.C1, p=self.growth.q,
                n0=self.growth.n0, n1=self.growth.n1,
            )
        return OmegaLagrangian(regs, self.dim, growth, self.periodic)

    def shifted(self, c):
        regs = [
            LagrangianRegion(r.bounds, r.table.copy_with(r.table.values + c))
            for r in self.regions
        ]
        return OmegaLagrangian(regs, self.dim, self.growth, self.periodic)

    def mean_table(self):
        """Volume-weighted mean of the region tables (zero-corrector bound)."""
        vols = self.volumes
        vals = sum(
            v * r.table.values for v, r in zip(vols, self.regions)
        ) / vols.sum()
        return self.regions[0].table.copy_with(vals)


def constant_lagrangian(table, dim, growth=None):
    """x-independent OmegaLagrangian from a single table."""
    bounds = tuple((0.0, 1.0) for _ in range(dim))
    return OmegaLagrangian([LagrangianRegion(bounds, table)], dim, growth)


# ---------------------------------------------------------------------------
# selfdualization

def _quadratic_j(grids):
    ga, gb = grids
    axes = [ga.nodes()] * ga.dim + [gb.nodes()] * gb.dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return 0.5 * sum(m**2 for m in mesh)


def _max_axis_slopes(table):
    """Largest |finite difference|/h per axis, over finite entries."""
    out = []
    for k, h in enumerate(table.axis_steps()):
        d = np.diff(table.values, axis=k) / h
        d = d[np.isfinite(d)]
        out.append(float(np.abs(d).max()) if d.size else 1.0)
    return out


def _proximal_average_selfdual(N, Ntilde, grids):
    """p = 2 splitting formula via  [ (N+j)*/2 + (Ntilde+j)*/2 ]* - j.

    The dual lattice radius per argument is sized from the measured slopes
    of N+j and Ntilde+j, so conjugate argmaxes stay interior wherever the
    primal tables are trustworthy.
    """
    ga, gb = grids
    j = _quadratic_j(grids)
    f1 = N.copy_with(np.where(np.isfinite(N.values), N.values + j, INF))
    f2 = Ntilde.copy_with(
        np.where(np.isfinite(Ntilde.values), Ntilde.values + j, INF)
    )
    s1 = _max_axis_slopes(f1)
    s2 = _max_axis_slopes(f2)
    dual = []
    k = 0
    for g in grids:
        rad = 1.05 * max(max(s1[k : k + g.dim]), max(s2[k : k + g.dim])) + 1.0
        dual.append(BoxGrid(g.dim, rad, 2 * g.points_per_axis - 1))
        k += g.dim
    dual = tuple(dual)
    t1, ok1 = legendre_transform(f1, out_grids=dual, on_boundary="mask",
                                 return_mask=True)
    t2, ok2 = legendre_transform(f2, out_grids=dual, on_boundary="mask",
                                 return_mask=True)
    raw = t1.copy_with(0.5 * t1.values + 0.5 * t2.values)
    # boundary-tainted conjugate nodes understate the truth; conjugating
    # once with and once without them certifies exactly the outputs whose
    # sup never needed an untrusted candidate
    scrub = t1.copy_with(np.where(ok1 & ok2, raw.values, INF))
    back_raw = legendre_transform(raw, out_grids=grids, on_boundary="mask")
    back, ok = legendre_transform(scrub, out_grids=grids, on_boundary="mask",
                                  return_mask=True)
    hull_tol = max(g.h for g in dual) ** 2
    certified = ok & (
        np.abs(back.values - back_raw.values) <= hull_tol + 1e-9
    )
    # the squared-dual-spacing wiggle is the table's convexity defect bound
    return back.copy_with(back.values - j), certified, hull_tol


def _splitting_enumeration(N, Ntilde, grids, p):
    """Direct inf over lattice splittings (general p, two axes only)."""
    if N.n_axes != 2:
        raise InvalidParameter("direct splitting path supports N = 1 only")
    q = p / (p - 1.0)
    ha, hb = N.axis_steps()
    Ma, Mb = N.shape
    A = 0.5 * np.where(np.isfinite(N.values), N.values, INF)
    B = 0.5 * np.where(np.isfinite(Ntilde.values), Ntilde.values, INF)
    out = np.full(N.shape, INF)
    finite_all = np.concatenate(
        [A[np.isfinite(A)].ravel(), B[np.isfinite(B)].ravel()]
    )
    prune = 2.0 * (finite_all.max() - finite_all.min()) + 1.0
    for da in range(-(Ma - 1), Ma):
        pen_a = 2.0 ** (p - 2.0) / p * abs(da * ha) ** p
        if pen_a > prune:
            continue
        alo, ahi = abs(da), Ma - abs(da)
        if alo >= ahi:
            continue
        for db in range(-(Mb - 1), Mb):
            pen = pen_a + 2.0 ** (q - 2.0) / q * abs(db * hb) ** q
            if pen > prune:
                continue
            blo, bhi = abs(db), Mb - abs(db)
            if blo >= bhi:
                continue
            cand = (
                A[alo + da : ahi + da, blo + db : bhi + db]
                + B[alo - da : ahi - da, blo - db : bhi - db]
                + pen
            )
            sl = (slice(alo, ahi), slice(blo, bhi))
            out[sl] = np.minimum(out[sl], cand)
    return N.copy_with(out)


def selfdualize(beta: MonotoneField, grids=None, tol_gap=None,
                gap_slack=None, verify=True):
    """Selfdual Lagrangian with selfdual field equal to beta, per region.

    Builds the Fitzpatrick function N and its conjugate, then the inf over
    half-sum splittings of N and N*^T with p/q power penalties. The result
    is gap-checked; failure raises SelfdualizationFailed.
    """
    if verify:
        verify_growth(beta)
    p = beta.growth.p
    if grids is None:
        pts = 257 if beta.dim == 1 else 33
        grids = (BoxGrid(beta.dim, 4.0, pts), BoxGrid(beta.dim, 4.0, pts))
    ga, gb = grids
    h = max(ga.h, gb.h)
    if tol_gap is None:
        tol_gap = 1e-8 if p == 2 else 1e-6
    if gap_slack is None:
        gap_slack = 10.0 * h
    regs = []
    for r, reg in enumerate(beta.regions):
        N = fitzpatrick(beta, r, grids)
        Ntilde, nvalid = conjugate_swapped(N)
        Ntilde = Ntilde.copy_with(np.where(nvalid, Ntilde.values, INF))
        if p == 2:
            L, hull_tol = _proximal_average_selfdual(N, Ntilde, grids)
        else:
            L = _splitting_enumeration(N, Ntilde, grids, p)
            hull_tol = 2.0 * max(g.h for g in grids) ** 2
        rep = selfdual_gap_check(L, p=p, tol_gap=tol_gap,
                                 convexity_tol=max(1e-9, hull_tol))
        if rep.max_gap > tol_gap + gap_slack or "NotConvex" in rep.flags:
            raise SelfdualizationFailed(
                f"region {r}: selfdual gap {rep.max_gap:.3e} exceeds "
                f"{tol_gap + gap_slack:.3e}",
                report=rep,
            )
        regs.append(
            LagrangianRegion(reg.bounds, L,
                             diagnostics={"fitzpatrick": N, "nstar": Ntilde,
                                          "gap_report": rep})
        )
    return OmegaLagrangian(
        regs, beta.dim, growth_sandwich_constants(beta.growth), beta.periodic
    )


def potential_lagrangian(phis, gamma=None, bounds=None, grids=None,
                         growth=None, dual_points=None):
    """L(x,a,b) = phi(x,a) + phi*(x, -Gamma a + b) per region.

    phis: list of one-argument tables (one per region); gamma: common skew
    matrix (None means 0). The selfdual field is Gamma a + d(phi)(a).
    """
    dim = phis[0].grids[0].dim
    if gamma is not None:
        gamma = np.asarray(gamma, dtype=float)
        if gamma.shape != (dim, dim) or (gamma + gamma.T).any():
            raise InvalidParameter("gamma must be exactly skew")
        if dim == 1:
            gamma = None  # 1x1 skew matrix is zero
    if bounds is None:
        n = len(phis)
        bounds = [tuple(((k / n), ((k + 1) / n)) if ax == 0 else (0.0, 1.0)
                        for ax in range(dim)) for k in range(n)]
    gamma_amp = float(np.abs(gamma).sum(axis=1).max()) if gamma is not None \
        else 0.0
    regs = []
    for phi, bnd in zip(phis, bounds):
        gphi = phi.grids[0]
        if grids is None:
            pts = dual_points or gphi.points_per_axis
            use_grids = (gphi, BoxGrid(dim, gphi.radius, pts))
        else:
            use_grids = grids
        ga, gb = use_grids
        # phi* grid must cover -Gamma a + b; with no skew it is gb itself,
        # so node lookups of the separable table stay exact
        star_radius = gb.radius + gamma_amp * ga.radius
        n_star = int(np.ceil(2.0 * star_radius / gb.h)) + 1
        n_star += 1 - n_star % 2
        star_grid = BoxGrid(dim, star_radius, max(n_star, 3))
        star = legendre_transform(phi, out_grids=(star_grid,),
                                  on_boundary="mask")
        axes = [ga.nodes()] * ga.dim + [gb.nodes()] * gb.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        A = np.stack(mesh[:ga.dim], axis=-1)
        B = np.stack(mesh[ga.dim:], axis=-1)
        phi_A = phi(A.reshape(-1, dim)).reshape(A.shape[:-1])
        arg = B if gamma is None else B - np.einsum("ij,...j->...i", gamma, A)
        star_B = star(arg.reshape(-1, dim)).reshape(B.shape[:-1])
        vals = phi_A + star_B
        regs.append(LagrangianRegion(bnd, TabulatedFunction(use_grids, vals),
                                     diagnostics={"phi": phi,
                                                  "phistar": star,
                                                  "gamma": gamma}))
    return OmegaLagrangian(regs, dim, growth, periodic=True)


# ---------------------------------------------------------------------------
# field definition files

def field_to_dict(beta: MonotoneField):
    regions = []
    for reg in beta.regions:
        entry = {}
        if beta.dim == 1:
            entry["x_interval"] = list(reg.bounds[0])
        else:
            entry["x_box"] = [list(b) for b in reg.bounds]
        params = {}
        for k, v in reg.params.items():
            if isinstance(v, TabulatedFunction):
                params[k] = v.to_dict()
            elif isinstance(v, np.ndarray):
                params[k] = v.tolist()
            else:
                params[k] = v
        entry["parameters"] = params
        regions.append(entry)
    return {"kind": beta.kind, "dim": beta.dim, "regions": regions,
            "growth": beta.growth.to_dict()}


def field_from_dict(d):
    kind = d["kind"]
    dim = int(d.get("dim", 1))
    growth = GrowthBounds.from_dict(d["growth"])
    regions = []
    for entry in d["regions"]:
        if "x_interval" in entry:
            bounds = (tuple(entry["x_interval"]),)
        else:
            bounds = tuple(tuple(b) for b in entry["x_box"])
        params = dict(entry.get("parameters", {}))
        if kind == "potential_plus_skew" and "phi" in params:
            params["phi"] = TabulatedFunction.from_dict(params["phi"])
        if kind == "sampled_graph_1d" and "points" in params:
            params["points"] = np.asarray(params["points"], dtype=float)
        if kind == "potential_plus_skew" and params.get("gamma") is not None:
            params["gamma"] = np.asarray(params["gamma"], dtype=float)
        regions.append(FieldRegion(bounds, params))
    return MonotoneField(kind, dim, regions, growth)


def load_field(path):
    with open(path) as fh:
        return field_from_dict(json.load(fh))


def save_field(beta, path):
    with open(path, "w") as fh:
        json.dump(field_to_dict(beta), fh, indent=2, sort_keys=True)


def two_phase_linear_field(a1=1.0, a2=4.0):
    """The canonical benchmark: a(x) = a1 on [0,1/2), a2 on [1/2,1)."""
    amin, amax = min(a1, a2), max(a1, a2)
    growth = GrowthBounds(c1=2.0 * amin, c2=2.0 / amax, m1=0.0, m2=0.0, p=2.0)
    regions = [
        FieldRegion(((0.0, 0.5),), {"a": a1}),
        FieldRegion(((0.5, 1.0),), {"a": a2}),
    ]
    return MonotoneField("linear", 1, regions, growth)


def two_phase_power_field(a1=1.0, a2=4.0, p=3.0):
    """beta(x, xi) = a(x) |xi|^{p-2} xi on half cells."""
    regions = [
        FieldRegion(((0.0, 0.5),), {"a": a1}),
        FieldRegion(((0.5, 1.0),), {"a": a2}),
    ]
    # <xi, a|xi|^{p-2} xi> = a|xi|^p >= (c1/p)|xi|^p with c1 = p*min(a)
    amin, amax = min(a1, a2), max(a1, a2)
    q = p / (p - 1.0)
    growth = GrowthBounds(c1=p * amin, c2=q * amax ** (1.0 - q), m1=0.0,
                          m2=0.0, p=p)
    return MonotoneField("power", 1, regions, growth)
