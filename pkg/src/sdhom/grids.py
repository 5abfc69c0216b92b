"""Node grids and tabulated convex functions on boxes.

All certified statements are made on grid nodes; between nodes the tables
are evaluated by multilinear interpolation (or by a 1D lower convex
envelope when the table is tagged so). ``+inf`` is a first-class sentinel:
arithmetic saturates and interpolation returns ``+inf`` whenever an
infinite corner carries positive weight.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, InvalidParameter

INF = np.inf

_WEIGHT_EPS = 1e-13
_BOX_EPS = 1e-12


@dataclass(frozen=True)
class BoxGrid:
    """Uniform symmetric box [-radius, radius]^dim with an odd node count.

    Nodes along each axis are exactly ``-radius + k*h`` with
    ``h = 2*radius/(points_per_axis - 1)``, so 0 is always a node and the
    lattice is reproducible bit-for-bit from (radius, points_per_axis).
    """

    dim: int
    radius: float
    points_per_axis: int

    def __post_init__(self):
        if self.dim < 1:
            raise InvalidParameter("BoxGrid dim must be >= 1")
        if not self.radius > 0:
            raise InvalidParameter("BoxGrid radius must be positive")
        if self.points_per_axis < 3 or self.points_per_axis % 2 == 0:
            raise InvalidParameter("points_per_axis must be odd and >= 3")

    @property
    def h(self):
        return 2.0 * self.radius / (self.points_per_axis - 1)

    def nodes(self):
        return -self.radius + np.arange(self.points_per_axis) * self.h

    def to_dict(self):
        return {
            "dim": self.dim,
            "radius": self.radius,
            "points_per_axis": self.points_per_axis,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["dim"]), float(d["radius"]), int(d["points_per_axis"]))


@dataclass
class GapReport:
    """Outcome of a pointwise bound or duality-gap scan."""

    max_gap: float
    argmax_point: tuple
    tolerance_used: float
    flags: tuple = ()
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.max_gap < 0:
            raise InvalidParameter("max_gap must be nonnegative")

    @property
    def passed(self):
        return self.max_gap <= self.tolerance_used and not self.flags


class TabulatedFunction:
    """A function of one or more vector arguments sampled on box grids.

    Parameters
    ----------
    grids : sequence of BoxGrid
        One grid per argument. The value array has one axis per grid
        dimension, concatenated argument by argument, in C order.
    values : ndarray
        Node values; ``+inf`` marks points outside the effective domain.
    interpolation : {"multilinear", "lower-convex-envelope"}
        Rule used between nodes. The envelope rule is only supported for
        single-axis tables.
    """

    def __init__(self, grids, values, interpolation="multilinear"):
        if isinstance(grids, BoxGrid):
            grids = (grids,)
        self.grids = tuple(grids)
        if interpolation not in ("multilinear", "lower-convex-envelope"):
            raise InvalidParameter(f"unknown interpolation rule {interpolation!r}")
        self.interpolation = interpolation
        shape = tuple(
            g.points_per_axis for g in self.grids for _ in range(g.dim)
        )
        values = np.asarray(values, dtype=float)
        if values.size != int(np.prod(shape)):
            raise InvalidParameter(
                f"values length {values.size} != node count {int(np.prod(shape))}"
            )
        self.values = values.reshape(shape)
        if np.isneginf(self.values).any():
            raise InvalidParameter("-inf is not a valid table entry")
        self._grad_nodes = None
        self._envelope = None
        if interpolation == "lower-convex-envelope" and self.n_axes != 1:
            raise InvalidParameter("envelope interpolation is 1D only")

    # -- structure ---------------------------------------------------------

    @property
    def n_axes(self):
        return sum(g.dim for g in self.grids)

    @property
    def shape(self):
        return self.values.shape

    def axis_nodes(self):
        return [g.nodes() for g in self.grids for _ in range(g.dim)]

    def axis_steps(self):
        return [g.h for g in self.grids for _ in range(g.dim)]

    def arg_slices(self):
        """Index ranges of the value axes belonging to each argument."""
        out, k = [], 0
        for g in self.grids:
            out.append(range(k, k + g.dim))
            k += g.dim
        return out

    def node_lattice(self):
        """All grid nodes as an array of shape ``shape + (n_axes,)``."""
        mesh = np.meshgrid(*self.axis_nodes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def same_grids(self, other):
        return self.grids == other.grids

    def require_same_grids(self, other):
        if not self.same_grids(other):
            raise GridMismatch("tables are defined on different grids")

    def finite_mask(self):
        return np.isfinite(self.values)

    def copy_with(self, values, interpolation=None):
        return TabulatedFunction(
            self.grids, values, interpolation or self.interpolation
        )

    # -- evaluation --------------------------------------------------------

    def _locate(self, pts):
        pts = np.asarray(pts, dtype=float)
        if pts.shape[-1] != self.n_axes:
            raise InvalidParameter(
                f"query has {pts.shape[-1]} coordinates, table has {self.n_axes}"
            )
        idx, t, outside = [], [], np.zeros(pts.shape[:-1], dtype=bool)
        for k, (nodes, h) in enumerate(zip(self.axis_nodes(), self.axis_steps())):
            x = pts[..., k]
            outside |= (x < nodes[0] - _BOX_EPS) | (x > nodes[-1] + _BOX_EPS)
            i = np.clip(np.floor((x - nodes[0]) / h).astype(int), 0, len(nodes) - 2)
            idx.append(i)
            t.append(np.clip((x - nodes[i]) / h, 0.0, 1.0))
        return idx, t, outside

    def _interp_array(self, arr, pts):
        idx, t, outside = self._locate(pts)
        out = np.zeros(np.asarray(pts).shape[:-1], dtype=float)
        hit_inf = np.zeros_like(out, dtype=bool)
        for corner in itertools.product((0, 1), repeat=self.n_axes):
            w = np.ones_like(out)
            for k, c in enumerate(corner):
                w = w * (t[k] if c else 1.0 - t[k])
            v = arr[tuple(i + c for i, c in zip(idx, corner))]
            bad = (w > _WEIGHT_EPS) & ~np.isfinite(v)
            hit_inf |= bad
            out += w * np.where(np.isfinite(v), v, 0.0)
        out[hit_inf | outside] = INF
        return out

    def __call__(self, pts):
        """Evaluate at points of shape ``(..., n_axes)``; +inf outside."""
        if self.interpolation == "lower-convex-envelope":
            return self._envelope_eval(pts)
        return self._interp_array(self.values, pts)

    def _envelope_eval(self, pts):
        if self._envelope is None:
            self._envelope = _lower_convex_envelope_1d(
                self.axis_nodes()[0], self.values
            )
        hull = self.copy_with(self._envelope, interpolation="multilinear")
        return hull(pts)

    def gradient_nodes(self):
        """Per-axis nodal gradients (central differences, one-sided edges).

        Exact for tables that are quadratic along each axis; garbage near
        +inf entries, which the solvers never query.
        """
        if self._grad_nodes is None:
            self._grad_nodes = [
                np.gradient(self.values, h, axis=k)
                for k, h in enumerate(self.axis_steps())
            ]
        return self._grad_nodes

    def gradient(self, pts):
        """Interpolated gradient, shape ``(..., n_axes)``."""
        comps = [self._interp_array(g, pts) for g in self.gradient_nodes()]
        return np.stack(comps, axis=-1)

    # -- convexity scan ----------------------------------------------------

    def midpoint_convexity_violation(self, rng=None, samples=2000):
        """Worst midpoint-convexity defect over axis and sampled node pairs.

        Checks f((x+y)/2) <= (f(x)+f(y))/2 + tol for pairs whose midpoint
        is itself a node: all distance-2 axis pairs plus ``samples`` random
        same-parity pairs (catches jointly non-convex tables such as a*b).
        """
        v = self.values
        worst = 0.0
        for k in range(self.n_axes):
            lo = [slice(None)] * self.n_axes
            mid = [slice(None)] * self.n_axes
            hi = [slice(None)] * self.n_axes
            lo[k], mid[k], hi[k] = slice(0, -2), slice(1, -1), slice(2, None)
            gap = v[tuple(mid)] - 0.5 * (v[tuple(lo)] + v[tuple(hi)])
            gap = gap[np.isfinite(gap)]
            if gap.size:
                worst = max(worst, float(gap.max()))
        if rng is None:
            rng = np.random.default_rng(0)
        shape = np.array(self.shape)
        i = rng.integers(0, shape, size=(samples, self.n_axes))
        j = rng.integers(0, shape, size=(samples, self.n_axes))
        keep = ((i + j) % 2 == 0).all(axis=1)
        i, j = i[keep], j[keep]
        m = (i + j) // 2
        fi = v[tuple(i.T)]
        fj = v[tuple(j.T)]
        fm = v[tuple(m.T)]
        gap = fm - 0.5 * (fi + fj)
        gap = gap[np.isfinite(gap)]
        if gap.size:
            worst = max(worst, float(gap.max()))
        return worst

    def is_convex(self, tol=1e-9, rng=None):
        return self.midpoint_convexity_violation(rng=rng) <= tol

    # -- serialization -----------------------------------------------------

    def to_dict(self):
        flat = [
            "inf" if not np.isfinite(x) else float(x)
            for x in self.values.ravel(order="C")
        ]
        if len(self.grids) == 1:
            d = self.grids[0].to_dict()
        else:
            d = {"grids": [g.to_dict() for g in self.grids]}
        d["interpolation"] = self.interpolation
        d["values"] = flat
        return d

    @classmethod
    def from_dict(cls, d):
        if "grids" in d:
            grids = tuple(BoxGrid.from_dict(g) for g in d["grids"])
        else:
            grids = (BoxGrid.from_dict(d),)
        vals = np.array(
            [INF if v == "inf" else float(v) for v in d["values"]], dtype=float
        )
        return cls(grids, vals, d.get("interpolation", "multilinear"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _lower_convex_envelope_1d(x, v):
    """Greatest convex minorant of the finite points of a 1D table."""
    finite = np.isfinite(v)
    if finite.sum() < 2:
        return v.copy()
    xs, vs = x[finite], v[finite]
    hull_x, hull_v = [xs[0]], [vs[0]]
    for xi, vi in zip(xs[1:], vs[1:]):
        hull_x.append(xi)
        hull_v.append(vi)
        while len(hull_x) >= 3:
            s1 = (hull_v[-2] - hull_v[-3]) / (hull_x[-2] - hull_x[-3])
            s2 = (hull_v[-1] - hull_v[-2]) / (hull_x[-1] - hull_x[-2])
            if s1 <= s2 + 1e-15:
                break
            del hull_x[-2], hull_v[-2]
    out = np.full_like(v, INF)
    out[finite] = np.interp(xs, hull_x, hull_v)
    return out


def crop_symmetric(table, half_counts):
    """Restrict a table to center +- half_counts[k] nodes per axis."""
    slices, grids, k = [], [], 0
    for g in table.grids:
        m = g.points_per_axis
        c = (m - 1) // 2
        hc = int(half_counts[k])
        if not 1 <= hc <= c:
            raise InvalidParameter("invalid crop half-width")
        for _ in range(g.dim):
            slices.append(slice(c - hc, c + hc + 1))
        grids.append(BoxGrid(g.dim, hc * g.h, 2 * hc + 1))
        k += g.dim
    return TabulatedFunction(tuple(grids), table.values[tuple(slices)],
                             table.interpolation)


def pairing_lattice(table):
    """<a, b> on all nodes of a two-argument table."""
    if len(table.grids) != 2:
        raise InvalidParameter("pairing_lattice needs a two-argument table")
    ga, gb = table.grids
    if ga.dim != gb.dim:
        raise GridMismatch("argument dimensions differ")
    lat = table.node_lattice()
    a = lat[..., : ga.dim]
    b = lat[..., ga.dim :]
    return np.einsum("...k,...k->...", a, b)


def quadratic_table(grids, coeffs=None):
    """Convenience table  sum_k c_k x_k^2 / 2  on the given grids."""
    grids = (grids,) if isinstance(grids, BoxGrid) else tuple(grids)
    probe = TabulatedFunction(grids, np.zeros(
        tuple(g.points_per_axis for g in grids for _ in range(g.dim))))
    lat = probe.node_lattice()
    if coeffs is None:
        coeffs = np.ones(probe.n_axes)
    vals = 0.5 * np.einsum("...k,k->...", lat**2, np.asarray(coeffs, float))
    return TabulatedFunction(grids, vals)
