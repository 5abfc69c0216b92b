"""Finite-dimensional convex-analysis primitives on node grids.

Legendre-Fenchel transforms are computed exactly over the node set by
iterated per-axis suprema (iterated sup equals the joint sup). Each pass
uses a linear-time slope search on lines that are concave after negation
and falls back to a vectorized brute-force scan on lines that are not, so
the result never depends on a convexity assumption.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _envelope
from .errors import (
    BoxTooSmall,
    DomainEmpty,
    EmptyImage,
    GridMismatch,
    InvalidParameter,
)
from .grids import INF, BoxGrid, GapReport, TabulatedFunction, pairing_lattice

_CONCAVE_SLACK = 1e-11


def _sup_pass(W, mask, x, y, axis):
    """One conjugation pass: out[...,j,...] = max_i  x[i]*y[j] + W[...,i,...].

    ``mask`` marks entries whose sup history already touched the box
    boundary (such values understate the truth). An output node is
    reliable iff some reliable interior candidate attains the max within
    roundoff: a strict boundary argmax means the sup escaped the box, and
    flat ties never taint.
    """
    Wm = np.moveaxis(W, axis, -1)
    maskm = np.moveaxis(mask, axis, -1)
    lead = Wm.shape[:-1]
    M = Wm.shape[-1]
    lines = Wm.reshape(-1, M)
    mlines = maskm.reshape(-1, M)
    J = len(y)
    out = np.full((lines.shape[0], J), -INF)
    bad = np.zeros((lines.shape[0], J), dtype=bool)

    for l in range(lines.shape[0]):
        w = lines[l]
        fin = np.isfinite(w)
        if not fin.any():
            bad[l] = True
            continue
        tainted = mlines[l]
        s = int(fin.argmax())
        e = M - 1 - int(fin[::-1].argmax())
        seg = w[s : e + 1]
        fast = np.isfinite(seg).all() and not tainted.any()
        if fast and seg.size > 2:
            d = np.diff(seg)
            scale = max(1.0, float(np.abs(seg).max()))
            fast = not (np.diff(d) > _CONCAVE_SLACK * scale).any()
        if fast:
            if seg.size == 1:
                k = np.full(J, s, dtype=np.int64)
            else:
                c = -(np.diff(seg)) / (x[s + 1] - x[s])
                k = s + np.searchsorted(c, y, side="left")
            v = x[k] * y + w[k]
            out[l] = v
            tol = 1e-12 * (1.0 + np.abs(v))
            lo = k == 0
            if lo.any():
                nb = x[1] * y[lo] + w[1]
                bad[l, lo] = ~(nb >= v[lo] - tol[lo])
            hi = k == M - 1
            if hi.any():
                nb = x[M - 2] * y[hi] + w[M - 2]
                bad[l, hi] = ~(nb >= v[hi] - tol[hi])
        else:
            cand = x[:, None] * y[None, :] + w[:, None]
            cand = np.where(np.isfinite(cand), cand, -INF)
            v = cand.max(axis=0)
            out[l] = v
            reliable = cand.copy()
            reliable[tainted, :] = -INF
            reliable[0, :] = -INF
            reliable[M - 1, :] = -INF
            rel_best = reliable.max(axis=0)
            tol = 1e-12 * (1.0 + np.abs(v))
            bad[l] = ~(rel_best >= v - tol)

    out = np.moveaxis(out.reshape(lead + (J,)), -1, axis)
    bad = np.moveaxis(bad.reshape(lead + (J,)), -1, axis)
    return out, bad


def _resolve_out_grids(f, out_grids):
    if out_grids is None:
        return f.grids
    if isinstance(out_grids, BoxGrid):
        out_grids = (out_grids,)
    out_grids = tuple(out_grids)
    if len(out_grids) != len(f.grids):
        raise InvalidParameter("out_grids must match the argument count")
    for g, og in zip(f.grids, out_grids):
        if g.dim != og.dim:
            raise InvalidParameter("out_grids must match argument dimensions")
    return out_grids


def legendre_transform(f, out_grids=None, on_boundary="raise", return_mask=False):
    """Fenchel conjugate f*(y) = max over nodes x of <x,y> - f(x).

    The max runs over the full node set of ``f``; output nodes are those of
    ``out_grids`` (default: same grids). A conjugate value whose argmax lies
    on the box boundary is unreliable (the true sup may escape the box);
    depending on ``on_boundary`` this raises BoxTooSmall, or the offending
    nodes are reported in the validity mask.
    """
    if not np.isfinite(f.values).any():
        raise DomainEmpty("conjugate of an identically +inf table")
    if on_boundary not in ("raise", "mask"):
        raise InvalidParameter("on_boundary must be 'raise' or 'mask'")
    out_grids = _resolve_out_grids(f, out_grids)
    out_axes = [g.nodes() for g in out_grids for _ in range(g.dim)]
    W = np.where(np.isfinite(f.values), -f.values, -INF)
    mask = np.zeros_like(W, dtype=bool)
    for axis, (x, y) in enumerate(zip(f.axis_nodes(), out_axes)):
        W, mask = _sup_pass(W, mask, x, y, axis)
    if on_boundary == "raise" and mask.any():
        worst = np.unravel_index(int(mask.argmax()), mask.shape)
        raise BoxTooSmall(
            f"conjugate argmax on the box boundary at output node {worst}; "
            "enlarge the input radius or shrink the output radius"
        )
    table = TabulatedFunction(out_grids, W)
    if return_mask:
        return table, ~mask
    return table


def swap_args(table):
    """Exchange the two argument blocks of a two-argument table."""
    if len(table.grids) != 2:
        raise InvalidParameter("swap_args needs a two-argument table")
    ga, gb = table.grids
    perm = list(range(ga.dim, ga.dim + gb.dim)) + list(range(ga.dim))
    return TabulatedFunction((gb, ga), np.transpose(table.values, perm),
                             table.interpolation)


def conjugate_swapped(L, on_boundary="mask"):
    """Table of L*(b, a) on the grids of L, plus a validity mask."""
    ga, gb = L.grids
    t, valid = legendre_transform(
        L, out_grids=(gb, ga), on_boundary="mask", return_mask=True
    )
    swapped = swap_args(t)
    perm = list(range(gb.dim, gb.dim + ga.dim)) + list(range(gb.dim))
    valid = np.transpose(valid, perm)
    if on_boundary == "raise" and not valid.all():
        raise BoxTooSmall("conjugate argmax on the box boundary")
    return swapped, valid


def inf_convolution(f, g):
    """(f # g)(x) = min over nodes y of f(y) + g(x - y), on the shared grid.

    Lattice differences x - y land on the lattice again, so g is looked up
    exactly; points outside the box count as +inf.
    """
    f.require_same_grids(g)
    if not np.isfinite(f.values).any() or not np.isfinite(g.values).any():
        raise DomainEmpty("inf-convolution of an improper table")
    if f.n_axes == 1:
        M = f.shape[0]
        c = (M - 1) // 2
        gpad = np.full(2 * M - 1, INF)
        gpad[(M - 1) - c : (M - 1) + c + 1] = g.values
        # SW[k, m] = gpad[k + m]; with m = M-1-j this is g at offset k - j
        SW = np.lib.stride_tricks.sliding_window_view(gpad, M)
        cand = SW[:, ::-1] + f.values[None, :]
        return f.copy_with(cand.min(axis=1))

    shape = f.shape
    out = np.full(shape, INF)
    centers = [(m - 1) // 2 for m in shape]
    it = np.ndindex(*shape)
    fvals = f.values
    for j in it:
        fj = fvals[j]
        if not np.isfinite(fj):
            continue
        src, dst = [], []
        for ax, (jk, m, c) in enumerate(zip(j, shape, centers)):
            lo = max(0, jk - c)
            hi = min(m, jk + c + 1)
            dst.append(slice(lo, hi))
            src.append(slice(lo - jk + c, hi - jk + c))
        out[tuple(dst)] = np.minimum(out[tuple(dst)], fj + g.values[tuple(src)])
    return f.copy_with(out)


def moreau_regularize(L, lam):
    """Coercive Moreau smoothing over the node set.

    L_lam(u) = min over nodes v of L(v) + |u-v|^2/(2 lam) + lam |v|^2 / 2,
    applied jointly in all arguments (for a two-argument table this is the
    five-term phase-space regularization). Finite everywhere; preserves
    selfduality up to grid error.
    """
    if not lam > 0:
        raise InvalidParameter("lambda must be positive")
    if not np.isfinite(L.values).any():
        raise DomainEmpty("regularizing an identically +inf table")
    W = L.values.copy()
    alpha = 1.0 / (2.0 * lam)
    for axis, nodes in enumerate(L.axis_nodes()):
        shape = [1] * W.ndim
        shape[axis] = len(nodes)
        W = W + 0.5 * lam * (nodes.reshape(shape) ** 2)
        W = _envelope.quad_minconv_axis(W, nodes, alpha, axis)
    return L.copy_with(W)


def _interior_mask(shape):
    m = np.zeros(shape, dtype=bool)
    m[tuple(slice(1, -1) for _ in shape)] = True
    return m


def selfdual_gap_check(L, p=None, tol_gap=None, rng=None, convexity_tol=None):
    """Measure max |L*(b,a) - L(a,b)| over interior nodes.

    The conjugate is computed independently by legendre_transform in both
    variables. Also verifies the basic inequality L(a,b) >= <a,b> on every
    node. Non-convex inputs are flagged ``NotConvex`` (the conjugate of a
    non-convex table certifies nothing); ``convexity_tol`` admits the
    O(h^2) midpoint wiggle of tables assembled from discrete conjugates.
    """
    if tol_gap is None:
        tol_gap = 1e-8 if p == 2 else 1e-6
    viol = L.midpoint_convexity_violation(rng=rng)
    scale = max(1.0, float(np.abs(L.values[np.isfinite(L.values)]).max()))
    if convexity_tol is None:
        convexity_tol = 1e-9 * scale
    if viol > convexity_tol:
        return GapReport(
            max_gap=INF,
            argmax_point=(),
            tolerance_used=tol_gap,
            flags=("NotConvex",),
            details={"convexity_violation": viol},
        )
    star, valid = conjugate_swapped(L)
    ok = valid & _interior_mask(L.shape) & np.isfinite(L.values)
    flags = []
    details = {}
    if not ok.any():
        flags.append("NoValidNodes")
        gap_val, arg = INF, ()
    else:
        diff = np.where(ok, np.abs(star.values - L.values), -INF)
        flat = int(np.argmax(diff))
        arg_idx = np.unravel_index(flat, L.shape)
        nodes = L.axis_nodes()
        arg = tuple(float(nodes[k][i]) for k, i in enumerate(arg_idx))
        gap_val = float(diff[arg_idx])
    below = L.values - pairing_lattice(L)
    min_below = float(np.min(below[np.isfinite(below)]))
    details["min_above_pairing"] = min_below
    if min_below < -tol_gap:
        flags.append("BelowBilinear")
    return GapReport(
        max_gap=gap_val,
        argmax_point=arg,
        tolerance_used=tol_gap,
        flags=tuple(flags),
        details=details,
    )


@dataclass
class GraphImage:
    """Nodes b with L(a,b) - <a,b> <= tol, plus a refined representative."""

    a: np.ndarray
    points: np.ndarray          # (n_sel, N) selected b nodes
    gaps: np.ndarray
    tol: float
    interval: tuple = None      # (b_min, b_max), 1D only
    point: np.ndarray = None    # vertex-refined minimal-gap point
    details: dict = field(default_factory=dict)

    @property
    def empty(self):
        return self.points.shape[0] == 0


def _parabola_vertex(x0, h, ym, y0, yp):
    """Vertex abscissa of the parabola through (x0-h,ym),(x0,y0),(x0+h,yp)."""
    denom = ym - 2.0 * y0 + yp
    if not np.isfinite(denom) or denom <= 0:
        return x0
    delta = 0.5 * h * (ym - yp) / denom
    return x0 + float(np.clip(delta, -h, h))


def graph_extract(L, a, tol, tol_gap=1e-6):
    """Image of a under the selfdual vector field of L.

    Returns every second-argument node whose selfdual gap at ``a`` is below
    ``tol``; in 1D the image is summarized as a closed interval (monotone
    graphs have interval-valued images) plus a parabolic vertex refinement
    of the minimal-gap point.
    """
    ga, gb = L.grids
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.shape != (ga.dim,):
        raise InvalidParameter(f"a must have {ga.dim} coordinates")
    bus = np.stack(
        np.meshgrid(*[gb.nodes()] * gb.dim, indexing="ij"), axis=-1
    ).reshape(-1, gb.dim)
    pts = np.concatenate([np.broadcast_to(a, bus.shape), bus], axis=1)
    gaps = L(pts) - bus @ a
    sel = np.isfinite(gaps) & (gaps <= tol)
    if not sel.any():
        if tol >= 10.0 * tol_gap:
            raise EmptyImage(
                f"no image nodes at tol={tol}; a={a} is below the tabulated "
                "effective domain"
            )
        return GraphImage(a=a, points=bus[:0], gaps=gaps[:0], tol=tol)
    points = bus[sel]
    img = GraphImage(a=a, points=points, gaps=gaps[sel], tol=tol)
    finite_g = np.where(np.isfinite(gaps), gaps, INF)
    k = int(np.argmin(finite_g))
    if gb.dim == 1:
        img.interval = (float(points.min()), float(points.max()))
        h = gb.h
        if 0 < k < len(bus) - 1:
            vx = _parabola_vertex(
                bus[k, 0], h, finite_g[k - 1], finite_g[k], finite_g[k + 1]
            )
        else:
            vx = float(bus[k, 0])
        img.point = np.array([min(max(vx, img.interval[0] - h),
                                  img.interval[1] + h)])
    else:
        img.point = bus[k].copy()
    img.details["min_gap"] = float(finite_g[k])
    return img


def prox(f, x, step):
    """argmin over nodes of f(y) + |y - x|^2 / (2 step), quadratically refined.

    The refinement fits a parabola per axis through the argmin node and its
    neighbors; ties break to the lowest lexicographic node index.
    """
    if not step > 0:
        raise InvalidParameter("step must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lat = f.node_lattice().reshape(-1, f.n_axes)
    obj = f.values.reshape(-1) + np.sum((lat - x) ** 2, axis=1) / (2.0 * step)
    obj = np.where(np.isfinite(obj), obj, INF)
    k = int(np.argmin(obj))
    idx = np.unravel_index(k, f.shape)
    nodes = f.axis_nodes()
    out = np.array([nodes[ax][i] for ax, i in enumerate(idx)], dtype=float)
    objnd = obj.reshape(f.shape)
    for ax, i in enumerate(idx):
        if 0 < i < f.shape[ax] - 1:
            sl = list(idx)
            sl[ax] = i - 1
            ym = objnd[tuple(sl)]
            sl[ax] = i + 1
            yp = objnd[tuple(sl)]
            if np.isfinite(ym) and np.isfinite(yp):
                out[ax] = _parabola_vertex(
                    out[ax], f.axis_steps()[ax], ym, objnd[idx], yp
                )
    return out
