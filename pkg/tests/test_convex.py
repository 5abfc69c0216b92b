"""Convex-kernel operations against brute-force and closed-form oracles."""

import json

import numpy as np
import pytest

from sdhom import (
    BoxGrid,
    TabulatedFunction,
    graph_extract,
    inf_convolution,
    legendre_transform,
    moreau_regularize,
    prox,
    selfdual_gap_check,
    swap_args,
)
from sdhom.convex import conjugate_swapped
from sdhom.errors import (
    BoxTooSmall,
    DomainEmpty,
    EmptyImage,
    GridMismatch,
    InvalidParameter,
)
from sdhom.grids import INF, pairing_lattice


def table_1d(radius, points, fn):
    g = BoxGrid(1, radius, points)
    return TabulatedFunction((g,), fn(g.nodes()))


def table_2arg(radius_a, pts_a, radius_b, pts_b, fn):
    ga = BoxGrid(1, radius_a, pts_a)
    gb = BoxGrid(1, radius_b, pts_b)
    A, B = np.meshgrid(ga.nodes(), gb.nodes(), indexing="ij")
    return TabulatedFunction((ga, gb), fn(A, B))


def conj_oracle_dense(fn, y, lo, hi, n=200001):
    """Brute-force sup over a dense refinement, independent of the kernel."""
    xs = np.linspace(lo, hi, n)
    return np.max(xs * y - fn(xs))


# ---------------------------------------------------------------------------
# legendre_transform


def test_legendre_quadratic_self_conjugate():
    f = table_1d(4.0, 257, lambda a: 0.5 * a**2)
    out = BoxGrid(1, 2.0, 257)
    fs = legendre_transform(f, out_grids=(out,))
    y = out.nodes()
    assert np.abs(fs.values - 0.5 * y**2).max() <= 1e-3


def test_legendre_power_conjugate_pair():
    # f = |a|^3/3, f* = |b|^{3/2}/(3/2), conjugate exponents 3 and 3/2
    f = table_1d(4.0, 1025, lambda a: np.abs(a) ** 3 / 3.0)
    out = BoxGrid(1, 2.0, 257)
    fs = legendre_transform(f, out_grids=(out,))
    y = out.nodes()
    exact = np.abs(y) ** 1.5 / 1.5
    h = f.grids[0].h
    assert np.abs(fs.values - exact).max() <= 20 * h


def test_legendre_quartic_against_dense_scan():
    f = table_1d(2.0, 401, lambda a: a**4 / 4.0)
    fs = legendre_transform(f, out_grids=(BoxGrid(1, 1.5, 97),))
    y = fs.grids[0].nodes()
    j = int(np.argmin(np.abs(y - 1.0)))
    assert abs(y[j] - 1.0) < 1e-12
    oracle = conj_oracle_dense(lambda a: a**4 / 4.0, 1.0, -2.0, 2.0)
    assert abs(oracle - 0.75) < 1e-8  # analytic stationarity a=1 gives 3/4
    assert abs(fs.values[j] - 0.75) <= 1e-2


def test_legendre_all_infinite_raises():
    g = BoxGrid(1, 1.0, 9)
    f = TabulatedFunction((g,), np.full(9, INF))
    with pytest.raises(DomainEmpty):
        legendre_transform(f)


def test_legendre_boundary_argmax_raises():
    # steep output slope forces the argmax to the box edge
    f = table_1d(1.0, 33, lambda a: 0.5 * a**2)
    with pytest.raises(BoxTooSmall):
        legendre_transform(f, out_grids=(BoxGrid(1, 4.0, 33),))
    _, mask = legendre_transform(
        f, out_grids=(BoxGrid(1, 4.0, 33),), on_boundary="mask",
        return_mask=True,
    )
    assert not mask.all() and mask.any()


def test_legendre_matches_brute_force_on_random_tables():
    rng = np.random.default_rng(7)
    g = BoxGrid(1, 1.5, 17)
    x = g.nodes()
    for _ in range(25):
        vals = rng.normal(size=(17, 17))
        if rng.random() < 0.3:
            vals[rng.integers(0, 17), rng.integers(0, 17)] = INF
        f = TabulatedFunction((g, g), vals)
        fs = legendre_transform(f, on_boundary="mask")
        A, B = np.meshgrid(x, x, indexing="ij")
        W = np.where(np.isfinite(vals), vals, np.nan)
        brute = np.full((17, 17), -INF)
        for i in range(17):
            for j in range(17):
                cand = x[i] * A + x[j] * B - W
                brute[i, j] = np.nanmax(cand)
        assert np.allclose(fs.values, brute, atol=1e-12)


# ---------------------------------------------------------------------------
# inf_convolution


def test_infconv_indicator_is_identity():
    g = BoxGrid(1, 2.0, 65)
    x = g.nodes()
    chi = np.full(65, INF)
    chi[32] = 0.0  # indicator of the origin
    f = TabulatedFunction((g,), chi)
    gq = TabulatedFunction((g,), x**2 - x + 0.3)
    h = inf_convolution(f, gq)
    assert np.allclose(h.values, gq.values)


def test_infconv_quadratics():
    g = BoxGrid(1, 4.0, 257)
    x = g.nodes()
    f = TabulatedFunction((g,), x**2)
    h = inf_convolution(f, f)
    mid = np.abs(x) <= 2.0  # interior where the min is attained in-box
    assert np.abs(h.values[mid] - 0.5 * x[mid] ** 2).max() <= 1e-2


def test_infconv_norm_idempotent():
    g = BoxGrid(1, 2.0, 129)
    x = g.nodes()
    f = TabulatedFunction((g,), np.abs(x))
    h = inf_convolution(f, f)
    mid = np.abs(x) <= 1.0
    assert np.abs(h.values[mid] - np.abs(x[mid])).max() <= 1e-12


def test_infconv_grid_mismatch():
    f = table_1d(1.0, 9, np.abs)
    g2 = table_1d(2.0, 9, np.abs)
    with pytest.raises(GridMismatch):
        inf_convolution(f, g2)


def test_infconv_2d_matches_brute():
    rng = np.random.default_rng(3)
    g = BoxGrid(1, 1.0, 9)
    x = g.nodes()
    fv = rng.normal(size=(9, 9))
    gv = rng.normal(size=(9, 9))
    f = TabulatedFunction((g, g), fv)
    q = TabulatedFunction((g, g), gv)
    h = inf_convolution(f, q)
    c = 4
    brute = np.full((9, 9), INF)
    for k1 in range(9):
        for k2 in range(9):
            best = INF
            for j1 in range(9):
                for j2 in range(9):
                    d1, d2 = k1 - j1, k2 - j2
                    if abs(d1) <= c and abs(d2) <= c:
                        best = min(best, fv[j1, j2] + gv[d1 + c, d2 + c])
            brute[k1, k2] = best
    assert np.allclose(h.values, brute)


# ---------------------------------------------------------------------------
# moreau_regularize


def test_moreau_quadratic_min_at_origin():
    L = table_2arg(2.0, 65, 2.0, 65, lambda a, b: 0.5 * a**2 + 0.5 * b**2)
    for lam in (0.1, 0.01):
        Ll = moreau_regularize(L, lam)
        i = 32
        assert Ll.values[i, i] == 0.0


def test_moreau_selfdual_gap_stays_small():
    L = table_2arg(4.0, 257, 4.0, 257, lambda a, b: 0.5 * a**2 + 0.5 * b**2)
    h = L.grids[0].h
    Ll = moreau_regularize(L, 0.01)
    rep = selfdual_gap_check(Ll, p=2, tol_gap=1e-8)
    assert rep.max_gap <= 1e-8 + 10 * h


def test_moreau_singleton_table_hand_value():
    # L = +inf except L(1,1) = 1; the five-term sum at v=(1,1) gives 1+lam
    g = BoxGrid(1, 2.0, 129)  # h = 1/32, node at 1
    vals = np.full((129, 129), INF)
    i = int(np.argmin(np.abs(g.nodes() - 1.0)))
    vals[i, i] = 1.0
    L = TabulatedFunction((g, g), vals)
    for lam in (0.5, 0.1):
        Ll = moreau_regularize(L, lam)
        assert abs(Ll.values[i, i] - (1.0 + lam)) <= 1e-12
    assert np.isfinite(moreau_regularize(L, 0.1).values).all()


def test_moreau_matches_brute_force():
    rng = np.random.default_rng(11)
    g = BoxGrid(1, 1.0, 11)
    x = g.nodes()
    vals = rng.normal(size=(11, 11))
    vals[0, 3] = INF
    L = TabulatedFunction((g, g), vals)
    lam = 0.2
    Ll = moreau_regularize(L, lam)
    A, B = np.meshgrid(x, x, indexing="ij")
    brute = np.empty((11, 11))
    for i in range(11):
        for j in range(11):
            cand = (
                vals
                + (x[i] - A) ** 2 / (2 * lam)
                + lam * A**2 / 2
                + (x[j] - B) ** 2 / (2 * lam)
                + lam * B**2 / 2
            )
            brute[i, j] = np.min(cand)
    assert np.allclose(Ll.values, brute, atol=1e-12)


def test_moreau_invalid_lambda():
    L = table_2arg(1.0, 9, 1.0, 9, lambda a, b: a**2 + b**2)
    with pytest.raises(InvalidParameter):
        moreau_regularize(L, 0.0)


# ---------------------------------------------------------------------------
# selfdual_gap_check


def test_gap_check_potential_form_selfdual():
    L = table_2arg(4.0, 257, 4.0, 257, lambda a, b: 0.5 * a**2 + 0.5 * b**2)
    rep = selfdual_gap_check(L, p=2)
    assert rep.max_gap <= 1e-6
    assert "BelowBilinear" not in rep.flags


def test_gap_check_scaled_quadratic_hand_conjugate():
    # L = a^2 + b^2 has L*(b,a) = (a^2+b^2)/4; gap 3/4(a^2+b^2), max at corners
    L = table_2arg(1.0, 129, 1.0, 129, lambda a, b: a**2 + b**2)
    rep = selfdual_gap_check(L, p=2)
    assert abs(rep.max_gap - 1.5 * (1.0 - L.grids[0].h) ** 2) <= 1e-2
    assert "BelowBilinear" not in rep.flags  # a^2+b^2 >= ab everywhere

    # direct hand check at (1,1): L = 2 and L* = 0.5
    star, valid = conjugate_swapped(L)
    i = int(np.argmin(np.abs(L.grids[0].nodes() - 1.0)))
    assert valid[i, i]
    assert abs(L.values[i, i] - 2.0) < 1e-12
    assert abs(star.values[i, i] - 0.5) < 1e-2
    assert abs(abs(star.values[i, i] - L.values[i, i]) - 1.5) <= 1e-2


def test_gap_check_bilinear_flagged_not_convex():
    L = table_2arg(1.0, 65, 1.0, 65, lambda a, b: a * b)
    rep = selfdual_gap_check(L)
    assert "NotConvex" in rep.flags


# ---------------------------------------------------------------------------
# graph_extract


def test_graph_extract_identity_field():
    L = table_2arg(2.0, 257, 2.0, 257, lambda a, b: 0.5 * a**2 + 0.5 * b**2)
    h = L.grids[1].h
    img = graph_extract(L, 1.0, tol=1e-4)
    assert not img.empty
    assert abs(img.point[0] - 1.0) <= h
    assert img.interval[0] <= 1.0 <= img.interval[1]


def test_graph_extract_abs_subdifferential_interval():
    g = BoxGrid(1, 2.0, 257)
    a = g.nodes()
    phi = np.abs(a)
    phistar = legendre_transform(
        TabulatedFunction((g,), phi), on_boundary="mask"
    )
    A, B = np.meshgrid(a, a, indexing="ij")
    L = TabulatedFunction((g, g), np.abs(A) + phistar.values[None, :])
    img = graph_extract(L, 0.0, tol=1e-9)
    h = g.h
    assert abs(img.interval[0] - (-1.0)) <= h + 1e-12
    assert abs(img.interval[1] - 1.0) <= h + 1e-12


def test_graph_extract_empty_image_raises():
    g = BoxGrid(1, 1.0, 65)
    vals = np.full((65, 65), INF)
    vals[32, 32] = 0.0
    L = TabulatedFunction((g, g), vals)
    with pytest.raises(EmptyImage):
        graph_extract(L, 1.0, tol=1e-3, tol_gap=1e-6)


# ---------------------------------------------------------------------------
# prox


def test_prox_zero_function_is_identity():
    f = table_1d(4.0, 257, lambda a: np.zeros_like(a))
    assert np.allclose(prox(f, 1.7, 1.0), [1.7], atol=f.grids[0].h)


def test_prox_soft_threshold():
    f = table_1d(4.0, 257, np.abs)
    assert abs(prox(f, 2.0, 1.0)[0] - 1.0) <= 1e-10


def test_prox_quadratic_scaling():
    f = table_1d(4.0, 257, lambda a: 0.5 * a**2)
    assert abs(prox(f, 1.0, 1.0)[0] - 0.5) <= 1e-10


# ---------------------------------------------------------------------------
# invariants & properties (seeded)


def random_convex_table_1d(rng, grid):
    """Random convex table: max of affine functions plus a soft quadratic."""
    x = grid.nodes()
    k = rng.integers(3, 8)
    slopes = rng.normal(scale=2.0, size=k)
    offsets = rng.normal(scale=1.0, size=k)
    vals = np.max(slopes[:, None] * x[None, :] + offsets[:, None], axis=0)
    vals = vals + rng.uniform(0.05, 1.0) * x**2
    return TabulatedFunction((grid,), vals)


def test_property_conjugation_involution():
    rng = np.random.default_rng(2024)
    g = BoxGrid(1, 3.0, 129)
    dual = BoxGrid(1, 12.0, 513)
    inner = np.abs(g.nodes()) <= 1.5
    for _ in range(50):
        f = random_convex_table_1d(rng, g)
        fs = legendre_transform(f, out_grids=(dual,), on_boundary="mask")
        fss = legendre_transform(fs, out_grids=(g,), on_boundary="mask")
        err = np.abs(fss.values - f.values)[inner]
        assert err.max() <= 10 * g.h * (1 + np.abs(f.values).max())


def test_property_order_reversal():
    rng = np.random.default_rng(99)
    g = BoxGrid(1, 2.0, 65)
    for _ in range(50):
        f = random_convex_table_1d(rng, g)
        q = TabulatedFunction((g,), f.values + rng.uniform(0.0, 1.0, size=65))
        fs = legendre_transform(f, on_boundary="mask")
        qs = legendre_transform(q, on_boundary="mask")
        assert (fs.values >= qs.values - 1e-12).all()


def test_property_fenchel_young():
    rng = np.random.default_rng(5)
    g = BoxGrid(1, 2.0, 65)
    for _ in range(30):
        f = random_convex_table_1d(rng, g)
        fs = legendre_transform(f, out_grids=(BoxGrid(1, 8.0, 129),),
                                on_boundary="mask")
        x = g.nodes()
        y = fs.grids[0].nodes()
        lhs = f.values[:, None] + fs.values[None, :]
        assert (lhs - x[:, None] * y[None, :] >= -1e-10).all()


def test_property_moreau_identity():
    # prox_{f,1}(x) + prox_{f*,1}(x) = x up to grid error
    rng = np.random.default_rng(17)
    g = BoxGrid(1, 4.0, 257)
    dual = BoxGrid(1, 16.0, 1025)
    for _ in range(20):
        f = random_convex_table_1d(rng, g)
        fs = legendre_transform(f, out_grids=(dual,), on_boundary="mask")
        for x in rng.uniform(-1.0, 1.0, size=3):
            p1 = prox(f, x, 1.0)[0]
            p2 = prox(fs, x, 1.0)[0]
            assert abs(p1 + p2 - x) <= 6 * g.h


def test_property_potential_gap_small():
    rng = np.random.default_rng(31)
    g = BoxGrid(1, 3.0, 129)
    for _ in range(10):
        f = random_convex_table_1d(rng, g)
        fs = legendre_transform(
            f, out_grids=(BoxGrid(1, 12.0, 513),), on_boundary="mask"
        )
        A = f.values[:, None] + fs.values[None, :]
        L = TabulatedFunction((g, fs.grids[0]), A)
        rep = selfdual_gap_check(L)
        scale = 1 + np.abs(f.values).max()
        assert rep.max_gap <= 40 * g.h * scale


def test_property_graph_extract_monotone():
    rng = np.random.default_rng(41)
    g = BoxGrid(1, 3.0, 129)
    dual = BoxGrid(1, 12.0, 257)
    for _ in range(10):
        f = random_convex_table_1d(rng, g)
        fs = legendre_transform(f, out_grids=(dual,), on_boundary="mask")
        L = TabulatedFunction(
            (g, dual), f.values[:, None] + fs.values[None, :]
        )
        pts = []
        for a in np.linspace(-1.0, 1.0, 9):
            img = graph_extract(L, a, tol=5e-2 * (1 + np.abs(f.values).max()))
            if not img.empty:
                pts.append((a, img.point[0]))
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                da = pts[i][0] - pts[j][0]
                db = pts[i][1] - pts[j][1]
                assert da * db >= -2 * dual.h


# ---------------------------------------------------------------------------
# serialization


def test_table_json_roundtrip_with_inf(tmp_path):
    g = BoxGrid(1, 1.0, 9)
    vals = np.arange(81, dtype=float).reshape(9, 9)
    vals[0, 0] = INF
    t = TabulatedFunction((g, g), vals)
    p = tmp_path / "t.json"
    t.save(p)
    raw = json.loads(p.read_text())
    assert raw["values"][0] == "inf"
    back = TabulatedFunction.load(p)
    assert back.grids == t.grids
    assert np.array_equal(back.values, t.values)


def test_single_grid_record_shape(tmp_path):
    g = BoxGrid(1, 2.0, 17)
    t = TabulatedFunction((g,), g.nodes() ** 2)
    d = t.to_dict()
    assert d["dim"] == 1 and d["radius"] == 2.0 and d["points_per_axis"] == 17
    assert TabulatedFunction.from_dict(d).grids == (g,)


def test_swap_args_roundtrip():
    t = table_2arg(1.0, 9, 2.0, 11, lambda a, b: a + 2 * b)
    s = swap_args(t)
    assert s.grids == (t.grids[1], t.grids[0])
    assert np.array_equal(swap_args(s).values, t.values)


def test_pairing_lattice():
    t = table_2arg(1.0, 5, 1.0, 5, lambda a, b: a * 0)
    P = pairing_lattice(t)
    x = t.grids[0].nodes()
    assert np.allclose(P, np.outer(x, x))
