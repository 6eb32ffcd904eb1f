import json
import warnings

import numpy as np
import pytest

from orbitmaps import dalg
from orbitmaps import dynamics as dyn
from orbitmaps import famap, prm
from orbitmaps.dalg import Tps, variable
from orbitmaps.famap import Stpm, StpmDomainError, TrustRadiusWarning

MU = dyn.MU_EARTH_MOON


def op_member(model, m):
    """Model state and period at ``op + dk``, always from the op point's own region."""
    i = model.region_index(m.op_point)
    return lambda dk: prm.eval_prm(model, m.op_point + dk, region=i)


# -- construction --------------------------------------------------------------

def test_normalized_constant_part(l2_map, l2_model):
    m = l2_map
    x0, T = op_member(l2_model, m)(0.0)
    assert len(m.grid) == m.ns + 1 and m.grid[0] == 0.0 and m.grid[-1] == 1.0
    tr = dyn.trajectory(x0, T, m.ns)
    const = m.coeffs[:, :, 0]
    assert np.max(np.abs(const - tr)) < 1e-10
    init, period = prm.prm_to_tps(l2_model, m.op_point, m.order)
    assert np.array_equal(m.coeffs[0], np.array([c.dense for c in init]))
    assert np.array_equal(m.period_map, period.dense)


def test_time_constant_part(l2_map_time, l2_model):
    m = l2_map_time
    x0, T = op_member(l2_model, m)(0.0)
    assert np.all(m.steps == m.steps[0])
    tr = dyn.trajectory(x0, m.grid[-1], int(m.steps.sum()))
    assert np.max(np.abs(m.coeffs[:, :, 0] - tr[:: m.steps[0]])) < 1e-10
    assert m.grid[-1] == pytest.approx(T, rel=1e-12)


@pytest.mark.parametrize("which", ["l2_map", "l2_map_time"])
def test_first_order_vs_central_differences(which, l2_model, request):
    m = request.getfixturevalue(which)
    member = op_member(l2_model, m)
    eps = 1e-6
    (xp, Tp), (xm, Tm) = member(eps), member(-eps)
    for j in (len(m.grid) // 3, len(m.grid) - 1):
        if m.mode == "normalized":
            fp = dyn.propagate(xp, Tp * m.grid[j], j)
            fm = dyn.propagate(xm, Tm * m.grid[j], j)
        else:
            n = int(m.steps[:j].sum())
            fp, fm = dyn.propagate(xp, m.grid[j], n), dyn.propagate(xm, m.grid[j], n)
        fd = (fp - fm) / (2 * eps)
        c1 = m.coeffs[j, :, 1]
        assert np.allclose(c1, fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())


def test_first_order_matches_stm(l2_map_time):
    m = l2_map_time
    j = len(m.grid) // 2
    n = int(m.steps[:j].sum())
    _, stm = dyn.propagate_stm(m.coeffs[0, :, 0], m.grid[j], n)
    assert np.allclose(m.coeffs[j, :, 1], stm @ m.coeffs[0, :, 1], rtol=0, atol=1e-6)


def test_normalized_matches_time_at_op_point(l2_model, l2_map):
    init, period = prm.prm_to_tps(l2_model, l2_map.op_point, 2)
    ns = l2_map.ns
    grid = np.arange(ns + 1) * (period.cons / ns)
    tm = famap.build_stpm_time(init, grid, max_step=period.cons / ns)
    assert np.all(tm.steps == 1)
    assert np.max(np.abs(tm.coeffs[:, :, 0] - l2_map.coeffs[:, :, 0])) < 1e-10


def test_eta_one_closure(l2_map, l2_dense):
    m = l2_map
    k = l2_dense.kappas
    inside = np.flatnonzero(np.abs(k - m.op_point) < m.trust_radius)
    assert len(inside) > 20
    for i in inside:
        mem = l2_dense.members[i]
        assert np.max(np.abs(m.evaluate(mem.kappa - m.op_point, m.ns) - mem.x0)) < 1e-6


def test_normalized_closure_coefficients(l2_map):
    m = l2_map
    r = m.trust_radius
    for k in range(m.order):
        assert np.max(np.abs(m.coeffs[-1, :, k] - m.coeffs[0, :, k])) * r ** k < 1e-5


def test_remainder_order(l2_map, l2_model):
    member = op_member(l2_model, l2_map)
    errs = []
    for d in (2e-3, 1e-3, 5e-4):
        x0, T = member(d)
        ref = dyn.propagate(x0, T, l2_map.ns)
        errs.append(np.linalg.norm(l2_map.evaluate(d, l2_map.ns) - ref))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 32) & (ratios < 128)), ratios


def test_build_errors(l2_model, l2_map):
    init, period = prm.prm_to_tps(l2_model, l2_map.op_point, 3)
    with pytest.raises(ValueError):
        famap.build_stpm_time(init, [0.0, 0.2, 0.1], max_step=1e-3)
    with pytest.raises(ValueError):
        famap.build_stpm_time(init, [0.1, 0.2], max_step=1e-3)
    with pytest.raises(ValueError):
        famap.build_stpm_normalized(init, -1.0 * period, 100)
    with pytest.raises(TypeError):
        famap.build_stpm_normalized(init[:5], period, 100)
    d = variable(0, 1, 3)
    moon = np.array([1 - MU + 0 * d, 0 * d, 0 * d, 0 * d, 0.1 + d, 0 * d], dtype=object)
    with pytest.raises(famap.StpmBuildError, match="t="):
        famap.build_stpm_time(moon, [0.0, 0.01], max_step=1e-3)


# -- queries -------------------------------------------------------------------

def test_query_on_grid(l2_map, l2_map_time):
    for m in (l2_map, l2_map_time):
        j = 137
        assert np.allclose(famap.query_state(m, 1e-3, m.grid[j]), m.evaluate(1e-3, j),
                           rtol=0, atol=1e-15)


def test_query_hermite_vs_fine_grid(l2_map, l2_model):
    member = op_member(l2_model, l2_map)
    for dk in (0.0, 5e-4):
        x0, T = member(dk)
        for eta in (0.0005, 0.1235, 0.5005, 0.77777):
            fine = dyn.propagate(x0, eta * T, int(round(eta * 10 * l2_map.ns)))
            assert np.max(np.abs(famap.query_state(l2_map, dk, eta) - fine)) < 1e-8


def test_query_half_period_symmetry(l2_map):
    s = famap.query_state(l2_map, 0.0, 0.5)
    assert abs(s[1]) < 1e-6 and abs(s[3]) < 1e-6


def test_query_errors(l2_map, l2_map_time):
    with pytest.raises(StpmDomainError):
        famap.query_state(l2_map, 0.0, 1.01)
    with pytest.raises(StpmDomainError):
        famap.query_state(l2_map_time, 0.0, -0.1)
    with pytest.warns(TrustRadiusWarning):
        famap.query_state(l2_map, 2 * l2_map.trust_radius, 0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        famap.query_state(l2_map, 0.5 * l2_map.trust_radius, 0.3)


def test_time_to_eta(l2_map, l2_map_time, l2_model):
    m = l2_map
    for dk in (0.0, 1e-3):
        T = m.period(dk)
        assert famap.time_to_eta(m, dk, T) == 1.0
        assert famap.time_to_eta(m, dk, 0.0) == 0.0
    with pytest.raises(StpmDomainError):
        famap.time_to_eta(l2_map_time, 0.0, 1.0)
    member = op_member(l2_model, m)
    dk, t = 1e-3, 1.234
    eta = famap.time_to_eta(m, dk, t)
    x0, _ = member(dk)
    ref = dyn.propagate(x0, t, 4000)
    assert np.max(np.abs(famap.query_state(m, dk, eta) - ref)) < 1e-6


def test_time_to_eta_bad_period():
    m = Stpm(mode="normalized", op_point=1.0, order=1, grid=[0.0, 1.0],
             coeffs=np.zeros((2, 6, 2)), ns=1, period_map=np.array([1.0, -1000.0]))
    with pytest.raises(ValueError, match="period"):
        famap.time_to_eta(m, 0.01, 1.0)


def test_evaluate_many(l2_map):
    dks = np.linspace(-1e-3, 1e-3, 7)
    many = l2_map.evaluate_many(dks, 250)
    assert many.shape == (7, 6)
    for d, row in zip(dks, many):
        assert np.allclose(row, l2_map.evaluate(d, 250), rtol=0, atol=1e-15)
    ser = l2_map.map_at(250)
    assert dalg.evaluate(ser[4], [dks[2]]) == pytest.approx(many[2, 4], abs=1e-14)


# -- nearest member ------------------------------------------------------------

def test_nearest_member_on_manifold(l2_map):
    m = l2_map
    for dk, eta in ((7e-4, 0.3141), (-1.3e-3, 0.8), (0.0, 0.05)):
        p = famap.query_state(m, dk, eta)[:3]
        k0, e0, dist = famap.nearest_member(m, p)
        assert dist < 1e-8
        assert abs(k0 - (m.op_point + dk)) < 2 * m.trust_radius / 49
        assert abs(e0 - eta) < 1.0 / m.ns


def test_nearest_member_off_manifold(l2_map):
    m = l2_map
    dk, eta = 4e-4, 0.62
    foot = famap.query_state(m, dk, eta)[:3]
    # the planar family's manifold normal is the z axis
    k0, e0, dist = famap.nearest_member(m, foot + [0.0, 0.0, 1e-4])
    assert dist == pytest.approx(1e-4, rel=1e-3)
    assert abs(k0 - (m.op_point + dk)) <= 2 * m.trust_radius / 49
    assert abs(e0 - eta) <= 1.0 / m.ns


def test_nearest_member_tie_break():
    """Mirror-symmetric pair of nodes at eta = 1/4 and 3/4; the smaller eta wins."""
    ns = 8
    th = 2 * np.pi * np.arange(ns + 1) / ns
    coeffs = np.zeros((ns + 1, 6, 2))
    coeffs[:, 0, 0] = 1.1 + 0.05 * np.cos(th)
    coeffs[:, 1, 0] = 0.01 * np.sin(th)
    coeffs[:, 0, 1] = 1.0
    m = Stpm(mode="normalized", op_point=1.1, order=1, grid=np.arange(ns + 1) / ns,
             coeffs=coeffs, ns=ns, period_map=np.array([3.0, 0.0]), trust_radius=1e-3)
    k0, e0, d = famap.nearest_member(m, [1.1, 0.0, 0.0], n_kappa=51, refine=False)
    assert e0 == 0.25 and d == pytest.approx(0.01, rel=1e-12) and k0 == pytest.approx(1.1)


def test_nearest_member_deterministic(l2_map):
    p = famap.query_state(l2_map, 3e-4, 0.5)[:3] + [1e-5, -2e-5, 0.0]
    assert famap.nearest_member(l2_map, p) == famap.nearest_member(l2_map, p)


def test_nearest_member_needs_normalized(l2_map_time):
    with pytest.raises(StpmDomainError):
        famap.nearest_member(l2_map_time, [1.1, 0, 0])


# -- loci and persistence ----------------------------------------------------------

def test_locus_at_zero_is_op_member(l1_map, l1_model):
    lc = famap.locus(l1_map, 0.9, [0.0])
    x0, T = op_member(l1_model, l1_map)(0.0)
    ref = dyn.propagate(x0, 0.9 * T, 900)
    assert np.max(np.abs(lc.states[0] - ref)) < 1e-10
    assert lc.spread == 0.0
    text = famap.loci_to_csv([lc])
    rows = [r for r in text.splitlines() if not r.startswith("#")]
    assert rows[0].split(",") == famap.LOCUS_COLUMNS and len(rows) == 2


def test_locus_spread():
    pts = np.array([[0, 0, 0], [3, 4, 0], [1, 1, 0]], dtype=float)
    assert famap.locus_spread(pts) == 5.0


def test_map_roundtrip(l2_map, tmp_path):
    p = famap.save_stpm(l2_map, tmp_path / "map.json")
    back = famap.load_stpm(p)
    assert np.array_equal(back.coeffs, l2_map.coeffs)
    assert np.array_equal(back.period_map, l2_map.period_map)
    assert back.trust_radius == l2_map.trust_radius and back.mode == "normalized"
    d = json.loads(p.read_text())
    assert {"mode", "order", "ns", "op_point", "family_id"} <= set(d)
    d["schema_version"] = 5
    with pytest.raises(ValueError, match="schema_version"):
        famap.stpm_from_dict(d)


def test_default_trust_radius(l2_model, l2_map, l2_dense):
    assert l2_map.trust_radius == pytest.approx(0.5 * l2_model.region_width(l2_map.op_point))
    loc = prm.fit_local(l2_dense, 450)
    assert famap.default_trust_radius(loc, loc.op_point) == pytest.approx(
        0.5 * (loc.span[1] - loc.span[0]))
    with pytest.raises(ValueError):
        famap.build_from_prm(l2_model, l2_map.op_point, mode="bogus", order=2, ns=10)
