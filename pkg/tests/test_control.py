import json

import numpy as np
import pytest

from orbitmaps import control as ctl
from orbitmaps import famap

CFG = ctl.ControllerConfig()


@pytest.fixture(scope="module")
def comparison(l2_map):
    return ctl.compare(l2_map, ctl.scenario_start(l2_map, CFG), CFG)


def test_config_validation():
    assert np.array_equal(CFG.gains, np.diag([4.0] * 3 + [4.0] * 3))
    for bad in ({"kp": 0.0}, {"kd": -1.0}, {"eta_t": 0.0}, {"eta_t": 1.0}, {"revs": 0.0},
                {"disturbance": -1e-3}, {"settle": 0}):
        with pytest.raises(ValueError):
            ctl.ControllerConfig(**bad)


def test_wrap_eta():
    assert ctl.wrap_eta(1.03) == pytest.approx(0.03)
    assert ctl.wrap_eta(1.0) == 0.0 and ctl.wrap_eta(0.4) == 0.4


def test_pd_reference(l2_map):
    m = l2_map
    k0 = m.op_point + 5e-4
    dk = k0 - m.op_point
    assert np.array_equal(ctl.pd_reference(m, k0, 0.3, 0.0), famap.query_state(m, dk, 0.3))
    assert np.allclose(ctl.pd_reference(m, k0, 0.98, 0.05), famap.query_state(m, dk, 0.03),
                       rtol=0, atol=1e-15)
    xr = ctl.pd_reference(m, k0, 0.4, 0.05)
    assert famap.nearest_member(m, xr[:3])[2] < 1e-6


def test_pd_impulse():
    x = np.array([1.1, 0.01, 0.0, 0.0, 0.2, 0.0])
    assert np.array_equal(ctl.pd_impulse(x, x, CFG, 0.1), np.zeros(3))
    ep = np.array([1e-3, -2e-3, 5e-4])
    xr = x.copy()
    xr[:3] -= ep
    cfg = ctl.ControllerConfig(kp=2.5, kd=7.0)
    e = (x - xr)[:3]
    assert np.allclose(e, ep, rtol=0, atol=1e-15)
    assert np.allclose(ctl.pd_impulse(x, xr, cfg, 0.2), -cfg.kp * e * 0.2, rtol=1e-15, atol=0)
    xr[3:] += [1e-4, 0.0, -3e-4]
    a, b = ctl.pd_impulse(x, xr, cfg, 0.1), ctl.pd_impulse(x, xr, cfg, 0.2)
    assert np.allclose(b, 2 * a, rtol=1e-15, atol=0)
    with pytest.raises(ValueError):
        ctl.pd_impulse(x, xr, cfg, 0.0)


def test_disturbed_start_seeded(l2_map):
    s = l2_map.evaluate(0.0, 0)
    a = ctl.disturbed_start(s, CFG)
    assert np.linalg.norm(a[3:] - s[3:]) == pytest.approx(CFG.disturbance, rel=1e-12)
    assert np.array_equal(a[:3], s[:3])
    assert np.array_equal(a, ctl.disturbed_start(s, CFG))
    assert not np.array_equal(a, ctl.disturbed_start(s, ctl.ControllerConfig(seed=1)))


def test_on_member_no_dv(l2_map):
    cfg = ctl.ControllerConfig(disturbance=0.0, revs=10.0)
    run = ctl.simulate_pd(l2_map, l2_map.evaluate(0.0, 0), cfg)
    assert not run.failed and run.total_dv < 1e-6 and run.converged


def test_proposed_converges(comparison):
    run = comparison.proposed
    assert run.converged and not run.failed
    assert run.converged_rev <= 2.0
    assert run.jacobi_drift < 1e-9


def test_post_convergence_retention(comparison):
    run = comparison.proposed
    d = np.array([i.distance for i in run.impulses if i.time >= run.converged_time])
    assert np.all(d < 1e-4)
    # the envelope shrinks until the integrator round-off floor is reached
    blocks = np.array([d[i:i + 10].max() for i in range(0, len(d) - 9, 10)])
    blocks = blocks[blocks > 1e-12]
    assert len(blocks) >= 3 and np.all(np.diff(blocks) < 0)


def test_bookkeeping(comparison):
    for run in (comparison.proposed, comparison.tracking):
        assert run.total_dv == sum(float(np.linalg.norm(i.dv)) for i in run.impulses)
        for k, imp in enumerate(run.impulses):
            post = run.states[k + 1]
            assert np.array_equal(post[:3], imp.state[:3])
            tol = 4 * np.spacing(np.abs(post[3:]).max())
            assert np.all(np.abs(post[3:] - imp.state[3:] - imp.dv) <= tol)
        assert len(run.times) == len(run.impulses) + 1


def test_coasts_conserve_jacobi(comparison):
    assert comparison.proposed.jacobi_drift < 1e-9
    assert comparison.tracking.jacobi_drift < 1e-9


def test_tracking_costs_more(comparison):
    assert not comparison.tracking.failed
    assert comparison.tracking.total_dv > comparison.proposed.total_dv
    assert comparison.reduction > 0


def test_determinism(l2_map, comparison):
    again = ctl.compare(l2_map, ctl.scenario_start(l2_map, CFG), CFG)
    for a, b in ((again.proposed, comparison.proposed), (again.tracking, comparison.tracking)):
        assert np.array_equal(a.states, b.states) and np.array_equal(a.times, b.times)
        assert a.total_dv == b.total_dv
        assert ctl.impulses_to_csv(a) == ctl.impulses_to_csv(b)


def test_tracking_on_target(comparison, l2_map):
    cfg = ctl.ControllerConfig(disturbance=0.0, revs=2.0)
    run = ctl.simulate_tracking(comparison.target, comparison.target.x0, cfg, ns=l2_map.ns)
    assert run.total_dv < 1e-8


def test_phase_shift(comparison, l2_map):
    """Tracking pays to remove a phase error; the map-based law accepts the phase."""
    target = comparison.target
    tl = ctl.OrbitTimeline(target, ns=l2_map.ns)
    start = tl.state(0.1 * target.period)
    cfg = ctl.ControllerConfig(disturbance=0.0, revs=3.0)
    prop = ctl.simulate_pd(l2_map, start, cfg)
    trk = ctl.simulate_tracking(target, start, cfg, phase0=0.0, ns=l2_map.ns)
    assert prop.total_dv < 1e-8
    assert trk.total_dv > 1e-3


def test_timeline_nearest_phase(comparison):
    tl = ctl.OrbitTimeline(comparison.target)
    ph = 0.37 * tl.period
    assert tl.nearest_phase(tl.state(ph)) == pytest.approx(ph, abs=1e-8)
    assert np.allclose(tl.state(ph + tl.period), tl.state(ph), atol=1e-12)


def test_escape_marks_failure(l2_map):
    cfg = ctl.ControllerConfig(disturbance=0.0, revs=1.0)
    far = l2_map.evaluate(0.0, 0) + [0.05, 0, 0, 0, 0, 0]
    run = ctl.simulate_pd(l2_map, far, cfg)
    assert run.failed and "trust radius" in run.failure


def test_reduction_percent():
    assert ctl.reduction_percent(1.0, 2.0) == 50.0
    assert ctl.reduction_percent(0.0, 0.0) == 0.0


def test_logs(comparison, tmp_path):
    run = comparison.proposed
    paths = ctl.save_run(run, tmp_path, "p")
    names = sorted(p.name for p in paths)
    assert names == ["p_impulses.csv", "p_summary.json", "p_trajectory.csv"]
    imp = (tmp_path / "p_impulses.csv").read_text().splitlines()
    assert imp[0].startswith("# schema_version=")
    header = [ln for ln in imp if not ln.startswith("#")][0].split(",")
    assert header == ctl.IMPULSE_COLUMNS
    assert len([ln for ln in imp if not ln.startswith("#")]) == len(run.impulses) + 1
    summ = ctl.load_summary(tmp_path / "p_summary.json")
    assert summ["total_dv"] == run.total_dv and summ["converged"] is True
    d = json.loads((tmp_path / "p_summary.json").read_text())
    d["schema_version"] = 3
    (tmp_path / "bad.json").write_text(json.dumps(d))
    with pytest.raises(ValueError):
        ctl.load_summary(tmp_path / "bad.json")
