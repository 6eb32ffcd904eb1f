"""Impulsive PD station keeping on a normalized-time family map.

Each transfer of the proposed law:

1. locate the nearest family point ``(kappa0, eta0)`` to the current position;
2. take the reference ``x_r`` as that member advanced by ``eta_t`` of its own
   period, read off the map;
3. coast uncontrolled for ``t_t = eta_t * T(kappa0)``;
4. apply ``dv = -(kp * e_pos + kd * e_vel) * t_t`` with ``e = x - x_r`` at
   arrival, then repeat.

A satellite already on some family member arrives exactly at ``x_r`` and
spends nothing, whichever member and phase it is on.  The tracking baseline
runs the same law and cadence against one fixed orbit's own timeline, so it
also pays to remove amplitude and phase offsets.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from . import dalg
from . import dynamics as dyn
from .dynamics import DEFAULT_NS, CollisionError
from .famap import Stpm, StpmDomainError, nearest_member
from .families import CorrectionError, OrbitMember, correct_half_period

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ControllerConfig:
    kp: float = 4.0
    kd: float = 4.0
    eta_t: float = 0.05
    revs: float = 6.0
    seed: int = 0
    disturbance: float = 1e-3
    dv_tol: float = 1e-6
    settle: int = 5

    def __post_init__(self):
        if not (self.kp > 0 and self.kd > 0):
            raise ValueError("gains kp and kd must be positive")
        if not 0.0 < self.eta_t < 1.0:
            raise ValueError("eta_t must lie in (0, 1)")
        if not self.revs > 0:
            raise ValueError("revs must be positive")
        if self.disturbance < 0:
            raise ValueError("disturbance must be non-negative")
        if self.settle < 1:
            raise ValueError("settle must be >= 1")

    @property
    def gains(self) -> np.ndarray:
        return np.diag([self.kp] * 3 + [self.kd] * 3)


@dataclass
class Impulse:
    time: float
    dv: np.ndarray
    state: np.ndarray      # pre-impulse state at arrival
    reference: np.ndarray
    kappa0: float
    eta0: float
    distance: float

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.dv))


@dataclass
class ControlRun:
    method: str
    times: np.ndarray
    states: np.ndarray
    impulses: list[Impulse]
    period: float
    config: ControllerConfig
    converged: bool = False
    converged_time: float = math.nan
    failed: bool = False
    failure: str = ""
    jacobi_drift: float = 0.0

    @property
    def total_dv(self) -> float:
        return float(sum(i.magnitude for i in self.impulses))

    @property
    def converged_rev(self) -> float:
        return self.converged_time / self.period if self.converged else math.nan

    @property
    def dv_magnitudes(self) -> np.ndarray:
        return np.array([i.magnitude for i in self.impulses])


def wrap_eta(eta: float) -> float:
    e = eta % 1.0
    return 0.0 if e >= 1.0 else e


def pd_reference(m: Stpm, kappa0: float, eta0: float, eta_t: float) -> np.ndarray:
    """Reference state ``eta_t`` of a period ahead of ``(kappa0, eta0)`` on the map."""
    if m.mode != "normalized":
        raise StpmDomainError("the PD reference needs a normalized-time map")
    return m._query(kappa0 - m.op_point, wrap_eta(eta0 + eta_t))


def pd_impulse(x, x_r, cfg: ControllerConfig, t_t: float) -> np.ndarray:
    if not t_t > 0:
        raise ValueError("transfer time must be positive")
    e = np.asarray(x, dtype=float) - np.asarray(x_r, dtype=float)
    u = -(cfg.kp * e[:3] + cfg.kd * e[3:6])
    return u * t_t


def disturbed_start(state, cfg: ControllerConfig) -> np.ndarray:
    """``state`` with a velocity kick of size ``cfg.disturbance`` in a seeded random direction."""
    rng = np.random.default_rng(cfg.seed)
    d = rng.normal(size=3)
    out = np.array(state, dtype=float)
    out[3:] += cfg.disturbance * d / np.linalg.norm(d)
    return out


def _coast_steps(cfg: ControllerConfig, ns: int) -> int:
    return max(1, int(round(cfg.eta_t * ns)))


def _settled(run: ControlRun, streak: int, t: float, cfg: ControllerConfig) -> int:
    if run.impulses[-1].magnitude < cfg.dv_tol:
        streak += 1
        if streak >= cfg.settle and not run.converged:
            run.converged, run.converged_time = True, t
    else:
        streak = 0
    return streak


def _transfers(cfg: ControllerConfig) -> int:
    return int(math.ceil(cfg.revs / cfg.eta_t - 1e-9))


def simulate_pd(m: Stpm, start, cfg: ControllerConfig = ControllerConfig(),
                p=dyn.MU_EARTH_MOON, period=None) -> ControlRun:
    """Run the map-based PD law for ``cfg.revs`` op-point revolutions.

    ``period`` optionally overrides the map's own period series.
    """
    if m.mode != "normalized":
        raise StpmDomainError("simulate_pd needs a normalized-time map")
    mu = dyn._mu(p)
    ns = m.ns
    steps = _coast_steps(cfg, ns)
    period_of = m.period if period is None else (lambda dk: dalg.evaluate(period, [dk]))
    T_ref = period_of(0.0)
    x = np.array(start, dtype=float)
    run = ControlRun(method="proposed", times=np.zeros(0), states=np.zeros((0, 6)), impulses=[],
                     period=T_ref, config=cfg)
    times, states = [0.0], [x.copy()]
    t, streak, drift = 0.0, 0, 0.0
    for _ in range(_transfers(cfg)):
        kappa0, eta0, dist = nearest_member(m, x)
        dk = kappa0 - m.op_point
        if abs(dk) > m.trust_radius:
            run.failed, run.failure = True, f"left trust radius at t={t!r} (dkappa={dk:.3g})"
            break
        t_t = cfg.eta_t * period_of(dk)
        try:
            seg = dyn.trajectory(x, t_t, steps, mu)
        except CollisionError as exc:
            run.failed, run.failure = True, f"collision at t={t!r}: {exc}"
            break
        drift = max(drift, abs(dyn.jacobi_constant(seg[-1], mu) - dyn.jacobi_constant(seg[0], mu)))
        t += t_t
        x = seg[-1].copy()
        x_r = pd_reference(m, kappa0, eta0, cfg.eta_t)
        dv = pd_impulse(x, x_r, cfg, t_t)
        run.impulses.append(Impulse(time=t, dv=dv, state=x.copy(), reference=x_r,
                                    kappa0=kappa0, eta0=eta0, distance=dist))
        x[3:] += dv
        times.append(t)
        states.append(x.copy())
        streak = _settled(run, streak, t, cfg)
    run.times, run.states, run.jacobi_drift = np.array(times), np.array(states), drift
    return run


class OrbitTimeline:
    """Pointwise RK4 states of one periodic orbit at any phase (wrapped to one period)."""

    def __init__(self, member: OrbitMember, p=dyn.MU_EARTH_MOON, ns: int | None = None):
        self.member = member
        self.mu = dyn._mu(p)
        self.ns = member.ns if ns is None else ns
        self.period = member.period

    def state(self, phase: float) -> np.ndarray:
        ph = phase % self.period
        n = max(1, int(math.ceil(ph / self.period * self.ns)))
        return dyn.propagate(self.member.x0, ph, n, self.mu)

    def nearest_phase(self, position) -> float:
        pos = np.asarray(position, dtype=float)[:3]
        tr = dyn.trajectory(self.member.x0, self.period, self.ns, self.mu)
        d = np.linalg.norm(tr[:, :3] - pos, axis=1)
        j = int(np.argmin(d))
        h = self.period / self.ns
        res = minimize_scalar(lambda ph: np.linalg.norm(self.state(ph)[:3] - pos),
                              bounds=(j * h - h, j * h + h), method="bounded",
                              options={"xatol": 1e-12})
        return float(res.x) % self.period if res.fun < d[j] else j * h


def simulate_tracking(target: OrbitMember, start, cfg: ControllerConfig = ControllerConfig(),
                      p=dyn.MU_EARTH_MOON, phase0: float | None = None,
                      ns: int | None = None) -> ControlRun:
    """Same PD law and cadence, with ``x_r`` taken along one fixed orbit's timeline.

    The timeline starts at ``phase0``, by default the target phase nearest
    the start position.
    """
    mu = dyn._mu(p)
    tl = OrbitTimeline(target, mu, ns)
    steps = _coast_steps(cfg, tl.ns)
    t_t = cfg.eta_t * tl.period
    phase = tl.nearest_phase(start) if phase0 is None else float(phase0)
    x = np.array(start, dtype=float)
    run = ControlRun(method="tracking", times=np.zeros(0), states=np.zeros((0, 6)), impulses=[],
                     period=tl.period, config=cfg)
    times, states = [0.0], [x.copy()]
    t, streak, drift = 0.0, 0, 0.0
    for _ in range(_transfers(cfg)):
        try:
            seg = dyn.trajectory(x, t_t, steps, mu)
        except CollisionError as exc:
            run.failed, run.failure = True, f"collision at t={t!r}: {exc}"
            break
        drift = max(drift, abs(dyn.jacobi_constant(seg[-1], mu) - dyn.jacobi_constant(seg[0], mu)))
        t += t_t
        x = seg[-1].copy()
        x_r = tl.state(phase + t)
        dv = pd_impulse(x, x_r, cfg, t_t)
        run.impulses.append(Impulse(time=t, dv=dv, state=x.copy(), reference=x_r,
                                    kappa0=target.kappa, eta0=((phase + t) % tl.period) / tl.period,
                                    distance=float(np.linalg.norm(x[:3] - x_r[:3]))))
        x[3:] += dv
        times.append(t)
        states.append(x.copy())
        streak = _settled(run, streak, t, cfg)
    run.times, run.states, run.jacobi_drift = np.array(times), np.array(states), drift
    return run


def final_member(m: Stpm, run: ControlRun, p=dyn.MU_EARTH_MOON) -> OrbitMember:
    """Family member the proposed run settled on, re-corrected when possible."""
    kappa0 = run.impulses[-1].kappa0 if run.impulses else m.op_point
    dk = kappa0 - m.op_point
    x0 = m.evaluate(dk, 0)
    x0[[1, 3, 5]] = 0.0
    try:
        return correct_half_period(x0, m.family_id, p, thalf=0.5 * m.period(dk), ns=m.ns)
    except (CorrectionError, ValueError):
        return OrbitMember(x0=x0, period=m.period(dk), family_id=m.family_id, ns=m.ns)


@dataclass
class Comparison:
    proposed: ControlRun
    tracking: ControlRun
    target: OrbitMember

    @property
    def reduction(self) -> float:
        """Percentage of the tracking controller's total dv saved by the proposed law."""
        return reduction_percent(self.proposed.total_dv, self.tracking.total_dv)


def reduction_percent(dv_proposed: float, dv_tracking: float) -> float:
    if dv_tracking <= 0:
        return 0.0 if dv_proposed <= 0 else -math.inf
    return 100.0 * (dv_tracking - dv_proposed) / dv_tracking


def compare(m: Stpm, start, cfg: ControllerConfig = ControllerConfig(),
            p=dyn.MU_EARTH_MOON) -> Comparison:
    """Proposed run first; its settled orbit becomes the tracking target."""
    prop = simulate_pd(m, start, cfg, p)
    target = final_member(m, prop, p)
    trk = simulate_tracking(target, start, cfg, p, ns=m.ns)
    return Comparison(proposed=prop, tracking=trk, target=target)


def scenario_start(m: Stpm, cfg: ControllerConfig, dkappa: float = 0.0, eta: float = 0.0):
    """Disturbed start from the map member at ``(dkappa, eta)``."""
    return disturbed_start(m._query(dkappa, eta), cfg)


# -- logs ---------------------------------------------------------------------

IMPULSE_COLUMNS = ["t", "x", "y", "z", "vx", "vy", "vz", "dvx", "dvy", "dvz", "dv",
                   "kappa0", "eta0", "distance"]
TRAJECTORY_COLUMNS = ["t", "x", "y", "z", "vx", "vy", "vz"]


def impulses_to_csv(run: ControlRun) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n# method={run.method}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(IMPULSE_COLUMNS)
    for imp in run.impulses:
        w.writerow([repr(float(imp.time))] + [repr(float(v)) for v in imp.state]
                   + [repr(float(v)) for v in imp.dv]
                   + [repr(float(v)) for v in (imp.magnitude, imp.kappa0, imp.eta0, imp.distance)])
    return buf.getvalue()


def trajectory_to_csv(run: ControlRun) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n# method={run.method}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for t, s in zip(run.times, run.states):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in s])
    return buf.getvalue()


def run_summary(run: ControlRun) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "control_run",
        "method": run.method,
        "total_dv": run.total_dv,
        "impulses": len(run.impulses),
        "converged": run.converged,
        "converged_time": None if not run.converged else run.converged_time,
        "converged_rev": None if not run.converged else run.converged_rev,
        "revolutions": run.config.revs,
        "period": run.period,
        "failed": run.failed,
        "failure": run.failure,
        "jacobi_drift": run.jacobi_drift,
        "config": asdict(run.config),
    }


def save_run(run: ControlRun, directory, stem: str | None = None) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stem = stem or run.method
    paths = [d / f"{stem}_impulses.csv", d / f"{stem}_trajectory.csv", d / f"{stem}_summary.json"]
    paths[0].write_text(impulses_to_csv(run))
    paths[1].write_text(trajectory_to_csv(run))
    paths[2].write_text(json.dumps(run_summary(run), indent=1))
    return paths


def load_summary(path) -> dict:
    d = json.loads(Path(path).read_text())
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
    return d
