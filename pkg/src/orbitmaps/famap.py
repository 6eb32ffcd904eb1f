"""State transition propagation maps over the family parameter.

A map is a grid of propagated states, each component a one-variable
:class:`~orbitmaps.dalg.Tps` in ``dkappa = kappa - op_point``.  Two grid
flavours exist:

``time``
    snapshots at absolute instants ``t_j``; every member is propagated for
    the same time, so members with different periods drift apart.
``normalized``
    the RK4 step is itself a series, ``h(dkappa) = T(dkappa) / Ns``, so
    snapshot ``j`` holds every member at ``eta = j / Ns`` of its own period.

Coefficients are stored densely as an ``(n_instants, 6, order + 1)`` array;
evaluating the map is a single matrix product against powers of ``dkappa``.
"""

from __future__ import annotations

import io
import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.distance import pdist

from . import _kernels
from . import dalg
from . import dynamics as dyn
from .dalg import Tps, TpsDomainError
from .dynamics import DEFAULT_NS, CollisionError

SCHEMA_VERSION = 1
MODES = ("time", "normalized")

#: default search resolution over dkappa for :func:`nearest_member`
NEAREST_KAPPA_SAMPLES = 50

_NO_PERIOD = np.zeros(1)


class StpmBuildError(RuntimeError):
    """Propagating the series failed at some instant."""


class StpmDomainError(ValueError):
    """Query outside the grid span or wrong map mode."""


class TrustRadiusWarning(UserWarning):
    """``|dkappa|`` exceeds the map's trust radius."""


@dataclass
class Stpm:
    mode: str
    op_point: float
    order: int
    grid: np.ndarray
    coeffs: np.ndarray
    ns: int = DEFAULT_NS
    period_map: np.ndarray | None = None
    trust_radius: float = math.inf
    mu: float = dyn.MU_EARTH_MOON
    family_id: str = ""
    steps: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.grid = np.asarray(self.grid, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (len(self.grid), 6, self.order + 1):
            raise ValueError(f"coefficient array shape {self.coeffs.shape} does not match "
                             f"{len(self.grid)} instants, order {self.order}")
        if self.period_map is not None:
            self.period_map = np.asarray(self.period_map, dtype=float)

    def __len__(self):
        return len(self.grid)

    def _powers(self, dkappa):
        return np.power.outer(np.asarray(dkappa, dtype=float), np.arange(self.order + 1))

    def map_at(self, j: int) -> np.ndarray:
        """Snapshot ``j`` as an object array of six series."""
        out = np.empty(6, dtype=object)
        for i in range(6):
            out[i] = Tps(1, self.order, self.coeffs[j, i])
        return out

    def period_series(self) -> Tps:
        if self.period_map is None:
            raise StpmDomainError("map carries no period series")
        return Tps(1, self.order, self.period_map)

    def period(self, dkappa: float) -> float:
        if self.period_map is None:
            raise StpmDomainError("map carries no period series")
        return float(self._powers(dkappa) @ self.period_map)

    def evaluate(self, dkappa: float, j: int) -> np.ndarray:
        """State of snapshot ``j`` at ``dkappa`` (no interpolation)."""
        return self.coeffs[j] @ self._powers(dkappa)

    def evaluate_many(self, dkappas, j: int) -> np.ndarray:
        """``(k, 6)`` states of snapshot ``j`` at each of ``k`` deviations."""
        return self._powers(dkappas) @ self.coeffs[j].T

    def _locate(self, instant: float) -> None:
        g = self.grid
        if not g[0] <= instant <= g[-1]:
            raise StpmDomainError(f"instant {instant!r} outside grid span [{g[0]!r}, {g[-1]!r}]")

    def _query(self, dkappa: float, instant: float) -> np.ndarray:
        self._locate(instant)
        pm = self.period_map if self.period_map is not None else _NO_PERIOD
        return _kernels.map_query(self.coeffs, self.grid, pm, self.mode == "normalized",
                                  self.mu, float(dkappa), float(instant))


def query_state(m: Stpm, dkappa: float, instant: float) -> np.ndarray:
    """State at ``dkappa`` and an arbitrary instant inside the grid span.

    Between snapshots the two bracketing maps are evaluated and joined by a
    cubic Hermite segment whose end slopes come from the vector field.
    Exceeding the trust radius emits :class:`TrustRadiusWarning`.
    """
    if abs(dkappa) > m.trust_radius:
        warnings.warn(f"|dkappa|={abs(dkappa):.3g} exceeds trust radius {m.trust_radius:.3g}",
                      TrustRadiusWarning, stacklevel=2)
    return m._query(float(dkappa), float(instant))


def time_to_eta(m: Stpm, dkappa: float, t: float) -> float:
    if m.mode != "normalized":
        raise StpmDomainError("time_to_eta needs a normalized-time map")
    T = m.period(dkappa)
    if not T > 0.0:
        raise ValueError(f"period series evaluates to {T!r} at dkappa={dkappa!r}")
    return t / T


def _check_init(init) -> tuple[np.ndarray, int]:
    init = np.asarray(init, dtype=object)
    if init.shape != (6,) or not all(isinstance(c, Tps) for c in init):
        raise TypeError("initial condition must be six Tps components")
    orders = {(c.nvars, c.order) for c in init}
    if len(orders) != 1 or next(iter(orders))[0] != 1:
        raise TypeError("initial condition components must share one variable and one order")
    return init, init[0].order


def _snapshot(s) -> np.ndarray:
    return np.array([c.dense for c in s])


def _min_period(period, trust_radius: float) -> float:
    if isinstance(period, Tps):
        pts = [0.0] if not math.isfinite(trust_radius) else [-trust_radius, 0.0, trust_radius]
        return min(dalg.evaluate(period, [d]) for d in pts)
    return float(period)


def build_stpm_time(init, t_grid, p=dyn.MU_EARTH_MOON, *, period=None, ns: int = DEFAULT_NS,
                    max_step: float | None = None, trust_radius: float = math.inf,
                    family_id: str = "", op_point: float | None = None) -> Stpm:
    """Propagate series initial conditions over absolute instants ``t_grid``.

    Each grid interval is split into equal RK4 steps no longer than
    ``max_step``; by default ``max_step = T_min / ns`` with ``T_min`` the
    smallest period of ``period`` over the trust radius.
    """
    init, order = _check_init(init)
    mu = dyn._mu(p)
    grid = np.asarray(t_grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("t_grid must start at 0 and increase strictly")
    if max_step is None:
        if period is None:
            raise ValueError("give max_step or a period to derive it from")
        max_step = _min_period(period, trust_radius) / ns
    if not max_step > 0:
        raise ValueError("max_step must be positive")
    dt = np.diff(grid)
    steps = np.maximum(1, np.ceil(dt / max_step * (1 - 1e-12)).astype(int))
    f = dyn.cr3bp_field(mu)
    s = init.copy()
    out = [_snapshot(s)]
    for j, (d, n) in enumerate(zip(dt, steps)):
        h = d / n
        try:
            for _ in range(n):
                s = dyn.rk4_step(f, s, h)
        except (CollisionError, TpsDomainError) as exc:
            raise StpmBuildError(f"propagation failed before t={grid[j + 1]!r}: {exc}") from exc
        out.append(_snapshot(s))
    pm = period.dense if isinstance(period, Tps) else None
    return Stpm(mode="time", op_point=float(init[0].cons if op_point is None else op_point),
                order=order, grid=grid, coeffs=np.array(out), ns=ns, period_map=pm,
                trust_radius=trust_radius, mu=mu, family_id=family_id, steps=steps)


def build_stpm_normalized(init, period_map: Tps, ns: int = DEFAULT_NS, p=dyn.MU_EARTH_MOON, *,
                          trust_radius: float = math.inf, family_id: str = "",
                          op_point: float | None = None) -> Stpm:
    """Propagate over one period with the series step ``T(dkappa) / ns``."""
    init, order = _check_init(init)
    if not isinstance(period_map, Tps) or period_map.order != order or period_map.nvars != 1:
        raise TypeError("period_map must be a one-variable Tps of the same order")
    if not period_map.cons > 0.0:
        raise ValueError(f"period series constant part {period_map.cons!r} is not positive")
    if ns < 1:
        raise ValueError("ns must be >= 1")
    mu = dyn._mu(p)
    f = dyn.cr3bp_field(mu)
    h = period_map / ns
    s = init.copy()
    out = [_snapshot(s)]
    for j in range(ns):
        try:
            s = dyn.rk4_step(f, s, h)
        except (CollisionError, TpsDomainError) as exc:
            raise StpmBuildError(f"propagation failed before eta={(j + 1) / ns!r}: {exc}") from exc
        out.append(_snapshot(s))
    return Stpm(mode="normalized", op_point=float(init[0].cons if op_point is None else op_point),
                order=order, grid=np.arange(ns + 1) / ns, coeffs=np.array(out), ns=ns,
                period_map=period_map.dense, trust_radius=trust_radius, mu=mu,
                family_id=family_id)


def default_trust_radius(model, op_point: float) -> float:
    """Half the width of the PRM region (or local window span) around ``op_point``."""
    from .prm import GlobalPrm

    if isinstance(model, GlobalPrm):
        return 0.5 * model.region_width(op_point)
    lo, hi = model.span
    return 0.5 * (hi - lo)


def build_from_prm(model, op_point: float, mode: str = "normalized", order: int = 5,
                   ns: int = DEFAULT_NS, revs: float = 1.0, p=dyn.MU_EARTH_MOON,
                   trust_radius: float | None = None) -> Stpm:
    """Convenience: expand a PRM about ``op_point`` and build either map flavour.

    Time-mode grids are ``t_j = j T(op) / ns`` for ``revs`` revolutions.
    """
    from .prm import prm_to_tps

    init, period = prm_to_tps(model, op_point, order)
    r = default_trust_radius(model, op_point) if trust_radius is None else trust_radius
    if mode == "normalized":
        return build_stpm_normalized(init, period, ns, p, trust_radius=r,
                                     family_id=model.family_id, op_point=op_point)
    if mode == "time":
        n = int(round(revs * ns))
        grid = np.arange(n + 1) * (period.cons / ns)
        return build_stpm_time(init, grid, p, period=period, ns=ns, trust_radius=r,
                               family_id=model.family_id, op_point=op_point)
    raise ValueError(f"unknown mode {mode!r}")


def nearest_member(m: Stpm, position, n_kappa: int = NEAREST_KAPPA_SAMPLES,
                   refine: bool = True) -> tuple[float, float, float]:
    """Closest family point to ``position``: ``(kappa0, eta0, distance)``.

    Coarse search over ``n_kappa`` deviations spanning the trust radius and
    every grid instant, then Nelder-Mead on ``(dkappa, eta)``.  Exact ties
    go to the smaller ``eta``.
    """
    if m.mode != "normalized":
        raise StpmDomainError("nearest_member needs a normalized-time map")
    pos = np.asarray(position, dtype=float)[:3]
    r = m.trust_radius if math.isfinite(m.trust_radius) else 1e-2
    dks = np.linspace(-r, r, n_kappa)
    P = m._powers(dks)
    n_inst = len(m.grid)
    grid_pos = (m.coeffs[:, :3, :].reshape(n_inst * 3, -1) @ P.T).reshape(n_inst, 3, -1)
    d2 = np.sum((grid_pos - pos[None, :, None]) ** 2, axis=1)
    best = d2.min()
    # first index in (eta, dkappa) row-major order among exact ties
    j, k = np.argwhere(d2 <= best * (1 + 1e-12))[0]
    dk0, eta0 = float(dks[k]), float(m.grid[j])
    if not refine:
        return m.op_point + dk0, eta0 % 1.0, math.sqrt(best)

    def obj(v):
        dk, eta = v[0] * r, v[1]
        if abs(dk) > 2 * r:
            return 1e10 + dk * dk
        x = m._query(dk, eta % 1.0)
        return float(np.sum((x[:3] - pos) ** 2))

    cell_k = 2.0 / max(n_kappa - 1, 1)
    cell_e = 1.0 / m.ns
    v0 = np.array([dk0 / r, eta0])
    simplex = np.array([v0, v0 + [cell_k, 0.0], v0 + [0.0, cell_e]])
    res = minimize(obj, v0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-13, "fatol": 1e-24,
                            "maxiter": 600})
    if res.fun < best:
        dk0, eta0, best = float(res.x[0] * r), float(res.x[1]), float(res.fun)
    eta0 %= 1.0
    if eta0 > 1.0 - 1e-14:
        eta0 = 0.0
    return m.op_point + dk0, eta0, math.sqrt(max(best, 0.0))


# -- loci ---------------------------------------------------------------------

@dataclass
class Locus:
    """States of several members at one fixed instant of a map."""

    mode: str
    instant: float
    op_point: float
    dkappas: np.ndarray
    states: np.ndarray

    @property
    def spread(self) -> float:
        return locus_spread(self.states[:, :3])


def locus(m: Stpm, instant: float, dkappas) -> Locus:
    dk = np.asarray(dkappas, dtype=float)
    states = np.array([m._query(d, instant) for d in dk])
    return Locus(mode=m.mode, instant=float(instant), op_point=m.op_point, dkappas=dk, states=states)


def locus_spread(positions) -> float:
    """Largest pairwise distance among the given points."""
    positions = np.asarray(positions, dtype=float)
    return float(pdist(positions).max()) if len(positions) > 1 else 0.0


LOCUS_COLUMNS = ["mode", "instant", "dkappa", "kappa", "x", "y", "z", "vx", "vy", "vz"]


def loci_to_csv(loci) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOCUS_COLUMNS)
    for lc in loci:
        for dk, s in zip(lc.dkappas, lc.states):
            w.writerow([lc.mode, repr(lc.instant), repr(float(dk)), repr(lc.op_point + float(dk))]
                       + [repr(float(v)) for v in s])
    return buf.getvalue()


# -- persistence --------------------------------------------------------------

def _tps_list(rows: np.ndarray, order: int) -> list:
    return [dalg.to_dict(Tps(1, order, c)) for c in rows]


def stpm_to_dict(m: Stpm) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "stpm",
        "mode": m.mode,
        "order": m.order,
        "ns": m.ns,
        "op_point": m.op_point,
        "family_id": m.family_id,
        "mu": m.mu,
        "trust_radius": m.trust_radius if math.isfinite(m.trust_radius) else None,
        "grid": [float(g) for g in m.grid],
        "steps": None if m.steps is None else [int(n) for n in m.steps],
        "period_map": None if m.period_map is None else dalg.to_dict(Tps(1, m.order, m.period_map)),
        "maps": [_tps_list(m.coeffs[j], m.order) for j in range(len(m.grid))],
    }


def _dense(d: dict, order: int) -> np.ndarray:
    t = dalg.from_dict(d)
    if t.nvars != 1 or t.order != order:
        raise ValueError("series in map file does not match the header order")
    return t.dense


def stpm_from_dict(d: dict) -> Stpm:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
    if d.get("kind") != "stpm":
        raise ValueError(f"not a map file (kind={d.get('kind')!r})")
    order = d["order"]
    coeffs = np.array([[_dense(c, order) for c in row] for row in d["maps"]])
    tr = d.get("trust_radius")
    return Stpm(mode=d["mode"], op_point=d["op_point"], order=order, grid=np.array(d["grid"]),
                coeffs=coeffs, ns=d["ns"],
                period_map=None if d.get("period_map") is None else _dense(d["period_map"], order),
                trust_radius=math.inf if tr is None else tr, mu=d["mu"],
                family_id=d.get("family_id", ""),
                steps=None if d.get("steps") is None else np.array(d["steps"], dtype=int))


def save_stpm(m: Stpm, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(stpm_to_dict(m)))
    return path


def load_stpm(path) -> Stpm:
    return stpm_from_dict(json.loads(Path(path).read_text()))
