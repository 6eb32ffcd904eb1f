"""Propagation-accuracy experiments and the map-evaluation benchmark.

Each function returns a small result object with a ``to_csv`` method; the
CLI writes those next to the figures rendered by :mod:`orbitmaps.plotting`.
"""

from __future__ import annotations

import csv
import io
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .famap import Locus, Stpm, locus
from .families import FamilyTable
from .prm import ExtrapolationWarning, GlobalPrm, Model, eval_prm, fit_local

SCHEMA_VERSION = 1


def _csv(header: list[str], rows, comments: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    for k, v in (comments or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([v if isinstance(v, str) else repr(float(v)) for v in r])
    return buf.getvalue()


def return_error(x0, period: float, revs: int = 1, ns: int = dyn.DEFAULT_NS,
                 p=dyn.MU_EARTH_MOON) -> np.ndarray:
    """Position and velocity distance to ``x0`` after each of ``revs`` periods."""
    tr = dyn.trajectory(x0, revs * period, revs * ns, p)
    ends = tr[ns::ns]
    return np.column_stack([np.linalg.norm(ends[:, :3] - x0[:3], axis=1),
                            np.linalg.norm(ends[:, 3:] - x0[3:], axis=1)])


# -- holding the orbit over several revolutions ----------------------------------

@dataclass
class HoldResult:
    kappas: np.ndarray
    errors: np.ndarray      # (n, revs) position error at the end of each revolution

    @property
    def revs(self) -> int:
        return self.errors.shape[1]

    @property
    def rmse(self) -> np.ndarray:
        return np.sqrt(np.mean(self.errors ** 2, axis=0))

    @property
    def max_error(self) -> np.ndarray:
        return self.errors.max(axis=0)

    def to_csv(self) -> str:
        rows = [(r + 1, self.rmse[r], self.max_error[r], np.median(self.errors[:, r]))
                for r in range(self.revs)]
        return _csv(["revolution", "rmse", "max_error", "median_error"], rows,
                    {"samples": len(self.kappas)})

    def samples_csv(self) -> str:
        rows = [(k, *e) for k, e in zip(self.kappas, self.errors)]
        return _csv(["kappa"] + [f"rev{r + 1}" for r in range(self.revs)], rows)


def hold_orbits(model: Model, n: int = 100, revs: int = 5, seed: int = 0,
                ns: int | None = None, p=dyn.MU_EARTH_MOON) -> HoldResult:
    """Propagate ``n`` model states at uniformly random kappa for ``revs`` model periods."""
    if not isinstance(model, GlobalPrm):
        raise TypeError("hold_orbits samples the whole domain of a global model")
    ns = model.ns if ns is None else ns
    rng = np.random.default_rng(seed)
    lo, hi = model.domain
    kappas = np.sort(rng.uniform(lo, hi, n))
    errs = np.empty((n, revs))
    for i, k in enumerate(kappas):
        x0, T = eval_prm(model, k)
        errs[i] = return_error(x0, T, revs, ns, p)[:, 0]
    return HoldResult(kappas=kappas, errors=errs)


# -- global versus local model -----------------------------------------------------

@dataclass
class GlobalLocalResult:
    op_point: float
    span: float
    dkappas: np.ndarray
    global_error: np.ndarray
    local_error: np.ndarray
    window: int
    degree: int

    def to_csv(self) -> str:
        rows = [(d, self.op_point + d, d / self.span, g, l)
                for d, g, l in zip(self.dkappas, self.global_error, self.local_error)]
        return _csv(["dkappa", "kappa", "dkappa_over_span", "global_error", "local_error"], rows,
                    {"op_point": repr(float(self.op_point)), "window": self.window,
                     "degree": self.degree})


def global_vs_local(table: FamilyTable, model: GlobalPrm, member_index: int | None = None,
                    window: int = 21, degree: int = 6, offsets=None,
                    p=dyn.MU_EARTH_MOON) -> GlobalLocalResult:
    """One-period return error of both models around one designed member.

    ``offsets`` are multiples of the local window span (default -3..3).
    """
    if member_index is None:
        member_index = len(table) // 2
    local = fit_local(table, member_index, window, degree)
    span = local.span[1] - local.span[0]
    offsets = np.linspace(-3, 3, 25) if offsets is None else np.asarray(offsets, dtype=float)
    lo, hi = model.domain
    dks = offsets * span
    dks = dks[(local.op_point + dks >= lo) & (local.op_point + dks <= hi)]
    ge, le = [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        for d in dks:
            for mod, out in ((model, ge), (local, le)):
                x0, T = eval_prm(mod, local.op_point + d)
                tr = dyn.propagate(x0, T, model.ns, p)
                out.append(float(np.linalg.norm(tr - x0)))
    return GlobalLocalResult(op_point=local.op_point, span=span, dkappas=dks,
                             global_error=np.array(ge), local_error=np.array(le),
                             window=window, degree=degree)


# -- loci at fixed time versus fixed normalized time -------------------------------

@dataclass
class LocusComparison:
    etas: np.ndarray
    times: np.ndarray
    normalized: list[Locus]
    absolute: list[Locus]

    @property
    def eta_spread(self) -> np.ndarray:
        return np.array([lc.spread for lc in self.normalized])

    @property
    def time_spread(self) -> np.ndarray:
        return np.array([lc.spread for lc in self.absolute])

    def to_csv(self) -> str:
        rows = [(e, t, a, b) for e, t, a, b in
                zip(self.etas, self.times, self.eta_spread, self.time_spread)]
        return _csv(["eta", "t", "spread_fixed_eta", "spread_fixed_t"], rows)


def fixed_locus(normalized: Stpm, absolute: Stpm, etas, dkappas=None,
                n_kappa: int = 11) -> LocusComparison:
    """Member loci at fixed ``eta`` and at the matching fixed ``t = eta * T(op)``."""
    if normalized.mode != "normalized" or absolute.mode != "time":
        raise ValueError("need one normalized-time and one absolute-time map")
    if dkappas is None:
        r = normalized.trust_radius
        dkappas = np.linspace(-r, r, n_kappa)
    etas = np.asarray(etas, dtype=float)
    T = normalized.period(0.0)
    times = etas * T
    return LocusComparison(etas=etas, times=times,
                           normalized=[locus(normalized, e, dkappas) for e in etas],
                           absolute=[locus(absolute, t, dkappas) for t in times])


# -- benchmark ---------------------------------------------------------------------

@dataclass
class Benchmark:
    n: int
    map_seconds: float
    pointwise_seconds: float
    max_difference: float
    repeats: int = 1
    extra: dict = field(default_factory=dict)

    @property
    def speedup(self) -> float:
        return self.pointwise_seconds / self.map_seconds

    def to_csv(self) -> str:
        return _csv(["n", "map_seconds", "pointwise_seconds", "speedup", "max_difference"],
                    [(self.n, self.map_seconds, self.pointwise_seconds, self.speedup,
                      self.max_difference)])


def benchmark_map(m: Stpm, model: Model, n: int = 100, instant_index: int | None = None,
                  repeats: int = 5, seed: int = 0, p=dyn.MU_EARTH_MOON) -> Benchmark:
    """Time ``n`` map evaluations at one instant against ``n`` pointwise RK4 runs.

    The pointwise side starts from the model's initial state at each kappa
    and takes the same fixed steps the map used.  The best of ``repeats``
    timings is kept for each side; numba is warmed up first.
    """
    j = len(m.grid) - 1 if instant_index is None else instant_index
    rng = np.random.default_rng(seed)
    r = m.trust_radius if np.isfinite(m.trust_radius) else 1e-3
    dks = rng.uniform(-r, r, n)
    inits = []
    for d in dks:
        x0, T = eval_prm(model, m.op_point + d)
        inits.append((x0, T))
    if m.mode == "normalized":
        jobs = [(x0, T * m.grid[j], j) for x0, T in inits]
    else:
        steps = int(m.steps[:j].sum())
        jobs = [(x0, m.grid[j], steps) for x0, _ in inits]
    dyn.propagate(jobs[0][0], max(jobs[0][1], 1e-3), max(jobs[0][2], 1), p)

    def pointwise():
        return np.array([dyn.propagate(x0, t, max(k, 1), p) if k else x0 for x0, t, k in jobs])

    best_map = best_pt = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        states = m.evaluate_many(dks, j)
        best_map = min(best_map, time.perf_counter() - t0)
        t0 = time.perf_counter()
        ref = pointwise()
        best_pt = min(best_pt, time.perf_counter() - t0)
    return Benchmark(n=n, map_seconds=best_map, pointwise_seconds=best_pt,
                     max_difference=float(np.abs(states - ref).max()), repeats=repeats)
