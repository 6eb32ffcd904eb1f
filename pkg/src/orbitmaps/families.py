"""Symmetric periodic orbits: half-period differential correction and
pseudo-arclength continuation of Lyapunov and Halo families.

Every orbit here is symmetric about the x-z plane and starts on it with
``vx = vz = 0``.  Propagation is fixed-step RK4 with ``ns`` steps per
period (``ns / 2`` per half period), so a stored member is periodic for
exactly the integrator that later consumes it.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from .dynamics import DEFAULT_NS, SystemParams

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

FAMILIES = {
    "L1-Lyap": ("L1", "lyapunov"),
    "L2-Lyap": ("L2", "lyapunov"),
    "L1-Halo": ("L1", "halo"),
    "L2-Halo": ("L2", "halo"),
}

# indices into the state vector of the free initial-condition variables
_FREE_STATE = {"lyapunov": (0, 4), "halo": (0, 2, 4)}
_FREE_NAMES = {"lyapunov": ("x0", "vy0", "T/2"), "halo": ("x0", "z0", "vy0", "T/2")}
# state components constrained to zero at the half period
_CONSTRAINED = {"lyapunov": (1, 3), "halo": (1, 3, 5)}

RESIDUAL_TOL = 1e-10
#: full-period return error bound (position, velocity) for a stored member
RETURN_TOL = (1e-8, 1e-7)
JACOBI_TOL = 1e-9
#: Halo members pass close to the Moon; fixed-step RK4 needs a finer grid there
HALO_NS = 8000
_POLISH_TOL = 1e-13


class CorrectionError(RuntimeError):
    """The half-period corrector failed (singular partials or no convergence)."""

    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


class BifurcationError(RuntimeError):
    """The constraint Jacobian lost rank; the family branches here."""


class ContinuationError(RuntimeError):
    """A pseudo-arclength step failed even after step halving."""


def family_kind(family_id: str) -> tuple[str, str]:
    try:
        return FAMILIES[family_id]
    except KeyError:
        raise ValueError(f"unknown family {family_id!r}; expected one of {sorted(FAMILIES)}") from None


@dataclass(frozen=True)
class OrbitMember:
    x0: np.ndarray
    period: float
    family_id: str
    residuals: tuple[float, ...] = ()
    iterations: int = 0
    ns: int = DEFAULT_NS

    @property
    def kappa(self) -> float:
        return float(self.x0[0])

    @property
    def half_period(self) -> float:
        return 0.5 * self.period

    @property
    def kind(self) -> str:
        return family_kind(self.family_id)[1]

    def free_vector(self) -> np.ndarray:
        return np.append(self.x0[list(_FREE_STATE[self.kind])], self.half_period)


@dataclass
class FamilyTable:
    members: list[OrbitMember]
    step: float
    mu: float
    family_id: str
    ns: int = DEFAULT_NS
    stop_reason: str = "complete"

    def __len__(self):
        return len(self.members)

    @property
    def kappas(self) -> np.ndarray:
        return np.array([m.kappa for m in self.members])

    @property
    def states(self) -> np.ndarray:
        return np.array([m.x0 for m in self.members])

    @property
    def periods(self) -> np.ndarray:
        return np.array([m.period for m in self.members])

    def free_vectors(self) -> np.ndarray:
        return np.array([m.free_vector() for m in self.members])


@dataclass(frozen=True)
class Tangent:
    """Unit null vector of the constraint Jacobian over the free variables."""

    vector: np.ndarray
    kind: str
    singular_values: np.ndarray = field(default=None, repr=False)

    @property
    def names(self) -> tuple[str, ...]:
        return _FREE_NAMES[self.kind]

    def state_direction(self) -> np.ndarray:
        """The tangent spread back over the 6 state components (plus dT/2 last)."""
        out = np.zeros(7)
        out[list(_FREE_STATE[self.kind])] = self.vector[:-1]
        out[6] = self.vector[-1]
        return out


# -- constraint evaluation ---------------------------------------------------

def _member_state(free: np.ndarray, kind: str, template: np.ndarray | None = None) -> np.ndarray:
    x0 = np.zeros(6) if template is None else np.array(template, dtype=float)
    x0[list(_FREE_STATE[kind])] = free[:-1]
    return x0


def _half_period_flow(x0, thalf, mu, ns):
    state, stm = dyn.propagate_stm(x0, thalf, ns // 2, mu)
    return state, stm, dyn._kernels.rhs(state, mu)


def constraints(free: np.ndarray, kind: str, mu: float, ns: int = DEFAULT_NS):
    """Half-period constraints ``F`` and their Jacobian ``D_F`` over the free variables."""
    x0 = _member_state(free, kind)
    state, stm, f = _half_period_flow(x0, free[-1], mu, ns)
    rows = list(_CONSTRAINED[kind])
    cols = list(_FREE_STATE[kind])
    F = state[rows]
    DF = np.column_stack([stm[np.ix_(rows, cols)], f[rows]])
    return F, DF


def correct_half_period(guess, family_id: str, p=dyn.MU_EARTH_MOON, *, thalf: float | None = None,
                        hold: str | None = None, ns: int = DEFAULT_NS, tol: float = RESIDUAL_TOL,
                        max_iter: int = 25) -> OrbitMember:
    """Refine a symmetric guess until ``y``, ``vx`` (and ``vz``) vanish at the half period.

    Lyapunov orbits hold ``x0`` by default (so the family parameter is
    exact) and correct ``(vy0, T/2)``; ``hold="vy0"`` corrects ``(x0, T/2)``
    instead.  Halo orbits hold ``z0`` by default and correct
    ``(x0, vy0, T/2)``; ``hold="x0"`` corrects ``(z0, vy0, T/2)``.
    """
    if ns % 2:
        raise ValueError("ns must be even")
    mu = dyn._mu(p)
    kind = family_kind(family_id)[1]
    x0 = np.array(guess, dtype=float)
    if abs(x0[1]) > 1e-14 or abs(x0[3]) > 1e-14 or abs(x0[5]) > 1e-14:
        raise ValueError("guess must start on y = 0 with vx = vz = 0")
    x0[[1, 3, 5]] = 0.0
    if kind == "lyapunov":
        x0[[2, 5]] = 0.0
        hold = hold or "x0"
        free = {"x0": [4], "vy0": [0]}[hold]
        rows = [1, 3]
    else:
        hold = hold or "z0"
        free = {"z0": [0, 4], "x0": [2, 4]}[hold]
        rows = [3, 5, 1]
    if thalf is None:
        thalf, _ = dyn.find_crossing(x0, mu, t_min=0.2)

    iterations = 0
    polished = False
    best = None
    while True:
        state, stm, f = _half_period_flow(x0, thalf, mu, ns)
        res = state[rows]
        err = float(np.max(np.abs(res)))
        if not np.isfinite(err):
            raise CorrectionError("corrector diverged", residuals=res)
        if best is not None and polished:
            if err > best[0]:
                err, x0, thalf, state = best
            break
        if err < tol:
            if err < _POLISH_TOL:
                break
            best = (err, x0.copy(), thalf, state.copy())
            polished = True
        elif iterations >= max_iter:
            raise CorrectionError(
                f"no convergence after {max_iter} iterations, residuals {res}", residuals=res)
        phi = np.column_stack([stm[np.ix_(rows, free)], f[rows]])
        try:
            delta = -np.linalg.solve(phi, res)
        except np.linalg.LinAlgError as exc:
            raise CorrectionError(f"singular correction matrix: {exc}", residuals=res) from exc
        x0[free] += delta[:-1]
        thalf += delta[-1]
        if not polished:
            iterations += 1
    return OrbitMember(x0=x0, period=2.0 * thalf, family_id=family_id,
                       residuals=_residuals(state, kind), iterations=iterations, ns=ns)


def _residuals(state, kind):
    return tuple(float(abs(state[i])) for i in _CONSTRAINED[kind])


def family_tangent(m: OrbitMember, previous: Tangent | None = None, direction: int = 1,
                   orient: int = 0, mu: float = dyn.MU_EARTH_MOON, rank_tol: float = 1e-9) -> Tangent:
    """Unit null vector of ``D_F`` at a member.

    The sign follows ``previous`` when given; otherwise component ``orient``
    of the free vector (0 = x0) gets the sign of ``direction``.
    """
    _, DF = constraints(m.free_vector(), m.kind, mu, m.ns)
    _, sv, vt = np.linalg.svd(DF)
    if sv[-1] < rank_tol * sv[0]:
        raise BifurcationError(
            f"constraint Jacobian rank-deficient at kappa={m.kappa:.12f} (singular values {sv})")
    v = vt[-1]
    if previous is not None:
        if v @ previous.vector < 0.0:
            v = -v
    elif np.sign(v[orient]) != np.sign(direction):
        v = -v
    return Tangent(vector=v, kind=m.kind, singular_values=sv)


def pac_step(m: OrbitMember, tangent: Tangent, ds: float, mu: float = dyn.MU_EARTH_MOON,
             tol: float = RESIDUAL_TOL, max_iter: int = 25, halvings: int = 4) -> OrbitMember:
    """One pseudo-arclength step of length ``ds`` along ``tangent``."""
    if ds == 0.0:
        raise ValueError("ds must be nonzero")
    base = m.free_vector()
    t = tangent.vector
    step = ds
    for attempt in range(halvings + 1):
        try:
            return _pac_newton(m, base, t, step, mu, tol, max_iter)
        except ContinuationError as exc:
            log.debug("pac step %.3g failed (%s); halving", step, exc)
            step *= 0.5
    raise ContinuationError(
        f"pseudo-arclength step failed from kappa={m.kappa:.12f} after {halvings} halvings")


def _pac_newton(m, base, t, ds, mu, tol, max_iter):
    X = base + ds * t
    prev_norm = np.inf
    polished = False
    best = None
    for it in range(max_iter + 2):
        try:
            F, DF = constraints(X, m.kind, mu, m.ns)
        except dyn.CollisionError as exc:
            raise ContinuationError(str(exc)) from exc
        G = np.append(F, (X - base) @ t - ds)
        norm = float(np.max(np.abs(G)))
        if not np.isfinite(norm):
            raise ContinuationError("non-finite constraints")
        if polished:
            if norm > best[0]:
                X = best[1]
            break
        if norm < tol:
            if norm < _POLISH_TOL:
                break
            best = (norm, X.copy())
            polished = True
        elif norm > 10.0 * prev_norm and it > 1:
            raise ContinuationError(f"residual grew to {norm:.3g}")
        elif it >= max_iter:
            raise ContinuationError(f"no convergence, residual {norm:.3g}")
        prev_norm = min(prev_norm, norm)
        DG = np.vstack([DF, t])
        try:
            X = X - np.linalg.solve(DG, G)
        except np.linalg.LinAlgError as exc:
            raise ContinuationError(f"singular augmented Jacobian: {exc}") from exc
    x0 = _member_state(X, m.kind)
    state, _, _ = _half_period_flow(x0, X[-1], mu, m.ns)
    return OrbitMember(x0=x0, period=2.0 * X[-1], family_id=m.family_id,
                       residuals=_residuals(state, m.kind), iterations=it, ns=m.ns)


def generate_family(seed: OrbitMember, ds: float, count: int, direction: int = 1,
                    mu: float = dyn.MU_EARTH_MOON, orient: int = 0,
                    validate: bool = True) -> FamilyTable:
    """Sweep ``count`` members (seed included) by repeated pseudo-arclength steps.

    With ``validate`` every new member is re-propagated for a full period and
    the sweep stops at the first one the fixed-step integrator can no longer
    represent to :data:`RETURN_TOL` / :data:`JACOBI_TOL`.
    """
    members = [seed]
    prev = None
    reason = "complete"
    m = seed
    while len(members) < count:
        try:
            tan = family_tangent(m, previous=prev, direction=direction, orient=orient, mu=mu)
            m = pac_step(m, tan, ds, mu)
        except (BifurcationError, ContinuationError) as exc:
            reason = f"stopped after {len(members)} members: {exc}"
            log.warning(reason)
            break
        if validate:
            chk = check_member(m, mu)
            if not chk.ok:
                reason = (f"stopped after {len(members)} members: integrator accuracy limit at "
                          f"kappa={m.kappa:.10f} ({chk})")
                log.info(reason)
                break
        members.append(m)
        prev = tan
    return FamilyTable(members=members, step=ds, mu=mu, family_id=seed.family_id,
                       ns=seed.ns, stop_reason=reason)


def monodromy(m: OrbitMember, mu: float = dyn.MU_EARTH_MOON) -> np.ndarray:
    _, stm = dyn.propagate_stm(m.x0, m.period, m.ns, mu)
    return stm


def vertical_trace(m: OrbitMember, mu: float = dyn.MU_EARTH_MOON) -> float:
    """Trace of the out-of-plane (z, vz) block of a planar member's monodromy matrix."""
    M = monodromy(m, mu)
    return float(M[2, 2] + M[5, 5])


def vertical_eigenvalues(m: OrbitMember, mu: float = dyn.MU_EARTH_MOON) -> np.ndarray:
    M = monodromy(m, mu)
    return np.linalg.eigvals(M[np.ix_([2, 5], [2, 5])])


def planar_family(which: str, p=dyn.MU_EARTH_MOON, *, amplitude: float = 0.01, ds: float = 1e-3,
                  count: int = 200, ns: int = DEFAULT_NS) -> FamilyTable:
    """Lyapunov family from the linear seed at ``amplitude``, growing away from the point."""
    mu = dyn._mu(p)
    seed_state = dyn.linear_seed_lyapunov(which, amplitude, mu)
    seed = correct_half_period(seed_state, f"{which}-Lyap", mu, ns=ns,
                               thalf=0.5 * dyn.linear_period(which, mu))
    return generate_family(seed, ds, count, direction=1, mu=mu)


def seed_halo_family(which: str, p=dyn.MU_EARTH_MOON, *, planar: FamilyTable | None = None,
                     dz: float = 1e-3, ns: int = HALO_NS, scan_ds: float = 5e-3,
                     scan_count: int = 300, trace_tol: float = 1e-9,
                     anchor: str = "moon") -> tuple[OrbitMember, OrbitMember]:
    """First Halo member off the planar family's vertical tangent bifurcation.

    Scans the out-of-plane monodromy block of the planar family for
    ``trace = 2``, bisects that crossing in ``x0``, offsets ``z0`` by ``dz``
    (its sign picks the branch) and corrects with ``z0`` held.  With
    ``anchor="moon"`` the returned initial state is the symmetric crossing
    closer to the Moon.  Returns ``(halo_member, bifurcation_member)``.
    """
    mu = dyn._mu(p)
    lyap_id = f"{which}-Lyap"
    if planar is None:
        planar = planar_family(which, mu, ds=scan_ds, count=scan_count)
    pns = planar.ns
    g = [vertical_trace(m, mu) - 2.0 for m in planar.members]
    idx = next((i for i in range(1, len(g)) if g[i - 1] * g[i] <= 0.0), None)
    if idx is None:
        raise RuntimeError(
            f"vertical bifurcation not bracketed by {len(planar)} {lyap_id} members "
            f"(kappa {planar.kappas[0]:.6f}..{planar.kappas[-1]:.6f}); sweep further")
    lo, hi = planar.members[idx - 1], planar.members[idx]
    glo = g[idx - 1]
    mid = lo
    for _ in range(60):
        guess = 0.5 * (lo.x0 + hi.x0)
        mid = correct_half_period(guess, lyap_id, mu, ns=pns, thalf=0.25 * (lo.period + hi.period))
        gm = vertical_trace(mid, mu) - 2.0
        if abs(gm) < trace_tol or abs(hi.kappa - lo.kappa) < 1e-15:
            break
        if gm * glo <= 0.0:
            hi = mid
        else:
            lo, glo = mid, gm
    guess = mid.x0.copy()
    guess[2] = dz
    halo_id = f"{which}-Halo"
    halo = correct_half_period(guess, halo_id, mu, ns=ns, thalf=mid.half_period, hold="z0")
    if anchor == "moon":
        half = dyn.propagate(halo.x0, halo.half_period, ns // 2, mu)
        moon = 1.0 - mu
        if np.hypot(half[0] - moon, half[2]) < np.hypot(halo.x0[0] - moon, halo.x0[2]):
            half[[1, 3, 5]] = 0.0
            halo = correct_half_period(half, halo_id, mu, ns=ns, thalf=halo.half_period, hold="z0")
    return halo, mid


def halo_family(which: str, p=dyn.MU_EARTH_MOON, *, ds: float = 1e-2, count: int = 200,
                dz: float = 1e-3, ns: int = HALO_NS, planar: FamilyTable | None = None,
                validate: bool = True) -> FamilyTable:
    """Halo family from the bifurcation, swept toward growing out-of-plane amplitude."""
    mu = dyn._mu(p)
    seed, _ = seed_halo_family(which, mu, planar=planar, dz=dz, ns=ns)
    direction = 1 if seed.x0[2] >= 0.0 else -1
    return generate_family(seed, ds, count, direction=direction, mu=mu, orient=1,
                           validate=validate)


# -- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class MemberCheck:
    position_error: float
    velocity_error: float
    residual: float
    jacobi_drift: float

    @property
    def ok(self) -> bool:
        return (self.position_error < RETURN_TOL[0] and self.velocity_error < RETURN_TOL[1]
                and self.residual < RESIDUAL_TOL and self.jacobi_drift < JACOBI_TOL)


def check_member(m: OrbitMember, mu: float = dyn.MU_EARTH_MOON) -> MemberCheck:
    """Full-period return error, half-period residual and Jacobi drift."""
    traj = dyn.trajectory(m.x0, m.period, m.ns, mu)
    end = traj[-1]
    c = np.array([dyn.jacobi_constant(s, mu) for s in traj[:: max(1, m.ns // 20)]])
    c_end = dyn.jacobi_constant(end, mu)
    half = traj[m.ns // 2]
    res = max(abs(half[i]) for i in _CONSTRAINED[m.kind])
    return MemberCheck(
        position_error=float(np.linalg.norm(end[:3] - m.x0[:3])),
        velocity_error=float(np.linalg.norm(end[3:] - m.x0[3:])),
        residual=float(res),
        jacobi_drift=float(max(np.max(np.abs(c - c[0])), abs(c_end - c[0]))),
    )


def arclength_spacing(table: FamilyTable, mu: float | None = None) -> np.ndarray:
    """Projected step ``(X_{i+1} - X_i) . tangent_i`` for consecutive members."""
    mu = table.mu if mu is None else mu
    X = table.free_vectors()
    out = []
    prev = None
    for i in range(len(X) - 1):
        tan = family_tangent(table.members[i], previous=prev, mu=mu,
                             direction=int(np.sign((X[i + 1] - X[i])[0]) or 1))
        if (X[i + 1] - X[i]) @ tan.vector < 0.0 and prev is None:
            tan = replace(tan, vector=-tan.vector)
        out.append(float((X[i + 1] - X[i]) @ tan.vector))
        prev = tan
    return np.array(out)


def fold_indices(table: FamilyTable) -> list[int]:
    """Indices where the family parameter reverses direction."""
    d = np.diff(table.kappas)
    return [i + 1 for i in range(len(d) - 1) if d[i] * d[i + 1] < 0.0]


def monotone_branches(table: FamilyTable) -> list[FamilyTable]:
    """Split a table at folds into pieces along which kappa is monotone.

    The fold member closes one piece and opens the next.
    """
    bounds = [0] + fold_indices(table) + [len(table) - 1]
    return [replace(table, members=list(table.members[a:b + 1]))
            for a, b in zip(bounds[:-1], bounds[1:])]


# -- persistence ---------------------------------------------------------------

CSV_COLUMNS = ["family_id", "kappa", "x", "y", "z", "vx", "vy", "vz", "period",
               "res_y", "res_vx", "res_vz"]


def _member_row(m: OrbitMember) -> list:
    res = list(m.residuals) + [0.0] * (3 - len(m.residuals))
    return [m.family_id, repr(float(m.kappa))] + [repr(float(v)) for v in m.x0] + [repr(float(m.period))] + \
        [repr(float(r)) for r in res]


def table_to_csv(table: FamilyTable) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n# mu={table.mu!r}\n# step={table.step!r}\n"
              f"# ns={table.ns}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for m in table.members:
        w.writerow(_member_row(m))
    return buf.getvalue()


def table_from_csv(text: str) -> FamilyTable:
    meta = {}
    lines = text.splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k.strip()] = v.strip()
        elif line.strip():
            body.append(line)
    _check_version(int(meta.get("schema_version", -1)))
    rows = list(csv.DictReader(body))
    members = []
    ns = int(meta.get("ns", DEFAULT_NS))
    for r in rows:
        x0 = np.array([float(r[k]) for k in ("x", "y", "z", "vx", "vy", "vz")])
        kind = family_kind(r["family_id"])[1]
        res = tuple(float(r[k]) for k in ("res_y", "res_vx", "res_vz"))[: len(_CONSTRAINED[kind])]
        members.append(OrbitMember(x0=x0, period=float(r["period"]), family_id=r["family_id"],
                                   residuals=res, ns=ns))
    fid = members[0].family_id if members else ""
    return FamilyTable(members=members, step=float(meta["step"]), mu=float(meta["mu"]),
                       family_id=fid, ns=ns)


def table_to_dict(table: FamilyTable) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "family_table",
        "family_id": table.family_id,
        "mu": table.mu,
        "step": table.step,
        "ns": table.ns,
        "stop_reason": table.stop_reason,
        "members": [
            {"kappa": m.kappa, "x0": [float(v) for v in m.x0], "period": m.period,
             "residuals": list(m.residuals)}
            for m in table.members
        ],
    }


def table_from_dict(d: dict) -> FamilyTable:
    _check_version(d.get("schema_version"))
    fid = d["family_id"]
    ns = int(d.get("ns", DEFAULT_NS))
    members = [OrbitMember(x0=np.array(m["x0"], dtype=float), period=float(m["period"]),
                           family_id=fid, residuals=tuple(m.get("residuals", ())), ns=ns)
               for m in d["members"]]
    return FamilyTable(members=members, step=float(d["step"]), mu=float(d["mu"]), family_id=fid,
                       ns=ns, stop_reason=d.get("stop_reason", "complete"))


def _check_version(v):
    if v != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {v!r} (expected {SCHEMA_VERSION})")


def save_table(table: FamilyTable, path) -> tuple[Path, Path]:
    """Write ``<path>.json`` and ``<path>.csv``."""
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".json", ".csv") else path
    base.parent.mkdir(parents=True, exist_ok=True)
    jp, cp = base.parent / (base.name + ".json"), base.parent / (base.name + ".csv")
    jp.write_text(json.dumps(table_to_dict(table), indent=1))
    cp.write_text(table_to_csv(table))
    return jp, cp


def load_table(path) -> FamilyTable:
    path = Path(path)
    if path.suffix == ".csv":
        return table_from_csv(path.read_text())
    return table_from_dict(json.loads(path.read_text()))
