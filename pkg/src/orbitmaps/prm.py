"""Polynomial regression of family initial states against ``kappa = x0``.

Two model flavours share one evaluation path:

* :class:`GlobalPrm` tiles the family's kappa range with equal-width
  regions, each carrying its own least-squares polynomial expanded about
  the region's mean kappa; exactly one region is active for any kappa.
* :class:`LocalPrm` is a single polynomial about a designed member, fitted
  to that member's neighbours and constrained to pass through it.

Fits are done in a Chebyshev basis on the variable ``s = (kappa - op) / scale``
with ``|s| <= 1``; degree-30 monomial fits on raw kappa are hopeless.
Monomial coefficients in ``s`` are derived on export and when re-expanding
a model as a truncated power series.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import chebyshev as C

from .dalg import Tps, constant, variable
from .dynamics import DEFAULT_NS
from .families import FamilyTable, family_kind

SCHEMA_VERSION = 1

OUTPUTS = {"lyapunov": ("vy0", "period"), "halo": ("z0", "vy0", "period")}
_STATE_INDEX = {"z0": 2, "vy0": 4}

#: abort a fit whose relative residual stays above this
MAX_RELATIVE_RESIDUAL = 1e-6


class PrmFitError(ValueError):
    """A region or window cannot support the requested fit."""


class PrmDomainError(ValueError):
    """kappa lies outside the model's domain."""


class ExtrapolationWarning(UserWarning):
    """A local model was evaluated outside its fitting window."""


@dataclass
class Region:
    lower: float
    upper: float
    op_point: float
    scale: float
    coeffs: dict[str, np.ndarray]
    residual_rms: dict[str, float] = field(default_factory=dict)
    condition: float = float("nan")
    count: int = 0

    def contains(self, kappa: float, closed: bool = False) -> bool:
        return self.lower <= kappa < self.upper or (closed and kappa == self.upper)

    def value(self, name: str, kappa):
        return C.chebval((np.asarray(kappa) - self.op_point) / self.scale, self.coeffs[name])


@dataclass
class GlobalPrm:
    regions: list[Region]
    degree: int
    family_id: str
    ns: int = DEFAULT_NS

    @property
    def kind(self) -> str:
        return family_kind(self.family_id)[1]

    @property
    def outputs(self) -> tuple[str, ...]:
        return OUTPUTS[self.kind]

    @property
    def domain(self) -> tuple[float, float]:
        return self.regions[0].lower, self.regions[-1].upper

    def activations(self, kappa: float) -> np.ndarray:
        n = len(self.regions)
        return np.array([1.0 if r.contains(kappa, closed=(i == n - 1)) else 0.0
                         for i, r in enumerate(self.regions)])

    def region_index(self, kappa: float) -> int:
        lo, hi = self.domain
        if not lo <= kappa <= hi:
            raise PrmDomainError(f"kappa={kappa!r} outside model domain [{lo!r}, {hi!r}]")
        uppers = np.array([r.upper for r in self.regions])
        return int(min(np.searchsorted(uppers, kappa, side="right"), len(self.regions) - 1))

    def region_for(self, kappa: float) -> Region:
        return self.regions[self.region_index(kappa)]

    def region_width(self, kappa: float) -> float:
        r = self.region_for(kappa)
        return r.upper - r.lower


@dataclass
class LocalPrm:
    op_point: float
    window: int
    degree: int
    scale: float
    coeffs: dict[str, np.ndarray]
    family_id: str
    span: tuple[float, float]
    residual_rms: dict[str, float] = field(default_factory=dict)
    ns: int = DEFAULT_NS

    @property
    def kind(self) -> str:
        return family_kind(self.family_id)[1]

    @property
    def outputs(self) -> tuple[str, ...]:
        return OUTPUTS[self.kind]

    def value(self, name: str, kappa):
        return C.chebval((np.asarray(kappa) - self.op_point) / self.scale, self.coeffs[name])


Model = GlobalPrm | LocalPrm


def _targets(table: FamilyTable) -> dict[str, np.ndarray]:
    kind = family_kind(table.family_id)[1]
    states = table.states
    out = {}
    for name in OUTPUTS[kind]:
        out[name] = table.periods if name == "period" else states[:, _STATE_INDEX[name]]
    return out


def _lstsq(V: np.ndarray, y: np.ndarray, label: str, ref: np.ndarray | None = None):
    """Least squares with a residual check relative to ``ref`` (default ``y``)."""
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    r = V @ coef - y
    rms = float(np.sqrt(np.mean(r * r)))
    rel = float(np.linalg.norm(r) / max(np.linalg.norm(y if ref is None else ref), 1e-300))
    if rel > MAX_RELATIVE_RESIDUAL:
        raise PrmFitError(f"{label}: relative residual {rel:.3g} exceeds {MAX_RELATIVE_RESIDUAL}")
    return coef, rms


def _check_monotone(k: np.ndarray, family_id: str):
    d = np.diff(k)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise PrmFitError(f"{family_id}: kappa is not monotone along the table; "
                          "split it at folds (families.monotone_branches) first")


def fit_global(table: FamilyTable, regions: int = 8, degree: int = 30) -> GlobalPrm:
    """Equal-width regions in kappa, one least-squares polynomial per region and output."""
    k = table.kappas
    _check_monotone(k, table.family_id)
    targets = _targets(table)
    lo, hi = float(k.min()), float(k.max())
    edges = np.linspace(lo, hi, regions + 1)
    edges[0], edges[-1] = lo, hi
    out = []
    for i in range(regions):
        a, b = edges[i], edges[i + 1]
        mask = (k >= a) & ((k < b) if i < regions - 1 else (k <= b))
        n = int(mask.sum())
        if n < degree + 1:
            raise PrmFitError(f"region {i} [{a:.10f}, {b:.10f}] has {n} members; "
                              f"degree {degree} needs at least {degree + 1}")
        op = float(k[mask].mean())
        scale = max(op - a, b - op)
        s = (k[mask] - op) / scale
        V = C.chebvander(s, degree)
        coeffs, rms = {}, {}
        for name, y in targets.items():
            coeffs[name], rms[name] = _lstsq(V, y[mask], f"region {i} output {name}")
        out.append(Region(lower=float(a), upper=float(b), op_point=op, scale=scale, coeffs=coeffs,
                          residual_rms=rms, condition=float(np.linalg.cond(V)), count=n))
    return GlobalPrm(regions=out, degree=degree, family_id=table.family_id, ns=table.ns)


def fit_local(table: FamilyTable, member_index: int, window: int = 21, degree: int = 6) -> LocalPrm:
    """Polynomial about one member, fitted to the ``window`` members centred on it.

    The constant term is pinned to the designed member, so the model
    reproduces it exactly at ``delta kappa = 0``.
    """
    if window < degree + 1:
        raise PrmFitError(f"window {window} too small for degree {degree}")
    n = len(table)
    if not 0 <= member_index < n:
        raise IndexError(f"member index {member_index} out of range for {n} members")
    half = window // 2
    a = member_index - half
    b = a + window
    if a < 0 or b > n:
        raise PrmFitError(f"member {member_index} lacks {half} neighbours on each side "
                          f"in a {n}-member table")
    k = table.kappas[a:b]
    _check_monotone(k, table.family_id)
    op = float(table.kappas[member_index])
    scale = float(np.max(np.abs(k - op)))
    s = (k - op) / scale
    # basis T_j(s) - T_j(0), j >= 1: zero at the designed member
    V = C.chebvander(s, degree)[:, 1:] - C.chebvander(np.zeros(1), degree)[:, 1:]
    coeffs, rms = {}, {}
    for name, y in _targets(table).items():
        yd = float(y[member_index])
        tail, r = _lstsq(V, y[a:b] - yd, f"local output {name}", ref=y[a:b])
        c = np.concatenate([[yd], tail])
        c[0] -= C.chebval(0.0, np.concatenate([[0.0], tail]))
        coeffs[name], rms[name] = c, r
    return LocalPrm(op_point=op, window=window, degree=degree, scale=scale, coeffs=coeffs,
                    family_id=table.family_id, span=(float(k.min()), float(k.max())),
                    residual_rms=rms, ns=table.ns)


def _basis_for(model: Model, kappa: float, region: int | None = None):
    if isinstance(model, GlobalPrm):
        if region is not None:
            return model.regions[region]
        return model.region_for(kappa)
    lo, hi = model.span
    if not lo <= kappa <= hi:
        warnings.warn(f"kappa={kappa!r} outside local window [{lo!r}, {hi!r}]",
                      ExtrapolationWarning, stacklevel=3)
    return model


def eval_prm(model: Model, kappa: float, region: int | None = None) -> tuple[np.ndarray, float]:
    """Full initial state and period of the family member at ``kappa``.

    ``region`` forces one region's polynomial of a global model (no domain
    check), which lets continuation-free comparisons stay on one polynomial.
    """
    kappa = float(kappa)
    src = _basis_for(model, kappa, region)
    x0 = np.zeros(6)
    x0[0] = kappa
    for name in model.outputs:
        if name != "period":
            x0[_STATE_INDEX[name]] = float(src.value(name, kappa))
    return x0, float(src.value("period", kappa))


def eval_outputs(model: Model, kappas) -> dict[str, np.ndarray]:
    """Vectorised model outputs; every kappa must fall into the model's domain."""
    kappas = np.asarray(kappas, dtype=float)
    if isinstance(model, LocalPrm):
        return {name: model.value(name, kappas) for name in model.outputs}
    idx = np.array([model.region_index(k) for k in kappas.ravel()]).reshape(kappas.shape)
    out = {name: np.empty_like(kappas) for name in model.outputs}
    for i, r in enumerate(model.regions):
        m = idx == i
        if m.any():
            for name in model.outputs:
                out[name][m] = r.value(name, kappas[m])
    return out


def taylor_coefficients(cheb: np.ndarray, s0: float, scale: float, order: int) -> np.ndarray:
    """Coefficients of ``P((kappa - op)/scale)`` in powers of ``kappa - kappa_hat`` at ``s0``."""
    out = np.zeros(order + 1)
    c = np.asarray(cheb, dtype=float)
    for k in range(order + 1):
        if c.size == 0:
            break
        out[k] = C.chebval(s0, c) / math.factorial(k) / scale ** k
        c = C.chebder(c)
    return out


def monomial_coefficients(cheb: np.ndarray) -> np.ndarray:
    """Power-basis coefficients in the scaled variable ``s``."""
    return C.cheb2poly(np.asarray(cheb, dtype=float))


def prm_to_tps(model: Model, op_point: float, order: int = 5) -> tuple[np.ndarray, Tps]:
    """Model re-expanded about ``op_point`` as series in ``delta kappa``.

    Returns the initial-state vector (object array of six :class:`Tps`) and
    the period series.
    """
    op_point = float(op_point)
    src = _basis_for(model, op_point)
    s0 = (op_point - src.op_point) / src.scale
    comps = [variable(0, 1, order, value=op_point)] + [constant(0.0, 1, order) for _ in range(5)]
    period = None
    for name in model.outputs:
        series = Tps(1, order, taylor_coefficients(src.coeffs[name], s0, src.scale, order))
        if name == "period":
            period = series
        else:
            comps[_STATE_INDEX[name]] = series
    state = np.empty(6, dtype=object)
    state[:] = comps
    return state, period


# -- persistence ------------------------------------------------------------

def _coeff_dict(coeffs: dict[str, np.ndarray]) -> dict:
    return {name: {"chebyshev": [float(v) for v in c],
                   "monomial": [float(v) for v in monomial_coefficients(c)]}
            for name, c in coeffs.items()}


def _coeff_from(d: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, v in d.items():
        if "chebyshev" in v:
            out[name] = np.array(v["chebyshev"], dtype=float)
        else:
            out[name] = C.poly2cheb(np.array(v["monomial"], dtype=float))
    return out


def model_to_dict(model: Model) -> dict:
    if isinstance(model, GlobalPrm):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "global_prm",
            "family_id": model.family_id,
            "degree": model.degree,
            "ns": model.ns,
            "regions": [
                {"lower": r.lower, "upper": r.upper, "op_point": r.op_point, "scale": r.scale,
                 "coefficients": _coeff_dict(r.coeffs), "residual_rms": r.residual_rms,
                 "condition": r.condition, "count": r.count}
                for r in model.regions
            ],
        }
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "local_prm",
        "family_id": model.family_id,
        "degree": model.degree,
        "ns": model.ns,
        "op_point": model.op_point,
        "window": model.window,
        "scale": model.scale,
        "span": list(model.span),
        "coefficients": _coeff_dict(model.coeffs),
        "residual_rms": model.residual_rms,
    }


def model_from_dict(d: dict) -> Model:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {d.get('schema_version')!r}")
    if d["kind"] == "global_prm":
        regions = [Region(lower=r["lower"], upper=r["upper"], op_point=r["op_point"],
                          scale=r["scale"], coeffs=_coeff_from(r["coefficients"]),
                          residual_rms=r.get("residual_rms", {}),
                          condition=r.get("condition", float("nan")), count=r.get("count", 0))
                   for r in d["regions"]]
        return GlobalPrm(regions=regions, degree=d["degree"], family_id=d["family_id"],
                         ns=d.get("ns", DEFAULT_NS))
    if d["kind"] == "local_prm":
        return LocalPrm(op_point=d["op_point"], window=d["window"], degree=d["degree"],
                        scale=d["scale"], coeffs=_coeff_from(d["coefficients"]),
                        family_id=d["family_id"], span=tuple(d["span"]),
                        residual_rms=d.get("residual_rms", {}), ns=d.get("ns", DEFAULT_NS))
    raise ValueError(f"unknown model kind {d['kind']!r}")


def save_model(model: Model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(model_to_dict(model), indent=1))
    return path


def load_model(path) -> Model:
    return model_from_dict(json.loads(Path(path).read_text()))
