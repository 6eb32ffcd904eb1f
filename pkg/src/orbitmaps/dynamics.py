"""CR3BP equations of motion, libration points, linear seeds and RK4.

States are 6-vectors ``(x, y, z, vx, vy, vz)`` in the dimensionless
Earth-Moon rotating frame, Earth at ``(-mu, 0, 0)`` and Moon at
``(1 - mu, 0, 0)``.  :func:`cr3bp_rhs` and :func:`rk4_propagate` only use
ring operations and real powers, so they run unchanged on float arrays or
on object arrays of :class:`~orbitmaps.dalg.Tps`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from . import _kernels
from .dalg import Tps, TpsDomainError, cons

MU_EARTH_MOON = 0.01215

#: Steps per period used throughout unless configured otherwise.
DEFAULT_NS = 1000


class CollisionError(ArithmeticError):
    """The state sits at (or numerically on) one of the primaries."""


@dataclass(frozen=True)
class SystemParams:
    mu: float = MU_EARTH_MOON

    def __post_init__(self):
        if not 0.0 < self.mu < 0.5:
            raise ValueError(f"mu must lie in (0, 0.5), got {self.mu}")


@dataclass(frozen=True)
class LinearizedCoeffs:
    """Collinear-point linearization: ``c2`` and the Moon distance ratio ``gamma``."""

    c2: float
    gamma: float

    @property
    def inplane_frequency(self) -> float:
        c2 = self.c2
        return math.sqrt(0.5 * (2.0 - c2 + math.sqrt(9.0 * c2 * c2 - 8.0 * c2)))

    @property
    def velocity_ratio(self) -> float:
        """``k`` such that the center mode is ``x = A cos(lt), y = -k A sin(lt)``."""
        lam = self.inplane_frequency
        return (lam * lam + 1.0 + 2.0 * self.c2) / (2.0 * lam)

    @property
    def vertical_frequency(self) -> float:
        return math.sqrt(self.c2)


def _mu(p) -> float:
    return p.mu if isinstance(p, SystemParams) else float(p)


def as_state(items) -> np.ndarray:
    """Pack six components into a float array, or an object array if any is a series."""
    items = list(items)
    if any(isinstance(v, Tps) for v in items):
        out = np.empty(len(items), dtype=object)
        for i, v in enumerate(items):
            out[i] = v
        return out
    return np.array(items, dtype=float)


def cr3bp_rhs(s, p=MU_EARTH_MOON) -> np.ndarray:
    """Time derivative of a state; generic over floats and series."""
    mu = _mu(p)
    x, y, z, vx, vy, vz = s
    dx1 = x + mu
    dx2 = x - (1.0 - mu)
    r1sq = dx1 * dx1 + y * y + z * z
    r2sq = dx2 * dx2 + y * y + z * z
    if not (cons(r1sq) > 0.0 and cons(r2sq) > 0.0):
        raise CollisionError("state coincides with a primary")
    try:
        r1m3 = r1sq ** -1.5
        r2m3 = r2sq ** -1.5
    except TpsDomainError as exc:  # pragma: no cover - guarded above
        raise CollisionError(str(exc)) from exc
    g1 = (1.0 - mu) * r1m3
    g2 = mu * r2m3
    ax = 2.0 * vy + x - g1 * dx1 - g2 * dx2
    ay = -2.0 * vx + y - g1 * y - g2 * y
    az = -(g1 * z) - g2 * z
    return as_state((vx, vy, vz, ax, ay, az))


def jacobi_constant(s, p=MU_EARTH_MOON) -> float:
    mu = _mu(p)
    x, y, z, vx, vy, vz = (float(v) for v in s)
    r1 = math.sqrt((x + mu) ** 2 + y * y + z * z)
    r2 = math.sqrt((x - 1.0 + mu) ** 2 + y * y + z * z)
    if r1 == 0.0 or r2 == 0.0:
        raise CollisionError("state coincides with a primary")
    return x * x + y * y + 2.0 * (1.0 - mu) / r1 + 2.0 * mu / r2 - (vx * vx + vy * vy + vz * vz)


def _collinear_accel(x: float, mu: float) -> float:
    return x - (1.0 - mu) * (x + mu) / abs(x + mu) ** 3 - mu * (x - 1.0 + mu) / abs(x - 1.0 + mu) ** 3


def libration_point(which: str, p=MU_EARTH_MOON) -> float:
    """x-coordinate of L1 or L2."""
    mu = _mu(p)
    moon = 1.0 - mu
    if which == "L1":
        lo, hi = moon - 0.5, moon - 1e-9
    elif which == "L2":
        lo, hi = moon + 1e-9, moon + 0.5
    else:
        raise ValueError(f"unknown libration point {which!r}")
    f = lambda x: _collinear_accel(x, mu)
    if f(lo) * f(hi) > 0.0:
        raise RuntimeError(f"{which} not bracketed in ({lo}, {hi})")
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def linearized_coeffs(which: str, p=MU_EARTH_MOON) -> LinearizedCoeffs:
    """Richardson's ``c2`` with ``gamma`` taken as the libration point's distance to the Moon."""
    mu = _mu(p)
    gamma = abs(libration_point(which, mu) - (1.0 - mu))
    sign = -1.0 if which == "L1" else 1.0
    c2 = (mu + (1.0 - mu) * gamma ** 3 / (1.0 + sign * gamma) ** 3) / gamma ** 3
    if not c2 > 1.0:
        raise ValueError(f"c2 = {c2} <= 1 at {which}; no saddle x center structure")
    return LinearizedCoeffs(c2=c2, gamma=gamma)


def linear_seed_lyapunov(which: str, amplitude: float, p=MU_EARTH_MOON) -> np.ndarray:
    """Planar seed from the in-plane center mode of the linearized dynamics."""
    lc = linearized_coeffs(which, p)
    xl = libration_point(which, p)
    vy0 = -amplitude * lc.inplane_frequency * lc.velocity_ratio
    return np.array([xl + amplitude, 0.0, 0.0, 0.0, vy0, 0.0])


def linear_period(which: str, p=MU_EARTH_MOON) -> float:
    return 2.0 * math.pi / linearized_coeffs(which, p).inplane_frequency


def linear_rhs(which: str, p=MU_EARTH_MOON) -> Callable[[np.ndarray], np.ndarray]:
    """Vector field of the linearized model in absolute rotating coordinates."""
    lc = linearized_coeffs(which, p)
    xl = libration_point(which, p)
    c2 = lc.c2

    def f(s):
        dx = s[0] - xl
        return np.array([s[3], s[4], s[5],
                         2.0 * s[4] + (1.0 + 2.0 * c2) * dx,
                         -2.0 * s[3] - (c2 - 1.0) * s[1],
                         -c2 * s[2]])

    return f


def jacobian(s, p=MU_EARTH_MOON) -> np.ndarray:
    """Jacobian of the vector field at a real state."""
    return _kernels.jacobian(np.asarray(s, dtype=float), _mu(p))


def variational_rhs(state, stm, p=MU_EARTH_MOON):
    """Derivatives of the state and of its 6x6 state transition matrix."""
    state = np.asarray(state, dtype=float)
    return cr3bp_rhs(state, p), jacobian(state, p) @ np.asarray(stm, dtype=float)


def rk4_step(f, s, h):
    k1 = f(s)
    k2 = f(s + (0.5 * h) * k1)
    k3 = f(s + (0.5 * h) * k2)
    k4 = f(s + h * k3)
    return s + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_propagate(f, s, t_span, nsteps: int):
    """Classical RK4 with ``nsteps`` uniform steps of ``t_span / nsteps``.

    ``t_span`` may be a series, in which case every stage scaling is a
    series product.
    """
    if nsteps < 1:
        raise ValueError("nsteps must be >= 1")
    h = t_span / nsteps
    if not isinstance(h, Tps) and h == 0.0:
        return s
    for _ in range(nsteps):
        s = rk4_step(f, s, h)
    return s


def cr3bp_field(p=MU_EARTH_MOON):
    mu = _mu(p)
    return lambda s: cr3bp_rhs(s, mu)


# -- fast float paths --------------------------------------------------------

def propagate(s, t: float, nsteps: int, p=MU_EARTH_MOON) -> np.ndarray:
    """Compiled equivalent of ``rk4_propagate(cr3bp_field(p), s, t, nsteps)``."""
    if t == 0.0:
        return np.array(s, dtype=float)
    try:
        return _kernels.propagate(np.asarray(s, dtype=float), float(t), int(nsteps), _mu(p))
    except ZeroDivisionError as exc:
        raise CollisionError(str(exc)) from exc


def trajectory(s, t: float, nsteps: int, p=MU_EARTH_MOON) -> np.ndarray:
    """All ``nsteps + 1`` RK4 states from 0 to ``t``."""
    try:
        return _kernels.trajectory(np.asarray(s, dtype=float), float(t), int(nsteps), _mu(p))
    except ZeroDivisionError as exc:
        raise CollisionError(str(exc)) from exc


def propagate_stm(s, t: float, nsteps: int, p=MU_EARTH_MOON):
    """RK4 on the state and variational equations; returns ``(state, stm)``."""
    try:
        return _kernels.propagate_stm(np.asarray(s, dtype=float), float(t), int(nsteps), _mu(p))
    except ZeroDivisionError as exc:
        raise CollisionError(str(exc)) from exc


def find_crossing(s, p=MU_EARTH_MOON, h: float = 2e-3, t_min: float = 0.1,
                  t_max: float = 20.0, tol: float = 1e-12):
    """Time and state of the first ``y = 0`` crossing after ``t_min``.

    Steps with ``h`` until ``y`` changes sign, then Newton-iterates the
    last partial step length using ``vy``.
    """
    mu = _mu(p)
    s = np.asarray(s, dtype=float)
    t0, cur = _kernels.first_crossing(s, h, mu, t_min, t_max)
    if t0 < 0.0:
        raise RuntimeError(f"no y = 0 crossing within t = {t_max}")
    dt = 0.0
    state = cur
    for _ in range(50):
        state = _kernels.step(cur, dt, mu) if dt != 0.0 else cur
        if abs(state[1]) < tol:
            break
        dt -= state[1] / state[4]
    return t0 + dt, state
