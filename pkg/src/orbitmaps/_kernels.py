"""Compiled fixed-step RK4 kernels for real-valued CR3BP propagation.

These mirror :func:`orbitmaps.dynamics.cr3bp_rhs` and
:func:`orbitmaps.dynamics.rk4_propagate` for float64 states; the generic
versions remain the reference and the tests check the two agree.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def rhs(s, mu):
    x, y, z = s[0], s[1], s[2]
    vx, vy = s[3], s[4]
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    r1sq = dx1 * dx1 + y * y + z * z
    r2sq = dx2 * dx2 + y * y + z * z
    if r1sq <= 0.0 or r2sq <= 0.0:
        raise ZeroDivisionError("state at a primary")
    r1m3 = r1sq ** -1.5
    r2m3 = r2sq ** -1.5
    out = np.empty(6)
    out[0] = vx
    out[1] = vy
    out[2] = s[5]
    out[3] = 2.0 * vy + x - (1.0 - mu) * dx1 * r1m3 - mu * dx2 * r2m3
    out[4] = -2.0 * vx + y - (1.0 - mu) * y * r1m3 - mu * y * r2m3
    out[5] = -(1.0 - mu) * z * r1m3 - mu * z * r2m3
    return out


@njit(cache=True)
def jacobian(s, mu):
    x, y, z = s[0], s[1], s[2]
    dx1 = x + mu
    dx2 = x - 1.0 + mu
    r1sq = dx1 * dx1 + y * y + z * z
    r2sq = dx2 * dx2 + y * y + z * z
    r1m3 = r1sq ** -1.5
    r2m3 = r2sq ** -1.5
    r1m5 = r1m3 / r1sq
    r2m5 = r2m3 / r2sq
    a = 1.0 - mu
    uxx = 1.0 - a * r1m3 - mu * r2m3 + 3.0 * a * dx1 * dx1 * r1m5 + 3.0 * mu * dx2 * dx2 * r2m5
    uyy = 1.0 - a * r1m3 - mu * r2m3 + 3.0 * a * y * y * r1m5 + 3.0 * mu * y * y * r2m5
    uzz = -a * r1m3 - mu * r2m3 + 3.0 * a * z * z * r1m5 + 3.0 * mu * z * z * r2m5
    uxy = 3.0 * a * dx1 * y * r1m5 + 3.0 * mu * dx2 * y * r2m5
    uxz = 3.0 * a * dx1 * z * r1m5 + 3.0 * mu * dx2 * z * r2m5
    uyz = 3.0 * a * y * z * r1m5 + 3.0 * mu * y * z * r2m5
    A = np.zeros((6, 6))
    A[0, 3] = 1.0
    A[1, 4] = 1.0
    A[2, 5] = 1.0
    A[3, 0] = uxx
    A[3, 1] = uxy
    A[3, 2] = uxz
    A[4, 0] = uxy
    A[4, 1] = uyy
    A[4, 2] = uyz
    A[5, 0] = uxz
    A[5, 1] = uyz
    A[5, 2] = uzz
    A[3, 4] = 2.0
    A[4, 3] = -2.0
    return A


@njit(cache=True)
def step(s, h, mu):
    k1 = rhs(s, mu)
    k2 = rhs(s + 0.5 * h * k1, mu)
    k3 = rhs(s + 0.5 * h * k2, mu)
    k4 = rhs(s + h * k3, mu)
    return s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def propagate(s, t, n, mu):
    h = t / n
    out = s.copy()
    for _ in range(n):
        out = step(out, h, mu)
    return out


@njit(cache=True)
def trajectory(s, t, n, mu):
    h = t / n
    out = np.empty((n + 1, 6))
    out[0] = s
    for i in range(n):
        out[i + 1] = step(out[i], h, mu)
    return out


@njit(cache=True)
def _aug_rhs(s, phi, mu):
    return rhs(s, mu), jacobian(s, mu) @ phi


@njit(cache=True)
def step_stm(s, phi, h, mu):
    k1, m1 = _aug_rhs(s, phi, mu)
    k2, m2 = _aug_rhs(s + 0.5 * h * k1, phi + 0.5 * h * m1, mu)
    k3, m3 = _aug_rhs(s + 0.5 * h * k2, phi + 0.5 * h * m2, mu)
    k4, m4 = _aug_rhs(s + h * k3, phi + h * m3, mu)
    s_new = s + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    phi_new = phi + h / 6.0 * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
    return s_new, phi_new


@njit(cache=True)
def propagate_stm(s, t, n, mu):
    h = t / n
    out = s.copy()
    phi = np.eye(6)
    for _ in range(n):
        out, phi = step_stm(out, phi, h, mu)
    return out, phi


@njit(cache=True)
def first_crossing(s, h, mu, t_min, t_max):
    """Step with ``h`` until ``y`` changes sign after ``t_min``.

    Returns the time and state of the last step before the sign change, or
    ``t = -1`` if no crossing happened before ``t_max``.
    """
    t = 0.0
    cur = s.copy()
    while t < t_max:
        nxt = step(cur, h, mu)
        if t + h > t_min and cur[1] != 0.0 and nxt[1] * cur[1] <= 0.0:
            return t, cur
        cur = nxt
        t += h
    return -1.0, cur


@njit(cache=True)
def propagate_schedule(s, steps, hs, mu):
    """Propagate through consecutive segments of ``steps[i]`` steps of size ``hs[i]``.

    Returns the state at every segment boundary (``len(steps) + 1`` rows).
    """
    m = steps.shape[0]
    out = np.empty((m + 1, 6))
    out[0] = s
    cur = s.copy()
    for i in range(m):
        for _ in range(steps[i]):
            cur = step(cur, hs[i], mu)
        out[i + 1] = cur
    return out


@njit(cache=True)
def poly_state(c, dk):
    """Horner evaluation of a ``(6, N + 1)`` coefficient block at ``dk``."""
    m = c.shape[1]
    out = np.zeros(6)
    for i in range(6):
        acc = 0.0
        for k in range(m - 1, -1, -1):
            acc = acc * dk + c[i, k]
        out[i] = acc
    return out


@njit(cache=True)
def map_query(coeffs, grid, pmap, normalized, mu, dk, instant):
    """Cubic Hermite query between the two map snapshots bracketing ``instant``."""
    n = grid.shape[0]
    j = np.searchsorted(grid, instant, side="right") - 1
    if j > n - 2:
        j = n - 2
    if j < 0:
        j = 0
    g0 = grid[j]
    g1 = grid[j + 1]
    if instant == g0:
        return poly_state(coeffs[j], dk)
    if instant == g1:
        return poly_state(coeffs[j + 1], dk)
    xa = poly_state(coeffs[j], dk)
    xb = poly_state(coeffs[j + 1], dk)
    d = g1 - g0
    scale = d
    if normalized:
        acc = 0.0
        for k in range(pmap.shape[0] - 1, -1, -1):
            acc = acc * dk + pmap[k]
        scale = d * acc
    da = rhs(xa, mu) * scale
    db = rhs(xb, mu) * scale
    u = (instant - g0) / d
    u2 = u * u
    u3 = u2 * u
    return ((2 * u3 - 3 * u2 + 1) * xa + (u3 - 2 * u2 + u) * da
            + (3 * u2 - 2 * u3) * xb + (u3 - u2) * db)
