"""Staggered-grid difference and quadrature operators.

Levels ``h`` live at the ``N`` cell centres, velocities ``v`` at the ``N + 1``
faces. Everything here is compiled with numba so the time-stepping kernel and
the Python-side functionals share one implementation.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def wall_levels(h):
    """Levels at x = 0 and x = L by linear extrapolation from the two nearest cells."""
    return 1.5 * h[0] - 0.5 * h[1], 1.5 * h[-1] - 0.5 * h[-2]


@njit(cache=True)
def face_levels(h):
    n = h.shape[0]
    out = np.empty(n + 1)
    for j in range(1, n):
        out[j] = 0.5 * (h[j - 1] + h[j])
    out[0], out[n] = wall_levels(h)
    return out


@njit(cache=True)
def face_slopes(h, dx):
    """h_x at faces: centred inside, one-sided second order at the walls."""
    n = h.shape[0]
    out = np.empty(n + 1)
    for j in range(1, n):
        out[j] = (h[j] - h[j - 1]) / dx
    out[0] = (-2.0 * h[0] + 3.0 * h[1] - h[2]) / dx
    out[n] = (2.0 * h[n - 1] - 3.0 * h[n - 2] + h[n - 3]) / dx
    return out


@njit(cache=True)
def cell_strain(v, dx):
    """v_x at cell centres from the two bounding faces."""
    n = v.shape[0] - 1
    out = np.empty(n)
    for i in range(n):
        out[i] = (v[i + 1] - v[i]) / dx
    return out


@njit(cache=True)
def trapz_faces(q, dx):
    n = q.shape[0] - 1
    s = 0.5 * (q[0] + q[n])
    for j in range(1, n):
        s += q[j]
    return s * dx


@njit(cache=True)
def momentum(h, v, dx):
    """Discrete total liquid momentum, the integral of h v."""
    n = h.shape[0]
    s = 0.0
    for j in range(1, n):
        s += 0.5 * (h[j - 1] + h[j]) * v[j]
    return s * dx


@njit(cache=True)
def integral_terms(h, v, dx, mu, h_star):
    """All state integrals in one pass; the last entry is the smallest face or cell level.

    Order: int h v^2, int (h-h*)^2, int phi^2/h, int h_x^2, int v^2, int h v_x^2,
    int h v, int phi, with phi = h v + mu h_x at the faces.
    """
    n = h.shape[0]
    hf = face_levels(h)
    hx = face_slopes(h, dx)
    kin = pot = wkin = hx2 = v2 = hvx2 = mom = phi_int = 0.0
    lowest = hf[0]
    for j in range(n + 1):
        wt = 0.5 if j == 0 or j == n else 1.0
        phi = hf[j] * v[j] + mu * hx[j]
        kin += wt * hf[j] * v[j] * v[j]
        wkin += wt * phi * phi / hf[j]
        hx2 += wt * hx[j] * hx[j]
        v2 += wt * v[j] * v[j]
        mom += wt * hf[j] * v[j]
        phi_int += wt * phi
        lowest = min(lowest, hf[j])
    for i in range(n):
        d = h[i] - h_star
        pot += d * d
        vx = (v[i + 1] - v[i]) / dx
        hvx2 += h[i] * vx * vx
        lowest = min(lowest, h[i])
    return (kin * dx, pot * dx, wkin * dx, hx2 * dx, v2 * dx, hvx2 * dx, mom * dx,
            phi_int * dx, lowest)
