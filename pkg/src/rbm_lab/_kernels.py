"""Compiled inner loops.

All kernels are resumable: every piece of state lives in caller-owned
arrays, and a kernel returns a status code whenever it needs a fresh noise
block or a drained output buffer.  The Python drivers in ``sde`` and
``excursion`` loop until a terminal status comes back.

Move types
----------
* Euler step: every particle takes the same increment ``sqrt(dt) * z``;
  a particle whose free move lands inside the ball is projected radially
  onto the sphere and gains local time ``1 - |x'|``.
* Walk-on-spheres jump (``accel``): when every particle is farther than
  ``layer_w`` from the obstacle, all of them are displaced by the same vector
  ``r * z/|z|`` with ``r`` the smallest obstacle distance.  The Brownian path
  stays inside the ball of radius ``r`` around each particle, so nobody
  touches the boundary and the synchronous coupling is exact.  The exit time
  of that ball is drawn from ``|z|^2`` (independent of the direction).
"""

import math

import numpy as np
from numba import njit

# status codes
DONE = 0
NEED_NOISE = 1
DRAIN = 2
BUDGET = 4
DEGENERATE = 5
HIT = 6
ESCAPED = 7

# counter slots
C_KZ = 0
C_EULER = 1
C_WOS = 2
C_NREC = 3
C_NCON = 4
C_PREV_CONTACT = 5
C_ITER = 6
N_COUNTERS = 7


# ---------------------------------------------------------------------------
# exit time of standard 3-d Brownian motion from the unit ball (start at centre)


def _exit_survival(t, n_terms=400):
    n = np.arange(1, n_terms + 1)[:, None]
    terms = 2.0 * (-1.0) ** (n + 1) * np.exp(-(n**2) * np.pi**2 * t[None, :] / 2.0)
    return np.clip(terms.sum(axis=0), 0.0, 1.0)


def build_exit_time_table(n=4097):
    """Quantiles of the unit-ball exit time on a uniform probability grid.

    The last entry is unused; the kernel switches to the exponential tail
    ``P(T > t) ~ 2 exp(-pi^2 t / 2)`` above ``TAIL_U``.
    """
    t = np.linspace(1e-3, 4.0, 40001)
    cdf = 1.0 - _exit_survival(t)
    cdf = np.maximum.accumulate(cdf)
    u = np.linspace(0.0, TAIL_U, n)
    return np.interp(u, cdf, t)


TAIL_U = 0.999


@njit(cache=True, nogil=True)
def _exit_time(s, table):
    # s = |z|^2 ~ chi-square(3); its CDF gives a uniform independent of z/|z|
    h = math.sqrt(0.5 * s)
    u = math.erf(h) - math.sqrt(2.0 * s / math.pi) * math.exp(-0.5 * s)
    if u >= TAIL_U:
        return (2.0 / math.pi**2) * math.log(2.0 / max(1.0 - u, 1e-300))
    x = u / TAIL_U * (table.shape[0] - 1)
    i = int(x)
    if i >= table.shape[0] - 1:
        return table[-1]
    w = x - i
    return (1.0 - w) * table[i] + w * table[i + 1]


# ---------------------------------------------------------------------------
# geometry helpers


@njit(cache=True, nogil=True, inline="always")
def _wrap1(c, rho):
    side = 2.0 * rho
    c = c - side * math.floor((c + rho) / side)
    if c >= rho:
        c -= side
    elif c < -rho:
        c += side
    return c


@njit(cache=True, nogil=True, inline="always")
def _norm3(a, b, c):
    return math.sqrt(a * a + b * b + c * c)


@njit(cache=True, nogil=True)
def _crossing(px, py, pz, dx, dy, dz, out):
    """First point where the segment p -> p+d meets the unit sphere (|p|>=1>=|p+d|)."""
    a = dx * dx + dy * dy + dz * dz
    b = px * dx + py * dy + pz * dz
    c = px * px + py * py + pz * pz - 1.0
    if c <= 0.0 or a == 0.0:
        s = 0.0
    else:
        disc = b * b - a * c
        if disc < 0.0:
            disc = 0.0
        s = c / (-b + math.sqrt(disc))
        if s > 1.0:
            s = 1.0
    qx = px + s * dx
    qy = py + s * dy
    qz = pz + s * dz
    r = _norm3(qx, qy, qz)
    out[0] = qx / r
    out[1] = qy / r
    out[2] = qz / r


# ---------------------------------------------------------------------------
# general advance kernel (one RBM, a coupled pair, or a small ensemble)


@njit(cache=True, nogil=True)
def advance(
    pos,
    lt,
    clock,
    ctr,
    drive,
    z,
    dt,
    rho,
    killed,
    step_target,
    lt_stop,
    stop_on_contact,
    escape_r,
    accel,
    layer_w,
    max_iter,
    rec_every,
    rec_t,
    rec_pos,
    rec_lt,
    rec_flag,
    con_t,
    con_pos,
    con_lt,
    con_flag,
    hit_point,
    table,
):
    npart = pos.shape[0]
    sdt = math.sqrt(dt)
    torus = rho < np.inf
    nz = z.shape[0]
    rec_cap = rec_t.shape[0]
    con_cap = con_t.shape[0]
    refl = np.zeros(npart, dtype=np.uint8)
    while True:
        # --- stopping rules, evaluated on the current state
        if step_target >= 0 and ctr[C_EULER] >= step_target:
            return DONE
        for i in range(npart):
            if lt[i] >= lt_stop[i]:
                return DONE
        if stop_on_contact and ctr[C_PREV_CONTACT] == 1:
            return DONE
        if escape_r < np.inf:
            if _norm3(pos[0, 0], pos[0, 1], pos[0, 2]) >= escape_r:
                return ESCAPED
        if ctr[C_ITER] >= max_iter:
            return BUDGET
        if ctr[C_KZ] >= nz:
            return NEED_NOISE
        if ctr[C_NREC] >= rec_cap or ctr[C_NCON] >= con_cap:
            return DRAIN

        k = ctr[C_KZ]
        z0 = z[k, 0]
        z1 = z[k, 1]
        z2 = z[k, 2]
        ctr[C_KZ] = k + 1
        ctr[C_ITER] += 1

        dmin = np.inf
        if accel:
            for i in range(npart):
                d = _norm3(pos[i, 0], pos[i, 1], pos[i, 2]) - 1.0
                if d < dmin:
                    dmin = d

        if accel and dmin > layer_w:
            # walk-on-spheres jump shared by all particles
            s = z0 * z0 + z1 * z1 + z2 * z2
            zn = math.sqrt(s)
            if zn == 0.0:
                continue
            ux = dmin * z0 / zn
            uy = dmin * z1 / zn
            uz = dmin * z2 / zn
            clock[0] += dmin * dmin * _exit_time(s, table)
            drive[0] += ux
            drive[1] += uy
            drive[2] += uz
            for i in range(npart):
                a = pos[i, 0] + ux
                b = pos[i, 1] + uy
                c = pos[i, 2] + uz
                if torus:
                    a = _wrap1(a, rho)
                    b = _wrap1(b, rho)
                    c = _wrap1(c, rho)
                pos[i, 0] = a
                pos[i, 1] = b
                pos[i, 2] = c
                refl[i] = 0
            ctr[C_WOS] += 1
        else:
            ix = sdt * z0
            iy = sdt * z1
            iz = sdt * z2
            drive[0] += ix
            drive[1] += iy
            drive[2] += iz
            for i in range(npart):
                px = pos[i, 0]
                py = pos[i, 1]
                pz = pos[i, 2]
                a = px + ix
                b = py + iy
                c = pz + iz
                if torus:
                    a = _wrap1(a, rho)
                    b = _wrap1(b, rho)
                    c = _wrap1(c, rho)
                r = _norm3(a, b, c)
                refl[i] = 0
                if r < 1.0:
                    if killed:
                        _crossing(px, py, pz, ix, iy, iz, hit_point)
                        pos[i, 0] = hit_point[0]
                        pos[i, 1] = hit_point[1]
                        pos[i, 2] = hit_point[2]
                        ctr[C_EULER] += 1
                        clock[0] += dt
                        return HIT
                    if r == 0.0:
                        return DEGENERATE
                    a /= r
                    b /= r
                    c /= r
                    lt[i] += 1.0 - r
                    refl[i] = 1
                pos[i, 0] = a
                pos[i, 1] = b
                pos[i, 2] = c
            ctr[C_EULER] += 1
            if accel:
                clock[0] += dt
            else:
                clock[0] = ctr[C_EULER] * dt

        # --- contact trace of particle 0: every contact plus the first
        #     non-contact sample after each contact
        if refl[0] == 1 or ctr[C_PREV_CONTACT] == 1:
            j = ctr[C_NCON]
            con_t[j] = clock[0]
            con_pos[j, 0] = pos[0, 0]
            con_pos[j, 1] = pos[0, 1]
            con_pos[j, 2] = pos[0, 2]
            con_lt[j] = lt[0]
            con_flag[j] = refl[0]
            ctr[C_NCON] = j + 1
        ctr[C_PREV_CONTACT] = refl[0]

        if rec_every > 0 and ctr[C_ITER] % rec_every == 0:
            j = ctr[C_NREC]
            rec_t[j] = clock[0]
            for i in range(npart):
                rec_pos[j, i, 0] = pos[i, 0]
                rec_pos[j, i, 1] = pos[i, 1]
                rec_pos[j, i, 2] = pos[i, 2]
                rec_lt[j, i] = lt[i]
                rec_flag[j, i] = refl[i]
            ctr[C_NREC] = j + 1


# ---------------------------------------------------------------------------
# batch of killed Brownian walkers (excursion endpoint sampler)


@njit(cache=True, nogil=True)
def hit_batch(pos, status, hit_point, steps, cursor, z, dt, rho, escape_r, layer_w, max_iter):
    """Advance walkers ``cursor[1]..`` in order until each hits the sphere
    (status HIT) or passes ``escape_r`` (status ESCAPED).

    ``cursor[0]`` is the read position in ``z``.  Returns NEED_NOISE when the
    block is exhausted (the current walker keeps its state in ``pos``), DONE
    when every walker has finished, BUDGET if one walker exceeds ``max_iter``.
    """
    n = pos.shape[0]
    sdt = math.sqrt(dt)
    torus = rho < np.inf
    nz = z.shape[0]
    k = cursor[0]
    w = cursor[1]
    while w < n:
        px = pos[w, 0]
        py = pos[w, 1]
        pz = pos[w, 2]
        while True:
            r0 = _norm3(px, py, pz)
            if r0 >= escape_r:
                status[w] = ESCAPED
                break
            if steps[w] >= max_iter:
                pos[w, 0] = px
                pos[w, 1] = py
                pos[w, 2] = pz
                cursor[0] = k
                cursor[1] = w
                return BUDGET
            if k >= nz:
                pos[w, 0] = px
                pos[w, 1] = py
                pos[w, 2] = pz
                cursor[0] = 0
                cursor[1] = w
                return NEED_NOISE
            z0 = z[k, 0]
            z1 = z[k, 1]
            z2 = z[k, 2]
            k += 1
            steps[w] += 1
            d = r0 - 1.0
            if d > layer_w:
                zn = _norm3(z0, z1, z2)
                if zn == 0.0:
                    continue
                px += d * z0 / zn
                py += d * z1 / zn
                pz += d * z2 / zn
                if torus:
                    px = _wrap1(px, rho)
                    py = _wrap1(py, rho)
                    pz = _wrap1(pz, rho)
                continue
            ix = sdt * z0
            iy = sdt * z1
            iz = sdt * z2
            a = px + ix
            b = py + iy
            c = pz + iz
            if torus:
                a = _wrap1(a, rho)
                b = _wrap1(b, rho)
                c = _wrap1(c, rho)
            if _norm3(a, b, c) <= 1.0:
                _crossing(px, py, pz, ix, iy, iz, hit_point[w])
                status[w] = HIT
                break
            px = a
            py = b
            pz = c
        pos[w, 0] = px
        pos[w, 1] = py
        pos[w, 2] = pz
        w += 1
    cursor[0] = k
    cursor[1] = w
    return DONE
