"""Compiled inner loops: field evaluation, equations of motion, Dormand-Prince 5(4).

A field model is flattened into four arrays (see ``fields.FieldModel.flatten``):

    kinds   int64[n]      component type code
    windows float64[n,2]  z-window [zmin, zmax]; the component is zero outside it
    offsets int64[n+1]    slice of ``params`` owned by component i
    params  float64[:]    packed parameters

Every function here returns an integer status instead of raising: 0 means ok,
1 means the point is outside the model's domain (inside a wire, below the
grating surface, ...). Python wrappers turn that into exceptions or a crash.
"""

import math

import numpy as np
from numba import njit

K_UNIFORM = 0
K_MULTIPOLE = 1
K_ZWIRES = 2
K_GRATING = 3
K_XWIRES = 4

OK = 0
DOMAIN = 1

# Trajectory status codes, mirrored by dynamics.Status
ST_RUNNING = -1
ST_COMPLETED = 0
ST_EXITED = 1
ST_CRASHED = 2
ST_STEP_FAILURE = 3


@njit(cache=True, nogil=True)
def _line_currents(p, o, c1, c2, B, J, i1, i2):
    # filaments normal to the (i1, i2) plane; params: nf, nr, (c1, c2, k)*nf, (c1, c2, h1, h2)*nr
    nf = int(p[o])
    nr = int(p[o + 1])
    base = o + 2 + 3 * nf
    for k in range(nr):
        q = base + 4 * k
        if abs(c1 - p[q]) < p[q + 2] and abs(c2 - p[q + 1]) < p[q + 3]:
            return DOMAIN
    for k in range(nf):
        q = o + 2 + 3 * k
        a = c1 - p[q]
        b = c2 - p[q + 1]
        kk = p[q + 2]
        r2 = a * a + b * b
        if r2 == 0.0:
            return DOMAIN
        inv = kk / r2
        inv2 = kk / (r2 * r2)
        B[i1] -= b * inv
        B[i2] += a * inv
        J[i1, i1] += 2.0 * a * b * inv2
        off = (b * b - a * a) * inv2
        J[i1, i2] += off
        J[i2, i1] += off
        J[i2, i2] -= 2.0 * a * b * inv2
    return OK


@njit(cache=True, nogil=True)
def _multipole(p, o, x, y, z, B, J):
    c2 = p[o]
    c3 = p[o + 1]
    c4 = p[o + 2]
    # B = -grad(Phi), J = -Hessian(Phi)
    B[0] -= c2 * y + c3 * (4.0 * z * z - 3.0 * x * x - y * y) + c4 * (3.0 * x * x * y - y * y * y)
    B[1] -= c2 * x - 2.0 * c3 * x * y + c4 * (x * x * x - 3.0 * x * y * y)
    B[2] -= 8.0 * c3 * x * z
    hxx = -6.0 * c3 * x + 6.0 * c4 * x * y
    hxy = c2 - 2.0 * c3 * y + 3.0 * c4 * (x * x - y * y)
    hxz = 8.0 * c3 * z
    hyy = -2.0 * c3 * x - 6.0 * c4 * x * y
    hzz = 8.0 * c3 * x
    J[0, 0] -= hxx
    J[0, 1] -= hxy
    J[1, 0] -= hxy
    J[0, 2] -= hxz
    J[2, 0] -= hxz
    J[1, 1] -= hyy
    J[2, 2] -= hzz
    return OK


@njit(cache=True, nogil=True)
def _grating(p, o, y, z, B, J):
    kappa = p[o]
    eta = y - p[o + 1]
    if eta < 0.0:
        return DOMAIN
    nh = int(p[o + 2])
    for k in range(nh):
        n = p[o + 3 + 2 * k]
        bn = p[o + 4 + 2 * k]
        nk = n * kappa
        amp = bn * math.exp(-nk * eta)
        s = math.sin(nk * z)
        c = math.cos(nk * z)
        B[1] -= amp * s
        B[2] += amp * c
        J[1, 1] += nk * amp * s
        J[1, 2] -= nk * amp * c
        J[2, 1] -= nk * amp * c
        J[2, 2] -= nk * amp * s
    return OK


@njit(cache=True, nogil=True)
def eval_field(kinds, windows, offsets, params, r, B, J):
    """Accumulate B (T) and J[i, j] = dB_i/dx_j (T/m) at ``r`` into zeroed B, J."""
    for i in range(3):
        B[i] = 0.0
        for j in range(3):
            J[i, j] = 0.0
    x = r[0]
    y = r[1]
    z = r[2]
    for c in range(kinds.shape[0]):
        if z < windows[c, 0] or z > windows[c, 1]:
            continue
        kind = kinds[c]
        o = offsets[c]
        st = OK
        if kind == K_UNIFORM:
            B[0] += params[o]
            B[1] += params[o + 1]
            B[2] += params[o + 2]
        elif kind == K_MULTIPOLE:
            st = _multipole(params, o, x, y, z, B, J)
        elif kind == K_ZWIRES:
            st = _line_currents(params, o, x, y, B, J, 0, 1)
        elif kind == K_GRATING:
            st = _grating(params, o, y, z, B, J)
        elif kind == K_XWIRES:
            st = _line_currents(params, o, y, z, B, J, 1, 2)
        if st != OK:
            return st
    return OK


@njit(cache=True, nogil=True)
def eval_field_many(kinds, windows, offsets, params, pts, Bs, Js, status):
    for n in range(pts.shape[0]):
        status[n] = eval_field(kinds, windows, offsets, params, pts[n], Bs[n], Js[n])


@njit(cache=True, nogil=True)
def sg_force(S, J, g_mub):
    """F_i = -g mu_B sum_j S_j dB_i/dx_j."""
    F = np.empty(3)
    for i in range(3):
        F[i] = -g_mub * (J[i, 0] * S[0] + J[i, 1] * S[1] + J[i, 2] * S[2])
    return F


@njit(cache=True, nogil=True)
def lorentz_force(v, B, charge):
    F = np.empty(3)
    F[0] = charge * (v[1] * B[2] - v[2] * B[1])
    F[1] = charge * (v[2] * B[0] - v[0] * B[2])
    F[2] = charge * (v[0] * B[1] - v[1] * B[0])
    return F


# --- full semiclassical equations ------------------------------------------
# state: x y z vx vy vz Sx Sy Sz
# scal: g_mub, gamma, charge, mass, image_on, surface, c_image

ENGINE_FULL = 0
ENGINE_ADIABATIC = 1


@njit(cache=True, nogil=True)
def full_rhs(t, Y, kinds, windows, offsets, params, scal, out):
    g_mub, gamma, charge, mass, image_on, surface, c_image = (
        scal[0], scal[1], scal[2], scal[3], scal[4] != 0.0, scal[5], scal[6])
    B = np.empty(3)
    J = np.empty((3, 3))
    st = eval_field(kinds, windows, offsets, params, Y[0:3], B, J)
    if st != OK:
        return st
    sx, sy, sz = Y[6], Y[7], Y[8]
    vx, vy, vz = Y[3], Y[4], Y[5]
    ay = 0.0
    if image_on:
        h = Y[1] - surface
        if h <= 0.0:
            return DOMAIN
        ay = -c_image / (h * h)
    inv_m = 1.0 / mass
    for i in range(3):
        out[3 + i] = -g_mub * inv_m * (J[i, 0] * sx + J[i, 1] * sy + J[i, 2] * sz)
    out[3] += charge * inv_m * (vy * B[2] - vz * B[1])
    out[4] += charge * inv_m * (vz * B[0] - vx * B[2]) + ay * inv_m
    out[5] += charge * inv_m * (vx * B[1] - vy * B[0])
    out[0] = vx
    out[1] = vy
    out[2] = vz
    # dS/dt = -gamma S x B
    out[6] = -gamma * (sy * B[2] - sz * B[1])
    out[7] = -gamma * (sz * B[0] - sx * B[2])
    out[8] = -gamma * (sx * B[1] - sy * B[0])
    return OK


# --- period-averaged planar model ---------------------------------------------
# state: y vy vz z
# scal: w0, w1, O0, O1, kappa, vz0, u, spin, image_on, surface, a_image, dynamic_vz, image_surface
# a_image = e^2 / (16 pi eps0 m), spin = S_x0 * sign(O0 - kappa vz0)


@njit(cache=True, nogil=True)
def adiabatic_terms(y, vz, scal, terms):
    w0, w1, O0, O1, kappa, vz0, u, spin = scal[0], scal[1], scal[2], scal[3], scal[4], scal[5], scal[6], scal[7]
    image_on, surface, a_image, dynamic_vz = scal[8] != 0.0, scal[9], scal[10], scal[11] != 0.0
    h = y - surface
    if h <= 0.0:
        return DOMAIN
    hi = y - scal[12]
    if image_on and hi <= 0.0:
        return DOMAIN
    decay = math.exp(-kappa * h)
    doppler = O0 - kappa * (vz if dynamic_vz else vz0)
    o1y = O1 * decay
    otilde = math.sqrt(doppler * doppler + o1y * o1y)
    w1y = w1 * decay
    terms[0] = w0 * vz
    terms[1] = -a_image / (hi * hi) if image_on else 0.0
    terms[2] = w1y * w1y / (2.0 * kappa)
    terms[3] = u * w1y * (o1y / otilde) * spin if otilde > 0.0 else 0.0
    return OK


@njit(cache=True, nogil=True)
def adiabatic_rhs(t, Y, scal, out):
    terms = np.empty(4)
    st = adiabatic_terms(Y[0], Y[2], scal, terms)
    if st != OK:
        return st
    out[0] = Y[1]
    out[1] = terms[0] + terms[1] + terms[2] + terms[3]
    out[2] = -scal[0] * Y[1]
    out[3] = Y[2]
    return OK


@njit(cache=True, nogil=True)
def rhs(args, t, Y, out):
    engine, kinds, windows, offsets, params, scal = args
    if engine == ENGINE_FULL:
        return full_rhs(t, Y, kinds, windows, offsets, params, scal, out)
    return adiabatic_rhs(t, Y, scal, out)


# --- Dormand-Prince 5(4) ---------------------------------------------------------

C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
E1 = 71.0 / 57600.0
E3 = -71.0 / 16695.0
E4 = 71.0 / 1920.0
E5 = -17253.0 / 339200.0
E6 = 22.0 / 525.0
E7 = -1.0 / 40.0


@njit(cache=True, nogil=True)
def dopri_step(args, t, y, h, k1, ynew, knew, err):
    """One Dormand-Prince step from (t, y) with FSAL derivative k1.

    Fills ynew (5th order), knew = f(t+h, ynew) and err (embedded difference).
    """
    n = y.shape[0]
    tmp = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    for i in range(n):
        tmp[i] = y[i] + h * A21 * k1[i]
    st = rhs(args, t + C2 * h, tmp, k2)
    if st != OK:
        return st
    for i in range(n):
        tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i])
    st = rhs(args, t + C3 * h, tmp, k3)
    if st != OK:
        return st
    for i in range(n):
        tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i])
    st = rhs(args, t + C4 * h, tmp, k4)
    if st != OK:
        return st
    for i in range(n):
        tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i])
    st = rhs(args, t + C5 * h, tmp, k5)
    if st != OK:
        return st
    for i in range(n):
        tmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i])
    st = rhs(args, t + h, tmp, k6)
    if st != OK:
        return st
    for i in range(n):
        ynew[i] = y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i])
    st = rhs(args, t + h, ynew, knew)
    if st != OK:
        return st
    for i in range(n):
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * knew[i])
    return OK


@njit(cache=True, nogil=True)
def _err_norm(err, y, ynew, atol, rtol):
    s = 0.0
    n = y.shape[0]
    for i in range(n):
        sc = atol[i] + rtol * max(abs(y[i]), abs(ynew[i]))
        e = err[i] / sc
        s += e * e
    return math.sqrt(s / n)


@njit(cache=True, nogil=True)
def _hermite_min(y0, y1, v0, v1, h):
    # minimum of the cubic Hermite interpolant where v goes from <0 to >=0
    a = 6.0 * (y0 - y1) + 3.0 * h * (v0 + v1)
    b = -6.0 * (y0 - y1) - 4.0 * h * v0 - 2.0 * h * v1
    c = h * v0
    lo = 0.0
    hi = 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if (a * mid + b) * mid + c < 0.0:
            lo = mid
        else:
            hi = mid
    s = 0.5 * (lo + hi)
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * y0 + h10 * h * v0 + h01 * y1 + h11 * h * v1, s


@njit(cache=True, nogil=True)
def integrate(args, t0, y0, atol, rtol, h_max, t_max, max_steps, stride,
              iy, ivy, iz, y_crash, y_exit, z_min, z_max, spin_idx, renorm):
    """Adaptive integration with termination events.

    Returns (ts, ys, status, n_accepted, n_rejected, max_spin_drift, y_closest, t_closest).
    The initial and final states are always recorded; in between every
    ``stride``-th accepted step.
    """
    n = y0.shape[0]
    cap = 1024
    ts = np.empty(cap)
    ys = np.empty((cap, n))
    nrec = 0

    y = y0.copy()
    t = t0
    k1 = np.empty(n)
    ynew = np.empty(n)
    knew = np.empty(n)
    err = np.empty(n)
    ts[0] = t
    ys[0, :] = y
    nrec = 1

    y_closest = y[iy]
    t_closest = t
    max_drift = 0.0
    s0 = 0.0
    if spin_idx >= 0:
        s0 = math.sqrt(y[spin_idx] ** 2 + y[spin_idx + 1] ** 2 + y[spin_idx + 2] ** 2)

    st = rhs(args, t, y, k1)
    if st != OK:
        return ts[:1], ys[:1], ST_CRASHED, 0, 0, max_drift, y_closest, t_closest

    # initial step (Hairer, Norsett & Wanner heuristic)
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol[i] + rtol * abs(y[i])
        d0 += (y[i] / sc) ** 2
        d1 += (k1[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h = 1e-6 * max(t_max - t0, 1e-12)
    else:
        h = 0.01 * d0 / d1
    h = min(h, h_max, t_max - t0)

    status = ST_RUNNING
    n_acc = 0
    n_rej = 0
    while status == ST_RUNNING:
        if n_acc + n_rej >= max_steps:
            status = ST_STEP_FAILURE
            break
        if h < 1e-14 * max(abs(t), 1e-9):
            status = ST_STEP_FAILURE
            break
        if t + h > t_max:
            h = t_max - t
        st = dopri_step(args, t, y, h, k1, ynew, knew, err)
        if st != OK:
            # left the model domain inside the step: shrink; below a floor it is a crash
            h *= 0.25
            n_rej += 1
            if h < 1e-14 * max(abs(t), 1e-9):
                status = ST_CRASHED
            continue
        e = _err_norm(err, y, ynew, atol, rtol)
        if e > 1.0:
            h *= max(0.2, 0.9 * e ** -0.2)
            n_rej += 1
            continue

        # land exactly on the z_max plane
        if ynew[iz] > z_max and y[iz] < z_max:
            hz = h
            zn = ynew[iz]
            for _ in range(8):
                hz = hz * (z_max - y[iz]) / (zn - y[iz])
                st = dopri_step(args, t, y, hz, k1, ynew, knew, err)
                if st != OK:
                    break
                zn = ynew[iz]
                if abs(zn - z_max) <= 1e-13 + 1e-13 * abs(z_max):
                    break
            if st != OK:
                h *= 0.25
                n_rej += 1
                continue
            h_taken = hz
            status = ST_COMPLETED
        else:
            h_taken = h

        # closest approach
        if ynew[iy] < y_closest:
            y_closest = ynew[iy]
            t_closest = t + h_taken
        if y[ivy] < 0.0 and ynew[ivy] >= 0.0:
            ym, s = _hermite_min(y[iy], ynew[iy], y[ivy], ynew[ivy], h_taken)
            if ym < y_closest:
                y_closest = ym
                t_closest = t + s * h_taken

        t = t + h_taken
        for i in range(n):
            y[i] = ynew[i]
            k1[i] = knew[i]
        n_acc += 1

        if spin_idx >= 0:
            norm = math.sqrt(y[spin_idx] ** 2 + y[spin_idx + 1] ** 2 + y[spin_idx + 2] ** 2)
            drift = abs(norm - s0)
            if drift > max_drift:
                max_drift = drift
            if renorm and norm > 0.0:
                for i in range(3):
                    y[spin_idx + i] *= s0 / norm
                st = rhs(args, t, y, k1)

        if status == ST_RUNNING:
            if y[iy] < y_crash:
                status = ST_CRASHED
            elif y[iy] > y_exit or y[iz] < z_min:
                status = ST_EXITED
            elif t >= t_max:
                status = ST_COMPLETED

        if status != ST_RUNNING or n_acc % stride == 0:
            if nrec == cap:
                cap *= 2
                ts2 = np.empty(cap)
                ys2 = np.empty((cap, n))
                ts2[:nrec] = ts[:nrec]
                ys2[:nrec] = ys[:nrec]
                ts = ts2
                ys = ys2
            ts[nrec] = t
            ys[nrec, :] = y
            nrec += 1

        if status == ST_RUNNING:
            fac = 0.9 * e ** -0.2 if e > 0.0 else 5.0
            h = min(h * min(5.0, max(0.2, fac)), h_max)

    if status == ST_STEP_FAILURE or status == ST_CRASHED:
        if ts[nrec - 1] != t:
            if nrec == cap:
                cap += 1
                ts2 = np.empty(cap)
                ys2 = np.empty((cap, n))
                ts2[:nrec] = ts[:nrec]
                ys2[:nrec] = ys[:nrec]
                ts = ts2
                ys = ys2
            ts[nrec] = t
            ys[nrec, :] = y
            nrec += 1
    return ts[:nrec].copy(), ys[:nrec].copy(), status, n_acc, n_rej, max_drift, y_closest, t_closest


_NO_FIELD = (np.zeros(0, dtype=np.int64), np.zeros((0, 2)), np.zeros(1, dtype=np.int64), np.zeros(0))


def full_args(flat, scal):
    """Kernel argument tuple for the full equations of motion."""
    return (ENGINE_FULL, *flat, np.asarray(scal, dtype=np.float64))


def adiabatic_args(scal):
    """Kernel argument tuple for the period-averaged model."""
    return (ENGINE_ADIABATIC, *_NO_FIELD, np.asarray(scal, dtype=np.float64))
