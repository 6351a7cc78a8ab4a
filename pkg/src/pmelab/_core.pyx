# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``_core_py`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, fabs, pow, tgamma, exp, M_PI
from scipy.special.cython_special cimport kv

cnp.import_array()

BACKEND = "cython"


cdef inline Py_ssize_t _wrap(Py_ssize_t i, Py_ssize_t n) nogil:
    if i >= n:
        return i - n
    if i < 0:
        return i + n
    return i


def interp_periodic(cnp.ndarray values, const double[:, ::1] pts):
    cdef Py_ssize_t k = pts.shape[0], d = pts.shape[1], n = values.shape[0]
    cdef const double[::1] flat = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef double[::1] out = np.zeros(k)
    cdef Py_ssize_t p, a, corner, flat_idx, base
    cdef Py_ssize_t idx[3]
    cdef double frac[3]
    cdef double y, w, acc
    cdef int bit
    for p in range(k):
        for a in range(d):
            y = pts[p, a] - floor(pts[p, a])
            y = y * n
            base = <Py_ssize_t>floor(y)
            frac[a] = y - base
            idx[a] = base % n
        acc = 0.0
        for corner in range(1 << d):
            w = 1.0
            flat_idx = 0
            for a in range(d):
                bit = (corner >> a) & 1
                if bit:
                    w *= frac[a]
                else:
                    w *= 1.0 - frac[a]
                flat_idx = flat_idx * n + _wrap(idx[a] + bit, n)
            acc += w * flat[flat_idx]
        out[p] = acc
    return np.asarray(out)


def cic_deposit(const double[:, ::1] pts, Py_ssize_t n):
    cdef Py_ssize_t k = pts.shape[0], d = pts.shape[1]
    cdef cnp.ndarray result = np.zeros(int(n) ** int(d))
    cdef double[::1] out = result
    cdef Py_ssize_t p, a, corner, flat_idx, base
    cdef Py_ssize_t idx[3]
    cdef double frac[3]
    cdef double y, w, wpart = 1.0 / k
    cdef int bit
    for p in range(k):
        for a in range(d):
            y = pts[p, a] - floor(pts[p, a])
            y = y * n
            base = <Py_ssize_t>floor(y)
            frac[a] = y - base
            idx[a] = base % n
        for corner in range(1 << d):
            w = wpart
            flat_idx = 0
            for a in range(d):
                bit = (corner >> a) & 1
                if bit:
                    w *= frac[a]
                else:
                    w *= 1.0 - frac[a]
                flat_idx = flat_idx * n + _wrap(idx[a] + bit, n)
            out[flat_idx] += w
    return result.reshape((n,) * d) * (<double>n) ** d


cdef double _pme_step(double[::1] u, double[::1] w, double[::1] unew,
                      Py_ssize_t n, int d, double coef) nogil:
    """unew = u + coef * discrete Laplacian of w (w = u^2/2); returns max(unew)."""
    cdef Py_ssize_t i, j, l, c, nn = n * n
    cdef Py_ssize_t ip, im, jp, jm, lp, lm
    cdef double lap, umax = -1e300, v
    if d == 1:
        for i in range(n):
            ip = _wrap(i + 1, n)
            im = _wrap(i - 1, n)
            v = u[i] + coef * (w[ip] + w[im] - 2.0 * w[i])
            unew[i] = v
            if v > umax:
                umax = v
    elif d == 2:
        for i in range(n):
            ip = _wrap(i + 1, n)
            im = _wrap(i - 1, n)
            for j in range(n):
                jp = _wrap(j + 1, n)
                jm = _wrap(j - 1, n)
                c = i * n + j
                lap = w[ip * n + j] + w[im * n + j] + w[i * n + jp] + w[i * n + jm] - 4.0 * w[c]
                v = u[c] + coef * lap
                unew[c] = v
                if v > umax:
                    umax = v
    else:
        for i in range(n):
            ip = _wrap(i + 1, n)
            im = _wrap(i - 1, n)
            for j in range(n):
                jp = _wrap(j + 1, n)
                jm = _wrap(j - 1, n)
                for l in range(n):
                    lp = _wrap(l + 1, n)
                    lm = _wrap(l - 1, n)
                    c = i * nn + j * n + l
                    lap = (w[ip * nn + j * n + l] + w[im * nn + j * n + l]
                           + w[i * nn + jp * n + l] + w[i * nn + jm * n + l]
                           + w[i * nn + j * n + lp] + w[i * nn + j * n + lm] - 6.0 * w[c])
                    v = u[c] + coef * lap
                    unew[c] = v
                    if v > umax:
                        umax = v
    return umax


def pme_advance(u_in, double h, double duration, double dt_coef, double floor_, long max_steps):
    shape = np.shape(u_in)
    cdef int d = len(shape)
    cdef Py_ssize_t n = shape[0]
    cdef Py_ssize_t size = np.size(u_in), i
    cdef double[::1] u = np.array(u_in, dtype=np.float64).ravel()
    cdef double[::1] unew = np.empty(size)
    cdef double[::1] w = np.empty(size)
    cdef double[::1] tmp
    cdef double t = 0.0, dt, umax = -1e300, newmax
    cdef long steps = 0, halvings = 0
    for i in range(size):
        if u[i] > umax:
            umax = u[i]
    with nogil:
        while t < duration:
            if steps >= max_steps:
                break
            dt = dt_coef * h * h / (umax if umax > floor_ else floor_)
            if t + dt > duration:
                dt = duration - t
            for i in range(size):
                w[i] = 0.5 * u[i] * u[i]
            while True:
                newmax = _pme_step(u, w, unew, n, d, dt / (h * h))
                if newmax <= umax + 1e-8 or dt < 1e-300:
                    break
                dt *= 0.5
                halvings += 1
            tmp = u
            u = unew
            unew = tmp
            umax = newmax
            t += dt
            steps += 1
    if steps >= max_steps and t < duration:
        raise RuntimeError("pme_advance: step limit reached")
    return np.asarray(u).reshape(shape), steps, halvings


def matern_gradient_prefactor(double s, int d):
    return pow(2.0, 1.0 - s) / (pow(2.0 * M_PI, d / 2.0) * tgamma(s))


cdef double _kv_fast(double nu, double x) nogil:
    """``K_nu(x)``; half-integer orders use the finite closed form."""
    cdef double a = fabs(nu), term, total
    cdef int n, k
    if a < 20.0 and fabs(a - floor(a) - 0.5) < 1e-13:
        n = <int>floor(a)
        total = 1.0
        term = 1.0
        for k in range(1, n + 1):
            # (n+k)! / (k! (n-k)!) / (2x)^k, built incrementally
            term *= (n + k) * (n - k + 1) / (k * 2.0 * x)
            total += term
        return sqrt(M_PI / (2.0 * x)) * exp(-x) * total
    return kv(nu, x)


def direct_velocity(const double[:, ::1] pts, double scale, double s, int nshift):
    cdef Py_ssize_t npts = pts.shape[0], i, j
    cdef int d = pts.shape[1], a, nsh = 2 * nshift + 1, total = 1, q, rem
    cdef double nu = s - d / 2.0
    cdef double pref = pow(2.0, 1.0 - s) / (pow(2.0 * M_PI, d / 2.0) * tgamma(s))
    cdef double inv_scale_pow = 1.0 / pow(scale, d + 1)
    cdef double z[3]
    cdef double zz[3]
    cdef double g[3]
    cdef double r, rr, coef
    cdef cnp.ndarray result = np.zeros((npts, d))
    cdef double[:, ::1] vel = result
    for a in range(d):
        total *= nsh
    with nogil:
        # the pair force is odd in x_i - x_j: evaluate each pair once
        for i in range(npts):
            for j in range(i + 1, npts):
                for a in range(d):
                    z[a] = pts[i, a] - pts[j, a]
                    z[a] = z[a] - floor(z[a] + 0.5)
                    g[a] = 0.0
                for q in range(total):
                    rem = q
                    r = 0.0
                    for a in range(d):
                        zz[a] = z[a] + (rem % nsh - nshift)
                        rem = rem // nsh
                        r += zz[a] * zz[a]
                    r = sqrt(r)
                    if r <= 0.0:
                        continue
                    rr = r / scale
                    coef = -pref * pow(rr, nu) * _kv_fast(nu - 1.0, rr) * inv_scale_pow / r
                    if coef != coef or fabs(coef) > 1e300:
                        continue
                    for a in range(d):
                        g[a] += coef * zz[a]
                for a in range(d):
                    vel[i, a] -= g[a]
                    vel[j, a] += g[a]
        for i in range(npts):
            for a in range(d):
                vel[i, a] /= npts
    return result


cdef inline double _unit(double x) nogil:
    return 0.0 if x < 0.0 else (1.0 if x > 1.0 else x)


cdef double _circle_cost(const double[::1] uP, const double[::1] us, const double[::1] ue,
                         const double[::1] vP, const double[::1] vs, const double[::1] ve,
                         double theta) nogil:
    cdef Py_ssize_t nu = us.shape[0], nv = vs.shape[0]
    cdef double K = floor(theta)
    cdef double th = theta - K
    cdef double t = 0.0, tn, eu, ev, wu, wv, qa, qb, total = 0.0
    cdef double sa, sb, lift
    cdef Py_ssize_t iu = 0, jv, jj
    # v level at t = 0 is 1 - th in period -1
    cdef double s0 = 1.0 - th
    cdef int period = -1
    if th == 0.0:
        s0 = 0.0
        period = 0
    jv = 0
    while jv < nv - 1 and vP[jv + 1] <= s0:
        jv += 1
    while iu < nu - 1 and uP[iu + 1] <= 0.0:
        iu += 1
    while t < 1.0:
        lift = <double>period
        eu = uP[iu + 1]
        ev = vP[jv + 1] + th + lift
        tn = eu if eu < ev else ev
        if tn > 1.0:
            tn = 1.0
        if tn > t:
            wu = uP[iu + 1] - uP[iu]
            wv = vP[jv + 1] - vP[jv]
            sa = t - th - lift
            sb = tn - th - lift
            # segment parameters clamped to [0, 1]: rounding of t against tiny widths
            qa = us[iu] + (ue[iu] - us[iu]) * _unit((t - uP[iu]) / wu)
            qb = us[iu] + (ue[iu] - us[iu]) * _unit((tn - uP[iu]) / wu)
            qa -= vs[jv] + (ve[jv] - vs[jv]) * _unit((sa - vP[jv]) / wv) + lift - K
            qb -= vs[jv] + (ve[jv] - vs[jv]) * _unit((sb - vP[jv]) / wv) + lift - K
            total += (tn - t) * (qa * qa + qa * qb + qb * qb) / 3.0
            t = tn
        if t >= 1.0:
            break
        if eu <= t:
            iu += 1
            if iu >= nu:
                break
        if ev <= t:
            jv += 1
            if jv >= nv:
                jv = 0
                period += 1
        # skip zero-width segments
        while iu < nu - 1 and uP[iu + 1] <= uP[iu]:
            iu += 1
        jj = 0
        while vP[jv + 1] <= vP[jv] and jj < nv:
            jv += 1
            jj += 1
            if jv >= nv:
                jv = 0
                period += 1
    return total


def circle_cost(const double[::1] uP, const double[::1] us, const double[::1] ue,
                const double[::1] vP, const double[::1] vs, const double[::1] ve, double theta):
    return _circle_cost(uP, us, ue, vP, vs, ve, theta)


def circle_costs(const double[::1] uP, const double[::1] us, const double[::1] ue,
                 const double[::1] vP, const double[::1] vs, const double[::1] ve, const double[::1] thetas):
    cdef Py_ssize_t k = thetas.shape[0], i
    cdef cnp.ndarray result = np.empty(k)
    cdef double[::1] out = result
    with nogil:
        for i in range(k):
            out[i] = _circle_cost(uP, us, ue, vP, vs, ve, thetas[i])
    return result
