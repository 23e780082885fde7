# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: ball integration, DTW and flat-kernel mean shift.

Numerically mirrors ``_kernels_py``; see that module for the contracts.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()

cdef double IMPACT_TIME_TOL = 1e-6


cdef inline void _accel(double* v, double g, double kd, bint grounded, double* a) noexcept nogil:
    cdef double speed = sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    a[0] = -kd * speed * v[0]
    a[1] = -kd * speed * v[1]
    if grounded:
        a[2] = 0.0
    else:
        a[2] = -g - kd * speed * v[2]


cdef void _rk4(double* s, double h, double g, double kd, bint grounded, double* out) noexcept nogil:
    cdef double a1[3]
    cdef double a2[3]
    cdef double a3[3]
    cdef double a4[3]
    cdef double v2[3]
    cdef double v3[3]
    cdef double v4[3]
    cdef double k = h / 6.0
    cdef int i
    _accel(&s[3], g, kd, grounded, a1)
    for i in range(3):
        v2[i] = s[3 + i] + 0.5 * h * a1[i]
    _accel(v2, g, kd, grounded, a2)
    for i in range(3):
        v3[i] = s[3 + i] + 0.5 * h * a2[i]
    _accel(v3, g, kd, grounded, a3)
    for i in range(3):
        v4[i] = s[3 + i] + h * a3[i]
    _accel(v4, g, kd, grounded, a4)
    for i in range(3):
        out[i] = s[i] + k * (s[3 + i] + 2 * v2[i] + 2 * v3[i] + v4[i])
        out[3 + i] = s[3 + i] + k * (a1[i] + 2 * a2[i] + 2 * a3[i] + a4[i])


cdef int _advance(double* s, int bounces, double dt, double t0, double g, double kd,
                  double e, double mu, double rest_vz, list impacts) except -1:
    cdef double remaining = dt
    cdef double elapsed = 0.0
    cdef double trial[6]
    cdef double hit[6]
    cdef double lo, hi, mid, tau, vz
    cdef int i
    while remaining > 0.0:
        if s[2] <= 0.0 and s[5] == 0.0:
            _rk4(s, remaining, g, kd, True, trial)
            for i in range(6):
                s[i] = trial[i]
            s[2] = 0.0
            s[5] = 0.0
            break
        if s[2] <= 0.0 and s[5] < 0.0:
            tau = 0.0
            for i in range(6):
                hit[i] = s[i]
        else:
            _rk4(s, remaining, g, kd, False, trial)
            if trial[2] >= 0.0:
                for i in range(6):
                    s[i] = trial[i]
                break
            lo = 0.0
            hi = remaining
            while hi - lo > IMPACT_TIME_TOL:
                mid = 0.5 * (lo + hi)
                _rk4(s, mid, g, kd, False, trial)
                if trial[2] >= 0.0:
                    lo = mid
                else:
                    hi = mid
            tau = 0.5 * (lo + hi)
            _rk4(s, tau, g, kd, False, hit)
        vz = -e * hit[5]
        if vz < rest_vz:
            vz = 0.0
        s[0] = hit[0]
        s[1] = hit[1]
        s[2] = 0.0
        s[3] = (1.0 - mu) * hit[3]
        s[4] = (1.0 - mu) * hit[4]
        s[5] = vz
        bounces += 1
        elapsed += tau
        remaining -= tau
        impacts.append((t0 + elapsed, s[0], s[1]))
    return bounces


def ball_rollout(y0, int bounces0, int n_steps, double dt, double g, double kd,
                 double e, double mu, double rest_vz):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] states = np.empty((n_steps + 1, 6))
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.empty(n_steps + 1, dtype=np.int64)
    cdef double s[6]
    cdef int i, k
    cdef int b = bounces0
    cdef list impacts = []
    for i in range(6):
        s[i] = float(y0[i])
        states[0, i] = s[i]
    counts[0] = b
    for k in range(n_steps):
        b = _advance(s, b, dt, k * dt, g, kd, e, mu, rest_vz, impacts)
        for i in range(6):
            states[k + 1, i] = s[i]
        counts[k + 1] = b
    return states, counts, impacts


def ball_flight_at(y0, times, double max_dt, double g, double kd):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ts = np.ascontiguousarray(times, dtype=np.float64)
    cdef Py_ssize_t m = ts.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((m, 3))
    cdef double s[6]
    cdef double nxt[6]
    cdef double t = 0.0
    cdef double h, target
    cdef Py_ssize_t n
    cdef int i
    for i in range(6):
        s[i] = float(y0[i])
    for n in range(m):
        target = ts[n]
        while target - t > 1e-15:
            h = max_dt if max_dt < target - t else target - t
            _rk4(s, h, g, kd, False, nxt)
            for i in range(6):
                s[i] = nxt[i]
            t += h
        t = target
        out[n, 0] = s[0]
        out[n, 1] = s[1]
        out[n, 2] = s[2]
    return out


def dtw(a, b):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0]
    cdef Py_ssize_t m = B.shape[0]
    cdef Py_ssize_t d = A.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] prev = np.full(m + 1, INFINITY)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cur = np.empty(m + 1)
    cdef Py_ssize_t i, j, k
    cdef double cost, best, diff
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = INFINITY
        for j in range(1, m + 1):
            cost = 0.0
            for k in range(d):
                diff = A[i - 1, k] - B[j - 1, k]
                cost += diff * diff
            cost = sqrt(cost)
            best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            if prev[j - 1] < best:
                best = prev[j - 1]
            cur[j] = cost + best
        for j in range(m + 1):
            prev[j] = cur[j]
    return float(prev[m])


def mean_shift(data, seeds, double bandwidth, double tol, int max_iter):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] X = np.ascontiguousarray(data, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] pts = np.array(seeds, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t k = pts.shape[0]
    cdef Py_ssize_t d = X.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] new = np.empty((k, d))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] acc = np.empty(d)
    cdef double r2 = bandwidth * bandwidth
    cdef double d2, diff, shift, max_shift
    cdef Py_ssize_t p, q, c
    cdef long count
    cdef int it = 0
    for it in range(1, max_iter + 1):
        max_shift = 0.0
        for p in range(k):
            for c in range(d):
                acc[c] = 0.0
            count = 0
            for q in range(n):
                d2 = 0.0
                for c in range(d):
                    diff = pts[p, c] - X[q, c]
                    d2 += diff * diff
                if d2 <= r2:
                    count += 1
                    for c in range(d):
                        acc[c] += X[q, c]
            shift = 0.0
            for c in range(d):
                if count > 0:
                    new[p, c] = acc[c] / count
                else:
                    new[p, c] = pts[p, c]
                diff = new[p, c] - pts[p, c]
                shift += diff * diff
            shift = sqrt(shift)
            if shift > max_shift:
                max_shift = shift
        for p in range(k):
            for c in range(d):
                pts[p, c] = new[p, c]
        if max_shift < tol:
            break
    return pts, it
