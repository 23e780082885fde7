"""Pure-Python reference kernels.

Same signatures and results as the compiled ``_kernels`` extension. Used
when the extension is not built or ``IMIT2D_PURE_PYTHON=1`` is set.
"""
import math

import numpy as np

IMPACT_TIME_TOL = 1e-6


def _accel(vx, vy, vz, g, kd, grounded):
    speed = math.sqrt(vx * vx + vy * vy + vz * vz)
    ax = -kd * speed * vx
    ay = -kd * speed * vy
    az = 0.0 if grounded else -g - kd * speed * vz
    return ax, ay, az


def _rk4(s, h, g, kd, grounded):
    px, py, pz, vx, vy, vz = s
    a1 = _accel(vx, vy, vz, g, kd, grounded)
    v2 = (vx + 0.5 * h * a1[0], vy + 0.5 * h * a1[1], vz + 0.5 * h * a1[2])
    a2 = _accel(v2[0], v2[1], v2[2], g, kd, grounded)
    v3 = (vx + 0.5 * h * a2[0], vy + 0.5 * h * a2[1], vz + 0.5 * h * a2[2])
    a3 = _accel(v3[0], v3[1], v3[2], g, kd, grounded)
    v4 = (vx + h * a3[0], vy + h * a3[1], vz + h * a3[2])
    a4 = _accel(v4[0], v4[1], v4[2], g, kd, grounded)
    k = h / 6.0
    return (
        px + k * (vx + 2 * v2[0] + 2 * v3[0] + v4[0]),
        py + k * (vy + 2 * v2[1] + 2 * v3[1] + v4[1]),
        pz + k * (vz + 2 * v2[2] + 2 * v3[2] + v4[2]),
        vx + k * (a1[0] + 2 * a2[0] + 2 * a3[0] + a4[0]),
        vy + k * (a1[1] + 2 * a2[1] + 2 * a3[1] + a4[1]),
        vz + k * (a1[2] + 2 * a2[2] + 2 * a3[2] + a4[2]),
    )


def _advance(s, bounces, dt, t0, g, kd, e, mu, rest_vz, impacts):
    remaining = dt
    elapsed = 0.0
    while remaining > 0.0:
        grounded = s[2] <= 0.0 and s[5] == 0.0
        if grounded:
            s = _rk4(s, remaining, g, kd, True)
            s = (s[0], s[1], 0.0, s[3], s[4], 0.0)
            break
        if s[2] <= 0.0 and s[5] < 0.0:
            tau = 0.0
            hit = s
        else:
            trial = _rk4(s, remaining, g, kd, False)
            if trial[2] >= 0.0:
                s = trial
                break
            lo, hi = 0.0, remaining
            while hi - lo > IMPACT_TIME_TOL:
                mid = 0.5 * (lo + hi)
                if _rk4(s, mid, g, kd, False)[2] >= 0.0:
                    lo = mid
                else:
                    hi = mid
            tau = 0.5 * (lo + hi)
            hit = _rk4(s, tau, g, kd, False)
        vz = -e * hit[5]
        if vz < rest_vz:
            vz = 0.0
        s = (hit[0], hit[1], 0.0, (1.0 - mu) * hit[3], (1.0 - mu) * hit[4], vz)
        bounces += 1
        elapsed += tau
        remaining -= tau
        impacts.append((t0 + elapsed, s[0], s[1]))
    return s, bounces


def ball_rollout(y0, bounces0, n_steps, dt, g, kd, e, mu, rest_vz):
    """Integrate ``n_steps`` fixed steps of size ``dt`` with bounce events.

    Returns ``(states (n+1, 6), bounces (n+1,), impacts)`` where impacts is
    a list of ``(t, x, y)`` ground contacts relative to the start time.
    """
    states = np.empty((n_steps + 1, 6))
    counts = np.empty(n_steps + 1, dtype=np.int64)
    s = tuple(float(v) for v in y0)
    b = int(bounces0)
    states[0] = s
    counts[0] = b
    impacts = []
    for k in range(n_steps):
        s, b = _advance(s, b, dt, k * dt, g, kd, e, mu, rest_vz, impacts)
        states[k + 1] = s
        counts[k + 1] = b
    return states, counts, impacts


def ball_flight_at(y0, times, max_dt, g, kd):
    """Flight-only positions at the sorted non-negative ``times`` (no ground)."""
    out = np.empty((len(times), 3))
    s = tuple(float(v) for v in y0)
    t = 0.0
    for i, target in enumerate(times):
        while target - t > 1e-15:
            h = min(max_dt, target - t)
            s = _rk4(s, h, g, kd, False)
            t += h
        t = target
        out[i] = s[:3]
    return out


def dtw(a, b):
    """Cumulative DTW distance with Euclidean point cost."""
    n, m = len(a), len(b)
    inf = math.inf
    prev = [inf] * (m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur = [inf] * (m + 1)
        ai = a[i - 1]
        for j in range(1, m + 1):
            cost = math.sqrt(sum((x - y) ** 2 for x, y in zip(ai, b[j - 1])))
            best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            if prev[j - 1] < best:
                best = prev[j - 1]
            cur[j] = cost + best
        prev = cur
    return prev[m]


def mean_shift(data, seeds, bandwidth, tol, max_iter):
    """Flat-kernel mean shift of ``seeds`` against fixed ``data``.

    Iterates until the largest per-point shift drops below ``tol``.
    """
    data = np.asarray(data, dtype=float)
    pts = np.array(seeds, dtype=float, copy=True)
    r2 = bandwidth * bandwidth
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = (
            (pts * pts).sum(axis=1)[:, None]
            + (data * data).sum(axis=1)[None, :]
            - 2.0 * pts @ data.T
        )
        inside = d2 <= r2
        counts = inside.sum(axis=1)
        new = np.where(
            counts[:, None] > 0,
            (inside @ data) / np.maximum(counts, 1)[:, None],
            pts,
        )
        shift = np.sqrt(((new - pts) ** 2).sum(axis=1)).max()
        pts = new
        if shift < tol:
            break
    return pts, n_iter
