"""Synthetic multi-camera ball detections and a sliding-window ball-state estimator.

The estimator fits the (position, velocity) of a flight-phase ball at the
window start by Gauss-Newton on pixel reprojection error, with the ball ODE
as motion model. It is a batch stand-in for an incremental factor graph.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from imit2d import kernels
from imit2d.court import HALF_LENGTH
from imit2d.dynamics import BallParams, BallState3, rollout_ball
from imit2d.errors import BounceInWindow, DivergedSolve, InsufficientObservations
from imit2d.geometry import CameraModel

WINDOW = 0.3  # s
JAC_STEP = 1e-5
MAX_ITERS = 50
STEP_TOL = 1e-8
MAX_HALVINGS = 20
MAX_FAILED_STEPS = 5
PROPAGATION_DT = 0.005


@dataclass(frozen=True)
class Detection:
    camera_id: int
    t: float
    u: float
    v: float
    valid: bool = True

    @property
    def px(self):
        return (self.u, self.v)


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple
    pixel_noise_sigma: float = 1.0
    dropout_prob: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))
        if not self.cameras:
            raise ValueError("rig needs at least one camera")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must lie in [0, 1)")
        if self.pixel_noise_sigma < 0:
            raise ValueError("pixel_noise_sigma must be non-negative")

    def to_dict(self):
        return {
            "cameras": [c.to_dict() for c in self.cameras],
            "pixel_noise_sigma": self.pixel_noise_sigma,
            "dropout_prob": self.dropout_prob,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(CameraModel.from_dict(c) for c in d["cameras"]), d["pixel_noise_sigma"], d["dropout_prob"])


def default_rig(pixel_noise_sigma=1.0, dropout_prob=0.0, height=5.5, wall_offset=5.0, fx=900.0):
    """Three wall cameras behind each baseline at ``height`` metres, aimed at the court."""
    cams = []
    for side in (-1.0, 1.0):
        x = side * (HALF_LENGTH + wall_offset)
        for y in (-5.0, 0.0, 5.0):
            cams.append(CameraModel.look_at((x, y, height), (0.0, 0.4 * y, 0.0), fx, fx, 640.0, 512.0))
    return CameraRig(tuple(cams), pixel_noise_sigma, dropout_prob)


def synthesize_detections(traj, rig, seed):
    """Noisy, randomly dropped detections of every trajectory sample in every camera.

    ``traj`` is a :class:`BallTrajectory` (or any object with ``t`` and
    ``pos`` arrays). Samples behind a camera are never detected.
    """
    t = np.asarray(traj.t, dtype=float)
    pos = np.asarray(traj.pos, dtype=float)
    if len(t) == 0:
        raise ValueError("trajectory is empty")
    rng = np.random.default_rng(seed)
    n_cam = len(rig.cameras)
    keep = rng.random((len(t), n_cam)) >= rig.dropout_prob
    noise = rng.normal(0.0, 1.0, size=(len(t), n_cam, 2)) * rig.pixel_noise_sigma
    dets = []
    for c, cam in enumerate(rig.cameras):
        pc = cam.to_camera(pos)
        front = pc[:, 2] > 1e-9
        z = np.where(front, pc[:, 2], 1.0)
        u = cam.fx * pc[:, 0] / z + cam.cx + noise[:, c, 0]
        v = cam.fy * pc[:, 1] / z + cam.cy + noise[:, c, 1]
        for k in np.flatnonzero(front & keep[:, c]):
            dets.append(Detection(c, float(t[k]), float(u[k]), float(v[k])))
    dets.sort(key=lambda d: (d.t, d.camera_id))
    return dets


def detections_to_rows(dets):
    """(camera_id, t, u, v) rows."""
    return np.array([(d.camera_id, d.t, d.u, d.v) for d in dets], dtype=float).reshape(-1, 4)


def detections_from_rows(rows):
    return [Detection(int(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in np.asarray(rows, dtype=float)]


@dataclass
class _Problem:
    """Detections arranged for vectorised residual evaluation."""

    t0: float
    times: np.ndarray  # unique relative times
    time_index: np.ndarray  # per observation
    cam_index: np.ndarray
    px: np.ndarray
    K: np.ndarray  # (n_cam, 3, 3)
    R: np.ndarray
    tr: np.ndarray
    params: BallParams
    n_cameras: int = field(default=0)

    def positions(self, y):
        return kernels.ball_flight_at(y, self.times, PROPAGATION_DT, self.params.gravity, self.params.drag_coeff)

    def residuals(self, y):
        p = self.positions(y)[self.time_index]
        R = self.R[self.cam_index]
        pc = np.einsum("nij,nj->ni", R, p) + self.tr[self.cam_index]
        K = self.K[self.cam_index]
        z = pc[:, 2]
        u = K[:, 0, 0] * pc[:, 0] / z + K[:, 0, 2]
        v = K[:, 1, 1] * pc[:, 1] / z + K[:, 1, 2]
        return np.concatenate([u - self.px[:, 0], v - self.px[:, 1]])

    def cost(self, y):
        r = self.residuals(y)
        return float(r @ r)

    def jacobian(self, y):
        cols = []
        for j in range(6):
            e = np.zeros(6)
            e[j] = JAC_STEP
            cols.append((self.residuals(y + e) - self.residuals(y - e)) / (2.0 * JAC_STEP))
        return np.column_stack(cols)


def _build_problem(dets, rig, params):
    dets = [d for d in dets if d.valid]
    if len(dets) < 6:
        raise InsufficientObservations(f"need >= 6 detections, got {len(dets)}")
    cams = {d.camera_id for d in dets}
    stamps = {d.t for d in dets}
    if len(cams) < 2 and len(stamps) < 4:
        raise InsufficientObservations("need >= 2 cameras or >= 4 distinct timestamps")
    t_abs = np.array([d.t for d in dets])
    t0 = float(t_abs.min())
    rel = t_abs - t0
    times, time_index = np.unique(rel, return_inverse=True)
    cam_index = np.array([d.camera_id for d in dets])
    px = np.array([(d.u, d.v) for d in dets])
    K = np.stack([c.K for c in rig.cameras])
    R = np.stack([c.rotation for c in rig.cameras])
    tr = np.stack([c.translation for c in rig.cameras])
    return _Problem(t0, times, time_index, cam_index, px, K, R, tr, params, len(rig.cameras))


def initial_guess(prob, rig):
    """Drag-free ballistic fit from ray constraints; linear in (p0, v0)."""
    g = prob.params.gravity
    n = len(prob.px)
    K = prob.K[prob.cam_index]
    R = prob.R[prob.cam_index]
    centers = np.stack([c.center for c in rig.cameras])[prob.cam_index]
    tau = prob.times[prob.time_index]
    xn = (prob.px[:, 0] - K[:, 0, 2]) / K[:, 0, 0]
    yn = (prob.px[:, 1] - K[:, 1, 2]) / K[:, 1, 1]
    ray = np.einsum("nji,nj->ni", R, np.column_stack([xn, yn, np.ones(n)]))
    ray /= np.linalg.norm(ray, axis=1, keepdims=True)
    S = np.zeros((n, 3, 3))
    S[:, 0, 1], S[:, 0, 2] = -ray[:, 2], ray[:, 1]
    S[:, 1, 0], S[:, 1, 2] = ray[:, 2], -ray[:, 0]
    S[:, 2, 0], S[:, 2, 1] = -ray[:, 1], ray[:, 0]
    A = np.concatenate([S, tau[:, None, None] * S], axis=2).reshape(3 * n, 6)
    grav = np.zeros((n, 3))
    grav[:, 2] = -0.5 * g * tau * tau
    b = np.einsum("nij,nj->ni", S, centers - grav).reshape(-1)
    y, *_ = np.linalg.lstsq(A, b, rcond=None)
    return y


@dataclass
class EstimateInfo:
    iterations: int
    cost: float
    costs: list
    rms_px: float
    window_start: float
    state_at_start: BallState3


def solve_window(dets, rig, params, y_init=None):
    """Gauss-Newton fit of the window-start state; returns ``(y, info)``."""
    prob = _build_problem(dets, rig, params)
    y = initial_guess(prob, rig) if y_init is None else np.asarray(y_init, dtype=float).copy()
    cost = prob.cost(y)
    costs = [cost]
    failures = 0
    damping = 0.0
    it = 0
    for it in range(1, MAX_ITERS + 1):
        if cost == 0.0:
            break
        r = prob.residuals(y)
        J = prob.jacobian(y)
        if damping > 0.0:
            JtJ = J.T @ J
            step = np.linalg.solve(JtJ + damping * np.diag(np.diag(JtJ)), -J.T @ r)
        else:
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        if np.linalg.norm(step) < STEP_TOL:
            break
        alpha = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS + 1):
            trial = y + alpha * step
            c = prob.cost(trial)
            if np.isfinite(c) and c <= cost:
                accepted = True
                break
            alpha *= 0.5
        if accepted:
            y, cost = trial, c
            costs.append(cost)
            failures = 0
            damping = 0.0
            if np.linalg.norm(alpha * step) < STEP_TOL:
                break
        else:
            failures += 1
            if failures >= MAX_FAILED_STEPS:
                raise DivergedSolve(f"cost failed to decrease on {failures} consecutive damped steps")
            damping = 1e-3 if damping == 0.0 else damping * 10.0
    n_obs = len(prob.px)
    info = EstimateInfo(it, cost, costs, math.sqrt(cost / n_obs), prob.t0, BallState3.from_y(y))
    zs = prob.positions(y)[:, 2]
    limit = 4.0 * max(rig.pixel_noise_sigma, 0.25)
    if zs.min() < -0.02 or info.rms_px > limit * math.sqrt(2.0):
        raise BounceInWindow(
            f"flight-only model rejected (min z {zs.min():.3f} m, rms {info.rms_px:.2f} px)"
        )
    return y, info


def propagate(state, params, dt_total, t0=0.0):
    """Advance ``state`` by ``dt_total`` seconds with bounces, landing exactly on the end time."""
    if dt_total < 0:
        raise ValueError("cannot propagate backwards")
    if dt_total == 0:
        return state
    n = int(math.floor(dt_total / PROPAGATION_DT + 1e-9))
    s = state
    if n:
        traj = rollout_ball(s, params, n * PROPAGATION_DT, PROPAGATION_DT)
        s = traj.state(-1)
    rest = dt_total - n * PROPAGATION_DT
    if rest > 1e-12:
        traj = rollout_ball(s, params, rest, rest)
        s = traj.state(-1)
    return s


def estimate_ball_state(dets, rig, params, t_ref, return_info=False):
    """Ball state at ``t_ref`` from a window of detections.

    Raises :class:`InsufficientObservations` for unobservable windows,
    :class:`BounceInWindow` when a flight-only fit cannot explain the data and
    :class:`DivergedSolve` when Gauss-Newton keeps failing.
    """
    y, info = solve_window(dets, rig, params)
    if t_ref < info.window_start - 1e-12:
        raise ValueError("t_ref precedes the observation window")
    state = propagate(BallState3.from_y(y), params, max(0.0, t_ref - info.window_start))
    return (state, info) if return_info else state


class BallTracker:
    """Online estimator over a growing detection stream.

    At each query the newest ``window`` seconds of available detections are
    fitted; if the window straddles a bounce it is shortened, and if no
    window works the previous estimate is propagated forward.
    """

    def __init__(self, rig, params, window=WINDOW, latency=0.0):
        self.rig = rig
        self.params = params
        self.window = window
        self.latency = latency
        self._t = np.zeros(0)
        self._dets = []
        self._last = None  # (t, state)
        self.errors = []

    def add(self, dets):
        self._dets.extend(dets)
        self._dets.sort(key=lambda d: (d.t, d.camera_id))
        self._t = np.array([d.t for d in self._dets])

    def estimate(self, t_now):
        t_avail = t_now - self.latency
        hi = np.searchsorted(self._t, t_avail + 1e-12, side="right")
        for w in (self.window, self.window / 2.0, self.window / 4.0):
            lo = np.searchsorted(self._t, t_avail - w - 1e-12, side="left")
            window = self._dets[lo:hi]
            try:
                state = estimate_ball_state(window, self.rig, self.params, t_now)
            except (InsufficientObservations, DivergedSolve, np.linalg.LinAlgError):
                continue
            self._last = (t_now, state)
            return state
        if self._last is None:
            return None
        t_prev, s_prev = self._last
        state = propagate(s_prev, self.params, t_now - t_prev)
        self._last = (t_now, state)
        return state
