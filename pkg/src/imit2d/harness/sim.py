"""Ground-truth ball flight, the scripted intercept expert and the 200 Hz simulation loop."""
import math
from dataclasses import dataclass, field

import numpy as np

from imit2d.control import DEFAULT_LOOKAHEAD, LocalPlan, PDGains, PlanTracker
from imit2d.court import HALF_LENGTH, HALF_WIDTH, START_POSE
from imit2d.dynamics import DEFAULT_DT, BallParams, WheelchairState, rollout_ball, step_wheelchair

FPS = 30
TRUTH_RATE = 600  # Hz; common multiple of the 200 Hz control loop and 30 fps frames
TRUTH_HORIZON = 5.0
MAX_BOUNCES = 3
SUCCESS_DISTANCE = 1.4
V_MAX_PLAN = 4.0
REACH_MARGIN = 3.0
REACH_SLACK = 0.0


@dataclass
class Truth:
    """Ground-truth ball flight sampled at TRUTH_RATE; ``t_end`` is the third bounce."""

    traj: object
    t_end: float

    def index(self, t):
        return min(int(round(t * TRUTH_RATE)), len(self.traj.t) - 1)

    def pos_at(self, t):
        return self.traj.pos[self.index(t)]

    def bounces_at(self, t):
        return int(self.traj.bounces[self.index(t)])

    def frame_times(self, fps=FPS):
        return np.arange(int(math.floor(self.t_end * fps + 1e-9)) + 1) / fps


def truth_rollout(launch, params=BallParams(), max_bounces=MAX_BOUNCES):
    """Flight from ``launch``; ``None`` when fewer than ``max_bounces`` impacts occur within the horizon."""
    traj = rollout_ball(launch, params, TRUTH_HORIZON, 1.0 / TRUTH_RATE)
    if len(traj.impacts) < max_bounces:
        return None
    return Truth(traj, traj.impacts[max_bounces - 1][0])


@dataclass(frozen=True)
class InterceptTarget:
    point: np.ndarray
    ball_time: float
    reach_time: float
    fallback: bool


def scripted_expert(ball_t, ball_pos, ball_bounces, chair, t_now=None, v_max_plan=V_MAX_PLAN, margin=REACH_MARGIN, slack=0.0):
    """Earliest predicted ball point between the first and second bounce the chair can reach.

    Reachability uses a straight line at ``v_max_plan``; candidates must lie
    within the court plus ``margin`` and be reached ``slack`` seconds before
    the ball. Without a reachable candidate the
    closest predicted point is returned and flagged as a fallback.
    """
    ball_t = np.asarray(ball_t, dtype=float)
    ball_pos = np.asarray(ball_pos, dtype=float)
    ball_bounces = np.asarray(ball_bounces)
    if len(ball_t) == 0:
        raise ValueError("empty ball prediction")
    t_now = ball_t[0] if t_now is None else t_now
    xy = ball_pos[:, :2]
    here = np.array([chair.x, chair.y]) if hasattr(chair, "x") else np.asarray(chair, dtype=float)[:2]
    dist = np.hypot(xy[:, 0] - here[0], xy[:, 1] - here[1])
    inside = (np.abs(xy[:, 0]) <= HALF_LENGTH + margin) & (np.abs(xy[:, 1]) <= HALF_WIDTH + margin)
    stage = ball_bounces == 1
    if not stage.any():
        stage = ball_bounces < MAX_BOUNCES
    cand = stage & inside & (ball_t >= t_now - 1e-12)
    ok = cand & (dist / v_max_plan + slack <= ball_t - t_now + 1e-12)
    if ok.any():
        k = int(np.flatnonzero(ok)[0])
        return InterceptTarget(xy[k].copy(), float(ball_t[k]), float(dist[k] / v_max_plan), False)
    pool = np.flatnonzero(cand) if cand.any() else np.arange(len(ball_t))
    k = int(pool[np.argmin(dist[pool])])
    return InterceptTarget(xy[k].copy(), float(ball_t[k]), float(dist[k] / v_max_plan), True)


@dataclass(frozen=True)
class SimConfig:
    dt: float = DEFAULT_DT
    replan_period: float = 0.2
    success_distance: float = SUCCESS_DISTANCE
    max_bounces: int = MAX_BOUNCES
    gains: PDGains = field(default_factory=PDGains)
    lookahead: int = DEFAULT_LOOKAHEAD
    turn_then_drive: bool = True
    v_max_plan: float = V_MAX_PLAN
    reach_slack: float = REACH_SLACK


@dataclass
class SimLog:
    """Per-tick trace: chair rows are (x, y, theta, v, omega); ball rows (x, y, z, bounces)."""

    t: np.ndarray
    chair: np.ndarray
    ball: np.ndarray
    commands: np.ndarray
    success: bool
    min_distance: float
    bounces_at_min: int
    t_at_min: float
    fallbacks: int = 0
    n_replans: int = 0
    extras: dict = field(default_factory=dict)


def score_trace(chair_xy, ball_xyzb, success_distance=SUCCESS_DISTANCE, max_bounces=MAX_BOUNCES):
    """(success, min_distance, bounces_at_min, index) over samples before the ``max_bounces``-th bounce."""
    chair_xy = np.asarray(chair_xy, dtype=float)
    ball_xyzb = np.asarray(ball_xyzb, dtype=float)
    live = ball_xyzb[:, 3] < max_bounces
    if not live.any():
        return False, math.inf, max_bounces, -1
    d = np.hypot(chair_xy[:, 0] - ball_xyzb[:, 0], chair_xy[:, 1] - ball_xyzb[:, 1])
    d = np.where(live, d, np.inf)
    k = int(np.argmin(d))
    return bool(d[k] < success_distance), float(d[k]), int(ball_xyzb[k, 3]), k


def simulate(truth, planner, cfg=SimConfig(), start=None):
    """Run the 200 Hz loop until the ball's ``max_bounces``-th bounce.

    ``planner(t, chair_state)`` returns a :class:`LocalPlan` or ``None`` to keep
    the previous plan; it is called every ``replan_period`` seconds.
    """
    chair = start or WheelchairState(*START_POSE)
    tracker = PlanTracker(cfg.gains, cfg.dt, cfg.lookahead, cfg.turn_then_drive)
    n_ticks = int(math.floor(truth.t_end / cfg.dt + 1e-9)) + 1
    replan_every = max(int(round(cfg.replan_period / cfg.dt)), 1)
    t = np.arange(n_ticks) * cfg.dt
    chair_rows = np.zeros((n_ticks, 5))
    ball_rows = np.zeros((n_ticks, 4))
    cmds = np.zeros((n_ticks, 2))
    plan = LocalPlan([chair.xy], 0.0, cfg.replan_period)
    n_replans = 0
    for j in range(n_ticks):
        tj = t[j]
        if j % replan_every == 0:
            new = planner(tj, chair)
            if new is not None:
                plan = new
                n_replans += 1
        k = truth.index(tj)
        ball_rows[j, :3] = truth.traj.pos[k]
        ball_rows[j, 3] = truth.traj.bounces[k]
        chair_rows[j] = (chair.x, chair.y, chair.theta, chair.v, chair.omega)
        v, w = tracker.command(plan, chair, tj)
        cmds[j] = (v, w)
        chair = step_wheelchair(chair, v, w, cfg.dt)
    ok, dmin, b, kmin = score_trace(chair_rows[:, :2], ball_rows, cfg.success_distance, cfg.max_bounces)
    fallbacks = getattr(planner, "fallbacks", 0)
    return SimLog(t, chair_rows, ball_rows, cmds, ok, dmin, b, float(t[kmin]) if kmin >= 0 else math.nan, fallbacks, n_replans)


class ExpertPlanner:
    """Scripted expert re-targeted at every replan from the true future flight."""

    def __init__(self, truth, cfg=SimConfig(), stride=3):
        self.truth = truth
        self.cfg = cfg
        self.stride = stride
        self.fallbacks = 0

    def __call__(self, t, chair):
        tr = self.truth.traj
        k0 = self.truth.index(t)
        sl = slice(k0, len(tr.t), self.stride)
        target = scripted_expert(tr.t[sl], tr.pos[sl], tr.bounces[sl], chair, t, self.cfg.v_max_plan, slack=self.cfg.reach_slack)
        self.fallbacks += int(target.fallback)
        return LocalPlan([target.point], t, self.cfg.replan_period)


def expert_planner(truth, cfg=SimConfig()):
    return ExpertPlanner(truth, cfg)
