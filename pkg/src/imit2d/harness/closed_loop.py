"""Closed-loop evaluation: perception, image-space planning, PD tracking and success scoring."""
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from imit2d.control import LocalPlan
from imit2d.court import broadcast_camera
from imit2d.dynamics import BallParams, BallState3, rollout_ball
from imit2d.errors import CheckpointMismatch
from imit2d.geometry import apply_homography, invert_homography, project_point
from imit2d.harness.offline import to_court
from imit2d.harness.sim import (
    FPS,
    MAX_BOUNCES,
    TRUTH_RATE,
    SimConfig,
    score_trace,
    scripted_expert,
    simulate,
    truth_rollout,
)
from imit2d.perception import BallTracker, default_rig, synthesize_detections
from imit2d.policy import COURT_NORMALIZER, IMAGE_NORMALIZER

PERCEPTION_MODES = ("hybrid", "live")


@dataclass(frozen=True)
class ClosedLoopConfig:
    perception: str = "hybrid"
    sim: SimConfig = field(default_factory=SimConfig)
    pixel_noise_sigma: float = 2.0
    dropout_prob: float = 0.2
    latency: float = 0.1
    detection_rate: int = 100
    params: BallParams = field(default_factory=BallParams)
    seed: int = 0

    def __post_init__(self):
        if self.perception not in PERCEPTION_MODES:
            raise ValueError(f"perception must be one of {PERCEPTION_MODES}")
        if TRUTH_RATE % self.detection_rate:
            raise ValueError(f"detection_rate must divide {TRUTH_RATE}")


@dataclass
class EpisodeResult:
    episode_id: int
    success: bool
    min_distance: float
    bounces_at_min: int
    t_at_min: float
    n_replans: int = 0
    est_error_mean: float = None
    est_error_max: float = None
    est_missing: int = 0
    rmse: float = None
    dtw: float = None
    icp: float = None
    jerk: float = None

    def as_dict(self):
        return dict(self.__dict__)


# -- ball predictors ----------------------------------------------------------------------

class TruthPredictor:
    """Replays the recorded flight (hybrid protocol)."""

    def __init__(self, truth):
        self.truth = truth
        self.errors = []
        self.missing = 0

    def future(self, t, times):
        idx = np.minimum(np.rint(np.asarray(times) * TRUTH_RATE).astype(int), len(self.truth.traj.t) - 1)
        return self.truth.traj.pos[idx], self.truth.traj.bounces[idx]

    def past(self, t, times):
        return self.future(t, np.maximum(times, 0.0))[0]


class LivePredictor:
    """Estimates the ball from noisy multi-camera detections and rolls the estimate forward.

    The bounce count is taken as observed (bounces are audible); only the
    ball state is estimated.
    """

    def __init__(self, truth, cfg, seed):
        self.truth = truth
        self.params = cfg.params
        step = TRUTH_RATE // cfg.detection_rate
        tr = truth.traj
        sub = SimpleNamespace(t=tr.t[::step], pos=tr.pos[::step])
        rig = default_rig(cfg.pixel_noise_sigma, cfg.dropout_prob)
        dets = synthesize_detections(sub, rig, seed)
        self.tracker = BallTracker(rig, cfg.params, latency=cfg.latency)
        self.tracker.add(dets)
        self.history_tracker = BallTracker(rig, cfg.params, latency=cfg.latency)
        self.history_tracker.add(dets)
        self.history = {}
        self.errors = []
        self.missing = 0

    def future(self, t, times):
        state = self.tracker.estimate(t)
        if state is None:
            self.missing += 1
            return None
        self.errors.append(float(np.linalg.norm(state.pos - self.truth.pos_at(t))))
        s = BallState3(state.pos, state.vel, self.truth.bounces_at(t))
        times = np.asarray(times, dtype=float)
        horizon = min(float(times.max() - t), 5.0)
        traj = rollout_ball(s, self.params, horizon, 1.0 / TRUTH_RATE)
        idx = np.minimum(np.rint((times - t) * TRUTH_RATE).astype(int), len(traj.t) - 1)
        return traj.pos[idx], traj.bounces[idx]

    def past(self, t, times):
        times = np.maximum(np.asarray(times, dtype=float), 0.0)
        last = int(math.floor(t * FPS + 1e-9))
        for k in range(last + 1):
            if k not in self.history:
                s = self.history_tracker.estimate(k / FPS)
                self.history[k] = None if s is None else s.pos
        frames = np.rint(times * FPS).astype(int)
        known = [k for k in range(last + 1) if self.history[k] is not None]
        if not known:
            return None
        out = []
        for f in frames:
            if self.history.get(f) is None:
                # replicate the nearest estimated frame
                f = min(known, key=lambda k: abs(k - f))
            out.append(self.history[f])
        return np.array(out)


# -- planners -------------------------------------------------------------------------------

def truncate_after_bounces(pos, bounces, max_bounces=MAX_BOUNCES):
    """Replace samples at or after the ``max_bounces``-th bounce with the last sample before it."""
    pos = np.array(pos, dtype=float)
    over = np.flatnonzero(np.asarray(bounces) >= max_bounces)
    if len(over):
        i = over[0]
        pos[i:] = pos[max(i - 1, 0)]
    return pos


class PolicyPlanner:
    def __init__(self, policy, predictor, camera, homography, replan_period, seed):
        self.policy = policy
        self.predictor = predictor
        self.camera = camera
        self.H = homography
        self.H_inv = invert_homography(homography)
        self.replan_period = replan_period
        self.rng = np.random.default_rng(seed)
        self.fallbacks = 0

    def ball_window(self, t):
        L_h = self.policy.L_h
        if self.policy.mode == "post2d":
            times = t + np.arange(L_h) / FPS
            got = self.predictor.future(t, times)
            if got is None:
                return None
            pos = truncate_after_bounces(*got)
        else:
            times = t - np.arange(L_h - 1, -1, -1) / FPS
            pos = self.predictor.past(t, times)
            if pos is None:
                return None
        return project_point(self.camera, np.asarray(pos))

    def __call__(self, t, chair):
        ball_px = self.ball_window(t)
        if ball_px is None:
            return None
        if self.policy.action == "image":
            chair_n = IMAGE_NORMALIZER.normalize(apply_homography(self.H, chair.xy))
        else:
            chair_n = COURT_NORMALIZER.normalize(chair.xy)
        ball_n = IMAGE_NORMALIZER.normalize(ball_px)
        wp_n = self.policy.predict(ball_n[None], chair_n[None], self.rng)[0]
        wp = to_court(self.policy.action, wp_n, self.H)
        return LocalPlan(wp, t, self.replan_period)


class PredictedExpertPlanner:
    """Scripted expert fed by a ball predictor instead of the recorded truth."""

    def __init__(self, predictor, cfg, horizon=3.0):
        self.predictor = predictor
        self.cfg = cfg
        self.horizon = horizon
        self.fallbacks = 0

    def __call__(self, t, chair):
        times = t + np.arange(int(self.horizon * 200) + 1) / 200.0
        got = self.predictor.future(t, times)
        if got is None:
            return None
        pos, bounces = got
        target = scripted_expert(times, pos, bounces, chair, t, self.cfg.v_max_plan, slack=self.cfg.reach_slack)
        self.fallbacks += int(target.fallback)
        return LocalPlan([target.point], t, self.cfg.replan_period)


# -- episodes ---------------------------------------------------------------------------------

def run_episode(policy, episode, cfg=ClosedLoopConfig()):
    """Closed-loop run of ``policy`` (or the string ``"expert"``) against one episode's launch."""
    truth = truth_rollout(episode.launch, cfg.params)
    if truth is None:
        raise ValueError("episode launch does not produce three bounces")
    seed = [cfg.seed, int(episode.id)]
    if cfg.perception == "hybrid":
        predictor = TruthPredictor(truth)
    else:
        predictor = LivePredictor(truth, cfg, seed)
    camera = getattr(episode, "camera", None) or broadcast_camera()
    H = getattr(episode, "homography", None) or camera.ground_homography()
    if policy == "expert":
        planner = PredictedExpertPlanner(predictor, cfg.sim)
    else:
        planner = PolicyPlanner(policy, predictor, camera, H, cfg.sim.replan_period, seed)
    log = simulate(truth, planner, cfg.sim)
    errs = predictor.errors
    res = EpisodeResult(
        int(episode.id), log.success, log.min_distance, log.bounces_at_min, log.t_at_min, log.n_replans,
        float(np.mean(errs)) if errs else None, float(np.max(errs)) if errs else None, predictor.missing,
    )
    return res, log


def rescore(log, cfg=SimConfig()):
    """Success recomputed from a logged trace."""
    return score_trace(log.chair[:, :2], log.ball, cfg.success_distance, cfg.max_bounces)[0]


def _run_one(args):
    policy, episode, cfg = args
    return run_episode(policy, episode, cfg)[0]


def run_closed_loop(policy, episodes, cfg=ClosedLoopConfig(), jobs=1, expected_mode=None):
    """Evaluate ``policy`` on every episode; results keep the input order."""
    if expected_mode is not None and policy != "expert" and policy.mode != expected_mode:
        raise CheckpointMismatch(f"checkpoint was trained for {policy.mode}, not {expected_mode}")
    work = [(policy, ep, cfg) for ep in episodes]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    return [_run_one(w) for w in work]


def wilson_interval(successes, n, z=1.959963984540054):
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def summarize(results):
    n = len(results)
    k = sum(r.success for r in results)
    lo, hi = wilson_interval(k, n)
    out = {
        "episodes": n,
        "successes": k,
        "success_rate": k / n if n else 0.0,
        "wilson95": [lo, hi],
        "mean_min_distance": float(np.mean([r.min_distance for r in results])) if n else None,
    }
    errs = [r.est_error_mean for r in results if r.est_error_mean is not None]
    if errs:
        out["estimator"] = {
            "mean_error_m": float(np.mean(errs)),
            "max_error_m": float(max(r.est_error_max for r in results if r.est_error_max is not None)),
            "missing_estimates": int(sum(r.est_missing for r in results)),
        }
    return out
