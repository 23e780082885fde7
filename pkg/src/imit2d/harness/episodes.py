"""Synthetic broadcast episodes: launch sampling, dataset generation and episode files."""
import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from imit2d.court import HALF_WIDTH, IMAGE_HEIGHT, IMAGE_WIDTH, broadcast_camera
from imit2d.dynamics import BallParams, BallState3, rollout_ball
from imit2d.errors import CheckpointMismatch
from imit2d.geometry import CameraModel, Homography, apply_homography, invert_homography, project_point
from imit2d.harness.sim import FPS, TRUTH_RATE, SimConfig, expert_planner, simulate, truth_rollout

EPISODE_MAGIC = b"IMIT2DEP"
EPISODE_VERSION = 1
PLAYABLE_SIDE_MARGIN = 1.5


@dataclass(frozen=True)
class LaunchDistribution:
    """Far-side launches aimed at a first-bounce point in the near half.

    The ranges approximate a broadcast rally spread; they are not fitted to
    any measured distribution.
    """

    speed_range: tuple = (15.0, 22.0)
    azimuth_range: tuple = (-0.04, 0.04)  # jitter about the aim direction
    height_range: tuple = (0.8, 2.4)
    lateral_target_range: tuple = (-3.0, 3.0)
    depth_target_range: tuple = (-9.0, -3.0)
    origin_x_range: tuple = (9.0, 12.5)
    origin_y_range: tuple = (-3.0, 3.0)
    seed: int = 0

    def __post_init__(self):
        for name in ("speed_range", "azimuth_range", "height_range", "lateral_target_range", "depth_target_range", "origin_x_range", "origin_y_range"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must satisfy lo < hi")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.speed_range[0] <= 0:
            raise ValueError("speeds must be positive")

    def to_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def _first_impact_range(pos, direction, speed, elev, params):
    vel = speed * np.array([math.cos(elev) * direction[0], math.cos(elev) * direction[1], math.sin(elev)])
    traj = rollout_ball(BallState3(pos, vel), params, 3.0, 0.01)
    if not traj.impacts:
        return math.inf, vel
    _, x, y = traj.impacts[0]
    return math.hypot(x - pos[0], y - pos[1]), vel


def sample_launch(rng, dist, params=BallParams(), max_tries=100):
    """Launch state whose first bounce lands near a sampled target point."""
    for _ in range(max_tries):
        pos = np.array([rng.uniform(*dist.origin_x_range), rng.uniform(*dist.origin_y_range), rng.uniform(*dist.height_range)])
        target = np.array([rng.uniform(*dist.depth_target_range), rng.uniform(*dist.lateral_target_range)])
        speed = rng.uniform(*dist.speed_range)
        az = math.atan2(target[1] - pos[1], target[0] - pos[0]) + rng.uniform(*dist.azimuth_range)
        direction = (math.cos(az), math.sin(az))
        want = float(np.hypot(*(target - pos[:2])))
        lo, hi = -0.5, 0.5
        r_lo, _ = _first_impact_range(pos, direction, speed, lo, params)
        r_hi, _ = _first_impact_range(pos, direction, speed, hi, params)
        if not r_lo <= want <= r_hi:
            continue
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            r_mid, _ = _first_impact_range(pos, direction, speed, mid, params)
            if r_mid < want:
                lo = mid
            else:
                hi = mid
        _, vel = _first_impact_range(pos, direction, speed, 0.5 * (lo + hi), params)
        return BallState3(pos, vel)
    raise RuntimeError("could not sample a feasible launch")


# -- episodes ---------------------------------------------------------------------------

@dataclass
class Episode:
    id: int
    ball_image: np.ndarray
    chair_image: np.ndarray
    ball_court3d: np.ndarray
    ball_vel: np.ndarray
    ball_bounces: np.ndarray
    chair_court: np.ndarray
    chair_theta: np.ndarray
    homography: Homography
    camera: CameraModel
    valid: bool = True
    fps: int = FPS
    t_end: float = 0.0
    expert_success: bool = True
    expert_min_distance: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ball_image)

    @property
    def launch(self):
        return BallState3(self.ball_court3d[0], self.ball_vel[0], int(self.ball_bounces[0]))

    def check(self):
        n = len(self)
        for name in ("chair_image", "ball_court3d", "ball_vel", "ball_bounces", "chair_court", "chair_theta"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        back = apply_homography(invert_homography(self.homography), self.chair_image)
        if not np.allclose(back, self.chair_court, atol=1e-6, rtol=0):
            raise ValueError("chair_court is inconsistent with chair_image")


def in_frame(px, width=IMAGE_WIDTH, height=IMAGE_HEIGHT):
    px = np.atleast_2d(px)
    return bool(np.all((px[:, 0] >= 0) & (px[:, 0] <= width) & (px[:, 1] >= 0) & (px[:, 1] <= height)))


def playable(truth, side_margin=PLAYABLE_SIDE_MARGIN):
    """The second bounce lands within ``side_margin`` of the sidelines."""
    _, _, y = truth.traj.impacts[1]
    return abs(y) <= HALF_WIDTH + side_margin


def _interp_xy(t_query, t, xy):
    return np.column_stack([np.interp(t_query, t, xy[:, 0]), np.interp(t_query, t, xy[:, 1])])


def build_episode(ep_id, launch, camera, params=BallParams(), sim_cfg=None):
    """Simulate the expert against one launch; returns ``None`` when the episode leaves the frame."""
    truth = truth_rollout(launch, params)
    if truth is None or not playable(truth):
        return None
    sim_cfg = sim_cfg or SimConfig()
    log = simulate(truth, expert_planner(truth, sim_cfg), sim_cfg)
    frames = truth.frame_times()
    idx = np.rint(frames * TRUTH_RATE).astype(int)
    ball3 = truth.traj.pos[idx]
    H = camera.ground_homography()
    ball_px = project_point(camera, ball3)
    chair_xy = _interp_xy(frames, log.t, log.chair[:, :2])
    theta = np.interp(frames, log.t, np.unwrap(log.chair[:, 2]))
    chair_px = apply_homography(H, chair_xy)
    ok = in_frame(ball_px) and in_frame(chair_px)
    ep = Episode(
        ep_id, ball_px, chair_px, ball3, truth.traj.vel[idx], truth.traj.bounces[idx].astype(np.int64),
        chair_xy, theta, H, camera, ok, FPS, truth.t_end, log.success, log.min_distance,
        {"expert_fallbacks": log.fallbacks},
    )
    return ep


def generate_dataset(n, launch=None, expert="scripted", rig=None, camera=None, seed=0, params=BallParams(), sim_cfg=None):
    """``n`` deterministic episodes; unplayable or out-of-frame launches are resampled.

    ``rig`` is accepted for interface symmetry; ground-truth data does not use it.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if expert not in ("scripted", "teb"):
        raise ValueError(f"unknown expert {expert!r}")
    launch = launch or LaunchDistribution(seed=seed)
    camera = camera or broadcast_camera()
    out = []
    for i in range(n):
        rng = np.random.default_rng([seed, launch.seed, i])
        for _ in range(200):
            ep = build_episode(i, sample_launch(rng, launch, params), camera, params, sim_cfg)
            if ep is not None and ep.valid:
                break
        else:
            raise RuntimeError("launch distribution keeps leaving the frame")
        out.append(ep)
    return out


# -- episode files ----------------------------------------------------------------------

_ARRAYS = (
    ("ball_image", 2), ("chair_image", 2), ("ball_court3d", 3), ("ball_vel", 3),
    ("ball_bounces", 1), ("chair_court", 2), ("chair_theta", 1),
)


def episode_to_bytes(ep):
    header = {
        "id": int(ep.id),
        "fps": int(ep.fps),
        "n": len(ep),
        "homography": ep.homography.to_list(),
        "camera": ep.camera.to_dict(),
        "valid": bool(ep.valid),
        "t_end": float(ep.t_end),
        "expert_success": bool(ep.expert_success),
        "expert_min_distance": float(ep.expert_min_distance),
        "meta": ep.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(EPISODE_MAGIC)
    buf.write(struct.pack("<HI", EPISODE_VERSION, len(blob)))
    buf.write(blob)
    for name, _ in _ARRAYS:
        buf.write(np.ascontiguousarray(getattr(ep, name), dtype="<f8").tobytes())
    return buf.getvalue()


def episode_from_bytes(data):
    fp = io.BytesIO(data)
    if fp.read(len(EPISODE_MAGIC)) != EPISODE_MAGIC:
        raise CheckpointMismatch("not an episode file")
    version, size = struct.unpack("<HI", fp.read(6))
    if version != EPISODE_VERSION:
        raise CheckpointMismatch(f"unsupported episode version {version}")
    h = json.loads(fp.read(size))
    n = h["n"]
    arrays = {}
    for name, width in _ARRAYS:
        raw = np.frombuffer(fp.read(8 * n * width), dtype="<f8").astype(float)
        arrays[name] = raw.reshape(n, width) if width > 1 else raw
    arrays["ball_bounces"] = arrays["ball_bounces"].astype(np.int64)
    return Episode(
        h["id"], arrays["ball_image"], arrays["chair_image"], arrays["ball_court3d"], arrays["ball_vel"],
        arrays["ball_bounces"], arrays["chair_court"], arrays["chair_theta"], Homography.from_list(h["homography"]),
        CameraModel.from_dict(h["camera"]), h["valid"], h["fps"], h["t_end"], h["expert_success"],
        h["expert_min_distance"], h["meta"],
    )


def write_episode(ep, path):
    with open(path, "wb") as fp:
        fp.write(episode_to_bytes(ep))


def read_episode(path):
    with open(path, "rb") as fp:
        return episode_from_bytes(fp.read())

