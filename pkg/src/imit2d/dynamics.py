"""Ball flight with bounces, and differential-drive wheelchair kinematics."""
import math
from dataclasses import dataclass, field

import numpy as np

from imit2d import kernels

V_MAX = 10.0  # m/s
OMEGA_MAX = 20.0  # rad/s
DEFAULT_DT = 0.005  # 200 Hz


@dataclass(frozen=True)
class BallParams:
    gravity: float = 9.81
    drag_coeff: float = 0.02
    restitution: float = 0.75
    bounce_friction: float = 0.2
    # post-bounce vertical speed below which the ball is considered rolling
    rest_speed: float = 0.05

    def __post_init__(self):
        if not self.gravity > 0:
            raise ValueError("gravity must be positive")
        if not 0 < self.restitution < 1:
            raise ValueError("restitution must lie in (0, 1)")
        if not 0 <= self.bounce_friction <= 1:
            raise ValueError("bounce_friction must lie in [0, 1]")
        if self.drag_coeff < 0:
            raise ValueError("drag_coeff must be non-negative")

    def kernel_args(self):
        return (self.gravity, self.drag_coeff, self.restitution, self.bounce_friction, self.rest_speed)


@dataclass(frozen=True)
class BallState3:
    pos: np.ndarray
    vel: np.ndarray
    bounce_count: int = 0

    def __post_init__(self):
        pos = np.array(self.pos, dtype=float).reshape(3)
        vel = np.array(self.vel, dtype=float).reshape(3)
        if self.bounce_count < 0:
            raise ValueError("bounce_count must be non-negative")
        pos.setflags(write=False)
        vel.setflags(write=False)
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "vel", vel)

    @property
    def y(self):
        return np.concatenate([self.pos, self.vel])

    @classmethod
    def from_y(cls, y, bounce_count=0):
        return cls(y[:3], y[3:6], int(bounce_count))


@dataclass
class BallTrajectory:
    """Uniformly sampled ball states; ``impacts`` holds (t, x, y) ground contacts."""

    t: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    bounces: np.ndarray
    impacts: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    def state(self, k):
        return BallState3(self.pos[k], self.vel[k], int(self.bounces[k]))

    def states(self):
        return [self.state(k) for k in range(len(self))]

    def as_rows(self):
        """(t, x, y, z, vx, vy, vz, bounce_count) rows."""
        return np.column_stack([self.t, self.pos, self.vel, self.bounces.astype(float)])

    @classmethod
    def from_rows(cls, rows, impacts=()):
        rows = np.asarray(rows, dtype=float)
        return cls(rows[:, 0].copy(), rows[:, 1:4].copy(), rows[:, 4:7].copy(), rows[:, 7].astype(np.int64), list(impacts))

    def sample(self, times):
        """Linearly interpolated positions at arbitrary times inside the span."""
        times = np.asarray(times, dtype=float)
        return np.column_stack([np.interp(times, self.t, self.pos[:, i]) for i in range(3)])


def step_ball(s, p, dt):
    """Advance one RK4 step of at most 20 ms, resolving ground impacts by bisection."""
    if not 0 < dt <= 0.02 + 1e-15:
        raise ValueError("dt must lie in (0, 0.02]")
    states, counts, _ = kernels.ball_rollout(s.y, s.bounce_count, 1, dt, *p.kernel_args())
    return BallState3.from_y(states[1], counts[1])


def n_samples(horizon, dt):
    return int(math.floor(horizon / dt + 1e-9)) + 1


def rollout_ball(s, p, horizon, dt=DEFAULT_DT, t0=0.0):
    """Sampled trajectory of ``floor(horizon/dt) + 1`` states starting with ``s``."""
    if horizon > 5.0 + 1e-12:
        raise ValueError("horizon must not exceed 5 s")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    n = n_samples(horizon, dt) - 1
    states, counts, impacts = kernels.ball_rollout(s.y, s.bounce_count, n, dt, *p.kernel_args())
    t = t0 + dt * np.arange(n + 1)
    impacts = [(t0 + ti, x, y) for ti, x, y in impacts]
    return BallTrajectory(t, states[:, :3].copy(), states[:, 3:].copy(), counts, impacts)


def ball_energy(pos, vel, g):
    """Specific mechanical energy 0.5 |v|^2 + g z."""
    pos = np.atleast_2d(pos)
    vel = np.atleast_2d(vel)
    return 0.5 * (vel**2).sum(axis=1) + g * pos[:, 2]


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class WheelchairState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    v: float = 0.0
    omega: float = 0.0

    @property
    def pose(self):
        return (self.x, self.y, self.theta)

    @property
    def xy(self):
        return np.array([self.x, self.y])


def clamp_twist(v, omega):
    return min(max(v, -V_MAX), V_MAX), min(max(omega, -OMEGA_MAX), OMEGA_MAX)


def step_wheelchair(s, v_cmd, omega_cmd, dt):
    """Unicycle Euler step with commands clamped to the platform limits."""
    if not 0 < dt <= 0.02 + 1e-15:
        raise ValueError("dt must lie in (0, 0.02]")
    v, omega = clamp_twist(v_cmd, omega_cmd)
    x = s.x + v * math.cos(s.theta) * dt
    y = s.y + v * math.sin(s.theta) * dt
    theta = wrap_angle(s.theta + omega * dt)
    return WheelchairState(x, y, theta, v, omega)


def twist_to_wheels(v, omega, track_width):
    if track_width <= 0:
        raise ValueError("track_width must be positive")
    half = omega * track_width / 2.0
    return v - half, v + half


def wheels_to_twist(v_left, v_right, track_width):
    return (v_left + v_right) / 2.0, (v_right - v_left) / track_width
