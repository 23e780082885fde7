"""Imitation policies operating on normalized image-space windows.

A window conditions on L_h ball points plus the current wheelchair point and
targets the next L_p wheelchair waypoints, the first of which is the current
position. Three learners share this interface: a DDPM diffusion planner with
a start-point constraint, a fully connected regressor (FCR), and an
autoencoder + regressor (AE+FCR).
"""
import io
import json
import math
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from imit2d.court import HALF_LENGTH, HALF_WIDTH, IMAGE_HEIGHT, IMAGE_WIDTH
from imit2d.errors import CheckpointMismatch, DimensionMismatch, EmptyDataset
from imit2d.numnet import (
    HISTORY_LENGTH,
    PREDICTION_HORIZON,
    DenseNet,
    TrainConfig,
    fit,
    forward,
    read_net,
    squared_error_loss,
    write_net,
)

MODES = ("pre2d", "post2d")
ACTION_SPACES = ("image", "task")
EMBED_DIM = 16
COSINE_OFFSET = 0.008
BETA_MAX = 0.999
POLICY_MAGIC = b"IMIT2DPL"
POLICY_VERSION = 1


# -- normalization -------------------------------------------------------------------

@dataclass(frozen=True)
class BoxNormalizer:
    """Affine map of an axis-aligned box onto [-1, 1]^2."""

    lo: tuple
    hi: tuple

    def normalize(self, p):
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return 2.0 * (np.asarray(p, dtype=float) - lo) / (hi - lo) - 1.0

    def denormalize(self, q):
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return lo + (np.asarray(q, dtype=float) + 1.0) * (hi - lo) / 2.0


IMAGE_NORMALIZER = BoxNormalizer((0.0, 0.0), (float(IMAGE_WIDTH), float(IMAGE_HEIGHT)))
COURT_NORMALIZER = BoxNormalizer((-HALF_LENGTH - 2.0, -HALF_WIDTH - 2.0), (HALF_LENGTH + 2.0, HALF_WIDTH + 2.0))


# -- windows --------------------------------------------------------------------------

@dataclass
class WindowSet:
    """Stacked windows: ball (B, L_h, 2), chair (B, 2), target (B, L_p, 2)."""

    ball: np.ndarray
    chair: np.ndarray
    target: np.ndarray
    mode: str
    episode: np.ndarray = None
    frame: np.ndarray = None

    def __len__(self):
        return len(self.ball)

    def condition(self):
        return np.concatenate([self.ball.reshape(len(self), -1), self.chair], axis=1)

    def subset(self, idx):
        return WindowSet(
            self.ball[idx],
            self.chair[idx],
            self.target[idx],
            self.mode,
            None if self.episode is None else self.episode[idx],
            None if self.frame is None else self.frame[idx],
        )

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            raise EmptyDataset("no windows")
        cat = lambda name: (None if getattr(sets[0], name) is None else np.concatenate([getattr(s, name) for s in sets]))
        return cls(cat("ball"), cat("chair"), cat("target"), sets[0].mode, cat("episode"), cat("frame"))


def ball_condition(ball, k, mode, L_h=HISTORY_LENGTH):
    """Ball points conditioning frame ``k``: the past L_h (pre2d) or next L_h (post2d).

    Out-of-range frames replicate the nearest edge sample.
    """
    n = len(ball)
    if mode == "pre2d":
        idx = np.arange(k - L_h + 1, k + 1)
    elif mode == "post2d":
        idx = np.arange(k, k + L_h)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ball[np.clip(idx, 0, n - 1)]


def extract_windows(ball, chair, target_track, mode, L_h=HISTORY_LENGTH, L_p=PREDICTION_HORIZON, stride=1, episode_id=0):
    """All windows of one episode with ``L_p`` future waypoints available.

    ``ball`` and ``chair`` are the conditioning tracks, ``target_track`` the
    waypoint track (same as ``chair`` for image-space actions).
    """
    n = len(chair)
    ks = np.arange(0, n - L_p + 1, stride)
    if len(ks) == 0:
        empty = np.zeros((0, L_h, 2)), np.zeros((0, 2)), np.zeros((0, L_p, 2))
        return WindowSet(*empty, mode, np.zeros(0, int), np.zeros(0, int))
    B = np.stack([ball_condition(ball, k, mode, L_h) for k in ks])
    C = chair[ks]
    T = np.stack([target_track[k : k + L_p] for k in ks])
    return WindowSet(B, C, T, mode, np.full(len(ks), episode_id), ks)


# -- noise schedule -------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSchedule:
    """Cosine schedule; arrays are indexed by step 0..T (index 0 is the clean level)."""

    T: int
    alpha_bar: np.ndarray
    beta: np.ndarray

    @property
    def alpha(self):
        return 1.0 - self.beta

    def posterior_sigma(self, i):
        if i <= 1:
            return 0.0
        beta_tilde = self.beta[i] * (1.0 - self.alpha_bar[i - 1]) / (1.0 - self.alpha_bar[i])
        return math.sqrt(beta_tilde)


def _cosine_f(i, T, s=COSINE_OFFSET):
    return math.cos(((i / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2


def build_schedule(T=10):
    if T < 2:
        raise ValueError("T must be >= 2")
    f0 = _cosine_f(0, T)
    ab = np.array([_cosine_f(i, T) / f0 for i in range(T + 1)])
    beta = np.zeros(T + 1)
    beta[1:] = np.minimum(1.0 - ab[1:] / ab[:-1], BETA_MAX)
    ab.setflags(write=False)
    beta.setflags(write=False)
    return NoiseSchedule(T, ab, beta)


def q_sample(tau0, i, eps, sched):
    """Noised trajectory sqrt(abar_i) tau0 + sqrt(1 - abar_i) eps (``i`` may be an array)."""
    ab = sched.alpha_bar[np.asarray(i)]
    ab = np.reshape(ab, np.shape(ab) + (1,) * (np.ndim(tau0) - np.ndim(ab)))
    return np.sqrt(ab) * tau0 + np.sqrt(1.0 - ab) * eps


def timestep_embedding(i, dim=EMBED_DIM):
    """Sinusoidal embedding of integer diffusion steps; (B,) -> (B, dim)."""
    i = np.atleast_1d(np.asarray(i, dtype=float))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = i[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def predict_x0(tau_i, i, eps, sched):
    ab = sched.alpha_bar[i]
    return (tau_i - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)


# -- diffusion ------------------------------------------------------------------------

def denoiser_input(tau, i, cond):
    B = len(tau)
    i = np.broadcast_to(np.asarray(i), (B,))
    return np.concatenate([tau.reshape(B, -1), cond, timestep_embedding(i)], axis=1)


def build_denoiser(L_p=PREDICTION_HORIZON, L_h=HISTORY_LENGTH, hidden=(256, 256), seed=0):
    d_tau = 2 * L_p
    return DenseNet.build([d_tau + 2 * L_h + 2 + EMBED_DIM, *hidden, d_tau], seed=seed)


def net_eps_fn(net):
    def eps_fn(tau, i, cond):
        return forward(net, denoiser_input(tau, i, cond)).reshape(tau.shape)

    return eps_fn


def train_diffusion(windows, sched, cfg, denoiser=None, on_epoch=None):
    """Train the noise-prediction network; returns ``(net, loss_curve)``."""
    if len(windows) == 0:
        raise EmptyDataset("no training windows")
    tau0 = windows.target.reshape(len(windows), -1)
    cond = windows.condition()
    net = denoiser or build_denoiser(windows.target.shape[1], windows.ball.shape[1], seed=cfg.seed)
    if net.n_in != tau0.shape[1] + cond.shape[1] + EMBED_DIM:
        raise DimensionMismatch("denoiser input width does not match windows")

    def make_batch(idx, rng):
        i = rng.integers(1, sched.T + 1, size=len(idx))
        eps = rng.standard_normal((len(idx), tau0.shape[1]))
        tau_i = q_sample(tau0[idx], i, eps, sched)
        return denoiser_input(tau_i, i, cond[idx]), eps

    curve = fit(net, len(tau0), make_batch, squared_error_loss, cfg, on_epoch)
    return net, curve


def denoise(eps_fn, sched, cond, current, rng, tau_T=None, stochastic=True):
    """Reverse DDPM chain with the start-point constraint applied after every step.

    ``cond`` (B, d_m), ``current`` (B, 2) normalized; returns (B, L_p, 2).
    """
    B = len(cond)
    if tau_T is None:
        raise ValueError("tau_T must be provided")
    tau = np.array(tau_T, dtype=float)
    L_p = tau.shape[1]
    T = sched.T
    tau[:, 0, :] = _constrained_start(current, T, sched, rng, stochastic)
    for i in range(T, 0, -1):
        eps = eps_fn(tau, i, cond)
        a = sched.alpha[i]
        coef = sched.beta[i] / math.sqrt(1.0 - sched.alpha_bar[i])
        mu = (tau - coef * eps) / math.sqrt(a)
        if stochastic and i > 1:
            mu = mu + sched.posterior_sigma(i) * rng.standard_normal(mu.shape)
        tau = mu
        tau[:, 0, :] = _constrained_start(current, i - 1, sched, rng, stochastic)
    assert tau.shape == (B, L_p, 2)
    return tau


def _constrained_start(current, i, sched, rng, stochastic):
    if i == 0:
        return current
    ab = sched.alpha_bar[i]
    z = rng.standard_normal(current.shape) if stochastic else 0.0
    return math.sqrt(ab) * current + math.sqrt(1.0 - ab) * z


@dataclass
class PlanResult:
    waypoints: np.ndarray
    diffusion_steps_used: int
    wall_time: float


def sample_plan(denoiser, sched, m, current, seed, L_p=PREDICTION_HORIZON, normalizer=IMAGE_NORMALIZER):
    """One constrained diffusion plan in pixels.

    ``m`` is the normalized condition vector (ball window + current point),
    ``current`` the wheelchair pixel position. Waypoint 0 equals ``current``.
    """
    t_start = time.perf_counter()
    m = np.atleast_2d(np.asarray(m, dtype=float))
    current = np.asarray(current, dtype=float).reshape(1, 2)
    eps_fn = denoiser if callable(denoiser) and not isinstance(denoiser, DenseNet) else net_eps_fn(denoiser)
    if isinstance(denoiser, DenseNet) and denoiser.n_in != 2 * L_p + m.shape[1] + EMBED_DIM:
        raise DimensionMismatch("condition width does not match the denoiser")
    rng = np.random.default_rng(seed)
    tau_T = rng.standard_normal((1, L_p, 2))
    cur_n = normalizer.normalize(current)
    tau = denoise(eps_fn, sched, m, cur_n, rng, tau_T)
    wp = normalizer.denormalize(tau[0])
    wp[0] = current[0]
    return PlanResult(wp, sched.T, time.perf_counter() - t_start)


# -- FCR / AE+FCR --------------------------------------------------------------------------

def build_fcr(d_in, L_p=PREDICTION_HORIZON, hidden=(256, 256), seed=0):
    return DenseNet.build([d_in, *hidden, 2 * L_p], seed=seed)


def train_fcr(windows, cfg, on_epoch=None):
    if len(windows) == 0:
        raise EmptyDataset("no training windows")
    X = windows.condition()
    Y = windows.target.reshape(len(windows), -1)
    net = build_fcr(X.shape[1], windows.target.shape[1], seed=cfg.seed)
    curve = fit(net, len(X), lambda idx, rng: (X[idx], Y[idx]), squared_error_loss, cfg, on_epoch)
    return net, curve


def predict_fcr(net, m, L_p=PREDICTION_HORIZON):
    m = np.atleast_2d(m)
    return forward(net, m).reshape(len(m), L_p, 2)


AE_SIZES = (64, 32, 8, 32, 64)


def build_autoencoder(seed=0, sizes=AE_SIZES):
    net = DenseNet.build(list(sizes), seed=seed)
    # linear bottleneck
    net.layers[1].activation = "linear"
    return net


def encoder_part(ae):
    return DenseNet(ae.layers[:2], ae.rng_seed)


def encode(ae, ball_flat):
    return forward(encoder_part(ae), np.atleast_2d(ball_flat))


@dataclass
class AEFCR:
    autoencoder: DenseNet
    regressor: DenseNet
    ae_curve: list = field(default_factory=list)
    reg_curve: list = field(default_factory=list)


def train_autoencoder(ball_flat, cfg, on_epoch=None):
    if len(ball_flat) == 0:
        raise EmptyDataset("no ball windows")
    X = np.asarray(ball_flat, dtype=float)
    ae = build_autoencoder(seed=cfg.seed, sizes=(X.shape[1], 32, 8, 32, X.shape[1]))
    curve = fit(ae, len(X), lambda idx, rng: (X[idx], X[idx]), squared_error_loss, cfg, on_epoch)
    return ae, curve


def train_ae_fcr(windows, cfg, on_epoch=None):
    if len(windows) == 0:
        raise EmptyDataset("no training windows")
    ball_flat = windows.ball.reshape(len(windows), -1)
    ae, ae_curve = train_autoencoder(ball_flat, cfg)
    X = np.concatenate([encode(ae, ball_flat), windows.chair], axis=1)
    Y = windows.target.reshape(len(windows), -1)
    reg = build_fcr(X.shape[1], windows.target.shape[1], seed=cfg.seed + 1)
    reg_curve = fit(reg, len(X), lambda idx, rng: (X[idx], Y[idx]), squared_error_loss, cfg, on_epoch)
    return AEFCR(ae, reg, ae_curve, reg_curve)


def predict_ae_fcr(model, ball_flat, chair, L_p=PREDICTION_HORIZON):
    X = np.concatenate([encode(model.autoencoder, ball_flat), np.atleast_2d(chair)], axis=1)
    return forward(model.regressor, X).reshape(len(X), L_p, 2)


# -- unified policy -------------------------------------------------------------------------

KINDS = ("diffusion", "fcr", "ae-fcr", "constant")


class Policy:
    """A trained planner plus the normalization it was trained with.

    ``predict`` maps normalized windows to normalized waypoints; the first
    waypoint is always forced to the current position.
    """

    def __init__(self, kind, mode, action="image", nets=None, schedule=None, L_h=HISTORY_LENGTH, L_p=PREDICTION_HORIZON, meta=None):
        if kind not in KINDS:
            raise ValueError(f"unknown policy kind {kind!r}")
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if action not in ACTION_SPACES:
            raise ValueError(f"unknown action space {action!r}")
        self.kind = kind
        self.mode = mode
        self.action = action
        self.nets = dict(nets or {})
        self.schedule = schedule
        self.L_h = L_h
        self.L_p = L_p
        self.meta = dict(meta or {})

    @property
    def target_normalizer(self):
        return IMAGE_NORMALIZER if self.action == "image" else COURT_NORMALIZER

    @property
    def label(self):
        names = {"diffusion": "Diffusion", "fcr": "FCR", "ae-fcr": "AE+FCR", "constant": "Constant"}
        return names[self.kind]

    def predict(self, ball_n, chair_n, rng):
        """(B, L_h, 2), (B, 2) normalized -> (B, L_p, 2) normalized waypoints."""
        ball_n = np.asarray(ball_n, dtype=float)
        chair_n = np.atleast_2d(np.asarray(chair_n, dtype=float))
        B = len(chair_n)
        if ball_n.shape != (B, self.L_h, 2):
            raise DimensionMismatch(f"ball window shape {ball_n.shape} != {(B, self.L_h, 2)}")
        cond = np.concatenate([ball_n.reshape(B, -1), chair_n], axis=1)
        if self.kind == "constant":
            out = np.repeat(chair_n[:, None, :], self.L_p, axis=1)
        elif self.kind == "fcr":
            out = predict_fcr(self.nets["fcr"], cond, self.L_p)
        elif self.kind == "ae-fcr":
            out = predict_ae_fcr(AEFCR(self.nets["ae"], self.nets["regressor"]), ball_n.reshape(B, -1), chair_n, self.L_p)
        else:
            tau_T = rng.standard_normal((B, self.L_p, 2))
            out = denoise(net_eps_fn(self.nets["denoiser"]), self.schedule, cond, chair_n, rng, tau_T)
        out = np.array(out)
        out[:, 0, :] = chair_n
        return out

    # -- persistence --
    def save(self, path_or_fp):
        meta = {
            "kind": self.kind,
            "mode": self.mode,
            "action": self.action,
            "L_h": self.L_h,
            "L_p": self.L_p,
            "nets": sorted(self.nets),
            "schedule": None if self.schedule is None else {"T": self.schedule.T, "alpha_bar": list(map(float, self.schedule.alpha_bar))},
            "meta": self.meta,
        }
        blob = json.dumps(meta, sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(POLICY_MAGIC)
        buf.write(struct.pack("<HI", POLICY_VERSION, len(blob)))
        buf.write(blob)
        for name in sorted(self.nets):
            write_net(self.nets[name], buf)
        data = buf.getvalue()
        if hasattr(path_or_fp, "write"):
            path_or_fp.write(data)
        else:
            with open(path_or_fp, "wb") as fp:
                fp.write(data)

    @classmethod
    def load(cls, path_or_fp):
        if hasattr(path_or_fp, "read"):
            data = path_or_fp.read()
        else:
            with open(path_or_fp, "rb") as fp:
                data = fp.read()
        fp = io.BytesIO(data)
        if fp.read(len(POLICY_MAGIC)) != POLICY_MAGIC:
            raise CheckpointMismatch("not a policy checkpoint")
        version, n = struct.unpack("<HI", fp.read(6))
        if version != POLICY_VERSION:
            raise CheckpointMismatch(f"unsupported policy checkpoint version {version}")
        meta = json.loads(fp.read(n))
        nets = {name: read_net(fp) for name in meta["nets"]}
        sched = None
        if meta["schedule"] is not None:
            sched = build_schedule(meta["schedule"]["T"])
            if not np.allclose(sched.alpha_bar, meta["schedule"]["alpha_bar"], rtol=0, atol=1e-15):
                raise CheckpointMismatch("stored schedule differs from the cosine schedule")
        return cls(meta["kind"], meta["mode"], meta["action"], nets, sched, meta["L_h"], meta["L_p"], meta["meta"])


def train_policy(kind, windows, cfg, action="image", T=10, on_epoch=None):
    """Train any policy kind on prepared windows; returns ``(policy, loss_curve)``."""
    if len(windows) == 0:
        raise EmptyDataset("no training windows")
    L_h = windows.ball.shape[1]
    L_p = windows.target.shape[1]
    if kind == "diffusion":
        sched = build_schedule(T)
        net, curve = train_diffusion(windows, sched, cfg, on_epoch=on_epoch)
        return Policy(kind, windows.mode, action, {"denoiser": net}, sched, L_h, L_p), curve
    if kind == "fcr":
        net, curve = train_fcr(windows, cfg, on_epoch)
        return Policy(kind, windows.mode, action, {"fcr": net}, None, L_h, L_p), curve
    if kind == "ae-fcr":
        model = train_ae_fcr(windows, cfg, on_epoch)
        return Policy(kind, windows.mode, action, {"ae": model.autoencoder, "regressor": model.regressor}, None, L_h, L_p), model.reg_curve
    if kind == "constant":
        return Policy(kind, windows.mode, action, {}, None, L_h, L_p), []
    raise ValueError(f"unknown policy kind {kind!r}")


def default_train_config(kind, **overrides):
    base = {"diffusion": dict(learning_rate=2e-5, weight_decay=0.0, epochs=1000),
            "fcr": dict(learning_rate=1e-3, weight_decay=0.0, epochs=1000),
            "ae-fcr": dict(learning_rate=1e-3, weight_decay=0.75, epochs=500),
            "constant": dict(learning_rate=1e-3, weight_decay=0.0, epochs=1)}[kind]
    base.update(overrides)
    return TrainConfig(**base)
