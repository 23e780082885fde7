"""Experiment configuration: JSON with a schema version, strict keys and typed defaults."""
import copy
import hashlib
import json
import os

from imit2d.control import DEFAULT_LOOKAHEAD, PDGains
from imit2d.court import broadcast_camera
from imit2d.dynamics import BallParams
from imit2d.errors import ConfigError
from imit2d.harness.closed_loop import ClosedLoopConfig
from imit2d.harness.episodes import LaunchDistribution
from imit2d.harness.sim import REACH_SLACK, SUCCESS_DISTANCE, V_MAX_PLAN, SimConfig
from imit2d.numnet import HISTORY_LENGTH, PREDICTION_HORIZON, TrainConfig

SCHEMA_VERSION = 1
SEED_ENV = "IMIT2D_SEED"

_LAUNCH = LaunchDistribution()
_GAINS = PDGains()

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "ball": {"gravity": 9.81, "drag_coeff": 0.02, "restitution": 0.75, "bounce_friction": 0.2},
    "launch": {k: list(v) for k, v in _LAUNCH.to_dict().items() if k != "seed"},
    "camera": {"height": 12.0, "distance": 20.0, "aim_x": -4.0, "fx": 800.0, "lateral": 0.0},
    "expert": {"v_max_plan": V_MAX_PLAN, "reach_slack": REACH_SLACK},
    "windows": {"history_length": HISTORY_LENGTH, "prediction_horizon": PREDICTION_HORIZON},
    "schedule": {"T": 10},
    "train": {
        "diffusion": {"learning_rate": 2e-5, "weight_decay": 0.0, "epochs": 1000, "batch_size": 64, "lr_schedule": "constant", "min_lr_ratio": 0.01},
        "fcr": {"learning_rate": 1e-3, "weight_decay": 0.0, "epochs": 1000, "batch_size": 64, "lr_schedule": "constant", "min_lr_ratio": 0.01},
        "ae-fcr": {"learning_rate": 1e-3, "weight_decay": 0.75, "epochs": 500, "batch_size": 64, "lr_schedule": "constant", "min_lr_ratio": 0.01},
    },
    "control": {
        "k1p": _GAINS.k1p, "k1d": _GAINS.k1d, "k2p": _GAINS.k2p, "k2d": _GAINS.k2d,
        "lookahead": DEFAULT_LOOKAHEAD, "turn_then_drive": True, "replan_period": 0.2,
    },
    "closed_loop": {
        "success_distance": SUCCESS_DISTANCE, "max_bounces": 3,
        "pixel_noise_sigma": 2.0, "dropout_prob": 0.2, "latency": 0.1, "detection_rate": 100,
    },
    "extraction": {
        "sample_rate": 16000, "n_mels": 26, "n_coeffs": 13, "frame_dim": 16, "bandwidth": None,
        "hit_epochs": 60,
    },
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            if base[key] is not None and val is not None and not _same_kind(base[key], val):
                raise ConfigError(f"config key {where!r} has the wrong type")
            out[key] = val
    return out


def _same_kind(a, b):
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool)
    if isinstance(a, (int, float)):
        return isinstance(b, (int, float))
    if isinstance(a, list):
        return isinstance(b, list) and len(b) == len(a)
    return isinstance(b, type(a))


def make_config(overrides=None, env=None):
    """Defaults merged with ``overrides``; ``IMIT2D_SEED`` in ``env`` replaces the seed."""
    overrides = dict(overrides or {})
    version = overrides.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    cfg = _merge(DEFAULTS, overrides)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    validate(cfg)
    return cfg


def load_config(path=None, env=None):
    if path is None:
        return make_config({}, env)
    try:
        with open(path) as fp:
            data = json.load(fp)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return make_config(data, env)


def validate(cfg):
    """Build every typed object once so that invalid values surface as ConfigError."""
    try:
        ball_params(cfg)
        launch_distribution(cfg)
        camera(cfg)
        for kind in cfg["train"]:
            train_config(cfg, kind)
        closed_loop_config(cfg, "hybrid")
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg["schedule"]["T"] < 2:
        raise ConfigError("schedule.T must be >= 2")
    if min(cfg["windows"].values()) < 4:
        raise ConfigError("window lengths must be >= 4")


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def ball_params(cfg):
    return BallParams(**cfg["ball"])


def launch_distribution(cfg):
    return LaunchDistribution.from_dict({**cfg["launch"], "seed": cfg["seed"]})


def camera(cfg):
    return broadcast_camera(**cfg["camera"])


def sim_config(cfg):
    c = cfg["control"]
    cl = cfg["closed_loop"]
    return SimConfig(
        replan_period=c["replan_period"],
        success_distance=cl["success_distance"],
        max_bounces=cl["max_bounces"],
        gains=PDGains(c["k1p"], c["k1d"], c["k2p"], c["k2d"]),
        lookahead=c["lookahead"],
        turn_then_drive=c["turn_then_drive"],
        v_max_plan=cfg["expert"]["v_max_plan"],
        reach_slack=cfg["expert"]["reach_slack"],
    )


def closed_loop_config(cfg, perception):
    cl = cfg["closed_loop"]
    return ClosedLoopConfig(
        perception=perception,
        sim=sim_config(cfg),
        pixel_noise_sigma=cl["pixel_noise_sigma"],
        dropout_prob=cl["dropout_prob"],
        latency=cl["latency"],
        detection_rate=cl["detection_rate"],
        params=ball_params(cfg),
        seed=cfg["seed"],
    )


def train_config(cfg, kind, **overrides):
    section = dict(cfg["train"][kind])
    section.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(seed=cfg["seed"], **section)
