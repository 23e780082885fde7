"""Command-line entry point: data generation, training, evaluation and the extraction demo."""
import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import wave

import numpy as np

from imit2d import __version__
from imit2d import config as cfgmod
from imit2d.errors import (
    CheckpointMismatch,
    ConfigError,
    EmptyDataset,
    LengthMismatch,
    NoValidWindows,
    SingleClassDataset,
    TooShort,
)
from imit2d.extraction import (
    INVALID,
    VALID,
    classify_frames,
    detect_hits,
    estimate_bandwidth,
    mean_shift_fit,
    segment_episodes,
    train_hit_classifier,
)
from imit2d.harness.closed_loop import run_closed_loop, summarize
from imit2d.harness.episodes import generate_dataset, read_episode, write_episode
from imit2d.harness.offline import OraclePolicy, dataset_windows, evaluate_offline
from imit2d.harness.streams import hit_dataset, matchplay_features, rally_stream
from imit2d.numnet import TrainConfig
from imit2d.policy import Policy, train_policy

log = logging.getLogger("imit2d")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA, EXIT_COMPAT = 0, 2, 3, 4, 5
DATA_ERRORS = (EmptyDataset, NoValidWindows, SingleClassDataset, TooShort, LengthMismatch)

# --mode values map to (conditioning, action space)
MODES = {"pre2d": ("pre2d", "image"), "post2d": ("post2d", "image"), "tspace": ("post2d", "task")}
HIT_MATCH_TOL = 0.2


# -- helpers -----------------------------------------------------------------------------------

def git_blob_hash(data):
    """Content hash computed the way git hashes a blob."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def file_hash(path):
    with open(path, "rb") as fp:
        return git_blob_hash(fp.read())


def write_manifest(out_dir, command, cfg, outputs, extra=None):
    entries = [{"path": os.path.relpath(p, out_dir), "sha1": file_hash(p)} for p in outputs]
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": cfgmod.config_hash(cfg),
        "seed": cfg["seed"],
        "config": cfg,
        "outputs": entries,
    }
    manifest.update(extra or {})
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
    return path


def _resolve(args, path):
    return path if path is None or os.path.isabs(path) else os.path.join(args.workdir, path)


def _out_dir(args):
    out = _resolve(args, args.out)
    os.makedirs(out, exist_ok=True)
    return out


def _parse_range(text):
    if not text:
        return slice(None)
    a, _, b = text.partition(":")
    return slice(int(a) if a else None, int(b) if b else None)


def load_episodes(data_dir, index_range=None):
    if not os.path.isdir(data_dir):
        raise FileNotFoundError(f"data directory {data_dir!r} does not exist")
    names = sorted(n for n in os.listdir(data_dir) if n.endswith(".ep"))
    names = names[_parse_range(index_range)]
    if not names:
        raise EmptyDataset(f"no episode files selected in {data_dir!r}")
    return [read_episode(os.path.join(data_dir, n)) for n in names]


def _write_csv(path, rows, fields):
    with open(path, "w", newline="") as fp:
        w = csv.DictWriter(fp, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k) for k in fields})


def _write_json(path, obj):
    with open(path, "w") as fp:
        json.dump(obj, fp, indent=2, sort_keys=True)


# -- subcommands ---------------------------------------------------------------------------------

def cmd_gen_data(args, cfg):
    out = _out_dir(args)
    episodes = generate_dataset(
        args.n, cfgmod.launch_distribution(cfg), args.expert, camera=cfgmod.camera(cfg), seed=cfg["seed"],
        params=cfgmod.ball_params(cfg), sim_cfg=cfgmod.sim_config(cfg),
    )
    paths = []
    for ep in episodes:
        p = os.path.join(out, f"episode_{ep.id:05d}.ep")
        write_episode(ep, p)
        paths.append(p)
    ok = sum(ep.expert_success for ep in episodes)
    log.info("wrote %d episodes to %s (expert success %d/%d)", len(paths), out, ok, len(paths))
    write_manifest(out, "gen-data", cfg, paths, {"n": args.n, "expert": args.expert})
    return EXIT_OK


def _train_overrides(args):
    return dict(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, lr_schedule=args.lr_schedule)


def cmd_train(args, cfg):
    episodes = load_episodes(_resolve(args, args.data), args.range)
    mode, action = MODES[args.mode]
    w = cfg["windows"]
    windows = dataset_windows(episodes, mode, action, L_h=w["history_length"], L_p=w["prediction_horizon"])
    tcfg = cfgmod.train_config(cfg, args.policy, **_train_overrides(args))
    out = _out_dir(args)
    log.info("training %s/%s on %d windows: %s", args.policy, args.mode, len(windows), tcfg)

    def progress(epoch, loss):
        if epoch % max(1, tcfg.epochs // 10) == 0 or epoch == tcfg.epochs - 1:
            log.info("epoch %d loss %.6f", epoch, loss)

    policy, curve = train_policy(args.policy, windows, tcfg, action, cfg["schedule"]["T"], on_epoch=progress)
    policy.meta.update({"config_hash": cfgmod.config_hash(cfg), "seed": cfg["seed"], "train": tcfg.__dict__, "cli_mode": args.mode})
    ckpt = os.path.join(out, "policy.ckpt")
    policy.save(ckpt)
    loss_csv = os.path.join(out, "loss.csv")
    _write_csv(loss_csv, [{"epoch": i, "loss": float(v)} for i, v in enumerate(curve)], ["epoch", "loss"])
    write_manifest(out, "train", cfg, [ckpt, loss_csv], {"policy": args.policy, "mode": args.mode, "n_windows": len(windows)})
    return EXIT_OK


def _load_policy(spec, cli_mode, cfg, args):
    """A checkpoint path, or one of the built-ins ``oracle``, ``constant`` and ``expert``."""
    mode, action = MODES[cli_mode]
    if spec == "oracle":
        return OraclePolicy(mode, action)
    if spec == "expert":
        return "expert"
    w = cfg["windows"]
    if spec == "constant":
        return Policy("constant", mode, action, L_h=w["history_length"], L_p=w["prediction_horizon"])
    policy = Policy.load(_resolve(args, spec))
    if (policy.mode, policy.action) != (mode, action):
        raise CheckpointMismatch(f"checkpoint {spec!r} was trained for {policy.mode}/{policy.action}, not {cli_mode}")
    if policy.schedule is not None and policy.schedule.T != cfg["schedule"]["T"]:
        # sampling uses the stored schedule; a differing config is reported, not silently mixed
        raise CheckpointMismatch(f"checkpoint uses T={policy.schedule.T}, config has T={cfg['schedule']['T']}")
    return policy


TABLE_FIELDS = ["policy", "mode", "rmse", "dtw", "icp", "jerk", "gt_jerk", "n_windows"]
EPISODE_FIELDS = [
    "episode_id", "success", "min_distance", "bounces_at_min", "t_at_min", "n_replans",
    "est_error_mean", "est_error_max", "est_missing",
]


def cmd_eval(args, cfg):
    episodes = load_episodes(_resolve(args, args.data), args.range)
    out = _out_dir(args)
    checkpoints = args.checkpoint or ["expert" if args.closed_loop else "oracle"]
    policies = [_load_policy(c, args.mode, cfg, args) for c in checkpoints]
    if args.offline:
        rows = []
        for spec, policy in zip(checkpoints, policies):
            if policy == "expert":
                raise CheckpointMismatch("the scripted expert has no offline predictions")
            row = evaluate_offline(policy, episodes, seed=cfg["seed"]).as_dict()
            log.info("%s: %s", spec, row)
            rows.append(row)
        path = os.path.join(out, "offline.csv")
        _write_csv(path, rows, TABLE_FIELDS)
        write_manifest(out, "eval", cfg, [path], {"protocol": "offline", "checkpoints": checkpoints, "mode": args.mode})
        return EXIT_OK
    cl_cfg = cfgmod.closed_loop_config(cfg, args.closed_loop)
    report = {"protocol": args.closed_loop, "mode": args.mode, "policies": {}}
    outputs = []
    for k, (spec, policy) in enumerate(zip(checkpoints, policies)):
        results = run_closed_loop(policy, episodes, cl_cfg, jobs=args.jobs)
        summary = summarize(results)
        summary["episodes_detail"] = [{f: r.as_dict()[f] for f in EPISODE_FIELDS} for r in results]
        report["policies"][spec] = summary
        log.info("%s %s: %d/%d success", spec, args.closed_loop, summary["successes"], summary["episodes"])
        path = os.path.join(out, f"closed_loop_episodes_{k}.csv")
        _write_csv(path, [r.as_dict() for r in results], EPISODE_FIELDS)
        outputs.append(path)
    path = os.path.join(out, "closed_loop.json")
    _write_json(path, report)
    outputs.insert(0, path)
    write_manifest(out, "eval", cfg, outputs, {"protocol": args.closed_loop, "checkpoints": checkpoints})
    return EXIT_OK


# -- extraction demo -----------------------------------------------------------------------------

def write_pcm(path, x, sample_rate):
    """16-bit mono WAV; returns the gain applied before quantization."""
    gain = 0.9 / max(float(np.max(np.abs(x))), 1e-12)
    q = np.clip(np.rint(x * gain * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(path, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(q.tobytes())
    return gain


def read_pcm(path):
    try:
        with wave.open(path, "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2:
                raise OSError(f"{path!r} must be 16-bit mono PCM")
            sr = w.getframerate()
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise OSError(f"cannot read PCM from {path!r}: {exc or 'truncated or empty file'}") from None
    if not raw:
        raise OSError(f"PCM file {path!r} holds no samples")
    return np.frombuffer(raw, dtype="<i2").astype(float) / 32767.0, sr


def cmd_make_demo(args, cfg):
    out = _out_dir(args)
    ex = cfg["extraction"]
    seed = cfg["seed"]
    stream = rally_stream(n_rallies=args.rallies, seed=seed, sample_rate=ex["sample_rate"], dim=ex["frame_dim"])
    pcm_path = os.path.join(out, "demo.wav")
    gain = write_pcm(pcm_path, stream.pcm, stream.sample_rate)
    train_F, train_labels = matchplay_features(args.train_frames, ex["frame_dim"], seed)
    feat_path = os.path.join(out, "demo_features.npz")
    with open(feat_path, "wb") as fp:
        np.savez(
            fp,
            train_features=train_F,
            train_valid=np.array([lbl == VALID for lbl in train_labels]),
            frame_times=stream.frame_times,
            frame_features=stream.frame_features,
            frame_valid=np.array([lbl == VALID for lbl in stream.frame_labels]),
            hit_times=np.array(stream.hit_times),
            hit_sides=np.array(stream.hit_sides),
            mask_t=np.array([m[0] for m in stream.mask]),
            mask_v=np.array([m[1] for m in stream.mask]),
            pcm_gain=np.array(gain),
        )
    write_manifest(out, "make-demo", cfg, [pcm_path, feat_path])
    return EXIT_OK


def _load_features(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            return {k: z[k] for k in z.files}
    except (ValueError, EOFError) as exc:
        raise OSError(f"cannot read features from {path!r}: {exc}") from None


def _true_segments(d):
    return segment_episodes(list(d["hit_times"]), list(zip(d["mask_t"], d["mask_v"])), [str(s) for s in d["hit_sides"]])


def cmd_extract_demo(args, cfg):
    pcm, sr = read_pcm(_resolve(args, args.pcm))
    d = _load_features(_resolve(args, args.features))
    out = _out_dir(args)
    ex = cfg["extraction"]
    seed = cfg["seed"]
    pcm = pcm / float(d.get("pcm_gain", 1.0))

    # matchplay filter
    train_labels = [VALID if v else INVALID for v in d["train_valid"]]
    bw = ex["bandwidth"] or estimate_bandwidth(d["train_features"], seed=seed)
    ms = mean_shift_fit(d["train_features"], bw, train_labels)
    pred = classify_frames(ms, d["frame_features"])
    truth = [VALID if v else INVALID for v in d["frame_valid"]]
    matchplay_acc = float(np.mean([p == t for p, t in zip(pred, truth)]))

    # hit classifier: held-out clips, then the stream
    clips = hit_dataset(2 * args.hit_clips, seed=seed, sample_rate=sr)
    tcfg = TrainConfig(learning_rate=1e-3, epochs=ex["hit_epochs"], batch_size=32, seed=seed)
    clf = train_hit_classifier(clips[: args.hit_clips], tcfg)
    X_test = np.array([f for f, _ in clips[args.hit_clips :]])
    y_test = np.array([y for _, y in clips[args.hit_clips :]])
    hit_acc = float(np.mean(clf.predict(X_test) == y_test))
    found = detect_hits(clf, pcm, sr)
    true_hits = np.asarray(d["hit_times"], dtype=float)
    matched = [int(np.argmin(np.abs(true_hits - t))) for t in found]
    tp = sum(1 for t, j in zip(found, matched) if abs(true_hits[j] - t) <= HIT_MATCH_TOL)
    # court side of each detection comes from the nearest true hit
    sides = [str(d["hit_sides"][j]) for j in matched]
    mask = [(float(t), p == VALID) for t, p in zip(d["frame_times"], pred)]
    segments = segment_episodes(found, mask, sides) if found else []
    expected = _true_segments(d)
    seg_hits = sum(1 for s in expected if any(abs(s[0] - a) <= HIT_MATCH_TOL and abs(s[1] - b) <= HIT_MATCH_TOL for a, b in segments))

    report = {
        "matchplay_accuracy": matchplay_acc,
        "matchplay": {"bandwidth": float(bw), "modes": len(ms.modes), "frames": len(truth)},
        "hit_accuracy": hit_acc,
        "hit_detection": {
            "detected": len(found), "true": len(true_hits), "true_positives": tp,
            "precision": tp / len(found) if found else 0.0,
            "recall": tp / len(true_hits) if len(true_hits) else 0.0,
            "tolerance_s": HIT_MATCH_TOL, "times": found,
        },
        "segments": [list(s) for s in segments],
        "expected_segments": [list(s) for s in expected],
        "segment_recall": seg_hits / len(expected) if expected else 1.0,
    }
    path = os.path.join(out, "report.json")
    _write_json(path, report)
    write_manifest(out, "extract-demo", cfg, [path])
    log.info("matchplay %.4f, hit clips %.4f, %d/%d hits", matchplay_acc, hit_acc, tp, len(true_hits))
    return EXIT_OK


# -- entry point ---------------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="imit2d", description=__doc__)
    p.add_argument("--config", help="JSON experiment config (defaults when omitted)")
    p.add_argument("--workdir", default=".", help="base directory for every relative path")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for closed-loop evaluation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate expert episodes")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--expert", choices=("scripted", "teb"), default="scripted")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a planner")
    t.add_argument("--policy", choices=("diffusion", "fcr", "ae-fcr"), required=True)
    t.add_argument("--mode", choices=tuple(MODES), default="post2d")
    t.add_argument("--data", required=True)
    t.add_argument("--range", help="episode index slice START:STOP over the sorted files")
    t.add_argument("--out", required=True)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr-schedule", choices=("constant", "cosine"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="offline metrics or closed-loop success")
    how = e.add_mutually_exclusive_group(required=True)
    how.add_argument("--offline", action="store_true")
    how.add_argument("--closed-loop", choices=("hybrid", "live"))
    e.add_argument("--checkpoint", action="append", help="checkpoint path or oracle/constant/expert; repeatable")
    e.add_argument("--mode", choices=tuple(MODES), default="post2d")
    e.add_argument("--data", required=True)
    e.add_argument("--range", help="episode index slice START:STOP over the sorted files")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("extract-demo", help="matchplay filter, hit detection and segmentation on a stream")
    x.add_argument("--pcm", required=True)
    x.add_argument("--features", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--hit-clips", type=int, default=300)
    x.set_defaults(func=cmd_extract_demo)

    m = sub.add_parser("make-demo", help="write synthetic demo inputs for extract-demo")
    m.add_argument("--out", required=True)
    m.add_argument("--rallies", type=int, default=6)
    m.add_argument("--train-frames", type=int, default=1000)
    m.set_defaults(func=cmd_make_demo)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = cfgmod.load_config(_resolve(args, args.config))
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointMismatch as exc:
        print(f"incompatible checkpoint: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
