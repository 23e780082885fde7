"""Broadcast data-extraction models on synthetic streams.

* flat-kernel mean shift for matchplay/non-matchplay frame filtering
* MFCC features and a 256-128-2 dense hit classifier for audio hit detection
* episode segmentation from hit times and the matchplay mask
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from imit2d import kernels
from imit2d.errors import InvalidWindowLength, SingleClassDataset, UnlabeledModel
from imit2d.numnet import DenseNet, TrainConfig, fit, forward, softmax_bce_loss

VALID = "valid"
INVALID = "invalid"
SHIFT_TOL = 1e-6
MAX_SHIFT_ITERS = 500


# -- mean shift -------------------------------------------------------------------

@dataclass
class MeanShiftModel:
    bandwidth: float
    modes: np.ndarray
    mode_labels: list = None
    support: np.ndarray = None
    n_iter: int = 0

    def labeled(self):
        return self.mode_labels is not None and len(self.mode_labels) == len(self.modes)


def estimate_bandwidth(features, quantile=0.5, max_points=500, seed=0):
    """Quantile (default median) of pairwise distances, on a seeded subsample."""
    X = np.asarray(features, dtype=float)
    if len(X) > max_points:
        X = X[np.random.default_rng(seed).choice(len(X), max_points, replace=False)]
    sq = (X * X).sum(axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    iu = np.triu_indices(len(X), k=1)
    if iu[0].size == 0:
        return 1.0
    return float(np.quantile(np.sqrt(d2[iu]), quantile))


def mean_shift_fit(features, bandwidth, labels=None):
    """Fit flat-kernel mean shift; every sample seeds one trajectory.

    Converged points closer than ``bandwidth / 2`` to an already accepted mode
    are merged into it; modes are accepted in order of decreasing support.
    With ``labels`` each mode gets the majority label of its members.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) == 0:
        raise ValueError("need at least one feature")
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    pts, n_iter = kernels.mean_shift(X, X, float(bandwidth), SHIFT_TOL, MAX_SHIFT_ITERS)
    # support of each converged point = data within bandwidth
    sq = (X * X).sum(axis=1)
    d2 = (pts * pts).sum(axis=1)[:, None] + sq[None, :] - 2.0 * pts @ X.T
    support = (d2 <= bandwidth * bandwidth).sum(axis=1)
    order = np.lexsort((np.arange(len(pts)), -support))
    modes, mode_support = [], []
    for i in order:
        if all(np.linalg.norm(pts[i] - m) > bandwidth / 2.0 for m in modes):
            modes.append(pts[i])
            mode_support.append(support[i])
    modes = np.array(modes)
    model = MeanShiftModel(float(bandwidth), modes, None, np.array(mode_support), n_iter)
    if labels is not None:
        labels = list(labels)
        assign = nearest_mode(model, pts)
        names = []
        for k in range(len(modes)):
            members = [labels[i] for i in np.flatnonzero(assign == k)]
            if not members:
                # mode with no converged member: label by the nearest sample
                members = [labels[int(np.argmin(((X - modes[k]) ** 2).sum(axis=1)))]]
            n_valid = sum(1 for m in members if m == VALID)
            names.append(VALID if n_valid * 2 > len(members) else INVALID)
        model.mode_labels = names
    return model


def mean_shift_update(X, points, bandwidth):
    """One flat-kernel update of ``points`` against data ``X``."""
    out, _ = kernels.mean_shift(np.asarray(X, dtype=float), np.atleast_2d(points), float(bandwidth), np.inf, 1)
    return out


def nearest_mode(model, f):
    F = np.atleast_2d(np.asarray(f, dtype=float))
    d2 = ((F[:, None, :] - model.modes[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def classify_frame(model, f):
    """Label of the nearest mode (Euclidean) for one feature vector."""
    if not model.labeled():
        raise UnlabeledModel("mean-shift modes carry no labels")
    return model.mode_labels[int(nearest_mode(model, f)[0])]


def classify_frames(model, F):
    if not model.labeled():
        raise UnlabeledModel("mean-shift modes carry no labels")
    return [model.mode_labels[k] for k in nearest_mode(model, F)]


# -- MFCC ---------------------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@lru_cache(maxsize=16)
def mel_filterbank(n_mels, n_fft, sample_rate):
    """Triangular filters on the ``n_fft // 2 + 1`` rfft bins; returns read-only (weights, centre bins)."""
    n_bins = n_fft // 2 + 1
    mel_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    bin_pts = mel_to_hz(mel_pts) * n_fft / sample_rate
    bins = np.arange(n_bins)
    fb = np.zeros((n_mels, n_bins))
    for m in range(n_mels):
        lo, c, hi = bin_pts[m], bin_pts[m + 1], bin_pts[m + 2]
        rise = (bins - lo) / (c - lo)
        fall = (hi - bins) / (hi - c)
        fb[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    centres = bin_pts[1:-1]
    fb.setflags(write=False)
    centres.setflags(write=False)
    return fb, centres


@lru_cache(maxsize=16)
def _hann(n):
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def hann(n):
    return _hann(int(n)).copy()


def magnitude_spectrum(frame, window=True):
    x = np.asarray(frame, dtype=float)
    if window:
        x = x * _hann(len(x))
    return np.abs(np.fft.rfft(x))


def log_mel_energies(frame, sample_rate=16000, n_mels=26, floor=1e-10):
    n = len(frame)
    if n < 2 or n & (n - 1):
        raise InvalidWindowLength(f"window length {n} is not a power of two")
    fb, _ = mel_filterbank(n_mels, n, sample_rate)
    return np.log(np.maximum(fb @ magnitude_spectrum(frame), floor))


def mfcc(frame, sample_rate=16000, n_mels=26, n_coeffs=13):
    """Hann window, |DFT|, mel filterbank, log (floor 1e-10), orthonormal DCT-II."""
    if n_coeffs > n_mels:
        raise ValueError("n_coeffs must not exceed n_mels")
    return dct(log_mel_energies(frame, sample_rate, n_mels), type=2, norm="ortho")[:n_coeffs]


def frame_signal(pcm, frame_len=1024, hop=512):
    pcm = np.asarray(pcm, dtype=float)
    if len(pcm) < frame_len:
        return np.zeros((0, frame_len))
    n = 1 + (len(pcm) - frame_len) // hop
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return pcm[idx]


def clip_features(clip, sample_rate=16000, frame_len=1024, hop=512, n_mels=26, n_coeffs=13):
    """Mean and standard deviation of per-frame MFCCs over a clip."""
    frames = frame_signal(clip, frame_len, hop)
    if len(frames) == 0:
        raise InvalidWindowLength("clip shorter than one analysis window")
    M = np.array([mfcc(f, sample_rate, n_mels, n_coeffs) for f in frames])
    return np.concatenate([M.mean(axis=0), M.std(axis=0)])


# -- hit classifier ---------------------------------------------------------------------

@dataclass
class HitClassifier:
    net: DenseNet
    mean: np.ndarray
    scale: np.ndarray
    loss_curve: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.loss_curve[-1] if self.loss_curve else float("nan")

    def predict_proba(self, feats):
        F = (np.atleast_2d(feats) - self.mean) / self.scale
        return forward(self.net, F)[:, 1]

    def predict(self, feats):
        return (self.predict_proba(feats) >= 0.5).astype(int)


def train_hit_classifier(clips, cfg=None):
    """Train the 256-128-2 softmax classifier on ``(feature, label)`` pairs."""
    cfg = cfg or TrainConfig(learning_rate=1e-3, epochs=60, batch_size=32)
    X = np.array([np.asarray(f, dtype=float) for f, _ in clips])
    y = np.array([int(lbl) for _, lbl in clips])
    if set(np.unique(y)) != {0, 1}:
        raise SingleClassDataset("training clips must contain both hit and non-hit examples")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Xn = (X - mean) / scale
    net = DenseNet.build([X.shape[1], 256, 128, 2], output="softmax", seed=cfg.seed)
    curve = fit(net, len(Xn), lambda idx, rng: (Xn[idx], y[idx]), softmax_bce_loss, cfg)
    return HitClassifier(net, mean, scale, curve)


def detect_hits(model, pcm, sample_rate=16000, clip_len=4096, hop=1024, threshold=0.5, min_gap=0.3):
    """Hit onset times (s) from a PCM stream by sliding the clip classifier."""
    pcm = np.asarray(pcm, dtype=float)
    starts = np.arange(0, max(len(pcm) - clip_len, -1) + 1, hop)
    if len(starts) == 0:
        return []
    feats = np.array([clip_features(pcm[s : s + clip_len], sample_rate) for s in starts])
    prob = model.predict_proba(feats)
    hits = []
    k = 0
    while k < len(starts):
        if prob[k] >= threshold:
            j = k
            while j + 1 < len(starts) and prob[j + 1] >= threshold:
                j += 1
            best = k + int(np.argmax(prob[k : j + 1]))
            t = (starts[best] + clip_len / 2.0) / sample_rate
            if not hits or t - hits[-1] >= min_gap:
                hits.append(float(t))
            k = j + 1
        else:
            k += 1
    return hits


# -- segmentation -----------------------------------------------------------------------

def _mask_ok(mask_t, mask_v, a, b):
    """Sample-and-hold mask is valid over the whole closed interval [a, b]."""
    i0 = np.searchsorted(mask_t, a, side="right") - 1
    if i0 < 0:
        return False
    i1 = np.searchsorted(mask_t, b, side="right") - 1
    return bool(np.all(mask_v[i0 : i1 + 1]))


def segment_episodes(hit_times, matchplay_mask, side_of_hit):
    """Pair each near-side hit with the latest preceding far-side hit.

    ``matchplay_mask`` is a sequence of ``(t, valid)`` samples held constant
    until the next sample. Pairs that are not valid over their whole span are
    dropped; the output spans are disjoint.
    """
    hit_times = list(hit_times)
    if any(b < a for a, b in zip(hit_times, hit_times[1:])):
        raise ValueError("hit_times must be sorted")
    if len(side_of_hit) != len(hit_times):
        raise ValueError("side_of_hit must match hit_times")
    mask = sorted((float(t), bool(v)) for t, v in matchplay_mask)
    mask_t = np.array([m[0] for m in mask])
    mask_v = np.array([m[1] for m in mask], dtype=bool)
    out = []
    last_far = None
    for t, side in zip(hit_times, side_of_hit):
        if side == "far":
            last_far = t
        elif side == "near":
            if last_far is not None and _mask_ok(mask_t, mask_v, last_far, t):
                out.append((last_far, t))
            last_far = None
        else:
            raise ValueError(f"unknown side {side!r}")
    return out
