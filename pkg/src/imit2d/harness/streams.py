"""Synthetic broadcast streams for the extraction models: frame features and match audio."""
from dataclasses import dataclass

import numpy as np

from imit2d.extraction import INVALID, VALID, clip_features

SAMPLE_RATE = 16000
CLIP_LEN = 4096


def matchplay_features(n, dim=16, seed=0, valid_fraction=0.7, n_invalid_kinds=2, spread=0.03):
    """Frame features in [0, 1]^dim: one tight gameplay cluster plus replay/crowd clusters.

    Returns ``(features, labels)`` with labels in {valid, invalid}.
    """
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.2, 0.8, size=(1 + n_invalid_kinds, dim))
    # keep clusters well apart relative to their spread
    for k in range(1, len(centres)):
        while np.min(np.linalg.norm(centres[:k] - centres[k], axis=1)) < 5 * spread * np.sqrt(dim):
            centres[k] = rng.uniform(0.2, 0.8, size=dim)
    is_valid = rng.random(n) < valid_fraction
    kind = np.where(is_valid, 0, 1 + rng.integers(0, n_invalid_kinds, size=n))
    F = np.clip(centres[kind] + rng.normal(0.0, spread, size=(n, dim)), 0.0, 1.0)
    labels = [VALID if v else INVALID for v in is_valid]
    return F, labels


def hit_burst(rng, n=CLIP_LEN, sample_rate=SAMPLE_RATE):
    """Impulsive broadband burst (racket contact) over low background noise."""
    x = rng.normal(0.0, 0.01, n)
    onset = int(rng.integers(n // 4, n // 2))
    length = int(0.02 * sample_rate)
    decay = np.exp(-np.arange(length) / (0.003 * sample_rate))
    x[onset : onset + length] += rng.uniform(0.4, 0.9) * rng.normal(0.0, 1.0, length) * decay
    return x


def tonal_noise(rng, n=CLIP_LEN, sample_rate=SAMPLE_RATE):
    """Crowd-like tonal noise: a few sinusoids plus a noise floor."""
    t = np.arange(n) / sample_rate
    x = rng.normal(0.0, 0.01, n)
    for _ in range(int(rng.integers(1, 4))):
        x += rng.uniform(0.02, 0.2) * np.sin(2 * np.pi * rng.uniform(150, 2500) * t + rng.uniform(0, 2 * np.pi))
    return x


def hit_dataset(n, seed=0, sample_rate=SAMPLE_RATE, clip_len=CLIP_LEN):
    """``n`` balanced ``(clip feature vector, label)`` pairs."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        y = i % 2
        clip = hit_burst(rng, clip_len, sample_rate) if y else tonal_noise(rng, clip_len, sample_rate)
        out.append((clip_features(clip, sample_rate), y))
    order = rng.permutation(n)
    return [out[k] for k in order]


@dataclass
class RallyStream:
    """Match audio with ground-truth hits and a frame-level matchplay mask."""

    pcm: np.ndarray
    sample_rate: int
    hit_times: list
    hit_sides: list
    mask: list  # (t, valid) samples, held until the next one
    frame_times: np.ndarray
    frame_features: np.ndarray
    frame_labels: list


def rally_stream(n_rallies=6, seed=0, sample_rate=SAMPLE_RATE, fps=10, dim=16):
    """Alternating far/near hits inside gameplay spans separated by replay breaks."""
    rng = np.random.default_rng(seed)
    hits, sides, mask = [], [], []
    t = 1.0
    for _ in range(n_rallies):
        mask.append((t - 0.5, True))
        n_hits = 2 * int(rng.integers(1, 3))
        for k in range(n_hits):
            hits.append(t)
            sides.append("far" if k % 2 == 0 else "near")
            t += rng.uniform(1.2, 1.8)
        mask.append((t, False))
        t += rng.uniform(2.0, 3.0)
    duration = t
    pcm = tonal_noise(rng, int(duration * sample_rate) + CLIP_LEN, sample_rate)
    for h in hits:
        burst = hit_burst(rng, 2048, sample_rate)
        k = int(h * sample_rate) - 512
        # align the synthetic onset roughly with the hit time
        pcm[k : k + 2048] += burst - burst.mean()
    frame_times = np.arange(0.0, duration, 1.0 / fps)
    mt = np.array([m[0] for m in mask])
    mv = np.array([m[1] for m in mask])
    idx = np.searchsorted(mt, frame_times, side="right") - 1
    valid = np.where(idx >= 0, mv[np.maximum(idx, 0)], False)
    F_valid, _ = matchplay_features(len(frame_times), dim, seed, valid_fraction=1.0)
    F_invalid, _ = matchplay_features(len(frame_times), dim, seed, valid_fraction=0.0)
    F = np.where(valid[:, None], F_valid, F_invalid)
    labels = [VALID if v else INVALID for v in valid]
    return RallyStream(pcm, sample_rate, hits, sides, mask, frame_times, F, labels)
