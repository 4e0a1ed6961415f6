"""Slow, independent reference implementations used as test oracles.

Nothing here imports the package's numeric kernels; each function follows
the textbook definition one pixel (or one sample) at a time.
"""
from __future__ import annotations

import math
from collections import Counter

import numpy as np
from scipy.special import entr, expit

N_BINS = 256


def region_samples(frame: np.ndarray, row: int, col: int, radius: int) -> np.ndarray:
    """All channel values of the window around (row, col), replicate padded."""
    h, w = frame.shape[:2]
    out = []
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            r = min(max(row + dr, 0), h - 1)
            c = min(max(col + dc, 0), w - 1)
            out.extend(frame[r, c, :])
    return np.array(out)


def soft_bins(samples: np.ndarray, bandwidth: float) -> np.ndarray:
    """Sigmoid-difference histogram over 256 bins centred on b/256."""
    centers = np.arange(N_BINS) / N_BINS
    half = 0.5 / N_BINS
    v = samples[:, None]
    mass = expit((v - centers + half) / bandwidth) - expit((v - centers - half) / bandwidth)
    return mass.sum(axis=0) / samples.size


def direct_entropy_map(frame: np.ndarray, bandwidth: float, region: int = 3) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            p = soft_bins(region_samples(frame, r, c, region // 2), bandwidth)
            out[r, c] = float(entr(np.clip(p, 0.0, None)).sum())
    return out


def hard_entropy_map(frame: np.ndarray, region: int = 3) -> np.ndarray:
    """Entropy of the plain 256-bin count histogram, nearest-bin assignment."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w = frame.shape[:2]
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            vals = region_samples(frame, r, c, region // 2)
            counts = Counter(min(N_BINS - 1, int(math.floor(v * N_BINS + 0.5))) for v in vals)
            n = len(vals)
            out[r, c] = -sum(k / n * math.log(k / n) for k in counts.values())
    return out


def preprocess_pixelwise(frame: np.ndarray, radius: int, eps: float = 1e-6) -> np.ndarray:
    """Box blur, unsharp mask and division, one pixel and channel at a time."""
    frame = np.asarray(frame, dtype=np.float64)
    h, w, ch = frame.shape
    out = np.zeros_like(frame)
    n = (2 * radius + 1) ** 2
    for r in range(h):
        for c in range(w):
            for k in range(ch):
                acc = 0.0
                for dr in range(-radius, radius + 1):
                    for dc in range(-radius, radius + 1):
                        acc += frame[min(max(r + dr, 0), h - 1), min(max(c + dc, 0), w - 1), k]
                smooth = acc / n
                sharp = min(max(2.0 * frame[r, c, k] - smooth, 0.0), 1.0)
                out[r, c, k] = min(max(sharp / (smooth + eps), 0.0), 1.0)
    return out


def bin_centred_frame(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Random frame whose values sit on histogram bin centres."""
    return rng.integers(0, N_BINS, size=(h, w, 3)) / N_BINS


def checkerboard(h: int, w: int, low: float, high: float) -> np.ndarray:
    rows, cols = np.indices((h, w))
    gray = np.where((rows + cols) % 2 == 0, low, high)
    return np.repeat(gray[:, :, None], 3, axis=2)


def two_value_entropy(a: int, b: int) -> float:
    n = a + b
    return -(a / n) * math.log(a / n) - (b / n) * math.log(b / n)
