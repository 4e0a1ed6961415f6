"""Per-pixel image spatial entropy from logistic-kernel soft histograms.

Each pixel's entropy is the Shannon entropy (nats) of a 256-bin soft
histogram pooled over the three channels of the square region centred on it.
Bin ``b`` is centred on intensity ``b / 256``; a sample ``v`` contributes
``sigmoid((v - b/256 + L/2) / B) - sigmoid((v - b/256 - L/2) / B)`` to bin
``b``. Mass that the kernel pushes outside ``[0, 255]`` is not renormalized.

The engine works on row tiles. For every sample it tabulates the contribution
to the few bins where it is non-negligible, then slides a histogram along
each row, adding the entering column and removing the leaving one.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

N_BINS = 256
DEFAULT_BANDWIDTH = 1.0 / 4096
P_FLOOR = 1e-12
LN_BINS = math.log(N_BINS)

# Kernel tails beyond TAIL_CUTOFF bandwidths carry < exp(-42) mass per sample.
TAIL_CUTOFF = 42.0

EMAP_MAGIC = b"EMAP1\n"


@dataclass(frozen=True)
class HistogramSpec:
    bandwidth: float = DEFAULT_BANDWIDTH
    region_size: int = 3
    bins: int = N_BINS

    def __post_init__(self):
        if self.bins != N_BINS:
            raise ValueError("only 256-bin histograms are supported")
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.region_size < 3 or self.region_size % 2 == 0:
            raise ValueError("region_size must be odd and >= 3")

    @property
    def bin_width(self) -> float:
        return 1.0 / self.bins

    @property
    def radius(self) -> int:
        return self.region_size // 2

    @property
    def window(self) -> int:
        """Half-width, in bins, of the support tabulated per sample."""
        return min(N_BINS, int(math.ceil(TAIL_CUTOFF * self.bandwidth * N_BINS)) + 1)


def default_threads() -> int:
    env = os.environ.get("ENTROKEYS_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("ENTROKEYS_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def soft_histogram(region, spec: HistogramSpec = HistogramSpec()) -> np.ndarray:
    """Bin probabilities of a region of ``(..., 3)`` intensities.

    Dense evaluation over all 256 bins; ``p = sum_c hist_c / (3 |R|)``.
    """
    region = np.asarray(region, dtype=np.float64).reshape(-1, 3)
    n = region.shape[0]
    v = region.reshape(-1, 1)
    centers = np.arange(N_BINS) / N_BINS
    half = spec.bin_width / 2.0
    B = spec.bandwidth
    contrib = _sigmoid((v - centers + half) / B) - _sigmoid((v - centers - half) / B)
    return contrib.sum(axis=0) / (3.0 * n)


def histogram_entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    pos = p > 0
    return float(-np.sum(p[pos] * np.log(np.maximum(p[pos], P_FLOOR))))


@numba.njit(cache=True, nogil=True)
def _logistic(z):
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@numba.njit(cache=True, nogil=True)
def _tabulate_rows(img, y0, y1, window, bandwidth, lo, table):
    # table[y, x, c, k] = contribution of sample (y, x, c) to bin lo[y, x, c] + k
    w = img.shape[1]
    half = 0.5 / N_BINS
    for y in range(y0, y1):
        for x in range(w):
            for c in range(3):
                v = img[y, x, c]
                b0 = int(math.floor(v * N_BINS + 0.5)) - window
                lo[y, x, c] = b0
                for k in range(2 * window + 1):
                    b = b0 + k
                    if b < 0 or b >= N_BINS:
                        table[y, x, c, k] = 0.0
                        continue
                    d = v - b / N_BINS
                    a = (d + half) / bandwidth
                    z = (d - half) / bandwidth
                    # difference of logistics evaluated on the side with small tails
                    if a + z > 0.0:
                        table[y, x, c, k] = _logistic(-z) - _logistic(-a)
                    else:
                        table[y, x, c, k] = _logistic(a) - _logistic(z)


@numba.njit(cache=True, nogil=True)
def _accumulate_column(hist, lo, table, ys, x, sign):
    width = table.shape[3]
    for y in ys:
        for c in range(3):
            b0 = lo[y, x, c]
            for k in range(width):
                b = b0 + k
                if 0 <= b < N_BINS:
                    hist[b] += sign * table[y, x, c, k]


@numba.njit(cache=True, nogil=True)
def _entropy_rows(lo, table, radius, y0, y1, out):
    h, w = out.shape
    hist = np.empty(N_BINS)
    ys = np.empty(2 * radius + 1, dtype=np.int64)
    norm = 1.0 / (3.0 * (2 * radius + 1) ** 2)
    for y in range(y0, y1):
        for j in range(2 * radius + 1):
            ys[j] = min(max(y - radius + j, 0), h - 1)
        hist[:] = 0.0
        for dx in range(-radius, radius + 1):
            _accumulate_column(hist, lo, table, ys, min(max(dx, 0), w - 1), 1.0)
        for x in range(w):
            if x > 0:
                _accumulate_column(hist, lo, table, ys, min(x + radius, w - 1), 1.0)
                _accumulate_column(hist, lo, table, ys, max(x - radius - 1, 0), -1.0)
            acc = 0.0
            for b in range(N_BINS):
                p = hist[b] * norm
                if p > 0.0:
                    acc -= p * math.log(max(p, P_FLOOR))
            out[y, x] = acc


def _tiles(n_rows: int, n_tiles: int) -> list[tuple[int, int]]:
    n_tiles = max(1, min(n_tiles, n_rows))
    edges = np.linspace(0, n_rows, n_tiles + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def spatial_entropy(frame, spec: HistogramSpec = HistogramSpec(), threads: int | None = None) -> np.ndarray:
    """Entropy map (H, W) in nats of a preprocessed frame.

    Borders use replicate padding. Results do not depend on ``threads``:
    every row is accumulated from scratch in a fixed order.
    """
    img = np.ascontiguousarray(frame, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) frame, got shape {img.shape}")
    h, w = img.shape[:2]
    if h < spec.region_size or w < spec.region_size:
        raise ValueError("frame is smaller than the entropy region")
    threads = default_threads() if threads is None else threads
    if threads < 1:
        raise ValueError("threads must be >= 1")
    window = spec.window
    lo = np.empty((h, w, 3), dtype=np.int64)
    table = np.empty((h, w, 3, 2 * window + 1))
    out = np.empty((h, w))
    tiles = _tiles(h, threads * 4 if threads > 1 else 1)

    def tab(tile):
        _tabulate_rows(img, tile[0], tile[1], window, spec.bandwidth, lo, table)

    def ent(tile):
        _entropy_rows(lo, table, spec.radius, tile[0], tile[1], out)

    if threads == 1:
        for t in tiles:
            tab(t)
        for t in tiles:
            ent(t)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(tab, tiles))
            list(pool.map(ent, tiles))
    return out


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"entropy map shapes differ: {a.shape} vs {b.shape}")
    return a, b


def joint_entropy(a, b) -> np.ndarray:
    """Pixel-wise max of two marginal entropy maps (lower bound of the joint)."""
    a, b = _check_pair(a, b)
    return np.maximum(a, b)


def conditional_entropy(h_t, h_prev) -> np.ndarray:
    h_t, h_prev = _check_pair(h_t, h_prev)
    return np.maximum(h_t - h_prev, 0.0)


def mutual_information(a, b) -> np.ndarray:
    """``a + b - max(a, b)``, i.e. the pixel-wise minimum."""
    a, b = _check_pair(a, b)
    return np.minimum(a, b)


def fano_bound(covered_entropy_sum: float, n_pixels: int, vocab: int = N_BINS) -> float:
    """Lower bound on the average per-pixel error probability.

    ``1 - covered / (N ln|V|) - ln 2 / ln|V|``. Applies to masked entropy,
    masked conditional entropy and transported mutual information alike.
    """
    if covered_entropy_sum < 0:
        raise ValueError("covered entropy must be nonnegative")
    if n_pixels < 1:
        raise ValueError("n_pixels must be >= 1")
    log_v = math.log(vocab)
    return 1.0 - covered_entropy_sum / (n_pixels * log_v) - math.log(2.0) / log_v


def save_emap(emap, path) -> None:
    emap = np.asarray(emap)
    h, w = emap.shape
    with open(path, "wb") as fh:
        fh.write(EMAP_MAGIC)
        fh.write(b"%d %d\n" % (w, h))
        fh.write(emap.astype("<f4").tobytes())


def load_emap(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if not buf.startswith(EMAP_MAGIC):
        raise ValueError("not an EMAP1 file")
    rest = buf[len(EMAP_MAGIC):]
    nl = rest.find(b"\n")
    if nl < 0:
        raise ValueError("EMAP header missing dimensions")
    try:
        w, h = (int(t) for t in rest[:nl].split())
    except ValueError:
        raise ValueError("malformed EMAP dimensions") from None
    payload = rest[nl + 1:]
    if len(payload) != 4 * w * h:
        raise ValueError(f"EMAP payload has {len(payload)} bytes, expected {4 * w * h}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)


def emap_preview(emap) -> np.ndarray:
    """Entropy map scaled to 0..255 bytes (``255 / ln 256`` per nat)."""
    scaled = np.floor(np.clip(np.asarray(emap) * (255.0 / LN_BINS), 0, 255) + 0.5)
    return scaled.astype(np.uint8)
