"""Keypoints in pixel space: soft-argmax, Gaussian fields, heatmaps, masks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

SIGMA_G = 9.0
TAU = 0.1
ETA = 3.5


@dataclass(frozen=True)
class HeatmapParams:
    sigma: float = SIGMA_G
    tau: float = TAU
    eta: float = ETA

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 0.0 <= self.tau < 1.0:
            raise ValueError("tau must lie in [0, 1)")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def support_radius(self) -> float:
        """Radius outside which the heatmap is exactly zero."""
        if self.tau == 0.0:
            return math.inf
        return self.sigma * math.sqrt(-2.0 * math.log(self.tau))


def logistic(z):
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class KeypointState:
    """K keypoints of one frame: coordinates and status logits."""

    xy: np.ndarray  # (K, 2) as (x, y)
    logits: np.ndarray  # (K,)

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.logits = np.asarray(self.logits, dtype=np.float64).reshape(-1)
        if self.xy.shape[0] != self.logits.shape[0]:
            raise ValueError("coordinate and logit counts differ")

    @property
    def k(self) -> int:
        return self.xy.shape[0]

    @property
    def status(self) -> np.ndarray:
        return logistic(self.logits)

    def active(self, threshold: float = 0.5) -> np.ndarray:
        return self.status > threshold

    def clamped(self, width: int, height: int) -> np.ndarray:
        return np.column_stack([np.clip(self.xy[:, 0], 0, width - 1), np.clip(self.xy[:, 1], 0, height - 1)])

    def to_vector(self) -> np.ndarray:
        """Keypoint-major layout ``x1, y1, l1, x2, y2, l2, ...``."""
        return np.column_stack([self.xy, self.logits]).reshape(-1)

    @classmethod
    def from_vector(cls, vec) -> "KeypointState":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1, 3)
        return cls(vec[:, :2].copy(), vec[:, 2].copy())

    def copy(self) -> "KeypointState":
        return KeypointState(self.xy.copy(), self.logits.copy())


def soft_argmax(feature_map) -> tuple[float, float]:
    f = np.asarray(feature_map, dtype=np.float64)
    if f.ndim != 2 or f.size == 0:
        raise ValueError("feature map must be a non-empty 2-D array")
    w = np.exp(f - f.max())
    w /= w.sum()
    ys, xs = np.indices(f.shape)
    return float((w * xs).sum()), float((w * ys).sum())


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-centre coordinates as (xs, ys), each (H, W)."""
    ys, xs = np.indices((height, width), dtype=np.float64)
    return xs, ys


def gaussian_field(x: float, y: float, sigma: float, dims: tuple[int, int]) -> np.ndarray:
    """Unnormalized Gaussian with peak 1 at (x, y); ``dims = (H, W)``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    xs, ys = pixel_grid(*dims)
    return np.exp(-((xs - x) ** 2 + (ys - y) ** 2) / (2.0 * sigma * sigma))


def gaussian_fields(xy, sigma: float, dims: tuple[int, int]) -> np.ndarray:
    """Stack of fields for (K, 2) coordinates, shape (K, H, W)."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    xs, ys = pixel_grid(*dims)
    dx = xs[None] - xy[:, 0, None, None]
    dy = ys[None] - xy[:, 1, None, None]
    return np.exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))


def heatmap(G, tau: float = TAU, eta: float = ETA) -> np.ndarray:
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must lie in [0, 1)")
    if eta <= 0:
        raise ValueError("eta must be positive")
    return np.clip(eta * np.maximum(np.asarray(G) - tau, 0.0), 0.0, 1.0)


@lru_cache(maxsize=64)
def heatmap_area(sigma: float = SIGMA_G, tau: float = TAU, eta: float = ETA) -> int:
    """Number of strictly positive pixels of a heatmap on a large canvas.

    The keypoint sits on a pixel centre of a canvas wide enough to hold the
    whole support disc, so the count does not depend on the image size.
    """
    params = HeatmapParams(sigma, tau, eta)
    r = params.support_radius
    if not math.isfinite(r):
        raise ValueError("tau = 0 gives an unbounded heatmap")
    half = int(math.ceil(r)) + 2
    size = 2 * half + 1
    G = gaussian_field(half, half, sigma, (size, size))
    return int(np.count_nonzero(heatmap(G, tau, eta) > 0))


def aggregate_mask(heatmaps, statuses) -> np.ndarray:
    """``min(sum_i h_i * s_i, 1)`` for heatmaps of shape (K, H, W)."""
    heatmaps = np.asarray(heatmaps, dtype=np.float64)
    statuses = np.asarray(statuses, dtype=np.float64).reshape(-1)
    if heatmaps.ndim != 3 or heatmaps.shape[0] != statuses.shape[0]:
        raise ValueError("need one status per (H, W) heatmap")
    return np.minimum(np.tensordot(statuses, heatmaps, axes=1), 1.0)
