"""Information-theoretic keypoint losses and their weighted combination.

All entropy maps are (H, W) arrays in nats; heatmaps and Gaussian fields are
stacked as (K, H, W). Degenerate denominators (blank or static frames) make
the affected ratio loss 0 instead of raising.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

STATIC_EPS = 1e-9


@dataclass(frozen=True)
class LossWeights:
    lambda_me: float = 100.0
    lambda_mce: float = 100.0
    lambda_it: float = 20.0
    lambda_o: float = 30.0
    lambda_s: float = 10.0
    kappa: float = 0.9
    m_d: float = 1.0
    beta: float = 4.0
    overlap_form: str = "hinge"

    def __post_init__(self):
        for name in ("lambda_me", "lambda_mce", "lambda_it", "lambda_o", "lambda_s", "m_d", "beta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")
        if self.overlap_form not in ("hinge", "paper"):
            raise ValueError("overlap_form must be 'hinge' or 'paper'")

    def single_frame(self) -> "LossWeights":
        """Weights restricted to the terms that need no previous frame."""
        d = asdict(self)
        d.update(lambda_mce=0.0, lambda_it=0.0)
        return LossWeights(**d)


@dataclass
class LossBreakdown:
    me: float
    mce: float
    it: float
    overlap: float
    status: float
    total: float
    it_terms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0))
    flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("me", "mce", "it", "overlap", "status", "total")}


def _coverage_loss(H, M, eps: float) -> tuple[float, bool]:
    H = np.asarray(H, dtype=np.float64)
    M = np.asarray(M, dtype=np.float64)
    if H.shape != M.shape:
        raise ValueError(f"map and mask shapes differ: {H.shape} vs {M.shape}")
    total = H.sum()
    if total <= eps:
        return 0.0, True
    return float(1.0 - (H * M).sum() / total), False


def masked_entropy_loss(H_t, M_t) -> float:
    """One minus the fraction of frame entropy under the aggregated mask."""
    return _coverage_loss(H_t, M_t, 0.0)[0]


def masked_conditional_entropy_loss(H_cond, M_t) -> float:
    return _coverage_loss(H_cond, M_t, STATIC_EPS)[0]


def reconstructed_entropy(H_t, H_prev, H_cond, h_t, h_prev, kappa: float) -> np.ndarray:
    """Source plus target entropy for each keypoint, shape (K, H, W)."""
    source = H_prev * (1.0 - h_prev) * (1.0 - h_t)
    target = H_t * h_t + kappa * H_cond * (1.0 - h_t)
    return source + target


def information_transport_loss(H_t, H_prev, H_cond, xy_t, xy_prev, heatmaps_t, heatmaps_prev,
                               weights: LossWeights, area: float):
    """Returns ``(total, per_keypoint_terms, squared_distances)``.

    Each term is the positive entropy deficit of the reconstruction,
    normalized by the heatmap area, plus ``m_d`` times the squared distance
    the keypoint travelled.
    """
    if area <= 0:
        raise ValueError("heatmap area must be positive")
    h_t = np.asarray(heatmaps_t, dtype=np.float64)
    h_prev = np.asarray(heatmaps_prev, dtype=np.float64)
    R = reconstructed_entropy(H_t, H_prev, H_cond, h_t, h_prev, weights.kappa)
    deficit = np.maximum(H_t[None] - np.minimum(H_t[None], R), 0.0).sum(axis=(1, 2)) / area
    d = ((np.asarray(xy_t, dtype=np.float64) - np.asarray(xy_prev, dtype=np.float64)) ** 2).sum(axis=1)
    terms = deficit + weights.m_d * d
    return float(terms.sum()), terms, d


def overlap_loss(gaussians, beta: float = 4.0, form: str = "hinge") -> float:
    G = np.asarray(gaussians, dtype=np.float64)
    k = G.shape[0]
    if k < 1:
        raise ValueError("need at least one keypoint")
    excess = G.sum(axis=0).max() - beta
    if form == "hinge":
        return max(excess, 0.0) / k
    if form == "paper":
        return min(excess, 0.0) / k
    raise ValueError(f"unknown overlap form {form!r}")


def status_loss(statuses) -> float:
    s = np.asarray(statuses, dtype=np.float64).reshape(-1)
    if s.size < 1:
        raise ValueError("need at least one keypoint")
    return float(s.mean())


def mint_loss(me: float, mce: float, it: float, overlap: float, status: float,
              weights: LossWeights, **extra) -> LossBreakdown:
    """Weighted sum; the status weight is scheduled by the covered fraction ``1 - me``."""
    total = (weights.lambda_me * me + weights.lambda_mce * mce + weights.lambda_it * it
             + weights.lambda_o * overlap + (1.0 - me) * weights.lambda_s * status)
    return LossBreakdown(me=me, mce=mce, it=it, overlap=overlap, status=status, total=float(total), **extra)
