"""Per-video keypoint discovery by gradient descent on keypoint parameters.

Frame 0 is fitted with the single-frame losses only; every later frame is
warm-started from its predecessor's solution and fitted with the full pair
loss while the predecessor stays frozen.
"""
from __future__ import annotations

import colorsys
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import expit, logit

from .diffengine import PairObjective
from .entropy import HistogramSpec, conditional_entropy, spatial_entropy
from .geometry import HeatmapParams, KeypointState, aggregate_mask, gaussian_field, gaussian_fields, heatmap
from .image_io import DEFAULT_BLUR_RADIUS, preprocess, save_ppm
from .losses import LossBreakdown, LossWeights

log = logging.getLogger(__name__)

INIT_LOGIT = 2.0
MAX_HALVINGS = 5
# stop once the loss improves by less than this (relative) over a window
STALL_TOL = 1e-6
STALL_WINDOW = 25
MIN_RATE = 1e-9
# status logits live in [-LOGIT_BOUND, LOGIT_BOUND]; past that the logistic
# is so flat that a keypoint could not switch off within one frame's budget
LOGIT_BOUND = 4.0
MERGE_SLACK = 0.1
MERGE_ITERATIONS = 60
RESPAWN_SHARE = 0.5
ENTROPY_FLOOR = 0.05


@dataclass(frozen=True)
class DiscoveryConfig:
    k: int = 25
    iterations: int = 300
    lr: float = 0.5
    momentum: float = 0.9
    clip: float = 10.0
    init: str = "entropy"
    seed: int = 0
    threshold: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)
    heat: HeatmapParams = field(default_factory=HeatmapParams)
    hist: HistogramSpec = field(default_factory=HistogramSpec)
    blur_radius: int = DEFAULT_BLUR_RADIUS
    threads: int | None = None
    # length, in pixels, in which travelled distance is measured; None means
    # one heatmap width (sigma), so m_d = 1 charges a sigma-long step 1
    movement_unit: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.init not in ("entropy", "grid"):
            raise ValueError("init must be 'entropy' or 'grid'")
        if self.movement_unit is not None and self.movement_unit <= 0:
            raise ValueError("movement unit must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    def pair_weights(self) -> LossWeights:
        """Weights handed to the objective, with m_d rescaled to pixel units."""
        unit = self.heat.sigma if self.movement_unit is None else self.movement_unit
        return replace(self.weights, m_d=self.weights.m_d / unit ** 2)


@dataclass
class Trajectory:
    states: list[KeypointState]
    losses: list[LossBreakdown]
    threshold: float = 0.5
    flags: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def positions(self) -> list[np.ndarray]:
        return [s.xy for s in self.states]

    @property
    def active(self) -> list[np.ndarray]:
        return [s.active(self.threshold) for s in self.states]

    def records(self) -> list[dict]:
        out = []
        for t, st in enumerate(self.states):
            s = st.status
            kps = [{"id": i, "x": float(st.xy[i, 0]), "y": float(st.xy[i, 1]), "status": float(s[i]),
                    "active": bool(s[i] > self.threshold)} for i in range(st.k)]
            out.append({"frame": t, "keypoints": kps})
        return out

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")


def read_trajectory(path, threshold: float = 0.5) -> Trajectory:
    """Parse a JSONL trajectory; the stored ``active`` flags are authoritative."""
    states = []
    with open(path) as fh:
        for n, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            kps = sorted(rec["keypoints"], key=lambda k: k["id"])
            xy = np.array([[k["x"], k["y"]] for k in kps], dtype=np.float64).reshape(-1, 2)
            logits = []
            for k in kps:
                s = min(max(float(k.get("status", 1.0 if k["active"] else 0.0)), 1e-12), 1 - 1e-12)
                if bool(k["active"]) != (s > threshold):
                    s = 1.0 if k["active"] else 0.0
                    s = min(max(s, 1e-12), 1 - 1e-12)
                logits.append(math.log(s / (1 - s)))
            states.append(KeypointState(xy, np.array(logits)))
    return Trajectory(states, [], threshold)


def entropy_maps(frames, config: DiscoveryConfig):
    """Entropy map per frame and conditional map per consecutive pair.

    Values at or below ``ENTROPY_FLOOR`` are set to zero: that is the level a
    constant region reaches through kernel tail leakage, and since the
    coverage losses are ratios, such a residue spread over a flat background
    would otherwise look like real content.
    """
    H = [spatial_entropy(preprocess(f, config.blur_radius), config.hist, config.threads) for f in frames]
    H = [np.where(h > ENTROPY_FLOOR, h, 0.0) for h in H]
    H_cond = [conditional_entropy(H[t], H[t - 1]) for t in range(1, len(H))]
    return H, H_cond


def initial_state(H, config: DiscoveryConfig) -> KeypointState:
    h, w = H.shape
    rng = np.random.default_rng(config.seed)
    total = float(H.sum())
    if config.init == "entropy" and total > 0:
        cdf = np.cumsum(H.ravel())
        idx = np.searchsorted(cdf, rng.random(config.k) * cdf[-1], side="right")
        idx = np.minimum(idx, H.size - 1)
        rows, cols = np.divmod(idx, w)
        xy = np.column_stack([cols, rows]).astype(np.float64)
    else:
        n = math.ceil(math.sqrt(config.k))
        gx = (np.arange(n) + 0.5) * w / n - 0.5
        gy = (np.arange(math.ceil(config.k / n)) + 0.5) * h / math.ceil(config.k / n) - 0.5
        xy = np.array([(x, y) for y in gy for x in gx][: config.k], dtype=np.float64)
    return KeypointState(xy, np.full(config.k, INIT_LOGIT))


def _project(theta, step):
    """Shorten the logit entries of ``step`` so they stay within the bound."""
    out = step.copy()
    out[2::3] = np.clip(theta[2::3] + step[2::3], -LOGIT_BOUND, LOGIT_BOUND) - theta[2::3]
    return out


def optimize(objective: PairObjective, start: KeypointState, prev: KeypointState | None,
             config: DiscoveryConfig) -> tuple[KeypointState, LossBreakdown]:
    """Momentum descent with gradient-norm clipping and step halving.

    Each iteration steps the coordinates and then the status logits, each
    block with its own momentum and its own rate factor. A step is only
    taken if it does not increase the loss, so the result is never worse
    than ``start``. The halving level a block reaches carries over to its
    next step and doubles back after each step accepted at once; without
    that memory a kink in the loss (the overlap hinge, say) rejects every
    iteration from the same point, and without the split that kink would
    also throttle the smooth status updates.
    """
    theta = start.to_vector()
    theta[2::3] = np.clip(theta[2::3], -LOGIT_BOUND, LOGIT_BOUND)
    bd, grad = objective.evaluate(KeypointState.from_vector(theta), prev)
    blocks = [np.zeros(theta.size, dtype=bool) for _ in range(2)]
    blocks[0][0::3] = blocks[0][1::3] = True
    blocks[1][2::3] = True
    velocity = [np.zeros_like(theta), np.zeros_like(theta)]
    rate = [1.0, 1.0]
    history = [bd.total]
    for _ in range(config.iterations):
        if len(history) > STALL_WINDOW and history[-STALL_WINDOW - 1] - history[-1] <= STALL_TOL * (1.0 + abs(history[-1])):
            break
        if max(rate) < MIN_RATE:
            break
        for b, mask in enumerate(blocks):
            g = np.where(mask, grad, 0.0)
            norm = float(np.linalg.norm(g))
            if norm > config.clip:
                g = g * (config.clip / norm)
            velocity[b] = config.momentum * velocity[b] - config.lr * rate[b] * g
            step = _project(theta, velocity[b])
            for halvings in range(MAX_HALVINGS + 1):
                cand = KeypointState.from_vector(theta + step)
                cbd, cgrad = objective.evaluate(cand, prev)
                if cbd.total <= bd.total:
                    break
                step = step * 0.5
            else:
                velocity[b][:] = 0.0
                rate[b] *= 0.5 ** (MAX_HALVINGS + 1)
                continue
            rate[b] = min(1.0, 2.0 * rate[b]) if halvings == 0 else rate[b] * 0.5 ** halvings
            theta, bd, grad = theta + step, cbd, cgrad
            velocity[b] = step
        history.append(bd.total)
    return KeypointState.from_vector(theta), bd


def _merged(state: KeypointState, i: int, j: int) -> KeypointState:
    """``j`` hands its status to ``i``, which moves to the status-weighted midpoint."""
    s = state.status
    out = state.copy()
    out.logits[i] = min(logit(min(s[i] + s[j], 1.0 - 1e-9)), LOGIT_BOUND)
    out.logits[j] = -LOGIT_BOUND
    out.xy[i] = (s[i] * state.xy[i] + s[j] * state.xy[j]) / (s[i] + s[j])
    return out


def _merge_pairs(state: KeypointState, radius: float) -> list[tuple[int, int]]:
    """Candidate (receiver, donor) pairs, nearest first."""
    s = state.status
    floor = expit(-LOGIT_BOUND) * 1.01
    pairs = []
    for i in range(state.k):
        for j in range(state.k):
            if i == j or s[j] > s[i] or (s[j] == s[i] and j < i) or s[j] <= floor:
                continue
            d = float(np.hypot(*(state.xy[i] - state.xy[j])))
            if d <= 2.0 * radius:
                pairs.append((d, i, j))
    return [(i, j) for _, i, j in sorted(pairs)]


def _merge_statuses(objective: PairObjective, state: KeypointState, bd: LossBreakdown,
                    prev: KeypointState | None, radius: float):
    """Greedy merges kept while the loss stays within ``MERGE_SLACK`` (relative)."""
    limit = bd.total + MERGE_SLACK * abs(bd.total)
    changed = False
    for i, j in _merge_pairs(state, radius):
        if state.logits[j] <= -LOGIT_BOUND or state.logits[i] <= -LOGIT_BOUND:
            continue
        cand = _merged(state, i, j)
        if objective.evaluate(cand, prev)[0].total <= limit:
            state, changed = cand, True
    return state if changed else None


def consolidate(objective: PairObjective, state: KeypointState, bd: LossBreakdown,
                prev: KeypointState | None, config: DiscoveryConfig):
    """Try every merge with a short re-optimization; keep those that end lower."""
    short = replace(config, iterations=MERGE_ITERATIONS)
    improved = True
    while improved:
        improved = False
        for i, j in _merge_pairs(state, config.heat.support_radius):
            cand, cbd = optimize(objective, _merged(state, i, j), prev, short)
            if cbd.total < bd.total:
                state, bd, improved = cand, cbd, True
                break
    return state, bd


def fit(objective: PairObjective, start: KeypointState, prev: KeypointState | None,
        config: DiscoveryConfig, thorough: bool = False) -> tuple[KeypointState, LossBreakdown]:
    """Descent followed by status merging.

    Keypoints sharing one object can split their status so that none of
    them crosses the threshold, or straddle it from two sides; descent
    cannot leave either arrangement. The cheap pass applies every merge
    that costs little and keeps the lot only if a second descent ends lower.
    ``thorough`` (used after a fresh placement) vets merges one by one.
    """
    state, bd = optimize(objective, start, prev, config)
    if thorough:
        state, bd = consolidate(objective, state, bd, prev, config)
    merged = _merge_statuses(objective, state, bd, prev, config.heat.support_radius)
    if merged is not None:
        state2, bd2 = optimize(objective, merged, prev, config)
        if bd2.total <= bd.total:
            return state2, bd2
    return state, bd


def _heat_kernel(heat: HeatmapParams) -> np.ndarray:
    r = int(math.ceil(heat.support_radius))
    return heatmap(gaussian_field(r, r, heat.sigma, (2 * r + 1, 2 * r + 1)), heat.tau, heat.eta)


def respawn(H, start: KeypointState, config: DiscoveryConfig) -> list[int]:
    """Move inactive keypoints of ``start`` onto uncovered entropy, in place.

    Placement is greedy on the entropy a fresh heatmap would cover. It stops
    once switching on one more keypoint would cost more status loss than the
    coverage it buys, or would buy less than ``RESPAWN_SHARE`` of what an
    active keypoint covers on average; the latter keeps respawns off the
    leftover fringes of objects that are already held. Returns the moved
    indices.
    """
    total = float(H.sum())
    idle = [i for i in range(start.k) if not start.active(config.threshold)[i]]
    if total <= 0.0 or not idle:
        return []
    w = config.weights
    h, wd = H.shape
    heat = config.heat
    on = start.active(config.threshold)
    fields = heatmap(gaussian_fields(start.clamped(wd, h)[on], heat.sigma, (h, wd)), heat.tau, heat.eta)
    # active keypoints count as fully on, so a half-status owner is not doubled
    uncovered = H * (1.0 - np.minimum(fields.sum(axis=0), 1.0))
    kernel = _heat_kernel(heat)
    price = w.lambda_s / start.k
    share = (1.0 - uncovered.sum() / total) / on.sum() if on.any() else 0.0
    moved = []
    for i in idle:
        gain = fftconvolve(uncovered, kernel, mode="same") / total
        row, col = np.unravel_index(int(np.argmax(gain)), gain.shape)
        if w.lambda_me * gain[row, col] <= price or gain[row, col] < RESPAWN_SHARE * share:
            break
        start.xy[i] = col, row
        start.logits[i] = INIT_LOGIT
        uncovered *= 1.0 - heatmap(gaussian_field(col, row, heat.sigma, (h, wd)), heat.tau, heat.eta)
        moved.append(i)
    return moved


def discover(frames, config: DiscoveryConfig = DiscoveryConfig()) -> Trajectory:
    """Fit keypoints frame by frame.

    Before each pair, idle keypoints may respawn on uncovered entropy; a
    respawned keypoint starts a new track, so its frozen previous position
    is taken to be its new one and no movement is charged for the jump.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    shape = np.asarray(frames[0]).shape
    for f in frames:
        if np.asarray(f).shape != shape:
            raise ValueError("frames must share dimensions")
    H, H_cond = entropy_maps(frames, config)
    flags = []
    weights = config.pair_weights()
    first = PairObjective(H[0], weights=weights, heat=config.heat)
    flags.extend(f"frame 0: {f}" for f in first.flags)
    state, bd = fit(first, initial_state(H[0], config), None, config, thorough=True)
    states, losses = [state], [bd]
    for t in range(1, len(frames)):
        obj = PairObjective(H[t], H[t - 1], H_cond[t - 1], weights, config.heat)
        flags.extend(f"frame {t}: {f}" for f in obj.flags)
        start = states[-1].copy()
        moved = respawn(H[t], start, config)
        prev = states[-1].copy()
        prev.xy[moved] = start.xy[moved]
        state, bd = fit(obj, start, prev, config, thorough=bool(moved))
        states.append(state)
        losses.append(bd)
        log.debug("frame %d total %.4f active %d respawned %s", t, bd.total,
                  int(state.active(config.threshold).sum()), moved)
    return Trajectory(states, losses, config.threshold, flags)


def _id_color(i: int) -> np.ndarray:
    # golden-ratio hue walk, fixed per id
    return np.array(colorsys.hsv_to_rgb((i * 0.618033988749895) % 1.0, 1.0, 1.0))


def render_overlay(frame, state: KeypointState, threshold: float = 0.5) -> np.ndarray:
    """Frame with a 3x3 square in a per-id colour on each active keypoint."""
    img = np.array(frame, dtype=np.float64, copy=True)
    h, w = img.shape[:2]
    active = state.active(threshold)
    for i in range(state.k):
        if not active[i]:
            continue
        cx = int(np.clip(np.floor(state.xy[i, 0] + 0.5), 0, w - 1))
        cy = int(np.clip(np.floor(state.xy[i, 1] + 0.5), 0, h - 1))
        img[max(cy - 1, 0):cy + 2, max(cx - 1, 0):cx + 2] = _id_color(i)
    return img


def write_overlays(frames, trajectory: Trajectory, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t, (frame, st) in enumerate(zip(frames, trajectory.states)):
        save_ppm(render_overlay(frame, st, trajectory.threshold), out / f"overlay_{t:06d}.ppm")
