"""Detection and tracking scores of keypoint trajectories against label masks.

DOP  fraction of present objects with an active keypoint on their mask.
TOP  fraction of present objects held by the same keypoint index at t-1 and t.
UAK  active keypoints on background, per frame.
RAK  |A_obj - A_k * n_obj| / A_obj averaged over present objects.

A keypoint is "on" the pixel at its coordinates rounded half up; only hard
active keypoints take part.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image_io import load_pgm

log = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    dop: float | None
    top: float | None
    uak: float
    rak: float | None
    a_k: float
    per_frame: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"dop": self.dop, "top": self.top, "uak": self.uak, "rak": self.rak,
                "a_k": self.a_k, "per_frame": self.per_frame}


def _labels_under(xy, active, mask) -> np.ndarray:
    """Label under each keypoint; -1 for inactive keypoints."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    h, w = mask.shape
    col = np.clip(np.floor(xy[:, 0] + 0.5).astype(int), 0, w - 1)
    row = np.clip(np.floor(xy[:, 1] + 0.5).astype(int), 0, h - 1)
    lab = mask[row, col].astype(int)
    return np.where(np.asarray(active, dtype=bool), lab, -1)


def _object_ids(mask) -> np.ndarray:
    ids = np.unique(mask)
    return ids[ids > 0]


def _check(positions, active, masks):
    if not (len(positions) == len(active) == len(masks)):
        raise ValueError(f"frame count mismatch: {len(positions)} trajectory frames, {len(masks)} masks")


def _mean(values):
    return float(np.mean(values)) if values else None


def dop(positions, active, masks) -> float | None:
    return _video_scores(positions, active, masks, a_k=1.0)["dop"]


def top(positions, active, masks) -> float | None:
    return _video_scores(positions, active, masks, a_k=1.0)["top"]


def uak(positions, active, masks) -> float:
    return _video_scores(positions, active, masks, a_k=1.0)["uak"]


def rak(positions, active, masks, a_k: float) -> float | None:
    if a_k <= 0:
        raise ValueError("A_k must be positive")
    return _video_scores(positions, active, masks, a_k)["rak"]


def a_k_default(masks) -> float:
    """Mean object area over every object in every frame."""
    areas = []
    for m in masks:
        m = np.asarray(m)
        areas.extend(int(np.count_nonzero(m == i)) for i in _object_ids(m))
    if not areas:
        raise ValueError("no objects in the masks; A_k is undefined")
    return float(np.mean(areas))


def _video_scores(positions, active, masks, a_k: float) -> dict:
    _check(positions, active, masks)
    det_ratio, trk_ratio, n_uk, rak_terms, frames = [], [], [], [], []
    prev = None
    for t, (xy, act, mask) in enumerate(zip(positions, active, masks)):
        mask = np.asarray(mask)
        lab = _labels_under(xy, act, mask)
        ids = _object_ids(mask)
        n_gt = len(ids)
        detected = [int(i) for i in ids if np.any(lab == i)]
        uk = int(np.count_nonzero(lab == 0))
        n_uk.append(uk)
        rec = {"frame": t, "n_gt": n_gt, "detected": len(detected), "uak": uk}
        if n_gt:
            det_ratio.append(len(detected) / n_gt)
        if t > 0:
            tracked = [int(i) for i in ids if np.any((lab == i) & (prev == i))]
            rec["tracked"] = len(tracked)
            if n_gt:
                trk_ratio.append(len(tracked) / n_gt)
        frame_rak = []
        for i in ids:
            area = int(np.count_nonzero(mask == i))
            if area == 0:
                log.warning("frame %d: object %d has zero area, skipped", t, i)
                continue
            n_obj = int(np.count_nonzero(lab == i))
            frame_rak.append(abs(area - a_k * n_obj) / area)
        rak_terms.extend(frame_rak)
        rec["rak"] = _mean(frame_rak)
        frames.append(rec)
        prev = lab
    return {"dop": _mean(det_ratio), "top": _mean(trk_ratio), "uak": float(np.mean(n_uk)) if n_uk else 0.0,
            "rak": _mean(rak_terms), "per_frame": frames}


def evaluate(videos, a_k: float | None = None) -> MetricsReport:
    """Score one or more videos, each a ``(positions, active, masks)`` triple.

    Per-video means are averaged over videos; videos where a metric is
    undefined (no objects) do not enter that metric's average.
    """
    videos = list(videos)
    if a_k is None:
        a_k = a_k_default([m for _, _, masks in videos for m in masks])
    if a_k <= 0:
        raise ValueError("A_k must be positive")
    per_video = [_video_scores(p, a, m, a_k) for p, a, m in videos]

    def avg(key):
        vals = [v[key] for v in per_video if v[key] is not None]
        return float(np.mean(vals)) if vals else None

    per_frame = per_video[0]["per_frame"] if len(per_video) == 1 else [
        {"video": k, **rec} for k, v in enumerate(per_video) for rec in v["per_frame"]]
    return MetricsReport(dop=avg("dop"), top=avg("top"), uak=avg("uak"), rak=avg("rak"),
                         a_k=float(a_k), per_frame=per_frame)


def load_masks(directory) -> list[np.ndarray]:
    paths = sorted(Path(directory).glob("mask_*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no mask_*.pgm files in {directory}")
    return [load_pgm(p)[0] for p in paths]
