"""Deterministic synthetic videos with ground-truth label masks.

Objects move linearly with elastic wall bounce at unit timestep and are
rendered in list order, so later objects occlude earlier ones. Positions are
integrated from frame 0 whether or not the object is alive yet.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .image_io import save_pgm, save_ppm

CHECKER_PITCH = 2


@dataclass(frozen=True)
class ObjectSpec:
    center: tuple[float, float]
    radius: float = 8.0
    shape: str = "disc"
    velocity: tuple[float, float] = (0.0, 0.0)
    colors: tuple[tuple[float, float, float], ...] = ((0.9, 0.3, 0.2), (0.35, 0.1, 0.05))
    lifetime: tuple[int, int] | None = None

    @property
    def textured(self) -> bool:
        return len(self.colors) > 1

    def alive(self, t: int) -> bool:
        return self.lifetime is None or self.lifetime[0] <= t <= self.lifetime[1]


@dataclass(frozen=True)
class SceneSpec:
    width: int = 96
    height: int = 96
    frames: int = 40
    background: tuple[float, float, float] = (0.2, 0.2, 0.2)
    noise: float = 0.0
    objects: tuple[ObjectSpec, ...] = field(default_factory=tuple)
    seed: int = 0

    def validate(self) -> None:
        if self.width < 3 or self.height < 3 or self.frames < 1:
            raise ValueError("canvas must be at least 3x3 with >= 1 frame")
        for i, ob in enumerate(self.objects, 1):
            if ob.shape not in ("disc", "square"):
                raise ValueError(f"object {i}: unknown shape {ob.shape!r}")
            if ob.radius < 3:
                raise ValueError(f"object {i}: radius must be >= 3 px")
            if max(abs(ob.velocity[0]), abs(ob.velocity[1])) > ob.radius:
                raise ValueError(f"object {i}: speed exceeds radius per frame")
            x, y = ob.center
            if not (0 <= x <= self.width - 1 and 0 <= y <= self.height - 1):
                raise ValueError(f"object {i}: initial position outside canvas")
            if ob.lifetime is not None and ob.lifetime[0] > ob.lifetime[1]:
                raise ValueError(f"object {i}: empty lifetime")


@dataclass
class RenderedScene:
    frames: list[np.ndarray]
    masks: list[np.ndarray]
    centers: np.ndarray  # (T, N_obj, 2)
    present: np.ndarray  # (T, N_obj) bool

    @property
    def n_objects(self) -> int:
        return self.centers.shape[1]


def _bounce(pos: float, vel: float, lo: float, hi: float) -> tuple[float, float]:
    pos += vel
    if hi <= lo:
        return min(max(pos, lo), hi), 0.0
    while pos < lo or pos > hi:
        if pos < lo:
            pos, vel = 2 * lo - pos, -vel
        else:
            pos, vel = 2 * hi - pos, -vel
    return pos, vel


def trajectories(spec: SceneSpec) -> np.ndarray:
    """Object centres per frame, shape (T, N_obj, 2)."""
    out = np.zeros((spec.frames, len(spec.objects), 2))
    for j, ob in enumerate(spec.objects):
        (x, y), (vx, vy) = ob.center, ob.velocity
        r = ob.radius
        for t in range(spec.frames):
            out[t, j] = x, y
            x, vx = _bounce(x, vx, min(r, x), max(spec.width - 1 - r, x))
            y, vy = _bounce(y, vy, min(r, y), max(spec.height - 1 - r, y))
    return out


def _footprint(ob: ObjectSpec, cx: float, cy: float, xs, ys):
    dx, dy = xs - cx, ys - cy
    if ob.shape == "disc":
        return dx * dx + dy * dy <= ob.radius ** 2
    return (np.abs(dx) <= ob.radius) & (np.abs(dy) <= ob.radius)


def render(spec: SceneSpec) -> RenderedScene:
    spec.validate()
    centers = trajectories(spec)
    ys, xs = np.indices((spec.height, spec.width), dtype=np.float64)
    rng = np.random.default_rng(spec.seed)
    bg = np.asarray(spec.background, dtype=np.float64)
    frames, masks = [], []
    present = np.zeros((spec.frames, len(spec.objects)), dtype=bool)
    for t in range(spec.frames):
        img = np.broadcast_to(bg, (spec.height, spec.width, 3)).copy()
        if spec.noise > 0:
            img += rng.uniform(-spec.noise, spec.noise, size=img.shape)
        label = np.zeros((spec.height, spec.width), dtype=np.uint8)
        for j, ob in enumerate(spec.objects):
            if not ob.alive(t):
                continue
            cx, cy = centers[t, j]
            inside = _footprint(ob, cx, cy, xs, ys)
            if ob.textured:
                cell = (np.floor((xs - cx) / CHECKER_PITCH) + np.floor((ys - cy) / CHECKER_PITCH)).astype(int)
                idx = cell % len(ob.colors)
                col = np.asarray(ob.colors, dtype=np.float64)[idx]
            else:
                col = np.broadcast_to(np.asarray(ob.colors[0], dtype=np.float64), img.shape)
            img[inside] = col[inside]
            label[inside] = j + 1
        present[t] = [np.any(label == j + 1) for j in range(len(spec.objects))]
        # keep frames on the 8-bit lattice so that PPM round trips are exact
        img = np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5) / 255.0
        frames.append(img)
        masks.append(label)
    return RenderedScene(frames, masks, centers, present)


_PALETTE = [
    ((0.95, 0.35, 0.25), (0.40, 0.10, 0.05)),
    ((0.25, 0.85, 0.35), (0.05, 0.35, 0.10)),
    ((0.30, 0.45, 0.95), (0.05, 0.10, 0.40)),
    ((0.95, 0.85, 0.25), (0.45, 0.35, 0.05)),
]


def preset(name: str, seed: int = 0) -> SceneSpec:
    p = _PALETTE
    if name == "static3":
        objs = (ObjectSpec((24, 28), 8, colors=p[0]), ObjectSpec((70, 30), 8, colors=p[1]),
                ObjectSpec((48, 72), 8, colors=p[2]))
        return SceneSpec(96, 96, 20, objects=objs, seed=seed)
    if name == "mixed":
        objs = (ObjectSpec((20, 20), 8, colors=p[0]), ObjectSpec((76, 76), 8, colors=p[1]),
                ObjectSpec((30, 66), 8, velocity=(2, -1), colors=p[2]),
                ObjectSpec((66, 30), 8, velocity=(-1, 2), colors=p[3]))
        return SceneSpec(96, 96, 40, objects=objs, seed=seed)
    if name == "comeandgo":
        objs = (ObjectSpec((24, 24), 8, colors=p[0]),
                ObjectSpec((60, 66), 8, velocity=(1, 0), colors=p[2], lifetime=(10, 40)))
        return SceneSpec(96, 96, 60, objects=objs, seed=seed)
    if name == "occlusion":
        objs = (ObjectSpec((16, 48), 8, velocity=(2, 0), colors=p[0]),
                ObjectSpec((80, 48), 8, velocity=(-2, 0), colors=p[2]))
        return SceneSpec(96, 96, 30, objects=objs, seed=seed)
    if name == "lowtexture":
        objs = (ObjectSpec((30, 30), 8, colors=((0.22, 0.2, 0.2),)),
                ObjectSpec((66, 60), 8, velocity=(1, 1), colors=((0.2, 0.22, 0.2),)))
        return SceneSpec(96, 96, 20, objects=objs, seed=seed)
    raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("static3", "mixed", "comeandgo", "occlusion", "lowtexture")


def with_seed(spec: SceneSpec, seed: int) -> SceneSpec:
    return replace(spec, seed=seed)


def write_scene(scene: RenderedScene, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maxval = max(1, scene.n_objects)
    for t, (frame, mask) in enumerate(zip(scene.frames, scene.masks)):
        save_ppm(frame, out / f"frame_{t:06d}.ppm")
        save_pgm(mask, out / f"mask_{t:06d}.pgm", maxval=maxval)
    with open(out / "centers.jsonl", "w") as fh:
        for t in range(len(scene.frames)):
            objs = [{"id": j + 1, "x": float(scene.centers[t, j, 0]), "y": float(scene.centers[t, j, 1]),
                     "present": bool(scene.present[t, j])} for j in range(scene.n_objects)]
            fh.write(json.dumps({"frame": t, "objects": objs}) + "\n")
