"""Command-line entry point: ``entrokeys <command> ...``.

Exit codes: 0 success, 1 invalid input or failed check, 2 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfg
from .diffengine import gradcheck
from .discoverer import discover, entropy_maps, read_trajectory, write_overlays
from .entropy import conditional_entropy, emap_preview, fano_bound, mutual_information, save_emap, spatial_entropy
from .geometry import aggregate_mask, gaussian_fields, heatmap
from .image_io import PNMError, load_video, preprocess, save_pgm
from .losses import reconstructed_entropy
from .metrics import evaluate, load_masks
from .synth import PRESETS, ObjectSpec, SceneSpec, preset, render, with_seed, write_scene

log = logging.getLogger("entrokeys")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage mistakes are validation errors, not I/O errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


# -- entropy -----------------------------------------------------------------
def cmd_entropy(args, values) -> int:
    frames = load_video(args.frames_dir)
    spec = cfg.hist_of(values)
    threads = cfg.resolve_threads(values)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    maps = []
    for t, frame in enumerate(frames):
        H = spatial_entropy(preprocess(frame, values["blur_radius"]), spec, threads)
        save_emap(H, out / f"entropy_{t:06d}.emap")
        if args.preview:
            save_pgm(emap_preview(H), out / f"entropy_{t:06d}.pgm")
        maps.append(H)
    if args.conditional:
        for t in range(1, len(maps)):
            Hc = conditional_entropy(maps[t], maps[t - 1])
            save_emap(Hc, out / f"conditional_{t:06d}.emap")
            if args.preview:
                save_pgm(emap_preview(Hc), out / f"conditional_{t:06d}.pgm")
    log.info("wrote %d entropy maps to %s", len(maps), out)
    return EXIT_OK


# -- discover ----------------------------------------------------------------
def cmd_discover(args, values) -> int:
    frames = load_video(args.frames_dir)
    config = cfg.discovery_of(values)
    trajectory = discover(frames, config)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    trajectory.write_jsonl(args.out)
    if args.overlay:
        write_overlays(frames, trajectory, args.overlay)
    summary = {"frames": len(trajectory), "k": config.k,
               "active": [int(a.sum()) for a in trajectory.active], "flags": trajectory.flags}
    print(json.dumps(summary))
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------
def cmd_evaluate(args, values) -> int:
    trajectory = read_trajectory(args.trajectory, values["threshold"])
    masks = load_masks(args.masks_dir)
    if args.a_k is not None and args.a_k <= 0:
        raise UsageError("--a-k must be positive")
    report = evaluate([(trajectory.positions, trajectory.active, masks)], a_k=args.a_k)
    _emit(report.to_json(), args.out)
    return EXIT_OK


# -- synth -------------------------------------------------------------------
def _scene_from_json(path) -> SceneSpec:
    data = json.loads(Path(path).read_text())
    try:
        objects = tuple(ObjectSpec(center=tuple(o["center"]), radius=o.get("radius", 8.0),
                                   shape=o.get("shape", "disc"), velocity=tuple(o.get("velocity", (0, 0))),
                                   colors=tuple(tuple(c) for c in o.get("colors", ObjectSpec.colors)),
                                   lifetime=tuple(o["lifetime"]) if o.get("lifetime") else None)
                        for o in data.get("objects", []))
        return SceneSpec(width=data.get("width", 96), height=data.get("height", 96),
                         frames=data.get("frames", 40), background=tuple(data.get("background", (0.2, 0.2, 0.2))),
                         noise=data.get("noise", 0.0), objects=objects, seed=data.get("seed", 0))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"bad scene spec: {exc}") from None


def cmd_synth(args, values) -> int:
    if args.scene in PRESETS:
        spec = preset(args.scene, values["seed"])
    elif Path(args.scene).is_file():
        spec = _scene_from_json(args.scene)
        if "seed" in args.explicit:
            spec = with_seed(spec, values["seed"])
    else:
        raise UsageError(f"{args.scene!r} is neither a preset ({', '.join(PRESETS)}) nor a spec file")
    scene = render(spec)
    write_scene(scene, args.out_dir)
    print(json.dumps({"frames": len(scene.frames), "objects": scene.n_objects, "out_dir": str(args.out_dir)}))
    return EXIT_OK


# -- gradcheck ---------------------------------------------------------------
def cmd_gradcheck(args, values) -> int:
    seeds = range(values["seed"], values["seed"] + args.configs)
    reports = [gradcheck(s, args.size, args.keypoints, args.step, args.tolerance) for s in seeds]
    worst = max(r.max_rel_error for r in reports)
    out = reports[0].to_json() if len(reports) == 1 else {
        "configs": [dict(seed=s, **r.to_json()) for s, r in zip(seeds, reports)],
        "max_rel_error": worst, "tolerance": args.tolerance, "passed": worst < args.tolerance}
    _emit(out, args.out)
    return EXIT_OK if worst < args.tolerance else EXIT_INVALID


# -- diagnose ----------------------------------------------------------------
def frame_diagnostics(H, state, heat, threshold: float, H_prev=None, H_cond=None, prev=None,
                      kappa: float = 0.9) -> dict:
    """Covered entropy and error-probability bounds for one frame.

    ``me_bound`` uses the mask-covered entropy, ``mce_bound`` the covered
    conditional entropy and ``it_bounds`` each keypoint's transported mutual
    information ``sum min(H_t, R_i)``.
    """
    h, w = H.shape
    n = H.size
    fields = heatmap(gaussian_fields(state.clamped(w, h), heat.sigma, (h, w)), heat.tau, heat.eta)
    M = aggregate_mask(fields, state.status)
    covered = float((H * M).sum())
    total = float(H.sum())
    rec = {"covered_entropy": covered, "total_entropy": total,
           "covered_fraction": covered / total if total > 0 else None,
           "me_bound": fano_bound(covered, n),
           "active": int(state.active(threshold).sum())}
    if H_prev is not None:
        c_cov = float((H_cond * M).sum())
        c_tot = float(H_cond.sum())
        rec.update(covered_conditional=c_cov, conditional_fraction=c_cov / c_tot if c_tot > 0 else None,
                   mce_bound=fano_bound(c_cov, n))
        prev_fields = heatmap(gaussian_fields(prev.clamped(w, h), heat.sigma, (h, w)), heat.tau, heat.eta)
        R = reconstructed_entropy(H, H_prev, H_cond, fields, prev_fields, kappa)
        mi = [float(mutual_information(H, R[i]).sum()) for i in range(state.k)]
        rec["it_bounds"] = [fano_bound(v, n) for v in mi]
    return rec


def cmd_diagnose(args, values) -> int:
    config = cfg.discovery_of(values)
    trajectory = read_trajectory(args.trajectory, config.threshold)
    frames = load_video(args.frames_dir)
    if len(frames) != len(trajectory):
        raise UsageError(f"{len(trajectory)} trajectory frames but {len(frames)} video frames")
    H, H_cond = entropy_maps(frames, config)
    records = []
    for t, state in enumerate(trajectory.states):
        extra = {} if t == 0 else dict(H_prev=H[t - 1], H_cond=H_cond[t - 1], prev=trajectory.states[t - 1])
        rec = frame_diagnostics(H[t], state, config.heat, config.threshold, kappa=config.weights.kappa, **extra)
        records.append({"frame": t, **rec})
    _emit(records, args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------
def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration")
    g.add_argument("--config", metavar="FILE", help="flat key = value config file")
    g.add_argument("--dump-config", action="store_true", help="print the merged configuration and exit")
    g.add_argument("--weights", metavar="SPEC",
                   help="loss weights, e.g. me=100,mce=100,it=20,s=10,o=30,kappa=0.9")
    for key in cfg.KEYS:
        g.add_argument(f"--{key.name}", metavar="V", dest=f"key_{key.name}",
                       help=f"{key.help} (default {cfg.format_value(key.default)})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="entrokeys", description="Entropy-driven keypoint discovery on videos.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("entropy", help="per-frame entropy maps")
    p.add_argument("frames_dir")
    p.add_argument("out_dir")
    p.add_argument("--conditional", action="store_true", help="also write conditional maps per frame pair")
    p.add_argument("--preview", action="store_true", help="also write scaled PGM previews")
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("discover", help="fit keypoints to a video")
    p.add_argument("frames_dir")
    p.add_argument("out", help="trajectory JSONL path")
    p.add_argument("--overlay", metavar="DIR", help="write annotated frames here")
    p.set_defaults(func=cmd_discover)

    p = sub.add_parser("evaluate", help="score a trajectory against label masks")
    p.add_argument("trajectory")
    p.add_argument("masks_dir")
    p.add_argument("--a-k", type=float, dest="a_k", help="area per keypoint (default: mean object area)")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="render a synthetic video with masks")
    p.add_argument("scene", help=f"preset ({', '.join(PRESETS)}) or JSON scene file")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of the loss gradient")
    p.add_argument("--size", type=int, default=64, help="frame side (default 64)")
    p.add_argument("--keypoints", type=int, default=5, help="keypoints per frame (default 5)")
    p.add_argument("--configs", type=int, default=1, help="seeded configurations, starting at --seed")
    p.add_argument("--step", type=float, default=1e-3, help="central-difference step")
    p.add_argument("--tolerance", type=float, default=1e-4, help="max relative error")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("diagnose", help="coverage and error-probability bounds per frame")
    p.add_argument("trajectory")
    p.add_argument("frames_dir")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_diagnose)

    for p in sub.choices.values():
        _add_config_flags(p)
    return parser


def _values(args) -> dict:
    layers = []
    if args.config:
        layers.append(cfg.load_file(args.config))
    flags = {}
    if args.weights:
        flags.update(cfg.parse_weights(args.weights))
    for key in cfg.KEYS:
        raw = getattr(args, f"key_{key.name}")
        if raw is not None:
            flags[key.name] = cfg.parse_value(key.name, raw)
    layers.append(flags)
    args.explicit = set(flags)
    values = cfg.merge(*layers)
    cfg.discovery_of(values)  # validates every field
    return values


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = _values(args)
        if args.dump_config:
            sys.stdout.write(cfg.dump(values))
            return EXIT_OK
        if args.command == "gradcheck" and (args.size < 16 or args.keypoints < 1 or args.configs < 1):
            raise UsageError("gradcheck needs --size >= 16, --keypoints >= 1, --configs >= 1")
        return args.func(args, values)
    except (OSError, PNMError) as exc:
        print(f"entrokeys: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, ValueError) as exc:
        print(f"entrokeys: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
