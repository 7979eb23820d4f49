"""Command-line entry point.

Subcommands: make-dataset | train | sample | invert | render | tile | check.
Each subcommand reads an optional JSON config plus flag overrides; all
randomness funnels through --seed. Failures exit nonzero with a single
machine-parsable "category: message" line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

CONFIG_SCHEMA_VERSION = 1


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise CliError("io-error", str(e))
    except json.JSONDecodeError as e:
        raise CliError("config-invalid", f"{path}: {e}")
    if not isinstance(cfg, dict):
        raise CliError("config-invalid", f"{path}: top level must be an object")
    version = cfg.get("schema_version")
    if version not in (None, CONFIG_SCHEMA_VERSION):
        raise CliError("config-invalid",
                       f"{path}: schema_version {version} unsupported")
    return cfg


def _apply_overrides(base: dict, args: argparse.Namespace, keys: dict) -> dict:
    """Flag overrides map one-to-one onto config keys; None means unset."""
    out = dict(base)
    for flag, key in keys.items():
        v = getattr(args, flag, None)
        if v is not None:
            out[key] = v
    return out


def _save_image(img: torch.Tensor, path) -> None:
    a = np.floor(img.detach().clamp(0, 1).cpu().numpy() * 255 + 0.5).astype(np.uint8)
    a = a[0] if a.shape[0] == 1 else np.moveaxis(a, 0, -1)
    Image.fromarray(a).save(path)


def cmd_make_dataset(args) -> int:
    from .material import save_maps, STOCK_CLASSES
    from .synthetic import SyntheticStream
    cfg = _load_config(args.config).get("dataset", {})
    cfg = _apply_overrides(cfg, args, {
        "class_name": "class_name", "count": "count",
        "resolution": "resolution", "seed": "seed"})
    name = cfg.get("class_name", "tile")
    if name not in STOCK_CLASSES:
        raise CliError("config-invalid", f"dataset.class_name: unknown class {name!r}")
    stream = SyntheticStream(name, int(cfg.get("resolution", 64)),
                             seed=int(cfg.get("seed", 0)))
    out = Path(args.out)
    for i in range(int(cfg.get("count", 8))):
        maps, pattern = stream.sample(i)
        save_maps(maps, out / f"sample_{i:05d}", pattern, STOCK_CLASSES[name])
    print(f"wrote {cfg.get('count', 8)} samples to {out}")
    return 0


def cmd_train(args) -> int:
    from .training import TrainSpec, train
    cfg = _load_config(args.config).get("train", {})
    cfg = _apply_overrides(cfg, args, {
        "class_name": "class_name", "resolution": "resolution",
        "steps": "total_steps", "batch_size": "batch_size", "seed": "seed"})
    try:
        spec = TrainSpec.from_dict(cfg)
    except (TypeError, ValueError, KeyError) as e:
        raise CliError("config-invalid", f"train: {e}")
    final = train(spec, args.out, resume_from=args.resume)
    print(f"final checkpoint: {final}")
    return 0


def cmd_sample(args) -> int:
    from .inversion import load_pattern
    from .material import save_maps, MaterialMaps
    from .networks import load_generator_checkpoint, LatentBundle
    from .render import RenderSetup, render
    gen, class_spec = load_generator_checkpoint(args.checkpoint)
    cfg = gen.cfg
    pattern = None
    if cfg.conditional:
        if not args.pattern:
            raise CliError("pattern-required",
                           "conditional checkpoint needs --pattern")
        pattern = load_pattern(args.pattern, cfg.out_resolution, cfg.pattern_channels)
    rng = torch.Generator().manual_seed(args.seed or 0)
    out = Path(args.out)
    setup = RenderSetup(image_size=cfg.out_resolution)
    for i in range(args.count):
        z = torch.randn(1, cfg.latent_dim, generator=rng)
        with torch.no_grad():
            w = gen.map_latent(z)
            bundle = LatentBundle(z, gen.broadcast_w(w), gen.make_noise(1, rng))
            t = gen.synthesize(bundle, pattern)
        maps = MaterialMaps.from_tensor(t[0])
        d = out / f"material_{i:04d}"
        save_maps(maps, d, pattern, class_spec)
        _save_image(render(maps, setup), d / "render.png")
    print(f"wrote {args.count} materials to {out}")
    return 0


def cmd_invert(args) -> int:
    from .inversion import InvertSpec, invert_from_spec
    from .material import save_maps
    cfg = _load_config(args.config).get("invert", {})
    cfg = _apply_overrides(cfg, args, {
        "checkpoint": "checkpoint", "target": "target", "pattern": "pattern",
        "size": "target_size", "iters": "iterations", "seed": "seed"})
    try:
        spec = InvertSpec.from_dict(cfg)
    except TypeError as e:
        raise CliError("config-invalid", f"invert: {e}")
    if not spec.checkpoint or not spec.target:
        raise CliError("usage", "invert needs --checkpoint and --target")
    try:
        result, gen = invert_from_spec(spec)
    except ValueError as e:
        if "pattern-required" in str(e):
            raise CliError("pattern-required", str(e))
        raise CliError("config-invalid", str(e))
    out = Path(args.out_dir)
    save_maps(result.maps, out)
    _save_image(result.rendered, out / "rerender.png")
    (out / "trajectory.json").write_text(json.dumps({
        "initial_loss": result.initial_loss,
        "best_loss": result.best_loss,
        "trajectory": result.trajectory,
    }, indent=2))
    print(f"best loss {result.best_loss:.6f} "
          f"(initial {result.initial_loss:.6f}); wrote {out}")
    return 0


def cmd_render(args) -> int:
    from .material import load_maps
    from .render import RenderSetup, render
    try:
        maps, _, _ = load_maps(args.in_dir)
    except (FileNotFoundError, ValueError) as e:
        raise CliError("io-error", str(e))
    setup = RenderSetup(image_size=maps.resolution)
    _save_image(render(maps, setup), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_tile(args) -> int:
    from .material import load_maps, save_maps, tile_maps
    from .render import RenderSetup, render
    try:
        maps, pattern, spec = load_maps(args.in_dir)
    except (FileNotFoundError, ValueError) as e:
        raise CliError("io-error", str(e))
    tiled = tile_maps(maps, args.nx, args.ny)
    tiled_pattern = pattern.repeat(1, args.ny, args.nx) if pattern is not None else None
    out = Path(args.out)
    save_maps(tiled, out, tiled_pattern, spec)
    from .periodic_ops import _is_pow2
    h, w = tiled.albedo.shape[-2:]
    if h == w and _is_pow2(h):  # the renderer only shades square pow2 samples
        setup = RenderSetup(image_size=tiled.resolution)
        _save_image(render(tiled, setup), out / "rerender.png")
    print(f"wrote {args.nx}x{args.ny} tiling to {out}")
    return 0


def cmd_check(args) -> int:
    from .diagnostics import seam_score
    from .material import load_maps
    try:
        maps, pattern, spec = load_maps(args.in_dir)
    except (FileNotFoundError, ValueError) as e:
        raise CliError("io-error", str(e))
    report = {
        "class": spec.name,
        "resolution": maps.resolution,
        "seam_score": {
            "albedo": seam_score(maps.albedo),
            "height": seam_score(maps.height),
            "roughness": seam_score(maps.roughness),
        },
    }
    if maps.metallic is not None:
        report["seam_score"]["metallic"] = seam_score(maps.metallic)
    if pattern is not None:
        report["seam_score"]["pattern"] = seam_score(pattern)
    report["tileable"] = all(0.8 <= v <= 1.25 for v in report["seam_score"].values())
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tilemat",
        description="Tileable material generation, training, and capture.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="root random seed")

    p = sub.add_parser("make-dataset", help="generate a procedural dataset")
    common(p)
    p.add_argument("--class", dest="class_name", help="tile|leather|stone|metal")
    p.add_argument("--count", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="run adversarial training")
    common(p)
    p.add_argument("--class", dest="class_name")
    p.add_argument("--resolution", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--resume", help="train-state checkpoint to resume from")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw random materials from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--pattern")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("invert", help="match a target photo by optimization")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--target")
    p.add_argument("--pattern")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int)
    p.add_argument("--iters", type=int)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("render", help="render a material directory to PNG")
    common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("tile", help="replicate a material nx x ny")
    common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--nx", type=int, default=2)
    p.add_argument("--ny", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("check", help="tileability report for a material directory")
    common(p)
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(func=cmd_check)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if getattr(args, "seed", None) is not None:
        torch.manual_seed(args.seed)
        np.random.seed(args.seed % 2**32)
    try:
        return args.func(args)
    except CliError as e:
        print(f"{e.category}: {e}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError) as e:
        print(f"io-error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
