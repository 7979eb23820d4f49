"""Material capture by generator inversion.

Finds u* = (w+, noise bank) minimizing a perceptual loss between the
rendered generated material and a single flash photograph, optionally
under a user-provided condition pattern. Generator weights stay frozen;
random cyclic translations of the maps on every other iteration make the
fit alignment-free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import periodic_ops as pops
from .losses import FeatureExtractor, down16_l1, style_loss
from .material import MaterialMaps
from .networks import Generator, LatentBundle, load_generator_checkpoint
from .render import RenderSetup, render


@dataclass
class InvertSpec:
    checkpoint: str = ""
    target: str = ""
    pattern: str | None = None
    iterations: int = 600
    lr_w: float = 0.02
    lr_noise: float = 0.05
    style_weight: float = 1.0
    l1_weight: float = 10.0
    translation_cadence: int = 2  # fresh random shift every other iteration
    down16_size: int = 16
    init_samples: int = 10_000
    seed: int = 0
    out_resolution: int | None = None  # may exceed the target resolution
    target_size: int = 64
    restarts: int = 1
    extractor_seed: int = 0
    extractor_weights: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "InvertSpec":
        return cls(**d)


@dataclass
class InversionResult:
    bundle: LatentBundle  # the best (w+, noise) iterate
    maps: MaterialMaps
    rendered: torch.Tensor
    trajectory: list[dict]
    best_loss: float
    initial_loss: float


def init_bundle(generator: Generator, n_samples: int = 10_000, seed: int = 0,
                device="cpu") -> LatentBundle:
    """Mean-w initialization: every w+ row set to the average mapped latent;
    noise drawn standard normal per layer."""
    g = torch.Generator(device="cpu").manual_seed(seed)
    cfg = generator.cfg
    with torch.no_grad():
        mean_w = torch.zeros(cfg.style_dim, device=device)
        chunk = 1024
        done = 0
        while done < n_samples:
            n = min(chunk, n_samples - done)
            z = torch.randn(n, cfg.latent_dim, generator=g).to(device)
            mean_w += generator.map_latent(z).sum(0)
            done += n
        mean_w /= n_samples
    w_plus = mean_w.view(1, 1, -1).repeat(1, generator.num_style_layers, 1)
    noise = generator.make_noise(1, generator=g, device=device)
    return LatentBundle(None, w_plus, noise)


def inversion_loss(maps: MaterialMaps, target: torch.Tensor, setup: RenderSetup,
                   extractor: FeatureExtractor, style_weight: float = 1.0,
                   l1_weight: float = 10.0,
                   shift: tuple[int, int] | None = None,
                   down16_size: int = 16) -> torch.Tensor:
    """style_weight * style + l1_weight * down16-L1 of render(maps) vs target.

    The style term is resolution-agnostic, so maps may be larger than the
    target; both images are box-downsampled to 16x16 independently for the
    L1 term.
    """
    if shift is not None:
        maps = maps.translate(shift)
    img = render(maps, setup)
    total = img.sum() * 0.0
    if style_weight != 0.0:
        total = total + style_weight * style_loss(img, target, extractor)
    if l1_weight != 0.0:
        total = total + l1_weight * down16_l1(img, target, down16_size)
    return total


def load_target(path, size: int) -> torch.Tensor:
    """Center-crop to square and box-resize to (3, size, size) in [0,1]."""
    img = Image.open(path).convert("RGB")
    w, h = img.size
    side = min(w, h)
    img = img.crop(((w - side) // 2, (h - side) // 2,
                    (w + side) // 2, (h + side) // 2))
    img = img.resize((size, size), Image.BOX)
    a = np.asarray(img).astype(np.float32) / 255.0
    return torch.from_numpy(np.moveaxis(a, -1, 0))


def load_pattern(path, size: int, channels: int) -> torch.Tensor:
    img = Image.open(path)
    img = img.convert("RGB" if channels == 3 else "L")
    if img.size != (size, size):
        img = img.resize((size, size), Image.BOX)
    a = np.asarray(img).astype(np.float32) / 255.0
    if a.ndim == 2:
        a = a[None]
    else:
        a = np.moveaxis(a, -1, 0)
    return torch.from_numpy(a)


def invert(generator: Generator, target: torch.Tensor,
           pattern: torch.Tensor | None = None,
           spec: InvertSpec | None = None,
           setup: RenderSetup | None = None,
           extractor: FeatureExtractor | None = None,
           device="cpu") -> InversionResult:
    """Gradient-based minimization over (w+, noise); weights stay frozen."""
    spec = spec or InvertSpec()
    cfg = generator.cfg
    if cfg.conditional and pattern is None:
        raise ValueError("pattern-required: conditional checkpoint needs a pattern")
    if not cfg.conditional and pattern is not None:
        raise ValueError("unconditional checkpoint does not take a pattern")
    if target.shape[-1] % 16 or target.shape[-2] % 16:
        raise ValueError(f"target size {tuple(target.shape[-2:])} must be 16-divisible")
    generator = generator.to(device).eval()
    for p in generator.parameters():
        p.requires_grad_(False)
    target = target.to(device)
    setup = setup or RenderSetup(image_size=cfg.out_resolution)
    if setup.image_size != cfg.out_resolution:
        raise ValueError("render setup image_size must match the generation domain")
    if extractor is None:
        extractor = FeatureExtractor(seed=spec.extractor_seed)
        if spec.extractor_weights:
            extractor.load(spec.extractor_weights)
    extractor = extractor.to(device)

    shift_rng = torch.Generator(device="cpu").manual_seed(spec.seed + 7)

    best_overall = None
    for restart in range(max(1, spec.restarts)):
        bundle = init_bundle(generator, spec.init_samples,
                             seed=spec.seed + restart, device=device)
        w_plus = bundle.w_plus.clone().requires_grad_(True)
        noise = [n.clone().requires_grad_(True) for n in bundle.noise]
        opt = torch.optim.Adam([
            {"params": [w_plus], "lr": spec.lr_w},
            {"params": noise, "lr": spec.lr_noise},
        ])
        trajectory = []
        best = None
        initial_loss = None
        for it in range(spec.iterations):
            cur = LatentBundle(None, w_plus, noise)
            out = generator.synthesize(cur, pattern)
            maps = MaterialMaps.from_tensor(out[0])
            shift = None
            if spec.translation_cadence and it % spec.translation_cadence == 1:
                s = torch.randint(0, cfg.out_resolution, (2,), generator=shift_rng)
                shift = (int(s[0]), int(s[1]))
            loss = inversion_loss(maps, target, setup, extractor,
                                  spec.style_weight, spec.l1_weight, shift,
                                  spec.down16_size)
            lv = float(loss.detach())
            if not np.isfinite(lv):
                raise FloatingPointError(
                    f"non-finite inversion loss at iteration {it}; "
                    f"trajectory: {trajectory[-5:]}")
            # track the best unshifted objective
            if shift is None:
                if initial_loss is None:
                    initial_loss = lv
                if best is None or lv < best[0]:
                    best = (lv, cur.detach_clone())
            trajectory.append({"iteration": it, "loss": lv,
                               "shifted": shift is not None})
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
        if best_overall is None or best[0] < best_overall[0]:
            best_overall = (best[0], best[1], trajectory, initial_loss)

    loss_val, best_bundle, trajectory, initial_loss = best_overall
    with torch.no_grad():
        out = generator.synthesize(best_bundle, pattern)
    maps = MaterialMaps.from_tensor(out[0])
    rendered = render(maps, setup)
    return InversionResult(best_bundle, maps, rendered, trajectory,
                           best_loss=loss_val, initial_loss=initial_loss)


def invert_from_spec(spec: InvertSpec, device="cpu") -> tuple[InversionResult, Generator]:
    generator, class_spec = load_generator_checkpoint(spec.checkpoint)
    if spec.out_resolution and spec.out_resolution != generator.cfg.out_resolution:
        raise ValueError(
            "out_resolution must match the checkpoint's generation domain; "
            "train or configure the generator at the desired size")
    target = load_target(spec.target, spec.target_size)
    pattern = None
    if generator.cfg.conditional:
        if not spec.pattern:
            raise ValueError("pattern-required: conditional checkpoint needs --pattern")
        pattern = load_pattern(spec.pattern, generator.cfg.out_resolution,
                               generator.cfg.pattern_channels)
    setup = RenderSetup(image_size=generator.cfg.out_resolution)
    result = invert(generator, target, pattern, spec, setup, device=device)
    return result, generator
