"""Adversarial training loop.

Binds the networks, losses and the procedural data stream into a
checkpointed run: logistic D loss with lazy R1, non-saturating G loss, the
pattern shift loss on a cadence for conditional models, and an EMA copy of
the generator. Real and generated inputs are randomly cyclically
translated (maps and pattern together, same shift) before the
discriminator — valid because all data is periodic.
"""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from . import periodic_ops as pops
from .losses import d_logistic_loss, g_nonsat_loss, r1_penalty, shift_loss
from .material import MaterialClassSpec, STOCK_CLASSES
from .networks import (Discriminator, Generator, GeneratorConfig, LatentBundle,
                       save_generator_checkpoint)
from .synthetic import AugmentParams, SyntheticStream

STATE_SCHEMA = "tilemat-trainstate-v1"


@dataclass
class TrainSpec:
    class_name: str = "tile"
    resolution: int = 64
    batch_size: int = 8
    total_steps: int = 2500
    lr: float = 2.5e-3
    betas: tuple[float, float] = (0.0, 0.99)
    r1_gamma: float = 1.0
    r1_cadence: int = 16
    shift_weight: float = 5.0
    shift_cadence: int = 4
    ema_halflife_images: float = 10_000.0
    seed: int = 0
    dataset_dir: str | None = None  # None = on-the-fly procedural stream
    dataset_seed: int = 0
    checkpoint_cadence: int = 500
    log_cadence: int = 10
    channel_max: int = 128
    latent_dim: int = 128
    style_dim: int = 128

    def class_spec(self) -> MaterialClassSpec:
        return STOCK_CLASSES[self.class_name]

    def generator_config(self) -> GeneratorConfig:
        spec = self.class_spec()
        return GeneratorConfig(
            out_resolution=self.resolution,
            latent_dim=self.latent_dim,
            style_dim=self.style_dim,
            channel_max=self.channel_max,
            conditional=spec.conditional,
            pattern_channels=spec.pattern_channels,
            out_channels=spec.out_channels,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSpec":
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


class TrainState:
    """Everything needed for a deterministic resume."""

    def __init__(self, spec: TrainSpec, device="cpu"):
        self.spec = spec
        self.device = device
        torch.manual_seed(spec.seed)
        cfg = spec.generator_config()
        self.generator = Generator(cfg).to(device)
        self.generator_ema = copy.deepcopy(self.generator).eval()
        for p in self.generator_ema.parameters():
            p.requires_grad_(False)
        self.discriminator = Discriminator(cfg).to(device)
        # lazy-regularization correction of lr and betas (StyleGAN2)
        c = spec.r1_cadence / (spec.r1_cadence + 1)
        self.g_opt = torch.optim.Adam(self.generator.parameters(),
                                      lr=spec.lr, betas=spec.betas)
        self.d_opt = torch.optim.Adam(self.discriminator.parameters(),
                                      lr=spec.lr * c,
                                      betas=(spec.betas[0] ** c, spec.betas[1] ** c))
        self.step = 0
        self.rng = torch.Generator(device="cpu").manual_seed(spec.seed)

    def ema_update(self):
        beta = 0.5 ** (self.spec.batch_size / self.spec.ema_halflife_images)
        with torch.no_grad():
            for p_ema, p in zip(self.generator_ema.parameters(),
                                self.generator.parameters()):
                p_ema.lerp_(p, 1.0 - beta)
            for b_ema, b in zip(self.generator_ema.buffers(),
                                self.generator.buffers()):
                b_ema.copy_(b)


def _rand_shift(res: int, rng: torch.Generator) -> tuple[int, int]:
    s = torch.randint(0, res, (2,), generator=rng)
    return int(s[0]), int(s[1])


def _translate_pair(maps, pattern, shift):
    maps = pops.cyclic_translate(maps, shift)
    if pattern is not None:
        pattern = pops.cyclic_translate(pattern, shift)
    return maps, pattern


def _fresh_bundle(state: TrainState, batch: int) -> LatentBundle:
    spec = state.spec
    g = state.generator
    z = torch.randn(batch, spec.latent_dim, generator=state.rng).to(state.device)
    w = g.map_latent(z)
    noise = g.make_noise(batch, generator=state.rng)
    return LatentBundle(z, g.broadcast_w(w), [n.to(state.device) for n in noise])


def train_step(state: TrainState, batch: tuple[torch.Tensor, torch.Tensor | None],
               hooks: dict | None = None) -> dict:
    """One D step then one G step; returns the scalar metrics of the step."""
    spec = state.spec
    real, real_pattern = batch
    real = real.to(state.device)
    if real_pattern is not None:
        real_pattern = real_pattern.to(state.device)
    conditional = state.generator.cfg.conditional
    res = spec.resolution
    metrics: dict[str, float] = {"step": state.step}

    # --- discriminator step ---
    state.discriminator.requires_grad_(True)
    state.generator.requires_grad_(False)
    bundle = _fresh_bundle(state, real.shape[0])
    with torch.no_grad():
        fake = state.generator.synthesize(bundle, real_pattern if conditional else None)
    s_real = _rand_shift(res, state.rng)
    s_fake = _rand_shift(res, state.rng)
    real_t, real_pat_t = _translate_pair(real, real_pattern, s_real)
    fake_t, fake_pat_t = _translate_pair(fake, real_pattern, s_fake)
    if hooks and "on_discriminator_input" in hooks:
        hooks["on_discriminator_input"](real_t, real_pat_t, s_real, fake_t, fake_pat_t, s_fake)
    real_logits = state.discriminator(real_t, real_pat_t if conditional else None)
    fake_logits = state.discriminator(fake_t, fake_pat_t if conditional else None)
    d_loss = d_logistic_loss(real_logits, fake_logits)
    if state.step % spec.r1_cadence == 0:
        r1 = r1_penalty(real_t, state.discriminator,
                        real_pat_t if conditional else None, gamma=spec.r1_gamma)
        d_loss = d_loss + r1 * spec.r1_cadence
        metrics["r1"] = float(r1.detach())
    state.d_opt.zero_grad(set_to_none=True)
    d_loss.backward()
    state.d_opt.step()
    metrics["d_loss"] = float(d_loss.detach())

    # --- generator step ---
    state.discriminator.requires_grad_(False)
    state.generator.requires_grad_(True)
    bundle = _fresh_bundle(state, real.shape[0])
    fake = state.generator.synthesize(bundle, real_pattern if conditional else None)
    s_g = _rand_shift(res, state.rng)
    fake_t, fake_pat_t = _translate_pair(fake, real_pattern, s_g)
    g_loss = g_nonsat_loss(
        state.discriminator(fake_t, fake_pat_t if conditional else None))
    metrics["g_adv"] = float(g_loss.detach())
    if conditional and spec.shift_weight > 0 and state.step % spec.shift_cadence == 0:
        t = _rand_shift(res, state.rng)
        sl = shift_loss(state.generator, real_pattern, bundle, t)
        g_loss = g_loss + spec.shift_weight * sl
        metrics["shift_loss"] = float(sl.detach())
        metrics["weighted_shift_loss"] = float(spec.shift_weight * sl.detach())
    if not math.isfinite(float(g_loss.detach())) or not math.isfinite(metrics["d_loss"]):
        raise FloatingPointError(
            f"non-finite loss at step {state.step}: {metrics}")
    state.g_opt.zero_grad(set_to_none=True)
    g_loss.backward()
    state.g_opt.step()
    metrics["g_loss"] = float(g_loss.detach())

    state.ema_update()
    state.step += 1
    return metrics


def save_checkpoint(state: TrainState, path) -> None:
    torch.save({
        "schema": STATE_SCHEMA,
        "spec": state.spec.to_dict(),
        "step": state.step,
        "generator": state.generator.state_dict(),
        "generator_ema": state.generator_ema.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "g_opt": state.g_opt.state_dict(),
        "d_opt": state.d_opt.state_dict(),
        "rng": state.rng.get_state(),
    }, path)


def load_checkpoint(path, device="cpu") -> TrainState:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("schema") != STATE_SCHEMA:
        raise ValueError(f"train-state schema {blob.get('schema')!r} != {STATE_SCHEMA!r}")
    state = TrainState(TrainSpec.from_dict(blob["spec"]), device=device)
    state.step = blob["step"]
    state.generator.load_state_dict(blob["generator"])
    state.generator_ema.load_state_dict(blob["generator_ema"])
    state.discriminator.load_state_dict(blob["discriminator"])
    state.g_opt.load_state_dict(blob["g_opt"])
    state.d_opt.load_state_dict(blob["d_opt"])
    state.rng.set_state(blob["rng"])
    return state


def _disk_stream(dataset_dir: str):
    from .material import load_maps
    dirs = sorted(d for d in Path(dataset_dir).iterdir() if d.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no sample directories under {dataset_dir}")

    class DiskStream:
        def batch(self, indices):
            maps, pats = [], []
            for i in indices:
                m, p, _ = load_maps(dirs[int(i) % len(dirs)])
                maps.append(m.to_tensor())
                if p is not None:
                    pats.append(p)
            return torch.stack(maps), (torch.stack(pats) if pats else None)

    return DiskStream()


def train(spec: TrainSpec, out_dir, device="cpu", resume_from=None,
          hooks: dict | None = None) -> Path:
    """Run the loop to total_steps; returns the final checkpoint path.

    Writes JSON-lines metrics to out_dir/metrics.jsonl, full train states on
    the checkpoint cadence, and a generator-only checkpoint (EMA weights)
    for sampling/inversion.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = load_checkpoint(resume_from, device) if resume_from else \
        TrainState(spec, device)
    spec = state.spec
    if spec.dataset_dir:
        stream = _disk_stream(spec.dataset_dir)
    else:
        stream = SyntheticStream(spec.class_name, spec.resolution,
                                 seed=spec.dataset_seed)
    log_path = out_dir / "metrics.jsonl"
    mode = "a" if resume_from else "w"
    with open(log_path, mode) as log:
        while state.step < spec.total_steps:
            idx_base = state.step * spec.batch_size
            batch = stream.batch(range(idx_base, idx_base + spec.batch_size))
            metrics = train_step(state, batch, hooks=hooks)
            if state.step % spec.log_cadence == 0 or state.step == spec.total_steps:
                log.write(json.dumps(metrics) + "\n")
                log.flush()
            if state.step % spec.checkpoint_cadence == 0 or state.step == spec.total_steps:
                save_checkpoint(state, out_dir / f"state_{state.step:07d}.pt")
    final = out_dir / f"state_{state.step:07d}.pt"
    if not final.exists():
        save_checkpoint(state, final)
    save_generator_checkpoint(out_dir / "generator.pt", state.generator_ema,
                              spec.class_spec())
    return final
