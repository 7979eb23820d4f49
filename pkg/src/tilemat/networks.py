"""Tileable generator and discriminator.

A StyleGAN2-flavoured generator (mapping network, optional pattern encoder,
modulated synthesis trunk with per-layer noise) and a matching
discriminator, built exclusively from the wrap-around ops in periodic_ops
so every intermediate feature map, and hence every output, is periodic.

The conditional variant replaces the learned initial constant with features
encoded from a tileable structure pattern, injected at out_resolution/16.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import periodic_ops as pops
from .material import MaterialClassSpec

CHECKPOINT_SCHEMA = "tilemat-generator-v1"


@dataclass
class GeneratorConfig:
    out_resolution: int = 64
    latent_dim: int = 128
    style_dim: int = 128
    channel_base: int = 2048
    channel_max: int = 128
    conditional: bool = False
    pattern_channels: int = 1
    out_channels: int = 5
    mapping_layers: int = 8
    # "zeros" builds the deliberately broken control network used by the
    # equivariance negative test.
    padding_mode: str = "circular"

    def __post_init__(self):
        if not pops._is_pow2(self.out_resolution) or self.out_resolution < 32:
            raise ValueError("out_resolution must be a power of two >= 32")
        if self.out_channels not in (5, 6):
            raise ValueError("out_channels must be 5 (a,h,r) or 6 (a,h,r,m)")
        if self.padding_mode not in ("circular", "zeros"):
            raise ValueError(f"unknown padding_mode {self.padding_mode!r}")

    @property
    def base_resolution(self) -> int:
        # pattern features enter at out/16 (32x32 for a 512 generator);
        # unconditional models start from a learned 4x4 constant
        return self.out_resolution // 16 if self.conditional else 4

    def channels(self, res: int) -> int:
        return max(8, min(self.channel_max, self.channel_base // res))

    @property
    def synthesis_resolutions(self) -> list[int]:
        res, out = [self.base_resolution], self.out_resolution
        while res[-1] < out:
            res.append(res[-1] * 2)
        return res

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        return cls(**d)


@dataclass
class LatentBundle:
    """The generator's random inputs: z, per-layer styles w+, noise bank."""

    z: torch.Tensor | None
    w_plus: torch.Tensor  # (B, num_style_layers, style_dim)
    noise: list[torch.Tensor]  # one (B, 1, r, r) map per synthesis conv

    @property
    def batch(self) -> int:
        return self.w_plus.shape[0]

    def shifted_noise(self, shift: tuple[int, int], out_resolution: int) -> list[torch.Tensor]:
        """Each noise map translated by the shift scaled to its resolution."""
        dy, dx = shift
        out = []
        for n in self.noise:
            r = n.shape[-1]
            s = (round(dy * r / out_resolution), round(dx * r / out_resolution))
            out.append(pops.cyclic_translate(n, s))
        return out

    def translate(self, shift: tuple[int, int], out_resolution: int) -> "LatentBundle":
        return LatentBundle(self.z, self.w_plus,
                            self.shifted_noise(shift, out_resolution))

    def detach_clone(self) -> "LatentBundle":
        return LatentBundle(
            None if self.z is None else self.z.detach().clone(),
            self.w_plus.detach().clone(),
            [n.detach().clone() for n in self.noise])


class EqualizedLinear(nn.Module):
    """Fully connected layer with runtime weight scaling."""

    def __init__(self, in_dim, out_dim, lr_mul=1.0, bias_init=0.0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_dim, in_dim) / lr_mul)
        self.bias = nn.Parameter(torch.full((out_dim,), float(bias_init)))
        self.scale = lr_mul / math.sqrt(in_dim)
        self.lr_mul = lr_mul

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias * self.lr_mul)


class MappingNetwork(nn.Module):
    """z -> w: pixel-norm then a stack of equalized FC + leaky ReLU."""

    def __init__(self, latent_dim, style_dim, num_layers=8, lr_mul=0.01):
        super().__init__()
        dims = [latent_dim] + [style_dim] * num_layers
        self.layers = nn.ModuleList(
            EqualizedLinear(dims[i], dims[i + 1], lr_mul=lr_mul)
            for i in range(num_layers))

    def forward(self, z):
        x = z * torch.rsqrt(z.pow(2).mean(dim=1, keepdim=True) + 1e-8)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2)
        return x


def _spatial_conv(x, weight, bias, padding_mode):
    if padding_mode == "circular":
        return pops.circular_conv2d(x, weight, bias)
    k = weight.shape[-1] // 2
    return F.conv2d(x, weight, bias, padding=k)


class PeriodicConv(nn.Module):
    """Plain (unmodulated) conv with equalized lr and selectable padding."""

    def __init__(self, in_ch, out_ch, kernel=3, padding_mode="circular"):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.padding_mode = padding_mode

    def forward(self, x):
        return _spatial_conv(x, self.weight * self.scale, self.bias, self.padding_mode)


class ModulatedConv(nn.Module):
    """Style-modulated conv; the spatial op is circular unless overridden."""

    def __init__(self, in_ch, out_ch, style_dim, kernel=3, demodulate=True,
                 padding_mode="circular"):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel))
        self.scale = 1.0 / math.sqrt(in_ch * kernel * kernel)
        self.affine = EqualizedLinear(style_dim, in_ch, bias_init=1.0)
        self.demodulate = demodulate
        self.padding_mode = padding_mode

    def forward(self, x, w):
        style = self.affine(w)
        if self.padding_mode == "circular":
            return pops.modulated_circular_conv2d(
                x, self.weight * self.scale, style, demodulate=self.demodulate)
        # zero-padded control path (intentionally breaks periodicity)
        n = x.shape[0]
        cout, cin, kh, kw = self.weight.shape
        ws = self.weight.unsqueeze(0) * self.scale * style.view(n, 1, cin, 1, 1)
        if self.demodulate:
            ws = ws * torch.rsqrt(ws.pow(2).sum(dim=(2, 3, 4), keepdim=True) + 1e-8)
        out = F.conv2d(x.reshape(1, n * cin, *x.shape[2:]),
                       ws.reshape(n * cout, cin, kh, kw),
                       padding=kh // 2, groups=n)
        return out.view(n, cout, *x.shape[2:])


class SynthesisLayer(nn.Module):
    """Modulated conv + learned-scale noise injection + bias + leaky ReLU."""

    def __init__(self, in_ch, out_ch, style_dim, resolution, padding_mode="circular"):
        super().__init__()
        self.conv = ModulatedConv(in_ch, out_ch, style_dim, padding_mode=padding_mode)
        # nonzero init keeps untrained outputs locally stationary, which the
        # tileability diagnostics rely on
        self.noise_scale = nn.Parameter(torch.full((1,), 0.25))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.resolution = resolution

    def forward(self, x, w, noise):
        x = self.conv(x, w)
        x = x + self.noise_scale * noise
        return F.leaky_relu(x + self.bias.view(1, -1, 1, 1), 0.2) * math.sqrt(2)


class ToMaps(nn.Module):
    """1x1 modulated conv head emitting raw (unsquashed) material channels."""

    def __init__(self, in_ch, out_ch, style_dim, padding_mode="circular"):
        super().__init__()
        self.conv = ModulatedConv(in_ch, out_ch, style_dim, kernel=1,
                                  demodulate=False, padding_mode=padding_mode)
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, x, w):
        return self.conv(x, w) + self.bias.view(1, -1, 1, 1)


class PatternEncoder(nn.Module):
    """Strided circular-conv ladder: pattern at out res -> features at out/16.

    Exactly equivariant to pattern shifts that are multiples of 16 pixels.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        res = cfg.out_resolution
        chans = [cfg.pattern_channels]
        self.convs = nn.ModuleList()
        for _ in range(4):
            out_ch = cfg.channels(res // 2)
            self.convs.append(PeriodicConv(chans[-1], out_ch,
                                           padding_mode=cfg.padding_mode))
            chans.append(out_ch)
            res //= 2
        self.out_channels = chans[-1]
        self.padding_mode = cfg.padding_mode

    def forward(self, p):
        x = p
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2) * math.sqrt(2)
            x = pops.circular_downsample2x(x)
        return x


class SynthesisNetwork(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        res_list = cfg.synthesis_resolutions
        base = res_list[0]
        in_ch = cfg.channels(base)
        if cfg.conditional:
            self.encoder_proj = PeriodicConv(
                cfg.channels(base), in_ch, kernel=1, padding_mode=cfg.padding_mode)
        else:
            self.const = nn.Parameter(torch.randn(1, in_ch, base, base))

        self.layers = nn.ModuleList()
        self.heads = nn.ModuleList()
        self.layer_resolutions: list[int] = []
        ch = in_ch
        for i, res in enumerate(res_list):
            out_ch = cfg.channels(res)
            n_convs = 1 if i == 0 else 2
            for _ in range(n_convs):
                self.layers.append(SynthesisLayer(
                    ch, out_ch, cfg.style_dim, res, padding_mode=cfg.padding_mode))
                self.layer_resolutions.append(res)
                ch = out_ch
            self.heads.append(ToMaps(ch, cfg.out_channels, cfg.style_dim,
                                     padding_mode=cfg.padding_mode))

    @property
    def num_style_layers(self) -> int:
        return len(self.layers) + len(self.heads)

    @property
    def noise_resolutions(self) -> list[int]:
        return list(self.layer_resolutions)

    def forward(self, w_plus, noise, phi=None):
        cfg = self.cfg
        if cfg.conditional:
            if phi is None:
                raise ValueError("conditional synthesis requires pattern features")
            x = self.encoder_proj(phi)
        else:
            x = self.const.expand(w_plus.shape[0], -1, -1, -1)
        maps = None
        li = 0  # running index over conv layers / styles
        wi = 0
        res_list = cfg.synthesis_resolutions
        for i, res in enumerate(res_list):
            if i > 0:
                x = pops.circular_upsample2x(x)
            n_convs = 1 if i == 0 else 2
            for _ in range(n_convs):
                x = self.layers[li](x, w_plus[:, wi], noise[li])
                li += 1
                wi += 1
            y = self.heads[i](x, w_plus[:, wi])
            wi += 1
            maps = y if maps is None else pops.circular_upsample2x(maps) + y
        return torch.sigmoid(maps)


class Generator(nn.Module):
    """Tileable material generator: maps (z [, pattern]) to SVBRDF channels."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.mapping = MappingNetwork(cfg.latent_dim, cfg.style_dim,
                                      num_layers=cfg.mapping_layers)
        self.encoder = PatternEncoder(cfg) if cfg.conditional else None
        self.synthesis = SynthesisNetwork(cfg)

    @property
    def num_style_layers(self) -> int:
        return self.synthesis.num_style_layers

    @property
    def noise_resolutions(self) -> list[int]:
        return self.synthesis.noise_resolutions

    def map_latent(self, z: torch.Tensor) -> torch.Tensor:
        return self.mapping(z)

    def encode_pattern(self, p: torch.Tensor) -> torch.Tensor:
        if self.encoder is None:
            raise ValueError("generator is unconditional; no pattern encoder")
        cfg = self.cfg
        if p.dim() == 3:
            p = p.unsqueeze(0)
        if p.shape[1] != cfg.pattern_channels or p.shape[-1] != cfg.out_resolution:
            raise ValueError(
                f"pattern shape {tuple(p.shape)} incompatible with config "
                f"({cfg.pattern_channels} ch at {cfg.out_resolution})")
        return self.encoder(p)

    def make_noise(self, batch: int, generator: torch.Generator | None = None,
                   device=None) -> list[torch.Tensor]:
        return [torch.randn(batch, 1, r, r, generator=generator, device=device)
                for r in self.noise_resolutions]

    def broadcast_w(self, w: torch.Tensor) -> torch.Tensor:
        return w.unsqueeze(1).expand(-1, self.num_style_layers, -1)

    def synthesize(self, bundle: LatentBundle, pattern: torch.Tensor | None = None
                   ) -> torch.Tensor:
        cfg = self.cfg
        if cfg.conditional != (pattern is not None):
            raise ValueError("pattern must be given exactly when the model is conditional")
        if bundle.w_plus.shape[1] != self.num_style_layers:
            raise ValueError(
                f"w+ has {bundle.w_plus.shape[1]} rows, expected {self.num_style_layers}")
        expected = self.noise_resolutions
        if len(bundle.noise) != len(expected) or any(
                n.shape[-1] != r for n, r in zip(bundle.noise, expected)):
            raise ValueError("noise bank does not match the resolution ladder")
        phi = None
        if cfg.conditional:
            if pattern.dim() == 3:
                pattern = pattern.unsqueeze(0)
            if pattern.shape[0] == 1 and bundle.batch > 1:
                pattern = pattern.expand(bundle.batch, -1, -1, -1)
            phi = self.encode_pattern(pattern)
        return self.synthesis(bundle.w_plus, bundle.noise, phi)

    def generate(self, z: torch.Tensor, pattern: torch.Tensor | None = None,
                 generator: torch.Generator | None = None) -> torch.Tensor:
        """Convenience path: map z, broadcast to w+, draw fresh noise, synthesize.

        Runs without gradient tracking; training and inversion drive
        `synthesize` directly with an explicit bundle.
        """
        with torch.no_grad():
            if z.dim() == 1:
                z = z.unsqueeze(0)
            w = self.map_latent(z)
            bundle = LatentBundle(z, self.broadcast_w(w),
                                  self.make_noise(z.shape[0], generator, z.device))
            return self.synthesize(bundle, pattern)


class DiscriminatorBlock(nn.Module):
    def __init__(self, in_ch, out_ch, padding_mode="circular"):
        super().__init__()
        self.conv0 = PeriodicConv(in_ch, in_ch, padding_mode=padding_mode)
        self.conv1 = PeriodicConv(in_ch, out_ch, padding_mode=padding_mode)
        self.skip = PeriodicConv(in_ch, out_ch, kernel=1, padding_mode=padding_mode)

    def forward(self, x):
        y = F.leaky_relu(self.conv0(x), 0.2) * math.sqrt(2)
        y = F.leaky_relu(self.conv1(y), 0.2) * math.sqrt(2)
        y = pops.circular_downsample2x(y)
        s = pops.circular_downsample2x(self.skip(x))
        return (y + s) / math.sqrt(2)


class Discriminator(nn.Module):
    """Realness critic over material channels (+ condition pattern)."""

    def __init__(self, cfg: GeneratorConfig, minibatch_stddev: bool = False):
        super().__init__()
        in_ch = cfg.out_channels + (cfg.pattern_channels if cfg.conditional else 0)
        self.in_channels = in_ch
        self.minibatch_stddev = minibatch_stddev
        res = cfg.out_resolution
        self.from_maps = PeriodicConv(in_ch, cfg.channels(res), kernel=1,
                                      padding_mode=cfg.padding_mode)
        blocks = []
        while res > 4:
            blocks.append(DiscriminatorBlock(cfg.channels(res), cfg.channels(res // 2),
                                             padding_mode=cfg.padding_mode))
            res //= 2
        self.blocks = nn.ModuleList(blocks)
        final_ch = cfg.channels(4) + (1 if minibatch_stddev else 0)
        self.final_conv = PeriodicConv(final_ch, cfg.channels(4),
                                       padding_mode=cfg.padding_mode)
        self.fc = EqualizedLinear(cfg.channels(4) * 16, cfg.channels(4))
        self.out = EqualizedLinear(cfg.channels(4), 1)

    def forward(self, maps: torch.Tensor, pattern: torch.Tensor | None = None
                ) -> torch.Tensor:
        x = maps if pattern is None else torch.cat([maps, pattern], dim=1)
        if x.shape[1] != self.in_channels:
            raise ValueError(
                f"discriminator expects {self.in_channels} channels, got {x.shape[1]}")
        x = F.leaky_relu(self.from_maps(x), 0.2) * math.sqrt(2)
        for block in self.blocks:
            x = block(x)
        if self.minibatch_stddev:
            std = x.std(dim=0, unbiased=False).mean().expand(
                x.shape[0], 1, x.shape[2], x.shape[3])
            x = torch.cat([x, std], dim=1)
        x = F.leaky_relu(self.final_conv(x), 0.2) * math.sqrt(2)
        x = F.leaky_relu(self.fc(x.flatten(1)), 0.2) * math.sqrt(2)
        return self.out(x).squeeze(1)


def audit_spatial_ops(module: nn.Module) -> list[str]:
    """Names of submodules whose spatial operator is not wrap-around.

    Empty list means every learned spatial op in the graph is circular.
    """
    offenders = []
    for name, m in module.named_modules():
        pm = getattr(m, "padding_mode", None)
        if isinstance(m, (PeriodicConv, ModulatedConv)) and pm != "circular":
            offenders.append(name)
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            offenders.append(name)  # raw torch convs are never allowed here
    return offenders


def save_generator_checkpoint(path, generator: Generator,
                              class_spec: MaterialClassSpec) -> None:
    torch.save({
        "schema": CHECKPOINT_SCHEMA,
        "config": generator.cfg.to_dict(),
        "class_spec": class_spec.to_dict(),
        "state_dict": generator.state_dict(),
    }, path)


def load_generator_checkpoint(path) -> tuple[Generator, MaterialClassSpec]:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(
            f"checkpoint schema {blob.get('schema')!r} != {CHECKPOINT_SCHEMA!r}")
    gen = Generator(GeneratorConfig.from_dict(blob["config"]))
    gen.load_state_dict(blob["state_dict"])
    spec = MaterialClassSpec.from_dict(blob["class_spec"])
    return gen, spec
