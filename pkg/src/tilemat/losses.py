"""Training and inversion objectives.

Adversarial losses follow the non-saturating / logistic convention with an
R1 gradient penalty. The inversion objective combines a Gram-matrix style
loss over a fixed convolutional feature pyramid with an L1 loss between
16x16 box-downsampled images. The shift loss ties pattern translation to
output translation for conditional generators.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import periodic_ops as pops
from .networks import Generator, LatentBundle, PeriodicConv
from .render import downsample_image

EXTRACTOR_SCHEMA = "tilemat-extractor-v1"

# VGG-19-ish ladder: (channels, convs-in-stage); one tap after the first
# conv of each stage.
_EXTRACTOR_STAGES = ((32, 2), (64, 2), (128, 2), (128, 2), (128, 2))


def g_nonsat_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss: mean softplus(-logit)."""
    return F.softplus(-fake_logits).mean()


def d_logistic_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def r1_penalty(real_inputs: torch.Tensor, discriminator,
               pattern: torch.Tensor | None = None, gamma: float = 1.0) -> torch.Tensor:
    """(gamma/2) * E[ ||grad_input D||^2 ] on real samples.

    When a pattern is given, the penalty covers gradients w.r.t. both the
    maps and the pattern (they are one discriminator input).
    """
    inputs = [real_inputs.detach().requires_grad_(True)]
    if pattern is not None:
        inputs.append(pattern.detach().requires_grad_(True))
        logits = discriminator(inputs[0], inputs[1])
    else:
        logits = discriminator(inputs[0])
    grads = torch.autograd.grad(logits.sum(), inputs, create_graph=True)
    sq = sum(g.pow(2).reshape(g.shape[0], -1).sum(1) for g in grads)
    return 0.5 * gamma * sq.mean()


def shift_loss(generator: Generator, pattern: torch.Tensor,
               bundle: LatentBundle, shift: tuple[int, int]) -> torch.Tensor:
    """|| T(G(p, z, xi)) - G(T(p), z, T(xi)) ||_1 (mean absolute difference).

    T translates at the output resolution; each noise map is translated by
    the shift scaled down to its own resolution.
    """
    if not generator.cfg.conditional:
        raise ValueError("shift loss is defined only for conditional generators")
    out_res = generator.cfg.out_resolution
    a = generator.synthesize(bundle, pattern)
    a = pops.cyclic_translate(a, shift)
    if pattern.dim() == 3:
        pattern = pattern.unsqueeze(0)
    b = generator.synthesize(bundle.translate(shift, out_res),
                             pops.cyclic_translate(pattern, shift))
    return (a - b).abs().mean()


def gram_matrix(features: torch.Tensor) -> torch.Tensor:
    """G = F F^T / (C*H*W) of a (C,H,W) or (N,C,H,W) feature map."""
    squeeze = features.dim() == 3
    if squeeze:
        features = features.unsqueeze(0)
    n, c, h, w = features.shape
    f = features.reshape(n, c, h * w)
    g = torch.bmm(f, f.transpose(1, 2)) / (c * h * w)
    return g[0] if squeeze else g


class FeatureExtractor(nn.Module):
    """Fixed convolutional feature pyramid with five named taps.

    Circular padding keeps features of a periodic image periodic, which
    makes the Gram matrices exactly invariant to cyclic translation.
    Weights are frozen: either seeded-random (hermetic default) or loaded
    from a named-tensor archive of pretrained filters.
    """

    def __init__(self, seed: int = 0, in_channels: int = 3):
        super().__init__()
        g = torch.Generator().manual_seed(seed)
        convs, taps = [], []
        ch = in_channels
        idx = 0
        for out_ch, n_convs in _EXTRACTOR_STAGES:
            for j in range(n_convs):
                conv = PeriodicConv(ch, out_ch)
                with torch.no_grad():
                    conv.weight.copy_(torch.randn(conv.weight.shape, generator=g))
                convs.append(conv)
                if j == 0:
                    taps.append(idx)
                ch = out_ch
                idx += 1
        self.convs = nn.ModuleList(convs)
        self.tap_indices = taps
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, img: torch.Tensor) -> list[torch.Tensor]:
        """Tapped activations of a (3,H,W) or (N,3,H,W) image in [0,1]."""
        squeeze = img.dim() == 3
        x = img.unsqueeze(0) if squeeze else img
        x = x * 2.0 - 1.0
        feats = []
        stage_end = {sum(n for _, n in _EXTRACTOR_STAGES[:k + 1]) - 1
                     for k in range(len(_EXTRACTOR_STAGES))}
        for i, conv in enumerate(self.convs):
            x = F.relu(conv(x))
            if i in self.tap_indices:
                feats.append(x[0] if squeeze else x)
            if i in stage_end and x.shape[-1] > 1 and i < len(self.convs) - 1:
                x = pops.circular_downsample2x(x)
        return feats

    def save(self, path) -> None:
        torch.save({"schema": EXTRACTOR_SCHEMA, "state_dict": self.state_dict()}, path)

    def load(self, path) -> "FeatureExtractor":
        blob = torch.load(path, map_location="cpu", weights_only=True)
        if blob.get("schema") != EXTRACTOR_SCHEMA:
            raise ValueError(f"extractor schema {blob.get('schema')!r} is not "
                             f"{EXTRACTOR_SCHEMA!r}")
        self.load_state_dict(blob["state_dict"])
        return self


def style_loss(img_a: torch.Tensor, img_b: torch.Tensor,
               extractor: FeatureExtractor) -> torch.Tensor:
    """Sum over taps of the MSE between Gram matrices.

    The Gram normalization makes each term size-agnostic, so the two images
    may have different resolutions (outputs larger than the target).
    """
    feats_a = extractor(img_a)
    feats_b = extractor(img_b)
    total = None
    for fa, fb in zip(feats_a, feats_b):
        term = (gram_matrix(fa) - gram_matrix(fb)).pow(2).mean()
        total = term if total is None else total + term
    return total


def down16_l1(img_a: torch.Tensor, img_b: torch.Tensor, target: int = 16) -> torch.Tensor:
    """L1 between independently box-downsampled 16x16 versions."""
    return (downsample_image(img_a, target) - downsample_image(img_b, target)).abs().mean()
