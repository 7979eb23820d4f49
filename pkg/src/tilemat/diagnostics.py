"""Quantitative checks: tileability, equivariance, gradient correctness."""

from __future__ import annotations

import torch

from . import periodic_ops as pops
from .material import MaterialMaps
from .networks import Generator, LatentBundle


def seam_score(x) -> float:
    """Wrap-seam gradient magnitude relative to interior gradient magnitude.

    ~1 for periodic content, >> 1 for content with a hard seam. Accepts a
    MaterialMaps bundle or any (..., H, W) tensor. A constant input (zero
    interior gradient) scores 1 by definition.
    """
    if isinstance(x, MaterialMaps):
        x = x.to_tensor()
    t = x.detach()
    # finite differences between column/row W-1 and 0 cross the wrap seam
    seam_x = (t[..., :, -1] - t[..., :, 0]).abs()
    seam_y = (t[..., -1, :] - t[..., 0, :]).abs()
    seam = torch.cat([seam_x.flatten(), seam_y.flatten()]).mean()
    # interior excludes a 2-pixel band at the borders
    inner = t[..., 2:-2, 2:-2]
    int_x = (inner[..., :, 1:] - inner[..., :, :-1]).abs()
    int_y = (inner[..., 1:, :] - inner[..., :-1, :]).abs()
    interior = torch.cat([int_x.flatten(), int_y.flatten()]).mean()
    if interior < 1e-12:
        return 1.0
    return float(seam / interior)


def equivariance_error(generator: Generator, bundle: LatentBundle,
                       pattern: torch.Tensor | None,
                       shift: tuple[int, int]) -> float:
    """Max abs difference between shift-then-generate and generate-then-shift.

    The pattern and every noise map are shifted consistently; the shift
    should be a multiple of the generator's input-to-base stride for the
    architecture to be exactly equivariant.
    """
    out_res = generator.cfg.out_resolution
    with torch.no_grad():
        a = generator.synthesize(bundle, pattern)
        a = pops.cyclic_translate(a, shift)
        p_shifted = None
        if pattern is not None:
            p = pattern.unsqueeze(0) if pattern.dim() == 3 else pattern
            p_shifted = pops.cyclic_translate(p, shift)
        b = generator.synthesize(bundle.translate(shift, out_res), p_shifted)
    return float((a - b).abs().max())


def grad_check(fn, point: torch.Tensor, step: float = 1e-4) -> float:
    """Worst relative error of autograd gradients vs central finite differences.

    fn maps a tensor to a scalar; evaluated coordinate by coordinate, so
    keep `point` small. Relative error uses max(|analytic|, |fd|, 1e-6).
    """
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    x = point.detach().clone().requires_grad_(True)
    loss = fn(x)
    analytic = torch.autograd.grad(loss, x)[0]
    worst = 0.0
    flat = point.detach().clone().reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + step
        hi = float(fn(flat.reshape(point.shape)))
        flat[i] = orig - step
        lo = float(fn(flat.reshape(point.shape)))
        flat[i] = orig
        fd = (hi - lo) / (2 * step)
        a = float(analytic.reshape(-1)[i])
        err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
        worst = max(worst, err)
    return worst
