"""Differentiable flash-photograph renderer.

Shades a planar material sample (spanning [-1,1]^2 at z=0) under a point
light collocated with the camera, using a Lambertian diffuse term plus a
GGX microfacet specular lobe. Every output pixel is differentiable with
respect to every material-map pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .material import MaterialMaps, height_to_normal

F0_DIELECTRIC = 0.04


def default_light_intensity(z: float = 2.414, tone_gamma: float = 2.2) -> float:
    """Power making a flat 0.5-albedo Lambertian plane render to 0.5 at center.

    At the center pixel: radiance = (albedo/pi) * 1 * I / z^2, and the
    tonemapped value is radiance^(1/gamma). Solve for I.
    """
    return (0.5 ** tone_gamma) * math.pi * z * z / 0.5


@dataclass
class RenderSetup:
    """Collocated flash camera/light over the unit material plane."""

    position: tuple[float, float, float] = (0.0, 0.0, 2.414)
    light_intensity: float = field(default_factory=default_light_intensity)
    fresnel_f0_dielectric: float = F0_DIELECTRIC
    tone_gamma: float = 2.2
    hard_clamp: bool = False
    image_size: int = 64
    # directional mode lights every point from the same direction with the
    # same power, so rendering commutes exactly with cyclic translation
    directional: bool = False

    def __post_init__(self):
        if self.position[2] <= 0:
            raise ValueError("camera/light must be above the plane (z > 0)")

    def to_dict(self) -> dict:
        return {
            "position": list(self.position),
            "light_intensity": self.light_intensity,
            "fresnel_f0_dielectric": self.fresnel_f0_dielectric,
            "tone_gamma": self.tone_gamma,
            "hard_clamp": self.hard_clamp,
            "image_size": self.image_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RenderSetup":
        d = dict(d)
        d["position"] = tuple(d["position"])
        return cls(**d)


def ggx_distribution(n_dot_h: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    a2 = alpha * alpha
    denom = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (math.pi * denom * denom).clamp_min(1e-12)


def smith_g(n_dot_i: torch.Tensor, n_dot_o: torch.Tensor, alpha: torch.Tensor) -> torch.Tensor:
    """Height-correlated Smith masking-shadowing for GGX."""
    a2 = alpha * alpha
    li = n_dot_o * torch.sqrt(n_dot_i * n_dot_i * (1 - a2) + a2)
    lo = n_dot_i * torch.sqrt(n_dot_o * n_dot_o * (1 - a2) + a2)
    return 2.0 * n_dot_i * n_dot_o / (li + lo).clamp_min(1e-12)


def schlick_fresnel(f0: torch.Tensor, cos_theta: torch.Tensor) -> torch.Tensor:
    return f0 + (1.0 - f0) * (1.0 - cos_theta).clamp(0.0, 1.0) ** 5


def brdf_eval(
    wi: torch.Tensor,
    wo: torch.Tensor,
    normal: torch.Tensor,
    albedo: torch.Tensor,
    roughness: torch.Tensor,
    metallic: torch.Tensor,
    f0_dielectric: float = F0_DIELECTRIC,
) -> torch.Tensor:
    """Lambertian + GGX microfacet BRDF, per steradian.

    Direction tensors are (..., 3, H, W) unit vectors; albedo (..., 3, H, W);
    roughness/metallic (..., 1, H, W). Roughness maps to GGX alpha as
    alpha = roughness^2. Returns 0 below the horizon.
    """
    n_dot_i = (normal * wi).sum(-3, keepdim=True)
    n_dot_o = (normal * wo).sum(-3, keepdim=True)
    h = wi + wo
    h = h / h.norm(dim=-3, keepdim=True).clamp_min(1e-12)
    n_dot_h = (normal * h).sum(-3, keepdim=True)
    i_dot_h = (wi * h).sum(-3, keepdim=True)

    alpha = (roughness * roughness).clamp_min(1e-4)
    d = ggx_distribution(n_dot_h.clamp(0, 1), alpha)
    g = smith_g(n_dot_i.clamp_min(1e-6), n_dot_o.clamp_min(1e-6), alpha)
    f0 = (1.0 - metallic) * f0_dielectric + metallic * albedo
    fr = schlick_fresnel(f0, i_dot_h)

    diffuse = (1.0 - metallic) * albedo / math.pi
    spec = d * g * fr / (4.0 * n_dot_i * n_dot_o).clamp_min(1e-12)
    valid = (n_dot_i > 0) & (n_dot_o > 0)
    return torch.where(valid, diffuse + spec, torch.zeros_like(diffuse))


def soft_clamp_unit(x: torch.Tensor) -> torch.Tensor:
    """Clamp to [0,1] with live gradients near the top: x - softplus(x-1)."""
    sharp = 20.0
    return x - F.softplus(sharp * (x - 1.0)) / sharp


def plane_grid(size: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Pixel-center world coordinates (3, size, size) on the z=0 plane."""
    coords = (torch.arange(size, dtype=dtype, device=device) + 0.5) / size * 2.0 - 1.0
    y, x = torch.meshgrid(coords, coords, indexing="ij")
    return torch.stack([x, y, torch.zeros_like(x)], dim=0)


def render_linear(maps: MaterialMaps, setup: RenderSetup) -> torch.Tensor:
    """Pre-tonemap radiance (3, S, S); render() adds clamp + gamma."""
    res = maps.resolution
    if setup.image_size != res:
        raise ValueError(
            f"image_size {setup.image_size} != map resolution {res}; "
            "maps are not resampled implicitly")
    dtype, device = maps.albedo.dtype, maps.albedo.device
    pos = torch.tensor(setup.position, dtype=dtype, device=device).view(3, 1, 1)
    if setup.directional:
        wi = (pos / pos.norm(dim=0, keepdim=True)).expand(3, res, res)
        dist2 = (pos * pos).sum(0, keepdim=True).expand(1, res, res)
    else:
        to_light = pos - plane_grid(res, dtype=dtype, device=device)
        dist2 = (to_light * to_light).sum(0, keepdim=True)
        wi = to_light / dist2.sqrt()

    normal = height_to_normal(maps.height, maps.amplitude)
    metallic = maps.metallic if maps.metallic is not None \
        else torch.zeros_like(maps.roughness)
    f = brdf_eval(wi, wi, normal, maps.albedo, maps.roughness, metallic,
                  setup.fresnel_f0_dielectric)
    n_dot_i = (normal * wi).sum(0, keepdim=True).clamp_min(0.0)
    return f * n_dot_i * setup.light_intensity / dist2


def render(maps: MaterialMaps, setup: RenderSetup) -> torch.Tensor:
    """Flash photograph of the material: (3, S, S) tonemapped to [0,1]."""
    radiance = render_linear(maps, setup)
    clamped = radiance.clamp(0.0, 1.0) if setup.hard_clamp else soft_clamp_unit(radiance)
    return clamped.clamp_min(1e-8) ** (1.0 / setup.tone_gamma)


def downsample_image(img: torch.Tensor, target: int = 16) -> torch.Tensor:
    """Exact box-average pooling down to target x target."""
    h, w = img.shape[-2], img.shape[-1]
    if h % target or w % target:
        raise ValueError(f"image size {h}x{w} not divisible by {target}")
    squeeze = img.dim() == 3
    if squeeze:
        img = img.unsqueeze(0)
    out = F.avg_pool2d(img, kernel_size=(h // target, w // target))
    return out[0] if squeeze else out
