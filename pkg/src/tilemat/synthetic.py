"""Procedural, tileable-by-construction training data.

Stands in for authored node-graph datasets: every generator here emits the
same artifact contract (albedo, height, roughness, optional metallic,
optional condition pattern), periodic on a torus and bit-reproducible from
(params, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
import torch

from .material import MaterialMaps


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def periodic_value_noise(res: int, cells: int, octaves: int,
                         rng: np.random.Generator, persistence: float = 0.5
                         ) -> np.ndarray:
    """Multi-octave value noise whose lattice wraps with the image period.

    Returns a (res, res) array normalized to [0, 1].
    """
    out = np.zeros((res, res))
    amp, total = 1.0, 0.0
    c = cells
    for _ in range(octaves):
        c = min(c, res)
        lattice = rng.random((c, c))
        u = np.arange(res) / res * c
        i0 = np.floor(u).astype(int) % c
        i1 = (i0 + 1) % c
        t = _smoothstep(u - np.floor(u))
        v00 = lattice[np.ix_(i0, i0)]
        v01 = lattice[np.ix_(i0, i1)]
        v10 = lattice[np.ix_(i1, i0)]
        v11 = lattice[np.ix_(i1, i1)]
        ty, tx = t[:, None], t[None, :]
        layer = (v00 * (1 - ty) * (1 - tx) + v01 * (1 - ty) * tx
                 + v10 * ty * (1 - tx) + v11 * ty * tx)
        out += amp * layer
        total += amp
        amp *= persistence
        c *= 2
    out /= total
    lo, hi = out.min(), out.max()
    return (out - lo) / max(hi - lo, 1e-8)


def worley_distances(res: int, sites: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """F1 and F2 nearest-site distances on the torus, in pixels."""
    ys, xs = np.meshgrid(np.arange(res) + 0.5, np.arange(res) + 0.5, indexing="ij")
    pts = np.stack([ys.ravel(), xs.ravel()], axis=1)  # (res^2, 2)
    d = pts[:, None, :] - sites[None, :, :]
    d = (d + res / 2.0) % res - res / 2.0  # wrapped displacement
    dist = np.sqrt((d * d).sum(-1))
    dist.sort(axis=1)
    f1 = dist[:, 0].reshape(res, res)
    f2 = dist[:, min(1, dist.shape[1] - 1)].reshape(res, res)
    return f1, f2


@dataclass
class BrickParams:
    rows: int = 4
    columns: int = 4
    row_offset_fraction: float = 0.5
    grout_width_px: int = 2
    bevel_px: int = 1
    brick_height_range: tuple[float, float] = (0.6, 0.9)
    grout_height_range: tuple[float, float] = (0.1, 0.25)
    base_albedo: tuple[float, float, float] = (0.55, 0.28, 0.2)
    albedo_jitter: float = 0.12
    brick_roughness_range: tuple[float, float] = (0.35, 0.6)
    grout_roughness_range: tuple[float, float] = (0.65, 0.9)


@dataclass
class LeatherParams:
    cell_count: int = 24
    crease_width: float = 1.5
    crease_depth: float = 0.4
    base_albedo: tuple[float, float, float] = (0.45, 0.25, 0.15)
    albedo_jitter: float = 0.08
    roughness_range: tuple[float, float] = (0.4, 0.7)


@dataclass
class NoiseParams:
    cells: int = 4
    octaves: int = 4
    base_albedo: tuple[float, float, float] = (0.5, 0.48, 0.45)
    albedo_spread: float = 0.25
    roughness_range: tuple[float, float] = (0.3, 0.8)
    metallic_base: float = 0.8
    metallic_spread: float = 0.15


@dataclass
class AugmentParams:
    height_scale_range: tuple[float, float] = (0.8, 1.2)
    roughness_scale_range: tuple[float, float] = (0.8, 1.2)
    brightness_range: tuple[float, float] = (0.9, 1.1)
    hue_jitter: float = 0.05


def _np_to_maps(albedo: np.ndarray, height: np.ndarray, rough: np.ndarray,
                metallic: np.ndarray | None = None) -> MaterialMaps:
    def t(a, c):
        a = np.clip(a, 0.0, 1.0).astype(np.float32)
        a = a[None] if c == 1 else np.moveaxis(a, -1, 0)
        return torch.from_numpy(np.ascontiguousarray(a))
    return MaterialMaps(t(albedo, 3), t(height, 1), t(rough, 1),
                        None if metallic is None else t(metallic, 1))


def gen_brick(res: int, params: BrickParams | None = None, seed: int = 0
              ) -> tuple[MaterialMaps, torch.Tensor]:
    """Running-bond brick layout with a binary condition pattern (brick=1)."""
    p = params or BrickParams()
    rng = _rng(seed)
    if res % p.rows or res % p.columns:
        raise ValueError("rows and columns must divide the resolution")
    if (p.rows * p.row_offset_fraction) % 1.0 > 1e-9:
        raise ValueError("rows * row_offset_fraction must be an integer (y-tileability)")
    brick_h, brick_w = res // p.rows, res // p.columns
    if p.grout_width_px >= min(brick_h, brick_w):
        raise ValueError("grout width must be smaller than the brick pitch")

    ys, xs = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    row = ys // brick_h
    offset = np.round(row * p.row_offset_fraction * brick_w).astype(int)
    xp = (xs - offset) % res
    col = xp // brick_w
    # pixel-center distance to the nearest cell boundary, per axis
    ux = (xp % brick_w) + 0.5
    uy = (ys % brick_h) + 0.5
    dist_edge = np.minimum(np.minimum(ux, brick_w - ux), np.minimum(uy, brick_h - uy))
    brick_mask = dist_edge > p.grout_width_px / 2.0
    pattern = brick_mask.astype(np.float32)

    brick_height = rng.uniform(*p.brick_height_range, size=(p.rows, p.columns))
    grout_height = rng.uniform(*p.grout_height_range)
    bevel = np.clip((dist_edge - p.grout_width_px / 2.0) / max(p.bevel_px, 1e-6), 0, 1)
    height = np.where(brick_mask,
                      grout_height + bevel * (brick_height[row, col] - grout_height),
                      grout_height)
    height += 0.02 * periodic_value_noise(res, 8, 3, rng)

    base = np.asarray(p.base_albedo)
    jitter = rng.uniform(-p.albedo_jitter, p.albedo_jitter, size=(p.rows, p.columns, 3))
    brick_albedo = np.clip(base[None, None] + jitter, 0.02, 1.0)
    grout_albedo = np.full(3, 0.6)
    albedo = np.where(brick_mask[..., None], brick_albedo[row, col], grout_albedo)
    albedo *= 0.9 + 0.2 * periodic_value_noise(res, 16, 2, rng)[..., None]

    rough_brick = rng.uniform(*p.brick_roughness_range, size=(p.rows, p.columns))
    rough = np.where(brick_mask, rough_brick[row, col], rng.uniform(*p.grout_roughness_range))
    rough += 0.05 * (periodic_value_noise(res, 16, 2, rng) - 0.5)

    maps = _np_to_maps(albedo, height, rough)
    return maps, torch.from_numpy(pattern).unsqueeze(0)


def gen_leather(res: int, params: LeatherParams | None = None, seed: int = 0
                ) -> tuple[MaterialMaps, torch.Tensor]:
    """Cellular wrinkle field; pattern = grayscale crease intensity."""
    p = params or LeatherParams()
    rng = _rng(seed)
    sites = rng.uniform(0, res, size=(p.cell_count, 2))
    f1, f2 = worley_distances(res, sites)
    crease = np.exp(-((f2 - f1) / p.crease_width) ** 2)  # 1 on cell borders
    pattern = np.clip(crease, 0.0, 1.0).astype(np.float32)

    bump = 0.12 * np.clip(f1 / (res / np.sqrt(p.cell_count)), 0, 1)
    height = 0.75 - p.crease_depth * pattern - bump \
        + 0.05 * periodic_value_noise(res, 8, 3, rng)

    base = np.asarray(p.base_albedo)
    albedo = base[None, None] * (0.9 + 0.2 * periodic_value_noise(res, 8, 3, rng)[..., None])
    albedo = albedo * (1.0 - 0.25 * pattern[..., None])  # darker creases
    albedo += rng.uniform(-p.albedo_jitter, p.albedo_jitter, size=3)[None, None]

    rough = rng.uniform(*p.roughness_range) \
        + 0.1 * (periodic_value_noise(res, 16, 2, rng) - 0.5) + 0.15 * pattern

    maps = _np_to_maps(albedo, height, rough)
    return maps, torch.from_numpy(pattern).unsqueeze(0)


def _noise_material(res: int, p: NoiseParams, rng: np.random.Generator,
                    metallic: bool) -> MaterialMaps:
    height = periodic_value_noise(res, p.cells, p.octaves, rng)
    tint = periodic_value_noise(res, p.cells, p.octaves, rng)
    base = np.asarray(p.base_albedo)
    shade = rng.uniform(0.7, 1.1)
    albedo = base[None, None] * shade * (1.0 - p.albedo_spread * (tint[..., None] - 0.5))
    lo, hi = p.roughness_range
    rough = lo + (hi - lo) * periodic_value_noise(res, p.cells * 2, 3, rng)
    m = None
    if metallic:
        m = p.metallic_base + p.metallic_spread * (
            periodic_value_noise(res, p.cells, 2, rng) - 0.5)
    return _np_to_maps(albedo, height, rough, m)


def gen_stone(res: int, params: NoiseParams | None = None, seed: int = 0) -> MaterialMaps:
    return _noise_material(res, params or NoiseParams(), _rng(seed), metallic=False)


def gen_metal(res: int, params: NoiseParams | None = None, seed: int = 0) -> MaterialMaps:
    p = params or NoiseParams(base_albedo=(0.7, 0.66, 0.6), roughness_range=(0.15, 0.5))
    return _noise_material(res, p, _rng(seed), metallic=True)


def augment(maps: MaterialMaps, pattern: torch.Tensor | None = None, seed: int = 0,
            params: AugmentParams | None = None
            ) -> tuple[MaterialMaps, torch.Tensor | None]:
    """Shared random cyclic shift + height/roughness/color jitter.

    The translation is applied identically to the maps and the pattern so
    conditional pairs stay aligned.
    """
    p = params or AugmentParams()
    rng = _rng(seed)
    res = maps.resolution
    shift = (int(rng.integers(0, res)), int(rng.integers(0, res)))
    out = maps.translate(shift)
    h_scale = rng.uniform(*p.height_scale_range)
    r_scale = rng.uniform(*p.roughness_scale_range)
    gain = rng.uniform(*p.brightness_range)
    hue = rng.uniform(1 - p.hue_jitter, 1 + p.hue_jitter, size=3)
    albedo = (out.albedo * gain
              * torch.tensor(hue, dtype=out.albedo.dtype).view(3, 1, 1)).clamp(0, 1)
    result = MaterialMaps(albedo, (out.height * h_scale).clamp(0, 1),
                          (out.roughness * r_scale).clamp(0, 1),
                          out.metallic, amplitude=maps.amplitude)
    pat = None
    if pattern is not None:
        pat = torch.roll(pattern, shifts=shift, dims=(-2, -1))
    return result, pat


CLASS_PARAM_TYPES = {
    "tile": BrickParams,
    "leather": LeatherParams,
    "stone": NoiseParams,
    "metal": NoiseParams,
}


def generate_sample(class_name: str, res: int, seed: int, params=None
                    ) -> tuple[MaterialMaps, torch.Tensor | None]:
    """Dispatch by class name; unconditional classes return pattern=None."""
    if class_name == "tile":
        return gen_brick(res, params, seed)
    if class_name == "leather":
        return gen_leather(res, params, seed)
    if class_name == "stone":
        return gen_stone(res, params, seed), None
    if class_name == "metal":
        return gen_metal(res, params, seed), None
    raise ValueError(f"no procedural generator for class {class_name!r}")


class SyntheticStream:
    """Seeded, on-the-fly sample stream: pure function of (params, seed, index)."""

    def __init__(self, class_name: str, resolution: int, seed: int = 0,
                 params=None, augment_params: AugmentParams | None = None,
                 apply_augment: bool = True):
        self.class_name = class_name
        self.resolution = resolution
        self.seed = seed
        self.params = params
        self.augment_params = augment_params or AugmentParams()
        self.apply_augment = apply_augment

    def sample(self, index: int) -> tuple[MaterialMaps, torch.Tensor | None]:
        base = np.random.SeedSequence([self.seed, index]).generate_state(1)[0]
        maps, pattern = generate_sample(self.class_name, self.resolution,
                                        int(base), self.params)
        if self.apply_augment:
            maps, pattern = augment(maps, pattern, seed=int(base) + 1,
                                    params=self.augment_params)
        return maps, pattern

    def batch(self, indices) -> tuple[torch.Tensor, torch.Tensor | None]:
        maps, pats = [], []
        for i in indices:
            m, p = self.sample(int(i))
            maps.append(m.to_tensor())
            if p is not None:
                pats.append(p)
        x = torch.stack(maps)
        return x, (torch.stack(pats) if pats else None)
