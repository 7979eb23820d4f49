"""SVBRDF map bundles, derived normals, and disk I/O.

A material is a set of per-pixel maps (albedo, height, roughness and an
optional metallic channel), all periodic on a torus and all valued in
[0, 1]. Normals are always derived from the height map, never stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .periodic_ops import _is_pow2, cyclic_translate

ALBEDO_GAMMA = 2.2
CLASS_NAMES = ("tile", "leather", "stone", "metal", "custom")


@dataclass(frozen=True)
class MaterialClassSpec:
    """Per-category contract: conditioning and channel layout."""

    name: str
    conditional: bool
    pattern_channels: int = 1
    has_metallic: bool = False

    def __post_init__(self):
        if self.name not in CLASS_NAMES:
            raise ValueError(f"unknown material class {self.name!r}")
        if self.pattern_channels not in (1, 3):
            raise ValueError("pattern_channels must be 1 or 3")

    @property
    def out_channels(self) -> int:
        return 6 if self.has_metallic else 5

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "conditional": self.conditional,
            "pattern_channels": self.pattern_channels,
            "has_metallic": self.has_metallic,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaterialClassSpec":
        return cls(**d)


# The four stock categories: tile/leather conditional, stone/metal not,
# metal carries a metallic channel.
STOCK_CLASSES = {
    "tile": MaterialClassSpec("tile", conditional=True, pattern_channels=1),
    "leather": MaterialClassSpec("leather", conditional=True, pattern_channels=1),
    "stone": MaterialClassSpec("stone", conditional=False),
    "metal": MaterialClassSpec("metal", conditional=False, has_metallic=True),
}


@dataclass
class MaterialMaps:
    """Albedo (3,H,W), height (1,H,W), roughness (1,H,W), optional metallic (1,H,W).

    All maps share one power-of-two resolution, live in [0,1] and are
    interpreted as periodic.
    """

    albedo: torch.Tensor
    height: torch.Tensor
    roughness: torch.Tensor
    metallic: torch.Tensor | None = None
    amplitude: float = 0.05

    def __post_init__(self):
        h, w = self.albedo.shape[-2:]
        # tilings may be rectangular; generation and rendering work on
        # square power-of-two maps and validate that themselves
        if h < 1 or w < 1:
            raise ValueError(f"bad resolution {h}x{w}")
        for name, t, c in [
            ("albedo", self.albedo, 3),
            ("height", self.height, 1),
            ("roughness", self.roughness, 1),
            ("metallic", self.metallic, 1),
        ]:
            if t is None:
                continue
            if t.shape != (c, h, w):
                raise ValueError(f"{name} shape {tuple(t.shape)} != ({c},{h},{w})")

    @property
    def resolution(self) -> int:
        h, w = self.albedo.shape[-2:]
        if h != w or not _is_pow2(h):
            raise ValueError(f"{h}x{w} maps have no square power-of-two resolution")
        return w

    @property
    def channels(self) -> int:
        return 6 if self.metallic is not None else 5

    def to_tensor(self) -> torch.Tensor:
        """Stack into a single (C,H,W) tensor, a:3 h:1 r:1 [m:1]."""
        parts = [self.albedo, self.height, self.roughness]
        if self.metallic is not None:
            parts.append(self.metallic)
        return torch.cat(parts, dim=0)

    @classmethod
    def from_tensor(cls, t: torch.Tensor, amplitude: float = 0.05) -> "MaterialMaps":
        if t.dim() == 4:
            if t.shape[0] != 1:
                raise ValueError("from_tensor takes a single sample")
            t = t[0]
        if t.shape[0] not in (5, 6):
            raise ValueError(f"expected 5 or 6 channels, got {t.shape[0]}")
        metallic = t[5:6] if t.shape[0] == 6 else None
        return cls(t[0:3], t[3:4], t[4:5], metallic, amplitude=amplitude)

    def clamp(self) -> "MaterialMaps":
        return MaterialMaps.from_tensor(self.to_tensor().clamp(0.0, 1.0), self.amplitude)

    def translate(self, shift: tuple[int, int]) -> "MaterialMaps":
        t = cyclic_translate(self.to_tensor().unsqueeze(0), shift)[0]
        return MaterialMaps.from_tensor(t, self.amplitude)


def height_to_normal(height: torch.Tensor, amplitude: float = 0.05) -> torch.Tensor:
    """Central-finite-difference normals of a periodic height field.

    height: (..., 1, H, W) in [0,1]; the sample plane spans [-1,1]^2 so the
    pixel pitch is 2/H. Returns unit normals (..., 3, H, W).
    """
    h = height
    hh, ww = h.shape[-2], h.shape[-1]
    dx = (torch.roll(h, -1, dims=-1) - torch.roll(h, 1, dims=-1)) / (2 * (2.0 / ww))
    dy = (torch.roll(h, -1, dims=-2) - torch.roll(h, 1, dims=-2)) / (2 * (2.0 / hh))
    one = torch.ones_like(dx)
    n = torch.cat([-amplitude * dx, -amplitude * dy, one], dim=-3)
    return n / n.norm(dim=-3, keepdim=True)


def tile_maps(maps: MaterialMaps, nx: int, ny: int) -> MaterialMaps:
    """Replicate the maps nx times horizontally and ny times vertically."""
    if nx < 1 or ny < 1:
        raise ValueError("tile counts must be >= 1")
    t = maps.to_tensor().repeat(1, ny, nx)
    return MaterialMaps.from_tensor(t, maps.amplitude)


def _quantize(x: np.ndarray, levels: int) -> np.ndarray:
    # round-half-up, not banker's rounding
    return np.floor(x.clip(0, 1) * levels + 0.5).clip(0, levels)


def _to_u8(x: torch.Tensor) -> np.ndarray:
    return _quantize(x.detach().cpu().numpy(), 255).astype(np.uint8)


def _save_png8(x: torch.Tensor, path: Path) -> None:
    a = _to_u8(x)
    a = a[0] if a.shape[0] == 1 else np.moveaxis(a, 0, -1)
    Image.fromarray(a).save(path)


def _load_png(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path))


def save_maps(maps: MaterialMaps, out_dir, pattern: torch.Tensor | None = None,
              class_spec: MaterialClassSpec | None = None) -> None:
    """Write the fixed directory layout: PNG maps plus meta.json.

    Albedo is gamma-encoded 8-bit RGB; height is 16-bit gray (gradients are
    quantization-sensitive); roughness/metallic/pattern are stored linearly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _save_png8(maps.albedo.clamp(0, 1).pow(1.0 / ALBEDO_GAMMA), out_dir / "albedo.png")
    h16 = _quantize(maps.height[0].detach().cpu().numpy(), 65535).astype(np.uint16)
    Image.fromarray(h16).save(out_dir / "height.png")
    _save_png8(maps.roughness, out_dir / "roughness.png")
    if maps.metallic is not None:
        _save_png8(maps.metallic, out_dir / "metallic.png")
    if pattern is not None:
        _save_png8(pattern if pattern.dim() == 3 else pattern.unsqueeze(0),
                   out_dir / "pattern.png")
    if class_spec is None:
        name = "metal" if maps.metallic is not None else "custom"
        class_spec = MaterialClassSpec(
            name, conditional=pattern is not None,
            pattern_channels=(pattern.shape[0] if pattern is not None else 1),
            has_metallic=maps.metallic is not None)
    h, w = maps.albedo.shape[-2:]
    meta = {
        "class_spec": class_spec.to_dict(),
        "amplitude": maps.amplitude,
        "resolution": w if h == w else [h, w],
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2))


def load_maps(in_dir) -> tuple[MaterialMaps, torch.Tensor | None, MaterialClassSpec]:
    """Inverse of save_maps. Returns (maps, pattern-or-None, class spec)."""
    in_dir = Path(in_dir)
    meta_path = in_dir / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing meta.json in {in_dir}")
    meta = json.loads(meta_path.read_text())
    spec = MaterialClassSpec.from_dict(meta["class_spec"])
    r = meta["resolution"]
    res_hw = tuple(r) if isinstance(r, list) else (int(r), int(r))

    def read(name: str, required: bool) -> np.ndarray | None:
        path = in_dir / name
        if not path.exists():
            if required:
                raise FileNotFoundError(f"missing map {name} in {in_dir}")
            return None
        a = _load_png(path)
        if a.shape[:2] != res_hw:
            raise ValueError(f"{name} resolution {a.shape[:2]} != {res_hw}")
        return a

    albedo = read("albedo.png", True).astype(np.float32) / 255.0
    albedo = torch.from_numpy(np.moveaxis(albedo, -1, 0)) ** ALBEDO_GAMMA
    height = torch.from_numpy(
        read("height.png", True).astype(np.float32) / 65535.0).unsqueeze(0)
    rough = torch.from_numpy(
        read("roughness.png", True).astype(np.float32) / 255.0).unsqueeze(0)
    metallic = None
    m = read("metallic.png", required=spec.has_metallic)
    if m is not None:
        metallic = torch.from_numpy(m.astype(np.float32) / 255.0).unsqueeze(0)
    pattern = None
    p = read("pattern.png", required=False)
    if p is not None:
        p = p.astype(np.float32) / 255.0
        pattern = torch.from_numpy(p).unsqueeze(0) if p.ndim == 2 else \
            torch.from_numpy(np.moveaxis(p, -1, 0))
        if spec.conditional and pattern.shape[0] != spec.pattern_channels:
            raise ValueError(
                f"pattern has {pattern.shape[0]} channels, class spec wants "
                f"{spec.pattern_channels}")
    maps = MaterialMaps(albedo, height, rough, metallic,
                        amplitude=float(meta["amplitude"]))
    return maps, pattern, spec
