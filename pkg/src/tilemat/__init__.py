"""Tileable, optionally pattern-conditioned material generation and capture."""

from .material import MaterialClassSpec, MaterialMaps, STOCK_CLASSES
from .networks import Generator, GeneratorConfig, LatentBundle
# the render function itself lives in the tilemat.render submodule; only the
# config dataclass is lifted to the top level to avoid shadowing the module
from .render import RenderSetup

__version__ = "0.1.0"

__all__ = [
    "Generator",
    "GeneratorConfig",
    "LatentBundle",
    "MaterialClassSpec",
    "MaterialMaps",
    "RenderSetup",
    "STOCK_CLASSES",
    "__version__",
]
