"""Out-of-core patch-feature exporter: frozen vision backbone -> OGFV dumps."""

from .export import export_features
from .filefmt import write_ogfv
from .vit import PatchVit, build_backbone

__version__ = "0.1.0"
