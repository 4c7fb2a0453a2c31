"""Dump detector tensors into the scene-bundle format.

The analysis toolkit is consumed strictly through its published file
format and command line; nothing here imports it.
"""

from .bundle_writer import write_bundle_dir, write_tensor_file
from .demo_model import DemoDetector, build_model, make_sample
from .export import ExportError, export_scene
from .recipe import ExportRecipe, RecipeError

__all__ = [
    "DemoDetector",
    "ExportError",
    "ExportRecipe",
    "RecipeError",
    "build_model",
    "export_scene",
    "make_sample",
    "write_bundle_dir",
    "write_tensor_file",
]
