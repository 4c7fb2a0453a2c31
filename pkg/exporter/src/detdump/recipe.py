"""Export recipe: which models, which samples, what to capture."""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path


class RecipeError(ValueError):
    pass


_MODEL_ID = re.compile(r"^demo:c(\d+):s(\d+)$")


@dataclass(frozen=True)
class ExportRecipe:
    """One export run.

    Model identifiers name constructible models; the demo registry
    understands ``demo:c<channels>:s<seed>``. `capture` picks which
    tensors land in the bundle: ``head`` takes the first convolution of
    each head tower (pre-activation), ``neck`` takes the shared post-FPN
    map for both heads.
    """

    teacher: str
    student: str
    samples: tuple[int, ...]
    out_dir: str
    capture: str = "head"
    image_size: tuple[int, int] = (96, 96)
    strides: tuple[int, ...] = (8, 16)
    num_classes: int = 4

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(int(s) for s in self.samples))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        problems = []
        for role, ident in (("teacher", self.teacher), ("student", self.student)):
            if not _MODEL_ID.match(ident):
                problems.append(f"{role}: unknown model identifier {ident!r}")
        if not self.samples:
            problems.append("samples must be non-empty")
        if self.capture not in ("head", "neck"):
            problems.append(f"capture must be 'head' or 'neck', got {self.capture!r}")
        if len(self.image_size) != 2 or min(self.image_size) < 1:
            problems.append(f"bad image_size {self.image_size}")
        if not self.strides or any(
            b <= a for a, b in zip(self.strides, self.strides[1:])
        ):
            problems.append(f"strides must strictly increase, got {self.strides}")
        for s in self.strides:
            if self.image_size[0] % s or self.image_size[1] % s:
                problems.append(
                    f"image {self.image_size} not divisible by stride {s}"
                )
        if self.num_classes < 1:
            problems.append(f"num_classes must be >= 1, got {self.num_classes}")
        if problems:
            raise RecipeError("; ".join(problems))

    @classmethod
    def from_dict(cls, data: dict) -> "ExportRecipe":
        spec = fields(cls)
        known = {f.name for f in spec}
        unknown = sorted(set(data) - known)
        if unknown:
            raise RecipeError(f"unknown recipe keys: {unknown}")
        required = {
            f.name
            for f in spec
            if f.default is dataclasses.MISSING
            and f.default_factory is dataclasses.MISSING
        }
        missing = sorted(required - set(data))
        if missing:
            raise RecipeError(f"missing recipe keys: {missing}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "ExportRecipe":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["samples"] = list(self.samples)
        doc["image_size"] = list(self.image_size)
        doc["strides"] = list(self.strides)
        return doc


def parse_model_id(ident: str) -> tuple[int, int]:
    """-> (channels, seed) for a demo identifier."""
    m = _MODEL_ID.match(ident)
    if m is None:
        raise RecipeError(f"unknown model identifier {ident!r}")
    return int(m.group(1)), int(m.group(2))
