"""Standalone writer for the scene-bundle format.

Implements docs/bundle-format.md from the bytes up — magic ``PGDTENS1``,
fixed little-endian header, row-major float32 payload, and the
``scene.json`` manifest with sorted keys. Deliberately does not import
the analysis package: the file format is the contract between the two
sides, and an independent writer keeps it honest.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PGDTENS1"
DTYPE_F32LE = 1

LEVEL_TENSOR_KEYS = (
    "teacher_cls",
    "student_cls",
    "teacher_reg",
    "student_reg",
    "pred_probs",
    "pred_boxes",
)


def write_tensor_file(path: Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim < 1:
        raise ValueError("tensor must have at least one dimension")
    if any(d > 0xFFFFFFFF for d in arr.shape):
        raise ValueError(f"dims must fit in uint32, got {arr.shape}")
    header = MAGIC + struct.pack("<BBH", DTYPE_F32LE, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + dims + arr.tobytes(order="C"))


def write_bundle_dir(
    directory: Path,
    *,
    image_size: tuple[int, int],
    num_classes: int,
    anchors_per_loc: int,
    gt: list[dict],
    levels: list[dict],
    tensors: dict[tuple[int, str], np.ndarray],
) -> Path:
    """Write one bundle: per-level tensor files plus the manifest.

    `levels` entries carry level_index/stride/height/width; `tensors`
    maps (level_index, role) to the array for that file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    manifest_levels = []
    for lv in levels:
        li = lv["level_index"]
        files = {}
        for key in LEVEL_TENSOR_KEYS:
            name = f"{key}_l{li}.bin"
            write_tensor_file(directory / name, tensors[(li, key)])
            files[key] = name
        manifest_levels.append(
            {
                "level_index": li,
                "stride": lv["stride"],
                "height": lv["height"],
                "width": lv["width"],
                "files": files,
            }
        )

    manifest = {
        "image_width": image_size[0],
        "image_height": image_size[1],
        "num_classes": num_classes,
        "anchors_per_loc": anchors_per_loc,
        "gt": gt,
        "levels": manifest_levels,
    }
    (directory / "scene.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return directory
