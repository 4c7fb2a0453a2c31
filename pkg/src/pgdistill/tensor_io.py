"""Binary tensor files and scene-bundle directories.

The on-disk format is normative and bit-exact (see docs/bundle-format.md):

    magic      8 bytes   ASCII "PGDTENS1"
    dtype_code 1 byte    1 = float32 little-endian (only defined code)
    ndim       1 byte
    reserved   2 bytes   must be zero
    dims       ndim x uint32 little-endian
    payload    row-major float32 little-endian, prod(dims) * 4 bytes

A bundle directory holds one scene.json manifest plus one tensor file per
feature map / prediction tensor.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    Box,
    FeatureTensor,
    LevelGeometry,
    PredictionField,
    SceneBundle,
    ValidationError,
)

MAGIC = b"PGDTENS1"
DTYPE_F32 = 1
_FIXED_HEADER = struct.Struct("<8sBBH")

MANIFEST_NAME = "scene.json"

# Manifest keys for the six tensors each level carries, in write order.
LEVEL_TENSOR_KEYS = (
    "teacher_cls",
    "teacher_reg",
    "student_cls",
    "student_reg",
    "pred_boxes",
    "pred_probs",
)

# Guard against absurd headers before allocating payload buffers.
_MAX_ELEMENTS = 1 << 32


class FormatError(ValueError):
    """A tensor file violates the binary format.  `field` names the culprit."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def write_array(path: str | Path, values: np.ndarray) -> None:
    """Write an N-dimensional float32 array as a tensor file."""
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim < 1 or arr.ndim > 255:
        raise FormatError("ndim", f"ndim must be in [1, 255], got {arr.ndim}")
    if any(d < 0 or d > 0xFFFFFFFF for d in arr.shape):
        raise FormatError("dims", f"dims must fit in uint32, got {arr.shape}")
    header = _FIXED_HEADER.pack(MAGIC, DTYPE_F32, arr.ndim, 0)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype("<f4", copy=False).tobytes(order="C")
    Path(path).write_bytes(header + dims + payload)


def read_array(path: str | Path) -> np.ndarray:
    """Read a tensor file back into a float32 array.

    Raises FormatError naming the offending field for bad magic, an unknown
    dtype code, nonzero reserved bytes, dim overflow, or truncated payload.
    """
    raw = Path(path).read_bytes()
    if len(raw) < _FIXED_HEADER.size:
        raise FormatError("magic", f"file too short for header ({len(raw)} bytes)")
    magic, dtype_code, ndim, reserved = _FIXED_HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, got {magic!r}")
    if dtype_code != DTYPE_F32:
        raise FormatError("dtype_code", f"unknown dtype code {dtype_code}")
    if reserved != 0:
        raise FormatError("reserved", f"reserved bytes must be zero, got {reserved}")
    if ndim < 1:
        raise FormatError("ndim", "ndim must be >= 1")
    offset = _FIXED_HEADER.size
    if len(raw) < offset + 4 * ndim:
        raise FormatError("dims", "file too short for declared ndim")
    dims = struct.unpack_from(f"<{ndim}I", raw, offset)
    offset += 4 * ndim
    count = 1
    for d in dims:
        count *= d
    if count > _MAX_ELEMENTS:
        raise FormatError("dims", f"element count {count} exceeds limit {_MAX_ELEMENTS}")
    expected = count * 4
    actual = len(raw) - offset
    if actual != expected:
        kind = "truncated" if actual < expected else "trailing bytes in"
        raise FormatError("payload", f"{kind} payload: expected {expected} bytes, got {actual}")
    arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return arr.reshape(dims).astype(np.float32, copy=True)


def write_tensor(path: str | Path, tensor: FeatureTensor) -> None:
    write_array(path, tensor.values)


def read_tensor(path: str | Path) -> FeatureTensor:
    """Read a (C, H, W) tensor file; validation happens in FeatureTensor."""
    return FeatureTensor(read_array(path))


def _box_to_json(box: Box) -> dict:
    return {"x1": box.x1, "y1": box.y1, "x2": box.x2, "y2": box.y2,
            "category": box.category}


def write_bundle(directory: str | Path, bundle: SceneBundle) -> None:
    """Write scene.json plus all tensor files into `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    levels_json = []
    for lv in bundle.levels:
        i = lv.level_index
        files = {key: f"{key}_l{i}.bin" for key in LEVEL_TENSOR_KEYS}
        write_array(directory / files["teacher_cls"], bundle.teacher_cls_feats[i].values)
        write_array(directory / files["teacher_reg"], bundle.teacher_reg_feats[i].values)
        write_array(directory / files["student_cls"], bundle.student_cls_feats[i].values)
        write_array(directory / files["student_reg"], bundle.student_reg_feats[i].values)
        write_array(directory / files["pred_boxes"], bundle.teacher_preds.boxes[i])
        write_array(directory / files["pred_probs"], bundle.teacher_preds.class_probs[i])
        levels_json.append(
            {
                "level_index": i,
                "stride": lv.stride,
                "height": lv.height,
                "width": lv.width,
                "files": files,
            }
        )
    manifest = {
        "image_width": bundle.image_width,
        "image_height": bundle.image_height,
        "num_classes": bundle.num_classes,
        "anchors_per_loc": bundle.teacher_preds.anchors_per_loc,
        "levels": levels_json,
        "gt": [_box_to_json(b) for b in bundle.gt],
    }
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )


def _check_level_entry(entry, pos: int, problems: list[str]) -> bool:
    ok = True
    for key in ("level_index", "stride", "height", "width", "files"):
        if key not in entry:
            problems.append(f"levels[{pos}]: missing key '{key}'")
            ok = False
    if ok:
        missing = [k for k in LEVEL_TENSOR_KEYS if k not in entry["files"]]
        if missing:
            problems.append(f"levels[{pos}]: missing file entries {missing}")
            ok = False
    return ok


def read_bundle(directory: str | Path) -> SceneBundle:
    """Read and validate a bundle directory.

    All violations are collected and reported in one ValidationError; file
    headers are always checked against the manifest (the manifest is never
    trusted over the files themselves).
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ValidationError([f"missing manifest {MANIFEST_NAME} in {directory}"])
    try:
        manifest = json.loads(manifest_path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError([f"{MANIFEST_NAME}: unparseable JSON ({exc})"]) from exc

    problems: list[str] = []
    for key in ("image_width", "image_height", "num_classes", "anchors_per_loc",
                "levels", "gt"):
        if key not in manifest:
            problems.append(f"{MANIFEST_NAME}: missing key '{key}'")
    if problems:
        raise ValidationError(problems)

    anchors = manifest["anchors_per_loc"]
    levels: list[LevelGeometry] = []
    arrays: dict[str, list[np.ndarray]] = {key: [] for key in LEVEL_TENSOR_KEYS}

    for pos, entry in enumerate(manifest["levels"]):
        if not _check_level_entry(entry, pos, problems):
            continue
        try:
            lv = LevelGeometry(
                level_index=entry["level_index"],
                stride=entry["stride"],
                height=entry["height"],
                width=entry["width"],
            )
        except ValidationError as exc:
            problems.extend(f"levels[{pos}]: {v}" for v in exc.violations)
            continue
        levels.append(lv)
        for key in LEVEL_TENSOR_KEYS:
            rel = entry["files"][key]
            path = directory / rel
            if not path.is_file():
                problems.append(f"{rel}: missing tensor file")
                continue
            try:
                arr = read_array(path)
            except FormatError as exc:
                problems.append(f"{rel}: {exc}")
                continue
            expected_tail = (lv.height, lv.width)
            if arr.shape[-2:] != expected_tail:
                problems.append(
                    f"{rel}: grid {arr.shape[-2:]} does not match manifest "
                    f"{expected_tail}"
                )
                continue
            if key == "pred_boxes" and (arr.ndim != 4 or arr.shape[:2] != (anchors, 4)):
                problems.append(
                    f"{rel}: expected shape ({anchors}, 4, H, W), got {arr.shape}"
                )
                continue
            if key == "pred_probs" and (
                arr.ndim != 4
                or arr.shape[0] != anchors
                or arr.shape[1] != manifest["num_classes"]
            ):
                problems.append(
                    f"{rel}: expected shape ({anchors}, {manifest['num_classes']}, H, W), "
                    f"got {arr.shape}"
                )
                continue
            if key.startswith(("teacher", "student")) and arr.ndim != 3:
                problems.append(f"{rel}: feature tensors must be 3-dimensional, got {arr.ndim}")
                continue
            arrays[key].append(arr)

    gt: list[Box] = []
    for i, entry in enumerate(manifest["gt"]):
        try:
            gt.append(
                Box(
                    x1=entry["x1"], y1=entry["y1"],
                    x2=entry["x2"], y2=entry["y2"],
                    category=entry["category"],
                )
            )
        except (KeyError, TypeError) as exc:
            problems.append(f"gt[{i}]: malformed entry ({exc})")
        except ValidationError as exc:
            problems.extend(f"gt[{i}]: {v}" for v in exc.violations)

    n_levels = len(manifest["levels"])
    complete = not problems and all(len(v) == n_levels for v in arrays.values())
    if not complete:
        if not problems:
            problems.append("bundle incomplete: some tensors could not be read")
        raise ValidationError(problems)

    try:
        return SceneBundle(
            image_width=manifest["image_width"],
            image_height=manifest["image_height"],
            levels=tuple(levels),
            gt=tuple(gt),
            teacher_cls_feats=tuple(FeatureTensor(a) for a in arrays["teacher_cls"]),
            teacher_reg_feats=tuple(FeatureTensor(a) for a in arrays["teacher_reg"]),
            student_cls_feats=tuple(FeatureTensor(a) for a in arrays["student_cls"]),
            student_reg_feats=tuple(FeatureTensor(a) for a in arrays["student_reg"]),
            teacher_preds=PredictionField(
                boxes=tuple(arrays["pred_boxes"]),
                class_probs=tuple(arrays["pred_probs"]),
            ),
            num_classes=manifest["num_classes"],
        )
    except ValidationError:
        raise
