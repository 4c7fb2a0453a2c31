"""Run two detectors over a sample and dump everything as a bundle."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .bundle_writer import write_bundle_dir
from .demo_model import build_model, make_sample
from .recipe import ExportRecipe, parse_model_id


class ExportError(RuntimeError):
    pass


class _Capture:
    """Forward hooks on the capture-point modules.

    Shared head towers run once per pyramid level, so each hook appends
    in level order. Outputs are taken as produced by the conv module
    itself — before any activation function.
    """

    def __init__(self, model, capture: str):
        self._store: dict[str, list[torch.Tensor]] = {"neck": [], "cls": [], "reg": []}
        self._handles = [
            model.neck.register_forward_hook(self._hook("neck")),
            model.cls_tower.register_forward_hook(self._hook("cls")),
            model.reg_tower.register_forward_hook(self._hook("reg")),
        ]
        self._capture = capture

    def _hook(self, key):
        def fn(module, inputs, output):
            self._store[key].append(output.detach())
        return fn

    def level_features(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """(cls, reg) capture for one level, each (C, H, W) float32."""
        if self._capture == "neck":
            arr = self._store["neck"][level][0].numpy()
            return arr, arr
        return (
            self._store["cls"][level][0].numpy(),
            self._store["reg"][level][0].numpy(),
        )

    def close(self):
        for h in self._handles:
            h.remove()


def _run(model, image: np.ndarray, capture: str):
    cap = _Capture(model, capture)
    try:
        with torch.no_grad():
            preds = model(torch.from_numpy(image).unsqueeze(0))
    finally:
        cap.close()
    return cap, preds


def export_scene(recipe: ExportRecipe, sample_id: int) -> Path:
    """Export one sample as a bundle directory; returns its path."""
    torch.set_num_threads(1)  # keep conv reductions deterministic

    t_channels, t_seed = parse_model_id(recipe.teacher)
    s_channels, s_seed = parse_model_id(recipe.student)
    teacher = build_model(t_channels, t_seed, recipe.num_classes, recipe.strides)
    student = build_model(s_channels, s_seed, recipe.num_classes, recipe.strides)

    image, gt = make_sample(sample_id, recipe.image_size, recipe.num_classes)
    t_cap, t_preds = _run(teacher, image, recipe.capture)
    s_cap, _ = _run(student, image, recipe.capture)

    levels = []
    tensors = {}
    problems = []
    for li, stride in enumerate(recipe.strides):
        t_cls, t_reg = t_cap.level_features(li)
        s_cls, s_reg = s_cap.level_features(li)
        for name, t_arr, s_arr in (("cls", t_cls, s_cls), ("reg", t_reg, s_reg)):
            if t_arr.shape != s_arr.shape:
                problems.append(
                    f"level {li} {name}: teacher {t_arr.shape} vs student "
                    f"{s_arr.shape} (no adaptation layers; channel counts "
                    f"must match)"
                )
        if problems:
            continue
        h, w = t_cls.shape[-2:]
        levels.append(
            {"level_index": li, "stride": stride, "height": h, "width": w}
        )
        tensors[(li, "teacher_cls")] = t_cls
        tensors[(li, "student_cls")] = s_cls
        tensors[(li, "teacher_reg")] = t_reg
        tensors[(li, "student_reg")] = s_reg
        tensors[(li, "pred_probs")] = t_preds[li]["probs"][0].numpy()
        tensors[(li, "pred_boxes")] = _clip_boxes(
            t_preds[li]["boxes"][0].numpy(), recipe.image_size
        )
    if problems:
        raise ExportError("; ".join(problems))

    out = Path(recipe.out_dir) / f"sample_{sample_id:05d}"
    return write_bundle_dir(
        out,
        image_size=recipe.image_size,
        num_classes=recipe.num_classes,
        anchors_per_loc=1,
        gt=gt,
        levels=levels,
        tensors=tensors,
    )


def _clip_boxes(boxes: np.ndarray, image_size: tuple[int, int]) -> np.ndarray:
    out = boxes.copy()
    out[:, 0] = np.clip(out[:, 0], 0.0, image_size[0])
    out[:, 2] = np.clip(out[:, 2], 0.0, image_size[0])
    out[:, 1] = np.clip(out[:, 1], 0.0, image_size[1])
    out[:, 3] = np.clip(out[:, 3], 0.0, image_size[1])
    return out
